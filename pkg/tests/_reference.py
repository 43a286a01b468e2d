"""Plain-python regression EM over item ids with tabular relevance.

Written without numpy vectorisation or any posbias code so that it can
serve as an oracle for the engine.
"""

import math


def _clamp(x, lo=1e-6, hi=1.0 - 1e-6):
    return min(max(x, lo), hi)


def vanilla_rem(records, n_positions, n_iter, init_theta=0.5, init_mu=0.5):
    """records: list of (context_tuple, item, click, position).

    Returns the list of theta vectors, starting with the initial one.
    """
    theta = [init_theta] * n_positions
    mu = {}
    history = [list(theta)]
    for _ in range(n_iter):
        exam = [[] for _ in range(n_positions)]
        rel = {}
        for ctx, item, c, k in records:
            t = theta[k]
            m = _clamp(mu.get((ctx, item), init_mu))
            if c == 1:
                exam[k].append(1.0)
                rel.setdefault((ctx, item), []).append(1.0)
            else:
                exam[k].append(t * (1.0 - m) / (1.0 - t * m))
                rel.setdefault((ctx, item), []).append((1.0 - t) * m / (1.0 - t * m))
        theta = [min(max(math.fsum(v) / len(v), 0.0), 1.0) for v in exam]
        mu = {key: min(max(math.fsum(v) / len(v), 0.0), 1.0) for key, v in rel.items()}
        history.append(list(theta))
    return history
