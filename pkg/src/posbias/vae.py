"""A small fully-connected VAE in numpy, used to embed item feature rows.

One tanh hidden layer on each side, a diagonal Gaussian posterior and a
unit-variance Gaussian likelihood. Trained full-batch with Adam; the
embedding of an item is its posterior mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingMatrix


@dataclass
class VaeConfig:
    hidden: int = 64
    epochs: int = 500
    learning_rate: float = 1e-2
    seed: int = 0
    standardize_inputs: bool = True


@dataclass
class VaeFit:
    embedding: EmbeddingMatrix
    params: dict
    loss_history: list = field(default_factory=list)
    recon_history: list = field(default_factory=list)
    kl_history: list = field(default_factory=list)


def init_params(n_in: int, m: int, hidden: int, rng: np.random.Generator) -> dict:
    def glorot(a, b):
        return rng.normal(0.0, np.sqrt(2.0 / (a + b)), size=(a, b))

    return {
        "W1": glorot(n_in, hidden), "b1": np.zeros(hidden),
        "Wm": glorot(hidden, m), "bm": np.zeros(m),
        "Wv": glorot(hidden, m), "bv": np.zeros(m),
        "W2": glorot(m, hidden), "b2": np.zeros(hidden),
        "W3": glorot(hidden, n_in), "b3": np.zeros(n_in),
    }


def encode(params: dict, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h = np.tanh(X @ params["W1"] + params["b1"])
    return h, h @ params["Wm"] + params["bm"], h @ params["Wv"] + params["bv"]


def loss_and_grads(params: dict, X: np.ndarray, eps: np.ndarray):
    """Negative ELBO (mean over rows) with its gradient, for fixed noise ``eps``."""
    n = X.shape[0]
    h, mu, logvar = encode(params, X)
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    g = np.tanh(z @ params["W2"] + params["b2"])
    xhat = g @ params["W3"] + params["b3"]

    recon = 0.5 * np.sum((X - xhat) ** 2) / n
    kl = -0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar)) / n

    dxhat = (xhat - X) / n
    grads = {"W3": g.T @ dxhat, "b3": dxhat.sum(0)}
    dpre2 = (dxhat @ params["W3"].T) * (1.0 - g**2)
    grads["W2"] = z.T @ dpre2
    grads["b2"] = dpre2.sum(0)
    dz = dpre2 @ params["W2"].T
    dmu = dz + mu / n
    dlogvar = dz * eps * 0.5 * sigma + 0.5 * (np.exp(logvar) - 1.0) / n
    grads["Wm"], grads["bm"] = h.T @ dmu, dmu.sum(0)
    grads["Wv"], grads["bv"] = h.T @ dlogvar, dlogvar.sum(0)
    dpre1 = (dmu @ params["Wm"].T + dlogvar @ params["Wv"].T) * (1.0 - h**2)
    grads["W1"], grads["b1"] = X.T @ dpre1, dpre1.sum(0)
    return recon + kl, recon, kl, grads


def fit_vae(item_features, m: int, config: VaeConfig | None = None) -> VaeFit:
    cfg = config or VaeConfig()
    X = np.asarray(item_features, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("item_features must be a finite 2-d matrix")
    if not 1 <= m <= X.shape[1]:
        raise ValueError(f"latent dimension m={m} must lie in [1, {X.shape[1]}]")
    if cfg.standardize_inputs:
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(X.shape[1], m, cfg.hidden, rng)
    mom = {k: np.zeros_like(v) for k, v in params.items()}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    fit = VaeFit(None, params)

    for epoch in range(cfg.epochs + 1):
        eps = rng.standard_normal((X.shape[0], m))
        with np.errstate(over="ignore", invalid="ignore"):
            loss, recon, kl, grads = loss_and_grads(params, X, eps)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"VAE loss became non-finite at epoch {epoch}: recon={recon!r} kl={kl!r}"
            )
        fit.loss_history.append(float(loss))
        fit.recon_history.append(float(recon))
        fit.kl_history.append(float(kl))
        if epoch == cfg.epochs:
            break
        t = epoch + 1
        for k in params:
            mom[k] = b1 * mom[k] + (1 - b1) * grads[k]
            vel[k] = b2 * vel[k] + (1 - b2) * grads[k] ** 2
            step = mom[k] / (1 - b1**t) / (np.sqrt(vel[k] / (1 - b2**t)) + adam_eps)
            params[k] = params[k] - cfg.learning_rate * step

    _, mu, _ = encode(params, X)
    fit.embedding = EmbeddingMatrix(mu, "vae")
    return fit
