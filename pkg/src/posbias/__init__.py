"""Position-bias estimation from sparse click logs with item-embedding REM."""

__version__ = "0.1.0"
