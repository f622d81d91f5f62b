"""Meta-learning for clustering: a recurrent model trained on many small
clustering tasks, plus a synthetic task generator, classical baselines,
Hungarian-matched evaluation and a constructive meta-clustering algorithm."""

__version__ = "0.1.0"


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (rank deficient, zero variance, ...)."""


class TrainingDivergenceError(RuntimeError):
    """Gradients or parameters became non-finite during training."""
