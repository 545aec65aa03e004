"""Multi-task facial affect toolkit.

Dimensional (valence/arousal), categorical (7 basic expressions), and
action-unit models trained jointly from heterogeneous corpora, with
emotion/AU coupling losses, ensemble fusion, zero-shot compound
expression scoring, and a self-contained reverse-mode autodiff stack.
"""

from . import (
    autodiff,
    errors,
    fusion,
    losses,
    metrics,
    models,
    preprocess,
    relatedness,
    sampler,
    types,
    zeroshot,
)

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "errors",
    "fusion",
    "losses",
    "metrics",
    "models",
    "preprocess",
    "relatedness",
    "sampler",
    "types",
    "zeroshot",
    "__version__",
]
