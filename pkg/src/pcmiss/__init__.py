"""Constraint-based causal discovery from incomplete observational data.

PC-stable structure learning with pluggable conditional-independence
handlers (oracle d-separation, deletion-based, multiply-imputed and
single-imputation tests), missingness-DAG identifiability checks, MICE
imputation, test-level pooling, simulation generators and benchmark
metrics.
"""

__version__ = "0.1.0"

from .graphs import (  # noqa: F401
    Dag,
    GraphError,
    MissingnessDag,
    Pdag,
    cpdag_of,
    d_separated,
    markov_blanket,
    meek_orient,
    setwise_indicator_parents,
    skeleton,
)
