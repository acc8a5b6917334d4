from .tape import Adjoints, Tape, Var, tape_backward, value_of
from .vector import (
    NonFiniteError,
    Rng,
    UsageError,
    as_vector,
    check_finite,
    dot,
    norm2,
    randn,
)

__all__ = [
    "Adjoints",
    "NonFiniteError",
    "Rng",
    "Tape",
    "UsageError",
    "Var",
    "as_vector",
    "check_finite",
    "dot",
    "norm2",
    "randn",
    "tape_backward",
    "value_of",
]
