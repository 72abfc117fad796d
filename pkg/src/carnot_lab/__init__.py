"""carnot-lab: exact nilpotent group arithmetic, intrinsic Taylor calculus,
mollifier cascades, singular-kernel decompositions and a renormalized
multiplicative-noise heat solver on compact quotients of homogeneous Lie groups."""

from .algebra import (
    GradedLieAlgebra,
    abelian,
    algebra_from_text,
    algebra_to_text,
    bch,
    builtin,
    heisenberg,
    kinetic,
    matrix_exp,
    validate_algebra,
)
from .group import (
    GroupLaw,
    builtin_law,
    compile_group_law,
    dilate,
    dist,
    haar_normalization,
    hom_norm,
    identity,
    inv,
    mul,
)

__version__ = "0.1.0"
