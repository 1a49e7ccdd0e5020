from .dense import as_matrix, as_vector, is_symmetric, matmul, symmetrize
from .rng import RngState, make_rng
from .autodiff import Tape, Var, grad
from .finite_diff import finite_diff_grad, finite_diff_jacobian

__all__ = [
    "RngState", "Tape", "Var", "as_matrix", "as_vector", "finite_diff_grad",
    "finite_diff_jacobian", "grad", "is_symmetric", "make_rng", "matmul", "symmetrize",
]
