"""Dense linear-algebra primitives used throughout the package.

Symmetric eigendecomposition, thin SVD, rank-revealing QR filtering and a
direct ridge solve. These routines are deliberately boring: they wrap
LAPACK through numpy/scipy, pin down deterministic ordering and sign
conventions, and validate their inputs loudly. The direct solve doubles
as the ground-truth oracle for the eigendecomposition-based regression
path, so the two must never share code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    BadEps,
    BadLambda,
    DimMismatch,
    EmptyInput,
    NonFinite,
    NotSquare,
    NotSymmetric,
    ShapeMismatch,
    SingularSystem,
)

# relative symmetry slack for inputs that accumulated roundoff in products
SYMMETRY_RTOL = 1e-9
# entries below this count as zero when fixing eigenvector signs
_SIGN_EPS = 1e-12

COND_LIMIT = 1e12


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order with column-aligned eigenvectors."""

    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD, a = left @ diag(singulars) @ right.T, singulars descending."""

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-d array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimMismatch(f"{name} must be 2-d, got ndim={out.ndim}")
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"{name} contains nan or inf")
    return out


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip column signs so the first nonzero entry of each column is positive."""
    out = np.array(vectors, copy=True)
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > _SIGN_EPS)
        if nz.size and col[nz[0]] < 0.0:
            out[:, j] = -col
    return out


def _check_square_symmetric(s: np.ndarray, name: str) -> np.ndarray:
    if s.shape[0] != s.shape[1]:
        raise NotSquare(f"{name} must be square, got shape {s.shape}")
    scale = np.abs(s).max() if s.size else 0.0
    if scale > 0.0 and np.abs(s - s.T).max() > SYMMETRY_RTOL * scale:
        raise NotSymmetric(f"{name} is not symmetric within rtol {SYMMETRY_RTOL}")
    # kernel products accumulate ~1e-13 asymmetry; fold it away before LAPACK
    return 0.5 * (s + s.T)


def sym_eig(s_matrix) -> EigenSystem:
    """Full eigendecomposition of a symmetric matrix.

    Returns eigenvalues sorted descending and orthonormal eigenvectors with
    a deterministic sign (first nonzero entry positive), so repeated calls
    on equal inputs are bitwise identical.
    """
    s = as_matrix(s_matrix, "s_matrix")
    if s.size == 0:
        raise EmptyInput("cannot decompose an empty matrix")
    sym = _check_square_symmetric(s, "s_matrix")
    w, u = np.linalg.eigh(sym)
    return EigenSystem(values=w[::-1].copy(), vectors=fix_signs(u[:, ::-1]))


def thin_svd(a_matrix) -> SvdResult:
    """Thin SVD with descending singular values and deterministic signs.

    Signs are keyed on the left factor; the matching right column is flipped
    along with it so the product is unchanged.
    """
    a = as_matrix(a_matrix, "a_matrix")
    if a.size == 0:
        raise EmptyInput("cannot decompose an empty matrix")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    v = vh.T
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(np.abs(col) > _SIGN_EPS)
        if nz.size and col[nz[0]] < 0.0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return SvdResult(left=u, singulars=s, right=v)


def svd_rank(singulars: np.ndarray, eps_rel: float) -> int:
    """Numerical rank: count of singular values above eps_rel * max."""
    s = np.asarray(singulars, dtype=np.float64)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.sum(s > eps_rel * s[0]))


def qr_redundancy_filter(columns, eps_rel: float = 1e-6) -> np.ndarray:
    """Indices of a maximal well-conditioned subset of columns.

    Runs column-pivoted QR and keeps the pivots whose |R_ii| exceeds
    eps_rel times the largest diagonal magnitude. The kept index set is
    mapped back to the original column order and sorted ascending.
    """
    a = as_matrix(columns, "columns")
    if a.shape[1] == 0 or a.shape[0] == 0:
        raise EmptyInput("need at least one column to filter")
    if not (0.0 < eps_rel < 1.0):
        raise BadEps(f"eps_rel must lie in (0, 1), got {eps_rel}")
    _, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.max() <= 0.0:
        return np.empty(0, dtype=np.intp)
    keep = diag > eps_rel * diag.max()
    return np.sort(piv[: diag.size][keep]).astype(np.intp)


def ridge_solve_direct(kernel, targets, lambda_reg: float) -> np.ndarray:
    """Solve (K + lambda_reg * I) alpha = Y by direct factorization.

    One step of iterative refinement is applied so the returned solution
    satisfies ||(K + lambda I) alpha - Y|| <= 1e-8 ||Y|| on any reasonably
    conditioned system. With lambda_reg = 0 the system must be invertible;
    condition numbers beyond 1e12 raise SingularSystem.
    """
    k = as_matrix(kernel, "kernel")
    if k.size == 0:
        raise EmptyInput("empty kernel")
    k = _check_square_symmetric(k, "kernel")
    y = np.asarray(targets, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise NonFinite("targets contain nan or inf")
    if y.shape[0] != k.shape[0]:
        raise ShapeMismatch(
            f"targets have {y.shape[0]} rows, kernel is {k.shape[0]} x {k.shape[0]}"
        )
    if lambda_reg < 0.0:
        raise BadLambda(f"lambda_reg must be >= 0, got {lambda_reg}")

    system = k + lambda_reg * np.eye(k.shape[0])
    if lambda_reg == 0.0:
        cond = np.linalg.cond(system)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularSystem(f"condition {cond:.3e} exceeds {COND_LIMIT:.0e}")
    try:
        alpha = np.linalg.solve(system, y)
        alpha = alpha + np.linalg.solve(system, y - system @ alpha)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc

    residual = np.linalg.norm(system @ alpha - y)
    if residual > 1e-8 * max(np.linalg.norm(y), 1e-300):
        raise SingularSystem(
            f"direct solve residual {residual:.3e} too large; system is singular"
        )
    return alpha
