"""Kernel ridge regression on per-class gradient kernels.

Fitting goes through one eigendecomposition per class kernel, so rank
truncation and different ridge values reuse the cached spectrum instead of
re-factorizing. The direct-solve routine in the numerics module is the
independent oracle this path is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadLambda,
    DimMismatch,
    RankTooLarge,
    ScaleMismatch,
    ShapeMismatch,
    SingularSystem,
)
from .kernel import scale_factor
from .numerics import COND_LIMIT, sym_eig
from .tangent import GradientFeatures


@dataclass(frozen=True)
class KrrModel:
    basis: np.ndarray  # (s, D, C) gradient rows per class
    targets: np.ndarray  # (s, C)
    alpha: np.ndarray  # (s, C) dual coefficients per class
    lambda_reg: float
    rank: int
    scale_kind: str
    eig_values: np.ndarray  # (C, s) cached per-class spectra, descending
    eig_vectors: np.ndarray  # (C, s, s)

    @property
    def size(self) -> int:
        return int(self.basis.shape[0])

    @property
    def width(self) -> int:
        return int(self.basis.shape[1])

    @property
    def class_count(self) -> int:
        return int(self.basis.shape[2])


def _coerce_train(basis, targets):
    b = np.asarray(basis, dtype=np.float64)
    if b.ndim != 3:
        raise ShapeMismatch(f"basis must be (s, D, C), got shape {b.shape}")
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != (b.shape[0], b.shape[2]):
        raise ShapeMismatch(
            f"targets must be ({b.shape[0]}, {b.shape[2]}), got {y.shape}"
        )
    return b, y


def _solve_alpha(values, vectors, y, lambda_reg, rank):
    """alpha = U_r (S_r + lambda I)^{-1} U_r^T y on the cached spectrum."""
    w = values[:rank]
    u = vectors[:, :rank]
    if lambda_reg == 0.0:
        w_pos = w[w > 0.0]
        if w_pos.size < rank or w_pos.max() / w_pos.min() > COND_LIMIT:
            raise SingularSystem(
                "lambda_reg = 0 needs a well-conditioned kernel at the kept rank"
            )
    return u @ ((u.T @ y) / (w + lambda_reg)[:, None])


def fit(
    basis,
    targets,
    lambda_reg: float = 1e-4,
    rank: int | None = None,
    scale_kind: str = "inv_k",
) -> KrrModel:
    """Fit one ridge regressor per class on that class's gradient kernel.

    rank = None keeps the full spectrum; otherwise the top-rank eigenpairs
    act as a hard filter. With lambda_reg = 0 the kept spectrum must be
    positive and well-conditioned or the system is reported singular.
    """
    b, y = _coerce_train(basis, targets)
    s, d, c = b.shape
    if lambda_reg < 0.0:
        raise BadLambda(f"lambda_reg must be >= 0, got {lambda_reg}")
    if rank is None:
        rank = s
    if not (1 <= rank <= s):
        raise RankTooLarge(f"rank {rank} invalid for {s} samples")
    factor = scale_factor(scale_kind, d)
    eig_values = np.empty((c, s))
    eig_vectors = np.empty((c, s, s))
    alpha = np.empty((s, c))
    for ci in range(c):
        phi = b[:, :, ci]
        eig = sym_eig(factor * (phi @ phi.T))
        eig_values[ci] = eig.values
        eig_vectors[ci] = eig.vectors
        alpha[:, ci] = _solve_alpha(
            eig.values, eig.vectors, y[:, ci : ci + 1], lambda_reg, rank
        ).ravel()
    return KrrModel(
        basis=b,
        targets=y.copy(),
        alpha=alpha,
        lambda_reg=lambda_reg,
        rank=rank,
        scale_kind=scale_kind,
        eig_values=eig_values,
        eig_vectors=eig_vectors,
    )


def refit_rank(model: KrrModel, rank: int) -> KrrModel:
    """New coefficients at a different truncation rank from cached spectra."""
    if not (1 <= rank <= model.size):
        raise RankTooLarge(f"rank {rank} invalid for {model.size} samples")
    alpha = np.empty_like(model.alpha)
    for ci in range(model.class_count):
        alpha[:, ci] = _solve_alpha(
            model.eig_values[ci],
            model.eig_vectors[ci],
            model.targets[:, ci : ci + 1],
            model.lambda_reg,
            rank,
        ).ravel()
    return replace(model, alpha=alpha, rank=rank)


def predict(model: KrrModel, test_basis) -> np.ndarray:
    """Predicted logits at test gradient rows, shape (n_test, C).

    Accepts a (t, D, C) array or a GradientFeatures bundle; the cross
    kernel is built at the model's scale so train and test agree.
    """
    if isinstance(test_basis, GradientFeatures):
        t = test_basis.per_class.transpose(1, 2, 0)
    else:
        t = np.asarray(test_basis, dtype=np.float64)
    if t.ndim != 3 or t.shape[2] != model.class_count:
        raise ShapeMismatch(
            f"test basis must be (t, D, {model.class_count}), got {t.shape}"
        )
    if t.shape[1] != model.width:
        raise ScaleMismatch(
            f"test rows have width {t.shape[1]}, model was fit at width "
            f"{model.width}; mixing raw and sketched rows is not allowed"
        )
    factor = scale_factor(model.scale_kind, model.width)
    out = np.empty((t.shape[0], model.class_count))
    for ci in range(model.class_count):
        cross = factor * (t[:, :, ci] @ model.basis[:, :, ci].T)
        out[:, ci] = cross @ model.alpha[:, ci]
    return out


def features_as_basis(feats: GradientFeatures) -> np.ndarray:
    """(C, n, D) feature block reordered to the (n, D, C) basis layout."""
    return feats.per_class.transpose(1, 2, 0).copy()
