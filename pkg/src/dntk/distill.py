"""Local-global distillation of gradient features.

The class-averaged kernel is clustered, each cluster contributes its top
local eigenmodes as synthetic gradients, and global eigendirections that no
cluster's local subspace covers (the gap set) are synthesized from the full
sample set. Every synthetic gradient is a linear combination of real
gradient rows, applied with the same combination vector to every class
slice and to the soft targets. A rank-revealing QR pass drops candidates
that are linear combinations of earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadEps, InputError, RankZeroCluster, ShapeMismatch
from .cluster import ClusterPartition, restrict_kernel, spectral_cluster
from .kernel import EIG_FLOOR_REL, average_kernel, build_stack, truncation_rank
from .numerics import EigenSystem, qr_redundancy_filter, sym_eig
from .tangent import GradientFeatures

LOCAL = "local"
GAP = "gap"


@dataclass(frozen=True)
class CoverageReport:
    """How well local subspaces explain the leading global eigendirections."""

    r_global: int
    local_ranks: tuple
    coverage: np.ndarray  # (r_global,) best local coverage per direction
    gap_set: tuple  # global eigen indices below the coverage threshold
    tau_v: float
    tau_g: float


@dataclass(frozen=True)
class DistilledGradients:
    phi_hat: np.ndarray  # (s, D, C)
    y_hat: np.ndarray  # (s, C)
    provenance: tuple  # ("local", cluster, eig index) or ("gap", eig index)
    lifted_basis: np.ndarray  # (m, s) combination vectors over the sample set
    eigenvalues: np.ndarray  # (s,) eigenvalue behind each candidate

    @property
    def size(self) -> int:
        return int(self.phi_hat.shape[0])


@dataclass(frozen=True)
class _Candidate:
    phi: np.ndarray  # (D, C)
    y: np.ndarray  # (C,)
    lifted: np.ndarray  # (m,)
    provenance: tuple
    eigenvalue: float


def _floor_rank(values: np.ndarray, rank: int) -> int:
    """Cap a truncation rank so degenerate near-zero modes never qualify."""
    floor = EIG_FLOOR_REL * max(values.sum(), 0.0)
    above = int(np.sum(values > floor))
    return min(rank, above)


def local_eigensystems(
    kbar: np.ndarray, partition: ClusterPartition, tau_v: float
) -> list[tuple[EigenSystem, int]]:
    """Per-cluster eigendecomposition of the restricted kernel plus its
    truncation rank at the shared variance threshold."""
    systems = []
    for h, idx in enumerate(partition.index_sets):
        sub = restrict_kernel(kbar, idx)
        vals_trace = np.maximum(np.diag(sub), 0.0).sum()
        if vals_trace <= 0.0:
            raise RankZeroCluster(f"cluster {h} has a zero restricted kernel")
        eig = sym_eig(sub)
        clamped = np.maximum(eig.values, 0.0)
        r_h = _floor_rank(clamped, truncation_rank(clamped, 1.0 - tau_v))
        if r_h == 0:
            raise RankZeroCluster(f"cluster {h} has no eigenmode above the noise floor")
        systems.append((eig, r_h))
    return systems


def coverage_coefficients(
    global_eig: EigenSystem,
    r_global: int,
    partition: ClusterPartition,
    local_systems: list[tuple[EigenSystem, int]],
) -> np.ndarray:
    """Best local coverage of each leading global eigendirection.

    For global direction j, each cluster scores the squared norm fraction of
    the direction's restriction that its truncated local eigenspace
    captures; the direction's coverage is the best score over clusters.
    Restrictions with numerically zero mass on a cluster score zero there.
    """
    coverage = np.zeros(r_global)
    for (eig, r_h), idx in zip(local_systems, partition.index_sets):
        basis = eig.vectors[:, :r_h]
        for j in range(r_global):
            u = global_eig.vectors[idx, j]
            sq = float(u @ u)
            if sq < 1e-24:
                continue
            captured = basis.T @ u
            coverage[j] = max(coverage[j], float(captured @ captured) / sq)
    return coverage


def gap_directions(coverage: np.ndarray, tau_g: float) -> tuple:
    """Global eigen indices whose best local coverage falls below tau_g."""
    if not (0.0 <= tau_g <= 1.0):
        raise BadEps(f"tau_g must lie in [0, 1], got {tau_g}")
    return tuple(int(j) for j in np.flatnonzero(coverage < tau_g))


def _combine(per_class: np.ndarray, targets: np.ndarray, idx, u: np.ndarray):
    """Contract a combination vector against gradient rows and targets."""
    phi = np.einsum("i,cid->dc", u, per_class[:, idx, :])
    y = targets[idx].T @ u
    return phi, y


def synthesize_local(
    per_class: np.ndarray,
    targets: np.ndarray,
    partition: ClusterPartition,
    local_systems: list[tuple[EigenSystem, int]],
) -> list[_Candidate]:
    """One candidate per kept local eigenmode, lifted by zero-padding."""
    m = per_class.shape[1]
    out = []
    for h, ((eig, r_h), idx) in enumerate(zip(local_systems, partition.index_sets)):
        for j in range(r_h):
            u = eig.vectors[:, j]
            u = u / np.linalg.norm(u)
            phi, y = _combine(per_class, targets, idx, u)
            lifted = np.zeros(m)
            lifted[idx] = u
            out.append(
                _Candidate(
                    phi=phi,
                    y=y,
                    lifted=lifted,
                    provenance=(LOCAL, h, j),
                    eigenvalue=float(eig.values[j]),
                )
            )
    return out


def synthesize_gap(
    per_class: np.ndarray,
    targets: np.ndarray,
    global_eig: EigenSystem,
    gap_set,
) -> list[_Candidate]:
    """One candidate per uncovered global direction, built on all samples."""
    m = per_class.shape[1]
    out = []
    for j in gap_set:
        v = global_eig.vectors[:, j]
        v = v / np.linalg.norm(v)
        phi, y = _combine(per_class, targets, np.arange(m), v)
        out.append(
            _Candidate(
                phi=phi,
                y=y,
                lifted=v.copy(),
                provenance=(GAP, int(j)),
                eigenvalue=float(global_eig.values[j]),
            )
        )
    return out


def _assemble(candidates: list[_Candidate]) -> DistilledGradients:
    phi_hat = np.stack([c.phi for c in candidates])  # (s, D, C)
    y_hat = np.stack([c.y for c in candidates])
    lifted = np.stack([c.lifted for c in candidates], axis=1)
    eigs = np.array([c.eigenvalue for c in candidates])
    return DistilledGradients(
        phi_hat=phi_hat,
        y_hat=y_hat,
        provenance=tuple(c.provenance for c in candidates),
        lifted_basis=lifted,
        eigenvalues=eigs,
    )


def distill(
    feats: GradientFeatures,
    h: int,
    tau_v: float = 0.95,
    tau_g: float = 0.5,
    eps_qr: float = 1e-6,
    seed: int = 0,
    targets: np.ndarray | None = None,
    max_size: int | None = None,
) -> tuple[DistilledGradients, CoverageReport]:
    """Distill a gradient feature set into synthetic gradient/target pairs.

    Pipeline: cluster the class-averaged kernel into h groups, keep each
    cluster's top eigenmodes up to a tau_v trace fraction, flag leading
    global eigendirections whose best local coverage is below tau_g, and
    synthesize gradients for both. Redundant candidates are removed by a
    rank-revealing QR on the lifted combination vectors. When max_size is
    given, surviving candidates are trimmed to the largest eigenvalues.

    targets defaults to the model logits, matching the regression targets
    used for kernel fits; pass feats.labels to distill hard labels instead.
    """
    if not (0.0 < tau_v <= 1.0):
        raise BadEps(f"tau_v must lie in (0, 1], got {tau_v}")
    if not (0.0 <= tau_g <= 1.0):
        raise BadEps(f"tau_g must lie in [0, 1], got {tau_g}")
    if max_size is not None and max_size < 1:
        raise InputError(f"max_size must be >= 1, got {max_size}")
    if targets is None:
        targets = feats.model_logits
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] != feats.size:
        raise ShapeMismatch(
            f"targets have {targets.shape[0]} rows for {feats.size} samples"
        )

    stack = build_stack(feats, "inv_k")
    kbar = average_kernel(stack)
    partition = spectral_cluster(kbar, h, seed)

    global_eig = sym_eig(kbar)
    gvals = np.maximum(global_eig.values, 0.0)
    r_global = _floor_rank(gvals, truncation_rank(gvals, 1.0 - tau_v))

    local_systems = local_eigensystems(kbar, partition, tau_v)
    coverage = coverage_coefficients(global_eig, r_global, partition, local_systems)
    gaps = gap_directions(coverage, tau_g)

    candidates = synthesize_local(feats.per_class, targets, partition, local_systems)
    candidates += synthesize_gap(feats.per_class, targets, global_eig, gaps)

    lifted = np.stack([c.lifted for c in candidates], axis=1)
    kept = qr_redundancy_filter(lifted, eps_qr)
    if kept.size == 0:
        raise RankZeroCluster("every candidate was filtered as redundant")
    if max_size is not None and kept.size > max_size:
        by_energy = sorted(kept, key=lambda i: (-candidates[i].eigenvalue, i))
        kept = np.sort(np.array(by_energy[:max_size], dtype=np.intp))

    report = CoverageReport(
        r_global=r_global,
        local_ranks=tuple(r for _, r in local_systems),
        coverage=coverage,
        gap_set=gaps,
        tau_v=tau_v,
        tau_g=tau_g,
    )
    return _assemble([candidates[i] for i in kept]), report


def weighted_local_containment(
    global_eig: EigenSystem,
    r_global: int,
    partition: ClusterPartition,
    local_systems: list[tuple[EigenSystem, int]],
) -> np.ndarray:
    """Eigenvalue-weighted fraction of each cluster's kept local modes that
    lies inside the span of the restricted leading global directions.

    The restriction of the global top block to a cluster is orthonormalized
    first (it is generally rank-deficient); containment 1 means the local
    subspace carries no information the global block misses.
    """
    out = np.zeros(partition.cluster_count)
    for h, ((eig, r_h), idx) in enumerate(zip(local_systems, partition.index_sets)):
        block = global_eig.vectors[idx, :r_global]
        u, s, _ = np.linalg.svd(block, full_matrices=False)
        keep = s > 1e-10 * max(s[0], 1e-300) if s.size else np.zeros(0, dtype=bool)
        q = u[:, keep]
        num = 0.0
        den = 0.0
        for j in range(r_h):
            lam = max(float(eig.values[j]), 0.0)
            vec = eig.vectors[:, j]
            proj = q.T @ vec
            num += lam * float(proj @ proj)
            den += lam
        out[h] = num / den if den > 0.0 else 0.0
    return out


def compression_ratio(m: int, s: int) -> float:
    """Samples represented per synthetic gradient."""
    if m < 1 or s < 1:
        raise InputError(f"need positive sizes, got m={m}, s={s}")
    return m / s
