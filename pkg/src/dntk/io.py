"""Serialization: gradient feature files, CSV reports, JSON run configs.

Gradient features travel in a little fixed binary format (magic DNTK1,
version 1, little-endian float64 payload) so staged CLI runs can resume
from any point. Reports are CSV with a fixed column set and floats printed
at 17 significant digits, which makes repeated runs byte-comparable.
Everything else (datasets, models, distilled sets) rides in npz archives,
which numpy writes deterministically.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .distill import CoverageReport, DistilledGradients
from .errors import (
    DimMismatch,
    InputError,
    IoError,
    ParseError,
    TruncatedFile,
    UnknownField,
    VersionMismatch,
)
from .krr import KrrModel
from .sketch import SketchOperator, sample_orthonormal
from .tangent import GradientFeatures, LabeledDataset, MlpParams, RAW_PARAMS

MAGIC = b"DNTK1\0"
VERSION = 1
_DTYPE_F64 = 0
_LABELS_SOFT = 0
# magic + version + m + D + C + dtype byte + labels byte
_HEADER = struct.Struct("<6sIIIIBB")

REPORT_COLUMNS = (
    "method",
    "seed",
    "s",
    "compression",
    "fidelity",
    "accuracy",
    "mse",
    "coverage",
    "recon_error",
    "condition",
    "min_eig",
)


# ------------------------------------------------------- gradient features

def write_gradients(feats: GradientFeatures, path) -> None:
    """Serialize features; byte-identical output for identical inputs."""
    m, d, c = feats.size, feats.width, feats.class_count
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, m, d, c, _DTYPE_F64, _LABELS_SOFT))
            for ci in range(c):
                fh.write(np.ascontiguousarray(feats.per_class[ci], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(feats.labels, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(feats.model_logits, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_gradients(path, dim_kind: str = RAW_PARAMS) -> GradientFeatures:
    """Parse a gradient feature file written by write_gradients.

    The format does not record whether rows are raw or sketched, so the
    caller states it; staged CLI runs know which file is which.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is shorter than the header")
    magic, version, m, d, c, dtype, labels_kind = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    if dtype != _DTYPE_F64 or labels_kind != _LABELS_SOFT:
        raise ParseError(f"{path}: unsupported dtype/labels tags ({dtype}, {labels_kind})")
    if min(m, d, c) < 1:
        raise ParseError(f"{path}: degenerate dims m={m}, D={d}, C={c}")
    expected = _HEADER.size + 8 * (c * m * d + 2 * m * c)
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, expected {expected}")
    pos = _HEADER.size
    per_class = np.empty((c, m, d))
    for ci in range(c):
        block = np.frombuffer(raw, dtype="<f8", count=m * d, offset=pos)
        per_class[ci] = block.reshape(m, d)
        pos += 8 * m * d
    labels = np.frombuffer(raw, dtype="<f8", count=m * c, offset=pos).reshape(m, c)
    pos += 8 * m * c
    logits = np.frombuffer(raw, dtype="<f8", count=m * c, offset=pos).reshape(m, c)
    return GradientFeatures(
        per_class=per_class,
        labels=labels.copy(),
        dim_kind=dim_kind,
        model_logits=logits.copy(),
    )


# ----------------------------------------------------------------- reports

@dataclass(frozen=True)
class ReportRow:
    method: str
    seed: int
    s: int
    compression: float
    fidelity: float
    accuracy: float
    mse: float
    coverage: float
    recon_error: float
    condition: float
    min_eig: float


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_report(rows, path, append: bool = False) -> None:
    """Fixed-schema CSV; float cells carry 17 significant digits."""
    mode = "a" if append else "w"
    try:
        with open(path, mode, newline="") as fh:
            if not append:
                fh.write(",".join(REPORT_COLUMNS) + "\n")
            for row in rows:
                cells = [_fmt(getattr(row, col)) for col in REPORT_COLUMNS]
                fh.write(",".join(cells) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_report(path) -> list[ReportRow]:
    try:
        with open(path, newline="") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].split(",") != list(REPORT_COLUMNS):
        raise ParseError(f"{path}: missing or wrong header row")
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(REPORT_COLUMNS):
            raise ParseError(f"{path}: row has {len(cells)} cells")
        out.append(
            ReportRow(
                method=cells[0],
                seed=int(cells[1]),
                s=int(cells[2]),
                **{
                    col: float(cells[i])
                    for i, col in enumerate(REPORT_COLUMNS)
                    if i >= 3
                },
            )
        )
    return out


# ------------------------------------------------------------------ config

@dataclass
class RunConfig:
    """Every tunable of the pipeline, with defaults for all of them.

    layer_sizes fixes both the input dimension (first entry) and the class
    count (last entry). n_train and n_test must divide evenly over the
    classes. k_sketch wins over eps_jl when both are set.
    """

    seed: int = 0
    layer_sizes: list = field(default_factory=lambda: [16, 64, 64, 10])
    activation: str = "tanh"
    n_train: int = 500
    n_test: int = 500
    spread: float = 0.5
    train_lr: float = 0.05
    train_epochs: int = 100
    train_batch: int = 32
    k_sketch: int | None = None
    eps_jl: float = 0.3
    h: int = 10
    tau_v: float = 0.95
    tau_g: float = 0.5
    eps_qr: float = 1e-6
    lambda_reg: float = 1e-4
    scale_kind: str = "inv_k"
    methods: list = field(
        default_factory=lambda: ["distill", "random", "leverage", "fps", "kmeans"]
    )
    budgets: list | None = None
    sweep_h: list = field(default_factory=lambda: [5, 10, 15, 20])
    sweep_tau_v: list = field(default_factory=lambda: [0.90, 0.95, 0.99])
    sweep_tau_g: list = field(default_factory=lambda: [0.3, 0.5, 0.7, 0.9])
    sweep_seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    @property
    def class_count(self) -> int:
        return int(self.layer_sizes[-1])

    @property
    def input_dim(self) -> int:
        return int(self.layer_sizes[0])

    def validate(self) -> "RunConfig":
        if len(self.layer_sizes) < 2 or any(int(s) < 1 for s in self.layer_sizes):
            raise InputError(f"bad layer_sizes {self.layer_sizes}")
        if self.class_count < 2:
            raise InputError("need at least 2 output classes")
        for name in ("n_train", "n_test"):
            val = getattr(self, name)
            if val < self.class_count or val % self.class_count:
                raise InputError(f"{name}={val} must be a positive multiple of the class count")
        if not (0.0 < self.tau_v <= 1.0):
            raise InputError(f"tau_v={self.tau_v} outside (0, 1]")
        if not (0.0 <= self.tau_g <= 1.0):
            raise InputError(f"tau_g={self.tau_g} outside [0, 1]")
        if not (0.0 < self.eps_qr < 1.0):
            raise InputError(f"eps_qr={self.eps_qr} outside (0, 1)")
        if not (0.0 < self.eps_jl < 1.0):
            raise InputError(f"eps_jl={self.eps_jl} outside (0, 1)")
        if self.lambda_reg < 0.0:
            raise InputError(f"lambda_reg={self.lambda_reg} negative")
        if self.scale_kind not in ("none", "inv_k"):
            raise InputError(f"unknown scale_kind {self.scale_kind!r}")
        if self.h < 1:
            raise InputError(f"h={self.h} must be >= 1")
        known = {"distill", "full", "random", "leverage", "fps", "kmeans"}
        bad = [m for m in self.methods if m not in known]
        if bad:
            raise InputError(f"unknown methods {bad}")
        return self


def read_config(path) -> RunConfig:
    """Strict JSON config: unknown keys are rejected, missing ones default."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(data, source=str(path))


def config_from_dict(data: dict, source: str = "config") -> RunConfig:
    if not isinstance(data, dict):
        raise ParseError(f"{source}: top level must be an object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise UnknownField(f"{source}: unknown fields {unknown}")
    return RunConfig(**data).validate()


def write_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------ npz bundles

def write_dataset(data: LabeledDataset, path) -> None:
    np.savez(
        path,
        inputs=data.inputs,
        labels=data.labels.astype(np.int64),
        class_count=np.int64(data.class_count),
    )


def read_dataset(path) -> LabeledDataset:
    with np.load(path) as z:
        return LabeledDataset(
            inputs=z["inputs"],
            labels=z["labels"].astype(np.intp),
            class_count=int(z["class_count"]),
        )


def write_model(params: MlpParams, path) -> None:
    np.savez(
        path,
        layer_sizes=np.array(params.layer_sizes, dtype=np.int64),
        theta=params.theta,
        activation=np.array(params.activation),
    )


def read_model(path) -> MlpParams:
    with np.load(path) as z:
        return MlpParams(
            layer_sizes=tuple(int(s) for s in z["layer_sizes"]),
            theta=z["theta"],
            activation=str(z["activation"]),
        )


def write_sketch_meta(op: SketchOperator, path) -> None:
    """Sketches persist as (seed, dims); the matrix regenerates on load."""
    meta = {
        "source_dim": op.source_dim,
        "target_dim": op.target_dim,
        "seed": op.seed,
        "eps_target": op.eps_target,
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sketch_meta(path) -> SketchOperator:
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read sketch meta {path}: {exc}") from exc
    op = sample_orthonormal(int(meta["source_dim"]), int(meta["target_dim"]), int(meta["seed"]))
    if meta.get("eps_target") is not None:
        op = SketchOperator(
            q=op.q, scale=op.scale, seed=op.seed, eps_target=float(meta["eps_target"])
        )
    return op


_PROV_KIND = {"local": 0, "gap": 1}
_PROV_NAME = {v: k for k, v in _PROV_KIND.items()}


def write_distilled(dg: DistilledGradients, report: CoverageReport, path) -> None:
    prov = np.array(
        [
            (_PROV_KIND[p[0]],) + tuple(p[1:]) + (0,) * (3 - len(p))
            for p in dg.provenance
        ],
        dtype=np.int64,
    ).reshape(len(dg.provenance), 3)
    np.savez(
        path,
        phi_hat=dg.phi_hat,
        y_hat=dg.y_hat,
        lifted_basis=dg.lifted_basis,
        eigenvalues=dg.eigenvalues,
        provenance=prov,
        r_global=np.int64(report.r_global),
        local_ranks=np.array(report.local_ranks, dtype=np.int64),
        coverage=report.coverage,
        gap_set=np.array(report.gap_set, dtype=np.int64),
        tau_v=np.float64(report.tau_v),
        tau_g=np.float64(report.tau_g),
    )


def read_distilled(path) -> tuple[DistilledGradients, CoverageReport]:
    with np.load(path) as z:
        prov = tuple(
            (_PROV_NAME[int(k)], int(a), int(b)) if int(k) == 0 else (_PROV_NAME[int(k)], int(a))
            for k, a, b in z["provenance"]
        )
        dg = DistilledGradients(
            phi_hat=z["phi_hat"],
            y_hat=z["y_hat"],
            provenance=prov,
            lifted_basis=z["lifted_basis"],
            eigenvalues=z["eigenvalues"],
        )
        report = CoverageReport(
            r_global=int(z["r_global"]),
            local_ranks=tuple(int(r) for r in z["local_ranks"]),
            coverage=z["coverage"],
            gap_set=tuple(int(j) for j in z["gap_set"]),
            tau_v=float(z["tau_v"]),
            tau_g=float(z["tau_g"]),
        )
    return dg, report


def write_krr(model: KrrModel, path) -> None:
    np.savez(
        path,
        basis=model.basis,
        targets=model.targets,
        alpha=model.alpha,
        lambda_reg=np.float64(model.lambda_reg),
        rank=np.int64(model.rank),
        scale_kind=np.array(model.scale_kind),
        eig_values=model.eig_values,
        eig_vectors=model.eig_vectors,
    )


def read_krr(path) -> KrrModel:
    with np.load(path) as z:
        return KrrModel(
            basis=z["basis"],
            targets=z["targets"],
            alpha=z["alpha"],
            lambda_reg=float(z["lambda_reg"]),
            rank=int(z["rank"]),
            scale_kind=str(z["scale_kind"]),
            eig_values=z["eig_values"],
            eig_vectors=z["eig_vectors"],
        )
