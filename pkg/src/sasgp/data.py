"""Dataset ingestion, synthetic generators, normalization, and batching.

IDX ingestion follows the public big-endian format bit-exactly (magic 2051
for images, 2049 for labels) and accepts gzip-compressed files. Pixels are
scaled to [0, 1] by 255 with the scaling recorded so it can be inverted.
Synthetic datasets are exact GP draws (z ~ N(0, I), f ~ GP via Cholesky,
x = f + noise) and return the generating latents for oracle tests.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, ParseError, ShapeMismatch, TruncatedFile
from .kernel import KernelParams, gram
from .linalg import robust_cholesky

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass
class Normalization:
    """Affine record: raw = normalized * scale + offset."""

    scale: float = 1.0
    offset: float = 0.0


@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray | None = None
    normalization: Normalization | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


def denormalize(ds: Dataset) -> np.ndarray:
    """Undo the recorded normalization, recovering the raw feature values."""
    if ds.normalization is None:
        return ds.x.copy()
    return ds.x * ds.normalization.scale + ds.normalization.offset


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def load_idx(images_path: str, labels_path: str | None = None) -> Dataset:
    """Load big-endian IDX image (and optional label) files.

    Images come out row-flattened as (N, rows*cols) floats in [0, 1] with the
    1/255 scaling recorded in the normalization field.
    """
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise TruncatedFile(f"{images_path}: missing IDX image header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagic(f"{images_path}: magic {magic}, expected {IDX_IMAGE_MAGIC}")
    expected = n * rows * cols
    payload = raw[16:]
    if len(payload) < expected:
        raise TruncatedFile(f"{images_path}: payload {len(payload)} bytes, header declares {expected}")
    if len(payload) > expected:
        raise ShapeMismatch(f"{images_path}: payload {len(payload)} bytes exceeds declared {expected}")
    x = np.frombuffer(payload, dtype=np.uint8).astype(np.float64).reshape(n, rows * cols) / 255.0

    labels = None
    if labels_path is not None:
        lraw = _read_bytes(labels_path)
        if len(lraw) < 8:
            raise TruncatedFile(f"{labels_path}: missing IDX label header")
        lmagic, ln = struct.unpack(">II", lraw[:8])
        if lmagic != IDX_LABEL_MAGIC:
            raise BadMagic(f"{labels_path}: magic {lmagic}, expected {IDX_LABEL_MAGIC}")
        lpayload = lraw[8:]
        if len(lpayload) < ln:
            raise TruncatedFile(f"{labels_path}: payload {len(lpayload)} bytes, header declares {ln}")
        if ln != n:
            raise ShapeMismatch(f"{labels_path}: {ln} labels for {n} images")
        labels = np.frombuffer(lpayload[:ln], dtype=np.uint8).astype(np.int64)
    return Dataset(x=x, labels=labels, normalization=Normalization(scale=255.0))


def _is_numeric_row(fields: list[str]) -> bool:
    try:
        for f in fields:
            float(f)
        return True
    except ValueError:
        return False


def load_csv(path: str, has_labels: bool = False) -> Dataset:
    """Numeric CSV, one row per datum, optional trailing label column.

    A non-numeric first line is treated as a header; ragged rows raise
    ParseError with the offending 1-based line number.
    """
    rows: list[list[float]] = []
    width = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if not rows and width is None and not _is_numeric_row(fields):
                width = len(fields)  # header fixes the expected width
                continue
            if width is None:
                width = len(fields)
            if len(fields) != width:
                raise ParseError(f"{path}: line {lineno} has {len(fields)} fields, expected {width}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    mat = np.array(rows, dtype=np.float64)
    if has_labels:
        if mat.shape[1] < 2:
            raise ParseError(f"{path}: labeled file needs at least 2 columns")
        return Dataset(x=mat[:, :-1], labels=mat[:, -1].astype(np.int64))
    return Dataset(x=mat)


def export_csv(path: str, x: np.ndarray, labels: np.ndarray | None = None, header: list[str] | None = None) -> None:
    """Write a matrix (plus optional trailing labels) at 17 significant digits."""
    x = np.atleast_2d(x)
    with open(path, "w") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for i in range(x.shape[0]):
            cells = [format(v, ".17g") for v in x[i]]
            if labels is not None:
                cells.append(str(int(labels[i])))
            fh.write(",".join(cells) + "\n")


def synth_gp_dataset(
    n: int, q: int, d: int, p: KernelParams, seed: int
) -> tuple[Dataset, np.ndarray]:
    """Exact draw from the generative model; returns the true latents too.

    z ~ N(0, I), one GP function sample per output dimension via the
    Cholesky factor of K_NN, then additive observation noise.
    """
    if n > 4096:
        raise ValueError(f"synthetic generator capped at 4096 points, asked for {n}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, q))
    f = robust_cholesky(gram(z, p, add_noise=False))
    fn = f.lower @ rng.standard_normal((n, d))
    x = fn + np.sqrt(p.noise_variance) * rng.standard_normal((n, d))
    return Dataset(x=x), z


@dataclass
class BatchPlan:
    """Deterministic shuffled batching: one permutation per (seed, epoch)."""

    batch_size: int
    seed: int = 0
    drop_last: bool = False


def batches(n: int, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch; every index appears exactly once
    (except the optional dropped tail)."""
    if plan.batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng([plan.seed, epoch])
    perm = rng.permutation(n)
    out = [perm[i : i + plan.batch_size] for i in range(0, n, plan.batch_size)]
    if plan.drop_last and out and out[-1].size < plan.batch_size:
        out.pop()
    return out


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """First n rows after a seeded shuffle (desk-scale reproducible subsets)."""
    if n > ds.n:
        raise ValueError(f"subset of {n} requested from dataset of {ds.n}")
    order = np.random.default_rng(seed).permutation(ds.n)[:n]
    return _take(ds, order)


def train_test_split(ds: Dataset, n_train: int, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint seeded-shuffle split into train and test subsets."""
    if n_train + n_test > ds.n:
        raise ValueError(f"split {n_train}+{n_test} exceeds dataset of {ds.n}")
    order = np.random.default_rng(seed).permutation(ds.n)
    return _take(ds, order[:n_train]), _take(ds, order[n_train : n_train + n_test])


def _take(ds: Dataset, rows: np.ndarray) -> Dataset:
    return Dataset(
        x=ds.x[rows].copy(),
        labels=None if ds.labels is None else ds.labels[rows].copy(),
        normalization=ds.normalization,
    )
