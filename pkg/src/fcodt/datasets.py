"""Dataset container, simulated generators, parsers, and split helpers.

Randomness policy: every generator takes an explicit seed and draws from a
named PCG64 stream; normal deviates come from a Box-Muller transform of
uniforms so streams replicate bit-for-bit across platforms.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.request
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """Dense feature matrix plus targets and provenance metadata.

    ``clean_targets`` carries the noise-free regression function values for
    simulated data; test-set evaluation on simulations always scores
    against it.
    """

    features: np.ndarray
    targets: np.ndarray
    meta: dict = field(default_factory=dict)
    clean_targets: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"features have {X.shape[0]} rows but targets have length {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        X = X.copy()
        y = y.copy()
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        if self.clean_targets is not None:
            f = np.asarray(self.clean_targets, dtype=np.float64).reshape(-1)
            if f.shape[0] != y.shape[0]:
                raise ValueError("clean_targets length mismatch")
            if not np.all(np.isfinite(f)):
                raise ValueError("clean_targets contain non-finite values")
            f = f.copy()
            f.flags.writeable = False
            object.__setattr__(self, "clean_targets", f)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        clean = self.clean_targets[idx] if self.clean_targets is not None else None
        return Dataset(self.features[idx], self.targets[idx],
                       meta=dict(self.meta), clean_targets=clean)


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/test row indices covering a dataset exactly once."""

    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.train_indices, dtype=np.intp)
        te = np.asarray(self.test_indices, dtype=np.intp)
        object.__setattr__(self, "train_indices", tr)
        object.__setattr__(self, "test_indices", te)
        if np.intersect1d(tr, te).size:
            raise ValueError("train/test indices overlap")


def normal_from_uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normals via Box-Muller on two uniform draws.

    Consumes a fixed number of uniforms per call, so the stream is
    platform-independent and replayable.
    """
    u = rng.random((2, size))
    r = np.sqrt(-2.0 * np.log1p(-u[0]))
    return r * np.cos(2.0 * np.pi * u[1])


def _relu(z):
    return np.maximum(z, 0.0)


def sim1_function(X: np.ndarray) -> np.ndarray:
    """Sum of five rectified averaged-coordinate ridge terms."""
    X = np.asarray(X, dtype=np.float64)
    return (_relu(X[:, 0])
            + _relu((X[:, 1] + X[:, 2]) / 2.0)
            + _relu((X[:, 3] + X[:, 4] + X[:, 5]) / 3.0)
            + _relu((X[:, 6] + X[:, 7] + X[:, 8] + X[:, 9]) / 4.0)
            + _relu((X[:, 0] + X[:, 2] + X[:, 4] + X[:, 6] + X[:, 8]) / 5.0))


def sim2_function(X: np.ndarray) -> np.ndarray:
    """Same ridge structure as sim1 with exponential links."""
    X = np.asarray(X, dtype=np.float64)
    return (np.exp(X[:, 0])
            + np.exp((X[:, 1] + X[:, 2]) / 2.0)
            + np.exp((X[:, 3] + X[:, 4] + X[:, 5]) / 3.0)
            + np.exp((X[:, 6] + X[:, 7] + X[:, 8] + X[:, 9]) / 4.0)
            + np.exp((X[:, 0] + X[:, 2] + X[:, 4] + X[:, 6] + X[:, 8]) / 5.0))


def _gen_sim(name: str, fn, n: int, sigma: float, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    X = rng.random((n, 10)) * 6.0 - 3.0
    f = fn(X)
    y = f + sigma * normal_from_uniform(rng, n) if sigma > 0 else f.copy()
    meta = {"name": name, "seed": int(seed), "noise_sigma": float(sigma),
            "source": "simulated"}
    return Dataset(X, y, meta=meta, clean_targets=f)


def gen_sim1(n: int, sigma: float, seed: int) -> Dataset:
    return _gen_sim("sim1", sim1_function, n, sigma, seed)


def gen_sim2(n: int, sigma: float, seed: int) -> Dataset:
    return _gen_sim("sim2", sim2_function, n, sigma, seed)


def parse_libsvm(source, expected_dim: int | None = None,
                 name: str = "libsvm") -> Dataset:
    """Parse sparse `target index:value ...` lines into a dense dataset.

    Indices are 1-based and must be strictly increasing within a line;
    absent indices are zero-filled.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]
    targets = []
    rows = []
    max_dim = expected_dim or 0
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        try:
            target = float(parts[0])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed target {parts[0]!r}")
        if not np.isfinite(target):
            raise ValueError(f"line {lineno}: non-finite target")
        entries = []
        prev = 0
        for tok in parts[1:]:
            if ":" not in tok:
                raise ValueError(f"line {lineno}: malformed token {tok!r}")
            idx_s, val_s = tok.split(":", 1)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ValueError(f"line {lineno}: malformed token {tok!r}")
            if idx <= prev:
                raise ValueError(
                    f"line {lineno}: feature indices must be strictly increasing (got {idx} after {prev})")
            if not np.isfinite(val):
                raise ValueError(f"line {lineno}: non-finite value in token {tok!r}")
            entries.append((idx, val))
            prev = idx
        if expected_dim is not None and prev > expected_dim:
            raise ValueError(
                f"line {lineno}: feature index {prev} exceeds expected dimension {expected_dim}")
        max_dim = max(max_dim, prev)
        targets.append(target)
        rows.append(entries)
    n = len(targets)
    X = np.zeros((n, max_dim))
    for i, entries in enumerate(rows):
        for idx, val in entries:
            X[i, idx - 1] = val
    return Dataset(X, np.asarray(targets),
                   meta={"name": name, "source": "libsvm"})


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def parse_csv(source, target_column, drop_columns=(), name: str = "csv") -> Dataset:
    """Parse a rectangular numeric table; the target column (by header name
    or 0-based index) is split out, remaining columns in order become
    features."""
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        return Dataset(np.zeros((0, 0)), np.zeros(0), meta={"name": name, "source": "csv"})

    first = [c.strip() for c in lines[0].split(",")]
    has_header = not all(_looks_numeric(c) for c in first)
    header = first if has_header else None
    body = lines[1:] if has_header else lines
    ncols = len(first)

    def col_index(spec):
        if isinstance(spec, int):
            if not 0 <= spec < ncols:
                raise ValueError(f"column index {spec} out of range for {ncols} columns")
            return spec
        if header is None:
            raise ValueError(f"column {spec!r} requested by name but the table has no header")
        if spec not in header:
            raise ValueError(f"column {spec!r} not found in header {header}")
        return header.index(spec)

    tgt = col_index(target_column)
    dropped = {col_index(c) for c in drop_columns}
    if tgt in dropped:
        raise ValueError("target column cannot also be dropped")
    keep = [j for j in range(ncols) if j != tgt and j not in dropped]

    feats = []
    targets = []
    for rowno, line in enumerate(body, start=2 if has_header else 1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != ncols:
            raise ValueError(f"row {rowno}: expected {ncols} cells, got {len(cells)}")
        vals = []
        for j, cell in enumerate(cells):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ValueError(f"row {rowno}, column {j + 1}: non-numeric cell {cell!r}")
        feats.append([vals[j] for j in keep])
        targets.append(vals[tgt])
    if not feats:
        return Dataset(np.zeros((0, len(keep))), np.zeros(0),
                       meta={"name": name, "source": "csv"})
    return Dataset(np.asarray(feats), np.asarray(targets),
                   meta={"name": name, "source": "csv"})


def dataset_to_csv(data: Dataset, include_clean: bool = False) -> str:
    """Serialize with 17 significant digits so values round-trip exactly."""
    d = data.dim
    cols = [f"x{j + 1}" for j in range(d)] + ["y"]
    if include_clean:
        if data.clean_targets is None:
            raise ValueError("dataset has no clean targets to include")
        cols.append("f")
    out = [",".join(cols)]
    for i in range(data.n):
        row = [format(v, ".17g") for v in data.features[i]]
        row.append(format(data.targets[i], ".17g"))
        if include_clean:
            row.append(format(data.clean_targets[i], ".17g"))
        out.append(",".join(row))
    return "\n".join(out) + "\n"


def train_test_split(data: Dataset, train_fraction: float, seed: int) -> SplitAssignment:
    """Seeded uniform shuffle; the first ceil(n * fraction) rows train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = data.n
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.ceil(n * train_fraction))
    return SplitAssignment(perm[:n_train], perm[n_train:])


def kfold_indices(n: int, k: int, seed: int) -> list[SplitAssignment]:
    """k validation folds partitioning [0, n); sizes differ by at most 1."""
    if not 2 <= k <= n:
        raise ValueError(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    folds = []
    start = 0
    for size in sizes:
        val = perm[start:start + size]
        train = np.concatenate([perm[:start], perm[start + size:]])
        folds.append(SplitAssignment(train, val))
        start += size
    return folds


def minmax_scale(train: Dataset, others: tuple[Dataset, ...] = ()) -> tuple[Dataset, ...]:
    """Rescale features to [0, 1] using the training set's column ranges;
    constant columns map to 0."""
    lo = train.features.min(axis=0)
    hi = train.features.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)

    def apply(ds: Dataset) -> Dataset:
        X = (ds.features - lo) / span
        return Dataset(X, ds.targets, meta=dict(ds.meta), clean_targets=ds.clean_targets)

    return tuple(apply(ds) for ds in (train, *others))


def load_manifest(path: str) -> dict:
    """Manifest maps dataset name to {path, format, target?, url?, sha256?,
    n_features?}."""
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, dict):
        raise ValueError("manifest must be a JSON object keyed by dataset name")
    return manifest


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_dataset(entry: dict, dest_path: str, timeout: float = 60.0) -> str:
    """Download a manifest entry's URL to dest_path, verifying a pinned
    sha256 when present."""
    url = entry.get("url")
    if not url:
        raise ValueError("manifest entry has no url to fetch")
    os.makedirs(os.path.dirname(dest_path) or ".", exist_ok=True)
    tmp = dest_path + ".part"
    with urllib.request.urlopen(url, timeout=timeout) as resp, open(tmp, "wb") as out:
        out.write(resp.read())
    pinned = entry.get("sha256")
    if pinned:
        got = sha256_file(tmp)
        if got != pinned:
            os.remove(tmp)
            raise ValueError(f"checksum mismatch for {url}: expected {pinned}, got {got}")
    os.replace(tmp, dest_path)
    return dest_path


def load_from_manifest(name: str, manifest: dict, base_dir: str = ".") -> Dataset:
    """Resolve and parse a named real-world dataset from its manifest entry."""
    if name not in manifest:
        raise KeyError(f"dataset {name!r} not in manifest")
    entry = manifest[name]
    path = entry["path"]
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file for {name!r} not found at {path}")
    fmt = entry.get("format", "libsvm")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if fmt == "libsvm":
        ds = parse_libsvm(text, expected_dim=entry.get("n_features"), name=name)
    elif fmt == "csv":
        ds = parse_csv(text, entry.get("target", "y"), name=name)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    return ds
