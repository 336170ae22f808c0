"""Oblique regression trees with ridge-projection splits.

A fitted tree is a flat list of nodes (root at index 0). Internal nodes
hold a projection over the node's feature representation plus a trailing
bias, a threshold, and child indices; leaves hold the mean of the targets
that reached them.

Two variant flags control the learner:

* ``concatenate`` - after a split, the node's projection scores are
  appended as a new feature column before the children are fit, so each
  extra tree level adds one feature (dimension d + depth).
* ``residual_path`` - children fit the residual of their ancestors'
  linear predictions instead of the raw targets, and prediction sums the
  projection scores along the decision path before adding the leaf value.

Both flags on gives the feature-concatenating learner; both off gives a
plain ridge-projection tree with mean leaves.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .linalg import predict_linear, solve_ridge


@dataclass(frozen=True)
class SplitCriteria:
    """Eligibility thresholds for splitting a node."""

    max_depth: int = 4
    min_samples_split: int = 20
    min_samples_leaf: int = 8
    min_gain: float = 0.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.min_samples_split < 2 * self.min_samples_leaf:
            raise ValueError(
                "min_samples_split must be at least twice min_samples_leaf")
        if self.min_gain < 0:
            raise ValueError("min_gain must be nonnegative")


@dataclass
class ObliqueNode:
    """Internal node: score = projection[:-1] @ features + projection[-1],
    route left iff score < threshold."""

    depth: int
    projection: np.ndarray
    threshold: float
    gain: float
    left: int
    right: int


@dataclass
class LeafNode:
    depth: int
    residual_mean: float
    sample_count: int


@dataclass
class ObliqueTreeModel:
    input_dim: int
    lam: float
    criteria: SplitCriteria
    concatenate: bool
    residual_path: bool
    nodes: list = field(default_factory=list)

    @property
    def n_internal(self) -> int:
        return sum(isinstance(n, ObliqueNode) for n in self.nodes)

    @property
    def n_leaves(self) -> int:
        return sum(isinstance(n, LeafNode) for n in self.nodes)

    @property
    def fitted_depth(self) -> int:
        return max(n.depth for n in self.nodes)


@dataclass
class SplitResult:
    """Outcome of one oblique split search on a node's rows."""

    weights: np.ndarray
    intercept: float
    threshold: float
    gain: float
    scores: np.ndarray
    left_indices: np.ndarray
    right_indices: np.ndarray


def concat_feature(X: np.ndarray, new_feature: np.ndarray) -> np.ndarray:
    """Append one column to a feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    col = np.asarray(new_feature, dtype=np.float64).reshape(-1)
    if col.shape[0] != X.shape[0]:
        raise ValueError(
            f"new feature has length {col.shape[0]} but matrix has {X.shape[0]} rows")
    return np.hstack([X, col[:, None]])


def best_threshold(projections: np.ndarray, y: np.ndarray, n_total: int,
                   criteria: SplitCriteria):
    """Best midpoint threshold on sorted projections by impurity decrease.

    The gain of a candidate is the drop in summed squared error around the
    child means, normalized by the full training-set size ``n_total``. One
    sorted pass with prefix sums; ties in gain break toward the smallest
    threshold. Returns (threshold, gain) or None when no candidate is
    valid (constant projections, occupancy, or gain below ``min_gain``).
    """
    s = np.asarray(projections, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = s.shape[0]
    if n != y.shape[0]:
        raise ValueError("projections and targets must have the same length")
    if n < 2:
        raise ValueError("need at least 2 samples to search for a threshold")
    if n_total < n:
        raise ValueError("n_total cannot be smaller than the node size")

    order = np.argsort(s, kind="stable")
    ss = s[order]
    ys = y[order]
    boundaries = np.flatnonzero(ss[1:] > ss[:-1]) + 1  # left-group sizes
    if boundaries.size == 0:
        return None
    min_leaf = criteria.min_samples_leaf
    valid = boundaries[(boundaries >= min_leaf) & (n - boundaries >= min_leaf)]
    if valid.size == 0:
        return None

    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    total_sum = csum[-1]
    total_sq = csq[-1]
    parent_sse = total_sq - total_sum * total_sum / n

    k = valid.astype(np.float64)
    left_sum = csum[valid - 1]
    left_sq = csq[valid - 1]
    sse_left = left_sq - left_sum * left_sum / k
    sse_right = (total_sq - left_sq) - (total_sum - left_sum) ** 2 / (n - k)
    gains = np.maximum((parent_sse - sse_left - sse_right) / n_total, 0.0)

    best = int(np.argmax(gains))  # first maximum = smallest threshold
    gain = float(gains[best])
    if gain < criteria.min_gain:
        return None
    lo = ss[valid[best] - 1]
    hi = ss[valid[best]]
    mid = (lo + hi) / 2.0
    # keep the comparison `score < mid` consistent with the scanned
    # partition even when the midpoint rounds onto an endpoint
    threshold = float(mid) if mid > lo else float(hi)
    return threshold, gain


def find_oblique_split(X_t: np.ndarray, y_t: np.ndarray, lam: float,
                       n_total: int, criteria: SplitCriteria):
    """Ridge-fit a projection on the node's rows and pick its best
    threshold. Returns a SplitResult or None."""
    X_t = np.asarray(X_t, dtype=np.float64)
    y_t = np.asarray(y_t, dtype=np.float64).reshape(-1)
    if X_t.shape[0] < criteria.min_samples_split:
        raise ValueError(
            f"node has {X_t.shape[0]} rows, below min_samples_split={criteria.min_samples_split}")
    sol = solve_ridge(X_t, y_t, lam)
    scores = predict_linear(sol, X_t)
    found = best_threshold(scores, y_t, n_total, criteria)
    if found is None:
        return None
    threshold, gain = found
    left = scores < threshold
    return SplitResult(
        weights=sol.weights,
        intercept=sol.intercept,
        threshold=threshold,
        gain=gain,
        scores=scores,
        left_indices=np.flatnonzero(left),
        right_indices=np.flatnonzero(~left),
    )


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # row order must not leak into split arithmetic: sort rows by feature
    # values (then target) once, so fits are permutation-invariant
    keys = (y,) + tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


def fit_fc_odt(data: Dataset, lam: float, criteria: SplitCriteria | None = None,
               *, concatenate: bool = True, residual_path: bool = True) -> ObliqueTreeModel:
    """Grow an oblique tree breadth-first.

    At each eligible node: ridge-fit a projection, pick the best threshold,
    record the projection scores, concatenate them as a new feature column
    (when ``concatenate``), subtract them from the targets (when
    ``residual_path``), and route rows by score < threshold. Ineligible or
    unsplittable nodes become leaves holding the mean of their incoming
    targets.
    """
    criteria = criteria or SplitCriteria()
    if data.n < 1:
        raise ValueError("dataset is empty")
    if data.dim < 1:
        raise ValueError("dataset has no features")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")

    order = _canonical_order(data.features, data.targets)
    X0 = data.features[order]
    y0 = data.targets[order]
    n_total = data.n

    model = ObliqueTreeModel(
        input_dim=data.dim, lam=float(lam), criteria=criteria,
        concatenate=concatenate, residual_path=residual_path, nodes=[None])
    queue = deque([(0, 0, X0, y0)])
    while queue:
        slot, depth, X_t, y_t = queue.popleft()
        n_node = y_t.shape[0]
        eligible = depth < criteria.max_depth and n_node >= criteria.min_samples_split
        split = None
        if eligible:
            split = find_oblique_split(X_t, y_t, lam, n_total, criteria)
        if split is None:
            model.nodes[slot] = LeafNode(
                depth=depth, residual_mean=float(y_t.mean()), sample_count=n_node)
            continue
        X_child = concat_feature(X_t, split.scores) if concatenate else X_t
        y_child = y_t - split.scores if residual_path else y_t
        left_slot = len(model.nodes)
        right_slot = left_slot + 1
        model.nodes.extend([None, None])
        model.nodes[slot] = ObliqueNode(
            depth=depth,
            projection=np.append(split.weights, split.intercept),
            threshold=split.threshold,
            gain=split.gain,
            left=left_slot,
            right=right_slot,
        )
        queue.append((left_slot, depth + 1,
                      X_child[split.left_indices], y_child[split.left_indices]))
        queue.append((right_slot, depth + 1,
                      X_child[split.right_indices], y_child[split.right_indices]))
    return model


def _check_input_dim(model: ObliqueTreeModel, length: int):
    if length != model.input_dim:
        raise ValueError(
            f"input has {length} features but model expects {model.input_dim}")


def predict(model: ObliqueTreeModel, x: np.ndarray) -> float:
    """Score a single point by descending the tree.

    With ``residual_path`` on, the prediction is the sum of the node
    projection scores along the path plus the leaf value; otherwise it is
    the leaf value alone.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    _check_input_dim(model, x.shape[0])
    rep = x
    acc = 0.0
    node = model.nodes[0]
    while isinstance(node, ObliqueNode):
        s = float(rep @ node.projection[:-1] + node.projection[-1])
        if model.residual_path:
            acc += s
        if model.concatenate:
            rep = np.append(rep, s)
        node = model.nodes[node.left if s < node.threshold else node.right]
    return acc + node.residual_mean if model.residual_path else node.residual_mean


def predict_batch(model: ObliqueTreeModel, X: np.ndarray) -> np.ndarray:
    """Vectorized prediction: rows are routed through the tree level by
    level with their concatenated representations."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    _check_input_dim(model, X.shape[1])
    n = X.shape[0]
    out = np.zeros(n)
    if n == 0:
        return out
    stack = [(0, np.arange(n), X)]
    while stack:
        slot, idx, rep = stack.pop()
        node = model.nodes[slot]
        if isinstance(node, LeafNode):
            out[idx] += node.residual_mean
            continue
        s = rep @ node.projection[:-1] + node.projection[-1]
        if model.residual_path:
            out[idx] += s
        child_rep = np.hstack([rep, s[:, None]]) if model.concatenate else rep
        left = s < node.threshold
        stack.append((node.left, idx[left], child_rep[left]))
        stack.append((node.right, idx[~left], child_rep[~left]))
    return out


def decision_path(model: ObliqueTreeModel, x: np.ndarray):
    """Internal-node visit sequence for one point: (node index, score,
    went_left) triples, exactly as predict traverses them."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    _check_input_dim(model, x.shape[0])
    rep = x
    path = []
    slot = 0
    node = model.nodes[0]
    while isinstance(node, ObliqueNode):
        s = float(rep @ node.projection[:-1] + node.projection[-1])
        went_left = s < node.threshold
        path.append((slot, s, went_left))
        if model.concatenate:
            rep = np.append(rep, s)
        slot = node.left if went_left else node.right
        node = model.nodes[slot]
    return path


@dataclass
class ReplayNode:
    """Per-node view of the training data under a fitted model: row
    indices into the original dataset, the node's concatenated feature
    matrix, incoming (residual) targets, and the node's projection scores
    (None for leaves)."""

    indices: np.ndarray
    features: np.ndarray
    incoming: np.ndarray
    scores: np.ndarray | None


def replay_training_data(model: ObliqueTreeModel, data: Dataset) -> dict[int, ReplayNode]:
    """Route a dataset through a fitted model, reconstructing each node's
    feature representation and incoming targets."""
    X = data.features
    y = data.targets
    _check_input_dim(model, X.shape[1])
    out: dict[int, ReplayNode] = {}
    stack = [(0, np.arange(data.n), X, y)]
    while stack:
        slot, idx, rep, targ = stack.pop()
        node = model.nodes[slot]
        if isinstance(node, LeafNode):
            out[slot] = ReplayNode(idx, rep, targ, None)
            continue
        s = rep @ node.projection[:-1] + node.projection[-1]
        out[slot] = ReplayNode(idx, rep, targ, s)
        child_rep = np.hstack([rep, s[:, None]]) if model.concatenate else rep
        child_targ = targ - s if model.residual_path else targ
        left = s < node.threshold
        stack.append((node.left, idx[left], child_rep[left], child_targ[left]))
        stack.append((node.right, idx[~left], child_rep[~left], child_targ[~left]))
    return out


FORMAT_TAG = "fcodt-model"
FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def model_to_text(model: ObliqueTreeModel) -> str:
    """Self-describing text serialization; floats carry 17 significant
    digits so models round-trip exactly."""
    lines = [
        f"{FORMAT_TAG} {FORMAT_VERSION}",
        f"input_dim {model.input_dim}",
        f"lambda {_fmt(model.lam)}",
        f"max_depth {model.criteria.max_depth}",
        f"min_samples_split {model.criteria.min_samples_split}",
        f"min_samples_leaf {model.criteria.min_samples_leaf}",
        f"min_gain {_fmt(model.criteria.min_gain)}",
        f"concatenate {int(model.concatenate)}",
        f"residual_path {int(model.residual_path)}",
        f"nodes {len(model.nodes)}",
    ]
    for node in model.nodes:
        if isinstance(node, ObliqueNode):
            proj = " ".join(_fmt(v) for v in node.projection)
            lines.append(
                f"split {node.depth} {_fmt(node.threshold)} {_fmt(node.gain)} "
                f"{node.left} {node.right} {proj}")
        else:
            lines.append(
                f"leaf {node.depth} {_fmt(node.residual_mean)} {node.sample_count}")
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> ObliqueTreeModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty model document")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_TAG:
        raise ValueError("not a model document")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {head[1]}")

    fields = {}
    for ln in lines[1:10]:
        key, val = ln.split(maxsplit=1)
        fields[key] = val
    expected = ["input_dim", "lambda", "max_depth", "min_samples_split",
                "min_samples_leaf", "min_gain", "concatenate", "residual_path",
                "nodes"]
    missing = [k for k in expected if k not in fields]
    if missing:
        raise ValueError(f"model document missing fields: {missing}")

    criteria = SplitCriteria(
        max_depth=int(fields["max_depth"]),
        min_samples_split=int(fields["min_samples_split"]),
        min_samples_leaf=int(fields["min_samples_leaf"]),
        min_gain=float(fields["min_gain"]),
    )
    model = ObliqueTreeModel(
        input_dim=int(fields["input_dim"]),
        lam=float(fields["lambda"]),
        criteria=criteria,
        concatenate=bool(int(fields["concatenate"])),
        residual_path=bool(int(fields["residual_path"])),
        nodes=[],
    )
    n_nodes = int(fields["nodes"])
    node_lines = lines[10:]
    if len(node_lines) != n_nodes:
        raise ValueError(f"expected {n_nodes} node lines, found {len(node_lines)}")
    for ln in node_lines:
        parts = ln.split()
        if parts[0] == "split":
            depth = int(parts[1])
            projection = np.array([float(v) for v in parts[6:]])
            expected_len = (model.input_dim + depth + 1 if model.concatenate
                            else model.input_dim + 1)
            if projection.shape[0] != expected_len:
                raise ValueError(
                    f"projection length {projection.shape[0]} inconsistent with "
                    f"depth {depth} (expected {expected_len})")
            model.nodes.append(ObliqueNode(
                depth=depth,
                threshold=float(parts[2]),
                gain=float(parts[3]),
                left=int(parts[4]),
                right=int(parts[5]),
                projection=projection,
            ))
        elif parts[0] == "leaf":
            model.nodes.append(LeafNode(
                depth=int(parts[1]),
                residual_mean=float(parts[2]),
                sample_count=int(parts[3]),
            ))
        else:
            raise ValueError(f"unknown node kind {parts[0]!r}")
    for i, node in enumerate(model.nodes):
        if isinstance(node, ObliqueNode):
            if node.left == node.right:
                raise ValueError(f"node {i} has identical children")
            for child in (node.left, node.right):
                if not 0 < child < len(model.nodes):
                    raise ValueError(f"node {i} references invalid child {child}")
    return model
