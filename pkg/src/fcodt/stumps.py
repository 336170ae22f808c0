"""Orthonormal decision-stump diagnostics for residual-path trees.

For a tree fit with concatenation and residual updates, each internal
node contributes one stump: take the node's children, ridge-fit each
child's concatenated features against the *original* targets (zero
outside the child), and orthogonalize the combined child fit against the
parent's own fit under the empirical inner product

    <u, v>_n = (1/n) sum_i u(x_i) v(x_i).

Because each child's feature span contains the parent's (concatenation
adds the parent's own score column), the parent fit is exactly the
projection of the combined child fit onto the parent span, so the
Gram-Schmidt step reduces to (left fit + right fit - parent fit). The
root has no parent fit, so its baseline is the zero function and its
stump is the normalized combined child fit.

As the regularization strength approaches zero these stumps are exactly
orthonormal, the squared coefficient <y, psi_t>^2 equals the node's
impurity decrease computed with node-wise linear predictions, and the
expansion sum_t <y, psi_t> psi_t reproduces the path-telescoped linear
prediction. At larger lambda the identities degrade; the diagnostics
still run and simply report the deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .linalg import predict_linear, solve_ridge
from .tree import ObliqueNode, ObliqueTreeModel, replay_training_data

# floor keeps child solves well-posed when the model was fit at lambda=0
_MIN_DIAG_LAMBDA = 1e-12


@dataclass
class StumpBasis:
    """Unit stump columns (one per kept internal node) and their target
    coefficients; ``dropped`` lists internal nodes whose stump had zero
    empirical norm after orthogonalization."""

    stumps: np.ndarray
    coefficients: np.ndarray
    node_ids: list = field(default_factory=list)
    dropped: list = field(default_factory=list)


def _check_diag_preconditions(model: ObliqueTreeModel):
    if not (model.concatenate and model.residual_path):
        raise ValueError(
            "stump diagnostics require a model fit with concatenate and residual_path on")


def _node_fits(model: ObliqueTreeModel, data: Dataset) -> dict[int, np.ndarray]:
    """Per node: ridge prediction of the original targets from the node's
    concatenated features, as a length-n vector that is zero off-node."""
    replay = replay_training_data(model, data)
    lam = max(model.lam, _MIN_DIAG_LAMBDA)
    y = data.targets
    fits: dict[int, np.ndarray] = {}
    for slot, view in replay.items():
        vec = np.zeros(data.n)
        sol = solve_ridge(view.features, y[view.indices], lam)
        vec[view.indices] = predict_linear(sol, view.features)
        fits[slot] = vec
    return fits


def compute_stumps(model: ObliqueTreeModel, data: Dataset) -> StumpBasis:
    """Build the orthonormal stump basis on the model's training data."""
    _check_diag_preconditions(model)
    fits = _node_fits(model, data)
    n = data.n
    y = data.targets
    y_scale = max(1.0, float(np.sqrt(np.mean(y * y))))

    columns = []
    coefs = []
    node_ids = []
    dropped = []
    for slot, node in enumerate(model.nodes):
        if not isinstance(node, ObliqueNode):
            continue
        parent_fit = fits[slot] if slot != 0 else 0.0
        delta = fits[node.left] + fits[node.right] - parent_fit
        norm = float(np.sqrt(np.mean(delta * delta)))
        # a vanishing norm means the children's fits add nothing beyond
        # the parent's; normalizing would amplify solver noise into a
        # garbage column, so the stump is dropped instead
        if norm <= 1e-7 * y_scale:
            dropped.append(slot)
            continue
        psi = delta / norm
        columns.append(psi)
        coefs.append(float(np.mean(y * psi)))
        node_ids.append(slot)
    stumps = np.column_stack(columns) if columns else np.zeros((n, 0))
    return StumpBasis(stumps=stumps, coefficients=np.asarray(coefs),
                      node_ids=node_ids, dropped=dropped)


def path_linear_prediction(model: ObliqueTreeModel, data: Dataset) -> np.ndarray:
    """Training predictions of the path-telescoped linear estimator: the
    sum of the model's projection scores along each path plus a leaf-level
    ridge fit of the incoming residuals.

    This is the tree functional whose orthogonal expansion the stumps
    realize; it differs from the model's own training prediction only in
    the leaf term, where the residual mean is replaced by the leaf's
    linear correction.
    """
    _check_diag_preconditions(model)
    replay = replay_training_data(model, data)
    lam = max(model.lam, _MIN_DIAG_LAMBDA)
    out = np.zeros(data.n)
    for slot, view in replay.items():
        node = model.nodes[slot]
        if isinstance(node, ObliqueNode):
            out[view.indices] += view.scores
        else:
            sol = solve_ridge(view.features, view.incoming, lam)
            out[view.indices] += predict_linear(sol, view.features)
    return out


def verify_orthogonal_expansion(model: ObliqueTreeModel, data: Dataset) -> float:
    """Max absolute gap, over training points, between the path-telescoped
    linear prediction and the stump expansion sum_t <y, psi_t> psi_t."""
    basis = compute_stumps(model, data)
    expansion = basis.stumps @ basis.coefficients
    target = path_linear_prediction(model, data)
    return float(np.max(np.abs(target - expansion))) if data.n else 0.0


def stump_gram_matrix(basis: StumpBasis) -> np.ndarray:
    """Empirical Gram matrix of the stump columns (identity when the
    basis is orthonormal)."""
    n = basis.stumps.shape[0]
    if basis.stumps.shape[1] == 0:
        return np.zeros((0, 0))
    return basis.stumps.T @ basis.stumps / n


def linear_impurity_decrease(model: ObliqueTreeModel, data: Dataset) -> dict[int, float]:
    """Impurity decrease per internal node recomputed with node-wise
    linear predictions: the node's own full-target ridge fit as baseline
    (zero at the root) against the children's fits."""
    _check_diag_preconditions(model)
    fits = _node_fits(model, data)
    y = data.targets
    n = data.n
    replay = replay_training_data(model, data)
    out = {}
    for slot, node in enumerate(model.nodes):
        if not isinstance(node, ObliqueNode):
            continue
        idx = replay[slot].indices
        parent_pred = fits[slot][idx] if slot != 0 else 0.0
        child_pred = (fits[node.left] + fits[node.right])[idx]
        y_node = y[idx]
        out[slot] = float(
            (np.sum((y_node - parent_pred) ** 2) - np.sum((y_node - child_pred) ** 2)) / n)
    return out
