"""Differentiable decision trees and their hardened (crisp) form.

A soft tree of depth d has 2^d - 1 decision nodes, each gating left/right
with sigmoid(feature_weights . x - threshold), and 2^d leaves, each holding
a weight vector whose negative-exponent softmax is a distribution over the
discrete actions. The soft output mixes leaf distributions by path
probability, which keeps every parameter trainable by gradient descent.
Crispification hardens each gate to a single-feature comparison and each
leaf to its most probable action, yielding an ordinary decision tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .diffmath import sigmoid, softmax_neg
from .errors import ConfigError, DegenerateNodeError

MIN_CRISP_WEIGHT = 1e-8


@dataclass
class TreeParams:
    """Trainable soft-tree parameters for a fixed depth."""

    depth: int
    feature_weights: np.ndarray   # (n_nodes, n_features)
    thresholds: np.ndarray        # (n_nodes,)
    leaf_weights: np.ndarray      # (n_leaves, n_actions)

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"tree depth must be >= 1, got {self.depth}")
        n_nodes, n_leaves = 2 ** self.depth - 1, 2 ** self.depth
        self.feature_weights = np.asarray(self.feature_weights, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.leaf_weights = np.asarray(self.leaf_weights, dtype=float)
        if (self.feature_weights.shape[0] != n_nodes or self.thresholds.shape != (n_nodes,)
                or self.leaf_weights.shape[0] != n_leaves):
            raise ConfigError(f"parameter shapes inconsistent with depth {self.depth}")

    @property
    def n_features(self) -> int:
        return self.feature_weights.shape[1]

    @property
    def n_actions(self) -> int:
        return self.leaf_weights.shape[1]

    @property
    def num_training_params(self) -> int:
        return self.feature_weights.size + self.thresholds.size + self.leaf_weights.size

    @property
    def num_inference_params(self) -> int:
        # one feature id + one threshold per decision node, one action per leaf
        return 2 * self.thresholds.size + self.leaf_weights.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.feature_weights, self.thresholds, self.leaf_weights]

    def copy(self) -> "TreeParams":
        return TreeParams(self.depth, self.feature_weights.copy(),
                          self.thresholds.copy(), self.leaf_weights.copy())


def init_tree(depth: int, rng: np.random.Generator, n_features: int = 5,
              n_actions: int = 5) -> TreeParams:
    """Random init: weights in (-1, 1), thresholds in (0, 1) to sit in feature space."""
    n_nodes, n_leaves = 2 ** depth - 1, 2 ** depth
    return TreeParams(
        depth,
        rng.uniform(-1.0, 1.0, size=(n_nodes, n_features)),
        rng.uniform(0.0, 1.0, size=n_nodes),
        rng.uniform(-1.0, 1.0, size=(n_leaves, n_actions)),
    )


@dataclass
class SoftOutput:
    action_distribution: np.ndarray
    leaf_path_probs: np.ndarray


@dataclass
class TreeGrads:
    feature_weights: np.ndarray
    thresholds: np.ndarray
    leaf_weights: np.ndarray

    def params(self) -> list[np.ndarray]:
        return [self.feature_weights, self.thresholds, self.leaf_weights]


@lru_cache(maxsize=None)
def _leaf_paths(depth: int) -> tuple[tuple[tuple[int, bool], ...], ...]:
    """For each leaf (left to right): ((node_index, goes_left), ...) root-down."""
    paths = []
    for leaf in range(2 ** depth):
        node = 0
        steps = []
        for level in range(depth):
            goes_left = ((leaf >> (depth - 1 - level)) & 1) == 0
            steps.append((node, goes_left))
            node = 2 * node + (1 if goes_left else 2)
        paths.append(tuple(steps))
    return tuple(paths)


def _gate_probs(params: TreeParams, xs: np.ndarray) -> np.ndarray:
    """Left-branch probability of every decision node, shape (batch, n_nodes)."""
    return sigmoid(xs @ params.feature_weights.T - params.thresholds)


def _path_factors(params: TreeParams, gates: np.ndarray) -> np.ndarray:
    """Per-leaf per-level branch factors, shape (batch, n_leaves, depth)."""
    batch = gates.shape[0]
    paths = _leaf_paths(params.depth)
    factors = np.empty((batch, len(paths), params.depth))
    for k, path in enumerate(paths):
        for level, (node, goes_left) in enumerate(path):
            factors[:, k, level] = gates[:, node] if goes_left else 1.0 - gates[:, node]
    return factors


def forward_batch(params: TreeParams, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Soft forward over a batch: (action distributions, leaf path probabilities)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    gates = _gate_probs(params, xs)
    path_probs = _path_factors(params, gates).prod(axis=2)
    leaf_dists = softmax_neg(params.leaf_weights)
    return path_probs @ leaf_dists, path_probs


def ddt_forward(params: TreeParams, state: np.ndarray) -> SoftOutput:
    """Soft forward pass for one normalized state vector."""
    dist, path = forward_batch(params, np.asarray(state, dtype=float)[None, :])
    return SoftOutput(dist[0], path[0])


def gradients_batch(params: TreeParams, xs: np.ndarray, output_grads: np.ndarray) -> TreeGrads:
    """Analytic gradients of sum_b loss_b when d(loss)/d(action_dist) is given per row."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    output_grads = np.atleast_2d(np.asarray(output_grads, dtype=float))
    gates = _gate_probs(params, xs)
    factors = _path_factors(params, gates)
    path_probs = factors.prod(axis=2)
    leaf_dists = softmax_neg(params.leaf_weights)

    # leaf weights: chain through the negative-exponent softmax
    d_leaf_dist = path_probs.T @ output_grads                       # (n_leaves, n_actions)
    inner = (d_leaf_dist * leaf_dists).sum(axis=1, keepdims=True)
    grad_leaf = -leaf_dists * (d_leaf_dist - inner)

    # gate probabilities: product rule with the level-l factor excluded
    d_path = output_grads @ leaf_dists.T                            # (batch, n_leaves)
    depth = params.depth
    ones = np.ones_like(factors[:, :, :1])
    prefix = np.concatenate([ones, np.cumprod(factors, axis=2)[:, :, :-1]], axis=2)
    suffix = np.concatenate(
        [np.cumprod(factors[:, :, ::-1], axis=2)[:, :, ::-1][:, :, 1:], ones], axis=2)
    excl = prefix * suffix                                          # (batch, n_leaves, depth)

    d_gate = np.zeros_like(gates)                                   # (batch, n_nodes)
    for k, path in enumerate(_leaf_paths(depth)):
        for level, (node, goes_left) in enumerate(path):
            sign = 1.0 if goes_left else -1.0
            d_gate[:, node] += sign * d_path[:, k] * excl[:, k, level]

    d_z = d_gate * gates * (1.0 - gates)                            # pre-sigmoid grad
    grad_weights = d_z.T @ xs
    grad_thresholds = -d_z.sum(axis=0)
    return TreeGrads(grad_weights, grad_thresholds, grad_leaf)


def ddt_gradients(params: TreeParams, state: np.ndarray, output_grad: np.ndarray) -> TreeGrads:
    """Gradients of (output_grad . action_distribution) w.r.t. every tree parameter."""
    state = np.asarray(state, dtype=float)
    output_grad = np.asarray(output_grad, dtype=float)
    if output_grad.shape != (params.n_actions,):
        raise ConfigError(f"output_grad must have {params.n_actions} entries")
    return gradients_batch(params, state[None, :], output_grad[None, :])


# ---------------------------------------------------------------------------
# Crispification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrispTree:
    """Hardened tree: one (feature, threshold) test per node, one action per leaf.

    A node sends the state left when ``x[feature] > threshold`` (strictly;
    ties go right), with the comparison reversed when ``flipped`` is set,
    which happens when the winning soft weight was negative.
    """

    depth: int
    feature_index: tuple[int, ...]
    thresholds: tuple[float, ...]
    flipped: tuple[bool, ...]
    leaf_actions: tuple[int, ...]

    def __post_init__(self):
        n_nodes, n_leaves = 2 ** self.depth - 1, 2 ** self.depth
        if (len(self.feature_index) != n_nodes or len(self.thresholds) != n_nodes
                or len(self.flipped) != n_nodes or len(self.leaf_actions) != n_leaves):
            raise ConfigError(f"crisp tree shapes inconsistent with depth {self.depth}")


def crispify(params: TreeParams) -> CrispTree:
    """Reduce each gate to its strongest feature and each leaf to its best action.

    The strongest feature is the largest weight in magnitude; that weight
    rescales the threshold (phi / beta_winner) so the decision boundary along
    the selected feature is preserved, and a negative winner flips the
    comparison. A near-zero winning weight has no usable boundary and raises
    instead of emitting an arbitrary rule.
    """
    feats, thrs, flips = [], [], []
    for i in range(params.feature_weights.shape[0]):
        row = params.feature_weights[i]
        j = int(np.argmax(np.abs(row)))
        w = row[j]
        if abs(w) < MIN_CRISP_WEIGHT:
            raise DegenerateNodeError(
                f"decision node {i}: winning feature weight {w!r} is too close to zero"
            )
        feats.append(j)
        thrs.append(float(params.thresholds[i] / w))
        flips.append(bool(w < 0))
    actions = [int(np.argmin(row)) for row in params.leaf_weights]
    return CrispTree(params.depth, tuple(feats), tuple(thrs), tuple(flips), tuple(actions))


def crisp_predict(tree: CrispTree, state: np.ndarray) -> int:
    """Walk the hard tree and return the reached leaf's action index."""
    state = np.asarray(state, dtype=float)
    node = 0
    for _ in range(tree.depth):
        v = state[tree.feature_index[node]]
        t = tree.thresholds[node]
        goes_left = (v < t) if tree.flipped[node] else (v > t)
        node = 2 * node + (1 if goes_left else 2)
    leaf = node - (2 ** tree.depth - 1)
    return tree.leaf_actions[leaf]


# ---------------------------------------------------------------------------
# Rule export
# ---------------------------------------------------------------------------

TREE_FORMAT_TAG = "crisp-tree/v1"
EXPORT_FORMATS = ("text", "dot", "json")


def _condition(tree: CrispTree, node: int, feature_names) -> str:
    op = "<" if tree.flipped[node] else ">"
    return f"{feature_names[tree.feature_index[node]]} {op} {tree.thresholds[node]:.4f}"


def _text_rules(tree: CrispTree, feature_names, action_names) -> str:
    lines: list[str] = []
    first_leaf = 2 ** tree.depth - 1

    def subtree(node: int, indent: int):
        pad = "  " * indent
        left, right = 2 * node + 1, 2 * node + 2
        cond = _condition(tree, node, feature_names)
        if left >= first_leaf:
            lines.append(f"{pad}if {cond}: {action_names[tree.leaf_actions[left - first_leaf]]}")
            lines.append(f"{pad}else: {action_names[tree.leaf_actions[right - first_leaf]]}")
        else:
            lines.append(f"{pad}if {cond}:")
            subtree(left, indent + 1)
            lines.append(f"{pad}else:")
            subtree(right, indent + 1)

    subtree(0, 0)
    return "\n".join(lines) + "\n"


def _dot_rules(tree: CrispTree, feature_names, action_names) -> str:
    lines = ["digraph crisp_tree {", "  node [fontname=\"Helvetica\"];"]
    n_nodes = 2 ** tree.depth - 1
    for i in range(n_nodes):
        lines.append(f"  n{i} [shape=box, label=\"{_condition(tree, i, feature_names)}\"];")
    for k, a in enumerate(tree.leaf_actions):
        lines.append(f"  l{k} [shape=oval, label=\"{action_names[a]}\"];")
    for i in range(n_nodes):
        for child, tag in ((2 * i + 1, "true"), (2 * i + 2, "false")):
            ref = f"n{child}" if child < n_nodes else f"l{child - n_nodes}"
            lines.append(f"  n{i} -> {ref} [label=\"{tag}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def tree_to_json(tree: CrispTree, feature_names, action_names) -> str:
    doc = {
        "format": TREE_FORMAT_TAG,
        "depth": tree.depth,
        "feature_names": list(feature_names),
        "action_names": list(action_names),
        "nodes": [
            {"feature": f, "threshold": t, "flipped": fl}
            for f, t, fl in zip(tree.feature_index, tree.thresholds, tree.flipped)
        ],
        "leaf_actions": list(tree.leaf_actions),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def tree_from_json(text: str) -> CrispTree:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not a crisp-tree JSON document: {exc}") from None
    if doc.get("format") != TREE_FORMAT_TAG:
        raise ConfigError(f"unsupported tree format tag {doc.get('format')!r}")
    nodes = doc["nodes"]
    return CrispTree(
        int(doc["depth"]),
        tuple(int(n["feature"]) for n in nodes),
        tuple(float(n["threshold"]) for n in nodes),
        tuple(bool(n["flipped"]) for n in nodes),
        tuple(int(a) for a in doc["leaf_actions"]),
    )


def export_rules(tree: CrispTree, feature_names, action_names, format: str = "text") -> str:
    """Render the tree as indented if/else text, graphviz dot, or JSON."""
    n_feat = max(tree.feature_index) + 1
    n_act = max(tree.leaf_actions) + 1
    if len(feature_names) < n_feat or len(action_names) < n_act:
        raise ConfigError("not enough feature or action names for this tree")
    if format == "text":
        return _text_rules(tree, feature_names, action_names)
    if format == "dot":
        return _dot_rules(tree, feature_names, action_names)
    if format == "json":
        return tree_to_json(tree, feature_names, action_names)
    raise ConfigError(f"unknown export format {format!r}; expected one of {EXPORT_FORMATS}")
