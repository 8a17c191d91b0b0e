"""Policy distillation: fit a soft tree to a trained teacher's Q-values.

The teacher's Q-vector for each buffered state is tempered into a target
distribution with the negative-exponent softmax (low cost, high probability)
and the student tree is trained to match it under a KL loss. The tree emits
a distribution directly, so only the teacher side carries the temperature;
a sharp temperature (default 0.03) makes the targets effectively one-hot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import binio
from .dataio import RunConfig
from .ddt import (
    CrispTree,
    TreeGrads,
    TreeParams,
    crisp_predict,
    crispify,
    forward_batch,
    gradients_batch,
    init_tree,
)
from .diffmath import AdamState, adam_step, dense_forward, softmax_neg
from .errors import ConfigError, TrainingDivergedError
from .teacher import ReplayBuffer, TeacherAgent


@dataclass
class DistillationDataset:
    states: np.ndarray      # (n, n_features)
    teacher_q: np.ndarray   # (n, n_actions)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.teacher_q = np.asarray(self.teacher_q, dtype=float)
        if self.states.shape[0] != self.teacher_q.shape[0]:
            raise ConfigError("states and teacher_q must have the same record count")
        if not np.all(np.isfinite(self.teacher_q)):
            raise ConfigError("teacher_q contains non-finite entries")

    def __len__(self) -> int:
        return self.states.shape[0]


def build_dataset(teacher: TeacherAgent, buffer: ReplayBuffer,
                  checkpoint_id: str = "in-memory") -> DistillationDataset:
    """One record per buffered state: the online net's Q-vector over all actions."""
    if len(buffer) == 0:
        raise ConfigError("replay buffer is empty; train the teacher first")
    states = buffer.states[:len(buffer)].copy()
    q = np.stack([dense_forward(teacher.online_net, s) for s in states])
    return DistillationDataset(states, q, {"checkpoint": checkpoint_id, "buffer_size": len(buffer)})


@dataclass
class StudentTrainState:
    tree: TreeParams
    adam: AdamState
    temperature: float
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)


def distill_targets(teacher_q: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    return softmax_neg(np.asarray(teacher_q, dtype=float) / temperature)


def distill_loss(student: TreeParams, state: np.ndarray, teacher_q: np.ndarray,
                 temperature: float) -> tuple[float, TreeGrads]:
    """KL(tempered teacher target || student tree distribution) and its gradients."""
    target = distill_targets(teacher_q, temperature)
    loss, grads = _batch_loss_grads(student, np.atleast_2d(state), target[None, :])
    return loss, grads


def _batch_loss_grads(params: TreeParams, states: np.ndarray,
                      targets: np.ndarray) -> tuple[float, TreeGrads]:
    """Mean KL over the batch plus gradients of that mean."""
    dists, _ = forward_batch(params, states)
    n = states.shape[0]
    mask = targets > 0.0
    ratio_log = np.zeros_like(targets)
    ratio_log[mask] = np.log(targets[mask]) - np.log(dists[mask])
    loss = float((targets * ratio_log).sum() / n)
    d_out = np.where(mask, -targets / dists, 0.0) / n
    return loss, gradients_batch(params, states, d_out)


@dataclass
class StudentResult:
    tree: TreeParams
    crisp: CrispTree
    epoch_losses: list[float]
    seed: int


def _sparsity_penalty(tree: TreeParams, strength: float) -> tuple[float, np.ndarray]:
    """L1 pressure on every feature weight except each node's strongest one.

    Drives the per-node selection toward one-hot so that hardening the tree
    (argmax feature reduction) preserves the learned decision boundaries.
    Returns the penalty value and its subgradient.
    """
    magnitude = np.abs(tree.feature_weights)
    winners = magnitude.argmax(axis=1)
    rows = np.arange(magnitude.shape[0])
    value = strength * float(magnitude.sum() - magnitude[rows, winners].sum())
    grad = strength * np.sign(tree.feature_weights)
    grad[rows, winners] = 0.0
    return value, grad


def train_student(dataset: DistillationDataset, config: RunConfig, seed: int) -> StudentResult:
    """Minibatch Adam on the tree parameters against tempered teacher targets.

    The optimized objective is the mean KL plus the feature-sparsity penalty
    (set ``feature_sparsity`` to 0 for the bare distillation loss).
    """
    if len(dataset) == 0:
        raise ConfigError("distillation dataset is empty")
    rng = np.random.default_rng(seed)
    n_actions = dataset.teacher_q.shape[1]
    tree = init_tree(config.student_depth, rng, n_features=dataset.states.shape[1],
                     n_actions=n_actions)
    state = StudentTrainState(
        tree, AdamState.for_params(tree.params(), config.student_learning_rate),
        config.temperature,
    )
    targets = distill_targets(dataset.teacher_q, config.temperature)
    n = len(dataset)
    batch = min(config.student_batch_size, n)
    for epoch in range(config.student_epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch):
            idx = perm[lo:lo + batch]
            loss, grads = _batch_loss_grads(tree, dataset.states[idx], targets[idx])
            if config.feature_sparsity > 0:
                pen, pen_grad = _sparsity_penalty(tree, config.feature_sparsity)
                loss += pen
                grads.feature_weights += pen_grad
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite distillation loss (seed {seed}, epoch {epoch})"
                )
            total += loss * len(idx)
            adam_step(tree.params(), grads.params(), state.adam)
        state.epoch = epoch + 1
        state.loss_history.append(total / n)
    return StudentResult(tree, crispify(tree), state.loss_history, seed)


def agreement_rate(crisp: CrispTree, states: np.ndarray, teacher_q: np.ndarray) -> float:
    """Fraction of states where the crisp tree picks the teacher's greedy action."""
    greedy = np.argmin(teacher_q, axis=1)
    hits = sum(crisp_predict(crisp, s) == g for s, g in zip(states, greedy))
    return float(hits / len(states))


# ---------------------------------------------------------------------------
# Dataset artifacts
# ---------------------------------------------------------------------------

def save_dataset(dataset: DistillationDataset, path: str) -> None:
    meta = {"kind": "distillation-dataset/v1", "provenance": dataset.provenance}
    binio.write_blocks(path, meta, [
        ("states", dataset.states, "f8"),
        ("teacher_q", dataset.teacher_q, "f8"),
    ])


def load_dataset(path: str) -> DistillationDataset:
    meta, arrays = binio.read_blocks(path)
    if meta.get("kind") != "distillation-dataset/v1":
        raise ConfigError(f"{path!r} is not a distillation dataset")
    return DistillationDataset(arrays["states"], arrays["teacher_q"], meta["provenance"])
