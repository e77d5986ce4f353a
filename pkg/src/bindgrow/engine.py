"""Incremental bind-grow training loop.

Per arriving task: train an independent network (baseline and conflict
probe), pick the least-conflicting trained task to bind to, expand the
nucleus layers, train the new task inside the joint network under a
weight-retention policy, then evaluate every task.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conflict as cf
from . import nn
from .data import TaskData
from .jointnet import Architecture, JointNet


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class RetentionPolicy:
    """Learning-rate treatment of parameters owned by earlier tasks."""

    kind: str  # freeze | slow_lr | fine_tune
    factor: float = 0.1

    def __post_init__(self):
        if self.kind not in ("freeze", "slow_lr", "fine_tune"):
            raise ValueError(f"unknown retention policy {self.kind!r}")
        if self.kind == "slow_lr" and not 0.0 < self.factor < 1.0:
            raise ValueError(f"slow_lr factor {self.factor} outside (0, 1)")

    def scale(self) -> float:
        return {"freeze": 0.0, "slow_lr": self.factor, "fine_tune": 1.0}[self.kind]


@dataclass(frozen=True)
class TrainBudget:
    """SGD budget; the learning rate decays linearly from base_lr to
    base_lr * final_lr_frac over the whole run."""

    epochs: int = 3
    batch_size: int = 16
    base_lr: float = 0.15
    seed: int = 0
    final_lr_frac: float = 0.05

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.base_lr <= 0:
            raise ValueError("budget fields must be positive")
        if not 0.0 <= self.final_lr_frac <= 1.0:
            raise ValueError(f"final_lr_frac {self.final_lr_frac} outside [0, 1]")

    def lr_at(self, step: int, total_steps: int) -> float:
        if total_steps <= 1:
            return self.base_lr
        frac = step / (total_steps - 1)
        return self.base_lr * (1.0 - (1.0 - self.final_lr_frac) * frac)


@dataclass
class EvalRecord:
    errors: dict[int, float]  # task -> validation error in [0, 1]
    baselines: dict[int, float]  # task -> independent-net validation error

    def accuracy(self, t: int) -> float:
        return 1.0 - self.errors[t]

    def avg_accuracy(self) -> float:
        return 1.0 - float(np.mean(list(self.errors.values())))


@dataclass
class ConflictConfig:
    norm: str = "l2"
    sample_cap: int = cf.DEFAULT_SAMPLE_CAP
    reference: str = "joint"  # joint | independent


@dataclass
class StepOutcome:
    task: int
    bound_to: int
    candidate_scores: dict[int, float]
    nucleus_positions: list[int]
    record: EvalRecord
    profiles: list = field(default_factory=list)


def _set_lr_scales(net: JointNet, t: int, policy: RetentionPolicy) -> None:
    shared_scale = policy.scale()
    ids = list(net.task_nets[t]) + [net.heads[t]]
    for nid in ids:
        node = net.nodes[nid]
        node.params.lr_scale = 1.0 if node.creator_task == t else shared_scale


def train_task_in_joint(net: JointNet, t: int, task: TaskData, policy: RetentionPolicy, budget: TrainBudget) -> None:
    """SGD over t's task-net only; shared groups scaled per policy."""
    _set_lr_scales(net, t, policy)
    head_kind = net.arch.head_kind()
    x, y = task.train.inputs, task.train.labels
    rng = np.random.default_rng([budget.seed, 31, t])
    steps_per_epoch = -(-len(x) // budget.batch_size)
    total_steps = budget.epochs * steps_per_epoch
    step = 0
    for epoch in range(budget.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), budget.batch_size):
            sel = order[start : start + budget.batch_size]
            probs, (caches, head_id, hcache) = net.forward_task_with_cache(t, x[sel])
            n = len(sel)
            nll = -np.log(np.maximum(probs[np.arange(n), y[sel]], 1e-300))
            loss = float(nll.mean())
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss training task {t} (epoch {epoch})")
            head = net.nodes[head_id]
            g, head_grads = head_kind.loss_backward(head.params, hcache, y[sel])
            updates = [(head.params, head_grads)]
            for pos in range(len(caches) - 1, -1, -1):
                nid, cache, _ = caches[pos]
                node = net.nodes[nid]
                g, grads = nn.backward_block(net.arch.blocks[pos], node.params, cache, g)
                if grads:
                    updates.append((node.params, grads))
            nn.sgd_step(updates, budget.lr_at(step, total_steps))
            step += 1


def evaluate_task(net: JointNet, t: int, dataset) -> float:
    """Top-1 error on the given dataset."""
    probs = net.forward_task(t, dataset.inputs)
    return float((probs.argmax(axis=1) != dataset.labels).mean())


def evaluate_all(net: JointNet, tasks: dict[int, TaskData], baselines: dict[int, float]) -> EvalRecord:
    errors = {t: evaluate_task(net, t, tasks[t].val) for t in net.tasks() if t in tasks}
    return EvalRecord(errors, dict(baselines))


def train_independent(task: TaskData, arch: Architecture, budget: TrainBudget) -> tuple[JointNet, float]:
    """Standalone net for one task: RSA probe and baseline error source."""
    net = JointNet.create(arch, task.task_id, head_mode="per_task", seed=budget.seed)
    train_task_in_joint(net, task.task_id, task, RetentionPolicy("fine_tune"), budget)
    return net, evaluate_task(net, task.task_id, task.val)


def bind_grow_step(
    net: JointNet,
    t: int,
    candidates: list[int],
    delta: float,
    policy: RetentionPolicy,
    budget: TrainBudget,
    ind_net: JointNet,
    tasks: dict[int, TaskData],
    baselines: dict[int, float],
    conflict_cfg: ConflictConfig | None = None,
    ind_nets: dict[int, JointNet] | None = None,
    bind_override: int | None = None,
    positions_override: list[int] | None = None,
) -> StepOutcome:
    """One step of the incremental algorithm for arriving task t.

    bind_override pins the bind target (fixed-binding mode);
    positions_override pins the expanded layer set (random-growth ablation);
    either skips the corresponding conflict-model decision.
    """
    if not candidates:
        raise ValueError("empty bind-candidate set")
    cfg = conflict_cfg or ConflictConfig()
    samples = cf.subsample(tasks[t].val.inputs, cfg.sample_cap, budget.seed + 7 * t)

    profiles = []
    scores: dict[int, float] = {}
    need_scores = bind_override is None or positions_override is None
    if need_scores:
        acts_new = cf.collect_activations(ind_net, t, samples)
        probe_set = candidates if bind_override is None else [bind_override]
        for b in probe_set:
            if cfg.reference == "independent" and ind_nets is not None:
                acts_old = cf.collect_activations(ind_nets[b], b, samples)
            else:
                acts_old = cf.collect_activations(net, b, samples)
            p = cf.layer_conflicts(acts_new, acts_old, t, b, norm=cfg.norm)
            profiles.append(p)
            scores[b] = p.task_score

    if bind_override is not None:
        b = bind_override
    else:
        b = min(candidates, key=lambda c: (scores[c], c))

    if positions_override is not None:
        positions = sorted(positions_override)
    else:
        profile = next(p for p in profiles if p.b == b)
        positions = cf.nucleus(profile.distribution, delta)

    net.bind_task(t, b)
    if positions:
        net.expand_layers(t, positions)
    train_task_in_joint(net, t, tasks[t], policy, budget)
    record = evaluate_all(net, tasks, baselines)
    return StepOutcome(t, b, scores, positions, record, profiles)


BASELINE_FLOOR = 1e-4


def avg_gain(record: EvalRecord) -> float:
    """Mean relative error improvement over baselines; positive = better."""
    terms = []
    for t, err in record.errors.items():
        if t not in record.baselines:
            raise ValueError(f"missing baseline for task {t}")
        base = record.baselines[t]
        terms.append((base - err) / max(base, BASELINE_FLOOR))
    return float(np.mean(terms))


def avg_gain_paper_literal(record: EvalRecord) -> float:
    """Summed relative error change, negative = better (literal form)."""
    total = 0.0
    for t, err in record.errors.items():
        base = record.baselines[t]
        total += (err - base) / max(base, BASELINE_FLOOR)
    return float(total)
