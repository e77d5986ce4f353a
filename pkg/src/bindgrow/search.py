"""Global search over grow sequences.

A grow sequence fixes, per arriving task, the bind target (or lets the
conflict model choose) and the grow coefficient. Trials map sequences to
the two competing objectives: average multi-task gain (maximized) and
parameter count (minimized). Includes delta grid sweeps, the random-growth
ablation and a small NSGA-II over the discrete coefficient grid.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .data import TaskData
from .engine import ConflictConfig, RetentionPolicy, TrainBudget, TrainingDiverged
from .jointnet import Architecture, JointNet


@dataclass(frozen=True)
class GrowStep:
    task: int
    bind: int | None  # None = choose by conflict model
    delta: float


@dataclass(frozen=True)
class GrowSequence:
    steps: tuple
    shared_delta: bool = True

    def deltas(self) -> list[float]:
        return [s.delta for s in self.steps]


@dataclass
class TrialResult:
    trial_id: int
    seed: int
    sequence: GrowSequence
    status: str  # ok | failed
    errors: dict[int, float] = field(default_factory=dict)
    baselines: dict[int, float] = field(default_factory=dict)
    binds: dict[int, int] = field(default_factory=dict)
    gain_signed: float = float("nan")
    gain_paper_literal: float = float("nan")
    param_count: int = 0
    wall_time_s: float = 0.0
    tabular: str = ""
    avg_accuracy_series: list[float] = field(default_factory=list)
    net: JointNet | None = None

    @property
    def avg_accuracy(self) -> float:
        if not self.errors:
            return float("nan")
        return 1.0 - float(np.mean(list(self.errors.values())))

    def objectives(self) -> tuple[float, float]:
        return (-self.gain_signed, float(self.param_count))


@dataclass
class ExperimentSetup:
    """Read-only per-run context shared by all trials."""

    arch: Architecture
    head_mode: str
    tasks: list[TaskData]
    budget: TrainBudget
    policy: RetentionPolicy
    conflict: ConflictConfig = field(default_factory=ConflictConfig)

    def task_map(self) -> dict[int, TaskData]:
        return {t.task_id: t for t in self.tasks}


def shared_delta_sequence(tasks: list[TaskData], delta: float, binds: list[int | None] | None = None) -> GrowSequence:
    steps = []
    for i, task in enumerate(tasks):
        bind = binds[i] if binds is not None else None
        steps.append(GrowStep(task.task_id, bind, delta))
    return GrowSequence(tuple(steps), shared_delta=True)


def fixed_chain_binds(tasks: list[TaskData]) -> list[int | None]:
    """Deterministic bind targets: each task binds to its predecessor."""
    return [None] + [tasks[i - 1].task_id for i in range(1, len(tasks))]


def run_grow_sequence(
    setup: ExperimentSetup,
    sequence: GrowSequence,
    seed: int,
    trial_id: int = 0,
    event_cb=None,
    positions_overrides: dict[int, list[int]] | None = None,
    keep_net: bool = False,
) -> TrialResult:
    """Execute one full incremental trial, deterministically from (pi, seed)."""
    start = time.perf_counter()
    result = TrialResult(trial_id, seed, sequence, status="ok")
    budget = TrainBudget(setup.budget.epochs, setup.budget.batch_size, setup.budget.base_lr, seed, setup.budget.final_lr_frac)
    tasks = setup.task_map()
    try:
        net: JointNet | None = None
        ind_nets: dict[int, JointNet] = {}
        baselines: dict[int, float] = {}
        for step in sequence.steps:
            t = step.task
            ind_net, base_err = engine.train_independent(tasks[t], setup.arch, budget)
            ind_nets[t] = ind_net
            baselines[t] = base_err
            if net is None:
                net = JointNet.create(setup.arch, t, head_mode=setup.head_mode, seed=seed)
                engine.train_task_in_joint(net, t, tasks[t], setup.policy, budget)
                record = engine.evaluate_all(net, tasks, baselines)
                outcome = engine.StepOutcome(t, t, {}, [], record)
            else:
                candidates = net.tasks()
                override = positions_overrides.get(t) if positions_overrides else None
                outcome = engine.bind_grow_step(
                    net,
                    t,
                    candidates,
                    step.delta,
                    setup.policy,
                    budget,
                    ind_net,
                    tasks,
                    baselines,
                    conflict_cfg=setup.conflict,
                    ind_nets=ind_nets,
                    bind_override=step.bind,
                    positions_override=override,
                )
                result.binds[t] = outcome.bound_to
            net.check_invariants()
            result.errors = dict(outcome.record.errors)
            result.baselines = dict(outcome.record.baselines)
            result.avg_accuracy_series.append(outcome.record.avg_accuracy())
            if event_cb:
                event_cb(
                    {
                        "event": "step",
                        "trial_id": trial_id,
                        "task": t,
                        "bound_to": outcome.bound_to,
                        "candidate_scores": {str(k): v for k, v in outcome.candidate_scores.items()},
                        "nucleus": outcome.nucleus_positions,
                        "errors": {str(k): v for k, v in outcome.record.errors.items()},
                    }
                )
        record = engine.EvalRecord(result.errors, result.baselines)
        result.gain_signed = engine.avg_gain(record)
        result.gain_paper_literal = engine.avg_gain_paper_literal(record)
        result.param_count = net.total_params()
        result.tabular = net.tabular_repr()
        if keep_net:
            result.net = net
    except TrainingDiverged as exc:
        result.status = "failed"
        if event_cb:
            event_cb({"event": "trial_failed", "trial_id": trial_id, "reason": str(exc)})
    result.wall_time_s = time.perf_counter() - start
    return result


# ---------------------------------------------------------------------------
# Sweeps and ablations


def grid_sweep(setup: ExperimentSetup, deltas, seed: int, fixed_binds: bool = True, event_cb=None, keep_net: bool = False) -> list[TrialResult]:
    """One trial per delta, identical seeds for paired comparison.

    With fixed_binds the bind targets are pinned to the task chain and the
    conflict model is referenced against independent nets, so layer
    orderings (and hence nuclei) are identical across trials.
    """
    if not len(deltas):
        raise ValueError("empty delta grid")
    binds = fixed_chain_binds(setup.tasks) if fixed_binds else None
    sweep_setup = setup
    if fixed_binds:
        sweep_setup = ExperimentSetup(
            setup.arch,
            setup.head_mode,
            setup.tasks,
            setup.budget,
            setup.policy,
            ConflictConfig(setup.conflict.norm, setup.conflict.sample_cap, reference="independent"),
        )
    trials = []
    for i, delta in enumerate(deltas):
        seq = shared_delta_sequence(setup.tasks, float(delta), binds)
        trials.append(run_grow_sequence(sweep_setup, seq, seed, trial_id=i, event_cb=event_cb, keep_net=keep_net))
    return trials


def random_growth_choices(n_tasks: int, depth: int, seed: int) -> tuple[list[int | None], dict[int, list[int]]]:
    """Random bind target and uniformly random expansion subset per task."""
    rng = np.random.default_rng([seed, 8647])
    binds: list[int | None] = [None]
    positions: dict[int, list[int]] = {}
    for t in range(1, n_tasks):
        binds.append(int(rng.integers(0, t)))
        count = int(rng.integers(0, depth + 1))
        subset = sorted(rng.choice(depth, size=count, replace=False).tolist())
        positions[t] = [int(p) for p in subset]
    return binds, positions


def random_growth_trial(setup: ExperimentSetup, seed: int, trial_id: int = 0, event_cb=None, keep_net: bool = False) -> TrialResult:
    task_ids = [t.task_id for t in setup.tasks]
    binds, positions = random_growth_choices(len(task_ids), setup.arch.depth, seed)
    seq = shared_delta_sequence(setup.tasks, 0.0, binds)
    return run_grow_sequence(
        setup, seq, seed, trial_id=trial_id, event_cb=event_cb, positions_overrides=positions, keep_net=keep_net
    )


# ---------------------------------------------------------------------------
# Multi-objective machinery


def dominates(p, q) -> bool:
    """p dominates q iff p <= q componentwise and p < q somewhere."""
    return all(a <= b for a, b in zip(p, q)) and any(a < b for a, b in zip(p, q))


def non_dominated_sort(points) -> list[list[int]]:
    n = len(points)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    fronts: list[list[int]] = [[]]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if dominates(points[i], points[j]):
                dominated_by[i].append(j)
            elif dominates(points[j], points[i]):
                counts[i] += 1
        if counts[i] == 0:
            fronts[0].append(i)
    k = 0
    while fronts[k]:
        nxt = []
        for i in fronts[k]:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        fronts.append(nxt)
        k += 1
    fronts.pop()
    return fronts


def crowding_distance(points) -> list[float]:
    n = len(points)
    if n == 0:
        raise ValueError("empty front")
    dist = [0.0] * n
    m = len(points[0])
    for obj in range(m):
        order = sorted(range(n), key=lambda i: points[i][obj])
        dist[order[0]] = dist[order[-1]] = float("inf")
        lo, hi = points[order[0]][obj], points[order[-1]][obj]
        span = hi - lo
        if span == 0:
            continue
        for k in range(1, n - 1):
            i = order[k]
            if math.isinf(dist[i]):
                continue
            dist[i] += (points[order[k + 1]][obj] - points[order[k - 1]][obj]) / span
    return dist


def pareto_front_indices(points) -> list[int]:
    if not points:
        return []
    return non_dominated_sort(points)[0]


def pareto_front(trials: list[TrialResult]) -> list[TrialResult]:
    ok = [t for t in trials if t.status == "ok"]
    if not ok:
        raise ValueError("no successful trials")
    front = pareto_front_indices([t.objectives() for t in ok])
    return [ok[i] for i in sorted(front)]


# ---------------------------------------------------------------------------
# NSGA-II over the discrete grow-coefficient grid


@dataclass
class Nsga2Config:
    population: int = 8
    budget: int = 20
    grid_step: float = 0.05
    shared_delta: bool = True


def delta_grid(step: float) -> list[float]:
    n = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(n + 1)]


def nsga2(evaluate, genome_len: int, config: Nsga2Config, seed: int):
    """Archive-keeping NSGA-II over delta genomes.

    evaluate(genome: tuple, trial_id: int) -> object with .objectives().
    Returns (all evaluated results in evaluation order, front-0 results).
    """
    if config.budget < config.population:
        raise ValueError(f"budget {config.budget} < population {config.population}")
    grid = delta_grid(config.grid_step)
    rng = np.random.default_rng([seed, 9157])

    def random_genome():
        return tuple(grid[rng.integers(0, len(grid))] for _ in range(genome_len))

    archive = []
    population = []  # (genome, result)
    while len(archive) < config.budget:
        remaining = config.budget - len(archive)
        if not population:
            genomes = [random_genome() for _ in range(min(config.population, remaining))]
        else:
            genomes = _make_offspring(population, min(config.population, remaining), rng, grid, genome_len)
        evaluated = [(g, evaluate(g, len(archive) + i)) for i, g in enumerate(genomes)]
        archive.extend(r for _, r in evaluated)
        population = _select(population + evaluated, config.population)
    ok = [r for r in archive if getattr(r, "status", "ok") == "ok"]
    front = [ok[i] for i in sorted(pareto_front_indices([r.objectives() for r in ok]))] if ok else []
    return archive, front


def _select(pool, size):
    points = [r.objectives() for _, r in pool]
    fronts = non_dominated_sort(points)
    chosen = []
    for front in fronts:
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
        else:
            dist = crowding_distance([points[i] for i in front])
            ranked = sorted(range(len(front)), key=lambda k: -dist[k])
            chosen.extend(front[k] for k in ranked[: size - len(chosen)])
            break
    return [pool[i] for i in chosen]


def _make_offspring(population, count, rng, grid, genome_len):
    points = [r.objectives() for _, r in population]
    fronts = non_dominated_sort(points)
    rank = {}
    for fi, front in enumerate(fronts):
        for i in front:
            rank[i] = fi
    crowd = [0.0] * len(population)
    for front in fronts:
        d = crowding_distance([points[i] for i in front])
        for k, i in enumerate(front):
            crowd[i] = d[k]

    def tournament():
        i, j = rng.integers(0, len(population)), rng.integers(0, len(population))
        if (rank[i], -crowd[i]) <= (rank[j], -crowd[j]):
            return population[i][0]
        return population[j][0]

    offspring = []
    for _ in range(count):
        a, b = tournament(), tournament()
        child = tuple(a[k] if rng.random() < 0.5 else b[k] for k in range(genome_len))
        child = tuple(
            grid[rng.integers(0, len(grid))] if rng.random() < 1.0 / genome_len else gene
            for gene in child
        )
        offspring.append(child)
    return offspring


def mock_evaluate_factory(gain_fn, params_fn, seed: int = 0):
    """Trial evaluator over mock objectives for search-machinery testing."""

    def evaluate(genome, trial_id):
        delta = float(np.mean(genome))
        r = TrialResult(trial_id, seed, GrowSequence(tuple(GrowStep(i, None, g) for i, g in enumerate(genome))), "ok")
        r.gain_signed = float(gain_fn(delta))
        r.gain_paper_literal = -r.gain_signed
        r.param_count = int(round(1e6 * params_fn(delta)))
        r.errors = {0: 0.0}
        r.baselines = {0: 1.0}
        return r

    return evaluate
