"""Run orchestration: build task streams from config, execute the selected
search mode, and write all run-directory artifacts (manifest, events.log,
trials.csv, pareto.csv, jointnet.txt, checkpoint.bin)."""

from __future__ import annotations

import csv
import json
import math
import os
import time

from . import data, search
from .config import RunConfig, write_manifest
from .engine import RetentionPolicy
from .jointnet import ARCH_PRESETS, convnet_arch, mlp_arch, synth_arch
from .search import ExperimentSetup, GrowSequence, Nsga2Config, TrialResult

SPLIT_FRACTIONS = (0.6, 0.3, 0.1)

TRIALS_COLUMNS = [
    "trial_id",
    "seed",
    "deltas",
    "binds",
    "task_accuracies",
    "avg_accuracy",
    "gain_paper_literal",
    "gain_signed",
    "param_count",
    "wall_time_s",
    "status",
]


def sig6(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def build_setup(cfg: RunConfig) -> ExperimentSetup:
    run = cfg.values["run"]
    seed = run["seed"]
    count = run["task_count"]
    benchmark = run["benchmark"]
    if benchmark == "permuted":
        base = data.default_image_base(run["data_dir"] or None, limit=run["train_limit"])
        flat = data.LabeledDataset(base.flat_inputs(), base.labels, base.classes)
        datasets = data.make_permuted_tasks(flat, count, seed)
        head_mode = "shared"
        arch = mlp_arch(input_dim=flat.inputs.shape[1], classes=base.classes)
    elif benchmark == "split":
        base = data.default_image_base(run["data_dir"] or None, limit=run["train_limit"])
        imaged = data.LabeledDataset(base.inputs[:, None, :, :], base.labels, base.classes)
        datasets = data.make_split_tasks(imaged, count)
        head_mode = "per_task"
        arch = convnet_arch(in_ch=1, side=base.inputs.shape[1], classes=base.classes // count)
    elif benchmark == "synthetic":
        syn = cfg.values["synthetic"]
        angles = cfg.synthetic_angles()
        if len(angles) != count:
            raise ValueError(f"synthetic angles_deg has {len(angles)} entries for {count} tasks")
        scfg = data.SyntheticConfig(
            clusters=syn["clusters"],
            dim=syn["dim"],
            angles_deg=tuple(angles),
            samples_per_task=syn["samples_per_task"],
            noise=syn["noise"],
            seed=seed,
        )
        datasets = data.make_synthetic_tasks(scfg)
        head_mode = "per_task"
        arch = synth_arch(syn["dim"], classes=syn["clusters"])
    else:
        raise ValueError(f"unknown benchmark {benchmark!r}")
    arch_name = run["arch"]
    if arch_name != "auto":
        default = arch.name
        if arch_name != default:
            raise ValueError(f"arch {arch_name!r} does not fit benchmark {benchmark!r} (expects {default})")
    tasks = data.make_task_stream(datasets, SPLIT_FRACTIONS, seed)
    return ExperimentSetup(arch, head_mode, tasks, cfg.budget(), cfg.policy(), cfg.conflict())


def execute(cfg: RunConfig, out_dir: str) -> str:
    """Run the configured mode into out_dir; returns the directory path."""
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest_path, cfg, "running", started)
    events_path = os.path.join(out_dir, "events.log")
    events = open(events_path, "w")

    def emit(event: dict) -> None:
        events.write(json.dumps(event, sort_keys=True) + "\n")

    try:
        setup = build_setup(cfg)
        trials = _run_mode(cfg, setup, emit)
        _write_outputs(out_dir, cfg, setup, trials)
        status = "ok" if any(t.status == "ok" for t in trials) else "failed"
    except Exception:
        write_manifest(manifest_path, cfg, "failed", started, time.time())
        events.close()
        raise
    events.close()
    write_manifest(manifest_path, cfg, status, started, time.time())
    return out_dir


def _run_mode(cfg: RunConfig, setup: ExperimentSetup, emit) -> list[TrialResult]:
    run = cfg.values["run"]
    mode = run["mode"]
    seed = run["seed"]
    if mode == "single":
        binds = search.fixed_chain_binds(setup.tasks) if run["fixed_binds"] else None
        seq = search.shared_delta_sequence(setup.tasks, run["delta"], binds)
        return [search.run_grow_sequence(setup, seq, seed, trial_id=0, event_cb=emit, keep_net=True)]
    if mode == "grid":
        return search.grid_sweep(setup, cfg.delta_grid(), seed, fixed_binds=run["fixed_binds"], event_cb=emit, keep_net=True)
    if mode == "random-ablation":
        n = cfg.values["search"]["ablation_seeds"]
        return [search.random_growth_trial(setup, seed + i, trial_id=i, event_cb=emit, keep_net=True) for i in range(n)]
    if mode == "nsga2":
        s = cfg.values["search"]
        nsga_cfg = Nsga2Config(s["population"], s["budget"], s["grid_step"], shared_delta=True)

        def evaluate(genome, trial_id):
            seq = search.shared_delta_sequence(setup.tasks, genome[0])
            return search.run_grow_sequence(setup, seq, seed, trial_id=trial_id, event_cb=emit, keep_net=True)

        archive, _ = search.nsga2(evaluate, 1, nsga_cfg, seed)
        return archive
    raise ValueError(f"unknown mode {mode!r}")


def trial_row(t: TrialResult) -> list[str]:
    tasks = sorted(t.errors)
    return [
        str(t.trial_id),
        str(t.seed),
        ";".join(sig6(d) for d in t.sequence.deltas()),
        ";".join(f"{k}->{v}" for k, v in sorted(t.binds.items())),
        ";".join(f"{k}:{sig6(1.0 - t.errors[k])}" for k in tasks),
        sig6(t.avg_accuracy),
        sig6(t.gain_paper_literal),
        sig6(t.gain_signed),
        str(t.param_count),
        sig6(t.wall_time_s),
        t.status,
    ]


def write_trials_csv(path: str, trials: list[TrialResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRIALS_COLUMNS)
        for t in trials:
            w.writerow(trial_row(t))


def _write_outputs(out_dir: str, cfg: RunConfig, setup: ExperimentSetup, trials: list[TrialResult]) -> None:
    write_trials_csv(os.path.join(out_dir, "trials.csv"), trials)
    ok = [t for t in trials if t.status == "ok"]
    if cfg.values["run"]["mode"] in ("grid", "nsga2", "random-ablation") and ok:
        front = search.pareto_front(trials)
        write_trials_csv(os.path.join(out_dir, "pareto.csv"), front)
    if ok:
        best = max(ok, key=lambda t: (t.gain_signed, -t.param_count))
        with open(os.path.join(out_dir, "jointnet.txt"), "w") as f:
            f.write(best.tabular)
        if best.net is not None:
            best.net.save(os.path.join(out_dir, "checkpoint.bin"))
    series = {str(t.trial_id): t.avg_accuracy_series for t in trials}
    with open(os.path.join(out_dir, "series.json"), "w") as f:
        json.dump(series, f, indent=2, sort_keys=True)
        f.write("\n")
