"""Acceptance suite: ten end-to-end criteria, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s`. The later criteria train
many small networks and take several minutes combined.
"""

import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from bindgrow import conflict as cf
from bindgrow import config, data, engine, nn, runner, search
from bindgrow.engine import ConflictConfig, RetentionPolicy, TrainBudget
from bindgrow.jointnet import JointNet, convnet_arch, mlp_arch, synth_arch


def verdict(num, name, ok, detail, elapsed, limit):
    ok = ok and elapsed < limit
    print(f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} — {detail} [{elapsed:.1f}s / {limit:.0f}s]")
    assert ok, f"criterion {num} ({name}): {detail}"


# ---------------------------------------------------------------------------
# shared streams


def permuted_stream(seed):
    base = data.desk_digits(target_size=20000, seed=0)
    flat = data.LabeledDataset(base.flat_inputs(), base.labels, base.classes)
    datasets = data.make_permuted_tasks(flat, 3, seed)
    return data.make_task_stream(datasets, (0.6, 0.3, 0.1), seed)


def split_stream():
    base = data.desk_digits(target_size=20000, seed=0)
    imaged = data.LabeledDataset(base.inputs[:, None, :, :], base.labels, base.classes)
    datasets = data.make_split_tasks(imaged, 5)
    return data.make_task_stream(datasets, (0.6, 0.3, 0.1), seed=0)


PERMUTED_ARCH = mlp_arch(input_dim=196, classes=10)


def permuted_setup(seed, policy, head_mode="shared", **budget_kw):
    return search.ExperimentSetup(
        PERMUTED_ARCH, head_mode, permuted_stream(seed), TrainBudget(seed=seed, **budget_kw), policy, ConflictConfig()
    )


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    kinds = [
        nn.Dense(3, 2),
        nn.Dense(5, 4),
        nn.Conv2D(2, 3, kernel=2, stride=1),
        nn.Conv2D(1, 2, kernel=3, stride=2),
        nn.ReLU(),
        nn.MaxPool2D(2),
        nn.Flatten(),
        nn.SoftmaxCrossEntropyHead(4, 3),
    ]
    rng = np.random.default_rng(0)
    worst, instances = 0.0, 0
    for kind in kinds:
        for _ in range(3):
            worst = max(worst, nn.finite_diff_check(kind, rng))
            instances += 1
    verdict(
        1,
        "gradient correctness",
        worst < 1e-4 and instances >= 20,
        f"max rel err {worst:.2e} over {instances} instances",
        time.perf_counter() - start,
        10,
    )


def test_criterion_2_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    sort_ok = True
    for _ in range(100):
        pts = [tuple(v) for v in rng.random((50, 2))]
        fronts = search.non_dominated_sort(pts)
        remaining = list(range(50))
        for front in fronts:
            brute = [
                i
                for i in remaining
                if not any(search.dominates(pts[j], pts[i]) for j in remaining if j != i)
            ]
            sort_ok &= sorted(front) == sorted(brute)
            remaining = [i for i in remaining if i not in brute]
        sort_ok &= not remaining

    rsa_ok = True
    for _ in range(100):
        acts = rng.standard_normal((5, 6))
        m = cf.rdm(acts)
        for i in range(5):
            for j in range(5):
                direct = 0.0 if i == j else 1.0 - np.corrcoef(acts[i], acts[j])[0, 1]
                rsa_ok &= abs(m[i, j] - direct) < 1e-12
        u, v = rng.standard_normal(12), rng.standard_normal(12)
        rsa_ok &= abs(cf.spearman(u, v) - spearmanr(u, v).statistic) < 1e-12
    verdict(
        2,
        "oracle equivalence",
        sort_ok and rsa_ok,
        f"sort oracle {'ok' if sort_ok else 'MISMATCH'}, RDM/Spearman {'ok' if rsa_ok else 'MISMATCH'}",
        time.perf_counter() - start,
        30,
    )


def test_criterion_3_nucleus_laws():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    ok = True
    for _ in range(1000):
        L = int(rng.integers(1, 10))
        dist = rng.uniform(1e-3, 1.0, size=L)
        dist /= dist.sum()
        d1, d2 = sorted(rng.uniform(0.0, 1.0, size=2))
        n1, n2 = cf.nucleus(dist, d1), cf.nucleus(dist, d2)
        ok &= set(n1) <= set(n2)  # monotone in delta
        for n, d in ((n1, d1), (n2, d2)):
            if d > 0:
                ok &= dist[n].sum() >= d - 1e-12  # qualifies
                if len(n) > 1:  # minimal prefix
                    ok &= dist[n].sum() - min(dist[i] for i in n) < d
        ok &= cf.nucleus(dist, 0.0) == []
        ok &= cf.nucleus(dist, 1.0) == list(range(L))
    verdict(3, "nucleus laws", ok, "monotone, minimal-prefix, boundary cases", time.perf_counter() - start, 5)


def test_criterion_4_similarity_driven_binding():
    start = time.perf_counter()
    hits = 0
    for seed in range(10):
        cfg = data.SyntheticConfig(angles_deg=(0.0, 90.0, 0.0), seed=seed)
        stream = data.make_task_stream(data.make_synthetic_tasks(cfg), (0.6, 0.2, 0.2), seed)
        setup = search.ExperimentSetup(
            synth_arch(cfg.dim, classes=cfg.clusters),
            "per_task",
            stream,
            TrainBudget(seed=seed),
            RetentionPolicy("freeze"),
            ConflictConfig(),
        )
        trial = search.run_grow_sequence(setup, search.shared_delta_sequence(stream, 1.0), seed)
        hits += trial.binds.get(2) == 0
    verdict(4, "similarity-driven binding", hits >= 9, f"twin bound in {hits}/10 seeds", time.perf_counter() - start, 120)


def test_criterion_5_full_expansion_fidelity():
    start = time.perf_counter()
    worst_dev, ratio_ok = 0.0, True
    for seed in range(5):
        # per-task heads: at full expansion the only difference from the
        # independent baseline is the warm-started trunk initialization.
        # The higher learning rate converges both runs close enough to the
        # common optimum that the warm start stops mattering.
        setup = permuted_setup(seed, RetentionPolicy("freeze"), head_mode="per_task", base_lr=0.25)
        binds = search.fixed_chain_binds(setup.tasks)
        trial = search.run_grow_sequence(
            setup, search.shared_delta_sequence(setup.tasks, 1.0, binds), seed, keep_net=True
        )
        for t, err in trial.errors.items():
            worst_dev = max(worst_dev, abs(err - trial.baselines[t]))
        single = JointNet.create(PERMUTED_ARCH, 0, head_mode="per_task", seed=seed).total_trunk_params()
        ratio_ok &= trial.net.total_trunk_params() == 3 * single
    verdict(
        5,
        "full-expansion fidelity",
        worst_dev <= 0.02 and ratio_ok,
        f"max accuracy deviation {100 * worst_dev:.2f} pts, trunk params {'= 3x single' if ratio_ok else 'WRONG'}",
        time.perf_counter() - start,
        300,
    )


def test_criterion_6_sharing_forgetting_direction():
    start = time.perf_counter()
    means = {}
    for name, policy in (("fine_tune", RetentionPolicy("fine_tune")), ("slow_lr", RetentionPolicy("slow_lr", 0.1))):
        accs = []
        for seed in range(5):
            setup = permuted_setup(seed, policy)
            binds = search.fixed_chain_binds(setup.tasks)
            trial = search.run_grow_sequence(setup, search.shared_delta_sequence(setup.tasks, 0.0, binds), seed)
            accs.append(trial.avg_accuracy)
        means[name] = float(np.mean(accs))

    # freeze leaves every tensor shared with task 0 byte-identical
    setup = permuted_setup(0, RetentionPolicy("freeze"))
    tasks = setup.task_map()
    budget = TrainBudget(seed=0)
    net = JointNet.create(PERMUTED_ARCH, 0, head_mode="shared", seed=0)
    engine.train_task_in_joint(net, 0, tasks[0], RetentionPolicy("freeze"), budget)
    snapshot = {
        nid: {k: v.tobytes() for k, v in net.nodes[nid].params.tensors.items()}
        for nid in net.task_nets[0] + [net.heads[0]]
    }
    for t in (1, 2):
        net.bind_task(t, t - 1)
        engine.train_task_in_joint(net, t, tasks[t], RetentionPolicy("freeze"), budget)
    frozen_ok = all(
        net.nodes[nid].params.tensors[k].tobytes() == b
        for nid, tensors in snapshot.items()
        for k, b in tensors.items()
    )
    ordered = means["fine_tune"] < means["slow_lr"]
    verdict(
        6,
        "sharing/forgetting direction",
        ordered and frozen_ok,
        f"fine_tune {means['fine_tune']:.3f} < slow_lr {means['slow_lr']:.3f}: {ordered}; "
        f"freeze byte-identical: {frozen_ok}",
        time.perf_counter() - start,
        900,
    )


def test_criterion_7_rsa_vs_random_growth():
    start = time.perf_counter()
    stream = split_stream()
    arch = convnet_arch(classes=2)
    rsa, rnd = [], []
    for seed in range(5):
        setup = search.ExperimentSetup(
            arch, "per_task", stream, TrainBudget(seed=seed), RetentionPolicy("freeze"), ConflictConfig()
        )
        trial = search.run_grow_sequence(setup, search.shared_delta_sequence(stream, 0.95), seed)
        rsa.append(trial.gain_signed)
        rnd.append(search.random_growth_trial(setup, seed).gain_signed)
    m_rsa, m_rnd = float(np.mean(rsa)), float(np.mean(rnd))
    verdict(
        7,
        "RSA vs random growth",
        m_rsa >= m_rnd,
        f"mean gain RSA {m_rsa:+.3f} vs random {m_rnd:+.3f}",
        time.perf_counter() - start,
        1200,
    )


def test_criterion_8_size_performance_trade_off():
    start = time.perf_counter()
    deltas = [round(0.1 * i, 10) for i in range(11)]
    monotone = True
    acc0, acc1 = [], []
    for seed in range(5):
        setup = permuted_setup(seed, RetentionPolicy("slow_lr", 0.1))
        trials = search.grid_sweep(setup, deltas, seed, fixed_binds=True)
        params = [t.param_count for t in trials]
        monotone &= params == sorted(params)
        acc0.append(trials[0].avg_accuracy)
        acc1.append(trials[-1].avg_accuracy)
    gap = float(np.mean(acc1)) - float(np.mean(acc0))
    verdict(
        8,
        "size-performance trade-off",
        monotone and gap >= 0.05,
        f"param_count monotone: {monotone}; delta=1 beats delta=0 by {100 * gap:.1f} pts",
        time.perf_counter() - start,
        1800,
    )


def test_criterion_9_nsga2_sanity():
    start = time.perf_counter()
    cfg = search.Nsga2Config(population=8, budget=20, grid_step=0.05)

    # perfectly correlated objectives collapse the front to the single best point
    archive, front = search.nsga2(search.mock_evaluate_factory(lambda d: -d, lambda d: d), 1, cfg, seed=0)
    best = min(r.objectives() for r in archive)
    degenerate_ok = {r.objectives() for r in front} == {best} and len(archive) == 20

    # a genuine trade-off: the front must equal the brute-force front of the archive
    archive, front = search.nsga2(search.mock_evaluate_factory(lambda d: d, lambda d: d * d), 1, cfg, seed=1)
    pts = [r.objectives() for r in archive]
    oracle = {
        pts[i]
        for i in range(len(pts))
        if not any(search.dominates(pts[j], pts[i]) for j in range(len(pts)) if j != i)
    }
    grid = set(search.delta_grid(0.05))
    trade_ok = (
        {r.objectives() for r in front} == oracle
        and len(archive) == 20
        and all(g in grid for r in archive for g in r.sequence.deltas())
    )
    verdict(
        9,
        "NSGA-II sanity",
        degenerate_ok and trade_ok,
        f"degenerate front ok: {degenerate_ok}; trade-off front == oracle: {trade_ok}; 20 trials on 0.05 grid",
        time.perf_counter() - start,
        5,
    )


def test_criterion_10_determinism(tmp_path):
    start = time.perf_counter()
    ini = tmp_path / "det.ini"
    ini.write_text(
        "[run]\nbenchmark = synthetic\ntask_count = 2\nmode = grid\n"
        "delta_grid = 0,0.5,1.0\nseed = 3\n[budget]\nepochs = 1\n"
        "[synthetic]\nangles_deg = 0,90\nsamples_per_task = 400\n"
    )
    cfg = config.load_config(str(ini))
    stripped = []
    wall = runner.TRIALS_COLUMNS.index("wall_time_s")
    for name in ("a", "b"):
        out = str(tmp_path / name)
        runner.execute(cfg, out)
        lines = open(f"{out}/trials.csv").read().splitlines()
        stripped.append([",".join(c for i, c in enumerate(l.split(",")) if i != wall) for l in lines])
    identical = stripped[0] == stripped[1]
    verdict(
        10,
        "determinism",
        identical,
        "trials.csv byte-identical modulo wall-time column" if identical else "runs DIFFER",
        time.perf_counter() - start,
        300,
    )
