"""Hierarchical conflict model between a new task and trained tasks.

Layer-wise conflict is estimated by representational similarity analysis:
for each trunk position we build a representational dissimilarity matrix
(1 - Pearson across sample pairs) for both networks and rank-correlate
their upper triangles. High representational agreement means low conflict.
The per-layer scores are normalized into a distribution over layers, whose
nucleus under a grow coefficient picks the layers to expand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

SCORE_EPS = 1e-6
DEFAULT_SAMPLE_CAP = 256


class ConflictError(ValueError):
    pass


@dataclass
class ConflictProfile:
    t: int
    b: int
    raw: np.ndarray  # rho per trunk position, in [-1, 1]
    scores: np.ndarray  # in (0, 1)
    distribution: np.ndarray  # sums to 1
    task_score: float
    warnings: int = 0


def rdm(activations: np.ndarray) -> np.ndarray:
    """N x N dissimilarity matrix: 1 - Pearson between sample rows.

    Zero-variance rows have undefined correlation; their off-diagonal
    entries are set to 1 (maximal uninformativeness).
    """
    acts = np.asarray(activations, dtype=np.float64)
    n = acts.shape[0]
    if n < 3:
        raise ConflictError(f"RDM needs at least 3 samples, got {n}")
    centered = acts - acts.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=1))
    bad = norms == 0.0
    safe = np.where(bad, 1.0, norms)
    corr = (centered @ centered.T) / np.outer(safe, safe)
    out = 1.0 - corr
    out[bad, :] = 1.0
    out[:, bad] = 1.0
    np.fill_diagonal(out, 0.0)
    return out


def zero_variance_rows(activations: np.ndarray) -> int:
    centered = activations - activations.mean(axis=1, keepdims=True)
    return int((np.abs(centered).max(axis=1) == 0.0).sum())


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(u: np.ndarray, v: np.ndarray) -> float | None:
    """Spearman rank correlation with average ranks for ties.

    Returns None when either vector is constant (undefined).
    """
    ru, rv = _average_ranks(u), _average_ranks(v)
    su, sv = ru - ru.mean(), rv - rv.mean()
    du, dv = float(np.sqrt((su**2).sum())), float(np.sqrt((sv**2).sum()))
    if du == 0.0 or dv == 0.0:
        return None
    return float((su * sv).sum() / (du * dv))


def rsa_dissimilarity(rdm_a: np.ndarray, rdm_b: np.ndarray) -> tuple[float, bool]:
    """rho = -Spearman(upper triangles); near -1 means strong agreement.

    Returns (rho, degenerate) where degenerate flags a constant triangle
    (rho reported as neutral 0).
    """
    if rdm_a.shape != rdm_b.shape:
        raise ConflictError(f"RDM shapes differ: {rdm_a.shape} vs {rdm_b.shape}")
    iu = np.triu_indices(rdm_a.shape[0], k=1)
    rho = spearman(rdm_a[iu], rdm_b[iu])
    if rho is None:
        return 0.0, True
    return -rho, False


def collect_activations(net, task: int, samples: np.ndarray) -> list[np.ndarray]:
    """Post-activations per trunk position for the given task view."""
    if samples.shape[0] < 3:
        raise ConflictError(f"need >= 3 samples for RSA, got {samples.shape[0]}")
    return net.trunk_activations(task, samples)


def subsample(inputs: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if len(inputs) <= cap:
        return inputs
    idx = np.sort(np.random.default_rng([seed, 6311]).choice(len(inputs), size=cap, replace=False))
    return inputs[idx]


def layer_conflicts(acts_new: list[np.ndarray], acts_old: list[np.ndarray], t: int, b: int, norm: str = "l2") -> ConflictProfile:
    """Full profile from the two activation stacks (new task's net vs b's view)."""
    if len(acts_new) != len(acts_old):
        raise ConflictError("activation stacks have different depths")
    raw = np.empty(len(acts_new))
    warnings = 0
    for l, (a, o) in enumerate(zip(acts_new, acts_old)):
        warnings += zero_variance_rows(a) + zero_variance_rows(o)
        rho, degenerate = rsa_dissimilarity(rdm(a), rdm(o))
        warnings += int(degenerate)
        raw[l] = rho
    scores = np.clip((raw + 1.0) / 2.0, SCORE_EPS, 1.0 - SCORE_EPS)
    return ConflictProfile(
        t=t,
        b=b,
        raw=raw,
        scores=scores,
        distribution=conflict_distribution(scores),
        task_score=task_conflict(scores, norm),
        warnings=warnings,
    )


def task_conflict(scores: np.ndarray, norm: str = "l2") -> float:
    """Length-normalized norm of the layer-score vector."""
    L = len(scores)
    if norm == "l2":
        return float(np.linalg.norm(scores) / np.sqrt(L))
    if norm == "l1":
        return float(np.abs(scores).sum() / L)
    raise ConflictError(f"unknown conflict norm {norm!r}")


def conflict_distribution(scores: np.ndarray) -> np.ndarray:
    return scores / scores.sum()


def nucleus(distribution: np.ndarray, delta: float) -> list[int]:
    """Smallest set of highest-probability positions with cumulative mass
    >= delta; ties broken toward the lower position index."""
    if not 0.0 <= delta <= 1.0:
        raise ConflictError(f"grow coefficient {delta} outside [0, 1]")
    if delta == 0.0:
        return []
    order = sorted(range(len(distribution)), key=lambda i: (-distribution[i], i))
    total = 0.0
    picked = []
    for i in order:
        picked.append(i)
        total += float(distribution[i])
        if total >= delta - 1e-12:
            break
    return sorted(picked)


def dump_profiles_csv(path: str, profiles: list[ConflictProfile]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task", "candidate", "layer", "rho", "score", "prob"])
        for p in profiles:
            for l in range(len(p.raw)):
                w.writerow([p.t, p.b, l, f"{p.raw[l]:.6g}", f"{p.scores[l]:.6g}", f"{p.distribution[l]:.6g}"])
