"""Budgeted-batch exit mathematics.

A single exit probability q induces a geometric distribution over the K
classifiers, q_k = z * (1-q)^(k-1) * q with z normalizing the sum to one.
Given per-classifier cumulative costs C_k and a batch of M samples, the
expected spend is M * sum_k q_k C_k; solving that against a budget B for q
is a bisection on a monotone function. Thresholds are then calibrated on a
validation confidence profile so the intended number of samples exits at
each classifier (confidence >= threshold exits; ties exit early).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

Q_MIN = 1e-6  # deepest-routing clamp for over-generous budgets
THRESHOLD_SENTINEL = 1.0 + 1e-9  # unreachable by any softmax confidence


def exit_distribution(q: float, num_classifiers: int):
    """Normalized geometric exit probabilities for K classifiers."""
    if num_classifiers < 1:
        raise ConfigurationError("need at least one classifier")
    if not 0.0 < q <= 1.0:
        raise InputError(f"exit probability must be in (0, 1], got {q}")
    raw = q * (1.0 - q) ** np.arange(num_classifiers)
    return raw / raw.sum()


def expected_cost(q: float, costs, batch_size: int) -> float:
    """Expected total FLOPs for a batch under the geometric exit model."""
    costs = np.asarray(costs, dtype=np.float64)
    if np.any(np.diff(costs) < 0):
        raise ConfigurationError("classifier costs must be nondecreasing")
    return batch_size * float(exit_distribution(q, len(costs)) @ costs)


def solve_budget(costs, batch_size: int, budget: float, tol: float = 1e-6,
                 max_iter: int = 100) -> float:
    """Find q with expected_cost(q) ~ budget (relative tolerance tol).

    expected_cost is nonincreasing in q, so bisection applies. Budgets below
    the everyone-exits-first floor clamp to q=1; budgets above the
    everyone-reaches-the-end ceiling clamp to Q_MIN.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if len(costs) == 0:
        raise ConfigurationError("need at least one classifier cost")
    if budget <= 0:
        raise InputError("budget must be positive")
    if expected_cost(1.0, costs, batch_size) >= budget:
        return 1.0
    lo = Q_MIN
    if expected_cost(lo, costs, batch_size) <= budget:
        return lo
    hi = 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        ec = expected_cost(mid, costs, batch_size)
        if abs(ec - budget) <= tol * budget:
            return mid
        if ec > budget:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class ConfidenceProfile:
    """Per-sample, per-classifier confidences and correctness flags."""

    sample_ids: np.ndarray  # (N,) int
    confidences: np.ndarray  # (N, K) float in [0, 1]
    correct: np.ndarray  # (N, K) bool

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        self.correct = np.asarray(self.correct, dtype=bool)
        if self.confidences.ndim != 2:
            raise InputError("confidences must be a (samples, classifiers) matrix")
        if self.correct.shape != self.confidences.shape:
            raise InputError("correct flags must match confidence shape")
        if self.sample_ids.shape != (self.confidences.shape[0],):
            raise InputError("one sample id per row required")
        if not np.all(np.isfinite(self.confidences)):
            raise InputError("confidences must be finite")

    @property
    def num_samples(self) -> int:
        return self.confidences.shape[0]

    @property
    def num_classifiers(self) -> int:
        return self.confidences.shape[1]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_id", "classifier", "confidence", "correct"])
            for i in range(self.num_samples):
                for k in range(self.num_classifiers):
                    w.writerow(
                        [
                            self.sample_ids[i],
                            k + 1,
                            repr(float(self.confidences[i, k])),
                            int(self.correct[i, k]),
                        ]
                    )

    @classmethod
    def read_csv(cls, path) -> "ConfidenceProfile":
        rows = {}
        ks = set()
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                sid = int(rec["sample_id"])
                k = int(rec["classifier"])
                ks.add(k)
                rows.setdefault(sid, {})[k] = (
                    float(rec["confidence"]),
                    bool(int(rec["correct"])),
                )
        sids = sorted(rows)
        kmax = max(ks)
        conf = np.zeros((len(sids), kmax))
        corr = np.zeros((len(sids), kmax), dtype=bool)
        for i, sid in enumerate(sids):
            for k in range(1, kmax + 1):
                conf[i, k - 1], corr[i, k - 1] = rows[sid][k]
        return cls(np.array(sids), conf, corr)


def calibrate_thresholds(profile: ConfidenceProfile, q_k, total: int | None = None):
    """Per-classifier confidence thresholds from a validation profile.

    Sequentially for k = 1..K-1, pick the threshold so that the n_k-th
    largest confidence among still-alive samples exits, n_k = round(total *
    q_k). A zero quota yields an unreachable sentinel threshold; a quota
    exceeding the alive count exits everyone (with a warning). The final
    threshold is 0: the last classifier accepts everything left.
    """
    if profile.num_samples < 1:
        raise InputError("profile must contain at least one sample")
    q_k = np.asarray(q_k, dtype=np.float64)
    K = profile.num_classifiers
    if q_k.shape != (K,):
        raise ConfigurationError(
            f"got {q_k.shape[0]} exit probabilities for {K} classifiers"
        )
    if total is None:
        total = profile.num_samples

    thresholds = np.zeros(K)
    alive = np.ones(profile.num_samples, dtype=bool)
    for k in range(K - 1):
        n_k = int(round(total * q_k[k]))
        alive_conf = profile.confidences[alive, k]
        if n_k <= 0:
            thresholds[k] = THRESHOLD_SENTINEL
            continue
        if n_k >= alive_conf.size:
            if n_k > alive_conf.size:
                warnings.warn(
                    f"classifier {k + 1}: quota {n_k} exceeds {alive_conf.size} "
                    "alive samples; exiting all of them"
                )
            if alive_conf.size == 0:
                thresholds[k] = THRESHOLD_SENTINEL
                continue
            thresholds[k] = alive_conf.min()
        else:
            thresholds[k] = np.sort(alive_conf)[::-1][n_k - 1]
        alive &= ~(profile.confidences[:, k] >= thresholds[k])
    thresholds[K - 1] = 0.0
    return thresholds


def replay_exit_counts(profile: ConfidenceProfile, thresholds) -> list[int]:
    """Apply thresholds to a profile; returns exits per classifier."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    K = profile.num_classifiers
    counts = [0] * K
    alive = np.ones(profile.num_samples, dtype=bool)
    for k in range(K):
        exits = alive & (profile.confidences[:, k] >= thresholds[k])
        if k == K - 1:
            exits = alive  # final classifier takes everything left
        counts[k] = int(exits.sum())
        alive &= ~exits
    return counts


@dataclass
class ExitPlan:
    """Calibrated budgeted-batch evaluation plan."""

    q: float
    q_k: tuple
    thresholds: tuple
    costs: tuple
    budget: float
    batch_size: int

    @property
    def num_classifiers(self) -> int:
        return len(self.q_k)

    def to_json(self) -> str:
        return json.dumps(
            {
                "q": self.q,
                "q_k": list(self.q_k),
                "thresholds": list(self.thresholds),
                "costs": [int(c) for c in self.costs],
                "budget": self.budget,
                "batch_size": self.batch_size,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ExitPlan":
        d = json.loads(text)
        return cls(
            q=d["q"],
            q_k=tuple(d["q_k"]),
            thresholds=tuple(d["thresholds"]),
            costs=tuple(d["costs"]),
            budget=d["budget"],
            batch_size=d["batch_size"],
        )


def make_plan(costs, batch_size: int, budget: float,
              profile: ConfidenceProfile) -> ExitPlan:
    """Solve the budget for q, then calibrate thresholds on the profile."""
    q = solve_budget(costs, batch_size, budget)
    q_k = exit_distribution(q, len(costs))
    thresholds = calibrate_thresholds(profile, q_k)
    return ExitPlan(
        q=q,
        q_k=tuple(float(v) for v in q_k),
        thresholds=tuple(float(t) for t in thresholds),
        costs=tuple(int(c) for c in costs),
        budget=float(budget),
        batch_size=batch_size,
    )
