"""Accuracy, run aggregation, Welch's t-test and pseudo-label diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import ProtocolError
from .semantics import PseudoLabelAssignment


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if predicted.shape != truth.shape:
        raise ValueError(f"{predicted.size} predictions for {truth.size} labels")
    if truth.size == 0:
        raise ProtocolError("accuracy of an empty set")
    return float(np.count_nonzero(predicted == truth)) / truth.size


def aggregate_runs(values) -> tuple[float, float]:
    """Mean and Bessel-corrected standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("cannot aggregate an empty list")
    mean = float(v.mean())
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return mean, std


# -- Student t tail via the regularized incomplete beta ----------------------


def _betacf(a: float, b: float, x: float, tol: float = 1e-16, max_iter: int = 10_000) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    neg_log_p: float
    df: float


def welch_ttest(a, b) -> TTest:
    """Welch's unequal-variance t-test, two-sided; ``neg_log_p`` uses the natural log.

    When both samples have zero variance the statistic is taken in the limit:
    equal means give ``t = 0, p = 1``; different means give ``t = +-inf, p = 0``.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise ValueError("welch_ttest needs at least two values per sample")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)) / a.size, float(b.var(ddof=1)) / b.size
    se2 = va + vb
    if se2 == 0.0:
        if ma == mb:
            return TTest(0.0, 1.0, 0.0, float(a.size + b.size - 2))
        t = math.copysign(math.inf, ma - mb)
        return TTest(t, 0.0, math.inf, float(a.size + b.size - 2))
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    p = min(1.0, t_two_sided_p(t, df))
    return TTest(t, p, -math.log(p) if p > 0 else math.inf, df)


# -- pseudo-label and prediction diagnostics --------------------------------


PSEUDO_CATEGORIES = ("agree_correct", "nn_correct_gs_wrong", "gs_correct_nn_wrong",
                     "agree_wrong", "disagree_both_wrong")


def pseudo_label_stats(assignment: PseudoLabelAssignment, truth) -> dict[str, int]:
    """Split unlabeled rows by which voter got them right; the counts sum to n_u."""
    truth = np.asarray(truth).reshape(-1)
    nn_ok = assignment.y_nn == truth
    gs_ok = assignment.y_gs == truth
    agree = assignment.y_nn == assignment.y_gs
    return {
        "agree_correct": int(np.count_nonzero(nn_ok & gs_ok)),
        "nn_correct_gs_wrong": int(np.count_nonzero(nn_ok & ~gs_ok)),
        "gs_correct_nn_wrong": int(np.count_nonzero(gs_ok & ~nn_ok)),
        "agree_wrong": int(np.count_nonzero(~nn_ok & ~gs_ok & agree)),
        "disagree_both_wrong": int(np.count_nonzero(~nn_ok & ~gs_ok & ~agree)),
    }


@dataclass
class ClassHistogram:
    rows: np.ndarray     # K x K, row k = mean prediction over class-k rows
    defined: np.ndarray  # False where class k had no rows


def class_prediction_histogram(probs, labels, n_classes: int | None = None) -> ClassHistogram:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    k = probs.shape[1] if n_classes is None else n_classes
    rows = np.zeros((k, probs.shape[1]))
    defined = np.zeros(k, dtype=bool)
    for c in range(k):
        sel = probs[labels == c]
        if sel.shape[0]:
            rows[c] = sel.mean(axis=0)
            defined[c] = True
    return ClassHistogram(rows, defined)


# -- reports -----------------------------------------------------------------


@dataclass
class RunReport:
    task: str
    seed: int
    config: dict
    accuracy: float | None
    epochs: list[dict] = field(default_factory=list)
    pseudo_label_stats: dict | None = None
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema": "ssan.run/1", "task": self.task, "seed": self.seed,
                "config": self.config, "accuracy": self.accuracy,
                "pseudo_label_stats": self.pseudo_label_stats,
                "epochs": self.epochs, "timing": self.timing}

    def to_json(self) -> str:
        return dumps(self.to_dict())


@dataclass
class AggregateReport:
    task: str
    config: dict
    rows: list[dict]                        # variant, mean, std, n, seeds, accuracies
    ttests: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema": "ssan.aggregate/1", "task": self.task, "config": self.config,
                "rows": self.rows, "ttests": self.ttests}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config: {json.dumps(self.config, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "mean", "std", "n"])
        for r in self.rows:
            w.writerow([r["variant"], repr(r["mean"]), repr(r["std"]), r["n"]])
        return buf.getvalue()


def aggregate(task: str, config: dict, results: dict[str, list[float]],
              seeds: list[int], reference: str | None = None) -> AggregateReport:
    """Mean/std per variant, plus Welch tests of ``reference`` against every other variant."""
    rows = []
    for name, accs in results.items():
        mean, std = aggregate_runs(accs)
        rows.append({"variant": name, "mean": mean, "std": std, "n": len(accs),
                     "seeds": list(seeds), "accuracies": list(accs)})
    tests = []
    if reference is not None and len(seeds) >= 2:
        for name, accs in results.items():
            if name == reference:
                continue
            r = welch_ttest(results[reference], accs)
            tests.append({"a": reference, "b": name, "t": r.t, "p": r.p,
                          "neg_log_p": r.neg_log_p, "df": r.df})
    return AggregateReport(task, config, rows, tests)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return _jsonable(float(x))
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"
