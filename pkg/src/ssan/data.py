"""Feature files, the labeled-target split protocol and a synthetic HDA task.

CSV layout: no header, comma separated, one row per instance. The first
field is an integer class label (0-based, ``-1`` for unlabeled), the rest
are decimal features. Writers emit 17 significant digits so float64 values
round-trip exactly.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .losses import ProtocolError
from .rng import stream

log = logging.getLogger(__name__)

UNLABELED = -1


class FeatureFormatError(ValueError):
    pass


@dataclass
class TrainingView:
    """Everything training may see: no ground truth for the unlabeled rows."""

    X_S: np.ndarray
    Y_S: np.ndarray
    X_L: np.ndarray
    Y_L: np.ndarray
    X_U: np.ndarray
    n_classes: int


@dataclass
class HdaDataset:
    X_S: np.ndarray
    Y_S: np.ndarray
    X_L: np.ndarray
    Y_L: np.ndarray
    X_U: np.ndarray
    n_classes: int
    Y_U_truth: np.ndarray | None = None

    def __post_init__(self):
        if self.X_L.shape[1] != self.X_U.shape[1]:
            raise FeatureFormatError(
                f"labeled target width {self.X_L.shape[1]} != unlabeled width {self.X_U.shape[1]}")
        for name, y in (("source", self.Y_S), ("labeled target", self.Y_L)):
            missing = sorted(set(range(self.n_classes)) - set(np.unique(y).tolist()))
            if missing:
                raise ProtocolError(f"{name} set has no instance of class(es) {missing}")
        if self.X_L.shape[0] > self.X_U.shape[0]:
            warnings.warn(f"{self.X_L.shape[0]} labeled target rows exceed "
                          f"{self.X_U.shape[0]} unlabeled rows", stacklevel=2)

    @property
    def d_s(self) -> int:
        return self.X_S.shape[1]

    @property
    def d_t(self) -> int:
        return self.X_L.shape[1]

    def training_view(self) -> TrainingView:
        return TrainingView(self.X_S, self.Y_S, self.X_L, self.Y_L, self.X_U, self.n_classes)


# -- CSV -------------------------------------------------------------------


def load_feature_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a feature CSV into ``(features, labels)``; label -1 means unlabeled."""
    labels, rows = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if width is None:
                width = len(rec)
                if width < 2:
                    raise FeatureFormatError(f"{path}:{lineno}: need a label and at least one feature")
            elif len(rec) != width:
                raise FeatureFormatError(
                    f"{path}:{lineno}: expected {width} fields, found {len(rec)}")
            try:
                lab = int(rec[0])
                vals = [float(f) for f in rec[1:]]
            except ValueError as exc:
                raise FeatureFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if lab < UNLABELED:
                raise FeatureFormatError(f"{path}:{lineno}: label {lab} is below -1")
            labels.append(lab)
            rows.append(vals)
    if not rows:
        raise FeatureFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def save_feature_csv(path, X, labels=None) -> None:
    X = np.asarray(X, dtype=np.float64)
    if labels is None:
        labels = np.full(X.shape[0], UNLABELED)
    with open(path, "w", newline="") as fh:
        for lab, row in zip(labels, X):
            fh.write(",".join([str(int(lab))] + [format(v, ".17g") for v in row]))
            fh.write("\n")


# -- protocol --------------------------------------------------------------


@dataclass
class Split:
    X_L: np.ndarray
    Y_L: np.ndarray
    X_U: np.ndarray
    Y_U: np.ndarray
    labeled_index: np.ndarray
    unlabeled_index: np.ndarray


def split_protocol(X_pool, Y_pool, m: int, seed: int, n_classes: int | None = None) -> Split:
    """Pick ``m`` labeled rows per class uniformly without replacement; the rest are unlabeled."""
    X_pool = np.asarray(X_pool, dtype=np.float64)
    Y_pool = np.asarray(Y_pool, dtype=np.int64)
    if m < 1:
        raise ProtocolError(f"m must be >= 1, got {m}")
    k = int(Y_pool.max()) + 1 if n_classes is None else n_classes
    rng = stream(seed, "split")
    labeled = []
    for c in range(k):
        idx = np.flatnonzero(Y_pool == c)
        if idx.size <= m:
            raise ProtocolError(f"class {c} has {idx.size} instances, need more than m={m}")
        labeled.append(np.sort(rng.choice(idx, size=m, replace=False)))
    labeled = np.concatenate(labeled)
    mask = np.zeros(Y_pool.shape[0], dtype=bool)
    mask[labeled] = True
    unlabeled = np.flatnonzero(~mask)
    return Split(X_pool[labeled], Y_pool[labeled], X_pool[unlabeled], Y_pool[unlabeled],
                 labeled, unlabeled)


VAR_FLOOR = 1e-12


def standardize(reference, *apply_to):
    """Z-score each matrix in ``apply_to`` with per-column stats of ``reference``.

    Columns whose variance is below 1e-12 are only centered.
    """
    ref = np.asarray(reference, dtype=np.float64)
    mu = ref.mean(axis=0)
    var = ref.var(axis=0)
    sd = np.where(var < VAR_FLOOR, 1.0, np.sqrt(var))
    out = [(np.asarray(a, dtype=np.float64) - mu) / sd for a in apply_to]
    return out[0] if len(out) == 1 else tuple(out)


def standardize_dataset(ds: HdaDataset) -> HdaDataset:
    """Source from source statistics; target from labeled + unlabeled target rows jointly."""
    X_S = standardize(ds.X_S, ds.X_S)
    X_L, X_U = standardize(np.vstack([ds.X_L, ds.X_U]), ds.X_L, ds.X_U)
    return HdaDataset(X_S, ds.Y_S, X_L, ds.Y_L, X_U, ds.n_classes, ds.Y_U_truth)


def load_dataset(source, target_pool=None, target_labeled=None, target_unlabeled=None,
                 m: int = 3, seed: int = 0) -> HdaDataset:
    """Assemble a dataset from CSV files.

    Either give ``target_pool`` (fully labeled, split with :func:`split_protocol`)
    or both ``target_labeled`` and ``target_unlabeled``. Unlabeled rows that
    carry a label other than -1 keep it as evaluation-only ground truth.
    """
    X_S, Y_S = load_feature_csv(source)
    if (Y_S < 0).any():
        raise ProtocolError(f"{source}: source rows must all be labeled")
    if target_pool is not None:
        X_P, Y_P = load_feature_csv(target_pool)
        if (Y_P < 0).any():
            raise ProtocolError(f"{target_pool}: target pool rows must all be labeled")
        k = int(max(Y_S.max(), Y_P.max())) + 1
        sp = split_protocol(X_P, Y_P, m, seed, k)
        return HdaDataset(X_S, Y_S, sp.X_L, sp.Y_L, sp.X_U, k, sp.Y_U)
    if target_labeled is None or target_unlabeled is None:
        raise ProtocolError("need either a target pool or labeled and unlabeled target files")
    X_L, Y_L = load_feature_csv(target_labeled)
    X_U, Y_U = load_feature_csv(target_unlabeled)
    if (Y_L < 0).any():
        raise ProtocolError(f"{target_labeled}: labeled target rows must carry labels")
    k = int(max(Y_S.max(), Y_L.max())) + 1
    truth = Y_U if (Y_U >= 0).all() else None
    return HdaDataset(X_S, Y_S, X_L, Y_L, X_U, k, truth)


# -- synthetic task ---------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 6
    d_latent: int = 8
    d_s: int = 40
    d_t: int = 24
    separation: float = 3.0
    noise: float = 0.5
    per_class: int = 60
    m: int = 3
    seed: int = 0

    def validate(self):
        counts = asdict(self)
        for key in ("n_classes", "d_latent", "d_s", "d_t", "per_class", "m"):
            if counts[key] < 1:
                raise ValueError(f"{key} must be >= 1, got {counts[key]}")
        if not self.separation > 0:
            raise ValueError(f"separation must be positive, got {self.separation}")
        if self.noise < 0:
            raise ValueError(f"noise must be non-negative, got {self.noise}")
        if self.per_class <= self.m:
            raise ProtocolError(f"per_class={self.per_class} leaves no unlabeled row for m={self.m}")


@dataclass
class SynthTask:
    dataset: HdaDataset
    class_means: np.ndarray
    latent_source: np.ndarray
    latent_target: np.ndarray
    target_pool_X: np.ndarray
    target_pool_Y: np.ndarray
    split: Split = field(repr=False, default=None)


def _unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def synth_generate(spec: SynthSpec = SynthSpec()) -> SynthTask:
    """Two observation spaces of one latent class structure.

    Class means sit at ``separation`` times random unit directions. Each
    domain draws its own latent samples around them and observes
    ``tanh(latent @ A) + noise`` through an independent random ``A``; one
    ``noise`` scale drives both the latent spread and the observation noise.
    """
    spec.validate()
    rng = stream(spec.seed, "synth")
    k, dl, n = spec.n_classes, spec.d_latent, spec.per_class
    means = spec.separation * _unit_rows(rng, k, dl)
    labels = np.repeat(np.arange(k), n)

    def latent():
        return means[labels] + spec.noise * rng.standard_normal((k * n, dl))

    def observe(z, width):
        A = rng.standard_normal((dl, width)) / np.sqrt(dl)
        return np.tanh(z @ A) + spec.noise * rng.standard_normal((z.shape[0], width))

    z_s = latent()
    z_t = latent()
    X_S = observe(z_s, spec.d_s)
    X_T = observe(z_t, spec.d_t)
    sp = split_protocol(X_T, labels, spec.m, spec.seed, k)
    ds = HdaDataset(X_S, labels.copy(), sp.X_L, sp.Y_L, sp.X_U, k, sp.Y_U)
    return SynthTask(ds, means, z_s, z_t, X_T, labels.copy(), sp)


def write_task_csvs(ds: HdaDataset, out_dir) -> dict[str, Path]:
    """Write source / labeled target / unlabeled target files; truth goes into the unlabeled labels."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"source": out / "source.csv", "target_labeled": out / "target_labeled.csv",
             "target_unlabeled": out / "target_unlabeled.csv"}
    save_feature_csv(paths["source"], ds.X_S, ds.Y_S)
    save_feature_csv(paths["target_labeled"], ds.X_L, ds.Y_L)
    save_feature_csv(paths["target_unlabeled"], ds.X_U, ds.Y_U_truth)
    return paths
