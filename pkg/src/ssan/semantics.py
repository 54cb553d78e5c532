"""Class centroids, geometric-similarity labels and consensus pseudo-labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .losses import ProtocolError, check_labels
from .numerics import DimensionError, Node, Tape

NORM_FLOOR = 1e-12


@dataclass
class CentroidSet:
    mu: np.ndarray            # K x d
    defined_mask: np.ndarray  # K bools


@dataclass
class TripletCentroids:
    mu_s: Node
    mu_t: Node
    mu_st: Node
    active_mask: np.ndarray
    n_s: np.ndarray
    n_t: np.ndarray


@dataclass
class PseudoLabelAssignment:
    y_nn: np.ndarray
    y_gs: np.ndarray
    selected: np.ndarray
    assigned: np.ndarray  # -1 where not selected

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())

    @property
    def selected_index(self) -> np.ndarray:
        return np.flatnonzero(self.selected)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``; -1 if either is (near) zero."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity: lengths {a.size} and {b.size} differ")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        return -1.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(Z: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Row-by-centroid cosine similarities, vectorized with the same conventions."""
    zn = np.linalg.norm(Z, axis=1, keepdims=True)
    mn = np.linalg.norm(mu, axis=1, keepdims=True)
    sim = (Z @ mu.T) / np.maximum(zn, NORM_FLOOR) / np.maximum(mn, NORM_FLOOR).T
    sim = np.clip(sim, -1.0, 1.0)
    sim[(zn < NORM_FLOOR).reshape(-1), :] = -1.0
    sim[:, (mn < NORM_FLOOR).reshape(-1)] = -1.0
    return sim


def _values(z) -> np.ndarray:
    return z.value if isinstance(z, Node) else nx.as_matrix(z)


def supervised_centroids(Z_S, Y_S, Z_L, Y_L, n_classes: int) -> CentroidSet:
    """Per-class mean of encoded labeled source and labeled target features (detached)."""
    zs, zl = _values(Z_S), _values(Z_L)
    ys = check_labels(Y_S, zs.shape[0], n_classes)
    yl = check_labels(Y_L, zl.shape[0], n_classes)
    d = zs.shape[1]
    sums = np.zeros((n_classes, d))
    counts = np.zeros(n_classes)
    np.add.at(sums, ys, zs)
    np.add.at(sums, yl, zl)
    np.add.at(counts, ys, 1)
    np.add.at(counts, yl, 1)
    defined = counts > 0
    mu = np.zeros((n_classes, d))
    mu[defined] = sums[defined] / counts[defined, None]
    return CentroidSet(mu, defined)


def _first_argmax(scores: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(scores, axis=1)


def gs_labels(Z_U, centroids: CentroidSet) -> np.ndarray:
    if not centroids.defined_mask.any():
        raise ProtocolError("no class has a defined centroid")
    sim = cosine_matrix(_values(Z_U), centroids.mu)
    sim[:, ~centroids.defined_mask] = -np.inf
    return _first_argmax(sim)


def gs_label(z_u, centroids: CentroidSet) -> int:
    return int(gs_labels(np.asarray(z_u, dtype=np.float64).reshape(1, -1), centroids)[0])


def refine_pseudo_labels(logits_u, Z_U, centroids: CentroidSet,
                         use_gs: bool = True) -> PseudoLabelAssignment:
    """Keep an unlabeled instance only where classifier and centroid votes agree.

    With ``use_gs=False`` every instance is kept with its classifier label.
    """
    lv, zv = _values(logits_u), _values(Z_U)
    if lv.shape[0] != zv.shape[0]:
        raise DimensionError(f"{lv.shape[0]} logit rows for {zv.shape[0]} feature rows")
    y_nn = _first_argmax(lv)
    y_gs = gs_labels(zv, centroids) if zv.shape[0] else np.zeros(0, dtype=np.int64)
    selected = (y_nn == y_gs) if use_gs else np.ones_like(y_nn, dtype=bool)
    assigned = np.where(selected, y_nn, -1)
    return PseudoLabelAssignment(y_nn, y_gs, selected, assigned)


def _membership(labels: np.ndarray, n_classes: int, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    M = np.zeros((n_classes, n_rows))
    M[labels, np.arange(n_rows)] = 1.0
    return M, counts


def triplet_centroids(tape: Tape, Z_S: Node, Y_S, Z_T: Node, Y_T, n_classes: int) -> TripletCentroids:
    """Source, target and pooled class means, kept on the tape.

    ``Z_T``/``Y_T`` are the labeled target rows followed by the selected
    unlabeled rows with their pseudo-labels. A class is active only when both
    sides have at least one row; inactive rows hold zeros and are masked out
    by :func:`ssan.losses.esa_loss`.
    """
    Z_S, Z_T = tape.lift(Z_S), tape.lift(Z_T)
    ys = check_labels(Y_S, Z_S.shape[0], n_classes)
    yt = check_labels(Y_T, Z_T.shape[0], n_classes)
    Ms, n_s = _membership(ys, n_classes, Z_S.shape[0])
    Mt, n_t = _membership(yt, n_classes, Z_T.shape[0])
    n_st = n_s + n_t
    inv = lambda c: np.divide(1.0, c, out=np.zeros_like(c), where=c > 0)  # noqa: E731
    sum_s = nx.matmul(tape, Ms, Z_S)
    sum_t = nx.matmul(tape, Mt, Z_T)
    mu_s = nx.mul(tape, sum_s, inv(n_s).reshape(-1, 1))
    mu_t = nx.mul(tape, sum_t, inv(n_t).reshape(-1, 1))
    mu_st = nx.mul(tape, nx.add(tape, sum_s, sum_t), inv(n_st).reshape(-1, 1))
    active = (n_s > 0) & (n_t > 0)
    return TripletCentroids(mu_s, mu_t, mu_st, active, n_s, n_t)
