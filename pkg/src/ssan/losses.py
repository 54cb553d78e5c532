"""Loss terms of the SSAN objective.

All losses take and return tape nodes. Class indices are 0-based.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Node, ParameterError, Tape

log = logging.getLogger(__name__)


class LabelError(ValueError):
    pass


class ProtocolError(ValueError):
    """The data violates the labeled-source / labeled-target protocol."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.004
    gamma: float = 0.01
    temperature: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0 or self.gamma < 0:
            raise ParameterError("beta and gamma must be non-negative")
        nx.check_temperature(self.temperature)


@dataclass(frozen=True)
class SoftLabelBank:
    """Per-class average tempered source prediction; row k is the soft label of class k."""

    q: np.ndarray
    temperature: float
    epoch_computed: int = -1


def check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n_rows:
        raise LabelError(f"{y.shape[0]} labels for {n_rows} rows")
    bad = np.flatnonzero((y < 0) | (y >= n_classes))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {int(y[i])} at row {i} outside 0..{n_classes - 1}")
    return y


def supervised_loss(tape: Tape, logits: Node, labels) -> Node:
    """Mean cross-entropy of softmax(logits) against hard labels."""
    n, k = logits.shape
    if n < 1:
        raise ProtocolError("supervised loss over an empty set")
    y = check_labels(labels, n, k)
    logp = nx.log_softmax_rows(tape, logits)
    return nx.scale(tape, nx.total(tape, nx.pick(tape, logp, y)), -1.0 / n)


def compute_soft_labels(source_logits, source_labels, temperature: float,
                        n_classes: int | None = None, epoch: int = -1) -> SoftLabelBank:
    logits = source_logits.value if isinstance(source_logits, Node) else nx.as_matrix(source_logits)
    k = logits.shape[1] if n_classes is None else n_classes
    y = check_labels(source_labels, logits.shape[0], k)
    probs = nx.softmax_array(logits, temperature)
    q = np.empty((k, logits.shape[1]))
    for c in range(k):
        rows = probs[y == c]
        if rows.shape[0] == 0:
            raise ProtocolError(f"class {c} has no source instance")
        q[c] = rows.mean(axis=0)
    return SoftLabelBank(q, float(temperature), epoch)


def soft_loss(tape: Tape, target_probs: Node, labels, bank: SoftLabelBank) -> Node:
    """``-(1/n) sum_i q[y_i] . log p_i`` with the log clamped at 1e-12."""
    n, k = target_probs.shape
    if n < 1:
        raise ProtocolError("soft loss needs at least one labeled target instance")
    y = check_labels(labels, n, k)
    weights = bank.q[y]  # constant; the bank never receives gradient
    logp = nx.log(tape, target_probs)
    return nx.scale(tape, nx.total(tape, nx.mul(tape, logp, weights)), -1.0 / n)


def isc_loss(tape: Tape, target_logits: Node, target_labels, bank: SoftLabelBank,
             alpha: float, student_temperature: float = 1.0) -> Node:
    """Hard/soft mix ``(1 - alpha) * CE + alpha * soft`` on labeled target data.

    ``student_temperature`` other than 1 softens ``p_i`` as in classic
    distillation; the default keeps the student at temperature 1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return supervised_loss(tape, target_logits, target_labels)
    probs = nx.softmax_rows(tape, target_logits, student_temperature)
    soft = soft_loss(tape, probs, target_labels, bank)
    if alpha == 1.0:
        return soft
    hard = supervised_loss(tape, target_logits, target_labels)
    return nx.add(tape, nx.scale(tape, hard, 1.0 - alpha), nx.scale(tape, soft, alpha))


def esa_loss(tape: Tape, triplet) -> Node:
    """Sum over active classes of the three pairwise squared centroid distances."""
    mask = triplet.active_mask.astype(np.float64).reshape(-1, 1)
    if not mask.any():
        log.warning("explicit alignment has no active class; contributing 0")
        return tape.constant(0.0)
    pairs = ((triplet.mu_s, triplet.mu_t), (triplet.mu_s, triplet.mu_st),
             (triplet.mu_t, triplet.mu_st))
    out = None
    for a, b in pairs:
        d = nx.mul(tape, nx.sub(tape, a, b), mask)
        term = nx.total(tape, nx.square(tape, d))
        out = term if out is None else nx.add(tape, out, term)
    return out


def domain_loss(tape: Tape, d_source: Node, d_target: Node) -> Node:
    """Mean log D on source plus mean log(1 - D) on all target rows."""
    if d_source.shape[0] == 0 or d_target.shape[0] == 0:
        raise ProtocolError("domain loss needs rows from both domains")
    src = nx.mean(tape, nx.log(tape, d_source))
    tgt = nx.mean(tape, nx.log(tape, nx.sub(tape, 1.0, d_target)))
    return nx.add(tape, src, tgt)


ENCODER_CLASSIFIER = "encoder-classifier"
DISCRIMINATOR = "discriminator"


def total_objective(tape: Tape, parts: Mapping[str, Node], w: LossWeights,
                    role: str = ENCODER_CLASSIFIER) -> Node:
    """Scalar each player minimizes.

    ``parts`` holds ``L_S``, ``L_ISC``, ``L_ESA`` and ``L_D``; missing or
    zero-weighted terms are left off the graph. The discriminator maximizes
    ``gamma * L_D``, which is realized here as minimizing its negation.
    """
    if role == DISCRIMINATOR:
        return nx.scale(tape, parts["L_D"], -w.gamma)
    if role != ENCODER_CLASSIFIER:
        raise ValueError(f"unknown role {role!r}")
    out = None
    for key, weight in (("L_S", 1.0), ("L_ISC", 1.0), ("L_ESA", w.beta), ("L_D", w.gamma)):
        part = parts.get(key)
        if part is None or weight == 0.0:
            continue
        term = part if weight == 1.0 else nx.scale(tape, part, weight)
        out = term if out is None else nx.add(tape, out, term)
    if out is None:
        return tape.constant(0.0)
    return out
