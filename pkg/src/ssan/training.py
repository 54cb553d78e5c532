"""Full-batch alternating minimax training."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nx
from .data import HdaDataset, TrainingView
from .losses import (DISCRIMINATOR, ENCODER_CLASSIFIER, LossWeights, SoftLabelBank,
                     compute_soft_labels, domain_loss, esa_loss, isc_loss, supervised_loss,
                     total_objective)
from .model import (InitSpec, Shapes, SsanModel, classify, discriminate, encode_source,
                    encode_target, init_model, predict_target)
from .numerics import DimensionError, ParameterError, Tape
from .semantics import (CentroidSet, PseudoLabelAssignment, refine_pseudo_labels,
                        supervised_centroids, triplet_centroids)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.004
    gamma: float = 0.01
    temperature: float = 5.0
    d_common: int = 256
    hidden: int = 256
    epochs: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    leaky_slope: float = 0.01
    seed: int = 0
    no_soft: bool = False
    no_esa: bool = False
    no_adv: bool = False
    no_temperature: bool = False
    no_gs: bool = False
    soft_student_temperature: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        self.weights  # validates alpha/beta/gamma/T

    @property
    def weights(self) -> LossWeights:
        """Loss weights after the ablation switches are applied."""
        return LossWeights(
            alpha=0.0 if self.no_soft else self.alpha,
            beta=0.0 if self.no_esa else self.beta,
            gamma=0.0 if self.no_adv else self.gamma,
            temperature=1.0 if self.no_temperature else self.temperature,
        )

    def to_dict(self) -> dict:
        return asdict(self)


# -- optimizer ---------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float = 1e-3, betas=(0.9, 0.999),
              eps: float = 1e-8, names=None) -> None:
    """One bias-corrected Adam update, in place, over ``names`` (default: all grads)."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in (sorted(grads) if names is None else names):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise DimensionError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- one epoch --------------------------------------------------------------


@dataclass
class EpochState:
    epoch: int
    bank: SoftLabelBank
    centroids: CentroidSet
    assignment: PseudoLabelAssignment
    losses: dict[str, float]
    n_selected: int
    pseudo_accuracy: float | None = None
    nn_accuracy: float | None = None

    def record(self) -> dict:
        return {"epoch": self.epoch, **self.losses, "n_selected": self.n_selected,
                "pseudo_accuracy": self.pseudo_accuracy, "nn_accuracy": self.nn_accuracy}


@dataclass
class Optimizers:
    main: OptimizerState = field(default_factory=OptimizerState)
    disc: OptimizerState = field(default_factory=OptimizerState)


def build_objectives(m: SsanModel, view: TrainingView, cfg: TrainConfig, epoch: int = -1,
                     frozen=None):
    """One forward pass: refreshed epoch quantities plus both players' objectives.

    Returns ``(tape, parts, objectives, bank, centroids, assignment)``. The soft
    labels and supervised centroids are read off this pass as constants, so
    they are fixed for the epoch; the triplet centroids stay on the tape.
    Passing ``frozen=(bank, centroids, assignment)`` reuses earlier constants
    instead of refreshing them.
    """
    w = cfg.weights
    k = view.n_classes
    tape = Tape()
    z_s = encode_source(m, tape, view.X_S)
    z_l = encode_target(m, tape, view.X_L)
    z_u = encode_target(m, tape, view.X_U)
    logit_s = classify(m, tape, z_s)
    logit_l = classify(m, tape, z_l)
    logit_u = classify(m, tape, z_u)

    if frozen is None:
        bank = compute_soft_labels(logit_s.value, view.Y_S, w.temperature, k, epoch)
        centroids = supervised_centroids(z_s.value, view.Y_S, z_l.value, view.Y_L, k)
        assignment = refine_pseudo_labels(logit_u.value, z_u.value, centroids,
                                          use_gs=not cfg.no_gs)
    else:
        bank, centroids, assignment = frozen

    parts = {
        "L_S": supervised_loss(tape, logit_s, view.Y_S),
        "L_ISC": isc_loss(tape, logit_l, view.Y_L, bank, w.alpha,
                          w.temperature if cfg.soft_student_temperature else 1.0),
    }
    if w.beta > 0:
        sel = assignment.selected_index
        z_t = nx.concat_rows(tape, z_l, nx.take_rows(tape, z_u, sel)) if sel.size else z_l
        y_t = np.concatenate([view.Y_L, assignment.assigned[sel]])
        trip = triplet_centroids(tape, z_s, view.Y_S, z_t, y_t, k)
        parts["L_ESA"] = esa_loss(tape, trip)
    if w.gamma > 0:
        d_s = discriminate(m, tape, z_s)
        d_t = discriminate(m, tape, nx.concat_rows(tape, z_l, z_u))
        parts["L_D"] = domain_loss(tape, d_s, d_t)

    objectives = {ENCODER_CLASSIFIER: total_objective(tape, parts, w, ENCODER_CLASSIFIER)}
    if "L_D" in parts:
        objectives[DISCRIMINATOR] = total_objective(tape, parts, w, DISCRIMINATOR)
    return tape, parts, objectives, bank, centroids, assignment


def run_epoch(m: SsanModel, ds: HdaDataset | TrainingView, cfg: TrainConfig, epoch: int,
              opt: Optimizers, truth: np.ndarray | None = None) -> EpochState:
    """Refresh, one discriminator step, one encoder/classifier step. Mutates ``m`` and ``opt``."""
    view = ds.training_view() if isinstance(ds, HdaDataset) else ds
    if view.X_S.shape[1] != m.shapes.d_s or view.X_L.shape[1] != m.shapes.d_t:
        raise DimensionError(
            f"data widths ({view.X_S.shape[1]}, {view.X_L.shape[1]}) do not match model "
            f"({m.shapes.d_s}, {m.shapes.d_t})")
    tape, parts, objectives, bank, centroids, assignment = build_objectives(m, view, cfg, epoch)
    betas = (cfg.beta1, cfg.beta2)

    # both gradients come from the same forward state
    main_grads = nx.backward(tape, objectives[ENCODER_CLASSIFIER], m.main_names)
    if DISCRIMINATOR in objectives:
        disc_grads = nx.backward(tape, objectives[DISCRIMINATOR], m.discriminator_names)
        adam_step(m.params, disc_grads, opt.disc, cfg.lr, betas, cfg.eps, m.discriminator_names)
    adam_step(m.params, main_grads, opt.main, cfg.lr, betas, cfg.eps, m.main_names)

    state = EpochState(epoch, bank, centroids, assignment,
                       {k: v.item() for k, v in parts.items()}, assignment.n_selected)
    if truth is not None:
        state.nn_accuracy = float(np.mean(assignment.y_nn == truth)) if truth.size else None
        sel = assignment.selected
        state.pseudo_accuracy = float(np.mean(assignment.assigned[sel] == truth[sel])) if sel.any() else None
    return state


# -- whole runs ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: SsanModel
    history: list[EpochState]
    accuracy: float | None
    predictions: np.ndarray


def new_model(ds: HdaDataset, cfg: TrainConfig) -> SsanModel:
    shapes = Shapes(ds.d_s, ds.d_t, cfg.hidden, cfg.d_common, ds.n_classes)
    return init_model(shapes, InitSpec(cfg.seed), cfg.leaky_slope)


def train(ds: HdaDataset, cfg: TrainConfig, model: SsanModel | None = None,
          keep_history: bool = True) -> TrainResult:
    m = new_model(ds, cfg) if model is None else model
    view = ds.training_view()
    opt = Optimizers()
    history = []
    for epoch in range(cfg.epochs):
        state = run_epoch(m, view, cfg, epoch, opt, ds.Y_U_truth)
        if keep_history:
            history.append(state)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("epoch %d %s", epoch, state.losses)
    pred = np.argmax(predict_target(m, ds.X_U), axis=1)
    acc = None if ds.Y_U_truth is None else float(np.mean(pred == ds.Y_U_truth))
    return TrainResult(m, history, acc, pred)


def train_target_only(ds: HdaDataset, cfg: TrainConfig) -> TrainResult:
    """The no-transfer reference: target encoder + classifier on labeled target rows only."""
    m = new_model(ds, cfg)
    names = [k for k in m.params if k.startswith(("e_t.", "clf."))]
    opt = OptimizerState()
    for _ in range(cfg.epochs):
        tape = Tape()
        loss = supervised_loss(tape, classify(m, tape, encode_target(m, tape, ds.X_L)), ds.Y_L)
        grads = nx.backward(tape, loss, names)
        adam_step(m.params, grads, opt, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, names)
    pred = np.argmax(predict_target(m, ds.X_U), axis=1)
    acc = None if ds.Y_U_truth is None else float(np.mean(pred == ds.Y_U_truth))
    return TrainResult(m, [], acc, pred)


ABLATIONS = {
    "full": {},
    "alpha=0": {"no_soft": True},
    "beta=0": {"no_esa": True},
    "gamma=0": {"no_adv": True},
    "w/o T": {"no_temperature": True},
    "w/o GS": {"no_gs": True},
}


def ablation_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    return replace(cfg, **ABLATIONS[variant])
