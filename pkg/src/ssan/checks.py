"""Finite-difference checks of every loss term on a tiny synthetic batch."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .data import HdaDataset
from .losses import (ENCODER_CLASSIFIER, compute_soft_labels, domain_loss, esa_loss,
                     isc_loss, soft_loss, supervised_loss, total_objective)
from .model import (InitSpec, Shapes, SsanModel, classify, discriminate, encode_source,
                    encode_target, init_model)
from .numerics import Tape
from .rng import stream
from .semantics import refine_pseudo_labels, supervised_centroids, triplet_centroids
from .training import TrainConfig, build_objectives

GRADCHECK_TOL = 1e-4
GRADCHECK_EPS = 1e-5


def tiny_batch(seed: int = 0, n: int = 4, d_s: int = 5, d_t: int = 3, k: int = 2) -> HdaDataset:
    rng = stream(seed, "synth")
    y = np.arange(n) % k
    return HdaDataset(rng.standard_normal((n, d_s)), y, rng.standard_normal((n, d_t)), y.copy(),
                      rng.standard_normal((n, d_t)), k)


def tiny_model(ds: HdaDataset, seed: int = 0) -> SsanModel:
    m = init_model(Shapes(ds.d_s, ds.d_t, 6, 4, ds.n_classes), InitSpec(seed))
    # non-zero biases so every code path carries signal
    rng = stream(seed + 1, "init")
    for k in m.params:
        if ".b" in k:
            m.params[k] = 0.1 * rng.standard_normal(m.params[k].shape)
    return m


def loss_builders(ds: HdaDataset, base: SsanModel, cfg: TrainConfig | None = None) -> dict:
    """Map of name -> ``build(params) -> (tape, loss)`` for each loss term.

    Epoch constants (soft labels, pseudo-label selection) are computed once
    from ``base`` so every builder is a smooth function of the parameters.
    """
    cfg = cfg or TrainConfig(d_common=base.shapes.d_common, hidden=base.shapes.hidden)
    T = cfg.weights.temperature
    k = ds.n_classes

    tape = Tape()
    z_s = encode_source(base, tape, ds.X_S)
    z_l = encode_target(base, tape, ds.X_L)
    z_u = encode_target(base, tape, ds.X_U)
    bank = compute_soft_labels(classify(base, tape, z_s).value, ds.Y_S, T, k)
    cents = supervised_centroids(z_s.value, ds.Y_S, z_l.value, ds.Y_L, k)
    assign = refine_pseudo_labels(classify(base, tape, z_u).value, z_u.value, cents)
    sel = assign.selected_index

    def model_of(params):
        return SsanModel(base.shapes, dict(params), base.leaky_slope)

    def forward(params):
        m = model_of(params)
        t = Tape()
        return m, t, encode_source(m, t, ds.X_S), encode_target(m, t, ds.X_L), encode_target(m, t, ds.X_U)

    def sup(params):
        m, t, zs, _, _ = forward(params)
        return t, supervised_loss(t, classify(m, t, zs), ds.Y_S)

    def soft(params):
        m, t, _, zl, _ = forward(params)
        return t, soft_loss(t, nx.softmax_rows(t, classify(m, t, zl)), ds.Y_L, bank)

    def isc(params):
        m, t, _, zl, _ = forward(params)
        return t, isc_loss(t, classify(m, t, zl), ds.Y_L, bank, cfg.alpha)

    def esa(params):
        m, t, zs, zl, zu = forward(params)
        zt = nx.concat_rows(t, zl, nx.take_rows(t, zu, sel))
        yt = np.concatenate([ds.Y_L, assign.assigned[sel]])
        return t, esa_loss(t, triplet_centroids(t, zs, ds.Y_S, zt, yt, k))

    def dom(params):
        m, t, zs, zl, zu = forward(params)
        return t, domain_loss(t, discriminate(m, t, zs),
                              discriminate(m, t, nx.concat_rows(t, zl, zu)))

    def full(params):
        m = model_of(params)
        t, parts, objectives, *_ = build_objectives(m, ds.training_view(), cfg,
                                                    frozen=(bank, cents, assign))
        return t, objectives[ENCODER_CLASSIFIER]

    return {"supervised": sup, "soft": soft, "isc": isc, "esa": esa, "domain": dom,
            "objective": full}


def run_gradcheck(seed: int = 0, eps: float = GRADCHECK_EPS) -> dict[str, float]:
    ds = tiny_batch(seed)
    base = tiny_model(ds, seed)
    cfg = TrainConfig(d_common=base.shapes.d_common, hidden=base.shapes.hidden, seed=seed)
    return {name: nx.grad_check(build, base.params, eps)
            for name, build in loss_builders(ds, base, cfg).items()}
