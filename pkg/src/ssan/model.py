"""The four SSAN networks and their checkpoint format.

Parameters live in plain float64 arrays keyed by dotted names::

    e_s.w1 e_s.b1 e_s.w2 e_s.b2    source encoder   d_s -> h -> d_common
    e_t.w1 e_t.b1 e_t.w2 e_t.b2    target encoder   d_t -> h -> d_common
    clf.w  clf.b                   shared classifier d_common -> K
    disc.w disc.b                  discriminator     d_common -> 1

Forward functions take a :class:`~ssan.numerics.Tape` and register the
parameters they touch on it, so one tape shared by both encoders sees a
single set of classifier leaves.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, ParameterError, Tape
from .rng import stream

D_CLAMP = 1e-7
CHECKPOINT_VERSION = 1

ENCODER_KEYS = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class Shapes:
    d_s: int
    d_t: int
    hidden: int
    d_common: int
    n_classes: int

    def validate(self):
        for key, val in asdict(self).items():
            if int(val) < 1:
                raise ParameterError(f"{key} must be >= 1, got {val}")


@dataclass(frozen=True)
class InitSpec:
    seed: int = 0


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class SsanModel:
    """Parameter container; see the module docstring for the layout."""

    def __init__(self, shapes: Shapes, params: dict[str, np.ndarray],
                 leaky_slope: float = nx.DEFAULT_LEAKY_SLOPE):
        self.shapes = shapes
        self.params = params
        self.leaky_slope = leaky_slope

    # names of each player's parameters
    @property
    def discriminator_names(self) -> list[str]:
        return ["disc.w", "disc.b"]

    @property
    def main_names(self) -> list[str]:
        return [k for k in self.params if not k.startswith("disc.")]

    def copy(self) -> "SsanModel":
        return SsanModel(self.shapes, {k: v.copy() for k, v in self.params.items()},
                         self.leaky_slope)

    def save(self, path) -> None:
        meta = {"version": CHECKPOINT_VERSION, "shapes": asdict(self.shapes),
                "leaky_slope": self.leaky_slope}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **self.params)

    @classmethod
    def load(cls, path) -> "SsanModel":
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            params = {k: z[k].astype(np.float64) for k in z.files if k != "__meta__"}
        return cls(Shapes(**meta["shapes"]), params, meta["leaky_slope"])


def init_model(shapes: Shapes, init: InitSpec = InitSpec(),
               leaky_slope: float = nx.DEFAULT_LEAKY_SLOPE) -> SsanModel:
    shapes.validate()
    rng = stream(init.seed, "init")
    s = shapes
    layers = [
        ("e_s.w1", "e_s.b1", s.d_s, s.hidden),
        ("e_s.w2", "e_s.b2", s.hidden, s.d_common),
        ("e_t.w1", "e_t.b1", s.d_t, s.hidden),
        ("e_t.w2", "e_t.b2", s.hidden, s.d_common),
        ("clf.w", "clf.b", s.d_common, s.n_classes),
        ("disc.w", "disc.b", s.d_common, 1),
    ]
    params = {}
    for wname, bname, fan_in, fan_out in layers:
        params[wname] = glorot_uniform(rng, fan_in, fan_out)
        params[bname] = np.zeros((1, fan_out))
    return SsanModel(shapes, params, leaky_slope)


def _encode(m: SsanModel, tape: Tape, X, prefix: str, width: int) -> nx.Node:
    X = tape.lift(X)
    if X.shape[1] != width:
        raise DimensionError(f"{prefix} encoder expects {width} columns, got {X.shape[1]}")
    p = {k: tape.param(f"{prefix}.{k}", m.params[f"{prefix}.{k}"]) for k in ENCODER_KEYS}
    h = nx.leaky_relu(tape, nx.affine(tape, X, p["w1"], p["b1"]), m.leaky_slope)
    return nx.leaky_relu(tape, nx.affine(tape, h, p["w2"], p["b2"]), m.leaky_slope)


def encode_source(m: SsanModel, tape: Tape, X_S) -> nx.Node:
    return _encode(m, tape, X_S, "e_s", m.shapes.d_s)


def encode_target(m: SsanModel, tape: Tape, X) -> nx.Node:
    return _encode(m, tape, X, "e_t", m.shapes.d_t)


def _check_common(m: SsanModel, Z: nx.Node, who: str):
    if Z.shape[1] != m.shapes.d_common:
        raise DimensionError(f"{who} expects width {m.shapes.d_common}, got {Z.shape[1]}")


def classify(m: SsanModel, tape: Tape, Z) -> nx.Node:
    """Raw logits of the shared classifier."""
    Z = tape.lift(Z)
    _check_common(m, Z, "classifier")
    return nx.affine(tape, Z, tape.param("clf.w", m.params["clf.w"]),
                     tape.param("clf.b", m.params["clf.b"]))


def discriminate(m: SsanModel, tape: Tape, Z) -> nx.Node:
    """Probability that each row came from the source encoder, clamped away from 0 and 1."""
    Z = tape.lift(Z)
    _check_common(m, Z, "discriminator")
    logit = nx.affine(tape, Z, tape.param("disc.w", m.params["disc.w"]),
                      tape.param("disc.b", m.params["disc.b"]))
    return nx.clip(tape, nx.sigmoid(tape, logit), D_CLAMP, 1.0 - D_CLAMP)


def predict_target(m: SsanModel, X) -> np.ndarray:
    """Classifier logits for target-domain rows, off-tape."""
    tape = Tape()
    return classify(m, tape, encode_target(m, tape, X)).value


def predict_source(m: SsanModel, X) -> np.ndarray:
    tape = Tape()
    return classify(m, tape, encode_source(m, tape, X)).value
