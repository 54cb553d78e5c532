"""Command-line entry point.

    ssan synth     --seed 1 --out data/
    ssan train     --source s.csv --target-pool t.csv --m 3 --seed 7 --reps 5 --out runs/
    ssan baseline  --synthetic --reps 10 --out runs/nnt
    ssan ablate    --synthetic --reps 10 --out runs/ablate
    ssan gradcheck

Flags override values from ``--config FILE`` (``key = value`` lines using
the flag names), which override built-in defaults.

Exit codes: 0 success, 1 I/O or file-format failure, 2 usage error,
3 data-protocol violation, 4 gradient check above tolerance.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import eval as ev
from .checks import GRADCHECK_TOL, run_gradcheck
from .data import (FeatureFormatError, HdaDataset, SynthSpec, load_dataset, save_feature_csv,
                   standardize_dataset, synth_generate, write_task_csvs)
from .losses import LabelError, ProtocolError
from .model import predict_source, predict_target
from .numerics import ParameterError, softmax_array
from .training import ABLATIONS, TrainConfig, ablation_config, train, train_target_only

log = logging.getLogger("ssan")

MODES = ("train", "synth", "gradcheck", "ablate", "baseline")
EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_PROTOCOL, EXIT_GRADCHECK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


# flag name -> value type
TRAIN_FLAGS = {
    "alpha": float, "beta": float, "gamma": float, "temperature": float,
    "dim-common": int, "hidden": int, "epochs": int, "lr": float, "seed": int,
    "leaky-slope": float,
}
SYNTH_FLAGS = {
    "classes": int, "d-latent": int, "d-s": int, "d-t": int, "separation": float,
    "noise": float, "per-class": int,
}
RUN_FLAGS = {"m": int, "reps": int, "jobs": int}
PATH_FLAGS = ("source", "target-pool", "target-labeled", "target-unlabeled", "out")
SWITCHES = ("no-soft", "no-esa", "no-adv", "no-temp", "no-gs", "synthetic",
            "no-standardize", "student-temperature")

CONFIG_FIELD = {"dim-common": "d_common", "no-temp": "no_temperature",
                "student-temperature": "soft_student_temperature"}
SYNTH_FIELD = {"classes": "n_classes"}


@dataclass
class ExperimentSpec:
    mode: str
    config: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec | None = None
    source: str | None = None
    target_pool: str | None = None
    target_labeled: str | None = None
    target_unlabeled: str | None = None
    m: int = 3
    reps: int = 1
    jobs: int = 1
    out: str | None = None
    standardize: bool = True

    def describe(self) -> dict:
        """Resolved settings echoed into every artifact."""
        data = ({"synthetic": asdict(self.synth)} if self.synth is not None else
                {"source": self.source, "target_pool": self.target_pool,
                 "target_labeled": self.target_labeled, "target_unlabeled": self.target_unlabeled})
        return {"mode": self.mode, "train": self.config.to_dict(), "data": data, "m": self.m,
                "reps": self.reps, "standardize": self.standardize}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssan", description="SSAN heterogeneous domain adaptation")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", metavar="FILE")
    for name in PATH_FLAGS:
        p.add_argument(f"--{name}", metavar="PATH")
    for table in (TRAIN_FLAGS, SYNTH_FLAGS, RUN_FLAGS):
        for name, typ in table.items():
            p.add_argument(f"--{name}", type=typ, metavar=typ.__name__.upper())
    for name in SWITCHES:
        p.add_argument(f"--{name}", action="store_const", const=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def read_config_file(path) -> dict[str, str]:
    known = set(TRAIN_FLAGS) | set(SYNTH_FLAGS) | set(RUN_FLAGS) | set(PATH_FLAGS) | set(SWITCHES)
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("_", "-")
            if key not in known:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def _coerce(key: str, raw):
    if key in SWITCHES:
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    for table in (TRAIN_FLAGS, SYNTH_FLAGS, RUN_FLAGS):
        if key in table:
            try:
                return table[key](raw)
            except ValueError:
                raise UsageError(f"{key}: malformed value {raw!r}") from None
    return raw


def parse_args(argv) -> ExperimentSpec:
    """Turn ``argv`` into an :class:`ExperimentSpec`; raises SystemExit(2) on bad flags."""
    ns = _parser().parse_args(argv)
    merged: dict = {}
    if ns.config:
        try:
            merged.update(read_config_file(ns.config))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    for key, val in vars(ns).items():
        flag = key.replace("_", "-")
        if val is not None and flag not in ("mode", "config", "verbose"):
            merged[flag] = val
    values = {k: _coerce(k, v) for k, v in merged.items()}

    cfg_kw = {}
    for flag in list(TRAIN_FLAGS) + ["no-soft", "no-esa", "no-adv", "no-temp", "no-gs",
                                     "student-temperature"]:
        if flag in values:
            cfg_kw[CONFIG_FIELD.get(flag, flag.replace("-", "_"))] = values[flag]
    try:
        config = TrainConfig(**cfg_kw)
    except (ParameterError, TypeError) as exc:
        raise UsageError(str(exc)) from None

    spec = ExperimentSpec(ns.mode, config)
    spec.m = values.get("m", 3)
    spec.reps = values.get("reps", 1)
    spec.jobs = values.get("jobs", 1)
    spec.out = values.get("out")
    spec.standardize = not values.get("no-standardize", False)
    for flag in ("source", "target-pool", "target-labeled", "target-unlabeled"):
        setattr(spec, flag.replace("-", "_"), values.get(flag))
    if spec.reps < 1:
        raise UsageError("--reps must be >= 1")
    if spec.jobs < 1:
        raise UsageError("--jobs must be >= 1")

    if ns.mode == "synth" or values.get("synthetic"):
        synth_kw = {SYNTH_FIELD.get(f, f.replace("-", "_")): values[f]
                    for f in SYNTH_FLAGS if f in values}
        try:
            spec.synth = SynthSpec(m=spec.m, seed=config.seed, **synth_kw)
            spec.synth.validate()
        except ProtocolError:
            raise
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    if ns.mode == "synth" and not spec.out:
        raise UsageError("synth needs --out")
    if ns.mode in ("train", "ablate", "baseline") and spec.synth is None:
        if not spec.source:
            raise UsageError(f"{ns.mode} needs --source (or --synthetic)")
        if not spec.target_pool and not (spec.target_labeled and spec.target_unlabeled):
            raise UsageError(f"{ns.mode} needs --target-pool or both "
                             "--target-labeled and --target-unlabeled")
    return spec


# -- running ------------------------------------------------------------------


def dataset_for(spec: ExperimentSpec, seed: int) -> HdaDataset:
    if spec.synth is not None:
        ds = synth_generate(replace(spec.synth, seed=seed)).dataset
    else:
        ds = load_dataset(spec.source, spec.target_pool, spec.target_labeled,
                          spec.target_unlabeled, m=spec.m, seed=seed)
    return standardize_dataset(ds) if spec.standardize else ds


def _run_one(spec: ExperimentSpec, variant: str, seed: int) -> dict:
    """One (variant, seed) run; returns plain data so it can cross process boundaries."""
    started = time.perf_counter()
    ds = dataset_for(spec, seed)
    truth = ds.Y_U_truth
    stats_rows, hist_rows = [], []
    if variant == "nnt":
        cfg = replace(spec.config, seed=seed)
        res = train_target_only(ds, cfg)
        epochs, final_stats = [], None
    else:
        cfg = replace(ablation_config(spec.config, variant), seed=seed)
        res = train(ds, cfg)
        epochs = []
        for st in res.history:
            rec = st.record()
            if truth is not None:
                rec["pseudo_label_stats"] = ev.pseudo_label_stats(st.assignment, truth)
                stats_rows.append([seed, variant, st.epoch, st.n_selected]
                                  + [rec["pseudo_label_stats"][c] for c in ev.PSEUDO_CATEGORIES])
            epochs.append(rec)
        final_stats = epochs[-1].get("pseudo_label_stats") if epochs else None

        T = cfg.weights.temperature
        src = ev.class_prediction_histogram(softmax_array(predict_source(res.model, ds.X_S), T),
                                            ds.Y_S, ds.n_classes)
        by = truth if truth is not None else res.predictions
        tgt = ev.class_prediction_histogram(softmax_array(predict_target(res.model, ds.X_U)),
                                            by, ds.n_classes)
        for kind, h in (("source_soft_labels", src), ("target_unlabeled", tgt)):
            for c in range(ds.n_classes):
                if h.defined[c]:
                    hist_rows.append([seed, variant, kind, c] + [repr(float(v)) for v in h.rows[c]])

    report = ev.RunReport(
        task=_task_name(spec), seed=seed,
        config={**spec.describe(), "variant": variant, "train": asdict(cfg), "seed": seed},
        accuracy=res.accuracy, epochs=epochs, pseudo_label_stats=final_stats,
        timing={"seconds": time.perf_counter() - started})
    return {"variant": variant, "seed": seed, "report": report, "accuracy": res.accuracy,
            "stats_rows": stats_rows, "hist_rows": hist_rows}


def _task_name(spec: ExperimentSpec) -> str:
    if spec.synth is not None:
        return "synthetic"
    src = Path(spec.source).stem
    tgt = Path(spec.target_pool or spec.target_unlabeled).stem
    return f"{src}->{tgt}"


def _variants(mode: str) -> list[str]:
    if mode == "ablate":
        return list(ABLATIONS)
    if mode == "baseline":
        return ["nnt"]
    return ["full"]


def _slug(variant: str) -> str:
    return variant.replace("/", "").replace("=", "").replace(" ", "_").lower()


def _csv_text(header_config: dict, columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# config: {json.dumps(header_config, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec, stdout=None) -> int:
    stdout = stdout or sys.stdout
    if spec.mode == "gradcheck":
        return _gradcheck(spec, stdout)
    if spec.mode == "synth":
        return _synth(spec, stdout)

    seeds = [spec.config.seed + r for r in range(spec.reps)]
    variants = _variants(spec.mode)
    jobs = [(v, s) for v in variants for s in seeds]
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            results = list(pool.map(_run_one, [spec] * len(jobs), *zip(*jobs)))
    else:
        results = [_run_one(spec, v, s) for v, s in jobs]

    desc = spec.describe()
    out = Path(spec.out) if spec.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    accs: dict[str, list[float]] = {v: [] for v in variants}
    stats_rows, hist_rows = [], []
    k = None
    for r in results:  # ordered by (variant, seed) regardless of completion order
        if r["accuracy"] is not None:
            accs[r["variant"]].append(r["accuracy"])
        stats_rows += r["stats_rows"]
        hist_rows += r["hist_rows"]
        if hist_rows:
            k = len(hist_rows[0]) - 4
        if out is not None:
            name = (f"run_{r['seed']}.json" if len(variants) == 1
                    else f"run_{r['seed']}_{_slug(r['variant'])}.json")
            (out / name).write_text(r["report"].to_json())
        acc = r["accuracy"]
        stdout.write(f"{r['variant']:>8s} seed {r['seed']:>4d}  accuracy "
                     f"{'n/a' if acc is None else f'{acc:.4f}'}\n")

    if all(len(a) == len(seeds) for a in accs.values()) and seeds:
        reference = "full" if spec.mode == "ablate" else None
        agg = ev.aggregate(_task_name(spec), desc, accs, seeds, reference)
        for row in agg.rows:
            stdout.write(f"{row['variant']:>8s}  {100 * row['mean']:6.2f} +- {100 * row['std']:.2f}"
                         f"  (n={row['n']})\n")
        if out is not None:
            (out / "aggregate.json").write_text(agg.to_json())
            (out / "aggregate.csv").write_text(agg.to_csv())
    else:
        stdout.write("no ground truth for the unlabeled rows; accuracy not reported\n")
    if out is not None:
        (out / "pseudolabel_stats.csv").write_text(_csv_text(
            desc, ["seed", "variant", "epoch", "n_selected", *ev.PSEUDO_CATEGORIES], stats_rows))
        (out / "histograms.csv").write_text(_csv_text(
            desc, ["seed", "variant", "kind", "class"] + [f"p{j}" for j in range(k or 0)],
            hist_rows))
    return EXIT_OK


def _gradcheck(spec: ExperimentSpec, stdout) -> int:
    errors = run_gradcheck(spec.config.seed)
    worst = max(errors.values())
    for name, err in errors.items():
        stdout.write(f"{name:>10s}  max relative error {err:.3e}\n")
    stdout.write(f"{'max':>10s}  {worst:.3e}  ({'ok' if worst < GRADCHECK_TOL else 'FAIL'}, "
                 f"tolerance {GRADCHECK_TOL:g})\n")
    if spec.out:
        Path(spec.out).mkdir(parents=True, exist_ok=True)
        (Path(spec.out) / "gradcheck.json").write_text(
            ev.dumps({"config": spec.describe(), "errors": errors, "max": worst,
                      "tolerance": GRADCHECK_TOL}))
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_GRADCHECK


def _synth(spec: ExperimentSpec, stdout) -> int:
    task = synth_generate(spec.synth)
    out = Path(spec.out)
    paths = write_task_csvs(task.dataset, out)
    save_feature_csv(out / "target_pool.csv", task.target_pool_X, task.target_pool_Y)
    (out / "synth.json").write_text(ev.dumps({"config": spec.describe()}))
    for name, path in sorted(paths.items()):
        stdout.write(f"{name}: {path}\n")
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.DEBUG if "-v" in argv or "--verbose" in argv
                        else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"ssan: error: {exc}\n")
        return EXIT_USAGE
    except ProtocolError as exc:
        sys.stderr.write(f"ssan: protocol error: {exc}\n")
        return EXIT_PROTOCOL
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return run_experiment(spec)
    except (ProtocolError, LabelError) as exc:
        sys.stderr.write(f"ssan: protocol error: {exc}\n")
        return EXIT_PROTOCOL
    except (OSError, FeatureFormatError) as exc:
        sys.stderr.write(f"ssan: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
