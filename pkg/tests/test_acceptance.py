"""End-to-end acceptance checks, one test per criterion.

Run ``pytest tests/test_acceptance.py`` (add ``-m "not slow"`` to skip the
multi-minute training criteria). A PASS/FAIL line per criterion is printed
in the terminal summary.

Criterion 9 uses real Office+Caltech features when ``SSAN_OFFICE_SOURCE``
and ``SSAN_OFFICE_TARGET`` point at labeled CSV files (Caltech source,
DSLR target pool); otherwise a 10-class synthetic stand-in is written to
disk and pushed through the same file-based protocol.
"""

import io
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

from ssan.checks import GRADCHECK_EPS, GRADCHECK_TOL, run_gradcheck
from ssan.cli import dataset_for, main, parse_args, run_experiment
from ssan.data import (SynthSpec, save_feature_csv, standardize_dataset, synth_generate,
                       write_task_csvs)
from ssan.eval import welch_ttest
from ssan.losses import compute_soft_labels, domain_loss, esa_loss, supervised_loss
from ssan.model import predict_source
from ssan.numerics import Tape
from ssan.semantics import CentroidSet, refine_pseudo_labels, triplet_centroids
from ssan.training import TrainConfig, new_model, train

JOBS = os.cpu_count() or 1


def test_criterion_1_gradient_correctness(criterion):
    with criterion(1, "gradcheck of every loss builder < 1e-4", 30) as info:
        errors = run_gradcheck(0, GRADCHECK_EPS)
        info["note"] = f"max {max(errors.values()):.2e}"
        assert set(errors) == {"supervised", "soft", "isc", "esa", "domain", "objective"}
        for name, err in errors.items():
            assert err < GRADCHECK_TOL, f"{name}: {err:.3e}"


def test_criterion_2_analytic_losses(criterion):
    with criterion(2, "analytic loss oracles", 1):
        t = Tape()
        assert abs(supervised_loss(t, t.lift(np.zeros((4, 2))), [0, 1, 0, 1]).item()
                   - math.log(2)) <= 1e-12
        trip = triplet_centroids(t, t.lift(np.array([[1.0, 0.0]])), [0],
                                 t.lift(np.array([[0.0, 0.0]])), [0], 1)
        assert abs(esa_loss(t, trip).item() - 1.5) <= 1e-12
        half = t.lift(np.full((5, 1), 0.5))
        assert abs(domain_loss(t, half, t.lift(np.full((3, 1), 0.5))).item()
                   - 2 * math.log(0.5)) <= 1e-12


def _brute_assign(logits, Z, mu, defined):
    out = []
    for row, z in zip(logits, Z):
        nn = max(range(len(row)), key=lambda k: (row[k], -k))
        best, gs = -math.inf, -1
        for k, (m, ok) in enumerate(zip(mu, defined)):
            if not ok:
                continue
            nz, nm = math.sqrt(sum(v * v for v in z)), math.sqrt(sum(v * v for v in m))
            s = -1.0 if nz < 1e-12 or nm < 1e-12 else sum(a * b for a, b in zip(z, m)) / (nz * nm)
            if s > best:
                best, gs = s, k
        out.append(nn if nn == gs else -1)
    return np.array(out)


def test_criterion_3_consensus_oracle(criterion):
    with criterion(3, "consensus refinement equals brute force (200 x 20 seeds)", 10):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            k, d = 6, 8
            mu = rng.normal(size=(k, d))
            defined = np.ones(k, bool)
            Z = rng.normal(size=(200, d))
            logits = Z @ mu.T + rng.normal(scale=2.0, size=(200, k))
            a = refine_pseudo_labels(logits, Z, CentroidSet(mu, defined))
            expect = _brute_assign(logits.tolist(), Z.tolist(), mu.tolist(), defined)
            np.testing.assert_array_equal(a.assigned, expect)
            np.testing.assert_array_equal(a.selected, expect >= 0)


@pytest.mark.slow
def test_criterion_4_refinement_benefit(criterion):
    with criterion(4, "selected pseudo-labels beat NN-only labels at epoch 100", 300) as info:
        spec = parse_args(["train", "--synthetic", "--epochs", "100"])
        pseudo, nn = [], []
        for seed in range(10):
            ds = dataset_for(spec, seed)
            last = train(ds, replace(spec.config, seed=seed)).history[-1]
            assert last.epoch == 99
            pseudo.append(last.pseudo_accuracy)
            nn.append(last.nn_accuracy)
        info["note"] = f"selected {np.mean(pseudo):.4f} vs NN {np.mean(nn):.4f}"
        assert np.mean(pseudo) >= np.mean(nn)


@pytest.mark.slow
def test_criterion_5_ablation_ordering(criterion, tmp_path):
    with criterion(5, "full SSAN >= ablations and >= NNt + 5 points (10 seeds)", 1800) as info:
        abl = parse_args(["ablate", "--synthetic", "--reps", "10", "--jobs", str(JOBS),
                          "--out", str(tmp_path / "ablate")])
        base = parse_args(["baseline", "--synthetic", "--reps", "10", "--jobs", str(JOBS),
                           "--out", str(tmp_path / "nnt")])
        assert run_experiment(abl, io.StringIO()) == 0
        assert run_experiment(base, io.StringIO()) == 0
        rows = json.loads((tmp_path / "ablate" / "aggregate.json").read_text())["rows"]
        means = {r["variant"]: r["mean"] for r in rows}
        nnt = json.loads((tmp_path / "nnt" / "aggregate.json").read_text())["rows"][0]["mean"]
        info["note"] = ", ".join(f"{k} {100 * v:.2f}" for k, v in means.items()) + \
            f", NNt {100 * nnt:.2f}"
        failures = [f"full < {v}" for v in ("alpha=0", "beta=0", "w/o T", "w/o GS")
                    if means["full"] < means[v]]
        if means["full"] - nnt < 0.05:
            failures.append(f"full - NNt = {100 * (means['full'] - nnt):.2f} points < 5")
        assert not failures, "; ".join(failures)


def test_criterion_6_welch_reference(criterion):
    with criterion(6, "Welch p-value matches reference within 1e-6", 1) as info:
        r = welch_ttest([0.90, 0.91, 0.92, 0.93, 0.94], [0.80, 0.81, 0.82, 0.83, 0.84])
        info["note"] = f"p={r.p:.6e}"
        # reference value from an independent statistics package (Welch, two-sided)
        assert abs(r.p - 8.488181527628469e-06) < 1e-6
        assert welch_ttest([0.5, 0.7, 0.9], [0.5, 0.7, 0.9]).p == 1.0


@pytest.mark.slow
def test_criterion_7_determinism(criterion, tmp_path):
    with criterion(7, "identical train invocations give byte-identical reports", 300):
        reports = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", "--synthetic", "--seed", "5", "--out", str(out)]) == 0
            d = json.loads((out / "run_5.json").read_text())
            d.pop("timing")
            reports.append(json.dumps(d, sort_keys=True).encode())
            for f in ("aggregate.json", "histograms.csv", "pseudolabel_stats.csv"):
                reports.append((out / f).read_bytes())
        half = len(reports) // 2
        assert reports[:half] == reports[half:]


def test_criterion_8_soft_label_properties(criterion):
    with criterion(8, "soft-label rows: sums, T=1e6 uniformity, T 1->5 smoothing (50 models)"):
        ds = standardize_dataset(synth_generate(SynthSpec()).dataset)
        k = ds.n_classes
        for seed in range(50):
            logits = predict_source(new_model(ds, TrainConfig(seed=seed)), ds.X_S)
            q1 = compute_soft_labels(logits, ds.Y_S, 1.0).q
            q5 = compute_soft_labels(logits, ds.Y_S, 5.0).q
            qinf = compute_soft_labels(logits, ds.Y_S, 1e6).q
            for q in (q1, q5, qinf):
                assert np.abs(q.sum(axis=1) - 1.0).max() <= 1e-9
            assert np.abs(qinf - 1.0 / k).max() <= 1e-6
            assert (q5.max(axis=1) <= q1.max(axis=1)).all()


@pytest.mark.slow
def test_criterion_9_office_caltech_protocol(criterion, tmp_path):
    src, tgt = os.environ.get("SSAN_OFFICE_SOURCE"), os.environ.get("SSAN_OFFICE_TARGET")
    label = "C->D on supplied features" if src and tgt else "C->D protocol on a 10-class stand-in"
    with criterion(9, label) as info:
        if not (src and tgt):
            task = synth_generate(SynthSpec(n_classes=10, d_s=48, d_t=32, per_class=15, seed=11))
            paths = write_task_csvs(task.dataset, tmp_path / "data")
            src = str(paths["source"])
            tgt = str(tmp_path / "data" / "target_pool.csv")
            save_feature_csv(tgt, task.target_pool_X, task.target_pool_Y)
        out = tmp_path / "runs"
        code = main(["train", "--source", src, "--target-pool", tgt, "--m", "3", "--reps", "5",
                     "--jobs", str(JOBS), "--out", str(out)])
        assert code == 0
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["schema"] == "ssan.aggregate/1"
        row = agg["rows"][0]
        assert row["n"] >= 5 and row["std"] >= 0 and 0 <= row["mean"] <= 1
        info["note"] = f"{100 * row['mean']:.2f} +- {100 * row['std']:.2f} over {row['n']} splits"
        for seed in row["seeds"]:
            run = json.loads((out / f"run_{seed}.json").read_text())
            assert run["schema"] == "ssan.run/1"
            assert {"task", "seed", "config", "accuracy", "epochs", "timing"} <= set(run)
            assert run["config"]["m"] == 3 and 0 <= run["accuracy"] <= 1
            assert len(run["epochs"]) == run["config"]["train"]["epochs"]
        assert (out / "aggregate.csv").read_text().startswith("# config:")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
