"""Acceptance suite: one test per criterion, one printed pass/fail line each.

The trained-model fixtures are shared across criteria, so the suite performs
a handful of full training runs and takes several minutes end to end.
"""

import time

import numpy as np
import pytest

from vibrec import modal, recovery, signal_core as sc, synthgen
from vibrec.cli import main as cli_main
from vibrec.nn_engine import gradient_check, load_checkpoint
from vibrec.recovery import ModelVariant, TrainConfig
from vibrec.rng import derive_rng
from vibrec.signal_core import MaskSpec, WindowingConfig

# Training configuration shared by the end-to-end criteria (4, 6, 8, 9).
SEED = 0
MASKED_SENSOR = 6
STRIDE = 3
EPOCHS = 40
LR = 1e-3
LR_DECAY = 0.93

# Model-comparison criterion: same training configuration, several seeds.
ORDERING_SEEDS = (0, 1, 2)
ORDERING_EPOCHS = EPOCHS
ORDERING_LR_DECAY = LR_DECAY


def _report(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num}] {'PASS' if ok else 'FAIL'} — {detail}", flush=True)
    assert ok, f"criterion {num}: {detail}"


def _train_args(out, records, activation=None, extra=()):
    args = [
        "train",
        "--records", str(records),
        "--out", str(out),
        "--variant", "cnn_a",
        "--mask", str(MASKED_SENSOR),
        "--ws", str(STRIDE),
        "--epochs", str(EPOCHS),
        "--seed", str(SEED),
        "--lr-decay", str(LR_DECAY),
    ]
    if activation is not None:
        args += ["--activation", activation]
    return args + list(extra)


def _read_convergence(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {
        "train_rmse": rows[:, 1],
        "val_rmse": rows[:, 3],
    }


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    assert cli_main(["generate", "--out", str(out), "--seed", str(SEED)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("trained")
    t0 = time.time()
    rc = cli_main(_train_args(out, dataset / "records.csv"))
    assert rc == 0
    return {"dir": out, "seconds": time.time() - t0}


def test_criterion_1_architecture_size_chain():
    t0 = time.time()
    model = recovery.build_model(ModelVariant("cnn_a"), 30)
    chain = model.shape_chain((30, 30, 1))
    spatial = [s[0] for s in chain if len(s) == 3]
    channels = [s[2] for s in chain if len(s) == 3]
    ok = (
        spatial == [30, 14, 13, 13, 6, 5, 5, 2, 1, 1]
        and channels == [1, 32, 32, 32, 64, 64, 64, 128, 128, 128]
        and chain[-2] == (128,)
        and chain[-1] == (30,)
    )
    elapsed = time.time() - t0
    _report(1, ok and elapsed < 1.0,
            f"size chain {spatial}, channels {sorted(set(channels))}, "
            f"{elapsed:.2f}s")


def test_criterion_2_gradients_match_finite_differences():
    t0 = time.time()
    worst_overall = 0.0
    variants = [("cnn_a", 30), ("cnn_b", 30), ("cnn_c", 60), ("nn_baseline", 30)]
    for seed in range(20):
        rng = derive_rng(seed, "gradcheck")
        x = rng.random((30, 30, 1))
        for kind, out_dim in variants:
            model = recovery.build_model(ModelVariant(kind), 30, seed=seed)
            target = rng.random(out_dim)
            worst, _ = gradient_check(
                model, x, target, samples_per_param=4, rng=rng
            )
            worst_overall = max(worst_overall, worst)
    elapsed = time.time() - t0
    _report(2, worst_overall < 1e-4 and elapsed < 60.0,
            f"max relative error {worst_overall:.2e} over 20 seeds x 4 models "
            f"(conv/pool/dropout/flatten/dense all exercised), {elapsed:.1f}s")


def test_criterion_3_window_count_vs_offset_enumeration():
    t0 = time.time()
    mismatches = 0
    for nt in range(1, 201):
        for wl in range(1, min(nt, 50) + 1):
            for ws in range(1, 21):
                got = sc.window_count(nt, WindowingConfig(wl, ws))
                # independent oracle: count of valid start offsets
                expected = len(range(0, nt - wl + 1, ws))
                mismatches += got != expected
    paper_geometry = sc.window_count(2048, WindowingConfig(30, 6))
    elapsed = time.time() - t0
    _report(3, mismatches == 0 and paper_geometry == 337 and elapsed < 1.0,
            f"{mismatches} mismatches over exhaustive small geometries, "
            f"(2048,30,6) -> {paper_geometry}, {elapsed:.2f}s")


def test_criterion_4_recovery_beats_thresholds(dataset, trained):
    log = _read_convergence(trained["dir"] / "convergence.csv")
    val_rmse = log["val_rmse"][-1]

    records = sc.load_records(str(dataset / "records.csv"))
    norm = sc.normalize(records)
    windows = sc.extract_windows(
        norm, WindowingConfig(30, STRIDE), MaskSpec([MASKED_SENSOR])
    )
    train_set, val_set = sc.split_train_validation(windows, 0.8, SEED)
    baseline = recovery.mean_predictor_rmse(train_set, val_set)

    ok = (
        val_rmse <= 0.05
        and val_rmse <= 0.5 * baseline
        and trained["seconds"] <= 900.0
    )
    _report(4, ok,
            f"val RMSE {val_rmse:.4f} (<= 0.05, <= 0.5 x baseline "
            f"{baseline:.4f}), trained in {trained['seconds']:.0f}s")


def test_criterion_5_model_ordering(dataset):
    records = sc.load_records(str(dataset / "records.csv"))
    norm = sc.normalize(records)
    windows = sc.extract_windows(
        norm, WindowingConfig(30, STRIDE), MaskSpec([MASKED_SENSOR])
    )
    passes, details = 0, []
    for seed in ORDERING_SEEDS:
        train_set, val_set = sc.split_train_validation(windows, 0.8, seed)
        scores = {}
        for kind in ("cnn_a", "cnn_b", "nn_baseline"):
            model = recovery.build_model(ModelVariant(kind), 30, seed=seed)
            cfg = TrainConfig(
                epochs=ORDERING_EPOCHS,
                seed=seed,
                learning_rate=LR,
                lr_decay=ORDERING_LR_DECAY,
            )
            _, log = recovery.train(model, train_set, val_set, cfg)
            scores[kind] = log.val_rmse[-1]
        holds = (
            scores["cnn_a"] <= 1.05 * scores["cnn_b"]
            and scores["cnn_a"] <= 1.05 * scores["nn_baseline"]
        )
        passes += holds
        details.append(
            f"seed {seed}: a={scores['cnn_a']:.4f} b={scores['cnn_b']:.4f} "
            f"nn={scores['nn_baseline']:.4f} {'ok' if holds else 'violated'}"
        )
    majority = passes * 2 > len(ORDERING_SEEDS)
    _report(5, majority,
            f"{passes}/{len(ORDERING_SEEDS)} seeds keep cnn_a within 5% of "
            f"cnn_b and nn_baseline ({'; '.join(details)})")


def _splice_recovered(dataset_dir, checkpoint_path):
    """Recover the masked sensor over back-to-back windows and splice the
    result into a copy of the record. Returns (reference, recovered)."""
    records = sc.load_records(str(dataset_dir / "records.csv"))
    norm = sc.normalize(records)
    model, _ = load_checkpoint(str(checkpoint_path))
    mask = MaskSpec([MASKED_SENSOR])
    wl = records.n_sensors
    usable = (records.n_samples // wl) * wl
    column = np.empty(usable)
    for start in range(0, usable, wl):
        out = recovery.recover(model, norm.data[start:start + wl], norm.scale, mask)
        column[start:start + wl] = out[MASKED_SENSOR]
    reference = sc.RecordMatrix(records.data[:usable], records.dt)
    spliced = records.data[:usable].copy()
    spliced[:, MASKED_SENSOR] = column
    return reference, sc.RecordMatrix(spliced, records.dt)


def test_criterion_6_modal_fidelity_of_recovery(dataset, trained):
    t0 = time.time()
    reference, recovered = _splice_recovered(
        dataset, trained["dir"] / "checkpoint.json"
    )
    report = modal.compare_modal(reference, recovered, n_modes=4)
    elapsed = time.time() - t0
    diag = np.diag(report.mac_matrix)
    off = report.mac_matrix[~np.eye(4, dtype=bool)]
    ok = (
        len(report.errors_pct) == 4
        and not report.warnings
        and np.all(np.abs(report.errors_pct) <= 2.0)
        and np.all(diag > 0.9)
        and np.all(off < 0.5)
        and elapsed <= 60.0
    )
    _report(6, ok,
            f"freq errors {np.round(report.errors_pct, 3).tolist()}%, "
            f"MAC diag {np.round(diag, 3).tolist()}, max off-diag "
            f"{off.max():.3f}, {elapsed:.1f}s after training")


def test_criterion_7_fdd_recovers_injected_modes():
    t0 = time.time()
    spec = synthgen.default_structure(seed=SEED)
    _, truth = synthgen.generate(spec, 64.0, 128.0)
    result = modal.identify_modes(truth.clean, n_modes=4)
    injected = sorted(spec.modes, key=lambda m: m.frequency_hz)
    bin_width = 128.0 / 512
    ok = len(result.natural_frequencies) == 4
    devs, macs = [], []
    if ok:
        for mode, f_got, shape_got in zip(
            injected, result.natural_frequencies, result.mode_shapes
        ):
            devs.append(abs(f_got - mode.frequency_hz))
            macs.append(modal.mac(shape_got, mode.shape))
        ok = max(devs) <= bin_width and min(macs) > 0.95
    elapsed = time.time() - t0
    _report(7, ok and elapsed < 30.0,
            f"freq deviations {np.round(devs, 3).tolist()} Hz "
            f"(bin {bin_width}), MAC {np.round(macs, 3).tolist()}, "
            f"{elapsed:.1f}s")


def test_criterion_8_activation_study_converges(dataset, trained, tmp_path):
    logs = {"elu": _read_convergence(trained["dir"] / "convergence.csv")}
    for act in ("relu", "leaky_relu"):
        out = tmp_path / act
        rc = cli_main(
            _train_args(out, dataset / "records.csv", activation=act)
        )
        assert rc == 0
        logs[act] = _read_convergence(out / "convergence.csv")
    details, ok = [], True
    for act, log in logs.items():
        series = log["train_rmse"]
        w = min(100, len(series) // 2)
        head, tail = series[:w].mean(), series[-w:].mean()
        converged = np.all(np.isfinite(series)) and tail < head
        ok = ok and converged
        details.append(f"{act}: {head:.4f} -> {tail:.4f}")
    _report(8, ok,
            "trailing-window train RMSE decreased for all of "
            + ", ".join(details))


def test_criterion_9_reruns_are_byte_identical(dataset, trained, tmp_path):
    rerun = tmp_path / "train_rerun"
    rc = cli_main(_train_args(rerun, dataset / "records.csv"))
    assert rc == 0
    train_same = all(
        (rerun / name).read_bytes() == (trained["dir"] / name).read_bytes()
        for name in ("convergence.csv", "checkpoint.json")
    )

    reports = []
    for name in ("modal_a.csv", "modal_b.csv"):
        reference, recovered = _splice_recovered(
            dataset, trained["dir"] / "checkpoint.json"
        )
        report = modal.compare_modal(reference, recovered, n_modes=4)
        path = tmp_path / name
        report.write_csv(str(path))
        reports.append(path.read_bytes())
    modal_same = reports[0] == reports[1]
    _report(9, train_same and modal_same,
            f"training rerun byte-identical: {train_same}; "
            f"modal report rerun byte-identical: {modal_same}")
