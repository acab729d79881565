"""Acceptance gate: one test per criterion, slowest fixtures shared.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion with the measured values.
"""

import subprocess
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest

from gru_oracle import net_to_plain, scalar_forward
from test_filters import sort_median_oracle
from test_gru_backward import finite_difference_grads

from star.dsp import DspConfig
from star.emd import emd_decompose, emd_remove_high_freq, imf_condition_gap
from star.filters import (
    MedianConfig,
    analog_prototype_gain_sq,
    design_butterworth,
    frequency_response,
    median_filter,
)
from star.gru import (
    AdamState,
    GruConfig,
    backward_bptt,
    batch_loss,
    evaluate_network,
    init_params,
    network_forward,
    train_step,
)
from star.pipeline import benchmark
from star.quant import (
    CalibrationSet,
    agreement_report,
    fp16_roundtrip,
    quantize_network,
)
from star.synth import SynthConfig, build_dataset, generate_labeled_capture


def _report(criterion: int, text: str) -> None:
    print(f"\nACCEPTANCE {criterion} PASS: {text}")


def test_criterion_1_filter_contracts():
    t0 = time.perf_counter()
    filt = design_butterworth(order=8, cutoff_hz=10.0, sample_rate_hz=100.0)
    dc = abs(frequency_response(filt, 0.0))
    assert abs(dc - 1.0) < 1e-6
    w_c = 2.0 * np.pi * filt.cutoff_hz / filt.sample_rate_hz
    cut = abs(frequency_response(filt, w_c))
    assert abs(cut - 1.0 / np.sqrt(2.0)) < 1e-3
    pole_max = float(np.max(np.abs(filt.poles())))
    assert pole_max < 1.0
    grid = np.linspace(0.0, np.pi, 512, endpoint=False)
    mags = np.abs(frequency_response(filt, grid))
    assert np.all(np.diff(mags) <= 1e-9)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(
        1,
        f"dc={dc:.7f}, |H(w_c)|={cut:.5f}, max|pole|={pole_max:.6f}, "
        f"monotone on 512-grid, {elapsed * 1000:.0f} ms",
    )


def test_criterion_2_analog_attenuation_arithmetic():
    db = 10.0 * np.log10(analog_prototype_gain_sq(8, 2.0))
    expected = -10.0 * np.log10(1.0 + 2**16)
    assert abs(db - expected) < 0.01
    assert abs(db - (-48.16)) < 0.01
    _report(2, f"analog gain at 2*w_c = {db:.4f} dB (expected {expected:.4f} dB)")


def test_criterion_3_median_oracle_1000_series():
    rng = np.random.default_rng(123)
    for trial in range(1000):
        n = int(rng.integers(1, 64))
        k = int(rng.integers(1, 6))
        x = rng.normal(size=n) * float(rng.uniform(0.1, 50.0))
        got = median_filter(x, MedianConfig(k))
        np.testing.assert_array_equal(got, sort_median_oracle(x, k))
    _report(3, "median filter equals the sort oracle on 1000 random series")


def test_criterion_4_emd_contracts():
    rng = np.random.default_rng(321)
    t = np.arange(256) / 100.0
    cases = [rng.normal(size=int(rng.integers(32, 400))) for _ in range(194)]
    cases += [
        np.sin(2 * np.pi * 3.0 * t) + 0.5 * t,
        np.sign(np.sin(2 * np.pi * 2.0 * t)),
        np.cumsum(rng.normal(size=256)),
        np.linspace(-1, 1, 64) ** 3,
        np.sin(2 * np.pi * 5.0 * t) * np.exp(-t),
        np.round(rng.normal(size=128)),
    ]
    assert len(cases) == 200
    worst_recon = 0.0
    n_imfs = 0
    for x in cases:
        d = emd_decompose(x)
        recon = d.residual + sum(d.imfs) if d.imfs else d.residual
        worst_recon = max(worst_recon, float(np.max(np.abs(recon - x))))
        for imf in d.imfs:
            n_imfs += 1
            assert imf_condition_gap(imf) <= 1
    assert worst_recon < 1e-8

    tt = np.arange(400) / 100.0
    hi, lo = np.sin(2 * np.pi * 10.0 * tt), np.sin(2 * np.pi * 1.0 * tt)
    d = emd_decompose(hi + lo)
    c = np.corrcoef(d.imfs[0], hi)[0, 1]
    assert c > 0.95
    _report(
        4,
        f"reconstruction max err {worst_recon:.2e} on 200 inputs, "
        f"IMF condition on all {n_imfs} IMFs, two-tone corr {c:.4f}",
    )


def test_criterion_5_gru_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_fwd = 0.0
    for _ in range(100):
        features = int(rng.integers(1, 6))
        hidden = int(rng.integers(1, 5))
        layers = int(rng.integers(1, 4))
        t_len = int(rng.integers(1, 6))
        net = init_params(
            GruConfig(feature_count=features, hidden=hidden, layers=layers),
            seed=int(rng.integers(0, 2**31)),
            dtype=np.float64,
        )
        tensors = net.tensors()
        for name in tensors:
            tensors[name] = tensors[name] + rng.normal(size=tensors[name].shape) * 0.3
        net = net.with_tensors(tensors)
        window = rng.normal(size=(features, t_len))
        act, pres, _ = network_forward(net, window)
        ref_act, ref_pres = scalar_forward(*net_to_plain(net), window.tolist())
        worst_fwd = max(
            worst_fwd,
            float(np.max(np.abs(act - ref_act))),
            float(np.max(np.abs(pres - ref_pres))),
        )
    assert worst_fwd < 1e-12

    net = init_params(
        GruConfig(feature_count=5, hidden=3, layers=3), seed=3, dtype=np.float64
    )
    windows = rng.normal(size=(2, 5, 4))
    labels = np.array([2, 7])
    loss, d_act, d_pres, trace = batch_loss(net, windows, labels)
    analytic = backward_bptt(net, trace, d_act, d_pres)
    numeric = finite_difference_grads(net, windows, labels, (1.0, 1.0))
    worst_rel = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        rel = np.abs(ana - num) / np.maximum.reduce(
            [np.abs(ana), np.abs(num), np.full_like(num, 1e-6)]
        )
        worst_rel = max(worst_rel, float(rel.max()))
    assert worst_rel <= 1e-4
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report(
        5,
        f"forward vs oracle max err {worst_fwd:.2e} (100 nets), "
        f"bptt vs finite differences max rel err {worst_rel:.2e}, {elapsed:.1f} s",
    )


@pytest.fixture(scope="module")
def trained():
    t0 = time.perf_counter()
    cfg = SynthConfig(seed=7, frames_per_class=16000)
    ds = build_dataset(cfg)
    per_class_train = int(np.bincount(ds.train_labels, minlength=8).min())
    per_class_test = int(np.bincount(ds.test_labels, minlength=8).min())
    assert per_class_train >= 64 and per_class_test >= 16

    net = init_params(GruConfig(), seed=0)
    opt = AdamState(lr=1e-3)
    rng = np.random.default_rng(0)
    n = ds.train_windows.shape[0]
    result = None
    iters = 0
    for it in range(1, 401):
        iters = it
        idx = rng.permutation(n)[:128]
        net, opt, _ = train_step(net, ds.train_windows[idx], ds.train_labels[idx], opt)
        if it >= 100 and it % 25 == 0:
            result = evaluate_network(net, ds.test_windows, ds.test_labels)
            if result["mean"] >= 0.93 and result["presence"] >= 0.99:
                break
    if result is None:
        result = evaluate_network(net, ds.test_windows, ds.test_labels)
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(
        net=net, ds=ds, result=result, elapsed=elapsed, iters=iters
    )


def test_criterion_6_trainability(trained):
    assert trained.result["mean"] >= 0.90
    assert trained.result["presence"] >= 0.97
    assert trained.elapsed < 600.0
    _report(
        6,
        f"mean activity accuracy {100 * trained.result['mean']:.2f}%, "
        f"presence {100 * trained.result['presence']:.2f}% after "
        f"{trained.iters} iterations in {trained.elapsed:.0f} s "
        f"(64 train / 16 test windows per class)",
    )


@pytest.fixture(scope="module")
def quantized(trained):
    calib = CalibrationSet(trained.ds.train_windows[:32])
    return quantize_network(trained.net, calib)


def test_criterion_7_quantization_agreement(trained, quantized):
    report = agreement_report(trained.net, quantized, trained.ds.test_windows)
    assert report.overall_agreement >= 0.95
    assert report.overall_logit_mad <= 0.15
    assert abs(report.storage_ratio - 0.25) <= 0.02
    fp16_report = agreement_report(
        trained.net, fp16_roundtrip(trained.net), trained.ds.test_windows
    )
    assert fp16_report.overall_agreement >= 0.99
    _report(
        7,
        f"int8 agreement {100 * report.overall_agreement:.2f}% "
        f"(logit mad {report.overall_logit_mad:.4f}), "
        f"fp16 agreement {100 * fp16_report.overall_agreement:.2f}%, "
        f"int8/fp32 payload {report.storage_ratio:.3f}",
    )


def test_criterion_8_streaming(trained, quantized):
    capture, _ = generate_labeled_capture(SynthConfig(seed=9, frames_per_class=1000))
    report = benchmark(
        capture, trained.net, int8_model=quantized, min_duration_s=2.0
    )
    assert report.frames_per_s >= 100.0
    assert report.latency_p99_us < 100_000.0
    assert report.int8_cpu_us_per_window <= report.fp32_cpu_us_per_window
    _report(
        8,
        f"{report.frames_per_s:.0f} frames/s, latency p99 "
        f"{report.latency_p99_us / 1000:.1f} ms, int8 cpu "
        f"{report.int8_cpu_us_per_window:.0f} us/window vs fp32 "
        f"{report.fp32_cpu_us_per_window:.0f} us/window",
    )


def _cli_round_trip(workdir):
    workdir.mkdir(parents=True, exist_ok=True)
    env_dir = workdir / "data"
    model = workdir / "model.w"
    qmodel = workdir / "model.q"
    results = workdir / "results.csv"
    results_q = workdir / "results_q.csv"

    def star(*argv):
        proc = subprocess.run(
            [sys.executable, "-m", "star.cli", *argv],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        return proc.stdout

    star("synth", "--seed", "11", "--frames-per-class", "800", "--out", str(env_dir))
    star(
        "train", "--data", str(env_dir), "--out", str(model),
        "--seed", "3", "--hidden", "16", "--iters", "6", "--batch", "16",
    )
    eval_out = star("eval", "--data", str(env_dir), "--model", str(model))
    star(
        "quantize", "--model", str(model), "--data", str(env_dir),
        "--out", str(qmodel), "--calib-windows", "8",
    )
    star(
        "replay", "--capture", str(env_dir / "capture.csv"),
        "--model", str(model), "--out", str(results), "--deterministic",
    )
    star(
        "replay", "--capture", str(env_dir / "capture.csv"),
        "--model", str(qmodel), "--out", str(results_q), "--deterministic",
    )
    return {
        "capture": (env_dir / "capture.csv").read_bytes(),
        "labels": (env_dir / "labels.csv").read_bytes(),
        "model": model.read_bytes(),
        "qmodel": qmodel.read_bytes(),
        "results": results.read_bytes(),
        "results_q": results_q.read_bytes(),
        "eval": eval_out,
    }


def test_criterion_9_cli_round_trip_determinism(tmp_path):
    first = _cli_round_trip(tmp_path / "run1")
    second = _cli_round_trip(tmp_path / "run2")
    for key in first:
        assert first[key] == second[key], f"{key} differs between runs"
    n_results = len(first["results"].decode().strip().splitlines()) - 1
    _report(
        9,
        "synth -> train -> eval -> quantize -> replay reproduced bit-identical "
        f"model files and result streams twice ({n_results} replay results, "
        f"fp32 and int8 paths)",
    )
