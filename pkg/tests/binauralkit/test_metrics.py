import numpy as np
import pytest

from binauralkit.errors import MetricError
from binauralkit.hrtf import render_binaural
from binauralkit.metrics import (
    MetricSettings,
    MetricsReport,
    delta_ild,
    delta_itd,
    evaluate_binaural,
    measure_ild,
    measure_itd,
    snr_bucket,
    spectral_distance,
    summarize,
)
from binauralkit.spectral import BinauralSpectrogram, StftConfig, stft_binaural

cfg = StftConfig()
noise = np.random.default_rng(0).standard_normal(16010)


def test_measure_itd():
    stereo = np.stack([noise[10:], noise[:-10]])
    assert measure_itd(stereo, 16000) == pytest.approx(0.625, abs=0.01)
    assert measure_itd(stereo[::-1], 16000) == -measure_itd(stereo, 16000)

    same = np.stack([noise, noise])
    assert measure_itd(same, 16000) == 0.0

    with pytest.raises(MetricError):
        measure_itd(np.stack([noise, np.zeros_like(noise)]), 16000)
    with pytest.raises(MetricError):
        measure_itd(noise, 16000)


def test_lateral_rendering():
    right_side = render_binaural(noise, -90, cfg).to_time()
    left_side = render_binaural(noise, 90, cfg).to_time()
    front = render_binaural(noise, 0, cfg)

    assert measure_itd(left_side, 16000) == pytest.approx(0.656, abs=0.0625)
    assert measure_itd(right_side, 16000) == pytest.approx(-0.656, abs=0.0625)
    assert measure_itd(front.to_time(), 16000) == 0.0

    assert measure_ild(stft_binaural(left_side, cfg)) > 0
    assert measure_ild(stft_binaural(right_side, cfg)) < 0
    assert measure_ild(front) == 0.0


def test_measure_ild():
    spec = stft_binaural(np.stack([noise, 0.5 * noise]), cfg)
    assert measure_ild(spec) == pytest.approx(6.0206, abs=1e-4)
    assert measure_ild(spec.swapped()) == pytest.approx(-6.0206, abs=1e-4)

    silent = BinauralSpectrogram(np.zeros((161, 3)), np.zeros((161, 3)), cfg)
    with pytest.raises(MetricError):
        measure_ild(silent)


def test_spectral_distance():
    target = render_binaural(noise, 30, cfg)
    louder = BinauralSpectrogram(
        target.left * 10 ** (1 / 20),
        target.right * 10 ** (1 / 20),
        cfg,
    )
    assert spectral_distance(louder, target) == pytest.approx(1.0, abs=1e-9)

    rotated = BinauralSpectrogram(target.left * 1j, -target.right, cfg)
    assert spectral_distance(rotated, target) == pytest.approx(0.0, abs=1e-9)

    silent = BinauralSpectrogram(np.zeros((161, 3)), np.zeros((161, 3)), cfg)
    with pytest.raises(MetricError, match="No active bins"):
        spectral_distance(silent, silent)
    with pytest.raises(MetricError):
        spectral_distance(target, silent)


def test_deltas_are_symmetric():
    a = render_binaural(noise, 20, cfg)
    b = render_binaural(noise, 70, cfg)
    assert delta_ild(a, b) == delta_ild(b, a)
    assert delta_itd(a.to_time(), b.to_time(), 16000) == pytest.approx(
        delta_itd(b.to_time(), a.to_time(), 16000),
    )

    # swapping the ears doubles the interaural time difference
    lateral = render_binaural(noise, 90, cfg)
    mirrored = delta_itd(lateral.to_time(), lateral.swapped().to_time(), 16000)
    assert mirrored == pytest.approx(1.311, abs=0.125)


def test_evaluate_binaural():
    target = render_binaural(noise, 45, cfg).to_time()
    report = evaluate_binaural(
        target,
        target,
        cfg,
        scene_id="scene_0003",
        seed=3,
        snr_db=12.5,
        azimuth=45.0,
    )
    assert report.delta_itd == 0
    assert report.delta_ild == 0
    assert report.sd == 0
    assert report.scene_id == "scene_0003"

    # estimates are cropped to the reference length
    longer = np.concatenate([target, np.ones((2, 500))], axis=1)
    assert evaluate_binaural(longer, target, cfg).sd == 0

    wider = MetricSettings(max_lag_ms=2.0)
    assert evaluate_binaural(target, target, cfg, wider).delta_itd == 0


def test_report():
    report = MetricsReport(0.1, 0.2, 0.3, scene_id="scene_0000", snr_db=5.0)
    assert MetricsReport.from_json(report.to_json()) == report

    with pytest.raises(MetricError):
        MetricsReport(-0.1, 0.2, 0.3)
    with pytest.raises(MetricError):
        MetricsReport(0.1, float("nan"), 0.3)


def test_snr_bucket():
    assert snr_bucket(4.0) == "0"
    assert snr_bucket(5.0) == "0"
    assert snr_bucket(6.0) == "10"
    assert snr_bucket(27.0) == "30"
    assert snr_bucket(-3.0) == "0"
    assert snr_bucket(None) == "n/a"


def test_summarize():
    reports = [
        MetricsReport(0.1, 1.0, 2.0, snr_db=2.0),
        MetricsReport(0.3, 3.0, 4.0, snr_db=4.0),
        MetricsReport(0.2, 2.0, 6.0, snr_db=21.0),
    ]
    summary = summarize(reports)

    assert summary["schema_version"] == 1
    assert summary["overall"]["count"] == 3
    assert summary["overall"]["sd"] == pytest.approx(4.0)
    assert summary["by_snr"]["0"] == {
        "count": 2,
        "delta_itd": pytest.approx(0.2),
        "delta_ild": pytest.approx(2.0),
        "sd": pytest.approx(3.0),
    }
    assert list(summary["by_snr"]) == ["0", "20"]

    with pytest.raises(MetricError):
        summarize([])
