"""Spatial and spectral error measures between binaural signals."""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import correlate, correlation_lags

from .errors import MetricError
from .spectral import BinauralSpectrogram, StftConfig, stft_binaural

SNR_BUCKETS = (0, 10, 20, 30)
ILD_FLOOR = 1e-12
METRIC_NAMES = ("delta_itd", "delta_ild", "sd")


@dataclass(frozen=True)
class MetricSettings:
    max_lag_ms: float = 1.0
    ild_threshold_db: float = -60.0
    sd_floor_db: float = -80.0


@dataclass(frozen=True)
class MetricsReport:
    delta_itd: float  # ms
    delta_ild: float  # dB
    sd: float  # dB
    scene_id: str = ""
    seed: int | None = None
    snr_db: float | None = None
    azimuth: float | None = None

    def __post_init__(self):
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise MetricError(f"{name} must be finite and non-negative: {value}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "MetricsReport":
        return cls(**{k: data.get(k) for k in cls.__dataclass_fields__})


def _lag(reference: np.ndarray, delayed: np.ndarray, max_lag: int) -> float:
    """Delay of `delayed` relative to `reference` in fractional samples."""
    corr = correlate(delayed, reference, mode="full", method="fft")
    lags = correlation_lags(len(delayed), len(reference), mode="full")
    window = np.abs(lags) <= max_lag
    corr, lags = corr[window], lags[window]

    peak = int(np.argmax(corr))
    offset = 0.0
    if 0 < peak < len(corr) - 1:
        before, at, after = corr[peak - 1], corr[peak], corr[peak + 1]
        curvature = before - 2 * at + after
        if curvature < 0:
            offset = 0.5 * (before - after) / curvature
    return float(lags[peak] + offset)


def measure_itd(binaural, sample_rate: int, max_lag_ms: float = 1.0) -> float:
    """Broadband ITD in ms, positive when the right channel lags the left.

    The estimate is averaged over both correlation orders, which makes it exactly
    antisymmetric under a channel swap.
    """
    binaural = np.asarray(binaural, dtype=np.float64)
    if binaural.ndim != 2 or binaural.shape[0] != 2:
        raise MetricError(f"Expected 2 x N stereo samples, got {binaural.shape}")
    left, right = binaural
    if not np.any(left) or not np.any(right):
        raise MetricError("Cannot measure ITD of a silent channel")

    max_lag = max(1, int(round(max_lag_ms * 1e-3 * sample_rate)))
    lag = 0.5 * (_lag(left, right, max_lag) - _lag(right, left, max_lag))
    return 1e3 * lag / sample_rate


def measure_ild(
    binaural: BinauralSpectrogram,
    threshold_db: float = -60.0,
    eps: float = ILD_FLOOR,
) -> float:
    """Energy-weighted mean of the per-bin ILD in dB over bins near the peak."""
    energy = binaural.energy()
    peak = float(np.max(energy)) if energy.size else 0.0
    if peak <= 0:
        raise MetricError("Cannot measure ILD of a silent signal")

    active = energy >= peak * 10 ** (threshold_db / 10)
    per_bin = 20 * (
        np.log10(np.abs(binaural.left) + eps) - np.log10(np.abs(binaural.right) + eps)
    )
    weights = energy[active]
    return float(np.sum(weights * per_bin[active]) / np.sum(weights))


def delta_itd(est, target, sample_rate: int, max_lag_ms: float = 1.0) -> float:
    return abs(
        measure_itd(est, sample_rate, max_lag_ms)
        - measure_itd(target, sample_rate, max_lag_ms),
    )


def delta_ild(
    est: BinauralSpectrogram,
    target: BinauralSpectrogram,
    threshold_db: float = -60.0,
) -> float:
    return abs(measure_ild(est, threshold_db) - measure_ild(target, threshold_db))


def spectral_distance(
    est: BinauralSpectrogram,
    target: BinauralSpectrogram,
    floor_db: float = -80.0,
) -> float:
    """RMS log-magnitude difference in dB over bins where the target is active."""
    if est.shape != target.shape:
        raise MetricError(f"Estimate {est.shape} and target {target.shape} differ")

    est_mag = np.stack([np.abs(est.left), np.abs(est.right)])
    target_mag = np.stack([np.abs(target.left), np.abs(target.right)])
    peak = float(np.max(target_mag)) if target_mag.size else 0.0
    floor = peak * 10 ** (floor_db / 20)
    active = target_mag > floor
    if peak <= 0 or not np.any(active):
        raise MetricError("No active bins in the target")

    difference = 20 * (
        np.log10(np.maximum(est_mag[active], floor))
        - np.log10(np.maximum(target_mag[active], floor))
    )
    return float(np.sqrt(np.mean(difference**2)))


def evaluate_binaural(
    est,
    target,
    cfg: StftConfig,
    settings: MetricSettings = MetricSettings(),
    **metadata,
) -> MetricsReport:
    """Compare two time-domain stereo signals, cropped to the shorter one."""
    est = np.asarray(est, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    length = min(est.shape[-1], target.shape[-1])
    est, target = est[:, :length], target[:, :length]

    est_spec = stft_binaural(est, cfg)
    target_spec = stft_binaural(target, cfg)
    return MetricsReport(
        delta_itd=delta_itd(est, target, cfg.sample_rate, settings.max_lag_ms),
        delta_ild=delta_ild(est_spec, target_spec, settings.ild_threshold_db),
        sd=spectral_distance(est_spec, target_spec, settings.sd_floor_db),
        **metadata,
    )


def snr_bucket(snr_db: float | None) -> str:
    """Nearest nominal SNR bucket as a label, ties go to the lower bucket."""
    if snr_db is None:
        return "n/a"
    return str(min(SNR_BUCKETS, key=lambda b: (abs(b - snr_db), b)))


def _means(reports: list) -> dict:
    means = {"count": len(reports)}
    for name in METRIC_NAMES:
        means[name] = float(np.mean([getattr(r, name) for r in reports]))
    return means


def summarize(reports: list) -> dict:
    """Overall means plus means per SNR bucket."""
    if not reports:
        raise MetricError("No reports to summarize")

    buckets = {}
    for report in reports:
        buckets.setdefault(snr_bucket(report.snr_db), []).append(report)
    return {
        "schema_version": 1,
        "overall": _means(reports),
        "by_snr": {label: _means(group) for label, group in sorted(buckets.items())},
    }
