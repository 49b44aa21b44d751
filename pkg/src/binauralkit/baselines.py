"""Cascaded reference systems: oracle-DOA MVDR + HRTF, and MINT inverse filtering.

Both rely on oracle scene information (direction, target RIRs), which is what
makes their spatialisation exact by construction.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len
from scipy.linalg import convolution_matrix, lstsq
from scipy.signal import fftconvolve

from .errors import SolverError
from .hrtf import HrtfFilter, HrtfParams, hrtf_for_azimuth, render_binaural
from .scene import FRACTIONAL_TAPS, ArrayGeometry, transfer_function
from .spectral import (
    BinauralSpectrogram,
    MultiChannelSpectrogram,
    StftConfig,
    istft,
    stft,
)

DEFAULT_LOADING = 1e-3


@dataclass(frozen=True, eq=False)
class SteeringVector:
    """Per-bin array response, F x M, normalised so the reference mic is 1."""

    d: np.ndarray
    reference: int = 0

    def __post_init__(self):
        if self.d.ndim != 2:
            raise SolverError(f"Steering vector must be F x M, got {self.d.shape}")
        if np.any(np.all(self.d == 0, axis=1)):
            raise SolverError("Steering vector vanishes at some frequency bin")

    @classmethod
    def relative(cls, transfer, reference: int = 0) -> "SteeringVector":
        """Normalise an F x M transfer matrix by its reference channel."""
        transfer = np.asarray(transfer, dtype=np.complex128)
        ref = transfer[:, reference]
        if np.any(ref == 0):
            raise SolverError("Reference channel transfer has a zero")
        d = transfer / ref[:, None]
        d[:, reference] = 1.0
        return cls(d=d, reference=reference)

    @property
    def num_mics(self) -> int:
        return self.d.shape[1]


def steering_plane_wave(
    azimuth: float,
    geometry: ArrayGeometry,
    cfg: StftConfig,
    speed_of_sound: float = 343.0,
) -> SteeringVector:
    """Far-field steering toward azimuth (degrees) in the horizontal plane."""
    rad = math.radians(azimuth)
    direction = np.array([math.cos(rad), math.sin(rad), 0.0])
    # mics closer to the source hear it earlier
    delays = -(geometry.positions() @ direction) / speed_of_sound
    omega = 2 * np.pi * cfg.frequencies()
    return SteeringVector.relative(np.exp(-1j * omega[:, None] * delays[None, :]))


def direct_path(rir: np.ndarray) -> np.ndarray:
    """Keep only the interpolation kernel around the strongest arrival."""
    half = FRACTIONAL_TAPS // 2 + 1
    peak = int(np.argmax(np.abs(rir)))
    out = np.zeros_like(rir)
    start = max(0, peak - half)
    out[start : peak + half] = rir[start : peak + half]
    return out


def steering_from_rir(target_rirs, cfg: StftConfig) -> SteeringVector:
    """Relative transfer of the direct path of the oracle target RIRs (M x L)."""
    direct = np.stack([direct_path(h) for h in np.atleast_2d(target_rirs)])
    return SteeringVector.relative(transfer_function(direct, cfg).T)


@dataclass(frozen=True, eq=False)
class NoiseCovariance:
    R: np.ndarray  # F x M x M
    loading: float = DEFAULT_LOADING


def estimate_noise_covariance(
    noise_spec: MultiChannelSpectrogram,
    loading: float = DEFAULT_LOADING,
) -> NoiseCovariance:
    """R_f = mean_t X X^H + loading * tr(R_f) / M * I.

    Bins where the noise reference is silent fall back to the identity, so a
    noise-free scene reduces to the delay-and-sum solution.
    """
    X = noise_spec.data
    M, _, T = X.shape
    if T < M:
        raise SolverError(
            f"rank-deficient estimate: {T} frames for {M} channels",
        )
    R = np.einsum("mft,nft->fmn", X, X.conj()) / T
    R = 0.5 * (R + np.conj(np.swapaxes(R, 1, 2)))
    power = np.real(np.trace(R, axis1=1, axis2=2)) / M
    R = R + (loading * power)[:, None, None] * np.eye(M)[None]
    R[power <= 0] = np.eye(M)
    return NoiseCovariance(R=R, loading=loading)


def mvdr_weights(steering: SteeringVector, covariance: NoiseCovariance) -> np.ndarray:
    """w = R^-1 d / (d^H R^-1 d) per bin, F x M."""
    R, d = covariance.R, steering.d
    if R.shape[0] != d.shape[0] or R.shape[1] != d.shape[1]:
        raise SolverError(
            f"Covariance {R.shape} does not match steering vector {d.shape}",
        )
    try:
        np.linalg.cholesky(R)
        r_inv_d = np.linalg.solve(R, d[..., None])[..., 0]
    except np.linalg.LinAlgError as e:
        raise SolverError(f"Noise covariance is singular or indefinite: {e}")

    denominator = np.einsum("fm,fm->f", d.conj(), r_inv_d)
    return r_inv_d / denominator[:, None]


def mvdr_beamform(capture: MultiChannelSpectrogram, weights: np.ndarray) -> np.ndarray:
    """Mono estimate w^H X, F x T."""
    return np.einsum("fm,mft->ft", weights.conj(), capture.data)


@dataclass(frozen=True)
class DirectPath:
    """Propagation from the target to the reference mic: delay (samples), gain."""

    delay: float
    gain: float

    @classmethod
    def from_geometry(
        cls,
        source,
        mic,
        fs: int,
        speed_of_sound: float = 343.0,
    ) -> "DirectPath":
        distance = float(np.linalg.norm(np.asarray(source) - np.asarray(mic)))
        return cls(
            delay=distance / speed_of_sound * fs,
            gain=1 / (4 * np.pi * distance),
        )

    def compensate(self, signal) -> np.ndarray:
        """Undo the delay and attenuation, keeping the input length."""
        signal = np.asarray(signal, dtype=np.float64)
        n = next_fast_len(len(signal) + int(math.ceil(self.delay)) + 1)
        spectrum = np.fft.rfft(signal, n=n)
        spectrum *= np.exp(2j * np.pi * np.arange(len(spectrum)) * self.delay / n)
        return np.fft.irfft(spectrum, n=n)[: len(signal)] / self.gain


def lbh_mvdr(
    capture: MultiChannelSpectrogram,
    oracle_azimuth: float,
    oracle_steering: SteeringVector,
    noise_ref: MultiChannelSpectrogram,
    cfg: StftConfig,
    params: HrtfParams = HrtfParams(),
    loading: float = DEFAULT_LOADING,
    compensation: DirectPath | None = None,
    hrtf: HrtfFilter | None = None,
) -> BinauralSpectrogram:
    """Beamform to mono with oracle steering, then apply the oracle-direction HRTF."""
    covariance = estimate_noise_covariance(noise_ref, loading)
    weights = mvdr_weights(oracle_steering, covariance)
    mono = mvdr_beamform(capture, weights)
    if compensation is not None:
        mono = stft(compensation.compensate(istft(mono, cfg)), cfg)
    if hrtf is None:
        hrtf = hrtf_for_azimuth(oracle_azimuth, cfg, params)
    return hrtf.apply(mono, cfg)


@dataclass(frozen=True, eq=False)
class MintResult:
    filters: np.ndarray  # M x filter_len
    delay: int
    residual: float
    equalized: np.ndarray

    def apply(self, capture) -> np.ndarray:
        """Sum of per-mic inverse filtered channels, delay removed, input length."""
        capture = np.atleast_2d(np.asarray(capture, dtype=np.float64))
        length = capture.shape[1]
        summed = sum(fftconvolve(x, g) for x, g in zip(capture, self.filters))
        out = np.zeros(length)
        chunk = summed[self.delay : self.delay + length]
        out[: len(chunk)] = chunk
        return out


def minimal_filter_len(rir_len: int, num_mics: int) -> int:
    """Shortest filter length satisfying M * Lg >= L + Lg - 1."""
    if num_mics < 2:
        raise SolverError("MINT condition violated: at least two channels are needed")
    return max(1, -(-(rir_len - 1) // (num_mics - 1)))


def mint_inverse_filters(
    rirs,
    filter_len: int,
    delay: int | None = None,
    regularization: float = 0.0,
    margin: int = 0,
) -> MintResult:
    """Least-squares filters g_m with sum_m h_m * g_m closest to a delayed impulse."""
    h = np.atleast_2d(np.asarray(rirs, dtype=np.float64))
    num_mics, rir_len = h.shape
    if num_mics < 2:
        raise SolverError("MINT condition violated: at least two channels are needed")
    out_len = rir_len + filter_len - 1
    if filter_len < 1 or num_mics * filter_len < out_len + margin:
        raise SolverError(
            f"MINT condition violated: {num_mics} x {filter_len} taps cannot invert "
            f"{rir_len}-tap responses",
        )

    delay = filter_len // 2 if delay is None else delay
    if not 0 <= delay < out_len:
        raise SolverError(f"Modelling delay {delay} outside [0, {out_len})")

    system = np.hstack(
        [convolution_matrix(h[m], filter_len, mode="full") for m in range(num_mics)],
    )
    target = np.zeros(out_len)
    target[delay] = 1.0

    lhs, rhs = system, target
    if regularization > 0:
        lhs = np.vstack([system, math.sqrt(regularization) * np.eye(system.shape[1])])
        rhs = np.concatenate([target, np.zeros(system.shape[1])])

    solution, *_ = lstsq(lhs, rhs, lapack_driver="gelsy")
    equalized = system @ solution
    return MintResult(
        filters=solution.reshape(num_mics, filter_len),
        delay=delay,
        residual=float(np.linalg.norm(equalized - target)),
        equalized=equalized,
    )


def mif_pipeline(
    capture,
    oracle_rirs,
    azimuth: float,
    cfg: StftConfig,
    params: HrtfParams = HrtfParams(),
    filter_len: int | None = None,
    delay: int | None = None,
    rir_len: int | None = None,
    regularization: float = 0.0,
    hrtf: HrtfFilter | None = None,
) -> BinauralSpectrogram:
    """Dereverberate to mono with MINT, then HRTF-render. Noise is not suppressed."""
    h = np.atleast_2d(np.asarray(oracle_rirs, dtype=np.float64))
    if rir_len:
        h = h[:, :rir_len]
    if not filter_len:
        filter_len = minimal_filter_len(h.shape[1], h.shape[0])

    result = mint_inverse_filters(h, filter_len, delay, regularization)
    estimate = result.apply(capture)
    return render_binaural(estimate, azimuth, cfg, params, hrtf)
