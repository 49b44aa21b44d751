"""Spherical-head HRTFs and ground-truth binaural rendering.

Ears sit at +90 (left) and -90 (right) degrees in the horizontal plane.
Interaural delay follows Woodworth's formula and is split as opposite half
delays between the ears. Level differences come from the magnitude of a
first-order head-shadow filter per ear, applied with zero phase so the only
interaural delay is the Woodworth one.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import read_wav
from .errors import GeometryError, StorageError
from .spectral import BinauralSpectrogram, StftConfig, stft


@dataclass(frozen=True)
class HrtfParams:
    head_radius: float = 0.0875
    speed_of_sound: float = 343.0


@dataclass(frozen=True, eq=False)
class HrtfFilter:
    left: np.ndarray  # F complex responses
    right: np.ndarray
    azimuth: float
    params: HrtfParams = HrtfParams()

    def apply(self, spectrum, cfg: StftConfig) -> BinauralSpectrogram:
        """Y = a_f S for a mono spectrogram S (F x T)."""
        spectrum = np.asarray(spectrum)
        if spectrum.shape[0] != self.left.shape[0]:
            raise GeometryError(
                f"HRTF has {self.left.shape[0]} bins, spectrum {spectrum.shape[0]}",
            )
        return BinauralSpectrogram(
            self.left[:, None] * spectrum,
            self.right[:, None] * spectrum,
            cfg,
        )


def lateral_angle(azimuth: float) -> float:
    """Angle from the median plane in radians, folded front/back into [-pi/2, pi/2]."""
    if abs(azimuth) > 90:
        azimuth = math.copysign(180 - abs(azimuth), azimuth)
    return math.radians(azimuth)


def woodworth_itd(azimuth: float, params: HrtfParams = HrtfParams()) -> float:
    """Interaural time difference in seconds, positive when the left ear leads."""
    theta = lateral_angle(azimuth)
    return params.head_radius / params.speed_of_sound * (theta + math.sin(theta))


def _ear_angle(azimuth: float, ear: float) -> float:
    angle = abs(azimuth - ear)
    return 360 - angle if angle > 180 else angle


def head_shadow(freqs, ear_angle: float, params: HrtfParams) -> np.ndarray:
    """(1 + j a w / 2w0) / (1 + j w / 2w0) with a = 1 + cos(ear angle), w0 = c / r."""
    alpha = 1 + math.cos(math.radians(ear_angle))
    omega0 = params.speed_of_sound / params.head_radius
    ratio = 2 * np.pi * np.asarray(freqs) / (2 * omega0)
    return (1 + 1j * alpha * ratio) / (1 + 1j * ratio)


def hrtf_for_azimuth(
    azimuth: float,
    cfg: StftConfig,
    params: HrtfParams = HrtfParams(),
) -> HrtfFilter:
    if not -180 <= azimuth <= 180:
        raise GeometryError(f"Azimuth {azimuth} outside [-180, 180] degrees")

    freqs = cfg.frequencies()
    phase = 2 * np.pi * freqs * woodworth_itd(azimuth, params) / 2
    left_gain = np.abs(head_shadow(freqs, _ear_angle(azimuth, 90), params))
    right_gain = np.abs(head_shadow(freqs, _ear_angle(azimuth, -90), params))
    left = left_gain * np.exp(1j * phase)
    right = right_gain * np.exp(-1j * phase)
    return HrtfFilter(left=left, right=right, azimuth=azimuth, params=params)


def render_binaural(
    clean_speech,
    azimuth: float,
    cfg: StftConfig,
    params: HrtfParams = HrtfParams(),
    hrtf: HrtfFilter | None = None,
) -> BinauralSpectrogram:
    spectrum = stft(np.asarray(clean_speech, dtype=np.float64), cfg)
    if hrtf is None:
        hrtf = hrtf_for_azimuth(azimuth, cfg, params)
    return hrtf.apply(spectrum, cfg)


class HrirDatabase:
    """Measured head-related impulse responses, one stereo WAV per azimuth."""

    def __init__(self, responses: dict, sample_rate: int) -> None:
        self.responses = responses
        self.sample_rate = sample_rate

    @classmethod
    def load(cls, directory: Path, cfg: StftConfig) -> "HrirDatabase":
        directory = Path(directory)
        responses = {}
        for path in sorted(directory.glob("*.wav")):
            try:
                azimuth = int(path.stem)
            except ValueError:
                continue
            data = read_wav(path, cfg.sample_rate)
            if data.shape[0] != 2:
                raise StorageError(f"{path} must be a stereo HRIR pair")
            responses[azimuth] = data

        if not responses:
            raise StorageError(f"No <azimuth>.wav HRIR files found in {directory}")
        return cls(responses, cfg.sample_rate)

    def nearest(self, azimuth: float) -> int:
        def distance(candidate):
            gap = abs(candidate - azimuth) % 360
            return (min(gap, 360 - gap), candidate)

        return min(self.responses, key=distance)

    def hrtf(self, azimuth: float, cfg: StftConfig) -> HrtfFilter:
        measured = self.nearest(azimuth)
        hrir = self.responses[measured][:, : cfg.frame_len]
        spectra = np.fft.rfft(hrir, n=cfg.frame_len, axis=-1)
        return HrtfFilter(left=spectra[0], right=spectra[1], azimuth=float(measured))
