"""Short-time Fourier analysis shared by every other module.

Analysis and synthesis both use a periodic square-root Hann window. At 50%
overlap the squared window sums to one, so overlap-add reconstructs the input
exactly wherever two frames overlap. Frames are taken without padding and the
tail that does not fill a frame is dropped.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .errors import SignalError

WINDOWS = ("sqrt-hann",)


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    frame_len: int = 320
    hop: int = 160
    window: str = "sqrt-hann"

    def __post_init__(self):
        if self.sample_rate <= 0 or self.frame_len <= 0:
            raise SignalError("sample_rate and frame_len must be positive")
        if self.hop * 2 != self.frame_len:
            raise SignalError(
                f"hop must be half of frame_len (got {self.hop} / {self.frame_len})",
            )
        if self.window not in WINDOWS:
            raise SignalError(f"Unsupported window {self.window}")

    @property
    def num_bins(self) -> int:
        return self.frame_len // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return (num_samples - self.frame_len) // self.hop + 1

    def num_samples(self, num_frames: int) -> int:
        return (num_frames - 1) * self.hop + self.frame_len

    def frequencies(self) -> np.ndarray:
        """Bin centre frequencies in Hz."""
        return np.arange(self.num_bins) * self.sample_rate / self.frame_len

    def window_array(self) -> np.ndarray:
        return np.sqrt(get_window("hann", self.frame_len, fftbins=True))


def _frozen(data: np.ndarray) -> np.ndarray:
    data = np.array(data, dtype=np.complex128)
    data.setflags(write=False)
    return data


@dataclass(frozen=True)
class MultiChannelSpectrogram:
    """Complex capture tensor, channels x bins x frames."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 3 or data.shape[0] < 1:
            raise SignalError(f"Expected M x F x T data, got shape {data.shape}")
        if data.shape[1] != self.config.num_bins:
            raise SignalError(
                f"Spectrogram has {data.shape[1]} bins, config expects "
                f"{self.config.num_bins}",
            )
        object.__setattr__(self, "data", data)

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[2]

    def scaled(self, gain: float) -> "MultiChannelSpectrogram":
        return MultiChannelSpectrogram(self.data * gain, self.config)


@dataclass(frozen=True)
class BinauralSpectrogram:
    left: np.ndarray
    right: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        left, right = _frozen(self.left), _frozen(self.right)
        if left.shape != right.shape or left.ndim != 2:
            raise SignalError(
                f"Left {left.shape} and right {right.shape} must be equal F x T",
            )
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def shape(self) -> tuple:
        return self.left.shape

    def swapped(self) -> "BinauralSpectrogram":
        return BinauralSpectrogram(self.right, self.left, self.config)

    def energy(self) -> np.ndarray:
        """Per-bin binaural energy |Y^l|^2 + |Y^r|^2."""
        return np.abs(self.left) ** 2 + np.abs(self.right) ** 2

    def to_time(self) -> np.ndarray:
        return istft_binaural(self)


def stft(signal, cfg: StftConfig) -> np.ndarray:
    """One-sided STFT of a real signal, shape (frame_len // 2 + 1, frames)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise SignalError(f"stft expects a 1-D signal, got shape {x.shape}")
    if x.shape[0] < cfg.frame_len:
        raise SignalError(
            f"input too short: {x.shape[0]} samples < frame of {cfg.frame_len}",
        )
    frames = sliding_window_view(x, cfg.frame_len)[:: cfg.hop]
    return np.fft.rfft(frames * cfg.window_array(), axis=-1).T


def istft(spec, cfg: StftConfig) -> np.ndarray:
    """Overlap-add inverse of stft. Output length is (T - 1) * hop + frame_len."""
    spec = np.array(spec, dtype=np.complex128)
    if spec.ndim != 2 or spec.shape[0] != cfg.num_bins:
        raise SignalError(
            f"Spectrogram shape {spec.shape} does not match {cfg.num_bins} bins",
        )
    # real output requires real DC and Nyquist bins
    spec[0].imag = 0.0
    spec[-1].imag = 0.0

    num_frames = spec.shape[1]
    frames = np.fft.irfft(spec.T, n=cfg.frame_len, axis=-1) * cfg.window_array()
    out = np.zeros(cfg.num_samples(num_frames))
    for t in range(num_frames):
        start = t * cfg.hop
        out[start : start + cfg.frame_len] += frames[t]
    return out


def interior_slice(num_frames: int, cfg: StftConfig) -> slice:
    """Samples covered by two frames, where reconstruction is exact."""
    return slice(cfg.hop, num_frames * cfg.hop)


def spectral_energy(spec, cfg: StftConfig) -> float:
    """Signal energy implied by a one-sided spectrogram.

    With the sqrt-Hann pair, sum(x**2) over the interior equals
    sum_t sum_k c_k |X[k, t]|**2 / frame_len, c_k = 1 at DC and Nyquist, else 2.
    """
    spec = np.asarray(spec)
    weights = np.full(spec.shape[0], 2.0)
    weights[0] = weights[-1] = 1.0
    return float(np.sum(weights[:, None] * np.abs(spec) ** 2) / cfg.frame_len)


def stft_multichannel(samples, cfg: StftConfig) -> MultiChannelSpectrogram:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    return MultiChannelSpectrogram(np.stack([stft(ch, cfg) for ch in samples]), cfg)


def istft_multichannel(spec: MultiChannelSpectrogram) -> np.ndarray:
    return np.stack([istft(ch, spec.config) for ch in spec.data])


def istft_binaural(spec: BinauralSpectrogram) -> np.ndarray:
    return np.stack([istft(spec.left, spec.config), istft(spec.right, spec.config)])


def stft_binaural(stereo, cfg: StftConfig) -> BinauralSpectrogram:
    stereo = np.asarray(stereo, dtype=np.float64)
    if stereo.ndim != 2 or stereo.shape[0] != 2:
        raise SignalError(f"Expected 2 x N stereo samples, got shape {stereo.shape}")
    return BinauralSpectrogram(stft(stereo[0], cfg), stft(stereo[1], cfg), cfg)
