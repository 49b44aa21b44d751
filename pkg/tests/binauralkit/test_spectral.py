import numpy as np
import pytest

from binauralkit.errors import SignalError
from binauralkit.spectral import (
    BinauralSpectrogram,
    MultiChannelSpectrogram,
    StftConfig,
    interior_slice,
    istft,
    istft_multichannel,
    spectral_energy,
    stft,
    stft_multichannel,
)

cfg = StftConfig()


def test_config_shapes():
    assert cfg.num_bins == 161
    assert cfg.num_frames(16000) == 99
    assert cfg.num_samples(99) == 16000
    assert cfg.frequencies()[-1] == 8000

    window = cfg.window_array()
    # squared window sums to one at 50% overlap
    np.testing.assert_allclose(window[:160] ** 2 + window[160:] ** 2, 1.0, atol=1e-15)

    with pytest.raises(SignalError):
        StftConfig(frame_len=320, hop=100)
    with pytest.raises(SignalError):
        StftConfig(window="hamming")


def test_round_trip():
    x = np.random.default_rng(0).standard_normal(16000)
    spec = stft(x, cfg)
    assert spec.shape == (161, 99)

    y = istft(spec, cfg)
    assert len(y) == 16000

    interior = interior_slice(spec.shape[1], cfg)
    error = np.sqrt(np.mean((y[interior] - x[interior]) ** 2))
    assert error / np.sqrt(np.mean(x[interior] ** 2)) < 1e-10


def test_input_too_short():
    with pytest.raises(SignalError, match="input too short"):
        stft(np.ones(319), cfg)
    with pytest.raises(SignalError):
        stft(np.ones((2, 400)), cfg)

    # exactly one frame is enough
    assert stft(np.ones(320), cfg).shape == (161, 1)


def test_parseval():
    x = np.random.default_rng(1).standard_normal(16000)
    x[:160] = 0
    x[-160:] = 0
    energy = spectral_energy(stft(x, cfg), cfg)
    assert energy == pytest.approx(np.sum(x**2), rel=1e-10)


def test_multichannel():
    x = np.random.default_rng(2).standard_normal((3, 4000))
    spec = stft_multichannel(x, cfg)
    assert isinstance(spec, MultiChannelSpectrogram)
    assert spec.num_channels == 3
    assert spec.num_frames == cfg.num_frames(4000)
    assert not spec.data.flags.writeable

    y = istft_multichannel(spec)
    interior = interior_slice(spec.num_frames, cfg)
    np.testing.assert_allclose(y[:, interior], x[:, interior], atol=1e-10)

    with pytest.raises(SignalError):
        MultiChannelSpectrogram(np.zeros((2, 100, 5)), cfg)


def test_binaural_spectrogram():
    rng = np.random.default_rng(3)
    left = rng.standard_normal((161, 4)) + 1j * rng.standard_normal((161, 4))
    right = 2 * left
    spec = BinauralSpectrogram(left, right, cfg)

    assert spec.shape == (161, 4)
    swapped = spec.swapped()
    np.testing.assert_array_equal(swapped.left, spec.right)
    np.testing.assert_array_equal(swapped.right, spec.left)
    np.testing.assert_allclose(spec.energy(), 5 * np.abs(left) ** 2)
    assert spec.to_time().shape == (2, cfg.num_samples(4))

    with pytest.raises(SignalError):
        BinauralSpectrogram(left, right[:, :3], cfg)
