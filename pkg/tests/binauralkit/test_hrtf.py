import numpy as np
import pytest

from binauralkit.audio import write_wav
from binauralkit.errors import GeometryError, StorageError
from binauralkit.hrtf import (
    HrirDatabase,
    HrtfParams,
    head_shadow,
    hrtf_for_azimuth,
    lateral_angle,
    render_binaural,
    woodworth_itd,
)
from binauralkit.spectral import StftConfig

cfg = StftConfig()


def test_woodworth_itd():
    assert woodworth_itd(0) == 0.0
    assert woodworth_itd(90) * 1e3 == pytest.approx(0.6558, abs=1e-4)
    assert woodworth_itd(-90) == -woodworth_itd(90)
    # front/back confusion: 150 degrees sits as far off the median plane as 30
    assert woodworth_itd(150) == pytest.approx(woodworth_itd(30))
    assert lateral_angle(-180) == pytest.approx(0.0)

    wide = HrtfParams(head_radius=0.1)
    assert woodworth_itd(45, wide) > woodworth_itd(45)


def test_frontal_source_is_symmetric():
    hrtf = hrtf_for_azimuth(0, cfg)
    np.testing.assert_array_equal(hrtf.left, hrtf.right)
    assert hrtf.left.shape == (cfg.num_bins,)


def test_mirrored_azimuth_swaps_ears():
    for azimuth in (15.0, 45.0, 90.0, 135.0):
        hrtf = hrtf_for_azimuth(azimuth, cfg)
        mirrored = hrtf_for_azimuth(-azimuth, cfg)
        np.testing.assert_array_equal(mirrored.left, hrtf.right)
        np.testing.assert_array_equal(mirrored.right, hrtf.left)


def test_lateral_source_is_louder_on_its_side():
    hrtf = hrtf_for_azimuth(90, cfg)
    assert np.all(np.abs(hrtf.left) >= np.abs(hrtf.right))
    # no level difference at DC
    assert np.abs(hrtf.left[0]) == pytest.approx(np.abs(hrtf.right[0]))
    assert np.abs(hrtf.left[-1]) > 1.5 * np.abs(hrtf.right[-1])

    # the left ear leads, so its phase advances
    phase = np.angle(hrtf.left[1] / hrtf.right[1])
    expected = 2 * np.pi * cfg.frequencies()[1] * woodworth_itd(90)
    assert phase == pytest.approx(expected)


def test_head_shadow():
    freqs = cfg.frequencies()
    params = HrtfParams()
    facing = head_shadow(freqs, 0, params)
    behind = head_shadow(freqs, 180, params)
    side = head_shadow(freqs, 90, params)

    assert facing[0] == 1
    np.testing.assert_allclose(side, 1.0)
    assert np.all(np.diff(np.abs(facing)) > 0)
    assert np.all(np.diff(np.abs(behind)) < 0)


def test_azimuth_out_of_range():
    with pytest.raises(GeometryError):
        hrtf_for_azimuth(181, cfg)
    with pytest.raises(GeometryError):
        hrtf_for_azimuth(-200, cfg)


def test_render_binaural():
    speech = np.random.default_rng(0).standard_normal(4000)
    spec = render_binaural(speech, 30, cfg)
    assert spec.shape == (cfg.num_bins, cfg.num_frames(4000))

    hrtf = hrtf_for_azimuth(30, cfg)
    same = render_binaural(speech, 0, cfg, hrtf=hrtf)
    np.testing.assert_array_equal(same.left, spec.left)

    with pytest.raises(GeometryError):
        hrtf.apply(np.ones((10, 3)), cfg)


def test_hrir_database(tmp_path):
    impulse = np.zeros((2, 64))
    impulse[0, 0] = 1.0
    impulse[1, 3] = 0.5
    write_wav(tmp_path / "0.wav", impulse, 16000)
    write_wav(tmp_path / "90.wav", impulse[::-1], 16000)
    write_wav(tmp_path / "-90.wav", impulse, 16000)
    (tmp_path / "notes.wav").write_bytes(b"")

    database = HrirDatabase.load(tmp_path, cfg)
    assert sorted(database.responses) == [-90, 0, 90]
    assert database.nearest(80) == 90
    assert database.nearest(350) == 0
    assert database.nearest(-170) == -90

    hrtf = database.hrtf(10, cfg)
    assert hrtf.azimuth == 0
    np.testing.assert_allclose(hrtf.left, 1.0, atol=1e-6)
    np.testing.assert_allclose(np.abs(hrtf.right), 0.5, atol=1e-6)


def test_hrir_database_errors(tmp_path):
    with pytest.raises(StorageError):
        HrirDatabase.load(tmp_path, cfg)

    write_wav(tmp_path / "0.wav", np.zeros((1, 64)), 16000)
    with pytest.raises(StorageError):
        HrirDatabase.load(tmp_path, cfg)

    write_wav(tmp_path / "0.wav", np.zeros((2, 64)), 8000)
    with pytest.raises(StorageError):
        HrirDatabase.load(tmp_path, cfg)
