import math

import numpy as np
import pytest

from binauralkit.errors import DegenerateSourceError, GeometryError, StorageError
from binauralkit.scene import (
    MAX_AUTO_ORDER,
    RoomSpec,
    SamplingRanges,
    SceneSpec,
    SourcePlacement,
    auto_max_order,
    compute_rirs,
    eyring_rt60,
    image_method_rir,
    image_sources,
    mix_scene,
    rt60_to_reflection,
    sample_scene,
    transfer_capture,
    transfer_function,
    uca_geometry,
    validate_scene,
)
from binauralkit.spectral import StftConfig, stft

fs = 16000
room = RoomSpec(length=4.0, width=5.0, height=3.0, rt60=0.4)


def placed(azimuth, distance, center=(2.0, 2.5, 1.5)):
    rad = math.radians(azimuth)
    position = (
        center[0] + distance * math.cos(rad),
        center[1] + distance * math.sin(rad),
        center[2],
    )
    return SourcePlacement(azimuth, distance, position)


def small_scene(noises=(), snr_db=0.0, rt60=0.4):
    return SceneSpec(
        room=RoomSpec(length=4.0, width=5.0, height=3.0, rt60=rt60),
        array=uca_geometry(),
        array_center=(2.0, 2.5, 1.5),
        target=placed(30.0, 1.0),
        noises=tuple(noises),
        snr_db=snr_db,
        seed=3,
        scene_id="scene_0000",
    )


def test_uca_geometry():
    array = uca_geometry(6, 0.08)
    positions = array.positions()

    assert array.num_mics == 6
    np.testing.assert_allclose(positions[0], [0.04, 0.0, 0.0])
    np.testing.assert_allclose(np.linalg.norm(positions, axis=1), 0.04)
    np.testing.assert_allclose(positions[:, 2], 0.0)

    with pytest.raises(GeometryError):
        uca_geometry(0)


def test_eyring_inversion():
    beta = rt60_to_reflection(0.5, room)
    assert 0 < beta < 1
    assert eyring_rt60(beta, room) == pytest.approx(0.5, rel=1e-12)

    # the same RT60 in a larger room needs more absorption
    large = RoomSpec(length=10.0, width=10.0, height=4.0, rt60=0.5)
    small = RoomSpec(length=3.0, width=3.0, height=2.5, rt60=0.5)
    assert rt60_to_reflection(0.5, large) < rt60_to_reflection(0.5, small)

    # a longer reverberation time reflects more
    assert rt60_to_reflection(0.7, room) > rt60_to_reflection(0.2, room)

    with pytest.raises(GeometryError):
        rt60_to_reflection(0.0, room)
    with pytest.raises(GeometryError):
        rt60_to_reflection(-1.0, room)


def test_image_sources_direct_only():
    src, mic = (1.0, 2.0, 1.5), (3.0, 2.0, 1.5)
    delays, gains = image_sources(room, src, mic, 0, fs)

    assert len(delays) == 1
    assert delays[0] == pytest.approx(2.0 / 343.0 * fs)
    assert gains[0] == pytest.approx(1 / (4 * np.pi * 2.0))

    with pytest.raises(GeometryError):
        image_sources(room, src, mic, -1, fs)
    with pytest.raises(GeometryError):
        image_sources(room, (5.0, 2.0, 1.5), mic, 0, fs)


def test_image_sources_first_order():
    src, mic = (1.0, 2.0, 1.5), (3.0, 2.0, 1.5)
    delays, gains = image_sources(room, src, mic, 1, fs, reflection=0.5)

    # direct path plus one image per wall
    assert len(delays) == 7
    distances = delays / fs * 343.0
    assert np.min(distances) == pytest.approx(2.0)
    # mirrored in x = 0 and in x = 4, both 4 m away
    assert np.sum(np.isclose(distances, 4.0)) == 2

    # one reflection each, so beta times spherical spreading
    reflected = ~np.isclose(distances, 2.0)
    assert np.sum(reflected) == 6
    np.testing.assert_allclose(gains[reflected] * 4 * np.pi * distances[reflected], 0.5)


def test_image_method_rir_peak():
    src, mic = (1.0, 2.0, 1.5), (3.0, 2.0, 1.5)
    rir = image_method_rir(room, src, mic, 0, fs)
    delays, gains = image_sources(room, src, mic, 0, fs)

    assert int(np.argmax(np.abs(rir))) == int(round(delays[0]))
    assert 0.6 * gains[0] <= np.max(np.abs(rir)) <= gains[0] * 1.0001
    assert image_method_rir(room, src, mic, 0, fs, length=50).shape == (50,)


def test_auto_max_order():
    order = auto_max_order(room)
    assert 1 <= order <= MAX_AUTO_ORDER

    live = RoomSpec(length=4.0, width=5.0, height=3.0, rt60=0.7)
    dry = RoomSpec(length=4.0, width=5.0, height=3.0, rt60=0.2)
    assert auto_max_order(live) >= auto_max_order(dry)
    assert auto_max_order(room, reflection=0.0) == 1


def test_sample_scene():
    ranges = SamplingRanges()
    for seed in range(100):
        spec = sample_scene(seed, ranges)
        assert validate_scene(spec, ranges) == []
        assert 1 <= len(spec.noises) <= 3

    assert sample_scene(7).to_json() == sample_scene(7).to_json()
    assert sample_scene(7).to_json() != sample_scene(8).to_json()


def test_sample_scene_infeasible():
    ranges = SamplingRanges(
        room_length=(2.0, 2.0),
        room_width=(2.0, 2.0),
        max_retries=5,
    )
    with pytest.raises(GeometryError, match="infeasible geometry"):
        sample_scene(0, ranges)

    with pytest.raises(GeometryError):
        SamplingRanges(rt60=(0.7, 0.2))


def test_validate_scene_reports_problems():
    spec = small_scene()
    assert validate_scene(spec) == []

    moved = SceneSpec(
        room=spec.room,
        array=spec.array,
        array_center=spec.array_center,
        target=SourcePlacement(30.0, 1.0, (3.9, 4.9, 1.5)),
        noises=(placed(-45.0, 1.0),),
        snr_db=45.0,
    )
    problems = validate_scene(moved)
    assert any("target closer than the wall margin" in p for p in problems)
    assert any("target position does not match its distance" in p for p in problems)
    assert any(p.startswith("snr") for p in problems)


def test_scene_json():
    spec = small_scene(noises=[placed(-60.0, 1.2)])
    data = spec.to_json()
    assert data["schema_version"] == 1
    assert isinstance(data["array"]["mic_positions"][0], list)
    assert SceneSpec.from_json(data) == spec

    with pytest.raises(StorageError):
        SceneSpec.from_json({**data, "schema_version": 2})
    with pytest.raises(StorageError):
        SceneSpec.from_json({"schema_version": 1})
    with pytest.raises(StorageError):
        SceneSpec.from_json([data])


@pytest.mark.parametrize(
    "section,key,value",
    [
        ("room", "rt60", "long"),
        ("room", "length", None),
        ("target", "azimuth", [30]),
        ("target", "position", [1.0, 2.0]),
        (None, "snr_db", float("nan")),
        (None, "seed", 1.5),
        (None, "array_center", "middle"),
        (None, "noise_wavs", [3]),
    ],
)
def test_scene_json_rejects_bad_fields(section, key, value):
    data = small_scene(noises=[placed(-60.0, 1.2)]).to_json()
    if section is None:
        data[key] = value
    else:
        data[section][key] = value

    with pytest.raises(StorageError, match="Malformed scene manifest"):
        SceneSpec.from_json(data)


def test_mix_scene_snr():
    spec = small_scene(noises=[placed(-60.0, 1.2), placed(80.0, 0.8)], snr_db=10.0)
    rng = np.random.default_rng(0)
    speech = rng.standard_normal(8000)
    noises = [rng.standard_normal(8000), rng.standard_normal(3000)]
    rirs = compute_rirs(spec, fs, max_order=2)

    assert rirs.num_mics == 6
    assert rirs.num_sources == 3
    assert rirs.max_order == 2

    mix = mix_scene(spec, speech, noises, rirs)
    assert mix.capture.shape == (6, 8000)
    np.testing.assert_allclose(mix.capture, mix.clean_image + mix.noise_image)
    snr = 10 * np.log10(
        np.sum(mix.clean_image[0] ** 2) / np.sum(mix.noise_image[0] ** 2),
    )
    assert snr == pytest.approx(10.0, abs=1e-9)


@pytest.mark.parametrize("snr_db", [-5.0, 0.0, 30.0])
def test_mixture_energy_bound(snr_db):
    spec = small_scene(noises=[placed(-60.0, 1.2)], snr_db=snr_db)
    rng = np.random.default_rng(2)
    speech, noise = rng.standard_normal(6000), rng.standard_normal(6000)
    mix = mix_scene(spec, speech, [noise], compute_rirs(spec, fs, max_order=1))

    for m in range(mix.capture.shape[0]):
        bound = np.linalg.norm(mix.clean_image[m]) + np.linalg.norm(mix.noise_image[m])
        assert np.sum(mix.capture[m] ** 2) <= bound**2 * (1 + 1e-12)


def test_mix_scene_degenerate():
    spec = small_scene(noises=[placed(-60.0, 1.2)])
    rirs = compute_rirs(spec, fs, max_order=0)
    speech = np.random.default_rng(1).standard_normal(4000)

    with pytest.raises(DegenerateSourceError):
        mix_scene(spec, np.zeros(4000), [speech], rirs)
    with pytest.raises(DegenerateSourceError):
        mix_scene(spec, speech, [np.zeros(4000)], rirs)
    with pytest.raises(DegenerateSourceError):
        mix_scene(spec, speech, [], rirs)

    clean = mix_scene(small_scene(), speech, [], compute_rirs(small_scene(), fs, 0))
    np.testing.assert_array_equal(clean.capture, clean.clean_image)
    assert not np.any(clean.noise_image)


def test_transfer_capture():
    cfg = StftConfig()
    rirs = compute_rirs(small_scene(), fs, max_order=1)
    speech = np.random.default_rng(2).standard_normal(4000)

    c = transfer_function(rirs.target, cfg)
    assert c.shape == (6, cfg.num_bins)

    capture = transfer_capture(rirs.target, speech, cfg)
    s = stft(speech, cfg)
    np.testing.assert_allclose(capture.data, c[:, :, None] * s[None])
