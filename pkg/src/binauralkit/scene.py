"""Room, array and source sampling plus image-method room impulse responses.

Coordinates are in metres with the origin in a room corner. The array faces
+x, and azimuth is measured counter-clockwise from there, so positive azimuth
is to the left of the array.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateSourceError, GeometryError, StorageError
from .spectral import MultiChannelSpectrogram, StftConfig, stft

SCHEMA_VERSION = 1
SPEED_OF_SOUND = 343.0
FRACTIONAL_TAPS = 81
MAX_AUTO_ORDER = 30
TAIL_ATTENUATION_DB = 60.0


def eyring_constant(c: float = SPEED_OF_SOUND) -> float:
    """24 ln(10) / c, about 0.161 s/m at 343 m/s."""
    return 24.0 * math.log(10.0) / c


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: tuple  # ((x, y, z), ...) relative to the array centre
    layout: str = "uca"
    diameter: float = 0.08

    @property
    def num_mics(self) -> int:
        return len(self.mic_positions)

    def positions(self) -> np.ndarray:
        return np.array(self.mic_positions, dtype=np.float64)


def uca_geometry(num_mics: int = 6, diameter: float = 0.08) -> ArrayGeometry:
    """Uniform circular array in the horizontal plane, mic 0 on the +x axis."""
    if num_mics < 1 or diameter <= 0:
        raise GeometryError("A circular array needs at least one mic and a diameter")
    radius = diameter / 2
    angles = 2 * np.pi * np.arange(num_mics) / num_mics
    mics = tuple(
        (float(radius * np.cos(a)), float(radius * np.sin(a)), 0.0) for a in angles
    )
    if len(set(mics)) != num_mics:
        raise GeometryError("Array microphones must be distinct")
    return ArrayGeometry(mic_positions=mics, layout="uca", diameter=diameter)


@dataclass(frozen=True)
class RoomSpec:
    length: float
    width: float
    height: float
    rt60: float
    speed_of_sound: float = SPEED_OF_SOUND

    @property
    def dimensions(self) -> np.ndarray:
        return np.array([self.length, self.width, self.height])

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height

    @property
    def surface(self) -> float:
        lw, lh, wh = (
            self.length * self.width,
            self.length * self.height,
            self.width * self.height,
        )
        return 2 * (lw + lh + wh)

    @property
    def reflection(self) -> float:
        return rt60_to_reflection(self.rt60, self)

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p > margin) and np.all(p < self.dimensions - margin))

    def wall_distance(self, point) -> float:
        p = np.asarray(point, dtype=np.float64)
        return float(min(np.min(p), np.min(self.dimensions - p)))


@dataclass(frozen=True)
class SourcePlacement:
    azimuth: float  # degrees
    distance: float  # metres from the array centre
    position: tuple


@dataclass(frozen=True)
class SceneSpec:
    room: RoomSpec
    array: ArrayGeometry
    array_center: tuple
    target: SourcePlacement
    noises: tuple = ()
    snr_db: float = 0.0
    seed: int = 0
    scene_id: str = ""
    speech_wav: str = ""
    speech_offset: int = 0
    noise_wavs: tuple = ()
    noise_offsets: tuple = ()

    @property
    def sources(self) -> tuple:
        return (self.target, *self.noises)

    def mic_positions(self) -> np.ndarray:
        return np.asarray(self.array_center) + self.array.positions()

    def to_json(self) -> dict:
        data = asdict(self)
        data["schema_version"] = SCHEMA_VERSION
        return _lists(data)

    @classmethod
    def from_json(cls, data: dict) -> "SceneSpec":
        if not isinstance(data, dict):
            raise StorageError("Malformed scene manifest: expected a JSON object")
        if data.get("schema_version") != SCHEMA_VERSION:
            raise StorageError(
                f"Unsupported scene schema_version {data.get('schema_version')}",
            )
        try:
            array, room = data["array"], data["room"]
            return cls(
                room=_room(room),
                array=ArrayGeometry(
                    mic_positions=tuple(
                        _point(p, "array.mic_positions") for p in array["mic_positions"]
                    ),
                    layout=_string(array["layout"], "array.layout"),
                    diameter=_number(array["diameter"], "array.diameter"),
                ),
                array_center=_point(data["array_center"], "array_center"),
                target=_placement(data["target"], "target"),
                noises=tuple(_placement(n, "noises") for n in data["noises"]),
                snr_db=_number(data["snr_db"], "snr_db"),
                seed=_integer(data["seed"], "seed"),
                scene_id=_string(data["scene_id"], "scene_id"),
                speech_wav=_string(data["speech_wav"], "speech_wav"),
                speech_offset=_integer(data["speech_offset"], "speech_offset"),
                noise_wavs=tuple(_string(n, "noise_wavs") for n in data["noise_wavs"]),
                noise_offsets=tuple(
                    _integer(n, "noise_offsets") for n in data["noise_offsets"]
                ),
            )
        except (KeyError, TypeError) as e:
            raise StorageError(f"Malformed scene manifest: {e}")


def _malformed(name: str, expected: str, value) -> StorageError:
    return StorageError(
        f"Malformed scene manifest: {name} is not {expected} ({value!r})",
    )


def _number(value, name: str) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if math.isfinite(value):
            return float(value)
    raise _malformed(name, "a finite number", value)


def _integer(value, name: str) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    raise _malformed(name, "an integer", value)


def _string(value, name: str) -> str:
    if isinstance(value, str):
        return value
    raise _malformed(name, "a string", value)


def _point(value, name: str) -> tuple:
    if isinstance(value, list) and len(value) == 3:
        return tuple(_number(v, name) for v in value)
    raise _malformed(name, "an [x, y, z] point", value)


def _lists(value):
    if isinstance(value, dict):
        return {k: _lists(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_lists(v) for v in value]
    return value


def _placement(data: dict, name: str) -> SourcePlacement:
    return SourcePlacement(
        azimuth=_number(data["azimuth"], f"{name}.azimuth"),
        distance=_number(data["distance"], f"{name}.distance"),
        position=_point(data["position"], f"{name}.position"),
    )


def _room(data: dict) -> RoomSpec:
    fields = {
        key: _number(data[key], f"room.{key}")
        for key in ("length", "width", "height", "rt60")
    }
    if "speed_of_sound" in data:
        fields["speed_of_sound"] = _number(
            data["speed_of_sound"],
            "room.speed_of_sound",
        )
    return RoomSpec(**fields)


@dataclass(frozen=True)
class SamplingRanges:
    room_length: tuple = (3.0, 10.0)
    room_width: tuple = (3.0, 10.0)
    room_height: tuple = (2.5, 4.0)
    rt60: tuple = (0.2, 0.7)
    target_distance: tuple = (0.5, 2.0)
    noise_distance: tuple = (0.5, 2.0)
    azimuth: tuple = (-90.0, 90.0)
    snr_db: tuple = (0.0, 30.0)
    noise_count: tuple = (1, 3)
    wall_margin: float = 1.0
    source_height: float = 1.5
    num_mics: int = 6
    array_diameter: float = 0.08
    speed_of_sound: float = SPEED_OF_SOUND
    max_retries: int = 1000

    def __post_init__(self):
        for name in (
            "room_length",
            "room_width",
            "room_height",
            "rt60",
            "target_distance",
            "noise_distance",
            "azimuth",
            "snr_db",
            "noise_count",
        ):
            low, high = getattr(self, name)
            if low > high:
                raise GeometryError(f"Range {name} is inverted: [{low}, {high}]")
        if self.rt60[0] <= 0 or self.target_distance[0] <= 0:
            raise GeometryError("rt60 and distances must be positive")
        if self.noise_count[0] < 0 or self.max_retries < 1:
            raise GeometryError("noise_count and max_retries must be non-negative")


def _place(rng, center: np.ndarray, azimuths: tuple, distances: tuple):
    azimuth = float(rng.uniform(*azimuths))
    distance = float(rng.uniform(*distances))
    rad = math.radians(azimuth)
    position = center + distance * np.array([math.cos(rad), math.sin(rad), 0.0])
    return SourcePlacement(azimuth, distance, tuple(float(p) for p in position))


def sample_scene(
    rng_seed: int,
    ranges: SamplingRanges = SamplingRanges(),
    scene_id: str = "",
) -> SceneSpec:
    """Draw one scene. Infeasible draws are redrawn up to ranges.max_retries."""
    rng = np.random.default_rng(rng_seed)
    array = uca_geometry(ranges.num_mics, ranges.array_diameter)
    margin = ranges.wall_margin

    for _ in range(ranges.max_retries):
        room = RoomSpec(
            length=float(rng.uniform(*ranges.room_length)),
            width=float(rng.uniform(*ranges.room_width)),
            height=float(rng.uniform(*ranges.room_height)),
            rt60=float(rng.uniform(*ranges.rt60)),
            speed_of_sound=ranges.speed_of_sound,
        )
        if min(room.length, room.width) <= 2 * margin:
            continue

        center = np.array(
            [
                rng.uniform(margin, room.length - margin),
                rng.uniform(margin, room.width - margin),
                ranges.source_height,
            ],
        )
        target = _place(rng, center, ranges.azimuth, ranges.target_distance)
        low, high = (int(n) for n in ranges.noise_count)
        count = int(rng.integers(low, high + 1))
        noises = tuple(
            _place(rng, center, ranges.azimuth, ranges.noise_distance)
            for _ in range(count)
        )
        spec = SceneSpec(
            room=room,
            array=array,
            array_center=tuple(float(c) for c in center),
            target=target,
            noises=noises,
            snr_db=float(rng.uniform(*ranges.snr_db)),
            seed=int(rng_seed),
            scene_id=scene_id,
        )
        if not validate_scene(spec, ranges):
            return spec

    raise GeometryError(
        f"infeasible geometry: no valid scene after {ranges.max_retries} attempts",
    )


def validate_scene(spec: SceneSpec, ranges: SamplingRanges = SamplingRanges()) -> list:
    """Check a scene against the sampling constraints, returning every violation."""
    problems = []
    tol = 1e-9

    def within(name, value, bounds):
        if not bounds[0] - tol <= value <= bounds[1] + tol:
            problems.append(f"{name} {value:.4f} outside [{bounds[0]}, {bounds[1]}]")

    room = spec.room
    within("room length", room.length, ranges.room_length)
    within("room width", room.width, ranges.room_width)
    within("room height", room.height, ranges.room_height)
    within("rt60", room.rt60, ranges.rt60)
    within("snr", spec.snr_db, ranges.snr_db)
    within("noise count", len(spec.noises), ranges.noise_count)

    center = np.asarray(spec.array_center, dtype=np.float64)
    if room.wall_distance(center) < ranges.wall_margin - tol:
        problems.append("array centre closer than the wall margin")
    for i, mic in enumerate(spec.mic_positions()):
        if not room.contains(mic):
            problems.append(f"mic {i} outside the room")
    if len(set(spec.array.mic_positions)) != spec.array.num_mics:
        problems.append("array microphones are not distinct")

    labelled = [("target", spec.target, ranges.target_distance)] + [
        (f"noise {i}", n, ranges.noise_distance) for i, n in enumerate(spec.noises)
    ]
    for label, source, distances in labelled:
        position = np.asarray(source.position, dtype=np.float64)
        if room.wall_distance(position) < ranges.wall_margin - tol:
            problems.append(f"{label} closer than the wall margin")
        within(f"{label} distance", source.distance, distances)
        within(f"{label} azimuth", source.azimuth, ranges.azimuth)
        offset = position - center
        if abs(np.linalg.norm(offset) - source.distance) > 1e-6:
            problems.append(f"{label} position does not match its distance")
        measured = math.degrees(math.atan2(offset[1], offset[0]))
        if abs(measured - source.azimuth) > 1e-6:
            problems.append(f"{label} position does not match its azimuth")

    return problems


def rt60_to_reflection(rt60: float, room: RoomSpec) -> float:
    """Uniform wall reflection coefficient that gives rt60 under Eyring's formula."""
    if not (math.isfinite(rt60) and rt60 > 0) or room.volume <= 0:
        raise GeometryError(f"rt60 {rt60} s is unreachable for this room")
    exponent = eyring_constant(room.speed_of_sound) * room.volume / (
        room.surface * rt60
    )
    absorption = 1.0 - math.exp(-exponent)
    if not 0.0 < absorption <= 1.0:
        raise GeometryError(
            f"rt60 {rt60} s needs absorption {absorption:.4f}, outside (0, 1]",
        )
    return math.sqrt(1.0 - absorption)


def eyring_rt60(reflection: float, room: RoomSpec) -> float:
    """Forward Eyring model for a uniform reflection coefficient."""
    if reflection <= 0:
        return 0.0
    return eyring_constant(room.speed_of_sound) * room.volume / (
        -room.surface * math.log(reflection**2)
    )


def auto_max_order(
    room: RoomSpec,
    direct_distance: float = 1.0,
    reflection: float | None = None,
) -> int:
    """Smallest order whose images sit 60 dB below the direct path, capped at 30.

    An order-n image is at least n times the smallest room dimension away.
    """
    beta = room.reflection if reflection is None else reflection
    limit = 10 ** (-TAIL_ATTENUATION_DB / 20)
    spacing = float(np.min(room.dimensions))
    for order in range(1, MAX_AUTO_ORDER + 1):
        tail = beta**order * direct_distance / max(order * spacing, direct_distance)
        if tail <= limit:
            return order
    return MAX_AUTO_ORDER


def _axis_images(src: float, mic: float, size: float, reach: int):
    n = np.repeat(np.arange(-reach, reach + 1), 2)
    q = np.tile([0, 1], 2 * reach + 1)
    return np.abs(2 * n - q), (1 - 2 * q) * src + 2 * n * size - mic


def image_sources(
    room: RoomSpec,
    src,
    mic,
    max_order: int,
    fs: int,
    reflection: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Delays (in samples) and gains of every image source up to max_order."""
    if max_order < 0:
        raise GeometryError(f"max_order must be >= 0 (got {max_order})")
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    if not (room.contains(src) and room.contains(mic)):
        raise GeometryError("Source and microphone must be strictly inside the room")

    beta = room.reflection if reflection is None else reflection
    reach = (max_order + 1) // 2
    axes = [
        _axis_images(src[i], mic[i], room.dimensions[i], reach) for i in range(3)
    ]
    (ox, dx), (oy, dy), (oz, dz) = axes

    order = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
    dist = np.sqrt(
        dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2,
    )
    keep = order <= max_order
    order, dist = order[keep], dist[keep]

    gains = beta**order / (4 * np.pi * dist)
    delays = dist / room.speed_of_sound * fs
    return delays, gains


def fractional_delay_kernel(delays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed sinc taps around each delay: (indices, weights), 81 per delay."""
    half = FRACTIONAL_TAPS // 2
    base = np.floor(delays).astype(np.int64)
    index = base[:, None] + np.arange(-half, half + 1)[None, :]
    u = index - delays[:, None]
    window = 0.5 * (1 + np.cos(np.pi * u / (half + 1)))
    return index, np.sinc(u) * window


def image_method_rir(
    room: RoomSpec,
    src,
    mic,
    max_order: int,
    fs: int,
    reflection: float | None = None,
    length: int | None = None,
) -> np.ndarray:
    delays, gains = image_sources(room, src, mic, max_order, fs, reflection)
    index, kernel = fractional_delay_kernel(delays)
    if length is None:
        length = int(np.max(index)) + 1

    taps = gains[:, None] * kernel
    valid = (index >= 0) & (index < length)
    rir = np.zeros(length)
    np.add.at(rir, index[valid], taps[valid])
    return rir


@dataclass(frozen=True, eq=False)
class RirSet:
    """Impulse responses h[mic, source, sample]; source 0 is the target."""

    h: np.ndarray
    sample_rate: int = 16000
    max_order: int = 0

    @property
    def num_mics(self) -> int:
        return self.h.shape[0]

    @property
    def num_sources(self) -> int:
        return self.h.shape[1]

    @property
    def target(self) -> np.ndarray:
        return self.h[:, 0, :]

    def noise(self, index: int) -> np.ndarray:
        return self.h[:, 1 + index, :]


def compute_rirs(spec: SceneSpec, fs: int, max_order: int | None = None) -> RirSet:
    room = spec.room
    if max_order is None or max_order < 0:
        max_order = auto_max_order(room, spec.target.distance)
    beta = room.reflection
    mics = spec.mic_positions()

    responses = [
        [
            image_method_rir(room, source.position, mic, max_order, fs, beta)
            for source in spec.sources
        ]
        for mic in mics
    ]
    length = max(len(r) for row in responses for r in row)
    h = np.zeros((len(mics), len(spec.sources), length))
    for m, row in enumerate(responses):
        for s, r in enumerate(row):
            h[m, s, : len(r)] = r
    return RirSet(h=h, sample_rate=fs, max_order=max_order)


@dataclass(frozen=True, eq=False)
class SceneMixture:
    capture: np.ndarray  # M x N
    clean_image: np.ndarray  # M x N
    noise_image: np.ndarray  # M x N, already scaled to the scene SNR


def fit_length(signal: np.ndarray, length: int) -> np.ndarray:
    """Crop, or tile, a signal to exactly `length` samples."""
    signal = np.asarray(signal, dtype=np.float64)
    if len(signal) >= length:
        return signal[:length]
    return np.resize(signal, length)


def _image(signal: np.ndarray, rirs: np.ndarray, length: int) -> np.ndarray:
    return np.stack([fftconvolve(signal, h)[:length] for h in rirs])


def mix_scene(
    spec: SceneSpec,
    speech,
    noises: list,
    rirs: RirSet | None = None,
    fs: int = 16000,
) -> SceneMixture:
    """Convolve and sum, scaling the noise so mic 0 sees spec.snr_db.

    The SNR compares the reverberant target image with the summed noise image.
    """
    speech = np.asarray(speech, dtype=np.float64)
    if not np.any(speech):
        raise DegenerateSourceError("degenerate source: speech is silent")
    if len(noises) != len(spec.noises):
        raise DegenerateSourceError(
            f"Scene places {len(spec.noises)} noises but {len(noises)} were given",
        )
    if rirs is None:
        rirs = compute_rirs(spec, fs)

    length = len(speech)
    clean = _image(speech, rirs.target, length)
    target_energy = float(np.sum(clean[0] ** 2))
    if target_energy == 0:
        raise DegenerateSourceError("degenerate source: target image is silent")

    noise_sum = np.zeros_like(clean)
    for i, noise in enumerate(noises):
        noise = fit_length(noise, length)
        if not np.any(noise):
            raise DegenerateSourceError(f"degenerate source: noise {i} is silent")
        noise_sum += _image(noise, rirs.noise(i), length)

    if not noises:
        return SceneMixture(clean.copy(), clean, noise_sum)

    noise_energy = float(np.sum(noise_sum[0] ** 2))
    if noise_energy == 0:
        raise DegenerateSourceError("degenerate source: noise image is silent")

    scale = math.sqrt(target_energy / (noise_energy * 10 ** (spec.snr_db / 10)))
    noise_image = scale * noise_sum
    return SceneMixture(clean + noise_image, clean, noise_image)


def transfer_function(h, cfg: StftConfig) -> np.ndarray:
    """DFT of impulse responses (... x L) sampled on the STFT bin grid (... x F)."""
    h = np.asarray(h, dtype=np.float64)
    ratio = max(1, -(-h.shape[-1] // cfg.frame_len))
    spectrum = np.fft.rfft(h, n=ratio * cfg.frame_len, axis=-1)
    return spectrum[..., ::ratio]


def transfer_capture(
    target_rirs,
    speech,
    cfg: StftConfig,
    noise_image=None,
) -> MultiChannelSpectrogram:
    """Capture in the narrowband transfer model X = c_f S + N."""
    c = transfer_function(target_rirs, cfg)
    s = stft(np.asarray(speech, dtype=np.float64), cfg)
    data = c[:, :, None] * s[None, :, :]
    if noise_image is not None:
        data = data + np.stack([stft(n, cfg) for n in np.atleast_2d(noise_image)])
    return MultiChannelSpectrogram(data, cfg)
