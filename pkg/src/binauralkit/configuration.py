from pathlib import Path

import click
import tomlkit
from tomlkit.exceptions import TOMLKitError
from tomlkit.items import Table

from .errors import StorageError
from .hrtf import HrtfParams
from .losses import LossWeights
from .metrics import MetricSettings
from .scene import SamplingRanges
from .spectral import StftConfig
from .trainer import TrainSettings


def default_config() -> dict:
    return {
        "stft": {
            "sample_rate": 16000,
            "frame_len": 320,
            "hop": 160,
        },
        "scene": {
            "room_length": [3.0, 10.0],
            "room_width": [3.0, 10.0],
            "room_height": [2.5, 4.0],
            "rt60": [0.2, 0.7],
            "target_distance": [0.5, 2.0],
            "noise_distance": [0.5, 2.0],
            "azimuth": [-90.0, 90.0],
            "snr_db": [0.0, 30.0],
            "noise_count": [1, 3],
            "wall_margin": 1.0,
            "source_height": 1.5,
            "num_mics": 6,
            "array_diameter": 0.08,
            "speed_of_sound": 343.0,
            "max_order": -1,
            "max_retries": 1000,
            "duration": 2.0,
        },
        "hrtf": {
            "head_radius": 0.0875,
            "hrir_dir": "",
        },
        "losses": {
            "lambda_ri": 1.0,
            "lambda_mag": 1.0,
            "lambda_mwild": 3.0,
            "ild_eps": 1e-8,
            "per_bin_ild": False,
        },
        "baselines": {
            "diagonal_loading": 1e-3,
            "mint_rir_len": 1600,
            "mint_filter_len": 0,
            "mint_delay": -1,
            "mint_regularization": 0.0,
        },
        "train": {
            "learning_rate": 5e-4,
            "patience": 3,
            "max_halvings": 4,
            "max_epochs": 20000,
            "mode": "time-invariant",
            "beta1": 0.9,
            "beta2": 0.999,
            "epsilon": 1e-8,
            "noisy": False,
        },
        "metrics": {
            "max_lag_ms": 1.0,
            "ild_threshold_db": -60.0,
            "sd_floor_db": -80.0,
        },
        "paths": {
            "out": "binauralkit-out",
        },
    }


COMMENTS = {
    "stft": {
        "frame_len": "Samples per frame, 20 ms at 16 kHz. Must be twice the hop.",
        "hop": "Frame shift in samples.",
    },
    "scene": {
        "room_length": "Sampled range in metres [min, max].",
        "rt60": "Reverberation time range in seconds.",
        "azimuth": "Source azimuth range in degrees, positive is to the left.",
        "noise_count": "Number of point noise sources per scene [min, max].",
        "wall_margin": "Minimum distance of the array and sources from every wall.",
        "source_height": "Height of the array and all sources.",
        "max_order": "Image method order, -1 picks it from the reflection decay.",
        "duration": "Seconds of speech per scene.",
    },
    "hrtf": {
        "head_radius": "Spherical head radius in metres.",
        "hrir_dir": "Optional directory of stereo HRIR WAV files named <azimuth>.wav",
    },
    "losses": {
        "lambda_mwild": "Weight of the magnitude-weighted ILD term.",
        "per_bin_ild": "Use per-bin absolute ILD errors instead of the signed mean.",
    },
    "baselines": {
        "diagonal_loading": "Loading factor relative to trace(R) / M.",
        "mint_rir_len": "Target RIRs are truncated to this many samples before MINT.",
        "mint_filter_len": "Inverse filter length, 0 uses the shortest feasible one.",
        "mint_delay": "Modelling delay in samples, -1 uses filter_len // 2.",
    },
    "train": {
        "patience": "Epochs without improvement before the rate is halved.",
        "max_halvings": "Training stops once the rate has been halved this often.",
        "mode": "time-invariant or full (one filter per frame)",
        "noisy": "Include the scene noise in the training capture.",
    },
    "metrics": {
        "ild_threshold_db": "Bins this far below the energy peak are ignored.",
        "sd_floor_db": "Magnitude floor relative to the target peak.",
    },
    "paths": {
        "out": "Default output folder. BINAURALKIT_OUT overrides it.",
    },
}


def default_config_toml() -> tomlkit.TOMLDocument:
    doc = tomlkit.document()
    doc.add(tomlkit.comment("Configuration for the binauralkit command"))
    doc.add(tomlkit.nl())

    for section, values in default_config().items():
        table = tomlkit.table()
        for key, value in values.items():
            table.add(key, value)
            comment = COMMENTS.get(section, {}).get(key)
            if comment:
                table.item(key).comment(comment)
        doc.add(section, table)

    return doc


def _plain(value):
    """Turn tomlkit containers and items into plain python values."""
    if isinstance(value, (dict, Table)):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, bool):
        return bool(value)
    if isinstance(value, int):
        return int(value)
    if isinstance(value, float):
        return float(value)
    if isinstance(value, str):
        return str(value)
    return value


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class Config:
    """Config object parses and holds the config read from file."""

    def __init__(self, data: dict, debug: bool = False) -> None:
        self.data = _merge(default_config(), _plain(data))
        self.debug = debug

    def __str__(self) -> str:
        return str(self.data)

    def get(self, key) -> str | dict | None:
        if key in self.data:
            return self.data[key]
        return None

    def get_dict(self, key) -> dict:
        val = self.get(key)
        if isinstance(val, dict):
            return val
        raise StorageError(f"Config value {key} was not a table (was {type(val)})")

    def tree(self, *keys):
        val = self.data
        for key in keys:
            if isinstance(val, dict) and key in val:
                val = val[key]
            else:
                return None
        return val

    def _invalid(self, keys, expected: str, val) -> StorageError:
        return StorageError(
            f"Config value {'.'.join(keys)} was not {expected} (was {val!r})",
        )

    def tree_str(self, *keys) -> str:
        val = self.tree(*keys)
        if isinstance(val, str):
            return val
        if val is None:
            return ""
        raise self._invalid(keys, "a string", val)

    def tree_int(self, *keys) -> int:
        val = self.tree(*keys)
        if isinstance(val, int) and not isinstance(val, bool):
            return val
        raise self._invalid(keys, "an integer", val)

    def tree_float(self, *keys) -> float:
        val = self.tree(*keys)
        if _is_number(val):
            return float(val)
        raise self._invalid(keys, "a number", val)

    def tree_bool(self, *keys) -> bool:
        val = self.tree(*keys)
        if isinstance(val, bool):
            return val
        raise self._invalid(keys, "a boolean", val)

    def tree_range(self, *keys) -> tuple[float, float]:
        val = self.tree(*keys)
        if isinstance(val, list) and len(val) == 2 and all(map(_is_number, val)):
            return float(val[0]), float(val[1])
        raise self._invalid(keys, "a [min, max] pair", val)

    def stft_config(self) -> StftConfig:
        return StftConfig(
            sample_rate=self.tree_int("stft", "sample_rate"),
            frame_len=self.tree_int("stft", "frame_len"),
            hop=self.tree_int("stft", "hop"),
        )

    def sampling_ranges(self) -> SamplingRanges:
        ranged = {
            key: self.tree_range("scene", key)
            for key in (
                "room_length",
                "room_width",
                "room_height",
                "rt60",
                "target_distance",
                "noise_distance",
                "azimuth",
                "snr_db",
            )
        }
        low, high = self.tree_range("scene", "noise_count")
        return SamplingRanges(
            **ranged,
            noise_count=(int(low), int(high)),
            wall_margin=self.tree_float("scene", "wall_margin"),
            source_height=self.tree_float("scene", "source_height"),
            num_mics=self.tree_int("scene", "num_mics"),
            array_diameter=self.tree_float("scene", "array_diameter"),
            speed_of_sound=self.tree_float("scene", "speed_of_sound"),
            max_retries=self.tree_int("scene", "max_retries"),
        )

    def max_order(self) -> int | None:
        order = self.tree_int("scene", "max_order")
        return None if order < 0 else order

    def hrtf_params(self) -> HrtfParams:
        return HrtfParams(
            head_radius=self.tree_float("hrtf", "head_radius"),
            speed_of_sound=self.tree_float("scene", "speed_of_sound"),
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_ri=self.tree_float("losses", "lambda_ri"),
            lambda_mag=self.tree_float("losses", "lambda_mag"),
            lambda_mwild=self.tree_float("losses", "lambda_mwild"),
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            learning_rate=self.tree_float("train", "learning_rate"),
            patience=self.tree_int("train", "patience"),
            max_halvings=self.tree_int("train", "max_halvings"),
            max_epochs=self.tree_int("train", "max_epochs"),
            mode=self.tree_str("train", "mode"),
            beta1=self.tree_float("train", "beta1"),
            beta2=self.tree_float("train", "beta2"),
            epsilon=self.tree_float("train", "epsilon"),
        )

    def metric_settings(self) -> MetricSettings:
        return MetricSettings(
            max_lag_ms=self.tree_float("metrics", "max_lag_ms"),
            ild_threshold_db=self.tree_float("metrics", "ild_threshold_db"),
            sd_floor_db=self.tree_float("metrics", "sd_floor_db"),
        )

    @classmethod
    def load(cls, config_file: Path, debug: bool):
        """Parse the provided config file and return a config instance.

        Args:
            config_file (Path): TOML file config path.

        Raises:
            StorageError: The file is missing or is not valid TOML.

        Returns:
            Config: Returns an instance of the Config class
        """
        if not config_file.exists():
            raise StorageError(
                f"Config file {config_file} does not exist. "
                "Create it with `binauralkit config`.",
            )

        try:
            with open(config_file, mode="rt", encoding="utf-8") as fp:
                data = tomlkit.load(fp)
        except TOMLKitError as e:
            raise StorageError(f"Config file {config_file} is not valid TOML: {e}")
        return cls(data, debug)

    @classmethod
    def dumps(cls):
        doc = default_config_toml()
        return str(tomlkit.dumps(doc))

    @classmethod
    def write(cls, config_file: Path):
        """Create a default config file in the provided path."""

        doc = default_config_toml()
        click.echo(tomlkit.dumps(doc))

        config_file.parent.mkdir(parents=True, exist_ok=True)
        with open(config_file, mode="wt", encoding="utf-8") as fp:
            tomlkit.dump(doc, fp)

    def flatten(self):
        def process(collection, prefix=""):
            data = []
            for key, settings in collection:
                if isinstance(settings, dict):
                    data = data + process(settings.items(), prefix=f"{prefix}{key}.")
                elif isinstance(settings, bool):
                    data.append((f"{prefix}{key}:", "True" if settings else "False"))
                elif settings == "":
                    data.append((f"{prefix}{key}:", "None"))
                else:
                    data.append((f"{prefix}{key}:", settings))
            return data

        data = process(self.data.items())
        width = max([len(prefix) for prefix, x in data]) + 2
        data_list = [
            ("{:<" + str(width) + "}{}").format(key, setting) for key, setting in data
        ]
        data_list.sort()
        return "\n".join(data_list)
