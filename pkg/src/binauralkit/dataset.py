"""Scene folders on disk: simulation, baselines, toy training and evaluation.

Every scene lives in its own `scene_XXXX` folder:

    manifest.json   scene geometry, seeds and source file choices
    source.wav      dry target speech
    capture.wav     M-channel noisy reverberant capture
    noise.wav       M-channel scaled noise image at the microphones
    target.wav      binaural ground truth, HRTF applied to the dry speech

Output folders also get a run.json recording what produced them.
"""

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .audio import read_mono, read_wav, write_text, write_wav
from .baselines import DirectPath, lbh_mvdr, mif_pipeline, steering_from_rir
from .configuration import Config
from .console import debug_echo, dumps_json
from .errors import StorageError, WorkbenchError
from .hrtf import HrirDatabase, HrtfFilter, hrtf_for_azimuth, render_binaural
from .metrics import MetricsReport, evaluate_binaural, summarize
from .scene import (
    SceneSpec,
    compute_rirs,
    fit_length,
    mix_scene,
    sample_scene,
)
from .spectral import stft_multichannel
from .trainer import TrainingScene, apply_filters, train

SCHEMA_VERSION = 1
METHODS = ("lbh-mvdr", "mif")
REPORT_COLUMNS = (
    "scene_id",
    "seed",
    "snr_db",
    "azimuth",
    "delta_itd",
    "delta_ild",
    "sd",
)


def tool_version() -> str:
    try:
        return version("binauralkit")
    except PackageNotFoundError:
        return "0.0.0"


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def hash_files(paths, root: Path, prefix: str = "") -> dict:
    """sha256 of each file keyed by its path below root."""
    return {
        prefix + Path(p).relative_to(root).as_posix(): sha256(p) for p in sorted(paths)
    }


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    tool_version: str = field(default_factory=tool_version)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": self.tool_version,
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }

    def write(self, out_dir: Path) -> Path:
        return write_text(Path(out_dir) / "run.json", dumps_json(self.to_json()))


def collect_wavs(folder: Path, label: str) -> list:
    wavs = sorted(p.relative_to(folder).as_posix() for p in Path(folder).rglob("*.wav"))
    if not wavs:
        raise WorkbenchError(f"empty WAV pool: no {label} files in {folder}")
    return wavs


def scene_dirs(root: Path) -> list:
    """A single scene folder, or every scene folder directly below root."""
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    return sorted(p for p in root.iterdir() if (p / "manifest.json").exists())


def load_manifest(scene_dir: Path) -> tuple[SceneSpec, dict]:
    path = Path(scene_dir) / "manifest.json"
    if not path.exists():
        raise StorageError(f"Scene manifest {path} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise StorageError(f"Scene manifest {path} is not valid JSON: {e}")
    return SceneSpec.from_json(data), data


def hrtf_source(config: Config):
    """Measured HRIRs if configured, else None for the spherical head model."""
    folder = config.tree_str("hrtf", "hrir_dir")
    if not folder:
        return None
    return HrirDatabase.load(Path(folder), config.stft_config())


def hrtf_filter(config: Config, database, azimuth: float) -> HrtfFilter:
    cfg = config.stft_config()
    if database is None:
        return hrtf_for_azimuth(azimuth, cfg, config.hrtf_params())
    return database.hrtf(azimuth, cfg)


def _excerpt(rng, pool: Path, names: list, length: int, sample_rate: int):
    name = names[int(rng.integers(len(names)))]
    audio = read_mono(pool / name, sample_rate)
    offset = int(rng.integers(len(audio) - length + 1)) if len(audio) > length else 0
    return name, offset, fit_length(audio[offset:], length)


def realize_scene(
    index: int,
    seed: int,
    config_data: dict,
    speech_pool: Path,
    speech_names: list,
    noise_pool: Path,
    noise_names: list,
    out_dir: Path,
) -> list:
    """Sample, simulate and write one scene. Returns the files written."""
    config = Config(config_data)
    cfg = config.stft_config()
    fs = cfg.sample_rate
    scene_id = f"scene_{index:04d}"

    spec = sample_scene(seed, config.sampling_ranges(), scene_id)
    rng = np.random.default_rng([seed, 1])
    length = int(round(config.tree_float("scene", "duration") * fs))

    speech_name, speech_offset, speech = _excerpt(
        rng,
        speech_pool,
        speech_names,
        length,
        fs,
    )
    picks = [_excerpt(rng, noise_pool, noise_names, length, fs) for _ in spec.noises]
    spec = replace(
        spec,
        speech_wav=speech_name,
        speech_offset=speech_offset,
        noise_wavs=tuple(p[0] for p in picks),
        noise_offsets=tuple(p[1] for p in picks),
    )

    rirs = compute_rirs(spec, fs, config.max_order())
    mixture = mix_scene(spec, speech, [p[2] for p in picks], rirs, fs)
    hrtf = hrtf_filter(config, hrtf_source(config), spec.target.azimuth)
    target = render_binaural(speech, spec.target.azimuth, cfg, hrtf=hrtf).to_time()

    scene_dir = Path(out_dir) / scene_id
    manifest = spec.to_json() | {"sample_rate": fs, "rir_max_order": rirs.max_order}
    return [
        write_wav(scene_dir / "source.wav", speech, fs),
        write_wav(scene_dir / "capture.wav", mixture.capture, fs),
        write_wav(scene_dir / "noise.wav", mixture.noise_image, fs),
        write_wav(scene_dir / "target.wav", target, fs),
        write_text(scene_dir / "manifest.json", dumps_json(manifest)),
    ]


def scene_seeds(seed: int, count: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


class DatasetManager:
    """Runs the workbench steps against folders of scenes."""

    def __init__(self, config: Config, out_dir: Path) -> None:
        self.config = config
        self.out_dir = Path(out_dir)
        self.cfg = config.stft_config()

    def _echo(self, message: str):
        debug_echo(self.config.debug, message)

    def simulate(
        self,
        count: int,
        seed: int,
        speech_pool: Path,
        noise_pool: Path,
        jobs: int = 1,
    ) -> list:
        speech_pool, noise_pool = Path(speech_pool), Path(noise_pool)
        speech = collect_wavs(speech_pool, "speech")
        noise = collect_wavs(noise_pool, "noise")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if count == 0:
            return []

        seeds = scene_seeds(seed, count)
        pools = (speech_pool, speech, noise_pool, noise)
        args = [
            (i, s, self.config.data, *pools, self.out_dir) for i, s in enumerate(seeds)
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                written = list(pool.map(realize_scene, *zip(*args)))
        else:
            written = []
            for a in args:
                self._echo(f"Simulating scene {a[0] + 1}/{count}")
                written.append(realize_scene(*a))

        outputs = [path for files in written for path in files]
        inputs = hash_files([speech_pool / n for n in speech], speech_pool, "speech/")
        inputs |= hash_files([noise_pool / n for n in noise], noise_pool, "noise/")
        RunManifest(
            "simulate",
            self.config.data,
            seed,
            inputs,
            hash_files(outputs, self.out_dir),
        ).write(self.out_dir)
        return sorted(p.parent for p in outputs if p.name == "manifest.json")

    def _scene_inputs(self, scene_dir: Path):
        spec, manifest = load_manifest(scene_dir)
        fs = self.cfg.sample_rate
        if manifest.get("sample_rate", fs) != fs:
            raise StorageError(f"{scene_dir} was simulated at another sample rate")
        order = manifest.get("rir_max_order")
        if order is not None and (not isinstance(order, int) or order < 0):
            raise StorageError(f"{scene_dir} has an invalid rir_max_order {order!r}")
        rirs = compute_rirs(spec, fs, order)
        return spec, rirs

    def _report(self, estimate, target, spec: SceneSpec) -> MetricsReport:
        return evaluate_binaural(
            estimate,
            target,
            self.cfg,
            self.config.metric_settings(),
            scene_id=spec.scene_id,
            seed=spec.seed,
            snr_db=spec.snr_db,
            azimuth=spec.target.azimuth,
        )

    def baseline_scene(self, scene_dir: Path, method: str) -> MetricsReport:
        if method not in METHODS:
            raise WorkbenchError(f"Unknown baseline {method}")
        cfg, fs = self.cfg, self.cfg.sample_rate
        spec, rirs = self._scene_inputs(scene_dir)
        capture = read_wav(scene_dir / "capture.wav", fs)
        target = read_wav(scene_dir / "target.wav", fs)
        azimuth = spec.target.azimuth
        hrtf = hrtf_filter(self.config, hrtf_source(self.config), azimuth)
        params = self.config.hrtf_params()

        if method == "lbh-mvdr":
            noise = read_wav(scene_dir / "noise.wav", fs)
            compensation = DirectPath.from_geometry(
                spec.target.position,
                spec.mic_positions()[0],
                fs,
                spec.room.speed_of_sound,
            )
            estimate = lbh_mvdr(
                stft_multichannel(capture, cfg),
                azimuth,
                steering_from_rir(rirs.target, cfg),
                stft_multichannel(noise, cfg),
                cfg,
                params,
                self.config.tree_float("baselines", "diagonal_loading"),
                compensation,
                hrtf,
            )
        else:
            delay = self.config.tree_int("baselines", "mint_delay")
            estimate = mif_pipeline(
                capture,
                rirs.target,
                azimuth,
                cfg,
                params,
                filter_len=self.config.tree_int("baselines", "mint_filter_len") or None,
                delay=None if delay < 0 else delay,
                rir_len=self.config.tree_int("baselines", "mint_rir_len") or None,
                regularization=self.config.tree_float(
                    "baselines",
                    "mint_regularization",
                ),
                hrtf=hrtf,
            )

        estimate = estimate.to_time()
        report = self._report(estimate, target, spec)
        out = self.out_dir / spec.scene_id
        write_wav(out / "estimate.wav", estimate, fs)
        write_text(out / "metrics.json", dumps_json(report.to_json()))
        return report

    def baseline(self, source: Path, method: str) -> list:
        source = Path(source)
        scenes = scene_dirs(source)
        if not scenes:
            raise StorageError(f"No scene manifests found in {source}")

        reports = []
        for scene_dir in scenes:
            self._echo(f"Running {method} on {scene_dir.name}")
            reports.append(self.baseline_scene(scene_dir, method))

        self._write_reports(reports)
        inputs = [d / name for d in scenes for name in ("manifest.json", "capture.wav")]
        self._finish(f"baseline {method}", inputs, source)
        return reports

    def training_scene(self, scene_dir: Path, noisy: bool = False) -> TrainingScene:
        """The simulated capture of a scene with its binaural target.

        Without `noisy` the written noise image is subtracted again, which leaves
        the reverberant target image the filters are fitted to.
        """
        spec, _ = load_manifest(scene_dir)
        fs = self.cfg.sample_rate
        speech = read_mono(scene_dir / "source.wav", fs)
        capture = read_wav(scene_dir / "capture.wav", fs)
        if not noisy:
            capture = capture - read_wav(scene_dir / "noise.wav", fs)
        hrtf = hrtf_filter(self.config, hrtf_source(self.config), spec.target.azimuth)
        return TrainingScene(
            capture=stft_multichannel(capture, self.cfg),
            target=render_binaural(speech, spec.target.azimuth, self.cfg, hrtf=hrtf),
            metadata={
                "scene_id": spec.scene_id,
                "seed": spec.seed,
                "snr_db": spec.snr_db,
                "azimuth": spec.target.azimuth,
            },
        )

    def train_toy(self, source: Path, max_epochs: int | None = None):
        source = Path(source)
        scenes = scene_dirs(source)
        if not scenes:
            raise StorageError(f"No scene manifests found in {source}")

        noisy = self.config.tree_bool("train", "noisy")
        training = [self.training_scene(d, noisy) for d in scenes]
        settings = self.config.train_settings()
        if max_epochs is not None:
            settings = replace(settings, max_epochs=max_epochs)

        result = train(
            training,
            self.config.loss_weights(),
            settings,
            eps=self.config.tree_float("losses", "ild_eps"),
            per_bin=self.config.tree_bool("losses", "per_bin_ild"),
            metric_settings=self.config.metric_settings(),
            debug=self.config.debug,
        )

        write_text(self.out_dir / "filters.json", dumps_json(result.filters.to_json()))
        curve = io.StringIO()
        writer = csv.writer(curve, lineterminator="\n")
        writer.writerow(("epoch", "loss"))
        writer.writerows((i, repr(loss)) for i, loss in enumerate(result.losses))
        write_text(self.out_dir / "loss_curve.csv", curve.getvalue())

        for scene in training:
            estimate = apply_filters(result.filters, scene.capture).to_time()
            write_wav(
                self.out_dir / scene.metadata["scene_id"] / "estimate.wav",
                estimate,
                self.cfg.sample_rate,
            )
        write_text(
            self.out_dir / "metrics.json",
            dumps_json(
                {
                    "schema_version": SCHEMA_VERSION,
                    "final_loss": result.final_loss,
                    "epochs": len(result.losses),
                    "halvings": result.state.halvings,
                    "params": result.filters.num_params,
                    "noisy": noisy,
                    "reports": [r.to_json() for r in result.reports],
                    "summary": summarize(result.reports),
                },
            ),
        )
        names = ("manifest.json", "source.wav", "capture.wav", "noise.wav")
        inputs = [d / name for d in scenes for name in names]
        self._finish("train-toy", inputs, source)
        return result

    def evaluate(self, est_dir: Path, ref_dir: Path) -> dict:
        """Score every scene of ref_dir against the estimate in est_dir."""
        est_dir, ref_dir = Path(est_dir), Path(ref_dir)
        references = {p.name: p for p in _wav_scenes(ref_dir, ("target.wav",))}
        estimates = {
            p.name: p for p in _wav_scenes(est_dir, ("estimate.wav", "target.wav"))
        }
        if not references:
            raise StorageError(f"No target.wav scenes found in {ref_dir}")

        missing = sorted(set(references) - set(estimates))
        unmatched = sorted(set(estimates) - set(references))
        if missing or unmatched:
            details = []
            if missing:
                details.append(f"missing estimates: {', '.join(missing)}")
            if unmatched:
                details.append(f"unknown scenes: {', '.join(unmatched)}")
            raise StorageError("Scene sets differ, " + "; ".join(details))

        fs = self.cfg.sample_rate
        reports, estimates_used = [], []
        for scene_id in sorted(references):
            ref_scene = references[scene_id]
            est_file = _estimate_file(estimates[scene_id])
            metadata = {"scene_id": scene_id}
            if (ref_scene / "manifest.json").exists():
                spec, _ = load_manifest(ref_scene)
                metadata |= {
                    "seed": spec.seed,
                    "snr_db": spec.snr_db,
                    "azimuth": spec.target.azimuth,
                }
            reports.append(
                evaluate_binaural(
                    read_wav(est_file, fs),
                    read_wav(ref_scene / "target.wav", fs),
                    self.cfg,
                    self.config.metric_settings(),
                    **metadata,
                ),
            )
            estimates_used.append(est_file)

        targets = [references[s] / "target.wav" for s in sorted(references)]
        inputs = hash_files(estimates_used, est_dir, "estimates/")
        inputs |= hash_files(targets, ref_dir, "references/")

        summary = summarize(reports)
        self._write_reports(reports)
        write_text(self.out_dir / "summary.json", dumps_json(summary))
        manifest = RunManifest(
            "evaluate",
            self.config.data,
            inputs=inputs,
            outputs=hash_files(
                [self.out_dir / "metrics.csv", self.out_dir / "summary.json"],
                self.out_dir,
            ),
        )
        manifest.write(self.out_dir)
        return summary

    def _write_reports(self, reports: list):
        text = io.StringIO()
        writer = csv.DictWriter(text, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(report.to_json() for report in reports)
        write_text(self.out_dir / "metrics.csv", text.getvalue())

    def _finish(self, subcommand: str, inputs: list, root: Path):
        outputs = [
            p for p in self.out_dir.rglob("*") if p.is_file() and p.name != "run.json"
        ]
        RunManifest(
            subcommand,
            self.config.data,
            inputs=hash_files(inputs, root),
            outputs=hash_files(outputs, self.out_dir),
        ).write(self.out_dir)


def _wav_scenes(root: Path, names: tuple) -> list:
    if any((root / n).exists() for n in names):
        return [root]
    return sorted(
        p for p in root.iterdir() if p.is_dir() and any((p / n).exists() for n in names)
    )


def _estimate_file(scene_dir: Path) -> Path:
    estimate = scene_dir / "estimate.wav"
    return estimate if estimate.exists() else scene_dir / "target.wav"


def evaluate_files(config: Config, est_file: Path, ref_file: Path) -> MetricsReport:
    cfg = config.stft_config()
    return evaluate_binaural(
        read_wav(est_file, cfg.sample_rate),
        read_wav(ref_file, cfg.sample_rate),
        cfg,
        config.metric_settings(),
        scene_id=Path(ref_file).stem,
    )

