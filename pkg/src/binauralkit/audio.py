"""WAV file access. Samples are handled as float64 arrays shaped channels x N."""

import os
import tempfile
from pathlib import Path

import numpy as np
import soundfile as sf

from .errors import StorageError

SUBTYPES = {"float32": "FLOAT", "pcm16": "PCM_16"}


def read_wav(path: Path, sample_rate: int | None = None) -> np.ndarray:
    """Read a WAV file, refusing files whose rate does not match."""
    try:
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise StorageError(f"Unable to read {path}: {e}")

    if sample_rate is not None and rate != sample_rate:
        raise StorageError(
            f"{path} is sampled at {rate} Hz, expected {sample_rate} Hz "
            "(resampling is not supported)",
        )
    return data.T


def read_mono(path: Path, sample_rate: int | None = None) -> np.ndarray:
    data = read_wav(path, sample_rate)
    if data.shape[0] != 1:
        # downmix multi-channel sources
        return data.mean(axis=0)
    return data[0]


def write_wav(
    path: Path,
    data,
    sample_rate: int,
    subtype: str = "float32",
) -> Path:
    """Write channels x N samples atomically (temp file in place, then rename)."""
    path = Path(path)
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if subtype not in SUBTYPES:
        raise StorageError(f"Unknown WAV subtype {subtype}")

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        sf.write(
            tmp,
            data.T,
            sample_rate,
            subtype=SUBTYPES[subtype],
            format="WAV",
        )
        os.replace(tmp, path)
    except (RuntimeError, OSError) as e:
        Path(tmp).unlink(missing_ok=True)
        raise StorageError(f"Unable to write {path}: {e}")
    return path


def write_text(path: Path, text: str) -> Path:
    """Atomic text write, used for JSON and CSV reports."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(text)
        os.replace(tmp, path)
    except OSError as e:
        Path(tmp).unlink(missing_ok=True)
        raise StorageError(f"Unable to write {path}: {e}")
    return path
