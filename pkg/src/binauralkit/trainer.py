"""Learnable complex filter pairs fitted directly to binaural targets.

The filters act on the multichannel capture per bin, Y = W^H X, with one
filter per frequency (time-invariant) or one per frequency and frame (full).
They are optimised with Adam on the composite loss, halving the learning rate
after `patience` epochs without improvement and stopping at the
`max_halvings`-th halving.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .console import debug_echo
from .errors import TrainingError
from .losses import ILD_EPS, LossWeights, composite_loss
from .metrics import MetricSettings, MetricsReport, evaluate_binaural
from .spectral import BinauralSpectrogram, MultiChannelSpectrogram

MODES = ("time-invariant", "full")
SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class FilterSet:
    left: np.ndarray  # M x F, or M x F x T
    right: np.ndarray

    def __post_init__(self):
        left = np.array(self.left, dtype=np.complex128)
        right = np.array(self.right, dtype=np.complex128)
        if left.shape != right.shape or left.ndim not in (2, 3):
            raise TrainingError(
                f"Filter shapes {left.shape} / {right.shape} must match, M x F [x T]",
            )
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise TrainingError("Filters contain non-finite values")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def mode(self) -> str:
        return MODES[0] if self.left.ndim == 2 else MODES[1]

    @property
    def shape(self) -> tuple:
        return self.left.shape

    @classmethod
    def zeros(cls, num_mics: int, num_bins: int, num_frames: int | None = None):
        shape = (num_mics, num_bins) + ((num_frames,) if num_frames else ())
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def selector(
        cls,
        num_mics: int,
        num_bins: int,
        mic: int = 0,
        num_frames: int | None = None,
    ) -> "FilterSet":
        """Both ears pass one microphone through unchanged."""
        filters = cls.zeros(num_mics, num_bins, num_frames)
        left, right = filters.left, filters.right
        left[mic] = 1.0
        right[mic] = 1.0
        return cls(left, right)

    @property
    def num_params(self) -> int:
        """Complex coefficients over both ears."""
        return self.left.size + self.right.size

    def to_json(self) -> dict:
        def encode(values):
            return {"real": values.real.tolist(), "imag": values.imag.tolist()}

        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "shape": list(self.shape),
            "left": encode(self.left),
            "right": encode(self.right),
        }

    @classmethod
    def from_json(cls, data: dict) -> "FilterSet":
        try:
            left = np.array(data["left"]["real"]) + 1j * np.array(data["left"]["imag"])
            right = np.array(data["right"]["real"]) + 1j * np.array(
                data["right"]["imag"],
            )
        except (KeyError, TypeError) as e:
            raise TrainingError(f"Malformed filter file: {e}")
        return cls(left, right)


def _check(filters: FilterSet, capture: MultiChannelSpectrogram):
    M, F, T = capture.data.shape
    expected = (M, F) if filters.mode == MODES[0] else (M, F, T)
    if filters.shape != expected:
        raise TrainingError(
            f"Filters {filters.shape} do not fit a capture of {capture.data.shape}",
        )


def apply_filters(
    filters: FilterSet,
    capture: MultiChannelSpectrogram,
) -> BinauralSpectrogram:
    """Y^{l|r}[f, t] = sum_m conj(W^{l|r}[m, f(, t)]) X[m, f, t]."""
    _check(filters, capture)
    pattern = "mf,mft->ft" if filters.mode == MODES[0] else "mft,mft->ft"
    X = capture.data
    return BinauralSpectrogram(
        np.einsum(pattern, filters.left.conj(), X),
        np.einsum(pattern, filters.right.conj(), X),
        capture.config,
    )


def backprop_filters(
    grad_left: np.ndarray,
    grad_right: np.ndarray,
    capture: MultiChannelSpectrogram,
    mode: str = MODES[0],
) -> FilterSet:
    """Filter gradient X conj(dL/dY), summed over frames for time-invariant filters."""
    X = capture.data
    if grad_left.shape != X.shape[1:] or grad_right.shape != X.shape[1:]:
        raise TrainingError(
            f"Output gradient {grad_left.shape} does not fit capture {X.shape}",
        )
    if mode == MODES[0]:
        pattern = "mft,ft->mf"
    elif mode == MODES[1]:
        pattern = "mft,ft->mft"
    else:
        raise TrainingError(f"Unknown filter mode {mode}")
    return FilterSet(
        np.einsum(pattern, X, grad_left.conj()),
        np.einsum(pattern, X, grad_right.conj()),
    )


def oracle_filters(transfer: np.ndarray, hrtf) -> FilterSet:
    """W = c conj(a) / |c|^2 per bin, so that W^H (c S) = a S exactly.

    transfer is the M x F target transfer c and hrtf any object with
    F-length `left` and `right` responses.
    """
    c = np.asarray(transfer, dtype=np.complex128)
    power = np.sum(np.abs(c) ** 2, axis=0)
    if np.any(power == 0):
        raise TrainingError("Target transfer vanishes at some frequency bin")
    return FilterSet(
        c * np.conj(hrtf.left)[None] / power,
        c * np.conj(hrtf.right)[None] / power,
    )


class Adam:
    """Adam over a dict of complex arrays, updated in place through real views."""

    def __init__(
        self,
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t

        for key, param in params.items():
            p = param.view(np.float64)
            g = np.ascontiguousarray(grads[key]).view(np.float64)
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)

            self.m[key] *= self.beta1
            self.m[key] += (1.0 - self.beta1) * g
            self.v[key] *= self.beta2
            self.v[key] += (1.0 - self.beta2) * (g * g)

            denominator = np.sqrt(self.v[key] / correction2) + self.epsilon
            p -= self.lr / correction1 * self.m[key] / denominator


@dataclass
class TrainState:
    learning_rate: float = 5e-4
    patience: int = 3
    max_halvings: int = 4
    step: int = 0
    stale_epochs: int = 0
    halvings: int = 0
    best_loss: float = math.inf

    def record(self, loss: float) -> bool:
        """Register an epoch loss, halving the rate after `patience` stale epochs."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.stale_epochs = 0
            return True

        self.stale_epochs += 1
        if self.stale_epochs >= self.patience:
            self.learning_rate /= 2
            self.halvings += 1
            self.stale_epochs = 0
        return False

    @property
    def finished(self) -> bool:
        return self.halvings >= self.max_halvings


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 5e-4
    patience: int = 3
    max_halvings: int = 4
    max_epochs: int = 20000
    mode: str = MODES[0]
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainingError(f"Unknown filter mode {self.mode}")
        if self.learning_rate <= 0 or self.patience < 1 or self.max_epochs < 0:
            raise TrainingError("Invalid training schedule")


@dataclass(frozen=True, eq=False)
class TrainingScene:
    capture: MultiChannelSpectrogram
    target: BinauralSpectrogram
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class TrainResult:
    filters: FilterSet
    losses: list
    final_loss: float
    state: TrainState
    reports: list


def _rms(values) -> float:
    return float(np.sqrt(np.mean(np.abs(values) ** 2)))


def _epoch(filters, scenes, weights, eps, per_bin, mode):
    total = 0.0
    grad_left = np.zeros_like(filters.left)
    grad_right = np.zeros_like(filters.right)
    for scene in scenes:
        breakdown = composite_loss(
            apply_filters(filters, scene.capture),
            scene.target,
            weights,
            eps,
            per_bin,
        )
        grads = backprop_filters(
            breakdown.grad_left,
            breakdown.grad_right,
            scene.capture,
            mode,
        )
        total += breakdown.total
        grad_left += grads.left
        grad_right += grads.right
    return total, grad_left, grad_right


def train(
    scenes: list,
    weights: LossWeights = LossWeights(),
    settings: TrainSettings = TrainSettings(),
    initial: FilterSet | None = None,
    eps: float = ILD_EPS,
    per_bin: bool = False,
    metric_settings: MetricSettings = MetricSettings(),
    debug: bool = False,
) -> TrainResult:
    """Fit one filter pair to every scene and report metrics of the filtered output.

    The capture is rescaled to the loudness of the target during optimisation,
    which keeps the filter values near unity; returned filters act on the
    unscaled capture.
    """
    if not scenes:
        raise TrainingError("No training scenes")
    M, F, T = scenes[0].capture.data.shape
    for scene in scenes:
        if scene.capture.data.shape[:2] != (M, F) or scene.target.shape[0] != F:
            raise TrainingError("All scenes need the same microphones and bins")
        if settings.mode == MODES[1] and scene.capture.num_frames != T:
            raise TrainingError("Full filters need scenes of equal length")

    if initial is None:
        initial = FilterSet.selector(M, F, 0, T if settings.mode == MODES[1] else None)
    if initial.mode != settings.mode:
        raise TrainingError(f"Initial filters are {initial.mode}, not {settings.mode}")

    capture_rms = _rms(np.concatenate([s.capture.data.ravel() for s in scenes]))
    target_rms = _rms(
        np.concatenate([np.ravel([s.target.left, s.target.right]) for s in scenes]),
    )
    if capture_rms == 0 or target_rms == 0:
        raise TrainingError("Capture or target is silent")
    scale = target_rms / capture_rms
    scaled = [
        TrainingScene(s.capture.scaled(scale), s.target, s.metadata) for s in scenes
    ]

    params = {"left": initial.left / scale, "right": initial.right / scale}
    state = TrainState(settings.learning_rate, settings.patience, settings.max_halvings)
    adam = Adam(
        settings.learning_rate,
        settings.beta1,
        settings.beta2,
        settings.epsilon,
    )
    losses = []

    for epoch in range(settings.max_epochs):
        loss, grad_left, grad_right = _epoch(
            FilterSet(params["left"], params["right"]),
            scaled,
            weights,
            eps,
            per_bin,
            settings.mode,
        )
        if not math.isfinite(loss):
            raise TrainingError(f"Loss became non-finite at epoch {epoch}: {loss}")

        losses.append(loss)
        state.record(loss)
        debug_echo(
            debug,
            f"epoch {epoch}: loss {loss:.6g} lr {state.learning_rate:.3g} "
            f"best {state.best_loss:.6g}",
        )
        if state.finished:
            break

        adam.lr = state.learning_rate
        adam.step(params, {"left": grad_left, "right": grad_right})
        state.step += 1

    if state.step == 0:
        filters = initial
    else:
        filters = FilterSet(params["left"] * scale, params["right"] * scale)

    final_loss, _, _ = _epoch(filters, scenes, weights, eps, per_bin, settings.mode)
    reports = []
    for scene in scenes:
        estimate = apply_filters(filters, scene.capture)
        reports.append(
            evaluate_binaural(
                estimate.to_time(),
                scene.target.to_time(),
                scene.capture.config,
                metric_settings,
                **scene.metadata,
            ),
        )
    return TrainResult(filters, losses, final_loss, state, reports)
