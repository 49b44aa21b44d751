"""Composite binaural training objective with analytic gradients.

Gradients use one convention throughout: for a real loss L of a complex
estimate z, grad = dL/dRe(z) + j dL/dIm(z). A gradient descent step is then
simply z -= lr * grad, and finite differences taken separately on the real and
imaginary parts reproduce it directly.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import LossError
from .spectral import BinauralSpectrogram

ILD_EPS = 1e-8
MAGNITUDE_FLOOR = 1e-12
DB_PER_NEPER = 20 / math.log(10)


@dataclass(frozen=True)
class LossWeights:
    lambda_ri: float = 1.0
    lambda_mag: float = 1.0
    lambda_mwild: float = 3.0

    def __post_init__(self):
        for name in ("lambda_ri", "lambda_mag", "lambda_mwild"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise LossError(f"{name} must be a finite non-negative number")


@dataclass(frozen=True, eq=False)
class EnergyWeights:
    """sigma = |Y^l|^2 + |Y^r|^2 of the target."""

    sigma: np.ndarray

    @classmethod
    def from_target(cls, target: BinauralSpectrogram) -> "EnergyWeights":
        return cls(target.energy())

    @property
    def mass(self) -> float:
        return float(np.sum(self.sigma))


@dataclass(frozen=True, eq=False)
class LossTerm:
    value: float
    grad_left: np.ndarray
    grad_right: np.ndarray


@dataclass(frozen=True, eq=False)
class LossBreakdown:
    l_ri: float
    l_mag: float
    l_mwild: float
    total: float
    grad_left: np.ndarray
    grad_right: np.ndarray

    def to_json(self) -> dict:
        return {
            "l_ri": self.l_ri,
            "l_mag": self.l_mag,
            "l_mwild": self.l_mwild,
            "total": self.total,
        }


def _check_shapes(est: BinauralSpectrogram, target: BinauralSpectrogram):
    if est.shape != target.shape:
        raise LossError(f"Estimate {est.shape} and target {target.shape} differ")


def ild(spec: BinauralSpectrogram, eps: float = ILD_EPS) -> np.ndarray:
    """Per-bin level difference 20 log10((|Y^l| + eps) / (|Y^r| + eps)) in dB."""
    if eps < 0:
        raise LossError(f"ILD floor must be non-negative, got {eps}")
    with np.errstate(divide="ignore"):
        left = np.log10(np.abs(spec.left) + eps)
        right = np.log10(np.abs(spec.right) + eps)
    return 20 * (left - right)


def _ild_grad(z: np.ndarray, eps: float) -> np.ndarray:
    """Gradient of 20 log10(|z| + eps), zero where z vanishes."""
    magnitude = np.abs(z)
    grad = np.zeros_like(z)
    nonzero = magnitude > 0
    grad[nonzero] = (
        DB_PER_NEPER
        * z[nonzero]
        / (magnitude[nonzero] * (magnitude[nonzero] + eps))
    )
    return grad


def loss_ri(est: BinauralSpectrogram, target: BinauralSpectrogram) -> LossTerm:
    """Squared error of real and imaginary parts over both ears."""
    _check_shapes(est, target)
    residual_left = est.left - target.left
    residual_right = est.right - target.right
    value = float(
        np.sum(np.abs(residual_left) ** 2) + np.sum(np.abs(residual_right) ** 2),
    )
    return LossTerm(value, 2 * residual_left, 2 * residual_right)


def _mag_term(z: np.ndarray, reference: np.ndarray):
    magnitude = np.abs(z)
    residual = magnitude - np.abs(reference)
    grad = 2 * residual * z / np.maximum(magnitude, MAGNITUDE_FLOOR)
    return float(np.sum(residual**2)), grad


def loss_mag(est: BinauralSpectrogram, target: BinauralSpectrogram) -> LossTerm:
    """Squared error of the magnitude spectra over both ears."""
    _check_shapes(est, target)
    left, grad_left = _mag_term(est.left, target.left)
    right, grad_right = _mag_term(est.right, target.right)
    return LossTerm(left + right, grad_left, grad_right)


def loss_mwild(
    est: BinauralSpectrogram,
    target: BinauralSpectrogram,
    eps: float = ILD_EPS,
    per_bin: bool = False,
    weights: EnergyWeights | None = None,
) -> LossTerm:
    """Energy-weighted ILD error.

    By default the weighted signed mean of the per-bin errors is taken and then
    its absolute value, so opposing errors cancel. per_bin=True averages the
    per-bin absolute errors instead.
    """
    _check_shapes(est, target)
    if weights is None:
        weights = EnergyWeights.from_target(target)
    mass = weights.mass
    if not mass > 0:
        raise LossError("zero weight mass: the target is silent")

    error = ild(est, eps) - ild(target, eps)
    if per_bin:
        value = float(np.sum(weights.sigma * np.abs(error)) / mass)
        coefficient = weights.sigma * np.sign(error) / mass
    else:
        mean = float(np.sum(weights.sigma * error) / mass)
        value = abs(mean)
        coefficient = np.sign(mean) * weights.sigma / mass

    return LossTerm(
        value,
        coefficient * _ild_grad(est.left, eps),
        -coefficient * _ild_grad(est.right, eps),
    )


def composite_loss(
    est: BinauralSpectrogram,
    target: BinauralSpectrogram,
    weights: LossWeights = LossWeights(),
    eps: float = ILD_EPS,
    per_bin: bool = False,
) -> LossBreakdown:
    ri = loss_ri(est, target)
    mag = loss_mag(est, target)
    mwild = loss_mwild(est, target, eps, per_bin)

    total = (
        weights.lambda_ri * ri.value
        + weights.lambda_mag * mag.value
        + weights.lambda_mwild * mwild.value
    )
    grad_left = (
        weights.lambda_ri * ri.grad_left
        + weights.lambda_mag * mag.grad_left
        + weights.lambda_mwild * mwild.grad_left
    )
    grad_right = (
        weights.lambda_ri * ri.grad_right
        + weights.lambda_mag * mag.grad_right
        + weights.lambda_mwild * mwild.grad_right
    )
    return LossBreakdown(
        l_ri=ri.value,
        l_mag=mag.value,
        l_mwild=mwild.value,
        total=total,
        grad_left=grad_left,
        grad_right=grad_right,
    )


LossFunction = Callable[[BinauralSpectrogram, BinauralSpectrogram], LossTerm]


def _numeric_gradient(loss: LossFunction, est, target, step: float):
    grads = []
    for ear in ("left", "right"):
        base = getattr(est, ear)
        grad = np.zeros(base.shape, dtype=np.complex128)
        for index in np.ndindex(base.shape):
            for direction in (1.0, 1j):
                values = []
                for sign in (1, -1):
                    perturbed = base.copy()
                    perturbed[index] += sign * step * direction
                    pair = {"left": est.left, "right": est.right, ear: perturbed}
                    shifted = BinauralSpectrogram(config=est.config, **pair)
                    values.append(loss(shifted, target).value)
                grad[index] += direction * (values[0] - values[1]) / (2 * step)
        grads.append(grad)
    return grads


def gradient_check(
    loss: LossFunction,
    est: BinauralSpectrogram,
    target: BinauralSpectrogram,
    step: float = 1e-6,
) -> float:
    """Max |analytic - numeric| / max |numeric| over both ears."""
    term = loss(est, target)
    numeric_left, numeric_right = _numeric_gradient(loss, est, target, step)
    numeric = np.concatenate([numeric_left.ravel(), numeric_right.ravel()])
    analytic = np.concatenate([term.grad_left.ravel(), term.grad_right.ravel()])
    scale = np.max(np.abs(numeric))
    if scale == 0:
        return float(np.max(np.abs(analytic)))
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_pair(
    seed: int = 0,
    shape: tuple = (8, 8),
) -> tuple[BinauralSpectrogram, BinauralSpectrogram]:
    rng = np.random.default_rng(seed)

    def draw():
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    est = BinauralSpectrogram(draw(), draw())
    target = BinauralSpectrogram(draw(), draw())
    return est, target


def run_gradcheck(
    seed: int = 0,
    shape: tuple = (8, 8),
    weights: LossWeights = LossWeights(),
    eps: float = ILD_EPS,
) -> dict:
    """Relative gradient error of every loss on a random pair."""
    est, target = random_pair(seed, shape)

    def composite(e, t):
        breakdown = composite_loss(e, t, weights, eps)
        return LossTerm(breakdown.total, breakdown.grad_left, breakdown.grad_right)

    checks = {
        "ri": loss_ri,
        "mag": loss_mag,
        "mwild": lambda e, t: loss_mwild(e, t, eps),
        "composite": composite,
    }
    return {name: gradient_check(fn, est, target) for name, fn in checks.items()}
