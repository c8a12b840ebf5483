"""Test objectives with analytic gradients and stochastic gradient oracles.

Objectives evaluate on arrays of shape ``(..., dim)`` so that a whole ensemble
of iterates can be pushed through one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np


class ProblemError(ValueError):
    pass


class Objective:
    """Smooth objective ``f`` with exact gradient.

    Subclasses set ``dim``, ``fstar`` (known minimum value or None), ``L``
    (gradient Lipschitz constant or None), ``minima`` (label -> point) and
    ``x0`` (default start).
    """

    name = "objective"
    dim: int
    fstar: float | None = None
    L: float | None = None
    minima: dict[int, np.ndarray] | None = None
    x0: np.ndarray

    def f(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError


# Local minimizer of ((x + 0.7)^2 + 0.1)(x - 0.7)^2 on the left branch:
# the derivative factors as 2(x - 0.7)(2x^2 + 1.4x + 0.1).
_TOY_LEFT = (-1.4 - math.sqrt(1.4**2 - 0.8)) / 4.0


class ToyObjective(Objective):
    """Separable 2-D quartic with four local minima.

    Labels: 1 top-left, 2 top-right, 3 bottom-left, 4 bottom-right (global,
    f = 0 at (0.7, -0.7)).  The three local minima sit at +-0.6193 rather than
    +-0.7 on the coordinate whose quadratic factor carries the 0.1 offset.
    """

    name = "toy2d"
    dim = 2
    fstar = 0.0
    L = None

    def __init__(self):
        lo, hi = _TOY_LEFT, -_TOY_LEFT
        self.minima = {
            1: np.array([lo, hi]),
            2: np.array([0.7, hi]),
            3: np.array([lo, -0.7]),
            4: np.array([0.7, -0.7]),
        }
        self.x0 = np.array([-0.9, 0.9])

    def f(self, x):
        x = np.asarray(x, dtype=float)
        u, v = x[..., 0], x[..., 1]
        return ((u + 0.7) ** 2 + 0.1) * (u - 0.7) ** 2 + (v + 0.7) ** 2 * ((v - 0.7) ** 2 + 0.1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        u, v = x[..., 0], x[..., 1]
        gu = 2 * (u + 0.7) * (u - 0.7) ** 2 + 2 * ((u + 0.7) ** 2 + 0.1) * (u - 0.7)
        gv = 2 * (v + 0.7) * ((v - 0.7) ** 2 + 0.1) + 2 * (v + 0.7) ** 2 * (v - 0.7)
        return np.stack([gu, gv], axis=-1)

    def local_smoothness(self, radius: float) -> float:
        """Lipschitz constant of the gradient on the box ``|x_j| <= radius``.

        The quartic has no global one.  Both coordinates have second derivative
        ``12 u^2 - 4 a^2 + 2 c`` with a = 0.7, c = 0.1.
        """
        return float(max(12 * radius**2 - 4 * 0.7**2 + 2 * 0.1, 4 * 0.7**2 - 2 * 0.1))


class QuadraticObjective(Objective):
    """``0.5 * sum_j lambda_j x_j^2``."""

    name = "quadratic"
    fstar = 0.0

    def __init__(self, curvatures):
        lam = np.atleast_1d(np.asarray(curvatures, dtype=float))
        if lam.ndim != 1 or lam.size == 0 or np.any(lam <= 0):
            raise ProblemError(f"curvatures must be positive, got {curvatures!r}")
        self.curvatures = lam
        self.dim = lam.size
        self.L = float(lam.max())
        self.minima = {1: np.zeros(self.dim)}
        self.x0 = np.ones(self.dim)

    def f(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(self.curvatures * x**2, axis=-1)

    def grad(self, x):
        return self.curvatures * np.asarray(x, dtype=float)


def toy_objective() -> ToyObjective:
    return ToyObjective()


def quadratic_objective(dim: int, curvatures) -> QuadraticObjective:
    obj = QuadraticObjective(np.broadcast_to(np.asarray(curvatures, dtype=float), (dim,)))
    return obj


def quadratic_from_range(dim: int, lambda_min: float, lambda_max: float) -> QuadraticObjective:
    """Curvatures evenly spaced on ``[lambda_min, lambda_max]`` (config form)."""
    if lambda_max < lambda_min:
        raise ProblemError("lambda_max < lambda_min")
    if dim == 1 and lambda_min != lambda_max:
        raise ProblemError("a 1-D quadratic needs lambda_min == lambda_max")
    return QuadraticObjective(np.linspace(lambda_min, lambda_max, dim))


# --- noise models ---------------------------------------------------------------


@dataclass(frozen=True)
class Additive:
    """``g = grad f(x) + sd * z`` with i.i.d. standard normal ``z`` per coordinate."""

    sd: float = 1.0

    def __post_init__(self):
        if self.sd < 0:
            raise ProblemError("sd must be >= 0")

    unbiased = True

    @property
    def is_zero(self) -> bool:
        return self.sd == 0

    def apply(self, grad, z):
        return grad + self.sd * z

    def constants(self, dim: int) -> tuple[float, float]:
        """(rho, sigma) of the variance bound E||g - grad||^2 <= rho ||grad||^2 + sigma."""
        return 0.0, dim * self.sd**2


@dataclass(frozen=True)
class Relative:
    """``g = grad + eps`` with ``E||eps||^2 = rho ||grad||^2 + sigma`` exactly."""

    rho: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.rho < 0 or self.sigma < 0:
            raise ProblemError("rho and sigma must be >= 0")

    unbiased = True

    @property
    def is_zero(self) -> bool:
        return self.rho == 0 and self.sigma == 0

    def apply(self, grad, z):
        dim = grad.shape[-1]
        var = (self.rho * np.sum(grad**2, axis=-1, keepdims=True) + self.sigma) / dim
        return grad + np.sqrt(var) * z

    def constants(self, dim: int) -> tuple[float, float]:
        return self.rho, self.sigma


@dataclass(frozen=True)
class ClippedAdditive:
    """Additive noise rescaled so that ``||g|| <= G``; biased near the clip."""

    sd: float = 1.0
    G: float = 1.0

    def __post_init__(self):
        if self.sd < 0 or self.G <= 0:
            raise ProblemError("need sd >= 0 and G > 0")

    unbiased = False

    @property
    def is_zero(self) -> bool:
        return False

    def apply(self, grad, z):
        g = grad + self.sd * z
        norm = np.sqrt(np.sum(g**2, axis=-1, keepdims=True))
        return g * np.minimum(1.0, self.G / np.maximum(norm, np.finfo(float).tiny))

    def constants(self, dim: int) -> tuple[float, float]:
        return 0.0, dim * self.sd**2


NoiseModel = Union[Additive, Relative, ClippedAdditive]


class OracleSample(NamedTuple):
    g: np.ndarray
    grad_norm: float


def stochastic_grad(obj: Objective, noise: NoiseModel, x, rng: np.random.Generator) -> OracleSample:
    x = np.asarray(x, dtype=float)
    z = rng.standard_normal(x.shape)
    g = noise.apply(obj.grad(x), z)
    return OracleSample(g, float(np.linalg.norm(g)))


# --- basins -----------------------------------------------------------------------


def classify_basins(obj: Objective, X) -> np.ndarray:
    """Label of the nearest listed minimum for each row of ``X``.

    Ties go to the lowest label.
    """
    if not obj.minima:
        raise ProblemError(f"objective {obj.name!r} lists no minima")
    labels = sorted(obj.minima)
    centres = np.stack([obj.minima[k] for k in labels])
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d2 = np.sum((X[:, None, :] - centres[None, :, :]) ** 2, axis=-1)
    return np.asarray(labels)[np.argmin(d2, axis=1)]


def classify_basin(obj: Objective, x) -> int:
    return int(classify_basins(obj, x)[0])
