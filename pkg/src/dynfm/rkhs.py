"""Dynamics functions drawn from the RKHS of a squared-exponential kernel.

A scalar function is a finite kernel expansion ``f(x) = sum_i a_i k(x, x_i)``;
a vector field stacks one independently drawn expansion per state dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .rng import substream

# Gram quadratic forms this far below zero are rounding noise.
NEG_NORM2_TOL = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    sigma2: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")


def kernel_eval(k: KernelConfig, x, x2) -> float:
    """RBF kernel ``sigma2 * exp(-|x - x2|^2 / (2 l^2))``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x.shape != x2.shape:
        raise ValueError(f"kernel_eval: dimension mismatch {x.shape} vs {x2.shape}")
    d2 = float(np.sum((x - x2) ** 2))
    return k.sigma2 * float(np.exp(-d2 / (2.0 * k.lengthscale**2)))


def kernel_matrix(k: KernelConfig, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise kernel values between the rows of ``a`` (n, d) and ``b`` (p, d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"kernel_matrix: dimension mismatch {a.shape} vs {b.shape}")
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return k.sigma2 * np.exp(-d2 / (2.0 * k.lengthscale**2))


@dataclass(frozen=True, eq=False)
class RkhsScalarFunction:
    points: np.ndarray  # (n, d_x)
    coeffs: np.ndarray  # (n,)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    box: tuple[float, float] | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=np.float64))
        if c.ndim != 1 or pts.shape[0] != c.shape[0] or c.shape[0] < 1:
            raise ValueError(
                f"need matching non-empty points/coeffs, got {pts.shape} and {c.shape}"
            )
        if self.box is not None:
            lo, hi = self.box
            if np.any(pts < lo) or np.any(pts > hi):
                raise ValueError(f"support points outside box [{lo}, {hi}]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "coeffs", c)

    @property
    def d_x(self) -> int:
        return self.points.shape[1]

    def __call__(self, x) -> float:
        return eval_scalar(self, x)


def eval_scalar(f: RkhsScalarFunction, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (f.d_x,):
        raise ValueError(f"eval_scalar: expected input of dimension {f.d_x}, got {x.shape}")
    d2 = np.sum((f.points - x) ** 2, axis=1)
    kx = f.kernel.sigma2 * np.exp(-d2 / (2.0 * f.kernel.lengthscale**2))
    return float(np.dot(f.coeffs, kx))


def rkhs_norm(f: RkhsScalarFunction) -> float:
    """``sqrt(a^T K a)`` with ``K`` the Gram matrix of the support points."""
    gram = kernel_matrix(f.kernel, f.points, f.points)
    norm2 = float(f.coeffs @ gram @ f.coeffs)
    if norm2 < 0.0:
        if norm2 < -NEG_NORM2_TOL:
            raise ArithmeticError(
                f"Gram quadratic form is negative ({norm2!r}); kernel matrix is indefinite"
            )
        norm2 = 0.0
    return float(np.sqrt(norm2))


def scale_to_norm(f: RkhsScalarFunction, norm_target: float) -> RkhsScalarFunction:
    if not norm_target > 0:
        raise ValueError(f"norm_target must be positive, got {norm_target}")
    current = rkhs_norm(f)
    if current == 0.0:
        raise ValueError("cannot rescale the zero function to a positive norm")
    return replace(f, coeffs=f.coeffs * (norm_target / current))


@dataclass(frozen=True, eq=False)
class RkhsVectorField:
    components: tuple[RkhsScalarFunction, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        dims = {c.d_x for c in comps}
        if len(dims) != 1:
            raise ValueError(f"components disagree on input dimension: {sorted(dims)}")
        object.__setattr__(self, "components", comps)
        # stacked copies for fast evaluation of all components at once
        object.__setattr__(self, "_pts", np.stack([c.points for c in comps]))
        object.__setattr__(self, "_coef", np.stack([c.coeffs for c in comps]))
        object.__setattr__(
            self, "_kern", np.array([[c.kernel.sigma2, c.kernel.lengthscale] for c in comps])
        )

    @property
    def d_x(self) -> int:
        return self.components[0].d_x

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d_x,):
            raise ValueError(f"vector field expects shape ({self.d_x},), got {x.shape}")
        if len(self.components) != self.d_x:
            raise ValueError("vector field must have one component per state dimension")
        d2 = np.sum((self._pts - x) ** 2, axis=2)  # (d_x, n)
        s2 = self._kern[:, :1]
        ls = self._kern[:, 1:]
        kx = s2 * np.exp(-d2 / (2.0 * ls**2))
        return np.sum(self._coef * kx, axis=1)


@dataclass(frozen=True)
class SamplerConfig:
    d_x: int = 2
    n_support: int = 100
    x_min: float = -5.0
    x_max: float = 5.0
    sigma_alpha2: float = 1.0
    norm_min: float = 5.0
    norm_max: float = 20.0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            object.__setattr__(self, "kernel", KernelConfig(**self.kernel))
        if self.d_x < 1 or self.n_support < 1:
            raise ValueError("d_x and n_support must be positive")
        if not self.x_min < self.x_max:
            raise ValueError(f"need x_min < x_max, got {self.x_min} >= {self.x_max}")
        if not self.sigma_alpha2 > 0:
            raise ValueError("sigma_alpha2 must be positive")
        if not 0 < self.norm_min <= self.norm_max:
            raise ValueError(f"need 0 < norm_min <= norm_max, got {self.norm_min}, {self.norm_max}")


def draw_support(cfg: SamplerConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform support points in the box and raw N(0, sigma_alpha2) coefficients."""
    pts = rng.uniform(cfg.x_min, cfg.x_max, size=(cfg.n_support, cfg.d_x))
    coeffs = rng.normal(0.0, np.sqrt(cfg.sigma_alpha2), size=cfg.n_support)
    return pts, coeffs


def sample_scalar_function(cfg: SamplerConfig, rng: np.random.Generator) -> RkhsScalarFunction:
    pts, coeffs = draw_support(cfg, rng)
    target = rng.uniform(cfg.norm_min, cfg.norm_max)
    f = RkhsScalarFunction(pts, coeffs, cfg.kernel, box=(cfg.x_min, cfg.x_max))
    return scale_to_norm(f, target)


def sample_vector_field(cfg: SamplerConfig, index: int = 0) -> RkhsVectorField:
    """Draw the ``index``-th vector field of the stream keyed by ``cfg.seed``.

    Each component uses its own substream and its own target norm.
    """
    comps = tuple(
        sample_scalar_function(cfg, substream(cfg.seed, "field", index, j))
        for j in range(cfg.d_x)
    )
    return RkhsVectorField(comps)
