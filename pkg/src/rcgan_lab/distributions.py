"""Samplers and discretized densities for data, penalty and latent distributions."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SHAPES = ("loop", "arc", "four-dot")
KINDS = SHAPES + ("gaussian", "uniform")

LOOP_RADIUS = 1.0
LOOP_NOISE = 0.1
ARC_DEGREES = 240.0
DOT_CENTERS = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
DOT_NOISE = 0.15


@dataclass(frozen=True)
class DistSpec:
    """A distribution over R^dim.

    ``mean``/``var`` parameterize diagonal gaussians; ``lo``/``hi`` the
    uniform box. ``noise`` overrides the default noise of synthetic shapes.
    """

    kind: str
    dim: int = 2
    mean: tuple[float, ...] | None = None
    var: tuple[float, ...] | None = None
    lo: tuple[float, ...] | None = None
    hi: tuple[float, ...] | None = None
    noise: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.kind in SHAPES and self.dim != 2:
            raise ValueError(f"{self.kind} is only defined in 2 dimensions")
        if self.kind == "gaussian":
            object.__setattr__(self, "mean", _broadcast(self.mean, self.dim, 0.0))
            object.__setattr__(self, "var", _broadcast(self.var, self.dim, 1.0))
            if any(v <= 0 for v in self.var):
                raise ValueError("gaussian variances must be positive")
        if self.kind == "uniform":
            object.__setattr__(self, "lo", _broadcast(self.lo, self.dim, -1.0))
            object.__setattr__(self, "hi", _broadcast(self.hi, self.dim, 1.0))
            if any(a >= b for a, b in zip(self.lo, self.hi)):
                raise ValueError("uniform box needs lo < hi in every dimension")
        if self.noise is not None and self.noise <= 0:
            raise ValueError("noise scale must be positive")

    @classmethod
    def gaussian(cls, dim: int = 2, mean=0.0, var=1.0) -> DistSpec:
        return cls("gaussian", dim, mean=mean, var=var)

    @classmethod
    def uniform(cls, dim: int = 2, lo=-1.0, hi=1.0) -> DistSpec:
        return cls("uniform", dim, lo=lo, hi=hi)

    @classmethod
    def parse(cls, text: str, dim: int = 2) -> DistSpec:
        """Parse ``loop``, ``gaussian(0, 2)``, ``uniform([-1, 0], [0, 1])``...

        Gaussian arguments are mean and variance, uniform arguments lo and hi,
        shape arguments the noise scale. Scalars broadcast over ``dim``.
        """
        text = text.strip()
        name, _, rest = text.partition("(")
        name = name.strip()
        try:
            args = json.loads("[" + rest.rstrip().rstrip(")") + "]") if rest else []
        except json.JSONDecodeError:
            raise ValueError(f"cannot parse arguments of {text!r}") from None
        if name in SHAPES:
            return cls(name, 2, noise=args[0] if args else None)
        if name in ("gaussian", "normal"):
            mean, var = (args + [0.0, 1.0][len(args):])[:2]
            return cls.gaussian(dim, mean, var)
        if name == "uniform":
            lo, hi = (args + [-1.0, 1.0][len(args):])[:2]
            return cls.uniform(dim, lo, hi)
        raise ValueError(f"cannot parse distribution {text!r}")

    def describe(self) -> str:
        """Inverse of :meth:`parse`."""
        if self.kind == "gaussian":
            return f"gaussian({list(self.mean)}, {list(self.var)})"
        if self.kind == "uniform":
            return f"uniform({list(self.lo)}, {list(self.hi)})"
        return self.kind if self.noise is None else f"{self.kind}({self.noise})"


def _broadcast(value, dim: int, default: float) -> tuple[float, ...]:
    if value is None:
        value = default
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (dim,))
    return tuple(float(v) for v in arr)


def sample(spec: DistSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. samples as an ``(n, dim)`` array."""
    if n < 1:
        raise ValueError("need at least one sample")
    if spec.kind == "gaussian":
        return rng.normal(spec.mean, np.sqrt(spec.var), size=(n, spec.dim))
    if spec.kind == "uniform":
        return rng.uniform(spec.lo, spec.hi, size=(n, spec.dim))
    if spec.kind == "four-dot":
        sigma = spec.noise or DOT_NOISE
        which = rng.integers(0, 4, size=n)
        return DOT_CENTERS[which] + rng.normal(0.0, sigma, size=(n, 2))
    sigma = spec.noise or LOOP_NOISE
    span = 2 * np.pi if spec.kind == "loop" else np.deg2rad(ARC_DEGREES)
    theta = rng.uniform(0.0, span, size=n)
    r = LOOP_RADIUS + rng.normal(0.0, sigma, size=n)
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def pdf(spec: DistSpec, points: np.ndarray) -> np.ndarray:
    """Density (up to a constant for loop/arc) at each row of ``points``."""
    x = np.asarray(points, dtype=np.float64)
    if x.shape[-1] != spec.dim:
        raise ValueError(f"points have width {x.shape[-1]}, spec has dim {spec.dim}")
    if spec.kind == "gaussian":
        mean, var = np.array(spec.mean), np.array(spec.var)
        z = ((x - mean) ** 2 / var).sum(axis=-1)
        return np.exp(-0.5 * z) / np.sqrt(np.prod(2 * np.pi * var))
    if spec.kind == "uniform":
        lo, hi = np.array(spec.lo), np.array(spec.hi)
        inside = np.all((x >= lo) & (x <= hi), axis=-1)
        return inside / np.prod(hi - lo)
    if spec.kind == "four-dot":
        s2 = (spec.noise or DOT_NOISE) ** 2
        d2 = ((x[..., None, :] - DOT_CENTERS) ** 2).sum(axis=-1)
        return np.exp(-0.5 * d2 / s2).sum(axis=-1) / (4 * 2 * np.pi * s2)
    # ring densities: radial gaussian times angular indicator, up to normalization
    sigma = spec.noise or LOOP_NOISE
    r = np.hypot(x[..., 0], x[..., 1])
    dens = np.exp(-0.5 * ((r - LOOP_RADIUS) / sigma) ** 2) / np.maximum(r, 1e-12)
    if spec.kind == "arc":
        theta = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
        dens = dens * (theta <= np.deg2rad(ARC_DEGREES))
    return dens


def manifold_distance(spec: DistSpec, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the noise-free support of a shape."""
    x = np.asarray(points, dtype=np.float64)
    if spec.kind == "four-dot":
        d2 = ((x[..., None, :] - DOT_CENTERS) ** 2).sum(axis=-1)
        return np.sqrt(d2.min(axis=-1))
    if spec.kind == "loop":
        return np.abs(np.hypot(x[..., 0], x[..., 1]) - LOOP_RADIUS)
    if spec.kind == "arc":
        end = np.deg2rad(ARC_DEGREES)
        theta = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
        ring = np.abs(np.hypot(x[..., 0], x[..., 1]) - LOOP_RADIUS)
        ends = np.array([[LOOP_RADIUS, 0.0], [LOOP_RADIUS * np.cos(end), LOOP_RADIUS * np.sin(end)]])
        to_end = np.sqrt(((x[..., None, :] - ends) ** 2).sum(axis=-1)).min(axis=-1)
        return np.where(theta <= end, ring, to_end)
    raise ValueError(f"no manifold defined for {spec.kind}")


@dataclass(frozen=True)
class Grid2D:
    x_range: tuple[float, float] = (-3.0, 3.0)
    y_range: tuple[float, float] = (-3.0, 3.0)
    nx: int = 64
    ny: int = 64

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid resolution must be at least 2 per axis")
        if not (self.x_range[0] < self.x_range[1] and self.y_range[0] < self.y_range[1]):
            raise ValueError("grid ranges must be non-degenerate")

    @classmethod
    def parse(cls, text: str) -> Grid2D:
        """``"xlo,xhi,ylo,yhi,nx,ny"``; ``"lo,hi,n"`` gives a square grid."""
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) == 3:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            return cls((lo, hi), (lo, hi), n, n)
        if len(parts) == 6:
            xlo, xhi, ylo, yhi = map(float, parts[:4])
            return cls((xlo, xhi), (ylo, yhi), int(parts[4]), int(parts[5]))
        raise ValueError(f"cannot parse grid {text!r}")

    def describe(self) -> str:
        return f"{self.x_range[0]!r},{self.x_range[1]!r},{self.y_range[0]!r},{self.y_range[1]!r},{self.nx},{self.ny}"

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(rows, cols)``: rows index y, columns index x."""
        return (self.ny, self.nx)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates along x and y."""

        # offsets from the midpoint keep symmetric ranges exactly mirror-symmetric
        def centers(lo, hi, n):
            width = (hi - lo) / n
            return 0.5 * (lo + hi) + width * (np.arange(n) - 0.5 * (n - 1))

        return centers(*self.x_range, self.nx), centers(*self.y_range, self.ny)

    def centers(self) -> np.ndarray:
        """All cell centers, row-major, as a ``(ny*nx, 2)`` array."""
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack((gx.ravel(), gy.ravel()))


def density_on_grid(spec: DistSpec, grid: Grid2D) -> np.ndarray:
    """Cell-center density renormalized to a probability table of ``grid.shape``."""
    if spec.dim != 2:
        raise ValueError("grid densities need a 2-D distribution")
    dens = pdf(spec, grid.centers())
    total = dens.sum()
    if total <= 0:
        raise ValueError(f"{spec.describe()} puts no mass on the grid")
    return (dens / total).reshape(grid.shape)
