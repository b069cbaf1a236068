"""Point sets on the unit sphere used to discretize the rotation vector q."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class QGrid:
    points: np.ndarray  # (n_Q, n)
    scheme: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ConfigError("grid points must be an (n_Q, n) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def spacing(self) -> float | None:
        return self.meta.get("spacing")

    @property
    def angles(self) -> np.ndarray | None:
        a = self.meta.get("angles")
        return None if a is None else np.asarray(a)


def sample_uniform(n: int, n_q: int, rng: np.random.Generator) -> QGrid:
    """Uniform draws on the unit sphere in R^n via normalized Gaussians."""
    if n < 1 or n_q < 1:
        raise ConfigError("need n >= 1 and n_Q >= 1")
    z = rng.standard_normal((n_q, n))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # A zero Gaussian vector has probability zero; redraw defensively.
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        z[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
    return QGrid(z / norms, "uniform", {"n_q": n_q})


def polar_grid_2d(n_q: int, interval: tuple[float, float] = (-np.pi / 2, np.pi / 2)) -> QGrid:
    """Equally spaced angles on the half-open interval (a, b].

    Point j sits at ``a + (j + 1)(b - a)/n_Q`` so the right endpoint is
    included and the left one is not.
    """
    a, b = float(interval[0]), float(interval[1])
    if n_q < 2:
        raise ConfigError("polar grid needs n_Q >= 2")
    if not b > a:
        raise ConfigError("angle interval must have positive length")
    step = (b - a) / n_q
    ang = a + step * np.arange(1, n_q + 1)
    pts = np.column_stack([np.cos(ang), np.sin(ang)])
    return QGrid(pts, "polar", {"spacing": step, "angles": ang, "interval": (a, b)})


def embed_zero_restricted(grid: QGrid, n: int, z: int) -> QGrid:
    """Pad points of a grid on S^{n-z} with z leading zeros."""
    if z < 0 or z >= n:
        raise ConfigError("need 0 <= z < n")
    if grid.n != n - z:
        raise ConfigError(f"grid dimension {grid.n} does not match n - z = {n - z}")
    if z == 0:
        return grid
    pts = np.zeros((len(grid), n))
    pts[:, z:] = grid.points
    meta = dict(grid.meta)
    meta["n_zero"] = z
    return QGrid(pts, grid.scheme, meta)


def make_grid(n: int, z: int, n_q: int, rng: np.random.Generator | None = None, interval=None) -> QGrid:
    """Polar grid when the free sphere is a circle, uniform draws otherwise."""
    d = n - z
    if d == 2 and (interval is not None or rng is None):
        base = polar_grid_2d(n_q, interval or (-np.pi, np.pi))
    elif d == 1:
        base = QGrid(np.array([[1.0], [-1.0]]), "points")
    else:
        if rng is None:
            raise ConfigError("a random generator is required for grids on S^d with d > 2")
        base = sample_uniform(d, n_q, rng)
    return embed_zero_restricted(base, n, z)
