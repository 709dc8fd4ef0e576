"""Built-in synthetic scenes: plane, sphere, and a two-plane occluder.

Each scene pairs a sampled point cloud with the analytic surfaces it was
sampled from, so tests can ray-cast exact depths as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud


@dataclass(frozen=True)
class Rectangle:
    """Planar rectangle: center plus two orthogonal in-plane half-axes."""

    center: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    half_u: float
    half_v: float

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.axis_u, self.axis_v)
        return n / np.linalg.norm(n)

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = self.normal
        denom = dirs @ n
        safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
        t = ((self.center - origins) @ n) / safe
        hit = origins + t[:, None] * dirs
        rel = hit - self.center
        u = rel @ (self.axis_u / np.linalg.norm(self.axis_u))
        v = rel @ (self.axis_v / np.linalg.norm(self.axis_v))
        ok = (
            (np.abs(denom) > 1e-12)
            & (t > 1e-9)
            & (np.abs(u) <= self.half_u)
            & (np.abs(v) <= self.half_v)
        )
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origins - self.center
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 1e-9, t0, t1)
        return np.where((disc >= 0) & (t > 1e-9), t, np.inf)


@dataclass(frozen=True)
class Scene:
    """A point cloud with the analytic surfaces it samples."""

    name: str
    cloud: PointCloud
    surfaces: tuple = field(default_factory=tuple)

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """First-hit ray parameter t per ray (inf for misses); dirs need not be unit."""
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        unit = dirs / norms
        t = np.full(origins.shape[0], np.inf)
        for surf in self.surfaces:
            t = np.minimum(t, surf.raycast(origins, unit))
        return t / norms[:, 0]


def fibonacci_sphere(count: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Quasi-uniform points on a sphere via the Fibonacci lattice."""
    i = np.arange(count, dtype=np.float64)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    y = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    pts = np.stack([r * np.cos(phi), y, r * np.sin(phi)], axis=1)
    return np.asarray(center, dtype=np.float64) + radius * pts


def _grid_on_rectangle(rect: Rectangle, nu: int, nv: int) -> np.ndarray:
    u = np.linspace(-rect.half_u, rect.half_u, nu)
    v = np.linspace(-rect.half_v, rect.half_v, nv)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    eu = rect.axis_u / np.linalg.norm(rect.axis_u)
    ev = rect.axis_v / np.linalg.norm(rect.axis_v)
    return rect.center + uu.reshape(-1, 1) * eu + vv.reshape(-1, 1) * ev


def plane_scene(
    half_extent: float = 1.0,
    grid: int = 120,
    center=(0.0, 0.0, 0.0),
    axis_u=(1.0, 0.0, 0.0),
    axis_v=(0.0, 1.0, 0.0),
) -> Scene:
    """Single rectangle sampled on a regular grid; normal is axis_u x axis_v."""
    rect = Rectangle(
        center=np.asarray(center, dtype=np.float64),
        axis_u=np.asarray(axis_u, dtype=np.float64),
        axis_v=np.asarray(axis_v, dtype=np.float64),
        half_u=half_extent,
        half_v=half_extent,
    )
    pts = _grid_on_rectangle(rect, grid, grid)
    return Scene(name="plane", cloud=PointCloud(positions=pts), surfaces=(rect,))


def sphere_scene(count: int = 4000, radius: float = 1.0) -> Scene:
    """Unit-ish sphere at the origin, Fibonacci-sampled."""
    pts = fibonacci_sphere(count, radius=radius)
    return Scene(
        name="sphere",
        cloud=PointCloud(positions=pts),
        surfaces=(Sphere(center=np.zeros(3), radius=radius),),
    )


def two_plane_scene(
    back_half: float = 1.0,
    occluder_half: float = 0.3,
    back_z: float = -0.5,
    occluder_z: float = 0.5,
    grid: int = 140,
) -> Scene:
    """Large back plane with a small fronto-parallel square occluder.

    Intended for cameras on the +Z side; the occluder shadows part of the
    back plane under a viewpoint change.
    """
    back = Rectangle(
        center=np.array([0.0, 0.0, back_z]),
        axis_u=np.array([1.0, 0.0, 0.0]),
        axis_v=np.array([0.0, 1.0, 0.0]),
        half_u=back_half,
        half_v=back_half,
    )
    occ_grid = max(8, int(grid * occluder_half / back_half))
    occ = Rectangle(
        center=np.array([0.0, 0.0, occluder_z]),
        axis_u=np.array([1.0, 0.0, 0.0]),
        axis_v=np.array([0.0, 1.0, 0.0]),
        half_u=occluder_half,
        half_v=occluder_half,
    )
    pts = np.concatenate(
        [_grid_on_rectangle(back, grid, grid), _grid_on_rectangle(occ, occ_grid, occ_grid)]
    )
    return Scene(name="two_plane", cloud=PointCloud(positions=pts), surfaces=(back, occ))


_BUILTINS = {
    "plane": plane_scene,
    "sphere": sphere_scene,
    "two_plane": two_plane_scene,
}


def builtin_scene(name: str, **kwargs) -> Scene:
    """Construct a built-in scene by id: plane, sphere, or two_plane."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown scene {name!r}; available: {sorted(_BUILTINS)}") from None
    return factory(**kwargs)
