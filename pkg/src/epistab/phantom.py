"""Digital phantom and analytic coil sensitivities.

The phantom is a proton-density grid with compact support (a sphere with
ball-shaped inclusions, mimicking a quality-assurance phantom).  Coil
sensitivities are smooth analytic functions fixed in the scanner frame,
so they can be evaluated exactly at moved voxel positions.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import SimulationError


def axis_coords_m(n: int, voxel_mm: float) -> np.ndarray:
    """Voxel center positions along one axis, origin at index n//2 (meters)."""
    return (np.arange(n) - n // 2) * voxel_mm * 1e-3


@dataclass(frozen=True)
class DigitalPhantom:
    """Complex proton-density grid with a boolean support mask.

    ``grid`` has shape (nx, ny, nz) indexed along (RL, AP, FH); voxel
    positions follow :func:`axis_coords_m`.  Values are zero outside
    ``support_mask`` and the support must sit strictly inside the FOV so
    small shifts cannot wrap.
    """

    grid: np.ndarray
    voxel_mm: tuple
    support_mask: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=complex)
        mask = np.asarray(self.support_mask, dtype=bool)
        if grid.shape != mask.shape or grid.ndim != 3:
            raise ValueError("grid and support_mask must be matching 3D arrays")
        if np.any(grid[~mask] != 0):
            raise ValueError("grid must be zero outside the support mask")
        grid.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "support_mask", mask)
        object.__setattr__(self, "voxel_mm", tuple(float(v) for v in self.voxel_mm))

    @property
    def shape(self) -> tuple:
        return self.grid.shape

    @property
    def fov_mm(self) -> np.ndarray:
        return np.array(self.shape) * np.array(self.voxel_mm)

    @property
    def half_fov_m(self) -> np.ndarray:
        return self.fov_mm * 1e-3 / 2.0

    def grid_coords_m(self):
        """Per-axis voxel coordinate vectors (meters)."""
        return tuple(axis_coords_m(n, v) for n, v in zip(self.shape, self.voxel_mm))

    def support_coords_m(self) -> np.ndarray:
        """(S, 3) positions of support voxels in meters."""
        ix, iy, iz = np.nonzero(self.support_mask)
        cx, cy, cz = self.grid_coords_m()
        return np.column_stack([cx[ix], cy[iy], cz[iz]])

    def support_values(self) -> np.ndarray:
        """(S,) complex proton density at the support voxels."""
        return self.grid[self.support_mask]

    def support_radius_m(self) -> float:
        """Largest distance of any support voxel from the grid origin."""
        return float(np.linalg.norm(self.support_coords_m(), axis=1).max())

    def check_shift_fits(self, translation_m: np.ndarray):
        """Reject translations that would push the support outside the FOV."""
        r = self.support_radius_m()
        limit = self.half_fov_m - np.array(self.voxel_mm) * 1e-3 / 2.0
        if np.any(r + np.abs(translation_m) >= limit):
            raise SimulationError(
                f"translation {translation_m} m moves the phantom support "
                f"outside the FOV (support radius {r * 1e3:.1f} mm)")

    def kmax_rad_m(self) -> np.ndarray:
        """Per-axis grid Nyquist limit pi/voxel (rad/m)."""
        return np.pi / (np.array(self.voxel_mm) * 1e-3)


def make_ball_phantom(shape=(32, 32, 16), voxel_mm=4.0, radius_mm=None,
                      n_inclusions=40, inclusion_value=0.0, seed=7) -> DigitalPhantom:
    """Sphere densely filled with small signal-free ball inclusions.

    The sphere radius defaults to 75% of the smallest half-FOV, leaving a
    shift margin on every side.  Inclusions are placed deterministically
    from ``seed``; their radii scale with the voxel size so they stay
    resolvable on coarse grids.  The inclusions break the rotational
    symmetry the navigator needs for rotation sensitivity.
    """
    if np.isscalar(voxel_mm):
        voxel_mm = (float(voxel_mm),) * 3
    shape = tuple(int(n) for n in shape)
    half_fov = np.array(shape) * np.array(voxel_mm) / 2.0
    if radius_mm is None:
        radius_mm = 0.75 * half_fov.min()

    cx, cy, cz = (axis_coords_m(n, v) * 1e3 for n, v in zip(shape, voxel_mm))
    xx, yy, zz = np.meshgrid(cx, cy, cz, indexing="ij")
    r2 = xx**2 + yy**2 + zz**2
    mask = r2 <= radius_mm**2
    grid = np.zeros(shape, dtype=complex)
    grid[mask] = 1.0

    rng = np.random.default_rng(seed)
    ball_scale = max(np.mean(voxel_mm), 1.0)
    for _ in range(n_inclusions):
        center = rng.uniform(-0.65, 0.65, size=3) * radius_mm
        ball_r = rng.uniform(0.8, 1.6) * ball_scale
        d2 = (xx - center[0])**2 + (yy - center[1])**2 + (zz - center[2])**2
        grid[(d2 <= ball_r**2) & mask] = inclusion_value

    return DigitalPhantom(grid=grid, voxel_mm=voxel_mm, support_mask=mask)


@dataclass(frozen=True)
class CoilSet:
    """Smooth complex receive sensitivities, fixed in the scanner frame.

    Each coil is a Gaussian magnitude profile around ``centers_m[c]`` with
    a small linear phase ``phase_grad_rad_m[c]``; :meth:`eval_at` evaluates
    the analytic profile at arbitrary (possibly moved) positions, while
    ``maps`` caches the evaluation on the phantom grid for reconstruction.
    """

    centers_m: np.ndarray
    sigma_m: float
    phase_grad_rad_m: np.ndarray
    maps: np.ndarray

    def __post_init__(self):
        for name in ("centers_m", "phase_grad_rad_m", "maps"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_coils(self) -> int:
        return self.centers_m.shape[0]

    def eval_at(self, points_m: np.ndarray) -> np.ndarray:
        """Sensitivities at (N, 3) positions; returns (N, n_coils) complex."""
        d2 = ((points_m[:, None, :] - self.centers_m[None, :, :])**2).sum(axis=2)
        mag = np.exp(-d2 / (2.0 * self.sigma_m**2))
        ph = points_m @ self.phase_grad_rad_m.T
        return mag * np.exp(1j * ph)


def _grid_maps(centers, sigma, grads, phantom: DigitalPhantom) -> np.ndarray:
    cx, cy, cz = phantom.grid_coords_m()
    xx, yy, zz = np.meshgrid(cx, cy, cz, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    tmp = CoilSet(centers, sigma, grads, np.zeros((len(centers), 1, 1, 1)))
    vals = tmp.eval_at(pts)
    return np.ascontiguousarray(
        vals.T.reshape((len(centers),) + phantom.shape))


def make_loop_coils(phantom: DigitalPhantom, n_coils=4, ring_scale=1.25,
                    sigma_scale=0.6, phase_grad_rad_m=3.0) -> CoilSet:
    """Ring of Gaussian coils around the phantom in the xy plane.

    Coil centers alternate above/below the z midplane for 3D coverage.
    The Gaussian width scales with the FOV, keeping the sum-of-squares
    well above zero over the whole support.
    """
    half = phantom.half_fov_m
    ring_r = ring_scale * max(half[0], half[1])
    centers = np.zeros((n_coils, 3))
    grads = np.zeros((n_coils, 3))
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils
        centers[c] = [ring_r * np.cos(ang), ring_r * np.sin(ang),
                      (0.25 * half[2]) * (1 if c % 2 == 0 else -1)]
        grads[c] = phase_grad_rad_m * np.array(
            [np.cos(ang + 0.7), np.sin(ang + 0.7), 0.3])
    sigma = sigma_scale * 2 * max(half)
    maps = _grid_maps(centers, sigma, grads, phantom)
    return CoilSet(centers, sigma, grads, maps)


def make_uniform_coils(phantom: DigitalPhantom, n_coils=1) -> CoilSet:
    """Flat unit sensitivities (useful as an oracle: coil effects vanish)."""
    centers = np.zeros((n_coils, 3))
    grads = np.zeros((n_coils, 3))
    sigma = 1e9  # effectively constant magnitude over any FOV
    maps = np.ones((n_coils,) + phantom.shape, dtype=complex)
    return CoilSet(centers, sigma, grads, maps)
