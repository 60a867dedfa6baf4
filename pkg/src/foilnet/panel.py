"""Incompressible potential flow around an airfoil via a panel method.

Constant-strength source panels plus one global vortex strength, with
flow tangency at panel midpoints and a Kutta condition tying the two
trailing-edge panels together (Hess-Smith). Complex arithmetic carries
the 2-d kinematics: w = u - i*v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadGeometry, NonFinite, OutOfRange, SingularSystem, ZeroMagnitude
from .geometry import AirfoilShape, GridSpec

__all__ = [
    "Freestream",
    "PanelSolution",
    "sample_freestream",
    "reynolds_to_magnitude",
    "solve_panels",
    "evaluate_field",
]

_RE_FULL_SCALE = 5.0e6  # Reynolds number that maps to unit freestream magnitude


@dataclass(frozen=True)
class Freestream:
    vx: float
    vy: float

    @property
    def magnitude(self) -> float:
        return float(np.hypot(self.vx, self.vy))

    @property
    def angle_deg(self) -> float:
        return float(np.degrees(np.arctan2(self.vy, self.vx)))

    @classmethod
    def from_polar(cls, magnitude: float, angle_deg: float) -> "Freestream":
        if magnitude <= 0.0:
            raise ZeroMagnitude(f"freestream magnitude {magnitude} must be positive")
        a = np.radians(angle_deg)
        return cls(vx=float(magnitude * np.cos(a)), vy=float(magnitude * np.sin(a)))


def sample_freestream(rng: np.random.Generator) -> Freestream:
    """Magnitude uniform in [0.1, 1], angle of attack uniform in [-22.5, 22.5] deg."""
    mag = rng.uniform(0.1, 1.0)
    ang = rng.uniform(-22.5, 22.5)
    return Freestream.from_polar(mag, ang)


def reynolds_to_magnitude(re: float) -> float:
    """Linear map used to read magnitudes as Reynolds numbers: 5e6 <-> 1.0."""
    if re <= 0.0:
        raise OutOfRange(f"Reynolds number {re} must be positive")
    return re / _RE_FULL_SCALE


@dataclass(frozen=True)
class PanelSolution:
    """Solved panel system; nodes wrap (node n = node 0 implied)."""

    nodes: np.ndarray        # (n, 2) panel start points, counter-clockwise
    sources: np.ndarray      # (n,) source strength per unit length
    vortex: float            # global vortex strength per unit length
    freestream: Freestream

    @property
    def panel_lengths(self) -> np.ndarray:
        d = np.roll(self.nodes, -1, axis=0) - self.nodes
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def perimeter(self) -> float:
        return float(self.panel_lengths.sum())

    @property
    def circulation(self) -> float:
        """Net circulation, counter-clockwise positive."""
        return float(self.vortex * self.perimeter)

    @property
    def chord(self) -> float:
        return float(self.nodes[:, 0].max() - self.nodes[:, 0].min())

    def lift_coefficient(self) -> float:
        # Kutta-Joukowski; aerodynamic sign convention counts clockwise
        # circulation as positive lift
        return -2.0 * self.circulation / (self.freestream.magnitude * self.chord)

    def velocity_at(self, points: np.ndarray) -> np.ndarray:
        """Velocities (M, 2) at arbitrary points (M, 2), not on the surface."""
        z = np.asarray(points, dtype=np.float64)
        w = _induced_w(self.nodes, self.sources, self.vortex, z[:, 0] + 1j * z[:, 1])
        w += complex(self.freestream.vx, -self.freestream.vy)
        return np.stack([w.real, -w.imag], axis=1)

    def surface_velocities(self) -> np.ndarray:
        """Velocities (n, 2) at panel midpoints, outside limit.

        Exactly on a panel the subtended angle is ambiguous by 2*pi; the
        physical surface value takes the outside branch (+pi), the same
        one the tangency equations were assembled with, so the normal
        component vanishes and the rows are the tangential slip flow.
        """
        a, b, tang, _ = _panel_frames(self.nodes)
        mid = (a + b) / 2.0
        lam = _log_terms(mid, a, b)
        np.fill_diagonal(lam, 1j * np.pi)
        A = lam * (np.conj(tang)[None, :] / (2.0 * np.pi))
        w = A @ self.sources - 1j * self.vortex * A.sum(axis=1)
        w += complex(self.freestream.vx, -self.freestream.vy)
        return np.stack([w.real, -w.imag], axis=1)


def _panel_frames(nodes: np.ndarray):
    a = nodes[:, 0] + 1j * nodes[:, 1]
    b = np.roll(a, -1)
    d = b - a
    lengths = np.abs(d)
    if lengths.min() < 1e-12:
        raise BadGeometry("zero-length panel")
    tang = d / lengths
    return a, b, tang, lengths


def _log_terms(z: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log((z - a_j)/(z - b_j)) for points (...,) against panels (n,).

    Result shape z.shape + (n,). Radii are floored a hair above zero so a
    point numerically on a node produces a large finite value instead of
    -inf; callers check finiteness of the physical fields downstream.
    """
    za = z[..., None] - a
    zb = z[..., None] - b
    r1 = np.maximum(np.abs(za), 1e-300)
    r2 = np.maximum(np.abs(zb), 1e-300)
    return np.log(r1 / r2) + 1j * np.angle(za * np.conj(zb))


def _induced_w(nodes, sources, vortex, z):
    a, b, tang, _ = _panel_frames(nodes)
    lam = _log_terms(z, a, b)
    coeff = np.conj(tang) / (2.0 * np.pi)
    src = lam @ (coeff * sources)
    vor = lam @ (coeff * -1j)
    return src + vortex * vor


def _cosine_nodes(points: np.ndarray, n_panels: int) -> np.ndarray:
    """Resample a closed polygon to n_panels nodes, cosine-spaced in
    arclength on each half so panels cluster at the wrap vertex (trailing
    edge) and at mid-perimeter (leading edge)."""
    closed = np.vstack([points, points[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0.0:
        raise BadGeometry("degenerate outline, zero perimeter")
    half = n_panels // 2
    t1 = 0.5 * total * (1.0 - np.cos(np.pi * np.arange(half) / half)) / 2.0
    t2 = 0.5 * total + 0.5 * total * (1.0 - np.cos(np.pi * np.arange(half) / half)) / 2.0
    targets = np.concatenate([t1, t2])
    x = np.interp(targets, s, closed[:, 0])
    y = np.interp(targets, s, closed[:, 1])
    return np.stack([x, y], axis=1)


def solve_panels(shape: AirfoilShape, freestream: Freestream, n_panels: int = 120) -> PanelSolution:
    """Set up and solve the (n_panels + 1) square system.

    Unknowns: one source strength per panel plus the shared vortex
    strength. Equations: zero normal velocity at each panel midpoint plus
    the Kutta condition (tangential speeds of the two panels meeting at
    the trailing edge sum to zero, i.e. equal speeds leaving the edge).
    """
    if n_panels < 8 or n_panels % 2:
        raise OutOfRange(f"n_panels {n_panels} must be even and >= 8")
    if freestream.magnitude <= 0.0:
        raise ZeroMagnitude("freestream magnitude must be positive")

    pts = shape.points
    area2 = np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
    if abs(area2) < 1e-12:
        raise BadGeometry(f"{shape.name}: vanishing enclosed area")
    if area2 < 0.0:
        # make the ordering counter-clockwise, keeping point 0 (trailing edge) first
        pts = np.vstack([pts[:1], pts[1:][::-1]])

    nodes = _cosine_nodes(pts, n_panels)
    a, b, tang, _ = _panel_frames(nodes)
    mid = (a + b) / 2.0
    normal = -1j * tang  # outward for counter-clockwise ordering

    lam = _log_terms(mid, a, b)
    np.fill_diagonal(lam, 1j * np.pi)  # self-influence limit from outside
    coeff = np.conj(tang)[None, :] / (2.0 * np.pi)
    A = lam * coeff          # w at midpoint i from unit source on panel j
    B = A * -1j              # same for unit vortex density

    n = n_panels
    w_fs = complex(freestream.vx, -freestream.vy)
    M = np.empty((n + 1, n + 1), dtype=np.float64)
    rhs = np.empty(n + 1, dtype=np.float64)
    M[:n, :n] = (normal[:, None] * A).real
    M[:n, n] = (normal[:, None] * B).real.sum(axis=1)
    rhs[:n] = -(normal * w_fs).real
    kutta = tang[0] * np.concatenate([A[0], [0]]) + tang[n - 1] * np.concatenate([A[n - 1], [0]])
    kutta[n] = (tang[0] * B[0] + tang[n - 1] * B[n - 1]).sum()
    M[n] = kutta.real
    rhs[n] = -(tang[0] * w_fs + tang[n - 1] * w_fs).real

    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(f"{shape.name}: {e}") from None
    if not np.all(np.isfinite(sol)):
        raise SingularSystem(f"{shape.name}: non-finite panel solution")

    return PanelSolution(nodes=nodes, sources=sol[:n], vortex=float(sol[n]), freestream=freestream)


def evaluate_field(solution: PanelSolution, grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    """Pressure and velocity planes on the grid, zeroed inside the mask.

    Returns (3, res, res) float64: p, vel_x, vel_y with the Bernoulli
    pressure p = 0.5*(|v_inf|^2 - |v|^2) (unit density, far-field zero).
    Raises NonFinite if any sampled value is not finite.
    """
    res = grid.resolution
    if mask.shape != (res, res):
        raise NonFinite(f"mask shape {mask.shape} does not match grid {res}")
    xs, ys = grid.centers()
    Z = (xs[None, :] + 1j * ys[:, None]).ravel()

    w = _induced_w(solution.nodes, solution.sources, solution.vortex, Z)
    w += complex(solution.freestream.vx, -solution.freestream.vy)
    vx = w.real.reshape(res, res)
    vy = (-w.imag).reshape(res, res)
    p = 0.5 * (solution.freestream.magnitude ** 2 - (vx ** 2 + vy ** 2))

    field = np.stack([p, vx, vy])
    field *= 1.0 - mask[None, :, :]
    if not np.all(np.isfinite(field)):
        raise NonFinite("field contains NaN/inf near the surface")
    return field
