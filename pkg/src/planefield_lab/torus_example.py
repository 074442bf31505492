"""The cutoff-built foliation of the solid torus D^2 x S^1 and its companion 2-form.

Points are given in the Cartesian chart ``(x, y, theta)`` with
``(x, y) = (r cos phi, r sin phi)``; polar expressions are shorthand and every
form is returned as components in ``(dx, dy, dtheta)``.  The family version
lives on ``D^2 x S^1 x D^{n-3}`` with coordinates ``(x, y, theta, u_1, ...)``.

The 2-form has two pieces glued at r = 1/2.  The printed formula carries the
``lambda_half dtheta^dphi`` term with an orientation that makes the form
degenerate on the leaves where the cutoffs overlap; ``orientation="corrected"``
(the default) uses ``lambda_half dphi^dtheta`` and ``"literal"`` keeps the
printed sign for inspection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ModelConsistencyError, PreconditionError
from .smooth import smooth_step, smooth_step_derivative

PIECE_TOL = 1e-12


# ---------------------------------------------------------------------------
# cutoffs


@dataclass(frozen=True)
class Cutoff:
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]

    def __call__(self, r):
        return self.value(r)


@dataclass(frozen=True)
class CutoffTriple:
    """lambda_0, lambda_half, lambda_1 on [0, 1]."""
    lam0: Cutoff
    lam_half: Cutoff
    lam1: Cutoff
    name: str = "custom"

    def validate(self, samples: int = 2001, plateau: float = 0.02) -> list[str]:
        """Problems with the cutoff contract (empty when valid)."""
        r = np.linspace(0.0, 1.0, samples)
        out = []
        for nm, lam in (("lam0", self.lam0), ("lam_half", self.lam_half), ("lam1", self.lam1)):
            v = lam(r)
            if np.any(v < -1e-15) or np.any(v > 1 + 1e-15):
                out.append(f"{nm} leaves [0, 1]")
        near = {"lam0": (0.0, plateau), "lam_half": (0.5 - plateau, 0.5 + plateau), "lam1": (1.0 - plateau, 1.0)}
        for nm, (a, b) in near.items():
            lam = getattr(self, nm)
            if np.max(np.abs(lam(np.linspace(a, b, 41)) - 1.0)) > 1e-15:
                out.append(f"{nm} is not 1 near its point")
        (a0, b0), (a1, b1) = self.lam0.support, self.lam1.support
        if not (b0 < a1 or b1 < a0):
            out.append("supports of lam0 and lam1 meet")
        return out


def default_cutoffs(fall0=(0.27, 0.33), rise1=(0.67, 0.73)) -> CutoffTriple:
    """Smooth partition of unity: lam0 + lam_half + lam1 = 1."""
    a0, b0 = fall0
    a1, b1 = rise1
    lam0 = Cutoff(lambda r: 1.0 - smooth_step(r, a0, b0),
                  lambda r: -smooth_step_derivative(r, a0, b0), (0.0, b0))
    lam1 = Cutoff(lambda r: smooth_step(r, a1, b1),
                  lambda r: smooth_step_derivative(r, a1, b1), (a1, 1.0))
    lam_half = Cutoff(lambda r: smooth_step(r, a0, b0) - smooth_step(r, a1, b1),
                      lambda r: smooth_step_derivative(r, a0, b0) - smooth_step_derivative(r, a1, b1),
                      (a0, b1))
    return CutoffTriple(lam0, lam_half, lam1, "default")


def overlapping_cutoffs() -> CutoffTriple:
    """Negative control: supports of lam0 and lam1 overlap on (0.35, 0.65)."""
    lam0 = Cutoff(lambda r: 1.0 - smooth_step(r, 0.35, 0.65),
                  lambda r: -smooth_step_derivative(r, 0.35, 0.65), (0.0, 0.65))
    lam1 = Cutoff(lambda r: smooth_step(r, 0.35, 0.65),
                  lambda r: smooth_step_derivative(r, 0.35, 0.65), (0.35, 1.0))
    base = default_cutoffs()
    return CutoffTriple(lam0, base.lam_half, lam1, "overlapping")


def corrupted_cutoffs(width: float = 0.05) -> CutoffTriple:
    """Negative control: lam_half is pinched to 0 at r = 1/2."""
    base = default_cutoffs()
    lo, hi = 0.5 - width, 0.5 + width

    def dip(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 0.5, 1.0 - smooth_step(r, lo, 0.5), smooth_step(r, 0.5, hi))

    def ddip(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 0.5, -smooth_step_derivative(r, lo, 0.5), smooth_step_derivative(r, 0.5, hi))

    lh = base.lam_half
    lam_half = Cutoff(lambda r: lh(r) * dip(r), lambda r: lh.derivative(r) * dip(r) + lh(r) * ddip(r),
                      lh.support)
    return CutoffTriple(base.lam0, lam_half, base.lam1, "corrupted")


# ---------------------------------------------------------------------------
# polar <-> Cartesian helpers


def _polar(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    r = np.hypot(x, y)
    return p, x, y, r


def _dr_dphi(x, y, r):
    """Cartesian components of dr and dphi (zero where r = 0; callers mask)."""
    safe = np.where(r > 0, r, 1.0)
    dr = np.stack([x / safe, y / safe], axis=1) * (r > 0)[:, None]
    dphi = np.stack([-y / safe ** 2, x / safe ** 2], axis=1) * (r > 0)[:, None]
    return dr, dphi


def cartesian_points(r, phi, theta) -> np.ndarray:
    r, phi, theta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, phi, theta)))
    return np.stack([r * np.cos(phi), r * np.sin(phi), theta], axis=-1).reshape(-1, 3)


def polar_frame(points) -> np.ndarray:
    """Cartesian components of (d/dr, d/dphi, d/dtheta) at each point, shape (N, 3, 3)."""
    p, x, y, r = _polar(points)
    safe = np.where(r > 0, r, 1.0)
    out = np.zeros((p.shape[0], 3, 3))
    out[:, 0, 0], out[:, 0, 1] = x / safe, y / safe
    out[:, 1, 0], out[:, 1, 1] = -y, x
    out[:, 2, 2] = 1.0
    return out


def _wedge(a, b):
    """Matrix of the 2-form a ^ b for batched covectors (N, d)."""
    return np.einsum("ni,nj->nij", a, b) - np.einsum("ni,nj->nij", b, a)


# ---------------------------------------------------------------------------
# the model


@dataclass(frozen=True)
class SolidTorusModel:
    a: float = 0.5
    cutoffs: CutoffTriple = field(default_factory=default_cutoffs)
    orientation: str = "corrected"

    def __post_init__(self):
        if not -1.0 <= self.a <= 1.0:
            raise PreconditionError("slope a must lie in [-1, 1]")
        if self.orientation not in ("corrected", "literal"):
            raise PreconditionError("orientation must be 'corrected' or 'literal'")

    @property
    def half_sign(self) -> float:
        # coefficient of lambda_half dtheta^dphi
        return 1.0 if self.orientation == "literal" else -1.0

    def with_slope(self, a: float) -> "SolidTorusModel":
        return SolidTorusModel(a, self.cutoffs, self.orientation)


def _slopes(model: SolidTorusModel, n: int, a=None) -> np.ndarray:
    return np.full(n, model.a) if a is None else np.broadcast_to(np.asarray(a, dtype=float), (n,))


def beta_components(model: SolidTorusModel, points, a=None) -> np.ndarray:
    """Cartesian components of lambda_1 (dtheta - a dphi) + lambda_half dr + lambda_0 dtheta."""
    p, x, y, r = _polar(points)
    a = _slopes(model, p.shape[0], a)
    c = model.cutoffs
    l0, lh, l1 = c.lam0(r), c.lam_half(r), c.lam1(r)
    dr, dphi = _dr_dphi(x, y, r)
    out = np.zeros((p.shape[0], 3))
    out[:, :2] = lh[:, None] * dr - (a * l1)[:, None] * dphi
    out[:, 2] = l0 + l1
    return out


def kernel_basis(covectors: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of the kernel of each covector, shape (N, 2, 3)."""
    _, _, vt = np.linalg.svd(covectors[:, None, :])
    return vt[:, 1:, :]


@dataclass(frozen=True)
class BetaValue:
    components: np.ndarray   # (3,) in (dx, dy, dtheta)
    kernel: np.ndarray       # (2, 3) orthonormal


def beta_form(model: SolidTorusModel, point) -> BetaValue:
    """The foliation 1-form at one point and an orthonormal basis of its kernel."""
    comp = beta_components(model, np.reshape(point, (1, 3)))
    if np.linalg.norm(comp) == 0.0:
        raise ModelConsistencyError("beta vanishes; cutoffs are invalid")
    return BetaValue(comp[0], kernel_basis(comp)[0])


def integrability_coefficient(model: SolidTorusModel, points, a=None) -> np.ndarray:
    """Coefficient of beta ^ d beta against dx^dy^dtheta.

    In polar coordinates it is a (lam1 lam0' - lam0 lam1') dr^dphi^dtheta,
    and dx^dy = r dr^dphi.
    """
    p, x, y, r = _polar(points)
    a = _slopes(model, p.shape[0], a)
    c = model.cutoffs
    polar = a * (c.lam1(r) * c.lam0.derivative(r) - c.lam0(r) * c.lam1.derivative(r))
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, polar / safe, 0.0)


def integrability_defect(model: SolidTorusModel, grid) -> float:
    """max |beta ^ d beta| over a grid (Cartesian points or an int resolution)."""
    pts = torus_grid(grid) if isinstance(grid, (int, np.integer)) else np.asarray(grid, dtype=float)
    return float(np.max(np.abs(integrability_coefficient(model, pts))))


def _omega_pieces(model: SolidTorusModel, points, a=None):
    p, x, y, r = _polar(points)
    a = _slopes(model, p.shape[0], a)
    c = model.cutoffs
    l0, lh, l1 = c.lam0(r), c.lam_half(r), c.lam1(r)
    dr, dphi = _dr_dphi(x, y, r)
    N = p.shape[0]
    dr3 = np.zeros((N, 3))
    dphi3 = np.zeros((N, 3))
    dth = np.zeros((N, 3))
    dr3[:, :2], dphi3[:, :2], dth[:, 2] = dr, dphi, 1.0
    dxdy = np.zeros((N, 3, 3))
    dxdy[:, 0, 1], dxdy[:, 1, 0] = 1.0, -1.0
    half = model.half_sign * lh[:, None, None] * _wedge(dth, dphi3)
    # inner: lam0 r dr^dphi + lam_half dtheta^dphi, with r dr^dphi = dx^dy
    inner = l0[:, None, None] * dxdy + half
    # outer: lam1 dr^dphi + lam_half dtheta^dphi + a lam1 dr^dtheta (the two halves summed)
    safe = np.where(r > 0, r, 1.0)
    outer = (np.where(r > 0, l1 / safe, 0.0)[:, None, None] * dxdy + half
             + (a * l1)[:, None, None] * _wedge(dr3, dth))
    return r, inner, outer


def omega_form(model: SolidTorusModel, points, a=None) -> np.ndarray:
    """The glued 2-form as (N, 3, 3) Cartesian matrices.

    Raises ModelConsistencyError when the pieces disagree at r = 1/2.
    """
    r, inner, outer = _omega_pieces(model, points, a)
    seam = np.abs(r - 0.5) <= 1e-12
    if seam.any():
        gap = np.max(np.abs(inner[seam] - outer[seam]))
        if gap > PIECE_TOL:
            raise ModelConsistencyError(f"2-form pieces differ by {gap:.3g} at r = 1/2")
    return np.where((r <= 0.5)[:, None, None], inner, outer)


def piece_mismatch(model: SolidTorusModel, points, a=None) -> float:
    """Largest difference between the two pieces at the given points."""
    _, inner, outer = _omega_pieces(model, points, a)
    return float(np.max(np.abs(inner - outer), initial=0.0))


def leafwise_margin(omega: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """|omega(u, v)| for an orthonormal basis (u, v) of ker beta."""
    k = kernel_basis(beta)
    return np.abs(np.einsum("ni,nij,nj->n", k[:, 0], omega, k[:, 1]))


def torus_grid(res: int, r_max: float = 1.0) -> np.ndarray:
    """res^3 polar-product grid (r includes 0 and r_max) in Cartesian coordinates."""
    r = np.linspace(0.0, r_max, res)
    phi = np.linspace(0.0, 2 * np.pi, res, endpoint=False)
    theta = np.linspace(0.0, 2 * np.pi, res, endpoint=False)
    R, P, T = np.meshgrid(r, phi, theta, indexing="ij")
    return cartesian_points(R, P, T)


def boundary_probes(count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return cartesian_points(1.0, rng.uniform(0, 2 * np.pi, count), rng.uniform(0, 2 * np.pi, count))


def verify_example(model: SolidTorusModel, grid: int = 48, probes: int = 1000, seed: int = 0) -> dict:
    """Grid report: integrability defect, leafwise margin, boundary identities, piece continuity."""
    pts = torus_grid(grid)
    defect = integrability_defect(model, pts)
    margins = leafwise_margin(omega_form(model, pts), beta_components(model, pts))
    imin = int(np.argmin(margins))

    # margins depend on r only; a fine radial scan catches zeros the grid misses
    line = cartesian_points(np.linspace(0.0, 1.0, 4001), 0.3, 0.0)
    fine = leafwise_margin(omega_form(model, line), beta_components(model, line))

    # boundary: omega(d/dr, -) against alpha = a dtheta + dphi, in polar components
    bp = boundary_probes(probes, seed)
    frame = polar_frame(bp)
    om = omega_form(model, bp)
    polar_omega = np.einsum("nai,nij,nbj->nab", frame, om, frame)
    alpha = np.zeros((bp.shape[0], 3))
    alpha[:, 1], alpha[:, 2] = 1.0, model.a
    alpha_err = float(np.max(np.abs(polar_omega[:, 0, :] - alpha)))
    # kernel of beta on the boundary is spanned by d/dr and a d/dtheta + d/dphi
    kvec = model.a * frame[:, 2] + frame[:, 1]
    alpha_on_kernel = np.einsum("ni,ni->n", alpha, np.stack([np.zeros(bp.shape[0]), np.ones(bp.shape[0]),
                                                              np.full(bp.shape[0], model.a)], axis=1))
    omega_on_kernel = np.einsum("ni,nij,nj->n", frame[:, 0], om, kvec)
    target = model.a ** 2 + 1.0

    # continuity across the seam, on the band where lam0 = lam1 = 0
    band = cartesian_points(*np.meshgrid(np.linspace(0.45, 0.55, 21), np.linspace(0, 2 * np.pi, 16),
                                         [0.0], indexing="ij"))
    continuity = piece_mismatch(model, band)
    return {
        "a": model.a,
        "cutoffs": model.cutoffs.name,
        "orientation": model.orientation,
        "grid": grid,
        "defect_max": defect,
        "margin_min": float(margins[imin]),
        "margin_argmin_r": float(np.hypot(*pts[imin, :2])),
        "margin_min_radial_scan": float(fine.min()),
        "boundary_alpha_check": alpha_err,
        "alpha_on_kernel": float(alpha_on_kernel.mean()),
        "alpha_on_kernel_error": float(np.max(np.abs(alpha_on_kernel - target))),
        "omega_on_kernel_error": float(np.max(np.abs(omega_on_kernel - target))),
        "continuity_max": continuity,
        "cutoff_problems": model.cutoffs.validate(),
    }


def example_passes(report: dict, defect_tol: float = 1e-12, margin_floor: float = 0.2,
                   identity_tol: float = 1e-12) -> bool:
    return (report["defect_max"] < defect_tol and report["margin_min"] > margin_floor
            and report["margin_min_radial_scan"] > margin_floor
            and report["boundary_alpha_check"] < identity_tol
            and report["alpha_on_kernel_error"] < identity_tol
            and report["continuity_max"] < identity_tol)


# ---------------------------------------------------------------------------
# the D^{n-3} family


@dataclass(frozen=True)
class FamilyModel:
    """Radial bumps f, g on D^{n-3}: f = f_max on |u| <= f_flat, supported in |u| < f_radius;
    g = 1 on |u| <= f_radius, supported in |u| < g_radius < 1."""
    n: int = 4
    f_max: float = 0.5
    f_flat: float = 0.2
    f_radius: float = 0.4
    g_radius: float = 0.7
    base: SolidTorusModel = field(default_factory=SolidTorusModel)
    literal_first_term: bool = False

    def __post_init__(self):
        if self.n < 4:
            raise PreconditionError("the family needs n >= 4")
        if not 0.0 <= self.f_max <= 1.0:
            raise PreconditionError("f must take values in [0, 1]")
        if not 0.0 <= self.f_flat < self.f_radius < self.g_radius < 1.0:
            raise PreconditionError("need 0 <= f_flat < f_radius < g_radius < 1 (g = 1 on supp f, g = 0 near the boundary)")

    def f(self, u) -> np.ndarray:
        rho = np.linalg.norm(np.atleast_2d(u), axis=1)
        return self.f_max * (1.0 - smooth_step(rho, self.f_flat, self.f_radius))

    def g(self, u) -> np.ndarray:
        rho = np.linalg.norm(np.atleast_2d(u), axis=1)
        return 1.0 - smooth_step(rho, self.f_radius, self.g_radius)


def family_forms(family: FamilyModel, points) -> tuple[np.ndarray, np.ndarray]:
    """(1-form components (N, n), 2-form matrices (N, n, n)) at points (x, y, theta, u...)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[1] != family.n:
        raise PreconditionError(f"points must have {family.n} coordinates")
    u = p[:, 3:]
    if np.any(np.linalg.norm(u, axis=1) > 1.0 + 1e-12):
        raise PreconditionError("u must lie in the unit disk")
    f, g = family.f(u), family.g(u)
    slice_pts = p[:, :3]
    N = p.shape[0]
    beta = beta_components(family.base, slice_pts, f)
    one = np.zeros((N, family.n))
    one[:, :3] = g[:, None] * beta
    one[:, 2] += 1.0 - g
    om = omega_form(family.base, slice_pts, f)
    two = np.zeros((N, family.n, family.n))
    first = np.zeros((N, 3, 3))
    if family.literal_first_term:
        # r dr^dtheta = x dx^dtheta + y dy^dtheta
        first[:, 0, 2], first[:, 2, 0] = p[:, 0], -p[:, 0]
        first[:, 1, 2], first[:, 2, 1] = p[:, 1], -p[:, 1]
    else:
        first[:, 0, 1], first[:, 1, 0] = 1.0, -1.0   # r dr^dphi = dx^dy
    two[:, :3, :3] = (1.0 - g)[:, None, None] * first + g[:, None, None] * om
    return one, two


def family_margins(family: FamilyModel, points) -> np.ndarray:
    """Leafwise margin of the family: omega restricted to ker(beta) inside the D^2 x S^1 slice."""
    one, two = family_forms(family, points)
    return leafwise_margin(two[:, :3, :3], one[:, :3])


def family_grid(family: FamilyModel, res: int = 12, u_res: int = 9, seed: int = 0) -> np.ndarray:
    slice_pts = torus_grid(res)
    m = family.n - 3
    rng = np.random.default_rng(seed)
    radii = np.linspace(0.0, 1.0, u_res)
    dirs = rng.normal(size=(u_res, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    us = radii[:, None] * dirs
    pts = np.concatenate([np.hstack([slice_pts, np.broadcast_to(u, (slice_pts.shape[0], m))]) for u in us])
    return pts


def verify_family(family: FamilyModel, res: int = 12, u_res: int = 9) -> dict:
    pts = family_grid(family, res, u_res)
    one, _ = family_forms(family, pts)
    margins = family_margins(family, pts)
    f = family.f(pts[:, 3:])
    # integrability inside each slice: beta_f ^ d beta_f scaled by g^2, plus g(1-g) dtheta ^ d beta_f
    g = family.g(pts[:, 3:])
    defect = np.abs(g ** 2 * integrability_coefficient(family.base, pts[:, :3], f))
    mixed = pts[(g < 1.0) & (f != 0.0)]
    return {
        "n": family.n,
        "margin_min": float(margins.min()),
        "defect_max": float(defect.max()),
        "f_outside_plateau_of_g": int(mixed.shape[0]),
        "literal_first_term": family.literal_first_term,
        "points": int(pts.shape[0]),
    }
