"""Compactly supported diffeomorphisms of R^k, paths of them, and the group identities.

A CDiffeo is a pair of vectorized evaluators (forward, inverse) acting on
points of shape ``(N, k)`` together with a support box outside which both are
the identity.  Compositions are closures; nothing is discretized on a grid.

Bump flows move points along a fixed direction, so the flow of
``X = bump(|x - c| / R) d`` reduces to one scalar ODE per point, integrated
with an adaptive Runge-Kutta scheme (DOP853) for every point in the ball at
once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import EstimationError, GenerationError, PreconditionError, TracingError
from .smooth import plateau_bump, smooth_step, smooth_step_derivative

FLOW_RTOL = 1e-13
FLOW_ATOL = 1e-15
MAX_FLOW_TIME = 50.0
TUBE_WIDTH = 0.5


# ---------------------------------------------------------------------------
# diffeomorphisms


def _pts(y, k: int) -> np.ndarray:
    p = np.atleast_2d(np.asarray(y, dtype=float))
    if p.shape[1] != k:
        raise PreconditionError(f"expected points in R^{k}, got dimension {p.shape[1]}")
    return p


def _union_box(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return (np.minimum(a[0], b[0]), np.maximum(a[1], b[1]))


class CDiffeo:
    """Compactly supported diffeomorphism with a stored inverse.

    ``support`` is ``(lo, hi)`` arrays or None for the identity.
    """

    def __init__(self, k: int, forward: Callable, inverse: Callable, support=None, name: str = "g"):
        self.k = k
        self._forward = forward
        self._inverse = inverse
        self.support = None if support is None else (np.asarray(support[0], float), np.asarray(support[1], float))
        self.name = name

    def __call__(self, y) -> np.ndarray:
        return self._forward(_pts(y, self.k))

    def apply_inverse(self, y) -> np.ndarray:
        return self._inverse(_pts(y, self.k))

    @property
    def inv(self) -> "CDiffeo":
        return CDiffeo(self.k, self._inverse, self._forward, self.support, f"{self.name}^-1")

    def in_support(self, y) -> np.ndarray:
        y = np.atleast_2d(y)
        if self.support is None:
            return np.zeros(y.shape[0], dtype=bool)
        return np.all((y >= self.support[0]) & (y <= self.support[1]), axis=1)

    def inverse_error(self, probes: int = 1000, seed: int = 0) -> float:
        """max |g(g^-1(y)) - y| and |g^-1(g(y)) - y| over probes in the support box."""
        if self.support is None:
            return 0.0
        rng = np.random.default_rng(seed)
        lo, hi = self.support
        y = lo + (hi - lo) * rng.random((probes, self.k))
        return float(max(np.max(np.abs(self(self.apply_inverse(y)) - y)),
                         np.max(np.abs(self.apply_inverse(self(y)) - y))))

    def __matmul__(self, other: "CDiffeo") -> "CDiffeo":
        return compose(self, other)


def identity(k: int) -> CDiffeo:
    return CDiffeo(k, lambda y: y.copy(), lambda y: y.copy(), None, "id")


def compose(a: CDiffeo, b: CDiffeo) -> CDiffeo:
    """a o b (apply b first)."""
    if a.k != b.k:
        raise PreconditionError("cannot compose maps of different dimensions")
    return CDiffeo(a.k, lambda y: a._forward(b._forward(y)), lambda y: b._inverse(a._inverse(y)),
                   _union_box(a.support, b.support), f"{a.name}{b.name}")


def compose_all(maps: Sequence[CDiffeo], k: int | None = None) -> CDiffeo:
    """maps[0] o maps[1] o ... (the last one is applied first)."""
    maps = list(maps)
    if not maps:
        if k is None:
            raise PreconditionError("empty composition needs the dimension")
        return identity(k)
    k = maps[0].k
    support = None
    for m in maps:
        support = _union_box(support, m.support)

    def fwd(y):
        for m in reversed(maps):
            y = m._forward(y)
        return y

    def inv(y):
        for m in maps:
            y = m._inverse(y)
        return y

    return CDiffeo(k, fwd, inv, support, "*".join(m.name for m in maps))


def inverse(a: CDiffeo) -> CDiffeo:
    return a.inv


def conjugate(g: CDiffeo, a: CDiffeo) -> CDiffeo:
    """g a g^-1."""
    return compose_all([g, a, g.inv])


def commutator(a: CDiffeo, b: CDiffeo) -> CDiffeo:
    """[a, b] = a b a^-1 b^-1."""
    return compose_all([a, b, a.inv, b.inv])


def power(a: CDiffeo, m: int) -> CDiffeo:
    if m == 0:
        return identity(a.k)
    base = a if m > 0 else a.inv
    return compose_all([base] * abs(m))


# ---------------------------------------------------------------------------
# generators


def _bump_flow_map(center, radius, direction, time, plateau, rtol, atol):
    c = np.asarray(center, dtype=float)
    d = np.asarray(direction, dtype=float)
    speed = float(np.linalg.norm(d))
    k = c.shape[0]
    if speed == 0.0 or time == 0.0:
        return lambda y: y.copy()
    unit = d / speed

    def flow(y):
        out = y.copy()
        rel = y - c
        inside = np.einsum("ni,ni->n", rel, rel) < radius * radius
        if not inside.any():
            return out
        q0 = rel[inside] @ unit
        perp2 = np.maximum(np.einsum("ni,ni->n", rel[inside], rel[inside]) - q0 * q0, 0.0)

        def rhs(_, q):
            s = np.sqrt(perp2 + q * q) / radius
            return speed * plateau_bump(s, plateau)

        sol = solve_ivp(rhs, (0.0, time), q0, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
            raise GenerationError(f"bump flow integration failed: {sol.message}")
        out[inside] = y[inside] + (sol.y[:, -1] - q0)[:, None] * unit
        return out

    return flow


def make_bump_flow(center, radius: float, direction, time: float, plateau: float = 0.0,
                   rtol: float = FLOW_RTOL, atol: float = FLOW_ATOL, name: str = "exp") -> CDiffeo:
    """Time-``time`` flow of X = bump(|x - center| / radius) * direction.

    The bump equals 1 on ``|x - center| <= plateau * radius``; with a plateau
    the flow translates points whose orbit stays in the plateau.
    """
    c = np.asarray(center, dtype=float).reshape(-1)
    if radius <= 0:
        raise PreconditionError("radius must be positive")
    if abs(time) > MAX_FLOW_TIME:
        raise PreconditionError(f"|time| must be at most {MAX_FLOW_TIME}")
    if not 0.0 <= plateau < 1.0:
        raise PreconditionError("plateau must lie in [0, 1)")
    fwd = _bump_flow_map(c, radius, direction, time, plateau, rtol, atol)
    inv = _bump_flow_map(c, radius, direction, -time, plateau, rtol, atol)
    zero = time == 0.0 or not np.any(direction)
    support = None if zero else (c - radius, c + radius)
    return CDiffeo(c.shape[0], fwd, inv, support, name)


def bump_field(center, radius: float, direction, plateau: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    c = np.asarray(center, dtype=float)
    d = np.asarray(direction, dtype=float)

    def X(y):
        s = np.linalg.norm(np.atleast_2d(y) - c, axis=1) / radius
        return plateau_bump(s, plateau)[:, None] * d

    return X


def make_perturbation(center, radius: float, direction, scale: float, name: str = "id+e") -> CDiffeo:
    """id + scale * bump(|x - center| / radius) * direction; inverse by fixed-point iteration."""
    c = np.asarray(center, dtype=float).reshape(-1)
    d = np.asarray(direction, dtype=float) * scale
    X = bump_field(c, radius, d)
    # contraction constant of the fixed-point map is |d| max|bump'| / radius
    lip = float(np.linalg.norm(d)) * 1.5 / radius
    if lip >= 0.9:
        raise PreconditionError("perturbation is too large to invert by fixed-point iteration")

    def fwd(y):
        return y + X(y)

    def inv(y):
        x = y.copy()
        for _ in range(200):
            nxt = y - X(x)
            if np.max(np.abs(nxt - x), initial=0.0) < 1e-16:
                return nxt
            x = nxt
        return x

    return CDiffeo(c.shape[0], fwd, inv, (c - radius, c + radius), name)


def make_translation_flow(box_lo, box_hi, shift, margin: float = 2.0, name: str = "h") -> CDiffeo:
    """Bump flow that translates the box by ``shift`` (compactly supported).

    The plateau ball contains the box and its translate, so orbits stay where
    the field is constant.
    """
    lo, hi = np.asarray(box_lo, float), np.asarray(box_hi, float)
    shift = np.asarray(shift, dtype=float)
    pts = np.concatenate([lo[None], hi[None], (lo + shift)[None], (hi + shift)[None]])
    center = pts.mean(axis=0)
    reach = float(np.max(np.linalg.norm(np.stack(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij"),
                                                   -1).reshape(-1, lo.size)[:, None, :]
                                         + np.array([[0.0] * lo.size, list(shift)])[None] - center, axis=2)))
    plateau_r = reach + 0.25 * margin
    radius = plateau_r + margin
    return make_bump_flow(center, radius, shift, 1.0, plateau=plateau_r / radius, name=name)


# ---------------------------------------------------------------------------
# the tube S^1 x D^{k-1} in R^k and the rotation paths h_f


@dataclass(frozen=True)
class RadialProfile:
    """f(x) = amplitude * (1 - step(|x|; flat, radius)) on D^{k-1}: vanishes near the boundary."""
    amplitude: float = 0.5
    flat: float = 0.3
    radius: float = 0.8

    def __post_init__(self):
        if not (0.0 <= self.flat < self.radius < 1.0):
            raise PreconditionError("need 0 <= flat < radius < 1 so f vanishes near the boundary")

    def __call__(self, x) -> np.ndarray:
        rho = np.linalg.norm(np.atleast_2d(x), axis=1)
        return self.amplitude * (1.0 - smooth_step(rho, self.flat, self.radius))

    def scaled(self, c: float) -> "RadialProfile":
        return RadialProfile(self.amplitude * c, self.flat, self.radius)


def tube_embed(theta, x, width: float = TUBE_WIDTH) -> np.ndarray:
    """(theta in turns, x in D^{k-1}) -> R^k."""
    theta = np.asarray(theta, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ang = 2 * np.pi * theta
    rad = 1.0 + width * x[:, 0]
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang), width * x[:, 1:]])


def tube_chart(y, width: float = TUBE_WIDTH):
    """Inverse of ``tube_embed``: (theta, x, inside)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rho = np.hypot(y[:, 0], y[:, 1])
    theta = np.arctan2(y[:, 1], y[:, 0]) / (2 * np.pi)
    x = np.column_stack([(rho - 1.0) / width, y[:, 2:] / width])
    inside = np.linalg.norm(x, axis=1) < 1.0
    return theta, x, inside


def _rotation_map(f: Callable, t: float, width: float):
    def g(y):
        out = y.copy()
        theta, x, inside = tube_chart(y, width)
        if inside.any():
            fx = f(x[inside])
            moving = fx != 0.0
            idx = np.nonzero(inside)[0][moving]
            if idx.size:
                out[idx] = tube_embed(theta[idx] + t * fx[moving], x[inside][moving], width)
        return out
    return g


def rotation_diffeo(f: Callable, t: float = 1.0, k: int = 2, width: float = TUBE_WIDTH) -> CDiffeo:
    """h_f(t): (theta, x) -> (theta + t f(x), x) in the tube, identity outside."""
    return CDiffeo(k, _rotation_map(f, t, width), _rotation_map(f, -t, width), _tube_box(k, width), f"h({t:g})")


def _tube_box(k: int, width: float):
    r = 1.0 + width
    lo = np.concatenate([[-r, -r], np.full(k - 2, -width)])
    return (lo, -lo)


# ---------------------------------------------------------------------------
# paths


class DiffeoPath:
    """t -> CDiffeo on [0, 1].

    ``horizontal = (a, b)``: the path is constant on [0, a] and [1 - b, 1].
    ``velocity(t, y)``, when given, is the Eulerian time derivative used by
    leaf tracing; otherwise it is estimated by central differences.
    """

    def __init__(self, k: int, at: Callable[[float], CDiffeo], horizontal=(0.0, 0.0), periodic: bool = False,
                 starts_at_identity: bool = True, velocity: Callable | None = None, support=None,
                 name: str = "gamma"):
        self.k = k
        self._at = at
        self.horizontal = (float(horizontal[0]), float(horizontal[1]))
        self.periodic = periodic
        self.starts_at_identity = starts_at_identity
        self._velocity = velocity
        self.support = support
        self.name = name

    def __call__(self, t: float) -> CDiffeo:
        if not -1e-12 <= t <= 1.0 + 1e-12:
            raise PreconditionError("path parameter must lie in [0, 1]")
        return self._at(min(max(float(t), 0.0), 1.0))

    @property
    def adjusted(self) -> bool:
        return self.starts_at_identity and self.horizontal[0] > 0 and self.horizontal[1] > 0

    def velocity(self, t: float, y: np.ndarray, h: float = 1e-5) -> np.ndarray:
        if self._velocity is not None:
            return self._velocity(t, y)
        x = self(t).apply_inverse(y)
        lo, hi = max(t - h, 0.0), min(t + h, 1.0)
        return (self(hi)(x) - self(lo)(x)) / (hi - lo)

    def check_horizontal(self, probes: np.ndarray, samples: int = 5) -> float:
        """Largest deviation from the endpoint value over the declared horizontality intervals."""
        worst = 0.0
        a, b = self.horizontal
        start, end = self(0.0)(probes), self(1.0)(probes)
        for t in np.linspace(0.0, a, samples) if a > 0 else []:
            worst = max(worst, float(np.max(np.abs(self(t)(probes) - start))))
        for t in np.linspace(1.0 - b, 1.0, samples) if b > 0 else []:
            worst = max(worst, float(np.max(np.abs(self(t)(probes) - end))))
        return worst


def constant_path(k: int, horizontal=(0.25, 0.25)) -> DiffeoPath:
    return DiffeoPath(k, lambda t: identity(k), horizontal, periodic=True,
                      velocity=lambda t, y: np.zeros_like(y), name="const")


def make_rotation_path(f: Callable, k: int = 2, width: float = TUBE_WIDTH, adjust: float = 0.0) -> DiffeoPath:
    """The periodic path h_f.  With ``adjust > 0`` time is reparametrized by a
    smooth step so the path is constant near both ends (an adjusted path)."""
    if k < 2:
        raise PreconditionError("the tube S^1 x D^{k-1} needs k >= 2")
    probe = np.linspace(0.0, 1.0, 101)[:, None] * np.eye(k - 1)[0]
    vals = f(probe)
    if np.any(vals < -1e-15) or np.any(vals > 1 + 1e-15):
        raise PreconditionError("f must take values in [0, 1]")
    box = _tube_box(k, width)

    def clock(t):
        return smooth_step(t, adjust, 1.0 - adjust) if adjust > 0 else t

    def dclock(t):
        if adjust <= 0:
            return 1.0
        return float(smooth_step_derivative(t, adjust, 1.0 - adjust))

    def at(t):
        s = float(clock(t))
        return CDiffeo(k, _rotation_map(f, s, width), _rotation_map(f, -s, width), box, f"h_f({s:.6g})")

    def velocity(t, y):
        y = np.atleast_2d(y)
        out = np.zeros_like(y)
        theta, x, inside = tube_chart(y, width)
        if inside.any():
            fx = f(x[inside])
            rad = 1.0 + width * x[inside][:, 0]
            ang = 2 * np.pi * theta[inside]
            out[inside, 0] = -2 * np.pi * rad * np.sin(ang) * fx
            out[inside, 1] = 2 * np.pi * rad * np.cos(ang) * fx
        return out * dclock(t)

    return DiffeoPath(k, at, (adjust, adjust), periodic=True, velocity=velocity, support=box,
                      name="h_f" if adjust == 0 else "h_f(adjusted)")


def one_form_ds(k: int) -> Callable:
    """alpha = ds on S^1 x R^k (components (ds, dy_1, ..., dy_k))."""
    def alpha(s, y):
        y = np.atleast_2d(y)
        out = np.zeros((y.shape[0], k + 1))
        out[:, 0] = 1.0
        return out
    return alpha


@dataclass
class PairedPath:
    path: DiffeoPath
    alpha: Callable   # (s, y) -> (N, k + 1) covector components (ds, dy...)
    name: str = "pair"

    def suspension_tangent(self, s: float, y) -> np.ndarray:
        """d/ds + V(s, y): the tangent of the suspension leaves."""
        y = np.atleast_2d(y)
        v = self.path.velocity(s, y)
        return np.column_stack([np.ones(y.shape[0]), v])

    def alpha_on_tangent(self, s: float, y) -> np.ndarray:
        return np.einsum("ni,ni->n", self.alpha(s, y), self.suspension_tangent(s, y))


def concatenate(p1: PairedPath, p2: PairedPath, check_probes: np.ndarray | None = None) -> tuple[PairedPath, dict]:
    """(gamma_1, alpha_1) * (gamma_2, alpha_2).

    gamma(t) = gamma_1(2t) on [0, 1/2] and gamma_2(2t - 1) o gamma_1(1) on
    [1/2, 1]; alpha is assembled from the pullbacks under s -> 2s and
    s -> 2s - 1 (the ds component doubles).  Returns the pair and a report
    with the jump of alpha across s = 1/2 at the probes.
    """
    g1, g2 = p1.path, p2.path
    if not (g1.adjusted and g2.adjusted):
        raise PreconditionError("concatenation needs adjusted paths (constant near both ends)")
    if g1.k != g2.k:
        raise PreconditionError("paths act on different dimensions")
    k = g1.k
    end1 = g1(1.0)

    def at(t):
        if t <= 0.5:
            return g1(2 * t)
        return compose(g2(2 * t - 1), end1)

    def velocity(t, y):
        if t <= 0.5:
            return 2.0 * g1.velocity(2 * t, y)
        return 2.0 * g2.velocity(2 * t - 1, y)

    def alpha(s, y):
        if s <= 0.5:
            a = p1.alpha(2 * s, y).copy()
        else:
            a = p2.alpha(2 * s - 1, y).copy()
        a[:, 0] *= 2.0
        return a

    support = _union_box(g1.support, g2.support)
    path = DiffeoPath(k, at, (g1.horizontal[0] / 2, g2.horizontal[1] / 2), periodic=False,
                      velocity=velocity, support=support, name=f"{g1.name}*{g2.name}")
    report = {}
    if check_probes is not None:
        left = p1.alpha(1.0, check_probes)
        right = p2.alpha(0.0, check_probes)
        report["alpha_jump"] = float(np.max(np.abs(left - right)))
        report["horizontal_deviation"] = max(g1.check_horizontal(check_probes), g2.check_horizontal(check_probes))
    return PairedPath(path, alpha, f"{p1.name}*{p2.name}"), report


def endpoint_law_error(p1: PairedPath, p2: PairedPath, cat: PairedPath, probes: np.ndarray) -> float:
    """max |gamma(1) - gamma_2(1) o gamma_1(1)| at the probes."""
    lhs = cat.path(1.0)(probes)
    rhs = p2.path(1.0)(p1.path(1.0)(probes))
    return float(np.max(np.abs(lhs - rhs)))


def subdivide_path(gamma: DiffeoPath, q: int) -> list[DiffeoPath]:
    """gamma_i(t) = gamma((i + t) / q) o gamma(i / q)^-1, i = 0..q-1."""
    if q < 1:
        raise PreconditionError("q must be at least 1")
    if q == 1:
        return [gamma]
    out = []
    for i in range(q):
        base = gamma(i / q)

        def at(t, i=i, base=base):
            return compose(gamma((i + t) / q), base.inv)

        def velocity(t, y, i=i):
            return gamma.velocity((i + t) / q, y) / q

        out.append(DiffeoPath(gamma.k, at, (0.0, 0.0), periodic=False, velocity=velocity,
                              support=gamma.support, name=f"{gamma.name}[{i}/{q}]"))
    return out


def telescoping_error(gamma: DiffeoPath, segments: Sequence[DiffeoPath], probes: np.ndarray) -> float:
    y = probes
    for seg in segments:
        y = seg(1.0)(y)
    return float(np.max(np.abs(y - gamma(1.0)(probes))))


# ---------------------------------------------------------------------------
# V_eps norms


def _jacobian_e(d: CDiffeo, pts: np.ndarray, h: float) -> np.ndarray:
    k = d.k
    N = pts.shape[0]
    stencil = np.concatenate([pts[:, None, :] + h * np.eye(k)[None], pts[:, None, :] - h * np.eye(k)[None]], axis=1)
    vals = d(stencil.reshape(-1, k)).reshape(N, 2 * k, k) - stencil
    # J[n, i, j] = d e_i / d x_j
    return np.swapaxes((vals[:, :k] - vals[:, k:]) / (2 * h), 1, 2)


def jacobian_norms(d: CDiffeo, pts: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Operator norms of de at the points, central differences with one Richardson step."""
    j1 = _jacobian_e(d, pts, h)
    j2 = _jacobian_e(d, pts, h / 2)
    jac = (4.0 * j2 - j1) / 3.0
    if not np.all(np.isfinite(jac)):
        raise EstimationError("non-finite derivative estimate")
    return np.linalg.norm(jac, ord=2, axis=(1, 2))


@dataclass(frozen=True)
class VEpsEstimate:
    norm: float
    argmax: list
    samples: int

    def member(self, epsilon: float, safety: float = 0.05) -> bool:
        return self.norm < epsilon * (1.0 - safety)


def v_eps_norm(d: CDiffeo, samples: int = 2000, h: float = 1e-4, refine: int = 3, seed: int = 0) -> VEpsEstimate:
    """Estimate of sup |de| for d = id + e: random samples in the support box,
    then a few rounds of local refinement around the worst samples."""
    if d.support is None:
        return VEpsEstimate(0.0, [], 0)
    rng = np.random.default_rng(seed)
    lo, hi = d.support
    pts = lo + (hi - lo) * rng.random((samples, d.k))
    norms = jacobian_norms(d, pts, h)
    scale = float(np.max(hi - lo)) / 20.0
    for _ in range(refine):
        top = pts[np.argsort(norms)[-8:]]
        cand = (top[:, None, :] + scale * rng.normal(size=(8, 16, d.k))).reshape(-1, d.k)
        cand = np.clip(cand, lo, hi)
        cn = jacobian_norms(d, cand, h)
        pts = np.concatenate([pts, cand])
        norms = np.concatenate([norms, cn])
        scale /= 3.0
    i = int(np.argmax(norms))
    return VEpsEstimate(float(norms[i]), pts[i].tolist(), int(pts.shape[0]))


def random_v_eps_element(rng: np.random.Generator, epsilon: float, k: int = 2, box: float = 0.5,
                         safety: float = 0.05, name: str = "v") -> CDiffeo:
    """Bump flow with random center in [-box, box]^k, radius in [0.8, 1.5], random direction,
    time rescaled so its estimated norm is about 0.8 * epsilon * (1 - safety)."""
    center = rng.uniform(-box, box, k)
    radius = float(rng.uniform(0.8, 1.5))
    direction = rng.normal(size=k)
    direction /= np.linalg.norm(direction)
    # for a bump flow of small time the norm is about time * max|bump'| / radius
    probe = make_bump_flow(center, radius, direction, 1e-3)
    n0 = v_eps_norm(probe, samples=400, seed=int(rng.integers(1 << 31))).norm
    time = 1e-3 * 0.8 * epsilon * (1 - safety) / max(n0, 1e-12)
    for _ in range(20):
        time = min(time, MAX_FLOW_TIME)
        cand = make_bump_flow(center, radius, direction, time, name=name)
        if v_eps_norm(cand, samples=400, seed=int(rng.integers(1 << 31))).member(epsilon, safety):
            return cand
        time *= 0.7
    raise EstimationError("could not rescale a bump flow into V_eps")


def compose_72_check(epsilon: float, seed: int = 0, trials: int = 20, count: int = 72, k: int = 2,
                     samples: int = 1500, safety: float = 0.05) -> dict:
    """Draw ``count`` random V_eps elements per trial, compose, and test membership in V_1."""
    if epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    rows = []
    for trial in range(trials):
        elems = [random_v_eps_element(rng, epsilon, k, safety=safety, name=f"v{i}") for i in range(count)]
        comp = compose_all(elems)
        est = v_eps_norm(comp, samples=samples, seed=int(rng.integers(1 << 31)))
        rows.append({"trial": trial, "norm": est.norm, "in_V1": est.member(1.0, safety)})
    worst = max(r["norm"] for r in rows) if rows else 0.0
    passed = sum(r["in_V1"] for r in rows)
    return {
        "epsilon": epsilon,
        "count": count,
        "trials": trials,
        "seed": seed,
        "pass_rate": passed / trials if trials else 1.0,
        "all_in_V1": passed == trials,
        "worst_norm": worst,
        "threshold": 1.0 - safety,
        "rows": rows,
    }


# ---------------------------------------------------------------------------
# Tsuboi's identity and fragmentation


def box_probes(lo, hi, count: int, seed: int = 0) -> np.ndarray:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((count, lo.size))


def displaces(h: CDiffeo, U, net: int = 12) -> tuple[bool, float]:
    """Whether h(U) misses U, probed on corners and a grid net; returns the smallest
    distance (in the box sense) from h(net) to U."""
    lo, hi = np.asarray(U[0], float), np.asarray(U[1], float)
    axes = [np.linspace(a, b, net) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, lo.size)
    img = h(pts)
    gap = np.max(np.maximum(lo - img, img - hi), axis=1)
    return bool(np.all(gap > 0)), float(gap.min())


def tsuboi_factors(a: CDiffeo, b: CDiffeo, h: CDiffeo) -> list[tuple[CDiffeo, int]]:
    """[a, b] as the product of four conjugates of h^{+-1}: pairs (conjugator, exponent).

    With c = h^-1 a h: [a, b] = h (c h^-1 c^-1) (b c h c^-1 b^-1) (b h^-1 b^-1).
    """
    c = compose_all([h.inv, a, h])
    return [(identity(a.k), 1), (c, -1), (compose(b, c), 1), (b, -1)]


def product_of_conjugates(factors: Sequence[tuple[CDiffeo, int]], h: CDiffeo) -> CDiffeo:
    maps = [conjugate(g, h if e > 0 else h.inv) for g, e in factors]
    return compose_all(maps, h.k)


def tsuboi_verify(a: CDiffeo, b: CDiffeo, h: CDiffeo, U, probes: int = 10000, seed: int = 0,
                  probe_box=None) -> dict:
    """Compare [a, b] with the four-conjugate product at probe points."""
    lo, hi = np.asarray(U[0], float), np.asarray(U[1], float)
    flags = []
    for nm, g in (("a", a), ("b", b)):
        if g.support is not None and (np.any(g.support[0] < lo) or np.any(g.support[1] > hi)):
            flags.append(f"supp({nm}) not inside U")
    disp, gap = displaces(h, U)
    if not disp:
        flags.append("h(U) meets U")
    box = probe_box or _union_box((lo, hi), h.support)
    y = box_probes(box[0], box[1], probes, seed)
    factors = tsuboi_factors(a, b, h)
    lhs = commutator(a, b)(y)
    rhs = product_of_conjugates(factors, h)(y)
    return {
        "discrepancy": float(np.max(np.abs(lhs - rhs))),
        "probes": probes,
        "preconditions_ok": not flags,
        "flags": flags,
        "displacement_gap": gap,
        "factors": [f"conj({g.name}, h^{e:+d})" for g, e in factors],
    }


def tsuboi_corollary_verify(pairs: Sequence[tuple[CDiffeo, CDiffeo]], h: CDiffeo, U, probes: int = 10000,
                            seed: int = 0) -> dict:
    """prod [a_i, b_i] against the product of 4r conjugates of h^{+-1}."""
    k = h.k
    lhs_map = compose_all([commutator(a, b) for a, b in pairs], k)
    factors = [f for a, b in pairs for f in tsuboi_factors(a, b, h)]
    rhs_map = product_of_conjugates(factors, h)
    lo, hi = np.asarray(U[0], float), np.asarray(U[1], float)
    box = _union_box((lo, hi), h.support)
    y = box_probes(box[0], box[1], probes, seed)
    return {
        "discrepancy": float(np.max(np.abs(lhs_map(y) - rhs_map(y)))),
        "conjugates": len(factors),
        "pairs": len(pairs),
        "probes": probes,
    }


@dataclass(frozen=True)
class FieldSpec:
    """Bump vector field; ``exp`` is its time-1 flow."""
    center: tuple
    radius: float
    direction: tuple
    plateau: float = 0.0

    def exp(self) -> CDiffeo:
        return make_bump_flow(self.center, self.radius, self.direction, 1.0, self.plateau, name="expX")


def fragmentation_verify(g: CDiffeo, sigmas: Sequence[CDiffeo], Xs: Sequence[FieldSpec | None],
                         probes: int = 2000, seed: int = 0, probe_box=None) -> dict:
    """g against [sigma_1, exp X_1] o ... o [sigma_6, exp X_6] at probe points."""
    if len(sigmas) != len(Xs):
        raise PreconditionError("need as many vector fields as sigma witnesses")
    k = g.k
    exps = [identity(k) if X is None else X.exp() for X in Xs]
    product = compose_all([commutator(s, e) for s, e in zip(sigmas, exps)], k)
    box = probe_box or product.support or g.support
    if box is None:
        return {"discrepancy": 0.0, "probes": 0, "slots": len(sigmas)}
    box = _union_box(box, g.support)
    y = box_probes(box[0], box[1], probes, seed)
    return {"discrepancy": float(np.max(np.abs(product(y) - g(y)))), "probes": probes, "slots": len(sigmas)}


# ---------------------------------------------------------------------------
# suspension


@dataclass
class SuspensionFoliation:
    source: PairedPath
    rtol: float = 1e-12
    atol: float = 1e-13

    @property
    def k(self) -> int:
        return self.source.path.k

    def trace(self, y0, s0: float = 0.0, s1: float = 1.0) -> np.ndarray:
        """Follow the leaves through (s0, y0) to s = s1 (dy/ds = V(s, y))."""
        y0 = np.atleast_2d(np.asarray(y0, dtype=float))
        out = y0.copy()
        support = self.source.path.support
        moving = np.ones(y0.shape[0], dtype=bool)
        if support is not None:
            moving = np.all((y0 >= support[0]) & (y0 <= support[1]), axis=1)
        if not moving.any() or s0 == s1:
            return out
        k = self.k
        path = self.source.path

        def rhs(s, flat):
            return path.velocity(s, flat.reshape(-1, k)).reshape(-1)

        sol = solve_ivp(rhs, (s0, s1), y0[moving].reshape(-1), method="DOP853", rtol=self.rtol, atol=self.atol)
        if not sol.success:
            raise TracingError(f"leaf tracing failed: {sol.message}")
        out[moving] = sol.y[:, -1].reshape(-1, k)
        return out

    def holonomy_error(self, probes: np.ndarray) -> float:
        return float(np.max(np.abs(self.trace(probes) - self.source.path(1.0)(probes))))

    def support_check(self, probes: np.ndarray) -> float:
        """Largest leaf displacement over one loop for probes outside the support box."""
        support = self.source.path.support
        if support is None:
            return float(np.max(np.abs(self.trace(probes) - probes), initial=0.0))
        out = ~np.all((probes >= support[0]) & (probes <= support[1]), axis=1)
        if not out.any():
            return 0.0
        return float(np.max(np.abs(self.trace(probes[out]) - probes[out])))


def suspend(p: PairedPath, probes: np.ndarray | None = None) -> tuple[SuspensionFoliation, dict]:
    """Suspension foliation of S^1 x R^k and, at the probes, its holonomy report."""
    path = p.path
    if not (path.periodic or path.adjusted):
        raise PreconditionError("suspension needs a periodic or adjusted path")
    fol = SuspensionFoliation(p)
    report = {}
    if probes is not None:
        report["holonomy_error"] = fol.holonomy_error(probes)
        report["outside_support_motion"] = fol.support_check(probes)
        vals = [np.min(np.abs(p.alpha_on_tangent(s, probes))) for s in np.linspace(0.0, 1.0, 9)]
        report["alpha_min_on_tangent"] = float(min(vals))
    return fol, report


def torus_boundary_alpha(f: Callable, width: float = TUBE_WIDTH) -> Callable:
    """alpha' = omega'(d/dr, -) of the solid-torus model at r = 1 with slope f(x),
    written on S^1 x R^k: the circle angle phi becomes s and theta the tube angle.

    On the boundary torus this is ds + f(x) d(theta) with theta in turns.
    """
    from .torus_example import SolidTorusModel, cartesian_points, omega_form, polar_frame

    model = SolidTorusModel()

    def alpha(s, y):
        y = np.atleast_2d(y)
        theta, x, inside = tube_chart(y, width)
        fx = np.where(inside, f(x), 0.0)
        bp = cartesian_points(1.0, 2 * np.pi * s, 2 * np.pi * theta)
        fr = polar_frame(bp)
        om = omega_form(model, bp, fx)
        row = np.einsum("ni,nij,naj->na", fr[:, 0], om, fr)   # omega(d/dr, d/dr | d/dphi | d/dtheta)
        dphi, dtheta = row[:, 1], row[:, 2]
        rho2 = y[:, 0] ** 2 + y[:, 1] ** 2
        rho2 = np.where(rho2 > 0, rho2, 1.0)
        out = np.zeros((y.shape[0], y.shape[1] + 1))
        # phi = 2 pi s and d(theta in radians) = (-y2 dy1 + y1 dy2) / rho^2
        out[:, 0] = 2 * np.pi * dphi
        out[:, 1] = dtheta * -y[:, 1] / rho2
        out[:, 2] = dtheta * y[:, 0] / rho2
        return out

    return alpha
