"""Tubular fibers over simplices and the skeleton-by-skeleton civilization step.

A pair is *civilized* on a skeleton when it is constant on the fibers
``B_x(delta) x E_x(eta)`` of tubes around every simplex of that skeleton.
The step retracts the pair radially inside an outer tube: on the inner
fibers it takes the value at the base point, on the annulus it takes the
value at a radially retracted point, and outside it is left unchanged.

Fiber sizes are measured with the gauge ``max(|b| / delta, |e| / eta)`` where
``b`` is the component along tau(x) and ``e`` the component along E_x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import GeneralPositionViolation, PreconditionError, RadiiTooLargeError
from .geom_core import PairedDistribution, PlaneField, TwoFormField, grassmann_distance, restricted_wedge

NEWTON_TOL = 1e-13
NEWTON_ITERS = 40
TRANSVERSE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Simplex:
    """An affine simplex with vertex ids (for bookkeeping) and coordinates ``(i+1, n)``."""
    ids: tuple
    points: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[0] - 1

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def key(self) -> tuple:
        return tuple(sorted(self.ids))

    def __eq__(self, other):
        return isinstance(other, Simplex) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def edges(self) -> np.ndarray:
        return self.points[1:] - self.points[0]

    def point(self, params) -> np.ndarray:
        s = np.asarray(params, dtype=float)
        if self.dim == 0:
            count = s.shape[0] if s.ndim == 2 else 1
            return np.repeat(self.points[:1], count, axis=0)
        return self.points[0] + s.reshape(-1, self.dim) @ self.edges

    def in_domain(self, s: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        if self.dim == 0:
            return np.ones(s.shape[0], dtype=bool)
        return np.all(s >= -tol, axis=1) & (s.sum(axis=1) <= 1.0 + tol)

    def faces(self, dim: int) -> list["Simplex"]:
        return [Simplex(tuple(self.ids[i] for i in c), self.points[list(c)])
                for c in combinations(range(self.dim + 1), dim + 1)]

    def has_face(self, other: "Simplex") -> bool:
        return set(other.ids) <= set(self.ids)

    def intersection(self, other: "Simplex") -> "Simplex | None":
        common = [i for i in self.ids if i in set(other.ids)]
        if not common:
            return None
        rows = [self.ids.index(i) for i in common]
        return Simplex(tuple(common), self.points[rows])

    def grid_params(self, per_edge: int) -> np.ndarray:
        """Barycentric grid of affine parameters with ``per_edge`` subdivisions."""
        if self.dim == 0:
            return np.zeros((1, 0))
        rows = []
        for comp in _compositions(per_edge, self.dim + 1):
            rows.append([c / per_edge for c in comp[1:]])
        return np.array(rows)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class RadialRetraction:
    """Profile f on [inner, outer] with f(inner) = 0 and f(outer) = outer.

    Radii are in gauge units (inner fiber = 1).  f is extended by 0 below
    ``inner`` and by the identity above ``outer``.
    """
    inner: float = 1.0
    outer: float = 2.0
    profile: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not (0 < self.inner < self.outer):
            raise PreconditionError("retraction needs 0 < inner < outer")

    def __call__(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self.profile is not None:
            mid = self.profile(g)
        else:
            mid = self.outer * (g - self.inner) / (self.outer - self.inner)
        return np.where(g <= self.inner, 0.0, np.where(g >= self.outer, g, mid))

    def interpolated(self, g, t: float) -> np.ndarray:
        """Profile of the homotopy at time t: (1 - t) id + t f."""
        g = np.asarray(g, dtype=float)
        return (1.0 - t) * g + t * self(g)


@dataclass(frozen=True)
class TubularFiber:
    base: np.ndarray
    simplex_dim: int
    b_basis: np.ndarray        # (k, n) along tau(x); (1, n) for line fibers
    e_basis: np.ndarray        # (n - k - i, n); empty for line fibers
    delta: float
    eta: float

    @property
    def dim(self) -> int:
        return self.b_basis.shape[0] + self.e_basis.shape[0]


def _complement_batch(rows: np.ndarray, n: int, tol: float) -> np.ndarray:
    """Orthonormal complement of the row span for a batch ``(N, m, n)``; raises on rank drop."""
    m = rows.shape[1]
    if m == 0:
        return np.broadcast_to(np.eye(n), (rows.shape[0], n, n)).copy()
    u, s, vt = np.linalg.svd(rows, full_matrices=True)
    scale = np.maximum(s[:, :1], 1.0)
    if np.any(s[:, -1] <= tol * scale[:, 0]):
        raise GeneralPositionViolation("tau(x) + T(sigma) drops dimension")
    return vt[:, m:, :]


def _fiber_bases(simplex: Simplex, frames: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    n, k = simplex.n, frames.shape[1]
    N = frames.shape[0]
    t = simplex.edges
    if kind == "line":
        # F_x = orthogonal complement of tau(x) & T(sigma) inside tau(x)
        normal = _complement_batch(np.broadcast_to(t, (N,) + t.shape), n, TRANSVERSE_TOL)[:, 0, :]
        coeff = np.einsum("nki,ni->nk", frames, normal)   # component of the normal in tau
        norm = np.linalg.norm(coeff, axis=1)
        if np.any(norm <= TRANSVERSE_TOL):
            raise GeneralPositionViolation("tau(x) lies inside T(sigma)")
        line = np.einsum("nk,nki->ni", coeff / norm[:, None], frames)
        return line[:, None, :], np.zeros((N, 0, n))
    stacked = np.concatenate([np.broadcast_to(t, (N,) + t.shape), frames], axis=1)
    e = _complement_batch(stacked, n, TRANSVERSE_TOL)
    if e.shape[1] != n - k - simplex.dim:
        raise GeneralPositionViolation("fiber dimension is not n - i")
    return frames, e


class Tube:
    """Tubular neighborhood of a simplex with fibers built from ``source`` values on it.

    ``delta``/``eta`` are the fiber radii used by the civilization conditions;
    ``collar`` widens the region on which a step makes the pair constant and
    ``outer_ratio`` sets the outer tube in gauge units.
    """

    def __init__(self, simplex: Simplex, source: PairedDistribution, delta: float, eta: float,
                 collar: float = 0.0, outer_ratio: float = 2.0, kind: str | None = None):
        if delta <= 0 or (eta <= 0 and (kind or "product") == "product"):
            raise PreconditionError("fiber radii must be positive")
        self.simplex = simplex
        self.source = source
        self.delta = float(delta)
        self.eta = float(eta)
        self.collar = float(collar)
        self.outer_ratio = float(outer_ratio)
        self.kind = kind or ("line" if simplex.dim == simplex.n - 1 else "product")
        self.n = simplex.n
        self.k = source.tau.k
        if self.kind == "product" and simplex.dim > self.n - self.k:
            raise PreconditionError("product fibers need dim sigma <= n - k")
        self._frames0 = None
        self._frames0 = self.bases(np.zeros((1, simplex.dim)) if simplex.dim else np.zeros((1, 0)))

    # -- geometry ---------------------------------------------------------
    def bases(self, params: np.ndarray):
        if self.simplex.dim == 0 and getattr(self, "_frames0", None) is not None:
            # a vertex has a single fiber
            b, e = self._frames0
            N = np.atleast_2d(params).shape[0]
            return np.broadcast_to(b, (N,) + b.shape[1:]), np.broadcast_to(e, (N,) + e.shape[1:])
        frames, _ = self.source.values_on_simplex(self.simplex, params)
        return _fiber_bases(self.simplex, frames, self.kind)

    def fiber(self, params=None) -> TubularFiber:
        if params is None:
            params = np.zeros(self.simplex.dim)
        params = np.asarray(params, dtype=float).reshape(1, -1)
        b, e = self.bases(params)
        return TubularFiber(self.simplex.point(params)[0], self.simplex.dim, b[0], e[0], self.delta, self.eta)

    @property
    def inner_radii(self) -> tuple[float, float]:
        return self.delta + self.collar, self.eta + self.collar

    def outer_euclidean(self) -> float:
        d, e = self.inner_radii
        return self.outer_ratio * math.hypot(d, e if self.kind == "product" else 0.0)

    def embed(self, params, b_coef, e_coef) -> np.ndarray:
        """Point x(s) + b + e from fiber coordinates (coefficients in the fiber bases)."""
        params = np.atleast_2d(params)
        b, e = self.bases(params)
        y = self.simplex.point(params) + np.einsum("nk,nki->ni", np.atleast_2d(b_coef), b)
        if e.shape[1]:
            y = y + np.einsum("nk,nki->ni", np.atleast_2d(e_coef), e)
        return y

    def _decompose(self, y: np.ndarray, params: np.ndarray):
        b, e = self.bases(params)
        x = self.simplex.point(params)
        w = y - x
        i = self.simplex.dim
        N = y.shape[0]
        mat = np.concatenate([np.broadcast_to(self.simplex.edges, (N, i, self.n)), b, e], axis=1)
        coef = np.linalg.solve(np.swapaxes(mat, 1, 2), w[:, :, None])[:, :, 0]
        return coef[:, :i], coef[:, i:i + b.shape[1]], coef[:, i + b.shape[1]:]

    def coordinates(self, y) -> dict:
        """Fiber coordinates of points: params s, |b|, |e| and whether s lies in sigma.

        The base parameter solves ``y - x(s) in tau(x(s)) + E_x(s)`` by damped
        Newton iteration started from the orthogonal projection onto aff(sigma).
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        N, i = y.shape[0], self.simplex.dim
        converged = np.ones(N, dtype=bool)
        if i == 0:
            s = np.zeros((N, 0))
        else:
            t = self.simplex.edges
            s = np.linalg.lstsq(t.T, (y - self.simplex.points[0]).T, rcond=None)[0].T
            active = np.ones(N, dtype=bool)
            h = 1e-7
            for _ in range(NEWTON_ITERS):
                if not active.any():
                    break
                idx = np.nonzero(active)[0]
                r = self._decompose(y[idx], s[idx])[0]
                done = np.max(np.abs(r), axis=1) <= NEWTON_TOL
                active[idx[done]] = False
                idx, r = idx[~done], r[~done]
                if idx.size == 0:
                    break
                jac = np.empty((idx.size, i, i))
                for j in range(i):
                    sp = s[idx].copy()
                    sp[:, j] += h
                    sm = s[idx].copy()
                    sm[:, j] -= h
                    jac[:, :, j] = (self._decompose(y[idx], sp)[0] - self._decompose(y[idx], sm)[0]) / (2 * h)
                try:
                    step = np.linalg.solve(jac, r[:, :, None])[:, :, 0]
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(jac.reshape(-1, i), r.reshape(-1), rcond=None)[0].reshape(-1, i)
                cap = np.maximum(np.max(np.abs(step), axis=1, keepdims=True) / 0.25, 1.0)
                s[idx] = s[idx] - step / cap
            if active.any():
                r = self._decompose(y[active], s[active])[0]
                ok = np.max(np.abs(r), axis=1) <= 1e-10
                converged[np.nonzero(active)[0][~ok]] = False
        _, bc, ec = self._decompose(y, s)
        return {
            "params": s,
            "b": np.linalg.norm(bc, axis=1),
            "e": np.linalg.norm(ec, axis=1) if ec.shape[1] else np.zeros(N),
            "in_domain": self.simplex.in_domain(s) & converged,
        }

    def gauge(self, coords: dict, radii: tuple[float, float]) -> np.ndarray:
        d, e = radii
        g = coords["b"] / d
        if self.kind == "product":
            g = np.maximum(g, coords["e"] / e)
        return np.where(coords["in_domain"], g, np.inf)

    def _candidates(self, y: np.ndarray, radius: float) -> np.ndarray:
        """Cheap superset filter: distance to the simplex hull at most ``radius``."""
        i = self.simplex.dim
        if i == 0:
            return np.linalg.norm(y - self.simplex.points[0], axis=1) <= radius
        if i == 1:
            a, d = self.simplex.points[0], self.simplex.edges[0]
            t = np.clip((y - a) @ d / (d @ d), 0.0, 1.0)
            return np.linalg.norm(y - a - t[:, None] * d, axis=1) <= radius
        lo = self.simplex.points.min(axis=0) - radius
        hi = self.simplex.points.max(axis=0) + radius
        return np.all((y >= lo) & (y <= hi), axis=1)

    def membership(self, y, which: str = "condition") -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        radii = {"condition": (self.delta, self.eta), "inner": self.inner_radii}.get(which)
        if which == "outer":
            d, e = self.inner_radii
            radii = (d * self.outer_ratio, e * self.outer_ratio)
        if radii is None:
            raise PreconditionError(f"unknown tube region '{which}'")
        out = np.zeros(y.shape[0], dtype=bool)
        cand = self._candidates(y, 1.5 * math.hypot(*radii) + 1e-12)
        if cand.any():
            c = self.coordinates(y[cand])
            out[cand] = self.gauge(c, radii) <= 1.0
        return out


class CivilizedPair(PairedDistribution):
    """Output of a civilization step (or of the homotopy at time ``t``).

    ``tubes`` are the step's tubes (outer tubes assumed pairwise disjoint
    outside ``exempt``); points inside an ``exempt`` tube (condition radii)
    keep the source value.
    """

    def __init__(self, source: PairedDistribution, tubes: Sequence[Tube], exempt: Sequence[Tube],
                 retraction: RadialRetraction, t: float = 1.0):
        self.source = source
        self.tubes = list(tubes)
        self.exempt = list(exempt)
        self.retraction = retraction
        self.t = float(t)
        self._keys = {tb.simplex.key: tb for tb in self.tubes}
        self._cache_key = None
        self._cache_val = None
        n, k = source.n, source.tau.k
        tau = PlaneField(n, k, lambda pts: self.values(pts)[0], smoothness="C0-glued",
                         name="civilized", orthonormal=True)
        omega = TwoFormField(n, lambda pts: self.values(pts)[1], name="civilized")
        super().__init__(tau, omega, list(source.samples))

    def values(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        key = (pts.shape, pts.tobytes())
        if key != self._cache_key:
            self._cache_val = self._evaluate(pts)
            self._cache_key = key
        f, w = self._cache_val
        return f.copy(), w.copy()

    def values_on_simplex(self, simplex, params):
        if simplex.key in self._keys and self.t == 1.0:
            # points of sigma sit at gauge 0, i.e. on the inner fibers
            return self.source.values_on_simplex(simplex, params)
        return self.values(simplex.point(params))

    def pullback_points(self, pts: np.ndarray):
        """Where each output value is read from: (kind, params, points, tube index).

        kind: 0 = unchanged, 1 = base point of an inner fiber, 2 = retracted point.
        """
        N = pts.shape[0]
        kind = np.zeros(N, dtype=np.int8)
        owner = np.full(N, -1)
        params = [None] * N
        read = pts.copy()
        if self.t == 0.0:
            return kind, params, read, owner
        free = np.ones(N, dtype=bool)
        for tb in self.exempt:
            idx = np.nonzero(free)[0]
            if idx.size:
                free[idx[tb.membership(pts[idx], "condition")]] = False
        for ti, tb in enumerate(self.tubes):
            idx = np.nonzero(free)[0]
            if idx.size == 0:
                break
            d, e = tb.inner_radii
            cand = tb._candidates(pts[idx], 1.5 * tb.outer_ratio * math.hypot(d, e) + 1e-12)
            idx = idx[cand]
            if idx.size == 0:
                continue
            c = tb.coordinates(pts[idx])
            g = tb.gauge(c, tb.inner_radii)
            inside = g < tb.outer_ratio
            idx, g, s = idx[inside], g[inside], c["params"][inside]
            if idx.size == 0:
                continue
            free[idx] = False
            owner[idx] = ti
            fg = self.retraction.interpolated(g * self.retraction.inner, self.t) / self.retraction.inner
            scale = np.where(g > 0, fg / np.where(g > 0, g, 1.0), 0.0)
            x = tb.simplex.point(s)
            inner = scale == 0.0
            kind[idx] = np.where(inner, 1, 2)
            read[idx] = np.where(inner[:, None], x, x + scale[:, None] * (pts[idx] - x))
            for j, p in zip(idx, s):
                params[j] = p
        return kind, params, read, owner

    def _evaluate(self, pts: np.ndarray):
        kind, params, read, owner = self.pullback_points(pts)
        frames = np.empty((pts.shape[0], self.source.tau.k, self.n))
        mats = np.empty((pts.shape[0], self.n, self.n))
        plain = kind != 1
        if plain.any():
            f, w = self.source.values(read[plain])
            frames[plain], mats[plain] = f, w
        for ti, tb in enumerate(self.tubes):
            idx = np.nonzero((kind == 1) & (owner == ti))[0]
            if idx.size:
                s = np.array([params[j] for j in idx]).reshape(idx.size, tb.simplex.dim)
                f, w = self.source.values_on_simplex(tb.simplex, s)
                frames[idx], mats[idx] = f, w
        return frames, mats


# ---------------------------------------------------------------------------
# skeleton state and operations


@dataclass
class SkeletonState:
    j: int
    deltas: list
    etas: list
    pair: PairedDistribution
    tubes: dict = field(default_factory=dict)      # dim -> list[Tube]
    simplices: dict = field(default_factory=dict)  # dim -> list[Simplex]
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.j < -1:
            raise PreconditionError("skeleton index must be >= -1")

    def delta(self, i: int) -> float:
        return math.inf if i < 0 else self.deltas[i]

    def eta(self, i: int) -> float:
        return math.inf if i < 0 else self.etas[i]

    def monotone_violations(self) -> list:
        out = []
        for i in range(1, len(self.deltas)):
            if not self.deltas[i] < self.deltas[i - 1]:
                out.append({"constant": "delta", "index": i, "values": [self.deltas[i - 1], self.deltas[i]]})
            if not self.etas[i] < self.etas[i - 1]:
                out.append({"constant": "eta", "index": i, "values": [self.etas[i - 1], self.etas[i]]})
        for name, seq in (("delta", self.deltas), ("eta", self.etas)):
            for i, v in enumerate(seq):
                if not v > 0:
                    out.append({"constant": name, "index": i, "values": [v]})
        return out


def tubular_fiber(x, sigma: Simplex, pair: PairedDistribution, delta: float, eta: float) -> TubularFiber:
    """Fiber B_x(delta) x E_x(eta) at a point x of sigma (or the line fiber for dim n-1)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    frames, _ = pair.values(x)
    kind = "line" if sigma.dim == sigma.n - 1 else "product"
    b, e = _fiber_bases(sigma, frames, kind)
    fib = TubularFiber(x[0], sigma.dim, b[0], e[0], delta, eta)
    if kind == "product" and fib.dim != sigma.n - sigma.dim:
        raise GeneralPositionViolation("fiber dimension is not n - i")
    return fib


def _pair_deviation(frames, mats, f0, w0) -> tuple[float, float]:
    fd = np.atleast_1d(grassmann_distance(frames, np.broadcast_to(f0, frames.shape)))
    wd = np.abs(mats - w0).max(axis=(1, 2))
    return float(fd.max(initial=0.0)), float(wd.max(initial=0.0))


def fiber_samples(tube: Tube, params: np.ndarray, count: int, rng: np.random.Generator,
                  radii: tuple[float, float] | None = None, boundary: bool = False) -> np.ndarray:
    """Random points of the fibers over ``params`` (``count`` per base point)."""
    d, e = radii or (tube.delta, tube.eta)
    b, ebasis = tube.bases(params)
    x = tube.simplex.point(params)
    out = []
    for j in range(params.shape[0]):
        kb, ke = b.shape[1], ebasis.shape[1]
        bc = rng.normal(size=(count, kb))
        bc /= np.linalg.norm(bc, axis=1, keepdims=True)
        bc *= (rng.random((count, 1)) ** (1.0 / kb)) * d * (1 - 1e-9)
        pts = x[j] + bc @ b[j]
        if ke:
            ec = rng.normal(size=(count, ke))
            ec /= np.linalg.norm(ec, axis=1, keepdims=True)
            rad = np.ones((count, 1)) if boundary else rng.random((count, 1)) ** (1.0 / ke)
            ec *= rad * e * (1 - 1e-9)
            pts = pts + ec @ ebasis[j]
        out.append(pts)
    return np.concatenate(out) if out else np.zeros((0, tube.n))


def fiber_deviation(pair: PairedDistribution, tube: Tube, per_edge: int = 3, per_fiber: int = 12,
                    seed: int = 0) -> dict:
    """Sup over sampled fiber points of the deviation from the base-point value."""
    rng = np.random.default_rng(seed)
    params = tube.simplex.grid_params(per_edge)
    frame_dev = form_dev = 0.0
    for s in params:
        s2 = s.reshape(1, -1)
        f0, w0 = pair.values_on_simplex(tube.simplex, s2)
        pts = fiber_samples(tube, s2, per_fiber, rng)
        f, w = pair.values(pts)
        a, b = _pair_deviation(f, w, f0[0], w0[0])
        frame_dev, form_dev = max(frame_dev, a), max(form_dev, b)
    return {"frame": frame_dev, "form": form_dev, "max": max(frame_dev, form_dev),
            "base_points": int(params.shape[0])}


def exempt_tubes(state: SkeletonState, upto: int) -> list:
    out = []
    for i in range(upto + 1):
        out.extend(state.tubes.get(i, []))
    return out


def civilize_step(state: SkeletonState, sigmas, delta_p: float, eta_p: float,
                  retraction: RadialRetraction | None = None, collar: float = 0.0,
                  check_samples: int = 64, seed: int = 0) -> CivilizedPair:
    """Make the pair constant on the fibers of the p-simplices ``sigmas``.

    ``state`` is civilized on the (p-1)-skeleton.  The new pair equals the base
    value on inner fibers (radii widened by ``collar``), the value at the
    radially retracted point on the annulus, and the input elsewhere.  Points
    in the lower-skeleton tubes are left untouched.
    """
    if isinstance(sigmas, Simplex):
        sigmas = [sigmas]
    p = sigmas[0].dim
    if any(s.dim != p for s in sigmas):
        raise PreconditionError("all simplices of one step must have the same dimension")
    if state.j != p - 1:
        raise PreconditionError(f"state is civilized on the {state.j}-skeleton, step needs {p - 1}")
    if not (delta_p < state.delta(p - 1) and eta_p < state.eta(p - 1)):
        raise PreconditionError("fiber radii must decrease strictly with the skeleton index")
    retraction = retraction or RadialRetraction()
    tubes = [Tube(s, state.pair, delta_p, eta_p, collar, retraction.outer / retraction.inner) for s in sigmas]
    check_embedding(tubes, exempt_tubes(state, p - 1), samples=check_samples, seed=seed)
    return CivilizedPair(state.pair, tubes, exempt_tubes(state, p - 1), retraction)


def homotopy_sample(state: SkeletonState, result: CivilizedPair, t: float) -> PairedDistribution:
    """The pair at time t of the homotopy from the input to the step output."""
    if not 0.0 <= t <= 1.0:
        raise PreconditionError("t must lie in [0, 1]")
    if t == 0.0:
        return result.source
    if t == 1.0:
        return result
    return CivilizedPair(result.source, result.tubes, result.exempt, result.retraction, t)


def check_embedding(tubes: Sequence[Tube], exempt: Sequence[Tube], samples: int = 64, seed: int = 0) -> dict:
    """Sampled check that outer tubes embed and overlap only inside lower tubes.

    Raises RadiiTooLargeError on the first violation.
    """
    rng = np.random.default_rng(seed)
    per_edge = 2
    for ti, tb in enumerate(tubes):
        d, e = tb.inner_radii
        outer = (d * tb.outer_ratio, e * tb.outer_ratio)
        params = tb.simplex.grid_params(per_edge)
        per = max(1, samples // max(1, params.shape[0]))
        pts = fiber_samples(tb, params, per, rng, outer)
        # fiber map must be injective: recover the base parameter
        c = tb.coordinates(pts)
        base = np.repeat(params, per, axis=0)
        if tb.simplex.dim and np.max(np.abs(c["params"] - base)) > 1e-7:
            raise RadiiTooLargeError(f"fibers of tube {tb.simplex.ids} are not embedded")
        lower = np.zeros(pts.shape[0], dtype=bool)
        for ex in exempt:
            lower |= ex.membership(pts, "condition")
        for tj, other in enumerate(tubes):
            if tj == ti:
                continue
            hit = other.membership(pts, "outer") & ~lower
            if hit.any():
                raise RadiiTooLargeError(
                    f"outer tubes of {tb.simplex.ids} and {other.simplex.ids} overlap outside lower tubes")
    return {"ok": True}


@dataclass
class CivilizationReport:
    C: dict
    D: dict
    E: dict
    monotone: list
    line_case: bool

    @property
    def ok(self) -> bool:
        return self.C["ok"] and self.D["ok"] and self.E["ok"] and not self.monotone

    def to_dict(self) -> dict:
        return {"ok": self.ok, "C": self.C, "D": self.D, "E": self.E,
                "monotone_violations": self.monotone, "primed_conditions": self.line_case}


def _boundary_exit(tube: Tube, rhos: Sequence[Simplex], rng: np.random.Generator, rays: int) -> list:
    """Crossings of each rho with the boundary of the condition fibers.

    Returns one list per rho of |b|/delta at the crossings; all rays are
    bisected together.
    """
    sigma = tube.simplex
    starts, dirs, owner = [], [], []
    for r, rho in enumerate(rhos):
        extra = [i for i, v in enumerate(rho.ids) if v not in set(sigma.ids)]
        if not extra:
            continue
        start = rng.dirichlet(np.ones(sigma.dim + 1), size=rays) @ sigma.points
        target = rng.dirichlet(np.ones(len(extra)), size=rays) @ rho.points[extra]
        starts.append(start)
        dirs.append(target - start)
        owner.extend([r] * rays)
    out = [[] for _ in rhos]
    if not starts:
        return out
    start, direction, owner = np.concatenate(starts), np.concatenate(dirs), np.array(owner)
    radii = (tube.delta, tube.eta)

    def gauge(t):
        return tube.gauge(tube.coordinates(start + t[:, None] * direction), radii)

    keep = gauge(np.ones(start.shape[0])) > 1.0
    if not keep.any():
        return out
    start, direction, owner = start[keep], direction[keep], owner[keep]
    lo, hi = np.zeros(start.shape[0]), np.ones(start.shape[0])
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        inside = gauge(mid) <= 1.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    ratio = tube.coordinates(start + lo[:, None] * direction)["b"] / tube.delta
    for r, v in zip(owner, ratio):
        out[r].append(float(v))
    return out


def check_civilized(state: SkeletonState, cofaces: dict | None = None, higher: Sequence[Simplex] = (),
                    per_edge: int = 2, per_fiber: int = 10, rays: int = 6, tol: float = 1e-9,
                    seed: int = 0) -> CivilizationReport:
    """Sampled report over conditions (C), (D), (E); the primed variants at j = n-1.

    ``cofaces`` maps a simplex key to the (n-2)-simplices having it as a face;
    ``higher`` lists simplices of dimension > j used for the emptiness clause of (E).
    """
    rng = np.random.default_rng(seed)
    n = state.pair.n
    c_viol, d_viol, e_viol = [], [], []
    built = 0
    worst_d = 0.0
    exits = []
    tubes_by_dim = {}
    for i in range(state.j + 1):
        tubes_by_dim[i] = []
        for sigma in state.simplices.get(i, []):
            try:
                tb = Tube(sigma, state.pair, state.deltas[i], state.etas[i])
                built += 1
            except (GeneralPositionViolation, PreconditionError) as exc:
                c_viol.append({"simplex": list(sigma.ids), "reason": str(exc)})
                continue
            tubes_by_dim[i].append(tb)
            dev = fiber_deviation(state.pair, tb, per_edge, per_fiber, int(rng.integers(1 << 31)))
            worst_d = max(worst_d, dev["max"])
            if dev["max"] >= tol:
                d_viol.append({"simplex": list(sigma.ids), "deviation": dev["max"]})
            rhos = (cofaces or {}).get(sigma.key, []) if tb.kind == "product" else []
            for rho, ratios in zip(rhos, _boundary_exit(tb, rhos, rng, rays)):
                exits.extend(ratios)
                bad = [r for r in ratios if r >= 1.0 - 1e-9]
                if bad:
                    c_viol.append({"simplex": list(sigma.ids), "coface": list(rho.ids),
                                   "reason": "coface leaves the fiber through the B-boundary",
                                   "ratio": max(bad)})
    all_tubes = [tb for i in sorted(tubes_by_dim) for tb in tubes_by_dim[i]]
    for a, b in combinations(all_tubes, 2):
        sa, sb = a.simplex, b.simplex
        if sa.dim > sb.dim:
            a, b, sa, sb = b, a, sb, sa
        pts = fiber_samples(b, sb.grid_params(per_edge), per_fiber, rng)
        both = pts[a.membership(pts, "condition")]
        if both.size == 0:
            continue
        common = sa.intersection(sb)
        if common is None:
            e_viol.append({"pair": [list(sa.ids), list(sb.ids)], "reason": "tubes of disjoint simplices meet"})
            continue
        holder = next((t for t in tubes_by_dim.get(common.dim, []) if t.simplex == common), None)
        if holder is None:
            continue
        outside = ~holder.membership(both, "condition")
        if outside.any():
            e_viol.append({"pair": [list(sa.ids), list(sb.ids)],
                           "reason": "intersection not inside the tube of the common face",
                           "witness": both[outside][0].tolist()})
    for tb in all_tubes:
        for other in higher:
            if other.has_face(tb.simplex):
                continue
            pts = other.grid_params(4)
            hit = tb.membership(other.point(pts), "condition")
            if hit.any():
                e_viol.append({"pair": [list(tb.simplex.ids), list(other.ids)],
                               "reason": "tube meets a higher simplex that does not contain it"})
    line_case = state.j == n - 1
    return CivilizationReport(
        C={"ok": not c_viol, "fibers_built": built, "max_exit_ratio": max(exits) if exits else None,
           "violations": c_viol},
        D={"ok": not d_viol, "max_deviation": worst_d, "violations": d_viol},
        E={"ok": not e_viol, "violations": e_viol},
        monotone=state.monotone_violations(),
        line_case=line_case,
    )


def default_constants(prev_delta: float, prev_eta: float, eta_ratio: float = 0.125) -> tuple[float, float]:
    """delta_p = delta_{p-1} / 4, eta_p = min(eta_{p-1} / 4, eta_ratio * delta_p)."""
    d = prev_delta / 4.0
    return d, min(prev_eta / 4.0, eta_ratio * d)


def civilize_skeleta(pair: PairedDistribution, top: Simplex, j_max: int, delta0: float,
                     retraction: RadialRetraction | None = None, retries: int = 8,
                     seed: int = 0, extra_simplices: dict | None = None,
                     reports: list | None = None, probes: int = 1000,
                     eta_ratio: float = 0.125) -> SkeletonState:
    """Civilize the 0..j_max skeleta of one top simplex (and optional extra faces).

    When ``reports`` is a list, a ``step_report`` of every step is appended.
    ``eta_ratio`` bounds eta_p / delta_p; the coface clause of (C) needs it
    below the transversality of the cofaces (see ``coface_eta_ratio``).

    The schedule follows ``default_constants``; on an embedding failure the
    current constants are halved, up to ``retries`` times.  Each step widens
    its constant region by a collar of delta_{p+1} + eta_{p+1} so the next
    step keeps fiber-constancy next to the lower tubes.
    """
    retraction = retraction or RadialRetraction()
    state = SkeletonState(-1, [], [], pair)
    if not eta_ratio > 0:
        raise PreconditionError("eta_ratio must be positive")
    deltas, etas = [delta0], [eta_ratio * delta0]
    for p in range(1, j_max + 1):
        d, e = default_constants(deltas[-1], etas[-1], eta_ratio)
        deltas.append(d)
        etas.append(e)
    for p in range(j_max + 1):
        sigmas = top.faces(p) + list((extra_simplices or {}).get(p, []))
        d, e = deltas[p], etas[p]
        for attempt in range(retries + 1):
            collar = deltas[p + 1] + etas[p + 1] if p < j_max else 0.0
            try:
                new_pair = civilize_step(state, sigmas, d, e, retraction, collar, seed=seed + p)
                break
            except RadiiTooLargeError:
                if attempt == retries:
                    raise
                d, e = d / 2.0, e / 2.0
                deltas[p], etas[p] = d, e
                for q in range(p + 1, j_max + 1):
                    deltas[q], etas[q] = default_constants(deltas[q - 1], etas[q - 1], eta_ratio)
        if reports is not None:
            reports.append({"p": p, **step_report(state, new_pair, probes=probes, seed=seed + p)})
        tubes = new_pair.tubes
        # condition tubes are rebuilt on the civilized pair (values on sigma are unchanged)
        cond = [Tube(tb.simplex, new_pair, d, e) for tb in tubes]
        state = SkeletonState(p, deltas[:p + 1], etas[:p + 1], new_pair,
                              {**state.tubes, p: cond}, {**state.simplices, p: sigmas},
                              state.history + [{"p": p, "delta": d, "eta": e, "collar": collar,
                                                "simplices": len(sigmas)}])
    return state


def margins_on(pair: PairedDistribution, points: np.ndarray, half_rank: int = 1) -> np.ndarray:
    f, w = pair.values(points)
    return restricted_wedge(f, w, half_rank)


def step_report(state: SkeletonState, result: CivilizedPair, probes: int = 1000,
                per_edge: int = 3, per_fiber: int = 12, seed: int = 0) -> dict:
    """Sampled checks of one step: inner-fiber constancy, support control,
    margin inheritance and idempotence on inner fibers."""
    rng = np.random.default_rng(seed)
    source = result.source
    inner_dev = 0.0
    for tb in result.tubes:
        cond = Tube(tb.simplex, result, tb.delta, tb.eta)
        inner_dev = max(inner_dev, fiber_deviation(result, cond, per_edge, per_fiber,
                                                   int(rng.integers(1 << 31)))["max"])

    # support control: probes around the tubes but outside every outer tube
    pts_all = np.concatenate([tb.simplex.points for tb in result.tubes])
    reach = max(tb.outer_euclidean() for tb in result.tubes) * 2.0
    lo, hi = pts_all.min(axis=0) - reach, pts_all.max(axis=0) + reach
    outside = np.zeros((0, source.n))
    rounds = 0
    while outside.shape[0] < probes and rounds < 50:
        cand = lo + (hi - lo) * rng.random((probes, source.n))
        hit = np.zeros(probes, dtype=bool)
        for tb in result.tubes:
            hit |= tb.membership(cand, "outer")
        outside = np.concatenate([outside, cand[~hit]])
        rounds += 1
    outside = outside[:probes]
    f_in, w_in = source.values(outside)
    f_out, w_out = result.values(outside)
    support_dev = float(max(np.max(np.abs(f_in - f_out), initial=0.0), np.max(np.abs(w_in - w_out), initial=0.0)))

    # margins on the outer tubes: each output margin is an input margin at the read point
    tube_pts = np.concatenate([
        fiber_samples(tb, tb.simplex.grid_params(per_edge), per_fiber, rng,
                      (tb.inner_radii[0] * tb.outer_ratio, tb.inner_radii[1] * tb.outer_ratio))
        for tb in result.tubes])
    out_m = margins_on(result, tube_pts)
    in_m = margins_on(source, tube_pts)
    _, _, read, _ = result.pullback_points(tube_pts)
    inherited = margins_on(source, read)
    # idempotence: a second step with the same data on the output
    again = CivilizedPair(result, [Tube(tb.simplex, result, tb.delta, tb.eta, tb.collar, tb.outer_ratio)
                                   for tb in result.tubes], result.exempt, result.retraction)
    idem = 0.0
    for tb in result.tubes:
        params = tb.simplex.grid_params(per_edge)
        pts = fiber_samples(tb, params, per_fiber, rng, tb.inner_radii)
        f1, w1 = result.values(pts)
        f2, w2 = again.values(pts)
        idem = max(idem, float(np.max(np.abs(f1 - f2))), float(np.max(np.abs(w1 - w2))))
    return {
        "inner_deviation": inner_dev,
        "support_probes": int(outside.shape[0]),
        "support_deviation": support_dev,
        "min_input_margin": float(in_m.min()),
        "min_output_margin": float(out_m.min()),
        "inheritance_error": float(np.max(np.abs(out_m - inherited))),
        "idempotence_deviation": idem,
    }


def coface_eta_ratio(pair: PairedDistribution, top: Simplex, j_max: int, safety: float = 0.5,
                     cap: float = 0.125) -> float:
    """An eta/delta ratio small enough for the coface clause of (C).

    For a face sigma and an (n-2)-face rho of ``top`` containing it, a direction
    u of rho transverse to sigma leaves B(delta) x E(eta) through the E side when
    |u_E| / eta > |u_B| / delta.  The bound min |P_E u| / max |P_B u| over such u,
    sampled at the vertices and barycenter of sigma, times ``safety``, is returned
    (at most ``cap``).
    """
    n = top.n
    best = cap
    rhos = top.faces(n - 2)
    for i in range(j_max + 1):
        for sigma in top.faces(i):
            pts = np.concatenate([sigma.points, sigma.points.mean(axis=0, keepdims=True)])
            frames = pair.tau.frames(pts)
            tsig = sigma.edges
            for rho in rhos:
                if rho.dim <= sigma.dim or not rho.has_face(sigma):
                    continue
                span = rho.edges.T
                if tsig.size:
                    q, _ = np.linalg.qr(tsig.T)
                    span = span - q @ (q.T @ span)
                u, sv, _ = np.linalg.svd(span, full_matrices=False)
                w = u[:, sv > 1e-12 * max(sv.max(), 1.0)]
                for fr in frames:
                    basis = np.vstack([fr, tsig]) if tsig.size else fr
                    qb, _ = np.linalg.qr(basis.T)
                    e_part = w - qb @ (qb.T @ w)
                    b_part = fr @ w
                    lo = np.linalg.svd(e_part, compute_uv=False).min()
                    hi = np.linalg.svd(b_part, compute_uv=False).max()
                    if hi > 0:
                        best = min(best, safety * lo / hi)
    return float(best)
