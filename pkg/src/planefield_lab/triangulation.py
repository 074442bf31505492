"""Kuhn triangulations of cubical lattices, jiggling, and general-position checks.

A lattice complex stores vertex coordinates ``(V, n)`` and top simplices as
vertex-index rows ``(S, n+1)`` in Kuhn path order: consecutive vertices of a
simplex differ by one lattice step along a single axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, permutations

import numpy as np

from .errors import DegenerateInputError, JiggleFailure, PreconditionError
from .geom_core import PlaneField, orthonormalize_batch, projection_margins

GP_FLOOR = 1e-9
CHUNK = 4096


def _box_array(box, n: int) -> np.ndarray:
    """Normalize a box to shape (n, 2).  Accepts (lo, hi) scalars or per-axis pairs."""
    b = np.asarray(box, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (n, 1))
    if b.shape != (n, 2):
        raise PreconditionError(f"box must be (lo, hi) or shape ({n}, 2)")
    if np.any(b[:, 1] <= b[:, 0]):
        raise PreconditionError("box is empty")
    return b


@dataclass(frozen=True)
class LatticeSpec:
    n: int
    l: int
    box: tuple

    def bounds(self) -> np.ndarray:
        return _box_array(self.box, self.n)

    def validate(self) -> np.ndarray:
        if int(self.l) != self.l or self.l < 1:
            raise PreconditionError("refinement l must be a positive integer")
        b = self.bounds()
        scaled = b * self.l
        if np.max(np.abs(scaled - np.round(scaled))) > 1e-9:
            raise PreconditionError(f"box edges are not multiples of 1/{self.l}")
        return np.round(scaled).astype(np.int64)


@dataclass
class LatticeComplex:
    n: int
    vertices: np.ndarray          # (V, n) float
    simplices: np.ndarray         # (S, n+1) int, Kuhn path order
    orientation: np.ndarray       # (S,) +-1, sign of the lattice simplex volume
    spec: LatticeSpec | None = None
    _faces: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_simplices(self) -> int:
        return self.simplices.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "LatticeComplex":
        return LatticeComplex(self.n, vertices, self.simplices, self.orientation, self.spec)

    def simplex_points(self, idx=None) -> np.ndarray:
        s = self.simplices if idx is None else self.simplices[idx]
        return self.vertices[s]

    def signed_volumes(self, idx=None) -> np.ndarray:
        pts = self.simplex_points(idx)
        edges = pts[:, 1:, :] - pts[:, :1, :]
        return np.linalg.det(edges) / math.factorial(self.n)

    def faces(self, dim: int) -> np.ndarray:
        """Unique dim-faces as sorted vertex-index rows (cached)."""
        if dim not in self._faces:
            combos = list(combinations(range(self.n + 1), dim + 1))
            rows = self.simplices[:, combos].reshape(-1, dim + 1)
            rows = np.sort(rows, axis=1)
            self._faces[dim] = np.unique(rows, axis=0)
        return self._faces[dim]

    def cofaces(self, face) -> np.ndarray:
        """Indices of top simplices containing every vertex of ``face``."""
        face = np.asarray(face)
        mask = np.ones(self.num_simplices, dtype=bool)
        for v in face:
            mask &= np.any(self.simplices == v, axis=1)
        return np.nonzero(mask)[0]

    def meeting(self, box) -> np.ndarray:
        """Simplices whose bounding box meets the closed ``box`` (a superset of the
        simplices meeting it)."""
        b = _box_array(box, self.n)
        out = []
        for start in range(0, self.num_simplices, CHUNK * 16):
            pts = self.simplex_points(slice(start, start + CHUNK * 16))
            lo, hi = pts.min(axis=1), pts.max(axis=1)
            ok = np.all((hi >= b[:, 0]) & (lo <= b[:, 1]), axis=1)
            out.append(np.nonzero(ok)[0] + start)
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def kuhn_triangulation(spec: LatticeSpec) -> LatticeComplex:
    """Freudenthal/Kuhn subdivision of the lattice (1/l Z)^n restricted to the box."""
    ib = spec.validate()
    n = spec.n
    counts = ib[:, 1] - ib[:, 0]                 # cubes per axis
    vshape = tuple(int(c) + 1 for c in counts)
    grid = np.indices(vshape).reshape(n, -1).T
    vertices = (grid + ib[:, 0]) / spec.l
    strides = np.array([int(np.prod(vshape[i + 1:])) for i in range(n)], dtype=np.int64)

    cubes = np.indices(tuple(int(c) for c in counts)).reshape(n, -1).T
    origin_ids = cubes @ strides
    perms = list(permutations(range(n)))
    paths = np.zeros((len(perms), n + 1), dtype=np.int64)
    signs = np.empty(len(perms))
    for p, perm in enumerate(perms):
        paths[p, 1:] = np.cumsum(strides[list(perm)])
        signs[p] = np.linalg.det(np.eye(n)[list(perm)])
    simplices = (origin_ids[:, None, None] + paths[None, :, :]).reshape(-1, n + 1)
    orientation = np.tile(np.round(signs), cubes.shape[0])
    return LatticeComplex(n, vertices, simplices, orientation, spec)


# ---------------------------------------------------------------------------
# jiggling


@dataclass
class Jiggling:
    displacement: np.ndarray   # (V, n)
    epsilon: float
    seed: int | None
    resamples: int = 0

    def max_displacement(self) -> float:
        if self.displacement.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.displacement, axis=1)))


def _ball_samples(rng: np.random.Generator, count: int, n: int, eps: float) -> np.ndarray:
    d = rng.normal(size=(count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = eps * rng.random(count) ** (1.0 / n)
    return d * r[:, None]


def _collapsed(complex_: LatticeComplex, vertices: np.ndarray, tol: float) -> np.ndarray:
    vol = complex_.with_vertices(vertices).signed_volumes()
    return np.nonzero(vol * complex_.orientation <= tol)[0]


def jiggle(complex_: LatticeComplex, epsilon: float, seed, max_fraction: float = 0.3,
           retries: int = 100) -> tuple[Jiggling, LatticeComplex]:
    """Displace every vertex uniformly inside the open epsilon-ball.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.  A vertex of a
    collapsed or inverted simplex is resampled, up to ``retries`` rounds.
    """
    if epsilon < 0:
        raise PreconditionError("epsilon must be non-negative")
    l = complex_.spec.l if complex_.spec is not None else 1
    if epsilon >= max_fraction / l:
        raise PreconditionError(f"epsilon {epsilon} exceeds the collapse guard {max_fraction}/l")
    n, nv = complex_.n, complex_.num_vertices
    if epsilon == 0:
        return Jiggling(np.zeros((nv, n)), 0.0, seed), complex_.with_vertices(complex_.vertices.copy())

    rng = np.random.default_rng(seed)
    disp = _ball_samples(rng, nv, n, epsilon)
    vol_tol = 1e-12 * (1.0 / l) ** n
    rounds = 0
    bad = _collapsed(complex_, complex_.vertices + disp, vol_tol)
    while bad.size:
        if rounds >= retries:
            raise JiggleFailure(f"{bad.size} simplices still collapsed after {retries} resampling rounds")
        victims = np.unique(complex_.simplices[bad, rng.integers(0, n + 1, size=bad.size)])
        disp[victims] = _ball_samples(rng, victims.size, n, epsilon)
        rounds += 1
        bad = _collapsed(complex_, complex_.vertices + disp, vol_tol)
    seed_rec = seed if isinstance(seed, (int, np.integer)) else None
    return Jiggling(disp, epsilon, seed_rec, rounds), complex_.with_vertices(complex_.vertices + disp)


# ---------------------------------------------------------------------------
# general position


def barycentric_samples(n: int, depth: int = 2) -> np.ndarray:
    """Nested barycentric sample plan: grids with denominators 1..depth plus the barycenter."""
    if depth < 1:
        raise PreconditionError("sampling depth must be >= 1")
    seen = set()
    rows = []

    def add(t):
        if t not in seen:
            seen.add(t)
            rows.append([float(c) for c in t])

    for m in range(1, depth + 1):
        for comp in _compositions(m, n + 1):
            add(tuple(Fraction(c, m) for c in comp))
    add(tuple(Fraction(1, n + 1) for _ in range(n + 1)))
    return np.array(rows)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _face_combos(n: int, k: int) -> list[tuple[int, ...]]:
    return list(combinations(range(n + 1), n - k + 1))


@dataclass
class SimplexVerdict:
    ok: bool
    margin: float
    witnesses: list


@dataclass
class GeneralPositionReport:
    simplex_ids: np.ndarray
    verdicts: np.ndarray
    margins: np.ndarray
    min_margin: float
    witnesses: list
    faces_checked: int
    floor: float
    depth: int

    @property
    def ok(self) -> bool:
        return bool(np.all(self.verdicts))

    def to_dict(self, max_witnesses: int = 20) -> dict:
        return {
            "ok": self.ok,
            "simplices_checked": int(self.simplex_ids.size),
            "failing_simplices": int(np.count_nonzero(~self.verdicts)),
            "min_margin": _finite(self.min_margin),
            "faces_checked": self.faces_checked,
            "floor": self.floor,
            "depth": self.depth,
            "witnesses": self.witnesses[:max_witnesses],
        }


def _finite(x: float):
    return None if not np.isfinite(x) else float(x)


def simplex_margins(points: np.ndarray, tau: PlaneField, depth: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Margins of every (n-k)-face at every sample point, for a batch of simplices.

    ``points``: ``(S, n+1, n)``.  Returns ``(margins (S, P, F), sample points (S, P, n))``.
    """
    s_count, _, n = points.shape
    k = tau.k
    bary = barycentric_samples(n, depth)
    samples = np.einsum("pv,svi->spi", bary, points)
    combos = _face_combos(n, k)
    if n - k == 0:
        return np.full((s_count, bary.shape[0], 0), np.inf), samples
    face_pts = points[:, combos, :]                       # (S, F, m+1, n)
    dirs = face_pts[:, :, 1:, :] - face_pts[:, :, :1, :]  # (S, F, m, n)
    basis = orthonormalize_batch(dirs)
    frames = tau.frames(samples.reshape(-1, n)).reshape(s_count, -1, k, n)
    margins = projection_margins(frames[:, :, None, :, :], basis[:, None, :, :, :])
    return margins, samples


def general_position_simplex(sigma, tau: PlaneField, depth: int = 2,
                             floor: float = GP_FLOOR) -> SimplexVerdict:
    """Sampled general-position test of one n-simplex (vertex rows ``(n+1, n)``)."""
    pts = np.asarray(sigma, dtype=float)
    n = pts.shape[1]
    if pts.shape != (n + 1, n):
        raise PreconditionError("sigma must have n+1 vertices in R^n")
    vol = abs(np.linalg.det(pts[1:] - pts[0]))
    if vol <= 1e-14 * max(1.0, np.max(np.abs(pts))) ** n:
        raise DegenerateInputError("simplex is degenerate")
    margins, samples = simplex_margins(pts[None], tau, depth)
    margins, samples = margins[0], samples[0]
    if margins.shape[1] == 0:
        return SimplexVerdict(True, math.inf, [])
    combos = _face_combos(n, tau.k)
    bad = np.argwhere(margins <= floor)
    witnesses = [{"face": list(combos[f]), "point": samples[p].tolist(), "margin": float(margins[p, f])}
                 for p, f in bad]
    m = float(margins.min())
    return SimplexVerdict(m > floor, m, witnesses)


def general_position_report(complex_: LatticeComplex, tau: PlaneField, simplex_ids=None,
                            depth: int = 2, floor: float = GP_FLOOR,
                            max_witnesses: int = 100, stop_on_failure: bool = False) -> GeneralPositionReport:
    """Per-simplex verdicts over ``simplex_ids`` (all simplices by default).

    Work is chunked; the reduction runs in ascending simplex order, so reports
    are independent of chunking.
    """
    ids = np.arange(complex_.num_simplices) if simplex_ids is None else np.sort(np.asarray(simplex_ids))
    n, k = complex_.n, tau.k
    combos = _face_combos(n, k)
    verdicts = np.ones(ids.size, dtype=bool)
    margins = np.full(ids.size, np.inf)
    witnesses: list = []
    faces = 0 if n - k == 0 else len(combos) * ids.size
    for start in range(0, ids.size, CHUNK):
        chunk = ids[start:start + CHUNK]
        if n - k == 0:
            break
        m, samples = simplex_margins(complex_.simplex_points(chunk), tau, depth)
        per = m.min(axis=(1, 2))
        margins[start:start + chunk.size] = per
        verdicts[start:start + chunk.size] = per > floor
        if len(witnesses) < max_witnesses:
            for s, p, f in np.argwhere(m <= floor):
                if len(witnesses) >= max_witnesses:
                    break
                face = complex_.simplices[chunk[s], list(combos[f])]
                witnesses.append({"simplex": int(chunk[s]), "face": face.tolist(),
                                  "point": samples[s, p].tolist(), "margin": float(m[s, p, f])})
        if stop_on_failure and not np.all(verdicts[start:start + chunk.size]):
            verdicts[start + chunk.size:] = False
            margins[start + chunk.size:] = np.nan
            break
    valid = margins[np.isfinite(margins)]
    min_margin = float(valid.min()) if valid.size else math.inf
    return GeneralPositionReport(ids, verdicts, margins, min_margin, witnesses, faces, floor, depth)


# ---------------------------------------------------------------------------
# lattice conditions (A) and (B)


@dataclass
class LatticeConditionReport:
    a_ok: bool
    a_violations: list
    a_vertices_checked: int
    b_ok: bool
    b_max_norm: float
    b_violations: list
    b_pairs_checked: int
    a_slack: float = 0.0

    @property
    def ok(self) -> bool:
        return self.a_ok and self.b_ok

    def to_dict(self, max_items: int = 20) -> dict:
        return {
            "A": {"ok": self.a_ok, "slack": self.a_slack, "vertices_checked": self.a_vertices_checked,
                  "violations": len(self.a_violations), "examples": self.a_violations[:max_items]},
            "B": {"ok": self.b_ok, "max_norm": _finite(self.b_max_norm), "pairs_checked": self.b_pairs_checked,
                  "violations": len(self.b_violations), "examples": self.b_violations[:max_items]},
        }


def graph_norms(frames_x: np.ndarray, frames_y: np.ndarray) -> np.ndarray:
    """Operator norm of L with tau(y) = graph(L: tau(x) -> tau(x)^perp); inf if undefined."""
    a = np.matmul(frames_x, np.swapaxes(frames_y, -1, -2))
    if a.shape[-1] == 2:
        a0, a1 = a[..., 0], a[..., 1]
        p, q, r = (a0 * a0).sum(-1), (a0 * a1).sum(-1), (a1 * a1).sum(-1)
        half = 0.5 * (p + r)
        disc = np.sqrt(np.maximum(0.25 * (p - r) ** 2 + q * q, 0.0))
        big = half + disc
        lam = np.where(big > 0, (p * r - q * q) / np.where(big > 0, big, 1.0), 0.0)
    else:
        ata = np.matmul(np.swapaxes(a, -1, -2), a)
        lam = np.linalg.eigvalsh(ata)[..., 0]
    cos2 = np.clip(lam, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(np.maximum(1.0 - cos2, 0.0)) / np.sqrt(cos2)
    return np.where(cos2 > 1e-24, out, np.inf)


def _star_boxes(complex_: LatticeComplex) -> tuple[np.ndarray, np.ndarray]:
    """Bounding box of the closed star of every vertex."""
    n, nv = complex_.n, complex_.num_vertices
    simp = complex_.simplices
    pts = complex_.vertices[simp]
    lo, hi = pts.min(axis=1), pts.max(axis=1)
    owner = simp.T.ravel()
    order = np.argsort(owner, kind="stable")
    owner = owner[order]
    rows = np.tile(np.arange(simp.shape[0]), n + 1)[order]
    starts = np.searchsorted(owner, np.arange(nv))
    vmin = np.full((nv, n), np.inf)
    vmax = np.full((nv, n), -np.inf)
    has = np.bincount(owner, minlength=nv) > 0
    vmin[has] = np.minimum.reduceat(lo[rows], starts[has], axis=0)
    vmax[has] = np.maximum.reduceat(hi[rows], starts[has], axis=0)
    return vmin, vmax


def check_lattice_conditions(complex_: LatticeComplex, tau: PlaneField, inner=(-1.0, 1.0),
                             star_box=(-1.5, 1.5), outer=(-2.0, 2.0),
                             slack: float = 0.0) -> LatticeConditionReport:
    """Sampled check of the star-containment condition (A) and the graph condition (B).

    (B) is checked once per edge of a simplex meeting ``outer``.  ``slack``
    widens the star box, e.g. by the jiggling displacement when the unjiggled
    lattice saturates the box exactly.
    """
    n = complex_.n
    inner_b, star_b, outer_b = (_box_array(b, n) for b in (inner, star_box, outer))
    vmin, vmax = _star_boxes(complex_)

    simp = complex_.simplices
    pts = complex_.vertices[simp]
    meets = np.all((pts.max(axis=1) >= outer_b[:, 0]) & (pts.min(axis=1) <= outer_b[:, 1]), axis=1)
    sel = simp[meets]
    pairs = np.array(list(combinations(range(n + 1), 2)))
    nv = np.int64(complex_.num_vertices)
    e = sel[:, pairs].reshape(-1, 2).astype(np.int64)
    keys = np.unique(np.minimum(e[:, 0], e[:, 1]) * nv + np.maximum(e[:, 0], e[:, 1]))
    edges = np.column_stack([keys // nv, keys % nv])
    frames = tau.frames(complex_.vertices)
    norms = np.empty(0)
    if edges.size:
        norms = np.concatenate([graph_norms(frames[edges[s:s + CHUNK * 16, 0]], frames[edges[s:s + CHUNK * 16, 1]])
                                for s in range(0, edges.shape[0], CHUNK * 16)])
    b_max = float(norms.max()) if norms.size else 0.0
    b_viol = [{"pair": edges[e].tolist(), "norm": _finite(float(norms[e]))}
              for e in np.nonzero(~(norms < 1.0))[0][:100]]

    star_meets = np.all((vmax >= inner_b[:, 0]) & (vmin <= inner_b[:, 1]), axis=1)
    tol = 1e-12 + slack
    inside = np.all((vmin >= star_b[:, 0] - tol) & (vmax <= star_b[:, 1] + tol), axis=1)
    bad = np.nonzero(star_meets & ~inside)[0]
    a_viol = [{"vertex": int(v), "star_lo": vmin[v].tolist(), "star_hi": vmax[v].tolist()} for v in bad[:100]]
    return LatticeConditionReport(bad.size == 0, a_viol, int(np.count_nonzero(star_meets)),
                                  not b_viol and b_max < 1.0, b_max, b_viol, int(norms.size), float(slack))


# ---------------------------------------------------------------------------
# search


@dataclass
class SearchAttempt:
    l: int
    attempt: int
    epsilon: float
    ok: bool
    min_margin: float


@dataclass
class GeneralPositionSearch:
    success: bool
    l: int | None
    attempts: int
    jiggling: Jiggling | None
    complex: LatticeComplex | None
    report: GeneralPositionReport | None
    history: list
    best_margin: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "l": self.l,
            "attempts": self.attempts,
            "seed": self.seed,
            "best_margin": _finite(self.best_margin),
            "max_displacement": None if self.jiggling is None else self.jiggling.max_displacement(),
            "epsilon": None if self.jiggling is None else self.jiggling.epsilon,
            "history": [{"l": h.l, "attempt": h.attempt, "epsilon": h.epsilon, "ok": h.ok,
                         "min_margin": _finite(h.min_margin)} for h in self.history],
            "report": None if self.report is None else self.report.to_dict(),
        }


def attempt_seed(seed: int, l: int, attempt: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(l), int(attempt)])


def find_general_position(tau: PlaneField, K=(-1.0, 1.0), epsilon_fraction: float = 0.1,
                          max_l: int = 4, attempts: int = 50, seed: int = 0, depth: int = 2,
                          floor: float = GP_FLOOR, pad_cells: int = 1, min_l: int = 1,
                          cover=None, early_exit: bool = True) -> GeneralPositionSearch:
    """Sweep l = min_l, 2 min_l, ... and jiggle until every simplex meeting K is in general position.

    Attempt 0 at each l is the unjiggled lattice; attempts 1.. use fresh seeds.
    The complex covers ``cover`` when given (e.g. the box needed by the lattice
    conditions), otherwise K padded by ``pad_cells`` lattice cells.
    With ``early_exit`` a failing attempt stops at its first bad chunk, so its
    recorded margin is only an upper bound (already below the floor).
    """
    n = tau.n
    kb = _box_array(K, n)
    if min_l < 1:
        raise PreconditionError("min_l must be >= 1")
    history: list[SearchAttempt] = []
    best = -math.inf
    total = 0
    l = min_l
    while l <= max_l:
        if cover is not None:
            box = _box_array(cover, n)
        else:
            box = np.column_stack([kb[:, 0] - pad_cells / l, kb[:, 1] + pad_cells / l])
        base = kuhn_triangulation(LatticeSpec(n, l, tuple(map(tuple, box))))
        ids = base.meeting(kb)
        eps = epsilon_fraction / l
        for a in range(attempts):
            total += 1
            if a == 0:
                jig, cpx = jiggle(base, 0.0, None)
            else:
                jig, cpx = jiggle(base, eps, attempt_seed(seed, l, a))
                jig.seed = seed
            rep = general_position_report(cpx, tau, ids, depth, floor, stop_on_failure=early_exit)
            history.append(SearchAttempt(l, a, jig.epsilon, rep.ok, rep.min_margin))
            best = max(best, rep.min_margin)
            if rep.ok:
                return GeneralPositionSearch(True, l, total, jig, cpx, rep, history, best, seed)
        l *= 2
    return GeneralPositionSearch(False, None, total, None, None, None, history, best, seed)
