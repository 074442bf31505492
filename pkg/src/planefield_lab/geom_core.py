"""Pointwise linear algebra for plane fields and differential forms on R^n.

Plane fields are represented by orthonormal frames (rows of a ``(k, n)``
array) and 2-forms by antisymmetric ``(n, n)`` matrices.  Field evaluators
are vectorized: they take points of shape ``(N, n)`` and return ``(N, k, n)``
frames or ``(N, n, n)`` matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, InversionError, PreconditionError

ORTHO_TOL = 1e-12
ANTISYM_TOL = 1e-14
NONDEGENERACY_FLOOR = 1e-12
FD_STEP = 1e-4


def _as_points(x, n: int | None = None) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if n is not None and pts.shape[-1] != n:
        raise PreconditionError(f"expected points of dimension {n}, got {pts.shape[-1]}")
    if not np.all(np.isfinite(pts)):
        raise PreconditionError("points must have finite coordinates")
    return pts


def orthonormalize(vectors, tol: float = 1e-12) -> np.ndarray:
    """Orthonormal rows spanning the same space as the rows of ``vectors``.

    Raises DegenerateInputError when the rows are (numerically) dependent.
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    if v.shape[0] == 0:
        return v.copy()
    q, r = np.linalg.qr(v.T)
    diag = np.abs(np.diag(r))
    scale = max(1.0, float(np.max(np.linalg.norm(v, axis=1))))
    if np.any(diag <= tol * scale):
        raise DegenerateInputError("vectors are linearly dependent")
    # fix signs so that q spans with the same orientation as the input
    q = q * np.sign(np.diag(r))
    return q.T


def orthonormalize_batch(vectors: np.ndarray) -> np.ndarray:
    """Batched Gram-Schmidt via QR on ``(..., m, n)`` arrays (no degeneracy check)."""
    q, r = np.linalg.qr(np.swapaxes(vectors, -1, -2))
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d = np.where(d == 0, 1.0, d)
    q = q * d[..., None, :]
    return np.swapaxes(q, -1, -2)


def complement_basis(frame: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of the rows of ``frame``."""
    frame = np.atleast_2d(frame)
    n = frame.shape[-1]
    k = frame.shape[0]
    _, _, vt = np.linalg.svd(frame, full_matrices=True)
    return vt[k:n].copy()


def projector(frame: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the span of orthonormal rows (batched)."""
    return np.einsum("...ki,...kj->...ij", frame, frame)


def grassmann_distance(frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray | float:
    """Operator norm of the difference of the orthogonal projectors."""
    d = projector(frame_a) - projector(frame_b)
    out = np.linalg.norm(d, ord=2, axis=(-2, -1))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class PlaneFieldSample:
    base: np.ndarray
    frame: np.ndarray  # (k, n), orthonormal rows

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float).reshape(-1)
        frame = np.atleast_2d(np.asarray(self.frame, dtype=float))
        if frame.shape[1] != base.shape[0]:
            raise PreconditionError("frame vectors must live in the ambient dimension")
        gram = frame @ frame.T
        if np.max(np.abs(gram - np.eye(frame.shape[0]))) > ORTHO_TOL:
            raise PreconditionError("frame is not orthonormal to 1e-12")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "frame", frame)

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def k(self) -> int:
        return self.frame.shape[0]

    @classmethod
    def from_vectors(cls, base, vectors) -> "PlaneFieldSample":
        return cls(base, orthonormalize(vectors))


class PlaneField:
    """A rank-k plane field on R^n given by a vectorized frame evaluator.

    ``evaluator(points)`` maps ``(N, n)`` points to ``(N, k, n)`` frames;
    frames are orthonormalized eagerly on the way out.
    """

    def __init__(self, n: int, k: int, evaluator: Callable[[np.ndarray], np.ndarray],
                 smoothness: str = "analytic", lipschitz: float | None = None,
                 name: str = "custom", orthonormal: bool = False):
        if n < 1 or not (0 < k <= n):
            raise PreconditionError(f"invalid plane field shape n={n}, k={k}")
        self.n = n
        self.k = k
        self._evaluator = evaluator
        self.smoothness = smoothness
        self.lipschitz = lipschitz
        self.name = name
        # evaluator already returns orthonormal frames; skip re-orthonormalization
        self.orthonormal = orthonormal

    def frames(self, points) -> np.ndarray:
        pts = _as_points(points, self.n)
        raw = np.asarray(self._evaluator(pts), dtype=float)
        if raw.shape != (pts.shape[0], self.k, self.n):
            raise PreconditionError(f"evaluator returned shape {raw.shape}")
        return raw if self.orthonormal else orthonormalize_batch(raw)

    def __call__(self, x) -> PlaneFieldSample:
        x = np.asarray(x, dtype=float).reshape(-1)
        return PlaneFieldSample(x, self.frames(x[None, :])[0])

    def check_continuity(self, points, step: float = 1e-3, seed: int = 0) -> float:
        """Largest observed ratio Grassmann-distance / |dx| over random nearby pairs.

        Raises PreconditionError if the declared Lipschitz constant is exceeded.
        """
        pts = _as_points(points, self.n)
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=pts.shape)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        d = grassmann_distance(self.frames(pts), self.frames(pts + step * dirs))
        ratio = float(np.max(np.atleast_1d(d))) / step
        if self.lipschitz is not None and ratio > self.lipschitz:
            raise PreconditionError(
                f"plane field '{self.name}' exceeds declared Lipschitz bound "
                f"({ratio:.3g} > {self.lipschitz:.3g})")
        return ratio


class TwoFormField:
    """A 2-form on R^n given by a vectorized antisymmetric-matrix evaluator."""

    def __init__(self, n: int, evaluator: Callable[[np.ndarray], np.ndarray], name: str = "custom"):
        self.n = n
        self._evaluator = evaluator
        self.name = name

    def matrices(self, points) -> np.ndarray:
        pts = _as_points(points, self.n)
        m = np.asarray(self._evaluator(pts), dtype=float)
        if m.shape != (pts.shape[0], self.n, self.n):
            raise PreconditionError(f"evaluator returned shape {m.shape}")
        if np.max(np.abs(m + np.swapaxes(m, 1, 2)), initial=0.0) > ANTISYM_TOL:
            raise PreconditionError("2-form matrix is not antisymmetric")
        return m

    def __call__(self, x) -> np.ndarray:
        return self.matrices(np.asarray(x, dtype=float).reshape(1, -1))[0]


@dataclass
class PairedDistribution:
    tau: PlaneField
    omega: TwoFormField
    samples: list = field(default_factory=list)

    def __post_init__(self):
        if self.tau.n != self.omega.n:
            raise PreconditionError("plane field and 2-form live in different dimensions")

    @property
    def n(self) -> int:
        return self.tau.n

    def values(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Frames and 2-form matrices at ``points`` (both batched)."""
        return self.tau.frames(points), self.omega.matrices(points)

    def values_on_simplex(self, simplex, params) -> tuple[np.ndarray, np.ndarray]:
        """Values at the points of ``simplex`` with affine parameters ``params`` ``(N, i)``."""
        return self.values(simplex.point(params))

    def audit(self, points=None, half_rank: int = 1, floor: float = NONDEGENERACY_FLOOR):
        """Nondegeneracy margins at the registered sample points (or ``points``)."""
        pts = self.samples if points is None else points
        pts = _as_points(pts, self.n)
        frames, mats = self.values(pts)
        margins = restricted_wedge(frames, mats, half_rank)
        return margins > floor, margins


@dataclass(frozen=True)
class LeafwiseForm:
    """A p-form evaluated on leaf-tangent vectors: ``evaluator(x, vectors) -> float``.

    ``vectors`` has shape ``(p, n)``.
    """
    degree: int
    evaluator: Callable[[np.ndarray, np.ndarray], float]
    name: str = "eta"

    def __call__(self, x, vectors) -> float:
        return float(self.evaluator(np.asarray(x, dtype=float), np.atleast_2d(vectors)))


@dataclass(frozen=True)
class BivectorSample:
    base: np.ndarray
    matrix: np.ndarray          # antisymmetric (n, n), contravariant
    image: np.ndarray           # orthonormal rows spanning Im(#pi)
    image_distance: float       # Grassmann distance from Im(#pi) to tau(x)


@dataclass(frozen=True)
class FoliatedChart:
    """Foliation of R^n by graphs ``x_n = phi(x_1, ..., x_{n-1}) + c``.

    ``gradient`` returns the partial derivatives of phi, shape ``(n-1,)``.
    """
    n: int
    phi: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = "chart"

    def normal(self, x) -> np.ndarray:
        g = np.asarray(self.gradient(np.asarray(x, dtype=float)), dtype=float)
        nu = np.append(-g, 1.0)
        return nu / np.linalg.norm(nu)

    def tangent_frame(self, x) -> np.ndarray:
        g = np.asarray(self.gradient(np.asarray(x, dtype=float)), dtype=float)
        vecs = np.zeros((self.n - 1, self.n))
        vecs[:, : self.n - 1] = np.eye(self.n - 1)
        vecs[:, -1] = g
        return orthonormalize(vecs)

    def tangent_projector(self, x, complement: str = "orthogonal") -> np.ndarray:
        """Projection onto the leaf tangent space along the chosen complement.

        ``orthogonal`` projects along the unit normal; ``transverse`` projects
        along the chart direction e_n, i.e. the fibers of the leaf-space map.
        """
        if complement == "orthogonal":
            nu = self.normal(x)
            return np.eye(self.n) - np.outer(nu, nu)
        if complement == "transverse":
            g = np.asarray(self.gradient(np.asarray(x, dtype=float)), dtype=float)
            proj = np.eye(self.n)
            proj[-1, :-1] = g
            proj[-1, -1] = 0.0
            return proj
        raise PreconditionError(f"unknown complement '{complement}'")

    def coordinate_field(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        """Leaf-tangent lift of d/dx_i (i < n-1): e_i + (d phi / d x_i) e_n."""
        def X(x):
            v = np.zeros(self.n)
            v[i] = 1.0
            v[-1] = float(np.asarray(self.gradient(np.asarray(x, dtype=float)))[i])
            return v
        return X


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class ProjectionResult:
    matrix: np.ndarray   # (n-k, m): subspace basis coords -> tau-perp coords
    margin: float        # smallest singular value (0 when not injective)


def project_along(tau_sample: PlaneFieldSample, subspace) -> ProjectionResult:
    """Orthogonal projection along tau(x) of ``subspace`` onto tau(x)^perp."""
    sub = np.atleast_2d(np.asarray(subspace, dtype=float))
    if sub.shape[1] != tau_sample.n:
        raise PreconditionError("subspace vectors have the wrong dimension")
    basis = orthonormalize(sub)
    perp = complement_basis(tau_sample.frame)
    mat = perp @ basis.T
    return ProjectionResult(mat, _injectivity_margin(mat))


def _injectivity_margin(mat: np.ndarray) -> float:
    rows, cols = mat.shape
    if cols == 0:
        return math.inf
    if rows < cols:
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[-1])


def projection_margins(frames: np.ndarray, subspaces: np.ndarray) -> np.ndarray:
    """Batched ``project_along`` margins.

    ``frames``: ``(N, k, n)`` orthonormal; ``subspaces``: ``(N, m, n)`` orthonormal.
    Uses ``sigma_min(P_perp B) ** 2 = lambda_min(I - (F B^T)^T (F B^T))``, which
    avoids building complement bases.
    """
    m = subspaces.shape[-2]
    n = subspaces.shape[-1]
    k = frames.shape[-2]
    if m == 0:
        return np.full(frames.shape[:-2], np.inf)
    if m > n - k:
        return np.zeros(frames.shape[:-2])
    c = np.matmul(frames, np.swapaxes(subspaces, -1, -2))
    if m == 2:
        # entries of I - c^T c, written out: this is the hot loop of the sweep
        c0, c1 = c[..., 0], c[..., 1]
        a = 1.0 - (c0 * c0).sum(-1)
        b = -(c0 * c1).sum(-1)
        d = 1.0 - (c1 * c1).sum(-1)
        half_tr = 0.5 * (a + d)
        disc = np.sqrt(np.maximum(0.25 * (a - d) ** 2 + b * b, 0.0))
        lam = half_tr - disc
        # cancellation guard: lam_min = det / lam_max
        lam_max = half_tr + disc
        det = a * d - b * b
        lam = np.where(lam_max > 0, det / np.where(lam_max > 0, lam_max, 1.0), 0.0)
    else:
        gram = np.eye(m) - np.einsum("...km,...kl->...ml", c, c)
        lam = np.linalg.eigvalsh(gram)[..., 0]
    return np.sqrt(np.maximum(lam, 0.0))


def restricted_wedge(frames: np.ndarray, mats: np.ndarray, half_rank: int) -> np.ndarray:
    """|omega^m(f_1, ..., f_2m)| for batched frames ``(N, 2m, n)`` and forms ``(N, n, n)``.

    omega^m on 2m vectors equals m! * Pf(W) with W_ij = omega(f_i, f_j).
    """
    w = np.einsum("...ia,...ab,...jb->...ij", frames, mats, frames)
    if half_rank == 1:
        return np.abs(w[..., 0, 1])
    det = np.linalg.det(w)
    return math.factorial(half_rank) * np.sqrt(np.abs(det))


@dataclass(frozen=True)
class NondegeneracyResult:
    ok: bool
    margin: float

    def __bool__(self) -> bool:
        return self.ok


def pair_nondegenerate(pair: PairedDistribution, x, half_rank: int = 1,
                       floor: float = NONDEGENERACY_FLOOR) -> NondegeneracyResult:
    """Membership test for the nondegenerate-pair condition at a single point."""
    if pair.tau.k % 2:
        raise PreconditionError("plane field rank must be even")
    if pair.tau.k != 2 * half_rank:
        raise PreconditionError(f"rank {pair.tau.k} does not match half rank {half_rank}")
    frames, mats = pair.values(np.asarray(x, dtype=float)[None, :])
    margin = float(restricted_wedge(frames, mats, half_rank)[0])
    return NondegeneracyResult(margin > floor, margin)


def bivector_from_pair(pair: PairedDistribution, x, floor: float = NONDEGENERACY_FLOOR) -> BivectorSample:
    """Inverse of omega restricted to tau(x), extended by zero on tau(x)^perp.

    Sign convention: pi(alpha, beta) = alpha^T P beta, and contracting
    omega(., v) with pi gives back v for v in tau(x).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    frames, mats = pair.values(x[None, :])
    frame, omega = frames[0], mats[0]
    w = frame @ omega @ frame.T
    if pair.tau.k % 2:
        raise InversionError("odd-rank plane field: restriction cannot be invertible")
    margin = abs(np.linalg.det(w)) ** 0.5
    if margin <= floor:
        raise InversionError(f"omega restricted to tau(x) is degenerate (margin {margin:.3g})")
    p_frame = -np.linalg.inv(w)
    p = frame.T @ p_frame @ frame
    p = 0.5 * (p - p.T)
    u, s, _ = np.linalg.svd(p)
    image = u[:, : pair.tau.k].T
    return BivectorSample(x, p, image, grassmann_distance(image, frame))


def recontract(bivector: BivectorSample, omega: np.ndarray, v) -> np.ndarray:
    """#pi applied to the covector omega(., v)."""
    covector = omega @ np.asarray(v, dtype=float)
    return bivector.matrix.T @ covector


# ---------------------------------------------------------------------------
# tangential exterior derivative


VectorField = Callable[[np.ndarray], np.ndarray]


def _directional(fn: Callable[[np.ndarray], np.ndarray | float], x: np.ndarray,
                 v: np.ndarray, h: float):
    return (np.asarray(fn(x + h * v)) - np.asarray(fn(x - h * v))) / (2.0 * h)


def lie_bracket(X: VectorField, Y: VectorField, x, h: float = FD_STEP) -> np.ndarray:
    """[X, Y](x) = DY(x) X(x) - DX(x) Y(x) by central differences."""
    x = np.asarray(x, dtype=float)
    return _directional(Y, x, X(x), h) - _directional(X, x, Y(x), h)


def check_leaf_tangent(chart: FoliatedChart, fields: Sequence[VectorField], x,
                       tol: float = 1e-9) -> None:
    nu = chart.normal(x)
    for i, X in enumerate(fields):
        v = np.asarray(X(np.asarray(x, dtype=float)), dtype=float)
        if abs(nu @ v) > tol * max(1.0, np.linalg.norm(v)):
            raise PreconditionError(f"field {i} is not tangent to the leaves at {x}")


def tangential_derivative(eta: LeafwiseForm, chart: FoliatedChart, x,
                          fields: Sequence[VectorField], h: float = FD_STEP,
                          tangency_tol: float = 1e-9) -> float:
    """d_F eta(X_0, ..., X_p) at x via the invariant (Koszul) formula.

    Directional derivatives and Lie brackets use central differences of step h.
    """
    p = eta.degree
    if len(fields) != p + 1:
        raise PreconditionError(f"need {p + 1} vector fields for a {p}-form")
    x = np.asarray(x, dtype=float)
    check_leaf_tangent(chart, fields, x, tangency_tol)

    total = 0.0
    for i in range(p + 1):
        rest = [fields[j] for j in range(p + 1) if j != i]

        def g(y, rest=rest):
            return eta(y, np.array([Y(y) for Y in rest]).reshape(p, -1))

        total += (-1) ** i * float(_directional(g, x, fields[i](x), h))
    for i, j in combinations(range(p + 1), 2):
        bracket = lie_bracket(fields[i], fields[j], x, h)
        rest = [fields[m](x) for m in range(p + 1) if m not in (i, j)]
        vecs = np.array([bracket] + rest)
        total += (-1) ** (i + j) * eta(x, vecs)
    return total


@dataclass
class ExtensionReport:
    leafwise_closed: bool
    max_leafwise_derivative: float
    max_ambient_derivative: float
    flagged: bool
    note: str = ""


@dataclass
class AmbientExtension:
    eta: LeafwiseForm
    chart: FoliatedChart
    complement: str = "orthogonal"

    def __call__(self, x, vectors) -> float:
        x = np.asarray(x, dtype=float)
        proj = self.chart.tangent_projector(x, self.complement)
        vecs = np.atleast_2d(vectors) @ proj.T
        return self.eta(x, vecs)


def ambient_exterior_derivative(form: Callable[[np.ndarray, np.ndarray], float], degree: int,
                                n: int, x, h: float = FD_STEP) -> np.ndarray:
    """All components (dform)(e_I) for increasing multi-indices I of length degree+1."""
    x = np.asarray(x, dtype=float)
    eye = np.eye(n)
    out = []
    for idx in combinations(range(n), degree + 1):
        total = 0.0
        for pos, i in enumerate(idx):
            rest = eye[[j for j in idx if j != i]]
            total += (-1) ** pos * float(_directional(lambda y: form(y, rest), x, eye[i], h))
        out.append(total)
    return np.array(out)


def extend_by_normal_kernel(eta: LeafwiseForm, chart: FoliatedChart, grid,
                            h: float = FD_STEP, closed_tol: float = 1e-6,
                            complement: str = "orthogonal"):
    """Extend a leafwise form by declaring the normal bundle to be its kernel.

    ``complement`` picks the realization of the normal bundle (see
    ``FoliatedChart.tangent_projector``).  With the orthogonal normal the
    extension of a leafwise closed form need not be closed once the leaves
    curve; the transverse chart direction keeps it closed for forms that do
    not vary from leaf to leaf.

    Returns the ambient evaluator and a report with the sampled maxima of
    |d_F eta| and |d eta'| over ``grid``.  A form that is not leafwise closed
    is flagged; the report is still produced.
    """
    ext = AmbientExtension(eta, chart, complement)
    pts = _as_points(grid, chart.n)
    p = eta.degree
    tangents = [chart.coordinate_field(i) for i in range(chart.n - 1)]
    max_leaf = 0.0
    max_amb = 0.0
    for x in pts:
        for combo in combinations(range(chart.n - 1), p + 1):
            val = tangential_derivative(eta, chart, x, [tangents[i] for i in combo], h)
            max_leaf = max(max_leaf, abs(val))
        d = ambient_exterior_derivative(ext, p, chart.n, x, h)
        max_amb = max(max_amb, float(np.max(np.abs(d))))
    closed = max_leaf < closed_tol
    note = "" if closed else "form is not leafwise closed; closedness of the extension is not expected"
    return ext, ExtensionReport(closed, max_leaf, max_amb, not closed, note)
