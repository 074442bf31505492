"""Named plane fields, 2-forms, pairs and foliated charts used by tests and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError
from .geom_core import FoliatedChart, LeafwiseForm, PairedDistribution, PlaneField, TwoFormField


def constant_field(n: int, vectors=None, name: str = "constant") -> PlaneField:
    """Constant plane field, span(e1, e2) unless ``vectors`` is given."""
    if vectors is None:
        vectors = np.eye(n)[:2]
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    k = vectors.shape[0]

    def ev(pts):
        return np.broadcast_to(vectors, (pts.shape[0], k, n)).copy()

    return PlaneField(n, k, ev, lipschitz=0.0, name=name)


def rotating_field(n: int, rate: float = 0.05, axis: int = 0, name: str = "rotating") -> PlaneField:
    """span(e1, cos(t) e2 + sin(t) e3) with t = rate * x_axis."""
    if n < 3:
        raise PreconditionError("rotating field needs n >= 3")

    def ev(pts):
        t = rate * pts[:, axis]
        out = np.zeros((pts.shape[0], 2, n))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = np.cos(t)
        out[:, 1, 2] = np.sin(t)
        return out

    return PlaneField(n, 2, ev, lipschitz=abs(rate) * 1.01 + 1e-12, name=name)


def twisting_field(n: int, rate: float = 0.3, name: str = "twisting") -> PlaneField:
    """A generic non-constant field: both frame vectors turn with different coordinates."""
    if n < 4:
        raise PreconditionError("twisting field needs n >= 4")

    def ev(pts):
        s = rate * pts[:, 0] + 0.2
        t = rate * pts[:, 1] - 0.1
        out = np.zeros((pts.shape[0], 2, n))
        out[:, 0, 0] = np.cos(t)
        out[:, 0, 3] = np.sin(t)
        out[:, 1, 1] = np.cos(s)
        out[:, 1, 2] = np.sin(s)
        return out

    return PlaneField(n, 2, ev, lipschitz=2.0 * abs(rate) + 1e-12, name=name)


def full_rank_field(n: int) -> PlaneField:
    return constant_field(n, np.eye(n), name="full-rank")


def standard_form(n: int, scale: float = 1.0) -> TwoFormField:
    """scale * (dx1^dx2 + dx3^dx4 + ...)."""
    mat = np.zeros((n, n))
    for i in range(0, n - 1, 2):
        mat[i, i + 1] = scale
        mat[i + 1, i] = -scale

    def ev(pts):
        return np.broadcast_to(mat, (pts.shape[0], n, n)).copy()

    return TwoFormField(n, ev, name="standard")


def elementary_form(n: int, i: int, j: int, scale: float = 1.0) -> TwoFormField:
    """scale * dx_{i+1} ^ dx_{j+1} (zero-based indices)."""
    mat = np.zeros((n, n))
    mat[i, j] = scale
    mat[j, i] = -scale

    def ev(pts):
        return np.broadcast_to(mat, (pts.shape[0], n, n)).copy()

    return TwoFormField(n, ev, name=f"dx{i + 1}^dx{j + 1}")


def zero_form(n: int) -> TwoFormField:
    return TwoFormField(n, lambda pts: np.zeros((pts.shape[0], n, n)), name="zero")


def linear_form(n: int, slope: float = 0.5) -> TwoFormField:
    """(1 + slope * x1) dx1^dx2 + dx3^dx4 + ...: varies linearly in space."""
    base = standard_form(n)(np.zeros(n))

    def ev(pts):
        out = np.broadcast_to(base, (pts.shape[0], n, n)).copy()
        c = 1.0 + slope * pts[:, 0]
        out[:, 0, 1] = c
        out[:, 1, 0] = -c
        return out

    return TwoFormField(n, ev, name="linear")


PAIR_PRESETS = ("constant", "rotating", "twisting", "linear", "degenerate")


def make_pair(preset: str, n: int = 4, rate: float = 0.05) -> PairedDistribution:
    """Build a named (plane field, 2-form) pair.

    ``degenerate`` uses omega = 0 and therefore fails the nondegeneracy audit.
    """
    if preset == "constant":
        return PairedDistribution(constant_field(n), standard_form(n))
    if preset == "rotating":
        return PairedDistribution(rotating_field(n, rate), standard_form(n))
    if preset == "twisting":
        return PairedDistribution(twisting_field(n, rate), standard_form(n))
    if preset == "linear":
        return PairedDistribution(constant_field(n), linear_form(n, rate))
    if preset == "degenerate":
        return PairedDistribution(constant_field(n), zero_form(n))
    raise PreconditionError(f"unknown pair preset '{preset}' (known: {', '.join(PAIR_PRESETS)})")


def make_field(preset: str, n: int = 4, rate: float = 0.05) -> PlaneField:
    if preset in ("constant", "aligned"):
        return constant_field(n)
    if preset == "rotating":
        return rotating_field(n, rate)
    if preset == "twisting":
        return twisting_field(n, rate)
    if preset == "full-rank":
        return full_rank_field(n)
    raise PreconditionError(f"unknown plane-field preset '{preset}'")


# ---------------------------------------------------------------------------
# foliated charts of R^3 and leafwise 1-forms


def flat_chart(n: int = 3) -> FoliatedChart:
    """Leaves {x_n = c}."""
    return FoliatedChart(n, lambda x: 0.0, lambda x: np.zeros(n - 1), name="flat")


def tilted_chart(n: int = 3, slope: float = 1.0) -> FoliatedChart:
    """Leaves {x_n = slope * x_1 + c}."""
    def grad(x):
        g = np.zeros(n - 1)
        g[0] = slope
        return g
    return FoliatedChart(n, lambda x: slope * x[0], grad, name="tilted")


def wavy_chart(n: int = 3, amp: float = 0.3) -> FoliatedChart:
    """Leaves {x_n = amp * sin(x_1) + c}."""
    def grad(x):
        g = np.zeros(n - 1)
        g[0] = amp * np.cos(x[0])
        return g
    return FoliatedChart(n, lambda x: amp * np.sin(x[0]), grad, name="wavy")


def coordinate_one_form(i: int, name: str | None = None) -> LeafwiseForm:
    """dx_{i+1}."""
    return LeafwiseForm(1, lambda x, v: v[0][i], name or f"dx{i + 1}")


def x_dy() -> LeafwiseForm:
    return LeafwiseForm(1, lambda x, v: x[0] * v[0][1], "x dy")


def constant_one_form(covector) -> LeafwiseForm:
    c = np.asarray(covector, dtype=float)
    return LeafwiseForm(1, lambda x, v: float(c @ v[0]), "constant")


CHART_PRESETS = {"flat": flat_chart, "tilted": tilted_chart, "wavy": wavy_chart}
