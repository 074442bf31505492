"""Smooth steps and bumps built from exp(-1/t)."""

from __future__ import annotations

import numpy as np


def _psi(t):
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, np.exp(-1.0 / safe), 0.0)


def _dpsi(t):
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, np.exp(-1.0 / safe) / safe ** 2, 0.0)


def smooth_step(t, lo: float, hi: float):
    """C-infinity step: 0 for t <= lo, 1 for t >= hi."""
    s = (np.asarray(t, dtype=float) - lo) / (hi - lo)
    a, b = _psi(s), _psi(1.0 - s)
    return a / (a + b)


def smooth_step_derivative(t, lo: float, hi: float):
    s = (np.asarray(t, dtype=float) - lo) / (hi - lo)
    a, b = _psi(s), _psi(1.0 - s)
    da, db = _dpsi(s), -_dpsi(1.0 - s)
    return (da * b - a * db) / (a + b) ** 2 / (hi - lo)


def plateau_bump(s, plateau: float = 0.0):
    """1 on [0, plateau], smoothly down to 0 at s = 1, 0 beyond."""
    return 1.0 - smooth_step(s, plateau, 1.0)


def plateau_bump_derivative(s, plateau: float = 0.0):
    return -smooth_step_derivative(s, plateau, 1.0)
