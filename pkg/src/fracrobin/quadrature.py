"""Quadrature rules shared by the heat-kernel and extension routes."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def log_tau_rule(a: float, b: float, per_unit: int = 32):
    """Nodes and weights for int_a^b f(tau) dtau after the substitution tau = e^u.

    Composite Gauss-Legendre with ``per_unit`` nodes on each unit of u; the
    last panel is shortened to end exactly at log(b).  Weights include the
    Jacobian tau.
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    ua, ub = math.log(a), math.log(b)
    n_panels = max(1, math.ceil(ub - ua))
    edges = np.linspace(ua, ub, n_panels + 1)
    g, w = _gauss_legendre(per_unit)
    lo, hi = edges[:-1, None], edges[1:, None]
    u = (0.5 * (hi - lo) * g + 0.5 * (hi + lo)).ravel()
    wu = (0.5 * (hi - lo) * w).ravel()
    tau = np.exp(u)
    return tau, wu * tau


def graded_mesh(y_max: float, K: int, gamma: float) -> np.ndarray:
    """y_k = Y (k/K)^gamma, k = 0..K."""
    if K < 2 or gamma < 1 or y_max <= 0:
        raise ValueError("graded mesh needs K >= 2, gamma >= 1, Y > 0")
    y = y_max * (np.arange(K + 1) / K) ** gamma
    y[-1] = y_max
    return y


def weighted_trapezoid(y: np.ndarray, alpha: float) -> np.ndarray:
    """Product-trapezoid weights for int y^alpha f(y) dy on the mesh ``y``.

    ``f`` is replaced by its piecewise-linear interpolant and the weight
    y^alpha is integrated exactly, so the rule stays second order even where
    y^alpha is singular (alpha > -1).
    """
    y = np.asarray(y, dtype=float)
    a0, a1 = y[:-1], y[1:]
    m0 = (a1 ** (alpha + 1) - a0 ** (alpha + 1)) / (alpha + 1)
    m1 = (a1 ** (alpha + 2) - a0 ** (alpha + 2)) / (alpha + 2)
    dy = a1 - a0
    left = (a1 * m0 - m1) / dy
    right = (m1 - a0 * m0) / dy
    w = np.zeros_like(y)
    w[:-1] += left
    w[1:] += right
    return w


def weight_moments(y: np.ndarray, alpha: float) -> np.ndarray:
    """int y^alpha over each dual cell [y_{k-1/2}, y_{k+1/2}] (y_{-1/2}=0, y_{K+1/2}=y_K)."""
    y = np.asarray(y, dtype=float)
    mid = np.concatenate([[0.0], 0.5 * (y[:-1] + y[1:]), [y[-1]]])
    p = mid ** (alpha + 1) / (alpha + 1)
    return p[1:] - p[:-1]


def face_rule(n: int, lo: float, hi: float):
    """Gauss-Legendre nodes and weights on [lo, hi]."""
    g, w = _gauss_legendre(n)
    return 0.5 * (hi - lo) * g + 0.5 * (hi + lo), 0.5 * (hi - lo) * w
