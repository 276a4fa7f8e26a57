"""
Quadrature helpers.

Two families are used: scipy's QUADPACK with algebraic endpoint weights for
one-dimensional constants, and composite Gauss-Jacobi/Gauss-Legendre tensor
rules for the vectorized parameter-space integrals.
"""

import os
import warnings
from functools import lru_cache
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.special import roots_jacobi

from .errors import QuadratureError

DEFAULT_TOL = float(os.environ.get("BOLTZMIX_QUAD_TOL", "1e-10"))


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} in R^d."""
    return float(2.0 * np.pi ** (d / 2.0) / gamma_fn(d / 2.0))


@lru_cache(maxsize=256)
def _reference_rule(n: int, left: float, right: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1] for the weight x^left (1-x)^right."""
    x, w = roots_jacobi(n, right, left)
    nodes = 0.5 * (x + 1.0)
    weights = w * 0.5 ** (left + right + 1.0)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_jacobi(n: int, left: float = 0.0, right: float = 0.0, a: float = 0.0, b: float = 1.0):
    """Rule for the integral of f(x) (x-a)^left (b-x)^right over [a, b]."""
    x, w = _reference_rule(n, float(left), float(right))
    h = b - a
    return a + h * x, w * h ** (left + right + 1.0)


def composite_rule(n: int, a: float, b: float, left: float = 0.0, right: float = 0.0, breaks=None):
    """
    Composite rule for f(x) (x-a)^left (b-x)^right on [a, b] with interior
    breakpoints.

    ``breaks`` may carry leading batch dimensions, shape (..., nb); each row
    gets its own partition. Zero-length segments carry zero weight.

    Returns:
        tuple: (nodes, weights) of shape (..., n * (nb + 1)).
    """
    if breaks is None or np.size(breaks) == 0:
        x, w = gauss_jacobi(n, left, right, a, b)
        return x, w
    breaks = np.clip(np.sort(np.asarray(breaks, dtype=float), axis=-1), a, b)
    batch = breaks.shape[:-1]
    lo_edge = np.full(batch + (1,), float(a))
    hi_edge = np.full(batch + (1,), float(b))
    edges = np.concatenate([lo_edge, breaks, hi_edge], axis=-1)
    n_seg = edges.shape[-1] - 1
    nodes, weights = [], []
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(n_seg):
            lo = edges[..., k : k + 1]
            hi = edges[..., k + 1 : k + 2]
            width = hi - lo
            first, last = k == 0, k == n_seg - 1
            seg_left = left if first else 0.0
            seg_right = right if last else 0.0
            x, w = _reference_rule(n, seg_left, seg_right)
            xs = lo + width * x
            ws = w * np.where(width > 0.0, width, 0.0) ** (seg_left + seg_right + 1.0)
            if not first and left != 0.0:
                ws = ws * np.where(width > 0.0, (xs - a) ** left, 0.0)
            if not last and right != 0.0:
                ws = ws * np.where(width > 0.0, (b - xs) ** right, 0.0)
            ws = np.where(width > 0.0, ws, 0.0)
            nodes.append(np.broadcast_to(xs, batch + (n,)))
            weights.append(np.broadcast_to(ws, batch + (n,)))
    return np.concatenate(nodes, axis=-1), np.concatenate(weights, axis=-1)


def quad_weighted(
    f: Callable[[float], float],
    a: float,
    b: float,
    left: float = 0.0,
    right: float = 0.0,
    breaks: Sequence[float] = (),
    tol: float = DEFAULT_TOL,
    what: str = "integrand",
) -> float:
    """
    QUADPACK integral of f(x) (x-a)^left (b-x)^right over [a, b], split at
    breakpoints; singular endpoint factors use the algebraic weight.

    Raises:
        QuadratureError: when QUADPACK reports non-convergence.
    """
    edges = [a] + sorted(x for x in breaks if a < x < b) + [b]
    total = 0.0
    for k in range(len(edges) - 1):
        lo, hi = edges[k], edges[k + 1]
        first, last = k == 0, k == len(edges) - 2
        seg_left = left if first else 0.0
        seg_right = right if last else 0.0

        def g(x, first=first, last=last):
            val = f(x)
            if not first and left != 0.0:
                val *= (x - a) ** left
            if not last and right != 0.0:
                val *= (b - x) ** right
            return val

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            if seg_left != 0.0 or seg_right != 0.0:
                out = integrate.quad(g, lo, hi, weight="alg", wvar=(seg_left, seg_right),
                                     epsabs=tol, epsrel=tol, limit=200, full_output=1)
            else:
                out = integrate.quad(g, lo, hi, epsabs=tol, epsrel=tol, limit=200, full_output=1)
        value, err = out[0], out[1]
        if not np.isfinite(value) or err > max(1e3 * tol, 1e-6 * abs(value)):
            reason = out[3] if len(out) > 3 else "error estimate too large"
            raise QuadratureError(
                f"quadrature of the {what} did not converge on [{lo}, {hi}] (estimate {value}, error {err}): {reason}"
            )
        total += value
    return total


def adaptive(evaluate: Callable[[int], np.ndarray], n0: int = 16, n_max: int = 512, tol: float = 1e-9,
             what: str = "integral", strict: bool = False):
    """
    Double the rule size until two successive estimates agree.

    ``evaluate(n)`` returns an array of estimates; convergence is tested
    elementwise against ``tol`` relative to max(1, |value|).

    Returns:
        tuple: (values, error_estimate, n_used)
    """
    n = n0
    prev = np.asarray(evaluate(n), dtype=float)
    while True:
        n *= 2
        cur = np.asarray(evaluate(n), dtype=float)
        err = np.abs(cur - prev)
        scale = np.maximum(np.abs(cur), 1e-300)
        if np.all(err <= tol * np.maximum(1.0, scale)) or np.all(err <= tol * scale):
            return cur, err, n
        if n >= n_max:
            if strict:
                raise QuadratureError(f"{what} not converged at {n} nodes (max error {float(err.max()):.3e})")
            return cur, err, n
        prev = cur


def sphere_profile_rule(n_t: int, n_phi: int, d: int, cos_beta: float, angular: Callable[[np.ndarray], np.ndarray]):
    """
    Reduce an integral over S^{d-1} of g(|V.sigma|) b(u.sigma) to a rule in
    t = V.sigma, with the angular kernel averaged over the remaining directions.

    Returns:
        tuple: (t nodes, weights) such that sum(w * g(|t|)) approximates the
        sphere integral. Nodes cover [-1, 1] split at 0.
    """
    a = 0.5 * (d - 3)
    t_pos, w_pos = gauss_jacobi(n_t, 0.0, a, 0.0, 1.0)
    w_pos = w_pos * (1.0 + t_pos) ** a
    t = np.concatenate([-t_pos[::-1], t_pos])
    w = np.concatenate([w_pos[::-1], w_pos])
    sin_beta = np.sqrt(max(0.0, 1.0 - cos_beta * cos_beta))
    root = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    if d == 2:
        cos_phi = np.array([1.0, -1.0])
        w_phi = np.array([1.0, 1.0])
    else:
        b_exp = 0.5 * (d - 4)
        phi, w_phi = gauss_jacobi(n_phi, 0.0, 0.0, 0.0, np.pi) if d == 3 else _sin_power_rule(n_phi, b_exp)
        cos_phi = np.cos(phi)
        w_phi = w_phi * (2.0 if d == 3 else sphere_area(d - 2))
    y = t[:, None] * cos_beta + root[:, None] * sin_beta * cos_phi[None, :]
    b_bar = (angular(np.clip(y, -1.0, 1.0)) * w_phi[None, :]).sum(axis=1)
    return t, w * b_bar


def _sin_power_rule(n: int, b_exp: float):
    """Rule in phi over [0, pi] for the weight sin^{d-3}(phi), via x = cos(phi)."""
    x, w = gauss_jacobi(n, b_exp, b_exp, -1.0, 1.0)
    return np.arccos(x), w
