"""Small convex minimizers shared by the online policies and the offline oracles.

Three tools live here:

* :func:`solve_box_convex` -- generic projected subgradient descent over a
  box, with diminishing steps, warm starts, and best-iterate tracking.
* :func:`min_dev_plus_price` -- exact vectorized minimizer of
  ``g(a) + price * a`` over ``a in [0, 1]`` for a grid of deviation costs
  (the per-epoch idealized-consumption step of the single-epoch policies,
  and the inner minimization of the Lagrangian dual).
* :func:`chain_prefix_argmin` -- exact minimizer of the coupled multi-epoch
  idealized-consumption objective when every deviation cost involved is
  piecewise linear, via a tiny dynamic program over prefix variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class BoxSolveResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool


def solve_box_convex(
    objective: Callable[[np.ndarray], float],
    subgrad: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    lo: float = 0.0,
    hi: float = 1.0,
    budget: int = 2000,
    tol: float = 1e-9,
    rounds: int = 6,
    step0: float = 1.0,
) -> BoxSolveResult:
    """Projected subgradient descent on a convex objective over a box.

    Runs ``rounds`` sweeps of normalized diminishing steps
    ``step_r / sqrt(s)``, shrinking the base step between sweeps and warm
    starting each sweep from the incumbent, which gives kink-accurate best
    iterates on piecewise-linear objectives. Convergence is declared on a
    vanishing subgradient or when the final, finest sweep improves the
    incumbent by less than ``tol``; the best iterate found within the
    budget is returned either way.
    """
    x = np.clip(np.asarray(x0, dtype=float).copy(), lo, hi)
    best_x = x.copy()
    best_f = float(objective(x))
    per_round = max(budget // max(rounds, 1), 1)
    used = 0
    converged = False
    improvement = np.inf
    step_r = step0
    for _ in range(max(rounds, 1)):
        if used >= budget or converged:
            break
        f_enter = best_f
        x = best_x.copy()
        for s in range(1, per_round + 1):
            if used >= budget:
                break
            g = np.asarray(subgrad(x), dtype=float)
            norm = float(np.sqrt((g * g).sum()))
            used += 1
            if norm == 0.0:
                converged = True
                break
            x = np.clip(x - (step_r / np.sqrt(s)) * (g / norm), lo, hi)
            f = float(objective(x))
            if f < best_f:
                best_f = f
                best_x = x.copy()
        improvement = f_enter - best_f
        step_r *= 0.3
    # Stagnation of a coarse sweep is not convergence; only the final,
    # finest sweep failing to improve certifies the incumbent.
    return BoxSolveResult(best_x, best_f, used, converged or improvement < tol)


def min_dev_plus_price(is_squared: np.ndarray, target: np.ndarray,
                       d_plus: np.ndarray, d_minus: np.ndarray,
                       price: np.ndarray) -> np.ndarray:
    """Exact argmin over [0, 1] of ``g(a) + price * a``, elementwise.

    Piecewise-linear families are minimized at one of {0, clip(target), 1};
    the squared family has the closed form ``clip(target - price / (2 d))``.
    Ties go to the smallest candidate, so a flat objective returns 0.
    """
    tgt = np.clip(target, 0.0, 1.0)
    pts = np.stack([np.zeros_like(tgt), tgt, np.ones_like(tgt)])
    gap = pts - target
    cand = d_plus * np.maximum(gap, 0.0) + d_minus * np.maximum(-gap, 0.0) + price * pts
    pick = np.argmin(cand, axis=0)
    pl = np.take_along_axis(pts, pick[None], axis=0)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.clip(target - price / (2.0 * d_plus), 0.0, 1.0)
    sq = np.where(d_plus > 0, sq, np.where(price < 0, 1.0, 0.0))
    return np.where(is_squared, sq, pl)


def _pl_sum(bp_a: list, sl_a: list, bp_b: list, sl_b: list) -> tuple[list, list]:
    """Sum of two convex piecewise-linear functions given as (breakpoints, slopes)."""
    bp = sorted(set(bp_a) | set(bp_b))
    sl = []
    for idx in range(len(bp) + 1):
        probe_left = bp[idx - 1] if idx > 0 else (bp[0] - 1.0 if bp else 0.0)
        sl.append(_slope_at(bp_a, sl_a, probe_left) + _slope_at(bp_b, sl_b, probe_left))
    return bp, sl


def _slope_at(bp: list, sl: list, x_left: float) -> float:
    """Slope of the segment immediately to the right of breakpoint ``x_left``."""
    idx = 0
    while idx < len(bp) and bp[idx] <= x_left:
        idx += 1
    return sl[idx]


def _leftmost_argmin(bp: list, sl: list) -> float:
    """Leftmost minimizer of a convex piecewise-linear function on the reals.

    Returns -inf when the function is nondecreasing from the left and +inf
    when it decreases forever.
    """
    for idx, s in enumerate(sl):
        if s >= 0.0:
            return -np.inf if idx == 0 else bp[idx - 1]
    return np.inf


def _window_min(bp: list, sl: list, argmin: float) -> tuple[list, list]:
    """The function ``u -> min over s in [u, u+1] of V(s)`` for convex PL ``V``.

    By convexity the window minimum is ``V`` evaluated at the projection of
    its global argmin onto [u, u+1], which is again convex piecewise linear.
    """
    if argmin == -np.inf:
        return list(bp), list(sl)
    if argmin == np.inf:
        return [b - 1.0 for b in bp], list(sl)
    j = 0
    while j < len(sl) and sl[j] < 0.0:
        j += 1
    new_bp = [b - 1.0 for b in bp[: j - 1]] + [argmin - 1.0, argmin] + list(bp[j:])
    new_sl = list(sl[:j]) + [0.0] + list(sl[j:])
    return new_bp, new_sl


def chain_prefix_argmin(tau: np.ndarray, d_plus: np.ndarray, d_minus: np.ndarray,
                        nu: np.ndarray) -> np.ndarray:
    """Exact minimizer of a prefix-coupled piecewise-linear objective.

    Minimizes ``sum_q [d+_q (s_q - tau_q)^+ + d-_q (tau_q - s_q)^+ + nu_q s_q]``
    over prefix sums ``s`` with ``s_0 = 0`` and increments ``s_q - s_{q-1}``
    in [0, 1], returning the increments. This is the multi-epoch idealized
    average-consumption problem for one resource, rewritten in cumulative
    variables (each epoch's deviation term depends only on the consumption
    prefix, with unchanged kink weights).

    Backward pass builds the convex value-to-go functions as (breakpoint,
    slope) lists; the forward pass clamps each stage's global argmin into the
    sliding feasibility window. Flat stretches resolve to their left end.
    """
    R = len(tau)
    win_bp: list = []
    win_sl: list = [0.0]
    argmins = [0.0] * R
    for q in range(R - 1, -1, -1):
        if d_plus[q] > 0.0 or d_minus[q] > 0.0:
            bp_phi, sl_phi = [float(tau[q])], [float(nu[q] - d_minus[q]), float(nu[q] + d_plus[q])]
        else:
            bp_phi, sl_phi = [], [float(nu[q])]
        bp, sl = _pl_sum(bp_phi, sl_phi, win_bp, win_sl)
        mstar = _leftmost_argmin(bp, sl)
        argmins[q] = mstar
        if q > 0:
            win_bp, win_sl = _window_min(bp, sl, mstar)
    a = np.empty(R)
    s_prev = 0.0
    for q in range(R):
        s = min(max(argmins[q], s_prev), s_prev + 1.0)
        a[q] = s - s_prev
        s_prev = s
    return a
