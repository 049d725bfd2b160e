"""Offline benchmarks for throughput-constrained allocation.

Three related convex programs are solved here, all sharing one structure:
pick fractional assignment counts over a window of epochs, subject to
per-epoch arrival availability, minimizing assignment cost plus the scaled
deviation penalties evaluated at cumulative average consumption.

* :func:`hindsight_optimum` -- the full-horizon benchmark (window = all
  epochs, availability = realized arrivals per epoch).
* :func:`myopic_offline` -- one epoch in isolation, conditioned on prior
  consumption.
* :func:`proxy_offline` -- epochs ``k..K`` with every future epoch's
  arrivals assumed identical to epoch ``k``'s.

Two backends: ``exact-lp`` reformulates piecewise-linear deviation costs
with epigraph variables and solves the resulting LP exactly (certified gap
0, fractional relaxation); ``dual-subgradient`` ascends the Lagrangian dual
with exact inner minimizations, recovers a feasible primal by averaging,
and reports the primal-dual gap as its certificate. A brute-force
enumerator over integral assignment sequences serves as the test oracle on
tiny instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import REJECT, ArrivalSequence, Instance
from .solver import min_dev_plus_price

EXACT_LP = "exact-lp"
DUAL_SUBGRADIENT = "dual-subgradient"
BRUTE_FORCE = "brute-force"

AVAILABILITY_TOL = 1e-9


class UnsupportedFamilyError(ValueError):
    """Raised when the exact LP backend meets a non-piecewise-linear family."""


class OracleInternalError(RuntimeError):
    """The LP reported infeasibility, which the model construction rules out."""


@dataclass(eq=False)
class OfflineSolution:
    """A solved offline benchmark.

    ``counts[j, i, k]`` are fractional assignment counts per type, resource,
    and epoch (zeros outside the solved window; in continuous mode the
    pseudo-types are the individual arrivals of the solved window).
    ``objective`` is a feasible primal value; ``dual_bound`` a certified
    lower bound, with ``gap = objective - dual_bound`` (0 for exact LP).
    """

    counts: np.ndarray
    objective: float
    backend: str
    gap: float
    dual_bound: float
    window_start: int = 0
    integral: bool = False

    def consumption_by_epoch(self) -> np.ndarray:
        """Cumulative per-resource consumption at each epoch end, (K, m)."""
        per_epoch = self.counts.sum(axis=0).T  # (K, m)
        return np.cumsum(per_epoch, axis=0)


def _window_problem(instance: Instance, omega: ArrivalSequence | np.ndarray,
                    window: list[int], proxy_future: bool
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Common data for the windowed programs.

    ``omega`` must be aligned to the window: its first entry is the first
    period of ``window[0]``, covering one epoch when ``proxy_future`` (whose
    arrivals every window epoch then reuses) and the whole window otherwise.
    Returns ``(costs, feasible, caps)`` where rows index effective types
    (real types in discrete mode, individual arrivals in continuous mode)
    and ``caps[j, w]`` is the availability of type ``j`` in window epoch
    ``w``.
    """
    W = len(window)
    step = instance.epoch_len
    need = step if proxy_future else W * step
    if isinstance(omega, ArrivalSequence) and omega.continuous:
        costs = omega.cost_vectors
        if costs.shape[0] != need:
            raise ValueError(f"expected {need} arrivals for this window, got {costs.shape[0]}")
        n_eff = costs.shape[0]
        feas = np.ones((n_eff, instance.m), dtype=bool)
        if proxy_future:
            caps = np.ones((n_eff, W), dtype=np.int64)
        else:
            caps = np.zeros((n_eff, W), dtype=np.int64)
            for w in range(W):
                caps[w * step:(w + 1) * step, w] = 1
        return costs, feas, caps
    types = omega.types if isinstance(omega, ArrivalSequence) else np.asarray(omega, dtype=np.int64)
    if len(types) != need:
        raise ValueError(f"expected {need} arrivals for this window, got {len(types)}")
    caps = np.zeros((instance.n, W), dtype=np.int64)
    if proxy_future:
        caps[:, :] = np.bincount(types, minlength=instance.n)[:, None]
    else:
        for w in range(W):
            caps[:, w] = np.bincount(types[w * step:(w + 1) * step], minlength=instance.n)
    return instance.costs, instance.feasible, caps


def _dev_rows(instance: Instance, window: list[int]):
    grid = instance.dev_grid
    rows = np.asarray(window, dtype=int)
    dens = (rows + 1).astype(float) * instance.epoch_len
    return (grid.is_squared[rows], grid.target[rows], grid.d_plus[rows],
            grid.d_minus[rows], dens)


def _solve_exact_lp(instance, costs, feas, caps, window, prior):
    """Epigraph LP over the window; piecewise-linear families only."""
    is_sq, tgt, dpl, dmi, dens = _dev_rows(instance, window)
    if is_sq.any():
        raise UnsupportedFamilyError("exact-lp supports only piecewise-linear deviation families")
    n_eff, m = costs.shape
    W = len(window)

    var_index = {}
    obj = []
    for j in range(n_eff):
        for w in range(W):
            if caps[j, w] <= 0:
                continue
            for i in range(m):
                if feas[j, i]:
                    var_index[(j, w, i)] = len(obj)
                    obj.append(costs[j, i])
    n_z = len(obj)
    epi_index = {}
    for w in range(W):
        for i in range(m):
            if dpl[w, i] > 0 or dmi[w, i] > 0:
                epi_index[(w, i)] = n_z + len(epi_index)
                obj.append(dens[w])
    n_var = len(obj)
    if n_var == 0:
        # Nothing to decide: no assignable arrivals and no penalties.
        gap0 = prior[None, :] / dens[:, None] - tgt
        base = float((dens[:, None] * (dpl * np.maximum(gap0, 0.0)
                                       + dmi * np.maximum(-gap0, 0.0))).sum())
        return base, np.zeros((n_eff, m, instance.K))

    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for j in range(n_eff):
        for w in range(W):
            if caps[j, w] <= 0:
                continue
            any_var = False
            for i in range(m):
                v = var_index.get((j, w, i))
                if v is not None:
                    rows.append(r), cols.append(v), vals.append(1.0)
                    any_var = True
            if any_var:
                rhs.append(float(caps[j, w]))
                r += 1
    # Two epigraph inequalities per penalized (epoch, resource):
    # u >= d+ (avg - target) and u >= d- (target - avg); a zero-weight side
    # degenerates to u >= 0, which keeps one-sided penalties exact.
    for (w, i), u in epi_index.items():
        for sign, delta in ((1.0, dpl[w, i]), (-1.0, dmi[w, i])):
            coeff = sign * delta / dens[w]
            if coeff != 0.0:
                for w2 in range(w + 1):
                    for j in range(n_eff):
                        v = var_index.get((j, w2, i))
                        if v is not None:
                            rows.append(r), cols.append(v), vals.append(coeff)
            rows.append(r), cols.append(u), vals.append(-1.0)
            rhs.append(sign * delta * (tgt[w, i] - prior[i] / dens[w]))
            r += 1

    a_ub = sparse.coo_matrix((vals, (rows, cols)), shape=(r, n_var)).tocsr()
    bounds = [(0, None)] * n_z + [(None, None)] * len(epi_index)
    res = linprog(c=np.asarray(obj), A_ub=a_ub, b_ub=np.asarray(rhs),
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise OracleInternalError(f"LP solver returned status {res.status}: {res.message}")
    z = np.zeros((n_eff, m, instance.K))
    for (j, w, i), v in var_index.items():
        z[j, i, window[w]] = res.x[v]
    return float(res.fun), z


def _dual_value_and_choice(costs, feas, caps, priced):
    """Inner assignment minimization of the Lagrangian: every unit of
    availability goes to the cheapest price-adjusted option (or reject)."""
    adj = np.where(feas[:, None, :], costs[:, None, :] - priced[None, :, :], np.inf)
    best_i = adj.argmin(axis=2)
    best_v = np.take_along_axis(adj, best_i[:, :, None], axis=2)[:, :, 0]
    assign = best_v <= 0.0
    value = float((caps * np.where(assign, best_v, 0.0)).sum())
    return value, np.where(assign, best_i, REJECT)


def _project_cell_simplex(v: np.ndarray) -> np.ndarray:
    """Project each row of ``v`` onto {s >= 0, sum(s) <= 1} (reject as slack)."""
    clipped = np.maximum(v, 0.0)
    inside = clipped.sum(axis=-1) <= 1.0
    u = np.sort(v, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - 1.0
    ranks = np.arange(1, v.shape[-1] + 1, dtype=float)
    cond = u - css / ranks > 0
    rho = np.maximum(cond.sum(axis=-1), 1)
    theta = np.take_along_axis(css, rho[..., None] - 1, axis=-1) / rho[..., None]
    on_face = np.maximum(v - theta, 0.0)
    return np.where(inside[..., None], clipped, on_face)


def _solve_dual_subgradient(instance, costs, feas, caps, window, prior,
                            iterations, step_scale, gap_rel, gap_abs,
                            recover_iters=2400):
    """Lagrangian dual ascent with exact inner solves and primal recovery.

    The dual bound comes from normalized diminishing ``c / sqrt(s)`` steps on
    the dual subgradient (multipliers of penalty-free coordinates stay 0,
    dropping vacuous constraints). A feasible primal is recovered by
    projected subgradient descent on the true convex objective over per-cell
    assignment shares, warm-started from the best average of the inner
    choices over doubling windows. The reported gap is best primal minus
    best dual.
    """
    is_sq, tgt, dpl, dmi, dens = _dev_rows(instance, window)
    n_eff, m = costs.shape
    W = len(window)
    mu = np.zeros((W, m))
    live = (dpl > 0.0) | (dmi > 0.0)
    best_dual = -np.inf
    cost_grid = np.where(feas, costs, 0.0)
    capsf = caps.astype(float)

    def dev_value(avg):
        gap_ = avg - tgt
        return np.where(is_sq, dpl * gap_ * gap_,
                        dpl * np.maximum(gap_, 0.0) + dmi * np.maximum(-gap_, 0.0))

    def dev_slope(avg):
        gap_ = avg - tgt
        pl = np.where(gap_ > 0, dpl, np.where(gap_ < 0, -dmi, 0.0))
        return np.where(is_sq, 2.0 * dpl * gap_, pl)

    def assemble(choice):
        counts = np.zeros((n_eff, W, m))
        jj, ww = np.nonzero((choice != REJECT) & (caps > 0))
        counts[jj, ww, choice[jj, ww]] = caps[jj, ww]
        return counts

    def counts_value(counts):
        cum = prior[None, :] + np.cumsum(counts.sum(axis=0), axis=0)
        return float((counts * cost_grid[:, None, :]).sum()
                     + (dens[:, None] * dev_value(cum / dens[:, None])).sum())

    avg_counts = np.zeros((n_eff, W, m))
    avg_n = 0
    best_avg = None  # (value, counts)
    best_mu = mu.copy()

    dual_rounds = 5
    per_round = max(iterations // dual_rounds, 1)
    step_r = step_scale
    s_total = 0
    stalled = False
    for _ in range(dual_rounds):
        if stalled or s_total >= iterations:
            break
        mu = best_mu.copy()
        for s in range(1, per_round + 1):
            s_total += 1
            priced = np.cumsum(mu[::-1], axis=0)[::-1]  # price for epoch w sums rows >= w
            x_val, choice = _dual_value_and_choice(costs, feas, caps, priced)
            a_star = min_dev_plus_price(is_sq, tgt, dpl, dmi, mu)
            gap_a = a_star - tgt
            dev_min = np.where(is_sq, dpl * gap_a * gap_a,
                               dpl * np.maximum(gap_a, 0.0) + dmi * np.maximum(-gap_a, 0.0))
            dual = x_val + float((dens[:, None] * (dev_min + mu * a_star)).sum()) \
                - float((mu * prior[None, :]).sum())
            if dual > best_dual:
                best_dual = dual
                best_mu = mu.copy()

            counts = assemble(choice)
            per_cum = np.cumsum(counts.sum(axis=0), axis=0)
            avg_counts += counts
            avg_n += 1
            if s_total == iterations or s_total & (s_total - 1) == 0:  # doubling windows
                cand = avg_counts / avg_n
                val = counts_value(cand)
                if best_avg is None or val < best_avg[0]:
                    best_avg = (val, cand)
                if s_total < iterations:
                    avg_counts = np.zeros((n_eff, W, m))
                    avg_n = 0

            g = dens[:, None] * a_star - prior[None, :] - per_cum
            g[~live] = 0.0
            norm = float(np.sqrt((g * g).sum()))
            if norm == 0.0:
                val = counts_value(counts)
                if best_avg is None or val < best_avg[0]:
                    best_avg = (val, counts)
                stalled = True
                break
            mu = mu + (step_r / np.sqrt(s)) * (g / norm)
        step_r *= 0.3

    # Primal polish: descend the true objective over per-cell shares.
    best_primal, counts0 = best_avg
    with np.errstate(divide="ignore", invalid="ignore"):
        shares = np.where(capsf[:, :, None] > 0, counts0 / capsf[:, :, None], 0.0)
    best_shares = shares.copy()
    rounds, step0 = 8, 0.5
    per_round = max(recover_iters // rounds, 1)
    done = best_primal - best_dual <= gap_abs + gap_rel * abs(best_primal)
    for _ in range(rounds):
        if done:
            break
        shares = best_shares.copy()
        for it in range(1, per_round + 1):
            counts = capsf[:, :, None] * shares
            cum = prior[None, :] + np.cumsum(counts.sum(axis=0), axis=0)
            slope = dev_slope(cum / dens[:, None])
            tail = np.cumsum(slope[::-1], axis=0)[::-1]       # sum over w' >= w
            grad = capsf[:, :, None] * (cost_grid[:, None, :] + tail[None, :, :])
            grad[~feas[:, None, :].repeat(W, axis=1)] = 0.0
            nrm = float(np.sqrt((grad * grad).sum()))
            if nrm == 0.0:
                done = True
                break
            shares = _project_cell_simplex(shares - (step0 / np.sqrt(it)) * grad / nrm)
            shares[~feas[:, None, :].repeat(W, axis=1)] = 0.0
            val = counts_value(capsf[:, :, None] * shares)
            if val < best_primal:
                best_primal = val
                best_shares = shares.copy()
            if best_primal - best_dual <= gap_abs + gap_rel * abs(best_primal):
                done = True
                break
        step0 *= 0.3

    counts = capsf[:, :, None] * best_shares
    z = np.zeros((n_eff, m, instance.K))
    for w, k in enumerate(window):
        z[:, :, k] = counts[:, w, :]
    return float(best_primal), float(best_dual), z


def _solve_window(instance, omega, window, prior, proxy_future, backend,
                  dual_iters, dual_step, gap_rel, gap_abs):
    costs, feas, caps = _window_problem(instance, omega, window, proxy_future)
    prior = np.asarray(prior, dtype=float)
    if backend == EXACT_LP:
        obj, z = _solve_exact_lp(instance, costs, feas, caps, window, prior)
        return OfflineSolution(z, obj, EXACT_LP, 0.0, obj, window_start=window[0])
    if backend == DUAL_SUBGRADIENT:
        primal, dual, z = _solve_dual_subgradient(
            instance, costs, feas, caps, window, prior,
            dual_iters, dual_step, gap_rel, gap_abs)
        return OfflineSolution(z, primal, DUAL_SUBGRADIENT, primal - dual, dual,
                               window_start=window[0])
    raise ValueError(f"unknown oracle backend {backend!r}")


def hindsight_optimum(instance: Instance, omega: ArrivalSequence,
                      backend: str = EXACT_LP, dual_iters: int = 5000,
                      dual_step: float = 2.0, gap_rel: float = 1e-7,
                      gap_abs: float = 1e-9) -> OfflineSolution:
    """Benchmark with the full arrival sequence known upfront.

    Minimizes total assignment plus scaled deviation cost over fractional
    per-epoch assignment counts, subject to each type's realized arrivals per
    epoch. The fractional relaxation lower-bounds every feasible policy.
    """
    omega.validate_for(instance)
    window = list(range(instance.K))
    return _solve_window(instance, omega, window, np.zeros(instance.m), False,
                         backend, dual_iters, dual_step, gap_rel, gap_abs)


def myopic_offline(instance: Instance, omega_k: ArrivalSequence | np.ndarray,
                   prior: np.ndarray, epoch: int, backend: str = EXACT_LP,
                   dual_iters: int = 5000, dual_step: float = 2.0,
                   gap_rel: float = 1e-7, gap_abs: float = 1e-9) -> OfflineSolution:
    """Single-epoch benchmark conditioned on prior consumption ``prior``.

    ``omega_k`` holds only epoch ``epoch``'s arrivals (0-based epoch). Only
    that epoch's assignment and deviation costs are optimized.
    """
    prior = np.asarray(prior, dtype=float)
    if np.any(prior > epoch * instance.epoch_len + AVAILABILITY_TOL):
        raise ValueError("prior consumption exceeds the periods elapsed")
    return _solve_window(instance, _as_epoch_slice(instance, omega_k), [epoch],
                         prior, False, backend, dual_iters, dual_step, gap_rel, gap_abs)


def proxy_offline(instance: Instance, omega_k: ArrivalSequence | np.ndarray,
                  prior: np.ndarray, epoch: int, backend: str = EXACT_LP,
                  dual_iters: int = 5000, dual_step: float = 2.0,
                  gap_rel: float = 1e-7, gap_abs: float = 1e-9) -> OfflineSolution:
    """Benchmark over epochs ``epoch..K-1`` when every future epoch's arrivals
    are assumed identical to epoch ``epoch``'s (availability replicated)."""
    prior = np.asarray(prior, dtype=float)
    if np.any(prior > epoch * instance.epoch_len + AVAILABILITY_TOL):
        raise ValueError("prior consumption exceeds the periods elapsed")
    window = list(range(epoch, instance.K))
    return _solve_window(instance, _as_epoch_slice(instance, omega_k),
                         window, prior, True, backend, dual_iters, dual_step,
                         gap_rel, gap_abs)


def _as_epoch_slice(instance, omega_k):
    """Accept either an ArrivalSequence or a bare type array holding exactly
    one epoch of arrivals."""
    if isinstance(omega_k, ArrivalSequence):
        if len(omega_k) != instance.epoch_len:
            raise ValueError("omega_k must hold exactly one epoch of arrivals")
        return omega_k
    arr = np.asarray(omega_k, dtype=np.int64)
    if len(arr) != instance.epoch_len:
        raise ValueError("omega_k must hold exactly one epoch of arrivals")
    return arr


def brute_force_offline(instance: Instance, omega: ArrivalSequence,
                        limit: float = 1e7, block: int = 1 << 17) -> OfflineSolution:
    """Exhaustive integral optimum over all assignment sequences.

    Refuses instances with ``(m + 1) ** T`` beyond ``limit``; intended as an
    independent test oracle on tiny instances only.
    """
    omega.validate_for(instance)
    if omega.continuous:
        raise ValueError("brute force enumerates typed arrivals only")
    T, K, m = instance.T, instance.K, instance.m
    if (m + 1) ** T > limit:
        raise ValueError(f"refusing enumeration: (m+1)^T = {(m + 1) ** T:.3g} exceeds {limit:.3g}")
    step = instance.epoch_len
    options = []
    opt_costs = []
    for t in range(T):
        j = int(omega.types[t])
        opts = [REJECT] + [int(i) for i in np.flatnonzero(instance.feasible[j])]
        options.append(np.asarray(opts, dtype=np.int16))
        opt_costs.append(np.asarray([0.0] + [float(instance.costs[j, i]) for i in opts[1:]]))
    bases = np.asarray([len(o) for o in options], dtype=np.int64)
    total = int(np.prod(bases))
    strides = np.ones(T, dtype=np.int64)
    for t in range(T - 2, -1, -1):
        strides[t] = strides[t + 1] * bases[t + 1]
    grid = instance.dev_grid
    dens = (np.arange(1, K + 1) * step).astype(float)
    best_val = np.inf
    best_dec = None
    for start in range(0, total, block):
        ids = np.arange(start, min(start + block, total), dtype=np.int64)
        dec = np.empty((len(ids), T), dtype=np.int16)
        cost = np.zeros(len(ids))
        for t in range(T):
            digit = (ids // strides[t]) % bases[t]
            dec[:, t] = options[t][digit]
            cost += opt_costs[t][digit]
        cum = np.zeros((len(ids), K, m))
        for k in range(K):
            upto = dec[:, : (k + 1) * step]
            for i in range(m):
                cum[:, k, i] = (upto == i).sum(axis=1)
        avg = cum / dens[None, :, None]
        gap = avg - grid.target[None]
        dev = np.where(grid.is_squared[None], grid.d_plus[None] * gap * gap,
                       grid.d_plus[None] * np.maximum(gap, 0.0)
                       + grid.d_minus[None] * np.maximum(-gap, 0.0))
        vals = cost + (dens[None, :, None] * dev).sum(axis=(1, 2))
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            best_dec = dec[idx].copy()
    z = np.zeros((instance.n, m, K))
    for t in range(T):
        d = int(best_dec[t])
        if d != REJECT:
            z[int(omega.types[t]), d, t // step] += 1
    return OfflineSolution(z, best_val, BRUTE_FORCE, 0.0, best_val, integral=True)


def validate_solution(instance: Instance, omega: ArrivalSequence,
                      sol: OfflineSolution) -> None:
    """Check availability, feasibility-set, and nonnegativity invariants."""
    if np.any(sol.counts < -AVAILABILITY_TOL):
        raise AssertionError("negative assignment count")
    if not omega.continuous:
        for k in range(instance.K):
            lam = omega.type_counts(instance, k * instance.epoch_len, (k + 1) * instance.epoch_len)
            if np.any(sol.counts[:, :, k].sum(axis=1) > lam + AVAILABILITY_TOL):
                raise AssertionError("assignment counts exceed availability")
        if np.any(sol.counts[~instance.feasible, :] > AVAILABILITY_TOL):
            raise AssertionError("assignment outside the feasible set")


def cumulative_proxy_cost(instance: Instance, result, epoch: int) -> float:
    """Proxy cost booked in epoch ``epoch``: assignment cost of every proxy
    decision made during the epoch (for the current and all future epochs),
    plus the deviation penalties of epochs ``>= epoch`` evaluated as if the
    cumulative proxy consumption were implemented on top of the consumption
    already realized when the epoch began."""
    if result.proxy_decisions is None:
        raise ValueError("run result does not record proxy decisions")
    T, K, m = instance.T, instance.K, instance.m
    step = instance.epoch_len
    lo, hi = epoch * step, (epoch + 1) * step
    arr = result.arrivals
    assignment = 0.0
    counts = np.zeros((K, m))
    for t in range(lo, hi):
        for k2 in range(epoch, K):
            i = int(result.proxy_decisions[t, k2])
            if i == REJECT:
                continue
            c = instance.costs[int(arr.types[t]), i] if not instance.continuous \
                else arr.cost_vectors[t, i]
            assignment += float(c)
            counts[k2, i] += 1.0
    z = result.epoch_consumption[epoch - 1].astype(float) if epoch > 0 else np.zeros(m)
    cum = np.cumsum(counts[epoch:], axis=0)
    dens = (np.arange(epoch + 1, K + 1) * step).astype(float)
    grid = instance.dev_grid
    avg = (z[None, :] + cum) / dens[:, None]
    gapv = avg - grid.target[epoch:]
    dev = np.where(grid.is_squared[epoch:], grid.d_plus[epoch:] * gapv * gapv,
                   grid.d_plus[epoch:] * np.maximum(gapv, 0.0)
                   + grid.d_minus[epoch:] * np.maximum(-gapv, 0.0))
    return assignment + float((dens[:, None] * dev).sum())


def proxy_cost_decomposition(instance: Instance, result) -> dict:
    """The exact reconstruction of a proxy run's realized cost.

    Realized cost equals the summed per-epoch proxy costs minus the
    assignment costs of never-implemented proxy decisions minus the
    deviation costs those unimplemented decisions would have caused. Returns
    the three terms and their combination.
    """
    if result.proxy_decisions is None:
        raise ValueError("run result does not record proxy decisions")
    T, K, m = instance.T, instance.K, instance.m
    step = instance.epoch_len
    arr = result.arrivals
    grid = instance.dev_grid
    proxy_total = sum(cumulative_proxy_cost(instance, result, k) for k in range(K))
    unimpl_assign = 0.0
    unimpl_dev = 0.0
    for k in range(K):
        counts = np.zeros((K, m))
        for t in range(k * step, (k + 1) * step):
            for k2 in range(k + 1, K):
                i = int(result.proxy_decisions[t, k2])
                if i == REJECT:
                    continue
                c = instance.costs[int(arr.types[t]), i] if not instance.continuous \
                    else arr.cost_vectors[t, i]
                unimpl_assign += float(c)
                counts[k2, i] += 1.0
        if k + 1 < K:
            z = result.epoch_consumption[k].astype(float)
            cum = np.cumsum(counts[k + 1:], axis=0)
            dens = (np.arange(k + 2, K + 1) * step).astype(float)
            avg = (z[None, :] + cum) / dens[:, None]
            gapv = avg - grid.target[k + 1:]
            dev = np.where(grid.is_squared[k + 1:], grid.d_plus[k + 1:] * gapv * gapv,
                           grid.d_plus[k + 1:] * np.maximum(gapv, 0.0)
                           + grid.d_minus[k + 1:] * np.maximum(-gapv, 0.0))
            unimpl_dev += float((dens[:, None] * dev).sum())
    return {
        "proxy_total": proxy_total,
        "unimplemented_assignment": unimpl_assign,
        "unimplemented_deviation": unimpl_dev,
        "reconstructed": proxy_total - unimpl_assign - unimpl_dev,
    }
