"""Counterfactual policy value, importance-weighted bounds and penalized improvement.

Utilities are ``(N, X, A_max)`` arrays indexed by global action id; policies
are tuples of ``(N, X, A_k)`` tables with NaN rows on unobserved cells, the
same layout as :class:`~inattention.dataset.EstimatedModel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from .dataset import (
    EstimatedModel,
    StochasticChoiceDataset,
    estimate_policy_prior,
    model_from_policies,
)
from .lp import LinearProgram, solve_lp
from .niat import TAU_TEST, check_niac, check_nias, compute_G

Array = NDArray[np.float64]
Policies = tuple[Array, ...]

MIN_BOUND_SAMPLES = 16
TAU_OPT = 1e-6
RATIONALITY_VIOLATED = "rationality-violated"


class SupportError(ValueError):
    pass


class BoundPreconditionError(ValueError):
    pass


def _utility(u: Array, N: int, X: int, A_max: int) -> Array:
    u = np.asarray(u, dtype=float)
    if u.ndim == 2:
        u = u[None]
    if u.shape[0] != N or u.shape[1] != X or u.shape[2] < A_max:
        raise ValueError(f"utility shape {u.shape} does not cover (N={N}, X={X}, A={A_max})")
    return u


def _frame_weights(N: int, frame_weights: Sequence[float] | None) -> Array:
    w = np.full(N, 1.0 / N) if frame_weights is None else np.asarray(frame_weights, dtype=float)
    if w.shape != (N,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
        raise ValueError("frame_weights must be a probability vector over frames")
    return w


def total_value(
    policies: Sequence[Array],
    prior: Array,
    u: Array,
    frame_weights: Sequence[float] | None = None,
) -> float:
    """Expected utility summed over problems, frames averaged by ``frame_weights``.

    With one frame this is ``sum_k sum_x sum_a pi_k(a|x) mu(x) u(x, a)``.
    A NaN (unobserved) cell carrying positive weight is an error.
    """
    prior = np.asarray(prior, dtype=float)
    pols = [np.asarray(p, dtype=float) for p in policies]
    N, X = pols[0].shape[:2]
    u = _utility(u, N, X, max(p.shape[2] for p in pols))
    w = _frame_weights(N, frame_weights)
    total = 0.0
    for k, p in enumerate(pols):
        A = p.shape[2]
        weight = w[:, None] * prior[None, :]  # (N, X)
        missing = np.isnan(p[..., 0]) & (weight > 0)
        if np.any(missing):
            f, x = np.argwhere(missing)[0]
            raise ValueError(f"policy for problem k={k + 1} undefined at f={f + 1}, x={x + 1}")
        vals = np.where(np.isnan(p), 0.0, p) * u[:, :, :A]
        total += float(np.sum(weight * vals.sum(axis=2)))
    return total


def problem_value(
    policy: Array, prior: Array, u: Array, frame_weights: Sequence[float] | None = None
) -> float:
    """Value of a single problem's policy (one term of :func:`total_value`)."""
    return total_value([policy], prior, u, frame_weights)


# ---------------------------------------------------------------------------
# importance weighting


@dataclass(frozen=True)
class IWStatistics:
    """Importance-weighted sample statistics for one problem.

    ``weighted`` holds ``u_bar_t = (pi / pi_hat) u`` per record of the
    problem; ``value`` is their mean and ``variance`` their unbiased sample
    variance. ``M`` scales them into ``[0, 1]``; ``variance_scaled`` is the
    variance of ``M * u_bar``.
    """

    k: int
    T: int
    value: float
    variance: float
    M: float
    max_ratio: float
    u_max: float
    weighted: Array = field(repr=False)

    @property
    def variance_scaled(self) -> float:
        return self.variance * self.M**2

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k + 1,
            "T": self.T,
            "value": self.value,
            "variance": self.variance,
            "variance_scaled": self.variance_scaled,
            "M": self.M,
            "max_ratio": self.max_ratio,
            "u_max": self.u_max,
        }


def _logging_model(d: StochasticChoiceDataset, model: EstimatedModel | None) -> EstimatedModel:
    m = model if model is not None else estimate_policy_prior(d)
    if m.counts is None:
        raise ValueError("the logging model must carry counts (use estimate_policy_prior)")
    return m


def _check_support(k: int, pi: Array, pi_hat: Array) -> None:
    observed = ~np.isnan(pi_hat[..., 0])
    if pi.shape != pi_hat.shape:
        raise ValueError(f"policy for k={k + 1} has shape {pi.shape}, expected {pi_hat.shape}")
    rows = pi[observed]
    if np.any(np.isnan(rows)) or np.any(rows < 0):
        raise ValueError(f"policy for k={k + 1} must be a probability table on observed cells")
    if not np.allclose(rows.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError(f"policy rows for k={k + 1} must sum to 1")
    bad = observed[..., None] & (pi > 0) & (pi_hat == 0)
    if np.any(bad):
        f, x, a = np.argwhere(bad)[0]
        raise SupportError(
            f"importance weight undefined: pi > 0 where pi_hat = 0 at "
            f"k={k + 1}, f={f + 1}, x={x + 1}, a={a + 1}"
        )


def iw_statistics(
    d: StochasticChoiceDataset,
    policies: Sequence[Array],
    u: Array,
    w_max: float | None = None,
    model: EstimatedModel | None = None,
) -> list[IWStatistics]:
    """Per-problem importance-weighted value and variance of ``policies``.

    ``pi_hat`` comes from ``model`` or the dataset's own maximum-likelihood
    estimate. ``M = 1 / (ratio_max * u_max)`` where ``ratio_max`` is the
    largest ratio ``pi / pi_hat`` on supported cells, or ``w_max`` when a
    class cap is given (the policy must then respect it).
    """
    m = _logging_model(d, model)
    s = m.schema
    u = _utility(u, s.frame_count, s.state_count, s.max_actions)
    out = []
    for k, A in enumerate(s.action_counts):
        pi_hat = m.policies[k]
        pi = np.asarray(policies[k], dtype=float)
        _check_support(k, pi, pi_hat)
        sel = d.k == k + 1
        T = int(sel.sum())
        if T < 2:
            raise ValueError(f"problem k={k + 1} has {T} records; the variance needs at least 2")
        f, x, a = d.f[sel] - 1, d.x[sel] - 1, d.a[sel] - 1
        ratio = pi[f, x, a] / pi_hat[f, x, a]
        uk = u[f, x, a]
        if np.any(u[:, :, :A][~np.isnan(pi_hat)] < 0):
            raise ValueError("utilities must be non-negative for the [0, 1] normalization")
        supported = (pi_hat > 0) & ~np.isnan(pi_hat)
        max_ratio = float(np.max(pi[supported] / pi_hat[supported]))
        u_max = float(np.max(u[:, :, :A][supported]))
        if w_max is not None:
            if max_ratio > w_max * (1 + 1e-12):
                raise ValueError(
                    f"policy for k={k + 1} has importance ratio {max_ratio:g} above w_max={w_max:g}"
                )
            max_ratio_class = float(w_max)
        else:
            max_ratio_class = max_ratio
        scale = max_ratio_class * u_max
        M = 1.0 / scale if scale > 0 else 1.0
        weighted = ratio * uk
        out.append(
            IWStatistics(
                k=k,
                T=T,
                value=float(np.mean(weighted)),
                variance=float(np.var(weighted, ddof=1)),
                M=M,
                max_ratio=max_ratio,
                u_max=u_max,
                weighted=weighted,
            )
        )
    return out


# ---------------------------------------------------------------------------
# empirical Bernstein bound


@dataclass(frozen=True)
class BoundReport:
    k: int
    value: float
    variance: float
    lam: float
    gamma: float
    T: int
    M: float
    bound: float
    lam_source: str
    rho: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k + 1,
            "value": self.value,
            "variance": self.variance,
            "lambda": self.lam,
            "lambda_source": self.lam_source,
            "rho": self.rho,
            "gamma": self.gamma,
            "T": self.T,
            "M": self.M,
            "bound": self.bound,
        }


def confidence_coefficient(T: int, gamma: float, rho: float = 2.0) -> float:
    """``sqrt(18 ln(10 N / gamma))`` with the covering number proxied by ``(2T)^rho``."""
    return math.sqrt(18.0 * (math.log(10.0 / gamma) + rho * math.log(2.0 * T)))


def bernstein_value(value: float, variance: float, lam: float, T: int, M: float) -> float:
    return value + lam * math.sqrt(max(variance, 0.0) / T) + 15.0 * lam**2 / (18.0 * M * (T - 1))


def bernstein_bound(
    stats: IWStatistics, gamma: float, lam: float | None = None, rho: float = 2.0
) -> BoundReport:
    """Variance-sensitive upper confidence bound on the policy value."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if stats.T < MIN_BOUND_SAMPLES:
        raise BoundPreconditionError(
            f"the bound requires T_k >= {MIN_BOUND_SAMPLES} samples; problem k={stats.k + 1} "
            f"has {stats.T}"
        )
    if lam is None:
        lam_value, source = confidence_coefficient(stats.T, gamma, rho), "covering-proxy"
    else:
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        lam_value, source = float(lam), "override"
    bound = bernstein_value(stats.value, stats.variance, lam_value, stats.T, stats.M)
    return BoundReport(
        k=stats.k,
        value=stats.value,
        variance=stats.variance,
        lam=lam_value,
        gamma=gamma,
        T=stats.T,
        M=stats.M,
        bound=bound,
        lam_source=source,
        rho=rho if lam is None else None,
    )


# ---------------------------------------------------------------------------
# penalized policy improvement


@dataclass
class _ProblemData:
    """Sufficient statistics of one problem: counts and logging policy."""

    k: int
    T: int
    counts: Array  # (N, X, A)
    pi_hat: Array  # (N, X, A), zeros on unobserved cells
    observed: NDArray[np.bool_]  # (N, X)
    u: Array  # (N, X, A)
    cap: Array  # (N, X, A) upper bound on pi, 0 off support

    def value(self, pi: Array) -> float:
        return float(np.sum(self.counts.sum(axis=2, keepdims=True) * pi * self.u) / self.T)

    def second_moment(self, pi: Array) -> float:
        return float(np.sum(self.counts * self._ratio(pi) ** 2 * self.u**2))

    def _ratio(self, pi: Array) -> Array:
        return np.divide(pi, self.pi_hat, out=np.zeros_like(pi), where=self.pi_hat > 0)

    def variance(self, pi: Array) -> float:
        V = self.value(pi)
        return max((self.second_moment(pi) - self.T * V**2) / (self.T - 1), 0.0)

    def objective(self, pi: Array, lam: float) -> float:
        return self.value(pi) - lam * math.sqrt(self.variance(pi) / self.T)

    def gradient(self, pi: Array, lam: float) -> Array:
        n_cell = self.counts.sum(axis=2, keepdims=True)
        dV = n_cell * self.u / self.T
        if lam == 0:
            return dV
        inv = np.divide(1.0, self.pi_hat, out=np.zeros_like(pi), where=self.pi_hat > 0)
        dS = 2.0 * self.counts * pi * inv**2 * self.u**2
        var = self.variance(pi)
        if var <= 1e-300:
            return dV
        dVar = (dS - 2.0 * self.T * self.value(pi) * dV) / (self.T - 1)
        return dV - lam * dVar / (2.0 * math.sqrt(var * self.T))


def project_capped_simplex(y: Array, cap: Array, iters: int = 200) -> Array:
    """Row-wise Euclidean projection onto ``{p : 0 <= p <= cap, sum p = 1}``."""
    y = np.asarray(y, dtype=float)
    cap = np.asarray(cap, dtype=float)
    shape = y.shape
    Y, C = y.reshape(-1, shape[-1]), cap.reshape(-1, shape[-1])
    if np.any(C.sum(axis=1) < 1 - 1e-12):
        raise ValueError("capped simplex is empty: caps sum below 1")
    lo = np.min(np.where(C > 0, Y - C, np.inf), axis=1) - 1.0
    hi = np.max(np.where(C > 0, Y, -np.inf), axis=1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        mass = np.clip(Y - mid[:, None], 0.0, C).sum(axis=1)
        big = mass > 1.0
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    P = np.clip(Y - hi[:, None], 0.0, C)
    # distribute the bisection remainder over entries strictly inside their bounds
    short = 1.0 - P.sum(axis=1)
    free = (P < C) & (C > 0)
    room = np.where(free, C - P, 0.0)
    total_room = room.sum(axis=1)
    P += np.divide(room * short[:, None], total_room[:, None], out=np.zeros_like(P),
                   where=total_room[:, None] > 0)
    return P.reshape(shape)


def greedy_argmax_policy(cap: Array, u: Array) -> Array:
    """Optimum of the linear objective: fill actions in decreasing utility up to caps.

    Ties go to the lowest action id. Without binding caps this is the
    deterministic argmax policy.
    """
    P = np.zeros_like(cap)
    flat_cap = cap.reshape(-1, cap.shape[-1])
    flat_u = u.reshape(-1, u.shape[-1])
    flat_P = P.reshape(-1, P.shape[-1])
    for r in range(flat_cap.shape[0]):
        order = sorted(np.flatnonzero(flat_cap[r] > 0), key=lambda a: (-flat_u[r, a], a))
        left = 1.0
        for a in order:
            take = min(flat_cap[r, a], left)
            flat_P[r, a] = take
            left -= take
            if left <= 0:
                break
        if left > 0:
            flat_P[r, order[0]] += left
    return P


def _normalize_rows(P: Array, observed: NDArray[np.bool_]) -> Array:
    P = np.clip(P, 0.0, None)
    P = P / np.where(observed[..., None], P.sum(axis=2, keepdims=True), 1.0)
    return np.where(observed[..., None], P, np.nan)


def _ascend(pd: _ProblemData, start: Array, lam: float, max_iter: int, tol: float) -> tuple[Array, int]:
    """Projected gradient ascent with backtracking on a concave objective."""
    pi = start
    J = pd.objective(pi, lam)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        g = pd.gradient(pi, lam)
        accepted = False
        for _ in range(60):
            cand = project_capped_simplex(pi + step * g, pd.cap)
            delta = cand - pi
            Jc = pd.objective(cand, lam)
            if Jc >= J + np.sum(g * delta) - np.sum(delta**2) / (2 * step) - 1e-15:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        # projected-gradient norm measures stationarity on the capped simplex
        mapping = float(np.max(np.abs(delta))) / step if delta.size else 0.0
        improve = Jc - J
        if improve > 0:
            pi, J = cand, Jc
        if mapping < tol or improve <= 1e-15 * max(1.0, abs(J)):
            break
        step = min(step * 2.0, 1e6)
    return pi, it


@dataclass
class PolicyResult:
    policies: Policies
    objective: float
    baseline_objective: float
    per_problem: tuple[float, ...]
    lam_bar: tuple[float, ...]
    w_max: float | None
    flags: tuple[str, ...] = ()
    iterations: int = 0
    notes: tuple[str, ...] = ()

    @property
    def improvement(self) -> float:
        return self.objective - self.baseline_objective

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective": self.objective,
            "baseline_objective": self.baseline_objective,
            "per_problem": list(self.per_problem),
            "lambda_bar": list(self.lam_bar),
            "w_max": self.w_max,
            "flags": list(self.flags),
            "iterations": self.iterations,
            "notes": list(self.notes),
            "policies": [
                [[None if np.isnan(row[0]) else [float(v) for v in row] for row in pf] for pf in p]
                for p in self.policies
            ],
        }


def _problem_data(
    d: StochasticChoiceDataset, m: EstimatedModel, u: Array, w_max: float | None
) -> list[_ProblemData]:
    s = m.schema
    out = []
    for k, A in enumerate(s.action_counts):
        counts = m.counts[k]
        pi_hat = np.nan_to_num(m.policies[k], nan=0.0)
        observed = ~np.isnan(m.policies[k][..., 0])
        T = int(np.sum(d.k == k + 1))
        if T < 2:
            raise ValueError(f"problem k={k + 1} has {T} records; the variance needs at least 2")
        cap = np.where(pi_hat > 0, 1.0 if w_max is None else np.minimum(1.0, w_max * pi_hat), 0.0)
        out.append(_ProblemData(k, T, counts, pi_hat, observed, u[:, :, :A].copy(), cap))
    return out


def penalized_objective(
    d: StochasticChoiceDataset,
    policies: Sequence[Array],
    u: Array,
    lam_bar: float | Sequence[float],
    model: EstimatedModel | None = None,
) -> float:
    """``sum_k V_hat(pi_k) - lam_bar_k sqrt(Var[u_bar(pi_k)] / T_k)`` from per-record weights."""
    stats = iw_statistics(d, policies, u, model=model)
    lam = np.broadcast_to(np.asarray(lam_bar, dtype=float), (len(stats),))
    return float(sum(st.value - l * math.sqrt(st.variance / st.T) for st, l in zip(stats, lam)))


def optimize_policy(
    d: StochasticChoiceDataset,
    u: Array,
    lam_bar: float | Sequence[float] = 1.0,
    rationality: bool = False,
    w_max: float | None = None,
    model: EstimatedModel | None = None,
    max_iter: int = 5000,
    tol: float = 1e-10,
) -> PolicyResult:
    """Maximize the variance-penalized importance-weighted value over policy tables.

    Policies are restricted to the logging support (and to ``pi <= w_max *
    pi_hat`` when ``w_max`` is set). ``lam_bar = 0`` returns the greedy
    optimum exactly; otherwise projected gradient ascent runs from the
    logging policy, the greedy policy and the uniform policy and keeps the
    best. With ``rationality`` the result is moved to the nearest (in L1)
    policy satisfying the no-improving-switch and no-improving-cycle
    conditions under ``u``; if that program is infeasible the unconstrained
    optimum is returned flagged ``rationality-violated``.
    """
    m = _logging_model(d, model)
    s = m.schema
    u = _utility(u, s.frame_count, s.state_count, s.max_actions)
    if w_max is not None and w_max < 1:
        raise ValueError("w_max must be at least 1 so that the logging policy is admissible")
    lam = np.broadcast_to(np.asarray(lam_bar, dtype=float), (s.problem_count,)).copy()
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("lambda_bar must be finite and non-negative")
    data = _problem_data(d, m, u, w_max)

    iterations = 0
    chosen: list[Array] = []
    baseline = 0.0
    for pd, l in zip(data, lam):
        baseline += pd.objective(pd.pi_hat, l)
        greedy = greedy_argmax_policy(pd.cap, pd.u)
        if l == 0:
            chosen.append(greedy)
            continue
        uniform = project_capped_simplex(np.zeros_like(pd.cap), pd.cap)
        best, best_J = pd.pi_hat, pd.objective(pd.pi_hat, l)
        for start in (pd.pi_hat, greedy, uniform):
            pi, it = _ascend(pd, start, l, max_iter, tol)
            iterations += it
            J = pd.objective(pi, l)
            if J > best_J:
                best, best_J = pi, J
        chosen.append(best)

    flags: list[str] = []
    notes: list[str] = []
    policies = tuple(_normalize_rows(p, pd.observed) for p, pd in zip(chosen, data))
    if rationality:
        repaired, msg = _rationality_repair(m, policies, u, data)
        notes.extend(msg)
        if repaired is None:
            flags.append(RATIONALITY_VIOLATED)
        else:
            candidates = [repaired]
            if _is_rational(m, m.policies, u):
                candidates.append(tuple(np.array(p) for p in m.policies))
            scored = [
                (sum(pd.objective(np.nan_to_num(p, nan=0.0), l) for p, pd, l in zip(c, data, lam)), c)
                for c in candidates
            ]
            policies = max(scored, key=lambda t: t[0])[1]
            if policies is not repaired:
                notes.append("repaired policy scored below the logging policy; kept the logging policy")

    per = tuple(
        pd.objective(np.nan_to_num(p, nan=0.0), l) for p, pd, l in zip(policies, data, lam)
    )
    return PolicyResult(
        policies=policies,
        objective=float(sum(per)),
        baseline_objective=float(baseline),
        per_problem=per,
        lam_bar=tuple(float(v) for v in lam),
        w_max=w_max,
        flags=tuple(flags),
        iterations=iterations,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# rationality repair


def _is_rational(m: EstimatedModel, policies: Sequence[Array], u: Array, tol: float = TAU_TEST) -> bool:
    cand = model_from_policies(m.prior, policies, m.schema)
    if not all(r.passed for r in check_nias(cand, u, tol)):
        return False
    return all(check_niac(compute_G(cand, u, f), tol).passed for f in range(m.N))


def _rationality_repair(
    m: EstimatedModel, policies: Policies, u: Array, data: list[_ProblemData]
) -> tuple[Policies | None, list[str]]:
    """Nearest policy (L1) under which ``u`` passes both revealed-preference checks.

    Per frame, an LP over the policy entries of the complete problems: simplex
    rows, support and caps; ``sum_x mu(x) pi_k(a|x) [u(x,a) - u(x,b)] >= 0``;
    and the cyclic condition with epigraph variables for the cross maxima.
    """
    mu = m.prior
    out = [np.array(p) for p in policies]
    notes: list[str] = []
    for f in range(m.N):
        problems = [k for k in range(m.K) if m.complete(k, f)]
        if not problems:
            continue
        lp = LinearProgram()
        var: dict[tuple[int, int, int], int] = {}
        dev = []
        for k in problems:
            pd = data[k]
            A = pd.cap.shape[2]
            for x in range(m.X):
                row = {}
                for a in range(A):
                    c = float(pd.cap[f, x, a])
                    if c <= 0:
                        continue
                    j = lp.add_variable(f"pi[{k + 1},{x + 1},{a + 1}]", 0.0, c)
                    var[(k, x, a)] = j
                    row[j] = 1.0
                    e = lp.add_variable(f"dev[{k + 1},{x + 1},{a + 1}]", 0.0)
                    target = float(out[k][f, x, a])
                    lp.add_constraint({e: 1.0, j: -1.0}, ">=", -target)
                    lp.add_constraint({e: 1.0, j: 1.0}, ">=", target)
                    dev.append(e)
                lp.add_constraint(row, "==", 1.0, f"simplex[{k + 1},{x + 1}]")
            for a in range(A):
                for b in range(A):
                    if a == b:
                        continue
                    coeffs = {
                        var[(k, x, a)]: mu[x] * (u[f, x, a] - u[f, x, b])
                        for x in range(m.X)
                        if (k, x, a) in var
                    }
                    if coeffs:
                        lp.add_constraint(coeffs, ">=", 0.0, f"nias[{k + 1},{a + 1},{b + 1}]")
        if len(problems) > 1:
            cycle: dict[int, float] = {}
            for i, k in enumerate(problems):
                w = problems[(i + 1) % len(problems)]
                A_k, A_w = data[k].cap.shape[2], data[w].cap.shape[2]
                for a in range(A_k):
                    for x in range(m.X):
                        if (k, x, a) in var:
                            j = var[(k, x, a)]
                            cycle[j] = cycle.get(j, 0.0) + mu[x] * u[f, x, a]
                # strategy w scored with problem k's actions
                for a in range(A_w):
                    entries = [(x, var[(w, x, a)]) for x in range(m.X) if (w, x, a) in var]
                    if not entries:
                        continue
                    t = lp.add_variable(f"cross[{w + 1}->{k + 1},{a + 1}]", -math.inf)
                    for b in range(A_k):
                        coeffs = {j: -mu[x] * u[f, x, b] for x, j in entries}
                        coeffs[t] = 1.0
                        lp.add_constraint(coeffs, ">=", 0.0)
                    cycle[t] = cycle.get(t, 0.0) - 1.0
            lp.add_constraint(cycle, ">=", 0.0, "cycle")
        lp.set_objective({e: 1.0 for e in dev})
        res = solve_lp(lp)
        if not res.feasible:
            notes.append(f"frame {f + 1}: no policy on the logging support passes the checks")
            return None, notes
        for (k, x, a), j in var.items():
            out[k][f, x, a] = max(float(res.x[j]), 0.0)
        notes.append(f"frame {f + 1}: repair moved the policy by L1 distance {res.objective:.6g}")
    repaired = tuple(_normalize_rows(p, pd.observed) for p, pd in zip(out, data))
    if not _is_rational(m, repaired, u):
        notes.append("repaired policy failed the independent re-check")
        return None, notes
    return repaired, notes
