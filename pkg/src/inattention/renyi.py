"""Rényi mutual information, the budget-constrained choice problem, and
the multiplier test for Rényi-cost rationality.

Two forms of the multiplier test are offered:

``printed``
    ``u(x,a) = lam1/(beta-1) * eta^(beta-1)(x,a) * E[eta^(beta-1)] - lam2``
    with ``E`` the expectation under ``p(x,a)`` (a single scalar).
``stationarity``
    ``u(x,a) = lam1 * dI/dp(x,a) + nu(x)``, the first-order condition of
    the budget-constrained problem with one multiplier per prior row.

The two coincide only in special cases; see :func:`test_renyi_rationality`.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

TAU_KKT = 1e-6
FORMS = ("printed", "stationarity")


class ConvergenceError(RuntimeError):
    """Raised when the budget-constrained solver runs out of iterations."""

    def __init__(self, message: str, best: "JointDistribution | None" = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class JointDistribution:
    """Joint law ``p[x, a]`` of state and action."""

    p: NDArray[np.float64]

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=float)
        if p.ndim != 2:
            raise ValueError("joint distribution must be a 2-D array")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("joint distribution entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint distribution has total mass {p.sum()!r}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_policy(cls, prior, policy) -> "JointDistribution":
        prior = np.asarray(prior, dtype=float)
        joint = prior[:, None] * np.asarray(policy, dtype=float)
        return cls(joint / joint.sum())

    @property
    def mu(self) -> NDArray[np.float64]:
        return self.p.sum(axis=1)

    @property
    def pa(self) -> NDArray[np.float64]:
        return self.p.sum(axis=0)

    @property
    def eta(self) -> NDArray[np.float64]:
        """``p(x|a) / mu(x)``; NaN where ``p(a)`` or ``mu(x)`` vanishes."""
        denom = np.outer(self.mu, self.pa)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(denom > 0, self.p / denom, np.nan)

    def expected_utility(self, u) -> float:
        return float(np.sum(self.p * np.asarray(u, dtype=float)))

    def to_dict(self) -> dict[str, Any]:
        return {"p": self.p.tolist()}


def renyi_mi(j: JointDistribution, beta: float) -> float:
    """Rényi mutual information of order ``beta`` in nats.

    Equals the Rényi divergence of ``p`` from ``mu x p_a``: Shannon mutual
    information at ``beta = 1`` and ``-ln sum mu(x) p(a) 1{p(x,a) > 0}`` at
    ``beta = 0``.
    """
    if not beta >= 0:
        raise ValueError(f"Rényi order must be nonnegative, got {beta}")
    p, mu, pa = j.p, j.mu, j.pa
    pos = p > 0
    prod = np.outer(mu, pa)
    if beta == 0:
        return float(-math.log(prod[pos].sum()))
    if beta == 1:
        return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(prod[pos]))))
    logs = beta * np.log(p[pos]) + (1.0 - beta) * np.log(prod[pos])
    return float(logsumexp(logs) / (beta - 1.0))


# --------------------------------------------------------------------------
# Budget-constrained problem
# --------------------------------------------------------------------------


def _power_sum(p, mu, beta):
    """``S(p) = sum_xa p^beta (mu q)^(1-beta)`` with gradient and Hessian blocks."""
    q = p.sum(axis=0)
    w = mu ** (1.0 - beta)
    pb = p**beta
    R = (pb * w[:, None]).sum(axis=0)  # per action
    S = float(np.sum(R * q ** (1.0 - beta)))
    grad = beta * p ** (beta - 1.0) * w[:, None] * q ** (1.0 - beta) + (1.0 - beta) * q ** (-beta) * R
    X, A = p.shape
    blocks = []
    for a in range(A):
        g1 = beta * p[:, a] ** (beta - 1.0) * w  # d R_a / d p_xa
        H = (
            np.diag(beta * (beta - 1.0) * p[:, a] ** (beta - 2.0) * w * q[a] ** (1.0 - beta))
            + (1.0 - beta) * q[a] ** (-beta) * (g1[:, None] + g1[None, :])
            - beta * (1.0 - beta) * q[a] ** (-beta - 1.0) * R[a]
        )
        blocks.append(H)
    return S, grad, blocks


def _shannon_parts(p, mu):
    q = p.sum(axis=0)
    I = float(np.sum(p * (np.log(p) - np.log(np.outer(mu, q)))))
    grad = np.log(p) - np.log(np.outer(mu, q))
    blocks = [np.diag(1.0 / p[:, a]) - 1.0 / q[a] for a in range(p.shape[1])]
    return I, grad, blocks


def information_gradient(j: JointDistribution, beta: float) -> NDArray[np.float64]:
    """``dI_beta / dp(x,a)`` holding the prior fixed; NaN on zero-probability cells."""
    p, mu = j.p, j.mu
    with np.errstate(divide="ignore", invalid="ignore"):
        if beta == 1:
            g = np.log(p) - np.log(np.outer(mu, p.sum(axis=0)))
        else:
            S, g, _ = _power_sum(p, mu, beta)
            g = g / ((beta - 1.0) * S)
    return np.where(p > 0, g, np.nan)


def _prior_action(mu, u) -> int:
    return int(np.argmax(mu @ u))


def _deterministic(mu, choice, A) -> NDArray[np.float64]:
    p = np.zeros((mu.size, A))
    p[np.arange(mu.size), choice] = mu
    return p


def solve_renyi_problem(
    mu,
    u,
    beta: float,
    kappa_max: float,
    restarts: int = 10,
    seed: int = 0,
    tol: float = 1e-10,
    max_newton: int = 200,
) -> JointDistribution:
    """Maximize expected utility over joints with prior ``mu`` and ``I_beta <= kappa_max``.

    The budget is written as ``S(p) >= exp((beta-1) kappa_max)`` with ``S``
    concave for ``beta`` in (0, 1), and handled with a logarithmic barrier;
    each barrier stage runs equality-constrained Newton steps that keep
    every row sum equal to ``mu(x)``. Restarts begin at random independent
    joints ``mu x q`` (information zero, strictly feasible) and the best
    end point is returned.

    Exact shortcuts: a zero budget yields the single best prior action, and
    a budget covering the fully informed choice returns that choice.
    """
    mu = np.asarray(mu, dtype=float)
    u = np.asarray(u, dtype=float)
    if not 0 < beta <= 1:
        raise ValueError(f"solver covers orders in (0, 1]; got {beta}")
    if kappa_max < 0:
        raise ValueError("kappa_max must be nonnegative")
    if u.shape[0] != mu.size:
        raise ValueError("utility rows must match the prior")
    X, A = u.shape
    if kappa_max == 0 or A == 1:
        return JointDistribution(_deterministic(mu, np.full(X, _prior_action(mu, u)), A))
    informed = JointDistribution(_deterministic(mu, np.argmax(u, axis=1), A))
    if renyi_mi(informed, beta) <= kappa_max:
        return informed

    support = mu > 0
    if not support.all():
        # states with no mass carry no information or utility
        sub = solve_renyi_problem(mu[support], u[support], beta, kappa_max, restarts, seed, tol, max_newton)
        p = np.zeros((X, A))
        p[support] = sub.p
        return JointDistribution(p)

    rng = np.random.default_rng(seed)
    best, best_val = None, -np.inf
    failures = 0
    for r in range(restarts):
        q0 = np.full(A, 1.0 / A) if r == 0 else rng.dirichlet(np.ones(A))
        try:
            p = _barrier_solve(mu, u, beta, kappa_max, np.outer(mu, q0), tol, max_newton)
        except ConvergenceError as e:
            failures += 1
            p = e.best.p if e.best is not None else None
            if p is None:
                continue
        val = float(np.sum(p * u))
        if val > best_val + 1e-15:
            best, best_val = p, val
    if best is None:
        raise ConvergenceError("every restart failed")
    if failures == restarts:
        raise ConvergenceError("no restart converged", JointDistribution(best / best.sum()))
    best = best * (mu / best.sum(axis=1))[:, None]
    return JointDistribution(best / best.sum())


def _barrier_solve(mu, u, beta, kappa, p0, tol, max_newton):
    X, A = p0.shape
    n = X * A
    shannon = beta == 1
    floor = kappa if shannon else math.exp((beta - 1.0) * kappa)

    def margin(p):
        if shannon:
            return floor - _shannon_parts(p, mu)[0]
        return _power_sum(p, mu, beta)[0] - floor

    def parts(p):
        if shannon:
            I, g, blocks = _shannon_parts(p, mu)
            return floor - I, -g, [-b for b in blocks]
        return _power_sum(p, mu, beta)[0] - floor, *_power_sum(p, mu, beta)[1:]

    # equality rows: sum_a p[x, a] = mu[x]; flattening is row-major (x, a)
    E = np.zeros((X, n))
    for x in range(X):
        E[x, x * A : (x + 1) * A] = 1.0
    uf = u.ravel()
    m_ineq = n + 1
    p = p0.copy()
    t = 1.0
    total_steps = 0
    while True:
        for _ in range(max_newton):
            c, gc, blocks = parts(p)
            pf = p.ravel()
            # barrier objective: -t u.p - sum log p - log c
            grad = -t * uf - 1.0 / pf - gc.ravel() / c
            Hc = np.zeros((n, n))
            for a in range(A):
                idx = np.arange(X) * A + a
                Hc[np.ix_(idx, idx)] = blocks[a]
            gcf = gc.ravel()
            H = np.diag(1.0 / pf**2) - Hc / c + np.outer(gcf, gcf) / c**2
            K = np.block([[H, E.T], [E, np.zeros((X, X))]])
            rhs = np.concatenate([-grad, np.zeros(X)])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            d = sol[:n]
            dec = float(-grad @ d)
            total_steps += 1
            if dec / 2.0 <= 1e-12:
                break
            step = 1.0
            f0 = -t * uf @ pf - np.sum(np.log(pf)) - math.log(c)
            while step > 1e-14:
                cand = (pf + step * d).reshape(X, A)
                if np.all(cand > 0):
                    cm = margin(cand)
                    if cm > 0:
                        f1 = -t * uf @ cand.ravel() - np.sum(np.log(cand)) - math.log(cm)
                        if f1 <= f0 - 0.25 * step * dec:
                            break
                step *= 0.5
            else:
                break
            p = cand
        else:
            raise ConvergenceError(
                f"Newton stage at t={t:.3g} did not converge", JointDistribution(p / p.sum())
            )
        if m_ineq / t < tol:
            return p
        t *= 10.0
        if total_steps > 50 * max_newton:
            raise ConvergenceError("iteration budget exhausted", JointDistribution(p / p.sum()))


# --------------------------------------------------------------------------
# Multiplier test
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RenyiTestResult:
    accepts: bool
    form: str
    beta: float
    lambda1: float
    lambda2: float | None  # printed form offset
    nu: NDArray[np.float64] | None  # stationarity form per-state offsets
    kappa_max: float
    residual: float  # worst cell of |fit - u| / max(|u|, median |u|)
    alt_residual: float | None = None  # printed form with the expectation taken entrywise
    skipped: tuple[tuple[int, int], ...] = ()
    notes: tuple[str, ...] = ()
    utility: NDArray[np.float64] | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {
            "accepts": self.accepts,
            "form": self.form,
            "beta": self.beta,
            "lambda1": self.lambda1,
            "kappa_max": self.kappa_max,
            "residual": self.residual,
            "skipped": [[x + 1, a + 1] for x, a in self.skipped],
            "notes": list(self.notes),
        }
        if self.lambda2 is not None:
            d["lambda2"] = self.lambda2
        if self.nu is not None:
            d["nu"] = [float(v) for v in self.nu]
        if self.alt_residual is not None:
            d["alt_residual"] = self.alt_residual
        if self.utility is not None:
            d["utility"] = self.utility.tolist()
        return d


def printed_features(j: JointDistribution, beta: float) -> tuple[NDArray[np.float64], float]:
    """``h(x,a) = eta^(beta-1) E[eta^(beta-1)] / (beta-1)`` and ``E``; NaN where undefined."""
    eta = j.eta
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.where(j.p > 0, eta ** (beta - 1.0), np.nan)
    E = float(np.nansum(j.p * np.nan_to_num(pw)))
    return pw * E / (beta - 1.0), E


def renyi_kappa(j: JointDistribution, beta: float) -> float:
    """``ln(E[eta^(beta-1)]) / (beta-1)``, which equals ``renyi_mi(j, beta)``."""
    _, E = printed_features(j, beta)
    return math.log(E) / (beta - 1.0)


def forward_utility(j: JointDistribution, beta: float, lambda1: float, lambda2: float) -> NDArray[np.float64]:
    """Utility implied by the printed multiplier form (the forward construction)."""
    h, _ = printed_features(j, beta)
    return lambda1 * h - lambda2


def stationarity_utility(j: JointDistribution, beta: float, lambda1: float, nu) -> NDArray[np.float64]:
    return lambda1 * information_gradient(j, beta) + np.asarray(nu, dtype=float)[:, None]


def test_renyi_rationality(
    j: JointDistribution,
    beta: float,
    u=None,
    form: str = "printed",
    tol: float = TAU_KKT,
) -> RenyiTestResult:
    """Fit the multipliers of a Rényi-cost agent and accept or reject.

    With ``u`` given, the multipliers solve a least-squares problem over the
    cells with positive probability; the joint is accepted when the relative
    residual (worst cell error over ``max(|u|, median |u|)``) is at most
    ``tol`` and ``lambda1 > 0``. Without ``u`` the
    multiplier equalities are added to the utility-recovery program (see
    :func:`renyi_program_test`).

    The printed form is the literal statement; on solutions of the
    budget-constrained problem it generally leaves a sizeable residual,
    whereas the stationarity form is exact there.
    """
    if not 0 < beta < 1:
        raise ValueError("the multiplier test covers orders strictly between 0 and 1")
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if u is None:
        return renyi_program_test(j, beta, form)
    u = np.asarray(u, dtype=float)
    if u.shape != j.p.shape:
        raise ValueError(f"utility shape {u.shape} does not match joint {j.p.shape}")
    mask = j.p > 0
    skipped = tuple((int(x), int(a)) for x, a in np.argwhere(~mask))
    notes = []
    if skipped:
        msg = f"{len(skipped)} zero-probability cells skipped"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    kappa = renyi_mi(j, beta)
    target = u[mask]
    scale = np.maximum(np.abs(target), max(float(np.median(np.abs(target))), 1e-300))
    if form == "printed":
        h, _ = printed_features(j, beta)
        lam1, lam2, res = _fit_affine(h[mask], target)
        alt = None
        eta = j.eta
        with np.errstate(divide="ignore", invalid="ignore"):
            h_alt = np.where(mask, eta ** (2.0 * (beta - 1.0)) / (beta - 1.0), np.nan)
        alt = float(np.max(np.abs(_fit_affine(h_alt[mask], target)[2]) / scale))
        rel = float(np.max(np.abs(res) / scale))
        if rel > tol:
            notes.append(f"entrywise-expectation reading leaves relative residual {alt:.3g}")
        return RenyiTestResult(bool(rel <= tol and lam1 > 0), form, beta, lam1, lam2, None, kappa,
                               rel, alt, skipped, tuple(notes))
    g = information_gradient(j, beta)
    X, A = u.shape
    M = np.zeros((X * A, 1 + X))
    M[:, 0] = np.nan_to_num(g.ravel())
    for x in range(X):
        M[x * A : (x + 1) * A, 1 + x] = 1.0
    keep = mask.ravel()
    sol, *_ = np.linalg.lstsq(M[keep], u.ravel()[keep], rcond=None)
    rel = float(np.max(np.abs(M[keep] @ sol - u.ravel()[keep]) / scale))
    return RenyiTestResult(bool(rel <= tol and sol[0] > 0), form, beta, float(sol[0]), None, sol[1:],
                           kappa, rel, None, skipped, tuple(notes))


test_renyi_rationality.__test__ = False


def _fit_affine(h, target):
    """Least squares ``target ~ lam1 * h - lam2``; constant ``h`` pins ``lam1 = 1``."""
    if np.ptp(h) <= 1e-14 * max(1.0, float(np.max(np.abs(h)))):
        lam1 = 1.0
        lam2 = float(lam1 * h.mean() - target.mean())
    else:
        M = np.column_stack([h, -np.ones_like(h)])
        (lam1, lam2), *_ = np.linalg.lstsq(M, target, rcond=None)
        lam1, lam2 = float(lam1), float(lam2)
    return lam1, lam2, lam1 * h - lam2 - target


def renyi_program_test(j: JointDistribution, beta: float, form: str = "printed") -> RenyiTestResult:
    """Search for a utility in [0, 1] obeying the multiplier form and revealed optimality."""
    from .dataset import model_from_policies
    from .niat import RATIONALIZABLE, renyi_constrained_test

    mu = j.mu
    with np.errstate(divide="ignore", invalid="ignore"):
        pol = np.where(mu[:, None] > 0, j.p / mu[:, None], np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = model_from_policies(mu, [pol[None]])
    out = renyi_constrained_test(m, beta, form)
    fv = out.frames[0]
    ok = fv.verdict == RATIONALIZABLE
    lam = fv.auxiliaries.get("renyi", {}) if ok else {}
    u = out.u[0] if ok else None
    nu = None
    if form == "stationarity" and ok:
        nu = np.array([lam[f"nu[k1,x{x + 1}]"] for x in range(mu.size)])
    return RenyiTestResult(
        ok,
        form,
        beta,
        float(lam.get("lambda1[k1]", math.nan)),
        float(lam["lambda2[k1]"]) if ok and form == "printed" else None,
        nu,
        renyi_mi(j, beta),
        0.0 if ok else math.inf,
        None,
        (),
        fv.notes,
        u,
    )
