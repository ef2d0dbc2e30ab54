"""Synthetic agents with known ground truth, and certified violating datasets."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linprog

from .dataset import (
    DatasetSchema,
    EstimatedModel,
    StochasticChoiceDataset,
    model_from_policies,
)

logger = logging.getLogger(__name__)

GRID_STEP = 0.05
_GRID_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    """Sizes of a synthetic problem family. ``actions`` has one entry per problem."""

    states: int = 2
    actions: tuple[int, ...] = (2, 2)
    frames: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if self.states < 1 or self.frames < 1 or not self.actions or min(self.actions) < 1:
            raise ValueError(f"invalid agent spec {self}")

    @property
    def K(self) -> int:
        return len(self.actions)

    def schema(self) -> DatasetSchema:
        return DatasetSchema(self.states, self.frames, self.actions)


@dataclass(frozen=True)
class GroundTruthAgent:
    """Everything needed to regenerate a dataset.

    ``attention[k][f]`` is ``(S, X)`` with ``attention[s, x] = alpha(s | x)``;
    ``choice[k][f]`` is ``(A_k, S)``; ``cost[k, f]`` is the information cost of
    the strategy chosen by problem ``k`` in frame ``f``.
    """

    spec: AgentSpec
    prior: NDArray[np.float64]
    utility: NDArray[np.float64]  # (N, X, A_max)
    attention: tuple[tuple[NDArray[np.float64], ...], ...]
    choice: tuple[tuple[NDArray[np.float64], ...], ...]
    cost: NDArray[np.float64]
    seed: int | None = None
    renyi: dict[str, float] | None = None
    notes: tuple[str, ...] = ()

    def policy(self, k: int) -> NDArray[np.float64]:
        """``(N, X, A_k)`` table ``pi_k(a | x, f)``."""
        return np.stack([(self.choice[k][f] @ self.attention[k][f]).T for f in range(self.spec.frames)])

    def exact_model(self) -> EstimatedModel:
        return model_from_policies(
            self.prior, [self.policy(k) for k in range(self.spec.K)], self.spec.schema()
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": {"states": self.spec.states, "actions": list(self.spec.actions), "frames": self.spec.frames},
            "seed": self.seed,
            "prior": self.prior.tolist(),
            "utility": self.utility.tolist(),
            "attention": [[a.tolist() for a in row] for row in self.attention],
            "choice": [[c.tolist() for c in row] for row in self.choice],
            "cost": self.cost.tolist(),
            "renyi": self.renyi,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GroundTruthAgent":
        spec = AgentSpec(d["spec"]["states"], tuple(d["spec"]["actions"]), d["spec"]["frames"])
        return cls(
            spec=spec,
            prior=np.asarray(d["prior"], dtype=float),
            utility=np.asarray(d["utility"], dtype=float),
            attention=tuple(tuple(np.asarray(a, dtype=float) for a in row) for row in d["attention"]),
            choice=tuple(tuple(np.asarray(c, dtype=float) for c in row) for row in d["choice"]),
            cost=np.asarray(d["cost"], dtype=float),
            seed=d.get("seed"),
            renyi=d.get("renyi"),
            notes=tuple(d.get("notes", ())),
        )


# --------------------------------------------------------------------------
# Rational agents
# --------------------------------------------------------------------------


def grid_utility(rng: np.random.Generator, X: int, A: int, step: float = GRID_STEP) -> NDArray[np.float64]:
    levels = int(round(1.0 / step))
    return rng.integers(0, levels + 1, size=(X, A)) / levels


def _action_trivial(u: NDArray[np.float64], actions: Sequence[int]) -> bool:
    """True if, within some problem, every state values all offered actions equally."""
    return any(np.all(np.ptp(u[:, :A], axis=1) == 0.0) for A in actions if A > 1)


def _shannon_mi(prior: NDArray[np.float64], alpha: NDArray[np.float64]) -> float:
    joint = alpha * prior[None, :]  # (S, X)
    ps = joint.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(joint > 0, joint * np.log(joint / (ps * prior[None, :])), 0.0)
    return float(terms.sum())


def _strategy_value(prior, alpha, u, A) -> float:
    joint = alpha * prior[None, :]
    return float(np.sum(np.max(joint @ u[:, :A], axis=1)))


def _candidate_strategies(rng, X: int, n_random: int) -> list[NDArray[np.float64]]:
    cands = [np.ones((1, X)), np.eye(X)]
    for _ in range(n_random):
        S = int(rng.integers(2, X + 2))
        cands.append(rng.dirichlet(np.ones(S), size=X).T)
    return cands


def _bayes_choice(prior, alpha, u, A) -> NDArray[np.float64]:
    """Pick the expected-utility maximizer per signal, lowest id on ties."""
    joint = alpha * prior[None, :]
    ps = joint.sum(axis=1)
    eta = np.zeros((A, alpha.shape[0]))
    for s in range(alpha.shape[0]):
        if ps[s] <= 0:
            eta[0, s] = 1.0
            continue
        ev = (joint[s] / ps[s]) @ u[:, :A]
        best = np.flatnonzero(ev >= ev.max() - 1e-12)[0]
        eta[best, s] = 1.0
    return eta


def gen_rational_agent(
    spec: AgentSpec,
    seed: int,
    n_candidates: int = 4,
    cost_scale: tuple[float, float] = (0.05, 0.5),
    max_resample: int = 200,
) -> GroundTruthAgent:
    """Draw a rationally inattentive agent.

    Utilities are uniform on a 0.05 grid (redrawn while some problem sees
    only action-constant utilities). Each frame gets a menu of attention
    strategies, always including the uninformative and fully revealing ones,
    priced at a random multiple of their Shannon mutual information. Each
    problem adopts the strategy with the best value net of cost, which makes
    the cyclic attention condition hold; it is re-verified on the revealed
    posteriors and the draw is repeated on failure.
    """
    from .niat import check_nias, check_niac, compute_G

    rng = np.random.default_rng(seed)
    X, K, N = spec.states, spec.K, spec.frames
    A_max = max(spec.actions)
    for attempt in range(max_resample):
        prior = rng.dirichlet(np.ones(X))
        u = np.stack([grid_utility(rng, X, A_max) for _ in range(N)])
        if any(_action_trivial(u[f], spec.actions) for f in range(N)):
            continue
        attention, choice = [[None] * N for _ in range(K)], [[None] * N for _ in range(K)]
        cost = np.zeros((K, N))
        for f in range(N):
            cands = _candidate_strategies(rng, X, n_candidates)
            scale = rng.uniform(*cost_scale)
            prices = [scale * _shannon_mi(prior, c) for c in cands]
            for k, A in enumerate(spec.actions):
                net = [_strategy_value(prior, c, u[f], A) - p for c, p in zip(cands, prices)]
                best = int(np.argmax(net))
                attention[k][f] = cands[best]
                choice[k][f] = _bayes_choice(prior, cands[best], u[f], A)
                cost[k, f] = prices[best]
        agent = GroundTruthAgent(
            spec=spec,
            prior=prior,
            utility=u,
            attention=tuple(tuple(r) for r in attention),
            choice=tuple(tuple(r) for r in choice),
            cost=cost,
            seed=seed,
        )
        m = agent.exact_model()
        ok = all(r.passed for r in check_nias(m, u))
        ok = ok and all(check_niac(compute_G(m, u, f)).passed for f in range(N))
        if ok:
            return agent
        logger.debug("seed %d attempt %d failed verification; redrawing", seed, attempt)
    raise SimulationError(f"no verified rational agent after {max_resample} draws (seed {seed})")


def gen_renyi_agent(
    spec: AgentSpec, beta: float, kappa_max: float, seed: int, restarts: int = 10
) -> GroundTruthAgent:
    """Agent whose every problem solves the Rényi budget-constrained choice problem.

    Utilities are redrawn until the best action depends on the state (so
    the budget is worth spending). The optimal joint ``p*(x, a)`` is read as an attention strategy whose
    signals are the actions themselves (``alpha(a|x) = p*(x,a)/mu(x)``) with
    the identity choice function.
    """
    from .renyi import renyi_mi, solve_renyi_problem

    rng = np.random.default_rng(seed)
    X, K, N = spec.states, spec.K, spec.frames
    A_max = max(spec.actions)
    prior = rng.dirichlet(np.ones(X))

    def informative(uf):
        # some problem must have a state-dependent best action, else no information is worth buying
        return X == 1 or all(len(set(np.argmax(uf[:, :A], axis=1))) > 1 for A in spec.actions if A > 1)

    for _ in range(1000):
        u = np.stack([grid_utility(rng, X, A_max) for _ in range(N)])
        if all(informative(u[f]) for f in range(N)):
            break
    else:
        raise SimulationError("could not draw a utility with a state-dependent best action")
    attention = [[None] * N for _ in range(K)]
    choice = [[None] * N for _ in range(K)]
    cost = np.zeros((K, N))
    for f in range(N):
        for k, A in enumerate(spec.actions):
            j = solve_renyi_problem(prior, u[f][:, :A], beta, kappa_max, restarts=restarts, seed=seed)
            attention[k][f] = (j.p / prior[:, None]).T
            choice[k][f] = np.eye(A)
            cost[k, f] = renyi_mi(j, beta)
    return GroundTruthAgent(
        spec=spec,
        prior=prior,
        utility=u,
        attention=tuple(tuple(r) for r in attention),
        choice=tuple(tuple(r) for r in choice),
        cost=cost,
        seed=seed,
        renyi={"beta": float(beta), "kappa_max": float(kappa_max)},
    )


def sample_dataset(
    agent: GroundTruthAgent, T: int, seed: int, exact: bool = False
) -> StochasticChoiceDataset | EstimatedModel:
    """Draw ``T`` i.i.d. records, or return the population model when ``exact``.

    Each record draws a problem and frame uniformly, then ``x ~ prior``,
    ``s ~ alpha_k(.|x, f)`` and ``a ~ eta_k(.|s)``.
    """
    if exact:
        return agent.exact_model()
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    spec = agent.spec
    k = rng.integers(0, spec.K, size=T)
    f = rng.integers(0, spec.frames, size=T)
    x = rng.choice(spec.states, size=T, p=agent.prior)
    a = np.empty(T, dtype=np.int64)
    for t in range(T):
        alpha = agent.attention[k[t]][f[t]]
        s = rng.choice(alpha.shape[0], p=alpha[:, x[t]] / alpha[:, x[t]].sum())
        eta = agent.choice[k[t]][f[t]][:, s]
        a[t] = rng.choice(eta.size, p=eta / eta.sum())
    arr = np.column_stack([np.arange(1, T + 1), x + 1, f + 1, a + 1, k + 1])
    return StochasticChoiceDataset.from_array(arr, spec.schema())


# --------------------------------------------------------------------------
# Independent certification (exhaustive grid, scipy LP)
# --------------------------------------------------------------------------


def _state_rows(A: int, step: float) -> NDArray[np.float64]:
    levels = int(round(1.0 / step))
    rows = np.array(list(itertools.product(range(levels + 1), repeat=A)), dtype=np.int64)
    rows = rows[rows.min(axis=1) == 0]
    return rows / levels


@dataclass(frozen=True)
class GridResult:
    feasible: bool
    witness: NDArray[np.float64] | None
    checked: int
    best_cyclic_sum: float = -np.inf  # over NIAS-feasible, non-constant grid utilities
    nias_feasible: int = 0


def _frame_tables(m: EstimatedModel, f: int):
    probs, posts, acts = [], [], []
    for k in range(m.K):
        if not m.complete(k, f):
            continue
        pa = m.marginals[k][f]
        ok = np.flatnonzero(pa > 0)
        probs.append(pa[ok])
        posts.append(m.posteriors[k][f][ok])
        acts.append((ok, m.schema.action_counts[k]))
    return probs, posts, acts


def grid_search(m: EstimatedModel, f: int = 0, step: float = GRID_STEP, chunk: int = 200_000) -> GridResult:
    """Search utilities on a grid for one satisfying both conditions non-trivially.

    Per-state shifts leave both conditions unchanged, so each state's row is
    taken with minimum zero; a row with positive maximum makes the utility
    non-constant. Evaluates actions (not merged signals) directly from the
    posterior tables.
    """
    probs, posts, acts = _frame_tables(m, f)
    if not probs:
        return GridResult(True, None, 0)
    X = m.X
    A = max(n for _, n in acts)
    rows = _state_rows(A, step)
    R = rows.shape[0]
    total = R**X
    best = -np.inf
    n_nias = 0
    K = len(probs)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = np.stack([(idx // R**i) % R for i in range(X)], axis=1)  # (C, X)
        U = rows[digits]  # (C, X, A)
        nontrivial = np.any(U.max(axis=2) > 0, axis=1)
        ok = nontrivial.copy()
        evs = []
        for k in range(K):
            ev = np.einsum("sx,cxa->csa", posts[k], U)  # (C, S, A)
            chosen, Ak = acts[k]
            own = ev[:, np.arange(chosen.size), chosen]
            ok &= np.all(own[:, :, None] - ev[:, :, :Ak] >= -_GRID_TOL, axis=(1, 2))
            evs.append(ev)
        if K > 1:
            cyc = np.zeros(idx.size)
            for k in range(K):
                nxt = (k + 1) % K
                _, Ak = acts[k]
                chosen, _ = acts[k]
                own = evs[k][:, np.arange(chosen.size), chosen] @ probs[k]
                cross = evs[nxt][:, :, :Ak].max(axis=2) @ probs[nxt]
                cyc += own - cross
            if ok.any():
                best = max(best, float(cyc[ok].max()))
            n_nias += int(ok.sum())
            ok &= cyc >= -_GRID_TOL
        else:
            n_nias += int(ok.sum())
            if ok.any():
                best = 0.0
        if ok.any():
            c = int(np.flatnonzero(ok)[0])
            return GridResult(True, U[c], int(start + c + 1), best, n_nias)
    return GridResult(False, None, total, best, n_nias)


@dataclass(frozen=True)
class LPCertificate:
    rationalizable: bool
    best_cyclic_sum: float  # max over normalizations of the best cyclic surplus (-inf if NIAS alone fails)
    nias_feasible: bool


def lp_certify(m: EstimatedModel, f: int = 0) -> LPCertificate:
    """Decide the frame with continuous LPs solved by HiGHS.

    Under the action-switch inequalities the own maxima are linear, and the
    cross maxima enter the surplus with a negative sign, so epigraph
    variables make "maximize the cyclic surplus" a plain LP. Each ordered
    triple ``(x, a, b)`` with ``u(x,a) = 1, u(x,b) = 0`` is one LP.
    """
    probs, posts, acts = _frame_tables(m, f)
    X = m.X
    A = max(n for _, n in acts)
    K = len(probs)
    nu = X * A

    def uidx(x, b):
        return x * A + b

    # epigraph variables for each (k, signal) cross maximum
    ep = []
    for k in range(K):
        nxt = (k + 1) % K
        ep.append([nu + sum(len(p) for p in probs[:nxt]) + s for s in range(len(probs[nxt]))])
    nvar = nu + sum(len(p) for p in probs)
    A_ub, b_ub = [], []
    for k in range(K):
        chosen, Ak = acts[k]
        for s, a in enumerate(chosen):
            for b in range(Ak):
                row = np.zeros(nvar)
                for x in range(X):
                    row[uidx(x, b)] += posts[k][s, x]
                    row[uidx(x, a)] -= posts[k][s, x]
                A_ub.append(row)
                b_ub.append(0.0)
    if K > 1:
        for k in range(K):
            nxt = (k + 1) % K
            _, Ak = acts[k]
            for s in range(len(probs[nxt])):
                for b in range(Ak):
                    row = np.zeros(nvar)
                    for x in range(X):
                        row[uidx(x, b)] += posts[nxt][s, x]
                    row[ep[k][s]] = -1.0
                    A_ub.append(row)
                    b_ub.append(0.0)
    c = np.zeros(nvar)  # minimize -(surplus)
    if K > 1:
        for k in range(K):
            nxt = (k + 1) % K
            chosen, _ = acts[k]
            for s, a in enumerate(chosen):
                for x in range(X):
                    c[uidx(x, a)] -= probs[k][s] * posts[k][s, x]
            for s in range(len(probs[nxt])):
                c[ep[k][s]] += probs[nxt][s]
    A_ub = np.asarray(A_ub).reshape(-1, nvar)
    b_ub = np.asarray(b_ub)
    best = -np.inf
    any_nias = False
    for x in range(X):
        for a, b in itertools.permutations(range(A), 2):
            bounds = [(0.0, 1.0)] * nu + [(None, None)] * (nvar - nu)
            bounds[uidx(x, a)] = (1.0, 1.0)
            bounds[uidx(x, b)] = (0.0, 0.0)
            r = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
            if r.status != 0:
                continue
            any_nias = True
            best = max(best, -float(r.fun))
    return LPCertificate(any_nias and best >= -1e-9, best, any_nias)


# --------------------------------------------------------------------------
# Violating datasets
# --------------------------------------------------------------------------


def gen_violation(
    kind: str,
    seed: int,
    spec: AgentSpec | None = None,
    margin: float = 1e-3,
    max_tries: int = 2000,
) -> EstimatedModel:
    """Build an exact-probability dataset that no non-constant utility rationalizes.

    ``nias``: two problems with the same actions and attention, where the
    second problem relabels actions by a derangement, so the revealed
    posteriors demand opposite preferences. ``niac``: two problems with
    nested action sets (a cyclic violation is impossible when all problems
    offer the same actions, because the cyclic sum is then identically zero);
    policies are redrawn until some utility satisfies the action-switch
    inequalities but every such utility leaves a cyclic surplus below
    ``-margin``.

    Every returned dataset is certified twice: by the HiGHS LP route and by
    exhaustive search over the 0.05 utility grid.
    """
    rng = np.random.default_rng(seed)
    if kind == "nias":
        spec = spec or AgentSpec(2, (2, 2))
        if max(spec.actions) < 2:
            raise SimulationError("no violation is constructible with a single action")
        if spec.K < 2 or len(set(spec.actions)) != 1:
            raise SimulationError("nias fixtures need at least two problems with equal action sets")
    elif kind == "niac":
        spec = spec or AgentSpec(2, (2, 3))
        if max(spec.actions) < 2:
            raise SimulationError("no violation is constructible with a single action")
        if len(set(spec.actions)) < 2:
            raise SimulationError("niac fixtures need problems with different action sets")
    else:
        raise ValueError(f"unknown violation kind {kind!r}")
    X = spec.states
    for _ in range(max_tries):
        prior = rng.dirichlet(np.ones(X))
        if kind == "nias":
            A = spec.actions[0]
            base = rng.dirichlet(np.ones(A), size=X)
            perm = _derangement(rng, A)
            pols = [base] + [base[:, perm] for _ in range(spec.K - 1)]
        else:
            pols = [rng.dirichlet(np.ones(A), size=X) for A in spec.actions]
        pols = [np.round(p, 3) for p in pols]
        pols = [p / p.sum(axis=1, keepdims=True) for p in pols]
        if any(np.any(p <= 0) for p in pols):
            continue
        m = model_from_policies(prior, [p[None] for p in pols], spec.schema())
        cert = lp_certify(m)
        if cert.rationalizable:
            continue
        if kind == "niac" and not (cert.nias_feasible and cert.best_cyclic_sum < -margin):
            continue
        grid = grid_search(m)
        if grid.feasible:
            continue
        if kind == "niac" and grid.nias_feasible == 0:
            continue
        return m
    raise SimulationError(f"could not construct a certified {kind} violation in {max_tries} draws")


def _derangement(rng: np.random.Generator, n: int) -> NDArray[np.int64]:
    while True:
        p = rng.permutation(n)
        if np.all(p != np.arange(n)):
            return p
