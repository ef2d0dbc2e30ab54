"""Revealed-preference test for rational inattention.

Per frame, a dataset is rationalizable when some utility ``u(x, a)`` in
[0, 1], not constant across actions, makes every chosen action optimal
under its revealed posterior (no improving action switches) and makes the
observed attention strategies cyclically optimal across decision problems
(no improving attention cycles). Both conditions are encoded as a
mixed-integer program with big-M argmax indicators and decided by
:func:`inattention.lp.solve_milp`.

Problems and actions are 0-based here; action ``b`` means the same thing in
every decision problem that offers it (problem ``k`` offers ``0..A_k-1``).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from .dataset import EstimatedModel, signal_probabilities
from .lp import LinearProgram, MixedIntegerProgram, SolveResult, solve_lp, solve_milp

logger = logging.getLogger(__name__)

TAU_TEST = 1e-7
BIG_M = 10.0
SLACK_FLOOR = 1e-6

RATIONALIZABLE = "rationalizable"
NOT_RATIONALIZABLE = "not-rationalizable"
UNDECIDED = "undecided"


# --------------------------------------------------------------------------
# Per-frame view of the revealed data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Signal:
    action: int  # representative (first) action inducing this posterior
    actions: tuple[int, ...]
    posterior: NDArray[np.float64]
    prob: float


@dataclass(frozen=True)
class FrameData:
    """Revealed signals of the complete problems in one frame."""

    frame: int
    problems: tuple[int, ...]
    action_counts: tuple[int, ...]
    signals: tuple[tuple[_Signal, ...], ...]
    prior: NDArray[np.float64]

    @property
    def n_actions(self) -> int:
        return max(self.action_counts) if self.action_counts else 0


def frame_data(m: EstimatedModel, f: int) -> tuple[FrameData, list[int]]:
    """Collect the signals of every complete problem in frame ``f``.

    Returns the data and the list of problems skipped because some state
    has no observation in this frame.
    """
    m.require_posteriors()
    problems, counts, sigs, skipped = [], [], [], []
    for k in range(m.K):
        if not m.complete(k, f):
            skipped.append(k)
            continue
        idx = m.signal_of_action[k][f]
        probs = signal_probabilities(m, k, f)
        row = []
        for s, post in enumerate(m.signal_sets[k][f]):
            acts = tuple(int(a) for a in np.flatnonzero(idx == s))
            row.append(_Signal(acts[0], acts, post, float(probs[s])))
        problems.append(k)
        counts.append(m.schema.action_counts[k])
        sigs.append(tuple(row))
    return FrameData(f, tuple(problems), tuple(counts), tuple(sigs), m.prior), skipped


# --------------------------------------------------------------------------
# Direct checks of a given utility
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NiasReport:
    frame: int
    passed: bool
    violations: tuple[tuple[int, int, int, float], ...]  # (k, a, b, slack)
    min_slack: float


def check_nias(m: EstimatedModel, u: NDArray[np.float64], tol: float = TAU_TEST) -> list[NiasReport]:
    """Check that each chosen action is optimal under its posterior.

    ``u`` has shape ``(N, X, A_max)``. For every frame, problem ``k``, action
    ``a`` with positive marginal and alternative ``b`` in the same problem the
    slack ``sum_x p_k(x|a,f) [u(x,a,f) - u(x,b,f)]`` must be at least ``-tol``.
    """
    u = _as_utility(m, u)
    reports = []
    for f in range(m.N):
        viol, worst = [], np.inf
        for k in range(m.K):
            if not m.complete(k, f):
                continue
            post = m.posteriors[k][f]
            pa = m.marginals[k][f]
            A = m.schema.action_counts[k]
            for a in range(A):
                if not pa[a] > 0:
                    continue
                ev = post[a] @ u[f, :, :A]
                slack = ev[a] - ev
                worst = min(worst, float(slack.min()))
                for b in np.flatnonzero(slack < -tol):
                    viol.append((k, a, int(b), float(slack[b])))
        reports.append(NiasReport(f, not viol, tuple(viol), worst if np.isfinite(worst) else 0.0))
    return reports


@dataclass(frozen=True)
class AttentionValueMatrix:
    """``values[i, j]``: attention strategy of problem ``problems[i]`` used with
    the action set of problem ``problems[j]``, for one frame."""

    frame: int
    problems: tuple[int, ...]
    values: NDArray[np.float64]

    @property
    def K(self) -> int:
        return len(self.problems)


def compute_G(m: EstimatedModel, u: NDArray[np.float64], f: int) -> AttentionValueMatrix:
    """Expected gross utility of every (strategy, action set) pairing in frame ``f``."""
    u = _as_utility(m, u)
    fd, _ = frame_data(m, f)
    return attention_values(fd, u[f])


def attention_values(fd: FrameData, uf: NDArray[np.float64]) -> AttentionValueMatrix:
    K = len(fd.problems)
    G = np.zeros((K, K))
    for i in range(K):
        for j in range(K):
            Aw = fd.action_counts[j]
            G[i, j] = sum(s.prob * float(np.max(s.posterior @ uf[:, :Aw])) for s in fd.signals[i])
    return AttentionValueMatrix(fd.frame, fd.problems, G)


@dataclass(frozen=True)
class NiacReport:
    passed: bool
    cyclic_sum: float
    shift_sums: tuple[float, ...]  # shift j = 1..K-1; j = 1 is the printed cycle

    @property
    def all_shifts_pass(self) -> bool:
        return all(s >= -TAU_TEST for s in self.shift_sums)


def check_niac(G: AttentionValueMatrix | NDArray[np.float64], tol: float = TAU_TEST) -> NiacReport:
    """Evaluate ``sum_k G[k,k] - G[k+1,k]`` (indices mod K) against ``-tol``.

    Every shift ``j`` (strategy ``k+j`` in problem ``k``) is also reported;
    only ``j = 1`` decides ``passed``.
    """
    V = G.values if isinstance(G, AttentionValueMatrix) else np.asarray(G, dtype=float)
    K = V.shape[0]
    if K <= 1:
        return NiacReport(True, 0.0, ())
    idx = np.arange(K)
    shifts = tuple(float(np.sum(V[idx, idx] - V[(idx + j) % K, idx])) for j in range(1, K))
    return NiacReport(shifts[0] >= -tol, shifts[0], shifts)


# --------------------------------------------------------------------------
# Mixed-integer program
# --------------------------------------------------------------------------


@dataclass
class RationalityProgram:
    """The constraint set for one or more frames plus variable bookkeeping.

    ``u_var[(f, x, b)]`` indexes utilities; ``m_var``/``n_var`` index the
    own/cross expected-utility maxima keyed ``(f, i, s)`` with ``i`` the
    position of the problem in the frame; ``delta``/``zeta`` are keyed
    ``(f, i, s, b)``.
    """

    lp: LinearProgram
    frames: dict[int, FrameData]
    u_var: dict[tuple[int, int, int], int] = field(default_factory=dict)
    m_var: dict[tuple[int, int, int], int] = field(default_factory=dict)
    n_var: dict[tuple[int, int, int], int] = field(default_factory=dict)
    delta: dict[tuple[int, int, int, int], int] = field(default_factory=dict)
    zeta: dict[tuple[int, int, int, int], int] = field(default_factory=dict)
    nias_rows: dict[int, list[int]] = field(default_factory=dict)

    @property
    def binaries(self) -> tuple[int, ...]:
        return tuple(self.delta.values()) + tuple(self.zeta.values())

    def milp(self) -> MixedIntegerProgram:
        return MixedIntegerProgram(self.lp, self.binaries)

    def nias_expr(self, f: int) -> dict[int, float]:
        """Sum of all NIAS slacks of frame ``f`` as a linear expression in ``u``."""
        expr: dict[int, float] = {}
        fd = self.frames[f]
        for i, sigs in enumerate(fd.signals):
            A = fd.action_counts[i]
            for s in sigs:
                for b in range(A):
                    for x, w in enumerate(s.posterior):
                        if w == 0.0:
                            continue
                        ua, ub = self.u_var[(f, x, s.action)], self.u_var[(f, x, b)]
                        expr[ua] = expr.get(ua, 0.0) + w
                        expr[ub] = expr.get(ub, 0.0) - w
        return {j: c for j, c in expr.items() if c != 0.0}

    def argmax_heuristic(self, x: NDArray[np.float64]) -> dict[int, float]:
        """Set each indicator to the exact argmax implied by the relaxed ``u``."""
        fix: dict[int, float] = {}
        for (table, store) in ((self.delta, "own"), (self.zeta, "cross")):
            groups: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
            for (f, i, s, b), j in table.items():
                groups.setdefault((f, i, s), []).append((b, j))
            for (f, i, s), items in groups.items():
                fd = self.frames[f]
                i_sig = i if store == "own" else (i + 1) % len(fd.problems)
                post = fd.signals[i_sig][s].posterior
                vals = [sum(post[xx] * x[self.u_var[(f, xx, b)]] for xx in range(post.size)) for b, _ in items]
                best = int(np.argmax(vals))
                for r, (_, j) in enumerate(items):
                    fix[j] = 1.0 if r == best else 0.0
        return fix

    def utility(self, x: NDArray[np.float64], N: int, X: int, A: int) -> NDArray[np.float64]:
        u = np.full((N, X, A), np.nan)
        for (f, xx, b), j in self.u_var.items():
            u[f, xx, b] = x[j]
        return u


def build_program(
    m: EstimatedModel, frames: Sequence[int] | None = None, big_m: float = BIG_M
) -> RationalityProgram:
    """Assemble the utility-recovery constraint set for the given frames.

    Per frame: ``u in [0,1]``; no improving action switches; the own and
    cross expected-utility maxima linearized with big-M indicators (one
    indicator set per revealed signal, since actions sharing a posterior
    have identical expected utilities); and the cyclic attention surplus
    ``sum_k p_k(s) m_k(s) - sum_k p_{k+1}(s) n_{k+1}(s) >= 0``.

    The row ``m_k(s) <= E_s[u(x, a_s)]`` is implied by the other rows (the
    chosen action attains the maximum) and is added to tighten the
    relaxation.
    """
    frames = list(range(m.N)) if frames is None else list(frames)
    lp = LinearProgram()
    prog = RationalityProgram(lp, {})
    for f in frames:
        fd, _ = frame_data(m, f)
        prog.frames[f] = fd
        if not fd.problems:
            continue
        X = m.X
        for x in range(X):
            for b in range(fd.n_actions):
                prog.u_var[(f, x, b)] = lp.add_variable(f"u[f{f + 1},x{x + 1},a{b + 1}]", 0.0, 1.0)

        def ev(post, b, f=f):
            return {prog.u_var[(f, x, b)]: float(w) for x, w in enumerate(post) if w != 0.0}

        prog.nias_rows[f] = []
        K = len(fd.problems)
        for i, sigs in enumerate(fd.signals):
            A = fd.action_counts[i]
            k = fd.problems[i]
            for si, s in enumerate(sigs):
                for a in s.actions:
                    for b in range(A):
                        if b == a:
                            continue
                        row = _combine(ev(s.posterior, a), ev(s.posterior, b), -1.0)
                        prog.nias_rows[f].append(
                            lp.add_constraint(row, ">=", 0.0, f"nias[f{f + 1},k{k + 1},a{a + 1},b{b + 1}]")
                        )
        if K < 2:
            continue
        for i, sigs in enumerate(fd.signals):
            k = fd.problems[i]
            A = fd.action_counts[i]
            for si, s in enumerate(sigs):
                mv = lp.add_variable(f"m[f{f + 1},k{k + 1},s{si + 1}]", -big_m, big_m)
                prog.m_var[(f, i, si)] = mv
                _argmax_rows(lp, prog.delta, (f, i, si), mv, s.posterior, range(A), ev, big_m, "delta")
                lp.add_constraint(_combine({mv: 1.0}, ev(s.posterior, s.action), -1.0), "<=", 0.0,
                                  f"own-cut[f{f + 1},k{k + 1},s{si + 1}]")
        for i in range(K):
            # strategy of problem i+1 evaluated with problem i's actions
            nxt = (i + 1) % K
            A = fd.action_counts[i]
            for si, s in enumerate(fd.signals[nxt]):
                nv = lp.add_variable(f"n[f{f + 1},k{fd.problems[nxt] + 1},s{si + 1}]", -big_m, big_m)
                prog.n_var[(f, i, si)] = nv
                _argmax_rows(lp, prog.zeta, (f, i, si), nv, s.posterior, range(A), ev, big_m, "zeta")
        surplus: dict[int, float] = {}
        for i in range(K):
            nxt = (i + 1) % K
            for si, s in enumerate(fd.signals[i]):
                surplus[prog.m_var[(f, i, si)]] = s.prob
            for si, s in enumerate(fd.signals[nxt]):
                j = prog.n_var[(f, i, si)]
                surplus[j] = surplus.get(j, 0.0) - s.prob
        lp.add_constraint(surplus, ">=", 0.0, f"niac[f{f + 1}]")
    return prog


def _combine(a: dict[int, float], b: dict[int, float], sb: float) -> dict[int, float]:
    out = dict(a)
    for j, c in b.items():
        out[j] = out.get(j, 0.0) + sb * c
    return {j: c for j, c in out.items() if c != 0.0}


def _argmax_rows(lp, store, key, var, post, actions, ev, big_m, tag) -> None:
    f, i, si = key
    inds = []
    for b in actions:
        d = lp.add_variable(f"{tag}[f{f + 1},i{i + 1},s{si + 1},b{b + 1}]", 0.0, 1.0)
        store[(f, i, si, b)] = d
        inds.append(d)
        e = ev(post, b)
        lp.add_constraint(_combine({var: 1.0}, e, -1.0), ">=", 0.0)
        row = _combine({var: 1.0}, e, -1.0)
        row[d] = big_m
        lp.add_constraint(row, "<=", big_m)
    lp.add_constraint({d: 1.0 for d in inds}, "==", 1.0)


# --------------------------------------------------------------------------
# Decision procedure
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameVerdict:
    frame: int
    verdict: str
    problems: tuple[int, ...]
    skipped_problems: tuple[int, ...]
    u: NDArray[np.float64] | None  # (X, A_max) witness
    G: AttentionValueMatrix | None
    niac: NiacReport | None
    nias: NiasReport | None
    auxiliaries: dict[str, dict[str, float]] = field(default_factory=dict)
    normalization: str = ""
    nodes: int = 0
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class UtilityEstimate:
    """Verdict and witness utility ``u[f, x, a]`` (NaN where a frame has no witness)."""

    u: NDArray[np.float64]
    frames: tuple[FrameVerdict, ...]

    @property
    def verdict(self) -> str:
        verdicts = {fv.verdict for fv in self.frames if fv.problems}
        if NOT_RATIONALIZABLE in verdicts:
            return NOT_RATIONALIZABLE
        if UNDECIDED in verdicts:
            return UNDECIDED
        return RATIONALIZABLE

    @property
    def rationalizable(self) -> bool:
        return self.verdict == RATIONALIZABLE

    def to_dict(self) -> dict[str, Any]:
        out = {"verdict": self.verdict, "frames": {}}
        for fv in self.frames:
            d: dict[str, Any] = {
                "verdict": fv.verdict,
                "problems": [k + 1 for k in fv.problems],
                "skipped_problems": [k + 1 for k in fv.skipped_problems],
                "normalization": fv.normalization,
                "nodes": fv.nodes,
                "notes": list(fv.notes),
            }
            if fv.u is not None:
                d["utility"] = {
                    str(x + 1): {str(a + 1): float(v) for a, v in enumerate(row)}
                    for x, row in enumerate(fv.u)
                }
            if fv.G is not None:
                d["G"] = [[float(v) for v in row] for row in fv.G.values]
            if fv.niac is not None:
                d["niac_cyclic_sum"] = fv.niac.cyclic_sum
                d["niac_shift_sums"] = list(fv.niac.shift_sums)
            if fv.nias is not None:
                d["nias_violations"] = [
                    {"k": k + 1, "a": a + 1, "b": b + 1, "slack": s} for k, a, b, s in fv.nias.violations
                ]
            if fv.auxiliaries:
                d["auxiliaries"] = fv.auxiliaries
            out["frames"][str(fv.frame + 1)] = d
        return out


def test_rational_inattention(
    m: EstimatedModel,
    node_limit: int = 20000,
    max_binaries: int = 64,
    big_m: float = BIG_M,
) -> UtilityEstimate:
    """Decide rational inattention frame by frame and return a witness utility.

    Any action-constant utility satisfies every inequality trivially, so a
    frame is declared rationalizable only if a utility that separates some
    pair of actions in some state is feasible. This is searched in two
    steps: first by maximizing the total action-switch slack (a positive
    optimum rules out constant utilities), then, if the optimum is zero, with ``u(x,a) = 1`` and ``u(x,b) = 0`` fixed for each
    ordered triple ``(x, a, b)`` in turn (per-state shifts and a common
    rescaling make this choice without loss of generality).
    """
    results = []
    A_max = m.schema.max_actions
    u_all = np.full((m.N, m.X, A_max), np.nan)
    for f in range(m.N):
        fv = _decide_frame(m, f, node_limit, max_binaries, big_m)
        results.append(fv)
        if fv.u is not None:
            u_all[f, :, : fv.u.shape[1]] = fv.u
    return UtilityEstimate(u_all, tuple(results))


test_rational_inattention.__test__ = False  # keep pytest from collecting it


def _decide_frame(m: EstimatedModel, f: int, node_limit: int, max_binaries: int, big_m: float) -> FrameVerdict:
    prog = build_program(m, [f], big_m)
    fd = prog.frames[f]
    _, skipped = frame_data(m, f)
    notes = [f"problem k={k + 1} skipped: unobserved state in frame {f + 1}" for k in skipped]
    if not fd.problems:
        return FrameVerdict(f, RATIONALIZABLE, (), tuple(skipped), None, None, None, None,
                            notes=tuple(notes + ["no complete problem; nothing to test"]))
    if len(prog.binaries) > max_binaries:
        raise ValueError(
            f"frame {f + 1} needs {len(prog.binaries)} indicator variables, above the cap of {max_binaries}"
        )
    lp = prog.lp
    if fd.n_actions < 2:
        res = solve_milp(prog.milp(), node_limit, max_binaries, heuristic=prog.argmax_heuristic)
        return _finish(m, prog, f, res, "single action: every utility is trivial", skipped, notes)

    attempts: list[tuple[str, dict[int, float] | None, tuple[int, int, int] | None]] = [
        ("nias-slack", prog.nias_expr(f), None)
    ]
    for x in range(m.X):
        for a, b in itertools.permutations(range(fd.n_actions), 2):
            attempts.append((f"u(x={x + 1},a={a + 1})=1, u(x={x + 1},a={b + 1})=0", None, (x, a, b)))

    nodes = 0
    saw_undecided = False
    for label, expr, pair in attempts:
        lo, hi = list(lp.lower), list(lp.upper)
        saved_obj = (lp.objective, lp.maximize)
        if expr is not None:
            if not expr:
                continue
            lp.set_objective(expr, maximize=True)
        else:
            x, a, b = pair
            ja, jb = prog.u_var[(f, x, a)], prog.u_var[(f, x, b)]
            lp.lower[ja] = 1.0
            lp.upper[jb] = 0.0
        try:
            res = solve_milp(prog.milp(), node_limit, max_binaries, heuristic=prog.argmax_heuristic)
        finally:
            lp.lower, lp.upper = lo, hi
            lp.objective, lp.maximize = saved_obj
        nodes += res.nodes
        if res.status == "feasible" and (expr is None or res.objective >= SLACK_FLOOR):
            fv = _finish(m, prog, f, res, label, skipped, notes)
            return _with_nodes(fv, nodes)
        if res.status == "undecided":
            saw_undecided = True
    verdict = UNDECIDED if saw_undecided else NOT_RATIONALIZABLE
    return FrameVerdict(f, verdict, fd.problems, tuple(skipped), None, None, None, None,
                        normalization="exhausted", nodes=nodes, notes=tuple(notes))


def _with_nodes(fv: FrameVerdict, nodes: int) -> FrameVerdict:
    from dataclasses import replace

    return replace(fv, nodes=nodes)


def _finish(m, prog, f, res: SolveResult, label, skipped, notes) -> FrameVerdict:
    fd = prog.frames[f]
    if res.status != "feasible":
        verdict = UNDECIDED if res.status == "undecided" else NOT_RATIONALIZABLE
        return FrameVerdict(f, verdict, fd.problems, tuple(skipped), None, None, None, None,
                            normalization=label, nodes=res.nodes, notes=tuple(notes))
    u = prog.utility(res.x, m.N, m.X, fd.n_actions)[f]
    full = np.zeros((m.N, m.X, m.schema.max_actions))
    full[f, :, : fd.n_actions] = u
    nias = check_nias(m, full)[f]
    G = attention_values(fd, u)
    niac = check_niac(G)
    notes = list(notes)
    verdict = RATIONALIZABLE
    if not nias.passed or not niac.passed:
        verdict = UNDECIDED
        notes.append("solver witness failed the substitute-back check")
    # the solver form of the cyclic surplus uses the indicator-selected maxima
    aux = _auxiliaries(prog, f, res.x)
    surplus = sum(aux["surplus"].values()) if aux.get("surplus") else 0.0
    if abs(surplus - niac.cyclic_sum) > 1e-6:
        notes.append(f"solver surplus {surplus:.3g} differs from G-form sum {niac.cyclic_sum:.3g}")
    if not niac.all_shifts_pass:
        notes.append("some non-adjacent shift of attention strategies has negative surplus")
    return FrameVerdict(f, verdict, fd.problems, tuple(skipped), u, G, niac, nias,
                        auxiliaries=aux, normalization=label, nodes=res.nodes, notes=tuple(notes))


def _auxiliaries(prog: RationalityProgram, f: int, x: NDArray[np.float64]) -> dict[str, dict[str, float]]:
    fd = prog.frames[f]
    out: dict[str, dict[str, float]] = {"m": {}, "n": {}, "delta": {}, "zeta": {}, "surplus": {}}
    K = len(fd.problems)
    for (ff, i, si), j in prog.m_var.items():
        if ff == f:
            k = fd.problems[i]
            out["m"][f"k{k + 1},s{si + 1}"] = float(x[j])
    for (ff, i, si), j in prog.n_var.items():
        if ff == f:
            k = fd.problems[(i + 1) % K]
            out["n"][f"k{k + 1},s{si + 1}|A{fd.problems[i] + 1}"] = float(x[j])
    for name, table in (("delta", prog.delta), ("zeta", prog.zeta)):
        for (ff, i, si, b), j in table.items():
            if ff == f:
                out[name][f"i{i + 1},s{si + 1},b{b + 1}"] = float(round(x[j]))
    for i in range(K if K > 1 else 0):
        nxt = (i + 1) % K
        own = sum(s.prob * x[prog.m_var[(f, i, si)]] for si, s in enumerate(fd.signals[i]))
        cross = sum(s.prob * x[prog.n_var[(f, i, si)]] for si, s in enumerate(fd.signals[nxt]))
        out["surplus"][f"k{fd.problems[i] + 1}"] = float(own - cross)
    return out


# --------------------------------------------------------------------------
# Ordinal information cost
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InformationCostEstimate:
    problems: tuple[int, ...]
    cost: NDArray[np.float64]
    anchor: int | None = None
    bounds: NDArray[np.float64] | None = None  # (K, 2) interval implied by the anchor
    feasible: bool = True

    def satisfies(self, G: AttentionValueMatrix, tol: float = TAU_TEST) -> bool:
        V = G.values
        C = self.cost
        ok = bool(np.all(C >= -tol))
        for k in range(V.shape[0]):
            for w in range(V.shape[0]):
                ok &= bool(V[k, k] - V[w, k] >= C[k] - C[w] - tol)
        return ok


def recover_information_cost(
    G: AttentionValueMatrix | NDArray[np.float64], anchor: int | None = None
) -> InformationCostEstimate:
    """Find costs ``C_k >= 0`` with ``G[k,k] - G[w,k] >= C_k - C_w`` for all pairs.

    With ``anchor`` (a 0-based position) the anchor's cost is fixed to zero
    and each other cost gets the interval ``[G[k,w0] - G[w0,w0], G[k,k] - G[w0,k]]``.
    The returned point minimizes total cost, which makes it unique enough to
    be reproducible.
    """
    if isinstance(G, AttentionValueMatrix):
        V, problems = G.values, G.problems
    else:
        V = np.asarray(G, dtype=float)
        problems = tuple(range(V.shape[0]))
    K = V.shape[0]
    lp = LinearProgram()
    c = [lp.add_variable(f"C{k + 1}", 0.0) for k in range(K)]
    for k in range(K):
        for w in range(K):
            if k != w:
                lp.add_constraint({c[k]: 1.0, c[w]: -1.0}, "<=", float(V[k, k] - V[w, k]))
    bounds = None
    if anchor is not None:
        if not 0 <= anchor < K:
            raise ValueError(f"anchor {anchor} outside 0..{K - 1}")
        lp.add_constraint({c[anchor]: 1.0}, "==", 0.0)
        bounds = np.array([[V[k, anchor] - V[anchor, anchor], V[k, k] - V[anchor, k]] for k in range(K)])
        bounds[anchor] = 0.0
    lp.set_objective({j: 1.0 for j in c})
    res = solve_lp(lp)
    if not res.feasible:
        logger.warning("information cost program infeasible; attention values are inconsistent")
        return InformationCostEstimate(problems, np.full(K, np.nan), anchor, bounds, False)
    return InformationCostEstimate(problems, np.maximum(res.x, 0.0), anchor, bounds, True)


def _as_utility(m: EstimatedModel, u) -> NDArray[np.float64]:
    u = np.asarray(u, dtype=float)
    if u.ndim == 2:
        u = np.broadcast_to(u, (m.N,) + u.shape)
    if u.ndim != 3 or u.shape[0] != m.N or u.shape[1] != m.X or u.shape[2] < m.schema.max_actions:
        raise ValueError(
            f"utility must have shape (N, X, A_max) = ({m.N}, {m.X}, {m.schema.max_actions}); got {u.shape}"
        )
    return u


# --------------------------------------------------------------------------
# Rényi-cost variant
# --------------------------------------------------------------------------


def renyi_constrained_test(
    m: EstimatedModel,
    beta: float,
    form: str = "printed",
    lambda_floor: float = 1e-6,
    lambda_cap: float = 1e6,
    node_limit: int = 20000,
    max_binaries: int = 64,
    big_m: float = BIG_M,
) -> UtilityEstimate:
    """Utility recovery with the Rényi multiplier equalities added per problem.

    Each complete problem ``k`` gets its own ``lambda1_k >= lambda_floor`` and
    either a free offset ``lambda2_k`` (printed form) or free per-state
    offsets ``nu_k(x)`` (stationarity form). Cells with zero probability
    carry no equality. A positive ``lambda1`` already rules out constant
    utilities whenever the features vary, so no separate normalization is
    applied; the total of the ``lambda1`` is maximized (up to ``lambda_cap``)
    so the witness uses the whole unit range.
    """
    from dataclasses import replace

    from .renyi import JointDistribution, information_gradient, printed_features

    results = []
    u_all = np.full((m.N, m.X, m.schema.max_actions), np.nan)
    for f in range(m.N):
        prog = build_program(m, [f], big_m)
        fd = prog.frames[f]
        _, skipped = frame_data(m, f)
        notes = [f"problem k={k + 1} skipped: unobserved state in frame {f + 1}" for k in skipped]
        if not fd.problems:
            results.append(FrameVerdict(f, RATIONALIZABLE, (), tuple(skipped), None, None, None, None,
                                        notes=tuple(notes)))
            continue
        lp = prog.lp
        lam_vars: dict[str, int] = {}
        for i, k in enumerate(fd.problems):
            A = fd.action_counts[i]
            joint = m.prior[:, None] * m.policies[k][f]
            j = JointDistribution(joint / joint.sum())
            tag = f"k{k + 1}"
            l1 = lam_vars[f"lambda1[{tag}]"] = lp.add_variable(f"lambda1[{tag}]", lambda_floor, lambda_cap)
            if form == "printed":
                feat, _ = printed_features(j, beta)
                l2 = lam_vars[f"lambda2[{tag}]"] = lp.add_variable(f"lambda2[{tag}]", -np.inf)
                offsets = {x: l2 for x in range(m.X)}
                sign = 1.0
            else:
                feat = information_gradient(j, beta)
                offsets = {}
                for x in range(m.X):
                    offsets[x] = lam_vars[f"nu[{tag},x{x + 1}]"] = lp.add_variable(f"nu[{tag},x{x + 1}]", -np.inf)
                sign = -1.0
            for x in range(m.X):
                for a in range(A):
                    if not j.p[x, a] > 0:
                        notes.append(f"cell k={k + 1} x={x + 1} a={a + 1} has zero probability; no equality")
                        continue
                    row = {prog.u_var[(f, x, a)]: 1.0, l1: -float(feat[x, a])}
                    row[offsets[x]] = row.get(offsets[x], 0.0) + sign
                    lp.add_constraint(row, "==", 0.0, f"renyi[{tag},x{x + 1},a{a + 1}]")
        if len(prog.binaries) > max_binaries:
            raise ValueError(f"frame {f + 1} needs {len(prog.binaries)} indicators, above the cap {max_binaries}")
        lp.set_objective({j: 1.0 for name, j in lam_vars.items() if name.startswith("lambda1")}, maximize=True)
        res = solve_milp(prog.milp(), node_limit, max_binaries, heuristic=prog.argmax_heuristic)
        fv = _finish(m, prog, f, res, f"renyi-{form}", skipped, notes)
        if res.status == "feasible":
            aux = dict(fv.auxiliaries)
            aux["renyi"] = {name: float(res.x[j]) for name, j in lam_vars.items()}
            fv = replace(fv, auxiliaries=aux)
            u_all[f, :, : fv.u.shape[1]] = fv.u
        results.append(fv)
    return UtilityEstimate(u_all, tuple(results))
