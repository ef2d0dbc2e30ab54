"""Dense two-phase simplex (Bland's rule) and depth-first branch-and-bound.

Programs are tiny (at most a few hundred columns), so the tableau is kept
dense and anti-cycling is preferred over pivot speed.

Example:
    >>> lp = LinearProgram()
    >>> x = lp.add_variable("x", lower=0.0)
    >>> _ = lp.add_constraint({x: 1.0}, "<=", 3.0)
    >>> lp.set_objective({x: 1.0}, maximize=True)
    >>> res = solve_lp(lp)
    >>> res.status, round(res.assignment["x"], 9)
    ('feasible', 3.0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.typing import NDArray

TAU_LP = 1e-8
_PIVOT_EPS = 1e-9
_RELATIONS = ("<=", "==", ">=")


class SolverError(RuntimeError):
    """Raised when the simplex cannot finish within its pivot budget."""


@dataclass
class LinearProgram:
    """Continuous program ``min/max c.x`` subject to row constraints and bounds.

    Variables are referenced by the integer index returned from
    :meth:`add_variable` (or by name). With no objective the program is
    solved in feasibility mode (minimize 0).
    """

    names: list[str] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    rows: list[dict[int, float]] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    rhs: list[float] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    objective: dict[int, float] | None = None
    maximize: bool = False

    @property
    def n_variables(self) -> int:
        return len(self.names)

    @property
    def n_constraints(self) -> int:
        return len(self.rows)

    def index(self, var: int | str) -> int:
        if isinstance(var, str):
            return self.names.index(var)
        if not 0 <= var < len(self.names):
            raise KeyError(f"unknown variable index {var}")
        return var

    def add_variable(
        self, name: str | None = None, lower: float = 0.0, upper: float = math.inf
    ) -> int:
        if lower > upper:
            raise ValueError(f"variable {name!r}: lower bound {lower} > upper {upper}")
        if lower == math.inf or upper == -math.inf:
            raise ValueError(f"variable {name!r}: bounds must admit a finite value")
        self.names.append(name if name is not None else f"x{len(self.names)}")
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        return len(self.names) - 1

    def add_constraint(
        self,
        coeffs: Mapping[int | str, float],
        relation: str,
        rhs: float,
        label: str = "",
    ) -> int:
        if relation not in _RELATIONS:
            raise ValueError(f"relation must be one of {_RELATIONS}, got {relation!r}")
        row: dict[int, float] = {}
        for var, value in coeffs.items():
            j = self.index(var)
            if not math.isfinite(value):
                raise ValueError(f"non-finite coefficient on {self.names[j]!r}")
            row[j] = row.get(j, 0.0) + float(value)
        self.rows.append(row)
        self.relations.append(relation)
        self.rhs.append(float(rhs))
        self.labels.append(label or f"c{len(self.rows) - 1}")
        return len(self.rows) - 1

    def set_objective(self, coeffs: Mapping[int | str, float], maximize: bool = False) -> None:
        self.objective = {self.index(v): float(c) for v, c in coeffs.items()}
        self.maximize = maximize

    def dense(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Constraint matrix and right-hand side as dense arrays."""
        A = np.zeros((self.n_constraints, self.n_variables))
        for i, row in enumerate(self.rows):
            for j, v in row.items():
                A[i, j] = v
        return A, np.asarray(self.rhs, dtype=float)

    def max_violation(self, x: NDArray[np.float64]) -> float:
        """Largest constraint or bound violation of a point."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        if x.size:
            worst = max(worst, float(np.max(lo - x, initial=0.0)))
            worst = max(worst, float(np.max(x - hi, initial=0.0)))
        if self.n_constraints:
            A, b = self.dense()
            lhs = A @ x
            for rel, l, r in zip(self.relations, lhs, b):
                if rel == "<=":
                    worst = max(worst, l - r)
                elif rel == ">=":
                    worst = max(worst, r - l)
                else:
                    worst = max(worst, abs(l - r))
        return float(worst)

    def objective_value(self, x: NDArray[np.float64]) -> float:
        if not self.objective:
            return 0.0
        return float(sum(c * x[j] for j, c in self.objective.items()))

    def to_lp_format(self, binaries: tuple[int, ...] = ()) -> str:
        """Render in the CPLEX LP text format for cross-checking elsewhere."""

        def term_list(coeffs: Mapping[int, float]) -> str:
            parts = []
            for j, c in sorted(coeffs.items()):
                if c == 0:
                    continue
                sign = "-" if c < 0 else "+"
                parts.append(f"{sign} {abs(c):.17g} {self.names[j]}")
            if not parts:
                return "0 " + (self.names[0] if self.names else "")
            text = " ".join(parts)
            return text[2:] if text.startswith("+ ") else text

        lines = ["\\ generated by inattention.lp"]
        lines.append("Maximize" if self.maximize else "Minimize")
        lines.append(" obj: " + term_list(self.objective or {}))
        lines.append("Subject To")
        rel_txt = {"<=": "<=", ">=": ">=", "==": "="}
        for row, rel, r, lab in zip(self.rows, self.relations, self.rhs, self.labels):
            lines.append(f" {lab}: {term_list(row)} {rel_txt[rel]} {r:.17g}")
        lines.append("Bounds")
        bin_set = set(binaries)
        for j, (name, lo, hi) in enumerate(zip(self.names, self.lower, self.upper)):
            if j in bin_set:
                continue
            lo_s = "-inf" if lo == -math.inf else f"{lo:.17g}"
            hi_s = "+inf" if hi == math.inf else f"{hi:.17g}"
            lines.append(f" {lo_s} <= {name} <= {hi_s}")
        if binaries:
            lines.append("Binary")
            lines.append(" " + " ".join(self.names[j] for j in binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class MixedIntegerProgram:
    base: LinearProgram
    binaries: tuple[int, ...]

    def __post_init__(self) -> None:
        self.binaries = tuple(sorted(set(self.binaries)))
        for j in self.binaries:
            lo, hi = self.base.lower[j], self.base.upper[j]
            if lo < 0.0 or hi > 1.0:
                raise ValueError(
                    f"binary {self.base.names[j]!r} must have bounds within [0, 1], got [{lo}, {hi}]"
                )


@dataclass(frozen=True)
class FarkasCertificate:
    """Multipliers ``y`` with ``y @ A <= 0`` and ``y @ b > 0`` over ``{Ax = b, x >= 0}``.

    ``A`` and ``b`` are the standard-form data the simplex actually worked
    with, so the certificate can be re-checked without the solver.
    """

    y: NDArray[np.float64]
    A: NDArray[np.float64]
    b: NDArray[np.float64]

    def verify(self, tol: float = 1e-7) -> bool:
        lhs = self.y @ self.A
        return bool(np.all(lhs <= tol) and self.y @ self.b > tol)


@dataclass
class SolveResult:
    status: str
    assignment: dict[str, float] = field(default_factory=dict)
    x: NDArray[np.float64] | None = None
    objective: float | None = None
    certificate: FarkasCertificate | None = None
    max_violation: float = 0.0
    nodes: int = 0
    pivots: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


# --------------------------------------------------------------------------
# Standard form
# --------------------------------------------------------------------------


@dataclass
class _StandardForm:
    A: NDArray[np.float64]
    b: NDArray[np.float64]
    c: NDArray[np.float64]
    c0: float
    slack_rows: NDArray[np.int64]  # row index for each slack column, -1 if none
    # x = offset + recover @ y  (y = structural standard-form columns)
    offset: NDArray[np.float64]
    recover: NDArray[np.float64]
    n_struct: int


def _standard_form(
    lp: LinearProgram, lower: NDArray[np.float64], upper: NDArray[np.float64]
) -> _StandardForm:
    n = lp.n_variables
    A0, b0 = lp.dense()
    c_orig = np.zeros(n)
    if lp.objective:
        for j, v in lp.objective.items():
            c_orig[j] = v
    if lp.maximize:
        c_orig = -c_orig

    offset = np.zeros(n)
    cols: list[tuple[int, float]] = []  # (original var, sign)
    ub_rows: list[tuple[int, float]] = []  # (column, bound)
    for j in range(n):
        lo, hi = lower[j], upper[j]
        if lo == hi:
            offset[j] = lo
        elif math.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if math.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))

    n_struct = len(cols)
    recover = np.zeros((n, n_struct))
    for col, (j, sign) in enumerate(cols):
        recover[j, col] = sign

    m_orig = lp.n_constraints
    rows_A = A0 @ recover if m_orig else np.zeros((0, n_struct))
    rows_b = b0 - (A0 @ offset if m_orig else 0.0)
    rels = list(lp.relations)

    if ub_rows:
        extra = np.zeros((len(ub_rows), n_struct))
        for i, (col, bound) in enumerate(ub_rows):
            extra[i, col] = 1.0
        rows_A = np.vstack([rows_A, extra])
        rows_b = np.concatenate([rows_b, [bd for _, bd in ub_rows]])
        rels += ["<="] * len(ub_rows)

    m = rows_A.shape[0]
    n_slack = sum(r != "==" for r in rels)
    A = np.zeros((m, n_struct + n_slack))
    A[:, :n_struct] = rows_A
    slack_rows = np.full(n_slack, -1, dtype=np.int64)
    s = n_struct
    for i, rel in enumerate(rels):
        if rel == "<=":
            A[i, s] = 1.0
        elif rel == ">=":
            A[i, s] = -1.0
        else:
            continue
        slack_rows[s - n_struct] = i
        s += 1
    b = rows_b.astype(float).copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    c = np.zeros(A.shape[1])
    c[:n_struct] = c_orig @ recover
    c0 = float(c_orig @ offset)
    return _StandardForm(A, b, c, c0, slack_rows, offset, recover, n_struct)


# --------------------------------------------------------------------------
# Tableau simplex
# --------------------------------------------------------------------------


def _pivot(T: NDArray[np.float64], r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _bland(
    T: NDArray[np.float64], basis: list[int], allowed: int, budget: list[int]
) -> str:
    """Run Bland-rule pivots on tableau ``T`` (last row = reduced costs).

    Only the first ``allowed`` columns may enter. Returns ``"optimal"`` or
    ``"unbounded"``.
    """
    m = T.shape[0] - 1
    while True:
        d = T[-1, :allowed]
        entering = np.flatnonzero(d < -_PIVOT_EPS)
        if entering.size == 0:
            return "optimal"
        c = int(entering[0])
        col = T[:m, c]
        pos = np.flatnonzero(col > _PIVOT_EPS)
        if pos.size == 0:
            return "unbounded"
        ratios = T[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))
        budget[0] -= 1
        if budget[0] < 0:
            raise SolverError(
                "simplex exceeded its Bland-rule pivot budget; the basis is numerically degenerate"
            )
        _pivot(T, r, c)
        basis[r] = c


def _simplex(sf: _StandardForm, max_pivots: int | None) -> tuple[str, NDArray | None, object, int]:
    A, b = sf.A, sf.b
    m, n = A.shape
    budget = [max_pivots if max_pivots is not None else 50 * (m + n) + 1000]
    start = budget[0]

    # initial basis: +1 slack where available, otherwise an artificial column
    basis_col = np.full(m, -1, dtype=np.int64)
    for s_idx, row in enumerate(sf.slack_rows):
        col = sf.n_struct + s_idx
        if row >= 0 and A[row, col] == 1.0 and basis_col[row] < 0:
            basis_col[row] = col
    art_rows = np.flatnonzero(basis_col < 0)
    n_art = art_rows.size
    T = np.zeros((m + 1, n + n_art + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    for k, row in enumerate(art_rows):
        T[row, n + k] = 1.0
        basis_col[row] = n + k
    basis = [int(v) for v in basis_col]
    init_cols = list(basis)

    # phase 1: minimize the sum of artificials
    cost1 = np.zeros(n + n_art)
    cost1[n:] = 1.0
    T[-1, :-1] = cost1
    T[-1, -1] = 0.0
    for row in art_rows:
        T[-1] -= T[row]
    if n_art:
        _bland(T, basis, n + n_art, budget)
    infeas = -T[-1, -1]
    if infeas > 1e-9 * max(1.0, float(np.abs(b).max(initial=0.0))):
        y = np.array([cost1[init_cols[i]] - T[-1, init_cols[i]] for i in range(m)])
        cert = FarkasCertificate(y=y, A=A.copy(), b=b.copy())
        return "infeasible", None, cert, start - budget[0]

    # drive artificials out of the basis; drop redundant rows
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n:
            nz = np.flatnonzero(np.abs(T[i, :n]) > _PIVOT_EPS)
            if nz.size:
                _pivot(T, i, int(nz[0]))
                basis[i] = int(nz[0])
            else:
                keep[i] = False
    rows = np.flatnonzero(keep)
    T = np.vstack([T[rows][:, list(range(n)) + [T.shape[1] - 1]], np.zeros((1, n + 1))])
    basis = [basis[i] for i in rows]

    # phase 2
    T[-1, :n] = sf.c
    T[-1, -1] = 0.0
    for i, bc in enumerate(basis):
        if sf.c[bc] != 0.0:
            T[-1] -= sf.c[bc] * T[i]
    status = _bland(T, basis, n, budget)
    if status == "unbounded":
        return "unbounded", None, None, start - budget[0]
    y = np.zeros(n)
    for i, bc in enumerate(basis):
        y[bc] = T[i, -1]
    y[np.abs(y) < 1e-13] = 0.0
    return "optimal", y, None, start - budget[0]


def _solve_with_bounds(
    lp: LinearProgram,
    lower: NDArray[np.float64],
    upper: NDArray[np.float64],
    max_pivots: int | None,
) -> SolveResult:
    if np.any(lower > upper + 1e-12):
        return SolveResult(status="infeasible")
    sf = _standard_form(lp, lower, upper)
    status, y, cert, pivots = _simplex(sf, max_pivots)
    if status == "infeasible":
        return SolveResult(status="infeasible", certificate=cert, pivots=pivots)
    if status == "unbounded":
        return SolveResult(status="unbounded", pivots=pivots)
    x = sf.offset + sf.recover @ y[: sf.n_struct]
    x = np.minimum(np.maximum(x, lower), upper)
    res = SolveResult(
        status="feasible",
        x=x,
        assignment=dict(zip(lp.names, map(float, x))),
        objective=lp.objective_value(x) if lp.objective else None,
        pivots=pivots,
    )
    # violation is measured against the node bounds, which include fixings
    saved = lp.lower, lp.upper
    lp.lower, lp.upper = list(lower), list(upper)
    try:
        res.max_violation = lp.max_violation(x)
    finally:
        lp.lower, lp.upper = saved
    return res


def solve_lp(lp: LinearProgram, max_pivots: int | None = None) -> SolveResult:
    """Solve a linear program with the two-phase dense simplex.

    Returns status ``feasible`` (with an optimal assignment when an objective
    is set), ``infeasible`` (with a :class:`FarkasCertificate`) or
    ``unbounded``. Raises :class:`SolverError` if Bland's rule exhausts the
    pivot budget.
    """
    lower = np.asarray(lp.lower, dtype=float)
    upper = np.asarray(lp.upper, dtype=float)
    return _solve_with_bounds(lp, lower, upper, max_pivots)


def solve_milp(
    mp: MixedIntegerProgram,
    node_limit: int = 20000,
    max_binaries: int = 64,
    integrality_tol: float = 1e-9,
    max_pivots: int | None = None,
    heuristic: Callable[[NDArray[np.float64]], Mapping[int, float] | None] | None = None,
) -> SolveResult:
    """Depth-first branch-and-bound over the binaries of ``mp``.

    Branches on the most fractional binary (ties by lowest index), exploring
    the child nearest the relaxed value first. In feasibility mode the first
    integral leaf is returned; with an objective the search prunes on the
    incumbent and returns the optimum. Exceeding ``node_limit`` yields status
    ``undecided`` rather than a verdict.

    ``heuristic`` maps a fractional relaxation to a full 0/1 fixing of the
    binaries; the fixed LP is tried before branching and, when feasible,
    becomes an incumbent. It never changes a verdict, only the node count.
    """
    lp = mp.base
    if len(mp.binaries) > max_binaries:
        raise ValueError(f"{len(mp.binaries)} binaries exceed the configured cap of {max_binaries}")
    bins = np.asarray(mp.binaries, dtype=np.int64)
    base_lo = np.asarray(lp.lower, dtype=float)
    base_hi = np.asarray(lp.upper, dtype=float)
    has_objective = bool(lp.objective)
    sense = -1.0 if lp.maximize else 1.0

    incumbent: SolveResult | None = None
    best = math.inf
    nodes = 0
    pivots = 0
    stack: list[dict[int, float]] = [{}]
    while stack:
        if nodes >= node_limit:
            # an incumbent without a closed tree is not a proven optimum
            partial = incumbent.x if incumbent is not None else None
            return SolveResult(status="undecided", x=partial, nodes=nodes, pivots=pivots)
        fix = stack.pop()
        nodes += 1
        lo, hi = base_lo.copy(), base_hi.copy()
        for j, v in fix.items():
            lo[j] = hi[j] = v
        res = _solve_with_bounds(lp, lo, hi, max_pivots)
        pivots += res.pivots
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            return SolveResult(status="unbounded", nodes=nodes, pivots=pivots)
        val = sense * res.objective if has_objective else 0.0
        if has_objective and val >= best - 1e-9:
            continue
        xb = res.x[bins] if bins.size else np.zeros(0)
        frac = np.abs(xb - np.round(xb))
        if bins.size == 0 or frac.max() <= integrality_tol:
            # snap binaries and re-solve the continuous part exactly
            for j, v in zip(bins, np.round(xb)):
                lo[j] = hi[j] = v
            final = _solve_with_bounds(lp, lo, hi, max_pivots)
            pivots += final.pivots
            if final.status != "feasible":
                continue
            final.nodes = nodes
            incumbent = final
            if not has_objective:
                break
            best = sense * final.objective
            continue
        if heuristic is not None:
            guess = heuristic(res.x)
            if guess is not None:
                hlo, hhi = lo.copy(), hi.copy()
                for j, v in guess.items():
                    if j in fix and fix[j] != v:
                        break
                    hlo[j] = hhi[j] = v
                else:
                    trial = _solve_with_bounds(lp, hlo, hhi, max_pivots)
                    pivots += trial.pivots
                    if trial.status == "feasible" and (
                        not has_objective or sense * trial.objective < best - 1e-9
                    ):
                        incumbent = trial
                        if not has_objective:
                            break
                        best = sense * trial.objective
        dist = np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)
        pick = int(np.argmax(dist))
        j = int(bins[pick])
        near = 1.0 if xb[pick] >= 0.5 else 0.0
        stack.append({**fix, j: 1.0 - near})
        stack.append({**fix, j: near})

    if incumbent is None:
        return SolveResult(status="infeasible", nodes=nodes, pivots=pivots)
    incumbent.nodes = nodes
    incumbent.pivots = pivots
    return incumbent
