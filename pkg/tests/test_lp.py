import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from inattention.lp import (
    TAU_LP,
    LinearProgram,
    MixedIntegerProgram,
    SolverError,
    solve_lp,
    solve_milp,
)
from oracles import binary_enumeration, vertex_enumeration


def _random_lp(rng, n, m, box=5.0, upper=None):
    upper = box if upper is None else upper
    A = rng.uniform(-1, 1, size=(m, n))
    x0 = rng.uniform(0, box, size=n)
    b = A @ x0 + rng.uniform(0.0, 1.0, size=m)  # x0 is strictly feasible
    c = rng.normal(size=n)
    lp = LinearProgram()
    for j in range(n):
        lp.add_variable(f"x{j}", 0.0, upper)
    for i in range(m):
        lp.add_constraint({j: A[i, j] for j in range(n)}, "<=", b[i])
    lp.set_objective({j: c[j] for j in range(n)}, maximize=True)
    return lp, A, b, c


class TestSolveLP:
    def test_upper_bound_example(self):
        lp = LinearProgram()
        x = lp.add_variable("x", 0.0)
        lp.add_constraint({x: 1.0}, "<=", 3.0)
        lp.set_objective({x: 1.0}, maximize=True)
        res = solve_lp(lp)
        assert res.feasible
        assert res.assignment["x"] == pytest.approx(3.0, abs=1e-12)

    def test_contradiction_has_farkas_witness(self):
        lp = LinearProgram()
        x = lp.add_variable("x", -np.inf)
        lp.add_constraint({x: 1.0}, ">=", 1.0)
        lp.add_constraint({x: 1.0}, "<=", 0.0)
        res = solve_lp(lp)
        assert res.status == "infeasible"
        assert res.certificate is not None and res.certificate.verify()

    def test_unbounded(self):
        lp = LinearProgram()
        x = lp.add_variable("x", 0.0)
        lp.set_objective({x: 1.0}, maximize=True)
        assert solve_lp(lp).status == "unbounded"

    def test_equalities_and_free_variables(self):
        lp = LinearProgram()
        x = lp.add_variable("x", -np.inf)
        y = lp.add_variable("y", -np.inf, 2.0)
        lp.add_constraint({x: 1.0, y: 1.0}, "==", 1.0)
        lp.add_constraint({x: 1.0, y: -1.0}, ">=", -7.0)
        lp.set_objective({x: 1.0}, maximize=False)
        res = solve_lp(lp)
        # y <= 2 forces x = 1 - y >= -1
        assert res.assignment["x"] == pytest.approx(-1.0)
        assert res.assignment["y"] == pytest.approx(2.0)

    def test_ten_by_fifteen_matches_vertex_enumeration(self):
        rng = np.random.default_rng(11)
        lp, A, b, c = _random_lp(rng, 10, 15, box=1.0, upper=np.inf)
        # bounded by adding a simplex-style cap so vertex enumeration terminates
        lp.add_constraint({j: 1.0 for j in range(10)}, "<=", 20.0)
        A2 = np.vstack([A, np.ones(10)])
        b2 = np.append(b, 20.0)
        res = solve_lp(lp)
        oracle = vertex_enumeration(c, A2, b2, np.zeros(10), np.full(10, np.inf))
        assert res.objective == pytest.approx(oracle, abs=1e-6)
        assert res.max_violation <= TAU_LP

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(1, 6))
    def test_small_lps_match_vertex_enumeration(self, seed, n, m):
        rng = np.random.default_rng(seed)
        lp, A, b, c = _random_lp(rng, n, m)
        res = solve_lp(lp)
        oracle = vertex_enumeration(c, A, b, np.zeros(n), np.full(n, 5.0))
        assert res.feasible
        assert res.objective == pytest.approx(oracle, abs=1e-6)
        assert lp.max_violation(res.x) <= TAU_LP

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_infeasible_verdicts_agree_with_highs(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 3, 5
        A = rng.integers(-3, 4, size=(m, n)).astype(float)
        b = rng.integers(-4, 3, size=m).astype(float)
        lp = LinearProgram()
        for j in range(n):
            lp.add_variable(f"x{j}", 0.0, 2.0)
        for i in range(m):
            lp.add_constraint({j: A[i, j] for j in range(n)}, "<=", b[i])
        res = solve_lp(lp)
        ref = linprog(np.zeros(n), A_ub=A, b_ub=b, bounds=[(0, 2)] * n, method="highs")
        assert res.feasible == (ref.status == 0)
        if res.feasible:
            assert lp.max_violation(res.x) <= TAU_LP
        else:
            assert res.certificate.verify()

    def test_pivot_budget_raises(self):
        rng = np.random.default_rng(3)
        lp, *_ = _random_lp(rng, 6, 8)
        with pytest.raises(SolverError):
            solve_lp(lp, max_pivots=0)

    def test_lp_text_dump(self):
        lp = LinearProgram()
        x = lp.add_variable("x", 0.0, 1.0)
        d = lp.add_variable("d", 0.0, 1.0)
        lp.add_constraint({x: 1.0, d: -1.0}, "<=", 0.0, label="link")
        text = lp.to_lp_format(binaries=(d,))
        assert "Subject To" in text and "Binary" in text and "End" in text


class TestSolveMILP:
    def test_exactly_one_feasible(self):
        lp = LinearProgram()
        d1 = lp.add_variable("d1", 0.0, 1.0)
        d2 = lp.add_variable("d2", 0.0, 1.0)
        lp.add_constraint({d1: 1.0, d2: 1.0}, "==", 1.0)
        res = solve_milp(MixedIntegerProgram(lp, (d1, d2)))
        assert res.feasible
        vals = sorted(res.assignment.values())
        assert vals == [0.0, 1.0]

    def test_lower_bounds_make_it_infeasible(self):
        lp = LinearProgram()
        d1 = lp.add_variable("d1", 0.0, 1.0)
        d2 = lp.add_variable("d2", 0.0, 1.0)
        lp.add_constraint({d1: 1.0, d2: 1.0}, "==", 1.0)
        lp.add_constraint({d1: 1.0}, ">=", 0.6)
        lp.add_constraint({d2: 1.0}, ">=", 0.6)
        assert solve_milp(MixedIntegerProgram(lp, (d1, d2))).status == "infeasible"

    def test_binary_bounds_validated(self):
        lp = LinearProgram()
        d = lp.add_variable("d", 0.0, 2.0)
        with pytest.raises(ValueError):
            MixedIntegerProgram(lp, (d,))

    def test_binary_cap(self):
        lp = LinearProgram()
        ids = [lp.add_variable(f"d{i}", 0.0, 1.0) for i in range(5)]
        with pytest.raises(ValueError):
            solve_milp(MixedIntegerProgram(lp, tuple(ids)), max_binaries=4)

    def test_node_budget_is_undecided(self):
        rng = np.random.default_rng(5)
        lp, bins, *_ = _random_milp(rng, 10, 6)
        res = solve_milp(MixedIntegerProgram(lp, bins), node_limit=1)
        assert res.status in ("undecided", "feasible", "infeasible")
        # one node can only close the tree if the root relaxation is integral or infeasible
        if res.status != "undecided":
            assert res.nodes <= 1

    def test_optimization_mode(self):
        lp = LinearProgram()
        d = [lp.add_variable(f"d{i}", 0.0, 1.0) for i in range(4)]
        lp.add_constraint({i: w for i, w in zip(d, (3.0, 4.0, 5.0, 6.0))}, "<=", 10.0)
        lp.set_objective({i: v for i, v in zip(d, (4.0, 5.0, 7.0, 8.0))}, maximize=True)
        res = solve_milp(MixedIntegerProgram(lp, tuple(d)))
        assert res.objective == pytest.approx(13.0)  # items 2 and 4

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8))
    def test_verdict_matches_exhaustive_enumeration(self, seed, nb):
        rng = np.random.default_rng(seed)
        lp, bins, A, b, nc = _random_milp(rng, nb, 5)
        res = solve_milp(MixedIntegerProgram(lp, bins))

        def feasible_given(bits):
            bounds = [(v, v) for v in bits] + [(0.0, 1.0)] * nc
            r = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=b, bounds=bounds, method="highs")
            return r.status == 0

        assert res.status != "undecided"
        assert res.feasible == binary_enumeration(feasible_given, nb)
        if res.feasible:
            xb = res.x[list(bins)]
            assert np.all(np.abs(xb - np.round(xb)) <= 1e-9)
            assert lp.max_violation(res.x) <= TAU_LP

    def test_twelve_binaries_match_enumeration(self):
        rng = np.random.default_rng(12)
        for _ in range(3):
            lp, bins, A, b, nc = _random_milp(rng, 12, 6)
            res = solve_milp(MixedIntegerProgram(lp, bins))

            def feasible_given(bits):
                bounds = [(v, v) for v in bits] + [(0.0, 1.0)] * nc
                return linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=b, bounds=bounds, method="highs").status == 0

            assert res.feasible == binary_enumeration(feasible_given, 12)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        lp, bins, *_ = _random_milp(rng, 8, 5)
        r1 = solve_milp(MixedIntegerProgram(lp, bins))
        r2 = solve_milp(MixedIntegerProgram(lp, bins))
        assert r1.status == r2.status
        if r1.feasible:
            assert np.array_equal(r1.x, r2.x)


def _random_milp(rng, nb, nc, m=None):
    m = m or (nb + 2)
    n = nb + nc
    A = rng.integers(-3, 4, size=(m, n)).astype(float)
    b = rng.integers(-2, 4, size=m).astype(float)
    lp = LinearProgram()
    for j in range(nb):
        lp.add_variable(f"d{j}", 0.0, 1.0)
    for j in range(nc):
        lp.add_variable(f"y{j}", 0.0, 1.0)
    for i in range(m):
        lp.add_constraint({j: A[i, j] for j in range(n)}, "<=", b[i])
    return lp, tuple(range(nb)), A, b, nc
