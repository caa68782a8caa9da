import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from phsplit.circuits import benchmark
from phsplit.integrators import LinearDAEProblem, irk_step_linear, tableau
from phsplit.phdae_core import PHDAESystem, SinusoidalInput, energy_norm, kernel_projector
from phsplit.splitting import (ALPHA, BETA, LABELS, AssumptionViolation, DecompositionError,
                               SemiExplicitDAE, SplittingScheme, decompose_dim_reducing,
                               decompose_jr, decompose_jr_epsilon, decompose_jr_unregularized,
                               jr_case, label_last_subsystem, label_scheme, run_splitting, scheme,
                               splitting_order_sequence)

CONST = SinusoidalInput([[1.0]], [0.0], [np.pi / 2])


def lc():
    b = benchmark("lc_oscillator")
    return b, decompose_dim_reducing(b.coupled)


# ---------------------------------------------------------------------------
# scheme algebra

def test_triple_jump_weights():
    assert 2 * ALPHA + BETA == pytest.approx(1.0, abs=1e-15)
    assert 2 * ALPHA ** 3 + BETA ** 3 == pytest.approx(0.0, abs=1e-14)
    assert BETA < 0


@pytest.mark.parametrize("name", ["lie", "strang", "triple_jump"])
def test_each_subflow_covers_the_step(name):
    sch = scheme(name)
    for k in range(2):
        total = sum(L for j, L in sch.lengths if j == k)
        assert total == pytest.approx(1.0, abs=1e-14)
    # stages of one subproblem are contiguous in time
    for k in range(2):
        spans = [(a, b) for j, a, b in sch.plan if j == k]
        for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
            assert b0 == pytest.approx(a1, abs=1e-14)


@pytest.mark.parametrize("name", ["strang", "triple_jump"])
def test_symmetric_schemes_are_palindromes(name):
    plan = scheme(name).plan
    mirrored = tuple((k, 1 - b, 1 - a) for k, a, b in reversed(plan))
    assert np.allclose(np.array(plan), np.array(mirrored), atol=1e-14)


def test_strang_outer_flow_is_subproblem_one():
    assert [k for k, _, _ in scheme("strang").plan] == [1, 0, 1]
    assert scheme("Lie-Trotter").plan == SplittingScheme.lie().plan
    with pytest.raises(KeyError):
        scheme("yoshida")


def test_labels():
    assert label_scheme("eE-mid-iE").stage_integrators == ("euler_explicit", "gauss1", "radau2a_1")
    assert label_scheme("mid-Heun-mid").stage_integrators[1] == "heun"
    assert label_last_subsystem("Rad2A S1") == 0
    assert label_last_subsystem("Rad2A S2") == 1
    assert label_last_subsystem("3mid") is None
    assert all(LABELS[k][0] == "strang" for k in LABELS)


# ---------------------------------------------------------------------------
# running

def test_step_must_divide_interval():
    b, dec = lc()
    with pytest.raises(ValueError):
        run_splitting(dec, scheme("strang"), "gauss1", 0.0, 0.2, 0.03)


def test_fast_path_equals_stagewise_path():
    b, dec = lc()
    sch = label_scheme("Rad2A-mid-Rad2A")
    h = 0.2 / 2000
    fast = run_splitting(dec, sch, None, 0.0, 0.2, h)
    slow = run_splitting(dec, sch, None, 0.0, 0.2, h, record=True)
    scale = np.abs(slow.states).max()
    assert np.abs(fast.states - slow.states).max() <= 1e-11 * scale
    assert np.array_equal(slow.stage_states[:, -1], slow.states[1:])


@pytest.mark.parametrize("bid,dec_fn", [("lc_oscillator", None), ("crosstalk_ode", decompose_jr)])
def test_symmetric_composition_is_time_reversible(bid, dec_fn):
    b = benchmark(bid)
    dec = decompose_dim_reducing(b.coupled) if dec_fn is None else dec_fn(b.system)
    T = b.T
    h = T / 50
    fwd = run_splitting(dec, scheme("strang"), "gauss1", 0.0, h, h, record=True)
    x1 = fwd.states[-1]
    back = run_splitting(dec, scheme("strang"), "gauss1", h, 0.0, -h, x0=x1, record=True)
    x0 = fwd.states[0]
    sc = max(np.abs(x0).max(), np.abs(x1).max())
    assert sc > 0
    assert np.abs(back.states[-1] - x0).max() <= 1e-10 * sc


def test_frozen_variables_bitwise():
    b, dec = lc()
    tr = run_splitting(dec, scheme("strang"), "radau2a_2", 0.0, 0.02, 0.002, record=True)
    ss = tr.stage_states
    for j, (k, _, _) in enumerate(scheme("strang").plan):
        frozen = dec.subproblems[k].frozen
        assert frozen.size
        assert np.array_equal(ss[:, j + 1][:, frozen], ss[:, j][:, frozen])


def test_doubled_constraints_hold_after_each_substep():
    b, dec = lc()
    c = b.coupled
    rows = np.concatenate([dec.constraints["g1"], dec.constraints["g2"]])
    h = 0.002
    sch = scheme("strang")
    tr = run_splitting(dec, sch, "radau2a_2", 0.0, 0.02, h, record=True)
    A = c.linear[0]
    for i, t in enumerate(tr.times[:-1]):
        for j, (k, a, bb) in enumerate(sch.plan):
            x = tr.stage_states[i, j + 1]
            r = c.constraint_residual(t + bb * h, x, rows)
            assert np.abs(r).max() <= 1e-12 * np.abs(A).max() * np.abs(x).max()


@pytest.mark.parametrize("tab", ["radau2a_2", "gauss1", "lobatto3c_3", "radau2a_1"])
def test_subflow_matches_inherent_ode(tab):
    # 4-state instance (x11, z11, x21, z21); S1 moves x11 with x21 frozen
    A = np.array([[-1.0, 2.0, 0.5, 1.0],
                  [1.0, -3.0, 0.0, 1.0],
                  [0.5, 1.0, -2.0, 0.0],
                  [0.0, 1.0, 2.0, -4.0]])
    M = np.diag([1.0, 0.0, 1.0, 0.0])
    blocks = {"x11": [0], "z11": [1], "x21": [2], "z21": [3]}
    x = np.array([0.7, 0.0, -1.3, 0.0])
    z = [1, 3]
    x[z] = -np.linalg.solve(A[np.ix_(z, z)], A[np.ix_(z, [0, 2])] @ x[[0, 2]])
    c = SemiExplicitDAE.from_linear(M, A, np.zeros((4, 0)), None, blocks, x)
    dec = decompose_dim_reducing(c)
    s1 = dec.subproblems[0]
    assert s1.active.tolist() == [0, 1, 3]
    h = 0.05
    y = irk_step_linear(s1.problem, tab, 0.0, h, x, s1.active)

    # independent route: eliminate z, integrate x11' = alpha x11 + beta with x21 fixed
    S = np.linalg.solve(A[np.ix_(z, z)], A[np.ix_(z, [0, 2])])
    alpha = A[0, 0] - A[0, z] @ S[:, 0]
    beta = (A[0, 2] - A[0, z] @ S[:, 1]) * x[2]
    ode = LinearDAEProblem([[1.0]], [[alpha]], [[beta]], CONST)
    ref = irk_step_linear(ode, tab, 0.0, h, x[[0]])[0]
    assert y[0] == pytest.approx(ref, rel=1e-13)
    assert y[2] == x[2]
    if tableau(tab).stiffly_accurate:
        zend = -S @ np.array([y[0], y[2]])
        assert np.allclose(y[z], zend, rtol=1e-12, atol=1e-14)


def test_singular_constraint_jacobian_rejected():
    A = np.zeros((4, 4))
    A[0, 0] = A[2, 2] = -1.0
    blocks = {"x11": [0], "z11": [1], "x21": [2], "z21": [3]}
    c = SemiExplicitDAE.from_linear(np.diag([1.0, 0, 1, 0]), A, np.zeros((4, 0)), None, blocks, np.zeros(4))
    with pytest.raises(DecompositionError):
        decompose_dim_reducing(c)


def test_blocks_must_partition():
    with pytest.raises(DecompositionError):
        SemiExplicitDAE.from_linear(np.eye(2), np.zeros((2, 2)), np.zeros((2, 0)), None,
                                    {"x11": [0]}, np.zeros(2))


# ---------------------------------------------------------------------------
# J-R decompositions

def test_jr_cases_of_benchmarks():
    assert jr_case(benchmark("index1_case_a").system)[0] == "case_a"
    assert jr_case(benchmark("mna_rlc").system)[0] == "case_b"
    assert jr_case(benchmark("crosstalk_ode").system)[0] == "ode"
    assert decompose_jr(benchmark("crosstalk_ode").system).strategy == "jr_ode"


def test_case_a_regularizes_the_r_flow():
    s = benchmark("index1_case_a").system
    dec = decompose_jr(s)
    K = kernel_projector(s.E).K
    assert dec.strategy == "jr_case_a"
    assert [sp.name for sp in dec.subproblems] == ["J", "R"]
    assert np.array_equal(dec.subproblems[0].problem.Elhs, s.E)
    assert np.array_equal(dec.subproblems[1].problem.Elhs, s.E + K.T @ K)
    assert np.array_equal(dec.subproblems[1].problem.A, -s.R)


def test_case_b_regularizes_the_j_flow():
    s = benchmark("mna_rlc").system
    dec = decompose_jr(s)
    K = kernel_projector(s.E).K
    assert np.array_equal(dec.subproblems[0].problem.Elhs, s.E + K.T @ K)
    assert np.array_equal(dec.subproblems[1].problem.Elhs, s.E)


def test_neither_case_reports_products():
    s = PHDAESystem(np.zeros((2, 2)), [[0.0, 1.0], [-1.0, 0.0]], np.diag([2.0, 1.0]), [[1.0], [1.0]])
    with pytest.raises(AssumptionViolation) as exc:
        decompose_jr(s)
    assert {"KtJ", "KtR"} <= set(exc.value.nonzero)
    assert decompose_jr_unregularized(s).strategy == "jr_unregularized"


def test_epsilon_decomposition():
    s = benchmark("mna_rlc").system
    K = kernel_projector(s.E).K
    dec = decompose_jr_epsilon(s, 1e-8)
    assert np.array_equal(dec.energy_matrix, s.E + 1e-8 * K.T @ K)
    for sp in dec.subproblems:
        assert np.array_equal(sp.problem.Elhs, dec.energy_matrix)
    with pytest.raises(ValueError):
        decompose_jr_epsilon(s, 0.0)


# ---------------------------------------------------------------------------
# private substructures

def test_dependence_and_order_notes():
    b = benchmark("transmission_private2")
    dec = decompose_dim_reducing(b.coupled)
    assert dec.strategy == "dim_reducing_private2"
    assert dec.plan is not None
    assert any(k in ("z11", "z21") for k in dec.dependence["substructure2"])
    ok = splitting_order_sequence(dec, ("S2", "S1", "S2"))
    assert ok.full_order and ok.affected == ()
    bad = splitting_order_sequence(dec, (1, 2, 1))
    assert not bad.full_order
    assert bad.affected == ("substructure2",)


def test_order_sequence_without_dependence():
    b, dec = lc()
    with pytest.raises(ValueError):
        splitting_order_sequence(dec, ("S1", "S2", "S1"))


# ---------------------------------------------------------------------------
# properties


@st.composite
def ph_odes(draw):
    n = draw(st.integers(1, 5))
    ints = st.integers(-3, 3).map(float)
    G = draw(hnp.arrays(float, (n, n), elements=ints))
    K = draw(hnp.arrays(float, (n, n), elements=ints))
    S = draw(hnp.arrays(float, (n, n), elements=ints))
    E = G @ G.T + np.eye(n)
    return PHDAESystem(E, K - K.T, S @ S.T, np.zeros((n, 1)))


@settings(max_examples=80, deadline=None)
@given(ph_odes(), st.sampled_from(["lie", "strang", "triple_jump"]), st.integers(0, 2 ** 31))
def test_midpoint_splitting_never_gains_energy(sys, name, seed):
    dec = decompose_jr(sys)
    x0 = np.random.default_rng(seed).standard_normal(sys.n)
    tr = run_splitting(dec, scheme(name), "gauss1", 0.0, 1.0, 0.1, x0=x0)
    nrm = energy_norm(sys.E, tr.states)
    assert np.all(np.diff(nrm) <= 1e-10 * nrm[0])
