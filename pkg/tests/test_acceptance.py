"""Acceptance criteria AC1 to AC10.

Every test records its outcome through the ``accept`` fixture; the terminal
summary then prints one PASS/FAIL line per criterion. Parts that do not hold
as stated are kept as strict xfails so that a change in behaviour shows up.
"""
import time
from functools import lru_cache

import numpy as np
import pytest

from phsplit.harness_cli import RunConfig, converge, energy_report, epsilon_study, fit_order
from phsplit.integrators import LinearDAEProblem, cayley, irk_step_linear, irk_step_residual, tableau
from phsplit.phdae_core import PHDAESystem, SinusoidalInput, pencil_regular, to_semi_explicit
from phsplit.splitting import (SemiExplicitDAE, decompose_dim_reducing,
                               decompose_jr_unregularized, run_splitting, scheme)

EPS = np.finfo(float).eps
STATED = ("1e-2", "1e-2.5", "1e-3", "1e-3.5")


@lru_cache(maxsize=None)
def sweep(bench, integrator, h=STATED, scheme="strang", strategy=None, epsilon=None):
    return converge(RunConfig(bench, scheme, integrator, strategy, epsilon, h))


def orders(rep, groups=None):
    groups = groups or [c for c in rep.errors if c != "all"]
    return {c: rep.order(c) for c in groups}


def fmt(d):
    return ", ".join(f"{k} {v:.3f}" for k, v in d.items())


def near(d, target, tol):
    return all(np.isfinite(v) and abs(v - target) <= tol for v in d.values())


# ---------------------------------------------------------------------------
# AC1, AC2: LC oscillator against its analytic solution

AC1_RUNS = (("3mid", "strang", 2.0, 0.2), ("Lob3C", "strang", 2.0, 0.2),
            ("iE", "lie", 1.0, 0.15), ("Lob3", "triple_jump", 4.0, 0.3))


@pytest.mark.xfail(strict=True, reason="sweep lies before the asymptotic range on this circuit")
def test_ac1_stated_sweep(accept):
    t = time.perf_counter()
    got = {(i, s): orders(sweep("lc_oscillator", i, scheme=s), ["differential", "algebraic"])
           for i, s, _, _ in AC1_RUNS}
    dt = time.perf_counter() - t
    msgs, ok = [], dt < 60
    for i, s, target, tol in AC1_RUNS:
        hit = near(got[i, s], target, tol)
        ok &= hit
        msgs.append(f"{s}+{i} [{fmt(got[i, s])}]")
    accept("AC1", ok, f"sweep 1e-2..1e-3.5 in {dt:.1f}s: " + ", ".join(msgs))
    assert ok


def test_ac1_asymptotic_sweep(accept):
    fine = ("1e-4.5", "1e-5", "1e-5.5", "1e-6")
    runs = {("3mid", "strang"): fine, ("Lob3C", "strang"): fine, ("iE", "lie"): fine,
            ("Lob3", "triple_jump"): ("1e-3.5", "1e-4", "1e-4.5", "1e-5")}
    t = time.perf_counter()
    ok, msgs = True, []
    for i, s, target, tol in AC1_RUNS:
        o = orders(sweep("lc_oscillator", i, runs[i, s], s), ["differential", "algebraic"])
        ok &= near(o, target, tol)
        msgs.append(f"{s}+{i} [{fmt(o)}]")
    dt = time.perf_counter() - t
    accept("AC1", ok and dt < 60, f"finer sweeps in {dt:.1f}s: " + ", ".join(msgs))
    assert ok and dt < 60


def test_ac2_hamiltonian_error_constant(accept):
    C = sweep("lc_oscillator", "3mid").error_constants
    ok = bool(np.all((C >= 1e-5) & (C <= 1e-3)))
    accept("AC2", ok, "C per step size " + ", ".join(f"{c:.2e}" for c in C))
    assert ok


# ---------------------------------------------------------------------------
# AC3: Cayley transform

def cayley_triples(count, seed=20240501, margin=1e3):
    """Integer-valued triples with every inverted pencil conditioned below ``margin``.

    E = G G^T, so ||x||_E = ||G^T x|| is evaluated without a square root of E.
    """
    rng = np.random.default_rng(seed)
    cond = np.linalg.cond
    k = 0
    while k < count:
        n = int(rng.integers(1, 9))
        G = rng.integers(-3, 4, (n, int(rng.integers(1, n + 1)))).astype(float)
        K = rng.integers(-3, 4, (n, n)).astype(float)
        F = rng.integers(-2, 3, (n, int(rng.integers(1, n + 1)))).astype(float)
        W = rng.integers(-1, 2, (n, n)).astype(float)
        E, J, R, Q = G @ G.T, K - K.T, F @ F.T, np.eye(n) + 0.1 * W @ W.T
        h = float(rng.choice([0.01, 0.1, 0.5]))
        if not pencil_regular(E, J):
            continue
        # Q symmetric, so the system with E_q = Q^{-1} E has Q^T E_q = E
        semi = to_semi_explicit(PHDAESystem(E=np.linalg.solve(Q, E), J=J, R=R, Q=Q))
        pencils = (E - h / 2 * J, E - h / 2 * (J - R), E - h / 2 * Q @ J @ Q,
                   semi.E - h / 2 * semi.J)
        if max(cond(M) for M in pencils) > margin or cond(semi.T) > margin:
            continue
        x = rng.standard_normal(n)
        nx = np.linalg.norm(G.T @ x)
        if nx < 1e-8 * np.linalg.norm(x):
            continue
        k += 1
        yield G, J, R, Q, h, x / nx, semi


def test_ac3_cayley_suite(accept):
    worst_c = worst_d = worst_t = 0.0
    for G, J, R, Q, h, x, semi in cayley_triples(1000):
        E = G @ G.T
        worst_c = max(worst_c, abs(np.linalg.norm(G.T @ cayley(E, h / 2 * J) @ x) - 1.0))
        worst_d = max(worst_d, np.linalg.norm(G.T @ cayley(E, h / 2 * (J - R)) @ x) - 1.0)
        lhs = cayley(E, h / 2 * Q @ J @ Q)
        rhs = semi.Tinv @ cayley(semi.E, h / 2 * semi.J) @ semi.T
        worst_t = max(worst_t, np.abs(lhs - rhs).max() / np.abs(lhs).max())
    ok = worst_c <= 1e-12 and worst_d <= 1e-12 and worst_t <= 1e-10
    accept("AC3", ok, f"1000 triples: conservation {worst_c:.1e}, dissipative increase "
                      f"{worst_d:.1e}, transform identity {worst_t:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# AC4: crosstalk circuit (implicit ODE)

def test_ac4_orders(accept):
    runs = {"3mid": (STATED, 2.0, 0.2), "eE-mid-iE": (STATED, 2.0, 0.2),
            "iE-mid-eE": (STATED, 2.0, 0.2), "iE-mid-iE": (STATED, 1.0, 0.15),
            # explicit Euler on the stiff R-flow is unstable above 1e-4
            "eE-mid-eE": (("1e-4", "1e-4.5", "1e-5", "1e-5.5"), 1.0, 0.15)}
    ok, msgs = True, []
    for i, (h, target, tol) in runs.items():
        rep = sweep("crosstalk_ode", i, h)
        o = rep.order("all")
        ok &= np.isfinite(o) and abs(o - target) <= tol and not rep.failures
        msgs.append(f"{i} {o:.3f}")
    accept("AC4", ok, "orders " + ", ".join(msgs))
    assert ok


@pytest.mark.xfail(strict=True, reason="eE-mid-iE has a smaller error constant than 3mid here")
def test_ac4_3mid_smallest_error(accept):
    e3 = sweep("crosstalk_ode", "3mid").errors["all"]
    others = {i: sweep("crosstalk_ode", i).errors["all"] for i in
              ("eE-mid-iE", "iE-mid-eE", "iE-mid-iE")}
    worse = [i for i, e in others.items() if np.any(e < e3)]
    ok = not worse
    accept("AC4", ok, "3mid smallest error" + (f" (beaten by {', '.join(worse)})" if worse else ""))
    assert ok


def test_ac4_heun_dissipation_violation(accept):
    rep = energy_report(RunConfig("crosstalk_ode", integrator="mid-Heun-mid"), 1e-3)
    ok = not rep.substeps_satisfied
    accept("AC4", ok, f"mid-Heun-mid substep energy gain {rep.substep_max_violation:.1e} "
                      f"above tolerance {rep.tolerance:.1e} at h=1e-3")
    assert ok


def test_ac4_j_flow_conservation(accept):
    hs = 10.0 ** np.array([-3.0, -3.5, -4.0])
    reps = [energy_report(RunConfig("crosstalk_ode", integrator="3mid"), h) for h in hs]
    per_step = max(float(np.nanmax(r.j_step_relative)) for r in reps)
    acc = [r.j_accumulated for r in reps]
    slope = fit_order(hs, acc)[0]
    ok = per_step <= 10 * EPS and abs(slope + 1.0) <= 0.3
    accept("AC4", ok, f"J-flow per step {per_step / EPS:.1f} eps, accumulated slope {slope:.2f}")
    assert ok


# ---------------------------------------------------------------------------
# AC5: index-1 circuit, case a

def test_ac5_3mid_orders(accept):
    o = orders(sweep("index1_case_a", "3mid"))
    ok = near(o, 2.0, 0.2)
    accept("AC5", ok, f"3mid [{fmt(o)}]")
    assert ok


def test_ac5_lobatto_differential_order(accept):
    o = orders(sweep("index1_case_a", "mid-Lob3C-mid"), ["differential"])
    ok = near(o, 2.0, 0.2)
    accept("AC5", ok, f"mid-Lob3C-mid [{fmt(o)}]")
    assert ok


@pytest.mark.xfail(strict=True, reason="the last R half-step moves differential variables while "
                                       "algebraic ones stay frozen, leaving an O(h) constraint defect")
def test_ac5_lobatto_algebraic_order(accept):
    o = orders(sweep("index1_case_a", "mid-Lob3C-mid"), ["algebraic"])
    ok = near(o, 2.0, 0.2)
    accept("AC5", ok, f"mid-Lob3C-mid [{fmt(o)}]")
    assert ok


def test_ac5_dissipation(accept):
    reps = {i: energy_report(RunConfig("index1_case_a", integrator=i), 1e-3)
            for i in ("3mid", "mid-Lob3C-mid")}
    ok = all(r.satisfied and r.substeps_satisfied for r in reps.values())
    accept("AC5", ok, "dissipation inequality at h=1e-3: " + ", ".join(
        f"{i} max excess {r.max_violation:.1e}" for i, r in reps.items()))
    assert ok


# ---------------------------------------------------------------------------
# AC6: MNA circuit, case b

AC6_H = ("1e-3.5", "1e-4", "1e-4.5", "1e-5", "1e-5.5")
RADAU_LIKE = ("Lob3c-mid-Lob3c", "Rad1A-mid-Rad1A", "Rad2A-mid-Rad2A")


def test_ac6_stiff_outer_flows(accept):
    ok, msgs = True, []
    for i in RADAU_LIKE:
        o = orders(sweep("mna_rlc", i, AC6_H))
        ok &= near(o, 2.0, 0.2)
        msgs.append(f"{i} [{fmt(o)}]")
    accept("AC6", ok, ", ".join(msgs))
    assert ok


def test_ac6_3mid_algebraic_loss(accept):
    rep = sweep("mna_rlc", "3mid", AC6_H)
    e3 = rep.errors["algebraic"]
    ratio = min(float(np.min(e3 / sweep("mna_rlc", i, AC6_H).errors["algebraic"]))
                for i in RADAU_LIKE)
    ok = "algebraic" in rep.order_loss() and ratio >= 10
    accept("AC6", ok, f"3mid algebraic order {rep.order('algebraic'):.3f}, "
                      f"error at least {ratio:.1e} x the stiff variants")
    assert ok


def test_ac6_implicit_euler(accept):
    o = orders(sweep("mna_rlc", "iE-mid-iE", AC6_H))
    ok = near(o, 1.0, 0.15)
    accept("AC6", ok, f"iE-mid-iE [{fmt(o)}]")
    assert ok


# ---------------------------------------------------------------------------
# AC7: coupled transmission lines with private index-2 variables

def test_ac7_sequence_and_decoupled(accept):
    s2 = sweep("transmission_private2", "Rad2A S2")
    s1 = sweep("transmission_private2", "Rad2A S1")
    ra = sweep("transmission_private2", "3mid+Ra")
    o2 = orders(s2)
    o1 = s1.order("substructure2")
    ratio = ra.errors["all"] / s2.errors["all"]
    ok = near(o2, 2.0, 0.2) and o1 < 1.7 and bool(np.all((ratio >= 0.5) & (ratio <= 2.0)))
    accept("AC7", ok, f"S2-S1-S2 min order {min(o2.values()):.3f}, S1-S2-S1 substructure2 "
                      f"{o1:.3f}, 3mid+Ra / S2 error ratio {ratio.min():.4f}..{ratio.max():.4f}")
    assert ok


# ---------------------------------------------------------------------------
# AC8: loop-cutset circuit, neither case

def test_ac8_unregularized_does_not_converge(accept):
    found = {}
    for h in (STATED, ("1e-3.5", "1e-4", "1e-4.5", "1e-5")):
        rep = sweep("loopcutset_rlc", "3mid", h, strategy="jr_unregularized")
        found.update({f"{c}@{h[0]}": o for c, o in orders(rep).items()})
    ok = all(not (np.isfinite(o) and o >= 0.5) for o in found.values())
    accept("AC8", ok, f"unregularized best order {max(found.values()):.3f}")
    assert ok


def test_ac8_regularized_order(accept):
    rep = sweep("loopcutset_rlc", "3mid", ("1e-3.5", "1e-4", "1e-4.5", "1e-5"),
                strategy="jr_epsilon", epsilon=1e-10)
    o = orders(rep)
    ok = near(o, 2.0, 0.2)
    accept("AC8", ok, f"epsilon 1e-10 [{fmt(o)}]")
    assert ok


def test_ac8_error_linear_in_epsilon(accept):
    st = epsilon_study("loopcutset_rlc", h_rel=1e-6)
    ok = st.monotone and st.slope_points >= 3 and abs(st.slope - 1.0) <= 0.3
    accept("AC8", ok, f"epsilon slope {st.slope:.3f} on {st.slope_points} points, "
                      f"floor reached at {st.kink:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# AC9: splitting the constraints themselves

def test_ac9_constraint_splitting_counterexample(accept):
    sys_ = PHDAESystem(E=np.zeros((2, 2)), J=[[0.0, 1.0], [-1.0, 0.0]], R=np.diag([2.0, 1.0]),
                       B=[[1.0], [1.0]], input=SinusoidalInput([[1.0]], [0.0], [np.pi / 2]))
    target = -np.linalg.solve(sys_.J - sys_.R, [1.0, 1.0])
    dec = decompose_jr_unregularized(sys_)
    errs = []
    for N in (10, 32, 100, 316, 1000, 3162, 10000):
        tr = run_splitting(dec, scheme("strang"), "radau2a_2", 0.0, 1.0, 1.0 / N, x0=target)
        errs.append(float(np.abs(tr.states[1:] - target).max()))
    ok = min(errs) >= 0.1
    accept("AC9", ok, f"error to (J-R)^-1 b stays in [{min(errs):.3f}, {max(errs):.3f}] "
                      f"for h 1e-1..1e-4")
    assert ok


# ---------------------------------------------------------------------------
# AC10: dimension-reducing subflow against the inherent ODE

def _four_state():
    A = np.array([[-1.0, 2.0, 0.5, 1.0],
                  [1.0, -3.0, 0.0, 1.0],
                  [0.5, 1.0, -2.0, 0.0],
                  [0.0, 1.0, 2.0, -4.0]])
    M = np.diag([1.0, 0.0, 1.0, 0.0])
    x = np.array([0.7, 0.0, -1.3, 0.0])
    z, d = [1, 3], [0, 2]
    x[z] = -np.linalg.solve(A[np.ix_(z, z)], A[np.ix_(z, d)] @ x[d])
    # no linear representation: the subflows go through Newton
    c = SemiExplicitDAE(M, lambda t, y: A @ y, {"x11": [0], "z11": [1], "x21": [2], "z21": [3]},
                        x, jacobian=lambda t, y: A)
    return A, c


@pytest.mark.parametrize("tab", ["radau2a_2", "lobatto3c_3", "gauss1"])
def test_ac10_subflow_equals_inherent_ode(tab, accept):
    A, c = _four_state()
    dec = decompose_dim_reducing(c)
    z = [1, 3]
    S = np.linalg.solve(A[np.ix_(z, z)], A[np.ix_(z, [0, 2])])
    worst = 0.0
    for k, (moving, fixed) in enumerate(((0, 2), (2, 0))):
        sp = dec.subproblems[k]
        assert sp.kind == "residual"
        col = {0: 0, 2: 1}
        alpha = A[moving, moving] - A[moving, z] @ S[:, col[moving]]
        gain = A[moving, fixed] - A[moving, z] @ S[:, col[fixed]]
        x = c.x0.copy()
        y = x[moving]
        h = 0.05
        for n in range(20):
            x = irk_step_residual(sp.problem, tab, n * h, h, x, active=sp.active)
            ode = LinearDAEProblem([[1.0]], [[alpha]], [[gain * c.x0[fixed]]],
                                   SinusoidalInput([[1.0]], [0.0], [np.pi / 2]))
            y = irk_step_linear(ode, tab, n * h, h, [y])[0]
            worst = max(worst, abs(x[moving] - y))
            assert x[fixed] == c.x0[fixed]
        if tableau(tab).stiffly_accurate:
            zend = -S @ x[[0, 2]]
            worst = max(worst, float(np.abs(x[z] - zend).max()))
    ok = worst <= 1e-10
    accept("AC10", ok, f"{tab} max deviation {worst:.1e}")
    assert ok
