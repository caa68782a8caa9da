"""Simulation harness: references, convergence sweeps, energy reports and the command line.

Step sizes are relative, h = h_T / T, and are realized as N = round(1/h)
uniform steps on the benchmark interval.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .circuits import Benchmark, UnknownBenchmark, benchmark, benchmark_ids
from .integrators import StepFailure, expm_orbit, tableau, TABLEAU_NAMES
from .phdae_core import PHDAESystem, SinusoidalInput, ZeroInput, energy_norm, to_semi_explicit
from .splitting import (LABELS, Decomposition, DecompositionError, SplittingScheme, Subproblem, Trajectory,
                        decompose_dim_reducing, decompose_dim_reducing_private2, decompose_jr,
                        decompose_jr_epsilon, decompose_jr_unregularized, label_last_subsystem,
                        label_scheme, run_decoupled, run_splitting, scheme as scheme_by_name)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

STRATEGIES = ("dim_reducing", "dim_reducing_private2", "jr", "jr_epsilon", "jr_unregularized")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ReferencePolicy:
    kind: str = "exact"             # analytic | exact | fine_grid
    method: str = "gauss1"
    h: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("analytic", "exact", "fine_grid"):
            raise ConfigError(f"unknown reference kind {self.kind!r}")
        if self.kind == "fine_grid":
            try:
                tableau(self.method)
            except KeyError:
                raise ConfigError(f"unknown reference method {self.method!r}") from None
            if not 0 < self.h <= 1:
                raise ConfigError("reference h must lie in (0, 1]")

    @classmethod
    def from_value(cls, v) -> "ReferencePolicy":
        if isinstance(v, ReferencePolicy):
            return v
        if isinstance(v, str):
            return cls(kind=v)
        if isinstance(v, dict):
            unknown = set(v) - {"kind", "method", "h"}
            if unknown:
                raise ConfigError(f"unknown reference keys {sorted(unknown)}")
            d = dict(v)
            if "h" in d:
                d["h"] = parse_h(d["h"])
            return cls(**d)
        raise ConfigError(f"cannot read reference policy from {v!r}")


def default_reference(b: Benchmark) -> ReferencePolicy:
    if b.analytic is not None:
        return ReferencePolicy("analytic")
    if b.system is None:
        return ReferencePolicy("fine_grid", "radau2a_2", 1e-5)
    return ReferencePolicy("exact")


def parse_h(v) -> float:
    """Accepts floats and strings such as '1e-3', '1e-2.5' or '10^-2.5'."""
    if isinstance(v, (int, float)):
        return float(v)
    s = str(v).strip()
    try:
        return float(s)
    except ValueError:
        pass
    m = re.fullmatch(r"(?:1e|10\^|10\*\*)([-+]?\d+(?:\.\d+)?)", s)
    if m:
        return 10.0 ** float(m.group(1))
    raise ConfigError(f"cannot read step size {v!r}")


@dataclass(frozen=True)
class RunConfig:
    benchmark: str
    scheme: str = "strang"
    integrator: str = "3mid"
    strategy: Optional[str] = None
    epsilon: Optional[float] = None
    h: Tuple[float, ...] = (1e-2, 10 ** -2.5, 1e-3, 10 ** -3.5)
    reference: Optional[ReferencePolicy] = None
    output: str = "results"
    workers: int = 1
    floor: float = 1e-11
    plots: bool = True

    def __post_init__(self):
        object.__setattr__(self, "h", tuple(parse_h(v) for v in np.atleast_1d(self.h)))
        if self.reference is not None:
            object.__setattr__(self, "reference", ReferencePolicy.from_value(self.reference))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "benchmark" not in d:
            raise ConfigError("config needs a benchmark")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["h"] = list(self.h)
        return d

    @property
    def bench(self) -> Benchmark:
        try:
            return benchmark(self.benchmark)
        except UnknownBenchmark:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; known: {', '.join(benchmark_ids())}") from None

    @property
    def resolved_strategy(self) -> str:
        return self.strategy or self.bench.strategy

    @property
    def resolved_epsilon(self) -> Optional[float]:
        if self.resolved_strategy != "jr_epsilon":
            return None
        return 1e-10 if self.epsilon is None else float(self.epsilon)

    @property
    def resolved_reference(self) -> ReferencePolicy:
        return self.reference or default_reference(self.bench)

    def validate(self, sweep: bool = True) -> "RunConfig":
        b = self.bench
        if self.resolved_strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.resolved_strategy!r}")
        if self.resolved_strategy.startswith("jr") and b.system is None:
            raise ConfigError(f"{b.id} has no port-Hamiltonian form; use a dimension-reducing strategy")
        if self.resolved_strategy.startswith("dim") and b.coupled is None:
            raise ConfigError(f"{b.id} has no coupled block structure")
        if self.resolved_epsilon is not None and not self.resolved_epsilon > 0:
            raise ConfigError("epsilon must be positive")
        hs = np.asarray(self.h)
        if hs.size == 0 or np.any(~(hs > 0)) or np.any(hs > 1):
            raise ConfigError("relative step sizes must lie in (0, 1]")
        if sweep and np.any(np.diff(hs) >= 0):
            raise ConfigError("step sizes must be strictly decreasing")
        ref = self.resolved_reference
        if ref.kind == "analytic" and b.analytic is None:
            raise ConfigError(f"{b.id} has no analytic solution")
        if ref.kind == "exact" and (b.system is None or not _sinusoidal(b.system)):
            raise ConfigError(f"{b.id} has no closed-form reference")
        if ref.kind == "fine_grid" and ref.h * 10 > hs.min() * (1 + 1e-12):
            raise ConfigError("reference step must be at least 10x smaller than the smallest sweep step")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        m = resolve_method(self)
        for (k, _, _), t in zip(m.scheme.plan, m.integrators):
            sp = m.decomposition.subproblems[k]
            if tableau(t).explicit and sp.kind == "linear":
                a = sp.active
                if np.linalg.matrix_rank(sp.problem.Elhs[np.ix_(a, a)]) < a.size:
                    raise ConfigError(f"explicit {t} cannot integrate subproblem {sp.name or k}, "
                                      "whose left-hand matrix is singular")
        return self


def _sinusoidal(sys: PHDAESystem) -> bool:
    return isinstance(sys.input, (SinusoidalInput, ZeroInput)) or sys.m == 0


# --------------------------------------------------------------------------
# method resolution


@dataclass(frozen=True)
class Method:
    decomposition: Decomposition
    scheme: SplittingScheme
    integrators: Tuple[str, ...]
    decoupled_tableau: Optional[str] = None


@lru_cache(maxsize=64)
def build_decomposition(bench_id: str, strategy: str, epsilon: Optional[float] = None) -> Decomposition:
    b = benchmark(bench_id)
    if strategy == "dim_reducing":
        return decompose_dim_reducing(b.coupled)
    if strategy == "dim_reducing_private2":
        return decompose_dim_reducing_private2(b.coupled)
    if strategy == "jr":
        return decompose_jr(b.system)
    if strategy == "jr_epsilon":
        return decompose_jr_epsilon(b.system, epsilon)
    if strategy == "jr_unregularized":
        return decompose_jr_unregularized(b.system)
    raise ConfigError(f"unknown strategy {strategy!r}")


def _resolve_tableau(name):
    try:
        return tableau(name).name
    except KeyError:
        raise ConfigError(f"unknown integrator {name!r}") from None


def resolve_method(cfg: RunConfig) -> Method:
    try:
        base = scheme_by_name(cfg.scheme)
    except KeyError:
        raise ConfigError(f"unknown scheme {cfg.scheme!r}") from None
    try:
        dec = build_decomposition(cfg.benchmark, cfg.resolved_strategy, cfg.resolved_epsilon)
    except DecompositionError as exc:
        raise ConfigError(f"{cfg.benchmark}: {exc}") from None
    label = cfg.integrator
    if label in LABELS:
        sch = label_scheme(label)
        tabs = sch.stage_integrators
        if base.name != "strang":
            if len(set(tabs)) != 1:
                raise ConfigError(f"{label} is a Strang composition")
            tabs = (tabs[0],) * len(base.plan)
            sch = base
        last = label_last_subsystem(label)
        if last is not None:
            order = [i for i in range(len(dec.subproblems)) if i != last] + [last]
            dec = dec.reordered(order)
        if label == "3mid+Ra":
            if dec.plan is None:
                raise ConfigError("3mid+Ra needs a decomposition with private substructures")
            return Method(dec, SplittingScheme(label, base.plan), tabs, "radau2a_2")
        return Method(dec, SplittingScheme(label, sch.plan), tabs)
    parts = [p.strip() for p in label.split(",") if p.strip()]
    names = tuple(_resolve_tableau(p) for p in parts)
    if len(names) == 1:
        tabs = names * len(base.plan)
    elif len(names) == len(base.plan):
        tabs = names
    elif len(names) == len(dec.subproblems):
        tabs = tuple(names[k] for k, _, _ in base.plan)
    else:
        raise ConfigError(f"integrator list {label!r} matches neither stages nor subproblems")
    return Method(dec, base, tabs)


# --------------------------------------------------------------------------
# running


def n_steps(h_rel: float) -> int:
    return max(1, int(round(1.0 / h_rel)))


def simulate(cfg: RunConfig, h_rel: float, record: bool = False) -> Trajectory:
    b = cfg.bench
    m = resolve_method(cfg)
    t0, t1 = b.interval
    h = (t1 - t0) / n_steps(h_rel)
    if m.decoupled_tableau:
        tr = run_decoupled(m.decomposition, m.scheme, m.integrators, m.decoupled_tableau, t0, t1, h, b.x0)
    else:
        tr = run_splitting(m.decomposition, m.scheme, m.integrators, t0, t1, h, b.x0, record=record)
    tr.info["h_rel"] = h_rel
    return tr


def hamiltonian_of(b: Benchmark, X) -> np.ndarray:
    E = b.energy_matrix()
    X = np.asarray(X)
    return 0.5 * np.einsum("...i,ij,...j->...", X, E, X)


# --------------------------------------------------------------------------
# references


def exact_linear_reference(sys: PHDAESystem, times) -> np.ndarray:
    """Closed-form solution of an index-1 linear system with sinusoidal input, x(0) = x0.

    The algebraic part is eliminated in semi-explicit coordinates; the
    inherent ODE is solved as a phasor particular solution plus the matrix
    exponential of the homogeneous part.
    """
    times = np.asarray(times, dtype=float)
    se = to_semi_explicit(sys)
    n, r = se.n, se.r
    A = se.J - se.R
    B = se.B
    inp = sys.input
    xb0 = se.from_original(sys.x0)
    if r < n:
        A22inv = np.linalg.inv(A[r:, r:])
        Ah = A[:r, :r] - A[:r, r:] @ A22inv @ A[r:, :r]
        Bh = B[:r] - A[:r, r:] @ A22inv @ B[r:]
    else:
        Ah, Bh = A, B
    xp = np.zeros((times.size, r))
    xp0 = np.zeros(r)
    if isinstance(inp, SinusoidalInput) and sys.m:
        I = np.eye(r)
        for a, w, p in zip(inp.amplitudes, inp.omegas, inp.phases):
            z = np.linalg.solve(1j * w * I - Ah, Bh @ a)
            xp += np.imag(np.outer(np.exp(1j * (w * times + p)), z))
            xp0 += np.imag(z * np.exp(1j * p))
    # x0 is the state at t = 0, whatever grid is requested
    x1 = xp + expm_orbit(Ah, xb0[:r] - xp0, times)
    Xb = np.empty((times.size, n))
    Xb[:, :r] = x1
    if r < n:
        U = np.asarray(sys.u(times)).reshape(times.size, -1)
        Xb[:, r:] = -(x1 @ A[r:, :r].T + U @ B[r:].T) @ A22inv.T
    return se.to_original(Xb)


def _monolithic(b: Benchmark) -> Decomposition:
    from .integrators import LinearDAEProblem
    if b.system is not None:
        s = b.system.normalized()
        prob = LinearDAEProblem(s.E, s.J - s.R, s.B, s.input)
    else:
        prob = b.coupled.residual_problem()
    return Decomposition((Subproblem(prob, np.arange(b.n), "full"),), "monolithic", source=b.system or b.coupled)


MONOLITHIC = SplittingScheme("monolithic", ((0, 0.0, 1.0),))


@lru_cache(maxsize=8)
def _fine_reference(bench_id: str, method: str, h_rel: float) -> Trajectory:
    b = benchmark(bench_id)
    t0, t1 = b.interval
    return run_splitting(_monolithic(b), MONOLITHIC, method, t0, t1, (t1 - t0) / n_steps(h_rel), b.x0)


def compute_reference(b: Benchmark, policy: ReferencePolicy, times=None) -> Trajectory:
    """Reference trajectory sampled at ``times`` (default: the policy's own grid)."""
    if policy.kind == "fine_grid":
        fine = _fine_reference(b.id, tableau(policy.method).name, float(policy.h))
        if times is None:
            return fine
        times = np.asarray(times, dtype=float)
        X = _sample(fine.times, fine.states, times)
        return Trajectory(times, X, info={"policy": asdict(policy)})
    if times is None:
        t0, t1 = b.interval
        times = t0 + (t1 - t0) * np.arange(n_steps(policy.h) + 1) / n_steps(policy.h)
    times = np.asarray(times, dtype=float)
    if policy.kind == "analytic":
        if b.analytic is None:
            raise ConfigError(f"{b.id} has no analytic solution")
        X = b.analytic(times)
    else:
        X = exact_linear_reference(b.system, times)
    return Trajectory(times, X, info={"policy": asdict(policy)})


def _sample(tf, Xf, times):
    """States at ``times``; exact picks when the grids nest, linear interpolation otherwise."""
    Nf, N = tf.size - 1, times.size - 1
    if N > 0 and Nf % N == 0 and np.allclose(tf[::Nf // N], times, rtol=0, atol=1e-12 * abs(tf[-1])):
        return Xf[::Nf // N].copy()
    return np.stack([np.interp(times, tf, Xf[:, i]) for i in range(Xf.shape[1])], axis=1)


# --------------------------------------------------------------------------
# errors and order fits


def l2_norm(times, values) -> float:
    """sqrt(int |v|^2 dt) by the trapezoidal rule; rows of ``values`` are time samples."""
    v = np.asarray(values, dtype=float)
    sq = v ** 2 if v.ndim == 1 else np.sum(v ** 2, axis=1)
    return float(np.sqrt(np.trapezoid(sq, times)))


def fit_order(hs, errors, floor: float = 0.0) -> Tuple[float, float, int]:
    """Least-squares slope of log(error) over log(h).

    Points that failed or fall below ``floor`` are dropped. Returns
    (order, rms residual in decades, points used); order is nan with fewer
    than two usable points.
    """
    h = np.asarray(hs, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = np.isfinite(e) & (e > floor) & (e > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan"), int(ok.sum())
    x, y = np.log10(h[ok]), np.log10(e[ok])
    coef = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((np.polyval(coef, x) - y) ** 2)))
    return float(coef[0]), res, int(ok.sum())


@dataclass
class ConvergenceReport:
    benchmark: str
    scheme: str
    integrator: str
    hs: Tuple[float, ...]
    errors: Dict[str, np.ndarray]
    orders: Dict[str, Tuple[float, float, int]]
    hamiltonian_errors: np.ndarray
    error_constants: np.ndarray
    failures: Dict[float, str] = field(default_factory=dict)
    runtimes: Dict[float, float] = field(default_factory=dict)
    floor: float = 0.0

    def order(self, cls: str) -> float:
        return self.orders[cls][0]

    def order_loss(self, margin: float = 0.5) -> Tuple[str, ...]:
        """Variable groups whose fitted order trails the best group by more than ``margin``."""
        fitted = {c: o for c, (o, _, _) in self.orders.items()
                  if c not in ("all", "hamiltonian") and np.isfinite(o)}
        if not fitted:
            return ()
        best = max(fitted.values())
        return tuple(c for c, o in fitted.items() if o < best - margin)

    def rows(self) -> List[dict]:
        out = []
        classes = list(self.errors) + ["hamiltonian"]
        for i, h in enumerate(self.hs):
            for c in classes:
                e = self.hamiltonian_errors[i] if c == "hamiltonian" else self.errors[c][i]
                o, r, _ = self.orders[c]
                out.append({"benchmark": self.benchmark, "scheme": self.scheme,
                            "integrator": self.integrator, "h": h, "var_class": c,
                            "l2_error": e, "observed_order": o, "fit_residual": r})
        return out

    def summary(self) -> str:
        lines = [f"{self.benchmark} {self.scheme} {self.integrator}"]
        for c, (o, r, k) in self.orders.items():
            lines.append(f"  {c:>15s}: order {o:6.3f} (fit residual {r:.2e}, {k} points)")
        lost = self.order_loss()
        if lost:
            lines.append(f"  order loss in: {', '.join(lost)}")
        for h, msg in self.failures.items():
            lines.append(f"  h={h:.3g} failed: {msg}")
        return "\n".join(lines)


def _run_point(cfg: RunConfig, h_rel: float):
    t = time.perf_counter()
    try:
        tr = simulate(cfg, h_rel)
    except (StepFailure, np.linalg.LinAlgError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t
    return tr, None, time.perf_counter() - t


def converge(cfg: RunConfig) -> ConvergenceReport:
    """Run the sweep over cfg.h and fit observed orders per variable class."""
    cfg.validate()
    if len(cfg.h) < 4:
        raise ConfigError("order fits need at least four step sizes")
    b = cfg.bench
    policy = cfg.resolved_reference
    groups = b.report_groups()
    errors = {c: np.full(len(cfg.h), np.nan) for c in groups}
    errors["all"] = np.full(len(cfg.h), np.nan)
    herr = np.full(len(cfg.h), np.nan)
    failures, runtimes = {}, {}
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_point, [cfg] * len(cfg.h), cfg.h))
    else:
        results = [_run_point(cfg, h) for h in cfg.h]
    ref_norm = 0.0
    for i, (h, (tr, err, dt)) in enumerate(zip(cfg.h, results)):
        runtimes[h] = dt
        if tr is None:
            failures[h] = err
            continue
        ref = compute_reference(b, policy, tr.times)
        diff = tr.states - ref.states
        ref_norm = max(ref_norm, l2_norm(tr.times, ref.states))
        if not np.all(np.isfinite(diff)):
            failures[h] = "non-finite state (unstable run)"
            continue
        for c, idx in groups.items():
            errors[c][i] = l2_norm(tr.times, diff[:, idx])
        errors["all"][i] = l2_norm(tr.times, diff)
        herr[i] = l2_norm(tr.times, hamiltonian_of(b, tr.states) - hamiltonian_of(b, ref.states))
    floor = cfg.floor * ref_norm
    orders = {c: fit_order(cfg.h, e, floor) for c, e in errors.items()}
    orders["hamiltonian"] = fit_order(cfg.h, herr, cfg.floor * ref_norm ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        consts = herr / errors["all"]
    return ConvergenceReport(b.id, cfg.scheme, cfg.integrator, tuple(cfg.h), errors, orders,
                             herr, consts, failures, runtimes, floor)


# --------------------------------------------------------------------------
# energy


@dataclass
class EnergyReport:
    benchmark: str
    integrator: str
    h_rel: float
    times: np.ndarray
    hamiltonian: np.ndarray
    supply: np.ndarray            # per step, midpoint quadrature of u^T y over the sourced substeps
    step_balance: np.ndarray      # H(x_{n+1}) - H(x_n) - supply_n
    balance: np.ndarray           # H(x_n) - H(x_0) - sum of supplies
    j_step_error: np.ndarray      # | ||x_b||_E - ||x_a||_E | per conserving substep
    j_step_relative: np.ndarray
    substep_balance: np.ndarray   # (N, stages): H(x_b) - H(x_a) - supply over each substep
    tolerance: float

    @property
    def j_accumulated(self) -> float:
        return float(np.sum(self.j_step_error))

    @property
    def max_violation(self) -> float:
        return float(np.max(self.step_balance)) if self.step_balance.size else 0.0

    @property
    def satisfied(self) -> bool:
        return bool(np.all(np.isfinite(self.step_balance))) and self.max_violation <= self.tolerance

    @property
    def substep_max_violation(self) -> float:
        return float(np.max(self.substep_balance)) if self.substep_balance.size else 0.0

    @property
    def substeps_satisfied(self) -> bool:
        return bool(np.all(np.isfinite(self.substep_balance))) and self.substep_max_violation <= self.tolerance


def energy_report(cfg: RunConfig, h_rel: Optional[float] = None, rtol: float = 1e-10) -> EnergyReport:
    """Hamiltonian trace, dissipation balance and conservation of the J-subflow.

    The supply of a sourced substep [t_a, t_b] is
    (t_b - t_a) u(t_mid)^T B^T (x_a + x_b)/2. The balance counts as
    satisfied when every step's H increase minus supply stays below
    ``rtol`` times the energy scale (largest H or total supply). The same
    test is applied to each substep on its own, which catches a subflow that
    gains energy while a later one happens to dissipate it again. Under the
    epsilon embedding the regularized energy is tracked.
    """
    cfg.validate(sweep=False)
    b = cfg.bench
    h_rel = cfg.h[0] if h_rel is None else h_rel
    m = resolve_method(cfg)
    if m.decoupled_tableau:
        raise ConfigError("energy reports need a single splitting run")
    tr = simulate(cfg, h_rel, record=True)
    dec = m.decomposition
    SS = tr.stage_states
    N = tr.times.size - 1
    h = tr.h
    Em = dec.energy_matrix if dec.strategy == "jr_epsilon" else b.energy_matrix()
    H = 0.5 * np.einsum("ni,ij,nj->n", tr.states, Em, tr.states)
    supply = np.zeros(N)
    sub_bal = np.zeros((N, len(m.scheme.plan)))
    jerr, jrel = [], []
    for k, (sub, a, bb) in enumerate(m.scheme.plan):
        sp = dec.subproblems[sub]
        xa, xb = SS[:, k], SS[:, k + 1]
        tau = (bb - a) * h
        prob = sp.problem
        sub_bal[:, k] = 0.5 * (np.einsum("ni,ij,nj->n", xb, Em, xb) - np.einsum("ni,ij,nj->n", xa, Em, xa))
        if getattr(prob, "m", 0):
            tm = tr.times[:-1] + (a + bb) / 2 * h
            U = np.asarray(prob.u(tm)).reshape(N, -1)
            Y = 0.5 * (xa + xb) @ prob.Bmat
            w = tau * np.sum(U * Y, axis=1)
            supply += w
            sub_bal[:, k] -= w
        if sp.name == "J":
            E = prob.Elhs
            na, nb = energy_norm(E, xa), energy_norm(E, xb)
            d = np.abs(nb - na)
            jerr.append(d)
            with np.errstate(divide="ignore", invalid="ignore"):
                jrel.append(np.where(na > 0, d / na, np.nan))
    step = np.diff(H) - supply
    bal = np.concatenate([[0.0], np.cumsum(step)])
    scale = max(float(np.nanmax(np.abs(H))), float(np.sum(np.abs(supply))), np.finfo(float).tiny)
    je = np.stack(jerr, axis=1) if jerr else np.zeros((N, 0))
    jr = np.stack(jrel, axis=1) if jrel else np.zeros((N, 0))
    return EnergyReport(b.id, cfg.integrator, h_rel, tr.times, H, supply, step, bal, je, jr, sub_bal,
                        rtol * scale)


# --------------------------------------------------------------------------
# epsilon regularization


@dataclass
class EpsilonStudy:
    benchmark: str
    h_rel: float
    epsilons: np.ndarray
    errors: Dict[str, np.ndarray]
    slope: float
    slope_points: int
    kink: float
    monotone: bool

    def rows(self) -> List[dict]:
        return [{"benchmark": self.benchmark, "h": self.h_rel, "epsilon": e, "var_class": c,
                 "l2_error": self.errors[c][i]}
                for i, e in enumerate(self.epsilons) for c in self.errors]


def epsilon_study(benchmark_id: str = "loopcutset_rlc", epsilons=None, h_rel: float = 1e-6,
                  integrator: str = "3mid", reference: Optional[ReferencePolicy] = None) -> EpsilonStudy:
    """Error of the regularized splitting against the unregularized reference, per epsilon.

    Large epsilons saturate (the regularized variables barely move over the
    interval), small ones hit the splitting floor and then grow again. The
    slope is fitted on the stretch in between: above the error minimum (the
    kink) and below half the saturation level.
    """
    eps = np.sort(np.asarray(epsilons if epsilons is not None else 10.0 ** -np.arange(6, 14.25, 0.5),
                             dtype=float))[::-1]
    base = RunConfig(benchmark_id, "strang", integrator, "jr_epsilon", float(eps[0]), (h_rel,), reference)
    base.validate(sweep=False)
    b = base.bench
    groups = b.report_groups()
    errors = {c: np.full(eps.size, np.nan) for c in groups}
    errors["all"] = np.full(eps.size, np.nan)
    policy = base.resolved_reference
    for i, e in enumerate(eps):
        tr = simulate(replace(base, epsilon=float(e)), h_rel)
        ref = compute_reference(b, policy, tr.times)
        diff = tr.states - ref.states
        for c, idx in groups.items():
            errors[c][i] = l2_norm(tr.times, diff[:, idx])
        errors["all"][i] = l2_norm(tr.times, diff)
    tot = errors["all"]
    ik = int(np.nanargmin(tot))
    kink = float(eps[ik])
    head = tot[: ik + 1]
    monotone = bool(np.all(np.diff(head) <= 1e-12 * np.nanmax(tot)))
    sel = (eps > kink) & (tot <= 0.5 * np.nanmax(head))
    slope, _, npts = fit_order(eps[sel], tot[sel]) if sel.sum() >= 2 else (float("nan"), 0, int(sel.sum()))
    return EpsilonStudy(b.id, h_rel, eps, errors, slope, npts, kink, monotone)


# --------------------------------------------------------------------------
# output


def _slug(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", s).strip("_")


def write_csv(path, rows: List[dict], fields: Sequence[str]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


CONVERGENCE_FIELDS = ("benchmark", "scheme", "integrator", "h", "var_class", "l2_error",
                      "observed_order", "fit_residual")


def write_manifest(path, command: str, cfg_dict: dict, files: Dict[str, str], extra=None):
    data = {"command": command, "version": __version__, "config": cfg_dict, "files": files,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# --------------------------------------------------------------------------
# command line


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return d


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phsplit", description="Splitting schemes for coupled and port-Hamiltonian DAEs.")
    sub = p.add_subparsers(dest="command", metavar="{list,simulate,converge,energy,epsilon}")
    sub.required = True
    sub.add_parser("list", help="list benchmarks, integrators and labels")

    def common(sp):
        sp.add_argument("--config", help="JSON file with RunConfig keys")
        sp.add_argument("--benchmark")
        sp.add_argument("--scheme")
        sp.add_argument("--integrator")
        sp.add_argument("--strategy", choices=STRATEGIES)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--h", nargs="+", help="relative step sizes, e.g. 1e-2 1e-2.5 1e-3")
        sp.add_argument("--reference", choices=("analytic", "exact", "fine_grid"))
        sp.add_argument("--reference-method")
        sp.add_argument("--reference-h")
        sp.add_argument("--output")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--no-plots", action="store_true")

    for name, text in (("simulate", "run one step size and write the trajectory"),
                       ("converge", "convergence sweep with order fits"),
                       ("energy", "dissipation balance and J-subflow conservation"),
                       ("epsilon", "error against the regularization parameter")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        if name == "epsilon":
            sp.add_argument("--eps", nargs="+", help="regularization parameters")
    return p


def _config_from_args(args) -> RunConfig:
    d = _load_config(args.config) if args.config else {}
    for key in ("benchmark", "scheme", "integrator", "strategy", "epsilon", "output", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if args.h:
        d["h"] = [parse_h(v) for v in args.h]
    elif args.command == "epsilon" and "h" not in d:
        d["h"] = [1e-6]
    if args.reference or args.reference_method or args.reference_h:
        ref = d.get("reference") or {}
        ref = {"kind": ref} if isinstance(ref, str) else dict(ref)
        if args.reference:
            ref["kind"] = args.reference
        if args.reference_method:
            ref["method"] = args.reference_method
            ref.setdefault("kind", "fine_grid")
        if args.reference_h:
            ref["h"] = parse_h(args.reference_h)
            ref.setdefault("kind", "fine_grid")
        d["reference"] = ref
    if args.no_plots:
        d["plots"] = False
    try:
        return RunConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _cmd_list(out=None) -> int:
    out = out or sys.stdout
    print("benchmarks:", file=out)
    for i in benchmark_ids():
        b = benchmark(i)
        print(f"  {i:24s} n={b.n:<3d} T={b.T:g}  {b.description}", file=out)
    print("integrators: " + ", ".join(TABLEAU_NAMES), file=out)
    print("labels: " + ", ".join(LABELS), file=out)
    print("schemes: lie, strang, triple_jump", file=out)
    return EXIT_OK


def _cmd_simulate(cfg: RunConfig) -> int:
    cfg.validate(sweep=False)
    b = cfg.bench
    os.makedirs(cfg.output, exist_ok=True)
    h = cfg.h[0]
    tr = simulate(cfg, h)
    H = hamiltonian_of(b, tr.states)
    stem = _slug(f"{b.id}_{cfg.scheme}_{cfg.integrator}_h{h:.3g}")
    path = os.path.join(cfg.output, stem + "_trajectory.csv")
    rows = [dict(t=t, **{nm: x[i] for i, nm in enumerate(b.names)}, H=hv)
            for t, x, hv in zip(tr.times, tr.states, H)]
    write_csv(path, rows, ["t", *b.names, "H"])
    files = {"trajectory": path}
    if cfg.plots:
        from .plotting import plot_trajectory
        files["figure"] = plot_trajectory(tr, b, os.path.join(cfg.output, stem + "_trajectory.png"))
    write_manifest(os.path.join(cfg.output, stem + "_manifest.json"), "simulate", cfg.to_dict(), files)
    print(f"wrote {path}")
    return EXIT_NUMERIC if not np.all(np.isfinite(tr.states)) else EXIT_OK


def _cmd_converge(cfg: RunConfig) -> int:
    rep = converge(cfg)
    os.makedirs(cfg.output, exist_ok=True)
    stem = _slug(f"{rep.benchmark}_{cfg.scheme}_{cfg.integrator}_convergence")
    path = os.path.join(cfg.output, stem + ".csv")
    write_csv(path, rep.rows(), CONVERGENCE_FIELDS)
    files = {"csv": path}
    if cfg.plots:
        from .plotting import plot_convergence
        files["figure"] = plot_convergence(rep, os.path.join(cfg.output, stem + ".png"))
    write_manifest(os.path.join(cfg.output, stem + "_manifest.json"), "converge", cfg.to_dict(), files,
                   {"orders": rep.orders, "failures": rep.failures, "runtimes": rep.runtimes,
                    "error_constants": rep.error_constants})
    print(rep.summary())
    return EXIT_NUMERIC if rep.failures else EXIT_OK


def _cmd_energy(cfg: RunConfig) -> int:
    rep = energy_report(cfg)
    os.makedirs(cfg.output, exist_ok=True)
    stem = _slug(f"{rep.benchmark}_{cfg.integrator}_h{rep.h_rel:.3g}_energy")
    path = os.path.join(cfg.output, stem + ".csv")
    N = rep.times.size - 1
    rows = []
    for n in range(N + 1):
        r = {"t": rep.times[n], "H": rep.hamiltonian[n], "balance": rep.balance[n],
             "step_balance": rep.step_balance[n - 1] if n else 0.0,
             "supply": rep.supply[n - 1] if n else 0.0,
             "substep_excess": float(np.max(rep.substep_balance[n - 1])) if n else 0.0,
             "j_error": float(np.sum(rep.j_step_error[n - 1])) if n and rep.j_step_error.size else 0.0}
        rows.append(r)
    write_csv(path, rows, ["t", "H", "balance", "step_balance", "supply", "substep_excess", "j_error"])
    files = {"csv": path}
    if cfg.plots:
        from .plotting import plot_energy
        files["figure"] = plot_energy(rep, os.path.join(cfg.output, stem + ".png"))
    write_manifest(os.path.join(cfg.output, stem + "_manifest.json"), "energy", cfg.to_dict(), files,
                   {"satisfied": rep.satisfied, "max_violation": rep.max_violation,
                    "tolerance": rep.tolerance, "j_accumulated": rep.j_accumulated,
                    "substeps_satisfied": rep.substeps_satisfied,
                    "substep_max_violation": rep.substep_max_violation})
    print(f"dissipation inequality {'satisfied' if rep.satisfied else 'VIOLATED'}: "
          f"max step excess {rep.max_violation:.3e} (tolerance {rep.tolerance:.3e}); "
          f"per substep {'satisfied' if rep.substeps_satisfied else 'VIOLATED'} "
          f"(max excess {rep.substep_max_violation:.3e}); "
          f"accumulated J-subflow drift {rep.j_accumulated:.3e}")
    return EXIT_OK if np.all(np.isfinite(rep.hamiltonian)) else EXIT_NUMERIC


def _cmd_epsilon(cfg: RunConfig, eps) -> int:
    b = cfg.bench
    study = epsilon_study(b.id, [parse_h(e) for e in eps] if eps else None, cfg.h[0],
                          cfg.integrator, cfg.reference)
    os.makedirs(cfg.output, exist_ok=True)
    stem = _slug(f"{b.id}_epsilon_h{study.h_rel:.3g}")
    path = os.path.join(cfg.output, stem + ".csv")
    write_csv(path, study.rows(), ["benchmark", "h", "epsilon", "var_class", "l2_error"])
    files = {"csv": path}
    if cfg.plots:
        from .plotting import plot_epsilon
        files["figure"] = plot_epsilon(study, os.path.join(cfg.output, stem + ".png"))
    write_manifest(os.path.join(cfg.output, stem + "_manifest.json"), "epsilon", cfg.to_dict(), files,
                   {"slope": study.slope, "slope_points": study.slope_points, "kink": study.kink,
                    "monotone": study.monotone})
    print(f"slope {study.slope:.3f} over {study.slope_points} points; kink at epsilon={study.kink:.1e}")
    return EXIT_OK


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    try:
        if args.command == "list":
            return _cmd_list()
        cfg = _config_from_args(args)
        if args.command == "epsilon":
            return _cmd_epsilon(cfg, args.eps)
        return {"simulate": _cmd_simulate, "converge": _cmd_converge, "energy": _cmd_energy}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
