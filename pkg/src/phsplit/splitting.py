"""Decompositions of coupled DAEs into subflows and splitting schemes that compose them.

Two families of decomposition are provided:

* dimension-reducing: each subproblem integrates its own differential
  variables, freezes the other subsystem's differential variables and solves
  all coupling constraints (the constraints are doubled);
* J-R: the energy-conserving flow E x' = J x and the dissipative, driven flow
  E x' = -R x + B u, with a kernel regularization of whichever pencil would
  otherwise be singular.

Schemes are stage plans of (subproblem index, start fraction, end fraction);
a subflow integrates its own time variable over [t + a h, t + b h].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .phdae_core import (PHDAESystem, kernel_projector, pencil_regular, ZeroInput,
                         numerical_rank)
from .integrators import (LinearDAEProblem, ResidualDAEProblem, LinearStepMap,
                          NewtonOptions, StepFailure, irk_step_residual, tableau,
                          ButcherTableau)


class DecompositionError(ValueError):
    pass


class AssumptionViolation(DecompositionError):
    """Neither J-R case applies; ``nonzero`` lists the offending kernel products."""

    def __init__(self, message, nonzero: Dict[str, float]):
        super().__init__(message)
        self.nonzero = dict(nonzero)


BLOCK_NAMES = ("x11", "z11", "x21", "z21", "x12", "z12", "x22", "z22")


# --------------------------------------------------------------------------
# coupled semi-explicit systems


@dataclass(frozen=True)
class SemiExplicitDAE:
    """Coupled system M x' = F(t, x) with variables grouped into named blocks.

    Row i is the equation belonging to variable i: rows of x11 carry f1,
    rows of z11 carry g1, and so on. Blocks x12/z12 and x22/z22 hold the
    private substructures of the two subsystems (both may be empty).

    ``linear`` optionally stores (A, B, input) with F = A x + B u(t); linear
    subproblems are then solved with direct stage solves instead of Newton.
    """

    M: np.ndarray
    F: Callable
    blocks: Dict[str, np.ndarray]
    x0: np.ndarray
    jacobian: Optional[Callable] = None
    linear: Optional[tuple] = None
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        n = M.shape[0]
        blocks = {k: np.asarray(self.blocks.get(k, []), dtype=int) for k in BLOCK_NAMES}
        unknown = set(self.blocks) - set(BLOCK_NAMES)
        if unknown:
            raise DecompositionError(f"unknown block names {sorted(unknown)}")
        allidx = np.concatenate(list(blocks.values()))
        if sorted(allidx.tolist()) != list(range(n)):
            raise DecompositionError("blocks must partition the state indices")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "x0", np.array(self.x0, dtype=float))
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def from_linear(cls, E, A, B, input, blocks, x0, names=None):
        E = np.asarray(E, dtype=float)
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float).reshape(E.shape[0], -1)
        inp = input if input is not None else ZeroInput(B.shape[1])

        def F(t, x):
            return A @ x + (B @ np.asarray(inp(t)).reshape(-1) if B.shape[1] else 0.0)

        return cls(E, F, blocks, x0, jacobian=lambda t, x: A, linear=(A, B, inp), names=names)

    @classmethod
    def from_phdae(cls, sys: PHDAESystem, blocks, names=None):
        s = sys.normalized()
        return cls.from_linear(s.E, s.J - s.R, s.B, s.input, blocks, s.x0,
                               names=names if names is not None else s.names)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def block(self, *names) -> np.ndarray:
        if not names:
            return np.zeros(0, dtype=int)
        return np.sort(np.concatenate([self.blocks[k] for k in names]))

    def dfdx(self, t, x) -> np.ndarray:
        if self.jacobian is not None:
            return np.asarray(self.jacobian(t, x), dtype=float)
        f0 = np.asarray(self.F(t, x), dtype=float)
        Jm = np.empty((self.n, self.n))
        for j in range(self.n):
            d = np.sqrt(np.finfo(float).eps) * (1.0 + abs(x[j]))
            xp = np.array(x, dtype=float)
            xp[j] += d
            Jm[:, j] = (np.asarray(self.F(t, xp)) - f0) / d
        return Jm

    def residual_problem(self) -> ResidualDAEProblem:
        M, F = self.M, self.F
        mask = np.any(M != 0, axis=1)

        def res(t, x, xd):
            return M @ np.where(mask, xd, 0.0) - F(t, x)

        jac = None
        if self.jacobian is not None:
            jf = self.jacobian

            def jac(t, x, xd):
                return -np.asarray(jf(t, x)), M

        return ResidualDAEProblem(mask, res, jac)

    def linear_problem(self) -> LinearDAEProblem:
        if self.linear is None:
            raise DecompositionError("system has no linear representation")
        A, B, inp = self.linear
        return LinearDAEProblem(self.M, A, B, inp)

    def constraint_residual(self, t, x, rows) -> np.ndarray:
        """Value of the algebraic equations in ``rows`` (zero rows of M)."""
        return -np.asarray(self.F(t, x), dtype=float)[np.asarray(rows, dtype=int)]


# --------------------------------------------------------------------------
# decompositions


@dataclass(frozen=True)
class Subproblem:
    problem: Union[LinearDAEProblem, ResidualDAEProblem]
    active: np.ndarray
    name: str = ""

    def __post_init__(self):
        a = np.asarray(self.active, dtype=int)
        a.setflags(write=False)
        object.__setattr__(self, "active", a)

    @property
    def kind(self) -> str:
        return "linear" if isinstance(self.problem, LinearDAEProblem) else "residual"

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def frozen(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.active)

    @property
    def full(self) -> bool:
        return self.active.size == self.n


@dataclass(frozen=True)
class DecoupledPlan:
    """Integrate the coupling part by splitting, then the substructures on their own."""

    coupling: "Decomposition"
    substructures: Tuple[np.ndarray, ...]
    problem: ResidualDAEProblem
    coupling_vars: np.ndarray


@dataclass(frozen=True)
class Decomposition:
    subproblems: Tuple[Subproblem, ...]
    strategy: str
    epsilon: Optional[float] = None
    energy_matrix: Optional[np.ndarray] = None
    constraints: Dict[str, np.ndarray] = field(default_factory=dict)
    source: object = None
    plan: Optional[DecoupledPlan] = None
    dependence: Optional[Dict[str, Tuple[str, ...]]] = None

    @property
    def n(self) -> int:
        return self.subproblems[0].n

    @property
    def linear(self) -> bool:
        return all(sp.kind == "linear" for sp in self.subproblems)

    def reordered(self, order: Sequence[int]) -> "Decomposition":
        subs = tuple(self.subproblems[i] for i in order)
        return Decomposition(subs, self.strategy, self.epsilon, self.energy_matrix,
                             self.constraints, self.source, self.plan, self.dependence)

    def index_of(self, name: str) -> int:
        for i, sp in enumerate(self.subproblems):
            if sp.name == name:
                return i
        raise KeyError(name)


def _check_constraint_jacobian(coupled: SemiExplicitDAE, t0=0.0):
    Jf = coupled.dfdx(t0, coupled.x0)
    g1, g2 = coupled.blocks["z11"], coupled.blocks["z21"]
    z = coupled.block("z11", "z21")
    rows = np.concatenate([g1, g2])

    def singular(r, c):
        if r.size == 0:
            return False
        blk = Jf[np.ix_(r, c)]
        return blk.shape[0] != blk.shape[1] or numerical_rank(blk) < blk.shape[0]

    if singular(np.sort(rows), z):
        raise DecompositionError("constraint Jacobian d(g1,g2)/d(z11,z21) is singular at x0")
    if singular(g1, coupled.blocks["z11"]) or singular(g2, coupled.blocks["z21"]):
        raise DecompositionError("dg1/dz11 or dg2/dz21 is singular at x0")


def _make_problem(coupled: SemiExplicitDAE):
    if coupled.linear is not None:
        return coupled.linear_problem()
    return coupled.residual_problem()


def decompose_dim_reducing(coupled: SemiExplicitDAE) -> Decomposition:
    """Dimension-reducing decomposition with doubled coupling constraints.

    Subproblem 1 updates (x11, z11, z21) with x21 frozen; subproblem 2
    updates (x21, z21, z11) with x11 frozen.
    """
    if any(coupled.blocks[k].size for k in ("x12", "z12", "x22", "z22")):
        return decompose_dim_reducing_private2(coupled)
    _check_constraint_jacobian(coupled)
    prob = _make_problem(coupled)
    s1 = Subproblem(prob, coupled.block("x11", "z11", "z21"), "S1")
    s2 = Subproblem(prob, coupled.block("x21", "z21", "z11"), "S2")
    cons = {"g1": coupled.blocks["z11"], "g2": coupled.blocks["z21"]}
    return Decomposition((s1, s2), "dim_reducing", constraints=cons, source=coupled,
                         energy_matrix=coupled.M)


def _structural_dependence(coupled: SemiExplicitDAE, rows, cols, samples=5, seed=7) -> bool:
    """True if any equation in ``rows`` depends on any variable in ``cols``.

    The Jacobian is sampled at a few pseudo-random times and states so that
    coefficients that vanish at t = 0 (e.g. sin(t)) are not missed.
    """
    if len(rows) == 0 or len(cols) == 0:
        return False
    rng = np.random.default_rng(seed)
    scale = 1.0 + np.abs(coupled.x0)
    for _ in range(samples):
        t = float(rng.uniform(0.05, 1.0)) * 1e-3
        x = coupled.x0 + scale * rng.standard_normal(coupled.n)
        Jf = coupled.dfdx(t, x)
        if np.any(np.abs(Jf[np.ix_(rows, cols)]) > 0):
            return True
    return False


def decompose_dim_reducing_private2(coupled: SemiExplicitDAE) -> Decomposition:
    """Dimension-reducing decomposition with private (index-2) substructures.

    Coupling constraints g1, g2 are doubled; substructure equations h_i, k_i
    live only in subproblem i. The result also carries a decoupled plan in
    which only the coupling part is split and the substructures are
    integrated afterwards, and a structural dependence map of the
    substructures on the coupling variables.
    """
    _check_constraint_jacobian(coupled)
    prob = _make_problem(coupled)
    s1 = Subproblem(prob, coupled.block("x11", "z11", "z21", "x12", "z12"), "S1")
    s2 = Subproblem(prob, coupled.block("x21", "z21", "z11", "x22", "z22"), "S2")
    cons = {"g1": coupled.blocks["z11"], "g2": coupled.blocks["z21"]}

    coupling = coupled.block("x11", "z11", "x21", "z21")
    sub1 = coupled.block("x12", "z12")
    sub2 = coupled.block("x22", "z22")
    dep = {}
    for label, rows in (("substructure1", sub1), ("substructure2", sub2)):
        hit = []
        for blk in ("x11", "z11", "x21", "z21"):
            if _structural_dependence(coupled, rows, coupled.blocks[blk]):
                hit.append(blk)
        dep[label] = tuple(hit)

    plan = None
    subs_all = np.concatenate([sub1, sub2])
    if not _structural_dependence(coupled, coupling, subs_all):
        c1 = Subproblem(prob, coupled.block("x11", "z11", "z21"), "S1")
        c2 = Subproblem(prob, coupled.block("x21", "z21", "z11"), "S2")
        cdec = Decomposition((c1, c2), "dim_reducing", constraints=cons, source=coupled)
        plan = DecoupledPlan(cdec, (sub1, sub2), coupled.residual_problem(), coupling)
    return Decomposition((s1, s2), "dim_reducing_private2", constraints=cons, source=coupled,
                         plan=plan, dependence=dep, energy_matrix=coupled.M)


def _kernel_products(sys: PHDAESystem, tol):
    K = kernel_projector(sys.E, tol).K
    scale = lambda M: max(np.linalg.norm(M, 2), 1e-300)
    prods = {
        "KtJ": float(np.linalg.norm(K.T @ sys.J, 2) / scale(sys.J)) if np.any(sys.J) else 0.0,
        "KtR": float(np.linalg.norm(K.T @ sys.R, 2) / scale(sys.R)) if np.any(sys.R) else 0.0,
        "KtB": float(np.linalg.norm(K.T @ sys.B, 2) / scale(sys.B)) if sys.B.size and np.any(sys.B) else 0.0,
    }
    return K, prods


def jr_case(sys: PHDAESystem, rank_tolerance: float = 1e-10):
    """Return (case, K, products) with case in {'ode', 'case_a', 'case_b', 'neither'}."""
    s = sys.normalized()
    K, prods = _kernel_products(s, rank_tolerance)
    if not np.any(K):
        return "ode", K, prods
    tol = 1e3 * rank_tolerance
    if prods["KtR"] <= tol and prods["KtB"] <= tol and pencil_regular(s.E, s.J, rank_tolerance):
        return "case_a", K, prods
    if prods["KtJ"] <= tol and pencil_regular(s.E, s.R, rank_tolerance):
        return "case_b", K, prods
    return "neither", K, prods


def _jr_subproblems(s: PHDAESystem, EJ, ER):
    n = s.n
    Jp = LinearDAEProblem(EJ, s.J)
    Rp = LinearDAEProblem(ER, -s.R, s.B, s.input)
    return (Subproblem(Jp, np.arange(n), "J"), Subproblem(Rp, np.arange(n), "R"))


def decompose_jr(sys: PHDAESystem, rank_tolerance: float = 1e-10) -> Decomposition:
    """J-R decomposition; subproblem 0 is the J-flow, subproblem 1 the R-flow.

    Case (a), constraints only in the J part: E x' = J x and
    (E + K^T K) x' = -R x + B u. Case (b) is mirrored. For nonsingular E both
    subflows keep E.
    """
    case, K, prods = jr_case(sys, rank_tolerance)
    s = sys.normalized()
    reg = s.E + K.T @ K
    if case == "ode":
        subs, tag = _jr_subproblems(s, s.E, s.E), "jr_ode"
    elif case == "case_a":
        subs, tag = _jr_subproblems(s, s.E, reg), "jr_case_a"
    elif case == "case_b":
        subs, tag = _jr_subproblems(s, reg, s.E), "jr_case_b"
    else:
        bad = {k: v for k, v in prods.items() if v > 1e3 * rank_tolerance}
        raise AssumptionViolation(
            "neither case (a) nor case (b) holds; nonzero products: " + ", ".join(sorted(bad)), bad)
    alg = np.flatnonzero(np.diag(K) > 0.5) if np.any(K) else np.zeros(0, dtype=int)
    return Decomposition(subs, tag, energy_matrix=s.E, source=s, constraints={"kernel": alg})


def decompose_jr_epsilon(sys: PHDAESystem, epsilon: float, rank_tolerance: float = 1e-10) -> Decomposition:
    """Both subflows use E_eps = E + eps K^T K; energy is tracked with E_eps."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    s = sys.normalized()
    K = kernel_projector(s.E, rank_tolerance).K
    Eeps = s.E + epsilon * (K.T @ K)
    subs = _jr_subproblems(s, Eeps, Eeps)
    return Decomposition(subs, "jr_epsilon", epsilon=float(epsilon), energy_matrix=Eeps, source=s)


def decompose_jr_unregularized(sys: PHDAESystem) -> Decomposition:
    """J-R split that keeps the singular E in both subflows, whatever the structure.

    When constraints touch both parts this splits an algebraic equation
    between the subflows; it is provided to exhibit that failure mode.
    """
    s = sys.normalized()
    subs = _jr_subproblems(s, s.E, s.E)
    return Decomposition(subs, "jr_unregularized", energy_matrix=s.E, source=s)


# --------------------------------------------------------------------------
# schemes

ALPHA = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
BETA = -(2.0 ** (1.0 / 3.0)) / (2.0 - 2.0 ** (1.0 / 3.0))


@dataclass(frozen=True)
class SplittingScheme:
    """Stage plan of (subproblem index, a, b) in order of application.

    Subproblem 1 is the outer flow of the Strang sandwich; a subflow runs
    from t + a h to t + b h. ``stage_integrators`` optionally fixes one
    tableau per stage (adjoint compositions).
    """

    name: str
    plan: Tuple[Tuple[int, float, float], ...]
    stage_integrators: Optional[Tuple[str, ...]] = None

    @staticmethod
    def lie() -> "SplittingScheme":
        return SplittingScheme("lie", ((1, 0.0, 1.0), (0, 0.0, 1.0)))

    @staticmethod
    def strang() -> "SplittingScheme":
        return SplittingScheme("strang", ((1, 0.0, 0.5), (0, 0.0, 1.0), (1, 0.5, 1.0)))

    @staticmethod
    def triple_jump() -> "SplittingScheme":
        a, b = ALPHA, BETA
        plan = ((1, 0.0, a / 2), (0, 0.0, a), (1, a / 2, a + b / 2), (0, a, a + b),
                (1, a + b / 2, 1.5 * a + b), (0, a + b, 2 * a + b), (1, 1.5 * a + b, 2 * a + b))
        return SplittingScheme("triple_jump", plan)

    @staticmethod
    def composed(first: str, mid: str, last: str) -> "SplittingScheme":
        st = SplittingScheme.strang()
        names = tuple(tableau(k).name for k in (first, mid, last))
        return SplittingScheme(f"composed({first},{mid},{last})", st.plan, names)

    @property
    def lengths(self) -> Tuple[Tuple[int, float], ...]:
        return tuple((k, b - a) for k, a, b in self.plan)

    @property
    def n_subproblems(self) -> int:
        return 1 + max(k for k, _, _ in self.plan)


def scheme(name: str) -> SplittingScheme:
    key = name.lower().replace("-", "_")
    if key in ("lie", "lie_trotter"):
        return SplittingScheme.lie()
    if key == "strang":
        return SplittingScheme.strang()
    if key in ("triple_jump", "tj"):
        return SplittingScheme.triple_jump()
    raise KeyError(f"unknown scheme {name!r}")


# legend labels: (scheme, per-stage tableaus or uniform tableau, subproblem order)
LABELS = {
    "3mid": ("strang", ("gauss1", "gauss1", "gauss1")),
    "eE-mid-iE": ("strang", ("euler_explicit", "gauss1", "radau2a_1")),
    "iE-mid-eE": ("strang", ("radau2a_1", "gauss1", "euler_explicit")),
    "iE-mid-iE": ("strang", ("radau2a_1", "gauss1", "radau2a_1")),
    "eE-mid-eE": ("strang", ("euler_explicit", "gauss1", "euler_explicit")),
    "mid-Heun-mid": ("strang", ("gauss1", "heun", "gauss1")),
    "mid-Lob3C-mid": ("strang", ("gauss1", "lobatto3c_2", "gauss1")),
    "Lob3c-mid-Lob3c": ("strang", ("lobatto3c_2", "gauss1", "lobatto3c_2")),
    "Rad1A-mid-Rad1A": ("strang", ("radau1a_2", "gauss1", "radau1a_2")),
    "Rad2A-mid-Rad2A": ("strang", ("radau2a_2", "gauss1", "radau2a_2")),
    "Rad2A S1": ("strang", ("radau2a_2",) * 3),
    "Rad2A S2": ("strang", ("radau2a_2",) * 3),
    "3mid+Ra": ("strang", ("gauss1",) * 3),
}


def label_scheme(label: str) -> SplittingScheme:
    """Scheme for a legend label such as '3mid' or 'eE-mid-iE'."""
    sch, tabs = LABELS[label]
    base = scheme(sch)
    return SplittingScheme(label, base.plan, tuple(tableau(t).name for t in tabs))


def label_last_subsystem(label: str) -> Optional[int]:
    """For 'Rad2A S<i>' labels: the 0-based subproblem index solved last."""
    if label.startswith("Rad2A S"):
        return int(label[-1]) - 1
    return None


# --------------------------------------------------------------------------
# running


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    decomposition: Optional[Decomposition] = None
    scheme: Optional[SplittingScheme] = None
    integrators: Optional[Tuple[str, ...]] = None
    stage_states: Optional[np.ndarray] = None   # (N, n_stages + 1, n)
    info: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def _resolve_integrators(dec: Decomposition, sch: SplittingScheme, integrators) -> Tuple[str, ...]:
    nst = len(sch.plan)
    nsub = len(dec.subproblems)
    if integrators is None:
        if sch.stage_integrators is None:
            raise ValueError("no subflow integrators given")
        return sch.stage_integrators
    if isinstance(integrators, (str, ButcherTableau)):
        return tuple(tableau(integrators).name for _ in range(nst))
    integ = tuple(integrators)
    if len(integ) == nsub:
        return tuple(tableau(integ[k]).name for k, _, _ in sch.plan)
    if len(integ) == nst:
        return tuple(tableau(t).name for t in integ)
    raise ValueError(f"need {nsub} per-subproblem or {nst} per-stage integrators, got {len(integ)}")


def _n_steps(t0, T, h):
    span = T - t0
    N = int(round(span / h))
    if N < 1 or abs(N * h - span) > 1e-9 * abs(span):
        raise ValueError(f"step {h!r} does not divide the interval length {span!r}")
    return N


def _input_samples(prob: LinearDAEProblem, times: np.ndarray) -> np.ndarray:
    """u at an (N, s) array of times, returned as (N, s*m)."""
    N, s = times.shape
    m = prob.m
    if m == 0:
        return np.zeros((N, 0))
    try:
        U = np.asarray(prob.input(times), dtype=float)
        if U.shape != (N, s, m):
            raise ValueError
    except Exception:
        U = np.array([[np.asarray(prob.input(t), dtype=float).reshape(m) for t in row] for row in times])
    return U.reshape(N, s * m)


def run_splitting(dec: Decomposition, sch: SplittingScheme, integrators=None,
                  t0: float = 0.0, T: float = 1.0, h: float = 0.1, x0=None,
                  record: bool = False, newton: NewtonOptions = NewtonOptions()) -> Trajectory:
    """Integrate with the splitting scheme on a uniform grid of step h.

    ``integrators`` is one tableau name for every stage, one per subproblem,
    or one per stage; None uses the scheme's own stage assignment.
    With ``record=True`` the state after every stage is kept.
    """
    integ = _resolve_integrators(dec, sch, integrators)
    if sch.n_subproblems > len(dec.subproblems):
        raise ValueError("scheme refers to more subproblems than the decomposition has")
    N = _n_steps(t0, T, h)
    n = dec.n
    if x0 is None:
        src = dec.source
        x0 = src.x0 if src is not None else np.zeros(n)
    x = np.array(x0, dtype=float).reshape(n)
    times = t0 + h * np.arange(N + 1)
    tabs = [tableau(t) for t in integ]
    stages = []
    for (k, a, b), tab in zip(sch.plan, tabs):
        sp = dec.subproblems[k]
        tau = (b - a) * h
        if sp.kind == "linear":
            smap = LinearStepMap(sp.problem, tab, tau, None if sp.full else sp.active)
            nodes = times[:-1, None] + a * h + tab.c[None, :] * tau
            U = _input_samples(sp.problem, nodes)
            stages.append(("linear", sp, tab, a, tau, smap, U))
        else:
            stages.append(("residual", sp, tab, a, tau, None, None))

    X = np.empty((N + 1, n))
    X[0] = x
    SS = np.empty((N, len(stages) + 1, n)) if record else None

    if all(st[0] == "linear" for st in stages) and not record:
        # compose the per-stage affine maps into a single step map
        Phi = np.eye(n)
        F = np.zeros((N, n))
        for kind, sp, tab, a, tau, smap, U in stages:
            F = F @ smap.Phi.T
            if U.shape[1]:
                F += U @ smap.G.T
            Phi = smap.Phi @ Phi
        _linear_recurrence(Phi, F, X)
    else:
        for i in range(N):
            t = times[i]
            if record:
                SS[i, 0] = x
            for j, (kind, sp, tab, a, tau, smap, U) in enumerate(stages):
                if kind == "linear":
                    y = smap.Phi @ x
                    if U.shape[1]:
                        y += smap.G @ U[i]
                    x = y
                else:
                    try:
                        x = irk_step_residual(sp.problem, tab, t + a * h, tau, x, newton, active=sp.active)
                    except StepFailure as exc:
                        exc.step_index = i
                        raise
                if record:
                    SS[i, j + 1] = x
            if not np.all(np.isfinite(x)):
                X[i + 1:] = np.nan
                break
            X[i + 1] = x
    return Trajectory(times, X, dec, sch, integ, SS, {"h": h, "N": N})


def _linear_recurrence(Phi, F, X, block=32):
    """X[k+1] = Phi X[k] + F[k] in place.

    Steps are grouped in blocks of ``block``: the forcing inside all blocks is
    propagated with one block-Toeplitz product, and only block starts are
    chained serially.
    """
    N, n = F.shape
    nb = N // block if N >= 8 * block else 0
    with np.errstate(over="ignore", invalid="ignore"):
        if nb:
            P = np.empty((block + 1, n, n))
            P[0] = np.eye(n)
            for j in range(1, block + 1):
                P[j] = Phi @ P[j - 1]
            T = np.zeros((block, n, block, n))
            for j in range(block):
                for i in range(j + 1):
                    T[j, :, i, :] = P[j - i]
            T = T.reshape(block * n, block * n)
            Y = (F[:nb * block].reshape(nb, block * n) @ T.T).reshape(nb, block, n)
            xs = np.empty((nb + 1, n))
            xs[0] = X[0]
            PL = P[block]
            for b in range(nb):
                xs[b + 1] = PL @ xs[b] + Y[b, -1]
            X[1:nb * block + 1] = (np.einsum("jkl,bl->bjk", P[1:], xs[:nb]) + Y).reshape(-1, n)
        x = X[nb * block].copy()
        PhiT = np.ascontiguousarray(Phi.T)
        for k in range(nb * block, N):
            x = x @ PhiT + F[k]
            X[k + 1] = x
    bad = ~np.all(np.isfinite(X), axis=1)
    if bad.any():
        X[np.argmax(bad):] = np.nan


def run_decoupled(dec: Decomposition, sch: SplittingScheme, coupling_integrators,
                  substructure_tableau="radau2a_2", t0=0.0, T=1.0, h=0.1, x0=None,
                  newton: NewtonOptions = NewtonOptions()) -> Trajectory:
    """Split only the coupling part, then integrate each substructure on the same grid.

    Coupling values needed at stage times inside a step are interpolated
    linearly between grid points.
    """
    if dec.plan is None:
        raise ValueError("decomposition has no decoupled plan")
    plan = dec.plan
    traj = run_splitting(plan.coupling, sch, coupling_integrators, t0, T, h, x0, newton=newton)
    X = traj.states
    C = X[:, plan.coupling_vars].copy()
    times = traj.times
    cv = plan.coupling_vars
    tab = tableau(substructure_tableau)
    base = plan.problem
    for sub in plan.substructures:
        if sub.size == 0:
            continue
        for i in range(times.size - 1):
            ta, tb = times[i], times[i + 1]
            xa, xb = C[i], C[i + 1]

            def res(t, x, xd, xa=xa, xb=xb, ta=ta, tb=tb):
                w = (t - ta) / (tb - ta)
                y = np.array(x, dtype=float)
                y[cv] = (1.0 - w) * xa + w * xb
                return base.residual(t, y, xd)

            jac = None
            if base.jacobian is not None:
                def jac(t, x, xd, xa=xa, xb=xb, ta=ta, tb=tb):
                    w = (t - ta) / (tb - ta)
                    y = np.array(x, dtype=float)
                    y[cv] = (1.0 - w) * xa + w * xb
                    return base.jacobian(t, y, xd)

            prob = ResidualDAEProblem(base.mask, res, jac)
            try:
                y = irk_step_residual(prob, tab, ta, tb - ta, X[i], newton, active=sub)
            except StepFailure as exc:
                exc.step_index = i
                raise
            X[i + 1, sub] = y[sub]
    traj.info["decoupled"] = True
    traj.integrators = tuple(traj.integrators) + (tab.name,)
    return traj


# --------------------------------------------------------------------------
# ordering analysis


@dataclass(frozen=True)
class OrderNote:
    full_order: bool
    affected: Tuple[str, ...]
    reason: str


def splitting_order_sequence(dec: Decomposition, ordering: Sequence) -> OrderNote:
    """Whether full order is expected for substructure variables under an ordering.

    ``ordering`` is the Strang sandwich written as subsystem labels, e.g.
    ('S2', 'S1', 'S2'), or as 1-based integers. Full order needs every
    substructure that depends on an index-1 coupling variable (z11 or z21)
    to belong to the subsystem solved in the final stage.
    """
    if dec.dependence is None:
        raise ValueError("decomposition carries no dependence analysis")
    seq = [str(o) if str(o).startswith("S") else f"S{int(o)}" for o in ordering]
    last = int(seq[-1][1:])
    hit = [label for label, blks in sorted(dec.dependence.items())
           if any(b in ("z11", "z21") for b in blks)]
    if not hit:
        return OrderNote(True, (), "no substructure depends on an index-1 coupling variable")
    affected = tuple(lbl for lbl in hit if int(lbl[-1]) != last)
    if affected:
        return OrderNote(False, affected,
                         f"{', '.join(affected)} depend on index-1 coupling variables but S{last} ends the step")
    return OrderNote(True, (), f"the dependent substructure belongs to S{last}, which ends the step")
