"""Quantum-switch games, their witnesses, and causal correlation checks.

The commute/anticommute game gives an operator G with tr(G W) equal to the
success probability of a process W.  Its causal bound p_sep is an SDP over the
tripartite separable cone, and (p_sep 1/d_O - G) / (p_sep - T0) is a
generalized robustness witness.
"""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import sqrt
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .conic_solver import (
    Block,
    Equality,
    SdpProblem,
    SdpSolution,
    SolverError,
    identity_map,
    scalar_map,
    solve,
    trace_map,
)
from .process_space import (
    ProcessMatrix,
    PartyLayout,
    order_tag,
    switch_layout,
    switch_process,
    switch_vector,
    trace_out_charlie,
)
from .tensor_ops import (
    PAULI,
    LabeledOperator,
    PureVector,
    cj_from_kraus,
    haar_unitary,
    permute_systems,
)
from .witness_engine import (
    CERTIFICATE_TOL,
    DEFAULT_SDP_TOL,
    Instrument,
    born_probabilities,
    g_ocb,
    layout_subspace,
    ocb_instruments,
    scenario_orders,
    verify_witness,
    witness_expectation,
)

log = logging.getLogger(__name__)

UNITARY_TOL = 1e-10
PARITY_TOL = 1e-10
MC_CHUNK = 1000
GAME_FACTORS = ("A_I", "A_O", "B_I", "B_O", "C_I^c")

PLUS = np.array([1.0, 1.0], dtype=complex) / sqrt(2.0)
MINUS = np.array([1.0, -1.0], dtype=complex) / sqrt(2.0)


def _check_unitary(U, what: str = "U") -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.shape != (2, 2):
        raise ValueError(f"{what} must be a 2x2 matrix, got shape {U.shape}")
    err = float(np.linalg.norm(U.conj().T @ U - np.eye(2)))
    if err > UNITARY_TOL:
        raise ValueError(f"{what} is not unitary (||U^dag U - 1|| = {err:.2e})")
    return U


def parity_of(U_A, U_B, tol: float = PARITY_TOL) -> str | None:
    """'commuting', 'anticommuting' or None."""
    if np.linalg.norm(U_A @ U_B - U_B @ U_A) <= tol:
        return "commuting"
    if np.linalg.norm(U_A @ U_B + U_B @ U_A) <= tol:
        return "anticommuting"
    return None


@dataclass(frozen=True)
class UnitaryPair:
    U_A: np.ndarray
    U_B: np.ndarray
    parity: str

    def __post_init__(self):
        A = _check_unitary(self.U_A, "U_A")
        B = _check_unitary(self.U_B, "U_B")
        if self.parity not in ("commuting", "anticommuting"):
            raise ValueError(f"unknown parity {self.parity!r}")
        op = A @ B - B @ A if self.parity == "commuting" else A @ B + B @ A
        if np.linalg.norm(op) > PARITY_TOL:
            raise ValueError(f"unitaries are not {self.parity} (residual {np.linalg.norm(op):.2e})")
        object.__setattr__(self, "U_A", A)
        object.__setattr__(self, "U_B", B)

    @property
    def sign(self) -> str:
        return "+" if self.parity == "commuting" else "-"


# ---------------------------------------------------------------------------
# game operators

def _game_vectors(UA: np.ndarray, UB: np.ndarray, sign: str) -> np.ndarray:
    """Stacked vectors |U_A*>>|U_B*>>|+-> for batches of unitaries (..., 2, 2)."""
    c = PLUS if sign == "+" else MINUS
    a = np.swapaxes(UA.conj(), -1, -2).reshape(UA.shape[:-2] + (4,))
    b = np.swapaxes(UB.conj(), -1, -2).reshape(UB.shape[:-2] + (4,))
    v = np.einsum("...i,...j,k->...ijk", a, b, c)
    return v.reshape(v.shape[:-3] + (32,))


def chiribella_term(U_A, U_B, sign: str) -> LabeledOperator:
    """G^{U_A,U_B}_sign on [A_I, A_O, B_I, B_O, C_I^c]; rank one with trace 4."""
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    v = _game_vectors(_check_unitary(U_A, "U_A"), _check_unitary(U_B, "U_B"), sign)
    return LabeledOperator.hermitian_from([(n, 2) for n in GAME_FACTORS], np.outer(v, v.conj()))


@dataclass
class GameWitness:
    """Game operator G with bounds T0 <= tr(G W) <= T1 on normalized processes."""
    op: LabeledOperator
    p_sep: float | None = None
    T0: float = 0.0
    T1: float = 1.0
    label: str = ""
    n_samples: int | None = None
    seed: int | None = None
    weights: "WeightTable | None" = None
    solution: SdpSolution | None = field(default=None, repr=False)

    def value(self, W) -> float:
        return witness_expectation(self.op, W)

    @property
    def noise_tolerance(self) -> float:
        if self.p_sep is None:
            raise ValueError("causal bound not computed")
        return (self.T1 - self.p_sep) / (self.p_sep - self.T0)

    def report(self) -> dict:
        out = {"label": self.label, "p_sep": self.p_sep, "T0": self.T0, "T1": self.T1,
               "n_samples": self.n_samples, "seed": self.seed}
        if self.p_sep is not None:
            out["noise_tolerance"] = self.noise_tolerance
        if self.solution is not None:
            out["gap"] = self.solution.gap
        return out


def _mc_chunk(args) -> np.ndarray:
    seed_seq, n = args
    rng = np.random.default_rng(seed_seq)
    comm_a = np.empty((n, 2, 2), dtype=complex)
    comm_b = np.empty((n, 2, 2), dtype=complex)
    anti_a = np.empty((n, 2, 2), dtype=complex)
    anti_b = np.empty((n, 2, 2), dtype=complex)
    X, Z = PAULI["X"], PAULI["Z"]
    for k in range(n):
        U = haar_unitary(2, rng)
        t1, t2 = rng.uniform(0.0, 2 * np.pi, size=2)
        comm_a[k] = U @ np.diag([1.0, np.exp(1j * t1)]) @ U.conj().T
        comm_b[k] = U @ np.diag([1.0, np.exp(1j * t2)]) @ U.conj().T
        V = haar_unitary(2, rng)
        anti_a[k] = V @ X @ V.conj().T
        anti_b[k] = V @ Z @ V.conj().T
    vp = _game_vectors(comm_a, comm_b, "+")
    vm = _game_vectors(anti_a, anti_b, "-")
    return 0.5 * (vp.T @ vp.conj() + vm.T @ vm.conj())


def chiribella_witness_mc(n_samples: int, seed: int, jobs: int = 1) -> GameWitness:
    """Monte Carlo estimate of the Haar-averaged commute/anticommute game.

    Samples are drawn in chunks of ``MC_CHUNK`` from spawned seed streams and
    summed in chunk order, so the result does not depend on ``jobs``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    sizes = [MC_CHUNK] * (n_samples // MC_CHUNK)
    if n_samples % MC_CHUNK:
        sizes.append(n_samples % MC_CHUNK)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    work = list(zip(streams, sizes))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_mc_chunk, work))
    else:
        parts = [_mc_chunk(w) for w in work]
    G = np.zeros((32, 32), dtype=complex)
    for part in parts:
        G += part
    G /= n_samples
    op = LabeledOperator.hermitian_from([(n, 2) for n in GAME_FACTORS], G)
    return GameWitness(op, label="chiribella-mc", n_samples=n_samples, seed=seed)


# ---------------------------------------------------------------------------
# causal bound

def p_succ_sep_problem(G: GameWitness | LabeledOperator) -> SdpProblem:
    """max tr(G W) over separable W = X0 + X1 with tr W = d_O (posed as a minimization)."""
    op = G.op if isinstance(G, GameWitness) else G
    layout = switch_layout(True)
    op = _in_switch_order(op, layout)
    n = op.side
    blocks, subs, terms, objective = [], {}, {}, {}
    for k, order in enumerate(scenario_orders(layout)):
        name = f"X{k}"
        blocks.append(Block(name, n))
        subs[name] = layout_subspace(order_tag(order), layout)
        terms[name] = trace_map(n)
        objective[name] = -op.data
    eq = Equality(terms, np.full((1, 1), float(layout.d_O)), "normalization")
    return SdpProblem(blocks, objective, [eq], subs, name="game-causal-bound")


def _in_switch_order(op: LabeledOperator, layout: PartyLayout) -> LabeledOperator:
    names = [s.name for s in layout.systems]
    if sorted(op.names) != sorted(names):
        raise ValueError(f"game operator factors {list(op.names)} do not match {names}")
    return op if list(op.names) == names else permute_systems(op, names)


def p_succ_sep(G: GameWitness | LabeledOperator, tol: float = DEFAULT_SDP_TOL,
               return_solution: bool = False):
    """Maximal success probability of the game over causally separable processes."""
    sol = solve(p_succ_sep_problem(G), tol=tol)
    if sol.status != "optimal":
        raise SolverError(f"causal bound: solver returned status {sol.status}")
    value = -sol.primal_objective
    return (value, sol) if return_solution else value


def with_causal_bound(G: GameWitness, tol: float = DEFAULT_SDP_TOL) -> GameWitness:
    value, sol = p_succ_sep(G, tol=tol, return_solution=True)
    G.p_sep = value
    G.solution = sol
    return G


# ---------------------------------------------------------------------------
# finite unitary set

def finite_unitaries() -> dict[str, np.ndarray]:
    X, Y, Z = PAULI["X"], PAULI["Y"], PAULI["Z"]
    r = 1.0 / sqrt(2.0)
    return {
        "1": np.eye(2, dtype=complex), "X": X, "Y": Y, "Z": Z,
        "(X+Y)/r2": r * (X + Y), "(X-Y)/r2": r * (X - Y),
        "(X+Z)/r2": r * (X + Z), "(X-Z)/r2": r * (X - Z),
        "(Y+Z)/r2": r * (Y + Z), "(Y-Z)/r2": r * (Y - Z),
    }


GateCell = tuple[str, str, str]      # (name_i, name_j, sign)


def admissible_pairs() -> list[GateCell]:
    """All ordered (i, j, sign) with '+' for commuting and '-' for anticommuting pairs."""
    gates = finite_unitaries()
    cells = []
    for (ni, Ui), (nj, Uj) in itertools.product(gates.items(), repeat=2):
        parity = parity_of(Ui, Uj)
        if parity == "commuting":
            cells.append((ni, nj, "+"))
        elif parity == "anticommuting":
            cells.append((ni, nj, "-"))
    return cells


@dataclass
class WeightTable:
    """Input distribution over (U_i, U_j, sign) cells of the finite set."""
    weights: dict[GateCell, float]

    def __post_init__(self):
        gates = finite_unitaries()
        allowed = set(admissible_pairs())
        clean = {}
        for cell, q in self.weights.items():
            ni, nj, sign = cell
            if ni not in gates or nj not in gates or sign not in ("+", "-"):
                raise ValueError(f"unknown cell {cell}")
            if q < -1e-12:
                raise ValueError(f"negative weight {q} on {cell}")
            if cell not in allowed and abs(q) > 1e-12:
                kind = "commuting" if sign == "+" else "anticommuting"
                raise ValueError(f"weight on non-{kind} pair {ni}, {nj}")
            if cell in allowed:
                clean[cell] = max(float(q), 0.0)
        total = sum(clean.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, expected 1")
        self.weights = clean

    @classmethod
    def uniform(cls, cells: Sequence[GateCell] | None = None) -> "WeightTable":
        cells = list(admissible_pairs() if cells is None else cells)
        return cls({c: 1.0 / len(cells) for c in cells})

    def forbidden_mass(self) -> float:
        allowed = set(admissible_pairs())
        return float(sum(q for c, q in self.weights.items() if c not in allowed))

    def to_json(self) -> list[dict]:
        return [{"U_i": i, "U_j": j, "sign": s, "q": q} for (i, j, s), q in sorted(self.weights.items())]


def finite_witness(weights: WeightTable) -> GameWitness:
    gates = finite_unitaries()
    G = np.zeros((32, 32), dtype=complex)
    for (ni, nj, sign), q in weights.weights.items():
        if q:
            v = _game_vectors(gates[ni], gates[nj], sign)
            G += q * np.outer(v, v.conj())
    op = LabeledOperator.hermitian_from([(n, 2) for n in GAME_FACTORS], G)
    return GameWitness(op, label="finite", weights=weights)


def finite_weights_problem() -> tuple[SdpProblem, list[GateCell]]:
    """max t  s.t.  tr(G_j W) >= t for every admissible cell j, W separable and normalized.

    The multipliers of the per-cell constraints are the optimal weights and t
    is the minimal causal bound (minimax over the convex hull of the cells).
    """
    layout = switch_layout(True)
    cells = admissible_pairs()
    gates = finite_unitaries()
    n = 32
    blocks = [Block("t", 1, "free")]
    subs, objective = {}, {"t": -np.ones((1, 1))}
    orders = scenario_orders(layout)
    for k, order in enumerate(orders):
        blocks.append(Block(f"X{k}", n))
        subs[f"X{k}"] = layout_subspace(order_tag(order), layout)
    eqs = []
    for j, (ni, nj, sign) in enumerate(cells):
        v = _game_vectors(gates[ni], gates[nj], sign)
        Gj = np.outer(v, v.conj())
        slack = f"s{j}"
        blocks.append(Block(slack, 1))
        terms = {f"X{k}": trace_map(n, Gj, f"G_{j}") for k in range(len(orders))}
        terms["t"] = identity_map(1, -1.0)
        terms[slack] = identity_map(1, -1.0)
        eqs.append(Equality(terms, np.zeros((1, 1)), f"cell {ni},{nj},{sign}"))
    eqs.append(Equality({f"X{k}": trace_map(n) for k in range(len(orders))},
                        np.full((1, 1), float(layout.d_O)), "normalization"))
    return SdpProblem(blocks, objective, eqs, subs, name="finite-game-weights"), cells


def optimize_finite_weights(tol: float = DEFAULT_SDP_TOL, return_solution: bool = False):
    """Weights minimizing the causal bound of the finite game; returns (weights, p_sep)."""
    problem, cells = finite_weights_problem()
    sol = solve(problem, tol=tol)
    if sol.status != "optimal":
        raise SolverError(f"finite weights: solver returned status {sol.status}")
    y = np.array([float(np.real(sol.multipliers[j][0, 0])) for j in range(len(cells))])
    # multipliers of the per-cell equalities are -q_j or q_j depending on the sign convention
    if y.sum() < 0:
        y = -y
    y = np.clip(y, 0.0, None)
    q = y / y.sum()
    p = float(sol.primal["t"][0, 0].real)
    table = WeightTable(dict(zip(cells, q)))
    return (table, p, sol) if return_solution else (table, p)


def game_to_witness(G: GameWitness, verify: bool = True, tol: float = CERTIFICATE_TOL):
    """S = (p_sep 1/d_O - G)/(p_sep - T0), certified through verify_witness when asked."""
    if G.p_sep is None:
        raise ValueError("the game's causal bound p_sep is unknown")
    if G.p_sep <= G.T0:
        raise ValueError(f"p_sep = {G.p_sep} does not exceed T0 = {G.T0}")
    layout = switch_layout(True)
    op = _in_switch_order(G.op, layout)
    S = (G.p_sep * np.eye(op.side) / layout.d_O - op.data) / (G.p_sep - G.T0)
    S_op = LabeledOperator.hermitian_from(layout.systems, S)
    if not verify:
        return S_op
    return verify_witness(S_op, layout, tol=tol)


# ---------------------------------------------------------------------------
# the OCB causal game

def ocb_game_value(W) -> float:
    """Success probability of the OCB game with uniform inputs, from Born probabilities."""
    op = W.op if isinstance(W, ProcessMatrix) else W
    expected = {"A_I", "A_O", "B_I", "B_O"}
    if set(op.names) != expected or any(d != 2 for d in op.dims):
        raise ValueError(f"expected a bipartite qubit process on {sorted(expected)}, got {list(op.names)}")
    A, B = ocb_instruments()
    table = born_probabilities(op, A, B)
    total = 0.0
    for (x, y, yp, a, b), p in table.items():
        if (yp == 0 and a == y) or (yp == 1 and b == x):
            total += p
    # x, y uniform; y' uniform; the 1/2 of the game definition is the y' average
    return total / 8.0


def ocb_game_operator_value(W) -> float:
    """Same quantity as a single contraction tr(G_OCB W)."""
    return witness_expectation(g_ocb(), W)


# ---------------------------------------------------------------------------
# switch action and correlations

def apply_switch(U_A, U_B, psi, control) -> PureVector:
    """|0>_c (U_B U_A)|psi> + |1>_c (U_A U_B)|psi> for control weights, on [C_I^t, C_I^c]."""
    A = _check_unitary(U_A, "U_A")
    B = _check_unitary(U_B, "U_B")
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    control = np.asarray(control, dtype=complex).reshape(-1)
    for vec, what in ((psi, "psi"), (control, "control")):
        if vec.shape != (2,) or abs(np.linalg.norm(vec) - 1.0) > 1e-10:
            raise ValueError(f"{what} must be a normalized qubit vector")
    out = control[0] * np.kron(B @ A @ psi, [1, 0]) + control[1] * np.kron(A @ B @ psi, [0, 1])
    return PureVector([("C_I^t", 2), ("C_I^c", 2)], out)


@dataclass
class CorrelationTable:
    """P(a, b, c | x, y, z) stored as an array indexed [a, b, c, x, y, z]."""
    probs: np.ndarray
    tol: float = 1e-10

    def __post_init__(self):
        P = np.asarray(self.probs, dtype=float)
        if P.ndim != 6:
            raise ValueError(f"expected a 6-index table [a,b,c,x,y,z], got {P.ndim} indices")
        if P.min() < -self.tol:
            raise ValueError(f"negative probability {P.min():.3e}")
        norm = P.sum(axis=(0, 1, 2))
        err = float(np.max(np.abs(norm - 1.0)))
        if err > self.tol:
            raise ValueError(f"table not normalized per input triple (error {err:.2e})")
        self.probs = P

    @property
    def outputs(self) -> tuple[int, int, int]:
        return self.probs.shape[:3]

    @property
    def inputs(self) -> tuple[int, int, int]:
        return self.probs.shape[3:]

    def marginal_ab(self) -> np.ndarray:
        """sum_c P, indexed [a, b, x, y, z]."""
        return self.probs.sum(axis=2)

    def to_json(self) -> dict:
        nA, nB, nC = self.outputs
        nX, nY, nZ = self.inputs
        table = {}
        for x, y, z in itertools.product(range(nX), range(nY), range(nZ)):
            table[f"{x},{y},{z}"] = {f"{a},{b},{c}": float(self.probs[a, b, c, x, y, z])
                                     for a, b, c in itertools.product(range(nA), range(nB), range(nC))}
        return {"inputs": {"x": nX, "y": nY, "z": nZ}, "outputs": {"a": nA, "b": nB, "c": nC},
                "table": table}

    @classmethod
    def from_json(cls, obj: dict, tol: float = 1e-10) -> "CorrelationTable":
        try:
            ins = obj["inputs"]
            nX, nY, nZ = int(ins["x"]), int(ins["y"]), int(ins["z"])
            table = obj["table"]
            if "outputs" in obj:
                outs = obj["outputs"]
                nA, nB, nC = int(outs["a"]), int(outs["b"]), int(outs["c"])
            else:
                keys = [tuple(map(int, k.split(","))) for row in table.values() for k in row]
                nA, nB, nC = (max(k[i] for k in keys) + 1 for i in range(3))
            P = np.zeros((nA, nB, nC, nX, nY, nZ))
            for xyz, row in table.items():
                x, y, z = map(int, xyz.split(","))
                for abc, p in row.items():
                    a, b, c = map(int, abc.split(","))
                    P[a, b, c, x, y, z] = float(p)
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            raise ValueError(f"malformed correlation table: {exc}") from exc
        return cls(P, tol)

    @classmethod
    def bipartite(cls, P_ab: np.ndarray, tol: float = 1e-10) -> "CorrelationTable":
        """Embed P(a, b | x, y) (indexed [a, b, x, y]) with a trivial third party."""
        P_ab = np.asarray(P_ab, dtype=float)
        return cls(P_ab[:, :, None, :, :, None], tol)


def _check_povm(elements: Sequence, dim: int, what: str) -> list[np.ndarray]:
    els = [np.asarray(E, dtype=complex) for E in elements]
    for E in els:
        if E.shape != (dim, dim):
            raise ValueError(f"{what}: element of shape {E.shape}, expected {(dim, dim)}")
        if np.linalg.eigvalsh(0.5 * (E + E.conj().T))[0] < -1e-10:
            raise ValueError(f"{what}: element is not positive semidefinite")
    err = float(np.max(np.abs(sum(els) - np.eye(dim))))
    if err > 1e-10:
        raise ValueError(f"{what}: elements sum to the identity only within {err:.2e}")
    return els


def switch_correlations(instruments_a: Mapping[int, Instrument], instruments_b: Mapping[int, Instrument],
                        povm_c: Mapping[int, Sequence], psi=None) -> CorrelationTable:
    """Born-rule table of the full switch |w><w| with C measuring target and control.

    POVM elements for C act on [C_I^t, C_I^c] (4x4) or on the control only (2x2).
    """
    w = switch_vector(psi)
    xs, ys, zs = sorted(instruments_a), sorted(instruments_b), sorted(povm_c)
    if [*xs] != list(range(len(xs))) or [*ys] != list(range(len(ys))) or [*zs] != list(range(len(zs))):
        raise ValueError("settings must be labeled 0..n-1")
    for instr, names in ((instruments_a, ("A_I", "A_O")), (instruments_b, ("B_I", "B_O"))):
        for k, ins in instr.items():
            if tuple(ins.names) != names:
                raise ValueError(f"instrument {k} acts on {ins.names}, expected {names}")
    povms = {}
    for z, els in povm_c.items():
        els = [np.asarray(E, dtype=complex) for E in els]
        if els and els[0].shape == (2, 2):
            els = [np.kron(np.eye(2), E) for E in _check_povm(els, 2, f"C|z={z}")]
        povms[z] = _check_povm(els, 4, f"C|z={z}")
    nA = max(len(i.elements) for i in instruments_a.values())
    nB = max(len(i.elements) for i in instruments_b.values())
    nC = max(len(e) for e in povms.values())
    psi_w = w.data.reshape(16, 4)           # [(A_I A_O B_I B_O), (C_I^t C_I^c)]
    P = np.zeros((nA, nB, nC, len(xs), len(ys), len(zs)))
    for x in xs:
        for y in ys:
            for a, MA in enumerate(instruments_a[x].elements):
                for b, MB in enumerate(instruments_b[y].elements):
                    M = np.kron(MA.data, MB.data)
                    # rho_C = tr_AB[(M (x) 1) |w><w|] = psi_w^T M^T psi_w^*
                    rho_c = psi_w.T @ M.T @ psi_w.conj()
                    for z in zs:
                        for c, E in enumerate(povms[z]):
                            P[a, b, c, x, y, z] = float(np.real(np.trace(E @ rho_c)))
    return CorrelationTable(np.clip(P, 0.0, None) if P.min() > -1e-12 else P)


def random_instrument(names: tuple[str, str], n_outcomes: int, rng: np.random.Generator,
                      kraus_per_outcome: int = 2, label: str = "") -> Instrument:
    """Random qubit instrument: a Haar isometry split into groups of Kraus operators."""
    k = n_outcomes * kraus_per_outcome
    V = haar_unitary(2 * k, rng)[:, :2]       # isometry C^2 -> C^2 (x) C^k
    kraus = [V.reshape(k, 2, 2)[j] for j in range(k)]
    els = [cj_from_kraus(kraus[o * kraus_per_outcome:(o + 1) * kraus_per_outcome], names)
           for o in range(n_outcomes)]
    return Instrument(els, (names[1],), label)


def random_povm(dim: int, n_outcomes: int, rng: np.random.Generator) -> list[np.ndarray]:
    V = haar_unitary(dim * n_outcomes, rng)[:, :dim]
    blocks = V.reshape(n_outcomes, dim, dim)
    return [B.conj().T @ B for B in blocks]


def ocb_correlations(W) -> CorrelationTable:
    """OCB-instrument statistics with Bob's setting (y, y') flattened to 2*y + y'."""
    A, B = ocb_instruments()
    table = born_probabilities(W, A, B)
    P = np.zeros((2, 2, 2, 4))
    for (x, y, yp, a, b), p in table.items():
        P[a, b, x, 2 * y + yp] = p
    return CorrelationTable.bipartite(P)


# ---------------------------------------------------------------------------
# causal correlation test for a bipartite mixture plus a final party

@dataclass
class Theorem4Verdict:
    z_independent: bool
    z_deviation: float
    bipartite_mixture: bool
    mixture_residual: float
    weight_a_first: float | None
    tol: float

    @property
    def causal(self) -> bool:
        return self.z_independent and self.bipartite_mixture

    def to_json(self) -> dict:
        return {"z_independent": self.z_independent, "z_deviation": self.z_deviation,
                "bipartite_mixture": self.bipartite_mixture, "mixture_residual": self.mixture_residual,
                "weight_a_first": self.weight_a_first, "causal": self.causal, "tol": self.tol}


def mixture_lp(P_ab: np.ndarray) -> tuple[float, float | None]:
    """Smallest L1 distance from P(a,b|x,y) to q P_{A<B} + (1-q) P_{B<A}.

    Unknowns are the unnormalized one-way-signalling parts P1 = q P_{A<B} and
    P2 = (1-q) P_{B<A}.  Returns (distance, q).
    """
    nA, nB, nX, nY = P_ab.shape
    m = P_ab.size
    # variable layout: P1 (m), P2 (m), e_plus (m), e_minus (m), q, r
    nv = 4 * m + 2
    iq, ir = 4 * m, 4 * m + 1

    def idx(block, a, b, x, y):
        return block * m + np.ravel_multi_index((a, b, x, y), P_ab.shape)

    rows, rhs = [], []

    def add(coeffs: dict, value: float = 0.0):
        row = np.zeros(nv)
        for k, v in coeffs.items():
            row[k] += v
        rows.append(row)
        rhs.append(value)

    for a, b, x, y in itertools.product(range(nA), range(nB), range(nX), range(nY)):
        add({idx(0, a, b, x, y): 1, idx(1, a, b, x, y): 1, idx(2, a, b, x, y): -1,
             idx(3, a, b, x, y): 1}, P_ab[a, b, x, y])
    for x, y in itertools.product(range(nX), range(nY)):
        c1 = {idx(0, a, b, x, y): 1 for a in range(nA) for b in range(nB)}
        c1[iq] = -1
        add(c1)
        c2 = {idx(1, a, b, x, y): 1 for a in range(nA) for b in range(nB)}
        c2[ir] = -1
        add(c2)
    # A<B: A's marginal of P1 ignores y; B<A: B's marginal of P2 ignores x
    for a, x, y in itertools.product(range(nA), range(nX), range(1, nY)):
        c = {}
        for b in range(nB):
            c[idx(0, a, b, x, y)] = c.get(idx(0, a, b, x, y), 0) + 1
            c[idx(0, a, b, x, 0)] = c.get(idx(0, a, b, x, 0), 0) - 1
        add(c)
    for b, y, x in itertools.product(range(nB), range(nY), range(1, nX)):
        c = {}
        for a in range(nA):
            c[idx(1, a, b, x, y)] = c.get(idx(1, a, b, x, y), 0) + 1
            c[idx(1, a, b, 0, y)] = c.get(idx(1, a, b, 0, y), 0) - 1
        add(c)
    add({iq: 1, ir: 1}, 1.0)
    cost = np.zeros(nv)
    cost[2 * m:4 * m] = 1.0
    res = linprog(cost, A_eq=np.array(rows), b_eq=np.array(rhs), bounds=[(0, None)] * nv, method="highs")
    if res.status != 0:
        raise RuntimeError(f"mixture LP failed: {res.message}")
    return float(res.fun), float(res.x[iq])


def one_way_vertices(nA: int, nB: int, nX: int, nY: int, first: str) -> np.ndarray:
    """Deterministic strategies compatible with a fixed order, as [v, a, b, x, y] arrays.

    For A first: a = f(x), b = g(x, y).  For B first: b = f(y), a = g(x, y).
    """
    out = []
    if first == "A":
        for f in itertools.product(range(nA), repeat=nX):
            for g in itertools.product(range(nB), repeat=nX * nY):
                V = np.zeros((nA, nB, nX, nY))
                for x, y in itertools.product(range(nX), range(nY)):
                    V[f[x], g[x * nY + y], x, y] = 1.0
                out.append(V)
    elif first == "B":
        for f in itertools.product(range(nB), repeat=nY):
            for g in itertools.product(range(nA), repeat=nX * nY):
                V = np.zeros((nA, nB, nX, nY))
                for x, y in itertools.product(range(nX), range(nY)):
                    V[g[x * nY + y], f[y], x, y] = 1.0
                out.append(V)
    else:
        raise ValueError("first must be 'A' or 'B'")
    return np.array(out)


def mixture_by_vertices(P_ab: np.ndarray, tol: float = 1e-9) -> float:
    """L1 distance from P to the hull of both orders' deterministic strategies,
    solved with the interior-point solver over 1x1 cone blocks."""
    shape = P_ab.shape
    verts = np.concatenate([one_way_vertices(*shape, "A"), one_way_vertices(*shape, "B")])
    m = P_ab.size
    blocks, terms = [], {}
    flat = verts.reshape(len(verts), m)
    for v in range(len(verts)):
        blocks.append(Block(f"mu{v}", 1))
        terms[f"mu{v}"] = scalar_map(np.diag(flat[v]))
    objective = {}
    for i in range(m):
        E = np.zeros((m, m))
        E[i, i] = 1.0
        blocks += [Block(f"ep{i}", 1), Block(f"em{i}", 1)]
        terms[f"ep{i}"] = scalar_map(-E)
        terms[f"em{i}"] = scalar_map(E)
        objective[f"ep{i}"] = np.ones((1, 1))
        objective[f"em{i}"] = np.ones((1, 1))
    eqs = [Equality(terms, np.diag(P_ab.reshape(-1)), "mixture"),
           Equality({f"mu{v}": identity_map(1) for v in range(len(verts))}, np.ones((1, 1)), "convexity")]
    sol = solve(SdpProblem(blocks, objective, eqs, {}, name="vertex-mixture"), tol=tol)
    if sol.status != "optimal":
        raise RuntimeError(f"vertex mixture: solver returned status {sol.status}")
    return float(sol.primal_objective)


def check_causal_theorem4(P: CorrelationTable, tol: float = 1e-9) -> Theorem4Verdict:
    """Sufficient test for causal tripartite correlations with a last party C:
    the A,B marginal must not depend on z and must be a mixture of the two
    one-way-signalling orders."""
    if not isinstance(P, CorrelationTable):
        raise TypeError("expected a CorrelationTable")
    marg = P.marginal_ab()
    dev = float(np.max(np.abs(marg - marg[..., :1])))
    z_ok = dev <= tol
    P_ab = marg.mean(axis=-1)
    dist, q = mixture_lp(P_ab)
    mix_ok = dist <= tol * max(1, P_ab.size)
    return Theorem4Verdict(z_ok, dev, mix_ok, dist, q if mix_ok else None, tol)


def switch_marginal_process(psi=None) -> ProcessMatrix:
    """W^{AB}: the switch with C's whole input traced out."""
    return trace_out_charlie(switch_process(psi))


def switch_success(G: GameWitness | LabeledOperator, psi=None) -> float:
    op = G.op if isinstance(G, GameWitness) else G
    return witness_expectation(op, switch_process(psi, reduce_target=True))


__all__ = [
    "UnitaryPair", "parity_of", "chiribella_term", "GameWitness", "chiribella_witness_mc",
    "p_succ_sep_problem", "p_succ_sep", "with_causal_bound", "finite_unitaries", "admissible_pairs",
    "WeightTable", "finite_witness", "finite_weights_problem", "optimize_finite_weights",
    "game_to_witness", "ocb_game_value", "ocb_game_operator_value", "apply_switch",
    "CorrelationTable", "switch_correlations", "random_instrument", "random_povm", "ocb_correlations",
    "Theorem4Verdict", "mixture_lp", "one_way_vertices", "mixture_by_vertices",
    "check_causal_theorem4", "switch_marginal_process", "switch_success",
]
