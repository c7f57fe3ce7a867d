"""Causal witnesses, robustness measures and causally separable decompositions.

Two scenarios are supported:

* ``bipartite``: parties A and B; separable processes are mixtures of the
  orders A<B and B<A;
* ``tripartite``: parties A, B and a last party C without output; separable
  processes are mixtures of A<B<C and B<A<C.

Every robustness problem is posed in decomposition form (the unknowns are the
causally ordered parts), and the witness is read off the equality multiplier.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import sqrt
from typing import Mapping

import numpy as np

from .conic_solver import (
    Block,
    Equality,
    SdpProblem,
    SdpSolution,
    SolverError,
    Subspace,
    identity_map,
    scalar_map,
    self_adjoint_map,
    solve,
    trace_map,
)
from .process_space import (
    InvalidProcessError,
    LocalOperation,
    PartyLayout,
    ProcessMatrix,
    bipartite_layout,
    compose_local,
    in_layout_order,
    is_valid_process,
    lv_array,
    order_array,
    order_tag,
    projector_array,
    w_ocb,
)
from .tensor_ops import (
    LabeledOperator,
    expectation,
    operator_from_json,
    operator_to_json,
    pauli_string,
    permute_systems,
    trace_replace_array,
)

log = logging.getLogger(__name__)

SEPARABLE_THRESHOLD = 1e-6
DEFAULT_SDP_TOL = 1e-8
CERTIFICATE_TOL = 1e-8


class UnsupportedScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenarios

def scenario_of(layout: PartyLayout) -> str:
    parties = layout.parties
    if len(parties) == 2:
        return "bipartite"
    if len(parties) == 3 and parties[2].d_O == 1:
        return "tripartite"
    raise UnsupportedScenarioError(
        "supported scenarios are two parties, or three parties whose last one has no output; "
        f"got {layout.key()}")


def scenario_orders(layout: PartyLayout) -> list[tuple[str, ...]]:
    names = layout.names
    if scenario_of(layout) == "bipartite":
        return [(names[0], names[1]), (names[1], names[0])]
    return [(names[0], names[1], names[2]), (names[1], names[0], names[2])]


def _names_dims(layout: PartyLayout):
    return tuple(s.name for s in layout.systems), tuple(s.dim for s in layout.systems)


def layout_subspace(tag: str, layout: PartyLayout) -> Subspace:
    names, dims = _names_dims(layout)
    return Subspace(f"{tag}@{layout.key()}", projector_array(tag, layout, names, dims))


def _lv(layout: PartyLayout, data: np.ndarray) -> np.ndarray:
    names, dims = _names_dims(layout)
    return lv_array(data, names, dims, layout)


def _as_layout_op(S: LabeledOperator, layout: PartyLayout) -> LabeledOperator:
    names = [s.name for s in layout.systems]
    if set(S.names) != set(names) or len(S.names) != len(names):
        raise ValueError(f"operator factors {list(S.names)} do not match layout {names}")
    return S if list(S.names) == names else permute_systems(S, names)


def _checked(W: ProcessMatrix) -> tuple[LabeledOperator, PartyLayout]:
    if not isinstance(W, ProcessMatrix):
        raise TypeError("expected a ProcessMatrix")
    report = is_valid_process(W.op, W.layout, W.tol)
    if not report.verdict:
        raise InvalidProcessError("; ".join(report.failures()))
    scenario_of(W.layout)
    return in_layout_order(W), W.layout


def _require_optimal(sol: SdpSolution, what: str):
    if sol.status != "optimal":
        raise SolverError(f"{what}: solver returned status {sol.status} "
                          f"(pres {sol.primal_residual:.2e}, dres {sol.dual_residual:.2e}, "
                          f"gap {sol.gap:.2e})")


def _herm(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


# ---------------------------------------------------------------------------
# result types

@dataclass
class CausalWitness:
    """Witness S with a cone-membership certificate.

    Bipartite certificate: ``S_P`` and ``S_perp`` with S = S_P + S_perp,
    trace-and-replace of S_P over each party's outputs PSD and L_V(S_perp) = 0.
    Tripartite certificate: for each order tag, ``S_P|tag`` PSD and ``S_perp|tag``
    annihilated by that order's projector, summing to S.
    """
    op: LabeledOperator
    scenario: str
    layout: PartyLayout
    certificate: dict[str, LabeledOperator]
    margin: float = 0.0

    def residuals(self) -> dict[str, float]:
        names, dims = _names_dims(self.layout)
        S = _as_layout_op(self.op, self.layout).data
        cert = {k: _as_layout_op(v, self.layout).data for k, v in self.certificate.items()}
        out = {}
        if self.scenario == "bipartite":
            SP, Sp = cert["S_P"], cert["S_perp"]
            out["reconstruction"] = float(np.max(np.abs(SP + Sp - S)))
            out["subspace"] = float(np.max(np.abs(lv_array(Sp, names, dims, self.layout))))
            for party in self.layout.parties:
                idx = [names.index(n) for n in party.output_names]
                M = trace_replace_array(SP, dims, idx)
                out[f"psd:{party.name}"] = float(np.linalg.eigvalsh(_herm(M))[0])
        else:
            for order in scenario_orders(self.layout):
                tag = order_tag(order)
                SP, Sp = cert[f"S_P|{tag}"], cert[f"S_perp|{tag}"]
                out[f"reconstruction:{tag}"] = float(np.max(np.abs(SP + Sp - S)))
                out[f"subspace:{tag}"] = float(np.max(np.abs(
                    order_array(Sp, names, dims, self.layout, order))))
                out[f"psd:{tag}"] = float(np.linalg.eigvalsh(_herm(SP))[0])
        return out

    def certificate_ok(self, tol: float = CERTIFICATE_TOL) -> bool:
        for key, val in self.residuals().items():
            if key.startswith("psd"):
                if val < -tol:
                    return False
            elif val > tol:
                return False
        return True

    def expectation(self, W) -> float:
        return witness_expectation(self.op, W)

    def to_json(self) -> dict:
        obj = operator_to_json(self.op)
        obj["scenario"] = self.scenario
        obj["layout"] = self.layout.to_json()
        obj["margin"] = self.margin
        obj["certificate"] = {k: operator_to_json(v) for k, v in sorted(self.certificate.items())}
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CausalWitness":
        op = operator_from_json(obj)
        layout = PartyLayout.from_json(obj["layout"], op.systems)
        cert = {k: operator_from_json(v) for k, v in obj.get("certificate", {}).items()}
        return cls(op, obj["scenario"], layout, cert, float(obj.get("margin", 0.0)))


@dataclass
class WitnessRejected:
    """Outcome of a failed membership test; ``margin`` < 0 is the optimal shift."""
    scenario: str
    margin: float

    def __bool__(self):
        return False


@dataclass
class RobustnessResult:
    kind: str
    value: float
    witness: CausalWitness | None
    witness_op: LabeledOperator
    decomposition: dict[str, LabeledOperator]
    gap: float
    status: str
    primal_value: float
    dual_value: float
    solution: SdpSolution = field(repr=False)
    problem: SdpProblem = field(repr=False)

    @property
    def duality_residual(self) -> float:
        return abs(self.primal_value - self.dual_value)

    def report(self) -> dict:
        return {"kind": self.kind, "value": self.value, "gap": self.gap, "status": self.status,
                "primal_value": self.primal_value, "dual_value": self.dual_value,
                "iterations": self.solution.iterations}


@dataclass
class SeparableDecomposition:
    """W = sum of causally ordered PSD components (keys are order tags)."""
    components: dict[str, LabeledOperator]
    weights: dict[str, float]
    noise: float
    robustness: RobustnessResult = field(repr=False)

    def residuals(self, W: ProcessMatrix) -> dict[str, float]:
        layout = W.layout
        names, dims = _names_dims(layout)
        target = in_layout_order(W).data
        total = sum(c.data for c in self.components.values())
        out = {"sum": float(np.max(np.abs(total - target)))}
        for order in scenario_orders(layout):
            tag = order_tag(order)
            C = self.components[tag].data
            out[f"subspace:{tag}"] = float(np.max(np.abs(C - order_array(C, names, dims, layout, order))))
            out[f"psd:{tag}"] = float(np.linalg.eigvalsh(_herm(C))[0])
        return out


@dataclass
class NotSeparable:
    witness: CausalWitness | None
    witness_op: LabeledOperator
    robustness: RobustnessResult = field(repr=False)

    def __bool__(self):
        return False


# ---------------------------------------------------------------------------
# robustness problems

def _order_blocks(layout: PartyLayout, n: int):
    blocks, subs, terms = [], {}, {}
    for k, order in enumerate(scenario_orders(layout)):
        name = f"W{k}"
        blocks.append(Block(name, n))
        subs[name] = layout_subspace(order_tag(order), layout)
        terms[name] = identity_map(n)
    return blocks, subs, terms


def generalized_robustness_problem(W: ProcessMatrix) -> SdpProblem:
    """min tr(Omega)/d_O  s.t.  W + Omega = sum_k W_k, W_k ordered, Omega valid (unnormalized)."""
    op, layout = _checked(W)
    n = op.side
    blocks, subs, terms = _order_blocks(layout, n)
    blocks.append(Block("Omega", n))
    subs["Omega"] = layout_subspace("LV", layout)
    terms["Omega"] = identity_map(n, -1.0)
    return SdpProblem(blocks, {"Omega": np.eye(n) / layout.d_O}, [Equality(terms, op.data, "decomposition")],
                      subs, name="generalized-robustness")


def random_robustness_problem(W: ProcessMatrix) -> SdpProblem:
    """min lam  s.t.  W + lam * 1/d_I = sum_k W_k with W_k ordered."""
    op, layout = _checked(W)
    n = op.side
    blocks, subs, terms = _order_blocks(layout, n)
    blocks.append(Block("lam", 1))
    terms["lam"] = scalar_map(-np.eye(n) / layout.d_I, "white noise")
    return SdpProblem(blocks, {"lam": np.ones((1, 1))}, [Equality(terms, op.data, "decomposition")],
                      subs, name="random-robustness")


def _witness_from(sol: SdpSolution, layout: PartyLayout) -> np.ndarray:
    return _herm(_lv(layout, -sol.multipliers[0]))


def _robustness(kind: str, W: ProcessMatrix, problem: SdpProblem, tol: float, max_iter: int,
                certify: bool) -> RobustnessResult:
    op, layout = _checked(W)
    sol = solve(problem, tol=tol, max_iter=max_iter)
    _require_optimal(sol, f"{kind} robustness")
    S = LabeledOperator(layout.systems, _witness_from(sol, layout), True)
    dual_value = -witness_expectation(S, op)
    primal_value = sol.primal_objective
    decomposition = {}
    for k, order in enumerate(scenario_orders(layout)):
        decomposition[order_tag(order)] = LabeledOperator(layout.systems, _herm(sol.primal[f"W{k}"]), True)
    if "Omega" in sol.primal:
        decomposition["Omega"] = LabeledOperator(layout.systems, _herm(sol.primal["Omega"]), True)
    witness = None
    if certify:
        checked = verify_witness(S, layout, tol=CERTIFICATE_TOL)
        if isinstance(checked, CausalWitness):
            witness = checked
        else:
            log.warning("%s robustness witness failed certification (margin %.2e)", kind, checked.margin)
    return RobustnessResult(kind, primal_value, witness, S, decomposition, sol.gap, sol.status,
                            primal_value, dual_value, sol, problem)


def generalized_robustness(W: ProcessMatrix, tol: float = DEFAULT_SDP_TOL, max_iter: int = 200,
                           certify: bool = True) -> RobustnessResult:
    """R_g(W): worst-case noise weight needed to make W causally separable."""
    return _robustness("generalized", W, generalized_robustness_problem(W), tol, max_iter, certify)


def random_robustness(W: ProcessMatrix, tol: float = DEFAULT_SDP_TOL, max_iter: int = 200,
                      certify: bool = True) -> RobustnessResult:
    """R_r(W): white-noise weight needed to make W causally separable."""
    return _robustness("random", W, random_robustness_problem(W), tol, max_iter, certify)


def random_robustness_witness_problem(W: ProcessMatrix) -> SdpProblem:
    """Witness-side form for bipartite W: min tr(S W) over S in L_V with
    S = L_V(S_P), T_A(S_P) >= 0, T_B(S_P) >= 0 and tr(S 1/d_I) <= 1."""
    op, layout = _checked(W)
    if scenario_of(layout) != "bipartite":
        raise UnsupportedScenarioError("witness-side random robustness is implemented for two parties")
    names, dims = _names_dims(layout)
    n = op.side
    lv = layout_subspace("LV", layout)
    blocks = [Block("S", n, "free"), Block("S_P", n, "free"), Block("slack", 1)]
    eqs = [Equality({"S": identity_map(n),
                     "S_P": self_adjoint_map(lambda X: lv_array(X, names, dims, layout), n, "L_V", -1.0)},
                    np.zeros((n, n)), "S = L_V(S_P)")]
    for party in layout.parties:
        idx = [names.index(m) for m in party.output_names]
        Y = f"Y_{party.name}"
        blocks.append(Block(Y, n))
        eqs.append(Equality({Y: identity_map(n),
                             "S_P": self_adjoint_map(lambda X, idx=idx: trace_replace_array(X, dims, idx),
                                                     n, f"T_{party.name}", -1.0)},
                            np.zeros((n, n)), f"Y_{party.name} = T(S_P)"))
    eqs.append(Equality({"S": trace_map(n, np.eye(n) / layout.d_I), "slack": identity_map(1)},
                        np.ones((1, 1)), "normalization"))
    return SdpProblem(blocks, {"S": op.data}, eqs, {"S": lv}, name="random-robustness-witness")


def random_robustness_witness_form(W: ProcessMatrix, tol: float = DEFAULT_SDP_TOL) -> tuple[float, LabeledOperator]:
    problem = random_robustness_witness_problem(W)
    sol = solve(problem, tol=tol)
    _require_optimal(sol, "witness-side random robustness")
    S = LabeledOperator(W.layout.systems, _herm(sol.primal["S"]), True)
    return -sol.primal_objective, S


def separable_decomposition(W: ProcessMatrix, tol: float = DEFAULT_SDP_TOL,
                            threshold: float = SEPARABLE_THRESHOLD):
    """Causally ordered decomposition of W, or a separating witness."""
    res = random_robustness(W, tol=tol, certify=False)
    op, layout = _checked(W)
    if res.value >= threshold:
        checked = verify_witness(res.witness_op, layout, tol=CERTIFICATE_TOL)
        witness = checked if isinstance(checked, CausalWitness) else None
        return NotSeparable(witness, res.witness_op, res)
    orders = scenario_orders(layout)
    lam = res.solution.primal["lam"][0, 0].real
    shift = lam / len(orders) * np.eye(op.side) / layout.d_I
    components, weights = {}, {}
    for order in orders:
        tag = order_tag(order)
        C = _herm(res.decomposition[tag].data - shift)
        components[tag] = LabeledOperator(layout.systems, C, True)
        weights[tag] = float(np.trace(C).real) / layout.d_O
    return SeparableDecomposition(components, weights, lam, res)


# ---------------------------------------------------------------------------
# witness cone membership

def verify_witness_problem(S: LabeledOperator, layout: PartyLayout) -> SdpProblem:
    """max t such that S minus an annihilated part dominates t*1 in every required sense."""
    S = _as_layout_op(S, layout)
    sc = scenario_of(layout)
    names, dims = _names_dims(layout)
    n = S.side
    blocks = [Block("t", 1, "free")]
    subs, eqs = {}, []
    eye_map = scalar_map(np.eye(n), "t*1")
    if sc == "bipartite":
        blocks.append(Block("S_perp", n, "free"))
        subs["S_perp"] = layout_subspace("perp:LV", layout)
        for party in layout.parties:
            idx = [names.index(m) for m in party.output_names]
            Y = f"Y_{party.name}"
            blocks.append(Block(Y, n))
            T = self_adjoint_map(lambda X, idx=idx: trace_replace_array(X, dims, idx), n, f"T_{party.name}", -1.0)
            rhs = trace_replace_array(S.data, dims, idx)
            eqs.append(Equality({Y: identity_map(n), "S_perp": T, "t": eye_map}, _herm(rhs), Y))
    else:
        for k, order in enumerate(scenario_orders(layout)):
            P, Y = f"S_perp{k}", f"Y{k}"
            blocks += [Block(P, n, "free"), Block(Y, n)]
            subs[P] = layout_subspace("perp:" + order_tag(order), layout)
            eqs.append(Equality({Y: identity_map(n), P: identity_map(n), "t": eye_map}, _herm(S.data),
                                order_tag(order)))
    return SdpProblem(blocks, {"t": -np.ones((1, 1))}, eqs, subs, name="witness-membership")


def verify_witness(S: LabeledOperator, layout: PartyLayout, tol: float = CERTIFICATE_TOL,
                   sdp_tol: float = 1e-9):
    """Certify that S is a causal witness, or reject it."""
    if not S.hermitian:
        raise ValueError("a causal witness must be Hermitian")
    S = _as_layout_op(S, layout)
    sc = scenario_of(layout)
    problem = verify_witness_problem(S, layout)
    sol = solve(problem, tol=sdp_tol)
    _require_optimal(sol, "witness membership")
    t = float(sol.primal["t"][0, 0].real)
    if t < -tol:
        return WitnessRejected(sc, t)
    cert = {}
    systems = layout.systems
    if sc == "bipartite":
        Sp = _herm(sol.primal["S_perp"])
        cert["S_P"] = LabeledOperator(systems, _herm(S.data + Sp), True)
        cert["S_perp"] = LabeledOperator(systems, -Sp, True)
    else:
        for k, order in enumerate(scenario_orders(layout)):
            tag = order_tag(order)
            Sp = _herm(sol.primal[f"S_perp{k}"])
            cert[f"S_P|{tag}"] = LabeledOperator(systems, _herm(S.data - Sp), True)
            cert[f"S_perp|{tag}"] = LabeledOperator(systems, Sp, True)
    return CausalWitness(S, sc, layout, cert, t)


def witness_expectation(S: LabeledOperator, W) -> float:
    """tr(S W) for an operator or a process matrix W."""
    op = W.op if isinstance(W, ProcessMatrix) else W
    if set(S.names) != set(op.names):
        raise ValueError(f"factor mismatch: {list(S.names)} vs {list(op.names)}")
    return expectation(S, op)


# ---------------------------------------------------------------------------
# instruments and the OCB witness

@dataclass
class Instrument:
    """CJ matrices of the CP maps {M_a} of one instrument setting."""
    elements: tuple[LabeledOperator, ...]
    outputs: tuple[str, ...]
    label: str = ""

    def __post_init__(self):
        self.elements = tuple(self.elements)
        if not self.elements:
            raise ValueError("an instrument needs at least one element")
        ref = self.elements[0].names
        for M in self.elements:
            if M.names != ref:
                raise ValueError("instrument elements must share their factor order")
            if np.linalg.eigvalsh(_herm(M.data))[0] < -1e-10:
                raise ValueError(f"instrument {self.label!r} has a non-positive element")
        res = self.completeness_residual()
        if res > 1e-10:
            raise ValueError(f"instrument {self.label!r} is incomplete (residual {res:.2e})")

    @property
    def names(self) -> tuple[str, ...]:
        return self.elements[0].names

    def completeness_residual(self) -> float:
        M = sum(e.data for e in self.elements)
        names, dims = self.names, self.elements[0].dims
        idx = [names.index(o) for o in self.outputs]
        d_out = int(np.prod([dims[i] for i in idx])) if idx else 1
        target = np.eye(M.shape[0]) / d_out
        return float(np.max(np.abs(trace_replace_array(M, dims, idx) - target)))


def _proj(P: str, sign: int) -> np.ndarray:
    return 0.5 * (np.eye(2) + sign * pauli_string(P))


def _pair(names, a: np.ndarray, b: np.ndarray) -> LabeledOperator:
    return LabeledOperator([(names[0], 2), (names[1], 2)], np.kron(a, b), True)


def s_ocb() -> LabeledOperator:
    layout = bipartite_layout()
    data = 0.25 * (np.eye(16) - pauli_string("1ZZ1") - pauli_string("Z1XZ"))
    return LabeledOperator(layout.systems, data, True)


def ocb_instruments() -> tuple[dict[int, Instrument], dict[tuple[int, int], Instrument]]:
    """Alice's instruments by x and Bob's by (y, y')."""
    A = {}
    for x in (0, 1):
        els = [_pair(("A_I", "A_O"), _proj("Z", (-1) ** a), _proj("Z", (-1) ** x)) for a in (0, 1)]
        A[x] = Instrument(els, ("A_O",), f"A|x={x}")
    B = {}
    for y in (0, 1):
        els0 = [_pair(("B_I", "B_O"), _proj("X", (-1) ** b), _proj("Z", (-1) ** (y + b))) for b in (0, 1)]
        els1 = [_pair(("B_I", "B_O"), _proj("Z", (-1) ** b), np.eye(2) / 2) for b in (0, 1)]
        B[(y, 0)] = Instrument(els0, ("B_O",), f"B|y={y},y'=0")
        B[(y, 1)] = Instrument(els1, ("B_O",), f"B|y={y},y'=1")
    return A, B


OcbCell = tuple[int, int, int, int, int]   # (x, y, y', a, b)


def g_ocb() -> LabeledOperator:
    """Success operator of the OCB game: p_succ = tr(G W) for uniform inputs."""
    A, B = ocb_instruments()
    layout = bipartite_layout()
    data = np.zeros((16, 16), dtype=complex)
    for x, y, a, b in itertools.product((0, 1), repeat=4):
        MA = A[x].elements[a].data
        if a == y:
            data += np.kron(MA, B[(y, 0)].elements[b].data)
        if b == x:
            data += np.kron(MA, B[(y, 1)].elements[b].data)
    return LabeledOperator(layout.systems, data / 8, True)


@dataclass
class WitnessDecomposition:
    instruments_a: dict[int, Instrument]
    instruments_b: dict[tuple[int, int], Instrument]
    coefficients: dict[OcbCell, float]

    def operator(self) -> LabeledOperator:
        data = np.zeros((16, 16), dtype=complex)
        for (x, y, yp, a, b), g in self.coefficients.items():
            if g:
                data += g * np.kron(self.instruments_a[x].elements[a].data,
                                    self.instruments_b[(y, yp)].elements[b].data)
        return LabeledOperator(bipartite_layout().systems, data, True)


def decompose_witness_ocb() -> WitnessDecomposition:
    """S_OCB = 3*1/d_I - 4 G_OCB as sum_cells gamma * M_{a|x} (x) M_{b|y,y'}.

    The constant part uses 1/d_I = sum_{x,a,b} M_{a|x} (x) M_{b|0,1} / 2.
    """
    A, B = ocb_instruments()
    coeffs: dict[OcbCell, float] = {}
    for x, y, yp, a, b in itertools.product((0, 1), repeat=5):
        if yp == 0:
            g = -0.5 * (a == y)
        else:
            g = -0.5 * (b == x) + (1.5 if y == 0 else 0.0)
        coeffs[(x, y, yp, a, b)] = g
    return WitnessDecomposition(A, B, coeffs)


def born_probabilities(W, instruments_a: Mapping[int, Instrument],
                       instruments_b: Mapping[tuple[int, int], Instrument]) -> dict[OcbCell, float]:
    """P(a, b | x, (y, y')) = tr[(M_{a|x} (x) M_{b|y,y'}) W]."""
    op = W.op if isinstance(W, ProcessMatrix) else W
    op = permute_systems(op, ["A_I", "A_O", "B_I", "B_O"]) if list(op.names) != ["A_I", "A_O", "B_I", "B_O"] else op
    table = {}
    for x, instr_a in instruments_a.items():
        for (y, yp), instr_b in instruments_b.items():
            for a, MA in enumerate(instr_a.elements):
                for b, MB in enumerate(instr_b.elements):
                    p = np.real(np.vdot(np.kron(MA.data, MB.data).conj().T, op.data))
                    table[(x, y, yp, a, b)] = float(p)
    return table


def estimate_from_probabilities(coefficients: Mapping[OcbCell, float], table: Mapping[OcbCell, float]) -> float:
    missing = [c for c in coefficients if c not in table]
    if missing:
        raise KeyError(f"probability table lacks cells {missing[:4]}{'...' if len(missing) > 4 else ''}")
    return float(sum(g * table[c] for c, g in coefficients.items()))


def sample_probabilities(table: Mapping[OcbCell, float], shots: int, rng: np.random.Generator
                         ) -> dict[OcbCell, float]:
    """Multinomial resampling of each setting's outcome distribution."""
    settings: dict[tuple, list] = {}
    for cell in sorted(table):
        settings.setdefault(cell[:3], []).append(cell)
    out = {}
    for setting, cells in settings.items():
        p = np.clip([table[c] for c in cells], 0.0, None)
        counts = rng.multinomial(shots, p / p.sum())
        for c, k in zip(cells, counts):
            out[c] = k / shots
    return out


# ---------------------------------------------------------------------------
# random robustness is not monotone under local operations

@dataclass
class MonotonicityReport:
    rr_w1: float
    rr_mapped: float
    rg_w1: float
    rg_mapped: float
    w1: ProcessMatrix = field(repr=False)
    mapped: ProcessMatrix = field(repr=False)

    def report(self) -> dict:
        return {"R_r(W1)": self.rr_w1, "R_r($(W1))": self.rr_mapped,
                "R_g(W1)": self.rg_w1, "R_g($(W1))": self.rg_mapped}


def monotonicity_processes() -> tuple[ProcessMatrix, ProcessMatrix]:
    """W1 = W_OCB (x) 1/2 on an extra input of A, and $(W1) = W_OCB (x) |0><0|."""
    layout = bipartite_layout(extra_inputs={"A": [("A_I'", 2)]})
    base = w_ocb().op
    ext = LabeledOperator(list(base.systems) + [("A_I'", 2)], np.kron(base.data, np.eye(2) / 2), True)
    W1 = ProcessMatrix(permute_systems(ext, [s.name for s in layout.systems]), layout)
    # discard A_I' and prepare |0><0| in its place, acting on A's input (A_I, A_I')
    d = 4
    kraus = []
    for j in range(2):
        K = np.zeros((d, d))
        for i in range(2):
            K[2 * i + 0, 2 * i + j] = 1.0     # |i,0><i,j|
        kraus.append(K)
    pre = sum(np.outer(K.conj().T.reshape(-1), K.conj().T.reshape(-1).conj()) for K in kraus)
    mapped = compose_local(W1, {"A": LocalOperation(pre=pre)})
    return W1, mapped


def rr_monotonicity_counterexample(tol: float = DEFAULT_SDP_TOL) -> MonotonicityReport:
    W1, mapped = monotonicity_processes()
    return MonotonicityReport(
        random_robustness(W1, tol=tol, certify=False).value,
        random_robustness(mapped, tol=tol, certify=False).value,
        generalized_robustness(W1, tol=tol, certify=False).value,
        generalized_robustness(mapped, tol=tol, certify=False).value,
        W1, mapped)


OCB_RR = sqrt(2.0) - 1.0
