"""Process matrices: validity, causal-order subspaces and named constructors."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import prod, sqrt
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .tensor_ops import (
    LabeledOperator,
    PureVector,
    SystemLabel,
    align,
    as_systems,
    cj_from_kraus,
    cj_to_superoperator,
    haar_unitary,
    identity,
    is_trace_preserving,
    operator_from_json,
    operator_to_json,
    partial_trace,
    pauli_string,
    permute_array,
    permute_systems,
    superoperator_to_cj,
    trace_replace_array,
)

VALIDITY_TOL = 1e-9
OCB_BOUNDARY = sqrt(2.0) - 1.0


class InvalidProcessError(ValueError):
    """Raised when an operator fails the process-matrix conditions."""


@dataclass(frozen=True)
class Party:
    name: str
    inputs: tuple[SystemLabel, ...]
    outputs: tuple[SystemLabel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", as_systems(self.inputs))
        object.__setattr__(self, "outputs", as_systems(self.outputs))

    @property
    def d_I(self) -> int:
        return prod(s.dim for s in self.inputs)

    @property
    def d_O(self) -> int:
        return prod(s.dim for s in self.outputs)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.inputs)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.outputs)


@dataclass(frozen=True)
class PartyLayout:
    parties: tuple[Party, ...]

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(self.parties))
        names = [p.name for p in self.parties]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate party names {names}")
        as_systems(self.systems)

    @property
    def systems(self) -> tuple[SystemLabel, ...]:
        return tuple(s for p in self.parties for s in p.inputs + p.outputs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parties)

    @property
    def d_I(self) -> int:
        return prod(p.d_I for p in self.parties)

    @property
    def d_O(self) -> int:
        return prod(p.d_O for p in self.parties)

    def party(self, name: str) -> Party:
        for p in self.parties:
            if p.name == name:
                return p
        raise ValueError(f"unknown party {name!r}; layout has {list(self.names)}")

    def key(self) -> str:
        def fmt(labels):
            return ",".join(f"{s.name}:{s.dim}" for s in labels)
        return ";".join(f"{p.name}[{fmt(p.inputs)}|{fmt(p.outputs)}]" for p in self.parties)

    def to_json(self) -> list[dict]:
        def names(labels):
            if len(labels) == 1:
                return labels[0].name
            return [s.name for s in labels] if labels else None
        return [{"party": p.name, "in": names(p.inputs), "out": names(p.outputs)} for p in self.parties]

    @classmethod
    def from_json(cls, entries: Sequence[dict], systems: Sequence[SystemLabel]) -> "PartyLayout":
        lookup = {s.name: s for s in as_systems(systems)}

        def labels(val):
            if val is None or val == "":
                return ()
            val = [val] if isinstance(val, str) else list(val)
            try:
                return tuple(lookup[v] for v in val)
            except KeyError as exc:
                raise ValueError(f"layout names factor {exc} absent from the operator") from exc
        try:
            return cls(tuple(Party(e["party"], labels(e.get("in")), labels(e.get("out"))) for e in entries))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed layout: {exc}") from exc


def bipartite_layout(d: int = 2, extra_inputs: Mapping[str, Sequence] | None = None) -> PartyLayout:
    """Parties A and B with qudit input/output factors A_I, A_O, B_I, B_O."""
    extra = {k: as_systems(v) for k, v in (extra_inputs or {}).items()}
    return PartyLayout((
        Party("A", (SystemLabel("A_I", d),) + extra.get("A", ()), (SystemLabel("A_O", d),)),
        Party("B", (SystemLabel("B_I", d),) + extra.get("B", ()), (SystemLabel("B_O", d),)),
    ))


def switch_layout(reduce_target: bool = True) -> PartyLayout:
    c_inputs = (("C_I^c", 2),) if reduce_target else (("C_I^t", 2), ("C_I^c", 2))
    return PartyLayout((
        Party("A", (SystemLabel("A_I", 2),), (SystemLabel("A_O", 2),)),
        Party("B", (SystemLabel("B_I", 2),), (SystemLabel("B_O", 2),)),
        Party("C", as_systems(c_inputs), ()),
    ))


@dataclass(frozen=True)
class ValidityReport:
    psd: bool
    min_eigenvalue: float
    trace_ok: bool
    trace: float
    subspace_ok: bool
    subspace_residual: float
    tol: float

    @property
    def verdict(self) -> bool:
        return self.psd and self.trace_ok and self.subspace_ok

    def failures(self) -> list[str]:
        out = []
        if not self.psd:
            out.append(f"min eigenvalue {self.min_eigenvalue:.3e} < -{self.tol:g}")
        if not self.trace_ok:
            out.append(f"trace {self.trace:.12g} differs from d_O")
        if not self.subspace_ok:
            out.append(f"||W - L_V(W)||_max = {self.subspace_residual:.3e} > {self.tol:g}")
        return out


@dataclass(frozen=True)
class ProcessMatrix:
    op: LabeledOperator
    layout: PartyLayout
    tol: float = field(default=VALIDITY_TOL, compare=False)

    def __post_init__(self):
        _check_factors(self.op, self.layout)
        report = is_valid_process(self.op, self.layout, self.tol)
        if not report.verdict:
            raise InvalidProcessError("not a valid process matrix: " + "; ".join(report.failures()))

    @property
    def d_O(self) -> int:
        return self.layout.d_O

    @property
    def d_I(self) -> int:
        return self.layout.d_I

    @property
    def data(self) -> np.ndarray:
        return self.op.data


def _check_factors(op: LabeledOperator, layout: PartyLayout):
    if set(op.systems) != set(layout.systems):
        raise ValueError(f"operator factors {list(op.names)} do not match layout "
                         f"{[s.name for s in layout.systems]}")


def _unwrap(W) -> LabeledOperator:
    return W.op if isinstance(W, ProcessMatrix) else W


# ---------------------------------------------------------------------------
# subspace projectors as signed sums of trace-and-replace maps

@lru_cache(maxsize=None)
def _lv_terms(layout: PartyLayout) -> tuple[tuple[float, frozenset], ...]:
    """Expand 1 - prod_i (1 - O_i + I_i O_i) + prod_i I_i O_i over subsets."""
    terms: dict[frozenset, float] = {frozenset(): 1.0}
    choices = []
    for p in layout.parties:
        out = frozenset(p.output_names)
        io = frozenset(p.input_names + p.output_names)
        choices.append(((1.0, frozenset()), (-1.0, out), (1.0, io)))
    for combo in itertools.product(*choices):
        coef = prod(c for c, _ in combo)
        subset = frozenset().union(*(s for _, s in combo))
        terms[subset] = terms.get(subset, 0.0) - coef
    everything = frozenset(s.name for s in layout.systems)
    terms[everything] = terms.get(everything, 0.0) + 1.0
    return tuple(sorted(((c, s) for s, c in terms.items() if c != 0.0),
                        key=lambda t: (len(t[1]), sorted(t[1]))))


def _index(names: Sequence[str], subset: Iterable[str]) -> list[int]:
    return sorted(names.index(s) for s in subset)


def lv_array(data: np.ndarray, names: Sequence[str], dims: Sequence[int], layout: PartyLayout) -> np.ndarray:
    out = np.zeros_like(data)
    for coef, subset in _lv_terms(layout):
        out += coef * trace_replace_array(data, dims, _index(names, subset))
    return out


def _order_steps(layout: PartyLayout, order: Sequence[str]) -> list[tuple[frozenset, frozenset]]:
    """Pairs (F, G) encoding the conditions _F W = _G W of the causal order."""
    if sorted(order) != sorted(layout.names) or len(order) != len(layout.names):
        raise ValueError(f"{list(order)} is not a permutation of parties {list(layout.names)}")
    parties = [layout.party(n) for n in order]
    steps = [(frozenset(), frozenset(parties[-1].output_names))]
    later: frozenset = frozenset()
    for k in range(len(parties) - 1, 0, -1):
        later = later | frozenset(parties[k].input_names + parties[k].output_names)
        steps.append((later, later | frozenset(parties[k - 1].output_names)))
    return steps


def order_array(data, names, dims, layout: PartyLayout, order: Sequence[str]) -> np.ndarray:
    out = data
    for f, g in _order_steps(layout, order):
        if f == g:
            continue
        out = out - trace_replace_array(out, dims, _index(names, f)) \
            + trace_replace_array(out, dims, _index(names, g))
    return out


def lv_project(W, layout: PartyLayout) -> LabeledOperator:
    """Orthogonal projection onto the linear span of valid process matrices."""
    W = _unwrap(W)
    _check_factors(W, layout)
    return W.with_data(lv_array(W.data, W.names, W.dims, layout))


def causal_order_project(W, order: Sequence[str], layout: PartyLayout) -> LabeledOperator:
    """Projection onto the subspace compatible with the causal order ``order``."""
    W = _unwrap(W)
    _check_factors(W, layout)
    return W.with_data(order_array(W.data, W.names, W.dims, layout, tuple(order)))


def projector_array(tag: str, layout: PartyLayout, names: Sequence[str], dims: Sequence[int]
                    ) -> Callable[[np.ndarray], np.ndarray]:
    """Batch projector for a subspace tag.

    Tags: ``LV``, ``order:A<B`` and their orthocomplements ``perp:LV`` and
    ``perp:order:A<B``.
    """
    names, dims = tuple(names), tuple(dims)
    if tag.startswith("perp:"):
        inner = projector_array(tag[5:], layout, names, dims)
        return lambda x: x - inner(x)
    if tag == "LV":
        return lambda x: lv_array(x, names, dims, layout)
    if tag.startswith("order:"):
        order = tuple(tag[6:].split("<"))
        _order_steps(layout, order)
        return lambda x: order_array(x, names, dims, layout, order)
    raise ValueError(f"unknown subspace tag {tag!r}")


def order_tag(order: Sequence[str]) -> str:
    return "order:" + "<".join(order)


# ---------------------------------------------------------------------------
# validity

def is_valid_process(W, layout: PartyLayout, tol: float = VALIDITY_TOL) -> ValidityReport:
    W = _unwrap(W)
    _check_factors(W, layout)
    herm = 0.5 * (W.data + W.data.conj().T)
    min_eig = float(np.linalg.eigvalsh(herm)[0])
    tr = float(np.real(np.trace(W.data)))
    d_O = layout.d_O
    resid = float(np.max(np.abs(W.data - lv_array(W.data, W.names, W.dims, layout)), initial=0.0))
    return ValidityReport(
        psd=min_eig >= -tol,
        min_eigenvalue=min_eig,
        trace_ok=abs(tr - d_O) <= tol * d_O and abs(np.imag(np.trace(W.data))) <= tol,
        trace=tr,
        subspace_ok=resid <= tol,
        subspace_residual=resid,
        tol=tol,
    )


def order_residual(W, order: Sequence[str], layout: PartyLayout) -> float:
    W = _unwrap(W)
    proj = causal_order_project(W, order, layout)
    return float(np.max(np.abs(W.data - proj.data), initial=0.0))


def is_causally_ordered(W, order: Sequence[str], layout: PartyLayout, tol: float = VALIDITY_TOL) -> bool:
    report = is_valid_process(W, layout, tol)
    if not report.verdict:
        raise InvalidProcessError("causal order is only defined for valid processes: "
                                  + "; ".join(report.failures()))
    return order_residual(W, order, layout) <= tol


# ---------------------------------------------------------------------------
# constructors

def white_noise(layout: PartyLayout) -> ProcessMatrix:
    """Maximally mixed inputs, outputs discarded: 1/d_I."""
    op = identity(layout.systems) / layout.d_I
    return ProcessMatrix(op, layout)


def _pauli_op(layout: PartyLayout, terms: Mapping[str, float]) -> LabeledOperator:
    data = sum(coef * pauli_string(word) for word, coef in terms.items())
    return LabeledOperator(layout.systems, data, True)


def w_ocb() -> ProcessMatrix:
    """(1/4)[1 + (1ZZ1 + Z1XZ)/sqrt(2)] on [A_I, A_O, B_I, B_O]."""
    layout = bipartite_layout()
    c = 1.0 / sqrt(2.0)
    return ProcessMatrix(_pauli_op(layout, {"1111": 0.25, "1ZZ1": 0.25 * c, "Z1XZ": 0.25 * c}), layout)


def w_ocb_noisy(lam: float) -> ProcessMatrix:
    if lam < 0:
        raise ValueError(f"noise weight must be nonnegative, got {lam}")
    W = w_ocb()
    noise = white_noise(W.layout).op
    return ProcessMatrix((W.op + lam * noise) / (1.0 + lam), W.layout)


def ocb_decomposition(lam: float) -> tuple[LabeledOperator, LabeledOperator]:
    """Causally ordered parts with W_OCB(lam) = (W^{A<B} + W^{B<A})/2.

    Each part has unit weight in the mixture, i.e. trace d_O = 4.
    """
    if lam < OCB_BOUNDARY - 1e-12:
        raise ValueError(f"for lambda = {lam} < sqrt(2)-1 the ordered parts (1/4)[1 +/- "
                         f"sqrt(2)/(1+lambda) P] have negative eigenvalues; no decomposition of this form")
    layout = bipartite_layout()
    c = sqrt(2.0) / (1.0 + lam)
    w_ab = _pauli_op(layout, {"1111": 0.25, "1ZZ1": 0.25 * c})
    w_ba = _pauli_op(layout, {"1111": 0.25, "Z1XZ": 0.25 * c})
    return w_ab, w_ba


def switch_vector(psi=None) -> PureVector:
    """Process vector of the quantum switch on [A_I, A_O, B_I, B_O, C_I^t, C_I^c]."""
    psi = np.array([1.0, 0.0] if psi is None else psi, dtype=complex).reshape(-1)
    if psi.shape != (2,) or abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValueError("target state must be a normalized qubit vector")
    eye = np.eye(2)
    # index order: a_i, a_o, b_i, b_o, t, c
    w = np.zeros((2,) * 6, dtype=complex)
    w[..., 0] = np.einsum("a,ob,pt->aobpt", psi, eye, eye)
    w[..., 1] = np.einsum("b,pa,ot->aobpt", psi, eye, eye)
    systems = [("A_I", 2), ("A_O", 2), ("B_I", 2), ("B_O", 2), ("C_I^t", 2), ("C_I^c", 2)]
    return PureVector(systems, w.reshape(-1) / sqrt(2.0))


def switch_process(psi=None, reduce_target: bool = False) -> ProcessMatrix:
    """|w><w| of the switch, or its partial trace over the target C_I^t."""
    op = switch_vector(psi).projector()
    if reduce_target:
        op = partial_trace(op, ["C_I^t"])
    return ProcessMatrix(op, switch_layout(reduce_target))


def trace_out_charlie(switch: ProcessMatrix) -> ProcessMatrix:
    names = [p.name for p in switch.layout.parties]
    if names != ["A", "B", "C"] or switch.layout.party("C").d_O != 1:
        raise ValueError("expected a switch layout with parties A, B and a final party C")
    reduced = partial_trace(switch.op, switch.layout.party("C").input_names)
    return ProcessMatrix(reduced, PartyLayout(switch.layout.parties[:2]))


@dataclass(frozen=True)
class LocalOperation:
    """CJ matrices of the maps applied before (input side) and after (output side) a party."""
    pre: np.ndarray | None = None
    post: np.ndarray | None = None


def _check_cptp(M: np.ndarray, d: int, what: str):
    M = np.asarray(M, dtype=complex)
    if M.shape != (d * d, d * d):
        raise ValueError(f"{what} CJ matrix has shape {M.shape}, expected {(d * d, d * d)}")
    op = LabeledOperator([("in", d), ("out", d)], 0.5 * (M + M.conj().T))
    if np.linalg.eigvalsh(op.data)[0] < -1e-10 or np.max(np.abs(M - M.conj().T)) > 1e-10:
        raise ValueError(f"{what} map is not completely positive")
    if not is_trace_preserving(op):
        raise ValueError(f"{what} map is not trace preserving")


def _compose_tensor(pre: np.ndarray | None, post: np.ndarray | None, d_in: int, d_out: int) -> np.ndarray:
    """T[r, c, k, l] = CJ(post o C o pre)[r, c] for C = E_kl on [in, out]."""
    d = d_in * d_out
    s1 = np.eye(d_in * d_in) if pre is None else cj_to_superoperator(pre, d_in, d_in)
    s3 = np.eye(d_out * d_out) if post is None else cj_to_superoperator(post, d_out, d_out)
    basis = np.eye(d * d).reshape(d * d, d, d)
    out = np.empty((d, d, d, d), dtype=complex)
    for idx in range(d * d):
        k, l = divmod(idx, d)
        s2 = cj_to_superoperator(basis[idx], d_in, d_out)
        out[:, :, k, l] = superoperator_to_cj(s3 @ s2 @ s1, d_in, d_out)
    return out


def compose_local(W: ProcessMatrix, maps: Mapping[str, LocalOperation]) -> ProcessMatrix:
    """Process seen by the parties after fixed local pre/post-processing.

    For every CP map C on the new laboratories,
    tr[(C^A (x) C^B) $(W)] = tr[(C^A_123 (x) C^B_123) W].
    """
    layout = W.layout
    grouped = [n for p in layout.parties for n in p.input_names + p.output_names]
    op = W.op
    data = permute_array(op.data, op.dims, [op.names.index(n) for n in grouped])
    sizes = [p.d_I * p.d_O for p in layout.parties]
    P = len(sizes)
    t = data.reshape(tuple(sizes) * 2)
    for pos, party in enumerate(layout.parties):
        loc = maps.get(party.name)
        if loc is None or (loc.pre is None and loc.post is None):
            continue
        if loc.pre is not None:
            _check_cptp(loc.pre, party.d_I, f"pre-processing of {party.name}")
        if loc.post is not None:
            _check_cptp(loc.post, party.d_O, f"post-processing of {party.name}")
        T = _compose_tensor(loc.pre, loc.post, party.d_I, party.d_O)
        tmp = np.tensordot(T, t, axes=([1, 0], [pos, P + pos]))
        t = np.moveaxis(tmp, [0, 1], [P + pos, pos])
    unknown = set(maps) - set(layout.names)
    if unknown:
        raise ValueError(f"maps given for unknown parties {sorted(unknown)}")
    side = prod(sizes)
    back = [grouped.index(n) for n in op.names]
    gdims = [dict(zip(op.names, op.dims))[n] for n in grouped]
    data = permute_array(t.reshape(side, side), gdims, back)
    return ProcessMatrix(LabeledOperator.hermitian_from(op.systems, data), layout)


# ---------------------------------------------------------------------------
# random processes (for tests, sampling studies and the CLI)

def _random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (g + g.conj().T)


def _noise_perturbation(layout: PartyLayout, direction: np.ndarray, scale: float) -> LabeledOperator:
    """1/d_I + eps * direction with eps = scale times the PSD boundary value."""
    n = direction.shape[0]
    lam_min = np.linalg.eigvalsh(direction)[0]
    eps = scale * (1.0 / layout.d_I) / max(-lam_min, 1e-300)
    return LabeledOperator.hermitian_from(layout.systems, np.eye(n) / layout.d_I + eps * direction)


def random_valid_process(layout: PartyLayout, rng: np.random.Generator, scale: float | None = None
                         ) -> ProcessMatrix:
    """Valid process along a random direction of L_V, possibly on the PSD boundary."""
    n = prod(s.dim for s in layout.systems)
    names = [s.name for s in layout.systems]
    dims = [s.dim for s in layout.systems]
    h = _random_hermitian(n, rng)
    h -= np.trace(h).real / n * np.eye(n)
    h = lv_array(h, names, dims, layout)
    scale = rng.uniform(0.0, 1.0) if scale is None else scale
    return ProcessMatrix(_noise_perturbation(layout, h, scale), layout)


def random_ordered_process(layout: PartyLayout, order: Sequence[str], rng: np.random.Generator,
                           scale: float | None = None) -> ProcessMatrix:
    """Random process compatible with the causal order ``order``."""
    n = prod(s.dim for s in layout.systems)
    names = [s.name for s in layout.systems]
    dims = [s.dim for s in layout.systems]
    h = _random_hermitian(n, rng)
    h -= np.trace(h).real / n * np.eye(n)
    h = order_array(h, names, dims, layout, tuple(order))
    scale = rng.uniform(0.0, 1.0) if scale is None else scale
    return ProcessMatrix(_noise_perturbation(layout, h, scale), layout)


def random_comb(rng: np.random.Generator, order: Sequence[str] = ("A", "B")) -> ProcessMatrix:
    """Bipartite qubit comb: a state on the first input correlated with a
    channel from (first input, first output) to the second input."""
    layout = bipartite_layout()
    first, second = (layout.party(n) for n in order)
    g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    # random channel from 4-dim (first input, first output) to the 2-dim second input
    V = haar_unitary(8, rng)[:, :4]           # isometry 4 -> 2 (x) env(4)
    kraus = [V.reshape(2, 4, 4)[:, e, :] for e in range(4)]
    M = cj_from_kraus(kraus).data             # on [(in1, out1), in2], tr_in2 = 1
    sq = np.linalg.cholesky(rho + 1e-15 * np.eye(2))
    L = np.kron(np.kron(sq, np.eye(2)), np.eye(2))
    X = L @ M @ L.conj().T                    # factors [in1, out1, in2]
    data = np.kron(X, np.eye(2))              # append second output
    systems = [first.inputs[0], first.outputs[0], second.inputs[0], second.outputs[0]]
    op = LabeledOperator.hermitian_from(systems, data)
    return ProcessMatrix(align(LabeledOperator(layout.systems, np.eye(16)), op), layout)


# ---------------------------------------------------------------------------
# JSON and named constructors

def process_to_json(W: ProcessMatrix) -> dict:
    obj = operator_to_json(W.op)
    obj["layout"] = W.layout.to_json()
    return obj


def process_from_json(obj: dict, tol: float = VALIDITY_TOL) -> ProcessMatrix:
    op = operator_from_json(obj)
    if "layout" not in obj:
        raise ValueError("process JSON needs a 'layout' entry")
    layout = PartyLayout.from_json(obj["layout"], op.systems)
    return ProcessMatrix(op, layout, tol)


def in_layout_order(W: ProcessMatrix) -> LabeledOperator:
    """The operator of W with factors in the order listed by its layout."""
    names = [s.name for s in W.layout.systems]
    if list(W.op.names) == names:
        return W.op
    return permute_systems(W.op, names)


NAMED_PROCESSES = ("ocb", "ocb-noisy:<lambda>", "switch", "switch-reduced", "white-noise",
                   "white-noise:switch")


def named_process(name: str, psi=None) -> ProcessMatrix:
    """Constructor lookup used by the command line."""
    if name == "ocb":
        return w_ocb()
    if name.startswith("ocb-noisy:"):
        try:
            lam = float(name.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"cannot parse noise weight in {name!r}") from exc
        return w_ocb_noisy(lam)
    if name == "switch":
        return switch_process(psi, reduce_target=False)
    if name == "switch-reduced":
        return switch_process(psi, reduce_target=True)
    if name == "white-noise":
        return white_noise(bipartite_layout())
    if name == "white-noise:switch":
        return white_noise(switch_layout(True))
    raise KeyError(f"unknown process {name!r}; known: {', '.join(NAMED_PROCESSES)}")
