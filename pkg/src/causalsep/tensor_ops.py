"""Labeled dense operators on tensor products of named factors.

Every matrix in the package carries an ordered list of factors (name, dim).
Factor order follows row-major Kronecker convention: the first factor is the
most significant index.  Complex conjugation and transposition are taken in
the computational basis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from math import prod
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

HERMITIAN_ATOL = 1e-12


@dataclass(frozen=True)
class SystemLabel:
    name: str
    dim: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("factor name must be non-empty")
        if isinstance(self.dim, bool) or not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValueError(f"dimension of {self.name!r} must be a positive integer, got {self.dim!r}")


def as_systems(systems: Iterable) -> tuple[SystemLabel, ...]:
    out = []
    for s in systems:
        if isinstance(s, SystemLabel):
            out.append(s)
        elif isinstance(s, dict):
            out.append(SystemLabel(str(s["name"]), int(s["dim"])))
        else:
            name, dim = s
            out.append(SystemLabel(str(name), int(dim)))
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate factor name(s): {dup}")
    return tuple(out)


def hermitize(data: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (M + M^dag)/2 and the max-norm of the correction."""
    sym = 0.5 * (data + np.swapaxes(data, -1, -2).conj())
    return sym, float(np.max(np.abs(sym - data), initial=0.0))


class LabeledOperator:
    """Complex square matrix over an ordered list of named factors.

    ``drift`` records the largest re-symmetrization correction applied along
    the way and ``audit`` lists automatic factor permutations.
    """

    __slots__ = ("systems", "data", "hermitian", "drift", "audit")

    def __init__(self, systems, data, hermitian: bool | None = None, *,
                 drift: float = 0.0, audit: tuple[str, ...] = ()):
        systems = as_systems(systems)
        data = np.array(data, dtype=complex)
        side = prod(s.dim for s in systems)
        if data.shape != (side, side):
            raise ValueError(f"matrix shape {data.shape} does not match factor dimensions "
                             f"{[s.dim for s in systems]} (side {side})")
        dev = float(np.max(np.abs(data - data.conj().T), initial=0.0))
        if hermitian is None:
            hermitian = dev <= HERMITIAN_ATOL
        elif hermitian and dev > HERMITIAN_ATOL:
            raise ValueError(f"operator flagged Hermitian but ||M - M^dag||_max = {dev:.3e}")
        data.setflags(write=False)
        self.systems = systems
        self.data = data
        self.hermitian = bool(hermitian)
        self.drift = float(drift)
        self.audit = tuple(audit)

    @classmethod
    def hermitian_from(cls, systems, data, *, drift: float = 0.0, audit=()) -> "LabeledOperator":
        """Re-symmetrize ``data`` and record the correction."""
        sym, corr = hermitize(np.asarray(data, dtype=complex))
        return cls(systems, sym, True, drift=max(drift, corr), audit=audit)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.systems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.systems)

    @property
    def side(self) -> int:
        return self.data.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.data)

    def dag(self) -> "LabeledOperator":
        return LabeledOperator(self.systems, self.data.conj().T, self.hermitian, drift=self.drift)

    def with_data(self, data, hermitian: bool | None = None) -> "LabeledOperator":
        if hermitian is None:
            hermitian = self.hermitian
        if hermitian:
            return LabeledOperator.hermitian_from(self.systems, data, drift=self.drift, audit=self.audit)
        return LabeledOperator(self.systems, data, False, drift=self.drift, audit=self.audit)

    def _combine(self, other, sign):
        other = align(self, other)
        return self.with_data(self.data + sign * other.data, self.hermitian and other.hermitian)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return self.with_data(-self.data)

    def __mul__(self, scalar):
        scalar = complex(scalar)
        herm = self.hermitian and scalar.imag == 0.0
        return self.with_data(self.data * (scalar.real if herm else scalar), herm)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def allclose(self, other, atol=1e-10) -> bool:
        other = align(self, other)
        return bool(np.max(np.abs(self.data - other.data), initial=0.0) <= atol)

    def __repr__(self):
        labels = ", ".join(f"{s.name}:{s.dim}" for s in self.systems)
        return f"LabeledOperator([{labels}], hermitian={self.hermitian})"


@dataclass(frozen=True)
class PureVector:
    systems: tuple[SystemLabel, ...]
    data: np.ndarray

    def __post_init__(self):
        systems = as_systems(self.systems)
        data = np.array(self.data, dtype=complex).reshape(-1)
        if data.size != prod(s.dim for s in systems):
            raise ValueError(f"vector length {data.size} does not match factor dimensions")
        object.__setattr__(self, "systems", systems)
        object.__setattr__(self, "data", data)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.systems)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def projector(self) -> LabeledOperator:
        return LabeledOperator.hermitian_from(self.systems, np.outer(self.data, self.data.conj()))

    def tensor(self, other: "PureVector") -> "PureVector":
        return PureVector(self.systems + other.systems, np.kron(self.data, other.data))


# ---------------------------------------------------------------------------
# array kernels; all accept a stack of matrices with arbitrary leading axes

def _split(dims: Sequence[int], idx: Sequence[int]):
    n = len(dims)
    keep = [i for i in range(n) if i not in set(idx)]
    return keep, list(idx)


def _grouped(data: np.ndarray, dims: Sequence[int], keep, traced):
    """Reshape to (..., dk, dt, dk, dt) with the traced factors moved last."""
    batch = data.shape[:-2]
    t = data.reshape(batch + tuple(dims) + tuple(dims))
    order = keep + traced
    b, n = len(batch), len(dims)
    perm = list(range(b)) + [b + i for i in order] + [b + n + i for i in order]
    dk = prod(dims[i] for i in keep)
    dt = prod(dims[i] for i in traced)
    return t.transpose(perm).reshape(batch + (dk, dt, dk, dt)), perm, dk, dt


def ptrace_array(data: np.ndarray, dims: Sequence[int], traced: Sequence[int]) -> np.ndarray:
    keep, traced = _split(dims, traced)
    t, _, _, _ = _grouped(data, dims, keep, traced)
    return np.einsum("...ijkj->...ik", t)


def trace_replace_array(data: np.ndarray, dims: Sequence[int], traced: Sequence[int]) -> np.ndarray:
    if not traced:
        return data
    keep, traced = _split(dims, traced)
    t, perm, dk, dt = _grouped(data, dims, keep, traced)
    red = np.einsum("...ijkj->...ik", t) / dt
    batch = data.shape[:-2]
    out = red[..., :, None, :, None] * np.eye(dt)[:, None, :]
    order = keep + traced
    out = out.reshape(batch + tuple(dims[i] for i in order) * 2)
    out = out.transpose(np.argsort(perm))
    side = prod(dims)
    return out.reshape(batch + (side, side))


def permute_array(data: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    batch = data.shape[:-2]
    b, n = len(batch), len(dims)
    t = data.reshape(batch + tuple(dims) * 2)
    axes = list(range(b)) + [b + p for p in perm] + [b + n + p for p in perm]
    return t.transpose(axes).reshape(data.shape)


# ---------------------------------------------------------------------------
# labeled operations

def _indices(op: LabeledOperator, subset: Iterable[str]) -> list[int]:
    subset = [subset] if isinstance(subset, str) else list(subset)
    names = op.names
    missing = [s for s in subset if s not in names]
    if missing:
        raise ValueError(f"unknown factor name(s) {missing}; operator has {list(names)}")
    if len(set(subset)) != len(subset):
        raise ValueError(f"repeated factor names in {subset}")
    return sorted(names.index(s) for s in subset)


def identity(systems) -> LabeledOperator:
    systems = as_systems(systems)
    return LabeledOperator(systems, np.eye(prod(s.dim for s in systems)), True)


def operator(name: str, matrix) -> LabeledOperator:
    """Single-factor operator; dimension read from the matrix."""
    matrix = np.asarray(matrix, dtype=complex)
    return LabeledOperator([(name, matrix.shape[0])], matrix)


def tensor(*ops: LabeledOperator) -> LabeledOperator:
    """Kronecker product with concatenated factor lists."""
    if not ops:
        raise ValueError("tensor needs at least one operator")
    systems = sum((op.systems for op in ops), ())
    as_systems(systems)
    data = ops[0].data
    for op in ops[1:]:
        data = np.kron(data, op.data)
    herm = all(op.hermitian for op in ops)
    drift = max(op.drift for op in ops)
    if herm:
        return LabeledOperator.hermitian_from(systems, data, drift=drift)
    return LabeledOperator(systems, data, False, drift=drift)


def partial_trace(W: LabeledOperator, subset: Iterable[str]) -> LabeledOperator:
    """Trace out the named factors; the remaining order is preserved."""
    idx = _indices(W, subset)
    red = ptrace_array(W.data, W.dims, idx)
    systems = [s for i, s in enumerate(W.systems) if i not in idx]
    if W.hermitian:
        return LabeledOperator.hermitian_from(systems, red, drift=W.drift)
    return LabeledOperator(systems, red, False, drift=W.drift)


def trace_and_replace(W: LabeledOperator, subset: Iterable[str]) -> LabeledOperator:
    """(1^X/d_X) (x) tr_X W, re-embedded at the original factor positions."""
    idx = _indices(W, subset)
    return W.with_data(trace_replace_array(W.data, W.dims, idx))


def permute_systems(W: LabeledOperator, order: Sequence[str]) -> LabeledOperator:
    order = list(order)
    if sorted(order) != sorted(W.names) or len(order) != len(W.names):
        raise ValueError(f"{order} is not a permutation of {list(W.names)}")
    perm = [W.names.index(n) for n in order]
    data = permute_array(W.data, W.dims, perm)
    systems = [W.systems[p] for p in perm]
    return LabeledOperator(systems, data, W.hermitian, drift=W.drift, audit=W.audit)


def align(reference: LabeledOperator, other: LabeledOperator) -> LabeledOperator:
    """Bring ``other`` into the factor order of ``reference``.

    A permutation is applied only when both carry the same factors; it is
    logged and appended to the audit trail of the result.
    """
    if other.systems == reference.systems:
        return other
    if set(other.systems) != set(reference.systems):
        raise ValueError(f"factor mismatch: {list(reference.names)} vs {list(other.names)}")
    out = permute_systems(other, reference.names)
    note = f"permuted {list(other.names)} -> {list(reference.names)}"
    log.debug(note)
    return LabeledOperator(out.systems, out.data, out.hermitian, drift=out.drift,
                           audit=other.audit + (note,))


def expectation(S: LabeledOperator, W: LabeledOperator) -> float:
    """Re tr(S W) with automatic factor alignment."""
    W = align(S, W)
    return float(np.real(np.einsum("ij,ji->", S.data, W.data)))


# ---------------------------------------------------------------------------
# Choi-Jamiolkowski

def cj_pure(A, names: tuple[str, str] = ("A_I", "A_O")) -> PureVector:
    """|A*>> = (1 (x) A*)|1>> on [input, output] for A: input -> output."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    d_out, d_in = A.shape
    return PureVector([(names[0], d_in), (names[1], d_out)], A.conj().T.reshape(-1))


def cj_from_kraus(kraus: Sequence, names: tuple[str, str] = ("A_I", "A_O")) -> LabeledOperator:
    """Sum_k |K_k*>><<K_k*|, positive semidefinite for any Kraus list."""
    kraus = [np.asarray(K, dtype=complex) for K in kraus]
    if not kraus:
        raise ValueError("empty Kraus list")
    shape = kraus[0].shape
    if any(K.shape != shape or K.ndim != 2 for K in kraus):
        raise ValueError(f"inconsistent Kraus shapes: {[K.shape for K in kraus]}")
    vecs = np.stack([K.conj().T.reshape(-1) for K in kraus])
    d_out, d_in = shape
    return LabeledOperator.hermitian_from([(names[0], d_in), (names[1], d_out)],
                                          vecs.T @ vecs.conj())


def cj_apply(M: LabeledOperator, rho) -> np.ndarray:
    """[tr_in((rho (x) 1) M)]^T for M on [input, output]."""
    if len(M.systems) != 2:
        raise ValueError("CJ matrix must have exactly two factors [input, output]")
    d_in, d_out = M.dims
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (d_in, d_in):
        raise ValueError(f"state of shape {rho.shape} does not match input dimension {d_in}")
    t = M.data.reshape(d_in, d_out, d_in, d_out)
    return np.einsum("ab,bcad->cd", rho, t).T


def is_trace_preserving(M: LabeledOperator, atol: float = 1e-10) -> bool:
    d_in = M.dims[0]
    red = ptrace_array(M.data, M.dims, [1])
    return bool(np.max(np.abs(red - np.eye(d_in))) <= atol)


def cj_to_superoperator(M: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """Matrix S with vec(map(rho)) = S vec(rho), row-major vec."""
    t = np.asarray(M).reshape(d_in, d_out, d_in, d_out)
    # map(rho)[a, b] = sum_{i, j} M[i, b, j, a] rho[j, i]
    return np.einsum("ibja->abji", t).reshape(d_out * d_out, d_in * d_in)


def superoperator_to_cj(S: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    t = np.asarray(S).reshape(d_out, d_out, d_in, d_in)
    return np.einsum("abji->ibja", t).reshape(d_in * d_out, d_in * d_out)


# ---------------------------------------------------------------------------
# Haar measure

def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from the QR decomposition of a Ginibre matrix."""
    if dim < 1:
        raise ValueError("dimension must be positive")
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


# ---------------------------------------------------------------------------
# JSON

def operator_to_json(op: LabeledOperator) -> dict:
    return {
        "systems": [{"name": s.name, "dim": int(s.dim)} for s in op.systems],
        "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in op.data],
    }


def operator_from_json(obj: dict) -> LabeledOperator:
    try:
        systems = as_systems(obj["systems"])
        raw = np.asarray(obj["matrix"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed operator JSON: {exc}") from exc
    if raw.ndim != 3 or raw.shape[-1] != 2:
        raise ValueError("operator matrix must be a nested list of [re, im] pairs")
    data = raw[..., 0] + 1j * raw[..., 1]
    op = LabeledOperator(systems, data)
    if not op.hermitian:
        sym, corr = hermitize(data)
        if corr <= 1e-9:
            op = LabeledOperator(systems, sym, True, drift=corr)
    return op


PAULI = {
    "1": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli_string(word: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in word:
        out = np.kron(out, PAULI[ch])
    return out
