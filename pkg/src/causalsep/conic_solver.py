"""Dense interior-point solver for block-structured Hermitian SDPs.

A problem has Hermitian matrix blocks X_b (PSD or free), optional subspace
restrictions X_b in L_b, affine equalities sum_b A_eb(X_b) = B_e and a linear
objective sum_b Re tr(C_b X_b) to be minimized.  Its dual is

    maximize   sum_e Re tr(B_e Y_e)
    subject to P_b(C_b - sum_e A_eb^*(Y_e) - Z_b) = 0,  Z_b >= 0 (Z_b = 0 if free).

Pipeline:
  1. every block is parameterized by real coordinates in an orthonormal basis
     of its subspace (Re tr inner product);
  2. the equalities are eliminated through a QR null-space basis, leaving an
     inequality-form problem  min c'u  s.t.  h - G u in K;
  3. K is a product of a nonnegative orthant (1x1 blocks) and real symmetric
     PSD cones; a complex n x n block enters as [[Re X, -Im X], [Im X, Re X]];
  4. the homogeneous self-dual embedding of that pair is solved by a
     primal-dual path-following method with Nesterov-Todd scaling and
     Mehrotra predictor-corrector steps.

Bookkeeping for the embedding: <Z, E(X)> = 2 Re tr(Z_c X) with
Z_c = (Z11 + Z22)/2 + i (Z21 - Z12)/2, so the complex dual slack reported for
a block is 2 Z_c.  Each complex eigenvalue appears twice in E(X).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

STATUSES = ("optimal", "primal_infeasible", "dual_infeasible", "max_iter")


class SolverError(RuntimeError):
    """Raised when a solve does not reach an optimal status and the caller requires one."""


# ---------------------------------------------------------------------------
# Hermitian coordinates

def _triu(n: int):
    return np.triu_indices(n, 1)


def herm_coords(X: np.ndarray) -> np.ndarray:
    """Coordinates in the orthonormal basis {E_ii, (E_ij+E_ji)/r2, i(E_ij-E_ji)/r2}."""
    n = X.shape[-1]
    iu, ju = _triu(n)
    diag = np.real(np.diagonal(X, axis1=-2, axis2=-1))
    off = X[..., iu, ju]
    r2 = np.sqrt(2.0)
    return np.concatenate([diag, r2 * off.real, r2 * off.imag], axis=-1)


def coords_herm(v: np.ndarray, n: int) -> np.ndarray:
    iu, ju = _triu(n)
    m = len(iu)
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (n, n), dtype=complex)
    idx = np.arange(n)
    out[..., idx, idx] = v[..., :n]
    r2 = np.sqrt(2.0)
    upper = (v[..., n:n + m] + 1j * v[..., n + m:]) / r2
    out[..., iu, ju] = upper
    out[..., ju, iu] = upper.conj()
    return out


def hermitian_basis(n: int) -> np.ndarray:
    return coords_herm(np.eye(n * n), n)


def embed(X: np.ndarray) -> np.ndarray:
    """Real symmetric embedding of (a stack of) complex Hermitian matrices."""
    re, im = X.real, X.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def unembed(Z: np.ndarray) -> np.ndarray:
    n = Z.shape[-1] // 2
    z11, z12 = Z[..., :n, :n], Z[..., :n, n:]
    z21, z22 = Z[..., n:, :n], Z[..., n:, n:]
    return 0.5 * (z11 + z22) + 0.5j * (z21 - z12)


# ---------------------------------------------------------------------------
# problem description

@dataclass(frozen=True)
class Block:
    name: str
    side: int
    cone: str = "psd"

    def __post_init__(self):
        if self.cone not in ("psd", "free"):
            raise ValueError(f"cone must be 'psd' or 'free', got {self.cone!r}")
        if self.side < 1:
            raise ValueError("block side must be positive")


@dataclass(frozen=True)
class LinearMap:
    """Linear map between Hermitian matrix spaces acting on stacks (..., n, n)."""
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    out_side: int
    label: str = "map"


def identity_map(n: int, scale: float = 1.0) -> LinearMap:
    return LinearMap(lambda X: scale * X, lambda Y: scale * Y, n, f"{scale:g}*id")


def self_adjoint_map(f: Callable[[np.ndarray], np.ndarray], n: int, label: str, scale: float = 1.0) -> LinearMap:
    return LinearMap(lambda X: scale * f(X), lambda Y: scale * f(Y), n, label)


def trace_map(n: int, weight: np.ndarray | None = None, label: str = "trace") -> LinearMap:
    """X -> [[Re tr(M X)]] with M Hermitian (identity by default)."""
    M = np.eye(n) if weight is None else np.asarray(weight, dtype=complex)

    def fwd(X):
        return np.real(np.einsum("ij,...ji->...", M, X))[..., None, None].astype(complex)

    def adj(Y):
        return np.real(Y[..., 0, 0])[..., None, None] * M
    return LinearMap(fwd, adj, 1, label)


def scalar_map(M: np.ndarray, label: str = "scalar") -> LinearMap:
    """[[x]] -> x M for a 1x1 block."""
    M = np.asarray(M, dtype=complex)

    def fwd(X):
        return np.real(X[..., 0, 0])[..., None, None] * M

    def adj(Y):
        return np.real(np.einsum("ij,...ji->...", M, Y))[..., None, None].astype(complex)
    return LinearMap(fwd, adj, M.shape[0], label)


@dataclass(frozen=True)
class Subspace:
    """Named linear subspace given by an orthogonal projector acting on stacks."""
    tag: str
    project: Callable[[np.ndarray], np.ndarray]


@dataclass
class Equality:
    terms: dict[str, LinearMap]
    rhs: np.ndarray
    label: str = ""


@dataclass
class SdpProblem:
    blocks: list[Block]
    objective: dict[str, np.ndarray] = field(default_factory=dict)
    equalities: list[Equality] = field(default_factory=list)
    subspaces: dict[str, Subspace] = field(default_factory=dict)
    name: str = "sdp"

    def __post_init__(self):
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate block names {names}")
        known = set(names)
        refs = set(self.objective) | set(self.subspaces)
        for eq in self.equalities:
            refs |= set(eq.terms)
        missing = refs - known
        if missing:
            raise ValueError(f"undeclared blocks referenced: {sorted(missing)}")
        for b, C in self.objective.items():
            C = np.asarray(C)
            side = self.block(b).side
            if C.shape != (side, side) or np.max(np.abs(C - C.conj().T), initial=0) > 1e-12:
                raise ValueError(f"objective for {b} must be Hermitian of side {side}")
        for eq in self.equalities:
            rhs = np.asarray(eq.rhs)
            if rhs.shape[0] != rhs.shape[-1] or np.max(np.abs(rhs - rhs.conj().T), initial=0) > 1e-12:
                raise ValueError(f"equality {eq.label!r}: right-hand side must be Hermitian")
            for b, A in eq.terms.items():
                if A.out_side != rhs.shape[0]:
                    raise ValueError(f"equality {eq.label!r}: map on {b} has output side "
                                     f"{A.out_side}, rhs has {rhs.shape[0]}")

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


@dataclass
class SdpSolution:
    status: str
    primal: dict[str, np.ndarray]
    dual: dict[str, np.ndarray]
    multipliers: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# expansion into real coordinates

_BASIS_CACHE: dict[tuple[str, int], np.ndarray] = {}


def subspace_basis(sub: Subspace, n: int) -> np.ndarray:
    """Orthonormal coordinate basis (rows) of the subspace, cached per tag."""
    key = (sub.tag, n)
    if key in _BASIS_CACHE:
        return _BASIS_CACHE[key]
    P = herm_coords(sub.project(hermitian_basis(n)))
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    defect = float(np.max(np.abs(w * (1.0 - w)), initial=0.0))
    sym = float(np.max(np.abs(P @ P - P), initial=0.0))
    if defect > 1e-8 or sym > 1e-8:
        raise ValueError(f"subspace {sub.tag!r} is not given by an orthogonal projector "
                         f"(eigenvalue defect {defect:.2e}, idempotence defect {sym:.2e})")
    keep = w > 0.5
    basis = V[:, keep][:, ::-1].T.copy()
    log.debug("subspace %s: dim %d of %d, projector defect %.2e", sub.tag, basis.shape[0], n * n, defect)
    _BASIS_CACHE[key] = basis
    # the complement comes for free; tags of complements carry a "perp:" prefix
    other = sub.tag[5:] if sub.tag.startswith("perp:") else "perp:" + sub.tag
    _BASIS_CACHE.setdefault((other, n), V[:, ~keep][:, ::-1].T.copy())
    return basis


@dataclass
class ExpandedProblem:
    """Real-coordinate form: x = (x_b), X_b = herm(T_b' x_b); E x = f; min c'x."""
    names: list[str]
    sides: list[int]
    cones: list[str]
    bases: list[np.ndarray]
    E: np.ndarray
    f: np.ndarray
    c: np.ndarray
    eq_sides: list[int] = field(default_factory=list)
    name: str = "sdp"

    @property
    def offsets(self) -> list[int]:
        return list(np.cumsum([0] + [b.shape[0] for b in self.bases]))

    def block_matrix(self, x: np.ndarray, k: int) -> np.ndarray:
        off = self.offsets
        return coords_herm(self.bases[k].T @ x[off[k]:off[k + 1]], self.sides[k])


def expand(problem: SdpProblem) -> ExpandedProblem:
    bases = []
    for b in problem.blocks:
        if b.name in problem.subspaces:
            bases.append(subspace_basis(problem.subspaces[b.name], b.side))
        else:
            bases.append(np.eye(b.side * b.side))
    sizes = [B.shape[0] for B in bases]
    offs = np.cumsum([0] + sizes)
    n_x = int(offs[-1])
    rows, rhs, eq_sides = [], [], []
    for eq in problem.equalities:
        m = np.asarray(eq.rhs).shape[0]
        block_rows = np.zeros((m * m, n_x))
        for k, b in enumerate(problem.blocks):
            if b.name not in eq.terms:
                continue
            mats = coords_herm(bases[k], b.side)
            block_rows[:, offs[k]:offs[k + 1]] = herm_coords(eq.terms[b.name].apply(mats)).T
        rows.append(block_rows)
        rhs.append(herm_coords(np.asarray(eq.rhs, dtype=complex)))
        eq_sides.append(m)
    E = np.vstack(rows) if rows else np.zeros((0, n_x))
    f = np.concatenate(rhs) if rhs else np.zeros(0)
    c = np.zeros(n_x)
    for k, b in enumerate(problem.blocks):
        if b.name in problem.objective:
            c[offs[k]:offs[k + 1]] = bases[k] @ herm_coords(np.asarray(problem.objective[b.name], dtype=complex))
    return ExpandedProblem([b.name for b in problem.blocks], [b.side for b in problem.blocks],
                           [b.cone for b in problem.blocks], bases, E, f, c, eq_sides, problem.name)


# ---------------------------------------------------------------------------
# text dump of the expanded problem

def dump_problem(problem: SdpProblem | ExpandedProblem, path) -> None:
    ex = problem if isinstance(problem, ExpandedProblem) else expand(problem)

    def write_matrix(fh, label, M):
        M = np.atleast_2d(M)
        fh.write(f"{label} {M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    with open(path, "w") as fh:
        fh.write("causalsep-sdp 1\n")
        fh.write(f"name {ex.name}\n")
        fh.write(f"blocks {len(ex.names)}\n")
        for name, side, cone, B in zip(ex.names, ex.sides, ex.cones, ex.bases):
            fh.write(f"block {name} {side} {cone}\n")
            write_matrix(fh, "basis", B)
        fh.write("eqsides " + " ".join(str(s) for s in ex.eq_sides) + "\n")
        write_matrix(fh, "E", ex.E if ex.E.size else np.zeros((0, len(ex.c))))
        write_matrix(fh, "f", ex.f[None, :])
        write_matrix(fh, "c", ex.c[None, :])


def load_problem(path) -> ExpandedProblem:
    with open(path) as fh:
        lines = iter(fh.read().splitlines())

    def read_matrix(expect):
        label, r, c = next(lines).split()
        if label != expect:
            raise ValueError(f"expected section {expect!r}, found {label!r}")
        r, c = int(r), int(c)
        data = [np.array(next(lines).split(), dtype=float) for _ in range(r)]
        return np.array(data).reshape(r, c)

    header = next(lines)
    if not header.startswith("causalsep-sdp"):
        raise ValueError("not a problem dump")
    name = next(lines).split(" ", 1)[1]
    nb = int(next(lines).split()[1])
    names, sides, cones, bases = [], [], [], []
    for _ in range(nb):
        _, bname, side, cone = next(lines).split()
        names.append(bname)
        sides.append(int(side))
        cones.append(cone)
        bases.append(read_matrix("basis"))
    eq_sides = [int(s) for s in next(lines).split()[1:]]
    E = read_matrix("E")
    f = read_matrix("f").reshape(-1)
    c = read_matrix("c").reshape(-1)
    if E.shape[0] == 0:
        E = np.zeros((0, len(c)))
    return ExpandedProblem(names, sides, cones, bases, E, f, c, eq_sides, name)


# ---------------------------------------------------------------------------
# homogeneous self-dual interior point method for  min c'u  s.t.  h - G u in K

class _Cone:
    """Product of R^l_+ and real symmetric PSD cones of sides ``sizes``."""

    def __init__(self, l: int, sizes: Sequence[int]):
        self.l = l
        self.sizes = list(sizes)
        self.degree = l + sum(self.sizes)

    def unit(self):
        return np.ones(self.l), [np.eye(n) for n in self.sizes]

    @staticmethod
    def dot(a, b) -> float:
        return float(a[0] @ b[0] + sum(np.vdot(x, y) for x, y in zip(a[1], b[1])))

    @staticmethod
    def add(a, b, alpha=1.0):
        return a[0] + alpha * b[0], [x + alpha * y for x, y in zip(a[1], b[1])]

    @staticmethod
    def scale(a, alpha):
        return alpha * a[0], [alpha * x for x in a[1]]


@dataclass
class _Data:
    c: np.ndarray
    Gl: np.ndarray             # (l, n)
    hl: np.ndarray
    Gs: list[np.ndarray]       # each (n, N, N)
    hs: list[np.ndarray]

    def G(self, u):
        return self.Gl @ u, [np.tensordot(u, g, axes=1) for g in self.Gs]

    def GT(self, z):
        out = self.Gl.T @ z[0]
        for g, Z in zip(self.Gs, z[1]):
            out = out + np.tensordot(g, Z, axes=([1, 2], [0, 1]))
        return out

    @property
    def h(self):
        return self.hl, self.hs


_SVEC_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _svec(M: np.ndarray) -> np.ndarray:
    """Symmetric vectorization (isometric) of the trailing two axes."""
    n = M.shape[-1]
    if n not in _SVEC_CACHE:
        iu, ju = np.triu_indices(n)
        _SVEC_CACHE[n] = (iu * n + ju, np.where(iu == ju, 1.0, np.sqrt(2.0)))
    flat, wts = _SVEC_CACHE[n]
    return np.take(M.reshape(M.shape[:-2] + (n * n,)), flat, axis=-1) * wts


class _Scaling:
    """Nesterov-Todd scaling point for the current (s, z)."""

    def __init__(self, s, z):
        self.w = np.sqrt(s[0] / z[0])
        self.lam_l = np.sqrt(s[0] * z[0])
        self.R, self.Rinv, self.lam = [], [], []
        for S, Z in zip(s[1], z[1]):
            Ls = np.linalg.cholesky(S)
            Lz = np.linalg.cholesky(Z)
            U, sv, Vt = np.linalg.svd(Lz.T @ Ls)
            isq = 1.0 / np.sqrt(sv)
            R = (Ls @ Vt.T) * isq
            Rinv = (np.sqrt(sv)[:, None] * Vt) @ sla.solve_triangular(Ls, np.eye(len(sv)), lower=True)
            self.R.append(R)
            self.Rinv.append(Rinv)
            self.lam.append(sv)

    # W^{-1} applied to a cone vector (inverse of  dz -> W dz W)
    def winv(self, v):
        return v[0] / self.w ** 2, [Ri.T @ (Ri @ V @ Ri.T) @ Ri for Ri, V in zip(self.Rinv, v[1])]

    def wapply(self, v):
        return v[0] * self.w ** 2, [R @ (R.T @ V @ R) @ R.T for R, V in zip(self.R, v[1])]

    def scaled_s(self, v):
        return v[0] / self.w, [Ri @ V @ Ri.T for Ri, V in zip(self.Rinv, v[1])]

    def scaled_z(self, v):
        return v[0] * self.w, [R.T @ V @ R for R, V in zip(self.R, v[1])]

    def lam_sq(self):
        return self.lam_l ** 2, [np.diag(l ** 2) for l in self.lam]

    def ds_from(self, rc):
        """Solve lam o (ds~ + dz~) = rc; return ds = W^{T} part mapped back."""
        dl = self.w * rc[0] / self.lam_l
        blocks = []
        for R, lam, M in zip(self.R, self.lam, rc[1]):
            D = M * 2.0 / (lam[:, None] + lam[None, :])
            blocks.append(R @ D @ R.T)
        return dl, blocks


def _max_step(lam_l, lam, ds_tilde, dz_tilde) -> float:
    """Largest alpha with lam + alpha*d in the cone for both scaled directions."""
    amax = np.inf
    for d in (ds_tilde, dz_tilde):
        if len(lam_l):
            ratio = d[0] / lam_l
            mn = ratio.min()
            if mn < 0:
                amax = min(amax, -1.0 / mn)
        for l, D in zip(lam, d[1]):
            isq = 1.0 / np.sqrt(l)
            M = isq[:, None] * D * isq[None, :]
            mn = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
            if mn < 0:
                amax = min(amax, -1.0 / mn)
    return amax


def _circ(a, b):
    """Jordan product (AB + BA)/2 in the scaled space."""
    return a[0] * b[0], [0.5 * (A @ B + B @ A) for A, B in zip(a[1], b[1])]


@dataclass
class _IpmResult:
    status: str
    u: np.ndarray
    s: tuple
    z: tuple
    iterations: int
    pres: float
    dres: float
    gap: float
    pcost: float
    dcost: float
    history: list


def _hsd_solve(data: _Data, cone: _Cone, tol: float, max_iter: int, step: float = 0.99,
               refine: int = 2) -> _IpmResult:
    n = data.c.size
    c, h = data.c, data.h
    nrm_c = max(1.0, float(np.linalg.norm(c)))
    nrm_h = max(1.0, np.sqrt(_Cone.dot(h, h)))
    u = np.zeros(n)
    s, z = cone.unit(), cone.unit()
    tau, kappa = 1.0, 1.0
    nu = cone.degree
    best = None
    history = []
    status = "max_iter"

    for it in range(max_iter + 1):
        Gu = data.G(u)
        rx = data.GT(z) + c * tau
        rz = _Cone.add(_Cone.add(s, Gu), h, -tau)
        cx, hz = float(c @ u), _Cone.dot(h, z)
        rt = kappa + cx + hz
        sz = _Cone.dot(s, z)
        mu = (sz + tau * kappa) / (nu + 1)
        pres = np.sqrt(_Cone.dot(rz, rz)) / tau / nrm_h
        dres = float(np.linalg.norm(rx)) / tau / nrm_c
        pcost, dcost = cx / tau, -hz / tau
        gap = abs(pcost - dcost) / (1.0 + abs(pcost) + abs(dcost))
        # complementarity per block, normalized like the gap
        comp = 0.0
        if cone.l:
            comp = float(np.max(s[0] * z[0])) / tau ** 2
        for S, Z, N in zip(s[1], z[1], cone.sizes):
            comp = max(comp, float(np.vdot(S, Z)) / N / tau ** 2)
        comp /= 1.0 + abs(pcost) + abs(dcost)
        history.append((it, pcost, dcost, pres, dres, gap, tau, kappa, mu, comp))
        merit = max(pres, dres, gap)
        if best is None or merit < best[0]:
            best = (merit, u.copy(), s, z, tau, it, pres, dres, gap, pcost, dcost)
        if pres <= tol and dres <= tol and gap <= tol and comp <= tol:
            status = "optimal"
            break
        if hz < 0:
            pinf = float(np.linalg.norm(data.GT(z))) / (-hz) / nrm_c
            if pinf <= tol:
                status = "primal_infeasible"
                break
        if cx < 0:
            Gus = _Cone.add(Gu, s)
            dinf = np.sqrt(_Cone.dot(Gus, Gus)) / (-cx) / nrm_h
            if dinf <= tol:
                status = "dual_infeasible"
                break
        if it == max_iter:
            break

        try:
            sc = _Scaling(s, z)
        except np.linalg.LinAlgError:
            log.warning("scaling lost positive definiteness at iteration %d", it)
            break
        # Schur complement H = G' W^{-1} G
        H = (data.Gl.T / sc.w ** 2) @ data.Gl
        for g, Ri in zip(data.Gs, sc.Rinv):
            F = _svec(np.matmul(np.matmul(Ri, g), Ri.T))
            H += F @ F.T
        H = 0.5 * (H + H.T)
        try:
            chol = sla.cho_factor(H, lower=True, check_finite=False)

            def hsolve(b):
                return sla.cho_solve(chol, b, check_finite=False)
        except np.linalg.LinAlgError:
            reg = 1e-14 * max(1.0, float(np.max(np.diag(H))))
            w_eig, V_eig = np.linalg.eigh(H)
            w_eig = np.maximum(w_eig, reg)

            def hsolve(b):
                return V_eig @ ((V_eig.T @ b) / w_eig)

        winv_h = sc.winv(h)
        g_h = data.GT(winv_h)
        b_vec = c + g_h
        # denom = -kappa/tau - c'H^{-1}c - |h|^2 projected off range(G) in the W metric;
        # assembled from nonnegative pieces to avoid cancellation near convergence
        hc = hsolve(c)
        t_vec = hsolve(g_h)
        p_vec = hc - t_vec
        r_h = _Cone.add(h, data.G(t_vec), -1.0)
        denom = -kappa / tau - max(float(c @ hc), 0.0) - max(_Cone.dot(r_h, sc.winv(r_h)), 0.0)
        if not np.isfinite(denom) or denom >= 0.0 or not np.all(np.isfinite(p_vec)):
            log.warning("Newton system became singular at iteration %d", it)
            break

        def reduced_solve(r1, r2, r3, ds, r5):
            q = _Cone.add(ds, r2, -1.0)
            winv_q = sc.winv(q)
            f1 = r1 - data.GT(winv_q)
            f2 = r3 - r5 / tau - _Cone.dot(h, winv_q)
            v = hsolve(f1)
            dtau = (f2 - float(b_vec @ v)) / denom
            du = v - p_vec * dtau
            rhs = _Cone.add(_Cone.add(data.G(du), h, -dtau), q)
            dz = sc.winv(rhs)
            dsv = _Cone.add(ds, sc.wapply(dz), -1.0)
            dkappa = (r5 - kappa * dtau) / tau
            return du, dsv, dz, dtau, dkappa

        def newton(r1, r2, r3, rc, r5):
            ds = sc.ds_from(rc)
            sol = reduced_solve(r1, r2, r3, ds, r5)
            zero = (np.zeros(cone.l), [np.zeros((k, k)) for k in cone.sizes])
            for _ in range(refine):
                du, dsv, dz, dtau, dkappa = sol
                e1 = r1 - data.GT(dz) - c * dtau
                e2 = _Cone.add(_Cone.add(_Cone.add(r2, dsv, -1.0), data.G(du), -1.0), h, dtau)
                e3 = r3 - dkappa - float(c @ du) - _Cone.dot(h, dz)
                corr = reduced_solve(e1, e2, e3, zero, 0.0)
                sol = (du + corr[0], _Cone.add(dsv, corr[1]), _Cone.add(dz, corr[2]),
                       dtau + corr[3], dkappa + corr[4])
            return sol

        def step_length(dsv, dz, dtau, dkappa):
            amax = _max_step(sc.lam_l, sc.lam, sc.scaled_s(dsv), sc.scaled_z(dz))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkappa < 0:
                amax = min(amax, -kappa / dkappa)
            return amax

        lam2 = sc.lam_sq()
        # predictor
        aff = newton(-rx, _Cone.scale(rz, -1.0), -rt, _Cone.scale(lam2, -1.0), -tau * kappa)
        a_aff = min(1.0, step_length(*aff[1:]))
        sigma = min(1.0, max(0.0, 1.0 - a_aff)) ** 3
        # corrector
        eta = 1.0 - sigma
        cross = _circ(sc.scaled_s(aff[1]), sc.scaled_z(aff[2]))
        unit = cone.unit()
        rc = _Cone.add(_Cone.add(_Cone.scale(unit, sigma * mu), lam2, -1.0), cross, -1.0)
        r5 = sigma * mu - tau * kappa - aff[3] * aff[4]
        du, dsv, dz, dtau, dkappa = newton(-eta * rx, _Cone.scale(rz, -eta), -eta * rt, rc, r5)
        alpha = min(1.0, step * step_length(dsv, dz, dtau, dkappa))
        if alpha < 1e-12:
            log.warning("step length collapsed at iteration %d", it)
            break
        u = u + alpha * du
        s = _Cone.add(s, dsv, alpha)
        z = _Cone.add(z, dz, alpha)
        s = (s[0], [0.5 * (S + S.T) for S in s[1]])
        z = (z[0], [0.5 * (Z + Z.T) for Z in z[1]])
        tau += alpha * dtau
        kappa += alpha * dkappa

    if status == "optimal" or status.endswith("infeasible"):
        return _IpmResult(status, u / tau if status == "optimal" else u,
                          _Cone.scale(s, 1.0 / tau) if status == "optimal" else s,
                          _Cone.scale(z, 1.0 / tau) if status == "optimal" else z,
                          it, pres, dres, gap, pcost, dcost, history)
    _, bu, bs, bz, btau, bit, bp, bd, bg, bpc, bdc = best
    return _IpmResult("max_iter", bu / btau, _Cone.scale(bs, 1.0 / btau), _Cone.scale(bz, 1.0 / btau),
                      it, bp, bd, bg, bpc, bdc, history)


# ---------------------------------------------------------------------------
# driver

@dataclass
class _Elimination:
    """x = x0 + N u parameterizes E x = f; E = U R' Q' with U, Q orthonormal."""
    x0: np.ndarray
    N: np.ndarray
    residual: float
    rank: int
    U: np.ndarray | None = None
    Q: np.ndarray | None = None
    R: np.ndarray | None = None

    def solve_transpose(self, g: np.ndarray) -> np.ndarray:
        """Minimum-norm y with E' y = g (least squares if g is off the range)."""
        v = sla.solve_triangular(self.R, self.Q.T @ g, lower=False)
        return self.U @ v


def _eliminate(E: np.ndarray, f: np.ndarray, n_x: int) -> _Elimination:
    """Particular solution and orthonormal null-space basis of E x = f.

    Row space from eigh(E E'), then a Householder QR of the reduced rows.
    """
    if E.shape[0] == 0:
        return _Elimination(np.zeros(n_x), np.eye(n_x), 0.0, 0)
    w, V = np.linalg.eigh(E @ E.T)
    keep = w > 1e-12 * max(w[-1], 1e-300)
    U = np.ascontiguousarray(V[:, keep][:, ::-1])   # strided views fall off BLAS
    r = U.shape[1]
    if r == 0:
        resid = float(np.linalg.norm(f)) / (1.0 + float(np.linalg.norm(f)))
        return _Elimination(np.zeros(n_x), np.eye(n_x), resid, 0, U, np.zeros((n_x, 0)), np.zeros((0, 0)))
    Er = U.T @ E
    Q, R = sla.qr(Er.T, mode="full")
    w_ = sla.solve_triangular(R[:r, :r].T, U.T @ f, lower=True)
    x0 = Q[:, :r] @ w_
    resid = float(np.linalg.norm(E @ x0 - f)) / (1.0 + float(np.linalg.norm(f)))
    return _Elimination(x0, Q[:, r:], resid, r, U, Q[:, :r], R[:r, :r])


def solve(problem: SdpProblem | ExpandedProblem, tol: float = 1e-8, max_iter: int = 200) -> SdpSolution:
    """Solve an SdpProblem (or its expanded form) to relative accuracy ``tol``."""
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError(f"tolerance {tol} outside [1e-12, 1e-4]")
    ex = problem if isinstance(problem, ExpandedProblem) else expand(problem)
    offs = ex.offsets
    n_x = int(offs[-1])
    elim = _eliminate(ex.E, ex.f, n_x)
    x0, N, resid, rank = elim.x0, elim.N, elim.residual, elim.rank
    info = {"n_coordinates": n_x, "equality_rank": rank, "affine_residual": resid}
    if resid > max(tol, 1e-9):
        log.info("%s: affine constraints inconsistent (residual %.2e)", ex.name, resid)
        return _package(ex, "primal_infeasible", x0, None, None, np.nan, np.nan, resid, np.nan,
                        np.nan, 0, info)

    # inequality form
    Gl_rows, hl, Gs, hs, cone_blocks = [], [], [], [], []
    for k, (side, cone) in enumerate(zip(ex.sides, ex.cones)):
        if cone != "psd":
            continue
        T = ex.bases[k]
        const = T.T @ x0[offs[k]:offs[k + 1]]
        lin = T.T @ N[offs[k]:offs[k + 1], :]          # (side^2, n_u)
        if side == 1:
            Gl_rows.append(-lin[0])
            hl.append(const[0])
            cone_blocks.append(("l", k, len(hl) - 1))
        else:
            Gs.append(-embed(coords_herm(lin.T, side)))
            hs.append(embed(coords_herm(const, side)))
            cone_blocks.append(("s", k, len(Gs) - 1))
    n_u = N.shape[1]
    Gl = np.array(Gl_rows).reshape(len(hl), n_u)
    c_u = N.T @ ex.c
    const_obj = float(ex.c @ x0)

    # drop directions invisible to every cone
    K = Gl.T @ Gl
    for g in Gs:
        F = _svec(g)
        K += F @ F.T
    scale_k = max(1.0, float(np.max(np.diag(K)))) if n_u else 1.0
    Qk = None
    if n_u:
        try:
            Lk = np.linalg.cholesky(K)
            singular = float(np.min(np.diag(Lk))) ** 2 < 1e-10 * scale_k
        except np.linalg.LinAlgError:
            singular = True
        if singular:
            w, V = np.linalg.eigh(K)
            keep = w > 1e-10 * scale_k
            free = V[:, ~keep]
            if free.size and np.linalg.norm(free.T @ c_u) > tol * max(1.0, np.linalg.norm(c_u)):
                log.info("%s: objective unbounded along a cone-free direction", ex.name)
                return _package(ex, "dual_infeasible", x0, None, None, -np.inf, np.nan, 0.0, np.nan,
                                np.nan, 0, info)
            Qk = V[:, keep]
            Gl = Gl @ Qk
            Gs = [np.tensordot(Qk.T, g, axes=1) for g in Gs]
            c_u = Qk.T @ c_u
            info["cone_free_directions"] = int((~keep).sum())
        info["cone_condition"] = float(scale_k / max(np.min(np.diag(K)), 1e-300))
    info["n_free_variables"] = int(c_u.size)
    cone = _Cone(len(hl), [g.shape[1] for g in Gs])
    data = _Data(c_u, Gl, np.array(hl, dtype=float), Gs, hs)
    if cone.degree == 0:
        # no cone constraints: the reduced objective must vanish
        status = "optimal" if np.linalg.norm(c_u) <= tol else "dual_infeasible"
        return _package(ex, status, x0, None, None, const_obj, const_obj, 0.0, 0.0, 0.0, 0, info)

    res = _hsd_solve(data, cone, tol, max_iter)
    info["history"] = res.history
    u = res.u if Qk is None else Qk @ res.u
    x = x0 + N @ u
    if res.status != "optimal":
        log.info("%s: solver status %s after %d iterations", ex.name, res.status, res.iterations)
    return _package(ex, res.status, x, (res.z, cone_blocks), elim,
                    res.pcost + const_obj, res.dcost + const_obj, res.pres, res.dres, res.gap,
                    res.iterations, info)


def _package(ex: ExpandedProblem, status, x, zinfo, elim, pobj, dobj, pres, dres, gap, iters, info):
    offs = ex.offsets
    primal = {name: ex.block_matrix(x, k) for k, name in enumerate(ex.names)}
    dual = {name: np.zeros((side, side), dtype=complex) for name, side in zip(ex.names, ex.sides)}
    multipliers: list[np.ndarray] = []
    if zinfo is not None:
        z, cone_blocks = zinfo
        zc = np.zeros(len(ex.c))
        for kind, k, j in cone_blocks:
            if kind == "l":
                Zb = np.array([[z[0][j]]], dtype=complex)
            else:
                Zb = 2.0 * unembed(z[1][j])
            dual[ex.names[k]] = 0.5 * (Zb + Zb.conj().T)
            zc[offs[k]:offs[k + 1]] = ex.bases[k] @ herm_coords(dual[ex.names[k]])
        if ex.E.shape[0]:
            y = elim.solve_transpose(ex.c - zc)
            pos = 0
            for m in ex.eq_sides:
                multipliers.append(coords_herm(y[pos:pos + m * m], m))
                pos += m * m
            dobj_hl = float(ex.f @ y)
            info["dual_objective_inner"] = dobj
            dobj = dobj_hl
            if status == "optimal":
                gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    pobj_hl = float(ex.c @ x)
    if np.isfinite(pobj):
        pobj = pobj_hl
    return SdpSolution(status, primal, dual, multipliers, float(pobj), float(dobj), float(pres),
                       float(dres), float(gap), iters, info)


# ---------------------------------------------------------------------------
# independent verification

@dataclass
class VerificationReport:
    equality_residuals: list[float]
    subspace_residuals: dict[str, float]
    primal_min_eig: dict[str, float]
    dual_residuals: dict[str, float]
    dual_min_eig: dict[str, float]
    complementarity: dict[str, float]
    primal_objective: float
    dual_objective: float
    gap: float

    def worst(self) -> dict[str, float]:
        def mx(vals):
            vals = list(vals)
            return max(vals) if vals else 0.0
        return {
            "primal_equality": mx(self.equality_residuals),
            "primal_subspace": mx(self.subspace_residuals.values()),
            "primal_cone": mx(-v for v in self.primal_min_eig.values()),
            "dual_stationarity": mx(self.dual_residuals.values()),
            "dual_cone": mx(-v for v in self.dual_min_eig.values()),
            "complementarity": mx(abs(v) for v in self.complementarity.values()),
            "gap": self.gap,
        }

    def ok(self, tol: float) -> bool:
        return all(v <= tol for v in self.worst().values())


def verify_solution(problem: SdpProblem, solution: SdpSolution, tol: float = 1e-8) -> VerificationReport:
    """Recompute all optimality residuals from the problem's own maps."""
    eq_res = []
    for eq in problem.equalities:
        acc = -np.asarray(eq.rhs, dtype=complex)
        for b, A in eq.terms.items():
            acc = acc + A.apply(solution.primal[b])
        scale = 1.0 + float(np.max(np.abs(eq.rhs), initial=0.0))
        eq_res.append(float(np.max(np.abs(acc), initial=0.0)) / scale)
    sub_res, pmin, dres, dmin, comp = {}, {}, {}, {}, {}
    for b in problem.blocks:
        X = solution.primal[b.name]
        proj = problem.subspaces.get(b.name)
        P = (lambda M: M) if proj is None else proj.project
        if proj is not None:
            sub_res[b.name] = float(np.max(np.abs(X - P(X)), initial=0.0))
        Z = solution.dual[b.name] if b.cone == "psd" else np.zeros_like(X)
        R = np.asarray(problem.objective.get(b.name, np.zeros_like(X)), dtype=complex) - Z
        for eq, Y in zip(problem.equalities, solution.multipliers):
            if b.name in eq.terms:
                R = R - eq.terms[b.name].adjoint(Y)
        C = problem.objective.get(b.name)
        scale = 1.0 + (float(np.max(np.abs(C))) if C is not None else 0.0)
        dres[b.name] = float(np.max(np.abs(P(R)), initial=0.0)) / scale
        if b.cone == "psd":
            pmin[b.name] = float(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0])
            dmin[b.name] = float(np.linalg.eigvalsh(0.5 * (Z + Z.conj().T))[0])
            comp[b.name] = float(np.real(np.vdot(Z, X))) / b.side
    pobj = sum(float(np.real(np.vdot(C, solution.primal[b]))) for b, C in problem.objective.items())
    dobj = sum(float(np.real(np.vdot(eq.rhs, Y))) for eq, Y in zip(problem.equalities, solution.multipliers))
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return VerificationReport(eq_res, sub_res, pmin, dres, dmin, comp, pobj, dobj, gap)
