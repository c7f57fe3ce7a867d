"""Acceptance checks, one test per criterion.  Each prints PASS/FAIL lines (run with -s to see them)."""
from math import sqrt

import numpy as np
import pytest

from conftest import report, timed
from causalsep.conic_solver import solve, verify_solution
from causalsep.process_space import (
    OCB_BOUNDARY,
    ProcessMatrix,
    bipartite_layout,
    causal_order_project,
    is_causally_ordered,
    is_valid_process,
    lv_project,
    named_process,
    NAMED_PROCESSES,
    ocb_decomposition,
    random_comb,
    random_ordered_process,
    random_valid_process,
    switch_layout,
    switch_process,
    trace_out_charlie,
    w_ocb,
    w_ocb_noisy,
    white_noise,
)
from causalsep.switch_tasks import (
    check_causal_theorem4,
    finite_weights_problem,
    finite_witness,
    ocb_correlations,
    ocb_game_operator_value,
    ocb_game_value,
    p_succ_sep_problem,
    random_instrument,
    random_povm,
    switch_correlations,
)
from causalsep.tensor_ops import (
    LabeledOperator,
    cj_apply,
    cj_from_kraus,
    cj_to_superoperator,
    haar_unitary,
    superoperator_to_cj,
)
from causalsep.witness_engine import (
    CausalWitness,
    generalized_robustness,
    generalized_robustness_problem,
    monotonicity_processes,
    random_robustness,
    random_robustness_problem,
    random_robustness_witness_problem,
    rr_monotonicity_counterexample,
    s_ocb,
    separable_decomposition,
    SeparableDecomposition,
    verify_witness,
    verify_witness_problem,
    witness_expectation,
)

SDP_TOL = 1e-8
R_OCB = sqrt(2) - 1
LAY = bipartite_layout()


def check_all(results):
    failed = [name for name, ok in results if not ok]
    assert not failed, f"failed: {failed}"


# 1 -------------------------------------------------------------------------

def test_criterion_1_random_robustness_ocb():
    res, elapsed = timed(random_robustness, w_ocb())
    value = witness_expectation(res.witness_op, w_ocb())
    verified = verify_witness(res.witness_op, LAY)
    check_all([
        ("R_r", report("1 R_r(W_OCB) = sqrt2-1", abs(res.value - R_OCB) <= 1e-6, f"{res.value:.12f}")),
        ("time", report("1 runtime < 10 s", elapsed < 10, f"{elapsed:.2f} s")),
        ("tr", report("1 tr(S W_OCB) = 1-sqrt2", abs(value - (1 - sqrt(2))) <= 1e-6, f"{value:.12f}")),
        ("verify", report("1 witness passes verify_witness", isinstance(verified, CausalWitness),
                          f"margin {verified.margin:.2e}")),
    ])


# 2 -------------------------------------------------------------------------

@pytest.mark.parametrize("lam", [R_OCB, 0.6, 1.0], ids=["boundary", "0.6", "1.0"])
def test_criterion_2_boundary_separability(lam):
    W = w_ocb_noisy(lam)
    dec = separable_decomposition(W)
    results = []
    rr = dec.robustness.value
    results.append(("R_r", report(f"2 R_r(W_OCB({lam:.6f})) = 0", abs(rr) <= 1e-6, f"{rr:.2e}")))
    is_dec = isinstance(dec, SeparableDecomposition)
    results.append(("dec", report(f"2 decomposition returned at {lam:.6f}", is_dec)))
    if is_dec:
        total = sum(c.data for c in dec.components.values())
        err = float(np.max(np.abs(total - W.data)))
        results.append(("sum", report("2 components sum to input", err <= 1e-7, f"{err:.2e}")))
        for tag, order in (("order:A<B", ("A", "B")), ("order:B<A", ("B", "A"))):
            C = dec.components[tag]
            # components carry their weight, so test the subspace directly rather than validity
            off = float(np.max(np.abs(causal_order_project(C, order, LAY).data - C.data)))
            lo = float(np.linalg.eigvalsh(C.data)[0])
            results.append((tag, report(f"2 {tag} ordered and PSD", off <= 1e-7 and lo >= -1e-7,
                                        f"off-subspace {off:.1e}, min eig {lo:.2e}")))
    check_all(results)


def test_criterion_2_analytic_boundary_components():
    w_ab, w_ba = ocb_decomposition(R_OCB)
    target = w_ocb_noisy(R_OCB).data
    err = float(np.max(np.abs(0.5 * (w_ab.data + w_ba.data) - target)))
    lo = min(np.linalg.eigvalsh(w_ab.data)[0], np.linalg.eigvalsh(w_ba.data)[0])
    ordered = is_causally_ordered(w_ab, ("A", "B"), LAY) and is_causally_ordered(w_ba, ("B", "A"), LAY)
    traces = (np.trace(w_ab.data).real, np.trace(w_ba.data).real)
    check_all([
        ("sum", report("2 analytic pair averages to W_OCB(sqrt2-1)", err <= 1e-12, f"{err:.2e}")),
        ("psd", report("2 analytic pair PSD", lo >= -1e-12, f"min eig {lo:.2e}")),
        ("ordered", report("2 analytic pair causally ordered", ordered)),
        ("trace", report("2 analytic pair normalized", max(abs(t - 4) for t in traces) < 1e-12)),
    ])


# 3 -------------------------------------------------------------------------

def test_criterion_3_switch_generalized_robustness(switch_rg_timed, w_switch):
    res, elapsed = switch_rg_timed
    tr_omega = np.trace(res.decomposition["Omega"].data).real / w_switch.layout.d_O
    relation = abs(tr_omega + witness_expectation(res.witness_op, w_switch))
    check_all([
        ("R_g", report("3 R_g(W_switch) = 0.5454", abs(res.value - 0.5454) <= 1e-3, f"{res.value:.8f}")),
        ("time", report("3 runtime < 60 s", elapsed < 60, f"{elapsed:.1f} s")),
        ("gap", report("3 duality gap <= 1e-7", res.gap <= 1e-7, f"{res.gap:.2e}")),
        ("relation", report("3 tr(Omega)/d_O + tr(S W) = 0", relation <= 10 * SDP_TOL, f"{relation:.2e}")),
    ])


# 4 -------------------------------------------------------------------------

def test_criterion_4_chiribella_mc(mc_game, w_switch):
    G = mc_game
    value = G.value(w_switch)
    noise = G.noise_tolerance
    check_all([
        ("n", report("4 n = 10^4 seeded samples", G.n_samples == 10_000 and G.seed is not None)),
        ("win", report("4 tr(G W_switch) = 1", abs(value - 1) <= 1e-9, f"{value:.12f}")),
        ("p", report("4 p_succ_sep = 0.9288", abs(G.p_sep - 0.9288) <= 5e-3, f"{G.p_sep:.6f}")),
        ("noise", report("4 noise tolerance = 1/p - 1", abs(noise - (1 / G.p_sep - 1)) <= 1e-12
                         and abs(noise - 0.0766) <= 6e-3, f"{noise:.6f}")),
    ])


# 5 -------------------------------------------------------------------------

def test_criterion_5_finite_witness(finite_opt, w_switch):
    weights, p, _ = finite_opt
    G = finite_witness(weights)
    G.p_sep = p
    noise = G.noise_tolerance
    check_all([
        ("p", report("5 finite p_sep = 0.8690", abs(p - 0.8690) <= 1e-3, f"{p:.6f}")),
        ("noise", report("5 finite noise tolerance = 0.1507", abs(noise - 0.1507) <= 2e-3, f"{noise:.6f}")),
        ("win", report("5 finite game won by the switch", abs(G.value(w_switch) - 1) <= 1e-9)),
    ])


# 6 -------------------------------------------------------------------------

def test_criterion_6_random_robustness_not_monotone():
    rep = rr_monotonicity_counterexample()
    check_all([
        ("rr1", report("6 R_r(W1) = sqrt2-1", abs(rep.rr_w1 - R_OCB) <= 1e-5, f"{rep.rr_w1:.9f}")),
        ("rr2", report("6 R_r($(W1)) = 2(sqrt2-1)", abs(rep.rr_mapped - 2 * R_OCB) <= 1e-5,
                       f"{rep.rr_mapped:.9f}")),
        ("rg", report("6 R_g($(W1)) <= R_g(W1)", rep.rg_mapped <= rep.rg_w1 + 1e-6,
                      f"{rep.rg_mapped:.9f} vs {rep.rg_w1:.9f}")),
    ])


# 7 -------------------------------------------------------------------------

def test_criterion_7_ocb_game():
    W = w_ocb()
    born = ocb_game_value(W)
    direct = ocb_game_operator_value(W)
    expected = (2 + sqrt(2)) / 4
    rng = np.random.default_rng(7)
    worst = -np.inf
    for _ in range(100):
        q = rng.uniform()
        W1 = random_ordered_process(LAY, ("A", "B"), rng)
        W2 = random_ordered_process(LAY, ("B", "A"), rng)
        worst = max(worst, ocb_game_value(ProcessMatrix(q * W1.op + (1 - q) * W2.op, LAY)))
    check_all([
        ("born", report("7 ocb_game_value(W_OCB) = (2+sqrt2)/4", abs(born - expected) <= 1e-10, f"{born:.14f}")),
        ("direct", report("7 direct contraction agrees", abs(direct - expected) <= 1e-10, f"{direct:.14f}")),
        ("bound", report("7 100 separable processes <= 3/4", worst <= 0.75 + 1e-6, f"max {worst:.9f}")),
    ])


# 8 -------------------------------------------------------------------------

def test_criterion_8_correlation_pipeline():
    rng = np.random.default_rng(8)
    results = []
    for k in range(3):
        A = {x: random_instrument(("A_I", "A_O"), 2, rng) for x in range(2)}
        B = {y: random_instrument(("B_I", "B_O"), 2, rng) for y in range(2)}
        C = {z: random_povm(4, 2, rng) for z in range(2)}
        v = check_causal_theorem4(switch_correlations(A, B, C))
        results.append((f"z{k}", report(f"8 switch draw {k} z-independent", v.z_deviation <= 1e-12,
                                        f"{v.z_deviation:.1e}")))
        results.append((f"lp{k}", report(f"8 switch draw {k} passes the mixture LP", v.bipartite_mixture,
                                         f"residual {v.mixture_residual:.1e}")))
    ocb = check_causal_theorem4(ocb_correlations(w_ocb()))
    results.append(("ocb", report("8 OCB correlations fail the mixture LP", not ocb.bipartite_mixture,
                                  f"residual {ocb.mixture_residual:.3f}")))
    check_all(results)


# 9 -------------------------------------------------------------------------

def rand_herm(n, rng):
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return g + g.conj().T


def test_criterion_9_projector_properties():
    rng = np.random.default_rng(9)
    worst = {"idempotent": 0.0, "self-adjoint": 0.0, "commuting": 0.0}
    cases = [(LAY, [("A", "B"), ("B", "A")]), (switch_layout(True), [("A", "B", "C"), ("B", "A", "C")])]
    for layout, orders in cases:
        n = int(np.prod([s.dim for s in layout.systems]))
        projs = [lambda X, layout=layout: lv_project(X, layout).data]
        projs += [lambda X, o=o, layout=layout: causal_order_project(X, o, layout).data for o in orders]
        for _ in range(1000):
            X = LabeledOperator(layout.systems, rand_herm(n, rng), True)
            Y = LabeledOperator(layout.systems, rand_herm(n, rng), True)
            PX = [P(X) for P in projs]
            for P, px in zip(projs, PX):
                worst["idempotent"] = max(worst["idempotent"],
                                          np.max(np.abs(P(LabeledOperator(layout.systems, px)) - px)))
                lhs = np.vdot(Y.data, px)
                rhs = np.vdot(P(Y), X.data)
                worst["self-adjoint"] = max(worst["self-adjoint"], abs(lhs - rhs) / n)
            for i, P in enumerate(projs):
                for Q, qx in list(zip(projs, PX))[i + 1:]:
                    pq = P(LabeledOperator(layout.systems, qx))
                    qp = Q(LabeledOperator(layout.systems, PX[i]))
                    worst["commuting"] = max(worst["commuting"], np.max(np.abs(pq - qp)))
    check_all([(k, report(f"9 projectors {k} on 1000 operators per layout", v <= 1e-10, f"{v:.1e}"))
               for k, v in worst.items()])


def test_criterion_9_cj_roundtrips():
    rng = np.random.default_rng(91)
    worst = 0.0
    for d_in, d_out in [(2, 2), (2, 3), (3, 2), (4, 4)]:
        for _ in range(20):
            k = max(2, -(-d_in // d_out))
            V = haar_unitary(d_out * k, rng)[:, :d_in]
            kraus = [V[j * d_out:(j + 1) * d_out] for j in range(k)]
            M = cj_from_kraus(kraus)
            S = cj_to_superoperator(M.data, d_in, d_out)
            worst = max(worst, np.max(np.abs(superoperator_to_cj(S, d_in, d_out) - M.data)))
            rho = rand_herm(d_in, rng)
            rho = rho @ rho
            direct = sum(K @ rho @ K.conj().T for K in kraus)
            worst = max(worst, np.max(np.abs(cj_apply(M, rho) - direct)))
            via = (S @ rho.reshape(-1)).reshape(d_out, d_out)
            worst = max(worst, np.max(np.abs(via - direct)))
    check_all([("cj", report("9 CJ roundtrips", worst <= 1e-10, f"{worst:.1e}"))])


def test_criterion_9_constructors_valid():
    rng = np.random.default_rng(92)
    procs = {name: named_process(name) for name in NAMED_PROCESSES if "<" not in name}
    procs.update({
        "ocb-noisy": w_ocb_noisy(0.3),
        "ocb-boundary": w_ocb_noisy(OCB_BOUNDARY),
        "switch-psi": switch_process(np.array([0.6, 0.8j]), reduce_target=True),
        "switch-no-charlie": trace_out_charlie(switch_process()),
        "comb": random_comb(rng),
        "monotonicity-W1": monotonicity_processes()[0],
        "monotonicity-mapped": monotonicity_processes()[1],
    })
    for k in range(5):
        procs[f"random-{k}"] = random_valid_process(LAY, rng)
        procs[f"random-tri-{k}"] = random_valid_process(switch_layout(True), rng)
        procs[f"ordered-{k}"] = random_ordered_process(LAY, ("B", "A"), rng)
    results = []
    for name, W in procs.items():
        rep = is_valid_process(W, W.layout, 1e-9)
        results.append((name, rep.verdict))
    bad = [n for n, ok in results if not ok]
    report(f"9 constructor outputs valid ({len(results)} processes)", not bad, ", ".join(bad))
    check_all(results)


def test_criterion_9_solver_determinism():
    problem = generalized_robustness_problem(w_ocb_noisy(0.1))
    a, b = solve(problem, tol=SDP_TOL), solve(problem, tol=SDP_TOL)
    same = (a.iterations == b.iterations and a.primal_objective == b.primal_objective
            and all(np.array_equal(a.primal[k], b.primal[k]) for k in a.primal)
            and all(np.array_equal(a.dual[k], b.dual[k]) for k in a.dual)
            and all(np.array_equal(x, y) for x, y in zip(a.multipliers, b.multipliers)))
    check_all([("bitwise", report("9 solver bitwise deterministic", same))])


@pytest.fixture(scope="module")
def shipped_instances(switch_rg, mc_game, finite_opt):
    """(name, problem, solution, tol) for every SDP family the package solves."""
    out = []
    for name, build in [("random-robustness", random_robustness_problem),
                        ("generalized-robustness", generalized_robustness_problem),
                        ("random-robustness-witness", random_robustness_witness_problem)]:
        problem = build(w_ocb())
        out.append((name, problem, solve(problem, tol=SDP_TOL), SDP_TOL))
    out.append(("generalized-robustness-switch", switch_rg.problem, switch_rg.solution, SDP_TOL))
    problem = verify_witness_problem(s_ocb(), LAY)
    out.append(("witness-membership", problem, solve(problem, tol=1e-9), 1e-9))
    lay3 = switch_layout(True)
    problem = verify_witness_problem(LabeledOperator(lay3.systems, np.eye(32) / 4, True), lay3)
    out.append(("witness-membership-tripartite", problem, solve(problem, tol=1e-9), 1e-9))
    out.append(("game-causal-bound", p_succ_sep_problem(mc_game), mc_game.solution, SDP_TOL))
    out.append(("finite-weights", finite_weights_problem()[0], finite_opt[2], SDP_TOL))
    return out


def test_criterion_9_solver_matches_independent_verifier(shipped_instances):
    results = []
    for name, problem, sol, tol in shipped_instances:
        rep = verify_solution(problem, sol, tol)
        worst = rep.worst()
        ok = sol.optimal and rep.ok(10 * tol)
        agree = abs(rep.primal_objective - sol.primal_objective) <= 10 * tol * (1 + abs(sol.primal_objective))
        detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
        results.append((name, report(f"9 verifier agrees on {name}", ok and agree, detail)))
    check_all(results)


def test_criterion_9_duality_on_every_instance(shipped_instances):
    results = []
    for name, problem, sol, tol in shipped_instances:
        rel = abs(sol.primal_objective - sol.dual_objective)
        results.append((name, report(f"9 duality on {name}", rel <= 10 * tol, f"{rel:.1e}")))
    # the witness form of the relation on both robustness measures
    for fn in (random_robustness, generalized_robustness):
        for W in (w_ocb(), w_ocb_noisy(0.2), white_noise(LAY)):
            res = fn(W, certify=False)
            results.append((res.kind, report(f"9 {res.kind} primal = -tr(S W)",
                                             res.duality_residual <= 10 * SDP_TOL,
                                             f"{res.duality_residual:.1e}")))
    check_all(results)
