import json
from math import sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalsep.process_space import (
    InvalidProcessError,
    LocalOperation,
    OCB_BOUNDARY,
    PartyLayout,
    ProcessMatrix,
    bipartite_layout,
    causal_order_project,
    compose_local,
    is_causally_ordered,
    is_valid_process,
    lv_project,
    named_process,
    ocb_decomposition,
    process_from_json,
    process_to_json,
    random_comb,
    random_ordered_process,
    random_valid_process,
    switch_layout,
    switch_process,
    switch_vector,
    trace_out_charlie,
    w_ocb,
    w_ocb_noisy,
    white_noise,
)
from causalsep.tensor_ops import (
    LabeledOperator,
    align,
    cj_from_kraus,
    cj_to_superoperator,
    haar_unitary,
    pauli_string,
    permute_systems,
    superoperator_to_cj,
    tensor,
)

ORDERS = {
    "bi": [("A", "B"), ("B", "A")],
    "tri": [("A", "B", "C"), ("B", "A", "C")],
}


def rand_herm_op(layout, rng):
    n = int(np.prod([s.dim for s in layout.systems]))
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return LabeledOperator(layout.systems, g + g.conj().T, True)


def maxabs(a, b):
    return float(np.max(np.abs(a - b)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), which=st.sampled_from(["bi", "tri"]))
def test_projectors_idempotent_self_adjoint_commuting(seed, which):
    rng = np.random.default_rng(seed)
    layout = bipartite_layout() if which == "bi" else switch_layout(True)
    X, Y = rand_herm_op(layout, rng), rand_herm_op(layout, rng)
    projs = [lambda W: lv_project(W, layout)]
    projs += [lambda W, o=o: causal_order_project(W, o, layout) for o in ORDERS[which]]
    for P in projs:
        PX = P(X)
        assert maxabs(P(PX).data, PX.data) < 1e-10
        assert abs(np.trace(PX.data @ Y.data) - np.trace(X.data @ P(Y).data)) < 1e-8
    for P in projs:
        for Q in projs:
            assert maxabs(P(Q(X)).data, Q(P(X)).data) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ordered_projection_lands_in_valid_subspace(seed):
    rng = np.random.default_rng(seed)
    layout = bipartite_layout()
    X = lv_project(rand_herm_op(layout, rng), layout)
    for order in ORDERS["bi"]:
        Y = causal_order_project(X, order, layout)
        assert maxabs(lv_project(Y, layout).data, Y.data) < 1e-10


def test_known_fixed_points():
    W = w_ocb()
    assert maxabs(lv_project(W, W.layout).data, W.data) < 1e-12
    noise = white_noise(W.layout)
    assert maxabs(lv_project(noise, W.layout).data, noise.data) < 1e-15
    for order in ORDERS["bi"]:
        # W_OCB signals both ways
        assert np.max(np.abs(causal_order_project(W, order, W.layout).data - W.data)) > 0.1
        assert is_causally_ordered(noise, order, W.layout)


def test_non_signalling_product_is_fixed_by_every_order():
    rng = np.random.default_rng(2)
    layout = bipartite_layout()
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    # state on A_I B_I, outputs discarded
    W = LabeledOperator([("A_I", 2), ("B_I", 2)], rho)
    W = tensor(W, LabeledOperator([("A_O", 2), ("B_O", 2)], np.eye(4)))
    P = ProcessMatrix(align(LabeledOperator(layout.systems, np.eye(16)), W), layout)
    for order in ORDERS["bi"]:
        assert is_causally_ordered(P, order, layout)


def test_validity_report():
    report = is_valid_process(w_ocb(), bipartite_layout())
    assert report.verdict and report.failures() == []
    assert abs(report.trace - 4) < 1e-12
    assert report.min_eigenvalue >= 0
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        rho = g @ g.conj().T
        rho *= 4 / np.trace(rho).real
        bad = is_valid_process(LabeledOperator(bipartite_layout().systems, rho), bipartite_layout())
        assert bad.psd and bad.trace_ok and not bad.subspace_ok
        assert any("L_V" in f for f in bad.failures())
    with pytest.raises(InvalidProcessError):
        ProcessMatrix(LabeledOperator(bipartite_layout().systems, np.eye(16)), bipartite_layout())


def test_is_causally_ordered_rejects_invalid():
    op = LabeledOperator(bipartite_layout().systems, np.eye(16))
    with pytest.raises(InvalidProcessError):
        is_causally_ordered(op, ("A", "B"), bipartite_layout())


def test_white_noise():
    W = white_noise(bipartite_layout())
    assert np.allclose(W.data, np.eye(16) / 4)
    S = white_noise(switch_layout(True))
    assert np.allclose(S.data, np.eye(32) / 8)
    assert abs(np.trace(S.data).real - 4) < 1e-12


def test_w_ocb_exact_form():
    W = w_ocb()
    c = 1 / sqrt(2)
    expect = 0.25 * (np.eye(16) + c * pauli_string("1ZZ1") + c * pauli_string("Z1XZ"))
    assert W.op.names == ("A_I", "A_O", "B_I", "B_O")
    assert maxabs(W.data, expect) < 1e-15
    assert abs(np.trace(W.data) - 4) < 1e-12


def test_w_ocb_noisy():
    assert maxabs(w_ocb_noisy(0.0).data, w_ocb().data) < 1e-15
    assert maxabs(w_ocb_noisy(1e9).data, np.eye(16) / 4) < 1e-9
    with pytest.raises(ValueError):
        w_ocb_noisy(-0.1)


@pytest.mark.parametrize("lam", [OCB_BOUNDARY, 0.6, 1.0, 3.0])
def test_ocb_decomposition(lam):
    layout = bipartite_layout()
    w_ab, w_ba = ocb_decomposition(lam)
    for part, order in ((w_ab, ("A", "B")), (w_ba, ("B", "A"))):
        assert np.linalg.eigvalsh(part.data)[0] > -1e-12
        assert abs(np.trace(part.data) - 4) < 1e-12
        assert is_causally_ordered(ProcessMatrix(part, layout), order, layout)
    assert maxabs(0.5 * (w_ab.data + w_ba.data), w_ocb_noisy(lam).data) < 1e-12


def test_ocb_decomposition_boundary_component():
    w_ab, w_ba = ocb_decomposition(OCB_BOUNDARY)
    c = sqrt(2) / (1 + OCB_BOUNDARY)      # = 1 at the boundary
    assert maxabs(w_ab.data, 0.25 * (np.eye(16) + c * pauli_string("1ZZ1"))) < 1e-15
    assert abs(np.linalg.eigvalsh(w_ab.data)[0]) < 1e-12
    assert not is_causally_ordered(ProcessMatrix(w_ab, bipartite_layout()), ("B", "A"), bipartite_layout())


def test_ocb_decomposition_below_boundary_raises():
    with pytest.raises(ValueError, match="negative eigenvalues"):
        ocb_decomposition(0.2)


def test_switch_process_dimensions_and_rank():
    full = switch_process()
    assert full.data.shape == (64, 64)
    assert abs(np.trace(full.data) - 4) < 1e-12
    assert np.linalg.matrix_rank(full.data, tol=1e-9) == 1
    assert full.layout.party("C").d_I == 4 and full.layout.party("C").d_O == 1
    red = switch_process(reduce_target=True)
    assert red.data.shape == (32, 32) and red.d_O == 4
    assert abs(switch_vector().norm() ** 2 - 4) < 1e-12
    with pytest.raises(ValueError):
        switch_process(psi=[1, 1])


def test_trace_out_charlie_matches_explicit_mixture():
    psi = np.array([np.cos(0.3), np.exp(0.7j) * np.sin(0.3)])
    phi = np.eye(2).reshape(-1)                          # |1>>
    P = np.outer(psi, psi.conj())
    ab = np.kron(np.kron(P, np.outer(phi, phi)), np.eye(2))     # [A_I, A_O B_I, B_O]
    ba_op = LabeledOperator([("B_I", 2), ("B_O", 2), ("A_I", 2), ("A_O", 2)], ab)
    ba = permute_systems(ba_op, ["A_I", "A_O", "B_I", "B_O"]).data
    expect = 0.5 * (ab + ba)
    for reduce in (False, True):
        W = trace_out_charlie(switch_process(psi, reduce_target=reduce))
        assert W.op.names == ("A_I", "A_O", "B_I", "B_O")
        assert maxabs(W.data, expect) < 1e-12
    with pytest.raises(ValueError):
        trace_out_charlie(w_ocb())


def test_compose_local_identity_maps():
    W = w_ocb()
    eye = cj_from_kraus([np.eye(2)]).data
    out = compose_local(W, {"A": LocalOperation(eye, eye), "B": LocalOperation(post=eye)})
    assert maxabs(out.data, W.data) < 1e-12


def test_compose_local_discard_and_prepare():
    layout = bipartite_layout(extra_inputs={"A": [("A_I'", 2)]})
    W1 = tensor(w_ocb().op, LabeledOperator([("A_I'", 2)], np.eye(2) / 2))
    W1 = ProcessMatrix(align(LabeledOperator(layout.systems, np.eye(32)), W1), layout)
    # on A's input [A_I, A_I']: keep A_I, discard A_I' and prepare |0>
    kraus = [np.kron(np.eye(2), np.outer([1, 0], np.eye(2)[j])) for j in range(2)]
    out = compose_local(W1, {"A": LocalOperation(pre=cj_from_kraus(kraus).data)})
    expect = tensor(w_ocb().op, LabeledOperator([("A_I'", 2)], np.diag([1.0, 0.0])))
    assert maxabs(out.data, align(out.op, expect).data) < 1e-12


def test_compose_local_probability_identity():
    rng = np.random.default_rng(9)
    W = random_valid_process(bipartite_layout(), rng)
    V = haar_unitary(4, rng)[:, :2].reshape(2, 2, 2)
    K_pre = [V[0], V[1]]
    K_post = [haar_unitary(2, rng)]
    pre, post = cj_from_kraus(K_pre).data, cj_from_kraus(K_post).data
    out = compose_local(W, {"A": LocalOperation(pre, post)})
    for _ in range(5):
        # random CP maps for A, as CJ on [A_I, A_O]
        kraus = [rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)) for _ in range(2)]
        CA = cj_from_kraus(kraus).data
        CB = cj_from_kraus([rng.standard_normal((2, 2))]).data
        lhs = np.trace(np.kron(CA, CB) @ out.data)
        # C_123 = post o C o pre as a channel composition
        s = cj_to_superoperator(post, 2, 2) @ cj_to_superoperator(CA, 2, 2) @ cj_to_superoperator(pre, 2, 2)
        rhs = np.trace(np.kron(superoperator_to_cj(s, 2, 2), CB) @ W.data)
        assert abs(lhs - rhs) < 1e-9


def test_compose_local_unitaries_preserve_spectrum():
    rng = np.random.default_rng(4)
    W = w_ocb()
    maps = {p: LocalOperation(cj_from_kraus([haar_unitary(2, rng)]).data,
                              cj_from_kraus([haar_unitary(2, rng)]).data) for p in "AB"}
    out = compose_local(W, maps)
    assert np.allclose(np.linalg.eigvalsh(out.data), np.linalg.eigvalsh(W.data), atol=1e-12)


def test_compose_local_rejects_non_cptp():
    with pytest.raises(ValueError, match="trace preserving"):
        compose_local(w_ocb(), {"A": LocalOperation(pre=2 * cj_from_kraus([np.eye(2)]).data)})
    with pytest.raises(ValueError, match="unknown parties"):
        compose_local(w_ocb(), {"Z": LocalOperation()})


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_constructors_are_valid(seed):
    rng = np.random.default_rng(seed)
    lay = bipartite_layout()
    for W in (random_valid_process(lay, rng), random_ordered_process(lay, ("B", "A"), rng),
              random_comb(rng), random_comb(rng, ("B", "A")),
              random_valid_process(switch_layout(True), rng)):
        assert is_valid_process(W, W.layout, 1e-9).verdict
    assert is_causally_ordered(random_comb(rng, ("B", "A")), ("B", "A"), lay)


def test_named_constructors_valid_and_json_roundtrip(tmp_path):
    for name in ("ocb", "ocb-noisy:0.5", "switch", "switch-reduced", "white-noise", "white-noise:switch"):
        W = named_process(name)
        assert is_valid_process(W, W.layout, 1e-9).verdict
        path = tmp_path / "w.json"
        path.write_text(json.dumps(process_to_json(W)))
        back = process_from_json(json.loads(path.read_text()))
        assert np.array_equal(back.data, W.data)
        assert back.layout == W.layout
    with pytest.raises(KeyError):
        named_process("nope")
    with pytest.raises(ValueError):
        process_from_json({k: v for k, v in process_to_json(w_ocb()).items() if k != "layout"})


def test_layout_json_names_parties():
    obj = process_to_json(w_ocb())
    assert [e["party"] for e in obj["layout"]] == ["A", "B"]
    lay = PartyLayout.from_json(obj["layout"], w_ocb().op.systems)
    assert lay == bipartite_layout()
