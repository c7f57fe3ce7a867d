"""Command-line front end.  Every command prints (or writes) one JSON report.

Exit codes: 0 success, 1 domain failure (invalid process, solver failure,
rejected witness, reproduction mismatch), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from math import sqrt
from pathlib import Path

import numpy as np

from . import __version__
from .conic_solver import SolverError
from .process_space import (
    NAMED_PROCESSES,
    InvalidProcessError,
    PartyLayout,
    ProcessMatrix,
    bipartite_layout,
    is_causally_ordered,
    named_process,
    ocb_decomposition,
    process_from_json,
    switch_layout,
    w_ocb,
    w_ocb_noisy,
)
from .switch_tasks import (
    chiribella_witness_mc,
    check_causal_theorem4,
    finite_witness,
    game_to_witness,
    ocb_correlations,
    ocb_game_value,
    optimize_finite_weights,
    random_instrument,
    random_povm,
    switch_correlations,
    switch_process,
    with_causal_bound,
)
from .tensor_ops import LabeledOperator, operator_from_json, operator_to_json
from .witness_engine import (
    CausalWitness,
    Instrument,
    NotSeparable,
    UnsupportedScenarioError,
    decompose_witness_ocb,
    generalized_robustness,
    random_robustness,
    rr_monotonicity_counterexample,
    s_ocb,
    separable_decomposition,
    verify_witness,
    witness_expectation,
)

log = logging.getLogger("causalsep")

DEFAULT_ARTIFACTS = "causalsep-artifacts"


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


# ---------------------------------------------------------------------------
# report helpers

def scalar(value, tol, expected=None) -> dict:
    out = {"value": float(value), "tol": float(tol)}
    if expected is not None:
        out["expected"] = float(expected)
        out["ok"] = bool(abs(float(value) - float(expected)) <= tol)
    return out


def bound(value, limit, tol, kind: str = "<=") -> dict:
    ok = value <= limit + tol if kind == "<=" else value >= limit - tol
    return {"value": float(value), "tol": float(tol), "bound": f"{kind} {limit!r}", "ok": bool(ok)}


def _all_ok(results) -> bool:
    if isinstance(results, dict):
        if results.get("ok") is False:
            return False
        return all(_all_ok(v) for v in results.values())
    if isinstance(results, list):
        return all(_all_ok(v) for v in results)
    return True


class Artifacts:
    def __init__(self, root: str):
        self.root = Path(root)

    def write(self, name: str, obj) -> str:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        path.write_text(json.dumps(obj, indent=1) + "\n")
        return str(path)


def _parse_psi(text: str | None):
    if text is None:
        return None
    try:
        vals = [complex(v.strip().replace(" ", "")) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse --psi {text!r}: {exc}") from exc
    psi = np.array(vals, dtype=complex)
    if psi.shape != (2,) or np.linalg.norm(psi) == 0:
        raise UsageError("--psi needs two amplitudes, e.g. --psi 1,0")
    return psi / np.linalg.norm(psi)


def _psi_echo(psi):
    if psi is None:
        return None
    return [[float(z.real), float(z.imag)] for z in psi]


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def load_process(target: str, tol: float, psi=None) -> ProcessMatrix:
    if os.path.exists(target):
        obj = _load_json(target)
        try:
            return process_from_json(obj, tol)
        except InvalidProcessError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"{target}: {exc}") from exc
    try:
        W = named_process(target, psi)
    except KeyError as exc:
        raise UsageError(f"{target!r} is neither a file nor a named process "
                         f"({', '.join(NAMED_PROCESSES)})") from exc
    return W


def _infer_layout(op: LabeledOperator) -> PartyLayout:
    for layout in (bipartite_layout(), switch_layout(True), switch_layout(False)):
        if sorted(s.name for s in layout.systems) == sorted(op.names):
            return layout
    raise UsageError(f"cannot infer a party layout for factors {list(op.names)}; add a 'layout' entry")


def load_witness(path: str) -> tuple[LabeledOperator, PartyLayout]:
    obj = _load_json(path)
    try:
        op = operator_from_json(obj)
        layout = PartyLayout.from_json(obj["layout"], op.systems) if "layout" in obj else _infer_layout(op)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return op, layout


def _witness_json(op: LabeledOperator, layout: PartyLayout, checked) -> dict:
    if isinstance(checked, CausalWitness):
        return checked.to_json()
    obj = operator_to_json(op)
    obj["layout"] = layout.to_json()
    return obj


# ---------------------------------------------------------------------------
# commands

def cmd_reproduce(args, art: Artifacts) -> dict:
    if args.which == "ocb":
        return _reproduce_ocb(args, art)
    if args.which == "switch":
        return _reproduce_switch(args, art)
    return _reproduce_monotonicity(args)


def _reproduce_ocb(args, art: Artifacts) -> dict:
    tol = args.sdp_tol
    W = w_ocb()
    rr = random_robustness(W, tol=tol)
    res = {"R_r(W_OCB)": scalar(rr.value, 1e-6, sqrt(2) - 1),
           "R_r gap": bound(rr.gap, 10 * tol, 0.0)}
    witness = rr.witness
    res["tr(S W_OCB)"] = scalar(witness_expectation(rr.witness_op, W), 1e-6, 1 - sqrt(2))
    res["witness certified"] = {"value": witness is not None, "ok": witness is not None,
                                "margin": None if witness is None else witness.margin}
    if art is not None:
        res["witness_path"] = art.write("ocb-rr-witness.json", _witness_json(rr.witness_op, W.layout, witness))
    rg = generalized_robustness(W, tol=tol, certify=False)
    res["R_g(W_OCB)"] = scalar(rg.value, 1e-6, 3 - 2 * sqrt(2))
    boundary = {}
    for lam in (sqrt(2) - 1, 0.6, 1.0):
        Wl = w_ocb_noisy(lam)
        dec = separable_decomposition(Wl, tol=tol)
        if isinstance(dec, NotSeparable):
            boundary[repr(lam)] = {"R_r": scalar(dec.robustness.value, 1e-6, 0.0), "ok": False}
            continue
        checks = dec.residuals(Wl)
        worst_sum = max(v for k, v in checks.items() if k == "sum" or k.startswith("subspace"))
        worst_psd = min(v for k, v in checks.items() if k.startswith("psd"))
        boundary[repr(lam)] = {"R_r": scalar(dec.robustness.value, 1e-6, 0.0),
                               "decomposition residual": bound(worst_sum, 0.0, 1e-7),
                               "component min eigenvalue": bound(worst_psd, 0.0, 1e-7, ">=")}
    res["R_r(W_OCB(lambda))"] = boundary
    w_ab, w_ba = ocb_decomposition(sqrt(2) - 1)
    layout = bipartite_layout()
    target = w_ocb_noisy(sqrt(2) - 1).op.data
    comps_ok = (is_causally_ordered(w_ab, ("A", "B"), layout, args.tol)
                and is_causally_ordered(w_ba, ("B", "A"), layout, args.tol)
                and min(np.linalg.eigvalsh(w_ab.data)[0], np.linalg.eigvalsh(w_ba.data)[0]) >= -args.tol)
    res["boundary decomposition"] = {"value": float(np.max(np.abs(0.5 * (w_ab.data + w_ba.data) - target))),
                                     "tol": 1e-7, "components_ordered_psd": bool(comps_ok)}
    res["boundary decomposition"]["ok"] = bool(comps_ok and res["boundary decomposition"]["value"] <= 1e-7)
    res["ocb_game_value(W_OCB)"] = scalar(ocb_game_value(W), 1e-10, (2 + sqrt(2)) / 4)
    return res


def _reproduce_switch(args, art: Artifacts) -> dict:
    tol = args.sdp_tol
    W = switch_process(args.psi, reduce_target=True)
    rg = generalized_robustness(W, tol=tol)
    res = {"R_g(W_switch)": scalar(rg.value, 1e-3, 0.5454),
           "R_g gap": bound(rg.gap, 1e-7, 0.0),
           "duality relation": bound(rg.duality_residual, 10 * tol, 0.0),
           "witness certified": {"value": rg.witness is not None, "ok": rg.witness is not None}}
    if art is not None:
        res["witness_path"] = art.write("switch-rg-witness.json",
                                        _witness_json(rg.witness_op, W.layout, rg.witness))
    G = with_causal_bound(chiribella_witness_mc(args.samples, args.seed, jobs=args.jobs), tol)
    res["chiribella"] = _game_results(G, W, 0.9288, 5e-3, 0.0766, 6e-3)
    weights, p = optimize_finite_weights(tol)
    F = finite_witness(weights)
    F.p_sep = p
    res["finite"] = _game_results(F, W, 0.8690, 1e-3, 0.1507, 2e-3)
    if art is not None:
        res["finite"]["weights_path"] = art.write("finite-weights.json", weights.to_json())
    return res


def _game_results(G, W, p_expected, p_tol, noise_expected, noise_tol) -> dict:
    out = {"p_sep": scalar(G.p_sep, p_tol, p_expected),
           "noise_tolerance": scalar(G.noise_tolerance, noise_tol, noise_expected),
           "tr(G W_switch)": scalar(G.value(W), 1e-9, 1.0),
           "n_samples": G.n_samples, "seed": G.seed}
    checked = game_to_witness(G)
    ok = isinstance(checked, CausalWitness)
    out["witness certified"] = {"value": ok, "ok": ok, "margin": float(checked.margin)}
    S = checked.op if ok else None
    if S is not None:
        out["-tr(S W_switch)"] = scalar(-witness_expectation(S, W), 1e-9, G.noise_tolerance)
    return out


def _reproduce_monotonicity(args) -> dict:
    rep = rr_monotonicity_counterexample(tol=args.sdp_tol)
    return {"R_r(W1)": scalar(rep.rr_w1, 1e-5, sqrt(2) - 1),
            "R_r($(W1))": scalar(rep.rr_mapped, 1e-5, 2 * (sqrt(2) - 1)),
            "R_g(W1)": {"value": rep.rg_w1, "tol": 1e-6},
            "R_g($(W1))": bound(rep.rg_mapped, rep.rg_w1, 1e-6)}


def cmd_robustness(args, art: Artifacts) -> dict:
    W = load_process(args.target, args.tol, args.psi)
    fn = generalized_robustness if args.kind == "generalized" else random_robustness
    r = fn(W, tol=args.sdp_tol)
    out = {"kind": args.kind, "value": scalar(r.value, args.sdp_tol), "gap": r.gap, "status": r.status,
           "primal_value": r.primal_value, "dual_value": r.dual_value,
           "duality relation": bound(r.duality_residual, 10 * args.sdp_tol, 0.0),
           "witness certified": r.witness is not None}
    if art is not None:
        out["witness_path"] = art.write(f"{args.kind}-witness.json", _witness_json(r.witness_op, W.layout, r.witness))
        out["decomposition_paths"] = {
            tag: art.write(f"{args.kind}-component-{_slug(tag)}.json", operator_to_json(op))
            for tag, op in r.decomposition.items()}
    return out


def _slug(tag: str) -> str:
    return tag.replace(":", "-").replace("<", "-").replace(">", "-")


def cmd_witness_verify(args, art: Artifacts) -> dict:
    op, layout = load_witness(args.file)
    if not op.hermitian:
        raise DomainError("witness operator is not Hermitian")
    checked = verify_witness(op, layout, tol=args.cert_tol, sdp_tol=min(args.sdp_tol, 1e-9))
    out = {"verdict": "witness" if checked else "rejected", "margin": scalar(checked.margin, args.cert_tol)}
    if args.process:
        W = load_process(args.process, args.tol, args.psi)
        out["tr(S W)"] = witness_expectation(op, W)
    if checked and art is not None:
        out["certificate_path"] = art.write("certified-witness.json", checked.to_json())
    if not checked:
        out["ok"] = False
    return out


def _decomposition_report(W: ProcessMatrix, args, art: Artifacts, prefix: str):
    dec = separable_decomposition(W, tol=args.sdp_tol)
    if isinstance(dec, NotSeparable):
        out = {"verdict": "not separable", "R_r": scalar(dec.robustness.value, args.sdp_tol),
               "witness certified": dec.witness is not None}
        if art is not None:
            out["witness_path"] = art.write(f"{prefix}-witness.json",
                                            _witness_json(dec.witness_op, W.layout, dec.witness))
        return out, False
    res = dec.residuals(W)
    out = {"verdict": "separable", "weights": dec.weights, "noise": dec.noise, "residuals": res}
    if art is not None:
        out["decomposition_paths"] = {
            tag: art.write(f"{prefix}-{_slug(tag)}.json", operator_to_json(op))
            for tag, op in dec.components.items()}
    return out, True


def cmd_check_sep(args, art: Artifacts) -> dict:
    W = load_process(args.target, args.tol, args.psi)
    out, _ = _decomposition_report(W, args, art, "separability")
    return out


def cmd_decompose(args, art: Artifacts) -> dict:
    if args.target == "ocb-witness":
        dec = decompose_witness_ocb()
        err = float(np.max(np.abs(dec.operator().data - s_ocb().data)))
        cells = [{"x": x, "y": y, "y'": yp, "a": a, "b": b, "gamma": g}
                 for (x, y, yp, a, b), g in sorted(dec.coefficients.items())]
        out = {"reconstruction error": bound(err, 0.0, 1e-12), "coefficients": cells}
        return out
    W = load_process(args.target, args.tol, args.psi)
    out, ok = _decomposition_report(W, args, art, "decomposition")
    if not ok:
        out["ok"] = False
    return out


def cmd_game(args, art: Artifacts) -> dict:
    if args.which == "ocb":
        W = load_process(args.process or "ocb", args.tol, args.psi)
        value = ocb_game_value(W)
        return {"p_succ": scalar(value, 1e-10), "causal bound": 0.75, "violates": bool(value > 0.75 + 1e-9)}
    W = switch_process(args.psi, reduce_target=True)
    if args.which == "chiribella":
        G = with_causal_bound(chiribella_witness_mc(args.samples, args.seed, jobs=args.jobs), args.sdp_tol)
    else:
        weights, p = optimize_finite_weights(args.sdp_tol)
        G = finite_witness(weights)
        G.p_sep = p
    out = G.report()
    out["p_sep"] = scalar(G.p_sep, args.sdp_tol)
    out["tr(G W_switch)"] = scalar(G.value(W), 1e-9, 1.0)
    if G.weights is not None and art is not None:
        out["weights_path"] = art.write("finite-weights.json", G.weights.to_json())
    return out


def _load_instruments(path: str):
    obj = _load_json(path)

    def instr(entry, names):
        out = {}
        for k, els in entry.items():
            ops = [operator_from_json(e) for e in els]
            if any(list(op.names) != list(names) for op in ops):
                raise UsageError(f"instrument {k} must act on {list(names)}")
            out[int(k)] = Instrument(ops, (names[1],), f"{names[0][0]}|{k}")
        return out
    try:
        A = instr(obj["A"], ("A_I", "A_O"))
        B = instr(obj["B"], ("B_I", "B_O"))
        C = {int(k): [np.array(m, dtype=float)[..., 0] + 1j * np.array(m, dtype=float)[..., 1] for m in els]
             for k, els in obj["C"].items()}
    except (KeyError, TypeError, IndexError) as exc:
        raise UsageError(f"{path}: malformed instrument file ({exc})") from exc
    except ValueError as exc:
        raise DomainError(f"{path}: {exc}") from exc
    return A, B, C


def cmd_correlations(args, art: Artifacts) -> dict:
    tables = []
    if args.instruments:
        A, B, C = _load_instruments(args.instruments)
        tables.append(("instruments", switch_correlations(A, B, C, args.psi)))
    elif args.ocb:
        tables.append(("ocb", ocb_correlations(w_ocb())))
    else:
        rng = np.random.default_rng(args.seed)
        for k in range(args.random):
            A = {x: random_instrument(("A_I", "A_O"), 2, rng) for x in range(2)}
            B = {y: random_instrument(("B_I", "B_O"), 2, rng) for y in range(2)}
            C = {z: random_povm(4, 2, rng) for z in range(2)}
            tables.append((f"random-{k}", switch_correlations(A, B, C, args.psi)))
    out = {}
    for name, table in tables:
        verdict = check_causal_theorem4(table, tol=args.lp_tol).to_json()
        if art is not None:
            verdict["table_path"] = art.write(f"correlations-{name}.json", table.to_json())
        out[name] = verdict
    return out


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--sdp-tol", type=float, default=1e-8, help="solver tolerance (default 1e-8)")
    common.add_argument("--tol", type=float, default=1e-9, help="validity tolerance (default 1e-9)")
    common.add_argument("--cert-tol", type=float, default=1e-8, help="witness certificate tolerance")
    common.add_argument("--lp-tol", type=float, default=1e-9, help="correlation LP tolerance")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--samples", type=int, default=10000)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for Monte Carlo sampling")
    common.add_argument("--psi", default=None, help="switch target state, e.g. 1,0 or 0.6,0.8j")
    common.add_argument("--out", default=None, help="write the report here instead of stdout")
    common.add_argument("--artifacts", default=None,
                        help=f"directory for operator files (default {DEFAULT_ARTIFACTS}/ for commands that emit them)")
    common.add_argument("--no-artifacts", action="store_true", help="do not write operator files")
    common.add_argument("--timing", action="store_true", help="add wall time to the report")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="causalsep", description="Causal witnesses and robustness of process matrices.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reproduce", parents=[common], help="reproduce a reference result cluster")
    r.add_argument("which", choices=["ocb", "switch", "monotonicity"])
    r.set_defaults(func=cmd_reproduce)

    r = sub.add_parser("robustness", parents=[common], help="generalized or random robustness of a process")
    r.add_argument("--kind", choices=["generalized", "random"], default="generalized")
    r.add_argument("target", help="process JSON file or constructor name")
    r.set_defaults(func=cmd_robustness)

    r = sub.add_parser("witness-verify", parents=[common], help="certify a causal witness")
    r.add_argument("file")
    r.add_argument("--process", default=None, help="also report tr(S W) for this process")
    r.set_defaults(func=cmd_witness_verify)

    r = sub.add_parser("check-sep", parents=[common], help="causal separability verdict")
    r.add_argument("target")
    r.set_defaults(func=cmd_check_sep)

    r = sub.add_parser("decompose", parents=[common],
                       help="causally ordered decomposition, or 'ocb-witness' for the instrument decomposition")
    r.add_argument("target")
    r.set_defaults(func=cmd_decompose)

    r = sub.add_parser("game", parents=[common], help="game values and causal bounds")
    r.add_argument("which", choices=["ocb", "chiribella", "finite"])
    r.add_argument("--process", default=None, help="process for the OCB game (default ocb)")
    r.set_defaults(func=cmd_game)

    r = sub.add_parser("correlations", parents=[common], help="switch correlations and the causal test")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--instruments", default=None, help="JSON file with instruments A, B and POVMs C")
    g.add_argument("--random", type=int, default=3, help="number of random instrument draws (default 3)")
    g.add_argument("--ocb", action="store_true", help="OCB instruments on W_OCB instead of the switch")
    r.set_defaults(func=cmd_correlations)
    return p


_EMITS = {"robustness", "check-sep", "decompose", "correlations", "reproduce", "game"}


def run(argv=None) -> tuple[int, dict | None]:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (int(exc.code) if isinstance(exc.code, int) else 2), None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    t0 = time.perf_counter()
    report = {"command": argv, "inputs": {}, "results": None,
              "tolerances": {"sdp_tol": args.sdp_tol, "validity_tol": args.tol, "certificate_tol": args.cert_tol}}
    try:
        if args.samples < 1 or args.jobs < 1:
            raise UsageError("--samples and --jobs must be positive")
        if not 1e-12 <= args.sdp_tol <= 1e-4:
            raise UsageError("--sdp-tol must lie in [1e-12, 1e-4]")
        args.psi = _parse_psi(args.psi)
        inputs = {k: v for k, v in vars(args).items()
                  if k not in ("func", "verbose", "timing", "out", "no_artifacts") and v is not None}
        inputs["psi"] = _psi_echo(args.psi)
        report["inputs"] = inputs
        art = None
        if not args.no_artifacts and (args.artifacts or args.command in _EMITS):
            art = Artifacts(args.artifacts or DEFAULT_ARTIFACTS)
        results = args.func(args, art)
        report["results"] = results
        report["ok"] = _all_ok(results)
        code = 0 if report["ok"] else 1
    except UsageError as exc:
        report["error"] = {"kind": "usage", "message": str(exc)}
        print(f"causalsep: error: {exc}", file=sys.stderr)
        code = 2
    except (InvalidProcessError, SolverError, UnsupportedScenarioError, DomainError, ValueError) as exc:
        report["error"] = {"kind": type(exc).__name__, "message": str(exc)}
        print(f"causalsep: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = 1
    report["exit_code"] = code
    if args.timing:
        report["wall_time_s"] = time.perf_counter() - t0
    text = json.dumps(report, indent=2, default=_json_default) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code, report


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
