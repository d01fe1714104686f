"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary."""
import math
import time
from pathlib import Path

import numpy as np
import scipy.linalg

from conftest import ACCEPTANCE_LINES
from flowcap.errors import InvalidProblem
from flowcap.expcli import cli
from flowcap.expcli.experiments import OUTPUT_ENV, builtin_configs
from flowcap.fields import (
    QUADRATIC, RELU, Affine, Box, Named, Separable, lie_bracket, neg_relu_field, power, relu_field,
)
from flowcap.flows import (
    BACKWARD, FORWARD, Disk, FlowProgram, IntegratorConfig, Leg, flow_affine, flow_mobius_1d, flow_numeric,
    flow_relu, jacobian_det_along_flow, volume_comparison,
)
from flowcap.schemes import commutator_study, gronwall_bound, lie_trotter_study
from flowcap.universality.approx import broadcast_coordinate, marginalize, relu_from_softplus, single_axis
from flowcap.universality.certificates import omega_configuration, span_certificate
from flowcap.universality.interpolation import InterpolationProblem, interpolate

N_VALUES = [8 * 2 ** k for k in range(8)]


def record(number, title, checks, elapsed, budget=None):
    ok = all(v for _, v in checks)
    if budget is not None:
        checks = checks + [(f"runtime {elapsed:.1f}s < {budget}s", elapsed < budget)]
        ok = ok and elapsed < budget
    failed = [name for name, v in checks if not v]
    detail = "; ".join(name for name, _ in checks) if ok else "failed: " + "; ".join(failed)
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")
    assert ok, detail


def test_criterion_1_closed_form_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    checks = []
    for d in (1, 2, 3):
        X = rng.uniform(-2, 2, (100, d))
        A, b = rng.normal(size=(d, d)), rng.normal(size=d)
        err = np.max(np.abs(flow_affine(A, b, 0.9, X) - flow_numeric(Affine(A, b), 0.9, X)))
        checks.append((f"affine d={d} err {err:.1e}", err <= 1e-8))
        for sign, f in ((1, relu_field(d)), (-1, neg_relu_field(d))):
            err = np.max(np.abs(flow_relu(sign, 1.2, X) - flow_numeric(f, 1.2, X)))
            checks.append((f"relu{sign:+d} d={d} err {err:.1e}", err <= 1e-8))
    x = rng.uniform(-2, 2, (100, 1))
    tau = 0.4
    err = np.max(np.abs(flow_mobius_1d(tau, x) - flow_numeric(Separable(QUADRATIC, dim=1), tau, x)))
    checks.append((f"mobius err {err:.1e}", err <= 1e-8))
    record(1, "closed-form flows match RK4 oracle", checks, time.perf_counter() - t0, 5)


def test_criterion_2_lie_trotter_order():
    t0 = time.perf_counter()
    R = np.array([[0.0, 1.0], [-1.0, 0.3]])
    b = np.array([1.0, 0.5])
    rep1 = lie_trotter_study([(1.0, Affine(R)), (1.0, Affine(np.zeros((2, 2)), b))], 1.0, Box.cube(-1, 1, 2),
                             N_VALUES, reference=lambda X: flow_affine(R, b, 1.0, X))
    rep2 = lie_trotter_study([(1.0, Affine(np.zeros((2, 2)), b)), (1.0, relu_field(2))], 1.0,
                             Box.cube(0.5, 1.5, 2), N_VALUES)
    checks = [(f"affine+constant slope {rep1.slope:.3f}", rep1.within(1.0, 0.15)),
              (f"constant+relu slope {rep2.slope:.3f}", rep2.within(1.0, 0.15))]
    record(2, "Lie-Trotter first order", checks, time.perf_counter() - t0, 30)


def test_criterion_3_commutator_order():
    t0 = time.perf_counter()
    E12 = np.array([[0.0, 1.0], [0.0, 0.0]])
    E21 = E12.T
    target = scipy.linalg.expm(E21 @ E12 - E12 @ E21)
    rep1 = commutator_study(Affine(E12), Affine(E21), 1.0, Box.cube(-1, 1, 2), N_VALUES,
                            reference=lambda X: X @ target.T)
    rep2 = commutator_study(Affine(np.zeros((1, 1)), [1.0]), Separable(QUADRATIC, dim=1), 0.5,
                            Box([-0.5], [0.5]), N_VALUES)
    checks = [(f"linear pair slope {rep1.slope:.3f}", rep1.within(0.5, 0.15)),
              (f"constant/x^2 slope {rep2.slope:.3f}", rep2.within(0.5, 0.15))]
    record(3, "commutator scheme half order", checks, time.perf_counter() - t0, 60)


def test_criterion_4_gronwall_validity():
    t0 = time.perf_counter()
    a = 64.0
    sur, _ = relu_from_softplus(a, 2)
    t = np.linspace(-2, 2, 40001)
    measured_delta = float(np.max(np.abs(sur(np.column_stack([t, t]))[:, 0] - np.maximum(t, 0))))
    box = Box.cube(-1, 1, 2)
    gb = gronwall_bound(relu_field(2), box, 1.0, measured_delta)
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, (50, 2))
    dev = np.max(np.abs(flow_relu(1, 1.0, X) - flow_numeric(sur, 1.0, X)), axis=1)
    held = int(np.sum(dev <= gb.bound))
    checks = [(f"bound held {held}/50", held == 50),
              (f"sup deviation - ln2/a = {measured_delta - math.log(2) / a:.1e}",
               abs(measured_delta - math.log(2) / a) <= 1e-12)]
    record(4, "Gronwall bound dominates softplus-vs-ReLU deviation", checks, time.perf_counter() - t0)


def _permute_relu_program(rng, legs=6):
    f = Named("permute_relu")
    out = []
    for k in range(legs):
        if k % 2:
            out.append(Leg(f, float(rng.uniform(0.1, 1.0)), FORWARD if rng.random() < 0.5 else BACKWARD))
        else:
            out.append(Leg(Affine(rng.uniform(-0.5, 0.5, (2, 2)), rng.uniform(-1, 1, 2)), float(rng.uniform(0.1, 1))))
    return FlowProgram(out, 2)


def test_criterion_5_divergence_free_counterexample():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    base = rng.uniform(-2, 2, (100, 2))
    cfg = IntegratorConfig(steps_per_unit=100)
    disks = [Disk((-2.0, 0.0)), Disk((2.0, 0.0))]
    spreads, agree = [], []
    for i in range(20):
        P = _permute_relu_program(rng)
        dets = jacobian_det_along_flow(P, base, [P.total_time], cfg)[:, 0]
        spreads.append(float(np.ptp(dets)))
        agree.append(volume_comparison(P, disks, 2000, seed=i, cfg=cfg).agree(3.0))
    g = lambda X: np.stack([np.exp(X[:, 0]), X[:, 1]], axis=1)
    vt = volume_comparison(g, [Disk((2.0, 0.0)), Disk((-2.0, 0.0))], 100_000, seed=5)
    gap = abs(vt.ratio - math.exp(4.0))
    checks = [(f"max det spread {max(spreads):.1e}", max(spreads) <= 1e-6),
              (f"volumes agree {sum(agree)}/20", all(agree)),
              (f"e^x1 ratio {vt.ratio:.3f} vs e^4, {gap / vt.ratio_stderr():.2f} SE", gap <= 3 * vt.ratio_stderr())]
    record(5, "permuted ReLU programs preserve volume up to a constant", checks, time.perf_counter() - t0)


def test_criterion_6_span_certificates():
    t0 = time.perf_counter()
    sym = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    cert = span_certificate(Named("sinsum"), "diag", sym)
    expect = np.array([[1.0, -1.0, 1.0, -1.0], [0.0, 0.0, 0.0, 0.0]])
    expect /= np.linalg.norm(expect)
    c = cert.witness_by_component() if cert.witness is not None else np.zeros((2, 4))
    werr = float(min(np.max(np.abs(c - expect)), np.max(np.abs(c + expect))))
    checks = [(f"symmetric verdict {cert.verdict}", cert.verdict == "Deficient"),
              (f"witness error {werr:.1e}", werr <= 1e-6)]
    for N in (3, 4, 5):
        for s in range(5):
            X = omega_configuration(N, 2, np.random.default_rng(1000 * N + s))
            v = span_certificate(Named("sinsum"), "diag", X, seed=s, threshold=1e-10).verdict
            checks.append((f"N={N} seed={s} {v}", v == "FullRank"))
    full = sum(1 for name, v in checks[2:] if v)
    checks = checks[:2] + [(f"Omega configurations full rank {full}/15", full == 15)]
    record(6, "span certificates for sinsum", checks, time.perf_counter() - t0)


def test_criterion_7_interpolation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(20):
        N = 2 + k % 5
        prob = InterpolationProblem(rng.uniform(-2, 2, (N, 2)), rng.uniform(-2, 2, (N, 2)), 1e-6)
        worst = max(worst, prob.residual(interpolate(prob, "ass_relu", seed=k)))
    worst1 = 0.0
    for N in range(1, 9):
        x = np.sort(rng.uniform(-3, 3, N))
        y = np.sort(rng.uniform(-3, 3, N))
        prob = InterpolationProblem(x, y, 1e-6)
        worst1 = max(worst1, prob.residual(interpolate(prob)))
    try:
        InterpolationProblem([1.0, 2.0], [5.0, 3.0])
        rejected = False
    except InvalidProblem:
        rejected = True
    checks = [(f"2-d worst residual {worst:.1e}", worst <= 1e-6),
              (f"1-d worst residual {worst1:.1e}", worst1 <= 1e-6),
              ("order-reversing data rejected", rejected)]
    record(7, "exact interpolation", checks, time.perf_counter() - t0, 120)


def test_criterion_8_algebraic_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    X = rng.uniform(-2, 2, (100, 2))
    bc = broadcast_coordinate(single_axis(RELU, 2, 0), 0, 1)
    expect = np.column_stack([np.zeros(100), np.maximum(X[:, 1], 0)])
    exact = bool(np.array_equal(bc.field(X), expect))
    worst = 0.0
    x = np.linspace(-2, 2, 101)[:, None]
    for n in range(2, 6):
        for m in range(2, 6):
            br = lie_bracket(Separable(power(n), dim=1), Separable(power(m), dim=1), x)[:, 0]
            ref = (m - n) * x[:, 0] ** (n + m - 1)
            worst = max(worst, float(np.max(np.abs(br - ref) / np.maximum(1.0, np.abs(ref)))))
    mg = marginalize(Named("gauss", 2), 8.0, 400)
    gerr = float(np.max(np.abs(mg(X)[:, 0] - math.sqrt(math.pi) * np.exp(-X[:, 0] ** 2))))
    checks = [("broadcast exact at 100 points", exact), (f"bracket identity err {worst:.1e}", worst <= 1e-8),
              (f"marginal Gaussian err {gerr:.1e}", gerr <= 1e-6)]
    record(8, "algebraic identities", checks, time.perf_counter() - t0)


def test_criterion_9_determinism(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    checks = []
    for name in builtin_configs():
        runs = []
        for k in range(2):
            root = tmp_path / f"run{k}"
            monkeypatch.setenv(OUTPUT_ENV, str(root))
            code = cli.main(["run", f"builtin:{name}"])
            files = {p.name: p.read_bytes() for p in sorted(Path(root, name).iterdir())}
            runs.append((code, files))
        same = runs[0][1] == runs[1][1] and runs[0][0] == runs[1][0] == 0
        checks.append((name, same))
    n_ok = sum(v for _, v in checks)
    bad = [n for n, v in checks if not v]
    summary = [(f"{n_ok}/{len(checks)} configs byte-identical" + (f", differing: {bad}" if bad else ""),
                n_ok == len(checks))]
    record(9, "CLI reruns are byte-identical", summary, time.perf_counter() - t0)
