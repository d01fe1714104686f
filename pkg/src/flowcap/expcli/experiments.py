"""Experiment configs: loading, validation and the per-kind runners."""
from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np
import yaml

from .. import fields as F
from ..errors import BudgetExceeded, ConfigError, NonPositiveError
from ..flows import BACKWARD, FORWARD, Disk, FlowProgram, IntegratorConfig, Leg, apply, det_table_csv
from ..flows import flow_affine, flow_map, jacobian_det_along_flow, volume_comparison
from ..schemes import commutator_study, gronwall_bound, lie_trotter_study
from ..universality.approx import relu_from_softplus, relu_from_sums
from ..universality.certificates import omega_configuration, span_certificate
from ..universality.interpolation import Family, InterpolationProblem, interpolate

KINDS = ("convergence", "interpolate", "rank", "counterexample", "approx-relu", "gronwall")
STOCHASTIC = ("interpolate", "rank", "counterexample", "gronwall")
CONFIG_DIR = Path(__file__).with_name("configs")
OUTPUT_ENV = "FLOWCAP_OUTPUT_DIR"


class ExpectationFailed(Exception):
    """A run finished but missed a declared expectation (tolerance family)."""


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def builtin_configs():
    return sorted(p.stem for p in CONFIG_DIR.glob("*.yaml"))


def resolve_config_path(ref):
    ref = str(ref)
    if ref.startswith("builtin:"):
        path = CONFIG_DIR / f"{ref.split(':', 1)[1]}.yaml"
        if not path.exists():
            raise ConfigError(f"no built-in config named {ref.split(':', 1)[1]!r}")
        return path
    return Path(ref)


def load_config(ref):
    path = resolve_config_path(ref)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return cfg


def config_digest(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_field(spec, dim):
    """A field from a schema mapping, a named example, or an activation name (elementwise)."""
    if isinstance(spec, dict):
        return F.field_from_dict(spec)
    if isinstance(spec, str):
        if spec in F.NAMED_FIELDS:
            return F.Named(spec, dim)
        if spec in F.ACT_CODES:
            return F.Separable(F.Activation(spec), dim=dim)
    raise ConfigError(f"cannot interpret field spec {spec!r}")


def parse_box(spec, dim=None):
    if isinstance(spec, dict):
        box = F.Box(spec["lower"], spec["upper"])
    elif isinstance(spec, (list, tuple)) and len(spec) == 2 and dim is not None:
        box = F.Box.cube(float(spec[0]), float(spec[1]), dim)
    else:
        raise ConfigError(f"cannot interpret box {spec!r}")
    if dim is not None and box.dim != dim:
        raise ConfigError(f"box dimension {box.dim} differs from d={dim}")
    return box


def integrator(cfg):
    spec = cfg.get("integrator", {}) or {}
    return IntegratorConfig(int(spec.get("steps_per_unit", 1000)), float(spec.get("guard", 1e6)))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_config(cfg):
    """Schema and invariant diagnostics; an empty list means runnable."""
    diags = []
    kind = cfg.get("kind")
    if kind not in KINDS:
        return [f"field 'kind' must be one of {', '.join(KINDS)}; got {kind!r}"]
    if kind in STOCHASTIC and "seed" not in cfg:
        diags.append("missing required field 'seed' for a stochastic experiment")
    elif "seed" in cfg and not isinstance(cfg["seed"], int):
        diags.append("field 'seed' must be an integer")
    d = cfg.get("d", 2)
    if not isinstance(d, int) or d < 1:
        diags.append("field 'd' must be a positive integer")
        d = 2
    try:
        integrator(cfg)
    except (TypeError, ValueError) as err:
        diags.append(f"field 'integrator': {err}")
    checker = _VALIDATORS[kind]
    try:
        diags.extend(checker(cfg, d))
    except ConfigError as err:
        diags.append(str(err))
    except (KeyError, TypeError, ValueError) as err:
        diags.append(f"invalid value: {err}")
    out = cfg.get("output")
    if out is not None and not isinstance(out, str):
        diags.append("field 'output' must be a path string")
    return diags


def _need(cfg, *keys):
    return [f"missing required field '{k}'" for k in keys if k not in cfg]


def _check_convergence(cfg, d):
    diags = _need(cfg, "scheme", "fields", "box", "n_grid")
    if diags:
        return diags
    if cfg["scheme"] not in ("lie_trotter", "commutator"):
        diags.append("field 'scheme' must be 'lie_trotter' or 'commutator'")
    grid = cfg["n_grid"]
    if not isinstance(grid, list) or len({int(n) for n in grid}) < 4:
        diags.append("field 'n_grid': >=4 n-values required")
    elif any(int(n) < 1 for n in grid):
        diags.append("field 'n_grid': n-values must be positive")
    specs = cfg["fields"]
    if cfg["scheme"] == "commutator" and len(specs) != 2:
        diags.append("field 'fields': the commutator scheme takes exactly two fields")
    for s in specs:
        spec = s.get("field", s) if isinstance(s, dict) and "field" in s else s
        parse_field(spec, d)
    parse_box(cfg["box"], d)
    return diags


def _check_interpolate(cfg, d):
    diags = []
    if "x" in cfg or "y" in cfg:
        InterpolationProblem(cfg["x"], cfg["y"], float(cfg.get("tolerance", 1e-6)))
    else:
        diags += _need(cfg, "N")
        if "N" in cfg and int(cfg["N"]) < 1:
            diags.append("field 'N' must be >= 1")
    fam = cfg.get("family", "ass_relu")
    if fam != "ass_relu":
        if not isinstance(fam, dict) or fam.get("kind") not in ("aff", "diag"):
            diags.append("field 'family' must be 'ass_relu' or {kind: aff|diag, field: ...}")
        else:
            parse_field(fam["field"], d)
    return diags


def _check_rank(cfg, d):
    diags = _need(cfg, "field")
    if cfg.get("family", "diag") not in ("aff", "diag"):
        diags.append("field 'family' must be 'aff' or 'diag'")
    if "configuration" not in cfg and "omega" not in cfg:
        diags.append("missing required field 'configuration' (or 'omega')")
    if "field" in cfg:
        parse_field(cfg["field"], d)
    return diags


def _check_counterexample(cfg, d):
    diags = []
    if d != 2:
        diags.append("field 'd': the permuted-ReLU example is two-dimensional")
    for key in ("programs", "legs", "base_points", "mc_samples"):
        if key in cfg and int(cfg[key]) < 1:
            diags.append(f"field '{key}' must be >= 1")
    return diags


def _check_approx(cfg, d):
    diags = _need(cfg, "activation", "budgets")
    if "activation" in cfg:
        F.Activation.from_dict(cfg["activation"] if isinstance(cfg["activation"], dict)
                               else {"name": cfg["activation"]})
    if "box" in cfg:
        parse_box(cfg["box"], 1)
    return diags


def _check_gronwall(cfg, d):
    diags = _need(cfg, "sharpness")
    if "sharpness" in cfg and any(float(a) <= 0 for a in cfg["sharpness"]):
        diags.append("field 'sharpness': values must be > 0")
    if "box" in cfg:
        parse_box(cfg["box"], d)
    return diags


_VALIDATORS = {
    "convergence": _check_convergence,
    "interpolate": _check_interpolate,
    "rank": _check_rank,
    "counterexample": _check_counterexample,
    "approx-relu": _check_approx,
    "gronwall": _check_gronwall,
}


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def output_dir(cfg):
    name = cfg.get("name", cfg["kind"])
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env) / name
    return Path(cfg.get("output", os.path.join("flowcap-out", name)))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return str(v)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _check_expect(cfg, summary):
    exp = cfg.get("expect") or {}
    failures = []
    if "slope" in exp:
        lo, hi = exp["slope"]
        if not lo <= summary.get("slope", float("nan")) <= hi:
            failures.append(f"slope {summary.get('slope')} outside [{lo}, {hi}]")
    if "max_residual" in exp and not summary.get("max_residual", math.inf) <= exp["max_residual"]:
        failures.append(f"residual {summary.get('max_residual')} above {exp['max_residual']}")
    if "verdict" in exp and summary.get("verdict") != exp["verdict"]:
        failures.append(f"verdict {summary.get('verdict')} differs from {exp['verdict']}")
    return failures


def _terms(cfg, d):
    out = []
    for s in cfg["fields"]:
        if isinstance(s, dict) and "field" in s:
            out.append((float(s.get("coef", 1.0)), parse_field(s["field"], d)))
        else:
            out.append((1.0, parse_field(s, d)))
    return out


def _affine_sum(terms):
    A = sum(a * f.A for a, f in terms)
    b = sum(a * f.b for a, f in terms)
    return A, b


def run_convergence(cfg, out):
    d = int(cfg.get("d", 2))
    tau = float(cfg.get("tau", 1.0))
    box = parse_box(cfg["box"], d)
    terms = _terms(cfg, d)
    integ = integrator(cfg)
    ns = sorted({int(n) for n in cfg["n_grid"]})
    if cfg["scheme"] == "lie_trotter":
        ref = None
        if all(isinstance(f, F.Affine) for _, f in terms):
            A, b = _affine_sum(terms)
            ref = lambda X: flow_affine(A, b, tau, X)
        rep = lie_trotter_study(terms, tau, box, ns, reference=ref, cfg=integ)
    else:
        (_, f1), (_, f2) = terms
        ref = None
        if isinstance(f1, F.Affine) and isinstance(f2, F.Affine):
            A, a, B, b = f1.A, f1.b, f2.A, f2.b
            ref = lambda X: flow_affine(B @ A - A @ B, B @ a - A @ b, tau, X)
        rep = commutator_study(f1, f2, tau, box, ns, reference=ref, cfg=integ)
    (out / "convergence.csv").write_text(rep.to_csv())
    summary = rep.summary()
    summary["tau"] = tau
    return summary


def _family(cfg, d):
    fam = cfg.get("family", "ass_relu")
    if fam == "ass_relu":
        return "ass_relu"
    return Family(fam["kind"], parse_field(fam["field"], d))


def run_interpolate(cfg, out):
    d = int(cfg.get("d", 2))
    tol = float(cfg.get("tolerance", 1e-6))
    seed = int(cfg.get("seed", 0))
    family = _family(cfg, d)
    if "x" in cfg:
        problems = [InterpolationProblem(cfg["x"], cfg["y"], tol)]
    else:
        rng = np.random.Generator(np.random.Philox(key=[seed, 7]))
        lo, hi = cfg.get("range", [-3.0, 3.0])
        N = int(cfg["N"])
        problems = []
        for _ in range(int(cfg.get("problems", 1))):
            x = rng.uniform(lo, hi, (N, d))
            y = rng.uniform(lo, hi, (N, d))
            if d == 1:
                x, y = np.sort(x, axis=0), np.sort(y, axis=0)
            problems.append(InterpolationProblem(x, y, tol))
    rows, programs = [], []
    for i, prob in enumerate(problems):
        P = interpolate(prob, family, seed=seed + i)
        res = prob.residual(P)
        rows.append((i, prob.N, prob.dim, res, len(P)))
        programs.append({"problem": prob.to_dict(), "program": P.to_dict()})
    write_csv(out / "residuals.csv", ["problem", "N", "d", "residual", "legs"], rows)
    write_json(out / "programs.json", {"programs": programs})
    return {"max_residual": max(r[3] for r in rows), "problems": len(rows),
            "family": family if isinstance(family, str) else family.kind}


def run_rank(cfg, out):
    d = int(cfg.get("d", 2))
    seed = int(cfg.get("seed", 0))
    f = parse_field(cfg["field"], d)
    if "configuration" in cfg:
        X = np.asarray(cfg["configuration"], dtype=float)
    else:
        om = cfg["omega"]
        rng = np.random.Generator(np.random.Philox(key=[seed, 11]))
        X = omega_configuration(int(om["N"]), d, rng)
    cert = span_certificate(f, cfg.get("family", "diag"), X, cfg.get("samples"), seed,
                            float(cfg.get("threshold", 1e-10)))
    (out / "singular_values.csv").write_text(cert.singular_values_csv())
    summary = cert.to_dict()
    if cert.witness is not None:
        print("witness (rows = components, columns = points):")
        for row in cert.witness_by_component():
            print("  " + " ".join(f"{v:+.6f}" for v in row))
    return summary


def random_permute_relu_program(rng, legs, scale=0.5):
    """Random program over affine fields and +-permuted ReLU with bounded legs."""
    f = F.Named("permute_relu")
    out = []
    for k in range(legs):
        if k % 2 == 0:
            A = rng.uniform(-scale, scale, (2, 2))
            b = rng.uniform(-1.0, 1.0, 2)
            out.append(Leg(F.Affine(A, b), float(rng.uniform(0.1, 1.0))))
        else:
            direction = FORWARD if rng.random() < 0.5 else BACKWARD
            out.append(Leg(f, float(rng.uniform(0.1, 1.0)), direction))
    return FlowProgram(out, 2)


def run_counterexample(cfg, out):
    seed = int(cfg["seed"])
    n_prog = int(cfg.get("programs", 20))
    n_legs = int(cfg.get("legs", 5))
    n_base = int(cfg.get("base_points", 100))
    mc = int(cfg.get("mc_samples", 100000))
    integ = integrator(cfg)
    rng = np.random.Generator(np.random.Philox(key=[seed, 3]))
    base = rng.uniform(-2.0, 2.0, (n_base, 2))
    spreads = []
    grid = None
    table = None
    for i in range(n_prog):
        P = random_permute_relu_program(rng, n_legs)
        T = P.total_time
        dets = jacobian_det_along_flow(P, base, [T], integ)[:, 0]
        spreads.append((i, float(np.max(dets) - np.min(dets)), float(np.mean(dets))))
        if i == 0:
            grid = np.linspace(0.0, T, 11)
            table = jacobian_det_along_flow(P, base[0], grid, integ)
            first = P
    (out / "detJ.csv").write_text(det_table_csv(grid, table))
    write_csv(out / "det_spread.csv", ["program", "spread", "mean_detJ"], spreads)
    disks = [Disk((-2.0, 0.0)), Disk((2.0, 0.0))]
    vol_cfg = IntegratorConfig(int(cfg.get("volume_steps_per_unit", 50)), integ.guard)
    vc = volume_comparison(first, disks, mc, seed, vol_cfg)
    target = lambda X: np.stack([np.exp(X[:, 0]), X[:, 1]], axis=1)
    vt = volume_comparison(target, [Disk((2.0, 0.0)), Disk((-2.0, 0.0))], mc, seed)
    rows = [("program", "left", vc.volumes[0], vc.stderrs[0]), ("program", "right", vc.volumes[1], vc.stderrs[1]),
            ("target", "right", vt.volumes[0], vt.stderrs[0]), ("target", "left", vt.volumes[1], vt.stderrs[1])]
    write_csv(out / "volumes.csv", ["map", "disk", "volume", "stderr"], rows)
    return {
        "max_spread": max(s for _, s, _ in spreads),
        "program_volumes_agree": vc.agree(3.0),
        "target_ratio": vt.ratio,
        "target_ratio_stderr": vt.ratio_stderr(),
        "e4": math.exp(4.0),
        "target_ratio_consistent": abs(vt.ratio - math.exp(4.0)) <= 3.0 * vt.ratio_stderr(),
    }


def run_approx(cfg, out):
    spec = cfg["activation"]
    act = F.Activation.from_dict(spec if isinstance(spec, dict) else {"name": spec})
    box = parse_box(cfg.get("box", {"lower": [-math.pi], "upper": [math.pi]}), 1)
    tol = float(cfg.get("tol", 0.05))
    rows = []
    for m in sorted({int(b) for b in cfg["budgets"]}):
        try:
            res = relu_from_sums(act, box, m, tol).residual
            ok = True
        except BudgetExceeded as err:
            res, ok = err.best_residual, False
        rows.append((m, res, ok))
    write_csv(out / "residual_curve.csv", ["terms", "residual", "within_tol"], rows)
    soft = []
    grid = np.linspace(-4.0, 4.0, 8001)
    for a in cfg.get("softplus", []):
        g, dev = relu_from_softplus(float(a))
        measured = float(np.max(np.abs(g(grid[:, None])[:, 0] - np.maximum(grid, 0.0))))
        soft.append((float(a), dev, measured))
    if soft:
        write_csv(out / "softplus.csv", ["a", "deviation", "measured"], soft)
    if not any(ok for _, _, ok in rows):
        best = min(r for _, r, _ in rows)
        raise BudgetExceeded(f"no budget reaches tol {tol:.3e}; best residual {best:.3e}", best)
    return {"residuals": {str(m): r for m, r, _ in rows}, "tol": tol,
            "best_within_tol": any(ok for _, _, ok in rows)}


def run_gronwall(cfg, out):
    d = int(cfg.get("d", 2))
    seed = int(cfg["seed"])
    tau = float(cfg.get("tau", 1.0))
    box = parse_box(cfg.get("box", [-1.0, 1.0]), d)
    trials = int(cfg.get("trials", 50))
    integ = integrator(cfg)
    relu = F.relu_field(d)
    rng = np.random.Generator(np.random.Philox(key=[seed, 5]))
    rows = []
    holds = True
    for a in cfg["sharpness"]:
        a = float(a)
        g, delta = relu_from_softplus(a, d)
        gb = gronwall_bound(relu, box, tau, delta)
        X = box.lower + rng.random((trials, d)) * (box.upper - box.lower)
        dev = np.max(np.abs(flow_map(g, tau, X, integ) - flow_map(relu, tau, X, integ)), axis=1)
        for k in range(trials):
            ok = bool(dev[k] <= gb.bound)
            holds &= ok
            rows.append((a, k, delta, gb.bound, float(dev[k]), ok))
    write_csv(out / "gronwall.csv", ["a", "trial", "delta", "bound", "measured", "holds"], rows)
    return {"all_hold": holds, "trials": len(rows)}


RUNNERS = {
    "convergence": run_convergence,
    "interpolate": run_interpolate,
    "rank": run_rank,
    "counterexample": run_counterexample,
    "approx-relu": run_approx,
    "gronwall": run_gronwall,
}


def run_config(cfg):
    """Run a validated config; returns ``(summary, output_dir, failures)``."""
    diags = validate_config(cfg)
    if diags:
        raise ConfigError("; ".join(diags))
    out = output_dir(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"output path {out} is not writable: {err}") from None
    summary = RUNNERS[cfg["kind"]](cfg, out)
    failures = _check_expect(cfg, summary)
    report = {"kind": cfg["kind"], "config_digest": config_digest(cfg), "config": cfg,
              "summary": summary, "expectations_met": not failures, "failures": failures}
    write_json(out / "report.json", report)
    return summary, out, failures
