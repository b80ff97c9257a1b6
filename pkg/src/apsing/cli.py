"""Command line runner: config parsing, pipelines, and artifact emission.

Usage: ``apsing <pipeline> --config <file> [--out <dir>] [--seed <int>]``

Pipelines: spectrum, fiber, balance, four-preimages, cusp, classify.
Each run writes report.json (the result), traces/*.csv (fiber traces and
sweeps), and manifest.json (config echo, versions, wall times). Exit codes:
0 success, 2 pipeline stage failure, 3 configuration error.
"""

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:          # python < 3.11
    import tomli as tomllib

from . import __version__
from ._cache import free_modes, operator_for
from .domain import Domain, GridFunction
from .errors import ApsingError, SchemaError, StageFailureError
from .fibers import fiber_critical_points, trace_fiber
from .nonlinearity import check_hypotheses, make_nonlinearity
from .sectors import balance_theta, endpoint_lambda, sector_coverage
from .singularity import (
    cusp_certificate,
    four_preimage_certificate,
    three_preimage_certificate,
)

PIPELINES = ("spectrum", "fiber", "balance", "four-preimages", "cusp", "classify")

TRACE_HEADER = ("t", "h", "lambda1", "newton_residual", "w_norm")


@dataclass
class RunConfig:
    pipeline: str
    domain: Domain
    nonlinearity: object = None
    out_dir: Path = Path("runs/out")
    seed: int = 0
    options: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def parse_config(path, pipeline=None, out=None, seed=None):
    """Load and validate a TOML config; raises SchemaError on any defect."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise SchemaError(f"config not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"config is not valid TOML: {exc}") from exc

    pipe = pipeline or raw.get("pipeline")
    if pipe not in PIPELINES:
        raise SchemaError(f"unknown pipeline {pipe!r}; expected one of {PIPELINES}")

    dom_block = raw.get("domain")
    if not isinstance(dom_block, dict):
        raise SchemaError("missing [domain] block")
    try:
        kind = dom_block["kind"]
        bc = dom_block["bc"]
        n = int(dom_block["n"])
        if kind == "interval":
            bounds = (float(dom_block["a"]), float(dom_block["b"]))
        elif kind == "rectangle":
            bounds = (
                float(dom_block["ax"]), float(dom_block["bx"]),
                float(dom_block["ay"]), float(dom_block["by"]),
            )
        else:
            raise SchemaError(f"unknown domain kind {kind!r}")
        domain = Domain(kind, bounds, bc, n)
    except SchemaError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"bad [domain] block: {exc}") from exc

    f = None
    if "nonlinearity" in raw:
        nl = dict(raw["nonlinearity"])
        family = nl.pop("family", None)
        if family is None:
            raise SchemaError("[nonlinearity] needs a 'family' key")
        nl.pop("window", None)
        try:
            f = make_nonlinearity(family, **nl)
        except (TypeError, ValueError, ApsingError) as exc:
            raise SchemaError(f"bad [nonlinearity] block: {exc}") from exc

    tolerances = dict(raw.get("tolerances", {}))
    for name, val in tolerances.items():
        if not (isinstance(val, (int, float)) and val > 0):
            raise SchemaError(f"tolerance {name!r} must be positive")

    cfg_seed = raw.get("seed", 0)
    cfg_out = raw.get("out", "runs/out")
    return RunConfig(
        pipeline=pipe,
        domain=domain,
        nonlinearity=f,
        out_dir=Path(out if out is not None else cfg_out),
        seed=int(seed if seed is not None else cfg_seed),
        options=dict(raw.get("options", {})),
        tolerances=tolerances,
        raw=raw,
    )


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_trace(trace, path):
    """Write a fiber trace as CSV with the published header."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for row in trace.rows():
                writer.writerow([repr(float(x)) for x in row])
    except OSError as exc:
        raise ApsingError(f"io-error writing {path}: {exc}") from exc
    return path


def emit_theta_sweep(L_val, R_val, domain, path, n_theta=41):
    """CSV of (theta, lambda1) pairs for a fixed two-valued level pair."""
    from .spectral import eigenpair_potential

    L = operator_for(domain)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_theta)
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("theta", "lambda1"))
            for th in thetas:
                cov = sector_coverage(domain, None, th)
                q = L_val * cov + R_val * (1.0 - cov)
                lam = eigenpair_potential(L, q, k=1).lam
                writer.writerow([repr(float(th)), repr(float(lam))])
    except OSError as exc:
        raise ApsingError(f"io-error writing {path}: {exc}") from exc
    return path


def _emit_nonlinearity_scan(f, domain, path, n=801):
    (mu1, _), (mu2, _) = free_modes(domain, 2)
    xs = np.linspace(f.window[0], f.window[1], n)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("x", "fp", "fpp", "fppp"))
        for x, a, b, c in zip(xs, f.d1(xs), f.d2(xs), f.d3(xs)):
            writer.writerow([repr(float(v)) for v in (x, a, b, c)])
    return mu1, mu2


def _base_report(config):
    return {
        "schema": "apsing.report.v1",
        "pipeline": config.pipeline,
        "seed": config.seed,
        "domain": config.domain.to_dict(),
        "nonlinearity": config.nonlinearity.to_dict() if config.nonlinearity else None,
        "tolerances": config.tolerances,
    }


def _run_spectrum(config, outdir, report):
    count = int(config.options.get("modes", 6))
    pairs = free_modes(config.domain, count)
    L = operator_for(config.domain)
    rows = []
    for k, (mu, psi) in enumerate(pairs, start=1):
        res = float(np.sqrt(L.w0) * np.linalg.norm(
            L.apply(psi.values) - mu * psi.values))
        rows.append({"k": k, "mu_k": mu, "residual": res})
    with open(outdir / "traces" / "spectrum.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("k", "mu_k", "residual"))
        for r in rows:
            writer.writerow([r["k"], repr(r["mu_k"]), repr(r["residual"])])
    report["results"] = {"modes": rows}
    if config.nonlinearity is not None:
        mu1, mu2 = _emit_nonlinearity_scan(
            config.nonlinearity, config.domain, outdir / "traces" / "nonlinearity.csv"
        )
        hyp = check_hypotheses(config.nonlinearity, mu1, mu2)
        report["results"]["hypotheses"] = hyp.to_dict()
        report["results"]["mu1"] = mu1
        report["results"]["mu2"] = mu2


def _run_fiber(config, outdir, report):
    f = config.nonlinearity
    if f is None:
        raise SchemaError("fiber pipeline needs a [nonlinearity] block")
    domain = config.domain
    L = operator_for(domain)
    t_lo = float(config.options.get("t_lo", -3.0))
    t_hi = float(config.options.get("t_hi", 3.0))
    z = GridFunction(np.zeros(domain.num_nodes), domain)
    trace = trace_fiber(z, t_lo, t_hi, f, L)
    crits = fiber_critical_points(trace, f, L)
    emit_trace(trace, outdir / "traces" / "fiber.csv")
    report["results"] = {
        "t_range": [t_lo, t_hi],
        "n_points": len(trace.points),
        "critical_ts": [t for t, _ in crits],
        "critical_heights": [p.h for _, p in crits],
    }


def _run_balance(config, outdir, report):
    domain = config.domain
    L_val = float(config.options.get("L", 5.0))
    R_val = float(config.options.get("R", 15.0))
    theta = balance_theta(L_val, R_val, domain)
    lam0, lam2pi = endpoint_lambda(L_val, R_val, domain)
    emit_theta_sweep(L_val, R_val, domain, outdir / "traces" / "theta_sweep.csv")
    from .spectral import eigenpair_potential

    cov = sector_coverage(domain, None, theta)
    q = L_val * cov + R_val * (1.0 - cov)
    lam = eigenpair_potential(operator_for(domain), q, k=1).lam
    report["results"] = {
        "L": L_val, "R": R_val, "theta": theta,
        "lambda_residual": lam,
        "lambda_at_0": lam0, "lambda_at_2pi": lam2pi,
    }


def _run_four(config, outdir, report):
    f = config.nonlinearity
    if f is None:
        raise SchemaError("four-preimages pipeline needs a [nonlinearity] block")
    tol = float(config.tolerances.get("preimage", 1e-8))
    cert = four_preimage_certificate(f, config.domain, seed=config.seed, tol=tol)
    if cert.trace is not None:
        emit_trace(cert.trace, outdir / "traces" / "fiber.csv")
    mu1, mu2 = _emit_nonlinearity_scan(
        f, config.domain, outdir / "traces" / "nonlinearity.csv"
    )
    report["results"] = {"certificate": cert.to_dict(), "mu1": mu1, "mu2": mu2}


def _run_cusp(config, outdir, report):
    f = config.nonlinearity
    if f is None:
        raise SchemaError("cusp pipeline needs a [nonlinearity] block")
    k = int(config.options.get("k", 1))
    route = config.options.get("route", "auto")
    cert = cusp_certificate(f, config.domain, k=k, route=route, seed=config.seed)
    mu1, mu2 = _emit_nonlinearity_scan(
        f, config.domain, outdir / "traces" / "nonlinearity.csv"
    )
    results = {"certificate": cert.to_dict(), "mu1": mu1, "mu2": mu2}
    if cert.kind == "Cusp":
        with open(outdir / "traces" / "census.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("s", "count"))
            for s, c in cert.local_counts:
                writer.writerow([repr(float(s)), int(c)])
        if config.options.get("three_preimages", True):
            pre = three_preimage_certificate(f, config.domain, k=k,
                                             seed=config.seed, cert=cert)
            results["three_preimages"] = pre.to_dict()
    report["results"] = results


def _run_classify(config, outdir, report):
    src = config.options.get("input_report")
    if not src:
        raise SchemaError("classify pipeline needs options.input_report")
    try:
        with open(src) as fh:
            prior = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read input report: {exc}") from exc
    report["results"] = {"recheck": recheck_report(prior)}


def recheck_report(prior):
    """Re-validate a serialized certificate from its own data alone."""
    try:
        domain = Domain.from_dict(prior["domain"])
        f = make_nonlinearity(prior["nonlinearity"]["family"],
                              **prior["nonlinearity"]["params"])
        results = prior["results"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"report does not match schema: {exc}") from exc
    L = operator_for(domain)
    w0 = L.w0
    out = {"valid": True, "checks": []}

    def check(name, value, bound):
        ok = bool(value <= bound)
        out["checks"].append({"name": name, "value": float(value),
                              "bound": float(bound), "ok": ok})
        if not ok:
            out["valid"] = False

    cert = results.get("certificate", {})
    if "solutions" in cert:
        y = np.asarray(cert["y"], dtype=float)
        sols = [np.asarray(s, dtype=float) for s in cert["solutions"]]
        for i, s in enumerate(sols):
            res = np.sqrt(w0) * np.linalg.norm(L.apply(s) - f.value(s) - y)
            check(f"solution_{i}_residual", res, 1e-7)
        for i in range(len(sols)):
            for j in range(i + 1, len(sols)):
                dist = np.sqrt(w0) * np.linalg.norm(sols[i] - sols[j])
                sep = cert.get("separation_threshold", 0.0)
                ok = bool(dist >= sep)
                out["checks"].append({"name": f"distance_{i}_{j}",
                                      "value": float(dist),
                                      "bound": float(sep), "ok": ok})
                if not ok:
                    out["valid"] = False
    elif "u" in cert:
        u = GridFunction(np.asarray(cert["u"], dtype=float), domain)
        from .spectral import functional_values

        fv = functional_values(u, f, k=int(cert.get("k", 1)), L=L)
        tol = cert.get("tolerances", {}).get("tol", 1e-8)
        check("lambda", abs(fv.lam), 10 * tol)
        if cert.get("kind") in ("Cusp", "RegularNonfold", "CollapsingCandidate"):
            check("delta", abs(fv.delta), 10 * tol)
    return out


_RUNNERS = {
    "spectrum": _run_spectrum,
    "fiber": _run_fiber,
    "balance": _run_balance,
    "four-preimages": _run_four,
    "cusp": _run_cusp,
    "classify": _run_classify,
}


def run(config):
    """Execute a pipeline; returns the exit code and writes artifacts."""
    outdir = config.out_dir
    t_start = time.time()
    report = _base_report(config)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "traces").mkdir(exist_ok=True)
        _RUNNERS[config.pipeline](config, outdir, report)
    except StageFailureError as exc:
        report["failure"] = {
            "stage": exc.stage,
            "message": str(exc),
            "diagnostics": _jsonable(exc.diagnostics),
        }
        _json_dump(report, outdir / "report.json")
        _write_manifest(config, outdir, t_start, status=2)
        return 2
    except ApsingError as exc:
        report["failure"] = {"stage": config.pipeline, "message": str(exc)}
        _json_dump(report, outdir / "report.json")
        _write_manifest(config, outdir, t_start, status=2)
        return 2
    _json_dump(report, outdir / "report.json")
    _write_manifest(config, outdir, t_start, status=0)
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


def _write_manifest(config, outdir, t_start, status):
    import scipy

    manifest = {
        "config": _jsonable(config.raw),
        "pipeline": config.pipeline,
        "seed": config.seed,
        "status": status,
        "versions": {
            "apsing": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": time.time() - t_start,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _json_dump(manifest, outdir / "manifest.json")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="apsing",
        description="Pipelines over discretized semilinear elliptic operators",
    )
    parser.add_argument("pipeline", choices=PIPELINES)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        config = parse_config(args.config, pipeline=args.pipeline,
                              out=args.out, seed=args.seed)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    code = run(config)
    if code != 0:
        print(f"pipeline failed (exit {code}); see report.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
