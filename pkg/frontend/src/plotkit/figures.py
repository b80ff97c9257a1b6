"""Render figures from the published artifact schemas.

Four figure kinds, one per artifact family:

* ``fiber``: height profile h(t) with the eigenvalue overlay from a fiber
  trace CSV; a four-preimage report marks the certified level and crossings.
* ``sweep``: the balancing curve lambda1(theta) from an angle-sweep CSV with
  its zero crossing.
* ``nonlinearity``: the slope diagram (x, f'(x)) from a scan CSV with the
  free eigenvalue lines and hypothesis witnesses from the report.
* ``census``: preimage counts across the cusp sweep, annotating the
  one-to-three transition.

Inputs are read-only and rendering is idempotent. Only the CSV/JSON schemas
published by the run tool are consumed; there is no import-level coupling to
the solver package.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class PlotkitError(Exception):
    """Base class for rendering errors."""


class MissingFileError(PlotkitError):
    pass


class SchemaMismatchError(PlotkitError):
    pass


KINDS = ("fiber", "sweep", "nonlinearity", "census")

_CSV_HEADERS = {
    "fiber": ["t", "h", "lambda1", "newton_residual", "w_norm"],
    "sweep": ["theta", "lambda1"],
    "nonlinearity": ["x", "fp", "fpp", "fppp"],
    "census": ["s", "count"],
}


@dataclass(frozen=True)
class FigureSpec:
    """What to draw, from which inputs, into which image file."""

    kind: str
    inputs: tuple
    output: Path
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaMismatchError(f"unknown figure kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "output", Path(self.output))


def _read_csv(path, expected_header):
    if not Path(path).exists():
        raise MissingFileError(f"input not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != expected_header:
        raise SchemaMismatchError(
            f"{path}: expected header {expected_header}, got {rows[:1]}"
        )
    if len(rows) < 2:
        raise SchemaMismatchError(f"{path}: no data rows")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise SchemaMismatchError(f"{path}: non-numeric cell: {exc}") from exc


def _read_report(path):
    if not Path(path).exists():
        raise MissingFileError(f"input not found: {path}")
    try:
        with open(path) as fh:
            report = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaMismatchError(f"{path}: not valid JSON: {exc}") from exc
    if report.get("schema") != "apsing.report.v1":
        raise SchemaMismatchError(f"{path}: unknown report schema")
    return report


def _split_inputs(spec):
    csvs = [p for p in spec.inputs if p.suffix.lower() == ".csv"]
    reports = [p for p in spec.inputs if p.suffix.lower() == ".json"]
    return csvs, reports


def _render_fiber(spec, ax):
    csvs, reports = _split_inputs(spec)
    if not csvs:
        raise SchemaMismatchError("fiber figure needs a trace CSV input")
    data = _read_csv(csvs[0], _CSV_HEADERS["fiber"])
    t, h, lam = data[:, 0], data[:, 1], data[:, 2]
    ax.plot(t, h, color="tab:blue", lw=1.8, label="height h(t)")
    ax.set_xlabel("fiber parameter t")
    ax.set_ylabel("height", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(t, lam, color="tab:red", lw=1.0, alpha=0.8, label="lambda1")
    ax2.axhline(0.0, color="tab:red", lw=0.6, ls=":")
    ax2.set_ylabel("lowest eigenvalue", color="tab:red")

    if reports:
        report = _read_report(reports[0])
        cert = report.get("results", {}).get("certificate", {})
        h_star = cert.get("h_star")
        ts = cert.get("meta", {}).get("t_crossings", cert.get("ts", []))
        if h_star is not None:
            ax.axhline(h_star, color="k", lw=0.8, ls="--",
                       label=f"level {h_star:.3f}")
            inside = [tc for tc in ts if t.min() <= tc <= t.max()]
            ax.plot(inside, [h_star] * len(inside), "ko", ms=6, mfc="none",
                    label=f"{len(inside)} crossings")
    ax.legend(loc="lower center", fontsize=8)
    ax.set_title("fiber height profile")


def _render_sweep(spec, ax):
    csvs, reports = _split_inputs(spec)
    if not csvs:
        raise SchemaMismatchError("sweep figure needs a theta-sweep CSV input")
    data = _read_csv(csvs[0], _CSV_HEADERS["sweep"])
    th, lam = data[:, 0], data[:, 1]
    ax.plot(th, lam, "o-", ms=3, lw=1.2, color="tab:green")
    ax.axhline(0.0, color="k", lw=0.8)
    # mark the zero crossing (the balancing angle)
    sign_change = np.nonzero(lam[:-1] * lam[1:] < 0)[0]
    theta0 = None
    if reports:
        theta0 = _read_report(reports[0]).get("results", {}).get("theta")
    if theta0 is None and len(sign_change):
        i = sign_change[0]
        theta0 = th[i] + (th[i + 1] - th[i]) * lam[i] / (lam[i] - lam[i + 1])
    if theta0 is not None:
        ax.axvline(theta0, color="tab:orange", ls="--", lw=1.0)
        ax.annotate(f"balanced at {theta0:.4f}", (theta0, 0.0),
                    textcoords="offset points", xytext=(6, 10), fontsize=8)
    ax.set_xlabel("sector angle theta")
    ax.set_ylabel("lowest eigenvalue")
    ax.set_title("eigenvalue vs sector angle")


def _render_nonlinearity(spec, ax):
    csvs, reports = _split_inputs(spec)
    if not csvs or not reports:
        raise SchemaMismatchError(
            "nonlinearity figure needs a scan CSV and a report JSON"
        )
    data = _read_csv(csvs[0], _CSV_HEADERS["nonlinearity"])
    report = _read_report(reports[0])
    x, fp = data[:, 0], data[:, 1]
    ax.plot(x, fp, color="tab:blue", lw=1.6, label="slope f'(x)")
    results = report.get("results", {})
    mu1, mu2 = results.get("mu1"), results.get("mu2")
    if mu1 is not None:
        ax.axhline(mu1, color="tab:red", lw=0.9, ls="--", label="mu1")
    if mu2 is not None and mu2 <= 1.2 * np.max(fp):
        ax.axhline(mu2, color="tab:purple", lw=0.9, ls=":", label="mu2")
    wit = results.get("hypotheses", {}).get("witnesses", {})
    markers = {"x_star": "v", "x_mu": "s", "y_mu": "D"}
    for name, marker in markers.items():
        if name in wit:
            xv = wit[name]
            yv = np.interp(xv, x, fp)
            ax.plot([xv], [yv], marker, color="k", ms=7, mfc="none",
                    label=name)
    ax.set_xlabel("x")
    ax.set_ylabel("f'(x)")
    ax.legend(fontsize=8)
    ax.set_title("slope diagram with witnesses")


def _census_rows(spec):
    csvs, reports = _split_inputs(spec)
    if csvs:
        data = _read_csv(csvs[0], _CSV_HEADERS["census"])
        return [(float(s), int(c)) for s, c in data]
    if reports:
        report = _read_report(reports[0])
        cert = report.get("results", {}).get("certificate", {})
        rows = cert.get("census", {}).get("rows") or cert.get("local_counts")
        if rows:
            if isinstance(rows[0], dict):
                return [(float(r["s"]), int(r["count"])) for r in rows]
            return [(float(s), int(c)) for s, c in rows]
    raise SchemaMismatchError("census figure needs census rows (CSV or report)")


def _render_census(spec, ax):
    rows = sorted(_census_rows(spec))
    s = np.array([r[0] for r in rows])
    counts = np.array([r[1] for r in rows])
    width = 0.8 * np.min(np.diff(np.unique(s))) if len(s) > 1 else 0.1
    colors = ["tab:blue" if c == 1 else "tab:orange" if c == 3 else "tab:gray"
              for c in counts]
    ax.bar(s, counts, width=width, color=colors, edgecolor="k", lw=0.5)
    # annotate the transition between the single and triple sides
    jumps = np.nonzero(np.diff(counts) != 0)[0]
    for j in jumps:
        s_mid = 0.5 * (s[j] + s[j + 1])
        ax.axvline(s_mid, color="k", ls="--", lw=0.9)
        ax.annotate(f"{counts[j]} to {counts[j + 1]}",
                    (s_mid, max(counts) + 0.15), ha="center", fontsize=9)
    ax.set_ylim(0, max(counts) + 0.8)
    ax.set_xlabel("sweep coordinate s")
    ax.set_ylabel("local preimage count")
    ax.set_title("preimage census across the transition")


_RENDERERS = {
    "fiber": _render_fiber,
    "sweep": _render_sweep,
    "nonlinearity": _render_nonlinearity,
    "census": _render_census,
}


def render(spec):
    """Draw the figure described by the spec and write the image file."""
    fig, ax = plt.subplots(figsize=spec.style.get("figsize", (7.0, 4.2)))
    try:
        _RENDERERS[spec.kind](spec, ax)
        spec.output.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.output, dpi=spec.style.get("dpi", 130),
                    bbox_inches="tight")
    finally:
        plt.close(fig)
    return spec.output
