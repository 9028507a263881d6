"""CSV tables, line-plot SVGs and structured text reports for campaign results."""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from app.db.storage import write_csv
from app.models.models import AuditReport, ConvergenceReport, CorpusReport, RenormalizationReport, StochasticReport
from app.services.energetics import LEDGER_COLUMNS, EnergyLedger

# Configure logging
logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
COLORS = ("#1b7837", "#762a83", "#2166ac", "#b2182b", "#e08214", "#4d4d4d")

templates = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    autoescape=select_autoescape(["svg", "xml", "svg.j2"]),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _ticks(lo: float, hi: float, start: float, stop: float, count: int = 5) -> List[Dict[str, object]]:
    ticks = []
    for value in np.linspace(lo, hi, count):
        frac = 0.0 if hi == lo else (value - lo) / (hi - lo)
        ticks.append({"pos": round(start + frac * (stop - start), 2), "label": f"{value:.3g}"})
    return ticks


def render_line_plot(title: str, x_label: str, y_label: str,
                     series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
                     log_y: bool = False, width: int = 640, height: int = 420) -> str:
    """
    Render series as an SVG line plot.

    Args:
        title: Plot title
        x_label: Label of the horizontal axis
        y_label: Label of the vertical axis
        series: Mapping name -> (xs, ys); non-finite points are dropped
        log_y: Plot log2 of y (non-positive values dropped)

    Returns:
        SVG document text
    """
    left, right, top, bottom = 70, width - 20, 35, height - 45
    cleaned = {}
    for name, (xs, ys) in series.items():
        points = []
        for x, y in zip(xs, ys):
            if log_y:
                y = math.log2(y) if y > 0 else float("nan")
            if math.isfinite(x) and math.isfinite(y):
                points.append((float(x), float(y)))
        cleaned[name] = points
    all_points = [pt for pts in cleaned.values() for pt in pts] or [(0.0, 0.0), (1.0, 1.0)]
    x_lo, x_hi = min(p[0] for p in all_points), max(p[0] for p in all_points)
    y_lo, y_hi = min(p[1] for p in all_points), max(p[1] for p in all_points)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1, y_hi + 1

    def to_px(pt):
        px = left + (pt[0] - x_lo) / (x_hi - x_lo) * (right - left)
        py = bottom - (pt[1] - y_lo) / (y_hi - y_lo) * (bottom - top)
        return round(px, 2), round(py, 2)

    rendered = []
    for i, (name, pts) in enumerate(cleaned.items()):
        pixels = [to_px(pt) for pt in pts]
        rendered.append({
            "name": name, "color": COLORS[i % len(COLORS)], "markers": pixels,
            "points": " ".join(f"{px},{py}" for px, py in pixels),
        })
    return templates.get_template("line_plot.svg.j2").render(
        title=title, x_label=x_label, y_label=y_label, width=width, height=height,
        left=left, right=right, top=top, bottom=bottom, series=rendered,
        x_ticks=_ticks(x_lo, x_hi, left, right), y_ticks=_ticks(y_lo, y_hi, bottom, top),
    )


def render_report(title: str, fields: Sequence[Tuple[str, object]], tables: Sequence[Dict[str, object]] = ()) -> str:
    return templates.get_template("report.txt.j2").render(title=title, fields=fields, tables=tables)


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _emit_convergence(report: ConvergenceReport, out: Path, stem: str) -> List[Path]:
    rows = [(k, e, report.ladder[k + 1], g, g2) for k, (e, g, g2)
            in enumerate(zip(report.ladder, report.gaps, report.l2_gaps))]
    csv_path = out / f"{stem}.csv"
    write_csv(csv_path, ("k", "eps_k", "eps_k1", "gap", "l2_gap"), rows)
    ks = list(range(len(report.gaps)))
    svg = render_line_plot(f"Ladder gaps in {report.norm_label}", "k", "log2 gap",
                           {report.norm_label: (ks, report.gaps), "L2 weighted": (ks, report.l2_gaps)}, log_y=True)
    return [csv_path, _write_text(out / f"{stem}.svg", svg)]


def _emit_renormalization(report: RenormalizationReport, out: Path, stem: str) -> List[Path]:
    rows = [(k, report.ladder[k], report.ladder[k + 1], c, u) for k, (c, u)
            in enumerate(zip(report.corrected_gaps, report.uncorrected_gaps))]
    csv_path = out / f"{stem}.csv"
    write_csv(csv_path, ("k", "eps_k", "eps_k1", "corrected_gap", "uncorrected_gap"), rows)
    ks = list(range(len(report.corrected_gaps)))
    svg = render_line_plot("Phase-corrected vs uncorrected ladder", "k", "log2 gap",
                           {"corrected": (ks, report.corrected_gaps), "uncorrected": (ks, report.uncorrected_gaps)},
                           log_y=True)
    return [csv_path, _write_text(out / f"{stem}.svg", svg)]


def stochastic_text(report: StochasticReport) -> str:
    fields = [
        ("seed", report.seed), ("realizations", report.realizations), ("r", _fmt(report.r)),
        ("delta", _fmt(report.delta)), ("alpha", _fmt(report.alpha)), ("a", _fmt(report.a)),
        ("exp weight sup (median)", _fmt(report.exp_sup_median)), ("exp weight sup (max)", _fmt(report.exp_sup_max)),
        ("c_eps slope", "n/a" if report.c_eps_slope is None else _fmt(report.c_eps_slope)),
        ("c_eps r2", "n/a" if report.c_eps_r2 is None else _fmt(report.c_eps_r2)),
        ("passed", report.passed),
    ] + [(f"rate {name}", "n/a" if value is None else _fmt(value)) for name, value in sorted(report.rates.items())]
    per_eps = {
        "name": "per eps",
        "columns": ("eps", "c_eps", "c_eps_mc", "c_eps_mc_se", "wick_mean", "wick_se", "grad_ratio", "wick_lr_ratio"),
        "rows": [[_fmt(x) for x in row] for row in zip(
            report.eps_list, report.c_eps, report.c_eps_mc, report.c_eps_mc_se,
            report.wick_mean, report.wick_se, report.grad_ratio, report.wick_lr_ratio)],
    }
    per_pair = {
        "name": "consecutive pairs (median)",
        "columns": ("eps_k", "eps_k1", "wick_gap", "y_gap", "potential_gap", "exp_gap"),
        "rows": [[_fmt(x) for x in row] for row in zip(
            report.eps_list, report.eps_list[1:], report.wick_gaps, report.y_gaps,
            report.potential_gaps, report.exp_gaps)],
    }
    return render_report("Stochastic bounds", fields, [per_eps, per_pair])


def _emit_stochastic(report: StochasticReport, out: Path, stem: str) -> List[Path]:
    csv_path = out / f"{stem}.csv"
    write_csv(csv_path, ("eps", "abs_log_eps", "c_eps", "c_eps_mc", "grad_ratio"),
              [(e, abs(math.log(e)), c, m, g) for e, c, m, g
               in zip(report.eps_list, report.c_eps, report.c_eps_mc, report.grad_ratio)])
    x = [abs(math.log(e)) for e in report.eps_list]
    svg = render_line_plot("Wick constant", "|ln eps|", "c_eps",
                           {"Plancherel": (x, report.c_eps), "Monte Carlo": (x, report.c_eps_mc)})
    return [csv_path, _write_text(out / f"{stem}.svg", svg), _write_text(out / f"{stem}.txt", stochastic_text(report))]


def _emit_audit(report: AuditReport, out: Path, stem: str) -> List[Path]:
    csv_path = out / f"{stem}.csv"
    write_csv(csv_path, ("time", "normalized_residual"), zip(report.times, report.residuals))
    fields = [("lambda", _fmt(report.lam)), ("p", _fmt(report.p)), ("dt", _fmt(report.dt)),
              ("E(0)", _fmt(report.initial_energy)), ("max residual", _fmt(report.max_residual)),
              ("max residual at 2dt", "n/a" if report.coarse_max_residual is None else _fmt(report.coarse_max_residual)),
              ("order", "n/a" if report.order is None else _fmt(report.order)), ("passed", report.passed)]
    return [csv_path, _write_text(out / f"{stem}.txt", render_report("Modified energy audit", fields))]


def _emit_corpus(report: CorpusReport, out: Path, stem: str) -> List[Path]:
    csv_path = out / f"{stem}.csv"
    write_csv(csv_path, ("member", "value"), enumerate(report.values))
    fields = [("witness", report.name), ("seed", report.seed), ("size", report.size),
              ("n", report.points_per_side), ("min", _fmt(report.minimum)), ("max", _fmt(report.maximum)),
              ("median", _fmt(report.median))]
    return [csv_path, _write_text(out / f"{stem}.txt", render_report("Corpus witness", fields))]


def _emit_ledger(ledger: EnergyLedger, out: Path, stem: str) -> List[Path]:
    csv_path = out / f"{stem}.csv"
    write_csv(csv_path, LEDGER_COLUMNS, (row.values() for row in ledger.rows))
    t = ledger.column("time")
    svg = render_line_plot("Energy ledger", "t", "value", {
        "mass": (t, ledger.column("mass")), "E1": (t, ledger.column("h1_energy")),
        "E modified": (t, ledger.column("modified_energy")),
    })
    return [csv_path, _write_text(out / f"{stem}.svg", svg)]


EMITTERS = (
    (ConvergenceReport, "convergence", _emit_convergence),
    (RenormalizationReport, "renormalization", _emit_renormalization),
    (StochasticReport, "stochastic", _emit_stochastic),
    (AuditReport, "audit", _emit_audit),
    (CorpusReport, "corpus", _emit_corpus),
    (EnergyLedger, "ledger", _emit_ledger),
)


def emit_results(reports: Sequence[object], out_dir: str, prefix: Optional[str] = None) -> List[Path]:
    """
    Write every report to out_dir.

    Args:
        reports: Report models or energy ledgers
        out_dir: Output directory (created on demand)
        prefix: Optional file-name prefix

    Returns:
        Paths of all written files, in report order
    """
    out = Path(out_dir)
    written: List[Path] = []
    counts: Dict[str, int] = {}
    for report in reports:
        for kind, name, emitter in EMITTERS:
            if isinstance(report, kind):
                index = counts.get(name, 0)
                counts[name] = index + 1
                stem = "_".join(part for part in (prefix, name, str(index) if index else "") if part)
                written.extend(emitter(report, out, stem))
                break
        else:
            raise TypeError(f"cannot emit results for {type(report).__name__}")
    if written:
        logger.info(f"Wrote {len(written)} result files to {out}")
    return written
