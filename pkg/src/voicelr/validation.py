"""System validation: log-likelihood-ratio cost and Tippett curves.

Log LRs are held in natural log internally; Tippett output switches to
log10 for display, matching forensic reporting convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN2 = np.log(2.0)
LN10 = np.log(10.0)


class ValidationError(Exception):
    pass


@dataclass(frozen=True)
class TrialSet:
    """Natural-log LRs of same-speaker and different-speaker trials."""

    same_log_lrs: np.ndarray
    diff_log_lrs: np.ndarray

    def __post_init__(self):
        same = np.asarray(self.same_log_lrs, dtype=np.float64)
        diff = np.asarray(self.diff_log_lrs, dtype=np.float64)
        object.__setattr__(self, "same_log_lrs", same)
        object.__setattr__(self, "diff_log_lrs", diff)
        if len(same) < 1 or len(diff) < 1:
            raise ValidationError("both trial classes must be nonempty")
        if not (np.all(np.isfinite(same)) and np.all(np.isfinite(diff))):
            raise ValidationError("non-finite log LR in trial set")

    @property
    def n_same(self) -> int:
        return len(self.same_log_lrs)

    @property
    def n_diff(self) -> int:
        return len(self.diff_log_lrs)


@dataclass(frozen=True)
class ValidationReport:
    cllr: float
    tippett_same: list  # (log10 LR, cumulative proportion <= x), rising right
    tippett_diff: list  # (log10 LR, proportion >= x), rising left
    n_same: int
    n_diff: int
    system_id: str = ""

    def summary_line(self) -> str:
        return f"Cllr={self.cllr:.6f} Ns={self.n_same} Nd={self.n_diff}"


def compute_cllr(trials: TrialSet) -> float:
    """Mean base-2 penalty, equally weighting the two trial classes.

    Same-speaker trials pay log2(1 + 1/LR), different-speaker trials pay
    log2(1 + LR); both are evaluated with the stable softplus identity. A
    system that always answers LR = 1 scores exactly 1.
    """
    same_penalties = np.logaddexp(0.0, -trials.same_log_lrs) / LN2
    diff_penalties = np.logaddexp(0.0, trials.diff_log_lrs) / LN2
    return float(0.5 * (same_penalties.mean() + diff_penalties.mean()))


def tippett_points(trials: TrialSet, system_id: str = "") -> ValidationReport:
    """Empirical quantile curves of both trial classes, x-axis in log10.

    The same-speaker curve gives P(log LR <= x); the different-speaker
    curve gives P(log LR >= x).
    """
    same = np.sort(trials.same_log_lrs) / LN10
    diff = np.sort(trials.diff_log_lrs) / LN10
    n_s, n_d = len(same), len(diff)
    same_curve = [(float(v), (i + 1) / n_s) for i, v in enumerate(same)]
    diff_curve = [(float(v), (n_d - i) / n_d) for i, v in enumerate(diff)]
    return ValidationReport(
        cllr=compute_cllr(trials),
        tippett_same=same_curve,
        tippett_diff=diff_curve,
        n_same=n_s,
        n_diff=n_d,
        system_id=system_id,
    )


def _step_path(points: list, x_lo: float, x_hi: float, rising_right: bool) -> list:
    """Expand curve points into step-line vertices spanning [x_lo, x_hi]."""
    vertices = []
    if rising_right:
        level = 0.0
        vertices.append((x_lo, level))
        for x, p in points:
            vertices.append((x, level))
            vertices.append((x, p))
            level = p
        vertices.append((x_hi, level))
    else:
        level = 1.0
        vertices.append((x_lo, level))
        for x, p in points:  # points ascending in x, proportions falling
            vertices.append((x, level))
            vertices.append((x, p))
            level = p
        vertices.append((x_hi, level))
    return vertices


def render_tippett_svg(report: ValidationReport) -> str:
    """Deterministic SVG of the two step curves with axes and a legend.

    Byte-identical output for identical reports: all coordinates use fixed
    4-decimal formatting and no timestamps or randomness are embedded.
    """
    width, height = 640.0, 480.0
    margin = 60.0
    xs = [x for x, _ in report.tippett_same] + [x for x, _ in report.tippett_diff]
    x_lo, x_hi = min(xs), max(xs)
    span = x_hi - x_lo
    pad = 0.5 if span == 0 else 0.08 * span
    x_lo, x_hi = x_lo - pad, x_hi + pad

    def to_px(x: float, p: float) -> tuple[float, float]:
        px = margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)
        py = height - margin - p * (height - 2 * margin)
        return px, py

    def polyline(vertices: list, color: str, dash: str = "") -> str:
        coords = " ".join(f"{px:.4f},{py:.4f}" for px, py in (to_px(x, p) for x, p in vertices))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        return (
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5"'
            f'{dash_attr} points="{coords}"/>'
        )

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{margin:.4f}" y1="{height - margin:.4f}" x2="{width - margin:.4f}" '
        f'y2="{height - margin:.4f}" stroke="black" stroke-width="1"/>',
        f'<line x1="{margin:.4f}" y1="{margin:.4f}" x2="{margin:.4f}" '
        f'y2="{height - margin:.4f}" stroke="black" stroke-width="1"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x_val = x_lo + frac * (x_hi - x_lo)
        px, py = to_px(x_val, 0.0)
        lines.append(
            f'<text x="{px:.4f}" y="{height - margin + 20:.4f}" font-size="11" '
            f'text-anchor="middle">{x_val:.2f}</text>'
        )
        _, py = to_px(x_lo, frac)
        lines.append(
            f'<text x="{margin - 8:.4f}" y="{py + 4:.4f}" font-size="11" '
            f'text-anchor="end">{frac:.2f}</text>'
        )
    lines.append(
        f'<text x="{width / 2:.4f}" y="{height - 12:.4f}" font-size="13" '
        'text-anchor="middle">log10 likelihood ratio</text>'
    )
    lines.append(
        f'<text x="16" y="{height / 2:.4f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {height / 2:.4f})">cumulative proportion</text>'
    )
    lines.append(polyline(_step_path(report.tippett_same, x_lo, x_hi, True), "#d62728"))
    lines.append(polyline(_step_path(report.tippett_diff, x_lo, x_hi, False), "#1f77b4", "5,3"))
    legend_y = margin + 10
    lines.append(
        f'<text x="{width - margin - 4:.4f}" y="{legend_y:.4f}" font-size="12" '
        f'text-anchor="end" fill="#d62728">same-speaker (rising right)</text>'
    )
    lines.append(
        f'<text x="{width - margin - 4:.4f}" y="{legend_y + 16:.4f}" font-size="12" '
        f'text-anchor="end" fill="#1f77b4">different-speaker (rising left)</text>'
    )
    if report.system_id:
        lines.append(
            f'<text x="{margin:.4f}" y="{margin - 10:.4f}" font-size="12">'
            f"{report.system_id}: {report.summary_line()}</text>"
        )
    else:
        lines.append(
            f'<text x="{margin:.4f}" y="{margin - 10:.4f}" font-size="12">'
            f"{report.summary_line()}</text>"
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
