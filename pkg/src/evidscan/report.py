"""Evaluation report serialization: CSV bundle, summary text, minimal SVG."""

from __future__ import annotations

import os

import numpy as np

from .metrics import EvalReport

__all__ = ["write_report_bundle", "summary_text", "risk_coverage_svg", "confidence_split_svg"]


def summary_text(r: EvalReport) -> str:
    lines = [
        f"samples          {r.confusion.n}",
        f"overall_accuracy {r.oa:.4f}",
        f"macro_precision  {r.precision:.4f}",
        f"macro_sensitivity {r.sensitivity:.4f}",
        f"macro_specificity {r.specificity:.4f}",
        f"macro_f1         {r.f1:.4f}",
        f"macro_auc        {r.auc:.4f}",
        f"ece              {r.ece:.4f}",
    ]
    if r.excluded:
        lines.append(f"excluded_classes {','.join(map(str, r.excluded))}")
    if "gap" in r.confidence_split:
        cs = r.confidence_split
        lines.append(f"confidence_median_correct   {cs['correct_median']:.4f}")
        lines.append(f"confidence_median_incorrect {cs['incorrect_median']:.4f}")
        lines.append(f"confidence_gap              {cs['gap']:.4f}")
    return "\n".join(lines) + "\n"


def write_report_bundle(r: EvalReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(summary_text(r))
    with open(os.path.join(out_dir, "confusion.csv"), "w", encoding="utf-8", newline="\n") as f:
        k = r.confusion.counts.shape[0]
        f.write("true\\pred," + ",".join(map(str, range(k))) + "\n")
        for i in range(k):
            f.write(f"{i}," + ",".join(map(str, r.confusion.counts[i])) + "\n")
    with open(os.path.join(out_dir, "per_class.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("class,support,precision,sensitivity\n")
        for row in r.per_class:
            f.write(f"{row['class']},{row['support']},{row['precision']:.6f},{row['sensitivity']:.6f}\n")
    with open(os.path.join(out_dir, "risk_coverage.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("coverage,selective_accuracy,mean_risk\n")
        for cov, acc, risk in r.risk_coverage:
            f.write(f"{cov:.2f},{acc:.6f},{risk:.6f}\n")
    with open(os.path.join(out_dir, "confidence_split.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("stat,value\n")
        for key, val in r.confidence_split.items():
            f.write(f"{key},{val:.6f}\n")
    with open(os.path.join(out_dir, "risk_coverage.svg"), "w", encoding="utf-8", newline="\n") as f:
        f.write(risk_coverage_svg(r))
    with open(os.path.join(out_dir, "confidence_split.svg"), "w", encoding="utf-8", newline="\n") as f:
        f.write(confidence_split_svg(r))


_W, _H, _PAD = 480, 320, 48


def _svg_open() -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">\n<rect width="{_W}" height="{_H}" fill="white"/>\n')


def _axes(title: str, xlabel: str, ylabel: str) -> str:
    return (
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>\n'
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>\n'
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>\n'
        f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" font-size="12">{xlabel}</text>\n'
        f'<text x="14" y="{_H // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_H // 2})">{ylabel}</text>\n'
    )


def _xy(x_frac: float, y_frac: float) -> tuple[float, float]:
    x = _PAD + x_frac * (_W - 2 * _PAD)
    y = (_H - _PAD) - y_frac * (_H - 2 * _PAD)
    return x, y


def risk_coverage_svg(r: EvalReport) -> str:
    pts = []
    for cov, acc, _ in sorted(r.risk_coverage):
        x, y = _xy(cov, acc)
        pts.append(f"{x:.1f},{y:.1f}")
    return (
        _svg_open()
        + _axes("Selective accuracy vs coverage", "coverage", "selective accuracy")
        + f'<polyline points="{" ".join(pts)}" fill="none" stroke="steelblue" stroke-width="2"/>\n'
        + "".join(f'<circle cx="{p.split(",")[0]}" cy="{p.split(",")[1]}" r="3" fill="steelblue"/>\n' for p in pts)
        + "</svg>\n"
    )


def _box(x_center: float, q1: float, med: float, q3: float, color: str, label: str) -> str:
    bw = 60
    x0 = x_center - bw / 2
    _, y1 = _xy(0, q1)
    _, ym = _xy(0, med)
    _, y3 = _xy(0, q3)
    return (
        f'<rect x="{x0:.1f}" y="{y3:.1f}" width="{bw}" height="{max(y1 - y3, 1):.1f}" '
        f'fill="{color}" fill-opacity="0.4" stroke="{color}"/>\n'
        f'<line x1="{x0:.1f}" y1="{ym:.1f}" x2="{x0 + bw:.1f}" y2="{ym:.1f}" stroke="{color}" stroke-width="2"/>\n'
        f'<text x="{x_center:.1f}" y="{_H - _PAD + 16}" text-anchor="middle" font-size="12">{label}</text>\n'
    )


def confidence_split_svg(r: EvalReport) -> str:
    cs = r.confidence_split
    body = _svg_open() + _axes("Prediction confidence by correctness", "", "confidence")
    if "correct_median" in cs:
        body += _box(_PAD + (_W - 2 * _PAD) * 0.3, cs["correct_q1"], cs["correct_median"], cs["correct_q3"],
                     "seagreen", "correct")
    if "incorrect_median" in cs:
        body += _box(_PAD + (_W - 2 * _PAD) * 0.7, cs["incorrect_q1"], cs["incorrect_median"], cs["incorrect_q3"],
                     "indianred", "incorrect")
    return body + "</svg>\n"
