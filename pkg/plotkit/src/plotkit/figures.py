"""Deterministic figure rendering from experiment CSV files.

Five figure kinds cover the standard sweep plots:

* ``horizon-sweep``    - cost vs planning horizon, scaled around each
  scenario's minimum (J_s = J / min J)
* ``gamma-sweep``      - raw cost vs channel capacity
* ``tuning-ratio``     - grant-count ratio vs the priority parameter a
* ``sigma-traj``       - per-agent success probabilities from a trace file
* ``lossy-normalized`` - cost vs horizon normalized by the round-robin
  baseline at matching parameters

Rendering is a pure function of the input files: fixed style, fixed dpi,
pinned PNG metadata, so re-rendering reproduces identical bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("horizon-sweep", "gamma-sweep", "tuning-ratio", "sigma-traj", "lossy-normalized")

# Curve colors for the lossy comparison: planners that assume a perfect
# channel plot green, loss-aware planners blue, the baseline black.
BLIND_COLOR = "tab:green"
AWARE_COLOR = "tab:blue"
BASELINE_COLOR = "black"

_STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 4.5,
}


class MissingColumn(KeyError):
    """An input CSV lacks a column the figure kind requires."""


class EmptySelection(ValueError):
    """No input rows survive the figure's filters."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    normalize: str | None = None  # "scaled-around-minimum" | "baseline" | None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; pick one of {KINDS}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")
        if self.normalize not in (None, "scaled-around-minimum", "baseline"):
            raise ValueError(f"unknown normalization {self.normalize!r}")


def read_csv_columns(path: str | Path) -> dict[str, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {key: [r[key] for r in rows] for key in rows[0]}


def _require(cols: dict, names: tuple[str, ...], path) -> None:
    for name in names:
        if name not in cols:
            raise MissingColumn(f"{path}: missing column {name!r}")


def _load_rows(spec: FigureSpec, required: tuple[str, ...]) -> list[dict]:
    rows = []
    for path in spec.inputs:
        cols = read_csv_columns(path)
        if cols:
            _require(cols, required, path)
            n = len(next(iter(cols.values())))
            rows.extend({k: cols[k][i] for k in cols} for i in range(n))
    if not rows:
        raise EmptySelection(f"no rows in {spec.inputs}")
    return rows


def _group(rows: list[dict], key) -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(key(r), []).append(r)
    return out


def _finish(fig, ax, spec: FigureSpec, xlabel: str, ylabel: str):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.output, format="png", metadata={"Software": "plotkit"})
    plt.close(fig)


def sweep_curves(rows: list[dict], x_col: str, scale_min: bool) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-scenario (x, y) curves; y optionally scaled around the minimum."""
    curves = {}
    for name, grp in sorted(_group(rows, lambda r: r["scenario"]).items()):
        grp = sorted(grp, key=lambda r: float(r[x_col]))
        xs = np.array([float(r[x_col]) for r in grp])
        ys = np.array([float(r["j_mean"]) for r in grp])
        if scale_min:
            floor = ys.min()
            if floor <= 0:
                raise EmptySelection(f"scenario {name}: non-positive costs cannot be scaled")
            ys = ys / floor
        curves[name] = (xs, ys)
    return curves


def _sweep_figure(spec: FigureSpec, x_col: str, ylabel: str, scale_min: bool):
    rows = _load_rows(spec, ("scenario", x_col, "j_mean"))
    fig, ax = plt.subplots()
    for name, (xs, ys) in sweep_curves(rows, x_col, scale_min).items():
        ax.plot(xs, ys, marker="o", label=name)
    _finish(fig, ax, spec, x_col, ylabel)


def _tuning_figure(spec: FigureSpec):
    rows = _load_rows(spec, ("a", "ratio_r"))
    rows = sorted(rows, key=lambda r: float(r["a"]))
    xs = [float(r["a"]) for r in rows]
    ys = [float(r["ratio_r"]) for r in rows]
    fig, ax = plt.subplots()
    ax.plot(xs, ys, marker="s", color="tab:purple", label="grant ratio")
    _finish(fig, ax, spec, "priority scale a", "grants(2) / grants(1)")


def _sigma_figure(spec: FigureSpec):
    rows = _load_rows(spec, ("step", "agent", "sigma"))
    fig, ax = plt.subplots()
    for agent, grp in sorted(_group(rows, lambda r: int(float(r["agent"]))).items()):
        grp = sorted(grp, key=lambda r: float(r["step"]))
        ax.plot(
            [float(r["step"]) for r in grp],
            [float(r["sigma"]) for r in grp],
            label=f"agent {agent + 1}",
        )
    ax.set_ylim(0.0, 1.05)
    _finish(fig, ax, spec, "step", "success probability")


def _curve_color(scenario: str, strategy: str) -> str:
    if strategy == "baseline":
        return BASELINE_COLOR
    if "blind" in scenario:
        return BLIND_COLOR
    return AWARE_COLOR


def baseline_normalized_curves(
    rows: list[dict],
) -> dict[tuple[str, str], tuple[list[float], list[float]]]:
    """J / J_baseline per (scenario, strategy), matched on (N, gamma, a).

    Baseline rows normalize to exactly 1.0 by construction. When no
    baseline row shares a point's parameters, the baseline level of any
    matching-free point is reused (the round-robin cost is horizon
    independent)."""
    base = {
        (r["N"], r["gamma"], r["a"]): float(r["j_mean"])
        for r in rows
        if r["strategy"] == "baseline"
    }
    if not base:
        raise EmptySelection("baseline normalization needs rows with strategy == 'baseline'")
    baseline_any = next(iter(base.values()))
    curves = {}
    for (scen, strat), grp in sorted(_group(rows, lambda r: (r["scenario"], r["strategy"])).items()):
        grp = sorted(grp, key=lambda r: float(r["N"]))
        xs, ys = [], []
        for r in grp:
            ref = base.get((r["N"], r["gamma"], r["a"]), baseline_any)
            xs.append(float(r["N"]))
            ys.append(float(r["j_mean"]) / ref)
        curves[(scen, strat)] = (xs, ys)
    return curves


def _lossy_figure(spec: FigureSpec):
    rows = _load_rows(spec, ("scenario", "strategy", "N", "gamma", "a", "j_mean"))
    fig, ax = plt.subplots()
    for (scen, strat), (xs, ys) in baseline_normalized_curves(rows).items():
        ax.plot(xs, ys, marker="o", color=_curve_color(scen, strat), label=f"{scen} ({strat})")
    _finish(fig, ax, spec, "N", "J / J_baseline")


def render(spec: FigureSpec) -> str:
    """Render one figure; returns the output path."""
    with plt.rc_context(_STYLE):
        if spec.kind == "horizon-sweep":
            scale = spec.normalize in (None, "scaled-around-minimum")
            _sweep_figure(spec, "N", "J_s" if scale else "J", scale_min=scale)
        elif spec.kind == "gamma-sweep":
            _sweep_figure(spec, "gamma", "J", scale_min=spec.normalize == "scaled-around-minimum")
        elif spec.kind == "tuning-ratio":
            _tuning_figure(spec)
        elif spec.kind == "sigma-traj":
            _sigma_figure(spec)
        else:
            _lossy_figure(spec)
    return spec.output
