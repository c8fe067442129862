"""Render result CSVs into static figures.

Consumes exactly the CSV schemas the estimation CLI documents:

    irf.csv               horizon, estimate, lower, upper (bands optional)
    sweep.csv             k, rel_rmse_<variable> ...
    factor_structure.csv  component, cumulative_share

Inputs are never mutated; an existing output path is an error unless
overwrite is requested. Output format follows the file suffix (png, pdf,
svg, ...).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

KINDS = ("irf", "sweep", "factor-structure")
LINE_STYLES = ("-", "--", "-.", ":")
BAND_ALPHA = 0.25


class SchemaError(ValueError):
    """An input CSV does not conform to the documented schema."""


class OutputExists(FileExistsError):
    """Output path already exists and overwrite was not requested."""


@dataclass
class FigureRequest:
    kind: str
    inputs: Sequence[str]
    output: str
    labels: Sequence[str] = field(default_factory=list)
    overwrite: bool = False
    title: str | None = None
    dpi: int = 150

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.inputs = [str(p) for p in self.inputs]
        if not self.inputs:
            raise SchemaError("at least one input CSV is required")
        missing = [p for p in self.inputs if not Path(p).exists()]
        if missing:
            raise SchemaError(f"input file(s) not found: {missing}")
        labels = list(self.labels)
        if labels and len(labels) != len(self.inputs):
            raise SchemaError("labels must match the number of inputs")
        if not labels:
            labels = [Path(p).stem for p in self.inputs]
        self.labels = labels


def _read(path: str, required: Sequence[str]) -> pd.DataFrame:
    frame = pd.read_csv(path)
    for col in required:
        if col not in frame.columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    return frame


def _irf_axes(ax, request: FigureRequest) -> None:
    for path, label, style in zip(
        request.inputs, request.labels, _cycle(LINE_STYLES, len(request.inputs))
    ):
        frame = _read(path, ["horizon", "estimate"])
        h = frame["horizon"].to_numpy()
        ax.plot(h, frame["estimate"].to_numpy(), style, label=label)
        if {"lower", "upper"} <= set(frame.columns):
            lower = frame["lower"].to_numpy(dtype=float)
            upper = frame["upper"].to_numpy(dtype=float)
            if np.isfinite(lower).all() and np.isfinite(upper).all():
                ax.fill_between(h, lower, upper, alpha=BAND_ALPHA, linewidth=0)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_xlabel("horizon")
    ax.set_ylabel("response")


def _sweep_axes(ax, request: FigureRequest) -> None:
    for path, label, style in zip(
        request.inputs, request.labels, _cycle(LINE_STYLES, len(request.inputs))
    ):
        frame = _read(path, ["k"])
        curves = [c for c in frame.columns if c.startswith("rel_rmse")]
        if not curves:
            raise SchemaError(f"{path}: missing column 'rel_rmse_<variable>'")
        for col in curves:
            name = col.removeprefix("rel_rmse").lstrip("_") or label
            series_label = name if len(request.inputs) == 1 else f"{label}: {name}"
            ax.plot(frame["k"].to_numpy(), frame[col].to_numpy(), style, label=series_label)
    ax.axhline(1.0, color="black", linewidth=0.6)
    ax.set_xlabel("subspace dimension k")
    ax.set_ylabel("RMSE relative to base LP")


def _factor_axes(ax, request: FigureRequest) -> None:
    for path, label, style in zip(
        request.inputs, request.labels, _cycle(LINE_STYLES, len(request.inputs))
    ):
        frame = _read(path, ["component", "cumulative_share"])
        ax.plot(
            frame["component"].to_numpy(),
            frame["cumulative_share"].to_numpy(),
            style,
            marker="o",
            markersize=3,
            label=label,
        )
    ax.set_xlabel("number of principal components")
    ax.set_ylabel("cumulative variance share")
    ax.set_ylim(0.0, 1.05)


def _cycle(styles, n):
    return [styles[i % len(styles)] for i in range(n)]


def build_figure(request: FigureRequest):
    """Figure and axes for a request, without touching the output path."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    if request.kind == "irf":
        _irf_axes(ax, request)
    elif request.kind == "sweep":
        _sweep_axes(ax, request)
    else:
        _factor_axes(ax, request)
    if request.title:
        ax.set_title(request.title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    return fig, ax


def render(request: FigureRequest) -> Path:
    """Write the requested figure; returns the output path."""
    out = Path(request.output)
    if out.exists() and not request.overwrite:
        raise OutputExists(f"{out} exists; pass overwrite to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, _ = build_figure(request)
    try:
        fig.savefig(out, dpi=request.dpi)
    finally:
        plt.close(fig)
    return out
