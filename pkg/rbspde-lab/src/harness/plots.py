from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.data.loader import ArtifactError, load_csv  # noqa: E402


PLOT_KINDS = ("slice", "penalty", "rates")
SLICE_CAP = 16


def _slice(csv_path: Path, ax: plt.Axes) -> None:
    df = load_csv(csv_path, required=("level", "node", "x1"))
    value = next((c for c in df.columns if c not in ("level", "node") and not c.startswith("x")), None)
    if value is None:
        raise ArtifactError(f"{csv_path}: schema mismatch, no value column")
    first = df[df["level"] == df["level"].min()]
    extra_axes = [c for c in first.columns if c.startswith("x") and c != "x1"]
    for col in extra_axes:
        # cut through the middle of the remaining axes
        levels = np.sort(first[col].unique())
        first = first[first[col] == levels[len(levels) // 2]]
    for node, block in list(first.groupby("node"))[:SLICE_CAP]:
        ax.plot(block["x1"], block[value], linewidth=1.0, label=f"node {node}")
    ax.set_xlabel("x1")
    ax.set_ylabel(value)
    ax.set_title(f"{value} at t = 0")


def _penalty(csv_path: Path, ax: plt.Axes) -> None:
    df = load_csv(csv_path, required=("n", "penalty_mass"))
    df = df[np.isfinite(df["n"].astype(float))]
    ax.loglog(df["n"], df["penalty_mass"], marker="o", label="n·E∫‖(u_n - ξ)⁻‖²")
    if "violation" in df.columns and (df["violation"] > 0).any():
        ax.loglog(df["n"], df["violation"].where(df["violation"] > 0), marker="s", label="max(ξ - u_n)⁺")
    ax.set_xlabel("n")
    ax.set_title("penalty diagnostics")


def _rates(csv_path: Path, ax: plt.Axes) -> None:
    df = load_csv(csv_path, required=("step",))
    errors = [c for c in df.columns if c.endswith("_error")]
    if not errors:
        raise ArtifactError(f"{csv_path}: schema mismatch, no *_error columns")
    for col in errors:
        positive = df[col].where(df[col] > 0)
        ax.loglog(df["step"], positive, marker="o", label=col)
    ax.set_xlabel("refinement step")
    ax.set_title("errors under refinement")


def render_plot(csv_path: str | Path, kind: str, out_path: str | Path) -> Path:
    if kind not in PLOT_KINDS:
        raise ArtifactError(f"unknown plot kind {kind!r}, expected one of {PLOT_KINDS}")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        {"slice": _slice, "penalty": _penalty, "rates": _rates}[kind](Path(csv_path), ax)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return out
