"""SVG overlays of observed (solid) and generated (dashed) paths.

Needs the optional ``plot`` extra (matplotlib).
"""

from __future__ import annotations

import logging
from typing import Optional

import fsspec
import numpy as np
import pandas as pd

from .scene import SceneSample

logger = logging.getLogger("bigat.plotting")


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise ImportError("SVG export needs matplotlib; install bigat-forecaster[plot]") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def sweep_figure(scene: SceneSample, trajectories: pd.DataFrame, title: Optional[str] = None):
    """
    Draw one scene: observed paths solid, every generated path dashed and
    coloured per pedestrian, ground truth dotted when the scene carries it.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 6))
    colours = plt.get_cmap("tab10")
    if scene.grid is not None:
        ax.imshow(scene.grid.cells[..., 0], extent=scene.grid.extent, origin="lower", cmap="Greys", alpha=0.3)

    for j, (ped, window) in enumerate(zip(scene.pedestrian_ids, scene.pedestrians)):
        colour = colours(j % 10)
        ax.plot(window.observed[:, 0], window.observed[:, 1], "-", color=colour, linewidth=2, label=f"ped {ped}")
        if window.future is not None:
            truth = np.vstack([window.observed[-1:], window.future])
            ax.plot(truth[:, 0], truth[:, 1], ":", color=colour, linewidth=1)
        own = trajectories[trajectories["ped_id"] == ped]
        for _, path in own.groupby("z_index"):
            path = path.sort_values("t")
            xs = np.concatenate([[window.observed[-1, 0]], path["x"].to_numpy()])
            ys = np.concatenate([[window.observed[-1, 1]], path["y"].to_numpy()])
            ax.plot(xs, ys, "--", color=colour, linewidth=1, alpha=0.6)

    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title or scene.scene_id)
    ax.legend(loc="best", fontsize="small")
    return fig


def write_sweep_svg(scene: SceneSample, trajectories: pd.DataFrame, path: str, title: Optional[str] = None) -> None:
    plt = _pyplot()
    fig = sweep_figure(scene, trajectories, title)
    try:
        with fsspec.open(path, "wb") as handle:
            fig.savefig(handle, format="svg")
    finally:
        plt.close(fig)
    logger.info("wrote %s", path)
