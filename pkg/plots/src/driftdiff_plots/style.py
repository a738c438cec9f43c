"""Deterministic matplotlib configuration shared by all figure scripts.

Byte-identical inputs must produce byte-identical images, so the backend is
pinned to Agg, fonts and layout are fixed, and no timestamps or host metadata
enter the files.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

COLORS = {
    "primary": "#1f5fa8",
    "secondary": "#c44e52",
    "accent": "#55a868",
    "gray": "#777777",
    "fill": "#d9e4f1",
    "fill2": "#f2d7d5",
}


def configure():
    plt.rcParams.update({
        "figure.figsize": (6.4, 4.2),
        "figure.dpi": 110,
        "savefig.dpi": 110,
        "font.size": 10,
        "font.family": "DejaVu Sans",
        "axes.grid": True,
        "grid.alpha": 0.3,
        "grid.linestyle": "--",
        "axes.spines.top": False,
        "axes.spines.right": False,
        "legend.frameon": False,
        "svg.hashsalt": "driftdiff-plots",
    })


def save(fig, path: str) -> None:
    """Write PNG/SVG without volatile metadata."""
    if path.endswith(".svg"):
        fig.savefig(path, metadata={"Date": None, "Creator": None})
    else:
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
