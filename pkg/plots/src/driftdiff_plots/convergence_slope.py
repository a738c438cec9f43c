"""Convergence-slope figure: study errors against substep count, log-log,
with the fitted order annotated."""

import argparse

import numpy as np

from .schemas import SchemaError, read_study
from .style import COLORS, configure, save


def render(study_csv: str, out_path: str) -> None:
    import matplotlib.pyplot as plt

    cols = read_study(study_csv)
    configure()
    eps0 = cols["epsilon"][0]
    mask = cols["epsilon"] == eps0
    ns = cols["n"][mask]
    l1 = cols["l1_error"][mask]
    w2 = cols["w2_error"][mask]
    pos = l1 > 0
    if pos.sum() < 2:
        raise SchemaError(f"{study_csv!r} has fewer than two positive errors to fit")
    slope = np.polyfit(np.log(ns[pos]), np.log(l1[pos]), 1)[0]
    fig, ax = plt.subplots()
    ax.loglog(ns, l1, "o-", color=COLORS["primary"], label="L1 error vs reference")
    if np.any(w2 > 0):
        ax.loglog(ns, w2, "s-", color=COLORS["accent"], label="W2 error vs reference")
    ref = l1[pos][0] * (ns[pos][0] / ns)
    ax.loglog(ns, ref, "--", color=COLORS["gray"], label="order 1 reference")
    ax.set_xlabel("substep count n")
    ax.set_ylabel("error at final time")
    ax.set_title(f"fitted order {-slope:.2f}")
    ax.legend(loc="lower left")
    fig.tight_layout()
    save(fig, out_path)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="convergence-slope figure from a study CSV")
    ap.add_argument("study_csv")
    ap.add_argument("output_image")
    args = ap.parse_args(argv)
    render(args.study_csv, args.output_image)
    print(f"wrote {args.output_image}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
