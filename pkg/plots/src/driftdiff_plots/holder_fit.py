"""Hölder-fit figure: log-log distance-vs-gap scatter with the fitted envelope
line and the reference slope 1/2."""

import argparse

import numpy as np

from .schemas import SchemaError, read_distances, read_fit_report
from .style import COLORS, configure, save


def render(distances_csv: str, fit_json: str, out_path: str, metric: str = "W2") -> None:
    import matplotlib.pyplot as plt

    cols = read_distances(distances_csv)
    fits = read_fit_report(fit_json)
    if metric not in fits:
        raise SchemaError(f"fit report has no entry for metric {metric!r}")
    fit = fits[metric]
    configure()
    gaps = cols["t"] - cols["s"]
    dists = cols[metric]
    fig, ax = plt.subplots()
    if fit.get("stationary") or not np.any(dists > 0):
        ax.text(0.5, 0.5, "stationary trajectory:\nall sampled distances vanish",
                ha="center", va="center", transform=ax.transAxes)
        ax.set_axis_off()
        save(fig, out_path)
        return
    mask = (gaps > 0) & (dists > 0)
    ax.loglog(gaps[mask], dists[mask], ".", color=COLORS["primary"], ms=5,
              label=f"{metric} samples")
    gs = np.array([gaps[mask].min(), gaps[mask].max()])
    if "exponent" in fit and "constant" in fit:
        a, C = fit["exponent"], fit["constant"]
        ax.loglog(gs, C * gs**a, color=COLORS["secondary"],
                  label=f"fit: {C:.3g} gap^{a:.3f}")
    c_half = dists[mask].max() / gaps[mask][np.argmax(dists[mask])] ** 0.5
    ax.loglog(gs, c_half * gs**0.5, "--", color=COLORS["gray"],
              label="reference slope 1/2")
    ax.set_xlabel("time gap t - s")
    ax.set_ylabel(f"{metric} distance")
    ax.legend(loc="lower right")
    fig.tight_layout()
    save(fig, out_path)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Hölder-fit figure from distances CSV + fit JSON")
    ap.add_argument("distances_csv")
    ap.add_argument("fit_json")
    ap.add_argument("output_image")
    ap.add_argument("--metric", default="W2", choices=("W2", "delta"))
    args = ap.parse_args(argv)
    render(args.distances_csv, args.fit_json, args.output_image, metric=args.metric)
    print(f"wrote {args.output_image}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
