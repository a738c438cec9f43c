"""Energy-decay figure: Lyapunov functionals against accumulated dissipation.

Reads a trajectory diagnostics CSV and draws the sup-side quantities (entropy
and the recorded L^q norms) next to the cumulative gradient dissipation, the
two sides of the energy budget.
"""

import argparse

import numpy as np

from .schemas import read_diagnostics
from .style import COLORS, configure, save


def render(diagnostics_csv: str, out_path: str) -> None:
    import matplotlib.pyplot as plt

    cols = read_diagnostics(diagnostics_csv)
    configure()
    t = cols["time"]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.6))
    ax1.plot(t, cols["entropy"], color=COLORS["primary"], label="entropy")
    for key in sorted(cols):
        if key.startswith("lq_norm("):
            ax1.plot(t, cols[key], label=key, lw=1.4)
    ax1.set_ylabel("Lyapunov side")
    ax1.legend(loc="upper right")

    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (cols["grad_energy"][1:]
                                                         + cols["grad_energy"][:-1])
                                                  * np.diff(t))])
    ax2.plot(t, cumulative, color=COLORS["secondary"], label="cumulative dissipation")
    ax2.plot(t, cols["grad_energy"], color=COLORS["gray"], lw=1.0,
             label="instantaneous gradient energy")
    ax2.set_xlabel("time")
    ax2.set_ylabel("dissipation side")
    ax2.legend(loc="upper left")
    fig.tight_layout()
    save(fig, out_path)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="energy-decay figure from diagnostics CSV")
    ap.add_argument("diagnostics_csv")
    ap.add_argument("output_image")
    args = ap.parse_args(argv)
    render(args.diagnostics_csv, args.output_image)
    print(f"wrote {args.output_image}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
