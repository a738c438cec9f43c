"""Admissible-region figure in the (1/q1, 1/q2) plane for the drift classes.

The boundary of each class is the line A x + B y = R with coefficients taken
from the class's scaling inequality; the rendered vertices are computed from
(A, B, R), never hard-coded, and classify-drift sample points are overlaid
colored by their stored verdicts (stored lhs/rhs values are cross-checked
against the recomputed line data).
"""

import argparse

from .schemas import SchemaError, read_class_points
from .style import COLORS, configure, save

CLASS_TAGS = ("S", "S_tilde", "D", "D_plus", "D_s")


def line_coefficients(class_tag: str, m: float, q: float, d: int):
    """(A, B, R) with the class inequality reading A/q1 + B/q2 <= R."""
    if class_tag in ("S", "S_tilde"):
        A = float(d)
        B = 2.0 + d * (q + m - 2.0)
        R = (1.0 if class_tag == "S" else 2.0) + d * (m - 1.0)
    elif class_tag in ("D", "D_plus", "D_s"):
        q_md = d * (m - 1.0) / q
        A = float(d)
        B = 2.0 + q_md
        if class_tag == "D_s":
            R = 1.0 + d * (q + m - 2.0) / (2.0 * q)
        else:
            R = 2.0 + d * (q + m - 2.0) / q
    else:
        raise SchemaError(f"unknown class tag {class_tag!r}")
    return A, B, R


def boundary_vertices(class_tag: str, m: float, q: float, d: int):
    """The two axis intercepts of the boundary line (both satisfy the equality)."""
    A, B, R = line_coefficients(class_tag, m, q, d)
    if R <= 0 or A <= 0 or B <= 0:
        raise SchemaError(
            f"class {class_tag} has no admissible region for m={m}, q={q}, d={d}")
    return (R / A, 0.0), (0.0, R / B)


def vertex_equality_residual(class_tag: str, m: float, q: float, d: int) -> float:
    A, B, R = line_coefficients(class_tag, m, q, d)
    worst = 0.0
    for x, y in boundary_vertices(class_tag, m, q, d):
        worst = max(worst, abs(A * x + B * y - R))
    return worst


def _check_point(pt: dict) -> None:
    A, B, R = line_coefficients(pt["class"], pt["m"], pt["q"], int(pt["d"]))
    if abs(R - pt["rhs"]) > 1e-9 * max(1.0, abs(R)):
        raise SchemaError(
            f"stored rhs {pt['rhs']} disagrees with the recomputed class bound {R} "
            f"for class {pt['class']}")
    inv1 = 0.0 if pt["q1"] in (None, float("inf")) else 1.0 / pt["q1"]
    inv2 = 0.0 if pt["q2"] in (None, float("inf")) else 1.0 / pt["q2"]
    lhs = A * inv1 + B * inv2
    if abs(lhs - pt["lhs"]) > 1e-9 * max(1.0, abs(lhs)):
        raise SchemaError(
            f"stored lhs {pt['lhs']} disagrees with recomputed {lhs} for class {pt['class']}")


def render(m: float, q: float, d: int, class_tags, points_json: str | None,
           out_path: str) -> None:
    import matplotlib.pyplot as plt

    configure()
    fig, ax = plt.subplots()
    xmax = ymax = 0.0
    fills = (COLORS["fill"], COLORS["fill2"], "#e8f0e4", "#eee6f2", "#f6eedc")
    lines = (COLORS["primary"], COLORS["secondary"], COLORS["accent"], "#8172b2", "#937860")
    for k, tag in enumerate(class_tags):
        (xb, _), (_, yb) = boundary_vertices(tag, m, q, d)
        ax.fill([0.0, xb, 0.0], [0.0, 0.0, yb], color=fills[k % len(fills)], alpha=0.5,
                zorder=1)
        ax.plot([0.0, xb], [yb, 0.0], color=lines[k % len(lines)], lw=1.6,
                label=f"{tag}: boundary", zorder=3)
        xmax, ymax = max(xmax, xb), max(ymax, yb)
    if points_json:
        points = read_class_points(points_json)
        for pt in points:
            _check_point(pt)
            x = 0.0 if pt["q1"] in (None, float("inf")) else 1.0 / pt["q1"]
            y = 0.0 if pt["q2"] in (None, float("inf")) else 1.0 / pt["q2"]
            color = COLORS["accent"] if pt["member"] else COLORS["secondary"]
            marker = "o" if pt["member"] else "x"
            ax.plot([x], [y], marker, color=color, ms=7, zorder=4)
            xmax, ymax = max(xmax, x), max(ymax, y)
    ax.set_xlim(0.0, 1.15 * xmax if xmax > 0 else 1.0)
    ax.set_ylim(0.0, 1.15 * ymax if ymax > 0 else 1.0)
    ax.set_xlabel("1/q1")
    ax.set_ylabel("1/q2")
    ax.set_title(f"admissible exponents (m={m:g}, q={q:g}, d={d})")
    ax.legend(loc="upper right")
    fig.tight_layout()
    save(fig, out_path)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="class-region figure in the (1/q1, 1/q2) plane")
    ap.add_argument("--m", type=float, required=True)
    ap.add_argument("--q", type=float, required=True)
    ap.add_argument("--d", type=int, required=True)
    ap.add_argument("--classes", default="S", help="comma list from S,S_tilde,D,D_plus,D_s")
    ap.add_argument("--points", default=None, help="classify-drift JSON (single or {points:[...]})")
    ap.add_argument("output_image")
    args = ap.parse_args(argv)
    tags = [t.strip() for t in args.classes.split(",") if t.strip()]
    for t in tags:
        if t not in CLASS_TAGS:
            raise SystemExit(f"unknown class tag {t!r}")
    render(args.m, args.q, args.d, tags, args.points, args.output_image)
    print(f"wrote {args.output_image}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
