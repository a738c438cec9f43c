"""Build a completed run directory once, through the solver CLI only.

The figure scripts are pure consumers of the CLI's file outputs, so the
fixtures shell out to `driftdiff` exactly the way a user would.
"""

import json
import subprocess
import sys

import pytest

SCENARIO = """
[scenario]
name = plots-fixture
seed = 99

[grid]
dim = 1
extents = 0,1
cells = 128

[model]
m = 0.8
epsilon = 1e-3
q_list = 1,2

[initial]
preset = two-block
lo = 0.03

[drift]
preset = zero

[schedule]
t = 0.02
n = 12
steps_per_sub = 4
rk_steps = 2

[output]
directory = unused
"""


def _cli(*args):
    proc = subprocess.run([sys.executable, "-m", "driftdiff.cli", *args],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"driftdiff {' '.join(args)} failed:\n{proc.stderr}")
    return proc.stdout


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    scen = base / "scenario.cfg"
    scen.write_text(SCENARIO)
    out = base / "traj"
    _cli("run", "--scenario", str(scen), "--output", str(out))
    _cli("distances", "--directory", str(out))
    _cli("converge", "--scenario", str(scen), "--n-list", "4,8,16",
         "--output", str(out / "study.csv"))
    _cli("classify-drift", "--preset", "constant", "--params", "v=0.3",
         "--extents", "0,1;0,1", "--m", "0.8", "--q", "1",
         "--q2", repr(8.0 / 3.0), "--class-tag", "S",
         "--output", str(out / "class-boundary.json"))
    _cli("classify-drift", "--preset", "constant", "--params", "v=0.3",
         "--extents", "0,1;0,1", "--m", "0.8", "--q", "1",
         "--q1", "2.5", "--q2", "2.0", "--class-tag", "S",
         "--output", str(out / "class-outside.json"))
    points = []
    for name in ("class-boundary.json", "class-outside.json"):
        with open(out / name) as fh:
            points.append(json.load(fh))
    with open(out / "class-points.json", "w") as fh:
        json.dump({"points": points}, fh, indent=1, sort_keys=True)
    return out
