import json
import os

import pytest

from driftdiff.cli import EXIT_OK, EXIT_USAGE, main
from driftdiff.scenarios import ScenarioError, load_bundled, parse_scenario

MINIMAL = """
[scenario]
name = tiny
seed = 7

[grid]
dim = 1
extents = 0,1
cells = 64

[model]
m = 0.8
epsilon = 1e-2
q_list = 1,2

[initial]
preset = truncated-gaussian
sigma = 0.2
floor = 0.05

[drift]
preset = zero

[schedule]
t = 0.02
n = 4
steps_per_sub = 2
rk_steps = 2

[output]
directory = runs/tiny
"""


class TestScenarioParsing:
    def test_minimal_roundtrip(self):
        sc = parse_scenario(MINIMAL)
        assert sc.name == "tiny"
        assert sc.grid.cells == (64,)
        assert sc.q_list == (1.0, 2.0)
        sc.build_initial()
        sc.build_drift()
        sc.build_schedule()

    def test_missing_m_is_named(self):
        broken = MINIMAL.replace("m = 0.8\n", "")
        with pytest.raises(ScenarioError, match="m"):
            parse_scenario(broken)

    def test_unknown_preset_rejected(self):
        broken = MINIMAL.replace("preset = zero", "preset = warp")
        with pytest.raises(ScenarioError):
            parse_scenario(broken)

    def test_bundled_scenarios_all_parse(self):
        for name in ("diffusion-1d", "sclass-1d", "divfree-rotation-2d", "linear-1d",
                     "pme-2d", "dplus-2d", "drift-1d"):
            sc = load_bundled(name)
            assert sc.name == name


class TestCli:
    def test_run_and_verify_roundtrip(self, tmp_path):
        scen = tmp_path / "tiny.cfg"
        scen.write_text(MINIMAL)
        outdir = str(tmp_path / "out")
        assert main(["run", "--scenario", str(scen), "--output", outdir]) == EXIT_OK
        assert os.path.exists(os.path.join(outdir, "manifest.json"))
        assert os.path.exists(os.path.join(outdir, "diagnostics.csv"))
        code = main(["verify", "--battery", "dissipation", "--directory", outdir])
        assert code == EXIT_OK
        with open(os.path.join(outdir, "verify-dissipation.json")) as fh:
            report = json.load(fh)
        assert report["passed"]

    def test_run_determinism(self, tmp_path):
        scen = tmp_path / "tiny.cfg"
        scen.write_text(MINIMAL)
        out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
        assert main(["run", "--scenario", str(scen), "--output", out1]) == EXIT_OK
        assert main(["run", "--scenario", str(scen), "--output", out2]) == EXIT_OK
        with open(os.path.join(out1, "diagnostics.csv")) as fh:
            csv1 = fh.read()
        with open(os.path.join(out2, "diagnostics.csv")) as fh:
            csv2 = fh.read()
        assert csv1 == csv2
        b1 = open(os.path.join(out1, "snapshots", "t_000000.bin"), "rb").read()
        b2 = open(os.path.join(out2, "snapshots", "t_000000.bin"), "rb").read()
        assert b1 == b2

    def test_malformed_scenario_exits_2(self, tmp_path):
        scen = tmp_path / "broken.cfg"
        scen.write_text(MINIMAL.replace("m = 0.8\n", ""))
        assert main(["run", "--scenario", str(scen)]) == EXIT_USAGE

    def test_energy_divfree_refused_for_general_drift(self, tmp_path):
        text = MINIMAL.replace("preset = zero",
                               "preset = sine1d\namplitude = 0.4\nmode = 1")
        text = text.replace("declared", "")
        scen = tmp_path / "drifty.cfg"
        scen.write_text(text)
        outdir = str(tmp_path / "outd")
        assert main(["run", "--scenario", str(scen), "--output", outdir]) == EXIT_OK
        code = main(["verify", "--battery", "energy-divfree", "--directory", outdir])
        assert code == EXIT_USAGE

    def test_classify_drift_json(self, tmp_path, capsys):
        code = main(["classify-drift", "--preset", "constant", "--params", "v=0.3",
                     "--extents", "0,1;0,1", "--m", "0.8", "--q", "1",
                     "--q2", str(8.0 / 3.0), "--class-tag", "S"])
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["member"] is True
        assert payload["critical"] is True
        assert payload["lhs"] == pytest.approx(0.6, abs=1e-12)

    def test_classify_out_of_range_m(self, capsys):
        code = main(["classify-drift", "--preset", "constant", "--params", "v=0.3",
                     "--extents", "0,1;0,1", "--m", "0.2", "--q", "1",
                     "--class-tag", "S"])
        assert code == EXIT_USAGE

    def test_distances_on_short_run(self, tmp_path):
        scen = tmp_path / "tiny.cfg"
        scen.write_text(MINIMAL)
        outdir = str(tmp_path / "out")
        main(["run", "--scenario", str(scen), "--output", outdir])
        assert main(["distances", "--directory", outdir]) == EXIT_OK
        csv_path = os.path.join(outdir, "distances.csv")
        with open(csv_path) as fh:
            header = fh.readline().strip()
        assert header == "s,t,W2,delta"
        assert os.path.exists(os.path.join(outdir, "distances-fit.json"))

    def test_converge_writes_study(self, tmp_path):
        scen = tmp_path / "tiny.cfg"
        scen.write_text(MINIMAL)
        out = str(tmp_path / "study.csv")
        code = main(["converge", "--scenario", str(scen), "--n-list", "2,4",
                     "--output", out])
        assert code == EXIT_OK
        with open(out) as fh:
            assert fh.readline().strip() == "n,epsilon,l1_error,w2_error"

    def test_converge_worker_pool_deterministic(self, tmp_path, monkeypatch):
        scen = tmp_path / "tiny.cfg"
        scen.write_text(MINIMAL)
        serial = str(tmp_path / "serial.csv")
        pooled = str(tmp_path / "pooled.csv")
        main(["converge", "--scenario", str(scen), "--n-list", "2,4", "--output", serial])
        monkeypatch.setenv("DRIFTDIFF_WORKERS", "3")
        main(["converge", "--scenario", str(scen), "--n-list", "2,4", "--output", pooled])
        assert open(serial).read() == open(pooled).read()

    def test_zero_drift_run_has_monotone_entropy(self, tmp_path):
        scen = tmp_path / "tiny.cfg"
        scen.write_text(MINIMAL)
        outdir = str(tmp_path / "mono")
        main(["run", "--scenario", str(scen), "--output", outdir])
        import csv

        with open(os.path.join(outdir, "diagnostics.csv")) as fh:
            rows = list(csv.DictReader(fh))
        entropy = [float(r["entropy"]) for r in rows]
        assert all(entropy[k + 1] <= entropy[k] + 1e-12 for k in range(len(entropy) - 1))

    def test_unknown_battery(self, tmp_path):
        scen = tmp_path / "tiny.cfg"
        scen.write_text(MINIMAL)
        outdir = str(tmp_path / "out")
        main(["run", "--scenario", str(scen), "--output", outdir])
        code = main(["verify", "--battery", "no-such", "--directory", outdir])
        assert code == EXIT_USAGE
