import csv
from pathlib import Path

import numpy as np
import pytest

from susy_forge import cli
from susy_forge.config import ConfigError, load, parse_text, scan_points

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "out"
    monkeypatch.setenv(cli.OUT_ENV, str(root))
    return root


def write_cfg(tmp_path, text, name="case.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_table(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


class TestRun:
    @pytest.mark.parametrize(
        "name",
        ["one_soliton", "exponential3", "soliton3", "type_one", "strippable", "oscillator_type3", "class_k"],
    )
    def test_scenarios_pass(self, name, out_root, capsys):
        assert cli.main(["run", str(SCENARIOS / f"{name}.cfg")]) == 0
        report = (out_root / name / "report.txt").read_text()
        assert "status = pass" in report and "FAIL" not in report
        assert "pass:" in capsys.readouterr().out

    def test_exponential_factors_reported(self, out_root):
        cli.main(["run", str(SCENARIOS / "exponential3.cfg")])
        report = (out_root / "exponential3" / "report.txt").read_text()
        assert "d - 3" in report and "d^2 - 3 d + 2" in report
        for name in ("V1.csv", "V2.csv", "q_minus.csv", "q_plus.csv", "G.csv", "sqrt_branch.csv"):
            assert (out_root / "exponential3" / name).exists()

    def test_classification_verdict(self, out_root):
        cli.main(["run", str(SCENARIOS / "oscillator_type3.cfg")])
        assert "TypeIII" in (out_root / "oscillator_type3" / "report.txt").read_text()

    def test_deterministic(self, tmp_path, monkeypatch):
        texts = []
        for tag in ("a", "b"):
            monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / tag))
            cli.main(["run", str(SCENARIOS / "soliton3.cfg")])
            d = tmp_path / tag / "soliton3"
            texts.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        assert texts[0] == texts[1]

    def test_grid_override(self, out_root):
        report = cli.run(SCENARIOS / "one_soliton.cfg", grid_n=1025, grid_l=10.0)
        assert report.passed
        fields = report.get("scenario").fields
        assert fields["grid_n"] == "1025" and fields["grid_l"] == "10"

    def test_tight_tolerance_fails_with_exit_two(self, out_root):
        assert cli.main(["run", str(SCENARIOS / "soliton3.cfg"), "--tol-scale", "1e-12"]) == 2

    def test_hypothesis_failure_exit_two(self, tmp_path, out_root):
        text = (SCENARIOS / "soliton3.cfg").read_text()
        # move the minimal eigenvalue away from the last chain
        head, *chains = text.split("[chain]")
        p = write_cfg(tmp_path, "[chain]".join([head, chains[2], chains[1], chains[0]]))
        assert cli.main(["run", str(p)]) == 2
        report = (out_root / "soliton3" / "report.txt").read_text()
        assert "hypothesis violated" in report and "minimal" in report

    def test_action_needs_order(self, tmp_path, out_root, capsys):
        p = write_cfg(
            tmp_path,
            "[scenario]\nname = n2\npotential = zero\nactions = factorize3\n"
            "[chain]\nlambda = -1\neigen = closed_form:exp(1)\n"
            "[chain]\nlambda = -4\neigen = closed_form:exp(2)\n",
        )
        assert cli.main(["run", str(p)]) == 1
        assert "factorize3 requires order 3" in capsys.readouterr().err

    def test_singular_partner_is_an_error(self, tmp_path, out_root):
        p = write_cfg(tmp_path, "[scenario]\nname = sing\npotential = zero\n[chain]\nlambda = -1\neigen = closed_form:sinh(1)\n")
        assert cli.main(["run", str(p)]) == 1
        assert "singular Wronskian" in (out_root / "sing" / "report.txt").read_text()

    def test_scan_parameters_need_scan(self, out_root, capsys):
        assert cli.main(["run", str(SCENARIOS / "oscillator_cell_scan.cfg")]) == 1
        assert "only allowed with 'scan'" in capsys.readouterr().err

    def test_bad_tol_scale(self, out_root):
        assert cli.main(["run", str(SCENARIOS / "one_soliton.cfg"), "--tol-scale", "0"]) == 1


class TestPlot:
    def test_three_soliton_well(self, out_root):
        cli.main(["run", str(SCENARIOS / "soliton3.cfg")])
        d = out_root / "soliton3"
        assert cli.main(["plot", str(d)]) == 0
        header, data = read_table(d / "potentials.csv")
        assert header[:3] == ["x", "V1", "V2"]
        assert data[:, 2].min() < -2
        assert (d / "superpotentials.csv").exists()
        script = (d / "plot.gp").read_text()
        lines = script.splitlines()
        assert lines.index("set terminal pngcairo size 900,600") < lines.index("set output 'potentials.png'")

    def test_gfunction_table(self, out_root):
        cli.main(["run", str(SCENARIOS / "soliton3.cfg")])
        d = out_root / "soliton3"
        cli.plot_emit(d)
        header, data = read_table(d / "gfunction.csv")
        assert header == ["x", "G", "discriminant", "sqrt_branch"]
        n = len(data)
        core = data[n // 10 : n - n // 10]
        tau = 1e-8 * (1 + np.max(np.abs(core[:, 1])) ** 4)
        assert core[:, 2].min() >= -tau

    def test_constant_potential_unchanged(self, out_root):
        cli.main(["run", str(SCENARIOS / "exponential3.cfg")])
        d = out_root / "exponential3"
        cli.plot_emit(d)
        _, data = read_table(d / "potentials.csv")
        n = len(data)
        core = data[n // 10 : n - n // 10]
        assert np.max(np.abs(core[:, 1] - core[:, 2])) < 1e-8

    def test_missing_inputs_reported(self, out_root):
        cli.main(["run", str(SCENARIOS / "one_soliton.cfg")])
        res = cli.plot_emit(out_root / "one_soliton")
        assert "G.csv" in res.missing and "potentials.csv" in res.written

    def test_no_report(self, tmp_path, out_root):
        assert cli.main(["plot", str(tmp_path)]) == 1


class TestScan:
    def test_oscillator_cell(self, out_root, capsys):
        assert cli.main(["scan", str(SCENARIOS / "oscillator_cell_scan.cfg")]) == 0
        out = capsys.readouterr().out
        assert "d = " in out
        header, data = read_table(out_root / "oscillator_cell_scan" / "scan.csv")
        assert header[:2] == ["d", "c"]
        d, ok = data[:, 0], data[:, -1].astype(bool)
        # the Wronskian is nodeless iff |d| > sqrt(pi)/2
        assert np.all(ok == (np.abs(d) > np.sqrt(np.pi) / 2))

    def test_cosh_full_range(self, tmp_path, out_root, capsys):
        p = write_cfg(tmp_path, "[scenario]\nname = c\npotential = zero\n[chain]\nlambda = -1\neigen = closed_form:cosh(1)\n")
        assert cli.main(["scan", str(p)]) == 0
        assert "full range" in capsys.readouterr().out

    def test_sinh_empty(self, tmp_path, out_root, capsys):
        p = write_cfg(tmp_path, "[scenario]\nname = s\npotential = zero\n[chain]\nlambda = -4\neigen = closed_form:sinh(2)\n")
        assert cli.main(["scan", str(p)]) == 2
        captured = capsys.readouterr()
        assert "empty" in captured.out and "no nodeless point" in captured.err
        assert "status = fail" in (out_root / "s" / "scan_report.txt").read_text()

    def test_one_parameter_intervals(self, tmp_path, out_root):
        p = write_cfg(
            tmp_path,
            "[scenario]\nname = one\npotential = oscillator\n"
            "[chain]\nlambda = 3\neigen = closed_form:hermite(1)\nassociated = init:$d, 0\n"
            "[scan]\nd = -2, 2, 9\n",
        )
        res = cli.scan_nodeless(load(p))
        assert res.ranges == ["d in [-2, -1], [1, 2]"]


class TestConfig:
    def test_bad_number(self, tmp_path):
        p = write_cfg(tmp_path, "[scenario]\nname = x\npotential = zero\n[chain]\nlambda = abc\neigen = closed_form:exp(1)\n")
        with pytest.raises(ConfigError) as info:
            load(p)
        assert info.value.line == 5 and info.value.key == "lambda"
        assert str(info.value).startswith(f"{p}:5: field 'lambda'")

    def test_error_exit_code(self, tmp_path, out_root, capsys):
        p = write_cfg(tmp_path, "[scenario]\nname = x\npotential = moon\n")
        assert cli.main(["run", str(p)]) == 1
        assert "potential" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "text, key",
        [
            ("[scenario]\nname = x\npotential = zero\n[chain]\neigen = closed_form:exp(1)\n", "lambda"),
            ("[scenario]\nname = x\npotential = zero\n[chain]\nlambda = -1\neigen = closed_form:bessel(1)\n", "eigen"),
            ("[scenario]\nname = x\n[nonsense]\n", None),
            ("[scenario]\nname = x\nactions = dance\n", "actions"),
        ],
    )
    def test_rejected(self, text, key):
        with pytest.raises(ConfigError) as info:
            parse_text(text, "mem.cfg")
        if key:
            assert info.value.key == key

    def test_scan_grid(self):
        sc = load(SCENARIOS / "oscillator_cell_scan.cfg")
        pts = scan_points(sc)
        assert sc.parameters() == ["d", "c"] and len(pts) == 3 * 21
        assert pts[0] == {"d": -2.0, "c": -1.0}

    def test_order_limit(self, tmp_path):
        chains = "".join(f"[chain]\nlambda = {-(k**2)}\neigen = closed_form:exp({k})\n" for k in range(1, 8))
        with pytest.raises(ConfigError):
            cli.run(write_cfg(tmp_path, "[scenario]\nname = big\npotential = zero\n" + chains), out_root=tmp_path)
