import csv
import json

import numpy as np
import pytest

from morsewitten.cli import builtin_scenario, dump_flowlines, load_scenario_file, main, run_scenario
from morsewitten.errors import ParseError, ScenarioError
from morsewitten.geometry import constraint_jets_batch
from morsewitten.report import to_json, to_text

from conftest import scenario_run

SPHERE_FILE = """\
[scenario]
name = "sphere_from_file"
ambient_dim = 3
constraints = ["x1^2+x2^2+x3^2-1"]
f = "x3"

[options]
coefficients = "z2"
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_builtin_scenario_loads_without_a_file():
    s = builtin_scenario("rp2")
    assert s.spec.involution is not None and s.spec.dim == 2


def test_scenario_file(tmp_path):
    s = load_scenario_file(write(tmp_path, SPHERE_FILE))
    assert s.name == "sphere_from_file" and s.coefficients == ("Z2",)
    report, code = run_scenario(s)
    assert code == 0
    assert report["homology"]["Z2"]["betti"] == [1, 0, 1]
    assert "Z" not in report["homology"]


def test_unknown_key_is_rejected_by_name_and_line(tmp_path):
    p = write(tmp_path, SPHERE_FILE.replace('f = "x3"', 'f = "x3"\nmetrik = "euclid"'))
    with pytest.raises(ScenarioError, match=r"'metrik'.*line 6"):
        load_scenario_file(p)


def test_unknown_table_is_rejected(tmp_path):
    with pytest.raises(ScenarioError, match="'solver'"):
        load_scenario_file(write(tmp_path, SPHERE_FILE + "\n[solver]\nsteps = 3\n"))


def test_toml_syntax_error_has_a_line(tmp_path):
    with pytest.raises(ScenarioError, match="line 3"):
        load_scenario_file(write(tmp_path, '[scenario]\nname = "x"\nf = \n'))


def test_bad_expression_is_a_configuration_error(tmp_path):
    with pytest.raises(ParseError):
        load_scenario_file(write(tmp_path, SPHERE_FILE.replace('"x3"', '"x3 +"')))


def test_missing_required_key(tmp_path):
    with pytest.raises(ScenarioError, match="'f'"):
        load_scenario_file(write(tmp_path, SPHERE_FILE.replace('f = "x3"\n', "")))


@pytest.mark.parametrize("argv", [
    ["--scenario", "rp2", "--bogus"],
    ["--scenario", "rp2", "--or"],
    ["--scenario", "nope"],
    ["--scenario", "rp2", "--coefficients", "q"],
    ["--scenario", "rp2", "--max-time", "-1"],
    ["--scenario", "rp2", "--continue-to", "nope"],
    [],
])
def test_configuration_errors_exit_with_3(argv, capsys):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(main(argv))
    assert info.value.code == 3


def test_untilted_torus_fails_morse_smale_and_exits_2(tmp_path):
    out = tmp_path / "r.json"
    assert main(["--scenario", "torus_untilted", "--report", str(out)]) == 2
    r = json.loads(out.read_text())
    assert r["checks"]["morse_smale"]["passed"] is False
    assert r["homology"] is None and r["boundary"] is None
    assert {"source": 1, "target": 2, "target_lift": 0} in r["morse_smale"]["offending"]


def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["--scenario", "sphere_two_peaks", "--report", str(a)]) == 0
    assert main(["--scenario", "sphere_two_peaks", "--report", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    r = json.loads(a.read_text())
    assert r["schema_version"] == 1 and r["timings"] is None


def test_floats_are_pinned_to_twelve_digits():
    assert to_json({"x": 1 / 3, "y": [np.float64(2.0) / 3], "z": -0.0}) == \
        '{\n  "x": 0.333333333333,\n  "y": [\n    0.666666666667\n  ],\n  "z": 0.0\n}\n'


def test_text_report_shows_signed_boundary_matrices():
    _, report, _, _ = scenario_run("rp2")
    text = to_text(report)
    assert "d_2: C_2 [0] -> C_1 [1]" in text and "[ -2 ]" in text
    assert "over Z: H0=Z  H1=Z2  H2=0" in text


@pytest.mark.parametrize("name", ["rp2", "sphere_two_peaks"])
def test_flowline_dump(name, tmp_path):
    s, _, _, _ = scenario_run(name)
    path = tmp_path / "orbits.csv"
    assert dump_flowlines(s, path) == 4
    rows = list(csv.reader(path.open()))
    header, body = rows[0], rows[1:]
    assert header == ["orbit_id", "source_id", "target_id", "sign", "t", "p1", "p2", "p3", "f"]
    assert sorted({r[0] for r in body}) == ["0", "1", "2", "3"]
    P = np.array([[float(v) for v in r[5:8]] for r in body])
    assert np.max(np.abs(constraint_jets_batch(s.spec, P, 1)[0])) < 1e-11
    for oid in range(4):
        t = [float(r[4]) for r in body if r[0] == str(oid)]
        assert t == sorted(t)


def test_dump_without_a_previous_run(tmp_path):
    assert dump_flowlines(builtin_scenario("sphere_height"), tmp_path / "o.csv") == 0
