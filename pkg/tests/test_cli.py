import csv
import io
import json
import subprocess

import pytest

from finsler2d import cli

SMALL = ["--grid", "0.05,0.45,0.05,0.45,5,5", "--dirs", "8"]
FLAT_RATIONAL = {"kind": "KropinaCanonical", "exprs": {"profile": "x1^2/(1 - x2)"}}
SINE = {"kind": "KropinaCanonical", "exprs": {"phi": "sin(x1)"}}
IDENTITY_SIGMA = {"kind": "Parabolic", "exprs": {"sigma": "x1"}}
AFFINE = {"kind": "MinkowskiLinear", "constants": {"k1": 1.0, "k2": -2.0, "k3": 0.5}}
CURL_VIOLATION = {"kind": "KropinaGeneral", "exprs": {"A": "1 + x2", "B": "0", "C": "1", "D": "0"}}


def invoke(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def classify(capsys, metric, *extra):
    code, out, _ = invoke(capsys, "classify", "--metric", json.dumps(metric), *SMALL, *extra)
    assert code == 0
    doc = json.loads(out)
    return {name: flag["verdict"] for name, flag in doc["flags"].items()}, doc


# -- classify ---------------------------------------------------------------


def test_flat_rational_profile(capsys):
    verdicts, doc = classify(capsys, FLAT_RATIONAL)
    assert verdicts["degenerate"] == "fail"
    assert verdicts["projective"] == "pass"
    assert verdicts["minkowski"] == "pass"
    assert verdicts["constant_curvature_necessary"] == "pass"
    # 4AC - B^2 vanishes identically on this family
    assert verdicts["parabolic_type"] == "pass"
    assert doc["flags"]["parabolic_type"]["residual"] < 1e-12


def test_sine_potential(capsys):
    verdicts, doc = classify(capsys, SINE)
    assert verdicts["projective"] == "pass"
    assert verdicts["minkowski"] == "fail"
    assert verdicts["constant_curvature_necessary"] == "fail"
    assert len(doc["flags"]["minkowski"]["at_point"]) == 4


def test_identity_sigma_is_parabolic(capsys):
    verdicts, _ = classify(capsys, IDENTITY_SIGMA, "--grid", "0.5,1.5,0.1,0.9,4,4")
    assert verdicts["projective"] == "pass"
    assert verdicts["parabolic_type"] == "pass"


def test_non_projective_metric_skips_the_p_function_flags(capsys):
    verdicts, doc = classify(capsys, CURL_VIOLATION)
    assert verdicts["projective"] == "fail"
    assert verdicts["minkowski"] == verdicts["constant_curvature_necessary"] == "not-applicable"
    assert doc["flags"]["projective"]["residual"] > 1e-3


def test_degenerate_metric_makes_other_flags_not_applicable(capsys):
    metric = {"kind": "KropinaGeneral", "exprs": {"A": "1", "B": "2", "C": "1", "D": "1"}}
    verdicts, _ = classify(capsys, metric)
    assert verdicts["degenerate"] == "pass"
    assert {v for k, v in verdicts.items() if k != "degenerate"} == {"not-applicable"}


def test_degenerate_cubic(capsys):
    metric = {"kind": "CubicExceptional", "constants": {"k1": 1, "k2": 1, "k3": 0, "k4": 0}}
    verdicts, _ = classify(capsys, metric)
    assert verdicts["degenerate"] == "pass"


def test_exceptional_cubic(capsys):
    metric = {"kind": "CubicExceptional", "constants": {"k1": 1, "k2": 1, "k3": 0, "k4": 1}}
    verdicts, _ = classify(capsys, metric)
    assert verdicts["projective"] == verdicts["minkowski"] == "pass"
    assert verdicts["parabolic_type"] == "not-applicable"


def test_inconclusive_band(capsys):
    # a residual between the thresholds fails but is marked inconclusive
    code, out, _ = invoke(capsys, "classify", "--metric", json.dumps(FLAT_RATIONAL), *SMALL, "--threshold-pass", "1e-14")
    flags = json.loads(out)["flags"]
    assert flags["minkowski"]["verdict"] == "fail" and flags["minkowski"]["inconclusive"] is True


def test_classify_csv(capsys):
    code, out, _ = invoke(capsys, "classify", "--metric", json.dumps(SINE), *SMALL, "--format", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["flag", "verdict", "witness", "x1", "x2", "X", "Y"]
    assert [r[0] for r in rows[1:]] == list(cli.FLAGS)
    assert all(len(r) == 7 for r in rows)


def test_reports_echo_seed_and_order(capsys):
    _, doc = classify(capsys, SINE, "--seed", "7", "--order", "5")
    assert doc["seed"] == 7 and doc["order"] == 5 and doc["grid"]["seed"] == 7


# -- residuals --------------------------------------------------------------


def test_affine_profile_potential_system(capsys):
    code, out, _ = invoke(capsys, "residuals", "--system", "II-prime", "--metric", json.dumps(AFFINE), *SMALL)
    doc = json.loads(out)
    assert code == 0 and doc["passed"] is True
    assert all(eq["max_residual"] == 0.0 for eq in doc["equations"])


def test_beta_system_failure_names_the_equation(capsys):
    metric = {"kind": "KropinaGeneral", "exprs": {"A": "1", "B": "0", "C": "1", "D": "x1*x2"}}
    code, out, _ = invoke(capsys, "residuals", "--system", "beta", "--metric", json.dumps(metric), "--grid", "0.5,1,1.5,2,2,2", "--dirs", "1")
    doc = json.loads(out)
    assert code == 1 and doc["passed"] is False
    eq = next(e for e in doc["equations"] if e["label"] == "D_2 - D D_1")
    assert eq["max_residual"] == pytest.approx(3.0) and eq["at_point"] == [1.0, 2.0]


def test_flat_rational_constant_curvature(capsys):
    metric = {"kind": "KropinaCanonical", "exprs": {"profile": "(x1^2 - k2*x1 + k5)/(k1 - x2) + k6"},
              "constants": {"k1": 1.0, "k2": 0.0, "k5": 0.0, "k6": 0.0}}
    code, out, _ = invoke(capsys, "residuals", "--system", "constant-curvature", "--metric", json.dumps(metric), *SMALL)
    assert code == 0 and len(json.loads(out)["equations"]) == 7
    code, _, _ = invoke(capsys, "residuals", "--system", "constant-curvature", "--variant", "printed", "--metric", json.dumps(metric), *SMALL)
    assert code == 1


def test_residuals_csv(capsys, tmp_path):
    out = tmp_path / "r.csv"
    code, stdout, _ = invoke(capsys, "residuals", "--system", "projectivity", "--metric", json.dumps(SINE), *SMALL, "--format", "csv", "--out", out)
    assert code == 0 and stdout == ""
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["label", "max_residual", "x1", "x2", "X", "Y"] and len(rows) == 3


@pytest.mark.parametrize(
    "system, metric",
    [("alpha-cubic", SINE), ("II-prime", CURL_VIOLATION), ("cubic-exceptional", SINE), ("I", {"kind": "CubicGeneral", "exprs": {"A": "1", "B": "1", "C": "0", "D": "0"}})],
)
def test_kind_mismatch_is_a_usage_error(capsys, system, metric):
    code, _, err = invoke(capsys, "residuals", "--system", system, "--metric", json.dumps(metric), *SMALL)
    assert code == 2 and ("does not apply" in err or "needs a CubicExceptional" in err)


def test_unknown_system_and_variant(capsys):
    assert invoke(capsys, "residuals", "--system", "VII", "--metric", json.dumps(SINE), *SMALL)[0] == 2
    assert invoke(capsys, "residuals", "--system", "III", "--variant", "printed", "--metric", json.dumps(SINE), *SMALL)[0] == 2


# -- config -----------------------------------------------------------------


def test_config_file_with_flag_overrides(capsys, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"metric": SINE, "grid": {"bounds": [0.1, 0.9, 0.1, 0.9], "n1": 3, "n2": 3, "ndirs": 4}, "order": 3}))
    code, out, _ = invoke(capsys, "classify", "--metric", path, "--dirs", "6")
    doc = json.loads(out)
    assert code == 0
    assert doc["grid"]["n1"] == 3 and doc["grid"]["ndirs"] == 6 and doc["order"] == 3


@pytest.mark.parametrize(
    "argv",
    [
        ["classify", "--metric", "missing.json"],
        ["classify", "--metric", "{broken"],
        ["classify", "--metric", json.dumps({"kind": "Riemann"})],
        ["classify", "--metric", json.dumps({"kind": "KropinaCanonical", "exprs": {"phi": "sin x1"}})],
        ["classify", "--metric", json.dumps(SINE), "--grid", "0,1,0,1,2"],
        ["classify", "--metric", json.dumps(SINE), "--grid", "1,0,0,1,3,3"],
        ["classify", "--metric", json.dumps(SINE), "--grid", "0,1,0,1,1,3"],
        ["classify", "--metric", json.dumps(SINE), "--order", "7"],
        ["classify", "--metric", json.dumps(SINE), "--threshold-pass", "1e-2", "--threshold-fail", "1e-4"],
        ["classify"],
        ["geodesic", "--metric", json.dumps(SINE), "--x0", "0.3", "--v0", "1,0"],
        ["geodesic", "--metric", json.dumps(SINE), "--x0", "0.3,0.3", "--v0", "1,0", "--steps", "4"],
    ],
)
def test_usage_errors(capsys, argv):
    code, _, err = invoke(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_argparse_errors_exit_with_two(capsys):
    with pytest.raises(SystemExit) as info:
        cli.run(["residuals"])
    assert info.value.code == 2


# -- geodesic ---------------------------------------------------------------


def test_degenerate_start_on_affine_profile(capsys):
    code, out, _ = invoke(capsys, "geodesic", "--metric", json.dumps(AFFINE), "--x0", "0,0", "--v0", "1,1")
    assert code == 1 and "DegenerateTensor" in json.loads(out)["error"]


def test_minkowski_geodesic_files(capsys, tmp_path):
    prefix = tmp_path / "line"
    metric = {"kind": "MinkowskiLinear", "constants": {"k1": 0.5, "k2": 2.0, "k3": -1.0}}
    code, _, _ = invoke(capsys, "geodesic", "--metric", json.dumps(metric), "--x0", "0,0", "--v0", "1,1", "--t-end", "1", "--steps", "50", "--out", prefix)
    assert code == 0
    summary = json.loads((tmp_path / "line.json").read_text())
    assert summary["deviation"] < 1e-12 and summary["termination"] == "completed"
    rows = list(csv.reader((tmp_path / "line.csv").open()))
    assert rows[0] == ["t", "x1", "x2", "v1", "v2"] and len(rows) == 52


def test_canonical_geodesic_is_straight(capsys):
    metric = {"kind": "KropinaCanonical", "exprs": {"phi": "x1^2*x2 + sin(x2)"}}
    code, out, _ = invoke(capsys, "geodesic", "--metric", json.dumps(metric), "--x0", "0.3,0.4", "--v0", "1,0.5", "--t-end", "0.3", "--steps", "60")
    assert code == 0 and json.loads(out)["deviation"] < 1e-6


def test_geodesic_starting_on_the_singular_direction(capsys, tmp_path):
    prefix = tmp_path / "bad"
    code, _, err = invoke(capsys, "geodesic", "--metric", json.dumps(SINE), "--x0", "0.3,0.3", "--v0", "0,1", "--out", prefix)
    assert code == 1 and err.startswith("error: cannot start geodesic")
    summary = json.loads((tmp_path / "bad.json").read_text())
    assert summary["termination"] == "immediate-singularity"
    assert not (tmp_path / "bad.csv").exists()


def test_geodesic_halting_early_exits_with_one(capsys):
    code, out, _ = invoke(capsys, "geodesic", "--metric", json.dumps(SINE), "--x0", "0.5,0.5", "--v0", "1,0.2", "--t-end", "5", "--steps", "100", "--box", "0,1,0,1")
    assert code == 1 and json.loads(out)["termination"] == "left-box"


# -- suite corpus -----------------------------------------------------------


def _corpus(tmp_path, entries):
    path = tmp_path / "corpus.json"
    path.write_text(json.dumps(entries))
    return path


def test_corpus_fault_injection(capsys, tmp_path):
    entries = [
        {"name": "flat rational", "metric": FLAT_RATIONAL, "expect": {"projective": "pass", "minkowski": "pass"}},
        {"name": "sine potential", "metric": SINE, "expect": {"projective": "pass", "minkowski": "fail"}},
        # seeded fault: this metric is not projective
        {"name": "broken", "metric": CURL_VIOLATION, "expect": {"projective": "pass"}},
        {"name": "affine", "metric": AFFINE, "expect": {"minkowski": "pass"}},
    ]
    code, out, _ = invoke(capsys, "suite", "--corpus", _corpus(tmp_path, entries), *SMALL)
    assert code == 1
    table = [line for line in out.splitlines() if line.startswith("[")]
    assert [line.startswith("[FAIL]") for line in table] == [False, False, True, False]
    doc = json.loads(out[out.index("{"):])
    assert [r["passed"] for r in doc["rows"]] == [True, True, False, True]


def test_corpus_all_pass(capsys, tmp_path):
    entries = [{"name": "flat rational", "metric": FLAT_RATIONAL, "expect": {"minkowski": "pass"}}]
    assert invoke(capsys, "suite", "--corpus", _corpus(tmp_path, entries), *SMALL)[0] == 0


@pytest.mark.parametrize("content", [[], {"metrics": []}, [{"name": "x"}], [{"metric": SINE, "expect": {"shiny": "pass"}}]])
def test_bad_corpora(capsys, tmp_path, content):
    code, _, err = invoke(capsys, "suite", "--corpus", _corpus(tmp_path, content))
    assert code == 2 and err.startswith("error:")


def test_console_script():
    done = subprocess.run(
        ["finsler2d", "residuals", "--system", "II-prime", "--metric", json.dumps(AFFINE), "--grid", "0.1,0.9,0.1,0.9,3,3", "--dirs", "4"],
        capture_output=True, text=True, check=False,
    )
    assert done.returncode == 0 and json.loads(done.stdout)["passed"] is True
