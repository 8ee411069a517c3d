import json
import math

import numpy as np
import pytest

from deltashell.cli import main


def run_json(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, json.loads(out.read_text())


def run_text(args, tmp_path, name="out.csv"):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, out.read_text()


def csv_rows(text):
    lines = [ln for ln in text.strip().split("\n") if not ln.startswith("#")]
    return lines[0], [ln.split(",") for ln in lines[1:]]


def meta_lines(text):
    return [ln for ln in text.strip().split("\n") if ln.startswith("#")]


# ---------------------------------------------------------------------------
# coupling


def test_coupling_square_well_hits_the_closed_form(tmp_path):
    code, doc = run_json(
        ["coupling", "--potential", "square", "--tau", "10",
         "--eta", "0.157079632679"], tmp_path)
    assert code == 0
    assert abs(doc["lambda_e"] - 2.0) < 1e-9
    assert doc["method_agreement"] < 1e-8
    assert set(doc) >= {"lambda_e", "lambda_s", "hs_norm", "method_agreement"}
    assert doc["metadata"]["command"] == "coupling"


def test_coupling_zero_well(tmp_path):
    code, doc = run_json(["coupling", "--tau", "0", "--eta", "0.1"], tmp_path)
    assert code == 0
    assert doc["lambda_e"] == 0.0 and doc["lambda_s"] == 0.0
    assert doc["hs_norm"] == 0.0


def test_coupling_table_matches_closed_form(tmp_path):
    ts = np.linspace(-0.25, 0.25, 801)
    table = {"kind": "table", "eta": 0.25,
             "ts": list(ts), "vs": [0.2] * len(ts)}
    vfile = tmp_path / "v.json"
    vfile.write_text(json.dumps(table))
    code, doc = run_json(
        ["coupling", "--potential", "table", "--file", str(vfile)], tmp_path)
    assert code == 0
    # the table samples a square well with tau*eta = 0.1
    assert abs(doc["lambda_e"] - 2.0 * math.tan(0.05)) < 1e-4
    assert abs(doc["lambda_s"] - 2.0 * math.tanh(0.05)) < 1e-4


def test_coupling_disagreement_exits_one(tmp_path):
    code, doc = run_json(
        ["coupling", "--tau", "2.8", "--eta", "1.0", "--n", "8",
         "--tol", "1e-14"], tmp_path)
    assert code == 1
    assert doc["error"]["type"] == "MethodDisagreement"
    assert doc["method_agreement"] > 1e-14


def test_coupling_neumann_reported_with_bound(tmp_path):
    code, doc = run_json(["coupling", "--tau", "0.4", "--eta", "1.0"], tmp_path)
    assert code == 0
    neu = doc["methods"]["neumann"]
    assert abs(neu["lambda_e"] - doc["lambda_e"]) < 1e-10
    assert neu["error_bound"] < 1e-12


# ---------------------------------------------------------------------------
# config file resolution


def test_config_file_supplies_parameters(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tau": 10.0, "eta": 0.157079632679}))
    code, doc = run_json(["coupling", "--config", str(cfg)], tmp_path)
    assert code == 0
    assert abs(doc["lambda_e"] - 2.0) < 1e-9


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tau": 10.0, "eta": 0.157079632679}))
    code, doc = run_json(
        ["coupling", "--config", str(cfg), "--tau", "0"], tmp_path)
    assert code == 0
    assert doc["lambda_e"] == 0.0


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit) as exc:
        main(["coupling", "--config", str(cfg)])
    assert exc.value.code == 2


def test_missing_config_file_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["coupling", "--config", str(tmp_path / "nope.json")])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# klein


def test_klein_example_emits_decreasing_gaps(tmp_path):
    code, text = run_text(
        ["klein", "--tau", "1.0", "--eta", "1.0",
         "--eps", "0.2,0.1,0.05,0.025", "--kappa", "-1"], tmp_path)
    assert code == 0
    header, rows = csv_rows(text)
    assert header == "epsilon,a_eps,a_nonlinear,a_linear,gap"
    assert len(rows) == 4
    gaps = [float(r[4]) for r in rows]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    meta = meta_lines(text)
    assert any(ln.startswith("# command=klein") for ln in meta)
    assert any(ln.startswith("# slope=") for ln in meta)


def test_klein_json_summary_file(tmp_path):
    jout = tmp_path / "summary.json"
    code, _ = run_text(
        ["klein", "--tau", "1.0", "--eta", "1.0", "--eps", "0.2,0.1",
         "--json-out", str(jout)], tmp_path)
    assert code == 0
    doc = json.loads(jout.read_text())
    assert doc["separation"] == pytest.approx(0.0877744711461932, abs=1e-9)
    assert doc["epsilons"] == [0.2, 0.1]


def test_klein_empty_eps_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["klein", "--tau", "1.0", "--eta", "1.0", "--eps", ""])
    assert exc.value.code == 2


def test_klein_strength_outside_domain_exits_two(capsys):
    code = main(["klein", "--tau", "3.5", "--eta", "1.0", "--eps", "0.1"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_klein_reruns_are_byte_identical(tmp_path):
    args = ["klein", "--tau", "1.0", "--eta", "1.0", "--eps", "0.2,0.1"]
    _, first = run_text(args, tmp_path, "a.csv")
    _, second = run_text(args, tmp_path, "b.csv")
    assert first == second
    assert "# out=" not in first


# ---------------------------------------------------------------------------
# spectrum


def test_spectrum_single_channel_root(tmp_path):
    code, text = run_text(
        ["spectrum", "--lam", "1.0", "--kappa=-1,1"], tmp_path)
    assert code == 0
    header, rows = csv_rows(text)
    assert header == "kappa,index,eigenvalue,residual,bracket_lo,bracket_hi"
    assert len(rows) == 1
    assert rows[0][0] == "-1"
    # closed form, frozen before the build
    assert float(rows[0][2]) == pytest.approx(-0.6526579385650109, abs=1e-9)


def test_spectrum_critical_coupling_exits_two(capsys):
    code = main(["spectrum", "--lam", "2.0"])
    assert code == 2
    assert "critical" in capsys.readouterr().err.lower()


def test_spectrum_requires_lam():
    with pytest.raises(SystemExit) as exc:
        main(["spectrum"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# converge


def test_converge_emits_decaying_norms(tmp_path):
    code, text = run_text(
        ["converge", "--N", "80", "--M", "3", "--eps", "0.2,0.1"], tmp_path)
    assert code == 0
    header, rows = csv_rows(text)
    assert header == "epsilon,norm_B,norm_A,norm_C,floor_flag"
    assert len(rows) == 2
    for col in (1, 2, 3):
        assert float(rows[1][col]) < float(rows[0][col])
    assert any(ln.startswith("# mesh_nodes=80") for ln in meta_lines(text))


def test_converge_empty_eps_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["converge", "--eps", ""])
    assert exc.value.code == 2


def test_converge_requires_eps():
    with pytest.raises(SystemExit) as exc:
        main(["converge", "--N", "80", "--M", "3"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# jump-check and geometry-audit


def test_jump_check_coarse_mesh_passes(tmp_path):
    code, doc = run_json(
        ["jump-check", "--n", "320", "--density", "random-wave"], tmp_path)
    assert code == 0
    assert doc["passed"] is True
    assert doc["max_rel_error"] < 5e-2
    assert doc["jump_identity_rel"] < 5e-2
    assert doc["nodes"] == 320


def test_jump_check_bad_density_from_config_exits_two(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"density": "sawtooth", "n": 320}))
    code = main(["jump-check", "--config", str(cfg)])
    assert code == 2
    assert "density" in capsys.readouterr().err


def test_geometry_audit_sphere_closed_forms(tmp_path):
    code, doc = run_json(["geometry-audit"], tmp_path)
    assert code == 0
    assert doc["passed"] is True
    assert doc["volume_rel_error"] < 1e-6
    assert doc["radial_moment_rel_error"] < 1e-6
    r, eps = 1.0, 0.1
    exact = 4.0 * math.pi * ((r + eps) ** 3 - (r - eps) ** 3) / 3.0
    assert doc["volume"] == pytest.approx(exact, rel=1e-9)
    assert all(not row[1] for row in doc["growth"]["rows"])


def test_geometry_audit_ellipsoid_runs_growth(tmp_path):
    code, doc = run_json(
        ["geometry-audit", "--surface", "ellipsoid", "--axes", "1.3,1.0,0.8",
         "--n", "1280", "--radii", "0.5,1.0"], tmp_path)
    assert code == 0
    assert "volume_closed_form" not in doc
    assert doc["growth"]["c1"] > 3.3


def test_geometry_audit_needs_axes_for_ellipsoid():
    with pytest.raises(SystemExit) as exc:
        main(["geometry-audit", "--surface", "ellipsoid"])
    assert exc.value.code == 2
