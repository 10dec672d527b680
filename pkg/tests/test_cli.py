import json

from click.testing import CliRunner

from action_lattice.cli import main


def test_verify_single_suite(tmp_path):
    res = CliRunner().invoke(main, ["verify", "lemma-3.6", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    out = json.loads(res.output)
    assert out["id"] == "lemma-3.6" and out["violations"] == 0
    assert {"samples", "worst_margin"} <= set(out)


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"bogus": 1}')
    res = CliRunner().invoke(main, ["report", "--config", str(cfg), "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_unknown_suite_is_usage_error(tmp_path):
    res = CliRunner().invoke(main, ["verify", "nope", "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_report_single_suite_bundle(tmp_path):
    res = CliRunner().invoke(main, ["report", "--suite", "ez-identities", "--suite", "spectral",
                                    "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["suites"]) == {"ez-identities", "spectral"} and rep["ok"]
    assert rep["schema"] == 1
    assert (tmp_path / "spectra.csv").exists()
    assert json.loads((tmp_path / "pages.json").read_text())
    assert (tmp_path / "figures" / "suites.png").exists()


def test_morse_homology_output(tmp_path):
    res = CliRunner().invoke(main, ["morse-homology", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    data = json.loads((tmp_path / "morse_homology.json").read_text())
    assert data["ranks"] == {"8": 3}
    assert {"generators", "differential", "ranks"} <= set(data)


def test_ss_compute_and_ez_check(tmp_path):
    r1 = CliRunner().invoke(main, ["ss", "compute", "--out", str(tmp_path)])
    assert r1.exit_code == 0, r1.output
    pages = json.loads((tmp_path / "pages.json").read_text())
    assert pages[2]["table"] == [[0, 0, 1], [0, 2, 1], [1, 0, 1], [1, 2, 1]]
    cc = tmp_path / "cc.json"
    cc.write_text(json.dumps({"ring": "Z", "generators": {"0": ["a"], "1": ["b"]},
                              "boundary": {"1": [[2]]}}))
    r2 = CliRunner().invoke(main, ["ez", "check", "--max-degree", "2", "--complex", str(cc),
                                   "--out", str(tmp_path)])
    assert r2.exit_code == 0, r2.output
    assert json.loads(r2.output)["homology"]["torsion"] == {"0": [2]}
