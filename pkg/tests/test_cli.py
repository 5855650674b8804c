import json
import subprocess
import sys

import pytest

from radonlab.cli import main
from radonlab.config import ConfigError, ProblemConfig

HEIS = """[problem]
gamma = exp[(1,0)->d1] ∘ exp[(0,1)->d2 + x1*d3]
e = coordinate
"""

XST = """[problem]
gamma = x1 - t1*t2   # the product counterexample
e = coordinate
"""

PARABOLA = """[problem]
gamma = x1 + t1, x2 + t1^2
"""


def run(tmp_path, text, command, *extra, name="cfg.ini"):
    cfg = tmp_path / name
    cfg.write_text(text)
    out = tmp_path / f"{command}.json"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    rep = json.loads(out.read_text()) if out.exists() and out.is_file() else None
    return code, rep, out


def verdict(rep, name):
    return rep["results"]["verdicts"][name]


def test_analyze_heisenberg(tmp_path):
    code, rep, _ = run(tmp_path, HEIS, "analyze")
    assert code == 0 and rep["schema_version"] and not rep["errors"]
    assert rep["results"]["partition_exp"]["N"]
    assert verdict(rep, "III.A")["status"] == "Proved"
    assert rep["config"]["kernel"]["J"] == "8"  # defaults are echoed
    assert rep["provenance"]["truncation"] == {"L_t": 3, "L_x": 3, "budget": 6}


def test_analyze_xst_refuted_at_origin(tmp_path):
    code, rep, _ = run(tmp_path, XST, "analyze")
    assert code == 0
    v = verdict(rep, "III.A")
    assert v["status"] == "Refuted"
    assert v["witness"][0]["certificate"]["witness"]["x"] == [0]


@pytest.mark.parametrize("text", [PARABOLA, "[problem]\ngamma = x1 + t1\n", "[problem]\ngamma = x1 + t1 + x1*t1^2\n"])
def test_analyze_one_parameter_vacuous(tmp_path, text):
    code, rep, _ = run(tmp_path, text, "analyze")
    assert code == 0 and verdict(rep, "III.A")["status"] == "Proved"


def test_verify_accepts_and_rejects(tmp_path, capsys):
    _, rep, out = run(tmp_path, HEIS, "analyze")
    vout = tmp_path / "verify.json"
    assert main(["verify", str(out), "--out", str(vout)]) == 0
    res = json.loads(vout.read_text())["results"]
    assert res["checked"] > 0 and res["failed"] == 0
    # tamper with one Proved certificate's coefficient
    text = out.read_text()
    bad = json.loads(text)

    def first_cert(node):
        if isinstance(node, dict):
            if node.get("status") == "Proved" and node.get("coefficients"):
                return node
            for v in node.values():
                c = first_cert(v)
                if c is not None:
                    return c
        if isinstance(node, list):
            for v in node:
                c = first_cert(v)
                if c is not None:
                    return c
        return None

    cert = first_cert(bad)
    assert cert is not None
    k = next(iter(cert["coefficients"]))
    cert["coefficients"][k] = "7"
    tampered = tmp_path / "bad.json"
    tampered.write_text(json.dumps(bad))
    assert main(["verify", str(tampered), "--out", str(tmp_path / "v2.json")]) == 1


def test_verify_refuted_certificates(tmp_path):
    _, _, out = run(tmp_path, XST, "analyze")
    vout = tmp_path / "verify.json"
    assert main(["verify", str(out), "--out", str(vout)]) == 0
    assert json.loads(vout.read_text())["results"]["checked"] > 0


def test_reports_are_deterministic(tmp_path):
    _, _, a = run(tmp_path, XST, "analyze", "--seed", "3", name="a.ini")
    first = a.read_text()
    _, _, b = run(tmp_path, XST, "analyze", "--seed", "3", name="a.ini")
    assert b.read_text() == first


def test_tables_format(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(XST)
    assert main(["maximal", "--config", str(cfg), "--format", "tables"]) == 0
    text = capsys.readouterr().out
    assert "# family" in text and "# comparison" in text
    outdir = tmp_path / "tables"
    assert main(["maximal", "--config", str(cfg), "--format", "tables", "--out", str(outdir)]) == 0
    assert (outdir / "family.csv").read_text().splitlines()[0].startswith("l,")


def test_truncation_flags(tmp_path):
    code, rep, _ = run(tmp_path, XST, "analyze", "--lt", "2", "--lx", "2")
    assert code == 0 and rep["provenance"]["truncation"]["L_t"] == 2


def test_divide_command(tmp_path):
    text = XST + "[divide]\nf = t1*x1 + t2*x1^2\ngenerators = t1 + x1\n"
    code, rep, _ = run(tmp_path, text, "divide")
    assert code == 0 and rep["results"]["remainder"]


def test_lie_and_prep_commands(tmp_path):
    code, rep, _ = run(tmp_path, HEIS, "lie")
    assert code == 0
    code, rep, _ = run(tmp_path, XST, "prep")
    assert code == 0 and [p["alpha"] for p in rep["results"]["preparation"]] == [[1, 1]]
    assert rep["results"]["kronecker_identity"] and rep["results"]["reconstruction_exact"]


def test_ccball_command(tmp_path):
    text = "[problem]\ngamma = x1 + t1, x2 + t1^2\n[ccball]\npaths = 500\ndeltas = 0.05, 0.1, 0.2\n"
    code, rep, _ = run(tmp_path, text, "ccball")
    assert code == 0 and len(rep["results"]["extents"]) == 3


def test_kernel_and_norm_small(tmp_path):
    text = ("[problem]\ngamma = x1 + t1\n[kernel]\nJ = 3\nJ_min = 2\nresolution = 256\n"
            "[operator]\nx_points = 257\nJ_min = 2\nJ_max = 3\nt_nodes = 8\n")
    code, rep, _ = run(tmp_path, text, "kernel")
    assert code == 0 and rep["results"]["max_cancellation_error"] <= 1e-10
    code, rep, _ = run(tmp_path, text, "norm")
    assert code == 0 and [r["J"] for r in rep["results"]["norms"]] == [2, 3]
    assert all(r["converged"] for r in rep["results"]["norms"])


def test_control_command(tmp_path):
    text = ("[problem]\ngamma = x1 + t1, x2 + t1^2\n[control]\ntarget = x1^2*d2\ndegree = 1, 2\n"
            "fields = d1; x1*d2\ndegrees = 1, 0; 0, 1\n")
    code, rep, _ = run(tmp_path, text, "control")
    assert code == 0
    cert, = rep["results"]["certificates"]
    assert cert["status"] == "Proved" and cert["coefficients"] == {"1": "x1"}


def test_stage_failure_exit_code(tmp_path, capsys):
    # the grid is too small for gamma_t(supp psi1)
    text = ("[problem]\ngamma = x1 + t1\n[operator]\nx_points = 65\nx_lo = -0.5\nx_hi = 0.5\n"
            "J_min = 1\nJ_max = 1\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text(text)
    assert main(["norm", "--config", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert "stage 'norm' failed" in err and "DomainEscapeError" in err


def test_config_errors(tmp_path, capsys):
    for text in ("[nope]\nx = 1\n", "[problem]\ncolour = red\n", "[problem]\ngamma = x1 + \n",
                 "[problem]\ngamma = x1 + t1\ne = 1,0; 0,1\n"):
        cfg = tmp_path / "bad.ini"
        cfg.write_text(text)
        assert main(["analyze", "--config", str(cfg)]) == 2
    assert "config error" in capsys.readouterr().err


def test_config_round_trip():
    cfg = ProblemConfig.from_text(XST)
    assert cfg.dims() == (2, 1) and cfg.dilations.e == ((1, 0), (0, 1))
    with pytest.raises(ConfigError):
        ProblemConfig.from_text("[kernel]\nJ = x\n").geti("kernel", "J")


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(PARABOLA)
    res = subprocess.run([sys.executable, "-m", "radonlab", "analyze", "--config", str(cfg)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and '"schema_version"' in res.stdout
