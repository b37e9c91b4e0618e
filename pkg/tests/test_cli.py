import json

import pytest

from restricted_gradient.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from restricted_gradient.ensembles import EnsembleSpec
from restricted_gradient.exceptions import ConfigurationError
from restricted_gradient.experiments import Checks, SolverOptions, load_config, run_single

SMALL = {
    "lasso": ["--d", "60", "--alpha", "20"],
    "lasso-lag": ["--d", "60", "--alpha", "20"],
    "logistic": ["--d", "40", "--alpha", "20", "--max-iters", "300"],
    "probe-rsc": ["--d", "60", "--alpha", "20"],
    "matrix-cs": ["--d", "8", "--rank", "2", "--alpha", "10"],
    "matcomp": ["--d", "15", "--rank", "2", "--alpha", "4", "--max-iters", "300"],
    "matdecomp": ["--d", "12", "--rank", "2", "--s", "2", "--max-iters", "300"],
}


@pytest.mark.parametrize("cmd", list(SMALL))
def test_family_commands(cmd, tmp_path, capsys):
    out = tmp_path / cmd
    assert main([cmd, *SMALL[cmd], "--out", str(out), "--seed", "3"]) == EXIT_OK
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["name"] == cmd
    summary = json.loads((out / "summary.json").read_text())
    assert summary["version"] == 1
    assert summary["flags"]["seed"] == 3
    assert (out / "rep0_trace.csv").exists() and (out / "curve.csv").exists()
    theory = json.loads((out / "rep0_theory.json").read_text())
    assert {"rate", "reference", "stat_error"} <= set(theory)


def test_checks_and_reps(tmp_path):
    out = tmp_path / "l"
    gp = tmp_path / "plot.gp"
    assert main(["lasso", "--d", "60", "--alpha", "20", "--reps", "2", "--cone", "--probe",
                 "--out", str(out), "--gnuplot-script", str(gp)]) == EXIT_OK
    theory = json.loads((out / "rep1_theory.json").read_text())
    assert theory["seed"] == 1
    assert theory["cone"]["thm1"]["violations"] == 0
    assert "probe" in theory
    assert "curve.csv" in gp.read_text()


def test_fit_rate_command(tmp_path, capsys):
    out = tmp_path / "l"
    main(["lasso", "--d", "60", "--alpha", "20", "--out", str(out)])
    capsys.readouterr()
    assert main(["fit-rate", "--trace", str(out / "rep0_trace.csv")]) == EXIT_OK
    fit = json.loads(capsys.readouterr().out)
    assert fit["status"] == "geometric" and 0 < fit["kappa_hat"] < 1


def test_usage_and_io_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["lasso", "--bogus"]) == EXIT_USAGE
    assert main(["lasso", "--reps", "0"]) == EXIT_USAGE
    assert main(["lasso", "--step", "fast"]) == EXIT_USAGE
    assert main(["lasso", "--omega", "1.5", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["fit-rate", "--trace", str(tmp_path / "missing.csv")]) == EXIT_IO
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_IO
    capsys.readouterr()


def test_run_config(tmp_path, capsys):
    cfg = {"output_dir": str(tmp_path / "o"), "experiments": [
        {"name": "a", "reps": 2, "ensemble": {"family": "sparse_linear", "d": 50, "s": 4, "alpha": 20}},
        {"name": "b", "ensemble": {"family": "matrix_cs", "d": 6, "rank": 1, "alpha": 10},
         "solver": {"step": "auto", "max_iters": 500}, "checks": {"corollary": False}},
    ]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg, indent=1))
    assert main(["run", "--config", str(path)]) == EXIT_OK
    assert (tmp_path / "o" / "a" / "rep1_trace.csv").exists()
    assert (tmp_path / "o" / "b" / "summary.json").exists()
    empty = tmp_path / "e.json"
    empty.write_text('{"experiments": []}')
    assert main(["run", "--config", str(empty), "--out", str(tmp_path / "e")]) == EXIT_OK


def test_config_errors_report_lines(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n "experiments": [\n  {"name": "x",\n   "ensemble": {"family": "sparse_linear", "d": 5, "s": 1, "alpha": 1, "bogus": 2}}]}')
    with pytest.raises(ConfigurationError, match=r"bad.json:3"):
        load_config(path)
    path.write_text('{"experiments": [}')
    with pytest.raises(ConfigurationError, match=r"bad.json:1:"):
        load_config(path)
    assert main(["run", "--config", str(path)]) == EXIT_USAGE


def test_byte_identical_reruns(tmp_path):
    for name in ("one", "two"):
        assert main(["lasso", "--d", "80", "--alpha", "10", "--seed", "11",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    a = (tmp_path / "one" / "rep0_trace.csv").read_bytes()
    b = (tmp_path / "two" / "rep0_trace.csv").read_bytes()
    assert a == b


def test_run_single_report():
    spec = EnsembleSpec("sparse_linear", d=80, s=5, alpha=15, seed=2)
    run = run_single(spec, SolverOptions(method="composite", lam="dual2"), Checks(cone=True))
    assert run.report["lam"] > 0
    assert run.report["cone"]["icb"]["violations"] == 0
    assert run.fit.status == "geometric"
    with pytest.raises(ConfigurationError):
        run_single(spec, SolverOptions(method="newton"))


def test_small_sample_reports_no_geometric_phase(tmp_path, capsys):
    assert main(["lasso", "--d", "200", "--alpha", "1", "--out", str(tmp_path)]) == EXIT_OK
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["status"] == "no_geometric_phase"


def test_fit_rate_halving_sequence(tmp_path, capsys):
    from restricted_gradient.solvers import IterateTrace
    tr = IterateTrace()
    for t in range(30):
        tr.append(t, 0.0, 0.5 ** t, 0.5 ** t, 0.0, 1.0)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    assert main(["fit-rate", "--trace", str(path)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["kappa_hat"] == pytest.approx(0.25)


def test_save_instance_flag(tmp_path):
    out = tmp_path / "o"
    assert main(["lasso", "--d", "40", "--alpha", "10", "--save-instance", "--out", str(out)]) == EXIT_OK
    assert (out / "rep0_instance.npz").exists() and (out / "rep0_instance.json").exists()
