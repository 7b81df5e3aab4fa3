import math

import numpy as np
import pytest

from ubmlsmc import cli
from ubmlsmc import debias as db
from ubmlsmc import harness
from ubmlsmc.harness import ConfigError, load_config
from ubmlsmc.sgd import SGDTrace
from ubmlsmc.streams import stream


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL_MSE = """
[mse]
p_max_values = 0
m_values = 1, 2
mlsmc_levels = 0, 1

[experiment]
replicates = 2
"""


# -- configuration -----------------------------------------------------------------------

def test_defaults_load():
    cfg = load_config()
    assert cfg.replicates == 50 and cfg.seed == 0
    assert cfg.model().variant == "toy"
    assert cfg.schedule().p_max == 2 and cfg.kernel().proposal_std == 0.2


@pytest.mark.parametrize("text,match", [
    ("[nope]\na = 1\n", r"unknown section \[nope\]"),
    ("[model]\nthetaa = 2\n", r"unknown key model.thetaa"),
    ("[model]\ntheta = two\n", r"model.theta"),
    ("[experiment]\nreplicates = 0\n", r"experiment.replicates"),
    ("[schedule]\np_max = -1\n", r"p_max"),
    ("[mse]\nreference = guess\n", r"mse.reference"),
    ("[sgd]\nsign = sideways\n", r"sign"),
    ("[experiment]\nkind = plot\n", r"experiment.kind"),
    ("[model]\nvariant = general\nu_true = 0.1\n", r"model.u_true"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        cfg = load_config(text)
        cfg.model()


def test_digest_tracks_content_not_output():
    a = load_config("[experiment]\noutput = a.csv\n")
    b = load_config("[experiment]\noutput = b.csv\n")
    c = load_config("[experiment]\nmaster_seed = 1\n")
    assert a.digest() == b.digest() != c.digest()


def test_general_model_from_config():
    cfg = load_config("[model]\nvariant = general\ntheta = 0.3\nu_true = 0.5, -0.3\n"
                      "theta_true = 0.3\ndata_seed = 0\n")
    spec = cfg.model()
    assert spec.K == 2
    np.testing.assert_allclose(spec.y_array, [24.998, 33.394], atol=1e-3)


# -- CLI -----------------------------------------------------------------------------------

def test_oracle_command(capsys):
    assert cli.main(["oracle"]) == 0
    out = capsys.readouterr().out
    assert "grad_log_marginal: 1.80575095375463" in out
    assert "mle: 2.35394653086" in out


def test_oracle_command_general(tmp_path, capsys):
    path = _write(tmp_path, "[model]\nvariant = general\ntheta = 0.3\nu_true = 0.5, -0.3\n"
                            "theta_true = 0.3\ndata_seed = 0\n[mse]\nreference_level = 4\n")
    assert cli.main(["oracle", "--config", path]) == 0
    assert "grad_log_marginal: 1.519" in capsys.readouterr().out


def test_estimate_is_reproducible(capsys):
    assert cli.main(["estimate", "--seed", "3"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["estimate", "--seed", "3", "--threads", "2"]) == 0
    assert capsys.readouterr().out == first
    assert cli.main(["estimate", "--seed", "4"]) == 0
    assert capsys.readouterr().out != first


def test_estimate_prints_every_draw(tmp_path, capsys):
    path = _write(tmp_path, "[estimate]\nm = 10\n")
    assert cli.main(["estimate", "--config", path]) == 0
    out = capsys.readouterr().out
    assert sum(line.startswith("draw ") for line in out.splitlines()) == 10
    assert "replicates: 10" in out


def test_estimate_near_truth():
    cfg = load_config("[estimate]\nm = 400\n[schedule]\np_max = 1\n")
    est = db.estimate_gradient(cfg.model(), 2.0, 400, cfg.schedule(), cfg.kernel(), seed=1)
    se = est.singles[:, 0].std(ddof=1) / math.sqrt(400)
    assert abs(est.value[0] - 1.805750953754632) < 4 * se


def test_bad_inputs_exit_nonzero(tmp_path, capsys):
    assert cli.main(["oracle", "--config", str(tmp_path / "missing.ini")]) == 2
    assert capsys.readouterr().err.startswith("error: ")
    assert cli.main(["estimate", "--config", _write(tmp_path, "[model]\nbogus = 1\n")]) == 2
    assert "ConfigError" in capsys.readouterr().err
    assert cli.main(["mse", "--config", _write(tmp_path, "[experiment]\nkind = sgd\n", "k.ini")]) == 2
    assert cli.main(["estimate", "--threads", "0"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_mse_smoke_run_writes_versioned_csv(tmp_path):
    out = tmp_path / "mse.csv"
    path = _write(tmp_path, SMALL_MSE.replace("replicates = 2", "replicates = 1"))
    assert cli.main(["mse", "--config", path, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    cfg = load_config(path=path)
    assert lines[0] == f"# ubmlsmc-csv v1 kind=mse config_sha256={cfg.digest()}"
    assert lines[1] == ",".join(harness.MSE_HEADER)
    rows = harness.read_rows(out.read_text())
    assert [(r["method"], r["tag"]) for r in rows] == [
        ("unbiased", "pmax=0;M=1"), ("unbiased", "pmax=0;M=2"), ("mlsmc", "L=0"), ("mlsmc", "L=1")]
    assert all(float(r["cost_units"]) > 0 and float(r["squared_error"]) >= 0 for r in rows)


def test_mse_csv_independent_of_threads(tmp_path):
    path = _write(tmp_path, SMALL_MSE)
    outs = []
    for t in (1, 4):
        out = tmp_path / f"t{t}.csv"
        assert cli.main(["mse", "--config", path, "--out", str(out), "--threads", str(t)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_sgd_zero_iterations(tmp_path):
    out = tmp_path / "sgd.csv"
    path = _write(tmp_path, "[sgd]\niterations = 0\nmlsmc_levels = 1\n[experiment]\nreplicates = 3\n")
    assert cli.main(["sgd", "--config", path, "--out", str(out)]) == 0
    rows = harness.read_rows(out.read_text())
    assert len(rows) == 2 * 3
    assert {float(r["cumulative_cost"]) for r in rows} == {0.0}
    assert list(rows[0]) == harness.SGD_HEADER
    assert float(rows[0]["squared_error_to_theta_true"]) == 1.0  # theta_0 = 1, theta_true = 2


def test_sgd_rows_follow_traces():
    cfg = load_config("[sgd]\niterations = 5\n[experiment]\nreplicates = 2\n")
    rows = harness.run_sgd_experiment(cfg)
    assert len(rows) == 2 * 6
    costs = [r[2] for r in rows[:6]]
    assert costs == sorted(costs) and costs[0] == 0.0


def test_sgd_variant_grid():
    cfg = load_config("[sgd]\nalpha1_values = 0.025, 0.05\nm_values = 1, 2\np_max_values = 0, 1\n"
                      "mlsmc_levels = 0, 2\n")
    names = [v[0] for v in harness.sgd_variants(cfg)]
    assert len(names) == 2 * 2 * 2 + 2
    assert names[-1] == "mlsmc;alpha1=0.025;L=2"


def test_stream_seeds_are_keyed():
    a = harness.stream_seed(0, ("ub", 1, 2), 3).generate_state(2)
    b = harness.stream_seed(0, ("ub", 1, 2), 3).generate_state(2)
    c = harness.stream_seed(0, ("ub", 1, 2), 4).generate_state(2)
    d = harness.stream_seed(0, ("ml", 1, 2), 3).generate_state(2)
    assert (a == b).all() and not (a == c).all() and not (a == d).all()


# -- cost accounting and summaries ---------------------------------------------------------

def test_cost_additivity(toy, kernel):
    sch = db.RandomizationSchedule()
    est = db.estimate_gradient(toy, 2.0, 12, sch, kernel, seed=21, threads=3)
    parts = [db.single_term(toy, 2.0, sch, kernel, stream(21, i))[3] for i in range(12)]
    assert est.cost_units == sum(p.total_units for p in parts)
    for level, count in est.ledger.solves.items():
        assert count == sum(p.solves.get(level, 0) for p in parts)


def test_mlsmc_reference_mode():
    cfg = load_config("[mse]\nreference = mlsmc\nreference_level = 2\nreference_runs = 3\n"
                      "reference_n = 64\n")
    ref = harness.reference_gradient(cfg)
    assert abs(ref - 1.805750953754632) < 0.3
    with pytest.raises(ConfigError):
        harness.reference_gradient(load_config(
            "[model]\nvariant = general\nu_true = 0.5, -0.3\n[mse]\nreference = analytic\n"))


def test_summaries():
    rows = [("unbiased", "a", 0, 10.0, 4.0), ("unbiased", "a", 1, 30.0, 2.0), ("mlsmc", "L=0", 0, 5.0, 1.0)]
    s = harness.summarize_mse(rows)
    assert s[("unbiased", "a")] == (20.0, 3.0, 2)
    x = np.array([1.0, 10.0, 100.0])
    assert harness.loglog_slope(x, 3 * x**-1.0) == pytest.approx(-1.0)
    tr = SGDTrace(xi=[0.0, math.log(2.0), math.log(3.0)], step=[0, 0, 0], cost=[0.0, 5.0, 5.0])
    got = harness.error_at_cost([tr], 7.0, lambda th: th)
    assert got[0] == pytest.approx(2.0)
