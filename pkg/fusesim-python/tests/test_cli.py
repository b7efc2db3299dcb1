import os

import pytest

from fusesim.cli import EXIT_CONFIG, EXIT_OK, EXIT_UNFAIR, main

HONEST_CS = "protocol = cs\nseed = 1\n"

STUCK_SCS = """
protocol = scs_legacy
network.malleate = true
party.a.abort_at = open
"""


def scenario_file(data_dir, name, text):
    path = os.path.join(data_dir, name)
    with open(path, "w") as f:
        f.write(text)
    return path


def test_run_honest(data_dir, capsys):
    path = scenario_file(data_dir, "honest-cs.scenario", HONEST_CS)

    assert main(["run", path]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[-1] == "nominal deltas=a=+0,b=+0 phase=Opened"
    assert "cs.commit" in out


def test_run_seed_override(data_dir, capsys):
    path = scenario_file(data_dir, "seeded-cs.scenario", HONEST_CS)

    assert main(["run", path, "--seed", "9", "--format", "records"]) == EXIT_OK
    first = capsys.readouterr().out.splitlines()[0]
    assert first.startswith("0\tscenario\t")
    assert ",seed=9," in first


def test_run_writes_trace_then_classify(data_dir, output_dir, capsys):
    """A legacy protocol stuck under malleation is expected; classify still reports it."""
    path = scenario_file(data_dir, "stuck-scs.scenario", STUCK_SCS)
    trace_path = os.path.join(output_dir, "stuck-scs.trace")

    assert main(["run", path, "--trace", trace_path]) == EXIT_OK
    assert "stuck-funds" in capsys.readouterr().out
    assert os.path.exists(trace_path)

    assert main(["classify", trace_path]) == EXIT_UNFAIR
    assert capsys.readouterr().out.startswith("stuck-funds deltas=a=-10,b=+0")

    assert main(["classify", trace_path, "--format", "records"]) == EXIT_UNFAIR
    assert capsys.readouterr().out == "stuck-funds\ta=Done,b=Stuck\n"


def test_run_config_errors(data_dir, capsys):
    path = scenario_file(data_dir, "bad.scenario", "protocol = cs\ncolour = blue\n")

    assert main(["run", path]) == EXIT_CONFIG
    assert "config error: colour: unknown key" in capsys.readouterr().err

    missing = os.path.join(data_dir, "missing.scenario")
    assert main(["run", missing]) == EXIT_CONFIG


def test_run_scs_legacy_t_too_small(data_dir, capsys):
    path = scenario_file(data_dir, "short-scs.scenario", STUCK_SCS + "params.t = 4\n")

    assert main(["run", path]) == EXIT_CONFIG
    assert "params.t: scs_legacy needs t > 4 for max_bb=1, got 4" in capsys.readouterr().err
    assert main(["matrix", "scs_legacy", "--t", "4"]) == EXIT_CONFIG


@pytest.mark.parametrize(
    "text",
    [
        "not\ta\ttrace\n",
        "14\tsettle\ta\t-\t-\tinitial=1\n14\tend\t-\t-\t-\tOpened\n",
        "14\tsettle\ta\t-\t-\tdelta=lots\n",
        "14\tsupply\t-\t-\t-\tfinal=20\n",
    ],
)
def test_classify_rejects_garbage(data_dir, capsys, text):
    path = scenario_file(data_dir, "garbage.trace", text)

    assert main(["classify", path]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_matrix(capsys):
    assert main(["matrix", "cs"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[-1].endswith(", ok")

    assert main(["matrix", "scs_legacy", "--format", "records"]) == EXIT_OK
    rows = capsys.readouterr().out.splitlines()
    assert all(len(row.split("\t")) == 6 for row in rows)


@pytest.mark.parametrize(
    "args",
    [
        ["matrix", "cs", "--workers", "0"],
        ["matrix", "cs", "--max-bb", "3", "--t", "40"],
        ["matrix", "cs", "--t", "2"],
    ],
)
def test_matrix_config_errors(args, capsys):
    assert main(args) == EXIT_CONFIG
    assert capsys.readouterr().err.startswith("config error:")


def test_unknown_protocol_is_a_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["matrix", "ecash"])
    assert e.value.code == 2
