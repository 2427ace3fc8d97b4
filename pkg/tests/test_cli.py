import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from stimfuzz.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def write_toml(path: Path, workspace, strategy="kmvp", test_limit=150, rng_seed=5):
    cfg = workspace["config"]
    lines = [
        "[model]",
        f'path = "{cfg["model"]["path"]}"',
        "seed_images = [" + ", ".join(f'"{p}"' for p in cfg["model"]["seed_images"]) + "]",
        f'profiling_data = "{cfg["model"]["profiling_data"]}"',
        "[limits]",
        'preset = "retinal"',
        "[strategy]",
        f'name = "{strategy}"',
        f"rng_seed = {rng_seed}",
        "[budget]",
        f"test_limit = {test_limit}",
    ]
    path.write_text("\n".join(lines))
    return path


def test_run_command(runner, campaign_workspace, tmp_path):
    config = write_toml(tmp_path / "c.toml", campaign_workspace)
    out_dir = tmp_path / "out"
    result = runner.invoke(main, ["run", "--config", str(config), "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert "unique_violations=" in result.output
    assert (out_dir / "report.json").is_file()


def test_run_with_invalid_config_exits_2(runner, tmp_path, campaign_workspace):
    bad = tmp_path / "bad.toml"
    bad.write_text('[model]\nseed_images = ["x.pgm"]\n[limits]\npreset = "retinal"\n'
                   '[strategy]\nname = "kmvp"\n[budget]\ntest_limit = 10\n')
    result = runner.invoke(main, ["run", "--config", str(bad), "--out",
                                  str(tmp_path / "o")])
    assert result.exit_code == 2


def test_run_with_unparsable_config_exits_2(runner, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("this is not toml [[[")
    result = runner.invoke(main, ["run", "--config", str(bad), "--out",
                                  str(tmp_path / "o")])
    assert result.exit_code == 2


def test_rng_seed_precedence(runner, campaign_workspace, tmp_path):
    config = write_toml(tmp_path / "c.toml", campaign_workspace, test_limit=50,
                        rng_seed=5)
    # env overrides config
    result = runner.invoke(main, ["run", "--config", str(config), "--out",
                                  str(tmp_path / "env")],
                           env={"FUZZ_RNG_SEED": "77"})
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "env" / "report.json").read_text())["rng_seed"] == 77
    # flag overrides env
    result = runner.invoke(main, ["run", "--config", str(config), "--out",
                                  str(tmp_path / "flag"), "--rng-seed", "88"],
                           env={"FUZZ_RNG_SEED": "77"})
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "flag" / "report.json").read_text())["rng_seed"] == 88
    # config value applies when nothing overrides it
    result = runner.invoke(main, ["run", "--config", str(config), "--out",
                                  str(tmp_path / "cfg")])
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "cfg" / "report.json").read_text())["rng_seed"] == 5


def test_profile_command(runner, campaign_workspace, tmp_path):
    out = tmp_path / "stats.json"
    result = runner.invoke(main, [
        "profile", "--model", str(campaign_workspace["model_path"]),
        "--data", str(campaign_workspace["prof_dir"]), "--space", "outputs",
        "--out", str(out)])
    assert result.exit_code == 0, result.output
    stats = json.loads(out.read_text())
    assert stats["space"] == "outputs"
    assert len(stats["lo"]) == 675


def test_compare_and_breakdown_commands(runner, campaign_workspace, tmp_path):
    report_paths = []
    for strategy in ("none", "kmvp"):
        config = write_toml(tmp_path / f"{strategy}.toml", campaign_workspace,
                            strategy=strategy)
        out_dir = tmp_path / strategy
        result = runner.invoke(main, ["run", "--config", str(config), "--out",
                                      str(out_dir)])
        assert result.exit_code == 0, result.output
        report_paths.append(str(out_dir / "report.json"))

    csv_out = tmp_path / "table.csv"
    result = runner.invoke(main, ["compare", *report_paths, "--out", str(csv_out)])
    assert result.exit_code == 0, result.output
    lines = csv_out.read_text().strip().splitlines()
    assert len(lines) == 3 and lines[0].startswith("label,")

    # breakdown wants identical strategy/budget across reports
    result = runner.invoke(main, ["breakdown", *report_paths])
    assert result.exit_code == 2
    result = runner.invoke(main, ["breakdown", report_paths[1]])
    assert result.exit_code == 0, result.output
    assert result.output.startswith("model,V_PI,V_CD,V_IC,V_AE")

    result = runner.invoke(main, ["compare", report_paths[0]])
    assert result.exit_code == 2


def test_forward_command(runner, campaign_workspace, tmp_path):
    out = tmp_path / "fwd.json"
    result = runner.invoke(main, [
        "forward", "--model", str(campaign_workspace["model_path"]),
        "--image", campaign_workspace["seed_paths"][0], "--out", str(out)])
    assert result.exit_code == 0, result.output
    body = json.loads(out.read_text())
    assert len(body["outputs"][0]) == 675


def test_fixture_command(runner, tmp_path):
    out = tmp_path / "m.nef"
    result = runner.invoke(main, ["fixture", "--name", "retinal-tiny",
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert out.is_file()

    result = runner.invoke(main, ["fixture", "--name", "bogus",
                                  "--out", str(tmp_path / "x.nef")])
    assert result.exit_code == 2
