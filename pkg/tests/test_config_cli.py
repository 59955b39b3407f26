import json

import pytest

from spinsim import cli, verify
from spinsim.config import ConfigError, load_config, parse_config
from spinsim.runner import RunFailed, run_config


def cfg(**kw):
    base = {"experiment": "pingpong", "modes": ["rdma"], "sweep": {"values": [8]}}
    base.update(kw)
    return base


def write(tmp_path, raw, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


@pytest.mark.parametrize("raw,path", [
    (cfg(bogus=1), "bogus"),
    ({"modes": ["rdma"]}, "experiment"),
    (cfg(experiment="nope"), "experiment"),
    (cfg(modes=["portals4", "warp"]), "modes[1]"),
    (cfg(experiment="raid", modes=["portals4"]), "modes[0]"),
    (cfg(profile="fast"), "profile"),
    (cfg(nic={"num_hpu": 4}), "nic.num_hpu"),
    (cfg(nic={"num_hpus": 0}), "nic"),
    (cfg(network={"G_per_byte": "abc"}), "network.G_per_byte"),
    (cfg(limits={"max_payload_size": 8192}), "limits"),
    (cfg(params={"msg_size": 3}), "params.msg_size"),
    (cfg(experiment="broadcast", params={"msg_size": -1}), "params.msg_size"),
    (cfg(sweep={"name": "P"}), "sweep.name"),
    (cfg(sweep={"values": []}), "sweep.values"),
    (cfg(sweep={"step": 2}), "sweep.step"),
])
def test_config_errors_name_the_field(raw, path):
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.path == path


def test_config_defaults_and_rates():
    c = parse_config({"experiment": "datatype", "network": {"G_per_byte": "1/3"},
                      "dma": {"latency": 1000}, "profile": "integrated"})
    assert c.modes == ["rdma", "spin_store", "spin_stream"]
    assert c.sweep_name == "blocksize"
    assert str(c.network.G_per_byte) == "1/3"
    assert c.dma.latency == 1000 and str(c.dma.g_per_byte) == "67/10"


def test_load_config_reports_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_run_config_orders_modes_then_values():
    reps = run_config(parse_config(cfg(modes=["spin_store", "rdma"], sweep={"values": [64, 8]})))
    assert [(r.mode, r.sweep_value) for r in reps] == [
        ("spin_store", 64), ("spin_store", 8), ("rdma", 64), ("rdma", 8)]


def test_simulation_failure_carries_context():
    raw = {"experiment": "raid", "modes": ["spin_stream"], "sweep": {"values": [1 << 20]}}
    with pytest.raises(RunFailed, match="raid mode=spin_stream update_size=1048576"):
        run_config(parse_config(raw))


def test_cli_run_writes_identical_outputs(tmp_path):
    path = write(tmp_path, cfg(modes=["rdma", "spin_stream"], sweep={"values": [8, 65536]},
                               trace=True))
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "b")]) == 0
    same, diff = verify.same_outputs(str(tmp_path / "a"), str(tmp_path / "b"))
    assert same, diff
    traces = sorted(p.name for p in (tmp_path / "a" / "traces").iterdir())
    assert traces[0] == "pingpong_rdma_discrete_65536.csv" and len(traces) == 4


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = write(tmp_path, cfg(nic={"num_hpu": 4}))
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "nic.num_hpu" in capsys.readouterr().err


def test_cli_simulation_error_exit_code(tmp_path, capsys):
    path = write(tmp_path, {"experiment": "raid", "modes": ["spin_stream"],
                            "sweep": {"values": [1 << 20]}})
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "o")]) == cli.EXIT_SIMULATION
    assert "flow_queue_depth" in capsys.readouterr().err


def test_cli_sizing(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sizing", "--out", str(out), "--hpus", "8"]) == 0
    rows = (out / "max_handler_time.csv").read_text().splitlines()
    assert "8,4096,655360" in rows
    surface = (out / "surface.csv").read_text().splitlines()
    assert "50,64,8" in surface and "650,4096,8" in surface
    assert cli.main(["sizing", "--out", str(out), "--hpus", "0"]) == cli.EXIT_CONFIG


def test_cli_list(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    for name in ("pingpong", "accumulate", "broadcast", "datatype", "raid", "matching", "train",
                 "sizing"):
        assert name in out


def _stub_checks(monkeypatch, passed):
    def check():
        return verify.Check(1, "stub", passed, "stub check")
    monkeypatch.setattr(verify, "CHECKS", (check,))
    monkeypatch.setattr(verify, "traced_reports", lambda: [])


def test_cli_verify_exit_codes(tmp_path, monkeypatch):
    _stub_checks(monkeypatch, True)
    assert cli.main(["verify", "--out", str(tmp_path / "ok")]) == cli.EXIT_OK
    _stub_checks(monkeypatch, False)
    assert cli.main(["verify", "--out", str(tmp_path / "bad")]) == cli.EXIT_ACCEPTANCE
