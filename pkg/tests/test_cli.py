import csv
import json
import subprocess
import sys

from trafficlab.cli import main
from trafficlab.netmodel import load_flow, load_roadnet


def test_gen_roadnet_and_flow(tmp_path):
    net_path = tmp_path / "net.json"
    flow_path = tmp_path / "flow.json"
    assert main(["gen-roadnet", "--rows", "2", "--cols", "2", "-o", str(net_path)]) == 0
    doc = json.loads(net_path.read_text())
    assert doc["rows"] == 2 and doc["cols"] == 2
    assert main(["gen-flow", "--roadnet", str(net_path), "--rate", "200", "--seed", "4",
                 "--duration", "600", "-o", str(flow_path)]) == 0
    net = load_roadnet(net_path)
    flow = load_flow(net, flow_path)
    assert len(net.intersections) == 4 and len(flow.vehicles) > 0
    again = tmp_path / "flow2.json"
    main(["gen-flow", "--roadnet", str(net_path), "--rate", "200", "--seed", "4",
          "--duration", "600", "-o", str(again)])
    assert again.read_bytes() == flow_path.read_bytes()


def test_run_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.csv"
        assert main(["run", "--controller", "maxpressure", "--episode-seconds", "600",
                     "--quiet", "-o", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.reader(outs[0].decode().splitlines()))
    assert rows[0] == ["episode", "avg_travel_time_s", "mean_reward", "completed", "in_network"]
    assert len(rows) == 2


def test_run_with_config_flags_and_checkpoints(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text('controller = "fitlight-mp"\nepisode_seconds = 100\nepisodes = 3\n')
    out, ck, trace = tmp_path / "r.csv", tmp_path / "ck", tmp_path / "trace.csv"
    assert main(["run", "--config", str(cfg), "--episodes", "1", "--local-step", "false",
                 "--prune-rates", "0.2", "0.4", "0.6", "--quiet", "-o", str(out),
                 "--checkpoints", str(ck), "--trace", str(trace)]) == 0
    assert len(out.read_text().splitlines()) == 2
    agents = sorted(ck.glob("*.agent"))
    assert len(agents) == 3 and all(p.stat().st_size <= 16384 for p in agents)
    assert (ck / "rounds.csv").read_text().startswith("round,client_norms")
    header = trace.read_text().splitlines()[0]
    assert header == "tick,vehicle,lane,d,v"


def test_report_summary(tmp_path, capsys):
    out = tmp_path / "r.csv"
    main(["run", "--controller", "fixedtime", "--episode-seconds", "300", "--episodes", "2",
          "--quiet", "-o", str(out)])
    capsys.readouterr()
    assert main(["report", str(out), "--window", "2"]) == 0
    text = capsys.readouterr().out
    assert "converged at episode: 1" in text
    assert "best episode:" in text


def test_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 1\n")
    assert main(["run", "--config", str(bad), "-o", str(tmp_path / "x.csv")]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["run", "--episode-seconds", "7", "-o", str(tmp_path / "x.csv")]) == 2
    assert main(["report", str(tmp_path / "missing.csv")]) == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "net.json"
    proc = subprocess.run([sys.executable, "-m", "trafficlab", "gen-roadnet", "-o", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["cols"] == 3
