import json
import subprocess
import sys

import numpy as np
import pytest

from waferkit import cli
from waferkit import coord as C
from waferkit import hal
from waferkit import maproute as M
from waferkit import runner
from waferkit.availability import AvailabilityDb, load_or_empty
from waferkit.simdevice import SimulatedWafer, serve


@pytest.fixture
def experiment(tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(M.minimal_example()))
    return path


def test_blacklist_listing(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(["blacklist", ".", "W33H0", "has", "neuron", "0"]) == 0
    assert capsys.readouterr().out == "True\n"
    assert cli.main(["blacklist", ".", "W33H0", "disable", "neuron", "1"]) == 0
    db = load_or_empty(".", 33)
    assert db.flags() == [C.NeuronOnWafer(C.NeuronOnHICANN.from_enum(1), C.HICANNOnWafer.from_enum(0))]
    cli.main(["blacklist", ".", "W33H0", "has", "neuron", "1"])
    cli.main(["blacklist", ".", "W33H0", "has", "neuron", "0"])
    assert capsys.readouterr().out == "False\nTrue\n"
    cli.main(["blacklist", ".", "W33H0", "enable", "neuron", "1"])
    cli.main(["blacklist", ".", "W33H0", "has", "neuron", "1"])
    assert capsys.readouterr().out == "True\n"


def test_blacklist_whole_chip(tmp_path, capsys):
    db = str(tmp_path / "db.json")
    cli.main(["blacklist", db, "W2H7", "disable"])
    cli.main(["blacklist", db, "W2H7", "has", "neuron", "511"])
    cli.main(["flags", db, "--wafer", "2"])
    assert capsys.readouterr().out == "False\nH007\n"


@pytest.mark.parametrize("argv", [
    [],
    ["blacklist", ".", "XX", "has"],
    ["blacklist", ".", "W33H0", "has", "neuron", "512"],
    ["blacklist", ".", "W33H0", "has", "neuron"],
    ["blacklist", ".", "W33", "has", "neuron", "3"],
    ["blacklist", ".", "W33H0", "explode"],
    ["memtest", "--local"],
    ["calib", "fit", "--db", "x.json", "--local"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    try:
        code = cli.main(argv)
    except SystemExit as stop:
        code = stop.code
    assert code == 2


def test_map_is_offline(experiment, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("WAFERKIT_ENDPOINT", raising=False)
    out = tmp_path / "m"
    assert cli.main(["map", str(experiment), "--wafer", "33", "--out", str(out)]) == 0
    assert (out / "mapping.svg").exists() and (out / "config.bin").exists()
    ir = M.MappingResult.from_json((out / "mapping.json").read_text())
    assert ir.wafer == 33 and ir.realized == 2
    assert "mapped 2/2 connections" in capsys.readouterr().out


def test_map_error_names_chip(experiment, tmp_path, capsys):
    net = json.loads(experiment.read_text())
    net["populations"][0]["size"] = 500
    experiment.write_text(json.dumps(net))
    assert cli.main(["map", str(experiment), "--wafer", "33", "--out", str(tmp_path / "m")]) == 1
    assert "W033H005" in capsys.readouterr().err


def test_run_without_endpoint_fails(experiment, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("WAFERKIT_ENDPOINT", raising=False)
    assert cli.main(["run", str(experiment), "--out", str(tmp_path / "r")]) == 1
    assert "WAFERKIT_ENDPOINT" in capsys.readouterr().err


def test_run_against_served_device(experiment, tmp_path, monkeypatch):
    server = serve(SimulatedWafer(33))
    try:
        monkeypatch.setenv("WAFERKIT_ENDPOINT", f"127.0.0.1:{server.address[1]}")
        out = tmp_path / "results"
        assert cli.main(["run", "--wafer", "33", str(experiment), "--out", str(out)]) == 0
    finally:
        server.stop()
    lines = (out / "spikes.csv").read_text().splitlines()
    assert lines[0] == "population,neuron,time_ms"
    assert {l.split(",")[1] for l in lines[1:]} == {"0", "1"}
    assert (out / "traces.csv").read_text().count("\n") > 1
    assert json.loads((out / "summary.json").read_text())["losses"]["realized"] == 2


def test_memtest_updates_db(tmp_path, capsys):
    dev = SimulatedWafer()
    row_word = int(hal.synapse_row_addresses(5, np.array([9]))[0][3])
    dev.set_fault(row_word, 0)
    server = serve(dev)
    db = tmp_path / "avail.json"
    report = tmp_path / "report.json"
    try:
        code = cli.main(["memtest", "--chips", "H5", "--endpoint", f"127.0.0.1:{server.address[1]}",
                         "--update", str(db), "--report", str(report)])
    finally:
        server.stop()
    assert code == 0
    out = capsys.readouterr().out
    assert "FAIL H005 synapse_row 9" in out
    flags = AvailabilityDb.load(db).flags()
    assert flags == [C.SynapseRowOnWafer(C.SynapseRowOnHICANN.from_enum(9), C.HICANNOnWafer.from_enum(5))]
    assert json.loads(report.read_text())["format"] == "waferkit.memtest"


def test_calib_fit_show_apply(tmp_path, capsys):
    db = str(tmp_path / "cal.json")
    assert cli.main(["calib", "fit", "--db", db, "--neuron", "H5N0", "--sweep", "0:1024:128", "--local"]) == 0
    assert cli.main(["calib", "show", "--db", db]) == 0
    assert cli.main(["calib", "apply", "--db", db, "--neuron", "H5N0", "--value", "0.9"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "1 transformations" in out
    code = int(out[-1].rsplit(" ", 1)[1])
    assert abs(code - 511) <= 8  # an ideal device threshold maps 0.9 V near mid-scale


def test_simdevice_subcommand_serves():
    proc = subprocess.Popen([sys.executable, "-m", "waferkit.cli", "simdevice", "--duration", "20"],
                            stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert "serving on" in line
        endpoint = line.split()[-1]
        with runner.connect(endpoint) as handle:
            assert handle.control("status")["wafer"] == 0
    finally:
        proc.terminate()
        proc.wait(10)
