"""Command-line interface: ``waferkit map|run|blacklist|calib|memtest|simdevice``.

Usage errors exit with status 2, every other failure with 1.  Coordinates
in arguments and diagnostics use the short format (``W33H5``, ``H5N12``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import availability as av
from . import calib, hal, memtest, runner
from . import config as cfg
from . import coord as C

log = logging.getLogger("waferkit")

# entity kinds below a chip, as written on the blacklist command line
ENTITY_KINDS = {
    "neuron": C.NeuronOnHICANN,
    "synapse": C.SynapseOnHICANN,
    "synapse_row": C.SynapseRowOnHICANN,
    "row": C.SynapseRowOnHICANN,
    "synapse_driver": C.SynapseDriverOnHICANN,
    "driver": C.SynapseDriverOnHICANN,
    "bus_line": C.BusLineOnHICANN,
    "busline": C.BusLineOnHICANN,
}


class UsageError(Exception):
    pass


def _coord(text: str):
    try:
        return C.parse_short(text)
    except C.ParseError as err:
        raise UsageError(f"bad coordinate {text!r}: {err}") from err


def _wafer_of(coord, default: int) -> int:
    outer = getattr(coord, "outer", None)
    if isinstance(coord, C.Wafer):
        return coord.value
    if isinstance(outer, C.Wafer):
        return outer.value
    return default


def _on_wafer(coord):
    """Strip the wafer from a global coordinate."""
    return coord.inner if isinstance(getattr(coord, "outer", None), C.Wafer) else coord


def _chip_list(text: str | None, wafer: int) -> list[C.HICANNOnWafer]:
    if not text:
        return []
    chips = []
    for part in text.split(","):
        c = _on_wafer(_coord(part.strip()))
        if isinstance(c, C.FPGAOnWafer):
            chips += list(c.hicanns())
        elif isinstance(c, C.HICANNOnWafer):
            chips.append(c)
        else:
            raise UsageError(f"{part!r} is not a chip or FPGA")
    return sorted(set(chips), key=lambda h: h.enum)


def _handle(args, availability=None):
    if getattr(args, "local", False):
        from .simdevice.device import SimulatedWafer
        return hal.DeviceHandle(SimulatedWafer(args.wafer, seed=getattr(args, "seed", 0)), availability)
    return runner.connect(args.endpoint, availability)


def _device_args(p):
    p.add_argument("--endpoint", default=os.environ.get(runner.ENDPOINT_ENV),
                   help=f"device as host:port (default ${runner.ENDPOINT_ENV})")
    p.add_argument("--local", action="store_true", help="use an in-process simulated device")


def _experiment_args(p):
    p.add_argument("experiment", help="experiment or network description (JSON)")
    p.add_argument("--wafer", type=int, default=0)
    p.add_argument("--availability", help="availability db file or directory")
    p.add_argument("--calibration", help="calibration db file")
    p.add_argument("--runtime", type=float, help="biological runtime in seconds")
    p.add_argument("--neuron-size", type=int)
    p.add_argument("--max-switches", type=int)


def _experiment(args) -> runner.Experiment:
    return runner.Experiment.from_file(
        args.experiment, wafer=args.wafer, availability=args.availability, calibration=args.calibration,
        runtime=args.runtime, neuron_size=args.neuron_size, max_switches=args.max_switches)


# --------------------------------------------------------------------------
# subcommands


def cmd_map(args) -> int:
    from .maproute import export_visualization
    exp = _experiment(args)
    mapping, config = runner.compile(exp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    svg, ir = export_visualization(mapping, out / "mapping.svg")
    (out / "config.bin").write_bytes(cfg.dump(config))
    report = mapping.loss_report()
    print(f"mapped {report['realized']}/{report['total']} connections on {len(mapping.chips())} chips; "
          f"wrote {svg}, {ir}, {out / 'config.bin'}")
    for loss in mapping.losses[: args.show_losses]:
        print(f"lost {loss.connection.projection}[{loss.connection.index}]: {loss.reason} {loss.where}".rstrip())
    return 0


def cmd_run(args) -> int:
    exp = _experiment(args)
    exp.endpoint = args.endpoint
    mapping, config = runner.compile(exp)
    net = exp.description()
    with _handle(args, config.availability) as handle:
        result = runner.execute(config, runner.stimulus(net, mapping), exp.runtime_s, cfg.Full, handle,
                                mapping, exp.units, args.seed, net)
    paths = runner.write_results(result, args.out)
    print(f"{result.spike_count()} spikes, {len(result.traces)} traces; wrote " + ", ".join(map(str, paths)))
    return 0


def cmd_blacklist(args) -> int:
    where = _coord(args.coord)
    wafer = _wafer_of(where, args.wafer)
    target = _on_wafer(where)
    if args.kind is not None:
        if args.index is None:
            raise UsageError(f"{args.kind} needs an index")
        if not isinstance(target, C.HICANNOnWafer):
            raise UsageError(f"{args.coord} is not a chip; entity kinds are addressed below a chip")
        try:
            target = C.combine(ENTITY_KINDS[args.kind].from_enum(args.index), target)
        except C.RangeViolation as err:
            raise UsageError(str(err)) from err
    db = av.load_or_empty(args.db, wafer)
    if args.action == "has":
        print(db.has(target))
        return 0
    if args.action == "disable":
        db.disable(target)
    else:
        db.enable(target)
    db.persist(av.db_path(args.db, wafer))
    return 0


def cmd_blacklist_list(args) -> int:
    db = av.load_or_empty(args.db, args.wafer)
    for f in db.flags():
        print(C.format_short(f))
    return 0


class _Probe:
    """calib.calibrate's device interface on top of a handle's ``measure`` command."""

    def __init__(self, handle):
        self.handle = handle

    def measure(self, coord, parameter, code):
        return self.handle.control("measure", neuron=coord.enum, parameter=parameter, code=int(code))["value"]


def _neuron(text: str) -> C.NeuronOnWafer:
    c = _on_wafer(_coord(text))
    if not isinstance(c, C.NeuronOnWafer):
        raise UsageError(f"{text!r} is not a neuron circuit (e.g. H5N12)")
    return c


def _sweep(text: str) -> list[int]:
    try:
        if ":" in text:
            parts = [int(x) for x in text.split(":")]
            return list(range(*parts))
        return [int(x) for x in text.split(",")]
    except (ValueError, TypeError) as err:
        raise UsageError(f"bad sweep {text!r}: use start:stop[:step] or a comma list") from err


def cmd_calib(args) -> int:
    if args.action == "show":
        db = calib.load_db(args.db)
        for (key, parameter), t in sorted(db.transformations.items()):
            print(f"{key} {parameter} coeffs={list(t.coefficients)} domain={list(t.domain)}")
        print(f"{len(db)} transformations")
        return 0
    neurons = [_neuron(n) for n in args.neuron]
    if not neurons:
        raise UsageError("give at least one --neuron")
    if args.action == "apply":
        db = calib.load_db(args.db)
        for n in neurons:
            print(f"{C.format_short(n)} {args.parameter} {args.value} -> {db.code(n, args.parameter, args.value)}")
        return 0
    db = calib.load_db(args.db)
    sweep = _sweep(args.sweep)
    with _handle(args) as handle:
        probe = _Probe(handle)
        for n in neurons:
            t = calib.calibrate(probe, n, args.parameter, sweep, db)
            print(f"{C.format_short(n)} {args.parameter}: {list(t.coefficients)}")
    db.save(args.db)
    return 0


def cmd_memtest(args) -> int:
    chips = _chip_list(args.chips, args.wafer)
    if not chips:
        raise UsageError("give the chips to test with --chips (e.g. H5,H6 or F0)")
    with _handle(args) as handle:
        report = memtest.run_memtest(handle, chips, seed=args.seed, config=args.config, wafer=args.wafer)
    failures = report.failures
    for r in failures:
        print(f"FAIL {C.format_short(C.HICANNOnWafer.from_enum(r.hicann))} {r.kind} {r.index}")
    print(f"{len(report.results)} regions tested, {len(failures)} failed")
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    if args.update:
        db = av.load_or_empty(args.update, args.wafer)
        delta = memtest.update_availability(db, report)
        db.persist(av.db_path(args.update, args.wafer))
        print(f"flagged {len(delta)} components in {av.db_path(args.update, args.wafer)}")
    return 0


def _fault(text: str) -> tuple[int, int]:
    try:
        a, v = text.split("=")
        return int(a, 0), int(v, 0)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"fault {text!r} is not ADDRESS=VALUE") from err


def cmd_simdevice(args) -> int:
    from .simdevice.device import SimulatedWafer
    from .simdevice.server import serve
    device = SimulatedWafer(args.wafer, dt=args.dt, mismatch=args.mismatch, seed=args.seed)
    for a, v in args.fault or ():
        device.set_fault(a, v)
    server = serve(device, args.host, args.port)
    host, port = server.address[:2]
    print(f"simulated W{args.wafer:03d} serving on {host}:{port}", flush=True)
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="waferkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("map", help="compile an experiment offline and export the mapping")
    _experiment_args(m)
    m.add_argument("--out", default="mapping", help="output directory")
    m.add_argument("--show-losses", type=int, default=10, metavar="N")
    m.set_defaults(func=cmd_map)

    r = sub.add_parser("run", help="compile and execute an experiment")
    _experiment_args(r)
    _device_args(r)
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("blacklist", help="query or edit the availability database")
    b.add_argument("db", help="database file, or a directory with one file per wafer")
    b.add_argument("coord", help="wafer-level coordinate, e.g. W33H0")
    b.add_argument("action", choices=("has", "disable", "enable"))
    b.add_argument("kind", nargs="?", choices=sorted(ENTITY_KINDS))
    b.add_argument("index", nargs="?", type=int)
    b.add_argument("--wafer", type=int, default=0, help="wafer when the coordinate has none")
    b.set_defaults(func=cmd_blacklist)

    bl = sub.add_parser("flags", help="list the flagged components of an availability database")
    bl.add_argument("db")
    bl.add_argument("--wafer", type=int, default=0)
    bl.set_defaults(func=cmd_blacklist_list)

    c = sub.add_parser("calib", help="fit, show or apply neuron calibrations")
    c.add_argument("action", choices=("fit", "show", "apply"))
    c.add_argument("--db", required=True, help="calibration db file")
    c.add_argument("--neuron", action="append", default=[], help="circuit, e.g. H5N12 (repeatable)")
    c.add_argument("--parameter", default="v_thresh", choices=calib.PARAMETER_NAMES)
    c.add_argument("--sweep", default="0:1024:64", help="DAC codes: start:stop[:step] or a comma list")
    c.add_argument("--value", type=float, default=0.0, help="hardware value for apply")
    c.add_argument("--wafer", type=int, default=0)
    c.add_argument("--seed", type=int, default=0)
    _device_args(c)
    c.set_defaults(func=cmd_calib)

    t = sub.add_parser("memtest", help="digital memory test; optionally flag failures")
    t.add_argument("--chips", help="chips or FPGAs, e.g. H5,H6 or F0")
    t.add_argument("--wafer", type=int, default=0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--config", default="nominal", help="label of the operating configuration")
    t.add_argument("--report", help="write the MemTestReport JSON here")
    t.add_argument("--update", metavar="DB", help="merge the failures into this availability db")
    _device_args(t)
    t.set_defaults(func=cmd_memtest)

    s = sub.add_parser("simdevice", help="serve a simulated wafer")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=0)
    s.add_argument("--wafer", type=int, default=0)
    s.add_argument("--dt", type=float, default=1e-8)
    s.add_argument("--mismatch", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fault", type=_fault, action="append", help="stuck register ADDRESS=VALUE (repeatable)")
    s.add_argument("--duration", type=float, help="stop after this many seconds")
    s.set_defaults(func=cmd_simdevice)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"waferkit: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        if args.verbose:
            log.exception("command failed")
        print(f"waferkit {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
