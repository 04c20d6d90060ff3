# ui/cli.py
"""Chemotaxis particle-field toolkit.

Usage:
  main.py gen-radial --scenario=<s> [options]
  main.py train --data=<dirs> [--scenario=<s>] [options]
  main.py run --scenario=<s> [options]
  main.py converge --scenario=<s> [options]
  main.py bench [--scenario=<s>] [options]
  main.py compare --scenario=<s> [options]
  main.py runs [options]
  main.py (-h | --help)

Options:
  -h --help               Show this screen.
  --scenario=<s>          Builtin scenario name or scenario JSON file.
  --method=<m>            fdm, sipf-classical or sipf-neural.
  --methods=<list>        Bench methods, comma separated [default: fdm,sipf-classical,sipf-neural].
  --particles=<P>         Particle count [default: 20000].
  --dt=<dt>               Override the scenario time step.
  --grid=<n>              Override the scenario cells per axis.
  --t-end=<T>             Override the scenario final time.
  --seed=<u64>            Override the scenario seed.
  --model=<file>          Trained interpolator weights.
  --out=<dir>             Output directory, data/exports when omitted.
  --save-times=<list>     Comma separated snapshot times.
  --radial-points=<m>     Radial grid samples [default: 512].
  --snapshots=<k>         Random radial snapshots to keep [default: 50].
  --data=<dirs>           Comma separated radial solution directories.
  --epochs=<e>            Training epochs [default: 100].
  --lr=<lr>               Adam learning rate [default: 0.001].
  --batch=<b>             Mini-batch size [default: 4].
  --patches=<k>           Training patches [default: 200].
  --patch-size=<s>        Training patch edge in cells [default: 32].
  --axis=<a>              particles or timestep [default: timestep].
  --p-list=<list>         Particle counts to study [default: 1000,2500,5000,10000,25000].
  --reference-p=<P>       Reference particle count [default: 50000].
  --dt-list=<list>        Time steps to study [default: 0.1,0.05,0.025,0.0125].
  --reference-dt=<dt>     Reference time step [default: 0.00625].
  --resolutions=<list>    Bench grid sizes [default: 50,100].
  --workers=<k>           Parallel runs in a study [default: 1].
  --db=<file>             Run registry [default: data/runs.db].
  --xlsx                  Also write an .xlsx workbook of the reports.
  --progress              Show progress bars.
  -v --verbose            Debug logging.
  -q --quiet              Warnings and errors only.
"""
import logging
import os
import sys
import time as _time

import pandas as pd
from docopt import DocoptExit, docopt

from models.core import DEFAULT_EXTENT, DEFAULT_GRID, Grid3, load_scenario
from models.fdm3d import run_fdm
from models.harness import (CONVERGENCE_T_END, METHODS, bench, compare_methods,
                            converge_particles, converge_timestep, cross_section,
                            get_builtin, make_interpolator, neural_slice, snapshot_metrics)
from models.neural_interp import (TrainConfig, build_dataset, load_model, save_model, train)
from models.radial_solver import (load_radial_solution, run_radial, save_radial_solution,
                                  training_save_times)
from models.rng import SAMPLING, RngStream
from models.run_model import get_runs, record_run
from models.sipf_engine import run_sipf
from utils.field_io import write_field, write_particles
from utils.report_io import (DEFAULT_OUT, export_xlsx, write_bench, write_comparison,
                             write_convergence, write_loss_curve, write_metrics, write_slice)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SCENARIO_DIR = "data/scenarios"
MODEL_FILE = "model.phkw"


class UsageError(ValueError):
    """A flag value that does not parse."""


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def _split(value, cast, flag):
    try:
        items = [cast(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects a comma separated list, got {value!r}")
    if not items:
        raise UsageError(f"{flag} is empty")
    return items


def _number(args, flag, cast):
    value = args[flag]
    if value is None:
        return None
    try:
        return cast(value)
    except ValueError:
        raise UsageError(f"{flag} expects a number, got {value!r}")


def parse_options(args) -> dict:
    """Typed flag values; raises UsageError on anything unparsable."""
    opts = {
        "particles": _number(args, "--particles", int),
        "dt": _number(args, "--dt", float),
        "grid": _number(args, "--grid", int),
        "t_end": _number(args, "--t-end", float),
        "seed": _number(args, "--seed", int),
        "radial_points": _number(args, "--radial-points", int),
        "snapshots": _number(args, "--snapshots", int),
        "epochs": _number(args, "--epochs", int),
        "lr": _number(args, "--lr", float),
        "batch": _number(args, "--batch", int),
        "patches": _number(args, "--patches", int),
        "patch_size": _number(args, "--patch-size", int),
        "reference_p": _number(args, "--reference-p", int),
        "reference_dt": _number(args, "--reference-dt", float),
        "workers": _number(args, "--workers", int),
        "p_list": _split(args["--p-list"], int, "--p-list"),
        "dt_list": _split(args["--dt-list"], float, "--dt-list"),
        "resolutions": _split(args["--resolutions"], int, "--resolutions"),
        "methods": _split(args["--methods"], str, "--methods"),
        "save_times": _split(args["--save-times"], float, "--save-times")
        if args["--save-times"] else None,
        "data": _split(args["--data"], str, "--data") if args["--data"] else None,
    }
    method = args["--method"]
    if method is not None and method not in METHODS:
        raise UsageError(f"--method must be one of {', '.join(METHODS)}, got {method!r}")
    if args["--axis"] not in ("particles", "timestep"):
        raise UsageError(f"--axis must be particles or timestep, got {args['--axis']!r}")
    for m in opts["methods"]:
        if m not in METHODS:
            raise UsageError(f"--methods entries must be among {', '.join(METHODS)}, got {m!r}")
    return opts


def resolve_scenario(value, opts):
    """A scenario file, a file under data/scenarios, or a builtin name; flags override fields."""
    name = os.path.splitext(os.path.basename(value))[0]
    shipped = os.path.join(SCENARIO_DIR, f"{name}.json")
    if os.path.exists(value):
        spec = load_scenario(value)
    elif os.path.exists(shipped):
        spec = load_scenario(shipped)
    else:
        spec = get_builtin(name)
    return spec.with_overrides(dt=opts["dt"], n=opts["grid"], t_end=opts["t_end"], seed=opts["seed"])


def _maybe_xlsx(args, out, sheets):
    if args["--xlsx"]:
        export_xlsx(sheets, os.path.join(out, "reports.xlsx"))


def _load_model(args):
    return load_model(args["--model"]) if args["--model"] else None


def cmd_gen_radial(args, opts):
    spec = resolve_scenario(args["--scenario"], opts)
    times = opts["save_times"]
    if times is None:
        generator = RngStream(spec.params.seed).generator(SAMPLING, 1)
        times = training_save_times(spec.params.t_end, opts["snapshots"], generator)
    sol = run_radial(spec, opts["radial_points"], times)
    save_radial_solution(sol, args["--out"])


def cmd_train(args, opts):
    spec = resolve_scenario(args["--scenario"], opts) if args["--scenario"] else None
    grid = spec.grid if spec else Grid3(DEFAULT_EXTENT, opts["grid"] or DEFAULT_GRID)
    seed = spec.params.seed if spec else (opts["seed"] or 0)
    rng = RngStream(seed)
    solutions = [load_radial_solution(d) for d in opts["data"]]
    dataset = build_dataset(solutions, grid, opts["patches"], opts["patch_size"], rng,
                            center=spec.domain_center if spec else None)
    cfg = TrainConfig(epochs=opts["epochs"], learning_rate=opts["lr"], batch_size=opts["batch"])
    model, curve = train(dataset, cfg, rng, progress=args["--progress"])
    out = args["--out"]
    os.makedirs(out, exist_ok=True)
    save_model(model, os.path.join(out, MODEL_FILE))
    df = write_loss_curve(curve, os.path.join(out, "loss_curve.csv"))
    _maybe_xlsx(args, out, [("loss_curve", df)])


def _write_snapshot(out, tag, rho, conc):
    write_field(rho, os.path.join(out, f"rho_{tag}.phks"))
    write_field(conc, os.path.join(out, f"conc_{tag}.phks"))


def cmd_run(args, opts):
    spec = resolve_scenario(args["--scenario"], opts)
    method = args["--method"] or "sipf-classical"
    out = args["--out"]
    os.makedirs(out, exist_ok=True)
    save_times = opts["save_times"] or (0.0, spec.params.t_end)
    progress = args["--progress"]

    started = _time.perf_counter()
    if method == "fdm":
        states = run_fdm(spec, save_times, progress=progress)
        steps, particles = states[-1].steps, None
        finals = (states[-1].rho, states[-1].conc)
    else:
        interp = make_interpolator(method, _load_model(args))
        states = run_sipf(spec, opts["particles"], interp, save_times, progress=progress)
        steps, particles = spec.params.n_steps, opts["particles"]
        finals = (states[-1].rho_hist, states[-1].conc)
    seconds = _time.perf_counter() - started

    for state in states:
        tag = f"t{state.time:g}"
        if method == "fdm":
            _write_snapshot(out, tag, state.rho, state.conc)
        else:
            _write_snapshot(out, tag, state.rho_hist, state.conc)
            write_particles(state.ensemble.positions, state.time,
                            os.path.join(out, f"particles_{tag}.phkp"))
    metrics = write_metrics([snapshot_metrics(s, spec) for s in states],
                            os.path.join(out, "metrics.csv"))
    final_tag = f"t{states[-1].time:g}"
    middle = spec.grid.extent / 2
    write_slice(cross_section(finals[0], 1, middle), os.path.join(out, f"slice_rho_{final_tag}.csv"))
    write_slice(cross_section(finals[1], 1, middle), os.path.join(out, f"slice_c_{final_tag}.csv"))
    if method == "sipf-neural":
        _, refined = neural_slice(interp.model, finals[1], 1, middle)
        write_slice(refined, os.path.join(out, f"slice_c_refined_{final_tag}.csv"))
    _maybe_xlsx(args, out, [("metrics", metrics)])
    record_run(method, spec.name, spec.grid.n, particles, spec.params.dt, spec.params.t_end,
               spec.params.seed, steps, seconds, out_dir=out, db_file=args["--db"])


def cmd_converge(args, opts):
    if opts["t_end"] is None:
        opts = dict(opts, t_end=CONVERGENCE_T_END)
    spec = resolve_scenario(args["--scenario"], opts)
    interp = make_interpolator(args["--method"] or "sipf-classical", _load_model(args))
    if args["--axis"] == "particles":
        report = converge_particles(spec, interp, opts["p_list"], opts["reference_p"],
                                    workers=opts["workers"])
    else:
        report = converge_timestep(spec, interp, opts["dt_list"], opts["reference_dt"],
                                   opts["particles"], workers=opts["workers"])
    out = args["--out"]
    df = write_convergence(report, os.path.join(out, "convergence.csv"))
    _maybe_xlsx(args, out, [("convergence", df)])


def cmd_bench(args, opts):
    spec = resolve_scenario(args["--scenario"], opts) if args["--scenario"] else get_builtin("one_blob")
    t_end = opts["t_end"] if opts["t_end"] is not None else spec.params.t_end
    dt = opts["dt"] if opts["dt"] is not None else spec.params.dt
    report = bench(opts["methods"], opts["resolutions"], opts["particles"], t_end, spec=spec,
                   model=_load_model(args), dt=dt, db_file=args["--db"])
    out = args["--out"]
    df = write_bench(report, os.path.join(out, "bench.csv"))
    _maybe_xlsx(args, out, [("bench", df)])


def cmd_compare(args, opts):
    spec = resolve_scenario(args["--scenario"], opts)
    interp = make_interpolator(args["--method"] or "sipf-classical", _load_model(args))
    rows = compare_methods(spec, opts["particles"], interp, opts["save_times"])
    out = args["--out"]
    df = write_comparison(rows, os.path.join(out, "comparison.csv"))
    _maybe_xlsx(args, out, [("comparison", df)])


def cmd_runs(args, opts):
    runs = get_runs(method=args["--method"], db_file=args["--db"])
    if not runs:
        print("No runs recorded.")
        return
    print(pd.DataFrame(runs).to_string(index=False))


COMMANDS = {
    "gen-radial": cmd_gen_radial,
    "train": cmd_train,
    "run": cmd_run,
    "converge": cmd_converge,
    "bench": cmd_bench,
    "compare": cmd_compare,
    "runs": cmd_runs,
}


def run_scenario_cli(argv=None) -> int:
    """Parse `argv` and dispatch; returns the process exit code."""
    try:
        args = docopt(__doc__, argv=argv, help=False)
    except DocoptExit as e:
        sys.stderr.write(f"{e}\n")
        return 2
    if args["--help"]:
        print(__doc__.strip())
        return 0
    configure_logging(args["--verbose"], args["--quiet"])
    args["--out"] = args["--out"] or DEFAULT_OUT
    try:
        opts = parse_options(args)
    except UsageError as e:
        sys.stderr.write(f"{e}\n{__doc__.split('Options:')[0].strip()}\n")
        return 2

    command = next(name for name in COMMANDS if args[name])
    try:
        COMMANDS[command](args, opts)
    except (ValueError, RuntimeError, OSError, KeyError) as e:
        logger.error("%s failed: %s", command, e)
        return 1
    return 0
