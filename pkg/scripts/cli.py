import argparse
import concurrent.futures
import csv
import os
import traceback

from scripts.attacks import run_scenario
from scripts.config import ConfigError, load_config, load_matrix, load_scenario
from scripts.utils import get_verbosity, print_with_color, set_verbosity

arg_desc = "coexsim - Bluetooth/Wi-Fi coexistence attack simulator"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2


def build_parser():
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=arg_desc)
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="run one scenario")
    run.add_argument("config")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--duration", help="run length, seconds or with a ns/us/ms/s/min suffix")

    sweep = subparsers.add_parser("sweep", help="run one scenario per cell of a parameter matrix")
    sweep.add_argument("config")
    sweep.add_argument("--matrix", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--jobs", type=int, default=1)
    return parser


def run(config_path, out_dir, seed=None, duration=None, configs=None) -> int:
    configs = configs if configs is not None else load_config()
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if duration is not None:
        overrides["duration_s"] = duration
    try:
        scenario = load_scenario(config_path, overrides, configs)
    except ConfigError as e:
        print_with_color(e.render(), "red")
        return EXIT_CONFIG
    try:
        report = run_scenario(scenario, configs, out_dir)
    except Exception as e:
        print_with_color(f"ERROR: {type(e).__name__}: {e}", "red")
        if get_verbosity() == "debug":
            traceback.print_exc()
        return EXIT_INTERNAL
    print_with_color(f"Report written to {os.path.join(out_dir, 'report.json')} ({report.verdict.value})", "yellow")
    return EXIT_OK


def _run_cell(task):
    index, config_path, overrides, cell_dir, configs, verbosity = task
    set_verbosity(verbosity)
    row = {"cell": f"cell_{index:03d}", **overrides, "verdict": "", "dos_class": "", "error": ""}
    try:
        scenario = load_scenario(config_path, overrides, configs)
        report = run_scenario(scenario, configs, cell_dir)
    except ConfigError as e:
        print_with_color(e.render(), "red")
        row["error"] = f"{e.field}: {e.message}"
        return row
    except Exception as e:
        print_with_color(f"ERROR: {row['cell']}: {type(e).__name__}: {e}", "red")
        row["error"] = f"{type(e).__name__}: {e}"
        return row
    row["verdict"] = report.verdict.value
    dos_class = report.metrics.get("dos_class", "")
    row["dos_class"] = getattr(dos_class, "value", dos_class)
    return row


def write_summary(rows, keys, out_dir):
    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="") as outfile:
        writer = csv.DictWriter(outfile, fieldnames=["cell", *keys, "verdict", "dos_class", "error"],
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_pivot(rows, keys, out_dir):
    row_key, col_key = keys
    row_values = list(dict.fromkeys(row[row_key] for row in rows))
    col_values = list(dict.fromkeys(row[col_key] for row in rows))
    lookup = {(row[row_key], row[col_key]): row["dos_class"] or row["verdict"] or "error" for row in rows}
    path = os.path.join(out_dir, "summary_table.csv")
    with open(path, "w", newline="") as outfile:
        writer = csv.writer(outfile, lineterminator="\n")
        writer.writerow([f"{row_key} \\ {col_key}", *col_values])
        for value in row_values:
            writer.writerow([value, *(lookup.get((value, col), "") for col in col_values)])
    return path


def sweep(config_path, matrix_path, out_dir, jobs=1, configs=None) -> int:
    configs = configs if configs is not None else load_config()
    try:
        keys, cells = load_matrix(matrix_path)
    except ConfigError as e:
        print_with_color(e.render(), "red")
        return EXIT_CONFIG
    os.makedirs(out_dir, exist_ok=True)
    print_with_color(f"Sweeping {len(cells)} cells over {', '.join(keys) or 'no parameters'}", "yellow")
    tasks = [(i, config_path, cell, os.path.join(out_dir, f"cell_{i:03d}"), configs, get_verbosity())
             for i, cell in enumerate(cells)]
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as executor:
            rows = list(executor.map(_run_cell, tasks))
    else:
        rows = [_run_cell(task) for task in tasks]

    write_summary(rows, keys, out_dir)
    if len(keys) == 2 and rows:
        write_pivot(rows, keys, out_dir)
    failed = [row["cell"] for row in rows if row["error"]]
    if failed:
        print_with_color(f"ERROR: {len(failed)} of {len(rows)} cells failed: {', '.join(failed)}", "red")
        return EXIT_INTERNAL
    print_with_color(f"Sweep complete, summary in {os.path.join(out_dir, 'summary.csv')}", "green")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configs = load_config()
    set_verbosity(configs.get("COEXSIM_LOG"))
    if args.command == "run":
        return run(args.config, args.out, seed=args.seed, duration=args.duration, configs=configs)
    return sweep(args.config, args.matrix, args.out, jobs=args.jobs, configs=configs)
