"""Command-line front end: generate, pathfind, contract, verify, benchmark."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import circuit as circ
from . import engine, oracle, precision, verify
from .network import NetworkError, circuit_to_network, make_sparse_state, read_bitstrings, write_bitstrings
from .pathopt import AnnealSchedule, BalancePenalty, ScoreParams, greedy_init, load_order, sa_optimize, save_order
from .slicer import BudgetError, SliceSet, dynamic_slice, parse_mem_budget, peak_memory

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3
CONFIG_NAME = "tenkontract.toml"
SEED_ENV = "TENKONTRACT_SEED"

# built-in defaults; a config file and then command-line flags override them
DEFAULTS: dict[str, dict[str, Any]] = {
    "gen-circuit": {"qubits": 4, "cycles": 4, "pattern": "auto", "avoid_repeats": True},
    "pathfind": {"alpha": 64.0, "beta": 1.0, "sweeps": 200, "t0": 2.0, "tmin": 0.02, "decay": 0.98,
                 "mem_budget": None, "finetune_sweeps": 30, "balance": False, "reorder_topk": 10},
    "contract": {"workers": os.cpu_count() or 1, "precision": "fp64", "split": 1, "mixed_topk": 0,
                 "low_precision": "tf32", "low_split": 1, "accum": None},
    "verify": {"bins": 50, "format": "json"},
    "oracle": {"fidelity": 1.0, "sample": 0},
    "bench": {"qubits": 10, "cycles": 12, "topk": 10, "repeats": 3, "format": "json"},
    "precision-bench": {"trials": 10_000, "length": 1024, "lo": 1e-7, "hi": 1e3, "format": "json"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path: str | None) -> dict:
    if path is None:
        if not Path(CONFIG_NAME).exists():
            return {}
        path = CONFIG_NAME
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def resolve(args: argparse.Namespace, config: dict, name: str):
    """Flag, then ``[command]`` table, then top-level config key, then default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    section = config.get(args.command, {})
    for table in (section, config):
        for key in (name, name.replace("_", "-")):
            if isinstance(table, dict) and key in table and not isinstance(table[key], dict):
                return table[key]
    return DEFAULTS.get(args.command, {}).get(name)


def resolve_seed(args: argparse.Namespace, config: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    section = config.get(args.command, {})
    if "seed" in section:
        return int(section["seed"])
    if "seed" in config:
        return int(config["seed"])
    if os.environ.get(SEED_ENV):
        return int(os.environ[SEED_ENV])
    return 0


def _state_for(c: circ.Circuit, bitstrings_path: str | None):
    if bitstrings_path is None:
        return make_sparse_state(c.n_qubits, "full")
    bits = read_bitstrings(bitstrings_path)
    if bits and len(bits[0]) != c.n_qubits:
        raise NetworkError(f"bitstrings have {len(bits[0])} bits, circuit has {c.n_qubits} qubits")
    mode = "single" if len(set(bits)) == 1 else "sparse"
    return make_sparse_state(c.n_qubits, mode, bits)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_circuit(args, config) -> int:
    n = int(resolve(args, config, "qubits"))
    cycles = int(resolve(args, config, "cycles"))
    pattern = resolve(args, config, "pattern")
    if pattern == "line":
        patterns = circ.line_patterns(n)
    elif pattern == "grid":
        patterns = circ.grid_patterns(*circ.grid_shape(n))
    elif pattern == "auto":
        patterns = circ.default_patterns(n)
    else:
        raise UsageError(f"unknown coupler pattern {pattern!r}")
    c = circ.generate_random_circuit(n, cycles, patterns, resolve_seed(args, config),
                                     avoid_repeats=bool(resolve(args, config, "avoid_repeats")))
    if args.output and args.output.endswith(".json"):
        _write(json.dumps(c.to_json(), indent=1) + "\n", args.output)
    else:
        _write(c.to_text(), args.output)
    return EXIT_OK


def cmd_pathfind(args, config) -> int:
    c = circ.load_circuit(args.circuit)
    net = circuit_to_network(c, _state_for(c, args.bitstrings))
    seed = resolve_seed(args, config)
    params = ScoreParams(float(resolve(args, config, "alpha")), float(resolve(args, config, "beta")),
                         BalancePenalty(enabled=bool(resolve(args, config, "balance"))))
    sched = AnnealSchedule(float(resolve(args, config, "t0")), float(resolve(args, config, "tmin")),
                           float(resolve(args, config, "decay")), int(resolve(args, config, "sweeps")))
    tree = sa_optimize(net, params, sched, seed)
    budget = resolve(args, config, "mem_budget")
    if budget is not None:
        tree, _ = dynamic_slice(net, tree, parse_mem_budget(budget),
                                int(resolve(args, config, "finetune_sweeps")), params, seed, sched.tmin)
    k = int(resolve(args, config, "reorder_topk"))
    tree = engine.reorder_topk(tree, min(k, len(tree.steps())))
    if args.output in (None, "-"):
        from .pathopt import tree_to_json

        sys.stdout.write(json.dumps(tree_to_json(tree, params), indent=1) + "\n")
    else:
        save_order(tree, args.output, params)
    print(f"score {tree.score(params):.6f}  steps {len(tree.steps())}  slices {len(tree.sliced)}  "
          f"peak {peak_memory(tree)} B", file=sys.stderr)
    return EXIT_OK


def _schedule(args, config, tree) -> precision.PrecisionSchedule:
    if args.schedule:
        with open(args.schedule, encoding="utf-8") as fh:
            return precision.PrecisionSchedule.from_json(json.load(fh))
    fmt = precision.get_format(resolve(args, config, "precision"))
    mode = precision.SplitMode(int(resolve(args, config, "split")))
    accum = resolve(args, config, "accum")
    accum = precision.get_format(accum) if accum else (precision.FP64 if fmt == precision.FP64 else precision.FP32)
    high = precision.Setting(fmt, mode)
    k = int(resolve(args, config, "mixed_topk"))
    low = precision.Setting(precision.get_format(resolve(args, config, "low_precision")),
                            precision.SplitMode(int(resolve(args, config, "low_split"))))
    return precision.schedule_from_topk(tree, min(k, len(tree.steps())), low, high, accum)


def cmd_contract(args, config) -> int:
    c = circ.load_circuit(args.circuit)
    state = _state_for(c, args.bitstrings)
    net = circuit_to_network(c, state)
    tree = load_order(net, args.order)
    schedule = _schedule(args, config, tree)
    counter = engine.FlopCounter()
    workers = int(resolve(args, config, "workers"))
    amps = engine.run_simulation(c, state, tree, None, schedule, workers, counter)
    if args.bitstrings:
        amps = amps.expand(read_bitstrings(args.bitstrings))
    _write(amps.to_text(), args.output)
    if args.flop_report:
        rec = engine.FlopCounter()
        engine.contract_subtask(net, tree, schedule, 0, rec, record=True)
        report = {"steps": [r.to_json() for r in rec.records], "total_Tcc": tree.total_tcc,
                  "subtasks": SliceSet.from_tree(tree).n_subtasks,
                  "executed_flops": counter.flops}
        Path(args.flop_report).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_verify(args, config) -> int:
    amps = verify.AmplitudeSet.load(args.amplitudes)
    if args.samples:
        amps = amps.expand(read_bitstrings(args.samples))
    ref = verify.AmplitudeSet.load(args.reference) if args.reference else None
    if ref is not None and args.samples:
        ref = ref.expand(read_bitstrings(args.samples))
    report = verify.verify(amps, ref, int(resolve(args, config, "bins")))
    fmt = resolve(args, config, "format")
    _write(report.to_csv() if fmt == "csv" else report.dumps() + "\n", args.output)
    return EXIT_OK


def cmd_oracle(args, config) -> int:
    c = circ.load_circuit(args.circuit)
    psi = oracle.statevector(c)
    m = int(resolve(args, config, "sample"))
    if m:
        bits = oracle.sample(c, m, float(resolve(args, config, "fidelity")), resolve_seed(args, config), psi)
        if args.samples_out:
            write_bitstrings(bits, args.samples_out)
    elif args.bitstrings:
        bits = read_bitstrings(args.bitstrings)
    else:
        bits = [oracle.index_bitstring(i, c.n_qubits) for i in range(2 ** c.n_qubits)]
    _write(oracle.amplitudes_for(c, bits, psi).to_text(), args.output)
    return EXIT_OK


def cmd_bench(args, config) -> int:
    """Time the costliest steps before and after top-k reordering."""
    n, cycles = int(resolve(args, config, "qubits")), int(resolve(args, config, "cycles"))
    seed = resolve_seed(args, config)
    if args.circuit:
        c = circ.load_circuit(args.circuit)
    else:
        c = circ.random_circuit(n, cycles, seed)
    net = circuit_to_network(c, _state_for(c, args.bitstrings))
    tree = greedy_init(net)
    k = min(int(resolve(args, config, "topk")), len(tree.steps()))
    repeats = int(resolve(args, config, "repeats"))
    after = engine.reorder_topk(tree, k)
    rows = []
    timings = {}
    for name, t in (("before", tree), ("after", after)):
        best = None
        for _ in range(repeats):
            counter = engine.FlopCounter()
            engine.contract_subtask(net, t, None, 0, counter, record=True)
            recs = counter.records
            best = recs if best is None else [min(x, y, key=lambda r: r.time) for x, y in zip(best, recs)]
        timings[name] = best
    ranked = sorted(range(len(tree.steps())), key=lambda i: (-tree.info(tree.steps()[i]).tcc, i))[:k]
    total_time = sum(r.time for r in timings["before"]) or 1.0
    for rank, i in enumerate(ranked, start=1):
        b, a = timings["before"][i], timings["after"][i]
        rows.append({"rank": rank, "step": i, "Tcc": b.tcc, "time_share": b.time / total_time,
                     "formable_before": b.formable, "formable_after": a.formable,
                     "time_before": b.time, "time_after": a.time,
                     "speedup": b.time / a.time if a.time > 0 else None})
    fmt = resolve(args, config, "format")
    if fmt == "csv":
        keys = list(rows[0]) if rows else []
        text = ",".join(keys) + "\n" + "".join(",".join(str(r[k]) for k in keys) + "\n" for r in rows)
    else:
        text = json.dumps({"qubits": c.n_qubits, "steps": len(tree.steps()), "topk": rows}, indent=1) + "\n"
    _write(text, args.output)
    return EXIT_OK


def cmd_precision_bench(args, config) -> int:
    t0 = time.perf_counter()
    errors = precision.dot_error_study(int(resolve(args, config, "trials")), int(resolve(args, config, "length")),
                                        float(resolve(args, config, "lo")), float(resolve(args, config, "hi")),
                                        seed=resolve_seed(args, config))
    medians = {name: float(np.median(e)) for name, e in errors.items()}
    fmt = resolve(args, config, "format")
    if fmt == "csv":
        text = "method,median_relative_error\n" + "".join(f"{k},{v:.17g}\n" for k, v in medians.items())
    else:
        text = json.dumps({"median_relative_error": medians, "seconds": time.perf_counter() - t0}, indent=1) + "\n"
    _write(text, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tenkontract", description=__doc__)
    p.add_argument("--config", help=f"TOML config file (default: ./{CONFIG_NAME} if present)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-circuit", help="generate a random circuit")
    g.add_argument("--qubits", "-n", type=int)
    g.add_argument("--cycles", "-c", type=int)
    g.add_argument("--pattern", choices=["auto", "line", "grid"])
    g.add_argument("--no-avoid-repeats", dest="avoid_repeats", action="store_false", default=None)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output")

    f = sub.add_parser("pathfind", help="search a contraction order and write an order file")
    f.add_argument("circuit")
    f.add_argument("--bitstrings", help="sample file; omit for the full state")
    f.add_argument("--alpha", type=float)
    f.add_argument("--beta", type=float)
    f.add_argument("--sweeps", type=int)
    f.add_argument("--t0", type=float)
    f.add_argument("--tmin", type=float)
    f.add_argument("--decay", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--mem-budget", dest="mem_budget")
    f.add_argument("--finetune-sweeps", dest="finetune_sweeps", type=int)
    f.add_argument("--balance", action="store_true", default=None)
    f.add_argument("--reorder-topk", dest="reorder_topk", type=int)
    f.add_argument("-o", "--output")

    c = sub.add_parser("contract", help="contract a circuit along an order file")
    c.add_argument("circuit")
    c.add_argument("order")
    c.add_argument("--bitstrings")
    c.add_argument("--schedule", help="precision schedule JSON")
    c.add_argument("--precision", choices=sorted(precision.FORMATS))
    c.add_argument("--split", type=int, choices=[1, 3])
    c.add_argument("--accum", choices=["fp32", "fp64"])
    c.add_argument("--mixed-topk", dest="mixed_topk", type=int)
    c.add_argument("--low-precision", dest="low_precision", choices=sorted(precision.FORMATS))
    c.add_argument("--low-split", dest="low_split", type=int, choices=[1, 3])
    c.add_argument("--workers", type=int)
    c.add_argument("--flop-report", dest="flop_report")
    c.add_argument("-o", "--output")

    v = sub.add_parser("verify", help="fidelity report for an amplitude file")
    v.add_argument("amplitudes")
    v.add_argument("--reference", help="higher-precision amplitude file for error estimates")
    v.add_argument("--samples", help="sample list; repeats weight the estimate")
    v.add_argument("--bins", type=int)
    v.add_argument("--format", choices=["json", "csv"])
    v.add_argument("-o", "--output")

    o = sub.add_parser("oracle", help="state-vector amplitudes and samples")
    o.add_argument("circuit")
    o.add_argument("--bitstrings")
    o.add_argument("--sample", type=int, help="draw this many samples instead of reading bitstrings")
    o.add_argument("--fidelity", type=float)
    o.add_argument("--seed", type=int)
    o.add_argument("--samples-out", dest="samples_out")
    o.add_argument("-o", "--output")

    b = sub.add_parser("bench", help="per-step timing before/after top-k reordering")
    b.add_argument("--circuit")
    b.add_argument("--bitstrings")
    b.add_argument("--qubits", type=int)
    b.add_argument("--cycles", type=int)
    b.add_argument("--topk", type=int)
    b.add_argument("--repeats", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--format", choices=["json", "csv"])
    b.add_argument("-o", "--output")

    e = sub.add_parser("precision-bench", help="dot-product error study across formats")
    e.add_argument("--trials", type=int)
    e.add_argument("--length", type=int)
    e.add_argument("--lo", type=float)
    e.add_argument("--hi", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--format", choices=["json", "csv"])
    e.add_argument("-o", "--output")
    return p


COMMANDS = {
    "gen-circuit": cmd_gen_circuit,
    "pathfind": cmd_pathfind,
    "contract": cmd_contract,
    "verify": cmd_verify,
    "oracle": cmd_oracle,
    "bench": cmd_bench,
    "precision-bench": cmd_precision_bench,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (OSError, ValueError, KeyError, tomllib.TOMLDecodeError, engine.SubtaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
