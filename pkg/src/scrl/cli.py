"""Command-line entry point: ``scrl score | simulate | sweep``."""

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, TextIO

from .exceptions import ConsistencyError, ValidationError
from .estimators import RewardScorer
from .rewards import DEFAULT_SEED
from .rollouts import iter_query_groups, iter_rollouts
from .sim import SimConfig, SimMetrics, run_simulation

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

LABEL_KEYS = ("tau_pos", "tau_marg", "tau_neg", "lambda_h")
SCORE_KEYS = LABEL_KEYS + ("method", "candidates", "train_size", "seed", "penalize_invalid")
SWEEP_COLUMNS = (
    "cell",
    *LABEL_KEYS,
    "final_greedy_accuracy",
    "final_positive_label_accuracy",
    "final_negative_label_accuracy",
    "mean_positive_label_accuracy",
    "mean_negative_label_accuracy",
    "max_negatives_per_query",
    "mean_reward",
)


CONFIG_DIR = os.path.join(os.path.dirname(__file__), "configs")


def bundled_configs() -> List[str]:
    return sorted(f[:-5] for f in os.listdir(CONFIG_DIR) if f.endswith(".json"))


def resolve_config(path: str) -> str:
    """A path on disk, or the name of a bundled config such as ``adversarial``."""
    if not os.path.exists(path) and path in bundled_configs():
        return os.path.join(CONFIG_DIR, f"{path}.json")
    return path


def read_json_object(path: str, what: str) -> dict:
    path = resolve_config(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: {what} must be a JSON object")
    return data


def flag_overrides(args, mapping: Dict[str, str]) -> dict:
    """Flag values that were actually given, renamed to config keys."""
    out = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


SHARED_FLAGS = {k: k for k in LABEL_KEYS} | {"seed": "seed", "method": "method"}


# ---------------------------------------------------------------- score


def score_summary(n_queries, n_abstained, n_negatives, n_with_negatives, rewards) -> dict:
    n = len(rewards)
    mean = math.fsum(rewards) / n if n else 0.0
    var = math.fsum((r - mean) ** 2 for r in rewards) / n if n else 0.0
    return {
        "queries": n_queries,
        "rollouts_scored": n,
        "abstention_rate": n_abstained / n_queries if n_queries else 0.0,
        "negative_labels": n_negatives,
        "queries_with_negatives": n_with_negatives,
        "reward_mean": mean,
        "reward_std": math.sqrt(var),
        "reward_min": min(rewards) if n else 0.0,
        "reward_max": max(rewards) if n else 0.0,
    }


def format_summary(summary: dict) -> str:
    return "".join(f"{k}: {v}\n" for k, v in summary.items())


def score_stream(src: TextIO, dst: TextIO, scorer: RewardScorer) -> dict:
    """Score contiguous query groups from ``src`` one at a time."""
    n_queries = n_abstained = n_negatives = n_with_negatives = 0
    rewards: List[float] = []
    for group in iter_query_groups(iter_rollouts(src)):
        result = scorer.score_one(group)
        dst.write(result.to_jsonl())
        n_queries += 1
        n_abstained += result.decision.positive is None
        n_negatives += len(result.decision.negatives)
        n_with_negatives += bool(result.decision.negatives)
        rewards.extend(r.reward for r in result.records)
    return score_summary(n_queries, n_abstained, n_negatives, n_with_negatives, rewards)


def build_scorer(args) -> RewardScorer:
    params = {"seed": DEFAULT_SEED}
    if args.config:
        file_params = read_json_object(args.config, "score config")
        unknown = sorted(set(file_params) - set(SCORE_KEYS))
        if unknown:
            raise ValidationError(f"{args.config}: unknown field(s): {', '.join(unknown)}")
        params.update(file_params)
    params.update(
        flag_overrides(args, {**SHARED_FLAGS, "candidates": "candidates", "train_size": "train_size"})
    )
    if args.no_invalid_penalty:
        params["penalize_invalid"] = False
    return RewardScorer(**params).fit()


def cmd_score(args) -> int:
    scorer = build_scorer(args)
    with open(args.input, encoding="utf-8") as src:
        if args.out in (None, "-"):
            summary = score_stream(src, sys.stdout, scorer)
            sys.stderr.write(format_summary(summary))
            return EXIT_OK
        # write beside the target and rename, so a bad line leaves no partial output
        tmp = f"{args.out}.partial"
        try:
            with open(tmp, "w", encoding="utf-8", newline="\n") as dst:
                summary = score_stream(src, dst, scorer)
            os.replace(tmp, args.out)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)
    sys.stdout.write(format_summary(summary))
    return EXIT_OK


# ------------------------------------------------------------- simulate


SIM_FLAGS = {
    **SHARED_FLAGS,
    "candidates": "rollout_budget",
    "train_size": "train_size",
    "iterations": "iterations",
}


def load_config_with_flags(path: str, args, drop=()) -> SimConfig:
    data = read_json_object(path, "simulation config")
    for key in drop:
        data.pop(key, None)
    data.update(flag_overrides(args, SIM_FLAGS))
    return SimConfig.from_dict(data)


def write_metrics(metrics: SimMetrics, directory: str, stem: str = "metrics") -> None:
    os.makedirs(directory, exist_ok=True)
    for ext, text in (("jsonl", metrics.to_jsonl()), ("csv", metrics.to_csv())):
        with open(os.path.join(directory, f"{stem}.{ext}"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    cfg = load_config_with_flags(args.config, args)
    metrics = run_simulation(cfg)
    write_metrics(metrics, args.out)
    final = metrics.final
    sys.stdout.write(
        format_summary(
            {
                "method": cfg.method,
                "iterations": cfg.iterations,
                "seed": cfg.seed,
                "final_greedy_accuracy": final.greedy_accuracy,
                "final_positive_label_accuracy": final.positive_label_accuracy,
                "final_positive_label_ratio": final.positive_label_ratio,
                "final_negative_label_accuracy": final.negative_label_accuracy,
                "final_mean_negatives_per_query": final.mean_negatives_per_query,
            }
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def parse_grid(raw) -> Dict[str, list]:
    if not isinstance(raw, dict) or not raw:
        raise ValidationError("grid: expected a nonempty object of parameter lists")
    grid = {}
    for key in LABEL_KEYS:
        if key not in raw:
            continue
        values = raw[key]
        if not isinstance(values, list) or not values:
            raise ValidationError(f"grid.{key}: expected a nonempty list")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
            raise ValidationError(f"grid.{key}: expected numbers, got {values!r}")
        grid[key] = sorted(set(values))
    unknown = sorted(set(raw) - set(LABEL_KEYS))
    if unknown:
        raise ValidationError(f"grid: unknown parameter(s): {', '.join(unknown)}")
    return grid


def grid_cells(grid: Dict[str, list]) -> List[dict]:
    """Cartesian product in fixed key order, each axis ascending."""
    keys = [k for k in LABEL_KEYS if k in grid]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _mean_defined(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def summary_row(cfg: SimConfig, metrics: SimMetrics) -> dict:
    final = metrics.final
    return {
        **{k: getattr(cfg, k) for k in LABEL_KEYS},
        "final_greedy_accuracy": final.greedy_accuracy,
        "final_positive_label_accuracy": final.positive_label_accuracy,
        "final_negative_label_accuracy": final.negative_label_accuracy,
        "mean_positive_label_accuracy": _mean_defined(metrics.column("positive_label_accuracy")),
        "mean_negative_label_accuracy": _mean_defined(metrics.column("negative_label_accuracy")),
        "max_negatives_per_query": max(metrics.column("mean_negatives_per_query")),
        "mean_reward": math.fsum(metrics.column("mean_reward")) / len(metrics),
    }


def sweep_table(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow(["" if row[c] is None else repr(row[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    data = read_json_object(args.config, "sweep config")
    raw_grid = data.get("grid")
    if args.grid:
        raw_grid = read_json_object(args.grid, "grid")
    if raw_grid is None:
        raise ValidationError("no grid given: add a 'grid' object to the config or pass --grid")
    grid = parse_grid(raw_grid)
    base = load_config_with_flags(args.config, args, drop=("grid",))
    configs = [base.replace(**cell) for cell in grid_cells(grid)]

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_simulation, configs))
    else:
        results = [run_simulation(c) for c in configs]

    cells_dir = os.path.join(args.out, "cells")
    rows = []
    for i, (cfg, metrics) in enumerate(zip(configs, results)):
        write_metrics(metrics, cells_dir, stem=f"cell_{i:03d}")
        rows.append({"cell": i, **summary_row(cfg, metrics)})
    table = sweep_table(rows)
    with open(os.path.join(args.out, "sweep.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table)
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {value}")
    return value


def add_shared(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("labeling and sampling")
    g.add_argument("--tau-pos", type=float, help="minimum top-answer share for a positive label")
    g.add_argument("--tau-marg", type=float, help="required lead of the top answer over the runner-up")
    g.add_argument("--tau-neg", type=float, help="support below which an answer can be labeled negative")
    g.add_argument("--lambda-h", type=float, help="weight of the entropy penalty")
    g.add_argument("--candidates", type=positive_int, help="candidate rollouts per query")
    g.add_argument("--train-size", type=positive_int, help="rollouts kept for the update")
    g.add_argument("--seed", type=nonnegative_int, help=f"random seed (default {DEFAULT_SEED})")
    g.add_argument("--method", choices=("scrl", "ttrl"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scrl", description="Selective-confidence pseudo-rewards for unlabeled rollouts."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a JSONL rollout log")
    p.add_argument("input", help="rollout JSONL, grouped by query_id")
    p.add_argument("--out", help="reward JSONL path (default: stdout, summary on stderr)")
    p.add_argument("--config", help="JSON object with scoring parameters")
    p.add_argument(
        "--no-invalid-penalty",
        action="store_true",
        help="give rollouts without an answer zero reward instead of -tau_neg",
    )
    add_shared(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="run the synthetic policy simulation")
    p.add_argument("config", help="JSON simulation config")
    p.add_argument("--out", default=".", help="directory for metrics.jsonl and metrics.csv")
    p.add_argument("--iterations", type=nonnegative_int)
    add_shared(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="simulate every cell of a threshold grid")
    p.add_argument("config", help="JSON simulation config, optionally with a 'grid' object")
    p.add_argument("--grid", help="JSON grid file; replaces the config's 'grid'")
    p.add_argument("--out", default=".", help="directory for sweep.csv and per-cell metrics")
    p.add_argument("--iterations", type=nonnegative_int)
    p.add_argument("--jobs", type=positive_int, default=1, help="worker processes")
    add_shared(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (ValidationError, ConsistencyError) as exc:
        print(f"scrl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"scrl {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

