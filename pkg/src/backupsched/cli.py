"""Command-line front end.

Exit codes: 0 on success, 1 on runtime failure (missing files, non-convergence,
out-of-horizon attacks), 2 on usage errors (bad flags, invalid values).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__, checkpoint, config, oracle, schemes, threatsim
from . import rng as rngmod
from .agent import HyperParams, train
from .errors import CheckpointError, InvalidArgument, NoConvergence, OutOfHorizon
from .evaluation import DEFAULT_STEPS, DEFAULT_WARMUP, load_trace_csv, rollout, summarize

log = logging.getLogger("backupsched")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CHECKPOINT_NAME = "checkpoint"
LOG_NAME = "log.csv"
REPORT_NAME = "report.json"
CONFIG_NAME = "config.txt"
BEST_SCHEME_NAME = "best_scheme.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False)


# ---- policy sources shared by eval, replay, attack and export-plot-data ----

def _add_policy_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint", help="trained agent checkpoint (greedy policy)")
    src.add_argument("--scheme", choices=["round-robin", "golden", "random"], help="built-in scheme")
    src.add_argument("--scheme-file", help="scheme text file")
    p.add_argument("--k", type=int, default=None, help="number of backup devices (built-in schemes)")
    p.add_argument("--step", type=float, default=None, help="step factor for round-robin (default 2.0)")
    p.add_argument("--seed", type=int, default=0, help="seed for the random scheme")
    p.add_argument("--n-steps", type=int, default=DEFAULT_STEPS, help="update actions to play")
    p.add_argument("--lambda", dest="lam", type=float, default=5.0, help="reward scale")


def _policy(args):
    """``(policy, k)`` from whichever source flag was given."""
    if args.checkpoint:
        agent = checkpoint.load(args.checkpoint)
        if args.k is not None and args.k != agent.k:
            raise UsageError(f"--k {args.k} does not match the checkpoint (k={agent.k})")
        return agent.policy(), agent.k
    if args.scheme_file:
        spec = schemes.SchemeSpec.load(args.scheme_file)
        if args.k is not None and args.k != spec.k:
            raise UsageError(f"--k {args.k} does not match the scheme file (k={spec.k})")
        return schemes.PeriodicPolicy(spec), spec.k
    name = args.scheme or "round-robin"
    k = args.k if args.k is not None else 3
    if args.step is not None and name != "round-robin":
        raise UsageError("--step only applies to --scheme round-robin")
    if name == "round-robin":
        spec = schemes.round_robin(k, args.step if args.step is not None else 2.0)
    elif name == "golden":
        spec = schemes.golden(k)
    else:
        return schemes.RandomPolicy(k, rngmod.stream(args.seed, "policy")), k
    return schemes.PeriodicPolicy(spec), k


def _trace(args):
    if getattr(args, "trace_in", None):
        return load_trace_csv(args.trace_in, args.lam)
    policy, k = _policy(args)
    return rollout(policy, k, args.n_steps, args.lam)


# ---- subcommands ----

_HP_FLAGS = [f for f in config.config_keys() if f not in ("k", "out_dir", "seed")]


def cmd_train(args) -> int:
    overrides = {}
    for key in _HP_FLAGS + ["seed", "k"]:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            overrides[key] = value
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    cfg = config.load_config(args.config, overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("training k=%d for %d x %d steps into %s", cfg.k, cfg.hp.n_eps, cfg.hp.n_steps, out)

    def progress(entry):
        log.info("episode %d: mean reward %.4f, mean q %.4f", entry.episode, entry.mean_reward, entry.mean_q_reporting)

    agent, tlog = train(cfg.hp, cfg.k, progress)
    checkpoint.save(agent, out / CHECKPOINT_NAME)
    tlog.write_csv(out / LOG_NAME)
    (out / CONFIG_NAME).write_text(config.dump_config(cfg))
    trace = rollout(agent.policy(), cfg.k, args.eval_steps, cfg.hp.lam)
    report = summarize(trace, args.warmup)
    (out / REPORT_NAME).write_text(report.to_json() + "\n")
    _emit(report.to_json(), None)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.warmup < 0 or args.n_steps <= args.warmup:
        raise UsageError(f"--n-steps ({args.n_steps}) must exceed --warmup ({args.warmup})")
    trace = _trace(args)
    if args.trace:
        trace.write_csv(args.trace)
    _emit(summarize(trace, args.warmup).to_json(), args.out)
    return EXIT_OK


def cmd_replay(args) -> int:
    trace = _trace(args)
    _emit(trace.to_csv(), args.out)
    return EXIT_OK


def cmd_attack(args) -> int:
    trace = _trace(args)
    if args.worst_case:
        _emit(threatsim.worst_case_json(trace), args.out)
        return EXIT_OK
    tm = threatsim.ThreatModel(args.model, args.delta, args.delta_mean, args.beta)
    samples = threatsim.draw_samples(trace, tm, args.n_samples, rngmod.stream(args.seed, "attack"))
    if args.samples_csv:
        Path(args.samples_csv).write_text(threatsim.samples_to_csv(samples))
    _emit(_json(threatsim.summarize_samples(samples, tm)), args.out)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = oracle.SearchConfig(
        k=args.k, max_period=args.max_period, objective=args.objective,
        grid=args.grid, refine_rounds=args.refine_rounds,
    )
    result = oracle.search(cfg)
    scheme_out = Path(args.scheme_out) if args.scheme_out else Path(config.default_output_dir()) / BEST_SCHEME_NAME
    scheme_out.parent.mkdir(parents=True, exist_ok=True)
    result.best.save(scheme_out)
    _emit(result.to_json(), args.out)
    return EXIT_OK


def _training_series(path) -> str:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "mean_reward" not in rows[0]:
        raise InvalidArgument(f"{path} is not a training log")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "mean_reward", "mean_q_reporting"])
    for r in rows:
        w.writerow([r["episode"], r["mean_reward"], r["mean_q_reporting"]])
    return buf.getvalue()


def _trace_series(trace) -> str:
    ratios = threatsim.worst_case_series(trace)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "reward", "q_reporting", "step_size", "device", "worst_case_ratio"])
    for rec, ratio in zip(trace.records, ratios):
        w.writerow([rec.step, repr(rec.reward), repr(rec.q_reporting), repr(rec.step_size), rec.device, repr(float(ratio))])
    return buf.getvalue()


def cmd_export_plot_data(args) -> int:
    if args.log:
        _emit(_training_series(args.log), args.out)
    else:
        _emit(_trace_series(_trace(args)), args.out)
    return EXIT_OK


# ---- parser ----

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="backupsched", description="Backup rotation scheduling toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a DDPG agent")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out-dir", default=None, help=f"output directory (default ${config.OUTPUT_DIR_ENV} or ./runs)")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    types = HyperParams.field_types()
    for key in _HP_FLAGS:
        attr = "lam" if key == "lambda" else key
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=types[attr], default=None)
    p.add_argument("--eval-steps", type=int, default=DEFAULT_STEPS, help="steps in the final greedy evaluation")
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a scheme or trained agent")
    _add_policy_args(p)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.add_argument("--trace", help="also write the per-step trace CSV here")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="play a scheme or agent and print the trace CSV")
    _add_policy_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("attack", help="simulate attacks against a trace")
    _add_policy_args(p)
    p.add_argument("--trace", dest="trace_in", help="trace CSV to attack instead of a policy")
    p.add_argument("--worst-case", action="store_true", help="emit the perfect-knowledge ratio series")
    p.add_argument("--model", choices=list(threatsim.VARIANTS), default=threatsim.ZERO_KNOWLEDGE)
    p.add_argument("--delta", type=float, default=0.0, help="fixed delay between infection and execution")
    p.add_argument("--delta-mean", type=float, default=None, help="exponential delay with this mean")
    p.add_argument("--beta", type=float, default=0.0, help="bias exponent for --model biased")
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--samples-csv", help="also write raw samples here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("search", help="brute-force search over periodic schemes")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--max-period", type=int, default=1)
    p.add_argument("--objective", choices=list(oracle.OBJECTIVES), default=oracle.MEAN_Q)
    p.add_argument("--grid", type=float, default=0.05)
    p.add_argument("--refine-rounds", type=int, default=3)
    p.add_argument("--scheme-out", help=f"where to write the best scheme (default <output dir>/{BEST_SCHEME_NAME})")
    p.add_argument("--out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("export-plot-data", help="CSV series for reward and q curves")
    _add_policy_args(p)
    p.add_argument("--log", help="training log.csv to convert instead of a policy rollout")
    p.add_argument("--trace", dest="trace_in", help="trace CSV instead of a policy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, InvalidArgument) as exc:
        print(f"backupsched {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError, NoConvergence, OutOfHorizon, FloatingPointError) as exc:
        print(f"backupsched {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
