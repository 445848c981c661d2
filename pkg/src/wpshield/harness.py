"""Experiment runner: train per seed, write CSV/JSON outputs, compare runs."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .envs import ENV_NAMES, dump_env, make_env
from .shield import ShieldConfig
from .train import Metrics, TrainConfig, baseline_train, spice_train

logger = logging.getLogger(__name__)

MODES = ("spice", "unshielded")
CSV_COLUMNS = ("seed", "epoch", "episode", "return", "violations_this_episode",
               "cumulative_violations", "interventions", "steps")
SEED_OFFSET_VAR = "SPICE_SEED_OFFSET"


class HarnessError(RuntimeError):
    """Bad input for run/compare that should end the CLI with a message."""


@dataclass
class ExperimentConfig:
    env: str
    mode: str = "spice"
    seeds: list[int] = field(default_factory=lambda: [0])
    epochs: int = 30
    horizon: int = 5
    real_episodes: int = 10
    sim_episodes: int = 70
    capacity: int = 100_000
    out: str = "runs/out"
    verbose: bool = False

    def __post_init__(self):
        if self.env not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.env!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            real_episodes=self.real_episodes,
            sim_episodes=self.sim_episodes,
            capacity=self.capacity,
            shield=ShieldConfig(H=self.horizon),
            seed=seed,
            verbose=self.verbose,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class SeedSummary:
    seed: int
    total_violations: int
    violations_after_epoch1: int
    final_return: float
    zeta: float
    wall_time: float
    shield_calls: int = 0
    mean_shield_latency: float = 0.0
    backups: int = 0


@dataclass
class SummaryReport:
    env: str
    mode: str
    seeds: list[SeedSummary]

    @property
    def total_violations(self) -> int:
        return sum(s.total_violations for s in self.seeds)

    @property
    def violations_after_epoch1(self) -> int:
        return sum(s.violations_after_epoch1 for s in self.seeds)

    @property
    def mean_final_return(self) -> float:
        return float(np.mean([s.final_return for s in self.seeds]))

    @property
    def mean_zeta(self) -> float:
        return float(np.mean([s.zeta for s in self.seeds]))

    @property
    def wall_time(self) -> float:
        return float(sum(s.wall_time for s in self.seeds))

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "mode": self.mode,
            "seeds": [asdict(s) for s in self.seeds],
            "aggregate": {
                "total_violations": self.total_violations,
                "violations_after_epoch1": self.violations_after_epoch1,
                "mean_final_return": self.mean_final_return,
                "mean_zeta": self.mean_zeta,
                "wall_time": self.wall_time,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> SummaryReport:
        return cls(d["env"], d["mode"], [SeedSummary(**s) for s in d["seeds"]])


def seed_offset() -> int:
    raw = os.environ.get(SEED_OFFSET_VAR, "0").strip() or "0"
    try:
        return int(raw)
    except ValueError:
        raise HarnessError(f"{SEED_OFFSET_VAR} must be an integer, got {raw!r}") from None


def summarize(seed: int, metrics: Metrics) -> SeedSummary:
    calls = metrics.shield_calls
    return SeedSummary(
        seed=seed,
        total_violations=metrics.total_violations,
        violations_after_epoch1=metrics.violations_after(1),
        final_return=metrics.final_return(),
        zeta=metrics.zeta,
        wall_time=metrics.wall_time,
        shield_calls=calls,
        mean_shield_latency=metrics.shield_seconds / calls if calls else 0.0,
        backups=metrics.backups,
    )


def episode_rows(seed: int, metrics: Metrics) -> list[dict]:
    return [{
        "seed": seed, "epoch": e.epoch, "episode": e.episode, "return": e.ret,
        "violations_this_episode": e.violations,
        "cumulative_violations": e.cumulative_violations,
        "interventions": e.interventions, "steps": e.steps,
    } for e in metrics.episodes]


def _prepare_out(path: Path):
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise HarnessError(f"output directory {path} is not writable: {exc}") from exc


def run(cfg: ExperimentConfig) -> SummaryReport:
    """Train every seed and write episodes.csv, summary.json, config.json and checkpoints."""
    out = Path(cfg.out)
    _prepare_out(out)
    env = make_env(cfg.env)
    train = spice_train if cfg.mode == "spice" else baseline_train
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))

    summaries = []
    with open(out / "episodes.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for seed in cfg.seeds:
            _, metrics, _, models = train(env, cfg.train_config(seed))
            writer.writerows(episode_rows(seed, metrics))
            fh.flush()
            seed_dir = out / f"seed_{seed}"
            seed_dir.mkdir(exist_ok=True)
            for epoch, M in enumerate(models, start=1):
                M.save(seed_dir / f"model_epoch_{epoch:03d}.json")
            if cfg.verbose:
                with open(seed_dir / "shield_log.jsonl", "w") as log_fh:
                    for entry in metrics.shield_log:
                        log_fh.write(json.dumps(entry) + "\n")
            s = summarize(seed, metrics)
            summaries.append(s)
            logger.info("%s/%s seed %d: violations %d, final return %.3f, zeta %.3f",
                        cfg.env, cfg.mode, seed, s.total_violations, s.final_return, s.zeta)

    report = SummaryReport(cfg.env, cfg.mode, summaries)
    (out / "summary.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report


def violation_ratio(a: dict[str, dict[int, int]], b: dict[str, dict[int, int]]):
    """Geometric mean over envs of ``(mean_B + 1) / (mean_A + 1)``.

    Each argument maps env name to ``{seed: violations}``. Returns the ratio
    and the per-env rows ``(env, mean_A, mean_B, ratio)``.
    """
    if set(a) != set(b):
        raise HarnessError(f"runs cover different environments: {sorted(a)} vs {sorted(b)}")
    if not a:
        raise HarnessError("no runs to compare")
    rows = []
    for env in sorted(a):
        if set(a[env]) != set(b[env]):
            raise HarnessError(f"seed mismatch on {env}: {sorted(a[env])} vs {sorted(b[env])}")
        mean_a = float(np.mean(list(a[env].values())))
        mean_b = float(np.mean(list(b[env].values())))
        rows.append((env, mean_a, mean_b, (mean_b + 1.0) / (mean_a + 1.0)))
    ratio = math.exp(np.mean([math.log(r[3]) for r in rows]))
    return ratio, rows


def _load_runs(path: Path) -> dict[str, dict[int, int]]:
    files = [path / "summary.json"] if (path / "summary.json").exists() \
        else sorted(path.glob("*/summary.json"))
    if not files:
        raise HarnessError(f"no summary.json under {path}")
    runs: dict[str, dict[int, int]] = {}
    for f in files:
        rep = SummaryReport.from_dict(json.loads(f.read_text()))
        if rep.env in runs:
            raise HarnessError(f"environment {rep.env} appears twice under {path}")
        runs[rep.env] = {s.seed: s.total_violations for s in rep.seeds}
    return runs


def compare(dir_a, dir_b, stream=None) -> float:
    """Print per-env rows and the smoothed geometric-mean ratio B/A."""
    stream = stream or sys.stdout
    ratio, rows = violation_ratio(_load_runs(Path(dir_a)), _load_runs(Path(dir_b)))
    print(f"{'env':<16}{'A':>12}{'B':>12}{'ratio':>10}", file=stream)
    for env, va, vb, r in rows:
        print(f"{env:<16}{va:>12.2f}{vb:>12.2f}{r:>10.3f}", file=stream)
    print(f"geometric mean ratio B/A: {ratio:.3f} "
          f"(A has {100.0 * (1.0 - 1.0 / ratio):.1f}% fewer violations)", file=stream)
    return ratio


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wpshield", description="Shielded model-based RL experiments.")
    ap.add_argument("--dump-env", metavar="NAME", choices=ENV_NAMES,
                    help="print an environment's constants as JSON and exit")
    sub = ap.add_subparsers(dest="command")

    r = sub.add_parser("run", help="train over one or more seeds and write results")
    r.add_argument("--env", choices=ENV_NAMES)
    r.add_argument("--mode", choices=MODES, default="spice")
    r.add_argument("--seeds", type=parse_seeds, default=[0], help="comma-separated, e.g. 0,1,2")
    r.add_argument("--epochs", type=_positive, default=30)
    r.add_argument("--horizon", type=_positive, default=5)
    r.add_argument("--real-episodes", type=_positive, default=10)
    r.add_argument("--sim-episodes", type=_positive, default=70)
    r.add_argument("--capacity", type=_positive, default=100_000)
    r.add_argument("--out", default=None, help="output directory (default runs/ENV-MODE)")
    r.add_argument("--config", default=None, help="replay a config.json written by an earlier run")
    r.add_argument("--dump-env", metavar="NAME", choices=ENV_NAMES, dest="dump_env_run",
                   help="print an environment's constants as JSON and exit")
    r.add_argument("--verbose", action="store_true",
                   help="log progress and write per-call shield diagnostics")

    c = sub.add_parser("compare", help="geometric-mean violation ratio of run B over run A")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    dump = args.dump_env or getattr(args, "dump_env_run", None)
    if dump:
        print(dump_env(dump))
        return 0
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2

    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            compare(args.dir_a, args.dir_b)
            return 0
        if args.config:
            cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
            if args.out:
                cfg.out = args.out
        else:
            if args.env is None:
                ap.error("run requires --env (or --config)")
            offset = seed_offset()
            cfg = ExperimentConfig(
                env=args.env, mode=args.mode, seeds=[s + offset for s in args.seeds],
                epochs=args.epochs, horizon=args.horizon, real_episodes=args.real_episodes,
                sim_episodes=args.sim_episodes, capacity=args.capacity,
                out=args.out or f"runs/{args.env}-{args.mode}", verbose=args.verbose,
            )
        report = run(cfg)
    except (HarnessError, OSError, ValueError) as exc:
        print(f"wpshield: error: {exc}", file=sys.stderr)
        return 1
    agg = report.to_dict()["aggregate"]
    print(f"{cfg.env} {cfg.mode} seeds={cfg.seeds}: violations {agg['total_violations']} "
          f"(after epoch 1: {agg['violations_after_epoch1']}), "
          f"final return {agg['mean_final_return']:.3f}, zeta {agg['mean_zeta']:.3f}, "
          f"wall {agg['wall_time']:.1f}s -> {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
