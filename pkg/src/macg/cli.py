"""Experiment driver: ``macg gen | train | eval | print-default-config``.

Every run is described by one JSON experiment config (``print-default-config``
emits the full default). Flags override the matching config fields.

Exit codes: 0 success, 2 invalid config or usage, 3 bad or missing data,
4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

from .datagen import GenConfig, GenerationError, LogFormatError, generate, read_log, write_log
from .domain import LogValidationError
from .es import (
    CheckpointError,
    EsConfig,
    benchmark,
    read_checkpoint,
    train,
    write_checkpoint,
    write_history,
)
from .mechanism import replay_episode
from .policies import BidMode, MacgConfig, MacgPolicy, MkbPolicy, OcpcPolicy, ParamsError, Variant
from .scoring import DEFAULT_ETA, DegenerateBenchmarkError, accumulate, score_episode

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

ABLATION_LABELS = {
    Variant.FULL: "MACG",
    Variant.NO_SHARED: "MACG-g",
    Variant.NO_AGENTS: "MACG-l",
    Variant.STATIC_ALLOC: "MACG-a",
}

log = logging.getLogger("macg")


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


class DataError(RuntimeError):
    """Missing, malformed or unusable input data."""


@dataclass(frozen=True)
class Paths:
    train_log: str = "runs/data/train.jsonl"
    test_log: str = "runs/data/test.jsonl"
    out_dir: str = "runs/out"
    checkpoint: str | None = None   # eval default: <out_dir>/checkpoint.json

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "checkpoint.json"


@dataclass(frozen=True)
class PolicyOptions:
    """The parts of the policy-net config that are not learned from data."""

    range: float = 0.3
    variant: str = Variant.FULL.value
    static_alloc: float = 0.5
    bid_mode: str = BidMode.CALIBRATED.value

    def macg_config(self, train_log) -> MacgConfig:
        return MacgConfig.from_log(train_log, range=self.range, variant=self.variant,
                                   static_alloc=self.static_alloc, bid_mode=self.bid_mode)


@dataclass(frozen=True)
class ReportOptions:
    baseline: str = "ocpc"
    ablations: tuple[str, ...] = ()
    eta: float = DEFAULT_ETA
    checkpoint_every: int = 1     # 0 keeps only the final checkpoint


@dataclass(frozen=True)
class ExperimentConfig:
    paths: Paths = field(default_factory=Paths)
    gen: GenConfig = field(default_factory=GenConfig)
    es: EsConfig = field(default_factory=EsConfig)
    policy: PolicyOptions = field(default_factory=PolicyOptions)
    report: ReportOptions = field(default_factory=ReportOptions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "paths": asdict(self.paths),
            "gen": self.gen.to_dict(),
            "es": asdict(self.es),
            "policy": asdict(self.policy),
            "report": {**asdict(self.report), "ablations": list(self.report.ablations)},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        sections = {"paths": Paths, "gen": GenConfig, "es": EsConfig,
                    "policy": PolicyOptions, "report": ReportOptions}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        built = {name: _section(name, kind, data.get(name, {})) for name, kind in sections.items()}
        cfg = cls(**built)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            Variant(self.policy.variant)
        except ValueError:
            raise ConfigError(f"policy.variant: unknown variant {self.policy.variant!r}; "
                              f"choose from {[v.value for v in Variant]}") from None
        try:
            BidMode(self.policy.bid_mode)
        except ValueError:
            raise ConfigError(f"policy.bid_mode: unknown mode {self.policy.bid_mode!r}") from None
        if not 0.0 < self.policy.range < 1.0:
            raise ConfigError(f"policy.range: must lie in (0, 1), got {self.policy.range}")
        if not 0.0 <= self.policy.static_alloc <= 1.0:
            raise ConfigError(f"policy.static_alloc: must lie in [0, 1], got {self.policy.static_alloc}")
        if self.report.baseline != "ocpc":
            raise ConfigError(f"report.baseline: only 'ocpc' is supported, got {self.report.baseline!r}")
        for v in self.report.ablations:
            try:
                Variant(v)
            except ValueError:
                raise ConfigError(f"report.ablations: unknown variant {v!r}") from None
        if self.report.checkpoint_every < 0:
            raise ConfigError("report.checkpoint_every: must be >= 0")


def _section(name: str, kind, data: Any):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(kind)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown field")
    if kind is ReportOptions and "ablations" in data:
        data = {**data, "ablations": tuple(data["ablations"])}
    try:
        return kind(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return ExperimentConfig.from_dict(data)


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    try:
        if getattr(args, "seed", None) is not None:
            cfg = replace(cfg, gen=replace(cfg.gen, seed=args.seed), es=replace(cfg.es, seed=args.seed))
        if getattr(args, "out", None) is not None:
            cfg = replace(cfg, paths=replace(cfg.paths, out_dir=args.out))
        for flag in ("train_log", "test_log", "checkpoint"):
            if getattr(args, flag, None) is not None:
                cfg = replace(cfg, paths=replace(cfg.paths, **{flag: getattr(args, flag)}))
        if getattr(args, "variant", None) is not None:
            cfg = replace(cfg, policy=replace(cfg.policy, variant=args.variant))
        if getattr(args, "ablation", None):
            cfg = replace(cfg, report=replace(cfg.report, ablations=tuple(args.ablation)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _load_log(path: str):
    if not Path(path).is_file():
        raise DataError(f"log file not found: {path}")
    try:
        return read_log(path)
    except LogFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg: ExperimentConfig, out: str | None = None) -> tuple[Path, Path]:
    """Write train and test logs. With ``out`` they go to ``out/{train,test}.jsonl``."""
    if out is not None:
        train_path, test_path = Path(out) / "train.jsonl", Path(out) / "test.jsonl"
    else:
        train_path, test_path = Path(cfg.paths.train_log), Path(cfg.paths.test_log)
    t0 = time.perf_counter()
    try:
        train_log, test_log = generate(cfg.gen)
    except GenerationError as exc:
        raise ConfigError(f"gen: {exc}") from exc
    for path, lg in ((train_path, train_log), (test_path, test_log)):
        path.parent.mkdir(parents=True, exist_ok=True)
        write_log(lg, path, cfg.gen)
    kinds = [p.kind.name.lower() for p in train_log.ads.values()]
    counts = {k: kinds.count(k) for k in sorted(set(kinds))}
    print(f"wrote {train_path} ({len(train_log.auctions)} auctions) and {test_path} "
          f"({len(test_log.auctions)} auctions); {len(train_log.ads)} ads {counts}; "
          f"reserve {train_log.reserve}; {time.perf_counter() - t0:.1f}s")
    return train_path, test_path


def cmd_train(cfg: ExperimentConfig, workers: int = 1) -> Path:
    """Run the ES on the training log; write history files and checkpoints."""
    train_log = _load_log(cfg.paths.train_log)
    macg = cfg.policy.macg_config(train_log)
    out = Path(cfg.paths.out_dir)
    ckpt_dir = out / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    every = cfg.report.checkpoint_every
    if every:
        ckpt_dir.mkdir(exist_ok=True)

    def on_iteration(record, best_params, seeds):
        if every and record.iteration % every == 0:
            write_checkpoint(ckpt_dir / f"iter_{record.iteration:03d}.json", best_params,
                             record.best, record.iteration, cfg.es, macg, seeds)

    t0 = time.perf_counter()
    try:
        result = train(train_log, cfg.es, macg, workers=workers, on_iteration=on_iteration)
    except DegenerateBenchmarkError as exc:
        raise DataError(f"degenerate benchmark on {cfg.paths.train_log}: {exc}") from None
    write_history(result.history, out)
    final = out / "checkpoint.json"
    write_checkpoint(final, result.best_params, result.best_report, len(result.history),
                     cfg.es, macg, result.seeds)
    best = result.best_report
    print(f"{len(result.history)} iterations ({'converged' if result.converged else 'iteration cap'}) "
          f"in {time.perf_counter() - t0:.1f}s; best M_all {best.m_all:.4f} "
          f"(M0 {best.m0:.4f}, M1 {best.m1:.4f}, M2 {best.m2:.4f}, M3 {best.m3:.4f}); wrote {final}")
    return final


EVAL_COLUMNS = (
    "method", "m0", "m1", "m2", "m3", "m_ad", "m_all",
    "m0_pct", "m1_pct", "m2_pct", "m3_pct",
    "gmv_pct", "clicks1_pct", "gmv2_pct", "cart3_pct",
    "rpm_ratio", "floor_satisfaction",
)


def eval_rows(test_log, params, macg: MacgConfig, ablations: Sequence[str] = (),
              eta: float = DEFAULT_ETA, lambda_m: float = 1.2) -> list[dict[str, Any]]:
    """Score OCPC, MKB, MACG and each ablation on ``test_log`` against OCPC.

    ``m*_pct`` is (1 + score) * 100; the ``*_pct`` value columns are the raw
    objective ratios (global GMV, group-1 clicks, group-2 GMV, group-3 cart)
    versus OCPC, times 100. The OCPC row is 100 everywhere by construction.
    """
    bench = benchmark(test_log)
    bench_acc = accumulate(bench, test_log)
    methods: list[tuple[str, Any]] = [("OCPC", OcpcPolicy()), ("MKB", MkbPolicy()),
                                      (ABLATION_LABELS[macg.variant], MacgPolicy(params, macg))]
    for v in ablations:
        methods.append((ABLATION_LABELS[Variant(v)], MacgPolicy(params, macg.with_variant(v))))
    rows = []
    for name, policy in methods:
        result = replay_episode(test_log, policy)
        rep = score_episode(result, bench, test_log, lambda_m, eta)
        acc = accumulate(result, test_log)
        ratios = (acc.gmv[0] / bench_acc.gmv[0], acc.clicks[1] / bench_acc.clicks[1],
                  acc.gmv[2] / bench_acc.gmv[2], acc.cart[3] / bench_acc.cart[3])
        row = {"method": name}
        row.update({k: float(getattr(rep, k)) for k in ("m0", "m1", "m2", "m3", "m_ad", "m_all")})
        row.update({f"m{k}_pct": (1.0 + row[f"m{k}"]) * 100.0 for k in range(4)})
        row.update({col: float(r) * 100.0 for col, r in zip(EVAL_COLUMNS[11:15], ratios)})
        row["rpm_ratio"] = float(rep.rpm_ratio)
        row["floor_satisfaction"] = float(rep.floor_satisfaction)
        rows.append(row)
    return rows


def cmd_eval(cfg: ExperimentConfig, variant: str | None = None) -> Path:
    """Replay the test log under each method and write ``eval_table.csv``."""
    test_log = _load_log(cfg.paths.test_log)
    ckpt_path = cfg.paths.checkpoint_path()
    if not ckpt_path.is_file():
        raise DataError(f"checkpoint not found: {ckpt_path}")
    try:
        ckpt = read_checkpoint(ckpt_path)
    except (CheckpointError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad checkpoint {ckpt_path}: {exc}") from None
    macg = ckpt["macg_config"]
    if variant is not None:
        macg = macg.with_variant(variant)
    try:
        rows = eval_rows(test_log, ckpt["params"], macg, cfg.report.ablations,
                         cfg.report.eta, cfg.es.lambda_m)
    except DegenerateBenchmarkError as exc:
        raise DataError(f"degenerate benchmark on {cfg.paths.test_log}: {exc}") from None
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "eval_table.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(EVAL_COLUMNS), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    width = max(len(r["method"]) for r in rows)
    print(f"{'method':<{width}}  " + "  ".join(f"{c:>8}" for c in ("M0", "M1", "M2", "M3", "M_all")))
    for r in rows:
        print(f"{r['method']:<{width}}  " + "  ".join(
            f"{r[c]:8.2f}" for c in ("m0_pct", "m1_pct", "m2_pct", "m3_pct"))
            + f"  {r['m_all']:8.4f}")
    print(f"(M0..M3 as (1 + score) * 100% versus OCPC; wrote {path})")
    return path


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every ES iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=True):
        p.add_argument("--config", metavar="PATH", help="JSON experiment config")
        if seed:
            p.add_argument("--seed", type=int, metavar="U64", help="override gen.seed and es.seed")
        p.add_argument("--out", metavar="DIR", help="output directory")

    p = sub.add_parser("gen", help="generate train and test logs")
    common(p)

    p = sub.add_parser("train", help="train the policy net with the ES")
    common(p)
    p.add_argument("--workers", type=int, default=1, metavar="N", help="evaluation processes")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--train-log", metavar="PATH")

    p = sub.add_parser("eval", help="compare methods on the test log")
    common(p, seed=False)
    p.add_argument("--variant", choices=[v.value for v in Variant],
                   help="variant for the main MACG row (default: the checkpoint's)")
    p.add_argument("--ablation", action="append", choices=[v.value for v in Variant],
                   help="add a row for this variant (repeatable)")
    p.add_argument("--test-log", metavar="PATH")
    p.add_argument("--checkpoint", metavar="PATH")

    p = sub.add_parser("print-default-config", help="print the full default config as JSON")
    p.add_argument("--seed", type=int, metavar="U64")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "print-default-config":
            cfg = apply_overrides(ExperimentConfig(), args)
            print(json.dumps(cfg.to_dict(), indent=2))
            return EXIT_OK
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "gen":
            cmd_gen(cfg, args.out)
        elif args.command == "train":
            if args.workers < 1:
                raise ConfigError("--workers: must be >= 1")
            cmd_train(cfg, args.workers)
        elif args.command == "eval":
            cmd_eval(cfg, args.variant)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, LogValidationError, ParamsError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
