"""Filtered multi-objective evolution strategy for the MACG policy net.

Each iteration perturbs W seed vectors into H candidates, replays the training
log under every candidate, scores it against the OCPC benchmark and keeps the
top W by M_all among candidates whose M0 and M_AD are no worse than the
incumbent's. Candidate noise comes from per-(seed, iteration, child) RNG
substreams, so results do not depend on how evaluation is scheduled.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .domain import EpisodeLog
from .mechanism import EpisodeResult, replay_bids, replay_episode
from .policies import N_PARAMS, MacgConfig, MacgPolicy, OcpcPolicy
from .scoring import (
    DEFAULT_ETA,
    Accumulators,
    DegenerateBenchmarkError,
    ScoreReport,
    accumulate,
    constraint_report,
    score_accumulators,
)

log = logging.getLogger(__name__)

PAPER_POPULATION = 10_000
CHECKPOINT_FORMAT = "macg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EsConfig:
    """ES hyperparameters. ``population`` is H, ``seeds`` is W, ``noise_std`` is delta."""

    population: int = 64
    seeds: int = 8
    noise_std: float = 0.05
    max_iterations: int = 30
    lambda_m: float = 1.2
    seed: int = 42
    tolerance: float = 1e-3
    patience: int = 5
    eta: float = DEFAULT_ETA

    def __post_init__(self) -> None:
        if not 1 <= self.seeds <= self.population:
            raise ValueError(f"need 1 <= seeds <= population, got W={self.seeds}, H={self.population}")
        if not self.noise_std >= 0.0:
            raise ValueError("noise_std must be >= 0")
        if self.max_iterations < 1 or self.patience < 1:
            raise ValueError("max_iterations and patience must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EsConfig:
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown EsConfig fields: {sorted(unknown)}")
        return cls(**data)


def _stream(cfg: EsConfig, iteration: int, child: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, iteration, child])


def init_population(cfg: EsConfig, dim: int = N_PARAMS) -> np.ndarray:
    """H standard-normal parameter vectors, one RNG substream per row."""
    return np.stack([_stream(cfg, 0, h).standard_normal(dim) for h in range(cfg.population)])


def perturb(seeds: np.ndarray, cfg: EsConfig, iteration: int) -> np.ndarray:
    """H children, child h = seeds[h % W] + noise_std * N(0, I)."""
    seeds = np.atleast_2d(seeds)
    w, dim = seeds.shape
    return np.stack([seeds[h % w] + cfg.noise_std * _stream(cfg, iteration, h).standard_normal(dim)
                     for h in range(cfg.population)])


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class _EvalContext:
    log: EpisodeLog
    bench: Accumulators
    macg: MacgConfig
    lambda_m: float
    eta: float


def _score(ctx: _EvalContext, params: np.ndarray) -> ScoreReport:
    try:
        policy = MacgPolicy(params, ctx.macg)
        result = replay_bids(ctx.log, policy.episode_bids(ctx.log))
        rep = score_accumulators(accumulate(result, ctx.log), ctx.bench, ctx.lambda_m)
        c = constraint_report(result, ctx.log, ctx.eta)
        return ScoreReport(*(float(v) for v in (rep.m0, rep.m1, rep.m2, rep.m3, rep.m_ad, rep.m_all)),
                           ctx.lambda_m, c.rpm_ratio, c.rpm_satisfied, c.floor_satisfaction)
    except Exception as exc:  # one bad candidate must not stop the run
        log.warning("candidate evaluation failed: %r", exc)
        return ScoreReport.failed(ctx.lambda_m)


_worker_ctx: _EvalContext | None = None


def _init_worker(ctx: _EvalContext) -> None:
    global _worker_ctx
    _worker_ctx = ctx


def _score_in_worker(params: np.ndarray) -> ScoreReport:
    assert _worker_ctx is not None
    return _score(_worker_ctx, params)


class Evaluator:
    """Scores candidate parameter vectors on a fixed log and benchmark.

    With ``workers > 1`` candidates are spread over a process pool; the
    returned list is always in candidate order. Use as a context manager (or
    call :meth:`close`) to shut the pool down.
    """

    def __init__(self, log: EpisodeLog, bench: EpisodeResult, macg: MacgConfig,
                 cfg: EsConfig, workers: int = 1):
        self.ctx = _EvalContext(log, accumulate(bench, log), macg, cfg.lambda_m, cfg.eta)
        self.workers = max(1, int(workers))
        self._pool: ProcessPoolExecutor | None = None

    def __call__(self, candidates: np.ndarray) -> list[ScoreReport]:
        if self.workers == 1:
            return [_score(self.ctx, c) for c in candidates]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(self.workers, initializer=_init_worker, initargs=(self.ctx,))
        chunk = max(1, len(candidates) // (4 * self.workers))
        return list(self._pool.map(_score_in_worker, list(candidates), chunksize=chunk))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> Evaluator:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def benchmark(log: EpisodeLog) -> EpisodeResult:
    """OCPC replay of ``log``; raises if any score would divide by zero."""
    bench = replay_episode(log, OcpcPolicy())
    acc = accumulate(bench, log)
    score_accumulators(acc, acc)
    return bench


def evaluate(candidates: np.ndarray, train_log: EpisodeLog, bench_result: EpisodeResult,
             cfg: EsConfig, macg: MacgConfig, workers: int = 1) -> list[ScoreReport]:
    with Evaluator(train_log, bench_result, macg, cfg, workers) as ev:
        return ev(np.atleast_2d(candidates))


# ---------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class Thresholds:
    m0: float
    m_ad: float
    m_all: float


@dataclass(frozen=True)
class Selection:
    indices: tuple[int, ...]        # surviving candidates, best first, at most W
    thresholds: Thresholds | None
    survivors: int                  # candidates passing the filter

    def shortfall(self, w: int) -> int:
        return w - len(self.indices)


def select(reports: Sequence[ScoreReport], prev: Thresholds | None, cfg: EsConfig) -> Selection:
    """Filter by the previous thresholds (if any), then take the top W by M_all."""
    ok = [i for i, r in enumerate(reports)
          if prev is None or (r.m0 >= prev.m0 and r.m_ad >= prev.m_ad)]
    ranked = sorted(ok, key=lambda i: (-reports[i].m_all, i))
    top = tuple(ranked[:cfg.seeds])
    if not top:
        return Selection((), prev, 0)
    best = reports[top[0]]
    return Selection(top, Thresholds(best.m0, best.m_ad, best.m_all), len(ok))


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    reports: tuple[ScoreReport, ...]
    selected: tuple[int, ...]
    carried: int
    survivors: int
    thresholds: Thresholds
    best: ScoreReport

    def row(self) -> dict[str, Any]:
        finite = [r.m_all for r in self.reports if math.isfinite(r.m_all)]
        return {
            "iteration": self.iteration,
            "best_m0": self.best.m0,
            "best_m1": self.best.m1,
            "best_m2": self.best.m2,
            "best_m3": self.best.m3,
            "best_m_ad": self.best.m_ad,
            "best_m_all": self.best.m_all,
            "threshold_m0": self.thresholds.m0,
            "threshold_m_ad": self.thresholds.m_ad,
            "iter_max_m_all": max(finite) if finite else -math.inf,
            "iter_mean_m_all": float(np.mean(finite)) if finite else -math.inf,
            "survivors": self.survivors,
            "carried": self.carried,
        }


@dataclass
class TrainResult:
    best_params: np.ndarray
    best_report: ScoreReport
    history: list[IterationRecord]
    seeds: np.ndarray
    converged: bool


def plateaued(best_m_all: Sequence[float], cfg: EsConfig) -> bool:
    """True when M_all improved by less than ``tolerance`` over the last ``patience`` iterations.

    Scores are already benchmark-relative, so the improvement is taken relative
    to max(|M_all|, 1) to stay meaningful when M_all is near zero.
    """
    if len(best_m_all) <= cfg.patience:
        return False
    old, new = best_m_all[-1 - cfg.patience], best_m_all[-1]
    return (new - old) / max(abs(old), 1.0) < cfg.tolerance


def train(
    train_log: EpisodeLog,
    cfg: EsConfig,
    macg: MacgConfig | None = None,
    workers: int = 1,
    on_iteration: Callable[[IterationRecord, np.ndarray, np.ndarray], None] | None = None,
    stop_on_plateau: bool = True,
) -> TrainResult:
    """Run the filtered ES on ``train_log``.

    ``on_iteration(record, best_params, seeds)`` is called after every
    selection step (used for checkpoints). Raises
    :class:`DegenerateBenchmarkError` when the benchmark leaves a score undefined.
    """
    macg = macg or MacgConfig.from_log(train_log)
    bench = benchmark(train_log)
    history: list[IterationRecord] = []
    thresholds: Thresholds | None = None
    best_params: np.ndarray | None = None
    best_report: ScoreReport | None = None
    seeds = np.zeros((0, N_PARAMS))
    pop = init_population(cfg)
    converged = False
    with Evaluator(train_log, bench, macg, cfg, workers) as ev:
        for p in range(1, cfg.max_iterations + 1):
            reports = ev(pop)
            sel = select(reports, thresholds, cfg)
            carried = sel.shortfall(cfg.seeds)
            if sel.indices:
                thresholds = sel.thresholds
                best_params = pop[sel.indices[0]].copy()
                best_report = reports[sel.indices[0]]
            seeds = np.concatenate([pop[list(sel.indices)], seeds[:carried]]) if carried else pop[list(sel.indices)]
            if best_report is None or thresholds is None:
                raise DegenerateBenchmarkError("no candidate could be scored")
            record = IterationRecord(p, tuple(reports), sel.indices, carried, sel.survivors,
                                     thresholds, best_report)
            history.append(record)
            log.info("iteration %d: best M_all %.6f (M0 %.6f, M_AD %.6f), %d survivors",
                     p, best_report.m_all, best_report.m0, best_report.m_ad, sel.survivors)
            if on_iteration is not None:
                on_iteration(record, best_params, seeds)
            if stop_on_plateau and plateaued([h.best.m_all for h in history], cfg):
                converged = True
                break
            if p < cfg.max_iterations:
                pop = perturb(seeds, cfg, p)
    assert best_params is not None and best_report is not None
    return TrainResult(best_params, best_report, history, seeds, converged)


# ---------------------------------------------------------------------------
# files


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return _jsonable(v.item())
    return v


def write_history(history: Sequence[IterationRecord], out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``history.csv`` (one summary row per iteration) and ``history.jsonl``
    (the same row plus per-candidate M0 / M_AD / M_all and the selected indices)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, jsonl_path = out / "history.csv", out / "history.jsonl"
    rows = [h.row() for h in history]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["iteration"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for h, row in zip(history, rows):
            rec = {k: _jsonable(v) for k, v in row.items()}
            rec["selected"] = list(h.selected)
            rec["candidates"] = [[_jsonable(r.m0), _jsonable(r.m_ad), _jsonable(r.m_all)] for r in h.reports]
            fh.write(json.dumps(rec) + "\n")
    return csv_path, jsonl_path


def read_history_csv(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_checkpoint(path: str | Path, params: np.ndarray, report: ScoreReport, iteration: int,
                     cfg: EsConfig, macg: MacgConfig, seeds: np.ndarray | None = None) -> None:
    """JSON checkpoint: versioned header, flat parameters, score report and RNG state.

    The RNG state is the root seed plus the next iteration index, which fully
    determines every later noise substream.
    """
    data = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "n_params": int(len(params)),
        "params": [float(v) for v in params],
        "report": {k: _jsonable(v) for k, v in report.to_dict().items()},
        "rng": {"seed": cfg.seed, "next_iteration": iteration},
        "seeds": [[float(v) for v in s] for s in (seeds if seeds is not None else [])],
        "es_config": asdict(cfg),
        "macg_config": {
            "range": macg.range,
            "feature_mean": list(macg.feature_mean),
            "feature_std": list(macg.feature_std),
            "variant": macg.variant.value,
            "static_alloc": macg.static_alloc,
            "bid_mode": macg.bid_mode.value,
        },
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


class CheckpointError(ValueError):
    pass


def read_checkpoint(path: str | Path) -> dict[str, Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {data.get('version')!r}")
    params = np.asarray(data["params"], dtype=float)
    if params.shape != (N_PARAMS,) or data.get("n_params") != N_PARAMS:
        raise CheckpointError(f"{path}: expected {N_PARAMS} parameters, found {params.size}")
    data["params"] = params
    data["macg_config"] = MacgConfig(**data["macg_config"])
    return data
