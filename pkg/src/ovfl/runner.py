"""Execute configured runs and write their CSV logs."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .analysis import PooledObjective, hindsight_optimum, probe_assumptions, regret_curve
from .config import RunConfig, expand_cells
from .environment import RoundDataset, generate_stream, load_trace_dir
from .nn_core import SplitModel, init_split_model
from .protocol import GradientTrace, RoundMetrics, TrainerState, run_rounds

log = logging.getLogger(__name__)

RUN_HEADER = ["round", "train_loss", "test_loss", "bits_up", "bits_down", "cum_bits", "wall_ms"]
REGRET_HEADER = ["run", "round", "learner_loss", "comparator_loss", "cumulative_regret", "average_regret"]
PROBE_HEADER = ["run", "L_hat", "rho_hat", "beta_hat", "D", "epsilon_hat", "comparator_pooled_loss",
                "comparator_iterations"]
OUTPUT_ENV = "OVFL_OUTPUT_DIR"


@dataclass
class RunLog:
    algorithm: str
    seed: int
    tag: str
    metrics: List[RoundMetrics] = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"{self.algorithm}__{self.tag}__seed{self.seed}"

    @property
    def train_loss(self) -> np.ndarray:
        return np.array([m.train_loss_pre for m in self.metrics])

    @property
    def test_loss(self) -> np.ndarray:
        return np.array([m.test_loss for m in self.metrics])

    @property
    def bits_up(self) -> np.ndarray:
        return np.array([m.bits_uplink for m in self.metrics], dtype=np.int64)

    @property
    def bits_down(self) -> np.ndarray:
        return np.array([m.bits_downlink for m in self.metrics], dtype=np.int64)

    def to_csv(self, record_wall_time: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_HEADER)
        cum = 0
        for m in self.metrics:
            cum += m.bits_uplink + m.bits_downlink
            wall = repr(m.wall_time * 1000.0) if record_wall_time else "0"
            w.writerow([m.round, repr(m.train_loss_pre), repr(m.test_loss), m.bits_uplink, m.bits_downlink, cum, wall])
        return buf.getvalue()


def read_run_csv(path) -> RunLog:
    """Parse a run CSV back into a RunLog (algorithm/seed/tag from the file name)."""
    path = Path(path)
    parts = path.stem.split("__")
    if len(parts) != 3 or not parts[2].startswith("seed"):
        raise ValueError(f"{path}: expected '<algorithm>__<tag>__seed<n>.csv'")
    algorithm, tag, seed = parts
    metrics = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUN_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            metrics.append(RoundMetrics(int(row["round"]), float(row["train_loss"]), float(row["test_loss"]),
                                        int(row["bits_up"]), int(row["bits_down"]), float(row["wall_ms"]) / 1000.0))
    return RunLog(algorithm, int(seed.removeprefix("seed")), tag, metrics)


@dataclass
class RunResult:
    log: RunLog
    model: SplitModel
    rounds: List[RoundDataset]
    trace: Optional[GradientTrace] = None
    best_visited: Optional[SplitModel] = None
    best_visited_loss: float = np.inf
    visited_pooled: Optional[List[float]] = None


def build_model(cfg: RunConfig, seed: int) -> SplitModel:
    return init_split_model(cfg.model.extractor_sizes, cfg.model.head_hidden, cfg.world.num_sus,
                            cfg.world.num_pus, seed)


def data_stream(cfg: RunConfig, seed: int) -> List[RoundDataset]:
    traces = load_trace_dir(cfg.trace_dir, cfg.world.num_sus) if cfg.trace_dir else None
    return generate_stream(cfg.world_with_mobility(), seed, cfg.T, traces)


def run_single(cfg: RunConfig, seed: int, tag: str = "base", trace: bool = False,
               track_visited: bool = False, rounds: Optional[List[RoundDataset]] = None) -> RunResult:
    """One (config cell, seed) run.

    ``track_visited`` evaluates the pooled training loss of every round-start
    model and keeps the best one (used to warm-start and validate the comparator).
    """
    rounds = data_stream(cfg, seed) if rounds is None else rounds
    state = TrainerState(build_model(cfg, seed), cfg.protocol())
    gtrace = GradientTrace(seed=seed) if trace else None
    result = RunResult(RunLog(cfg.algorithm, seed, tag), state.model, rounds, gtrace)
    hook = None
    if track_visited:
        pooled = PooledObjective(rounds)
        result.visited_pooled = []

        def hook(st, _data):
            loss = pooled.loss(st.model)
            result.visited_pooled.append(loss)
            if loss < result.best_visited_loss:
                result.best_visited_loss = loss
                result.best_visited = st.model

    state, metrics = run_rounds(state, rounds, cfg.algorithm, cfg.lc_freeze, trace=gtrace, on_round_start=hook)
    result.log.metrics = metrics
    result.model = state.model
    return result


def _cell_job(args):
    tag, cfg, seed, out_dir = args
    analysis = cfg.analysis
    res = run_single(cfg, seed, tag, trace=analysis.enabled and analysis.trace, track_visited=analysis.enabled)
    path = out_dir / f"{res.log.name}.csv"
    path.write_text(res.log.to_csv(cfg.record_wall_time), encoding="utf-8")
    extra = None
    if analysis.enabled:
        warm = [m for m in (res.best_visited, res.model) if m is not None]
        fit = hindsight_optimum(res.rounds, analysis.comparator_budget, seed, res.model, warm_starts=warm)
        record = regret_curve(res.log.train_loss, fit.model, res.rounds)
        probe = probe_assumptions(res.trace) if res.trace is not None else None
        extra = (res.log.name, record, probe, fit.pooled_loss, fit.iterations)
    return str(path), extra


def resolve_output_dir(cfg: RunConfig, override: Optional[str] = None) -> Path:
    return Path(override or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "runs")


def run_experiment(cfg: RunConfig, output_dir: Optional[str] = None, seed_override: Optional[int] = None) -> List[Path]:
    """Run every (cell, seed) of ``cfg``; returns the written file paths."""
    out_dir = resolve_output_dir(cfg, output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [seed_override] if seed_override is not None else cfg.seeds
    jobs = [(tag, cell, seed, out_dir) for tag, cell in expand_cells(cfg) for seed in seeds]
    log.info("running %d jobs into %s", len(jobs), out_dir)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    paths = [Path(p) for p, _ in results]
    extras = [e for _, e in results if e is not None]
    if extras:
        paths.append(_write_regret(out_dir / "regret.csv", extras))
        paths.append(_write_probes(out_dir / "probes.csv", extras))
    return paths


def _write_regret(path: Path, extras) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REGRET_HEADER)
    for name, rec, _, _, _ in extras:
        for t in range(len(rec.learner_loss)):
            w.writerow([name, t + 1, repr(float(rec.learner_loss[t])), repr(float(rec.comparator_loss[t])),
                        repr(float(rec.cumulative_regret[t])), repr(float(rec.average_regret[t]))])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _write_probes(path: Path, extras) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROBE_HEADER)
    for name, _, probe, comp_loss, iters in extras:
        if probe is None:
            w.writerow([name, "", "", "", "", "", repr(float(comp_loss)), iters])
        else:
            w.writerow([name, repr(probe.L_hat), repr(probe.rho_hat), repr(probe.beta_hat), probe.D,
                        repr(probe.epsilon_hat), repr(float(comp_loss)), iters])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path
