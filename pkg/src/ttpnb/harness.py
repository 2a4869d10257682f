"""End-to-end experiments: perturbed federated model vs. centralized baseline."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import errors
from .dataset import SplitPlan, Table, generate_splits, join_fragments, load_csv, partition_vertical
from .model import DEFAULT_VARIANCE_FLOOR, accuracy, baseline_fit, canonical_json
from .perturb import NoiseMode, RatioOfSampleVariance, noise_mode_from_dict, perturb_table
from .protocol import CoordinatorConfig, new_coordinator, new_party
from .session import execute_session

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str
    label_column: str | int = -1
    num_sites: int = 3
    split_plan: SplitPlan = field(default_factory=SplitPlan)
    noise_mode: NoiseMode = field(default_factory=lambda: RatioOfSampleVariance(0.25))
    noise_family: str = "gaussian"
    # repeat r perturbs with noise_seed + r
    noise_seed: int = 42
    transport: str = "inprocess"
    scheme: str = "rsa"
    session_mode: str = "stats"
    perturb_test: bool = False
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    record_timing: bool = True
    workers: int = 1
    output_path: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_plan"] = self.split_plan.to_dict()
        d["noise_mode"] = self.noise_mode.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        if "split_plan" in d:
            d["split_plan"] = SplitPlan.from_dict(d["split_plan"])
        if "noise_mode" in d:
            d["noise_mode"] = noise_mode_from_dict(d["noise_mode"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RepeatResult:
    index: int
    acc_perturbed: float | None
    acc_baseline: float
    model_json: str = field(repr=False, default="")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    repeats: list[RepeatResult]
    timing_ms: dict | None = None

    @staticmethod
    def _summary(values: Sequence[float | None]) -> dict | None:
        if any(v is None for v in values):
            return None
        arr = np.asarray(values, dtype=np.float64)
        std = float(np.std(arr, ddof=1)) if len(arr) > 1 else 0.0
        return {"mean": float(np.mean(arr)), "std": std}

    @property
    def mean_perturbed(self) -> float:
        return self._summary([r.acc_perturbed for r in self.repeats])["mean"]

    @property
    def mean_baseline(self) -> float:
        return self._summary([r.acc_baseline for r in self.repeats])["mean"]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "repeats": [
                {"index": r.index, "acc_perturbed": r.acc_perturbed, "acc_baseline": r.acc_baseline}
                for r in self.repeats
            ],
            "summary": {
                "acc_perturbed": self._summary([r.acc_perturbed for r in self.repeats]),
                "acc_baseline": self._summary([r.acc_baseline for r in self.repeats]),
            },
            "timing_ms": self.timing_ms,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def table(self) -> str:
        lines = [f"{'repeat':>6}  {'perturbed':>9}  {'baseline':>9}"]
        def cell(v):
            return f"{'-':>9}" if v is None else f"{v:>9.4f}"

        for r in self.repeats:
            lines.append(f"{r.index:>6}  {cell(r.acc_perturbed)}  {cell(r.acc_baseline)}")
        s = self.to_dict()["summary"]
        for stat in ("mean", "std"):
            pert = s["acc_perturbed"][stat] if s["acc_perturbed"] else None
            lines.append(f"{stat:>6}  {cell(pert)}  {cell(s['acc_baseline'][stat])}")
        return "\n".join(lines)


def _tag(exc: errors.TtpnbError, index: int) -> errors.TtpnbError:
    exc.args = (f"repeat {index}: {exc.args[0] if exc.args else ''}",) + exc.args[1:]
    return exc


def run_repeat(cfg: ExperimentConfig, table: Table, index: int, baseline_only: bool = False) -> RepeatResult:
    """One split: federated session, plaintext baseline, both scored on the test rows."""
    train_ids, test_ids = generate_splits(table.n_rows, cfg.split_plan)[index]
    try:
        baseline = baseline_fit(table, train_ids, cfg.variance_floor)
        test = table.select(test_ids)
        acc_base = accuracy(baseline, test)
        if baseline_only:
            return RepeatResult(index, None, acc_base, baseline.to_json())

        fragments = partition_vertical(table, cfg.num_sites)
        noise_seed = cfg.noise_seed + index
        coordinator = new_coordinator(
            CoordinatorConfig(
                session_id=f"{table.name}-r{index}",
                min_sites=len(fragments),
                split_plan=cfg.split_plan,
                split_index=index,
                noise_mode=cfg.noise_mode,
                noise_family=cfg.noise_family,
                noise_seed=noise_seed,
                mode=cfg.session_mode,
                variance_floor=cfg.variance_floor,
            ),
            cfg.scheme,
        )
        parties = [new_party(f.site_id, f, cfg.scheme) for f in fragments]
        model = execute_session(coordinator, parties, cfg.transport).model

        # Test rows are assembled by joining the fragments on row id.
        full = join_fragments(fragments)
        test_rows = full.select(test_ids)
        if cfg.perturb_test:
            cols = perturb_table(full, cfg.noise_mode, cfg.noise_family, noise_seed)
            pos = full.positions(test_ids)
            noisy = np.column_stack([c.values for c in cols])[pos]
            test_rows = Table(full.name, full.attribute_names, full.row_ids[pos], noisy, test_rows.labels)
        acc_pert = accuracy(model, test_rows)
    except errors.TtpnbError as exc:
        raise _tag(exc, index)
    return RepeatResult(index, acc_pert, acc_base, model.to_json())


def run_experiment(cfg: ExperimentConfig, table: Table | None = None, baseline_only: bool = False) -> ExperimentReport:
    """Run every split of ``cfg.split_plan`` and collect both accuracy columns."""
    t0 = time.perf_counter()
    if table is None:
        table = load_csv(cfg.dataset_path, cfg.label_column)
    t_load = time.perf_counter()
    n = cfg.split_plan.n_splits
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            repeats = list(pool.map(lambda i: run_repeat(cfg, table, i, baseline_only), range(n)))
    else:
        repeats = [run_repeat(cfg, table, i, baseline_only) for i in range(n)]
    repeats.sort(key=lambda r: r.index)
    t_end = time.perf_counter()
    timing = None
    if cfg.record_timing:
        timing = {"load": round((t_load - t0) * 1e3, 3), "total": round((t_end - t0) * 1e3, 3)}
    return ExperimentReport(cfg, repeats, timing)


def sweep_noise(cfg: ExperimentConfig, ratios: Sequence[float], table: Table | None = None) -> list[ExperimentReport]:
    """One report per noise ratio; splits and noise seeds are shared across ratios."""
    if any(r < 0 or not math.isfinite(r) for r in ratios):
        raise errors.InvalidVariance(f"noise ratios must be finite and >= 0: {list(ratios)}")
    if not ratios:
        return []
    if table is None:
        table = load_csv(cfg.dataset_path, cfg.label_column)
    return [run_experiment(replace(cfg, noise_mode=RatioOfSampleVariance(r)), table) for r in ratios]


def sweep_to_dict(reports: Sequence[ExperimentReport]) -> dict:
    return {
        "sweep": [
            {"noise_mode": r.config.noise_mode.to_dict(), "report": r.to_dict()} for r in reports
        ]
    }
