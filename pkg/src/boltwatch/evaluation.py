"""Ground truth from labelled edges, the accuracy metric and the parameter-study harness."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BoltwatchError, InvalidParameter, UndefinedMetric
from .geometry import IntervalViolation
from .klt import TrackerConfig
from .pipeline import PipelineConfig, RotationHistory, run

log = logging.getLogger(__name__)

GT_EPS = 1e-6
EDGE_LIMIT_DEG = 60.0
STUDY_HEADER = ["np", "be", "bs", "ni", "accuracy", "final_phi", "redetects"]
PARAMS = ("np", "be", "bs", "ni")


def wrap_line_delta(delta_deg: float) -> float:
    """Wrap a line-angle difference into (-90, 90] degrees (lines are defined mod 180)."""
    d = math.fmod(delta_deg, 180.0)
    if d > 90.0:
        d -= 180.0
    elif d <= -90.0:
        d += 180.0
    return d


@dataclass
class EdgeLabelSet:
    """``intervals[j]`` lists ``(start_deg, end_deg)`` for every labelled edge of interval ``j``."""

    intervals: list[list[tuple[float, float]]]

    def interval_rotations_deg(self) -> list[float]:
        out = []
        for j, edges in enumerate(self.intervals):
            if len(edges) == 0:
                raise InvalidParameter(f"interval {j} has no labelled edges")
            deltas = [wrap_line_delta(end - start) for start, end in edges]
            bad = [d for d in deltas if abs(d) >= EDGE_LIMIT_DEG]
            if bad:
                warnings.warn(f"interval {j}: edge rotation {bad[0]:.3f} deg reaches 60 deg",
                              IntervalViolation)
            out.append(math.fsum(deltas) / len(deltas))
        return out


def gt_from_edges(labels) -> float:
    """Total ground-truth rotation in radians: the sum over intervals of the mean edge rotation."""
    if not isinstance(labels, EdgeLabelSet):
        labels = EdgeLabelSet(list(labels))
    return math.radians(math.fsum(labels.interval_rotations_deg()))


def accuracy(phi: float, phi_gt: float) -> float:
    if not abs(phi_gt) > GT_EPS:
        raise UndefinedMetric(f"ground-truth rotation {phi_gt!r} is too close to zero")
    return max(0.0, 1.0 - abs(phi - phi_gt) / abs(phi_gt))


def read_gt(path) -> dict[int, float]:
    """Total rotation per bolt from a ``frame,time_s,bolt_id,theta_rad`` file (last minus first)."""
    first: dict[int, tuple[int, float]] = {}
    last: dict[int, tuple[int, float]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            k, b, th = int(rec["frame"]), int(rec["bolt_id"]), float(rec["theta_rad"])
            if b not in first or k < first[b][0]:
                first[b] = (k, th)
            if b not in last or k > last[b][0]:
                last[b] = (k, th)
    return {b: last[b][1] - first[b][1] for b in sorted(first)}


@dataclass(frozen=True)
class BoltScore:
    bolt_id: int
    phi: float
    phi_gt: float
    accuracy: float | None  # None when the ground truth is ~0; report abs(phi) instead

    @property
    def abs_phi(self) -> float:
        return abs(self.phi)


def score_bolts(pred: dict[int, float], gt: dict[int, float]) -> list[BoltScore]:
    scores = []
    for b in sorted(gt):
        phi = pred.get(b, 0.0)
        try:
            acc = accuracy(phi, gt[b])
        except UndefinedMetric:
            acc = None
        scores.append(BoltScore(b, phi, gt[b], acc))
    return scores


@dataclass(frozen=True)
class StudyGrid:
    np_values: tuple[int, ...] = (1, 2, 3, 4)
    be_values: tuple[float, ...] = (2.0, 6.0, 10.0, 20.0)
    bs_values: tuple[int, ...] = (5, 11, 21, 31)
    ni_values: tuple[int, ...] = (10, 20, 30, 40)
    base: PipelineConfig = PipelineConfig()

    def __post_init__(self):
        for name in ("np_values", "be_values", "bs_values", "ni_values"):
            if len(getattr(self, name)) == 0:
                raise InvalidParameter(f"{name} is empty")

    def __len__(self) -> int:
        return len(self.np_values) * len(self.be_values) * len(self.bs_values) * len(self.ni_values)

    def cells(self):
        """Grid points in CSV row order (NP outermost, NI innermost)."""
        return itertools.product(self.np_values, self.be_values, self.bs_values, self.ni_values)

    def config_for(self, np_: int, be: float, bs: int, ni: int) -> PipelineConfig:
        tracker = TrackerConfig(np=int(np_), be=float(be), bs=int(bs), ni=int(ni), eps=self.base.tracker.eps)
        return PipelineConfig(**{**self.base.__dict__, "tracker": tracker})

    @classmethod
    def from_dict(cls, d: dict) -> "StudyGrid":
        d = dict(d)
        unknown = set(d) - {"np", "be", "bs", "ni", "base"}
        if unknown:
            raise InvalidParameter(f"unknown grid fields: {sorted(unknown)}")
        kw = {}
        for key, cast in (("np", int), ("be", float), ("bs", int), ("ni", int)):
            if key in d:
                kw[f"{key}_values"] = tuple(cast(v) for v in d[key])
        if "base" in d:
            kw["base"] = PipelineConfig.from_dict(d["base"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"np": list(self.np_values), "be": list(self.be_values), "bs": list(self.bs_values),
                "ni": list(self.ni_values), "base": self.base.to_dict()}


@dataclass(frozen=True)
class StudyRow:
    np: int
    be: float
    bs: int
    ni: int
    accuracy: float  # nan for failed cells
    final_phi: float
    redetects: int
    error: str | None = None


@dataclass
class StudyResult:
    rows: list[StudyRow] = field(default_factory=list)
    phi_gt: float = float("nan")

    def marginals(self, where: dict | None = None) -> dict[str, dict[str, float]]:
        """Mean accuracy per value of each parameter, over successful cells matching ``where``."""
        rows = [r for r in self.rows if not math.isnan(r.accuracy)]
        for key, value in (where or {}).items():
            rows = [r for r in rows if getattr(r, key) == value]
        out = {}
        for p in PARAMS:
            groups: dict = {}
            for r in rows:
                groups.setdefault(getattr(r, p), []).append(r.accuracy)
            out[p] = {_key(v): float(np.mean(a)) for v, a in sorted(groups.items())}
        return out

    def spread(self, param: str) -> float:
        vals = list(self.marginals()[param].values())
        return max(vals) - min(vals) if vals else float("nan")

    def failed(self) -> list[StudyRow]:
        return [r for r in self.rows if r.error is not None]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STUDY_HEADER)
            for r in self.rows:
                w.writerow([r.np, _key(r.be), r.bs, r.ni, f"{r.accuracy:.12g}", f"{r.final_phi:.12g}",
                            r.redetects])

    def summary(self) -> dict:
        return {
            "cells": len(self.rows),
            "phi_gt": self.phi_gt,
            "marginal_means": self.marginals(),
            "failed": [{"np": r.np, "be": r.be, "bs": r.bs, "ni": r.ni, "error": r.error}
                       for r in self.failed()],
        }

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _key(v) -> str:
    return f"{v:g}" if isinstance(v, float) else str(v)


def read_study_csv(path) -> StudyResult:
    res = StudyResult()
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            res.rows.append(StudyRow(int(rec["np"]), float(rec["be"]), int(rec["bs"]), int(rec["ni"]),
                                     float(rec["accuracy"]), float(rec["final_phi"]),
                                     int(rec["redetects"])))
    return res


def run_param_study(
    grid: StudyGrid,
    frames: Sequence[np.ndarray],
    detector,
    phi_gt: float,
    fps: float = 30.0,
    bolt_id: int = 0,
    progress: Callable[[int, StudyRow], None] | None = None,
) -> StudyResult:
    """Run the pipeline for every grid cell on the same frames, detector and seed.

    A cell whose run raises is recorded with ``nan`` accuracy and the study moves on.
    """
    if not abs(phi_gt) > GT_EPS:
        raise UndefinedMetric("the study scene needs a nonzero ground-truth rotation")
    frames = list(frames)
    result = StudyResult(phi_gt=phi_gt)
    for i, (np_, be, bs, ni) in enumerate(grid.cells()):
        try:
            history = run(frames, detector, grid.config_for(np_, be, bs, ni), fps)
            bolt = history.summary["bolts"].get(str(bolt_id))
            if bolt is None:
                raise BoltwatchError(f"bolt {bolt_id} was never tracked")
            row = StudyRow(np_, be, bs, ni, accuracy(bolt["final_phi"], phi_gt), bolt["final_phi"],
                           bolt["events"]["redetect"])
        except (BoltwatchError, ValueError, ArithmeticError) as exc:
            log.warning("study cell np=%s be=%s bs=%s ni=%s failed: %s", np_, be, bs, ni, exc)
            row = StudyRow(np_, be, bs, ni, float("nan"), float("nan"), 0, str(exc))
        result.rows.append(row)
        if progress is not None:
            progress(i, row)
    return result


def write_gnuplot(history: RotationHistory, path, sign: float = 1.0) -> None:
    """Flat text time history: one block per bolt (``time_s cum_rad n_fps``), blocks split by 2 blank lines."""
    ids = sorted({r.bolt_id for r in history.rows})
    with open(path, "w") as fh:
        for n, b in enumerate(ids):
            if n:
                fh.write("\n\n")
            fh.write(f"# bolt {b}: frame time_s cum_rad n_fps\n")
            for r in history.for_bolt(b):
                fh.write(f"{r.frame} {r.time_s:.12g} {sign * r.cum_rad + 0.0:.12g} {r.n_fps}\n")
