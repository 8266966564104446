"""Whole-recording prediction, run ensembling, and MAP evaluation.

A recording is scored by slicing it into half-overlapping segments (the
final partial window looped to full length), averaging the per-segment
softmax outputs, and renormalizing. Multiple runs ensemble by a further
per-class mean. Evaluation is mean average precision over the ranked
class list, with or without background species as additional relevants.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsp import FeatureConfig, segment_features
from .errors import DataError
from .net import NetworkConfig, NetworkParams, forward

MAIN_ONLY = "main_only"
WITH_BACKGROUND = "with_background"
PREDICTION_HEADER = ["recording_id", "class_id", "probability"]
JUDGMENT_HEADER = ["recording_id", "main_species", "background_species"]


@dataclass
class Prediction:
    recording_id: str
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probabilities must be a non-empty vector")
        if p.min() < 0 or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError(
                f"probabilities for {self.recording_id!r} are not a distribution")
        self.probabilities = p


@dataclass(frozen=True)
class RelevanceJudgment:
    recording_id: str
    main_species: int
    background_species: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.main_species in self.background_species:
            raise ValueError(
                f"{self.recording_id!r}: main species repeated in background")

    def relevant(self, mode: str) -> frozenset[int]:
        if mode == MAIN_ONLY:
            return frozenset({self.main_species})
        if mode == WITH_BACKGROUND:
            return self.background_species | {self.main_species}
        raise ValueError(f"unknown evaluation mode {mode!r}")


def segment_recording(samples: np.ndarray, segment_samples: int
                      ) -> list[np.ndarray]:
    """Half-overlapping windows covering the whole recording.

    Full windows start at multiples of segment_samples/2; whatever tail
    they leave uncovered becomes one final window looped out to full
    length. A recording shorter than one segment yields exactly one
    looped window.
    """
    samples = np.asarray(samples)
    n = samples.size
    if n < 1:
        raise ValueError("cannot segment an empty recording")
    step = segment_samples // 2
    segments = []
    start = 0
    while start + segment_samples <= n:
        segments.append(samples[start:start + segment_samples])
        start += step
    if not segments:
        return [np.resize(samples, segment_samples)]
    if start + segment_samples - step < n:  # last full window missed the tail
        segments.append(np.resize(samples[start:], segment_samples))
    return segments


def predict_recording(samples: np.ndarray, meta_vector: np.ndarray,
                      params: NetworkParams, net_cfg: NetworkConfig,
                      feature_cfg: FeatureConfig,
                      recording_id: str = "") -> Prediction:
    """Mean softmax output over all segments, renormalized."""
    segments = segment_recording(samples, feature_cfg.segment_samples)
    feats = np.stack([segment_features(s, feature_cfg) for s in segments])
    meta = np.tile(np.asarray(meta_vector, dtype=np.float64),
                   (len(segments), 1))
    probs = forward(feats, meta, params, net_cfg, mode="infer")
    # accumulate at 64-bit so segment order cannot perturb the average
    mean = probs.mean(axis=0, dtype=np.float64)
    return Prediction(recording_id, mean / mean.sum())


def ensemble_average(runs: Sequence[Sequence[Prediction]]) -> list[Prediction]:
    """Per-recording, per-class mean across prediction runs."""
    if not runs:
        raise ValueError("nothing to ensemble")
    base = {p.recording_id: p.probabilities for p in runs[0]}
    sums = {rid: probs.copy() for rid, probs in base.items()}
    for run in runs[1:]:
        ids = {p.recording_id for p in run}
        if ids != set(base):
            raise DataError("ensemble runs cover different recordings")
        for p in run:
            if p.probabilities.shape != base[p.recording_id].shape:
                raise DataError("ensemble runs disagree on class count")
            sums[p.recording_id] += p.probabilities
    out = []
    for p in runs[0]:  # keep first run's recording order
        mean = sums[p.recording_id] / len(runs)
        out.append(Prediction(p.recording_id, mean / mean.sum()))
    return out


def rank_classes(probabilities: np.ndarray) -> np.ndarray:
    """Class ids by descending probability, ties broken by ascending id."""
    p = np.asarray(probabilities)
    ids = np.arange(p.size)
    return np.lexsort((ids, -p))


def average_precision(ranking: Sequence[int], relevant: Iterable[int]) -> float:
    """Mean of precision@k over the ranks k that hold a relevant class."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = 0
    total = 0.0
    for k, class_id in enumerate(ranking, start=1):
        if class_id in relevant:
            hits += 1
            total += hits / k
    if hits != len(relevant):
        raise ValueError("ranking does not contain every relevant class")
    return total / len(relevant)


def recording_average_precisions(predictions: Sequence[Prediction],
                                 judgments: Sequence[RelevanceJudgment],
                                 mode: str = MAIN_ONLY
                                 ) -> list[tuple[str, float]]:
    """Per-recording AP in judgment order; every judged recording must
    have a prediction."""
    by_id = {p.recording_id: p for p in predictions}
    if not judgments:
        raise ValueError("no judgments to evaluate")
    out = []
    for j in judgments:
        if j.recording_id not in by_id:
            raise DataError(f"no prediction for judged recording {j.recording_id!r}")
        probs = by_id[j.recording_id].probabilities
        relevant = j.relevant(mode)
        if any(not 0 <= s < probs.size for s in relevant):
            raise DataError(
                f"{j.recording_id!r}: judged species outside the class range")
        out.append((j.recording_id,
                    average_precision(rank_classes(probs), relevant)))
    return out


def map_score(predictions: Sequence[Prediction],
              judgments: Sequence[RelevanceJudgment],
              mode: str = MAIN_ONLY) -> float:
    """Mean average precision of the ranked class lists over all judged
    recordings."""
    aps = recording_average_precisions(predictions, judgments, mode)
    return float(np.mean([ap for _, ap in aps]))


# ---------------------------------------------------------------------------
# CSV formats: predictions as one row per (recording, class); judgments as
# one row per recording with background species semicolon-separated.

def write_predictions(path: str | Path, predictions: Sequence[Prediction]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_HEADER)
        for p in predictions:
            for class_id, prob in enumerate(p.probabilities):
                writer.writerow([p.recording_id, class_id, repr(float(prob))])


def _open_csv(path: str | Path):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def read_predictions(path: str | Path) -> list[Prediction]:
    rows: dict[str, dict[int, float]] = {}
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTION_HEADER:
            raise DataError(f"{path}: expected header {','.join(PREDICTION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rid, class_id, prob = row[0], int(row[1]), float(row[2])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction row") from exc
            rows.setdefault(rid, {})
            if class_id in rows[rid]:
                raise DataError(f"{path}:{lineno}: duplicate class for {rid!r}")
            rows[rid][class_id] = prob
    if not rows:
        raise DataError(f"{path}: no prediction rows")
    num_classes = max(max(by_class) for by_class in rows.values()) + 1
    out = []
    for rid, by_class in rows.items():
        if sorted(by_class) != list(range(num_classes)):
            raise DataError(f"{path}: incomplete class list for {rid!r}")
        out.append(Prediction(rid, np.array(
            [by_class[c] for c in range(num_classes)])))
    return out


def write_judgments(path: str | Path,
                    judgments: Sequence[RelevanceJudgment]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(JUDGMENT_HEADER)
        for j in judgments:
            background = ";".join(str(s) for s in sorted(j.background_species))
            writer.writerow([j.recording_id, j.main_species, background])


def read_judgments(path: str | Path) -> list[RelevanceJudgment]:
    out = []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != JUDGMENT_HEADER:
            raise DataError(f"{path}: expected header {','.join(JUDGMENT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                background = frozenset(
                    int(s) for s in row[2].split(";") if s) if len(row) > 2 else frozenset()
                out.append(RelevanceJudgment(row[0], int(row[1]), background))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad judgment row ({exc})") from exc
    if not out:
        raise DataError(f"{path}: no judgment rows")
    return out
