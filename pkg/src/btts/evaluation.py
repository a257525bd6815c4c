"""Listening-test and objective-score arithmetic: MOS, per-item MOS,
score aggregation, log-spectral distance and chart data export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import signal as sig
from .signal import AudioBuffer, SignalConfig

RATING_LABELS = {"Excellent": 5, "Good": 4, "Fair": 3, "Poor": 2, "Bad": 1}
MOS_RANGE = (1.0, 5.0)
RAW_PESQ_RANGE = (-0.5, 4.5)

# published comparison bars: system -> (PESQ, MOS)
COMPARISON = {
    "Subachan": (0.45, 2.18),
    "SPSS": (0.53, 3.1),
    "Tacotron": (0.77, 3.79),
    "Google": (1.52, 4.22),
}

DATA_DIR = Path(__file__).parent / "data"
PESQ_FIXTURE = DATA_DIR / "pesq_scores.csv"
RATINGS_FIXTURE = DATA_DIR / "mos_ratings.csv"


class EvaluationError(ValueError):
    pass


def round_half_up(x: float, places: int = 2) -> str:
    """Format with half-up rounding on the decimal representation."""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def _check_rating(r) -> int:
    if isinstance(r, (bool, np.bool_)) or int(r) != r or not 1 <= r <= 5:
        raise EvaluationError(f"rating {r!r} is not an integer in 1..5")
    return int(r)


def mos(ratings: Sequence[int]) -> float:
    """Arithmetic mean of integer ratings on the 1..5 scale."""
    values = [_check_rating(r) for r in ratings]
    if not values:
        raise EvaluationError("mos of an empty rating list")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class RatingTable:
    items: Tuple[str, ...]
    raters: Tuple[str, ...]
    ratings: np.ndarray  # items x raters

    def __post_init__(self):
        r = np.asarray(self.ratings)
        if r.shape != (len(self.items), len(self.raters)):
            raise EvaluationError(f"ratings shape {r.shape} does not match "
                                  f"{len(self.items)} items x {len(self.raters)} raters")
        if r.size and (not np.all(r == np.round(r)) or r.min() < 1 or r.max() > 5):
            raise EvaluationError("ratings must be integers in 1..5")
        object.__setattr__(self, "ratings", r.astype(np.int64))
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "raters", tuple(self.raters))


@dataclass(frozen=True)
class ScoreSet:
    label: str
    values: Tuple[float, ...]
    declared_range: Tuple[float, float]

    def __post_init__(self):
        lo, hi = self.declared_range
        vals = tuple(float(v) for v in self.values)
        bad = [v for v in vals if not (lo <= v <= hi) or not math.isfinite(v)]
        if bad:
            raise EvaluationError(f"{self.label}: {len(bad)} value(s) outside [{lo}, {hi}], e.g. {bad[0]}")
        object.__setattr__(self, "values", vals)


def per_item_mos(table: RatingTable, label: str = "MOS") -> ScoreSet:
    return ScoreSet(label, tuple(mos(row) for row in table.ratings), MOS_RANGE)


@dataclass(frozen=True)
class Summary:
    label: str
    mean: float
    std: float
    min: float
    max: float
    count: int


def aggregate(scores: ScoreSet) -> Summary:
    """Mean, population standard deviation, extremes and count."""
    v = np.asarray(scores.values, dtype=np.float64)
    if v.size == 0:
        raise EvaluationError(f"{scores.label}: cannot aggregate an empty score set")
    mean = math.fsum(v) / v.size
    # clamp away the last-ulp drift of fsum / n outside the data range
    mean = min(max(mean, float(v.min())), float(v.max()))
    std = math.sqrt(math.fsum((v - mean) ** 2) / v.size)
    return Summary(scores.label, mean, std, float(v.min()), float(v.max()), int(v.size))


def log_spectral_distance(reference: AudioBuffer, degraded: AudioBuffer, cfg: SignalConfig) -> float:
    """Frame-mean of the RMS difference (dB) between log-magnitude spectra.

    Frames beyond the shorter signal are ignored. Magnitudes are floored
    at 1e-5 before taking logarithms.
    """
    if reference.sample_rate != degraded.sample_rate:
        raise EvaluationError("sample rates differ")
    if len(reference) == 0 or len(degraded) == 0:
        raise EvaluationError("empty audio")
    cfg = SignalConfig(**{**cfg.__dict__, "sample_rate": reference.sample_rate})
    a = sig.magnitude(sig.stft(reference, cfg)).values
    b = sig.magnitude(sig.stft(degraded, cfg)).values
    n = min(a.shape[0], b.shape[0])
    diff = sig.amp_to_db(a[:n]) - sig.amp_to_db(b[:n])
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=1))))


# files

def read_ratings(path) -> RatingTable:
    """CSV ``waveform_id,rater_id,rating``; every item must be rated by every rater."""
    cells: Dict[Tuple[str, str], int] = {}
    items: List[str] = []
    raters: List[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["waveform_id", "rater_id", "rating"]:
            raise EvaluationError(f"{path}: expected header waveform_id,rater_id,rating")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise EvaluationError(f"{path}:{lineno}: expected 3 fields")
            item, rater, value = row
            try:
                rating = _check_rating(float(value) if "." in value else int(value))
            except (ValueError, EvaluationError) as exc:
                raise EvaluationError(f"{path}:{lineno}: {exc}") from None
            if (item, rater) in cells:
                raise EvaluationError(f"{path}:{lineno}: duplicate rating for {item}/{rater}")
            cells[(item, rater)] = rating
            if item not in items:
                items.append(item)
            if rater not in raters:
                raters.append(rater)
    missing = [(i, r) for i in items for r in raters if (i, r) not in cells]
    if missing:
        raise EvaluationError(f"{path}: incomplete table, {len(missing)} missing cell(s), "
                              f"first {missing[0][0]}/{missing[0][1]}")
    grid = np.array([[cells[(i, r)] for r in raters] for i in items], dtype=np.int64).reshape(len(items), len(raters))
    return RatingTable(tuple(items), tuple(raters), grid)


def read_scores(path, label: Optional[str] = None,
                declared_range: Tuple[float, float] = RAW_PESQ_RANGE) -> ScoreSet:
    """CSV ``waveform_id,score``."""
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["waveform_id", "score"]:
            raise EvaluationError(f"{path}: expected header waveform_id,score")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                values.append(float(row[1]))
            except (IndexError, ValueError):
                raise EvaluationError(f"{path}:{lineno}: malformed score row {row!r}") from None
    return ScoreSet(label or Path(path).stem, tuple(values), declared_range)


def chart_rows(summaries: Iterable[Tuple[str, str, float]], include_comparison: bool = False):
    rows = []
    if include_comparison:
        for system, (pesq, mos_value) in COMPARISON.items():
            rows.append((system, "PESQ", pesq))
            rows.append((system, "MOS", mos_value))
    rows += [(s, m, v) for s, m, v in summaries]
    return rows


def export_chart_data(summaries: Iterable[Tuple[str, str, float]], path,
                      include_comparison: bool = False) -> List[Tuple[str, str, str]]:
    """Write ``system,metric,value`` rows with values rounded half-up to 2 dp."""
    rows = [(s, m, round_half_up(v)) for s, m, v in chart_rows(summaries, include_comparison)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system", "metric", "value"])
        writer.writerows(rows)
    return rows


def read_chart_data(path) -> List[Tuple[str, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["system", "metric", "value"]:
            raise EvaluationError(f"{path}: expected header system,metric,value")
        return [(s, m, float(v)) for s, m, v in reader]
