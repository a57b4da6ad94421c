"""Descriptive tables over datasets and prediction files.

Everything here is pure and deterministic: empirical shot-type distributions
grouped by round, player, or court zone; majority voting over the six
per-stroke samples; landing-zone histograms; and per-round mean probability
trends suitable for comparing two embedding modes.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .court import N_ZONES, CourtSpec, Player, Rally, ShotTypeVocab, coord_to_zone
from .scoring import PredictionFile

GROUPINGS = ("ball_round", "player", "landing_zone", "player_location_zone")


@dataclass(frozen=True)
class DistRow:
    key: str
    type_name: str
    count: int
    fraction: float


@dataclass
class DistributionTable:
    group_key: str
    rows: list[DistRow]

    def fractions_by_group(self) -> dict[str, float]:
        sums: dict[str, float] = defaultdict(float)
        for row in self.rows:
            sums[row.key] += row.fraction
        return dict(sums)

    def write_csv(self, path: str | Path) -> None:
        lines = [f"{self.group_key},type,count,fraction"]
        for row in self.rows:
            lines.append(f"{row.key},{row.type_name},{row.count},{row.fraction!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _group_sort_key(group_key: str):
    if group_key in ("ball_round", "landing_zone", "player_location_zone"):
        return lambda k: (int(k), )
    return lambda k: (k, )


def shot_distribution(
    rallies: Sequence[Rally],
    group_by: str,
    vocab: ShotTypeVocab,
    court: CourtSpec | None = None,
) -> DistributionTable:
    """Empirical shot-type counts and fractions per group value.

    Zone groupings use the canonical frame: landings are zoned in the
    receiver's (high-y) half, hitter locations in the hitter's (low-y) half.
    """
    if group_by not in GROUPINGS:
        raise ValueError(f"group_by must be one of {GROUPINGS}, got {group_by!r}")
    court = court or CourtSpec()
    counts: dict[str, Counter[int]] = defaultdict(Counter)
    for r in rallies:
        for s in r.strokes:
            if group_by == "ball_round":
                key = str(s.round_index)
            elif group_by == "player":
                key = r.name_of(s.player)
            elif group_by == "landing_zone":
                key = str(coord_to_zone(s.landing, court, Player.B))
            else:
                key = str(coord_to_zone(s.player_location, court, Player.A))
            counts[key][s.shot_type] += 1
    rows: list[DistRow] = []
    sort_key = _group_sort_key(group_by)
    for key in sorted(counts, key=sort_key):
        total = sum(counts[key].values())
        for type_id in sorted(counts[key]):
            c = counts[key][type_id]
            rows.append(DistRow(key, vocab.name_of(type_id), c, c / total))
    return DistributionTable(group_by, rows)


@dataclass(frozen=True)
class VoteResult:
    rally_id: str
    ball_round: int
    type_id: int
    type_name: str
    votes: int


def predicted_type_vote(pred: PredictionFile, vocab: ShotTypeVocab) -> tuple[list[VoteResult], DistributionTable]:
    """Majority vote over each stroke's per-sample argmax types.

    Ties break first by the type's probability summed across the samples,
    then by the lower type id. Probability rows are renormalized before use
    (the file format quantizes them to six decimals).
    """
    winners: list[VoteResult] = []
    aggregate: Counter[int] = Counter()
    for rally_id in pred.rows:
        per_sample = pred.rows[rally_id]
        rounds = sorted({g.round_index for suffix in per_sample.values() for g in suffix})
        by_round: dict[int, list[np.ndarray]] = {r: [] for r in rounds}
        for sample_id in sorted(per_sample):
            for g in per_sample[sample_id]:
                by_round[g.round_index].append(g.type_probs / g.type_probs.sum())
        for ball_round in rounds:
            vectors = by_round[ball_round]
            votes = Counter(int(np.argmax(v)) for v in vectors)
            summed = np.sum(vectors, axis=0)
            best = max(votes, key=lambda t: (votes[t], summed[t], -t))
            winners.append(VoteResult(rally_id, ball_round, best, vocab.name_of(best), votes[best]))
            aggregate[best] += 1
    total = sum(aggregate.values())
    rows = [
        DistRow("all", vocab.name_of(t), aggregate[t], aggregate[t] / total)
        for t in sorted(aggregate)
    ]
    return winners, DistributionTable("final_type", rows)


@dataclass
class ZoneHistogram:
    counts: dict[int, int]  # zone 1..10, all zones present
    fractions: dict[int, float]

    def write_csv(self, path: str | Path) -> None:
        lines = ["landing_zone,count,fraction"]
        for zone in range(1, N_ZONES + 1):
            lines.append(f"{zone},{self.counts[zone]},{self.fractions[zone]!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def landing_zone_distribution(pred: PredictionFile, court: CourtSpec | None = None) -> ZoneHistogram:
    """Zone histogram over every sample of every predicted stroke."""
    court = court or CourtSpec()
    counts = {z: 0 for z in range(1, N_ZONES + 1)}
    total = 0
    for per_sample in pred.rows.values():
        for suffix in per_sample.values():
            for g in suffix:
                counts[coord_to_zone(g.landing, court, Player.B)] += 1
                total += 1
    if total == 0:
        raise ValueError("prediction file has no strokes")
    return ZoneHistogram(counts, {z: c / total for z, c in counts.items()})


@dataclass
class RoundTrend:
    """Mean predicted probability per type at each ball round."""

    rounds: list[int]
    type_names: list[str]
    matrix: np.ndarray  # (n_rounds, V), rows sum to 1

    def write_csv(self, path: str | Path) -> None:
        header = "ball_round," + ",".join(n.replace(" ", "_") for n in self.type_names)
        lines = [header]
        for i, r in enumerate(self.rounds):
            lines.append(f"{r}," + ",".join(repr(float(v)) for v in self.matrix[i]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def round_trend(pred: PredictionFile, vocab: ShotTypeVocab) -> RoundTrend:
    """Per-round mean of the predicted type distribution over all samples."""
    sums: dict[int, np.ndarray] = defaultdict(lambda: np.zeros(vocab.size))
    counts: Counter[int] = Counter()
    for per_sample in pred.rows.values():
        for suffix in per_sample.values():
            for g in suffix:
                sums[g.round_index] += g.type_probs / g.type_probs.sum()
                counts[g.round_index] += 1
    rounds = sorted(sums)
    matrix = np.stack([sums[r] / counts[r] for r in rounds])
    return RoundTrend(rounds, [e.name for e in vocab.entries], matrix)


def mean_probability(pred: PredictionFile, vocab: ShotTypeVocab) -> dict[str, float]:
    """Mean predicted probability per type over every stroke and sample."""
    total = np.zeros(vocab.size)
    count = 0
    for per_sample in pred.rows.values():
        for suffix in per_sample.values():
            for g in suffix:
                total += g.type_probs / g.type_probs.sum()
                count += 1
    if count == 0:
        raise ValueError("prediction file has no strokes")
    return {e.name: float(total[e.type_id] / count) for e in vocab.entries}


def write_mean_probability(means: dict[str, float], path: str | Path) -> None:
    lines = ["type,mean_probability"]
    for name, value in means.items():
        lines.append(f"{name},{value!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
