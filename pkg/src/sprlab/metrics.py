"""Human-normalized scoring and stratified-bootstrap aggregate statistics.

Scores are normalized per game as (raw - random) / (human - random). The
aggregate statistics are mean, median, interquartile mean (fractional
trimming: the lowest and highest quarter of the sorted mass are discarded,
with fractional weight at the boundaries), and the capped optimality gap
mean(max(0, 1 - x)). Confidence intervals come from a stratified percentile
bootstrap: every replicate resamples runs with replacement independently
within each game, then re-aggregates per-game means.

When only per-game means exist (one run per game, as in the shipped reference
fixture) the IQM is computed over those means; with run-level data it is
computed the same way over per-game means for comparability. The two differ
from an IQM pooled over all runs — pooled trimming is not recoverable from
per-game means.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .tensor import ContractError, DomainError

STATISTICS = ("mean", "median", "iqm", "optimality_gap")


class DegenerateBaselineError(ValueError):
    """Human and random baselines coincide; normalization undefined."""


class MalformedTableError(ValueError):
    """A score/baseline CSV failed to parse; carries the offending line."""

    def __init__(self, path, line_number: int, message: str) -> None:
        super().__init__(f"{path}:{line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class ScoreTable:
    """(game, run, raw score) rows with unique (game, run) pairs."""

    rows: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        seen = set()
        for game, run, _ in self.rows:
            if (game, run) in seen:
                raise ContractError(f"duplicate (game, run) pair ({game}, {run})")
            seen.add((game, run))

    @classmethod
    def from_csv(cls, path) -> "ScoreTable":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for i, row in enumerate(reader, start=1):
                if i == 1:
                    if [c.strip() for c in row] != ["game", "run", "score"]:
                        raise MalformedTableError(path, i, "expected header game,run,score")
                    continue
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 3:
                    raise MalformedTableError(path, i, f"expected 3 columns, got {len(row)}")
                try:
                    rows.append((row[0].strip(), row[1].strip(), float(row[2])))
                except ValueError:
                    raise MalformedTableError(path, i, f"bad score {row[2]!r}") from None
        if not rows:
            raise MalformedTableError(path, 1, "no score rows")
        return cls(tuple(rows))

    def games(self) -> list[str]:
        ordered: list[str] = []
        for game, _, _ in self.rows:
            if game not in ordered:
                ordered.append(game)
        return ordered

    def runs_for(self, game: str) -> np.ndarray:
        return np.array([score for g, _, score in self.rows if g == game])


@dataclass(frozen=True)
class BaselineTable:
    """game -> (random, human) reference scores."""

    baselines: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        for game, random_score, human_score in self.baselines:
            if human_score == random_score:
                raise DegenerateBaselineError(f"{game}: human equals random ({human_score})")

    @classmethod
    def from_csv(cls, path) -> "BaselineTable":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for i, row in enumerate(reader, start=1):
                if i == 1:
                    if [c.strip() for c in row] != ["game", "random", "human"]:
                        raise MalformedTableError(path, i, "expected header game,random,human")
                    continue
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 3:
                    raise MalformedTableError(path, i, f"expected 3 columns, got {len(row)}")
                try:
                    rows.append((row[0].strip(), float(row[1]), float(row[2])))
                except ValueError:
                    raise MalformedTableError(path, i, "bad baseline value") from None
        if not rows:
            raise MalformedTableError(path, 1, "no baseline rows")
        return cls(tuple(rows))

    def lookup(self, game: str) -> tuple[float, float]:
        for g, random_score, human_score in self.baselines:
            if g == game:
                return random_score, human_score
        raise ContractError(f"no baseline for game {game!r}")


def normalize(raw: float, random_score: float, human_score: float) -> float:
    """(raw - random) / (human - random); may exceed 1 or go negative."""
    if human_score == random_score:
        raise DegenerateBaselineError("human equals random; normalization undefined")
    return (raw - random_score) / (human_score - random_score)


def _iqm(values: np.ndarray) -> float:
    """Interquartile mean with fractional trimming at the quartile boundaries."""
    x = np.sort(values)
    n = len(x)
    lo, hi = 0.25 * n, 0.75 * n
    ranks = np.arange(n, dtype=np.float64)
    weights = np.clip(np.minimum(ranks + 1.0, hi) - np.maximum(ranks, lo), 0.0, 1.0)
    return float(np.sum(weights * x) / np.sum(weights))


def aggregate(values, statistic: str) -> float:
    """One aggregate statistic of a nonempty score multiset."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("aggregate of an empty score multiset")
    if statistic == "mean":
        return float(values.mean())
    if statistic == "median":
        return float(np.median(values))
    if statistic == "iqm":
        return _iqm(values)
    if statistic == "optimality_gap":
        return float(np.mean(np.maximum(0.0, 1.0 - values)))
    raise DomainError(f"statistic must be one of {STATISTICS}, got {statistic!r}")


def superhuman_count(per_game_means) -> int:
    """Games whose normalized score strictly exceeds 1."""
    return int(np.sum(np.asarray(per_game_means, dtype=np.float64) > 1.0))


def per_game_normalized_means(table: ScoreTable, baselines: BaselineTable) -> np.ndarray:
    means = []
    for game in table.games():
        random_score, human_score = baselines.lookup(game)
        runs = table.runs_for(game)
        means.append(np.mean([normalize(r, random_score, human_score) for r in runs]))
    return np.array(means)


def stratified_bootstrap_ci(
    table: ScoreTable,
    baselines: BaselineTable,
    statistic: str,
    replicates: int = 2000,
    confidence: float = 0.95,
    seed: int = 0,
) -> tuple[float, float, float]:
    """(point, lower, upper) percentile interval, deterministic per seed.

    Each replicate resamples runs with replacement independently within every
    game; its randomness derives from (seed, replicate index), so results are
    order-independent and reproducible.
    """
    if replicates < 100:
        raise ContractError(f"need at least 100 replicates, got {replicates}")
    if not 0.0 < confidence < 1.0:
        raise DomainError("confidence must lie in (0, 1)")
    games = table.games()
    normalized_runs = []
    for game in games:
        random_score, human_score = baselines.lookup(game)
        runs = table.runs_for(game)
        if runs.size == 0:
            raise ContractError(f"empty stratum for game {game!r}")
        normalized_runs.append((runs - random_score) / (human_score - random_score))

    point = aggregate(np.array([r.mean() for r in normalized_runs]), statistic)

    stats = np.empty(replicates)
    for rep in range(replicates):
        rng = np.random.default_rng(np.random.SeedSequence((seed, rep)))
        means = np.empty(len(games))
        for gi, runs in enumerate(normalized_runs):
            draw = rng.integers(0, runs.size, size=runs.size)
            means[gi] = runs[draw].mean()
        stats[rep] = aggregate(means, statistic)

    alpha = (1.0 - confidence) / 2.0
    lower = float(np.quantile(stats, alpha))
    upper = float(np.quantile(stats, 1.0 - alpha))
    return point, lower, upper


@dataclass
class AggregateReport:
    """Point estimates with CIs for every statistic, plus the superhuman count."""

    statistics: dict[str, dict[str, float]]
    superhuman: int
    games: int
    runs: int

    def __post_init__(self):
        for name, entry in self.statistics.items():
            if not entry["lower"] <= entry["point"] <= entry["upper"]:
                raise ContractError(f"{name}: CI does not bracket the point estimate")

    def to_json(self) -> str:
        payload = {
            "statistics": self.statistics,
            "superhuman": self.superhuman,
            "games": self.games,
            "runs": self.runs,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def build_report(
    table: ScoreTable,
    baselines: BaselineTable,
    statistics=STATISTICS,
    replicates: int = 2000,
    confidence: float = 0.95,
    seed: int = 0,
) -> AggregateReport:
    stats: dict[str, dict[str, float]] = {}
    for name in statistics:
        point, lower, upper = stratified_bootstrap_ci(
            table, baselines, name, replicates=replicates, confidence=confidence, seed=seed
        )
        stats[name] = {"point": point, "lower": lower, "upper": upper}
    means = per_game_normalized_means(table, baselines)
    return AggregateReport(
        statistics=stats,
        superhuman=superhuman_count(means),
        games=len(table.games()),
        runs=len(table.rows),
    )


FIXTURE_AGENTS = ("naked", "non", "prio", "vicreg_low", "vicreg_high", "barlow", "spr")


def fixture_path(name: str) -> Path:
    """Path of a shipped fixture CSV, e.g. 'atari100k_baselines' or 'atari100k_scores_spr'."""
    ref = resources.files("sprlab.fixtures").joinpath(f"{name}.csv")
    return Path(str(ref))
