"""Regional indicators: GDP per capita, Education Index, University Score, TED.

Values live in a ``RegionYearPanel`` keyed by ``(region, year, indicator)``
with a provenance tag per cell. ``impute_panel`` is a deterministic
interpolation fallback for the gaps left after construction.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

INDICATORS = ("gdp_pc", "edu_index", "uni_score", "ted")
PROVENANCE = ("observed", "corrected", "imputed")

# (last position of band, weight); weight = 1 / (half the band's lower bound)
_BANDS = (
    (10, Fraction(1, 5)),
    (20, Fraction(1, 10)),
    (50, Fraction(1, 25)),
    (100, Fraction(1, 50)),
    (250, Fraction(1, 125)),
    (500, Fraction(1, 250)),
)


class CovariateError(ValueError):
    pass


@dataclass(frozen=True)
class RankingEntry:
    university: str
    year: int
    position: int
    region: str

    def __post_init__(self):
        if self.position < 1:
            raise CovariateError(f"ranking position must be >= 1, got {self.position}")


@dataclass(frozen=True)
class ProcurementNotice:
    year: int
    region: str
    value_euro: float
    awarded: bool = True

    def __post_init__(self):
        if not self.value_euro >= 0:
            raise CovariateError(f"negative procurement value {self.value_euro}")


@dataclass
class RegionYearPanel:
    values: dict[tuple[str, int, str], float] = field(default_factory=dict)
    provenance: dict[tuple[str, int, str], str] = field(default_factory=dict)

    def set(self, region: str, year: int, indicator: str, value: float,
            provenance: str = "observed") -> None:
        if indicator not in INDICATORS:
            raise CovariateError(f"unknown indicator {indicator!r}")
        if provenance not in PROVENANCE:
            raise CovariateError(f"unknown provenance {provenance!r}")
        _check_value(indicator, value)
        self.values[(region, year, indicator)] = float(value)
        self.provenance[(region, year, indicator)] = provenance

    def get(self, region: str, year: int, indicator: str) -> float | None:
        return self.values.get((region, year, indicator))

    def is_missing(self, region: str, year: int, indicator: str) -> bool:
        return (region, year, indicator) not in self.values

    def regions(self) -> list[str]:
        return sorted({k[0] for k in self.values})

    def years(self) -> list[int]:
        return sorted({k[1] for k in self.values})

    def copy(self) -> "RegionYearPanel":
        return RegionYearPanel(dict(self.values), dict(self.provenance))

    def missing_cells(self, regions: Iterable[str], years: Iterable[int],
                      indicators: Iterable[str] = INDICATORS) -> list[tuple[str, int, str]]:
        years = list(years)
        return [(g, y, ind) for g in regions for ind in indicators for y in years
                if (g, y, ind) not in self.values]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["region", "year", "indicator", "value", "provenance"])
            for key in sorted(self.values):
                g, y, ind = key
                writer.writerow([g, y, ind, repr(self.values[key]), self.provenance[key]])

    @classmethod
    def from_csv(cls, path: str | Path) -> "RegionYearPanel":
        panel = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                panel.set(row["region"], int(row["year"]), row["indicator"],
                          float(row["value"]), row["provenance"])
        return panel


def _check_value(indicator: str, value: float) -> None:
    if not math.isfinite(value):
        raise CovariateError(f"{indicator} value must be finite, got {value}")
    if indicator == "uni_score" and value < 0:
        raise CovariateError(f"uni_score must be >= 0, got {value}")
    if indicator == "edu_index" and not 0.0 <= value <= 1.0:
        raise CovariateError(f"edu_index must lie in [0, 1], got {value}")
    if indicator == "gdp_pc" and value <= 0:
        raise CovariateError(f"gdp_pc must be positive, got {value}")


def ranking_weight(position: int) -> Fraction:
    """Band weight of a ranking position; 0 outside the top 500."""
    if position < 1:
        raise CovariateError(f"ranking position must be >= 1, got {position}")
    for last, weight in _BANDS:
        if position <= last:
            return weight
    return Fraction(0)


def university_weight_sum(entries: Iterable[RankingEntry], region: str) -> Fraction:
    entries = list(entries)
    if len({e.year for e in entries}) > 1:
        raise CovariateError("ranking entries span more than one year")
    return sum((ranking_weight(e.position) for e in entries if e.region == region),
               Fraction(0))


def university_score(entries: Iterable[RankingEntry], region: str) -> float:
    """Cube root of the summed band weights of the region's ranked universities."""
    total = university_weight_sum(entries, region)
    return float(total) ** (1.0 / 3.0) if total > 0 else 0.0


def ted_indicator(notices: Iterable[ProcurementNotice], region: str, year: int) -> float | None:
    """Log of the awarded procurement value in a region-year; None when zero."""
    total = math.fsum(n.value_euro for n in notices
                      if n.awarded and n.region == region and n.year == year)
    if total <= 0:
        return None
    return math.log(total)


def gdp_correction(regional: Mapping[tuple[str, int], float],
                   national_table: Mapping[tuple[str, int], float],
                   benchmark: Mapping[tuple[str, int], float],
                   country_of: Mapping[str, str]) -> dict[tuple[str, int], float]:
    """Rescale regional GDP so each country-year matches the benchmark.

    Every region of a country in a year is multiplied by
    ``benchmark[country, year] / national_table[country, year]``.
    """
    out = {}
    for (region, year), value in regional.items():
        country = country_of[region]
        nat = national_table.get((country, year))
        bench = benchmark.get((country, year))
        if nat is None or bench is None or not nat > 0 or not bench > 0:
            raise CovariateError(
                f"GDP correction needs positive national and benchmark values for "
                f"({country}, {year})")
        out[(region, year)] = value * (bench / nat)
    return out


def edu_aggregate(values: Sequence[float]) -> float:
    """Education Index of a merged region: plain mean of its parts."""
    if len(values) == 0:
        raise CovariateError("cannot aggregate an empty list of Education Index values")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise CovariateError(f"Education Index {v} outside [0, 1]")
    return math.fsum(values) / len(values)


def _interpolate_series(years: list[int], observed: dict[int, float]) -> dict[int, float]:
    obs_years = sorted(observed)
    xs = np.array(obs_years, dtype=float)
    ys = np.array([observed[y] for y in obs_years])
    # np.interp holds the end values constant outside the observed span
    filled = np.interp(np.array(years, dtype=float), xs, ys)
    return {y: float(v) for y, v in zip(years, filled) if y not in observed}


def impute_panel(panel: RegionYearPanel, regions: Sequence[str], years: Sequence[int],
                 country_of: Mapping[str, str],
                 indicators: Sequence[str] = INDICATORS) -> RegionYearPanel:
    """Fill every missing cell deterministically.

    A region with some observed years is linearly interpolated and carried
    flat past its first/last observation. A region with no observation of an
    indicator takes the country-year mean of that indicator over the regions
    that do have data (after their own interpolation). Observed cells are
    never changed.
    """
    out = panel.copy()
    years = sorted(years)
    pending: dict[str, list[str]] = defaultdict(list)
    for ind in indicators:
        for region in regions:
            observed = {y: panel.values[(region, y, ind)] for y in years
                        if (region, y, ind) in panel.values}
            if not observed:
                pending[ind].append(region)
                continue
            for y, v in _interpolate_series(years, observed).items():
                out.set(region, y, ind, v, "imputed")
    for ind, empty in pending.items():
        for region in empty:
            country = country_of[region]
            donors = [g for g in regions if country_of[g] == country and g not in empty]
            if not donors:
                raise CovariateError(
                    f"{ind} is missing for every region of {country} in every year")
            for y in years:
                mean = math.fsum(out.values[(g, y, ind)] for g in donors) / len(donors)
                out.set(region, y, ind, mean, "imputed")
    return out


def read_rankings(path: str | Path) -> list[RankingEntry]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [RankingEntry(r["university"], int(r["year"]), int(r["position"]), r["region"])
                for r in csv.DictReader(fh)]


def read_procurements(path: str | Path) -> list[ProcurementNotice]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [ProcurementNotice(int(r["year"]), r["region"], float(r["value_euro"]),
                                  r["awarded"].strip().lower() in ("1", "true", "yes"))
                for r in csv.DictReader(fh)]


def read_keyed_values(path: str | Path, key: str) -> dict[tuple[str, int], float]:
    """Read a ``<key>,year,value`` CSV, skipping empty values."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            if r["value"].strip():
                out[(r[key], int(r["year"]))] = float(r["value"])
    return out


def build_panel(regions: Sequence[str], years: Sequence[int], country_of: Mapping[str, str],
                rankings: Sequence[RankingEntry] = (),
                notices: Sequence[ProcurementNotice] = (),
                gdp: Mapping[tuple[str, int], float] | None = None,
                gdp_national: Mapping[tuple[str, int], float] | None = None,
                gdp_benchmark: Mapping[tuple[str, int], float] | None = None,
                edu: Mapping[tuple[str, int], float] | None = None) -> RegionYearPanel:
    """Assemble the observed/corrected panel from raw indicator tables."""
    panel = RegionYearPanel()
    by_year: dict[int, list[RankingEntry]] = defaultdict(list)
    for e in rankings:
        by_year[e.year].append(e)
    ted_sums: dict[tuple[str, int], list[float]] = defaultdict(list)
    for n in notices:
        if n.awarded:
            ted_sums[(n.region, n.year)].append(n.value_euro)
    for region in regions:
        for y in years:
            if y in by_year:
                panel.set(region, y, "uni_score", university_score(by_year[y], region))
            total = math.fsum(ted_sums.get((region, y), ()))
            if total > 0:
                panel.set(region, y, "ted", math.log(total))
    if gdp:
        if gdp_benchmark and gdp_national:
            corrected = gdp_correction(gdp, gdp_national, gdp_benchmark, country_of)
            for (g, y), v in corrected.items():
                if g in country_of:
                    panel.set(g, y, "gdp_pc", v, "corrected")
        else:
            for (g, y), v in gdp.items():
                panel.set(g, y, "gdp_pc", v)
    if edu:
        for (g, y), v in edu.items():
            panel.set(g, y, "edu_index", v)
    return panel
