"""Affiliation parsing, migration extraction and flow tables.

Affiliations are person-level records with a place and a year interval.
Consecutive affiliations of one person in different regions produce a
migration event, and events are tallied into ``FlowTable`` objects keyed by
``(year, sender, receiver)``.
"""
from __future__ import annotations

import csv
import difflib
import logging
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

KINDS = ("employment", "education")
CUMULATIVE = "*"
NORMALIZATION_SCHEMES = (
    "sender_pop", "receiver_pop", "both_pop",
    "sender_res", "receiver_res", "both_res",
)


class IngestError(ValueError):
    """Raised for unreadable inputs or inconsistent region metadata."""


def normalize_name(name: str) -> str:
    """Case-fold, strip diacritics and collapse whitespace."""
    decomposed = unicodedata.normalize("NFKD", name)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return " ".join(stripped.casefold().split())


@dataclass
class RegionMap:
    """Region metadata: aliases, countries, centroids and denominators."""

    countries: dict[str, str]
    centroids: dict[str, tuple[float, float]] = field(default_factory=dict)
    aliases: dict[str, str] = field(default_factory=dict)
    population: dict[tuple[str, int], float] = field(default_factory=dict)
    researchers: dict[tuple[str, int], float] = field(default_factory=dict)

    def __post_init__(self):
        for region, (lat, lon) in self.centroids.items():
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise IngestError(f"centroid of {region} out of range: {(lat, lon)}")
        self._alias_norm = {normalize_name(k): v for k, v in self.aliases.items()}
        self._code_norm = {normalize_name(r): r for r in self.countries}

    @property
    def regions(self) -> list[str]:
        return sorted(self.countries)

    def country_of(self, region: str) -> str:
        try:
            return self.countries[region]
        except KeyError:
            raise IngestError(f"region {region!r} has no country mapping") from None

    def resolve(self, place: str, fuzzy_threshold: float | None = None) -> str | None:
        """Map a raw place name to a region code, or None.

        Order: exact region code, normalized region code, normalized alias.
        Fuzzy matching is only attempted when ``fuzzy_threshold`` is given.
        """
        if place in self.countries:
            return place
        key = normalize_name(place)
        if not key:
            return None
        if key in self._code_norm:
            return self._code_norm[key]
        if key in self._alias_norm:
            return self._alias_norm[key]
        if fuzzy_threshold is not None:
            match = difflib.get_close_matches(
                key, list(self._alias_norm), n=1, cutoff=fuzzy_threshold
            )
            if match:
                return self._alias_norm[match[0]]
        return None

    @classmethod
    def from_files(cls, metadata: str | Path, aliases: str | Path | None = None,
                   denominators: str | Path | None = None) -> "RegionMap":
        countries, centroids = {}, {}
        for row in _read_rows(metadata, ("region", "country", "lat", "lon")):
            countries[row["region"]] = row["country"]
            if row["lat"] and row["lon"]:
                centroids[row["region"]] = (float(row["lat"]), float(row["lon"]))
        alias_table = {}
        if aliases is not None:
            for row in _read_rows(aliases, ("raw_name", "region")):
                alias_table[row["raw_name"]] = row["region"]
        population, researchers = {}, {}
        if denominators is not None:
            for row in _read_rows(denominators, ("region", "year", "population", "researchers")):
                key = (row["region"], int(row["year"]))
                if row["population"]:
                    population[key] = float(row["population"])
                if row["researchers"]:
                    researchers[key] = float(row["researchers"])
        return cls(countries, centroids, alias_table, population, researchers)


@dataclass(frozen=True)
class AffiliationRecord:
    person_id: str
    place_raw: str
    region: str | None
    start_year: int | None
    end_year: int | None
    kind: str = "employment"

    def __post_init__(self):
        if self.start_year is None and self.end_year is None:
            raise ValueError("affiliation needs a start or an end year")
        if (self.start_year is not None and self.end_year is not None
                and self.start_year > self.end_year):
            raise ValueError(f"start year {self.start_year} after end year {self.end_year}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown affiliation kind {self.kind!r}")


@dataclass(frozen=True)
class MigrationEvent:
    person_id: str
    from_region: str
    to_region: str
    year: int

    def __post_init__(self):
        if self.from_region == self.to_region:
            raise ValueError("migration event needs two distinct regions")


@dataclass
class ParseResult:
    records: list[AffiliationRecord]
    errors: list[tuple[int, str]]
    n_rows: int
    n_undated: int = 0

    @property
    def resolution_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.region is not None for r in self.records) / len(self.records)


@dataclass
class FlowTable:
    """Counts keyed by ``(year, sender, receiver)``.

    ``year`` is an int for per-year tables and ``"*"`` for cumulative ones.
    """

    entries: dict[tuple, float]
    years: tuple[int, int]
    regions: tuple[str, ...]
    scope: str = "all"

    def __post_init__(self):
        if self.scope not in ("all", "internal"):
            raise ValueError(f"unknown scope {self.scope!r}")
        universe = set(self.regions)
        for (year, s, r), count in self.entries.items():
            if count < 0:
                raise ValueError(f"negative count at {(year, s, r)}")
            if s == r:
                raise ValueError(f"self flow at {(year, s, r)}")
            if self.scope == "internal" and (s not in universe or r not in universe):
                raise ValueError(f"internal table has external endpoint {(s, r)}")

    @property
    def cumulative(self) -> bool:
        return all(k[0] == CUMULATIVE for k in self.entries) and bool(self.entries)

    def total(self):
        return sum(self.entries.values())

    def sorted_items(self):
        return sorted(self.entries.items(), key=lambda kv: (str(kv[0][0]), kv[0][1], kv[0][2]))

    def in_out(self, year=None) -> tuple[dict[str, float], dict[str, float]]:
        """Per-region incoming and outgoing totals (optionally for one year)."""
        inflow, outflow = defaultdict(float), defaultdict(float)
        for (y, s, r), c in self.entries.items():
            if year is not None and y != year:
                continue
            outflow[s] += c
            inflow[r] += c
        return dict(inflow), dict(outflow)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["year", "sender", "receiver", "count"])
            for (year, s, r), c in self.sorted_items():
                writer.writerow([year, s, r, _fmt_count(c)])

    @classmethod
    def from_csv(cls, path: str | Path, regions: Sequence[str] | None = None,
                 scope: str = "all", years: tuple[int, int] | None = None) -> "FlowTable":
        entries = {}
        for row in _read_rows(path, ("year", "sender", "receiver", "count")):
            year = row["year"] if row["year"] == CUMULATIVE else int(row["year"])
            entries[(year, row["sender"], row["receiver"])] = _parse_count(row["count"])
        if regions is None:
            regions = sorted({k[1] for k in entries} | {k[2] for k in entries})
        if years is None:
            ys = [k[0] for k in entries if k[0] != CUMULATIVE]
            years = (min(ys), max(ys)) if ys else (0, 0)
        return cls(entries, years, tuple(regions), scope)


def _fmt_count(c) -> str:
    if isinstance(c, Fraction):
        return str(c.numerator) if c.denominator == 1 else repr(float(c))
    if isinstance(c, float) and c.is_integer():
        return str(int(c))
    return repr(c) if isinstance(c, float) else str(c)


def _parse_count(text: str):
    value = float(text)
    return int(value) if value.is_integer() else value


def _read_rows(path: str | Path, required: Sequence[str]) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise IngestError(f"{path}: missing columns {missing}")
            return [{k: (v or "").strip() for k, v in row.items()} for row in reader]
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def _opt_year(text: str) -> int | None:
    text = text.strip()
    return int(text) if text else None


def parse_affiliations(path: str | Path, region_map: RegionMap,
                       fuzzy_threshold: float | None = None) -> ParseResult:
    """Read an affiliations CSV and resolve each place to a region.

    Malformed rows are collected in ``errors`` (1-based data row number and
    message) and skipped. Rows without any year are counted in ``n_undated``
    and dropped.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    records, errors = [], []
    n_rows = n_undated = 0
    with fh:
        reader = csv.DictReader(fh)
        required = ("person_id", "place", "start_year", "end_year", "kind")
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        for i, row in enumerate(reader, start=1):
            n_rows += 1
            try:
                if None in row.values() or None in row:
                    raise ValueError("wrong number of fields")
                start, end = _opt_year(row["start_year"]), _opt_year(row["end_year"])
                if start is None and end is None:
                    n_undated += 1
                    continue
                place = row["place"].strip()
                kind = row["kind"].strip() or "employment"
                records.append(AffiliationRecord(
                    person_id=row["person_id"].strip(),
                    place_raw=place,
                    region=region_map.resolve(place, fuzzy_threshold),
                    start_year=start,
                    end_year=end,
                    kind=kind,
                ))
            except (ValueError, TypeError) as exc:
                errors.append((i, str(exc)))
    if errors:
        logger.warning("%s: %d malformed rows skipped", path, len(errors))
    return ParseResult(records, errors, n_rows, n_undated)


def _order_key(item):
    seq, rec = item
    # missing years sort as if equal to the other bound of the interval
    start = rec.start_year if rec.start_year is not None else rec.end_year
    end = rec.end_year if rec.end_year is not None else rec.start_year
    return (start, end, seq)


def _person_events(person: str, recs: list[tuple[int, AffiliationRecord]]):
    ordered = [r for _, r in sorted(recs, key=_order_key) if r.region is not None]
    events = []
    for prev, new in zip(ordered, ordered[1:]):
        if prev.region == new.region:
            continue
        year = new.start_year if new.start_year is not None else prev.end_year
        if year is None:
            # neither the new start nor the previous end is known
            year = new.end_year if prev.start_year is None else prev.start_year
        events.append(MigrationEvent(person, prev.region, new.region, year))
    return events


def extract_migrations(records: Iterable[AffiliationRecord]) -> list[MigrationEvent]:
    """Pair consecutive resolved affiliations of each person into events.

    Records are ordered per person by ``(start_year, end_year, input order)``;
    the event year is the new affiliation's start year, falling back to the
    previous affiliation's end year. Events are returned sorted by person id.
    """
    by_person: dict[str, list] = defaultdict(list)
    for seq, rec in enumerate(records):
        by_person[rec.person_id].append((seq, rec))
    events = []
    for person in sorted(by_person):
        events.extend(_person_events(person, by_person[person]))
    return events


def build_flow_table(events: Iterable[MigrationEvent], years: tuple[int, int],
                     regions: Sequence[str], scope: str = "all") -> FlowTable:
    first, last = years
    if first > last:
        raise ValueError(f"empty year range {years}")
    universe = set(regions)
    counts: dict[tuple, int] = defaultdict(int)
    for ev in events:
        if not first <= ev.year <= last:
            continue
        inside = (ev.from_region in universe, ev.to_region in universe)
        keep = all(inside) if scope == "internal" else any(inside)
        if keep:
            counts[(ev.year, ev.from_region, ev.to_region)] += 1
    return FlowTable(dict(counts), (first, last), tuple(sorted(universe)), scope)


def aggregate_flows(table: FlowTable, region_map: RegionMap | None = None,
                    level: str = "region", time: str = "per_year") -> FlowTable:
    """Collapse a flow table to country level and/or over years.

    Intra-country moves vanish at country level.
    """
    if level not in ("region", "country"):
        raise ValueError(f"unknown level {level!r}")
    if time not in ("per_year", "cumulative"):
        raise ValueError(f"unknown time aggregation {time!r}")
    if level == "country" and region_map is None:
        raise ValueError("country aggregation needs a region map")
    out: dict[tuple, float] = defaultdict(int)
    for (year, s, r), c in table.entries.items():
        if level == "country":
            s, r = region_map.country_of(s), region_map.country_of(r)
            if s == r:
                continue
        key_year = CUMULATIVE if time == "cumulative" else year
        out[(key_year, s, r)] += c
    if level == "country":
        universe = tuple(sorted({region_map.country_of(x) for x in table.regions}))
    else:
        universe = table.regions
    return FlowTable(dict(out), table.years, universe, table.scope)


def _denominator(region_map: RegionMap, kind: str, region: str, year) -> float | None:
    source = region_map.population if kind == "pop" else region_map.researchers
    return source.get((region, year))


def normalize_flows(table: FlowTable, region_map: RegionMap, scheme: str,
                    exact: bool = False) -> FlowTable:
    """Divide counts by population (per 100k inhabitants) or researcher counts.

    ``both_*`` schemes divide by the sum of sender and receiver denominators.
    With ``exact=True`` the counts become ``Fraction`` objects.
    """
    if scheme not in NORMALIZATION_SCHEMES:
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    role, kind = scheme.split("_")
    unit = 100000 if kind == "pop" else 1
    missing = set()
    out = {}
    for (year, s, r), c in table.entries.items():
        ends = {"sender": (s,), "receiver": (r,), "both": (s, r)}[role]
        dens = [_denominator(region_map, kind, g, year) for g in ends]
        for g, d in zip(ends, dens):
            if d is None or d <= 0:
                missing.add((g, year))
        if missing:
            continue
        total = sum(Fraction(d) for d in dens) if exact else sum(dens)
        if exact:
            out[(year, s, r)] = Fraction(c) * unit / total
        else:
            out[(year, s, r)] = c * unit / total
    if missing:
        listing = ", ".join(f"{g}/{y}" for g, y in sorted(missing, key=str))
        raise IngestError(f"missing {kind} denominators for: {listing}")
    return FlowTable(out, table.years, table.regions, table.scope)


def write_events(events: Sequence[MigrationEvent], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["person_id", "from_region", "to_region", "year"])
        for ev in events:
            writer.writerow([ev.person_id, ev.from_region, ev.to_region, ev.year])


def read_events(path: str | Path) -> list[MigrationEvent]:
    return [MigrationEvent(r["person_id"], r["from_region"], r["to_region"], int(r["year"]))
            for r in _read_rows(path, ("person_id", "from_region", "to_region", "year"))]


def region_totals(table: FlowTable, regions: Sequence[str], years: Sequence[int]
                  ) -> dict[str, Mapping]:
    """Per-region yearly in/out totals as ``{"in": {...}, "out": {...}}`` of
    region -> list aligned with ``years``."""
    idx = {y: k for k, y in enumerate(years)}
    inflow = {g: [0.0] * len(years) for g in regions}
    outflow = {g: [0.0] * len(years) for g in regions}
    for (year, s, r), c in table.entries.items():
        if year not in idx:
            continue
        if s in outflow:
            outflow[s][idx[year]] += c
        if r in inflow:
            inflow[r][idx[year]] += c
    return {"in": inflow, "out": outflow}
