"""Synthetic researcher-mobility bundles with a known Poisson gravity law.

Covariates are produced through the same indicator functions the pipeline
uses, so the generator's law is stated in terms of the exact panel values
the models will see. Expected dyad flow::

    log mu = base + year_effect + law(sender, receiver) - distance * log(d)
             + same_country * b_c

with the symmetric law ``b_u * sqrt(uni_s + uni_r) + b_t * (ted_s + ted_r) / 2``
and the asymmetric switch adding ``asym * (uni_s - uni_r) / sd(uni)
+ asym * (ted_s - ted_r) / sd(ted)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .covariates import (INDICATORS, ProcurementNotice, RankingEntry, RegionYearPanel,
                         build_panel, impute_panel)
from .ingest import AffiliationRecord, FlowTable, MigrationEvent, RegionMap, build_flow_table
from .model.gravity import (DyadFrame, MobilityFrame, build_dyad_frame, build_mobility_frame,
                            geodesic_distance, load_language_families)

COUNTRIES = ("IT", "DE", "FR", "ES", "PL", "NL", "SE", "PT")
START_YEAR = 2009


@dataclass
class SynthConfig:
    n_regions: int = 30
    n_years: int = 12
    base: float = 0.5
    uni_effect: float = 1.5
    ted_effect: float = 0.25
    distance: float = 0.8
    same_country: float = 0.7
    year_sd: float = 0.15
    asymmetry: float = 0.0
    seed: int = 0
    alias_share: float = 0.1

    def __post_init__(self):
        if self.n_regions < 5:
            raise ValueError("n_regions must be at least 5")
        if self.n_years < 2:
            raise ValueError("years must cover at least 2 years")
        if self.asymmetry < 0:
            raise ValueError("asymmetry must be non-negative")

    @property
    def years(self) -> list[int]:
        return list(range(START_YEAR, START_YEAR + self.n_years))


@dataclass
class SyntheticBundle:
    config: SynthConfig
    region_map: RegionMap
    records: list[AffiliationRecord]
    places: list[str]              # raw place text of each record
    events: list[MigrationEvent]
    panel: RegionYearPanel
    rankings: list[RankingEntry]
    notices: list[ProcurementNotice]
    gdp: dict
    gdp_national: dict
    gdp_benchmark: dict
    edu: dict
    attainment: dict
    aliases: dict
    truth: dict = field(default_factory=dict)
    counts: np.ndarray | None = None   # (year, sender, receiver) drawn flows

    @property
    def regions(self) -> list[str]:
        return self.region_map.regions

    @property
    def years(self) -> list[int]:
        return self.config.years


def _region_codes(n: int) -> list[str]:
    per = math.ceil(n / len(COUNTRIES))
    codes = []
    for k in range(n):
        codes.append(f"{COUNTRIES[k // per]}{k % per + 1:02d}")
    return codes


def _law(cfg: SynthConfig, uni_s, uni_r, ted_s, ted_r, sd_uni, sd_ted):
    out = cfg.uni_effect * np.sqrt(uni_s + uni_r) + cfg.ted_effect * (ted_s + ted_r) / 2.0
    if cfg.asymmetry:
        out = out + cfg.asymmetry * ((uni_s - uni_r) / sd_uni + (ted_s - ted_r) / sd_ted)
    return out


def generate_synthetic(config: SynthConfig | None = None, with_records: bool = True,
                       **kwargs) -> SyntheticBundle:
    """Draw one synthetic bundle; identical config gives an identical bundle.

    ``with_records=False`` skips the affiliation records (events only), which
    is enough for in-memory model studies.
    """
    cfg = config if config is not None else SynthConfig(**kwargs)
    rng = np.random.default_rng(cfg.seed)
    regions = _region_codes(cfg.n_regions)
    countries = {g: g[:2] for g in regions}
    years = cfg.years
    lat = rng.uniform(37.0, 60.0, len(regions))
    lon = rng.uniform(-8.0, 24.0, len(regions))
    centroids = {g: (round(float(a), 6), round(float(b), 6)) for g, a, b in zip(regions, lat, lon)}
    population = {(g, y): int(rng.integers(300_000, 5_000_000))
                  for g in regions for y in years}
    researchers = {k: max(1, v // 400) for k, v in population.items()}

    # universities: a fixed pool per region whose positions drift over time
    rankings: list[RankingEntry] = []
    for g in regions:
        n_uni = int(rng.integers(1, 5))
        base_pos = rng.integers(1, 600, n_uni)
        for y in years:
            drift = rng.integers(-15, 16, n_uni)
            for u, pos in enumerate(np.clip(base_pos + drift, 1, 700)):
                rankings.append(RankingEntry(f"{g}-U{u}", y, int(pos), g))

    notices: list[ProcurementNotice] = []
    for g in regions:
        level = rng.normal(17.0, 1.2)
        for y in years:
            total = float(np.exp(level + rng.normal(0.0, 0.3)))
            share = float(rng.uniform(0.2, 0.8))
            notices.append(ProcurementNotice(y, g, total * share, True))
            notices.append(ProcurementNotice(y, g, total * (1 - share), True))
            notices.append(ProcurementNotice(y, g, float(rng.uniform(1e5, 1e6)), False))

    gdp, edu, attainment = {}, {}, {}
    for g in regions:
        level = rng.uniform(15_000, 60_000)
        att0 = rng.uniform(0.15, 0.45)
        for y in years:
            gdp[(g, y)] = round(float(level * (1 + 0.01 * (y - years[0]) + rng.normal(0, 0.02))), 2)
            att = float(np.clip(att0 + 0.005 * (y - years[0]) + rng.normal(0, 0.01), 0.05, 0.7))
            attainment[(g, y)] = round(att, 6)
            if rng.uniform() > 0.1:
                edu[(g, y)] = round(float(np.clip(0.45 + 0.9 * att + rng.normal(0, 0.02), 0, 1)), 6)
    gdp_national, gdp_benchmark = {}, {}
    for c in sorted(set(countries.values())):
        members = [g for g in regions if countries[g] == c]
        for y in years:
            nat = round(float(np.mean([gdp[(g, y)] for g in members])), 2)
            gdp_national[(c, y)] = nat
            gdp_benchmark[(c, y)] = round(nat * float(rng.uniform(0.9, 1.1)), 2)

    panel = build_panel(regions, years, countries, rankings, notices, gdp, gdp_national,
                        gdp_benchmark, edu)
    uni = np.array([[panel.get(g, y, "uni_score") for g in regions] for y in years])
    ted = np.array([[panel.get(g, y, "ted") for g in regions] for y in years])
    sd_uni = float(uni.std()) or 1.0
    sd_ted = float(ted.std()) or 1.0

    n = len(regions)
    logd = np.zeros((n, n))
    same = np.zeros((n, n))
    for i, a in enumerate(regions):
        for j, b in enumerate(regions):
            if i != j:
                logd[i, j] = math.log(geodesic_distance(centroids[a], centroids[b]))
                same[i, j] = countries[a] == countries[b]
    year_effect = rng.normal(0.0, cfg.year_sd, len(years))
    off_diag = ~np.eye(n, dtype=bool)
    eta = np.zeros((len(years), n, n))
    for t in range(len(years)):
        law = _law(cfg, uni[t][:, None], uni[t][None, :], ted[t][:, None], ted[t][None, :],
                   sd_uni, sd_ted)
        eta[t] = year_effect[t] + law - cfg.distance * logd + cfg.same_country * same
    # center once over all dyad-years so a typical dyad has mean exp(base)
    center = eta[:, off_diag].mean()
    means = np.where(off_diag[None], np.exp(cfg.base + eta - center), 0.0)
    counts = rng.poisson(means)

    aliases = {f"synthville {g.lower()}": g for g in regions}
    alias_of = {g: f"Synthville {g.lower()}" for g in regions}
    # one migrant per unit of count, in (year, sender, receiver) order
    t_idx, i_idx, j_idx = np.nonzero(counts)
    reps = counts[t_idx, i_idx, j_idx]
    t_all, i_all, j_all = (np.repeat(v, reps) for v in (t_idx, i_idx, j_idx))
    m = len(t_all)
    first_lag = rng.integers(0, 4, m)
    alias_a = rng.uniform(size=m) < cfg.alias_share
    alias_b = rng.uniform(size=m) < cfg.alias_share
    education = rng.uniform(size=m) < 0.3
    end_lag = rng.integers(0, 4, m)
    has_end = rng.uniform(size=m) < 0.7
    records, places, events = [], [], []
    for k in range(m):
        person = f"P{k:07d}"
        y = years[t_all[k]]
        a, b = regions[i_all[k]], regions[j_all[k]]
        events.append(MigrationEvent(person, a, b, y))
        if not with_records:
            continue
        place_a = alias_of[a] if alias_a[k] else a
        place_b = alias_of[b] if alias_b[k] else b
        kind = "education" if education[k] else "employment"
        records.append(AffiliationRecord(person, place_a, a, y - 1 - int(first_lag[k]), y - 1,
                                         kind))
        records.append(AffiliationRecord(person, place_b, b, y,
                                         y + int(end_lag[k]) if has_end[k] else None))
        places.extend((place_a, place_b))
    region_map = RegionMap(countries, centroids, aliases, population, researchers)
    truth = {
        "config": cfg.__dict__,
        "law": "symmetric" if cfg.asymmetry == 0 else "asymmetric",
        "year_effect": {str(y): float(v) for y, v in zip(years, year_effect)},
        "uni_sd": sd_uni, "ted_sd": sd_ted,
        "expected_total": float(means.sum()),
        "expected_per_year": {str(y): float(means[t].sum()) for t, y in enumerate(years)},
        "n_events": len(events),
    }
    return SyntheticBundle(cfg, region_map, records, places, events, panel, rankings, notices,
                           gdp, gdp_national, gdp_benchmark, edu, attainment, aliases, truth,
                           counts)


def bundle_table(bundle: SyntheticBundle) -> FlowTable:
    """Internal flow table of the bundle's events."""
    years = bundle.years
    return build_flow_table(bundle.events, (years[0], years[-1]), bundle.regions, "internal")


def bundle_panel(bundle: SyntheticBundle) -> RegionYearPanel:
    """The bundle's covariate panel with missing cells imputed."""
    return impute_panel(bundle.panel, bundle.regions, bundle.years,
                        bundle.region_map.countries, INDICATORS)


def bundle_frames(bundle: SyntheticBundle) -> tuple[DyadFrame, MobilityFrame]:
    """Dyad and region-year frames built in memory, as the pipeline would."""
    table, panel = bundle_table(bundle), bundle_panel(bundle)
    return (build_dyad_frame(table, panel, bundle.region_map, bundle.years),
            build_mobility_frame(table, panel, bundle.region_map, bundle.years))


def _write(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return "" if v is None else str(v)


def write_bundle(bundle: SyntheticBundle, out: str | Path) -> dict[str, str]:
    """Write the bundle as pipeline input files; returns name -> path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rm = bundle.region_map
    paths = {k: out / f"{k}.csv" for k in (
        "affiliations", "aliases", "regions", "denominators", "rankings", "procurements",
        "gdp", "gdp_benchmark", "edu", "attainment", "language_families")}
    _write(paths["affiliations"], ["person_id", "place", "start_year", "end_year", "kind"],
           [(r.person_id, p, _fmt(r.start_year), _fmt(r.end_year), r.kind)
            for r, p in zip(bundle.records, bundle.places)])
    _write(paths["aliases"], ["raw_name", "region"], sorted(bundle.aliases.items()))
    _write(paths["regions"], ["region", "country", "lat", "lon"],
           [(g, rm.countries[g], repr(rm.centroids[g][0]), repr(rm.centroids[g][1]))
            for g in rm.regions])
    _write(paths["denominators"], ["region", "year", "population", "researchers"],
           [(g, y, rm.population[(g, y)], rm.researchers[(g, y)])
            for g in rm.regions for y in bundle.years])
    _write(paths["rankings"], ["year", "university", "position", "region"],
           [(e.year, e.university, e.position, e.region) for e in bundle.rankings])
    _write(paths["procurements"], ["year", "region", "value_euro", "awarded"],
           [(n.year, n.region, repr(n.value_euro), int(n.awarded)) for n in bundle.notices])
    _write(paths["gdp"], ["region", "year", "value"],
           [(g, y, repr(v)) for (g, y), v in sorted(bundle.gdp.items())]
           + [(c, y, repr(v)) for (c, y), v in sorted(bundle.gdp_national.items())])
    _write(paths["gdp_benchmark"], ["country", "year", "value"],
           [(c, y, repr(v)) for (c, y), v in sorted(bundle.gdp_benchmark.items())])
    _write(paths["edu"], ["region", "year", "value"],
           [(g, y, repr(v)) for (g, y), v in sorted(bundle.edu.items())])
    _write(paths["attainment"], ["region", "year", "value"],
           [(g, y, repr(v)) for (g, y), v in sorted(bundle.attainment.items())])
    families = load_language_families()
    _write(paths["language_families"], ["country_or_region", "family"], sorted(families.items()))
    truth_path = out / "truth.json"
    truth_path.write_text(json.dumps(bundle.truth, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    result = {k: str(v) for k, v in paths.items()}
    result["truth"] = str(truth_path)
    return result


def default_config(paths: dict[str, str], cfg: SynthConfig, out_dir: str | Path) -> dict:
    """A pipeline config running every stage on a written bundle."""
    return {
        "inputs": {k: v for k, v in paths.items() if k != "truth"},
        "years": [cfg.years[0], cfg.years[-1]],
        "scope": "internal",
        "normalization": None,
        "seed": cfg.seed,
        "permutations": 199,
        "out": str(out_dir),
    }
