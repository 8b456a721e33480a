"""Gravity-style network models, regional mobility models and the Education
Index imputer, all built on ``fit_pgam``."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..covariates import RegionYearPanel
from ..ingest import FlowTable, RegionMap
from .gam import GamDesign, GamError, GamFit, Linear, RandomIntercept, Smooth, fit_pgam

EARTH_RADIUS_KM = 6371.0088
NETWORK_VARIANTS = ("full", "final", "symmetric", "asymmetric_extended")
MOBILITY_VARIANTS = ("full", "final")
MOBILITY_RESPONSES = ("total", "in", "out")
COVARIATES = ("gdp_pc", "edu_index", "uni_score", "ted")


def geodesic_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle (haversine) distance in km between two (lat, lon) points."""
    for lat, lon in (a, b):
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0) or not (
                math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"invalid coordinates {(lat, lon)}")
    lat1, lon1, lat2, lon2 = map(math.radians, (*a, *b))
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def load_language_families(path: str | Path | None = None) -> dict[str, str]:
    if path is None:
        text = resources.files("resmob.data").joinpath("language_families.csv").read_text("utf-8")
        rows = list(csv.DictReader(text.splitlines()))
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    return {r["country_or_region"]: r["family"] for r in rows}


def language_family(region: str, country: str, families: Mapping[str, str]) -> str | None:
    """Family of the longest matching region-code prefix, else of the country."""
    for k in range(len(region), 1, -1):
        if region[:k] in families:
            return families[region[:k]]
    return families.get(country)


@dataclass
class DyadFrame:
    """One row per (year, sender, receiver) with sender/receiver covariates."""

    year: np.ndarray
    sender: np.ndarray
    receiver: np.ndarray
    flow: np.ndarray
    sender_cov: dict[str, np.ndarray]
    receiver_cov: dict[str, np.ndarray]
    log_dist: np.ndarray
    same_country: np.ndarray
    same_lan: np.ndarray

    @property
    def response(self) -> np.ndarray:
        return np.log(self.flow + 1.0)

    def __len__(self) -> int:
        return len(self.year)

    def subset(self, mask) -> "DyadFrame":
        mask = np.asarray(mask)
        return DyadFrame(self.year[mask], self.sender[mask], self.receiver[mask], self.flow[mask],
                         {k: v[mask] for k, v in self.sender_cov.items()},
                         {k: v[mask] for k, v in self.receiver_cov.items()},
                         self.log_dist[mask], self.same_country[mask], self.same_lan[mask])

    def to_csv(self, path: str | Path) -> None:
        header = (["year", "sender", "receiver", "flow", "response"]
                  + [f"{k}_sender" for k in self.sender_cov]
                  + [f"{k}_receiver" for k in self.receiver_cov]
                  + ["log_dist", "same_country", "same_lan"])
        resp = self.response
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([int(self.year[i]), self.sender[i], self.receiver[i],
                            repr(float(self.flow[i])), repr(float(resp[i]))]
                           + [repr(float(v[i])) for v in self.sender_cov.values()]
                           + [repr(float(v[i])) for v in self.receiver_cov.values()]
                           + [repr(float(self.log_dist[i])), int(self.same_country[i]),
                              int(self.same_lan[i])])

    @classmethod
    def from_csv(cls, path: str | Path) -> "DyadFrame":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        cols = rows[0].keys() if rows else []
        covs = [c[: -len("_sender")] for c in cols if c.endswith("_sender")]

        def arr(name, cast=float):
            return np.array([cast(r[name]) for r in rows])
        return cls(arr("year", int), arr("sender", str), arr("receiver", str), arr("flow"),
                   {k: arr(f"{k}_sender") for k in covs},
                   {k: arr(f"{k}_receiver") for k in covs},
                   arr("log_dist"), arr("same_country", int).astype(bool),
                   arr("same_lan", int).astype(bool))


def build_dyad_frame(table: FlowTable, panel: RegionYearPanel, region_map: RegionMap,
                     years: Sequence[int], families: Mapping[str, str] | None = None,
                     covariates: Sequence[str] = COVARIATES) -> DyadFrame:
    """All ordered region pairs for every year; absent flows are zeros."""
    if families is None:
        families = load_language_families()
    regions = list(table.regions)
    counts = {}
    for (y, s, r), c in table.entries.items():
        counts[(y, s, r)] = counts.get((y, s, r), 0.0) + float(c)
    fam = {g: language_family(g, region_map.country_of(g), families) for g in regions}
    dist = {}
    for s in regions:
        for r in regions:
            if s != r:
                d = geodesic_distance(region_map.centroids[s], region_map.centroids[r])
                if d <= 0:
                    raise ValueError(f"regions {s} and {r} share a centroid")
                dist[(s, r)] = math.log(d)
    rows = [(y, s, r) for y in years for s in regions for r in regions if s != r]
    year = np.array([y for y, _, _ in rows])
    sender = np.array([s for _, s, _ in rows])
    receiver = np.array([r for _, _, r in rows])

    def cov(role_idx, name):
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            v = panel.get(row[role_idx], row[0], name)
            if v is None:
                raise ValueError(f"{name} missing for {row[role_idx]} in {row[0]}; impute first")
            out[i] = v
        return out

    return DyadFrame(
        year=year, sender=sender, receiver=receiver,
        flow=np.array([counts.get(row, 0.0) for row in rows]),
        sender_cov={k: cov(1, k) for k in covariates},
        receiver_cov={k: cov(2, k) for k in covariates},
        log_dist=np.array([dist[(s, r)] for _, s, r in rows]),
        same_country=np.array([region_map.country_of(s) == region_map.country_of(r)
                               for _, s, r in rows]),
        same_lan=np.array([fam[s] is not None and fam[s] == fam[r] for _, s, r in rows]),
    )


def network_design(frame: DyadFrame, variant: str = "final", n_knots: int = 10) -> GamDesign:
    """Terms of the network model variants.

    In ``asymmetric_extended`` the receiver smooths carry no linear part:
    it is already spanned by the sum smooth plus the sender smooth.
    """
    if variant not in NETWORK_VARIANTS:
        raise ValueError(f"unknown network model variant {variant!r}")
    s, r = frame.sender_cov, frame.receiver_cov
    terms: list = []
    if variant == "full":
        for k in COVARIATES:
            terms.append(Smooth(f"{k}_sender", s[k], n_knots, by=frame.year))
            terms.append(Smooth(f"{k}_receiver", r[k], n_knots, by=frame.year))
    elif variant == "final":
        for k in ("uni_score", "ted"):
            terms.append(Smooth(f"{k}_sender", s[k], n_knots))
            terms.append(Smooth(f"{k}_receiver", r[k], n_knots))
    else:
        for k in ("uni_score", "ted"):
            terms.append(Smooth(f"{k}_sum", s[k] + r[k], n_knots))
        if variant == "asymmetric_extended":
            for k in ("uni_score", "ted"):
                terms.append(Smooth(f"{k}_sender", s[k], n_knots))
                terms.append(Smooth(f"{k}_receiver", r[k], n_knots, linear=False))
    terms.append(Smooth("log_dist", frame.log_dist, n_knots))
    if variant == "full":
        terms.append(Linear("same_lan", frame.same_lan.astype(float)))
    terms.append(Linear("same_country", frame.same_country.astype(float)))
    terms.append(RandomIntercept("year", frame.year))
    return GamDesign(terms)


def fit_network_model(frame: DyadFrame, variant: str = "final", n_knots: int = 10,
                      lambdas: Mapping[str, float] | None = None) -> GamFit:
    if len(np.unique(frame.year)) < 2:
        raise GamError("the network model needs at least two years")
    design = network_design(frame, variant, n_knots)
    return fit_pgam(design, frame.response, lambdas, variant=variant)


@dataclass
class MobilityFrame:
    year: np.ndarray
    region: np.ndarray
    country: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray
    cov: dict[str, np.ndarray]

    def response(self, kind: str = "total") -> np.ndarray:
        if kind not in MOBILITY_RESPONSES:
            raise ValueError(f"unknown mobility response {kind!r}")
        value = {"total": self.inflow + self.outflow, "in": self.inflow,
                 "out": self.outflow}[kind]
        return np.log(value + 1.0)

    def __len__(self) -> int:
        return len(self.year)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["year", "region", "country", "in_flow", "out_flow", *self.cov])
            for i in range(len(self)):
                w.writerow([int(self.year[i]), self.region[i], self.country[i],
                            repr(float(self.inflow[i])), repr(float(self.outflow[i]))]
                           + [repr(float(v[i])) for v in self.cov.values()])

    @classmethod
    def from_csv(cls, path: str | Path) -> "MobilityFrame":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        fixed = {"year", "region", "country", "in_flow", "out_flow"}
        covs = [c for c in (rows[0].keys() if rows else []) if c not in fixed]
        return cls(np.array([int(r["year"]) for r in rows]),
                   np.array([r["region"] for r in rows]),
                   np.array([r["country"] for r in rows]),
                   np.array([float(r["in_flow"]) for r in rows]),
                   np.array([float(r["out_flow"]) for r in rows]),
                   {k: np.array([float(r[k]) for r in rows]) for k in covs})


def build_mobility_frame(table: FlowTable, panel: RegionYearPanel, region_map: RegionMap,
                         years: Sequence[int], regions: Sequence[str] | None = None,
                         covariates: Sequence[str] = COVARIATES) -> MobilityFrame:
    """Region-year in/out totals (all-scope tables count external partners)."""
    regions = list(regions if regions is not None else table.regions)
    inflow = {(g, y): 0.0 for g in regions for y in years}
    outflow = dict(inflow)
    for (y, s, r), c in table.entries.items():
        if (s, y) in outflow:
            outflow[(s, y)] += float(c)
        if (r, y) in inflow:
            inflow[(r, y)] += float(c)
    keys = [(g, y) for y in years for g in regions]
    cov = {}
    for k in covariates:
        vals = []
        for g, y in keys:
            v = panel.get(g, y, k)
            if v is None:
                raise ValueError(f"{k} missing for {g} in {y}; impute first")
            vals.append(v)
        cov[k] = np.array(vals)
    return MobilityFrame(np.array([y for _, y in keys]), np.array([g for g, _ in keys]),
                         np.array([region_map.country_of(g) for g, _ in keys]),
                         np.array([inflow[key] for key in keys]),
                         np.array([outflow[key] for key in keys]), cov)


def mobility_design(frame: MobilityFrame, variant: str = "final", n_knots: int = 10,
                    covariates: Sequence[str] | None = None) -> GamDesign:
    if variant not in MOBILITY_VARIANTS:
        raise ValueError(f"unknown mobility model variant {variant!r}")
    if covariates is None:
        covariates = COVARIATES if variant == "full" else ("uni_score", "ted", "edu_index")
    by = frame.year if variant == "full" else None
    terms: list = [Smooth(k, frame.cov[k], n_knots, by=by) for k in covariates]
    terms.append(RandomIntercept("year", frame.year))
    terms.append(RandomIntercept("country", frame.country))
    return GamDesign(terms)


def fit_mobility_model(frame: MobilityFrame, response: str = "total", variant: str = "final",
                       n_knots: int = 10, lambdas: Mapping[str, float] | None = None,
                       covariates: Sequence[str] | None = None) -> GamFit:
    design = mobility_design(frame, variant, n_knots, covariates)
    return fit_pgam(design, frame.response(response), lambdas,
                    variant=f"{variant}:{response}")


def fit_edu_imputer(attainment, edu_index, n_knots: int = 10
                    ) -> tuple[GamFit, Callable[[np.ndarray], np.ndarray]]:
    """Smooth of Education Index on tertiary attainment; predictions in [0, 1]."""
    attainment = np.asarray(attainment, dtype=float)
    edu_index = np.asarray(edu_index, dtype=float)
    if attainment.shape != edu_index.shape or attainment.size < 20:
        raise GamError("the Education Index imputer needs at least 20 paired observations")
    fit = fit_pgam(GamDesign([Smooth("attainment", attainment, n_knots)]), edu_index,
                   variant="edu_imputer")

    def predict(values) -> np.ndarray:
        raw = fit.predict({"attainment": np.atleast_1d(np.asarray(values, dtype=float))})
        return np.clip(raw, 0.0, 1.0)

    return fit, predict


def smooth_table(fit: GamFit, n_points: int = 50) -> list[tuple[str, float, float, float]]:
    """Plot-ready ``(term, x, fit, se)`` rows for every smooth of a fit.

    By-level smooths are labelled ``term[level]``.
    """
    rows = []
    for b in fit.blocks:
        if b.kind != "smooth":
            continue
        grid = np.linspace(b.basis.lower, b.basis.upper, n_points)
        for lev in b.levels:
            f, se = fit.smooth_curve(b.name, grid, lev)
            label = b.name if lev is None else f"{b.name}[{lev}]"
            rows.extend((label, float(x), float(v), float(s)) for x, v, s in zip(grid, f, se))
    return rows


def write_smooth_table(fit: GamFit, path: str | Path, n_points: int = 50) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "x", "fit", "se"])
        for term, x, f, s in smooth_table(fit, n_points):
            w.writerow([term, repr(x), repr(f), repr(s)])
