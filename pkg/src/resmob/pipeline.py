"""End-to-end batch pipeline: ingest, covariates, network, tests, models.

Every artifact is written in a canonical text format and listed with its
sha256 digest in ``manifest.json``. Nothing time- or path-dependent is
written, so identical config and inputs give byte-identical output trees.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .covariates import (INDICATORS, CovariateError, build_panel, impute_panel,
                         read_keyed_values, read_procurements, read_rankings)
from .ingest import (CUMULATIVE, NORMALIZATION_SCHEMES, IngestError, RegionMap,
                     aggregate_flows, build_flow_table, extract_migrations, normalize_flows,
                     parse_affiliations, write_events)
from .model.ftest import perm_f_test
from .model.gam import GamError, fit_pgam
from .model.gravity import (DyadFrame, build_dyad_frame, build_mobility_frame,
                            fit_edu_imputer, fit_mobility_model, fit_network_model,
                            load_language_families, network_design, write_smooth_table)
from .model.splines import SplineError
from .network.communities import edge_betweenness_communities, map_equation_communities
from .network.graph import (STRENGTH_MODES, NetworkError, congruence, from_flow_table,
                            hits_scores, node_strength, quantile_partition, s_core_decomposition)
from .stats.linfit import LinFitError, linear_fit
from .stats.pca import PcaError, pca
from .stats.permutation import PermutationError, npc_anova
from .stats.spearman import spearman_perm_test

log = logging.getLogger(__name__)

STAGES = ("ingest", "covariates", "network", "tests", "models")
DEPENDS = {"ingest": (), "covariates": ("ingest",), "network": ("ingest",),
           "tests": ("ingest", "covariates", "network"), "models": ("ingest", "covariates")}
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (GamError, SplineError, PcaError, LinFitError, PermutationError,
                  NetworkError, np.linalg.LinAlgError, FloatingPointError)
INPUT_ERRORS = (IngestError, CovariateError, OSError, KeyError, ValueError, TypeError)


@dataclass
class RunConfig:
    inputs: dict
    years: tuple[int, int]
    out: str = "out"
    regions: list | None = None
    scope: str = "internal"
    normalization: str | None = None
    seed: int = 0
    permutations: int = 999
    jobs: int = 1
    stages: list = field(default_factory=lambda: list(STAGES))
    network_variants: list = field(default_factory=lambda: ["final", "symmetric",
                                                            "asymmetric_extended"])
    mobility_variants: list = field(default_factory=lambda: ["final"])
    mobility_responses: list = field(default_factory=lambda: ["total", "in", "out"])
    n_knots: int = 10
    knot_sensitivity: list = field(default_factory=lambda: [6, 14])
    lambda_grid: list | None = None    # [log10 low, log10 high, count]
    score_quantile: float = 0.9
    fuzzy_threshold: float | None = None
    smooth_points: int = 50

    def __post_init__(self):
        self.years = tuple(int(y) for y in self.years)
        if len(self.years) != 2 or self.years[0] > self.years[1]:
            raise ValueError(f"year range must be [first, last] with first <= last: {self.years}")
        if self.scope not in ("all", "internal"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.normalization is not None and self.normalization not in NORMALIZATION_SCHEMES:
            raise ValueError(f"unknown normalization scheme {self.normalization!r}")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stages {unknown}")
        if self.permutations < 1 or self.jobs < 1:
            raise ValueError("permutations and jobs must be positive")
        if "affiliations" not in self.inputs or "regions" not in self.inputs:
            raise ValueError("inputs need at least 'affiliations' and 'regions'")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(data) - known)
        if extra:
            raise ValueError(f"unknown config fields {extra}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def year_list(self) -> list[int]:
        return list(range(self.years[0], self.years[1] + 1))

    def grid(self):
        if self.lambda_grid is None:
            return None
        lo, hi, count = self.lambda_grid
        return np.logspace(float(lo), float(hi), int(count))

    def record(self) -> dict:
        """Config as recorded in artifacts (output location excluded)."""
        data = asdict(self)
        data.pop("out")
        data["years"] = list(self.years)
        return data


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path: str | Path, data) -> None:
    Path(path).write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def versions() -> dict:
    return {"resmob": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _region_year_matrix(table, regions: Sequence[str], years: Sequence[int]):
    """(regions x years) in-flow and out-flow matrices."""
    ri = {g: k for k, g in enumerate(regions)}
    yi = {y: k for k, y in enumerate(years)}
    inflow = np.zeros((len(regions), len(years)))
    outflow = np.zeros_like(inflow)
    for (y, s, r), c in table.entries.items():
        if y not in yi:
            continue
        if s in ri:
            outflow[ri[s], yi[y]] += float(c)
        if r in ri:
            inflow[ri[r], yi[y]] += float(c)
    return inflow, outflow


class Pipeline:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.out = Path(config.out)
        self.artifacts: list[Path] = []
        self.state: dict = {}

    def _path(self, name: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(path)
        return path

    def _json(self, name: str, data: dict) -> None:
        data = dict(data, seed=self.cfg.seed, permutations=self.cfg.permutations)
        write_json(self._path(name), data)

    # -- stages ---------------------------------------------------------

    def ingest(self) -> None:
        cfg, inp = self.cfg, self.cfg.inputs
        region_map = RegionMap.from_files(inp["regions"], inp.get("aliases"))
        universe = sorted(cfg.regions) if cfg.regions else region_map.regions
        unknown = [g for g in universe if g not in region_map.countries]
        if unknown:
            raise IngestError(f"regions not in the region metadata: {unknown}")
        parsed = parse_affiliations(inp["affiliations"], region_map, cfg.fuzzy_threshold)
        events = extract_migrations(parsed.records)
        table = build_flow_table(events, cfg.years, universe, cfg.scope)
        internal = (table if cfg.scope == "internal"
                    else build_flow_table(events, cfg.years, universe, "internal"))
        write_events(events, self._path("ingest/events.csv"))
        table.to_csv(self._path("ingest/flows_year.csv"))
        aggregate_flows(table, time="cumulative").to_csv(self._path("ingest/flows_cumulative.csv"))
        aggregate_flows(table, region_map, "country", "cumulative").to_csv(
            self._path("ingest/flows_country.csv"))
        self._json("ingest/report.json", {
            "rows": parsed.n_rows, "records": len(parsed.records),
            "undated_rows": parsed.n_undated, "malformed_rows": len(parsed.errors),
            "resolution_rate": parsed.resolution_rate, "events": len(events),
            "flow_total": table.total(), "scope": cfg.scope, "regions": universe,
            "years": list(cfg.years)})
        self.state.update(region_map=region_map, universe=universe, events=events,
                          table=table, internal=internal)

    def covariates(self) -> None:
        cfg, inp = self.cfg, self.cfg.inputs
        region_map: RegionMap = self.state["region_map"]
        universe, years = self.state["universe"], cfg.year_list
        if cfg.normalization:
            if not inp.get("denominators"):
                raise IngestError("normalization requested but no denominators file given")
            dens = RegionMap.from_files(inp["regions"], None, inp["denominators"])
            normalize_flows(self.state["table"], dens, cfg.normalization).to_csv(
                self._path(f"covariates/flows_{cfg.normalization}.csv"))
        country_of = {g: region_map.country_of(g) for g in universe}
        gdp = read_keyed_values(inp["gdp"], "region") if inp.get("gdp") else None
        national = benchmark = None
        if gdp is not None and inp.get("gdp_benchmark"):
            countries = set(country_of.values())
            national = {k: v for k, v in gdp.items() if k[0] in countries}
            gdp = {k: v for k, v in gdp.items() if k[0] in country_of}
            benchmark = read_keyed_values(inp["gdp_benchmark"], "country")
        elif gdp is not None:
            gdp = {k: v for k, v in gdp.items() if k[0] in country_of}
        edu = read_keyed_values(inp["edu"], "region") if inp.get("edu") else None
        panel = build_panel(
            universe, years, country_of,
            read_rankings(inp["rankings"]) if inp.get("rankings") else (),
            read_procurements(inp["procurements"]) if inp.get("procurements") else (),
            gdp, national, benchmark, edu)
        imputer_report = None
        if inp.get("attainment") and edu:
            att = read_keyed_values(inp["attainment"], "region")
            pairs = sorted(k for k in edu if k in att and k[0] in country_of)
            fit, predict = fit_edu_imputer([att[k] for k in pairs], [edu[k] for k in pairs],
                                           cfg.n_knots)
            todo = [(g, y) for g in universe for y in years
                    if panel.is_missing(g, y, "edu_index") and (g, y) in att]
            if todo:
                pred = predict([att[k] for k in todo])
                for (g, y), v in zip(todo, pred):
                    panel.set(g, y, "edu_index", float(v), "imputed")
            imputer_report = {"r2": fit.r2, "n": len(pairs), "imputed_cells": len(todo),
                              "lambda": fit.lambdas}
        present = [k for k in INDICATORS
                   if any(not panel.is_missing(g, y, k) for g in universe for y in years)]
        panel = impute_panel(panel, universe, years, country_of, present)
        panel.to_csv(self._path("covariates/panel.csv"))
        self._json("covariates/report.json", {
            "indicators": present, "edu_imputer": imputer_report,
            "provenance": {p: sum(1 for v in panel.provenance.values() if v == p)
                           for p in ("observed", "corrected", "imputed")}})
        self.state.update(panel=panel, indicators=present)

    def network(self) -> None:
        internal = self.state["internal"]
        years = self.cfg.year_list
        net = from_flow_table(internal)
        net.to_csv(self._path("network/edges_cumulative.csv"))
        hits = hits_scores(net)
        hits.to_csv(self._path("network/hits.csv"))
        shells = {}
        for mode in STRENGTH_MODES:
            res = s_core_decomposition(net, mode)
            res.to_csv(self._path(f"network/score_{mode}.csv"))
            shells[mode] = res
        q = self.cfg.score_quantile
        part = quantile_partition(net.nodes, hits.hub, q, hits.authority)
        part.to_csv(self._path("network/partition_hits.csv"))
        gn = edge_betweenness_communities(net)
        gn.partition.to_csv(self._path("network/communities_betweenness.csv"))
        me = map_equation_communities(net, seed=self.cfg.seed)
        me.partition.to_csv(self._path("network/communities_map_equation.csv"))
        yearly = {}
        for y in years:
            ynet = from_flow_table(internal, y)
            yh = hits_scores(ynet)
            ypart = quantile_partition(ynet.nodes, yh.hub, q, yh.authority)
            hub_only = quantile_partition(ynet.nodes, yh.hub, q)
            aut_only = quantile_partition(ynet.nodes, yh.authority, q)
            yearly[str(y)] = {
                "congruence_joint": congruence(ypart, part),
                "congruence_hub": congruence(hub_only, quantile_partition(net.nodes, hits.hub, q)),
                "congruence_authority": congruence(
                    aut_only, quantile_partition(net.nodes, hits.authority, q)),
                "hits_converged": yh.converged}
        strength = {m: node_strength(net, m) for m in STRENGTH_MODES}
        self._json("network/report.json", {
            "nodes": net.nodes, "total_weight": float(net.weights.sum()),
            "hits": {"iterations": hits.iterations, "converged": hits.converged,
                     "hub_authority_corr": float(np.corrcoef(hits.hub, hits.authority)[0, 1])},
            "score_thresholds": {m: r.thresholds for m, r in shells.items()},
            "partition_high": [g for g, lab in zip(part.nodes, part.labels) if lab == "high"],
            "betweenness": {"modularity": gn.modularity, "n_communities": len(gn.partition.groups()),
                            "history": gn.history},
            "map_equation": {"codelength": me.codelength,
                             "one_module_codelength": me.one_module_codelength,
                             "n_communities": len(me.partition.groups())},
            "yearly": yearly,
            "strength": {m: v for m, v in strength.items()}})
        self.state.update(net=net, hits=hits, partition=part)

    def tests(self) -> None:
        cfg = self.cfg
        panel, part = self.state["panel"], self.state["partition"]
        universe, years = self.state["universe"], cfg.year_list
        high = [g for g, lab in zip(part.nodes, part.labels) if lab == "high"]
        low = [g for g, lab in zip(part.nodes, part.labels) if lab == "low"]
        variables = self.state["indicators"]

        def anova(k):
            means = {g: float(np.mean([panel.get(g, y, k) for y in years])) for g in universe}
            return npc_anova([means[g] for g in high], [means[g] for g in low],
                             cfg.permutations, cfg.seed)

        with ThreadPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(anova, variables))
        with open(self._path("tests/anova.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write("variable,location_p,scale_p\n")
            for k, r in zip(variables, results):
                fh.write(f"{k},{r.p_location_corrected!r},{r.p_scale_corrected!r}\n")
        self._json("tests/anova.json", {"groups": {"high": high, "low": low},
                                        "results": {k: r.to_dict()
                                                    for k, r in zip(variables, results)}})
        inflow, outflow = _region_year_matrix(self.state["internal"], universe, years)
        if len(years) >= 4:
            sp = spearman_perm_test(inflow, outflow, cfg.permutations, cfg.seed,
                                    grid=years).to_dict()
        else:
            sp = {"skipped": "fewer than 4 years to smooth"}
        tot_in, tot_out = inflow.sum(1), outflow.sum(1)
        fits = {m: linear_fit(tot_out, tot_in, m, seed=cfg.seed).to_dict()
                for m in ("ols", "lts")}
        self._json("tests/spearman.json", {"test": sp,
                                           "pearson_in_out": float(np.corrcoef(tot_in, tot_out)[0, 1]),
                                           "linear_fits": fits})
        totals = inflow + outflow
        pcs = {}
        for std in (False, True):
            data = totals / totals.sum(0, keepdims=True) if std else totals
            try:
                pcs["yearly_standardized" if std else "total"] = pca(data, std, years).to_dict()
            except PcaError as exc:
                pcs["yearly_standardized" if std else "total"] = {"error": str(exc)}
        self._json("tests/pca.json", pcs)

    def models(self) -> None:
        cfg = self.cfg
        region_map, panel = self.state["region_map"], self.state["panel"]
        years, grid = cfg.year_list, cfg.grid()
        families = (load_language_families(cfg.inputs["language_families"])
                    if cfg.inputs.get("language_families") else None)
        frame = build_dyad_frame(self.state["internal"], panel, region_map, years, families,
                                 self.state["indicators"])
        frame.to_csv(self._path("models/dyads.csv"))
        fits = {}
        for variant in cfg.network_variants:
            fit = self._fit_network(frame, variant, cfg.n_knots, grid)
            fits[variant] = fit
            self._json(f"models/network_{variant}.json", fit.report())
            write_smooth_table(fit, self._path(f"models/network_{variant}_smooths.csv"),
                               cfg.smooth_points)
        sensitivity = {}
        if "final" in fits:
            for k in cfg.knot_sensitivity:
                sensitivity[str(k)] = self._fit_network(frame, "final", k, grid).r2
            sensitivity[str(cfg.n_knots)] = fits["final"].r2
        if "symmetric" in fits:
            test = perm_f_test(fits["symmetric"], network_design(frame, "asymmetric_extended",
                                                                 cfg.n_knots),
                               cfg.permutations, cfg.seed, jobs=cfg.jobs)
            self._json("models/perm_f_symmetry.json", test.to_dict())
        mob = build_mobility_frame(self.state["table"], panel, region_map, years,
                                   self.state["universe"], self.state["indicators"])
        mob.to_csv(self._path("models/mobility.csv"))
        mob_r2 = {}
        for variant in cfg.mobility_variants:
            for resp in cfg.mobility_responses:
                fit = fit_mobility_model(mob, resp, variant, cfg.n_knots)
                mob_r2[f"{variant}:{resp}"] = fit.r2
                self._json(f"models/mobility_{variant}_{resp}.json", fit.report())
                write_smooth_table(fit, self._path(f"models/mobility_{variant}_{resp}_smooths.csv"),
                                   cfg.smooth_points)
        self._json("models/report.json", {
            "network_r2": {k: f.r2 for k, f in fits.items()},
            "knot_sensitivity_r2": sensitivity, "mobility_r2": mob_r2,
            "dyads": len(frame)})

    def _fit_network(self, frame: DyadFrame, variant: str, n_knots: int, grid):
        if grid is None:
            return fit_network_model(frame, variant, n_knots)
        design = network_design(frame, variant, n_knots)
        return fit_pgam(design, frame.response, grid=grid, variant=variant)

    # -- driver ---------------------------------------------------------

    def plan(self) -> list[str]:
        needed = set()

        def add(stage):
            for dep in DEPENDS[stage]:
                add(dep)
            needed.add(stage)
        for s in self.cfg.stages:
            add(s)
        return [s for s in STAGES if s in needed]

    def run(self) -> tuple[int, dict]:
        self.out.mkdir(parents=True, exist_ok=True)
        status, failed, error = EXIT_OK, None, None
        plan = self.plan()
        for stage in plan:
            try:
                log.info("stage %s", stage)
                getattr(self, stage)()
            except NUMERIC_ERRORS as exc:
                status, failed, error = EXIT_NUMERIC, stage, f"{type(exc).__name__}: {exc}"
            except INPUT_ERRORS as exc:
                status, failed, error = EXIT_INPUT, stage, f"{type(exc).__name__}: {exc}"
            if failed:
                log.error("stage %s failed: %s", stage, error)
                break
        manifest = self.manifest(plan, status, failed, error)
        write_json(self.out / "manifest.json", manifest)
        return status, manifest

    def manifest(self, plan, status, failed, error) -> dict:
        inputs = {}
        for name, path in sorted(self.cfg.inputs.items()):
            if path and Path(path).is_file():
                inputs[name] = {"path": str(path), "sha256": sha256_file(path)}
            else:
                inputs[name] = {"path": str(path), "sha256": None}
        artifacts = {str(p.relative_to(self.out)): sha256_file(p)
                     for p in sorted(set(self.artifacts)) if p.exists()}
        config = self.cfg.record()
        return {"status": "ok" if status == EXIT_OK else "failed", "exit_code": status,
                "failed_stage": failed, "error": error, "stages": plan,
                "seed": self.cfg.seed, "permutations": self.cfg.permutations,
                "config": config,
                "config_sha256": hashlib.sha256(
                    json.dumps(_plain(config), sort_keys=True).encode()).hexdigest(),
                "inputs": inputs, "artifacts": artifacts, "versions": versions()}


def run_pipeline(config: RunConfig | dict) -> tuple[int, dict]:
    """Run the configured stages; returns ``(exit_status, manifest)``."""
    if isinstance(config, dict):
        config = RunConfig.from_dict(config)
    return Pipeline(config).run()
