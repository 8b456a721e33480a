"""Command-line front end; one subcommand per analysis stage."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .covariates import INDICATORS, RegionYearPanel
from .ingest import FlowTable
from .model.ftest import perm_f_test
from .model.gravity import (DyadFrame, MobilityFrame, fit_mobility_model, fit_network_model,
                            network_design, write_smooth_table)
from .network.communities import edge_betweenness_communities, map_equation_communities
from .network.graph import (STRENGTH_MODES, HitsScores, Partition, from_flow_table,
                            hits_scores, quantile_partition, s_core_decomposition)
from .pipeline import (EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, INPUT_ERRORS, NUMERIC_ERRORS,
                       RunConfig, _region_year_matrix, run_pipeline, write_json)
from .stats.pca import pca
from .stats.permutation import npc_anova
from .stats.spearman import spearman_perm_test
from .synth import SynthConfig, default_config, generate_synthetic, write_bundle

log = logging.getLogger("resmob")


def _load_config(args) -> dict:
    data = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in ("seed", "permutations", "jobs", "out"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return data


def _opt(cfg: dict, key: str, default):
    value = cfg.get(key)
    return default if value is None else value


def _out(cfg: dict) -> Path:
    out = Path(_opt(cfg, "out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _internal_table(path: str) -> FlowTable:
    table = FlowTable.from_csv(path)
    return FlowTable(table.entries, table.years, table.regions, "internal")


def _stage(stage: str):
    def run(args, cfg):
        cfg["stages"] = [stage]
        status, manifest = run_pipeline(RunConfig.from_dict(cfg))
        if status:
            print(f"stage {manifest['failed_stage']} failed: {manifest['error']}",
                  file=sys.stderr)
        return status
    return run


def cmd_network(args, cfg):
    net = from_flow_table(_internal_table(args.flows), args.year if args.year else "cumulative")
    net.to_csv(_out(cfg) / "edges.csv")
    return EXIT_OK


def cmd_scores(args, cfg):
    out = _out(cfg)
    net = from_flow_table(_internal_table(args.flows))
    hits = hits_scores(net)
    hits.to_csv(out / "hits.csv")
    for mode in STRENGTH_MODES:
        s_core_decomposition(net, mode).to_csv(out / f"score_{mode}.csv")
    return EXIT_OK


def cmd_score_partition(args, cfg):
    hits = HitsScores.from_csv(args.scores)
    q = _opt(cfg, "score_quantile", args.quantile)
    part = quantile_partition(hits.nodes, hits.hub, None if args.cutoff is not None else q,
                              hits.authority, args.cutoff)
    part.to_csv(_out(cfg) / "partition.csv")
    return EXIT_OK


def cmd_communities(args, cfg):
    out = _out(cfg)
    net = from_flow_table(_internal_table(args.flows))
    gn = edge_betweenness_communities(net)
    me = map_equation_communities(net, seed=_opt(cfg, "seed", 0))
    gn.partition.to_csv(out / "communities_betweenness.csv")
    me.partition.to_csv(out / "communities_map_equation.csv")
    write_json(out / "communities.json", {
        "betweenness": {"modularity": gn.modularity, "history": gn.history},
        "map_equation": {"codelength": me.codelength,
                         "one_module_codelength": me.one_module_codelength},
        "seed": _opt(cfg, "seed", 0)})
    return EXIT_OK


def cmd_anova(args, cfg):
    out = _out(cfg)
    panel = RegionYearPanel.from_csv(args.panel)
    part = Partition.from_csv(args.partition)
    labels = sorted(set(part.labels))
    if len(labels) != 2:
        raise ValueError(f"the partition must have exactly two groups, found {labels}")
    first = args.group or ("high" if "high" in labels else labels[0])
    g1 = [g for g, lab in zip(part.nodes, part.labels) if lab == first]
    g2 = [g for g, lab in zip(part.nodes, part.labels) if lab != first]
    years = panel.years() if args.year is None else [args.year]
    seed, n_perm = _opt(cfg, "seed", 0), _opt(cfg, "permutations", 999)
    rows, results = [], {}
    for k in INDICATORS:
        means = {}
        for g in g1 + g2:
            vals = [panel.get(g, y, k) for y in years]
            if any(v is None for v in vals):
                break
            means[g] = float(np.mean(vals))
        else:
            r = npc_anova([means[g] for g in g1], [means[g] for g in g2], n_perm, seed)
            results[k] = r.to_dict()
            rows.append(f"{k},{r.p_location_corrected!r},{r.p_scale_corrected!r}")
    (out / "anova.csv").write_text("variable,location_p,scale_p\n" + "".join(
        r + "\n" for r in rows), encoding="utf-8")
    write_json(out / "anova.json", {"groups": {first: g1, "other": g2}, "results": results,
                                    "seed": seed, "permutations": n_perm})
    return EXIT_OK


def _curves(path: str):
    table = _internal_table(path)
    years = list(range(table.years[0], table.years[1] + 1))
    inflow, outflow = _region_year_matrix(table, list(table.regions), years)
    return table, years, inflow, outflow


def cmd_spearman(args, cfg):
    _, years, inflow, outflow = _curves(args.flows)
    res = spearman_perm_test(inflow, outflow, _opt(cfg, "permutations", 999),
                             _opt(cfg, "seed", 0), args.lam, grid=years)
    write_json(_out(cfg) / "spearman.json", res.to_dict())
    return EXIT_OK


def cmd_pca(args, cfg):
    table, years, inflow, outflow = _curves(args.flows)
    totals = inflow + outflow
    data = totals / totals.sum(0, keepdims=True) if args.standardize else totals
    res = pca(data, args.standardize, years)
    write_json(_out(cfg) / "pca.json", dict(res.to_dict(), regions=list(table.regions)))
    return EXIT_OK


def cmd_fit_network(args, cfg):
    out = _out(cfg)
    frame = DyadFrame.from_csv(args.dyads)
    fit = fit_network_model(frame, args.variant, _opt(cfg, "n_knots", 10))
    write_json(out / f"network_{args.variant}.json", fit.report())
    write_smooth_table(fit, out / f"network_{args.variant}_smooths.csv")
    return EXIT_OK


def cmd_fit_mobility(args, cfg):
    out = _out(cfg)
    frame = MobilityFrame.from_csv(args.mobility)
    fit = fit_mobility_model(frame, args.response, args.variant, _opt(cfg, "n_knots", 10))
    stem = f"mobility_{args.variant}_{args.response}"
    write_json(out / f"{stem}.json", fit.report())
    write_smooth_table(fit, out / f"{stem}_smooths.csv")
    return EXIT_OK


def cmd_perm_f(args, cfg):
    frame = DyadFrame.from_csv(args.dyads)
    knots = _opt(cfg, "n_knots", 10)
    null = fit_network_model(frame, args.null, knots)
    res = perm_f_test(null, network_design(frame, args.extended, knots),
                      _opt(cfg, "permutations", 999), _opt(cfg, "seed", 0),
                      jobs=_opt(cfg, "jobs", 1))
    write_json(_out(cfg) / "perm_f.json", res.to_dict())
    return EXIT_OK


def cmd_synth(args, cfg):
    out = _out(cfg)
    scfg = SynthConfig(n_regions=args.n_regions, n_years=args.years,
                       asymmetry=args.asymmetry, seed=_opt(cfg, "seed", 0))
    paths = write_bundle(generate_synthetic(scfg), out / "inputs")
    run_cfg = default_config(paths, scfg, out / "results")
    run_cfg["permutations"] = _opt(cfg, "permutations", 999)
    write_json(out / "config.json", run_cfg)
    return EXIT_OK


def cmd_pipeline(args, cfg):
    status, manifest = run_pipeline(RunConfig.from_dict(cfg))
    if status:
        print(f"stage {manifest['failed_stage']} failed: {manifest['error']}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; flags override its fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--permutations", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="resmob",
                                     description="Researcher mobility flow analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in ("ingest", "covariates"):
        p = sub.add_parser(stage, parents=[common], help=f"run the {stage} stage of a config")
        p.set_defaults(func=_stage(stage))

    p = sub.add_parser("network", parents=[common], help="flow table to edge list")
    p.add_argument("--flows", required=True)
    p.add_argument("--year", type=int)
    p.set_defaults(func=cmd_network)

    p = sub.add_parser("scores", parents=[common], help="HITS and s-core scores")
    p.add_argument("--flows", required=True)
    p.set_defaults(func=cmd_scores)

    p = sub.add_parser("score-partition", parents=[common], help="high/low partition")
    p.add_argument("--scores", required=True, help="hits.csv")
    p.add_argument("--quantile", type=float, default=0.9)
    p.add_argument("--cutoff", type=float)
    p.set_defaults(func=cmd_score_partition)

    p = sub.add_parser("communities", parents=[common], help="community detection")
    p.add_argument("--flows", required=True)
    p.set_defaults(func=cmd_communities)

    p = sub.add_parser("anova", parents=[common], help="NPC ANOVA between two groups")
    p.add_argument("--panel", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--group", help="label of the first group")
    p.add_argument("--year", type=int, help="test one year instead of the period mean")
    p.set_defaults(func=cmd_anova)

    p = sub.add_parser("spearman", parents=[common], help="functional Spearman in vs out")
    p.add_argument("--flows", required=True)
    p.add_argument("--lam", type=float)
    p.set_defaults(func=cmd_spearman)

    p = sub.add_parser("pca", parents=[common], help="PCA of region x year totals")
    p.add_argument("--flows", required=True)
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("fit-network", parents=[common], help="network model fit")
    p.add_argument("--dyads", required=True)
    p.add_argument("--variant", default="final",
                   choices=["full", "final", "symmetric", "asymmetric_extended"])
    p.set_defaults(func=cmd_fit_network)

    p = sub.add_parser("fit-mobility", parents=[common], help="regional mobility model fit")
    p.add_argument("--mobility", required=True)
    p.add_argument("--response", default="total", choices=["total", "in", "out"])
    p.add_argument("--variant", default="final", choices=["full", "final"])
    p.set_defaults(func=cmd_fit_mobility)

    p = sub.add_parser("perm-f", parents=[common], help="permutational F-test")
    p.add_argument("--dyads", required=True)
    p.add_argument("--null", default="symmetric")
    p.add_argument("--extended", default="asymmetric_extended")
    p.set_defaults(func=cmd_perm_f)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic input bundle")
    p.add_argument("--n-regions", type=int, default=30)
    p.add_argument("--years", type=int, default=12)
    p.add_argument("--asymmetry", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", parents=[common], help="run every configured stage")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
