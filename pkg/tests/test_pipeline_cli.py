import json
import math
from pathlib import Path

import numpy as np
import pytest

from resmob.cli import main
from resmob.pipeline import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, RunConfig, run_pipeline
from resmob.synth import SynthConfig, default_config, generate_synthetic, write_bundle

SMALL = SynthConfig(n_regions=12, n_years=5, seed=1)


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    paths = write_bundle(generate_synthetic(SMALL), root / "inputs")
    cfg = default_config(paths, SMALL, root / "run")
    cfg["permutations"] = 49
    return root, cfg


@pytest.fixture(scope="module")
def first_run(bundle_dir):
    root, cfg = bundle_dir
    status, manifest = run_pipeline(dict(cfg))
    return status, manifest, Path(cfg["out"])


def _tree(out: Path) -> dict:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file()}


def test_synth_deterministic():
    a, b = generate_synthetic(SMALL), generate_synthetic(SMALL)
    assert np.array_equal(a.counts, b.counts)
    assert a.events == b.events and a.records == b.records
    assert not np.array_equal(a.counts, generate_synthetic(SynthConfig(
        n_regions=12, n_years=5, seed=2)).counts)


def test_synth_total_near_expected():
    for seed in range(5):
        b = generate_synthetic(SynthConfig(n_regions=15, n_years=4, seed=seed),
                               with_records=False)
        expected = b.truth["expected_total"]
        assert abs(b.counts.sum() - expected) <= 3 * math.sqrt(expected)
        assert np.all(np.diagonal(b.counts, axis1=1, axis2=2) == 0)


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_regions=3)
    with pytest.raises(ValueError):
        SynthConfig(asymmetry=-1)


def test_pipeline_runs_all_stages(first_run, bundle_dir):
    status, manifest, out = first_run
    assert status == EXIT_OK and manifest["status"] == "ok"
    assert manifest["stages"] == ["ingest", "covariates", "network", "tests", "models"]
    assert manifest["seed"] == SMALL.seed and manifest["permutations"] == 49
    for name in ("ingest/flows_year.csv", "network/hits.csv", "tests/anova.csv",
                 "models/perm_f_symmetry.json", "models/network_final_smooths.csv"):
        assert name in manifest["artifacts"]
    assert all(v["sha256"] for v in manifest["inputs"].values())
    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk["artifacts"] == manifest["artifacts"]
    perm = json.loads((out / "models/perm_f_symmetry.json").read_text())
    assert perm["seed"] == SMALL.seed and perm["n_permutations"] == 49


def test_ingest_total_equals_event_count(first_run):
    _, _, out = first_run
    bundle = generate_synthetic(SMALL)
    lines = (out / "ingest/flows_year.csv").read_text().splitlines()
    header = lines[0].split(",")
    col = header.index("count")
    total = sum(int(float(r.split(",")[col])) for r in lines[1:])
    assert total == len(bundle.events)
    events = (out / "ingest/events.csv").read_text().splitlines()
    assert len(events) - 1 == len(bundle.events)


def test_pipeline_byte_identical(first_run, bundle_dir, tmp_path):
    _, manifest, out = first_run
    _, cfg = bundle_dir
    again = dict(cfg, out=str(tmp_path / "again"))
    status, manifest2 = run_pipeline(again)
    assert status == EXIT_OK
    assert manifest2["artifacts"] == manifest["artifacts"]
    assert manifest2["config_sha256"] == manifest["config_sha256"]
    a, b = _tree(out), _tree(tmp_path / "again")
    a.pop("manifest.json"), b.pop("manifest.json")
    assert a == b


def test_thread_count_does_not_change_results(first_run, bundle_dir, tmp_path):
    _, manifest, _ = first_run
    _, cfg = bundle_dir
    status, m2 = run_pipeline(dict(cfg, out=str(tmp_path / "j"), jobs=3, stages=["models"]))
    assert status == EXIT_OK
    key = "models/perm_f_symmetry.json"
    assert m2["artifacts"][key] == manifest["artifacts"][key]


def test_missing_denominators_fail_in_covariates(bundle_dir, tmp_path):
    _, cfg = bundle_dir
    inputs = dict(cfg["inputs"])
    dens = Path(inputs["denominators"]).read_text().splitlines()
    partial = tmp_path / "den.csv"
    partial.write_text("\n".join(dens[:-3]) + "\n")
    inputs["denominators"] = str(partial)
    status, manifest = run_pipeline(dict(cfg, inputs=inputs, normalization="both_pop",
                                         out=str(tmp_path / "o"), stages=["covariates"]))
    assert status == EXIT_INPUT
    assert manifest["failed_stage"] == "covariates"
    assert json.loads((tmp_path / "o/manifest.json").read_text())["exit_code"] == EXIT_INPUT
    inputs.pop("denominators")
    status, manifest = run_pipeline(dict(cfg, inputs=inputs, normalization="both_pop",
                                         out=str(tmp_path / "p"), stages=["covariates"]))
    assert (status, manifest["failed_stage"]) == (EXIT_INPUT, "covariates")


def test_normalized_flows_written(bundle_dir, tmp_path):
    _, cfg = bundle_dir
    status, manifest = run_pipeline(dict(cfg, normalization="sender_pop",
                                         out=str(tmp_path / "n"), stages=["covariates"]))
    assert status == EXIT_OK
    assert "covariates/flows_sender_pop.csv" in manifest["artifacts"]


def test_malformed_input_exits_two(bundle_dir, tmp_path):
    _, cfg = bundle_dir
    bad = tmp_path / "aff.csv"
    bad.write_text("person_id,place\nP1,IT01\n")
    inputs = dict(cfg["inputs"], affiliations=str(bad))
    status, manifest = run_pipeline(dict(cfg, inputs=inputs, out=str(tmp_path / "b")))
    assert status == EXIT_INPUT and manifest["failed_stage"] == "ingest"


def test_config_validation():
    with pytest.raises(ValueError, match="unknown config"):
        RunConfig.from_dict({"inputs": {}, "years": [1, 2], "out": "x", "bogus": 1})
    with pytest.raises(ValueError):
        RunConfig(inputs={"affiliations": "a", "regions": "r"}, years=(2, 1), out="x")


def test_cli_synth_and_pipeline(tmp_path, capsys):
    out = tmp_path / "cli"
    assert main(["synth", "--out", str(out), "--n-regions", "10", "--years", "4",
                 "--seed", "2", "--permutations", "19"]) == EXIT_OK
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["permutations"] == 19
    assert main(["ingest", "--config", str(out / "config.json")]) == EXIT_OK
    assert (out / "results/ingest/flows_year.csv").exists()
    assert main(["pipeline", "--config", str(out / "config.json"),
                 "--out", str(tmp_path / "r")]) == EXIT_OK
    res = tmp_path / "r"
    flows = str(res / "ingest/flows_year.csv")
    sub = tmp_path / "sub"
    assert main(["network", "--flows", flows, "--out", str(sub)]) == EXIT_OK
    assert main(["scores", "--flows", flows, "--out", str(sub)]) == EXIT_OK
    assert (sub / "edges.csv").read_bytes() == (res / "network/edges_cumulative.csv").read_bytes()
    assert (sub / "hits.csv").read_bytes() == (res / "network/hits.csv").read_bytes()
    for mode in ("in", "out", "total"):
        assert ((sub / f"score_{mode}.csv").read_bytes()
                == (res / f"network/score_{mode}.csv").read_bytes())
    assert main(["score-partition", "--scores", str(sub / "hits.csv"), "--out", str(sub)]) == 0
    assert ((sub / "partition.csv").read_bytes()
            == (res / "network/partition_hits.csv").read_bytes())
    assert main(["communities", "--flows", flows, "--out", str(sub)]) == EXIT_OK
    assert main(["anova", "--panel", str(res / "covariates/panel.csv"), "--partition",
                 str(sub / "partition.csv"), "--permutations", "19", "--seed", "2",
                 "--out", str(sub)]) == EXIT_OK
    assert (sub / "anova.csv").read_bytes() == (res / "tests/anova.csv").read_bytes()
    assert main(["spearman", "--flows", flows, "--permutations", "19", "--seed", "2",
                 "--out", str(sub)]) == EXIT_OK
    assert json.loads((sub / "spearman.json").read_text())["n_permutations"] == 19
    assert main(["pca", "--flows", flows, "--standardize", "--out", str(sub)]) == EXIT_OK
    dyads = str(res / "models/dyads.csv")
    assert main(["fit-network", "--dyads", dyads, "--variant", "final",
                 "--out", str(sub)]) == EXIT_OK
    piped = json.loads((res / "models/network_final.json").read_text())
    piped.pop("seed"), piped.pop("permutations")
    assert json.loads((sub / "network_final.json").read_text()) == piped
    assert main(["fit-mobility", "--mobility", str(res / "models/mobility.csv"),
                 "--response", "in", "--out", str(sub)]) == EXIT_OK
    assert main(["perm-f", "--dyads", dyads, "--permutations", "19", "--seed", "2",
                 "--out", str(sub)]) == EXIT_OK
    pf = json.loads((sub / "perm_f.json").read_text())
    assert pf["p_value"] == json.loads((res / "models/perm_f_symmetry.json").read_text()
                                       )["p_value"]


def test_cli_error_codes(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["network", "--flows", str(missing), "--out", str(tmp_path)]) == EXIT_INPUT
    assert "input error" in capsys.readouterr().err
    flat = tmp_path / "flat.csv"
    flat.write_text("year,sender,receiver,count\n2010,A,B,1\n2010,B,C,1\n2010,C,D,1\n")
    code = main(["spearman", "--flows", str(flat), "--out", str(tmp_path)])
    assert code in (EXIT_INPUT, EXIT_NUMERIC)
    with pytest.raises(SystemExit):
        main(["no-such-command"])
