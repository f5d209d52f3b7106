import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from bcdeval.approx_models import ModelSpec
from bcdeval.errors import ConfigError, DegenerateRanking
from bcdeval.harness import ExperimentConfig, ResultRow, correlate_metrics, run_cell, run_sweep, spearman
from bcdeval.harness.cli import main, parse_models
from bcdeval.harness.experiment import config_from_manifest, read_rows_csv, stream

SMALL = dict(d=3, sample_sizes=(5, 20), dataset_seeds=2, model_seeds=2, heldout=20, posterior_samples=100,
             models=(ModelSpec("tempered", 4.0), ModelSpec("edge_noise", 0.1), ModelSpec("topk", 1)),
             metrics=("e_shd", "auroc", "nll", "graph_mmd"))


def csv_rows(rows):
    return [r.as_csv() for r in rows]


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8)
    with pytest.raises(DegenerateRanking):
        spearman([1, 1, 1], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=3, max_size=20))
def test_spearman_matches_scipy(pairs):
    x, y = np.array(pairs).T
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    assert spearman(x, y) == pytest.approx(spearmanr(x, y)[0], abs=1e-12)


def test_config_round_trip_and_hash():
    cfg = ExperimentConfig(**SMALL, out="/tmp/a")
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.config_hash == cfg.config_hash
    assert ExperimentConfig(**SMALL, out="/tmp/b").config_hash == cfg.config_hash
    assert ExperimentConfig(**{**SMALL, "d": 4}).config_hash != cfg.config_hash
    assert len(cfg.config_hash) == 16


@pytest.mark.parametrize("bad", [dict(metrics=()), dict(metrics=("nope",)), dict(d=0),
                                 dict(sample_sizes=(10, 5)), dict(scenario="other"),
                                 dict(models=(), include_exact=False)])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**SMALL, **bad})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"d": 3, "bogus": 1})


def test_streams_are_independent_and_reproducible():
    a = stream("0123456789abcdef", 1, 0, 5).normal(size=3)
    assert np.array_equal(a, stream("0123456789abcdef", 1, 0, 5).normal(size=3))
    assert not np.array_equal(a, stream("0123456789abcdef", 1, 1, 5).normal(size=3))


def test_parse_models():
    specs = parse_models("tempered:4,edge_noise:0.1,topk:10,bootstrap")
    assert [(s.kind.value, s.parameter) for s in specs] == [
        ("tempered", 4.0), ("edge_noise", 0.1), ("topk", 10.0), ("bootstrap", 1.0)]


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    cfg = ExperimentConfig(**SMALL, out=str(root))
    rows, errors = run_sweep(cfg, workers=1)
    return cfg, rows, errors, root


def test_row_count_and_outputs(sweep):
    cfg, rows, errors, root = sweep
    n_models = len(cfg.models) + 1
    assert len(rows) == len(cfg.sample_sizes) * cfg.dataset_seeds * cfg.model_seeds * n_models * len(cfg.metrics)
    assert errors == []
    assert csv_rows(read_rows_csv(root / "results.csv")) == csv_rows(rows)
    assert config_from_manifest(root / "manifest.json") == cfg
    exact = {r.value for r in rows if r.model_kind == "exact" and r.metric == "graph_mmd"}
    assert all(abs(v) < 0.2 for v in exact)


def test_cells_are_deterministic(sweep):
    cfg, rows, _, _ = sweep
    again, _ = run_cell(cfg, 1, 0)
    mine = [r for r in rows if r.dataset_seed == 1 and r.model_seed == 0]
    assert sorted(csv_rows(again)) == sorted(csv_rows(mine))


def test_resume_and_worker_independence(sweep, tmp_path):
    cfg, rows, _, root = sweep
    other = tmp_path / "resumed"
    run_sweep(cfg, workers=2, out=other)
    (other / "cells" / "dataset_00001.json").unlink()
    (other / "results.csv").unlink()
    resumed, _ = run_sweep(cfg, workers=1, resume=True, out=other)
    assert csv_rows(resumed) == csv_rows(rows)
    assert (other / "results.csv").read_text() == (root / "results.csv").read_text()


def test_correlation_matrix(sweep):
    _, rows, _, _ = sweep
    for mode in ("concat", "per_cell"):
        m = correlate_metrics(rows, mode=mode)
        assert np.allclose(m.rho, m.rho.T, equal_nan=True)
        assert all(m.rho[i, i] == 1.0 for i in range(len(m.metrics)) if m.n_cells[i, i])
        assert np.nanmax(np.abs(m.rho)) <= 1.0


def _toy_rows(values_a, values_b):
    rows = []
    for k, (a, b) in enumerate(zip(values_a, values_b)):
        for metric, v in (("e_shd", a), ("nll", b)):
            rows.append(ResultRow("h", 3, "ER", "identifiable", 5, 0, 0, "tempered", float(k + 1), metric, v))
    return rows


def test_correlation_of_identical_metric_is_one():
    m = correlate_metrics(_toy_rows([1, 2, 3, 4], [1, 2, 3, 4]))
    assert m["e_shd", "nll"] == pytest.approx(1.0)
    m = correlate_metrics(_toy_rows([1, 2, 3, 4], [4, 3, 2, 1]), mode="per_cell")
    assert m["e_shd", "nll"] == pytest.approx(-1.0)


def test_correlation_orients_higher_is_better():
    rows = [dataclasses.replace(r, metric="auroc") if r.metric == "nll" else r
            for r in _toy_rows([1, 2, 3], [1, 2, 3])]
    assert correlate_metrics(rows)["e_shd", "auroc"] == pytest.approx(-1.0)


def test_correlation_constant_metric_is_undefined():
    m = correlate_metrics(_toy_rows([1, 2, 3], [5, 5, 5]))
    assert math.isnan(m["e_shd", "nll"]) and m.notes


def test_cli_smoke(tmp_path, capsys):
    base = ["--d", "2", "--n-list", "5,10", "--dataset-seeds", "1", "--model-seeds", "1", "--heldout", "10",
            "--posterior-samples", "50", "--models", "tempered:4,topk:1", "--metrics", "e_shd,nll"]
    assert main(["generate", *base, "--out", str(tmp_path / "g")]) == 0
    assert json.loads((tmp_path / "g" / "datasets.json").read_text())["datasets"][0]["dataset_seed"] == 0
    assert main(["evaluate", *base, "--out", str(tmp_path / "e")]) == 0
    rows = read_rows_csv(tmp_path / "e" / "results.csv")
    assert len(rows) == 2 * 3 * 2
    assert main(["correlate", str(tmp_path / "e" / "results.csv"), "--mode", "both",
                 "--out", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c_concat.csv").exists() and (tmp_path / "c_per_cell.csv").exists()
    assert main(["entropy", *base, "--out", str(tmp_path / "h")]) == 0
    assert (tmp_path / "h" / "entropy.csv").read_text().count("\n") == 3
    assert main(["evaluate", *base[:-2], "--metrics", "", "--out", str(tmp_path / "x")]) == 2
