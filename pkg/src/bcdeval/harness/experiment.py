"""Sweeps over (sample size, dataset seed, model seed) cells, metric tables and rank correlations.

Every random draw comes from a Philox generator whose SeedSequence is keyed on
the config hash plus a tuple (stream tag, dataset seed, ...). Output therefore
depends only on the config, never on scheduling or worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .. import __version__
from ..approx_models import ModelKind, ModelSpec, realize_model
from ..entropy import KlEntropySpec, posterior_entropy
from ..errors import BcdEvalError, ConfigError, DegenerateRanking
from ..exact_posterior import ExactPosterior, exact_graph_posterior, sample_exact, scenario_prior
from ..graphs import GraphFamily, GraphFamilySpec, random_graph
from ..metrics import DEFAULT_INTERVENTION_VALUES, HIGHER_IS_BETTER, METRIC_NAMES, evaluate_all
from ..scm import Dataset, LinearGaussianScm, Scenario, ScmPriorSpec, draw_scm, rescale, sample

SCHEMA_VERSION = 1
RNG_SCHEME = "philox4x64/seedsequence(config_hash; tag, dataset_seed, ...)"
WORKERS_ENV = "BCDEVAL_WORKERS"
CSV_COLUMNS = ("config_hash", "d", "graph_family", "scenario", "N", "dataset_seed", "model_seed",
               "model_kind", "model_param", "metric", "value")

TAG_TRUTH, TAG_TRAIN, TAG_HELDOUT, TAG_MODEL, TAG_METRIC, TAG_ENTROPY = range(6)

DEFAULT_POPULATION = (
    ModelSpec(ModelKind.TEMPERED, 1.0),
    ModelSpec(ModelKind.TEMPERED, 4.0),
    ModelSpec(ModelKind.TEMPERED, 16.0),
    ModelSpec(ModelKind.EDGE_NOISE, 0.1),
    ModelSpec(ModelKind.EDGE_NOISE, 0.3),
    ModelSpec(ModelKind.TOPK, 1),
    ModelSpec(ModelKind.TOPK, 10),
    ModelSpec(ModelKind.BOOTSTRAP, 50),
)


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 5
    graph_family: GraphFamily = GraphFamily.ER
    edges_per_node: int = 1
    scenario: Scenario = Scenario.IDENTIFIABLE
    sample_sizes: tuple[int, ...] = (5, 10, 100, 1000)
    dataset_seeds: int = 20
    model_seeds: int = 3
    normalize: bool = False
    heldout: int = 100
    posterior_samples: int = 1000
    intervention_values: tuple[float, ...] = DEFAULT_INTERVENTION_VALUES
    models: tuple[ModelSpec, ...] = DEFAULT_POPULATION
    metrics: tuple[str, ...] = METRIC_NAMES
    include_exact: bool = True
    out: str | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "graph_family", GraphFamily(str(getattr(self.graph_family, "value",
                                                                              self.graph_family)).upper()))
            object.__setattr__(self, "scenario", Scenario(self.scenario))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "intervention_values", tuple(float(v) for v in self.intervention_values))
        object.__setattr__(self, "models", tuple(m if isinstance(m, ModelSpec) else ModelSpec(**m)
                                                 for m in self.models))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        counts = (self.d, self.edges_per_node, self.dataset_seeds, self.model_seeds, self.heldout,
                  self.posterior_samples)
        if min(counts) < 1 or not self.sample_sizes or min(self.sample_sizes) < 1:
            raise ConfigError("all counts must be >= 1")
        if list(self.sample_sizes) != sorted(self.sample_sizes):
            raise ConfigError("sample sizes must be sorted ascending")
        if not self.metrics:
            raise ConfigError("metric list is empty")
        unknown = set(self.metrics) - set(METRIC_NAMES)
        if unknown:
            raise ConfigError(f"unknown metrics: {sorted(unknown)}")
        if not self.models and not self.include_exact:
            raise ConfigError("no models to evaluate")
        if self.normalize and self.sample_sizes[0] < 2:
            raise ConfigError("normalization needs N >= 2")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["graph_family"] = self.graph_family.value
        out["scenario"] = self.scenario.value
        out["models"] = [{"kind": m.kind.value, "parameter": m.parameter} for m in self.models]
        for key in ("sample_sizes", "intervention_values", "metrics"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(raw) - names
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**raw)

    @property
    def config_hash(self) -> str:
        """Stable 16-hex-digit digest of everything except the output path."""
        body = self.to_dict()
        body.pop("out")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def graph_spec(self) -> GraphFamilySpec:
        return GraphFamilySpec(self.graph_family, self.d, self.edges_per_node)


def stream(config_hash: str, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(config_hash, 16), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def seed_sequence(config_hash: str, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(config_hash, 16), spawn_key=tuple(int(k) for k in key))


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class ResultRow:
    config_hash: str
    d: int
    graph_family: str
    scenario: str
    N: int
    dataset_seed: int
    model_seed: int
    model_kind: str
    model_param: float
    metric: str
    value: float

    def as_csv(self) -> list[str]:
        out = [str(getattr(self, c)) for c in CSV_COLUMNS]
        out[CSV_COLUMNS.index("model_param")] = repr(float(self.model_param))
        out[CSV_COLUMNS.index("value")] = repr(float(self.value))
        return out


@dataclass(frozen=True, eq=False)
class GroundTruth:
    scm: LinearGaussianScm
    train: np.ndarray          # (max N, d) raw samples; size-N data is the first N rows
    heldout: np.ndarray        # (H, d)


@dataclass(frozen=True, eq=False)
class CellData:
    truth: LinearGaussianScm   # in the units of ``train``
    train: Dataset
    heldout: Dataset
    exact: ExactPosterior


def ground_truth(config: ExperimentConfig, dataset_seed: int) -> GroundTruth:
    h = config.config_hash
    rng = stream(h, TAG_TRUTH, dataset_seed)
    graph = random_graph(config.graph_spec(), rng)
    scm = draw_scm(graph, ScmPriorSpec(config.scenario), rng)
    train = sample(scm, config.sample_sizes[-1], seed=stream(h, TAG_TRAIN, dataset_seed)).samples
    heldout = sample(scm, config.heldout, seed=stream(h, TAG_HELDOUT, dataset_seed)).samples
    return GroundTruth(scm, train, heldout)


def cell_data(config: ExperimentConfig, gt: GroundTruth, n: int) -> CellData:
    x = gt.train[:n]
    truth, heldout = gt.scm, gt.heldout
    if config.normalize:
        scale = x.std(axis=0, ddof=1)
        if np.any(scale < 1e-12):
            raise ConfigError(f"a training column is constant at N={n}")
        x = x / scale
        heldout = heldout / scale
        truth = rescale(truth, scale)
    exact = exact_graph_posterior(x, scenario_prior(config.scenario))
    return CellData(truth, Dataset(x, standardized=config.normalize), Dataset(heldout), exact)


def _population(config: ExperimentConfig) -> list[ModelSpec]:
    models = list(config.models)
    if config.include_exact:
        models.insert(0, ModelSpec(ModelKind.EXACT, 1.0))
    return models


def _evaluate_models(config: ExperimentConfig, data: CellData, n: int, dataset_seed: int,
                     model_seed: int) -> tuple[list[ResultRow], list[dict]]:
    h = config.config_hash
    rows, errors = [], []
    for idx, spec in enumerate(_population(config)):
        key = (dataset_seed, n, model_seed, idx)
        try:
            q = realize_model(spec, data.exact, data.train, config.posterior_samples,
                              scenario_prior(config.scenario), stream(h, TAG_MODEL, *key))
            report = evaluate_all(q, truth=data.truth, exact=data.exact, heldout=data.heldout,
                                  values=config.intervention_values, n_interventional=config.heldout,
                                  m_mmd=config.posterior_samples, seed=seed_sequence(h, TAG_METRIC, *key),
                                  metrics=config.metrics)
            values = report.values
            for name, msg in report.metadata["errors"].items():
                errors.append({"N": n, "dataset_seed": dataset_seed, "model_seed": model_seed,
                               "model": spec.label, "metric": name, "error": msg})
        except (BcdEvalError, ValueError, ArithmeticError) as exc:
            values = {name: float("nan") for name in config.metrics}
            errors.append({"N": n, "dataset_seed": dataset_seed, "model_seed": model_seed,
                           "model": spec.label, "metric": "*", "error": f"{type(exc).__name__}: {exc}"})
        for name in config.metrics:
            rows.append(ResultRow(h, config.d, config.graph_family.value, config.scenario.value, n,
                                  dataset_seed, model_seed, spec.kind.value, float(spec.parameter), name,
                                  float(values[name])))
    return rows, errors


def run_cell(config: ExperimentConfig, dataset_seed: int, model_seed: int,
             _cache: dict | None = None) -> tuple[list[ResultRow], list[dict]]:
    """All sample sizes for one (dataset seed, model seed) pair.

    ``_cache`` lets callers share the exact posterior across model seeds.
    """
    cache = {} if _cache is None else _cache
    rows, errors = [], []
    gt = cache.get("truth") or ground_truth(config, dataset_seed)
    cache["truth"] = gt
    for n in config.sample_sizes:
        try:
            if n not in cache:
                cache[n] = cell_data(config, gt, n)
            data = cache[n]
        except (BcdEvalError, ValueError, ArithmeticError) as exc:
            errors.append({"N": n, "dataset_seed": dataset_seed, "model_seed": model_seed,
                           "model": "*", "metric": "*", "error": f"{type(exc).__name__}: {exc}"})
            for spec in _population(config):
                for name in config.metrics:
                    rows.append(ResultRow(config.config_hash, config.d, config.graph_family.value,
                                          config.scenario.value, n, dataset_seed, model_seed,
                                          spec.kind.value, float(spec.parameter), name, float("nan")))
            continue
        r, e = _evaluate_models(config, data, n, dataset_seed, model_seed)
        rows += r
        errors += e
    return rows, errors


def _run_dataset(config: ExperimentConfig, dataset_seed: int):
    cache: dict = {}
    out = []
    for ms in range(config.model_seeds):
        out.append(run_cell(config, dataset_seed, ms, cache))
    return out


def _fragment_path(root: Path, dataset_seed: int) -> Path:
    return root / "cells" / f"dataset_{dataset_seed:05d}.json"


def _write_fragment(path: Path, rows: list[ResultRow], errors: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    payload = {"schema_version": SCHEMA_VERSION, "rows": [r.as_csv() for r in rows], "errors": errors}
    tmp.write_text(json.dumps(payload))
    os.replace(tmp, path)


def _read_fragment(path: Path) -> tuple[list[ResultRow], list[dict]]:
    payload = json.loads(path.read_text())
    return [_row_from_strings(r) for r in payload["rows"]], payload["errors"]


def _sweep_job(args):
    config, dataset_seed, root = args
    rows, errors = [], []
    for r, e in _run_dataset(config, dataset_seed):
        rows += r
        errors += e
    if root is not None:
        _write_fragment(_fragment_path(Path(root), dataset_seed), rows, errors)
    return dataset_seed, rows, errors


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def _sort_key(config: ExperimentConfig):
    kinds = [(s.kind.value, float(s.parameter)) for s in _population(config)]
    metric_pos = {m: i for i, m in enumerate(config.metrics)}

    def key(r: ResultRow):
        return (r.N, r.dataset_seed, r.model_seed, kinds.index((r.model_kind, r.model_param)),
                metric_pos[r.metric])
    return key


def run_sweep(config: ExperimentConfig, workers: int | None = None, resume: bool = False,
              out: str | Path | None = None) -> tuple[list[ResultRow], list[dict]]:
    """Run every cell, writing per-dataset fragments under ``out`` when given.

    With ``resume`` existing fragments are reused, so an interrupted sweep
    finishes with the same rows as an uninterrupted one.
    """
    root = Path(out) if out is not None else (Path(config.out) if config.out else None)
    workers = worker_count() if workers is None else max(1, int(workers))
    done: dict[int, tuple] = {}
    todo = []
    for ds in range(config.dataset_seeds):
        frag = _fragment_path(root, ds) if root is not None else None
        if resume and frag is not None and frag.exists():
            done[ds] = _read_fragment(frag)
        else:
            todo.append((config, ds, str(root) if root is not None else None))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, todo))
    else:
        results = [_sweep_job(job) for job in todo]
    for ds, rows, errors in results:
        done[ds] = (rows, errors)
    rows, errors = [], []
    for ds in sorted(done):
        rows += done[ds][0]
        errors += done[ds][1]
    rows.sort(key=_sort_key(config))
    errors.sort(key=lambda e: (e["N"], e["dataset_seed"], e["model_seed"], e["model"], e["metric"]))
    if root is not None:
        emit_report(config, rows, errors, root)
    return rows, errors


# ---------------------------------------------------------------------------
# reports


def _row_from_strings(r: Sequence[str]) -> ResultRow:
    rec = dict(zip(CSV_COLUMNS, r))
    return ResultRow(rec["config_hash"], int(rec["d"]), rec["graph_family"], rec["scenario"], int(rec["N"]),
                     int(rec["dataset_seed"]), int(rec["model_seed"]), rec["model_kind"],
                     float(rec["model_param"]), rec["metric"], float(rec["value"]))


def write_rows_csv(rows: Iterable[ResultRow], path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in rows:
                w.writerow(r.as_csv())
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_rows_csv(path: str | Path) -> list[ResultRow]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ConfigError(f"{path}: unexpected header {header}")
            return [_row_from_strings(r) for r in reader]
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc


def manifest(config: ExperimentConfig, errors: list[dict] | None = None, n_rows: int | None = None) -> dict:
    return {"schema_version": SCHEMA_VERSION, "version": __version__, "rng_scheme": RNG_SCHEME,
            "config_hash": config.config_hash, "config": config.to_dict(), "n_rows": n_rows,
            "errors": errors or []}


def config_from_manifest(path: str | Path) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text())
    return ExperimentConfig.from_dict(raw["config"])


def emit_report(config: ExperimentConfig, rows: list[ResultRow], errors: list[dict], root: str | Path,
                fmt: str = "csv") -> list[Path]:
    """results.csv (or results.json) plus manifest.json under ``root``."""
    if not rows:
        raise ValueError("nothing to emit")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    if fmt == "csv":
        paths.append(write_rows_csv(rows, root / "results.csv"))
    elif fmt == "json":
        p = root / "results.json"
        p.write_text(json.dumps({"schema_version": SCHEMA_VERSION, "columns": list(CSV_COLUMNS),
                                 "rows": [r.as_csv() for r in rows]}, indent=1) + "\n")
        paths.append(p)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    p = root / "manifest.json"
    p.write_text(json.dumps(manifest(config, errors, len(rows)), indent=2, sort_keys=True) + "\n")
    paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# rank correlation


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("spearman needs two equal-length vectors of length >= 2")
    rx, ry = rankdata(x) - (len(x) + 1) / 2, rankdata(y) - (len(y) + 1) / 2
    sx, sy = np.sqrt(rx @ rx), np.sqrt(ry @ ry)
    if sx == 0 or sy == 0:
        raise DegenerateRanking("a ranking is constant")
    return float(np.clip(rx @ ry / (sx * sy), -1.0, 1.0))


@dataclass
class CorrelationMatrix:
    metrics: tuple[str, ...]
    rho: np.ndarray
    n_cells: np.ndarray
    mode: str = "concat"
    notes: list[str] = field(default_factory=list)

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = self.metrics.index(pair[0]), self.metrics.index(pair[1])
        return float(self.rho[i, j])


def _cells(rows: Iterable[ResultRow], include_exact: bool) -> dict:
    cells: dict = {}
    for r in rows:
        if r.model_kind == ModelKind.EXACT.value and not include_exact:
            continue
        key = (r.config_hash, r.scenario, r.N, r.dataset_seed, r.model_seed)
        model = (r.model_kind, r.model_param)
        value = -r.value if r.metric in HIGHER_IS_BETTER else r.value
        cells.setdefault(key, {}).setdefault(r.metric, {})[model] = value
    return cells


def correlate_metrics(rows: Iterable[ResultRow], metrics: Sequence[str] | None = None, mode: str = "concat",
                      include_exact: bool = False) -> CorrelationMatrix:
    """Spearman correlation between the model rankings each metric induces.

    Within a cell (dataset seed, model seed, N) the population is ranked per
    metric with "lower is better" orientation. ``concat`` joins the per-cell
    rank vectors and correlates once; ``per_cell`` averages per-cell Spearman
    coefficients. Cells with missing values or a constant ranking are skipped.
    """
    if mode not in ("concat", "per_cell"):
        raise ValueError(f"unknown mode {mode!r}")
    cells = _cells(rows, include_exact)
    if not cells:
        raise ValueError("no cells to correlate")
    if metrics is None:
        present = {m for c in cells.values() for m in c}
        metrics = [m for m in METRIC_NAMES if m in present]
    metrics = tuple(metrics)
    k = len(metrics)
    rho = np.full((k, k), np.nan)
    counts = np.zeros((k, k), dtype=int)
    notes = []
    for a in range(k):
        for b in range(a, k):
            ra, rb, per_cell = [], [], []
            for key in sorted(cells):
                ca, cb = cells[key].get(metrics[a], {}), cells[key].get(metrics[b], {})
                models = sorted(set(ca) & set(cb))
                if len(models) < 2:
                    continue
                va = np.array([ca[m] for m in models])
                vb = np.array([cb[m] for m in models])
                if np.isnan(va).any() or np.isnan(vb).any():
                    continue
                if mode == "per_cell":
                    try:
                        per_cell.append(spearman(va, vb))
                    except DegenerateRanking:
                        continue
                else:
                    ra.append(rankdata(va))
                    rb.append(rankdata(vb))
            if mode == "per_cell":
                n = len(per_cell)
                value = float(np.mean(per_cell)) if n else np.nan
            else:
                n = len(ra)
                try:
                    value = spearman(np.concatenate(ra), np.concatenate(rb)) if n else np.nan
                except DegenerateRanking:
                    value, n = np.nan, 0
            if a == b and n:
                value = 1.0
            if n == 0:
                notes.append(f"{metrics[a]} vs {metrics[b]}: undefined (no usable cells)")
            rho[a, b] = rho[b, a] = value
            counts[a, b] = counts[b, a] = n
    return CorrelationMatrix(metrics, rho, counts, mode, notes)


def write_correlation_csv(matrix: CorrelationMatrix, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("schema_version", "mode", "metric_a", "metric_b", "rho", "n_cells"))
        for i, a in enumerate(matrix.metrics):
            for j, b in enumerate(matrix.metrics):
                w.writerow((SCHEMA_VERSION, matrix.mode, a, b, repr(float(matrix.rho[i, j])),
                            int(matrix.n_cells[i, j])))
    return path


# ---------------------------------------------------------------------------
# entropy curves and dataset export


@dataclass(frozen=True)
class EntropyPoint:
    scenario: str
    N: int
    dataset_seed: int
    entropy: float


def entropy_curve(config: ExperimentConfig, spec: KlEntropySpec | None = None) -> list[EntropyPoint]:
    """Entropy of the exact posterior's likelihood embedding for every (N, dataset seed)."""
    out = []
    for ds in range(config.dataset_seeds):
        gt = ground_truth(config, ds)
        for n in config.sample_sizes:
            try:
                data = cell_data(config, gt, n)
                rng = stream(config.config_hash, TAG_ENTROPY, ds, n)
                q = sample_exact(data.exact, config.posterior_samples, rng)
                value = posterior_entropy(q, data.heldout, spec, seed=rng)
            except (BcdEvalError, ValueError, ArithmeticError):
                value = float("nan")
            out.append(EntropyPoint(config.scenario.value, n, ds, value))
    return out


def write_entropy_csv(points: Iterable[EntropyPoint], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("schema_version", "scenario", "N", "dataset_seed", "entropy"))
        for p in points:
            w.writerow((SCHEMA_VERSION, p.scenario, p.N, p.dataset_seed, repr(float(p.entropy))))
    return path


def export_datasets(config: ExperimentConfig, path: str | Path) -> Path:
    """Ground-truth SCMs plus training and held-out samples as one JSON document."""
    items = []
    for ds in range(config.dataset_seeds):
        gt = ground_truth(config, ds)
        items.append({"dataset_seed": ds, "edges": [list(e) for e in gt.scm.graph.edge_list()],
                      "weights": gt.scm.weights.tolist(), "noise_vars": gt.scm.noise_vars.tolist(),
                      "train": gt.train.tolist(), "heldout": gt.heldout.tolist()})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, "version": __version__,
                                "rng_scheme": RNG_SCHEME, "config": config.to_dict(),
                                "datasets": items}) + "\n")
    return path
