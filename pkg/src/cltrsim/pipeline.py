"""Experiment grid: production rankers -> click logs -> propensities -> CLTR models -> report.

Artifact tree (``<out>``)::

    seed_<s>/rankers/skyline.npz, pr<frac>.npz, <name>.json (test metrics)
    seed_<s>/pr<frac>/<simulator>/s<n>/click_log.csv
                                      propensity_{em,reg,mle}.csv
                                      models/<Kind>.npz, <Kind>_metrics.csv, <Kind>.json
    report.csv
    failures.csv          (only when something failed)
    plots/seed<s>_pr<frac>_<simulator>_s<n>.svg

Every artifact has a ``.sha256`` sidecar. An artifact whose sidecar matches its
content is reused on rerun, so an interrupted grid resumes where it stopped.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import multiprocessing
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import yaml

from .click_sim import ClickLog, SimParams, generate_log
from .letor import DatasetSplit, load_split, make_toy_dataset, normalize_features, subsample_labeled
from .metrics import EvalReport, MetricUndefinedError, evaluate_ranker, inc_ninc
from .mlp import MlpParams
from .propensity import DEFAULT_FLOOR, PropensityTable, em_pbm, mle_dcm, regression_em_pbm
from .train import ALL_KINDS, LossKind, TrainConfig, train_cltr, train_ranker, with_kind

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "CLTRSIM_DATA_ROOT"
REPORT_COLUMNS = [
    "model", "fraction", "simulator", "sessions", "seed",
    "ndcg@1", "ndcg@3", "ndcg@5", "ndcg@10", "arp", "inc", "ninc",
]
STAGES = ("train-production", "simulate", "estimate-propensity", "train-cltr", "evaluate", "run-all")


class DatasetMissingError(FileNotFoundError):
    pass


@dataclass
class ExperimentConfig:
    train_path: str | None = None
    valid_path: str | None = None
    test_path: str | None = None
    data_root: str | None = None
    feature_dim: int | None = None
    toy_seed: int | None = None  # use the generated toy dataset instead of files
    production_fractions: list[float] = field(default_factory=lambda: [0.01, 0.2])
    simulators: list[SimParams] = field(
        default_factory=lambda: [SimParams.pbm(), SimParams.dcm(), SimParams.cbcm()]
    )
    sessions_per_query: list[int] = field(default_factory=lambda: [5, 20, 100])
    loss_kinds: list[LossKind] = field(default_factory=lambda: list(ALL_KINDS))
    seeds: list[int] = field(default_factory=lambda: [0])
    train: TrainConfig = field(default_factory=TrainConfig)
    production: TrainConfig | None = None
    propensity_floor: float = DEFAULT_FLOOR
    em_max_iter: int = 50
    em_tol: float = 1e-5
    output: str = "runs/default"

    def __post_init__(self):
        for name in ("production_fractions", "simulators", "sessions_per_query", "loss_kinds", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"config list {name!r} must not be empty")
        if any(not 0 < f <= 1 for f in self.production_fractions):
            raise ValueError("production fractions must lie in (0, 1]")
        if self.toy_seed is None and not all((self.train_path, self.valid_path, self.test_path)):
            raise ValueError("config needs dataset.train/valid/test paths or dataset.toy")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        ds = d.pop("dataset", {}) or {}
        kw: dict = {}
        if "toy" in ds:
            toy = ds["toy"]
            kw["toy_seed"] = int(toy.get("seed", 0)) if isinstance(toy, dict) else 0
        kw.update(
            train_path=ds.get("train"), valid_path=ds.get("valid"), test_path=ds.get("test"),
            data_root=ds.get("root"), feature_dim=ds.get("feature_dim"),
        )
        if "simulators" in d:
            kw["simulators"] = [SimParams.from_dict(s) for s in d.pop("simulators")]
        if "loss_kinds" in d:
            kw["loss_kinds"] = [LossKind(k) for k in d.pop("loss_kinds")]
        train = d.pop("train", {}) or {}
        kw["train"] = TrainConfig(**train)
        if "production" in d:
            kw["production"] = TrainConfig(**{**train, **(d.pop("production") or {})})
        prop = d.pop("propensity", {}) or {}
        kw["propensity_floor"] = prop.get("floor", DEFAULT_FLOOR)
        kw["em_max_iter"] = prop.get("em_max_iter", 50)
        kw["em_tol"] = prop.get("em_tol", 1e-5)
        for key in ("production_fractions", "sessions_per_query", "seeds", "output"):
            if key in d:
                kw[key] = d.pop(key)
        if d:
            raise ValueError(f"unknown config keys: {sorted(d)}")
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    @property
    def production_config(self) -> TrainConfig:
        return self.production or replace(self.train, loss_kind=None)

    def resolve(self, p: str) -> Path:
        root = os.environ.get(DATA_ROOT_ENV) or self.data_root
        path = Path(p)
        return path if path.is_absolute() or root is None else Path(root) / path

    def cells(self):
        for seed in self.seeds:
            for frac in self.production_fractions:
                for sim in self.simulators:
                    for n in self.sessions_per_query:
                        yield Cell(seed, frac, sim, n)


@dataclass(frozen=True)
class Cell:
    seed: int
    fraction: float
    sim: SimParams
    sessions: int

    def path(self, out: Path) -> Path:
        return out / f"seed_{self.seed}" / f"pr{self.fraction:g}" / self.sim.name / f"s{self.sessions}"

    @property
    def label(self) -> str:
        return f"seed{self.seed}_pr{self.fraction:g}_{self.sim.name}_s{self.sessions}"


def load_dataset(cfg: ExperimentConfig) -> DatasetSplit:
    if cfg.toy_seed is not None:
        raw = make_toy_dataset(seed=cfg.toy_seed)
        train, scaler = normalize_features(raw.train)
        return DatasetSplit(train, scaler.transform(raw.valid), scaler.transform(raw.test), raw.feature_dim)
    paths = [cfg.resolve(p) for p in (cfg.train_path, cfg.valid_path, cfg.test_path)]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DatasetMissingError(f"dataset file(s) not found: {', '.join(missing)}")
    return load_split(*paths, feature_dim=cfg.feature_dim)[0]


# -- checksummed artifacts ---------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".sha256")


def is_fresh(path: Path) -> bool:
    side = _sidecar(path)
    if not path.is_file() or not side.is_file():
        return False
    return side.read_text().strip() == hashlib.sha256(path.read_bytes()).hexdigest()


def write_artifact(path: Path, data: bytes) -> None:
    """Write ``data`` and its checksum; identical existing content is left untouched."""
    digest = hashlib.sha256(data).hexdigest()
    if is_fresh(path) and _sidecar(path).read_text().strip() == digest:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    _sidecar(path).write_text(digest + "\n")


def _params_bytes(params: MlpParams) -> bytes:
    buf = io.BytesIO()
    params.save(buf)
    return buf.getvalue()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _report_json(r: EvalReport) -> dict:
    return {"model": r.model_name, "ndcg": {str(k): v for k, v in r.ndcg_at_k.items()},
            "arp": r.arp, "n_queries": r.n_queries}


# -- stages ------------------------------------------------------------------


def _fraction_seed(seed: int, fraction: float) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{fraction!r}".encode()).digest()[:4], "little")


def production_rankers(cfg: ExperimentConfig, split: DatasetSplit, seed: int, out: Path):
    """Train (or reuse) the skyline and one production ranker per fraction."""
    rdir = out / f"seed_{seed}" / "rankers"
    pcfg = replace(cfg.production_config, seed=seed)
    jobs = [("skyline", split.train)] + [
        (f"pr{f:g}", subsample_labeled(split.train, f, _fraction_seed(seed, f)))
        for f in cfg.production_fractions
    ]
    rankers, evals = {}, {}
    for name, groups in jobs:
        ckpt, meta = rdir / f"{name}.npz", rdir / f"{name}.json"
        if is_fresh(ckpt) and is_fresh(meta):
            rankers[name] = MlpParams.load(ckpt)
            evals[name] = json.loads(meta.read_text())
            continue
        log.info("seed %d: training %s on %d queries", seed, name, len(groups))
        res = train_ranker(groups, split.valid, pcfg)
        rankers[name] = res.params
        evals[name] = _report_json(evaluate_ranker(name, res.params, split.test))
        evals[name]["n_train_queries"] = len(groups)
        write_artifact(rdir / f"{name}_metrics.csv", res.metrics_csv().encode())
        write_artifact(ckpt, _params_bytes(res.params))
        write_artifact(meta, _json_bytes(evals[name]))
    return rankers, evals


def _cell_log(cfg, split, cell: Cell, ranker: MlpParams, cdir: Path) -> ClickLog:
    path = cdir / "click_log.csv"
    if is_fresh(path):
        return ClickLog.load(path)
    clog = generate_log(split.train, ranker, cell.sessions, cell.sim, cell.seed)
    write_artifact(path, clog.to_text().encode())
    return clog


def _cell_tables(cfg, split, cell: Cell, clog: ClickLog, cdir: Path, sources: Iterable[str]):
    tables = {}
    for src in sorted(set(sources)):
        path = cdir / f"propensity_{src}.csv"
        if is_fresh(path):
            tables[src] = PropensityTable.load(path)
            continue
        if src == "em":
            t = em_pbm(clog, cfg.propensity_floor, max_iter=cfg.em_max_iter, tol=cfg.em_tol)
        elif src == "reg":
            t, _ = regression_em_pbm(clog, split.train, cfg.propensity_floor,
                                     max_iter=cfg.em_max_iter, tol=cfg.em_tol, seed=cell.seed)
        else:
            t = mle_dcm(clog, cfg.propensity_floor)
        write_artifact(path, t.to_text().encode())
        tables[src] = t
    return tables


def run_cell(cfg: ExperimentConfig, split: DatasetSplit, cell: Cell, ranker: MlpParams,
             out: Path, until: str = "run-all") -> list[dict]:
    """Run one grid cell up to ``until``; returns failure records (empty on success)."""
    cdir = cell.path(out)
    clog = _cell_log(cfg, split, cell, ranker, cdir)
    if until == "simulate":
        return []
    tables = _cell_tables(cfg, split, cell, clog, cdir,
                          [k.propensity_source for k in cfg.loss_kinds if k.propensity_source])
    if until == "estimate-propensity":
        return []
    failures = []
    tcfg = replace(cfg.train, seed=cell.seed)
    for kind in cfg.loss_kinds:
        ckpt = cdir / "models" / f"{kind.value}.npz"
        meta = cdir / "models" / f"{kind.value}.json"
        if is_fresh(ckpt) and is_fresh(meta):
            continue
        try:
            res = train_cltr(with_kind(tcfg, kind), clog, split.train, split.valid,
                             tables.get(kind.propensity_source))
            report = _report_json(evaluate_ranker(kind.value, res.params, split.test))
            report.update(best_step=res.best_step, best_valid_ndcg5=res.best_valid_ndcg5)
            write_artifact(cdir / "models" / f"{kind.value}_metrics.csv", res.metrics_csv().encode())
            write_artifact(ckpt, _params_bytes(res.params))
            write_artifact(meta, _json_bytes(report))
        except Exception as exc:  # isolate failures per model
            log.error("%s %s failed: %s", cell.label, kind.value, exc)
            failures.append({"cell": cell.label, "model": kind.value,
                             "error": f"{type(exc).__name__}: {exc}",
                             "trace": traceback.format_exc(limit=3)})
    return failures


# -- report ------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def _row(model, cell_keys, ev, pr5, sky5):
    nd = ev["ndcg"]
    try:
        inc, ninc = inc_ninc(nd["5"], pr5, sky5)
    except MetricUndefinedError:
        inc = ninc = float("nan")
    return [model, *cell_keys, *(_fmt(nd[k]) for k in ("1", "3", "5", "10")),
            _fmt(ev["arp"]), _fmt(inc), _fmt(ninc)]


def build_report(cfg: ExperimentConfig, out: Path, evals_by_seed: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for seed in cfg.seeds:
        evals = evals_by_seed[seed]
        sky5 = evals["skyline"]["ndcg"]["5"]
        for frac in cfg.production_fractions:
            pr = evals[f"pr{frac:g}"]
            pr5 = pr["ndcg"]["5"]
            w.writerow(_row("PR", [f"{frac:g}", "-", "-", seed], pr, pr5, sky5))
            w.writerow(_row("Skyline", [f"{frac:g}", "-", "-", seed], evals["skyline"], pr5, sky5))
            for sim in cfg.simulators:
                for n in cfg.sessions_per_query:
                    cdir = Cell(seed, frac, sim, n).path(out)
                    for kind in cfg.loss_kinds:
                        meta = cdir / "models" / f"{kind.value}.json"
                        if is_fresh(meta):
                            ev = json.loads(meta.read_text())
                            w.writerow(_row(kind.value, [f"{frac:g}", sim.name, n, seed], ev, pr5, sky5))
    return buf.getvalue()


# -- driver ------------------------------------------------------------------

_WORKER_STATE: dict = {}


def _cell_job(args):
    cell, until = args
    st = _WORKER_STATE
    try:
        return run_cell(st["cfg"], st["split"], cell, st["rankers"][cell.seed][f"pr{cell.fraction:g}"],
                        st["out"], until)
    except Exception as exc:
        return [{"cell": cell.label, "model": "*", "error": f"{type(exc).__name__}: {exc}",
                 "trace": traceback.format_exc(limit=3)}]


def run_pipeline(cfg: ExperimentConfig, until: str = "run-all", jobs: int = 1,
                 out: str | Path | None = None) -> int:
    """Run the grid up to stage ``until``. Returns an exit status (0 ok, 1 failures)."""
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    out = Path(out or cfg.output)
    split = load_dataset(cfg)
    rankers, evals = {}, {}
    for seed in cfg.seeds:
        rankers[seed], evals[seed] = production_rankers(cfg, split, seed, out)
    failures: list[dict] = []
    if until != "train-production":
        _WORKER_STATE.update(cfg=cfg, split=split, rankers=rankers, out=out)
        cells = [(c, until) for c in cfg.cells()]
        if jobs > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                results = list(pool.map(_cell_job, cells))
        else:
            results = [_cell_job(c) for c in cells]
        for r in results:
            failures.extend(r)

    fail_path = out / "failures.csv"
    if failures:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["cell", "model", "error"], extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(failures)
        write_artifact(fail_path, buf.getvalue().encode())
    elif fail_path.exists():
        fail_path.unlink()
        _sidecar(fail_path).unlink(missing_ok=True)

    if until in ("evaluate", "run-all"):
        report = build_report(cfg, out, evals)
        write_artifact(out / "report.csv", report.encode())
        if until == "run-all":
            from .plots import emit_plots

            emit_plots(out / "report.csv", out / "plots",
                       cells=[c.label for c in cfg.cells()])
    return 1 if failures else 0
