"""Monte Carlo estimation of FDR, TDR and MFDR for the testing procedures."""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .model import ModelParams, pi0_pi1, p_value, scenario1_theta
from .mtp import SubcriticalAlphaError, abh, alpha_star, bh, procedure_oracle, q_values, storey_pi0
from .sampler import GraphSpec, NoiseSpec, sample_scenario
from .vem import FitConfig, FitError, select_q

log = logging.getLogger(__name__)

PROCEDURES = ("vem", "oracle", "bh", "abh-storey", "abh-vem")
DEFAULT_ALPHAS = (0.005, 0.025, 0.05, 0.1, 0.15, 0.25)
CSV_COLUMNS = ("scenario", "procedure", "alpha", "fdr", "tdr", "mfdr", "fdr_se", "tdr_se", "reps", "failures")
MAX_FAILURE_RATE = 0.05
WORKERS_ENV = "NOISYSBM_WORKERS"


class BenchmarkError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    name: str
    graph: GraphSpec
    noise: NoiseSpec | None = None
    alphas: tuple = DEFAULT_ALPHAS
    reps: int = 100
    seed: int = 0
    procedures: tuple = ("vem", "bh", "abh-storey", "abh-vem")
    qmax: int = 3
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.procedures = tuple(self.procedures)
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not all(0 < a < 1 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1)")
        unknown = set(self.procedures) - set(PROCEDURES)
        if unknown:
            raise ValueError(f"unknown procedures {sorted(unknown)}; expected a subset of {PROCEDURES}")
        if "oracle" in self.procedures and self.graph.kind != "nsbm":
            raise ValueError("the oracle procedure needs an nsbm graph")
        if self.graph.kind != "nsbm" and self.noise is None:
            raise ValueError(f"graph kind {self.graph.kind!r} needs a noise block")
        bad = set(self.fit) - {f.name for f in fields(FitConfig)}
        if bad:
            raise ValueError(f"unknown fit options {sorted(bad)}")
        if self.qmax < 1:
            raise ValueError("qmax must be at least 1")

    @property
    def sigma0(self) -> float:
        if self.graph.kind == "nsbm":
            return float(self.graph.theta["sigma0"])
        return self.noise.sigma0

    def to_dict(self) -> dict:
        d = {"name": self.name, "graph": self.graph.to_dict()}
        if self.noise is not None:
            d["noise"] = asdict(self.noise)
        d.update(alphas=list(self.alphas), reps=self.reps, seed=self.seed,
                 procedures=list(self.procedures), qmax=self.qmax, fit=dict(self.fit))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        allowed = {f.name for f in fields(cls)}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown scenario keys {sorted(extra)}")
        if "name" not in d or "graph" not in d:
            raise ValueError("scenario needs 'name' and 'graph'")
        graph = dict(d.pop("graph"))
        if graph.get("kind") == "nsbm" and "theta" in graph:
            graph["theta"] = ModelParams.from_dict(graph["theta"]).to_dict()
        d["graph"] = GraphSpec(**graph)
        if d.get("noise") is not None:
            d["noise"] = NoiseSpec(**d["noise"])
        return cls(**d)


@dataclass
class BenchmarkRecord:
    scenario: str
    procedure: str
    alpha: float
    fdr: float
    tdr: float
    mfdr: float
    fdr_se: float
    tdr_se: float
    reps: int
    failures: int


# ---------------------------------------------------------------------------
# presets

def scenario_presets() -> dict[str, ScenarioConfig]:
    noise = NoiseSpec(1.0, 2.0, 1.0)
    n = 100
    m = n * (n - 1) // 2
    return {
        "scenario1": ScenarioConfig("scenario1", GraphSpec("nsbm", n, theta=scenario1_theta().to_dict()),
                                    procedures=PROCEDURES),
        "star": ScenarioConfig("star", GraphSpec("star", n), noise),
        "spider": ScenarioConfig("spider", GraphSpec("spider", n), noise),
        "ER": ScenarioConfig("ER", GraphSpec("erdos_renyi_M", n, M=m // 5), noise),
        "bipartite": ScenarioConfig("bipartite", GraphSpec("bipartite", n, p=0.2), noise),
        "PA": ScenarioConfig("PA", GraphSpec("preferential_attachment", n, edges_per_node=n // 10,
                                             n0=n // 5, p0=0.5), noise),
    }


# ---------------------------------------------------------------------------
# single replication

def fdp_tdp(rejected, A) -> tuple[float, float]:
    """Realized false discovery and true discovery proportions (``0/0 = 0``)."""
    rejected = np.asarray(rejected, dtype=bool)
    A = np.asarray(A).astype(bool)
    if rejected.shape != A.shape:
        raise ValueError("decisions and adjacency cover different edge sets")
    R = int(rejected.sum())
    V = int((rejected & ~A).sum())
    n1 = int(A.sum())
    return V / max(R, 1), ((R - V) / n1 if n1 else 0.0)


def _counts(rejected, A):
    R = int(rejected.sum())
    V = int((rejected & ~A).sum())
    return V, R, R - V, int(A.sum())


def run_replication(config: ScenarioConfig, rep: int) -> dict:
    """One paired replication: every procedure and level on the same data and fit.

    Returns per-procedure, per-level counts ``(V, R, TP, #edges)`` with shape
    ``(len(procedures), len(alphas), 4)``, or a failure reason.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, rep]))
    latent, X = sample_scenario(config.graph, config.noise, rng)
    A = latent.A.astype(bool)
    p = p_value(X.values, config.sigma0)
    out = np.zeros((len(config.procedures), len(config.alphas), 4), dtype=np.int64)

    fit_q = None
    if {"vem", "abh-vem"} & set(config.procedures):
        fit_cfg = FitConfig(**{**config.fit, "seed": int(rng.integers(2 ** 31))})
        try:
            q_hat, fits = select_q(X, config.qmax, fit_cfg)
        except FitError as exc:
            return {"rep": rep, "failed": True, "reason": str(exc)}
        fit = fits[q_hat]
        fit_q = q_hat
        pi0_hat = pi0_pi1(fit.theta)[0]
        qv = q_values(X, fit.Z_hat, fit.theta)
        is_zero, a_star = alpha_star(fit.theta)
    oracle_theta = ModelParams.from_dict(config.graph.theta) if "oracle" in config.procedures else None
    storey = storey_pi0(p)

    for k, proc in enumerate(config.procedures):
        for a_idx, alpha in enumerate(config.alphas):
            if proc == "vem":
                # below the critical level the procedure makes no rejections
                if alpha < pi0_hat and not is_zero and alpha <= a_star:
                    rejected = np.zeros_like(A)
                else:
                    rejected = qv <= alpha
            elif proc == "oracle":
                try:
                    rejected = procedure_oracle(X, latent.Z, oracle_theta, alpha).rejected
                except SubcriticalAlphaError:
                    rejected = np.zeros_like(A)
            elif proc == "bh":
                rejected = bh(p, alpha).rejected
            elif proc == "abh-storey":
                rejected = abh(p, alpha, storey).rejected
            else:
                rejected = abh(p, alpha, pi0_hat).rejected
            out[k, a_idx] = _counts(rejected, A)
    return {"rep": rep, "failed": False, "counts": out, "q_hat": fit_q}


def _replication_task(args):
    config, rep = args
    return run_replication(config, rep)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def _run_reps(config: ScenarioConfig, workers: int) -> list[dict]:
    tasks = [(config, rep) for rep in range(config.reps)]
    if workers == 1:
        results = [_replication_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication_task, tasks))
    return sorted(results, key=lambda r: r["rep"])


# ---------------------------------------------------------------------------
# aggregation

def _se(v: np.ndarray) -> float:
    return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def aggregate(config: ScenarioConfig, results: list[dict]) -> list[BenchmarkRecord]:
    ok = [r for r in results if not r["failed"]]
    failures = len(results) - len(ok)
    if failures > MAX_FAILURE_RATE * len(results):
        reasons = "; ".join(f"rep {r['rep']}: {r['reason']}" for r in results if r["failed"])[:500]
        raise BenchmarkError(f"{config.name}: {failures} of {len(results)} replications failed ({reasons})")
    for r in results:
        if r["failed"]:
            log.warning("%s rep %d excluded: %s", config.name, r["rep"], r["reason"])
    if not ok:
        raise BenchmarkError(f"{config.name}: no successful replications")
    counts = np.stack([r["counts"] for r in ok]).astype(float)  # (reps, P, A, 4)
    V, R, TP, N1 = (counts[..., i] for i in range(4))
    fdp = V / np.maximum(R, 1)
    tdp = np.where(N1 > 0, TP / np.where(N1 > 0, N1, 1), 0.0)
    records = []
    for k, proc in enumerate(config.procedures):
        for a_idx, alpha in enumerate(config.alphas):
            f, t = fdp[:, k, a_idx], tdp[:, k, a_idx]
            mfdr = V[:, k, a_idx].sum() / max(R[:, k, a_idx].sum(), 1.0)
            records.append(BenchmarkRecord(config.name, proc, alpha, float(f.mean()), float(t.mean()),
                                           float(mfdr), _se(f), _se(t), len(ok), failures))
    return records


def estimate_fdr_tdr(config: ScenarioConfig, workers: int | None = None) -> list[BenchmarkRecord]:
    return aggregate(config, _run_reps(config, resolve_workers(workers)))


# ---------------------------------------------------------------------------
# files

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_records(path, records: list[BenchmarkRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])


def read_records(path) -> list[BenchmarkRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                records.append(BenchmarkRecord(row[0], row[1], *map(float, row[2:8]), int(row[8]), int(row[9])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return records


def run_benchmark(configs: list[ScenarioConfig], out, workers: int | None = None) -> Path:
    """Run every scenario and write ``out`` (CSV) plus ``out`` with suffix ``.provenance.json``."""
    out = Path(out)
    workers = resolve_workers(workers)
    records, prov = [], []
    for cfg in configs:
        start = time.perf_counter()
        results = _run_reps(cfg, workers)
        records.extend(aggregate(cfg, results))
        q_hats = [r["q_hat"] for r in results if not r["failed"] and r["q_hat"] is not None]
        prov.append({
            "config": cfg.to_dict(),
            "replication_seeds": f"SeedSequence([{cfg.seed}, rep]) for rep in 0..{cfg.reps - 1}",
            "failures": [{"rep": r["rep"], "reason": r["reason"]} for r in results if r["failed"]],
            "q_hat_counts": {str(q): q_hats.count(q) for q in sorted(set(q_hats))},
            "wall_time_s": round(time.perf_counter() - start, 3),
        })
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records(out, records)
    meta = {"version": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "workers": workers, "scenarios": prov}
    out.with_suffix(".provenance.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out


def long_format(records: list[BenchmarkRecord]) -> list[tuple]:
    """Rows ``(scenario, procedure, alpha, metric, estimate, se)`` for plotting."""
    rows = []
    for r in records:
        rows.append((r.scenario, r.procedure, r.alpha, "fdr", r.fdr, r.fdr_se))
        rows.append((r.scenario, r.procedure, r.alpha, "tdr", r.tdr, r.tdr_se))
        rows.append((r.scenario, r.procedure, r.alpha, "mfdr", r.mfdr, float("nan")))
    return rows
