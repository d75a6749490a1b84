"""Monte-Carlo experiment driver: drops, scheme pipelines, aggregation, files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baselines import (ALL_SCHEMES, BiasConfig, SchemeId, allocate_dl, cuda_ul, min_pl_ul)
from .matching import (MatchingParams, SwapContext, assign_unmatched,
                       build_preferences, certify_exchange_stable, spa_match,
                       station_capacities, swap_match)
from .mec import Assignment, MetricsReport, PowerAllocation, TaskDistribution, compute_metrics
from .power import (PowerSolverError, SolverParams, UplinkProblem, fpc_power_matrix,
                    solve_optimal_power)
from .topology import ConfigError, NetworkConfig, generate_topology, sample_channels

log = logging.getLogger(__name__)

SUMMARY_METRICS = MetricsReport.columns()
DIAGNOSTIC_COLUMNS = ["error", "n_fallback", "n_swaps", "swap_rounds", "late_swaps",
                      "swaps_decreasing", "exchange_stable", "solver_converged",
                      "solver_iterations", "solver_residual"]
SWAP_RTOL = 1e-12


@dataclass
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    solver: SolverParams = field(default_factory=SolverParams)
    bias: BiasConfig = field(default_factory=BiasConfig)
    matching: MatchingParams = field(default_factory=MatchingParams)
    tasks: TaskDistribution = field(default_factory=TaskDistribution)
    schemes: list = field(default_factory=lambda: [s.value for s in ALL_SCHEMES])
    n_drops: int = 50
    sweep_sbs: Optional[list] = None  # None: a single point at network.n_sbs
    output_dir: str = "results"
    seed: int = 0
    max_rounds: int = 5  # swap/OPA alternations for SPA_SM_OPA
    workers: int = 1

    def __post_init__(self):
        self.schemes = [SchemeId.parse(s).value if isinstance(s, str) else SchemeId(s).value
                        for s in self.schemes]
        if self.sweep_sbs is not None:
            self.sweep_sbs = [int(v) for v in self.sweep_sbs]
        self.validate()

    def validate(self):
        if not self.schemes:
            raise ConfigError("scheme list is empty")
        if len(set(self.schemes)) != len(self.schemes):
            raise ConfigError("duplicate schemes")
        if self.n_drops < 1:
            raise ConfigError("n_drops must be >= 1")
        if self.sweep_sbs is not None:
            if not self.sweep_sbs:
                raise ConfigError("sweep_sbs must be nonempty")
            if min(self.sweep_sbs) < 0:
                raise ConfigError("sweep_sbs values must be nonnegative")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def sweep_points(self) -> list:
        return list(self.sweep_sbs) if self.sweep_sbs is not None else [self.network.n_sbs]

    def network_at(self, n_sbs) -> NetworkConfig:
        return replace(self.network, n_sbs=n_sbs)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("network", "solver", "bias", "matching", "tasks"):
            d[key] = asdict(d[key])
        d["tasks"]["cycles_per_bit"] = list(d["tasks"]["cycles_per_bit"])
        d["schemes"] = list(self.schemes)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        bad = set(data) - known
        if bad:
            raise ConfigError(f"unknown experiment keys: {sorted(bad)}")
        d = dict(data)
        sub = {"network": NetworkConfig, "solver": SolverParams, "bias": BiasConfig,
               "matching": MatchingParams, "tasks": TaskDistribution}
        for key, typ in sub.items():
            if key in d and isinstance(d[key], dict):
                names = {f.name for f in fields(typ)}
                extra = set(d[key]) - names
                if extra:
                    raise ConfigError(f"unknown {key} keys: {sorted(extra)}")
                d[key] = typ(**d[key])
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass
class SchemeOutcome:
    metrics: Optional[MetricsReport]
    diagnostics: dict


@dataclass
class DropResult:
    sweep_value: Optional[int]
    drop: int
    seed: list
    schemes: dict  # scheme id -> SchemeOutcome


def drop_seed(master: int, sweep_index: int, drop: int) -> list:
    return [int(master), int(sweep_index), int(drop)]


def _fpc_vector(fpc, bs, sub):
    k = np.arange(len(bs))
    return np.where(sub >= 0, fpc[k, np.maximum(bs, 0)], 0.0)


def _diag(**kw) -> dict:
    out = {c: "" for c in DIAGNOSTIC_COLUMNS}
    out.update(kw)
    return out


class _Drop:
    """Everything one drop shares across schemes."""

    def __init__(self, cfg: ExperimentConfig, net: NetworkConfig, seed: list):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.cfg = cfg
        self.net = net
        self.topology = generate_topology(net, cfg.tasks, rng)
        self.channels = sample_channels(self.topology, net, rng)
        self.fpc = fpc_power_matrix(self.channels, net, cfg.solver)
        self.dl_bs, self.dl_sub, self.p_dl = allocate_dl(self.topology, self.channels, cfg.bias)
        self.bits = self.topology.input_bits()
        self._spa = None

    def assignment(self, bs, sub) -> Assignment:
        return Assignment(bs, sub, self.dl_bs, self.dl_sub)

    def score(self, bs, sub, p_ul) -> MetricsReport:
        return compute_metrics(self.topology, self.assignment(bs, sub),
                               PowerAllocation(p_ul, self.p_dl), self.channels)

    def spa(self):
        """SPA matching plus fallback assignment, cached for the SPA family."""
        if self._spa is None:
            top, ch = self.topology, self.channels
            K, M1, N = ch.ul.shape
            profile = build_preferences(top, ch, self.fpc, self.cfg.matching)
            caps = station_capacities(K, top.is_mbs(), N, self.cfg.matching)
            mt = spa_match(profile, caps)
            mt, flagged = assign_unmatched(mt, ch, _fpc_vector(self.fpc, mt.bs, mt.sub))
            self._spa = (mt, flagged)
        return self._spa

    def opa(self, bs, sub, p_start):
        problem = UplinkProblem(self.assignment(bs, sub), self.channels, self.bits,
                                self.topology.md_max_power_w(), self.cfg.solver)
        return solve_optimal_power(problem, self.cfg.solver, p_start)


def _run_scheme(d: _Drop, scheme: SchemeId) -> SchemeOutcome:
    if scheme is SchemeId.CUDA:
        bs, sub = cuda_ul(d.topology, d.channels, d.fpc, d.cfg.bias)
        p = _fpc_vector(d.fpc, bs, sub)
        return SchemeOutcome(d.score(bs, sub, p), _diag())
    if scheme is SchemeId.MinPL_G_FPC:
        bs, sub = min_pl_ul(d.topology, d.channels, d.fpc, d.cfg.bias)
        p = _fpc_vector(d.fpc, bs, sub)
        return SchemeOutcome(d.score(bs, sub, p), _diag())

    mt, flagged = d.spa()
    if scheme is SchemeId.SPA_FPC:
        p = _fpc_vector(d.fpc, mt.bs, mt.sub)
        return SchemeOutcome(d.score(mt.bs, mt.sub, p), _diag(n_fallback=len(flagged)))

    p = _fpc_vector(d.fpc, mt.bs, mt.sub)
    ctx = SwapContext(d.channels, p, d.bits)
    mt, swaps = swap_match(mt, ctx)
    n_swaps = swaps.n_swaps
    decreasing = swaps.all_decreasing(SWAP_RTOL)
    if scheme is SchemeId.SPA_SM_FPC:
        stable = certify_exchange_stable(mt, ctx)
        return SchemeOutcome(d.score(mt.bs, mt.sub, p),
                             _diag(n_fallback=len(flagged), n_swaps=n_swaps, swap_rounds=1,
                                   late_swaps=0, swaps_decreasing=decreasing,
                                   exchange_stable=stable))

    # SPA_SM_OPA: OPA, then swap -> OPA until no swap fires or the cap is hit
    late = 0
    rounds = 1
    error = ""
    res = None
    stable = ""
    try:
        res = d.opa(mt.bs, mt.sub, p)
        p = res.p
        while rounds < d.cfg.max_rounds:
            ctx = SwapContext(d.channels, p, d.bits)
            mt, swaps = swap_match(mt, ctx)
            decreasing = decreasing and swaps.all_decreasing(SWAP_RTOL)
            if swaps.n_swaps == 0:
                break
            rounds += 1
            late += swaps.n_swaps
            res = d.opa(mt.bs, mt.sub, p)
            p = res.p
        else:
            log.info("swap/OPA alternation stopped at the cap of %d rounds", d.cfg.max_rounds)
        stable = certify_exchange_stable(mt, SwapContext(d.channels, p, d.bits))
    except PowerSolverError as exc:
        error = f"PowerSolverError: {exc}"
        log.warning("OPA failed, keeping the last powers: %s", exc)
    diag = _diag(error=error, n_fallback=len(flagged), n_swaps=n_swaps + late,
                 swap_rounds=rounds, late_swaps=late, swaps_decreasing=decreasing,
                 exchange_stable=stable)
    if res is not None:
        diag.update(solver_converged=res.converged, solver_iterations=len(res.trace),
                    solver_residual=res.residual)
    return SchemeOutcome(d.score(mt.bs, mt.sub, p), diag)


def run_drop(cfg: ExperimentConfig, drop_index: int, sweep_index: int = 0) -> DropResult:
    """One network realisation scored under every configured scheme."""
    value = cfg.sweep_points()[sweep_index]
    seed = drop_seed(cfg.seed, sweep_index, drop_index)
    d = _Drop(cfg, cfg.network_at(value), seed)
    out = {}
    for name in cfg.schemes:
        scheme = SchemeId(name)
        try:
            out[name] = _run_scheme(d, scheme)
        except (ValueError, ArithmeticError, PowerSolverError) as exc:
            log.warning("drop %d, %s failed: %s", drop_index, name, exc)
            out[name] = SchemeOutcome(None, _diag(error=f"{type(exc).__name__}: {exc}"))
    return DropResult(value, drop_index, seed, out)


def _job(args):
    cfg, drop, sweep_index = args
    return run_drop(cfg, drop, sweep_index)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    drops: list  # DropResult, ordered by (sweep index, drop)

    def summary_rows(self) -> list:
        """Mean and std of every metric per (sweep value, scheme)."""
        rows = []
        for value in self.config.sweep_points():
            group = [d for d in self.drops if d.sweep_value == value]
            for name in self.config.schemes:
                ok = [d.schemes[name].metrics for d in group if d.schemes[name].metrics]
                row = {"n_sbs": "" if value is None else value, "scheme": name,
                       "n_drops": len(group), "n_failed": len(group) - len(ok)}
                for m in SUMMARY_METRICS:
                    vals = np.array([getattr(r, m) for r in ok], dtype=float)
                    row[f"{m}_mean"] = float(vals.mean()) if vals.size else math.nan
                    row[f"{m}_std"] = float(vals.std()) if vals.size else math.nan
                rows.append(row)
        return rows

    def mean(self, scheme: str, metric: str, n_sbs=None) -> float:
        vals = [getattr(d.schemes[scheme].metrics, metric) for d in self.drops
                if d.schemes[scheme].metrics and (n_sbs is None or d.sweep_value == n_sbs)]
        return float(np.mean(vals)) if vals else math.nan

    def drop_rows(self) -> list:
        rows = []
        for d in self.drops:
            for name in self.config.schemes:
                oc = d.schemes[name]
                row = {"n_sbs": "" if d.sweep_value is None else d.sweep_value,
                       "drop": d.drop, "seed": "-".join(map(str, d.seed)), "scheme": name}
                for m in SUMMARY_METRICS:
                    row[m] = getattr(oc.metrics, m) if oc.metrics else ""
                row.update({c: oc.diagnostics.get(c, "") for c in DIAGNOSTIC_COLUMNS})
                rows.append(row)
        return rows

    def failures(self) -> list:
        return [{"n_sbs": d.sweep_value, "drop": d.drop, "scheme": s,
                 "error": oc.diagnostics.get("error", "")}
                for d in self.drops for s, oc in d.schemes.items()
                if oc.diagnostics.get("error")]


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    jobs = [(cfg, drop, si) for si in range(len(cfg.sweep_points()))
            for drop in range(cfg.n_drops)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            drops = list(pool.map(_job, jobs))  # map preserves job order
    else:
        drops = [_job(j) for j in jobs]
    return ExperimentResult(cfg, drops)


# --------------------------------------------------------------------------
# output files


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _csv_text(rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\r\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _atomic_write(path: Path, data, binary=False) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb" if binary else "w", newline="" if not binary else None) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest(result: ExperimentResult) -> dict:
    cfg = result.config
    return {
        "config": cfg.to_dict(),
        "seeds": [{"n_sbs": d.sweep_value, "drop": d.drop, "seed": d.seed}
                  for d in result.drops],
        "failures": result.failures(),
        "versions": {"dude_mec": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "summary_columns": list(result.summary_rows()[0].keys()),
    }


def emit_outputs(result: ExperimentResult, out_dir, plots: bool = False) -> list:
    """Write summary.csv, drops.csv, manifest.json and optional SVG plots.

    Every file is replaced atomically; returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in (("summary.csv", _csv_text(result.summary_rows())),
                       ("drops.csv", _csv_text(result.drop_rows())),
                       ("manifest.json",
                        json.dumps(manifest(result), indent=2, sort_keys=True) + "\n")):
        _atomic_write(out / name, text)
        written.append(out / name)
    if plots:
        written += write_plots(result, out)
    return written


PLOT_METRICS = (("sum_latency", "Sum latency (s)"),
                ("energy_efficiency", "UL energy efficiency (bit/J)"),
                ("jain_ul", "Jain index, UL latency"),
                ("jain_exe", "Jain index, computation latency"))


def write_plots(result: ExperimentResult, out: Path) -> list:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dude-mec"
    cfg = result.config
    xs = cfg.sweep_points()
    paths = []
    for metric, label in PLOT_METRICS:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name in cfg.schemes:
            ax.plot(xs, [result.mean(name, metric, x) for x in xs], marker="o", label=name)
        ax.set_xlabel("Number of SBSs")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        path = out / f"{metric}.svg"
        _atomic_write(path, buf.getvalue())
        paths.append(path)

    pct = ["rate_p10", "rate_p20", "rate_p50", "rate_p80", "rate_p90"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(cfg.schemes)
    for i, name in enumerate(cfg.schemes):
        vals = [result.mean(name, m) / 1e3 for m in pct]
        ax.bar(np.arange(len(pct)) + i * width, vals, width, label=name)
    ax.set_xticks(np.arange(len(pct)) + 0.4 - width / 2)
    ax.set_xticklabels(["10th", "20th", "50th", "80th", "90th"])
    ax.set_ylabel("UL rate (kbit/s)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    path = out / "rate_percentiles.svg"
    _atomic_write(path, buf.getvalue())
    paths.append(path)
    return paths
