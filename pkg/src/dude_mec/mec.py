"""Task model, link rates, latency decomposition and network metrics.

Every resource-allocation scheme is scored by the functions in this module.
Array conventions: ``K`` devices, ``M+1`` stations (index 0 is the MBS),
``N`` subchannels.  A subchannel index of ``-1`` marks an unserved link.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

INF_LATENCY = math.inf
PERCENTILES = (10, 20, 50, 80, 90)


@dataclass(frozen=True)
class TaskSpec:
    input_bits: float
    output_ratio: float = 0.2
    cycles_per_bit: float = 330.0

    def __post_init__(self):
        if not self.input_bits > 0:
            raise ValueError("input_bits must be positive")
        if not self.output_ratio > 0:
            raise ValueError("output_ratio must be positive")
        if not self.cycles_per_bit > 0:
            raise ValueError("cycles_per_bit must be positive")

    @property
    def output_bits(self) -> float:
        return self.output_ratio * self.input_bits

    @property
    def cycles(self) -> float:
        return self.cycles_per_bit * self.input_bits


@dataclass
class TaskDistribution:
    """B^I ~ U[min, max] bits, fixed alpha, beta uniform over workload classes."""

    input_bits_min: float = 3e6
    input_bits_max: float = 6e6
    output_ratio: float = 0.2
    cycles_per_bit: tuple = (330.0, 960.0, 1900.0)

    def __post_init__(self):
        self.cycles_per_bit = tuple(float(b) for b in self.cycles_per_bit)
        if not (0 < self.input_bits_min <= self.input_bits_max):
            raise ValueError("need 0 < input_bits_min <= input_bits_max")
        if not self.output_ratio > 0 or not self.cycles_per_bit:
            raise ValueError("task parameters must be positive")
        if min(self.cycles_per_bit) <= 0:
            raise ValueError("cycles_per_bit classes must be positive")

    def sample(self, n: int, rng: np.random.Generator) -> list:
        bits = rng.uniform(self.input_bits_min, self.input_bits_max, size=n)
        beta = rng.choice(np.asarray(self.cycles_per_bit), size=n)
        return [TaskSpec(float(b), self.output_ratio, float(c)) for b, c in zip(bits, beta)]


@dataclass
class Assignment:
    """Serving station and subchannel of every MD, per link direction."""

    ul_bs: np.ndarray
    ul_sub: np.ndarray
    dl_bs: np.ndarray
    dl_sub: np.ndarray

    def __post_init__(self):
        for name in ("ul_bs", "ul_sub", "dl_bs", "dl_sub"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=int).copy())

    @property
    def n_devices(self) -> int:
        return len(self.ul_bs)

    @property
    def ul_served(self) -> np.ndarray:
        return self.ul_sub >= 0

    @property
    def dl_served(self) -> np.ndarray:
        return self.dl_sub >= 0

    def decoupled(self) -> np.ndarray:
        return self.ul_bs != self.dl_bs

    def server_loads(self, n_stations: int) -> np.ndarray:
        """K-bar per station: number of UL-served MDs offloading to it."""
        served = self.ul_served
        return np.bincount(self.ul_bs[served], minlength=n_stations)

    def with_ul(self, bs, sub) -> "Assignment":
        return Assignment(bs, sub, self.dl_bs, self.dl_sub)

    def copy(self) -> "Assignment":
        return Assignment(self.ul_bs, self.ul_sub, self.dl_bs, self.dl_sub)


@dataclass
class PowerAllocation:
    """UL power per MD and DL power per (station, subchannel), in watts."""

    p_ul: np.ndarray
    p_dl: np.ndarray

    def __post_init__(self):
        self.p_ul = np.asarray(self.p_ul, dtype=float).copy()
        self.p_dl = np.asarray(self.p_dl, dtype=float).copy()


@dataclass(frozen=True)
class LatencyBreakdown:
    l_ul: float
    l_exe: float
    l_bh: float
    l_dl: float

    @property
    def total(self) -> float:
        return self.l_ul + self.l_exe + self.l_bh + self.l_dl


def _cochannel_gain_matrix(gains, bs, sub):
    """G[j, k] = gain of transmitter j into receiver of link k on k's subchannel.

    Only pairs sharing a subchannel (j != k, both served) are nonzero.
    """
    served = sub >= 0
    K = len(bs)
    G = np.zeros((K, K))
    idx = np.flatnonzero(served)
    if idx.size == 0:
        return G
    G[:, idx] = gains[:, bs[idx], sub[idx]]
    same = (sub[:, None] == sub[None, :]) & served[:, None] & served[None, :]
    np.fill_diagonal(same, False)
    return np.where(same, G, 0.0)


def ul_sinr(assignment: Assignment, p_ul, channels) -> np.ndarray:
    """UL SINR per MD at its serving station; 0 for unserved MDs."""
    bs, sub = assignment.ul_bs, assignment.ul_sub
    p = np.asarray(p_ul, dtype=float)
    served = sub >= 0
    sig = np.zeros(len(bs))
    idx = np.flatnonzero(served)
    sig[idx] = p[idx] * channels.ul[idx, bs[idx], sub[idx]]
    interference = p @ _cochannel_gain_matrix(channels.ul, bs, sub)
    return np.where(served, sig / (interference + channels.ul_noise), 0.0)


def ul_rates(assignment: Assignment, p_ul, channels) -> np.ndarray:
    return channels.ul_bandwidth * np.log2(1.0 + ul_sinr(assignment, p_ul, channels))


def ul_rate(k: int, assignment: Assignment, powers: PowerAllocation, channels) -> float:
    """Rate of MD ``k`` with co-channel interference from every other UL MD."""
    if assignment.ul_sub[k] < 0:
        return 0.0
    m, n = assignment.ul_bs[k], assignment.ul_sub[k]
    p = powers.p_ul
    others = np.flatnonzero((assignment.ul_sub == n))
    others = others[others != k]
    interference = float(np.sum(p[others] * channels.ul[others, m, n]))
    sinr = p[k] * channels.ul[k, m, n] / (interference + channels.ul_noise)
    return float(channels.ul_bandwidth * np.log2(1.0 + sinr))


def dl_active(assignment: Assignment, n_stations: int, n_sub: int) -> np.ndarray:
    """active[m, n] is True when station m transmits to some MD on subchannel n."""
    active = np.zeros((n_stations, n_sub), dtype=bool)
    served = assignment.dl_served
    active[assignment.dl_bs[served], assignment.dl_sub[served]] = True
    return active


def dl_sinr(assignment: Assignment, p_dl, channels) -> np.ndarray:
    bs, sub = assignment.dl_bs, assignment.dl_sub
    K, M1, N = channels.dl.shape
    p_dl = np.asarray(p_dl, dtype=float)
    tx = p_dl * dl_active(assignment, M1, N)  # (M+1, N)
    out = np.zeros(K)
    idx = np.flatnonzero(sub >= 0)
    for k in idx:
        m, n = bs[k], sub[k]
        rx = tx[:, n] * channels.dl[k, :, n]
        interference = rx.sum() - rx[m]
        out[k] = p_dl[m, n] * channels.dl[k, m, n] / (interference + channels.dl_noise)
    return out


def dl_rates(assignment: Assignment, p_dl, channels) -> np.ndarray:
    return channels.dl_bandwidth * np.log2(1.0 + dl_sinr(assignment, p_dl, channels))


def dl_rate(k: int, assignment: Assignment, powers: PowerAllocation, channels) -> float:
    """DL rate of MD ``k``; interference from other stations active on its subchannel."""
    return float(dl_rates(assignment, powers.p_dl, channels)[k])


def _safe_div(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), INF_LATENCY)


def latency_arrays(topology, assignment: Assignment, powers: PowerAllocation, channels,
                   server_loads=None) -> dict:
    """Vectorised latency components per MD (seconds).

    Unserved links and zero rates give ``inf``.  Tasks run at the UL serving
    station, whose capacity is shared equally among its UL MDs.
    """
    cfg = topology.config
    bits_in = np.array([d.task.input_bits for d in topology.devices])
    bits_out = np.array([d.task.output_bits for d in topology.devices])
    cycles = np.array([d.task.cycles for d in topology.devices])
    if server_loads is None:
        server_loads = assignment.server_loads(topology.n_stations)
    server_loads = np.asarray(server_loads)
    r_ul = ul_rates(assignment, powers.p_ul, channels)
    r_dl = dl_rates(assignment, powers.p_dl, channels)
    cap = topology.compute_capacities()
    ul_ok = assignment.ul_served
    share = np.zeros(len(bits_in))
    share[ul_ok] = cap[assignment.ul_bs[ul_ok]] / server_loads[assignment.ul_bs[ul_ok]]
    decoupled = assignment.decoupled()
    l_bh = np.where(decoupled, bits_out / cfg.backhaul_capacity, 0.0)
    return {
        "ul": _safe_div(bits_in, r_ul),
        "exe": _safe_div(cycles, share),
        "bh": l_bh,
        "dl": _safe_div(bits_out, r_dl),
        "rate_ul": r_ul,
        "rate_dl": r_dl,
    }


def latency(k: int, assignment: Assignment, powers: PowerAllocation, channels, topology,
            server_loads=None) -> LatencyBreakdown:
    lat = latency_arrays(topology, assignment, powers, channels, server_loads)
    return LatencyBreakdown(float(lat["ul"][k]), float(lat["exe"][k]),
                            float(lat["bh"][k]), float(lat["dl"][k]))


def energy_efficiency(assignment: Assignment, powers: PowerAllocation, channels) -> float:
    """Sum UL rate over sum UL transmit power (bit/s/W) across UL-served MDs."""
    served = assignment.ul_served
    total_power = float(np.sum(powers.p_ul[served]))
    if total_power <= 0:
        raise ValueError("energy efficiency undefined for zero total power")
    return float(np.sum(ul_rates(assignment, powers.p_ul, channels)[served]) / total_power)


def jain_index(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("jain_index needs at least one value")
    if np.any(x < 0):
        raise ValueError("jain_index expects nonnegative values")
    sq = float(np.sum(x * x))
    if sq == 0:
        raise ValueError("jain_index undefined for all-zero input")
    return float(np.sum(x)) ** 2 / (x.size * sq)


def rate_percentiles(rates: Sequence[float], percentiles=PERCENTILES) -> dict:
    """Nearest-rank empirical percentiles."""
    x = np.sort(np.asarray(rates, dtype=float))
    if x.size == 0:
        raise ValueError("rate_percentiles needs a nonempty list")
    out = {}
    for p in percentiles:
        rank = max(1, math.ceil(p / 100.0 * x.size))
        out[p] = float(x[rank - 1])
    return out


@dataclass
class MetricsReport:
    """Per-drop, per-scheme network metrics.

    Sums, fairness and percentiles run over MDs served in both directions;
    ``n_unserved`` counts the rest (their latency is infinite).
    """

    sum_latency: float
    sum_ul_latency: float
    sum_computation_latency: float
    sum_backhaul_latency: float
    sum_dl_latency: float
    energy_efficiency: float
    jain_ul: float
    jain_exe: float
    rate_p10: float
    rate_p20: float
    rate_p50: float
    rate_p80: float
    rate_p90: float
    n_served: int
    n_unserved: int
    n_decoupled: int

    @classmethod
    def columns(cls) -> list:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(topology, assignment: Assignment, powers: PowerAllocation,
                    channels) -> MetricsReport:
    lat = latency_arrays(topology, assignment, powers, channels)
    served = assignment.ul_served & assignment.dl_served
    if not np.any(served):
        raise ValueError("no MD is served in both directions")
    l_ul, l_exe = lat["ul"][served], lat["exe"][served]
    total = l_ul + l_exe + lat["bh"][served] + lat["dl"][served]
    pct = rate_percentiles(lat["rate_ul"][served])
    return MetricsReport(
        sum_latency=float(total.sum()),
        sum_ul_latency=float(l_ul.sum()),
        sum_computation_latency=float(l_exe.sum()),
        sum_backhaul_latency=float(lat["bh"][served].sum()),
        sum_dl_latency=float(lat["dl"][served].sum()),
        energy_efficiency=energy_efficiency(assignment, powers, channels),
        jain_ul=jain_index(l_ul),
        jain_exe=jain_index(l_exe),
        rate_p10=pct[10], rate_p20=pct[20], rate_p50=pct[50],
        rate_p80=pct[80], rate_p90=pct[90],
        n_served=int(served.sum()),
        n_unserved=int((~served).sum()),
        n_decoupled=int(np.sum(assignment.decoupled() & served)),
    )


def write_metrics_csv(rows: list, path) -> None:
    """``rows`` are dicts with identifying keys followed by MetricsReport fields."""
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def metrics_summary_json(reports: dict) -> str:
    """JSON summary of ``{scheme: MetricsReport}``."""
    return json.dumps({k: v.as_dict() for k, v in reports.items()}, indent=2, sort_keys=True)
