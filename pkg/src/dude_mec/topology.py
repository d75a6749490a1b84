"""Two-tier HetNet geometry, path-loss and per-subchannel channel gains."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .mec import TaskDistribution, TaskSpec

SPEED_OF_LIGHT = 2.998e8
MBS, SBS = "MBS", "SBS"
UL, DL = 0, 1


class ConfigError(ValueError):
    pass


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


@dataclass
class NetworkConfig:
    """Physical-layer and deployment parameters (Table-3 defaults).

    The default area is one macro cell, i.e. ``1 / mbs_density`` km^2, so the
    network holds exactly one MBS.  ``n_sbs`` overrides the density-derived
    SBS count (used by the SBS sweep).
    """

    area_width: Optional[float] = None  # m
    area_height: Optional[float] = None  # m
    mbs_density: float = 5.0  # per km^2
    sbs_density: float = 25.0
    md_density: float = 250.0
    n_sbs: Optional[int] = None
    carrier_frequency: float = 2e9  # Hz
    reference_distance: float = 1.0  # m
    pathloss_exponent: float = 3.0
    shadowing_mean: float = 0.0  # dB
    shadowing_std: float = 4.0  # dB
    ul_bandwidth: float = 5e6  # Hz
    dl_bandwidth: float = 5e6
    n_subchannels: int = 25
    noise_density: float = -174.0  # dBm/Hz
    mbs_power: float = 46.0  # dBm
    sbs_power: float = 30.0
    md_max_power: float = 23.0
    mbs_capacity: float = 36e9  # cycles/s
    sbs_capacity: float = 3.6e9
    backhaul_capacity: float = 10e6  # bit/s
    fpc_p0: float = -80.0  # dBm
    fpc_alpha: float = 0.7
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("mbs_density", "sbs_density", "md_density"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_subchannels < 1:
            raise ConfigError("n_subchannels must be >= 1")
        if not self.reference_distance > 0:
            raise ConfigError("reference_distance must be positive")
        if not self.pathloss_exponent > 0:
            raise ConfigError("pathloss_exponent must be positive")
        if not (self.ul_bandwidth > 0 and self.dl_bandwidth > 0):
            raise ConfigError("bandwidths must be positive")
        if self.shadowing_std < 0:
            raise ConfigError("shadowing_std must be nonnegative")
        if self.n_sbs is not None and self.n_sbs < 0:
            raise ConfigError("n_sbs must be nonnegative")
        if self.sbs_power >= self.mbs_power:
            raise ConfigError("SBS max power must be below MBS max power")
        if self.sbs_capacity >= self.mbs_capacity:
            raise ConfigError("SBS compute capacity must be below MBS capacity")
        w, h = self.width, self.height
        if not (w > 0 and h > 0):
            raise ConfigError("area dimensions must be positive")

    @property
    def width(self) -> float:
        if self.area_width is not None:
            return float(self.area_width)
        return math.sqrt(1e6 / self.mbs_density)

    @property
    def height(self) -> float:
        if self.area_height is not None:
            return float(self.area_height)
        return math.sqrt(1e6 / self.mbs_density)

    @property
    def area_km2(self) -> float:
        return self.width * self.height / 1e6

    @property
    def ul_subchannel_bandwidth(self) -> float:
        return self.ul_bandwidth / self.n_subchannels

    @property
    def dl_subchannel_bandwidth(self) -> float:
        return self.dl_bandwidth / self.n_subchannels

    @property
    def ul_noise_power(self) -> float:
        """Per-subchannel noise power sigma^2 = N0 * B in watts."""
        return float(dbm_to_watt(self.noise_density)) * self.ul_subchannel_bandwidth

    @property
    def dl_noise_power(self) -> float:
        return float(dbm_to_watt(self.noise_density)) * self.dl_subchannel_bandwidth

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**data)


def load_network_config(path) -> NetworkConfig:
    with open(path) as fh:
        data = json.load(fh)
    return NetworkConfig.from_dict(data.get("network", data))


@dataclass(frozen=True)
class Station:
    id: int
    kind: str
    position: tuple
    max_tx_power: float  # dBm
    compute_capacity: float  # cycles/s


@dataclass(frozen=True)
class Device:
    id: int
    position: tuple
    max_tx_power: float  # dBm
    task: TaskSpec


@dataclass(frozen=True)
class Topology:
    stations: tuple
    devices: tuple
    config: NetworkConfig = field(compare=False)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    def station_positions(self) -> np.ndarray:
        return np.array([s.position for s in self.stations], dtype=float)

    def device_positions(self) -> np.ndarray:
        return np.array([d.position for d in self.devices], dtype=float)

    def distances(self) -> np.ndarray:
        """MD-to-BS distance matrix, shape (K, M+1)."""
        diff = self.device_positions()[:, None, :] - self.station_positions()[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def station_powers_dbm(self) -> np.ndarray:
        return np.array([s.max_tx_power for s in self.stations])

    def compute_capacities(self) -> np.ndarray:
        return np.array([s.compute_capacity for s in self.stations])

    def is_mbs(self) -> np.ndarray:
        return np.array([s.kind == MBS for s in self.stations])

    def tasks(self) -> list:
        return [d.task for d in self.devices]

    def input_bits(self) -> np.ndarray:
        return np.array([d.task.input_bits for d in self.devices])

    def md_max_power_w(self) -> np.ndarray:
        return dbm_to_watt([d.max_tx_power for d in self.devices])


def node_counts(cfg: NetworkConfig) -> tuple[int, int]:
    """(number of SBSs, number of MDs) from densities and area."""
    n_sbs = cfg.n_sbs if cfg.n_sbs is not None else int(round(cfg.sbs_density * cfg.area_km2))
    n_md = int(round(cfg.md_density * cfg.area_km2))
    return n_sbs, n_md


def generate_topology(cfg: NetworkConfig, tasks: Optional[TaskDistribution] = None,
                      rng: Optional[np.random.Generator] = None) -> Topology:
    """Place one MBS, the SBSs and the MDs uniformly over the area.

    Counts are ``round(density * area)``.  Without an explicit ``rng`` the
    draw is seeded from ``cfg.seed``.
    """
    cfg.validate()
    tasks = tasks or TaskDistribution()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n_sbs, n_md = node_counts(cfg)
    if n_md < 1:
        raise ConfigError("configuration yields zero mobile devices")
    size = np.array([cfg.width, cfg.height])
    bs_pos = rng.uniform(0.0, 1.0, size=(n_sbs + 1, 2)) * size
    md_pos = rng.uniform(0.0, 1.0, size=(n_md, 2)) * size

    stations = [Station(0, MBS, tuple(bs_pos[0]), cfg.mbs_power, cfg.mbs_capacity)]
    stations += [Station(m, SBS, tuple(bs_pos[m]), cfg.sbs_power, cfg.sbs_capacity)
                 for m in range(1, n_sbs + 1)]
    specs = tasks.sample(n_md, rng)
    devices = [Device(k, tuple(md_pos[k]), cfg.md_max_power, specs[k]) for k in range(n_md)]
    return Topology(tuple(stations), tuple(devices), cfg)


def pathloss_db(d, cfg: NetworkConfig, shadowing=0.0):
    """Close-in reference distance path-loss in dB.

    Distances below ``reference_distance`` are clamped to it.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    d0 = cfg.reference_distance
    d = np.maximum(d, d0)
    fspl = 20.0 * np.log10(4.0 * np.pi * d0 * cfg.carrier_frequency / SPEED_OF_LIGHT)
    out = fspl + 10.0 * cfg.pathloss_exponent * np.log10(d / d0) + shadowing
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ChannelTensor:
    """Linear power gains per (MD, BS, subchannel) for each link direction.

    ``ul`` and ``dl`` have shape (K, M+1, N).  ``pathloss`` (K, M+1) is the
    large-scale loss in dB including shadowing but not fading; FPC, RSRP and
    min-PL association use it.
    """

    ul: np.ndarray
    dl: np.ndarray
    pathloss: np.ndarray
    shadowing: np.ndarray
    ul_bandwidth: float = 200e3  # per subchannel, Hz
    dl_bandwidth: float = 200e3
    ul_noise: float = 8e-16  # per subchannel, W
    dl_noise: float = 8e-16

    def gain(self, k: int, m: int, n: int, direction: int = UL) -> float:
        return float((self.ul if direction == UL else self.dl)[k, m, n])

    @property
    def shape(self):
        return self.ul.shape


def sample_channels(topology: Topology, cfg: NetworkConfig,
                    rng: Optional[np.random.Generator] = None, seed=None) -> ChannelTensor:
    """Draw shadowing per MD-BS link and Rayleigh power fading per subchannel.

    Shadowing is shared by both directions; UL and DL fading are independent.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
    K, M1, N = topology.n_devices, topology.n_stations, cfg.n_subchannels
    chi = rng.normal(cfg.shadowing_mean, cfg.shadowing_std, size=(K, M1))
    pl = pathloss_db(topology.distances(), cfg, chi)
    large = 10.0 ** (-pl / 10.0)
    fading = rng.exponential(1.0, size=(2, K, M1, N))
    ul = large[:, :, None] * fading[0]
    dl = large[:, :, None] * fading[1]
    for arr in (ul, dl, pl, chi):
        arr.setflags(write=False)
    return ChannelTensor(ul=ul, dl=dl, pathloss=pl, shadowing=chi,
                         ul_bandwidth=cfg.ul_subchannel_bandwidth,
                         dl_bandwidth=cfg.dl_subchannel_bandwidth,
                         ul_noise=cfg.ul_noise_power, dl_noise=cfg.dl_noise_power)


def write_topology_csv(topology: Topology, path) -> None:
    """One row per node: id, kind, x, y."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "kind", "x", "y"])
        for s in topology.stations:
            w.writerow([s.id, s.kind, repr(s.position[0]), repr(s.position[1])])
        for d in topology.devices:
            w.writerow([d.id, "MD", repr(d.position[0]), repr(d.position[1])])
