"""Reference association and subchannel-allocation rules.

CUDA associates both directions by biased RSRP; Min-PL-G-FPC decouples the
UL to the (biased) minimum path-loss station.  Both allocate subchannels
greedily.  The DL side is shared by every scheme.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields

import numpy as np

from .topology import MBS


class SchemeId(str, enum.Enum):
    CUDA = "CUDA"
    MinPL_G_FPC = "MinPL_G_FPC"
    SPA_FPC = "SPA_FPC"
    SPA_SM_FPC = "SPA_SM_FPC"
    SPA_SM_OPA = "SPA_SM_OPA"

    @classmethod
    def parse(cls, text: str) -> "SchemeId":
        key = text.strip().replace("-", "_")
        for s in cls:
            if s.value.lower() == key.lower():
                return s
        raise ValueError(f"unknown scheme {text!r}; choose from {[s.value for s in cls]}")


ALL_SCHEMES = tuple(SchemeId)


@dataclass
class BiasConfig:
    """Association biases in dB per station kind."""

    dl_bias_mbs: float = 0.0
    dl_bias_sbs: float = 0.0
    ul_bias_mbs: float = 0.0
    ul_bias_sbs: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in asdict(self).values()):
            raise ValueError("biases must be finite")

    def dl(self, is_mbs) -> np.ndarray:
        return np.where(is_mbs, self.dl_bias_mbs, self.dl_bias_sbs)

    def ul(self, is_mbs) -> np.ndarray:
        return np.where(is_mbs, self.ul_bias_mbs, self.ul_bias_sbs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BiasConfig":
        bad = set(d) - {f.name for f in fields(cls)}
        if bad:
            raise ValueError(f"unknown bias keys: {sorted(bad)}")
        return cls(**d)


def _is_mbs(stations) -> np.ndarray:
    return np.array([s.kind == MBS for s in stations])


def rsrp_dbm(stations, channels, n_sub: int) -> np.ndarray:
    """Per-subchannel reference power received from every station, (K, M+1)."""
    ref = np.array([s.max_tx_power for s in stations]) - 10.0 * np.log10(n_sub)
    return ref[None, :] - channels.pathloss


def associate_biased_rsrp(k: int, stations, channels, bias: BiasConfig = BiasConfig()) -> int:
    n_sub = channels.ul.shape[2]
    score = rsrp_dbm(stations, channels, n_sub)[k] + bias.dl(_is_mbs(stations))
    return int(np.argmax(score))  # first max = lowest id


def associate_min_pl(k: int, stations, pathloss, fpc_powers_w, bias: BiasConfig = BiasConfig()
                     ) -> int:
    """argmax_m P_{k,m} W_m / PL_{k,m}, evaluated in dB.

    ``fpc_powers_w[k, m]`` is the FPC power MD k would use toward station m.
    """
    p_dbm = 10.0 * np.log10(np.asarray(fpc_powers_w)[k]) + 30.0
    score = p_dbm + bias.ul(_is_mbs(stations)) - np.asarray(pathloss)[k]
    return int(np.argmax(score))


def greedy_subchannels(members, station: int, gains, powers, noise: float, n_sub: int) -> dict:
    """Greedy allocation inside one cell.

    (MD, subchannel) pairs are visited by decreasing SNR; each MD and each
    subchannel is used at most once.  MDs left over when the cell has more
    MDs than subchannels map to -1.

    ``gains`` is the (K, M+1, N) gain array of the link direction and
    ``powers[k]`` the transmit power on the link of MD k.
    """
    members = [int(k) for k in members]
    out = {k: -1 for k in members}
    if not members:
        return out
    ks = np.repeat(members, n_sub)
    ns = np.tile(np.arange(n_sub), len(members))
    snr = np.asarray(powers)[ks] * gains[ks, station, ns] / noise
    order = np.lexsort((ns, ks, -snr))
    used = set()
    for i in order:
        k, n = int(ks[i]), int(ns[i])
        if out[k] >= 0 or n in used:
            continue
        out[k] = n
        used.add(n)
        if len(used) == n_sub:
            break
    return out


def _greedy_all(bs, gains, powers, noise, n_stations, n_sub):
    sub = np.full(len(bs), -1)
    for m in range(n_stations):
        members = np.flatnonzero(bs == m)
        for k, n in greedy_subchannels(members, m, gains, powers, noise, n_sub).items():
            sub[k] = n
    return sub


def allocate_dl(topology, channels, bias: BiasConfig = BiasConfig()) -> tuple:
    """DL association, subchannels and equal power split shared by all schemes.

    Returns (dl_bs, dl_sub, p_dl) with p_dl of shape (M+1, N) in watts.
    """
    K, M1, N = channels.dl.shape
    stations = topology.stations
    score = rsrp_dbm(stations, channels, N) + bias.dl(_is_mbs(stations))[None, :]
    dl_bs = np.argmax(score, axis=1)
    p_station = 10.0 ** ((topology.station_powers_dbm() - 30.0) / 10.0)
    p_dl = np.repeat((p_station / N)[:, None], N, axis=1)
    # per-MD transmit power on its DL link is its station's per-subchannel power
    p_link = p_dl[dl_bs, 0]
    dl_sub = _greedy_all(dl_bs, channels.dl, p_link, channels.dl_noise, M1, N)
    return dl_bs, dl_sub, p_dl


def cuda_ul(topology, channels, fpc_matrix, bias: BiasConfig = BiasConfig()) -> tuple:
    """UL side of CUDA: same station as the DL, greedy subchannels, FPC power."""
    K, M1, N = channels.ul.shape
    score = rsrp_dbm(topology.stations, channels, N) + bias.dl(_is_mbs(topology.stations))[None, :]
    bs = np.argmax(score, axis=1)
    p = fpc_matrix[np.arange(K), bs]
    sub = _greedy_all(bs, channels.ul, p, channels.ul_noise, M1, N)
    return bs, sub


def min_pl_ul(topology, channels, fpc_matrix, bias: BiasConfig = BiasConfig()) -> tuple:
    K, M1, N = channels.ul.shape
    is_mbs = _is_mbs(topology.stations)
    score = 10.0 * np.log10(fpc_matrix) + 30.0 + bias.ul(is_mbs)[None, :] - channels.pathloss
    bs = np.argmax(score, axis=1)
    p = fpc_matrix[np.arange(K), bs]
    sub = _greedy_all(bs, channels.ul, p, channels.ul_noise, M1, N)
    return bs, sub
