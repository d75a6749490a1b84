"""Joint UL cell association and subchannel allocation by SPA matching.

MDs play students, (station, subchannel) pairs play projects and stations
play lecturers.  A project is identified by its channel id
``c = m * n_sub + n``; each has capacity one and station ``m`` may hold at
most ``capacity[m]`` MDs.

After SPA, swap matching among co-station MDs removes swap-blocking pairs
that appear once inter-cell interference is taken into account.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mec import Assignment


@dataclass
class MatchingParams:
    m_k: int = 2  # acceptable stations per MD (nearest ones)
    nu_mbs: float = 2.0
    nu_sbs: float = 0.8


@dataclass
class PreferenceProfile:
    """Strict preference lists.

    md_prefs[k]: channel ids in decreasing preference.
    bs_prefs[m]: MD ids in decreasing preference.
    """

    md_prefs: list
    bs_prefs: list
    n_sub: int

    def __post_init__(self):
        self.md_prefs = [list(map(int, p)) for p in self.md_prefs]
        self.bs_prefs = [list(map(int, p)) for p in self.bs_prefs]
        self._md_rank = [{c: i for i, c in enumerate(p)} for p in self.md_prefs]
        self._bs_rank = [{u: i for i, u in enumerate(p)} for p in self.bs_prefs]

    @property
    def n_devices(self) -> int:
        return len(self.md_prefs)

    @property
    def n_stations(self) -> int:
        return len(self.bs_prefs)

    def station_of(self, c: int) -> int:
        return c // self.n_sub

    def md_rank(self, k: int, c: int) -> float:
        return self._md_rank[k].get(c, math.inf)

    def bs_rank(self, m: int, k: int) -> float:
        return self._bs_rank[m].get(k, math.inf)

    def acceptable(self, k: int, c: int) -> bool:
        return c in self._md_rank[k]

    def projected(self, c: int) -> list:
        """U_m^n: the station's list restricted to MDs finding ``c`` acceptable."""
        m = self.station_of(c)
        return [u for u in self.bs_prefs[m] if c in self._md_rank[u]]

    def to_dict(self) -> dict:
        return {"md_prefs": self.md_prefs, "bs_prefs": self.bs_prefs, "n_sub": self.n_sub}

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceProfile":
        return cls(d["md_prefs"], d["bs_prefs"], d["n_sub"])


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def station_capacities(n_devices: int, is_mbs, n_sub: int,
                       params: MatchingParams = MatchingParams()) -> np.ndarray:
    """Omega_m = nu_m K / (M+1), rounded half-up and clamped to [1, N]."""
    is_mbs = np.asarray(is_mbs, dtype=bool)
    n_st = len(is_mbs)
    out = np.empty(n_st, dtype=int)
    for m in range(n_st):
        nu = params.nu_mbs if is_mbs[m] else params.nu_sbs
        out[m] = min(max(round_half_up(nu * n_devices / n_st), 1), n_sub)
    return out


@dataclass
class Matching:
    """UL matching: serving station and subchannel per MD (``-1`` = unassigned)."""

    bs: np.ndarray
    sub: np.ndarray
    n_stations: int
    n_sub: int

    def __post_init__(self):
        self.bs = np.asarray(self.bs, dtype=int).copy()
        self.sub = np.asarray(self.sub, dtype=int).copy()

    @classmethod
    def empty(cls, n_devices: int, n_stations: int, n_sub: int) -> "Matching":
        return cls(np.full(n_devices, -1), np.full(n_devices, -1), n_stations, n_sub)

    @classmethod
    def from_channels(cls, channels, n_stations: int, n_sub: int) -> "Matching":
        channels = np.asarray(channels, dtype=int)
        bs = np.where(channels >= 0, channels // n_sub, -1)
        sub = np.where(channels >= 0, channels % n_sub, -1)
        return cls(bs, sub, n_stations, n_sub)

    @property
    def n_devices(self) -> int:
        return len(self.bs)

    def channel(self, k: int) -> int:
        return int(self.bs[k] * self.n_sub + self.sub[k]) if self.sub[k] >= 0 else -1

    def channels(self) -> np.ndarray:
        return np.where(self.sub >= 0, self.bs * self.n_sub + self.sub, -1)

    def occupant(self, c: int) -> int:
        hit = np.flatnonzero(self.channels() == c)
        return int(hit[0]) if hit.size else -1

    def members(self, m: int) -> list:
        return [int(k) for k in np.flatnonzero((self.bs == m) & (self.sub >= 0))]

    def unassigned(self) -> list:
        return [int(k) for k in np.flatnonzero(self.sub < 0)]

    def pairs(self) -> set:
        return {(int(k), self.channel(k)) for k in np.flatnonzero(self.sub >= 0)}

    def is_valid(self, capacities=None) -> bool:
        ch = self.channels()
        ch = ch[ch >= 0]
        if len(np.unique(ch)) != len(ch):
            return False
        if capacities is not None:
            loads = np.bincount(self.bs[self.sub >= 0], minlength=self.n_stations)
            if np.any(loads > np.asarray(capacities)):
                return False
        return True

    def copy(self) -> "Matching":
        return Matching(self.bs, self.sub, self.n_stations, self.n_sub)


def build_preferences(topology, channels, fpc_powers, params: MatchingParams = MatchingParams()
                      ) -> PreferenceProfile:
    """Preference lists from interference-free SNR and task sizes.

    ``fpc_powers[k, m]`` is MD k's FPC power (W) toward station m.  Each MD
    ranks every subchannel of its ``m_k`` geometrically nearest stations by
    SNR.  The MBS prefers MDs with more CPU cycles, SBSs prefer fewer; ties go
    to the lower id.
    """
    K, M1, N = channels.ul.shape
    m_k = min(max(int(params.m_k), 1), M1)
    dist = topology.distances()
    cycles = np.array([d.task.cycles for d in topology.devices])
    is_mbs = topology.is_mbs()
    md_prefs, accept_bs = [], [[] for _ in range(M1)]
    for k in range(K):
        near = np.lexsort((np.arange(M1), dist[k]))[:m_k]
        snr = (fpc_powers[k, near, None] * channels.ul[k, near, :]) / channels.ul_noise
        cids = (near[:, None] * N + np.arange(N)[None, :]).ravel()
        snr = snr.ravel()
        order = np.lexsort((cids, -snr))
        md_prefs.append(cids[order].tolist())
        for m in near:
            accept_bs[m].append(k)
    bs_prefs = []
    for m in range(M1):
        ks = np.array(accept_bs[m], dtype=int)
        key = -cycles[ks] if is_mbs[m] else cycles[ks]
        bs_prefs.append(ks[np.lexsort((ks, key))].tolist())
    return PreferenceProfile(md_prefs, bs_prefs, N)


def spa_match(profile: PreferenceProfile, capacities,
              on_step: Optional[Callable] = None) -> Matching:
    """Student-optimal SPA with capacity-one projects.

    Deletions run inside the proposal loop after every provisional
    assignment.  ``on_step(state)`` is called after each proposal has been
    fully processed; ``state`` holds ``assigned``, ``members``, ``proposals``.
    MDs whose lists run out stay unassigned.
    """
    K, N = profile.n_devices, profile.n_sub
    caps = np.asarray(capacities, dtype=int)
    lists = [list(p) for p in profile.md_prefs]
    assigned = [-1] * K
    occupant: dict = {}
    members = [set() for _ in range(profile.n_stations)]
    free = deque(range(K))
    proposals = 0

    def worst(m, group):
        return max(group, key=lambda u: profile.bs_rank(m, u))

    def delete(u, c):
        if c in lists[u]:
            lists[u].remove(c)

    while free:
        k = free.popleft()
        if assigned[k] >= 0 or not lists[k]:
            continue
        c = lists[k][0]
        m = profile.station_of(c)
        proposals += 1
        # provisional assignment
        prev = occupant.get(c)
        assigned[k] = c
        members[m].add(k)
        if prev is not None:
            r = worst(m, (prev, k))
            assigned[r] = -1
            members[m].discard(r)
            occupant[c] = prev if r == k else k
            free.append(r)
        else:
            occupant[c] = k
            if len(members[m]) > caps[m]:
                r = worst(m, members[m])
                ct = assigned[r]
                assigned[r] = -1
                members[m].discard(r)
                del occupant[ct]
                free.append(r)
        if c in occupant:
            # c is full
            proj = profile.projected(c)
            cut = proj.index(occupant[c]) + 1
            for u in proj[cut:]:
                delete(u, c)
        if len(members[m]) == caps[m]:
            r = worst(m, members[m])
            ulist = profile.bs_prefs[m]
            for u in ulist[ulist.index(r) + 1:]:
                for cv in [x for x in lists[u] if profile.station_of(x) == m]:
                    delete(u, cv)
        if on_step is not None:
            on_step({"assigned": list(assigned), "members": [set(s) for s in members],
                     "occupant": dict(occupant), "proposals": proposals})

    M1 = profile.n_stations
    return Matching.from_channels(assigned, M1, N)


def is_blocking_pair(k: int, c: int, matching: Matching, profile: PreferenceProfile,
                     capacities) -> bool:
    """Blocking-pair test, clauses (a), (b), (c1)-(c3)."""
    current = matching.channel(k)
    if current == c:
        return False
    if not profile.acceptable(k, c):
        return False
    if current >= 0 and not profile.md_rank(k, c) < profile.md_rank(k, current):
        return False
    m = profile.station_of(c)
    occ = matching.occupant(c)
    group = matching.members(m)
    cap = int(np.asarray(capacities)[m])

    def prefers(u, v):
        return profile.bs_rank(m, u) < profile.bs_rank(m, v)

    if occ < 0:
        if len(group) < cap:
            return True  # c1
        if len(group) == cap:
            worst = max(group, key=lambda u: profile.bs_rank(m, u))
            return k in group or prefers(k, worst)  # c2
        return False
    return prefers(k, occ)  # c3


def blocking_pairs(matching: Matching, profile: PreferenceProfile, capacities) -> list:
    return [(k, c) for k in range(profile.n_devices) for c in profile.md_prefs[k]
            if is_blocking_pair(k, c, matching, profile, capacities)]


def enumerate_stable_matchings(profile: PreferenceProfile, capacities) -> list:
    """All stable matchings by exhaustive enumeration (tiny instances only)."""
    M1, N = profile.n_stations, profile.n_sub
    caps = np.asarray(capacities)
    options = [[-1] + p for p in profile.md_prefs]
    out = []
    for combo in itertools.product(*options):
        used = [c for c in combo if c >= 0]
        if len(set(used)) != len(used):
            continue
        loads = np.bincount([c // N for c in used], minlength=M1)
        if np.any(loads > caps):
            continue
        mt = Matching.from_channels(combo, M1, N)
        if not blocking_pairs(mt, profile, capacities):
            out.append(mt)
    return out


def md_optimal_stable_matching(profile: PreferenceProfile, capacities) -> Optional[Matching]:
    """The stable matching giving every MD its best stable partner, if one exists."""
    stable = enumerate_stable_matchings(profile, capacities)
    if not stable:
        return None

    def score(mt, k):
        c = mt.channel(k)
        return profile.md_rank(k, c) if c >= 0 else math.inf

    best = [min(score(mt, k) for mt in stable) for k in range(profile.n_devices)]
    for mt in stable:
        if all(score(mt, k) == best[k] for k in range(profile.n_devices)):
            return mt
    return None


def assign_unmatched(matching: Matching, channels, p_ul) -> tuple:
    """Give every unassigned MD a subchannel at its lowest-path-loss station.

    The least-interfered free subchannel is used, i.e. the one with the
    lowest interference-plus-noise relative to k's own gain there, counting
    interference from already assigned MDs at their ``p_ul`` powers.  If
    that station is full the next-lowest path-loss station is tried.
    Returns (matching, fallback ids).
    """
    mt = matching.copy()
    N = mt.n_sub
    p_ul = np.asarray(p_ul, dtype=float)
    flagged = []
    for k in mt.unassigned():
        for m in np.lexsort((np.arange(mt.n_stations), channels.pathloss[k])):
            taken = set(mt.sub[(mt.bs == m) & (mt.sub >= 0)].tolist())
            free = [n for n in range(N) if n not in taken]
            if not free:
                continue
            on = mt.sub >= 0
            interference = np.zeros(N)
            np.add.at(interference, mt.sub[on],
                      p_ul[on] * channels.ul[np.flatnonzero(on), m, mt.sub[on]])
            # interference-plus-noise relative to k's own gain on each subchannel
            ratio = (interference + channels.ul_noise) / channels.ul[k, m, :]
            n = min(free, key=lambda x: (ratio[x], x))
            mt.bs[k], mt.sub[k] = m, n
            flagged.append(int(k))
            break
    return mt, flagged


# --------------------------------------------------------------------------
# swap matching


@dataclass
class SwapContext:
    """What swap decisions depend on: gains, per-MD powers and input sizes."""

    channels: object
    p_ul: np.ndarray
    input_bits: np.ndarray

    def rates(self, bs, sub) -> np.ndarray:
        from .mec import ul_rates
        a = Assignment(bs, sub, bs, sub)
        return ul_rates(a, self.p_ul, self.channels)

    def latencies(self, bs, sub) -> np.ndarray:
        r = self.rates(bs, sub)
        on = sub >= 0
        out = np.zeros(len(bs))
        out[on] = self.input_bits[on] / r[on]
        return out


@dataclass
class SwapRecord:
    md: int
    partner: int  # -1 when moving to a vacant subchannel
    station: int
    from_sub: int
    to_sub: int
    sum_latency_before: float
    sum_latency_after: float


@dataclass
class SwapLog:
    swaps: list = field(default_factory=list)
    passes: int = 0

    @property
    def n_swaps(self) -> int:
        return len(self.swaps)

    def all_decreasing(self, rtol: float = 0.0) -> bool:
        """Every executed swap lowered the network sum UL latency."""
        return all(s.sum_latency_after < s.sum_latency_before * (1.0 - rtol)
                   for s in self.swaps)


def _rate_on(k, m, ctx, bs, sub):
    """Rate MD k would get on every subchannel of station m, ignoring m's own MDs."""
    ch = ctx.channels
    N = ch.ul.shape[2]
    other = (sub >= 0) & (bs != m)
    interference = np.zeros(N)
    idx = np.flatnonzero(other)
    np.add.at(interference, sub[idx], ctx.p_ul[idx] * ch.ul[idx, m, sub[idx]])
    sinr = ctx.p_ul[k] * ch.ul[k, m, :] / (interference + ch.ul_noise)
    return ch.ul_bandwidth * np.log2(1.0 + sinr)


def _swap_outcome(k, n2, ctx, bs, sub, before_lat, rtol):
    """Evaluate the swap of MD k onto subchannel n2 of its station.

    Returns (is_swap_blocking, new_sub, partner, total_before, total_after).
    """
    m, n = bs[k], sub[k]
    partner = np.flatnonzero((bs == m) & (sub == n2))
    partner = int(partner[0]) if partner.size else -1
    new_sub = sub.copy()
    new_sub[k] = n2
    if partner >= 0:
        new_sub[partner] = n
    r_before = ctx.rates(bs, sub)
    r_after = ctx.rates(bs, new_sub)
    after_lat = np.zeros(len(bs))
    on = new_sub >= 0
    after_lat[on] = ctx.input_bits[on] / r_after[on]
    before_total, after_total = float(before_lat.sum()), float(after_lat.sum())
    # (a)
    if not r_after[k] > r_before[k]:
        return False, new_sub, partner, before_total, after_total
    # (b)
    if partner >= 0:
        if not r_after[partner] > r_before[partner]:
            return False, new_sub, partner, before_total, after_total
        if not after_lat[k] + after_lat[partner] < before_lat[k] + before_lat[partner]:
            return False, new_sub, partner, before_total, after_total
    # (c) network sum UL latency
    if not after_total < before_total * (1.0 - rtol):
        return False, new_sub, partner, before_total, after_total
    return True, new_sub, partner, before_total, after_total


def _candidates(k, ctx, bs, sub):
    """Other subchannels of k's station offering k a higher rate, best gain first."""
    m, n = bs[k], sub[k]
    r = _rate_on(k, m, ctx, bs, sub)
    gain = r - r[n]
    cand = [int(x) for x in np.flatnonzero(gain > 0) if x != n]
    return sorted(cand, key=lambda x: (-gain[x], x))


def is_swap_blocking(k: int, n2: int, matching: Matching, ctx: SwapContext,
                     rtol: float = 1e-12) -> bool:
    bs, sub = matching.bs, matching.sub
    if sub[k] < 0 or n2 == sub[k]:
        return False
    lat = ctx.latencies(bs, sub)
    return _swap_outcome(k, n2, ctx, bs, sub, lat, rtol)[0]


def swap_match(matching: Matching, ctx: SwapContext, max_passes: int = 10_000,
               rtol: float = 1e-12) -> tuple:
    """Swap subchannels among co-station MDs until exchange-stable.

    MDs are scanned by ascending id; each tries its rate-improving subchannels
    in order of decreasing gain and performs the first swap-blocking one.
    Passes repeat until a full pass makes no swap.  Returns (matching, log).
    """
    bs, sub = matching.bs.copy(), matching.sub.copy()
    log = SwapLog()
    lat = ctx.latencies(bs, sub)
    while log.passes < max_passes:
        log.passes += 1
        changed = False
        for k in range(len(bs)):
            if sub[k] < 0:
                continue
            for n2 in _candidates(k, ctx, bs, sub):
                ok, new_sub, partner, before, after = _swap_outcome(k, n2, ctx, bs, sub, lat, rtol)
                if ok:
                    log.swaps.append(SwapRecord(k, partner, int(bs[k]), int(sub[k]), n2,
                                                before, after))
                    sub = new_sub
                    lat = ctx.latencies(bs, sub)
                    changed = True
                    break
        if not changed:
            break
    return Matching(bs, sub, matching.n_stations, matching.n_sub), log


def certify_exchange_stable(matching: Matching, ctx: SwapContext, rtol: float = 1e-12) -> bool:
    """True iff no co-station subchannel pair is swap-blocking."""
    bs, sub = matching.bs, matching.sub
    lat = ctx.latencies(bs, sub)
    N = matching.n_sub
    for k in np.flatnonzero(sub >= 0):
        for n2 in range(N):
            if n2 == sub[k]:
                continue
            if _swap_outcome(int(k), n2, ctx, bs, sub, lat, rtol)[0]:
                return False
    return True


# --------------------------------------------------------------------------
# serialisation


def write_assignment_csv(assignment: Assignment, path) -> None:
    """Rows of (md_id, bs_id, subchannel, direction); unserved links have -1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["md_id", "bs_id", "subchannel", "direction"])
        for k in range(assignment.n_devices):
            w.writerow([k, int(assignment.ul_bs[k]), int(assignment.ul_sub[k]), "ul"])
            w.writerow([k, int(assignment.dl_bs[k]), int(assignment.dl_sub[k]), "dl"])


def dump_instance(profile: PreferenceProfile, capacities, path) -> None:
    """Save a matching instance so a failing case can be replayed."""
    with open(path, "w") as fh:
        json.dump({"profile": profile.to_dict(),
                   "capacities": [int(c) for c in capacities]}, fh, indent=1)


def load_instance(path) -> tuple:
    with open(path) as fh:
        d = json.load(fh)
    return PreferenceProfile.from_dict(d["profile"]), np.array(d["capacities"], dtype=int)
