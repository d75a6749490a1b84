import numpy as np
import pytest

from dude_mec.matching import PreferenceProfile
from dude_mec.topology import ChannelTensor, NetworkConfig, generate_topology, sample_channels

ACCEPTANCE_LINES = []


def small_config(n_md=6, n_sbs=2, n_sub=4, side=200.0, seed=0, **kw) -> NetworkConfig:
    """Config whose densities round to exactly ``n_md`` devices on a side x side area."""
    area_km2 = side * side / 1e6
    return NetworkConfig(area_width=side, area_height=side, n_sbs=n_sbs,
                         md_density=n_md / area_km2, n_subchannels=n_sub, seed=seed, **kw)


def small_instance(n_md=6, n_sbs=2, n_sub=4, seed=0, **kw):
    cfg = small_config(n_md, n_sbs, n_sub, seed=seed, **kw)
    top = generate_topology(cfg)
    return cfg, top, sample_channels(top, cfg, seed=seed)


def hand_channels(ul, dl=None, bandwidth=200e3, noise=1e-13) -> ChannelTensor:
    """ChannelTensor built from explicit (K, M+1, N) gains."""
    ul = np.asarray(ul, dtype=float)
    dl = ul.copy() if dl is None else np.asarray(dl, dtype=float)
    pl = -10.0 * np.log10(ul.mean(axis=2))
    return ChannelTensor(ul=ul, dl=dl, pathloss=pl, shadowing=np.zeros(pl.shape),
                         ul_bandwidth=bandwidth, dl_bandwidth=bandwidth,
                         ul_noise=noise, dl_noise=noise)


def random_profile(rng, max_md=4, max_st=2, max_sub=3):
    """Random tiny SPA instance: (PreferenceProfile, capacities)."""
    K = int(rng.integers(1, max_md + 1))
    M1 = int(rng.integers(1, max_st + 1))
    N = int(rng.integers(1, max_sub + 1))
    n_ch = M1 * N
    md_prefs = []
    for _ in range(K):
        size = int(rng.integers(1, n_ch + 1))
        md_prefs.append([int(c) for c in rng.permutation(n_ch)[:size]])
    bs_prefs = []
    for m in range(M1):
        keen = [k for k in range(K) if any(c // N == m for c in md_prefs[k])]
        bs_prefs.append([int(k) for k in rng.permutation(keen)])
    caps = rng.integers(1, N + 1, M1)
    return PreferenceProfile(md_prefs, bs_prefs, N), caps


@pytest.fixture
def report():
    """Record a one-line acceptance verdict, echoed in the terminal summary."""
    def _report(label: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
