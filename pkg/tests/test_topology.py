import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dude_mec.topology import (MBS, SBS, ConfigError, NetworkConfig, generate_topology,
                               load_network_config, node_counts, pathloss_db, sample_channels,
                               write_topology_csv)

from conftest import small_instance


def reference_pathloss(d, f, phi, d0=1.0, chi=0.0):
    c = 2.998e8
    return 20 * math.log10(4 * math.pi * d0 * f / c) + 10 * phi * math.log10(d / d0) + chi


def test_counts_one_square_km():
    cfg = NetworkConfig(area_width=1000, area_height=1000)
    assert node_counts(cfg) == (25, 250)
    top = generate_topology(cfg)
    assert top.n_stations == 26
    assert top.n_devices == 250


def test_default_area_is_one_macro_cell():
    cfg = NetworkConfig()
    assert cfg.area_km2 == pytest.approx(0.2)
    assert node_counts(cfg) == (5, 50)


def test_single_mbs_with_id_zero():
    top = generate_topology(NetworkConfig(n_sbs=7))
    kinds = [s.kind for s in top.stations]
    assert kinds[0] == MBS and kinds.count(MBS) == 1
    assert all(k == SBS for k in kinds[1:])
    assert all(s.max_tx_power < top.stations[0].max_tx_power for s in top.stations[1:])
    assert all(s.compute_capacity < top.stations[0].compute_capacity for s in top.stations[1:])


def test_positions_inside_area():
    cfg = NetworkConfig(area_width=300, area_height=100, n_sbs=4)
    top = generate_topology(cfg)
    pos = np.vstack([top.station_positions(), top.device_positions()])
    assert np.all(pos >= 0)
    assert np.all(pos[:, 0] <= 300) and np.all(pos[:, 1] <= 100)


def test_same_seed_same_topology():
    cfg = NetworkConfig(seed=11)
    a, b = generate_topology(cfg), generate_topology(cfg)
    assert a.station_positions().tobytes() == b.station_positions().tobytes()
    assert a.device_positions().tobytes() == b.device_positions().tobytes()
    assert a.tasks() == b.tasks()
    ca, cb = sample_channels(a, cfg), sample_channels(b, cfg)
    assert ca.ul.tobytes() == cb.ul.tobytes()
    assert ca.dl.tobytes() == cb.dl.tobytes()


def test_different_seed_differs():
    a = generate_topology(NetworkConfig(seed=1))
    b = generate_topology(NetworkConfig(seed=2))
    assert not np.array_equal(a.device_positions(), b.device_positions())


def test_zero_devices_is_config_error():
    with pytest.raises(ConfigError):
        generate_topology(NetworkConfig(area_width=10, area_height=10))


@pytest.mark.parametrize("kw", [
    {"sbs_density": 0}, {"md_density": -1}, {"n_subchannels": 0},
    {"reference_distance": 0}, {"pathloss_exponent": 0}, {"ul_bandwidth": 0},
    {"sbs_power": 46.0}, {"sbs_capacity": 36e9}, {"n_sbs": -1},
])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        NetworkConfig(**kw)


def test_unknown_config_key(tmp_path):
    path = tmp_path / "net.json"
    path.write_text('{"network": {"n_sbs": 3, "bogus": 1}}')
    with pytest.raises(ConfigError):
        load_network_config(path)
    path.write_text('{"network": {"n_sbs": 3}}')
    assert load_network_config(path).n_sbs == 3


def test_pathloss_reference_distance():
    cfg = NetworkConfig()
    assert pathloss_db(1.0, cfg) == pytest.approx(38.46, abs=0.01)


def test_pathloss_100m():
    cfg = NetworkConfig()
    assert pathloss_db(100.0, cfg) == pytest.approx(pathloss_db(1.0, cfg) + 60.0, abs=1e-9)
    assert pathloss_db(100.0, cfg) == pytest.approx(98.46, abs=0.01)


def test_pathloss_shadowing_additive():
    cfg = NetworkConfig()
    assert pathloss_db(37.0, cfg, 4.0) - pathloss_db(37.0, cfg) == pytest.approx(4.0, abs=1e-12)


def test_pathloss_clamped_below_d0():
    cfg = NetworkConfig(reference_distance=2.0)
    assert pathloss_db(0.5, cfg) == pathloss_db(2.0, cfg)


def test_pathloss_nonpositive_distance():
    with pytest.raises(ValueError):
        pathloss_db(0.0, NetworkConfig())
    with pytest.raises(ValueError):
        pathloss_db([-1.0, 5.0], NetworkConfig())


def test_pathloss_matches_reference_on_random_inputs():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        d = rng.uniform(1.0, 2000.0)
        f = rng.uniform(0.7e9, 6e9)
        phi = rng.uniform(2.0, 4.5)
        cfg = NetworkConfig(carrier_frequency=f, pathloss_exponent=phi)
        assert abs(pathloss_db(d, cfg) - reference_pathloss(d, f, phi)) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 1e4), st.floats(1.0, 1e4))
def test_pathloss_monotone_in_distance(d1, d2):
    cfg = NetworkConfig()
    if d1 < d2:
        assert pathloss_db(d1, cfg) < pathloss_db(d2, cfg)


def test_fading_unit_mean():
    # 1e6 fading samples: one MD, one station, many subchannels, no shadowing
    cfg = NetworkConfig(area_width=1, area_height=1, md_density=1e6, n_sbs=0,
                        n_subchannels=500_000, shadowing_std=0.0)
    top = generate_topology(cfg)
    ch = sample_channels(top, cfg, seed=5)
    g = np.concatenate([(ch.ul * 10 ** (ch.pathloss[:, :, None] / 10)).ravel(),
                        (ch.dl * 10 ** (ch.pathloss[:, :, None] / 10)).ravel()])
    assert g.size == 1_000_000
    assert g.mean() == pytest.approx(1.0, abs=0.01)


def test_shadowing_statistics():
    cfg = NetworkConfig(area_width=1000, area_height=1000, md_density=4000, n_sbs=24,
                        n_subchannels=1)
    top = generate_topology(cfg)
    ch = sample_channels(top, cfg, seed=9)
    chi = ch.shadowing.ravel()
    assert chi.size >= 100_000
    assert chi.mean() == pytest.approx(0.0, abs=0.05)
    assert chi.std() == pytest.approx(4.0, abs=0.05)


def test_shadowing_shared_by_subchannels_and_directions():
    cfg, top, ch = small_instance(n_md=5, n_sbs=2, n_sub=6, seed=4)
    expected = pathloss_db(top.distances(), cfg, ch.shadowing)
    np.testing.assert_allclose(ch.pathloss, expected, rtol=0, atol=1e-12)
    # UL and DL differ only through fading
    assert not np.allclose(ch.ul, ch.dl)


def test_gain_decreases_with_distance_when_fading_fixed():
    cfg = NetworkConfig(shadowing_std=0.0)
    d = np.array([10.0, 50.0, 200.0, 800.0])
    gains = 10 ** (-pathloss_db(d, cfg) / 10) * 0.7
    assert np.all(np.diff(gains) < 0)


def test_channels_positive_finite_and_readonly():
    _, _, ch = small_instance(n_md=8, n_sbs=3, n_sub=5, seed=2)
    assert ch.ul.shape == (8, 4, 5)
    for arr in (ch.ul, ch.dl):
        assert np.all(arr > 0) and np.all(np.isfinite(arr))
        with pytest.raises(ValueError):
            arr[0, 0, 0] = 1.0
    assert ch.gain(1, 2, 3) == ch.ul[1, 2, 3]


def test_subchannel_bandwidth_and_noise():
    cfg = NetworkConfig()
    assert cfg.ul_subchannel_bandwidth == pytest.approx(200e3)
    assert cfg.ul_noise_power == pytest.approx(10 ** (-204 / 10) * 200e3, rel=1e-12)


def test_topology_csv(tmp_path):
    _, top, _ = small_instance(n_md=3, n_sbs=1)
    path = tmp_path / "nodes.csv"
    write_topology_csv(top, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,kind,x,y"
    assert len(lines) == 1 + 2 + 3
    assert lines[1].startswith("0,MBS,")
    assert lines[-1].startswith("2,MD,")
