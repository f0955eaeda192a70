import copy

import numpy as np
import pytest

from neurohockey.encoding import N_CHANNELS, PopulationCodec, SpikePattern, rates_to_spikes
from neurohockey.env import AirHockeyEnv, get_preset
from neurohockey.snn import (
    FilteredTraces,
    Reservoir,
    ReservoirConfig,
    build_reservoir,
    update_traces,
)


def single_spike_pattern(channel=0, t=0.005, window=0.020):
    spikes = [np.empty(0)] * N_CHANNELS
    spikes[channel] = np.array([t])
    return SpikePattern(tuple(spikes), window)


def random_pattern(rng, window=0.020, rate=150.0):
    rates = rng.uniform(0, rate, N_CHANNELS) * (rng.random(N_CHANNELS) < 0.4)
    pat = rates_to_spikes(rates, window)
    return pat


@pytest.fixture(scope="module")
def small_cfg():
    return ReservoirConfig(n_hidden=64, seed=3)


def test_same_seed_same_reservoir(small_cfg):
    a, b = build_reservoir(small_cfg), build_reservoir(small_cfg)
    assert np.array_equal(a.w_in, b.w_in)
    assert np.array_equal(a.tau_m, b.tau_m) and np.array_equal(a.v_th, b.v_th)
    c = build_reservoir(ReservoirConfig(n_hidden=64, seed=4))
    assert not np.array_equal(a.w_in, c.w_in)


def test_zero_mismatch():
    res = build_reservoir(ReservoirConfig(n_hidden=50, mismatch_cv=0.0))
    assert np.all(res.tau_m == 0.020) and np.all(res.v_th == 1.0)


def test_nonzero_count():
    res = build_reservoir(ReservoirConfig(n_hidden=1020, fan_in=16))
    assert np.count_nonzero(res.w_in) == 16320
    assert np.all(np.count_nonzero(res.w_in, axis=1) == 16)


def test_mismatch_clamped():
    res = build_reservoir(ReservoirConfig(n_hidden=2000, mismatch_cv=0.5, seed=1))
    assert np.all(res.tau_m > 0) and np.all(res.v_th > 0.0)


@pytest.mark.parametrize("bad, fragment", [
    (dict(n_hidden=0), "n_hidden"),
    (dict(fan_in=61), "fan_in"),
    (dict(tau_m=0.0), "tau_m"),
    (dict(mismatch_cv=0.6), "mismatch_cv"),
    (dict(sim_dt=3e-4), "sim_dt"),
])
def test_invalid_config(bad, fragment):
    with pytest.raises(ValueError, match=fragment):
        build_reservoir(ReservoirConfig(**bad))


def test_weights_immutable(small_cfg):
    res = build_reservoir(small_cfg)
    with pytest.raises(ValueError):
        res.w_in[0, 0] = 1.0


def test_empty_window_silent(small_cfg):
    res = build_reservoir(small_cfg)
    assert res.simulate_window(SpikePattern.empty()).sum() == 0


def test_single_neuron_hand_stepped():
    # v starts at 0; the spike bin adds 1.2 * v_th >= v_th -> exactly one spike,
    # then only decay follows so no second crossing
    cfg = ReservoirConfig(n_hidden=1, fan_in=1, mismatch_cv=0.0)
    w = np.zeros((1, N_CHANNELS))
    w[0, 0] = 1.2 * cfg.v_threshold
    res = Reservoir(cfg, w, [cfg.tau_m], [cfg.v_threshold])
    assert res.simulate_window(single_spike_pattern()).tolist() == [1]
    dense = Reservoir(cfg, w, [cfg.tau_m], [cfg.v_threshold])
    assert dense.simulate_window_dense(single_spike_pattern()).tolist() == [1]


def test_subthreshold_sum_with_decay_by_hand():
    # two 0.6 kicks 1 ms apart: 0.6 * exp(-1/20) + 0.6 = 1.1707 >= 1 -> spike;
    # 10 ms apart: 0.6 * exp(-10/20) + 0.6 = 0.9639 < 1 -> silent
    cfg = ReservoirConfig(n_hidden=1, fan_in=1, mismatch_cv=0.0)
    w = np.zeros((1, N_CHANNELS))
    w[0, 0] = 0.6
    for gap, expected in [(0.001, 1), (0.010, 0)]:
        res = Reservoir(cfg, w, [cfg.tau_m], [cfg.v_threshold])
        spikes = [np.empty(0)] * N_CHANNELS
        spikes[0] = np.array([0.002, 0.002 + gap])
        assert res.simulate_window(SpikePattern(tuple(spikes))).tolist() == [expected]


def test_refractory_blocks_input():
    cfg = ReservoirConfig(n_hidden=1, fan_in=1, mismatch_cv=0.0, t_refractory=0.002)
    w = np.zeros((1, N_CHANNELS))
    w[0, 0] = 1.5
    spikes = [np.empty(0)] * N_CHANNELS
    spikes[0] = np.array([0.001, 0.0025, 0.0035])  # 1.5 ms later: refractory; 2.5 ms later: free
    res = Reservoir(cfg, w, [cfg.tau_m], [cfg.v_threshold])
    assert res.simulate_window(SpikePattern(tuple(spikes))).tolist() == [2]
    res.reset_state()
    assert res.simulate_window_dense(SpikePattern(tuple(spikes))).tolist() == [2]


def test_event_driven_matches_dense_stepper():
    res = build_reservoir(ReservoirConfig(n_hidden=200, seed=11, weight_std=0.8))
    ref = copy.deepcopy(res)
    rng = np.random.default_rng(0)
    for _ in range(15):
        pat = random_pattern(rng)
        assert np.array_equal(res.simulate_window(pat), ref.simulate_window_dense(pat))


def test_window_persistence_two_halves_equal_one_stream():
    res = build_reservoir(ReservoirConfig(n_hidden=200, seed=5, weight_std=0.8))
    ref = copy.deepcopy(res)
    rng = np.random.default_rng(1)
    first, second = random_pattern(rng), random_pattern(rng)
    merged = SpikePattern(
        tuple(np.concatenate([a, b + 0.020]) for a, b in zip(first.channel_spikes, second.channel_spikes)),
        window=0.040,
    )
    c1 = res.simulate_window(first)
    c2 = res.simulate_window(second)
    _, raster = ref.simulate_window_dense(merged, raster=True)
    assert np.array_equal(c1, raster[:200].sum(axis=0))
    assert np.array_equal(c2, raster[200:].sum(axis=0))


def test_replay_determinism(small_cfg):
    rng = np.random.default_rng(2)
    pats = [random_pattern(rng) for _ in range(5)]
    a, b = build_reservoir(small_cfg), build_reservoir(small_cfg)
    for p in pats:
        assert np.array_equal(a.simulate_window(p), b.simulate_window(p))


def test_reset_state(small_cfg):
    res = build_reservoir(small_cfg)
    w_before = res.w_in.copy()
    rng = np.random.default_rng(3)
    for _ in range(3):
        res.simulate_window(random_pattern(rng))
    res.reset_state()
    snapshot = (res.v.copy(), res._t_valid.copy(), res._ref_end.copy())
    res.reset_state()
    assert all(np.array_equal(x, y) for x, y in zip(snapshot, (res.v, res._t_valid, res._ref_end)))
    assert np.all(res.v == 0.0)
    assert res.simulate_window(SpikePattern.empty()).sum() == 0
    assert np.array_equal(w_before, res.w_in)


def test_input_outside_window_rejected(small_cfg):
    res = build_reservoir(small_cfg)
    bad = SpikePattern.__new__(SpikePattern)
    object.__setattr__(bad, "channel_spikes", (np.array([0.025]),) + (np.empty(0),) * 59)
    object.__setattr__(bad, "window", 0.020)
    with pytest.raises(ValueError):
        res.simulate_window(bad)


def test_monotone_in_weight_scale():
    cfg = ReservoirConfig(n_hidden=100, seed=9)
    base = build_reservoir(cfg)
    w = np.abs(base.w_in)
    rng = np.random.default_rng(4)
    pat = random_pattern(rng)
    prev = None
    for c in (1.0, 1.3, 2.0, 4.0):
        counts = Reservoir(cfg, c * w, base.tau_m, base.v_th).simulate_window(pat)
        if prev is not None:
            assert np.all(counts >= prev)
        prev = counts


def test_rate_sanity_default_config():
    """Mean firing over an in-range episode sits in [1, 200] Hz."""
    res = build_reservoir(ReservoirConfig(seed=0))
    env = AirHockeyEnv(get_preset("C4_pos_and_speed"))
    codec = PopulationCodec.for_preset(env.preset)
    rng = np.random.default_rng(0)
    obs = env.reset(rng)
    total, steps = 0, 0
    while True:
        total += res.simulate_window(rates_to_spikes(codec.encode_rates(obs))).sum()
        steps += 1
        r = env.step_control(int(rng.random() < 0.5))
        obs = r.obs
        if r.done:
            break
    rate = total / (res.n_hidden * steps * 0.020)
    assert 1.0 <= rate <= 200.0


def test_csv_round_trip(tmp_path, small_cfg):
    res = build_reservoir(small_cfg)
    res.export_csv(tmp_path / "w.csv", tmp_path / "p.csv")
    back = Reservoir.from_csv(small_cfg, tmp_path / "w.csv", tmp_path / "p.csv")
    assert np.array_equal(res.w_in, back.w_in)
    assert np.array_equal(res.tau_m, back.tau_m) and np.array_equal(res.v_th, back.v_th)


# -- filtered traces ---------------------------------------------------------

def test_trace_decay_and_impulse():
    tr = FilteredTraces.zeros(3, tau_s=0.1)
    update_traces(tr, [1, 0, 0])
    assert tr.s_bar.tolist() == [1.0, 0.0, 0.0]
    update_traces(tr, [0, 0, 0])
    assert tr.s_bar[0] == pytest.approx(np.exp(-0.2), abs=1e-15)
    for _ in range(5):
        prev = tr.s_bar.copy()
        update_traces(tr, [0, 0, 0])
        assert tr.s_bar[0] == pytest.approx(prev[0] * np.exp(-0.2), rel=1e-14)
    assert np.all(tr.s_bar >= 0)


def test_trace_no_decay_limit():
    tr = FilteredTraces.zeros(2, tau_s=np.inf)
    for c in ([1, 2], [3, 0], [0, 5]):
        update_traces(tr, c)
    assert tr.s_bar.tolist() == [4.0, 7.0]
    with pytest.raises(ValueError):
        update_traces(tr, [-1, 0])
