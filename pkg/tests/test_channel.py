import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import j0

from cobfsim.channel import (
    C_LIGHT,
    ChannelConfig,
    ChannelTensor,
    ConfigurationError,
    LsNoiseParams,
    add_ls_noise,
    evolve_channel,
    export_channel_dataset,
    generate_channel,
    load_channel_dataset,
)

# Small config keeps the Monte-Carlo tests fast; statistics are size-independent.
SMALL = ChannelConfig(n_sc=64, n_t=4, num_clusters=6)
AP_POS = (2.5, 2.5, 3.0)
STA_LOS = (1.0, 1.5, 1.5)
STA_NLOS = (7.0, 1.5, 1.5)   # next room over


def test_generate_is_deterministic():
    a = generate_channel(SMALL, STA_LOS, AP_POS, seed=42)
    b = generate_channel(SMALL, STA_LOS, AP_POS, seed=42)
    assert np.array_equal(a.gains, b.gains)
    assert a.los == b.los


def test_generate_seed_changes_realization():
    a = generate_channel(SMALL, STA_LOS, AP_POS, seed=1)
    b = generate_channel(SMALL, STA_LOS, AP_POS, seed=2)
    assert not np.array_equal(a.gains, b.gains)


def test_zero_delay_spread_single_cluster_is_flat():
    cfg = ChannelConfig(n_sc=64, n_t=4, num_clusters=1, delay_spread=1e-30)
    h = generate_channel(cfg, STA_NLOS, AP_POS, seed=3)
    ref = h.gains[0]
    deviation = np.linalg.norm(h.gains - ref[None, :], axis=1) / np.linalg.norm(ref)
    assert deviation.max() < 1e-6


def test_mean_power_matches_pathloss_model():
    # Monte-Carlo oracle: sample mean over 10^4 seeds vs the path-loss value.
    d = float(np.linalg.norm(np.subtract(STA_LOS, AP_POS)))
    expected = SMALL.pathloss_linear(d, los=True)
    total = 0.0
    n_seeds = 10_000
    for seed in range(n_seeds):
        h = generate_channel(SMALL, STA_LOS, AP_POS, seed=seed)
        total += float(np.mean(np.abs(h.gains) ** 2))
    assert total / n_seeds == pytest.approx(expected, rel=0.02)


def test_los_flag_follows_room_rule():
    assert generate_channel(SMALL, STA_LOS, AP_POS, seed=0).los
    assert not generate_channel(SMALL, STA_NLOS, AP_POS, seed=0).los


def test_invalid_config_rejected():
    with pytest.raises(ConfigurationError):
        generate_channel(ChannelConfig(num_clusters=0), STA_LOS, AP_POS, seed=0)
    with pytest.raises(ConfigurationError):
        generate_channel(ChannelConfig(delay_spread=-1e-9), STA_LOS, AP_POS, seed=0)
    with pytest.raises(ConfigurationError):
        generate_channel(SMALL, (99.0, 0.0, 0.0), AP_POS, seed=0)


def test_evolve_zero_dt_is_identity():
    h = generate_channel(SMALL, STA_LOS, AP_POS, seed=5)
    out = evolve_channel(h, 0.0, SMALL, seed=123)
    assert np.array_equal(out.gains, h.gains)


def _pooled_correlation(h, dt, n_trials, seed0=0):
    # Empirical correlation coefficient of old vs evolved entries, pooled
    # over entries and independent innovation draws.
    num = 0.0
    for seed in range(seed0, seed0 + n_trials):
        out = evolve_channel(h, dt, SMALL, seed=seed)
        num += float(np.sum(out.gains * np.conj(h.gains)).real)
    return num / (n_trials * float(np.sum(np.abs(h.gains) ** 2)))


def test_evolve_correlation_matches_jakes():
    h = generate_channel(SMALL, STA_LOS, AP_POS, seed=7)
    dt = 10e-3
    f_d = SMALL.sta_speed * SMALL.carrier_frequency / C_LIGHT
    alpha = j0(2 * np.pi * f_d * dt)
    rho = _pooled_correlation(h, dt, n_trials=10_000)
    assert abs(rho - alpha) < 0.02


def test_evolve_preserves_mean_power():
    h = generate_channel(SMALL, STA_LOS, AP_POS, seed=11)
    before = float(np.mean(np.abs(h.gains) ** 2))
    total = 0.0
    n_trials = 10_000
    for seed in range(n_trials):
        out = evolve_channel(h, 10e-3, SMALL, seed=seed)
        total += float(np.mean(np.abs(out.gains) ** 2))
    assert total / n_trials == pytest.approx(before, rel=0.01)


def test_evolve_long_lag_decorrelates():
    h = generate_channel(SMALL, STA_LOS, AP_POS, seed=13)
    rho = _pooled_correlation(h, 100.0, n_trials=10_000)
    assert abs(rho) < 0.05


def test_evolve_rejects_negative_dt():
    h = generate_channel(SMALL, STA_LOS, AP_POS, seed=1)
    with pytest.raises(ValueError):
        evolve_channel(h, -1e-3, SMALL, seed=0)


def test_ls_noise_variance_matches_model():
    params = LsNoiseParams()
    h = generate_channel(ChannelConfig(), STA_LOS, AP_POS, seed=17)
    rng = np.random.default_rng(99)
    diffs = []
    for _ in range(7):   # 7 x 980 x 16 > 1e5 noise samples
        noisy = add_ls_noise(h, params, rng)
        diffs.append((noisy.gains - h.gains).ravel())
    noise = np.concatenate(diffs)
    assert noise.size > 100_000
    empirical = float(np.mean(np.abs(noise) ** 2))
    assert empirical == pytest.approx(params.estimation_variance, rel=0.02)


def test_ls_noise_halves_with_doubled_ltf():
    h = generate_channel(ChannelConfig(), STA_LOS, AP_POS, seed=19)

    def empirical_var(n_ltf, seed):
        params = LsNoiseParams(n_ltf=n_ltf)
        rng = np.random.default_rng(seed)
        samples = np.concatenate(
            [(add_ls_noise(h, params, rng).gains - h.gains).ravel() for _ in range(7)]
        )
        return float(np.mean(np.abs(samples) ** 2))

    ratio = empirical_var(16, seed=1) / empirical_var(32, seed=2)
    assert ratio == pytest.approx(2.0, rel=0.03)


def test_ls_noise_vanishes_for_huge_ltf_count():
    params = LsNoiseParams(n_ltf=10**9)
    h = generate_channel(SMALL, STA_LOS, AP_POS, seed=23)
    noisy = add_ls_noise(h, params, np.random.default_rng(0))
    max_dev = float(np.max(np.abs(noisy.gains - h.gains)))
    # 6-sigma bound on the largest per-component deviation
    assert max_dev < 6.0 * np.sqrt(params.estimation_variance)


def test_ls_noise_preserves_shape_flags():
    h = generate_channel(SMALL, STA_NLOS, AP_POS, seed=29)
    noisy = add_ls_noise(h, LsNoiseParams(), np.random.default_rng(1))
    assert noisy.gains.shape == h.gains.shape
    assert noisy.los == h.los
    assert noisy.timestamp == h.timestamp


@settings(max_examples=25, deadline=None)
@given(
    n_sc=st.integers(min_value=1, max_value=128),
    n_t=st.integers(min_value=1, max_value=16),
    clusters=st.integers(min_value=1, max_value=12),
    spread=st.floats(min_value=1e-9, max_value=500e-9),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_generated_entries_always_finite(n_sc, n_t, clusters, spread, seed):
    cfg = ChannelConfig(n_sc=n_sc, n_t=n_t, num_clusters=clusters, delay_spread=spread)
    h = generate_channel(cfg, STA_LOS, AP_POS, seed=seed)
    assert np.all(np.isfinite(h.gains.real)) and np.all(np.isfinite(h.gains.imag))
    assert h.gains.shape == (n_sc, n_t)


def test_tensor_is_immutable():
    h = generate_channel(SMALL, STA_LOS, AP_POS, seed=31)
    with pytest.raises(ValueError):
        h.gains[0, 0] = 0.0


def test_dataset_export_roundtrip(tmp_path):
    cfg = SMALL
    tensors = [generate_channel(cfg, STA_LOS, AP_POS, seed=s) for s in range(3)]
    tensors.append(generate_channel(cfg, STA_NLOS, AP_POS, seed=3))
    out = tmp_path / "channels.bin"
    export_channel_dataset(out, cfg, tensors, room_ids=[0, 0, 0, 1])
    sidecar, loaded = load_channel_dataset(out)
    assert sidecar["config"]["n_sc"] == cfg.n_sc
    assert len(loaded) == 4
    assert [t.los for t in loaded] == [True, True, True, False]
    for orig, back in zip(tensors, loaded):
        assert np.allclose(orig.gains, back.gains, atol=1e-6)
    # fixed layout: header is 18 bytes, then n_samples * n_sc * n_t * 8 bytes
    assert out.stat().st_size == 18 + 4 * cfg.n_sc * cfg.n_t * 8
