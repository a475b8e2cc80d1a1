import numpy as np
import pytest

from airfed import _kernels, channel, rng, topology


def test_pack_complex_example():
    out = channel.pack_complex(np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.array_equal(out, np.array([1 + 3j, 2 + 4j]))


def test_pack_rejects_odd_length():
    with pytest.raises(ValueError):
        channel.pack_complex(np.ones(5))


def test_unpack_complex_example():
    assert np.array_equal(channel.unpack_complex(np.array([1 + 3j, 2 + 4j])),
                          np.array([1.0, 2.0, 3.0, 4.0]))
    real_only = channel.unpack_complex(np.array([2.0 + 0j, 5.0 + 0j]))
    assert np.array_equal(real_only[2:], np.zeros(2))


def test_pack_unpack_round_trip():
    v = rng.substream(0, 1).standard_normal(64)
    assert np.array_equal(channel.unpack_complex(channel.pack_complex(v)), v)


def test_draw_channels_moment_oracle():
    betas = np.array([0.5, 2.0, 8.0])
    sh2 = 1.7
    gen = rng.substream(2, rng.CHANNEL)
    ch = channel.draw_channels_from_betas(betas, 25, 2000, sh2, gen)
    est = (np.abs(ch.coefficients) ** 2).mean(axis=(1, 2))
    assert est == pytest.approx(betas * sh2, rel=0.01)


def test_draw_channels_deterministic_and_unit():
    betas = np.array([1.0, 4.0])
    a = channel.draw_channels_from_betas(betas, 3, 5, 1.0, rng.substream(7, 0))
    b = channel.draw_channels_from_betas(betas, 3, 5, 1.0, rng.substream(7, 0))
    assert np.array_equal(a.coefficients, b.coefficients)
    u = channel.draw_channels_from_betas(betas, 3, 5, 1.0, None, unit=True)
    assert np.array_equal(u.coefficients,
                          np.sqrt(betas)[:, None, None] * np.ones((2, 3, 5)))


def test_draw_channels_from_topology():
    topo = topology.SystemTopology(2, 2, 6, [[1.0, 0.5], [0.8, 0.9]],
                                   np.full(4, 2.0), 4.0)
    ch = channel.draw_channels(topo, 1, 10, 1.0, rng.substream(0, 3, 0, 0, 1))
    assert ch.shape == (2, 6, 10)
    assert np.array_equal(ch.betas, topo.beta[1])


def test_ota_uplink_identity_channel():
    x = np.array([[1 + 2j, 3 - 1j]])
    ch = channel.ChannelTensor(np.ones((1, 1, 2), dtype=np.complex128), 1.0,
                               np.ones(1))
    rx = channel.ota_uplink(x, ch, 1.0, 0.0, None)
    assert np.array_equal(rx.symbols[0], x[0])


def test_ota_uplink_zero_signal_and_errors():
    ch = channel.ChannelTensor(np.ones((2, 3, 4), dtype=np.complex128), 1.0,
                               np.ones(2))
    rx = channel.ota_uplink(np.zeros((2, 4), dtype=complex), ch, 2.0, 0.0, None)
    assert not rx.symbols.any()
    with pytest.raises(ValueError):
        channel.ota_uplink(np.zeros((2, 5), dtype=complex), ch, 1.0, 0.0, None)
    with pytest.raises(ValueError):
        channel.ota_uplink(np.zeros((2, 4), dtype=complex), ch, 0.0, 0.0, None)


def test_noise_variance_oracle():
    gen = rng.substream(5, rng.NOISE)
    z = channel.draw_noise(100, 1000, 3.0, gen)
    var = (np.abs(z) ** 2).mean()
    assert var == pytest.approx(3.0, rel=0.02)
    assert not channel.draw_noise(4, 4, 0.0, gen).any()


def test_mrc_combine_identity_and_constant():
    # K=1, M=1, h=1, y=v -> v
    v = np.array([1 + 1j, 2 - 3j])
    ch = channel.ChannelTensor(np.ones((1, 1, 2), dtype=np.complex128), 1.0,
                               np.ones(1))
    rx = channel.ReceivedSignal(v.reshape(1, 2), 0.0, 1.0)
    assert np.allclose(channel.mrc_combine(rx, ch), v)
    # h = c real constant, M users -> M*c*w
    c, M, K = 1.5, 3, 4
    w = np.array([2 + 1j, -1 + 0.5j])
    ch = channel.ChannelTensor(np.full((M, K, 2), c, dtype=np.complex128),
                               1.0, np.ones(M))
    rx = channel.ReceivedSignal(np.tile(w, (K, 1)), 0.0, 1.0)
    assert np.allclose(channel.mrc_combine(rx, ch), M * c * w)


def test_mrc_combine_dimension_mismatch():
    ch = channel.ChannelTensor(np.ones((1, 2, 3), dtype=np.complex128), 1.0,
                               np.ones(1))
    rx = channel.ReceivedSignal(np.ones((3, 3), dtype=complex), 0.0, 1.0)
    with pytest.raises(ValueError):
        channel.mrc_combine(rx, ch)


def _random_setup(M=3, K=5, N=8, seed=0):
    gen = rng.substream(seed, 9)
    betas = gen.uniform(0.5, 8.0, M)
    ch = channel.draw_channels_from_betas(betas, K, N, 1.3, gen)
    x = (gen.standard_normal((M, N, 2))).view(np.complex128)[..., 0]
    return ch, x


def test_decompose_exact_against_combined():
    ch, x = _random_setup()
    rx = channel.ota_uplink(x, ch, 1.7, 2.0, rng.substream(1, rng.NOISE),
                            record_noise=True)
    combined = channel.mrc_combine(rx, ch)
    sig, itf, noi = channel.decompose_terms(x, ch, 1.7, rx.noise)
    assert np.max(np.abs(sig + itf + noi - combined)) < 1e-12


def test_decompose_single_user_no_interference():
    ch, x = _random_setup(M=1)
    sig, itf, noi = channel.decompose_terms(x, ch, 1.0,
                                            np.zeros((5, 8), dtype=complex))
    assert np.max(np.abs(itf)) == 0.0
    assert np.max(np.abs(noi)) == 0.0


def test_decompose_requires_recorded_noise():
    ch, x = _random_setup()
    with pytest.raises(ValueError):
        channel.decompose_terms(x, ch, 1.0, None)


def test_kernel_backends_agree():
    ch, x = _random_setup(M=4, K=7, N=16, seed=3)
    z = channel.draw_noise(7, 16, 1.0, rng.substream(2, rng.NOISE))
    h = ch.coefficients
    y_np, c_np = _kernels._uplink_combine_np(h, x, 1.3, z)
    d_np = _kernels._decompose_np(h, x, 1.3, z)
    if _kernels.USE_NUMBA:
        y_nb, c_nb = _kernels._uplink_combine_nb(
            np.ascontiguousarray(h), np.ascontiguousarray(x), 1.3,
            np.ascontiguousarray(z))
        d_nb = _kernels._decompose_nb(
            np.ascontiguousarray(h), np.ascontiguousarray(x), 1.3,
            np.ascontiguousarray(z))
        assert np.max(np.abs(y_np - y_nb)) < 1e-12
        assert np.max(np.abs(c_np - c_nb)) < 1e-10
        for a, b in zip(d_np, d_nb):
            assert np.max(np.abs(a - b)) < 1e-10


def test_fused_uplink_matches_reference_path():
    ch, x = _random_setup(M=2, K=6, N=10, seed=5)
    z = channel.draw_noise(6, 10, 0.5, rng.substream(8, rng.NOISE))
    y, combined = channel.uplink_and_combine(x, ch, 1.2, z)
    rx = channel.ReceivedSignal(
        1.2 * np.einsum("mkn,mn->kn", ch.coefficients, x) + z, 0.5, 1.2)
    assert np.max(np.abs(combined - channel.mrc_combine(rx, ch))) < 1e-10


def test_recover_scaling_inverse():
    p_t, M, sh2, bbar = 1.3, 4, 1.1, 6.0
    combined = np.full(5, p_t * M * sh2 * bbar * (1 + 1j))
    out = channel.recover_cluster_update(combined, p_t, M, sh2, bbar)
    assert np.allclose(out, np.ones(10))
    with pytest.raises(ValueError):
        channel.recover_cluster_update(combined, 0.0, M, sh2, bbar)


def test_recover_hand_example_unit_channels():
    # two users, unit channels, diffs [2] and [4] (N=1): recovered value 3
    diffs = np.array([[2.0, 0.0], [4.0, 0.0]])
    x = np.array([channel.pack_complex(d) for d in diffs])
    ch = channel.draw_channels_from_betas(np.ones(2), 3, 1, 1.0, None,
                                          unit=True)
    rx = channel.ota_uplink(x, ch, 1.5, 0.0, None)
    combined = channel.mrc_combine(rx, ch)
    out = channel.recover_cluster_update(combined, 1.5, 2, 1.0, 2.0)
    assert np.allclose(out, [3.0, 0.0])


def test_recovery_error_decreases_with_K():
    gen = rng.substream(77, 0)
    betas = np.array([1.0, 3.0, 6.0])
    diffs = gen.standard_normal((3, 8))
    x = np.array([channel.pack_complex(d) for d in diffs])
    target = diffs.mean(axis=0)
    errs = []
    for K in (4, 8, 16):
        sq = 0.0
        for rep in range(200):
            ch = channel.draw_channels_from_betas(
                betas, K, 4, 1.0, rng.substream(77, 1, K, rep))
            z = channel.draw_noise(K, 4, 1.0, rng.substream(77, 2, K, rep))
            _, combined = channel.uplink_and_combine(x, ch, 1.0, z)
            rec = channel.recover_cluster_update(combined, 1.0, 3, 1.0,
                                                 betas.sum())
            sq += float(((rec - target) ** 2).sum())
        errs.append(sq / 200)
    assert errs[0] > errs[1] > errs[2]


def test_channel_tensor_dump_round_trip(tmp_path):
    ch, _ = _random_setup(M=2, K=3, N=4, seed=1)
    path = tmp_path / "ch.bin"
    channel.dump_channel_tensor(ch, str(path))
    assert path.stat().st_size == 16 + 2 * 3 * 4 * 16
    back = channel.load_channel_tensor(str(path), ch.small_scale_variance,
                                       ch.betas)
    assert np.array_equal(back.coefficients, ch.coefficients)
    assert back.shape == ch.shape
