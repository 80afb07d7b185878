import numpy as np
import pytest

from conftest import check_gradients
from planenerf import heads
from planenerf.autodiff import Tensor


class TestPositionalEncoding:
    def test_zero_input(self):
        out = heads.positional_encoding(np.array([[0.0]]), n_freqs=2)
        np.testing.assert_allclose(out, [[0.0, 1.0, 0.0, 1.0]])

    def test_half_pi(self):
        out = heads.positional_encoding(np.array([[np.pi / 2]]), n_freqs=1)
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)

    def test_no_pi_factor(self):
        # frequency 2^1 exactly: sin(2 * 0.25) not sin(2 pi 0.25)
        out = heads.positional_encoding(np.array([[0.25]]), n_freqs=2)
        assert out[0, 2] == pytest.approx(np.sin(0.5))

    def test_output_length_and_range(self, rng):
        x = rng.normal(size=(10, 3)) * 100
        for L in (1, 4, 16):
            out = heads.positional_encoding(x, L)
            assert out.shape == (10, 2 * L * 3)
            assert np.abs(out).max() <= 1.0

    def test_component_major_then_frequency_order(self, rng):
        x = rng.normal(size=(4, 2))
        out = heads.positional_encoding(x, n_freqs=3)
        # block for component 1 starts at 2*L
        np.testing.assert_allclose(out[:, 6], np.sin(x[:, 1]))
        np.testing.assert_allclose(out[:, 7], np.cos(x[:, 1]))

    def test_default_config_reaches_frequency_2_pow_15(self):
        pe = heads.PEConfig()
        assert pe.l_pos == 16
        x = np.array([[1.0, 0.0, 0.0]])
        out = pe.encode_positions(x)
        # last frequency block of component 0 is sin/cos(2^15 * u)
        assert out[0, 30] == pytest.approx(np.sin(2.0 ** 15), abs=1e-9)
        assert out.shape[1] == pe.pos_dim == 96


def _zeroed(module):
    for p in module.named_parameters().values():
        p.data[:] = 0.0
    return module


def make_heads(rng, sigma_dim=4, color_dim=6, hidden=16, dtype=np.float64):
    pe = heads.PEConfig(l_pos=4, l_dir=2)
    return heads.GridBranchHeads(sigma_dim, color_dim, pe, hidden=hidden,
                                 rng=rng, dtype=dtype)


def make_branch(rng, sigma_dim=4, color_dim=6, width=16, dtype=np.float64):
    pe = heads.PEConfig(l_pos=4, l_dir=2)
    return heads.NerfBranch(sigma_dim, color_dim, pe, width=width, depth=4,
                            rng=rng, dtype=dtype)


def unit_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


class TestGridBranch:
    def test_zero_network_outputs(self, rng):
        gh = _zeroed(make_heads(rng))
        g_s = Tensor(rng.normal(size=(5, 4)))
        g_c = Tensor(rng.normal(size=(5, 6)))
        sigma, color = heads.grid_branch_eval(gh, g_s, g_c, unit_dirs(rng, 5))
        np.testing.assert_allclose(sigma.data, np.log(2.0), rtol=1e-6)
        np.testing.assert_allclose(color.data, 0.5, rtol=1e-6)

    def test_density_nonnegative_random_trials(self, rng):
        gh = make_heads(rng)
        g_s = Tensor(rng.normal(size=(1000, 4)) * 5)
        g_c = Tensor(rng.normal(size=(1000, 6)) * 5)
        sigma, color = heads.grid_branch_eval(gh, g_s, g_c, unit_dirs(rng, 1000))
        assert np.all(sigma.data >= 0.0)
        assert np.all((color.data >= 0.0) & (color.data <= 1.0))

    def test_direction_changes_color_never_density(self, rng):
        gh = make_heads(rng)
        g_s = Tensor(rng.normal(size=(8, 4)))
        g_c = Tensor(rng.normal(size=(8, 6)))
        s1, c1 = heads.grid_branch_eval(gh, g_s, g_c, unit_dirs(rng, 8))
        s2, c2 = heads.grid_branch_eval(gh, g_s, g_c, unit_dirs(rng, 8))
        np.testing.assert_array_equal(s1.data, s2.data)
        assert np.any(c1.data != c2.data)

    def test_finite_for_large_inputs(self, rng):
        gh = make_heads(rng)
        g_s = Tensor(np.full((4, 4), 1e3))
        g_c = Tensor(np.full((4, 6), -1e3))
        sigma, color = heads.grid_branch_eval(gh, g_s, g_c, unit_dirs(rng, 4))
        assert np.all(np.isfinite(sigma.data))
        assert np.all(np.isfinite(color.data))

    def test_gradients_match_finite_differences(self, rng):
        gh = make_heads(rng, hidden=8)
        g_s = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        g_c = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        dirs = unit_dirs(rng, 6)

        def loss():
            s, c = heads.grid_branch_eval(gh, g_s, g_c, dirs)
            return (s * s).sum() + (c * c).sum()

        params = {**gh.named_parameters(), "g_sigma": g_s, "g_c": g_c}
        check_gradients(loss, params, entries_per_param=2)


class TestNerfBranch:
    def test_trunk_is_four_layers_no_skip(self, rng):
        branch = make_branch(rng)
        assert len(branch.trunk.weights) == 4
        widths = [w.shape for w in branch.trunk.weights]
        assert widths[1:] == [(16, 16)] * 3  # uniform width, no concat re-entry

    def test_zero_network_outputs(self, rng):
        branch = _zeroed(make_branch(rng))
        pts = rng.random((5, 3))
        sigma, color = heads.nerf_branch_eval(branch, Tensor(rng.normal(size=(5, 4))),
                                              Tensor(rng.normal(size=(5, 6))),
                                              pts, unit_dirs(rng, 5))
        np.testing.assert_allclose(sigma.data, np.log(2.0), rtol=1e-6)
        np.testing.assert_allclose(color.data, 0.5, rtol=1e-6)

    def test_pointwise_permutation_equivariance(self, rng):
        branch = make_branch(rng)
        g_s = rng.normal(size=(7, 4))
        g_c = rng.normal(size=(7, 6))
        pts = rng.random((7, 3))
        dirs = unit_dirs(rng, 7)
        s1, c1 = heads.nerf_branch_eval(branch, Tensor(g_s), Tensor(g_c), pts, dirs)
        perm = rng.permutation(7)
        s2, c2 = heads.nerf_branch_eval(branch, Tensor(g_s[perm]), Tensor(g_c[perm]),
                                        pts[perm], dirs[perm])
        np.testing.assert_allclose(s2.data, s1.data[perm], rtol=1e-10)
        np.testing.assert_allclose(c2.data, c1.data[perm], rtol=1e-10)

    def test_density_is_view_independent(self, rng):
        branch = make_branch(rng)
        g_s, g_c = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 6)))
        pts = rng.random((6, 3))
        s1, _ = heads.nerf_branch_eval(branch, g_s, g_c, pts, unit_dirs(rng, 6))
        s2, _ = heads.nerf_branch_eval(branch, g_s, g_c, pts, unit_dirs(rng, 6))
        np.testing.assert_array_equal(s1.data, s2.data)

    def test_gradients_match_finite_differences(self, rng):
        branch = make_branch(rng, width=8)
        g_s = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        g_c = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        pts = rng.random((4, 3))
        dirs = unit_dirs(rng, 4)

        def loss():
            s, c = heads.nerf_branch_eval(branch, g_s, g_c, pts, dirs)
            return (s * s).mean() + (c * c).mean()

        params = {**branch.named_parameters(), "g_sigma": g_s, "g_c": g_c}
        check_gradients(loss, params, entries_per_param=2)


def test_mlp_rejects_wrong_input_width(rng):
    head = heads.MLPHead((4, 8, 1), rng)
    with pytest.raises(ValueError, match="width"):
        head(Tensor(np.ones((2, 5), dtype=np.float32)))


def test_checkpoint_parameter_prefixes(rng):
    gh = make_heads(rng)
    assert all(n.startswith("grid_head.") for n in gh.named_parameters())
    branch = make_branch(rng)
    names = branch.named_parameters()
    assert all(n.startswith("nerf_branch.") for n in names)
    assert any(".trunk." in n for n in names)
    assert any(".sigma." in n for n in names) and any(".color." in n for n in names)


def test_package_level_exports():
    import planenerf

    assert planenerf.Tensor is Tensor
    assert callable(planenerf.positional_encoding)
    assert callable(planenerf.run_training)
    with pytest.raises(AttributeError):
        planenerf.not_a_symbol
