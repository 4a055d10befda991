import logging
import math

import numpy as np
import pytest

import oracles
from appearance_transfer import colortransfer as ct
from appearance_transfer.colortransfer import (
    GMMModel,
    TPSParams,
    TransferConfig,
    TransferFitError,
    apply_transfer,
    average_params,
    fit_multi_couple,
    fit_single_couple,
    kmeans_colors,
    l2_energy,
    l2_energy_gradient,
    load_tps,
    save_tps,
    shared_control_points,
    side_condition_projector,
    tps_eval,
)
from appearance_transfer.synthetic import two_color_rig


def palette_image(palette, size=40, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    img = np.asarray(palette)[rng.integers(0, len(palette), (size, size))]
    if noise:
        img = img + noise * rng.normal(size=img.shape)
    return np.clip(img, 0, 1)


def random_instance(rng, K=3, C=3):
    cps = rng.random((C, 3))
    W = 0.1 * rng.normal(size=(C, 3))
    theta = TPSParams(np.eye(3) + 0.1 * rng.normal(size=(3, 3)), 0.05 * rng.normal(size=3), W, cps)
    h = rng.uniform(0.08, 0.3)
    return theta, GMMModel(rng.random((K, 3)), h), GMMModel(rng.random((K + 1, 3)), h)


class TestKMeans:
    def test_two_points(self):
        c = kmeans_colors([[0, 0, 0], [1, 1, 1]], 2)
        assert sorted(map(tuple, c)) == [(0, 0, 0), (1, 1, 1)]

    def test_identical_points(self):
        assert kmeans_colors(np.full((10, 3), 0.3), 1).tolist() == [[0.3, 0.3, 0.3]]

    def test_two_blobs(self):
        rng = np.random.default_rng(0)
        pts = np.vstack([0.2 + 0.01 * rng.normal(size=(100, 3)), 0.8 + 0.01 * rng.normal(size=(100, 3))])
        c = kmeans_colors(pts, 2, seed=3)
        c = c[np.argsort(c[:, 0])]
        assert np.abs(c[0] - pts[:100].mean(0)).max() < 0.05
        assert np.abs(c[1] - pts[100:].mean(0)).max() < 0.05

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_exhaustive_two_partition(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.vstack([rng.normal(0.3, 0.05, (6, 3)), rng.normal(0.6, 0.05, (6, 3))])
        cost, centers = oracles.best_two_partition(pts)
        got = kmeans_colors(pts, 2, seed=seed)
        got_cost = ((pts[:, None] - got[None]) ** 2).sum(-1).min(1).sum()
        assert got_cost == pytest.approx(cost, rel=1e-12)
        key = lambda c: tuple(np.round(c, 9))
        assert sorted(map(key, got)) == sorted(map(key, centers))

    def test_deterministic(self):
        pts = np.random.default_rng(1).random((500, 3))
        assert np.array_equal(kmeans_colors(pts, 7, seed=4), kmeans_colors(pts, 7, seed=4))

    def test_reduces_k_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            c = kmeans_colors([[0.1, 0.1, 0.1]] * 5 + [[0.9, 0.9, 0.9]] * 5, 4)
        assert len(c) == 2 and "reducing K" in caplog.text


class TestTPS:
    def test_identity(self):
        x = np.random.default_rng(0).random((10, 3))
        assert np.array_equal(tps_eval(TPSParams.identity(np.random.default_rng(1).random((4, 3))), x), x)

    def test_translation(self):
        th = TPSParams(np.eye(3), [0.1, 0.1, 0.1], np.zeros((0, 3)), np.zeros((0, 3)))
        assert th([0.2, 0.2, 0.2]) == pytest.approx([0.3, 0.3, 0.3])

    def test_radial_term(self):
        th = TPSParams(np.eye(3), np.zeros(3), [[1.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]])
        assert th([0.3, 0.4, 0.0]) == pytest.approx([0.8, 0.4, 0.0])

    def test_not_clipped_during_evaluation(self):
        th = TPSParams(2 * np.eye(3), np.zeros(3), np.zeros((0, 3)), np.zeros((0, 3)))
        assert th([0.9, 0.9, 0.9]).max() == pytest.approx(1.8)

    def test_side_condition_projector(self):
        cps = np.random.default_rng(2).random((6, 3))
        W = side_condition_projector(cps) @ np.random.default_rng(3).normal(size=(6, 3))
        assert np.abs(W.sum(0)).max() < 1e-12
        assert np.abs(W.T @ cps).max() < 1e-12


class TestEnergy:
    def test_single_component_closed_form(self):
        g = GMMModel([[0.4, 0.5, 0.6]], 0.1)
        e = l2_energy(TPSParams.identity(), g, g)
        assert e == pytest.approx(-((4 * math.pi * 0.01) ** -1.5), rel=1e-12)
        assert e == pytest.approx(-22.44839026564582, rel=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        theta, gf, gi = random_instance(rng)
        want = oracles.l2_energy(
            theta.affine, theta.offset, theta.radial_weights, theta.control_points, gf.means, gi.means, gf.bandwidth, 0.01
        )
        assert l2_energy(theta, gf, gi, lam=0.01) == pytest.approx(want, rel=1e-12)

    def test_translation_equivalence(self):
        rng = np.random.default_rng(4)
        means = rng.random((5, 3))
        delta = np.array([0.05, -0.1, 0.02])
        shifted = TPSParams(np.eye(3), delta, np.zeros((0, 3)), np.zeros((0, 3)))
        e1 = l2_energy(shifted, GMMModel(means, 0.1), GMMModel(means + delta, 0.1))
        e0 = l2_energy(TPSParams.identity(), GMMModel(means, 0.1), GMMModel(means, 0.1))
        assert e1 == pytest.approx(e0, rel=1e-12)

    def test_identity_beats_random_perturbations(self):
        rng = np.random.default_rng(5)
        g = GMMModel(rng.random((6, 3)), 0.1)
        cps = rng.random((4, 3))
        base = l2_energy(TPSParams.identity(cps), g, g)
        v0 = TPSParams.identity(cps).vector()
        for _ in range(100):
            assert base <= l2_energy(TPSParams.identity(cps).with_vector(v0 + 0.05 * rng.normal(size=v0.size)), g, g)

    def test_bandwidths_must_match(self):
        with pytest.raises(ValueError):
            l2_energy(TPSParams.identity(), GMMModel([[0, 0, 0]], 0.1), GMMModel([[0, 0, 0]], 0.2))


class TestGradient:
    def test_zero_offset_gradient_at_coincidence(self):
        g = GMMModel([[0.3, 0.6, 0.2]], 0.1)
        _, db, _ = l2_energy_gradient(TPSParams.identity(), g, g)
        assert np.abs(db).max() < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        theta, gf, gi = random_instance(rng, K=3, C=3)
        lam = 1e-3
        dA, db, dW = l2_energy_gradient(theta, gf, gi, lam)
        g = np.concatenate([dA.ravel(), db, dW.ravel()])
        fd = oracles.finite_difference(lambda v: l2_energy(theta.with_vector(v), gf, gi, lam), theta.vector())
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() < 1e-4

    def test_regularization_gradient(self):
        rng = np.random.default_rng(9)
        theta, gf, gi = random_instance(rng)
        _, _, dW0 = l2_energy_gradient(theta, gf, gi, 0.0)
        _, _, dW1 = l2_energy_gradient(theta, gf, gi, 0.5)
        assert np.allclose(dW1 - dW0, 2 * 0.5 * theta.radial_weights, rtol=0, atol=1e-15)


class TestFit:
    def test_identity_recovery(self):
        img = palette_image([[0.8, 0.3, 0.2], [0.2, 0.5, 0.7], [0.6, 0.6, 0.6]], noise=0.03)
        cfg = TransferConfig()
        theta = fit_single_couple(img, img, shared_control_points([img], cfg), cfg)
        centers = kmeans_colors(img.reshape(-1, 3), cfg.K, cfg.seed)
        assert np.linalg.norm(theta(centers) - centers, axis=1).mean() < 0.01

    def test_affine_recovery(self):
        palette = np.random.default_rng(1).uniform(0.15, 0.85, (6, 3))
        img = palette_image(palette, seed=2)
        ref = 0.8 * img + 0.1
        cfg = TransferConfig()
        theta = fit_single_couple(img, ref, shared_control_points([img], cfg), cfg)
        assert np.abs(theta(palette) - (0.8 * palette + 0.1)).max() < 0.02

    def test_channel_swap(self):
        palette = np.array([[0.8, 0.2, 0.2], [0.5, 0.5, 0.5], [0.2, 0.2, 0.8]])
        img = palette_image(palette, seed=1, noise=0.02)
        cfg = TransferConfig()
        theta = fit_single_couple(img, img[..., [1, 0, 2]], shared_control_points([img], cfg), cfg)
        assert np.abs(theta([0.8, 0.2, 0.2]) - [0.2, 0.8, 0.2]).max() < 0.05

    def test_side_conditions_energy_descent_and_determinism(self):
        rng = np.random.default_rng(3)
        target = palette_image(rng.random((8, 3)), noise=0.02, seed=4)
        ref = np.clip(target**1.3 + 0.05, 0, 1)
        cfg = TransferConfig(K=12, n_control=8)
        cps = shared_control_points([target], cfg)
        theta, info = fit_single_couple(target, ref, cps, cfg, full_output=True)
        assert np.abs(theta.radial_weights.sum(0)).max() < 1e-6
        assert np.abs(theta.radial_weights.T @ cps).max() < 1e-6
        assert [h for h, _ in info.stages] == pytest.approx([0.4, 0.2, 0.1])
        for _, energies in info.stages:
            assert all(b <= a for a, b in zip(energies, energies[1:]))
        assert info.energies[-1] < info.energies[0]
        again = fit_single_couple(target, ref, cps, cfg)
        assert np.array_equal(theta.vector(), again.vector())

    def test_masked_pixels_only(self):
        img = palette_image([[0.2, 0.4, 0.6]], size=20)
        mask = np.zeros((20, 20), bool)
        mask[:10] = True
        img[~mask] = [0.0, 1.0, 0.0]
        ref = np.clip(img + 0.1, 0, 1)
        ref[~mask] = [1.0, 0.0, 1.0]
        cfg = TransferConfig()
        theta = fit_single_couple((img, mask), (ref, mask), np.zeros((0, 3)), cfg)
        assert theta([0.2, 0.4, 0.6]) == pytest.approx([0.3, 0.5, 0.7], abs=0.01)

    def test_empty_foreground(self):
        img = np.zeros((4, 4, 3))
        with pytest.raises(TransferFitError, match="empty foreground"):
            fit_single_couple((img, np.zeros((4, 4), bool)), img, np.zeros((0, 3)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TransferConfig(h=0)
        with pytest.raises(ValueError):
            TransferConfig(anneal=(2.0, 0.5))


class TestMultiCouple:
    def test_identical_couples_average_exactly(self):
        img = palette_image(np.random.default_rng(0).random((5, 3)), noise=0.02)
        ref = np.clip(img * 0.9 + 0.05, 0, 1)
        cfg = TransferConfig(K=10, n_control=6)
        cps = shared_control_points([img], cfg)
        single = fit_single_couple(img, ref, cps, cfg)
        multi = fit_multi_couple([(img, ref)] * 3, cfg, control_points=cps)
        assert np.array_equal(single.vector(), multi.vector())

    def test_average_of_translations(self):
        cps = np.zeros((0, 3))
        t1 = TPSParams(np.eye(3), [0.1, 0.0, 0.2], cps, cps)
        t2 = TPSParams(np.eye(3), [0.3, -0.2, 0.0], cps, cps)
        avg = average_params([t1, t2])
        assert avg.offset == pytest.approx([0.2, -0.1, 0.1]) and np.array_equal(avg.affine, np.eye(3))

    def test_average_needs_shared_basis(self):
        a = TPSParams.identity(np.zeros((2, 3)))
        b = TPSParams.identity(np.ones((2, 3)))
        with pytest.raises(ValueError):
            average_params([a, b])

    def test_skips_rejected_couples(self, caplog):
        img = palette_image([[0.3, 0.3, 0.3], [0.6, 0.2, 0.1]], size=12)
        empty = (img, np.zeros((12, 12), bool))
        with caplog.at_level(logging.WARNING):
            theta = fit_multi_couple([(empty, img), (img, img)], TransferConfig(K=4, n_control=2))
        assert "couple 0 skipped" in caplog.text
        assert np.abs(theta([0.3, 0.3, 0.3]) - 0.3).max() < 0.01

    def test_all_rejected(self):
        img = np.zeros((4, 4, 3))
        empty = (img, np.zeros((4, 4), bool))
        with pytest.raises(TransferFitError):
            fit_multi_couple([(empty, empty)], control_points=np.zeros((0, 3)))

    def test_unseen_color_needs_coverage(self):
        views = two_color_rig(seed=0)
        cfg = TransferConfig()

        def center_error(theta, view):
            target, ref = views[view]
            return np.linalg.norm(theta(target.reshape(-1, 3)).mean(0) - ref.reshape(-1, 3).mean(0))

        one = fit_multi_couple([views[0]], cfg)  # view 0 sees only the front color
        seen, unseen = center_error(one, 0), center_error(one, 4)
        assert unseen > 5 * seen
        eight = fit_multi_couple(views, cfg)
        assert max(center_error(eight, 0), center_error(eight, 4)) < 0.05


class TestApply:
    def test_identity(self):
        img = np.random.default_rng(0).random((5, 5, 3))
        assert np.array_equal(apply_transfer(TPSParams.identity(), img), img)

    def test_translation_and_clip(self):
        th = TPSParams(np.eye(3), [0.1, 0.0, 0.0], np.zeros((0, 3)), np.zeros((0, 3)))
        img = np.array([[[0.5, 0.5, 0.5], [0.95, 0.2, 0.2]]])
        out = apply_transfer(th, img)
        assert out[0, 0] == pytest.approx([0.6, 0.5, 0.5])
        assert out[0, 1, 0] == 1.0

    def test_background_untouched(self):
        th = TPSParams(np.eye(3), [0.2, 0.2, 0.2], np.zeros((0, 3)), np.zeros((0, 3)))
        img = np.full((3, 3, 3), 0.4)
        mask = np.eye(3, dtype=bool)
        out = apply_transfer(th, img, mask, chunk=2)
        assert np.allclose(out[mask], 0.6) and np.array_equal(out[~mask], img[~mask])


def test_tps_file_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    theta, _, _ = random_instance(rng, C=5)
    save_tps(theta, tmp_path / "t.tps")
    lines = (tmp_path / "t.tps").read_text().splitlines()
    assert lines[0] == ct.TPS_MAGIC and lines[1] == "5"
    back = load_tps(tmp_path / "t.tps")
    assert np.array_equal(back.vector(), theta.vector())
    assert np.array_equal(back.control_points, theta.control_points)


def test_tps_file_rejects_garbage(tmp_path):
    (tmp_path / "t.tps").write_text("something else\n")
    with pytest.raises(ValueError):
        load_tps(tmp_path / "t.tps")
