"""Inverse-compositional registration: Jacobian, twist solve, full loop."""

import numpy as np
import pytest

from pointreg import data, encoder, se3, solver
from pointreg.errors import DegenerateCloud

from conftest import asymmetric_cloud, random_twist


def _moment_encode(cloud):
    return encoder.encode_moments(cloud)


def _centered_cloud(n=400, seed=9):
    cloud = asymmetric_cloud(n, seed=seed)
    return cloud - cloud.mean(axis=0)


class TestComputeJacobian:
    def test_matches_analytic_moment_jacobian(self):
        cloud = _centered_cloud()
        jac = solver.compute_jacobian(_moment_encode, cloud, step=1e-6)
        analytic = encoder.moment_jacobian(cloud)
        assert np.abs(jac - analytic).max() < 1e-5

    def test_step_controls_truncation_error(self):
        # Forward differences: error should shrink linearly with the step.
        cloud = _centered_cloud()
        analytic = encoder.moment_jacobian(cloud)
        errs = []
        for step in (1e-2, 1e-3, 1e-4):
            jac = solver.compute_jacobian(_moment_encode, cloud, step=step)
            errs.append(np.abs(jac - analytic).max())
        ratios = [errs[i] / errs[i + 1] for i in range(2)]
        for ratio in ratios:
            assert 5.0 < ratio < 20.0  # ~10x per decade for a first-order scheme

    def test_uses_supplied_base_feature(self):
        cloud = _centered_cloud()
        base = _moment_encode(cloud)
        calls = []

        def counting(points):
            calls.append(1)
            return _moment_encode(points)

        solver.compute_jacobian(counting, cloud, step=1e-6, base_feature=base)
        assert len(calls) == 6  # one per generator, none for the base

        calls.clear()
        solver.compute_jacobian(counting, cloud, step=1e-6)
        assert len(calls) == 7  # base computed internally

    def test_shape(self):
        jac = solver.compute_jacobian(_moment_encode, _centered_cloud(), step=1e-6)
        assert jac.shape == (encoder.MOMENT_DIM, 6)


class TestSolveTwist:
    def test_exact_square_system(self):
        rng = data.make_rng(3)
        jac = rng.random((6, 6)) + np.eye(6) * 3.0
        twist = rng.random(6)
        found = solver.solve_twist(jac, jac @ twist + np.ones(6), np.ones(6))
        np.testing.assert_allclose(found, twist, atol=1e-10)

    def test_overdetermined_least_squares(self):
        # Tall Jacobian: the answer must match the normal-equations oracle.
        rng = data.make_rng(4)
        jac = rng.random((12, 6))
        residual = rng.random(12)
        found = solver.solve_twist(jac, residual, np.zeros(12))
        oracle = np.linalg.solve(jac.T @ jac, jac.T @ residual)
        np.testing.assert_allclose(found, oracle, atol=1e-8)

    def test_identity_jacobian_reads_off_residual(self):
        jac = np.vstack([np.eye(6), np.zeros((6, 6))])
        residual = np.arange(12, dtype=float)
        np.testing.assert_allclose(
            solver.solve_twist(jac, residual, np.zeros(12)), np.arange(6, dtype=float),
            atol=1e-12,
        )

    def test_rank_deficient_matches_ridge_limit(self):
        # Pseudo-inverse solution == limit of Tikhonov-regularized solves.
        rng = data.make_rng(5)
        basis = rng.random((12, 4))
        jac = basis @ rng.random((4, 6))  # rank <= 4
        residual = rng.random(12)
        found = solver.solve_twist(jac, residual, np.zeros(12))
        # Ridge solutions approach the answer as the regularizer shrinks...
        gaps = []
        for ridge_eps in (1e-4, 1e-6, 1e-8):
            ridge = np.linalg.solve(
                jac.T @ jac + ridge_eps * np.eye(6), jac.T @ residual
            )
            gaps.append(np.abs(found - ridge).max())
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-6
        # ...and the minimum-norm least-squares oracle agrees directly.
        oracle = np.linalg.lstsq(jac, residual, rcond=1e-6)[0]
        np.testing.assert_allclose(found, oracle, atol=1e-9)

    def test_zero_residual_gives_zero_twist(self):
        jac = data.make_rng(6).random((9, 6))
        feat = np.arange(9, dtype=float)
        np.testing.assert_array_equal(solver.solve_twist(jac, feat, feat), np.zeros(6))


class TestRegister:
    def test_identity_input_converges_first_iteration(self):
        cloud = asymmetric_cloud(300, seed=1)
        result = solver.register(_moment_encode, cloud, cloud.copy())
        assert result.converged
        assert result.iterations_used == 1
        rot_err, trans_err = se3.pose_error(result.estimate, np.eye(4))
        assert rot_err < 1e-9 and trans_err < 1e-9

    def test_recovers_known_transform(self):
        rng = data.make_rng(2)
        template = asymmetric_cloud(500, seed=3)
        for _ in range(5):
            g_true = se3.exp_map(random_twist(rng, max_angle=np.deg2rad(30), trans_scale=0.3))
            source = se3.apply_transform(g_true, template)
            result = solver.register(_moment_encode, template, source)
            rot_err, trans_err = se3.pose_error(result.estimate, g_true)
            assert result.converged
            assert rot_err < 0.01 and trans_err < 1e-4

    def test_encoder_call_budget_exact(self):
        # Total encoder invocations must be jacobian(7) + source(1) + one per
        # iteration actually taken.
        calls = []

        def counting(points):
            calls.append(1)
            return _moment_encode(points)

        template = asymmetric_cloud(400, seed=4)
        g_true = se3.exp_map(np.array([0.05, -0.08, 0.03, 0.1, -0.05, 0.02]))
        source = se3.apply_transform(g_true, template)
        result = solver.register(counting, template, source)
        assert len(calls) == 8 + result.iterations_used

    def test_single_iteration_error_is_second_order(self):
        # One Gauss-Newton step from a small offset eps leaves O(eps^2) error:
        # shrinking eps 10x should shrink the residual error ~100x.
        template = asymmetric_cloud(500, seed=5)
        cfg = solver.SolverConfig(max_iters=1, stop_threshold=0.0)
        errors = []
        for eps in (1e-2, 1e-3):
            twist = np.full(6, eps) / np.sqrt(6.0)
            g_true = se3.exp_map(twist)
            source = se3.apply_transform(g_true, template)
            result = solver.register(_moment_encode, template, source, config=cfg)
            rot_err, trans_err = se3.pose_error(result.estimate, g_true)
            errors.append(np.deg2rad(rot_err) + trans_err)
            assert np.deg2rad(rot_err) + trans_err < eps  # one step always helps
        assert errors[0] / errors[1] > 30.0  # clearly super-linear

    def test_residual_descent(self):
        # The twist magnitude sequence should be overwhelmingly decreasing.
        rng = data.make_rng(6)
        template = asymmetric_cloud(500, seed=7)
        drops = total = 0
        for _ in range(20):
            g_true = se3.exp_map(random_twist(rng, max_angle=np.deg2rad(40), trans_scale=0.4))
            source = se3.apply_transform(g_true, template)
            result = solver.register(_moment_encode, template, source)
            norms = result.per_iteration_twist_norms
            for a, b in zip(norms, norms[1:]):
                total += 1
                drops += a >= b
        assert drops / total >= 0.9

    def test_translation_equivariance(self):
        # Shifting both clouds by the same offset must not change the
        # relative estimate (centering makes the solve offset-free).
        template = asymmetric_cloud(400, seed=8)
        g_true = se3.exp_map(np.array([0.1, 0.05, -0.07, 0.2, -0.1, 0.15]))
        source = se3.apply_transform(g_true, template)
        base = solver.register(_moment_encode, template, source)

        offset = np.array([5.0, -3.0, 2.0])
        shifted = solver.register(_moment_encode, template + offset, source + offset)
        # g' = T g T^{-1} for the common shift T.
        t_mat = np.eye(4)
        t_mat[:3, 3] = offset
        expected = se3.compose(t_mat, se3.compose(base.estimate, se3.inverse(t_mat)))
        rot_err, trans_err = se3.pose_error(shifted.estimate, expected)
        assert rot_err < 1e-6 and trans_err < 1e-6

    def test_constant_encoder_stops_immediately(self):
        result = solver.register(
            lambda points: np.zeros(16), asymmetric_cloud(100, seed=9),
            asymmetric_cloud(100, seed=10),
        )
        assert result.converged
        assert result.iterations_used == 1
        rot_err, trans_err = se3.pose_error(result.estimate, np.eye(4))
        # Zero Jacobian + zero residual -> zero twist; estimate reduces to the
        # centroid shift between the clouds.
        assert rot_err < 1e-12

    def test_max_iters_exhaustion_reported(self):
        template = asymmetric_cloud(300, seed=11)
        g_true = se3.exp_map(np.array([0.3, -0.2, 0.25, 0.3, -0.2, 0.1]))
        source = se3.apply_transform(g_true, template)
        cfg = solver.SolverConfig(max_iters=2, stop_threshold=1e-15)
        result = solver.register(_moment_encode, template, source, config=cfg)
        assert not result.converged
        assert result.iterations_used == 2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            solver.SolverConfig(max_iters=0)
        with pytest.raises(ValueError):
            solver.SolverConfig(step=0.0)
        with pytest.raises(ValueError):
            solver.SolverConfig(step=-1e-6)
        with pytest.raises(ValueError):
            solver.SolverConfig(stop_threshold=-1.0)

    def test_mismatched_point_dims_rejected(self):
        with pytest.raises(DegenerateCloud):
            solver.register(_moment_encode, np.zeros((0, 3)), np.zeros((5, 3)))
        with pytest.raises(DegenerateCloud):
            solver.register(_moment_encode, np.zeros((5, 4)), np.zeros((5, 3)))


class TestRegisterPartial:
    def test_identity_partial_exact(self):
        mesh = data.box_mesh()
        cloud = data.sample_surface(mesh, 2000, seed=1)
        for mode in ("depth", "componentwise"):
            result = solver.register_partial(
                _moment_encode, cloud, cloud.copy(), visibility=mode
            )
            assert result.converged
            rot_err, trans_err = se3.pose_error(result.estimate, np.eye(4))
            assert rot_err < 1e-6 and trans_err < 1e-6

    def test_small_in_plane_rotation_recovered(self):
        # Rotation about the view axis preserves every point's depth, so the
        # visible memberships agree at the solution and recovery can be exact.
        # The shape must not be near-symmetric about that axis (a cube viewed
        # down its body diagonal hides this rotation from pooled moments), so
        # the fixture uses the asymmetric blob.
        mesh = data.blob_mesh()
        cloud = data.sample_surface(mesh, 4000, seed=2)
        axis = data.VIEW_AXIS
        g_true = se3.exp_map(np.concatenate([np.deg2rad(5.0) * axis, np.zeros(3)]))
        source = se3.apply_transform(g_true, cloud)
        result = solver.register_partial(_moment_encode, cloud, source, visibility="depth")
        rot_err, trans_err = se3.pose_error(result.estimate, g_true)
        assert rot_err < 0.5
        assert trans_err < 5e-3

    def test_view_axis_rotation_preserves_visibility(self):
        # The geometric fact the previous test relies on.
        cloud = data.sample_surface(data.blob_mesh(), 1000, seed=5)
        centered = cloud - cloud.mean(axis=0)
        g = se3.exp_map(np.concatenate([np.deg2rad(30.0) * data.VIEW_AXIS, np.zeros(3)]))
        rotated = se3.apply_transform(g, centered)
        np.testing.assert_array_equal(
            data.visible_mask(centered, "depth"), data.visible_mask(rotated, "depth")
        )

    def test_empty_visible_set_raises(self):
        # One lonely point: after the strict-inequality cut nothing survives.
        cloud = np.zeros((1, 3))
        with pytest.raises(Exception):
            solver.register_partial(_moment_encode, cloud, cloud.copy())
