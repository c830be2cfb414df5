import math

import numpy as np
import pytest
import torch

from gnerf.cameras import Intrinsics, PoseDistribution, generate_rays, pose_from_angles
from gnerf.oracle import oracle_field
from gnerf.rendering import RaySamples, RenderConfig, composite, render, stratified_samples

from conftest import fine_integrate


class TestStratifiedSamples:
    def test_two_bin_midpoints(self):
        s = stratified_samples(0.0, 1.0, 2)
        np.testing.assert_allclose(s.t_values.numpy(), [0.25, 0.75], atol=1e-7)

    def test_single_bin_midpoint(self):
        s = stratified_samples(1.0, 3.0, 1)
        np.testing.assert_allclose(s.t_values.numpy(), [2.0], atol=1e-7)

    def test_jittered_samples_stay_in_bins(self):
        rng = np.random.default_rng(0)
        n = 32
        s = stratified_samples(2.0, 4.0, n, rng=rng, jitter=True)
        width = 2.0 / n
        lo = 2.0 + width * np.arange(n)
        t = s.t_values.numpy()
        assert np.all(t >= lo - 1e-7)
        assert np.all(t <= lo + width + 1e-7)

    def test_invalid_interval_rejected(self):
        with pytest.raises(ValueError, match="t_far"):
            stratified_samples(1.0, 1.0, 4)

    def test_last_delta_capped_at_mean_bin_width(self):
        s = stratified_samples(0.0, 1.0, 4)
        deltas = s.deltas.numpy()
        np.testing.assert_allclose(deltas[:-1], 0.25, atol=1e-7)
        assert deltas[-1] == pytest.approx(0.125, abs=1e-7)


class TestComposite:
    def test_fully_transparent_ray(self):
        s = stratified_samples(0.0, 1.0, 8, dtype=torch.float64)
        colors = torch.rand(8, 3, dtype=torch.float64)
        out = composite(colors, torch.zeros(8, dtype=torch.float64), s)
        np.testing.assert_allclose(out.color.numpy(), np.zeros(3), atol=1e-12)
        assert out.depth.item() == 0.0
        assert out.weight_sum.item() == 0.0

    def test_opaque_single_sample(self):
        t = torch.tensor([1.5], dtype=torch.float64)
        delta = torch.tensor([0.5], dtype=torch.float64)
        s = RaySamples(t_values=t, deltas=delta, jittered=False)
        color = torch.tensor([[0.2, 0.6, 0.9]], dtype=torch.float64)
        sigma = torch.tensor([40.0], dtype=torch.float64)  # sigma * delta = 20
        out = composite(color, sigma, s)
        np.testing.assert_allclose(out.color.numpy(), [0.2, 0.6, 0.9], atol=1e-6)
        assert out.depth.item() == pytest.approx(1.5, abs=1e-6)

    def test_two_sample_hand_computed_weights(self):
        # sigma * delta = ln 2 for both: alpha = 0.5 each, weights (0.5, 0.25)
        t = torch.tensor([1.0, 2.0], dtype=torch.float64)
        delta = torch.tensor([1.0, 1.0], dtype=torch.float64)
        s = RaySamples(t_values=t, deltas=delta, jittered=False)
        colors = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
        sigma = torch.full((2,), math.log(2.0), dtype=torch.float64)
        out = composite(colors, sigma, s)
        np.testing.assert_allclose(out.weights.numpy(), [0.5, 0.25], atol=1e-12)
        np.testing.assert_allclose(out.color.numpy(), [0.5, 0.25, 0.0], atol=1e-12)
        assert out.depth.item() == pytest.approx(1.0 * 0.5 + 2.0 * 0.25, abs=1e-12)

    def test_negative_density_rejected(self):
        s = stratified_samples(0.0, 1.0, 2)
        with pytest.raises(ValueError, match="non-negative"):
            composite(torch.rand(2, 3), torch.tensor([0.1, -0.1]), s)

    def test_length_mismatch_rejected(self):
        s = stratified_samples(0.0, 1.0, 4)
        with pytest.raises(ValueError):
            composite(torch.rand(3, 3), torch.rand(3), s)

    def test_weights_nonnegative_and_bounded(self):
        rng = np.random.default_rng(5)
        s = stratified_samples(1.0, 3.0, 64, dtype=torch.float64)
        for _ in range(20):
            sigma = torch.as_tensor(rng.uniform(0, 30, size=64))
            colors = torch.as_tensor(rng.uniform(0, 1, size=(64, 3)))
            out = composite(colors, sigma, s)
            assert out.weights.min().item() >= 0.0
            assert out.weight_sum.item() <= 1.0 + 1e-6

    def test_front_to_back_order_matters(self):
        # permuting samples changes the result: compositing is order-dependent
        s = stratified_samples(1.0, 3.0, 16, dtype=torch.float64)
        rng = np.random.default_rng(3)
        sigma = torch.as_tensor(rng.uniform(0.5, 5.0, size=16))
        colors = torch.as_tensor(rng.uniform(0, 1, size=(16, 3)))
        out = composite(colors, sigma, s)
        perm = torch.arange(15, -1, -1)
        out_perm = composite(colors[perm], sigma[perm], s)
        assert not torch.allclose(out.color, out_perm.color)


def _slab_field(z0: float, half_width: float, sigma: float = 1e4):
    def field(points, dirs):
        inside = (points[:, 2] - z0).abs() <= half_width
        density = torch.where(
            inside,
            torch.full_like(points[:, 0], sigma),
            torch.zeros_like(points[:, 0]),
        )
        colors = torch.full((points.shape[0], 3), 0.5, dtype=points.dtype)
        return colors, density

    return field


class TestRender:
    @pytest.fixture
    def setup(self):
        dist = PoseDistribution()
        pose = pose_from_angles(0.0, 0.0, dist)
        intr = Intrinsics(focal_px=60.0, width=16, height=16)
        return pose, intr

    def test_empty_field_gives_background(self, setup):
        pose, intr = setup

        def field(points, dirs):
            return torch.zeros(points.shape[0], 3), torch.zeros(points.shape[0])

        cfg = RenderConfig(n_samples=16, background=(0.2, 0.4, 0.6))
        out = render(field, pose, intr, cfg)
        expected = np.broadcast_to([0.2, 0.4, 0.6], (16, 16, 3)).astype(np.float32)
        np.testing.assert_allclose(out.color.numpy(), expected, atol=1e-6)
        np.testing.assert_array_equal(out.weight_sum.numpy(), np.zeros((16, 16)))

    def test_slab_depth_matches_analytic_intersection(self, setup):
        pose, intr = setup
        z0, h = 0.0, 0.05
        cfg = RenderConfig(t_near=1.7, t_far=3.7, n_samples=256)
        out = render(_slab_field(z0, h), pose, intr, cfg, dtype=torch.float64)
        _, dirs = generate_rays(pose, intr)
        # frontal camera at z=2.7 looking -z: entry plane is z = z0 + h
        t_entry = (2.7 - (z0 + h)) / np.abs(dirs[..., 2])
        mask = out.weight_sum.numpy() >= 0.5
        assert mask.all()
        np.testing.assert_allclose(out.depth.numpy()[mask], t_entry[mask], atol=1e-2)

    def test_deterministic_without_jitter(self, setup, blob_scene):
        pose, intr = setup
        field = oracle_field(blob_scene)
        cfg = RenderConfig(n_samples=32)
        a = render(field, pose, intr, cfg)
        b = render(field, pose, intr, cfg)
        np.testing.assert_array_equal(a.color.numpy(), b.color.numpy())
        np.testing.assert_array_equal(a.depth.numpy(), b.depth.numpy())

    def test_jitter_requires_rng(self, setup):
        pose, intr = setup
        cfg = RenderConfig(n_samples=8, jitter=True)
        with pytest.raises(ValueError, match="rng"):
            render(_slab_field(0.0, 0.1), pose, intr, cfg)


class TestConvergence:
    def _ray_set(self):
        dist = PoseDistribution()
        pose = pose_from_angles(0.2, -0.1, dist)
        intr = Intrinsics(focal_px=60.0, width=8, height=8)
        origins, dirs = generate_rays(pose, intr)
        picks = [(4, 4), (2, 5), (6, 3)]
        return [(origins[i, j], dirs[i, j]) for i, j in picks]

    def _composite_at(self, field, origin, direction, n):
        samples = stratified_samples(1.7, 3.7, n, dtype=torch.float64)
        t = samples.t_values
        points = torch.as_tensor(origin, dtype=torch.float64).unsqueeze(0) + (
            t.unsqueeze(-1) * torch.as_tensor(direction, dtype=torch.float64)
        )
        dirs = torch.broadcast_to(
            torch.as_tensor(direction, dtype=torch.float64), points.shape
        )
        colors, densities = field(points, dirs)
        return composite(colors, densities, samples)

    def test_color_and_depth_match_fine_oracle(self, blob_scene):
        field = oracle_field(blob_scene, dtype=torch.float64)
        for origin, direction in self._ray_set():
            out = self._composite_at(field, origin, direction, 256)
            color, depth, _ = fine_integrate(field, origin, direction, 1.7, 3.7)
            np.testing.assert_allclose(out.color.numpy(), color, atol=1e-3)
            assert abs(out.depth.item() - depth) < 1e-2

    def test_refinement_error_non_increasing(self, blob_scene):
        field = oracle_field(blob_scene, dtype=torch.float64)
        errors = []
        for n in (32, 64, 128, 256):
            worst = 0.0
            for origin, direction in self._ray_set():
                out = self._composite_at(field, origin, direction, n)
                color, _, _ = fine_integrate(
                    field, origin, direction, 1.7, 3.7, n=16 * n
                )
                worst = max(worst, np.abs(out.color.numpy() - color).max())
            errors.append(worst)
        assert all(a >= b for a, b in zip(errors, errors[1:]))


class TestDifferentiability:
    def test_gradient_matches_central_differences(self):
        # one-parameter analytic field: density scales a Gaussian bump
        dist = PoseDistribution()
        pose = pose_from_angles(0.0, 0.0, dist)
        intr = Intrinsics(focal_px=30.0, width=4, height=4)
        cfg = RenderConfig(n_samples=64)

        def make_field(p):
            def field(points, dirs):
                sq = (points**2).sum(dim=-1)
                density = p * torch.exp(-sq / (2 * 0.3**2))
                colors = torch.full(
                    (points.shape[0], 3), 0.7, dtype=points.dtype
                )
                return colors, density

            return field

        def rendered_sum(p):
            out = render(make_field(p), pose, intr, cfg, dtype=torch.float64)
            return out.color.sum()

        p = torch.tensor(8.0, dtype=torch.float64, requires_grad=True)
        rendered_sum(p).backward()
        analytic = p.grad.item()

        h = 1e-4
        with torch.no_grad():
            plus = rendered_sum(torch.tensor(8.0 + h, dtype=torch.float64)).item()
            minus = rendered_sum(torch.tensor(8.0 - h, dtype=torch.float64)).item()
        numeric = (plus - minus) / (2 * h)
        assert abs(analytic - numeric) / abs(numeric) < 1e-3
