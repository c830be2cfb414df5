import numpy as np
import pytest
import torch

from gnerf.cameras import Intrinsics, PoseDistribution, generate_rays, pose_from_angles
from gnerf.oracle import (
    OracleGAN,
    SceneParams,
    oracle_field,
    synthesize_dataset,
    synthesize_triplet,
)
from gnerf.rendering import RenderConfig, render


@pytest.fixture(scope="module")
def oracle():
    # a small center estimate keeps construction fast; tests only need determinism
    return OracleGAN(latent_dim=32, center_samples=20_000)


@pytest.fixture
def dist():
    return PoseDistribution()


@pytest.fixture
def intr():
    return Intrinsics(focal_px=60.0, width=32, height=32)


@pytest.fixture
def render_cfg():
    return RenderConfig(n_samples=32)


class TestDecodeScene:
    def test_center_latent_decodes_clean(self, oracle):
        scene = oracle.decode(oracle.center.values)
        assert scene.geometry_noise_amplitude == 0.0

    def test_deterministic(self, oracle):
        w = oracle.sample_w_prime(0.7, np.random.default_rng(1))
        a = oracle.decode(w)
        b = oracle.decode(w)
        np.testing.assert_array_equal(a.centers, b.centers)
        np.testing.assert_array_equal(a.albedos, b.albedos)
        assert a.geometry_noise_amplitude == b.geometry_noise_amplitude

    def test_noise_amplitude_strictly_increasing_in_psi(self, oracle):
        rng = np.random.default_rng(2)
        z_w = oracle.mapping(rng.standard_normal(32))
        amplitudes = []
        for psi in (0.0, 0.3, 0.7, 1.0):
            from gnerf.latents import TruncationConfig, truncate

            w_prime = truncate(z_w, oracle.center, TruncationConfig(psi=psi))
            amplitudes.append(oracle.decode(w_prime).geometry_noise_amplitude)
        assert amplitudes[0] == 0.0
        assert all(a < b for a, b in zip(amplitudes, amplitudes[1:]))

    def test_dimension_mismatch_rejected(self, oracle):
        with pytest.raises(ValueError, match="mismatch"):
            oracle.decode(np.zeros(7))

    def test_parameter_ranges(self, oracle):
        rng = np.random.default_rng(3)
        for _ in range(10):
            scene = oracle.decode(oracle.sample_w_prime(1.0, rng))
            assert np.all(scene.radii > 0)
            assert np.all(scene.amplitudes > 0)
            assert np.all((scene.albedos >= 0) & (scene.albedos <= 1))
            for r in scene.orientations:
                np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)


class TestOracleField:
    def test_far_queries_have_negligible_density(self, blob_scene):
        field = oracle_field(blob_scene)
        points = torch.tensor([[50.0, 0.0, 0.0], [0.0, -40.0, 10.0]])
        _, density = field(points, torch.zeros_like(points))
        assert density.max().item() < 1e-6

    def test_color_at_isolated_blob_center_is_albedo(self):
        scene = SceneParams(
            centers=np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]),
            radii=np.full((2, 3), 0.3),
            orientations=np.stack([np.eye(3)] * 2),
            albedos=np.array([[0.8, 0.1, 0.3], [0.2, 0.9, 0.4]]),
            amplitudes=np.array([20.0, 20.0]),
            background=np.array([1.0, 1.0, 1.0]),
            geometry_noise_amplitude=0.0,
            noise_phases=np.zeros(3),
            noise_directions=np.eye(3),
        )
        field = oracle_field(scene, dtype=torch.float64)
        color, density = field(
            torch.zeros(1, 3, dtype=torch.float64),
            torch.zeros(1, 3, dtype=torch.float64),
        )
        np.testing.assert_allclose(color.numpy()[0], [0.8, 0.1, 0.3], atol=1e-3)
        assert density.item() == pytest.approx(20.0, abs=1e-6)

    def test_density_everywhere_nonnegative(self, oracle):
        w = oracle.sample_w_prime(1.0, np.random.default_rng(4))
        field = oracle_field(oracle.decode(w))
        points = torch.as_tensor(
            np.random.default_rng(5).uniform(-2, 2, size=(2000, 3)), dtype=torch.float32
        )
        _, density = field(points, torch.zeros_like(points))
        assert density.min().item() >= 0.0


class TestSynthesizeTriplet:
    def test_same_pose_gives_identical_views(self, oracle, dist, intr, render_cfg):
        w = oracle.sample_w_prime(0.5, np.random.default_rng(6))
        pose = pose_from_angles(0.1, 0.0, dist)
        other = pose_from_angles(-0.3, 0.1, dist)
        triplet = synthesize_triplet(oracle, w, pose, pose, other, intr, render_cfg)
        np.testing.assert_array_equal(triplet.image_f, triplet.image_s)

    def test_depth_pose_equal_to_first_view(self, oracle, dist, intr, render_cfg):
        w = oracle.sample_w_prime(0.5, np.random.default_rng(7))
        pose = pose_from_angles(0.2, -0.1, dist)
        triplet = synthesize_triplet(oracle, w, pose, pose, pose, intr, render_cfg)
        field = oracle_field(oracle.decode(w))
        with torch.no_grad():
            direct = render(field, pose, intr, render_cfg)
        np.testing.assert_array_equal(
            triplet.depth, direct.depth.numpy().astype(np.float32)
        )

    def test_multi_view_consistency(self, oracle, dist, intr, render_cfg):
        # re-rendering the decoded scene from the second pose reproduces I_s
        rng = np.random.default_rng(8)
        w = oracle.sample_w_prime(0.5, rng)
        pose_f = pose_from_angles(0.0, 0.0, dist)
        pose_s = pose_from_angles(0.4, 0.1, dist)
        triplet = synthesize_triplet(oracle, w, pose_f, pose_s, pose_f, intr, render_cfg)
        field = oracle_field(oracle.decode(w))
        with torch.no_grad():
            again = render(field, pose_s, intr, render_cfg)
        np.testing.assert_array_equal(
            triplet.image_s, again.color.numpy().astype(np.float32)
        )

    def test_slab_like_scene_depth_matches_analytic(self, intr):
        # one blob stretched into a thin wall: depth ~ ray-plane intersection
        z0 = 0.0
        scene = SceneParams(
            centers=np.array([[0.0, 0.0, z0]]),
            radii=np.array([[50.0, 50.0, 0.01]]),
            orientations=np.eye(3)[None],
            albedos=np.array([[0.5, 0.5, 0.5]]),
            amplitudes=np.array([5000.0]),
            background=np.array([1.0, 1.0, 1.0]),
            geometry_noise_amplitude=0.0,
            noise_phases=np.zeros(3),
            noise_directions=np.eye(3),
        )
        dist = PoseDistribution()
        pose = pose_from_angles(0.0, 0.0, dist)
        cfg = RenderConfig(n_samples=512)
        out = render(oracle_field(scene, dtype=torch.float64), pose, intr, cfg)
        _, dirs = generate_rays(pose, intr)
        mask = out.weight_sum.numpy() >= 0.5
        assert mask.all()
        # effective opaque front sits a few noise-sigma before the wall center
        t_hit = (2.7 - z0) / np.abs(dirs[..., 2])
        assert np.abs(out.depth.numpy() - t_hit)[mask].max() < 3e-2


class TestSynthesizeDataset:
    def test_single_triplet_dataset(self, oracle, dist, intr, render_cfg, tmp_path):
        manifest = synthesize_dataset(
            tmp_path / "ds", oracle, 1, 0.5, dist, 9, intr, render_cfg
        )
        assert manifest["count"] == 1
        assert len(manifest["records"]) == 1
        assert (tmp_path / "ds" / "img_f_000000.png").exists()

    def test_seed_reproducibility_and_parallel_equivalence(
        self, oracle, dist, intr, render_cfg, tmp_path
    ):
        kwargs = dict(
            oracle=oracle, n=4, psi=0.5, pose_dist=dist, seed=13,
            intr=intr, render_cfg=render_cfg,
        )
        synthesize_dataset(tmp_path / "serial", workers=1, **kwargs)
        synthesize_dataset(tmp_path / "parallel", workers=4, **kwargs)
        for name in sorted(p.name for p in (tmp_path / "serial").iterdir()):
            a = (tmp_path / "serial" / name).read_bytes()
            b = (tmp_path / "parallel" / name).read_bytes()
            assert a == b, f"{name} differs between serial and parallel synthesis"

    def test_psi_zero_scenes_all_identical(self, oracle, dist, intr, render_cfg, tmp_path):
        synthesize_dataset(
            tmp_path / "ds0", oracle, 3, 0.0, dist, 21, intr, render_cfg
        )
        from gnerf.training import TripletDataset

        ds = TripletDataset(tmp_path / "ds0")
        frontal = pose_from_angles(0.0, 0.0, dist)
        images = []
        for i in range(3):
            w = ds.get(i).w_prime
            field = oracle_field(oracle.decode(w))
            with torch.no_grad():
                images.append(render(field, frontal, intr, render_cfg).color.numpy())
        assert np.abs(images[0] - images[1]).max() < 1e-6
        assert np.abs(images[0] - images[2]).max() < 1e-6

    def test_invalid_count_rejected(self, oracle, dist, intr, render_cfg, tmp_path):
        with pytest.raises(ValueError, match=">= 1"):
            synthesize_dataset(tmp_path / "bad", oracle, 0, 0.5, dist, 1, intr, render_cfg)

    def test_storage_failure_names_triplet_index(
        self, oracle, dist, intr, render_cfg, tmp_path, monkeypatch
    ):
        from gnerf import dataset_io

        original = dataset_io.save_triplet

        def failing(out_dir, index, triplet):
            if index == 1:
                raise OSError("disk full")
            return original(out_dir, index, triplet)

        monkeypatch.setattr(dataset_io, "save_triplet", failing)
        with pytest.raises(RuntimeError, match="triplet 1"):
            synthesize_dataset(
                tmp_path / "fail", oracle, 2, 0.5, dist, 1, intr, render_cfg
            )
