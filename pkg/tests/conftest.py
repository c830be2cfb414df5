import numpy as np
import pytest
import torch

from gnerf.oracle import SceneParams

torch.set_num_threads(2)


def make_blob_scene(noise_amplitude: float = 0.0) -> SceneParams:
    """Fixed three-blob analytic scene used across rendering tests."""
    rng = np.random.default_rng(77)
    orientations = []
    for _ in range(3):
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        orientations.append(q)
    return SceneParams(
        centers=np.array([[0.0, 0.05, 0.1], [-0.3, 0.2, -0.15], [0.3, -0.1, 0.0]]),
        radii=np.array([[0.35, 0.3, 0.32], [0.25, 0.28, 0.3], [0.3, 0.22, 0.26]]),
        orientations=np.stack(orientations),
        albedos=np.array([[0.9, 0.3, 0.2], [0.2, 0.8, 0.5], [0.3, 0.4, 0.9]]),
        amplitudes=np.array([12.0, 9.0, 11.0]),
        background=np.array([1.0, 1.0, 1.0]),
        geometry_noise_amplitude=noise_amplitude,
        noise_phases=np.array([0.3, -1.1, 2.0]),
        noise_directions=np.eye(3),
    )


def fine_integrate(field, origin, direction, t_near, t_far, n=16384):
    """Midpoint-rule quadrature of the continuous volume-rendering integral.

    Independent of the discrete compositing path: transmittance comes from
    the cumulative optical depth, and color/depth/opacity are Riemann sums
    of T(t) * density(t) * {color(t), t, 1}.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    dt = (t_far - t_near) / n
    t = t_near + dt * (np.arange(n) + 0.5)
    points = origin[None, :] + t[:, None] * direction[None, :]
    dirs = np.broadcast_to(direction, points.shape).copy()
    with torch.no_grad():
        colors, densities = field(
            torch.as_tensor(points, dtype=torch.float64),
            torch.as_tensor(dirs, dtype=torch.float64),
        )
    colors = colors.numpy().astype(np.float64)
    densities = densities.numpy().astype(np.float64)

    optical = np.cumsum(densities * dt)
    # transmittance at each bin midpoint
    trans = np.exp(-(optical - 0.5 * densities * dt))
    weights = trans * densities * dt
    color = (weights[:, None] * colors).sum(axis=0)
    depth = (weights * t).sum()
    weight_sum = weights.sum()
    return color, depth, weight_sum


@pytest.fixture
def blob_scene():
    return make_blob_scene()
