import numpy as np
import pytest

from rtar.errors import ContractViolationError
from rtar.preprocess import FlowParams, compute_flow, horn_schunck_step


def smooth_periodic_texture(size, seed, cutoff=6):
    """Band-limited periodic random texture in [0, 1]; exact under np.roll."""
    rng = np.random.default_rng(seed)
    spectrum = np.zeros((size, size), dtype=complex)
    for ky in range(-cutoff, cutoff + 1):
        for kx in range(-cutoff, cutoff + 1):
            if ky == 0 and kx == 0:
                continue
            spectrum[ky % size, kx % size] = rng.normal() + 1j * rng.normal()
    img = np.fft.ifft2(spectrum).real
    img -= img.min()
    img /= img.max()
    return img


class TestHornSchunckStep:
    def test_matches_hand_formula(self):
        u = np.array([[0.0, 1.0, 0.0], [2.0, 0.0, 1.0], [0.0, 0.0, 3.0]])
        v = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [0.0, 2.0, 0.0]])
        fx = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.5], [1.0, 0.0, 0.0]])
        fy = np.array([[0.0, 1.0, 1.0], [0.5, 0.0, 0.0], [0.0, 1.0, 0.5]])
        ft = np.array([[0.2, -0.1, 0.0], [0.3, 0.1, -0.2], [0.0, 0.2, 0.1]])
        alpha = 1.0

        weights = [(-1, -1, 1 / 12), (-1, 0, 1 / 6), (-1, 1, 1 / 12),
                   (0, -1, 1 / 6), (0, 1, 1 / 6),
                   (1, -1, 1 / 12), (1, 0, 1 / 6), (1, 1, 1 / 12)]

        def avg(f, y, x):
            total = 0.0
            for dy, dx, wgt in weights:
                yy = min(max(y + dy, 0), 2)
                xx = min(max(x + dx, 0), 2)
                total += wgt * f[yy, xx]
            return total

        want_u = np.zeros((3, 3))
        want_v = np.zeros((3, 3))
        for y in range(3):
            for x in range(3):
                ub, vb = avg(u, y, x), avg(v, y, x)
                common = (fx[y, x] * ub + fy[y, x] * vb + ft[y, x]) / (
                    alpha**2 + fx[y, x] ** 2 + fy[y, x] ** 2
                )
                want_u[y, x] = ub - fx[y, x] * common
                want_v[y, x] = vb - fy[y, x] * common

        got_u, got_v = horn_schunck_step(u, v, fx, fy, ft, alpha)
        assert np.allclose(got_u, want_u, atol=1e-12)
        assert np.allclose(got_v, want_v, atol=1e-12)


class TestComputeFlow:
    def test_no_motion_is_zero_flow(self, rng):
        img = rng.random((48, 48))
        flow = compute_flow(img, img)
        assert np.abs(flow).max() <= 1e-6

    def test_unit_translation(self):
        img = smooth_periodic_texture(64, seed=3)
        moved = np.roll(img, 1, axis=1)  # content moves 1 px rightward
        flow = compute_flow(img, moved)
        assert abs(flow[..., 0].mean() - 1.0) < 0.25
        assert abs(flow[..., 1].mean()) < 0.25

    def test_two_pixel_diagonal_translation(self):
        img = smooth_periodic_texture(64, seed=11)
        moved = np.roll(np.roll(img, 2, axis=1), -1, axis=0)
        flow = compute_flow(img, moved)
        assert abs(flow[..., 0].mean() - 2.0) < 0.3
        assert abs(flow[..., 1].mean() + 1.0) < 0.3

    def test_mirror_equivariance(self):
        img = smooth_periodic_texture(48, seed=9)
        moved = np.roll(img, 1, axis=1)
        flow = compute_flow(img, moved)
        flow_m = compute_flow(img[:, ::-1], moved[:, ::-1])
        assert np.allclose(flow_m[..., 0], -flow[..., 0][:, ::-1], atol=1e-3)
        assert np.allclose(flow_m[..., 1], flow[..., 1][:, ::-1], atol=1e-3)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolationError):
            compute_flow(np.zeros((8, 8)), np.zeros((8, 9)))

    def test_finite_output(self, rng):
        flow = compute_flow(rng.random((32, 32)), rng.random((32, 32)))
        assert np.all(np.isfinite(flow))

    def test_param_validation(self):
        with pytest.raises(ContractViolationError):
            FlowParams(scale=1.5)
        with pytest.raises(ContractViolationError):
            FlowParams(alpha=0.0)
