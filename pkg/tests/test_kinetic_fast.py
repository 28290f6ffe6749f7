import numpy as np
import pytest

from cgks.kinetic import interface_evolution, primitive_to_conserved

GAMMA = 1.4


def random_inputs(n, seed):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.2, 3.0, n)
    U = rng.uniform(-2.0, 2.0, n)
    V = rng.uniform(-1.5, 1.5, n)
    p = rng.uniform(0.1, 5.0, n)
    WL = primitive_to_conserved(rho, U, V, p, GAMMA)
    WR = primitive_to_conserved(
        rho * rng.uniform(0.5, 1.5, n), U + rng.normal(0, 0.3, n),
        V + rng.normal(0, 0.3, n), p * rng.uniform(0.5, 1.5, n), GAMMA
    )
    slopes = [rng.normal(0, 0.5, (n, 4)) for _ in range(4)]
    tau = 10.0 ** rng.uniform(-6, -1, n)
    return WL, WR, slopes, tau


class TestNumbaKernel:
    def test_matches_numpy_path(self):
        fast = pytest.importorskip("cgks.kinetic_fast")
        WL, WR, (bnL, btL, bnR, btR), tau = random_inputs(200, 7)
        dt = 2e-3
        F0, Ft0, W0, Wt0 = interface_evolution(
            WL, (bnL, btL), WR, (bnR, btR), tau, dt, GAMMA
        )
        F1, Ft1, W1, Wt1 = fast.evolve_batch(WL, bnL, btL, WR, bnR, btR, tau, dt, GAMMA)
        scale = np.abs(F0).max()
        assert np.abs(F1 - F0).max() < 1e-12 * scale
        assert np.abs(Ft1 - Ft0).max() < 1e-12 * np.abs(Ft0).max()
        assert np.abs(W1 - W0).max() < 1e-12 * np.abs(W0).max()
        assert np.abs(Wt1 - Wt0).max() < 1e-11 * np.abs(Wt0).max()

    def test_equilibrium_preservation(self):
        fast = pytest.importorskip("cgks.kinetic_fast")
        W = primitive_to_conserved(
            np.array([1.1]), np.array([0.4]), np.array([-0.2]), np.array([0.9]), GAMMA
        )
        z = np.zeros((1, 4))
        F, Ft, Wq, Wtq = fast.evolve_batch(W, z, z, W, z, z, np.array([1e-3]), 1e-3, GAMMA)
        from cgks.kinetic import euler_flux

        assert np.abs(F - euler_flux(W, GAMMA)).max() < 1e-13
        assert np.abs(Wq - W).max() < 1e-13
