"""Mass matrix, Coriolis matrix, and gravity vector against independent oracles."""

import numpy as np
import pytest

from selfmotion import (
    anthro7,
    coriolis_matrix,
    gravity_vector,
    kinetic_energy,
    mass_matrix,
    mass_matrix_batch,
    planar_chain,
    potential_energy,
)
from selfmotion.dynamics import mass_matrix_partials

from oracles import (
    fd_gradient,
    lagrangian_coriolis_force,
    pointmass_kinetic,
    pointmass_mass_matrix,
    pointmass_potential,
)

PLANAR2 = planar_chain(2)
PLANAR3 = planar_chain(3)
SPATIAL7 = anthro7()


def random_q(rng, n):
    return rng.uniform(-np.pi, np.pi, size=n)


@pytest.mark.parametrize("chain", [PLANAR2, PLANAR3, SPATIAL7], ids=["2r", "3r", "7r"])
def test_mass_matrix_symmetric_positive_definite(chain):
    rng = np.random.default_rng(11)
    for _ in range(30):
        M = mass_matrix(chain, random_q(rng, chain.n))
        assert np.max(np.abs(M - M.T)) == 0.0
        assert np.min(np.linalg.eigvalsh(M)) > 0.0


@pytest.mark.parametrize("chain", [PLANAR2, PLANAR3], ids=["2r", "3r"])
def test_planar_mass_matrix_matches_point_mass_oracle(chain):
    rng = np.random.default_rng(5)
    for _ in range(4):
        q = random_q(rng, chain.n)
        M = mass_matrix(chain, q)
        M_pm = pointmass_mass_matrix(chain, q, samples_per_link=1000)
        np.testing.assert_allclose(M, M_pm, rtol=2e-6, atol=2e-6)


def test_spatial_mass_matrix_matches_point_mass_oracle():
    rng = np.random.default_rng(6)
    for _ in range(3):
        q = random_q(rng, 7)
        M = mass_matrix(SPATIAL7, q) - np.diag(SPATIAL7.rotor_inertia)
        M_pm = pointmass_mass_matrix(SPATIAL7, q, samples_per_link=1000)
        np.testing.assert_allclose(M, M_pm, rtol=2e-6, atol=2e-6)


def test_kinetic_energy_matches_point_mass_oracle():
    rng = np.random.default_rng(8)
    q = random_q(rng, 3)
    qd = rng.normal(size=3)
    t_pm = pointmass_kinetic(PLANAR3, q, qd)
    assert kinetic_energy(PLANAR3, q, qd) == pytest.approx(t_pm, rel=1e-5)


def test_batched_mass_matrices_agree_with_single():
    rng = np.random.default_rng(9)
    Q = rng.uniform(-np.pi, np.pi, size=(25, 3))
    Mb = mass_matrix_batch(PLANAR3, Q)
    for i, q in enumerate(Q):
        np.testing.assert_allclose(Mb[i], mass_matrix(PLANAR3, q), atol=1e-13)


def test_coriolis_is_zero_force_at_rest():
    C = coriolis_matrix(PLANAR3, [0.3, -0.8, 1.1], np.zeros(3))
    assert np.allclose(C @ np.zeros(3), 0.0)


@pytest.mark.parametrize("chain", [PLANAR2, PLANAR3, SPATIAL7], ids=["2r", "3r", "7r"])
def test_mdot_minus_two_coriolis_is_skew(chain):
    rng = np.random.default_rng(13)
    for _ in range(10):
        q = random_q(rng, chain.n)
        qd = rng.normal(size=chain.n)
        dM = mass_matrix_partials(chain, q)
        Mdot = np.einsum("abr,r->ab", dM, qd)
        S = Mdot - 2 * coriolis_matrix(chain, q, qd)
        assert np.max(np.abs(S + S.T)) < 1e-10


@pytest.mark.parametrize("chain", [PLANAR2, PLANAR3, SPATIAL7], ids=["2r", "3r", "7r"])
def test_coriolis_force_matches_lagrangian_oracle(chain):
    rng = np.random.default_rng(17)
    for _ in range(5):
        q = random_q(rng, chain.n)
        qd = rng.normal(size=chain.n)
        force = coriolis_matrix(chain, q, qd) @ qd
        ref = lagrangian_coriolis_force(lambda x: mass_matrix(chain, x), q, qd)
        np.testing.assert_allclose(force, ref, rtol=2e-5, atol=2e-5)


def test_mass_matrix_partials_match_finite_differences():
    rng = np.random.default_rng(19)
    q = random_q(rng, 3)
    dM = mass_matrix_partials(PLANAR3, q)
    step = 1e-6
    for r in range(3):
        dq = np.zeros(3)
        dq[r] = step
        fd = (mass_matrix(PLANAR3, q + dq) - mass_matrix(PLANAR3, q - dq)) / (2 * step)
        np.testing.assert_allclose(dM[:, :, r], fd, atol=1e-8)


def test_zero_gravity_gives_zero_torque():
    assert np.allclose(gravity_vector(PLANAR3, [0.4, 0.5, -0.2]), 0.0)
    assert np.allclose(gravity_vector(SPATIAL7, np.linspace(-1, 1, 7)), 0.0)


def test_horizontal_pendulum_torque_is_half_weight_times_length():
    chain = planar_chain(1, gravity=(0.0, -9.81, 0.0))
    g = gravity_vector(chain, [0.0])
    assert g[0] == pytest.approx(3.0 * 9.81 * 0.5)


@pytest.mark.parametrize(
    "make",
    [
        lambda: planar_chain(3, gravity=(0.3, -9.81, 0.0)),
        lambda: anthro7(gravity=(0.0, 0.2, -9.81)),
    ],
    ids=["planar", "spatial"],
)
def test_gravity_vector_matches_point_mass_potential_gradient(make):
    chain = make()
    rng = np.random.default_rng(23)
    for _ in range(3):
        q = random_q(rng, chain.n)
        g = gravity_vector(chain, q)
        g_fd = fd_gradient(lambda x: pointmass_potential(chain, x, 400), q)
        np.testing.assert_allclose(g, g_fd, rtol=1e-5, atol=1e-6)


def test_potential_energy_matches_point_mass_oracle():
    chain = planar_chain(3, gravity=(0.0, -9.81, 0.0))
    q = np.array([0.7, -0.3, 0.4])
    assert potential_energy(chain, q) == pytest.approx(
        pointmass_potential(chain, q, 2000), rel=1e-6)


def test_planar_dynamics_reject_prismatic_joints():
    from selfmotion import KinematicChain

    chain = KinematicChain(kind="planar", joint_types=("revolute", "prismatic"),
                           masses=[1, 1], gravity=(0, 0, 0), lengths=[1, 1])
    with pytest.raises(NotImplementedError):
        mass_matrix(chain, [0.0, 0.1])
