"""Tests for the N-particle event loop: thinning rate law, conservation,
initial-condition samplers, snapshot round trips, determinism."""

import math

import numpy as np
import pytest

from kacsim import ensemble as ens
from kacsim.ensemble import (Ensemble, InitialSpec, init, load_snapshot,
                             majorant_rate, pair_majorant, run, snapshot_text,
                             step, stream_rng, total_energy, total_momentum,
                             total_event_rate)
from kacsim.errors import DomainError, FileError
from kacsim.kernel import (AngularMeasure, CollisionKernel,
                           angular_constants, phi as kphi)

MAXWELL = CollisionKernel(gamma=0.0, phi_upper=1.0, phi_lower=1.0,
                          angular=AngularMeasure(nu=0.5, strength=1.0,
                                                 eps_theta=0.01),
                          dimension=3)
HARD = CollisionKernel(gamma=1.0, phi_upper=1.0, phi_lower=1.0,
                       angular=AngularMeasure(nu=0.5, strength=1.0,
                                              eps_theta=0.05),
                       dimension=3)
SOFT = CollisionKernel(gamma=-0.5, phi_upper=1.0, phi_lower=1.0,
                       angular=AngularMeasure(nu=0.75, strength=1.0,
                                              eps_theta=0.1),
                       phi_cap=25.0, dimension=3)


# ---------------------------------------------------------------------------
# streams and initial conditions


def test_stream_rng_purposes_are_independent():
    a = stream_rng(7, ens.PURPOSE_INIT).random(8)
    b = stream_rng(7, ens.PURPOSE_DYNAMICS).random(8)
    c = stream_rng(7, ens.PURPOSE_INIT).random(8)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)


def test_init_gaussian_energy_matches_chi_square():
    # E_tot / cov ~ chi^2(N d): mean N d, variance 2 N d.
    N, d, cov = 4000, 3, 0.7
    e = init(InitialSpec.gaussian(mean=0.0, covariance_scale=cov, seed=11),
             N, d)
    stat = total_energy(e) / cov
    ndof = N * d
    assert abs(stat - ndof) <= 4.0 * math.sqrt(2.0 * ndof)
    # nonzero mean shifts the empirical average accordingly
    e2 = init(InitialSpec.gaussian(mean=(1.0, -2.0, 0.5),
                                   covariance_scale=cov, seed=11), N, d)
    avg = e2.velocities.mean(axis=0)
    se = math.sqrt(cov / N)
    assert np.all(np.abs(avg - np.array([1.0, -2.0, 0.5])) <= 5.0 * se)


def test_init_two_gaussians_mixture_fraction():
    N = 5000
    spec = InitialSpec.two_gaussians(((5.0, 0.0), (-5.0, 0.0)), scale=0.01,
                                     mixture_weight=0.3, seed=3)
    e = init(spec, N, 2)
    frac = float(np.mean(e.velocities[:, 0] > 0.0))
    assert abs(frac - 0.3) <= 4.0 * math.sqrt(0.3 * 0.7 / N)


def test_init_uniform_ball_radial_law():
    N, d, R = 4000, 3, 2.5
    e = init(InitialSpec.uniform_ball(R, seed=5), N, d)
    r = np.sqrt(np.sum(e.velocities ** 2, axis=1))
    assert float(r.max()) <= R + 1e-12
    # (r/R)^d is uniform on [0, 1]
    u = (r / R) ** d
    assert abs(float(u.mean()) - 0.5) <= 4.0 / math.sqrt(12.0 * N)


def test_init_uniform_ball_zero_radius():
    e = init(InitialSpec.uniform_ball(0.0, seed=1), 10, 2)
    assert np.array_equal(e.velocities, np.zeros((10, 2)))


def test_init_is_deterministic_and_seed_sensitive():
    spec = InitialSpec.gaussian(seed=42)
    a = init(spec, 50, 3).velocities
    b = init(spec, 50, 3).velocities
    c = init(spec.with_seed(43), 50, 3).velocities
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_rejects_bad_parameters():
    with pytest.raises(DomainError):
        init(InitialSpec.gaussian(), 1, 3)
    with pytest.raises(DomainError):
        init(InitialSpec.gaussian(), 10, 1)
    with pytest.raises(DomainError):
        init(InitialSpec.gaussian(mean=(1.0, 2.0)), 10, 3)
    with pytest.raises(DomainError):
        init(InitialSpec.gaussian(mean=float("nan")), 10, 3)
    with pytest.raises(DomainError):
        init(InitialSpec.gaussian(covariance_scale=-1.0), 10, 3)
    with pytest.raises(DomainError):
        init(InitialSpec.two_gaussians(((0.0,), (1.0,)), mixture_weight=1.5),
             10, 2)
    with pytest.raises(DomainError):
        init(InitialSpec.uniform_ball(float("inf")), 10, 2)
    with pytest.raises(DomainError):
        init(InitialSpec(kind="bogus"), 10, 2)


# ---------------------------------------------------------------------------
# snapshot files


def test_snapshot_round_trip_is_exact(tmp_path):
    e = init(InitialSpec.gaussian(seed=9), 17, 3)
    e.time = 0.1234567890123456789
    text = snapshot_text(e)
    head = text.splitlines()[0]
    assert head.startswith("t=") and " N=17 " in head and " d=3 " in head
    assert head.endswith("seed=9")
    back = load_snapshot(text)
    assert np.array_equal(back.velocities, e.velocities)
    assert back.time == e.time
    assert back.seed == 9

    p = tmp_path / "snap.txt"
    p.write_text(text, encoding="utf-8")
    e2 = init(InitialSpec.from_file(str(p)), 17, 3)
    assert np.array_equal(e2.velocities, e.velocities)


def test_snapshot_headerless_matrix_loads():
    back = load_snapshot("1.0 2.0\n3.0 4.0\n")
    assert np.array_equal(back.velocities, [[1.0, 2.0], [3.0, 4.0]])
    assert back.time == 0.0


def test_file_init_errors(tmp_path):
    with pytest.raises(FileError):
        init(InitialSpec.from_file(str(tmp_path / "missing.txt")), 4, 2)
    p = tmp_path / "bad_shape.txt"
    p.write_text("1 2\n3 4\n", encoding="utf-8")
    with pytest.raises(DomainError):
        init(InitialSpec.from_file(str(p)), 3, 2)
    p2 = tmp_path / "nonfinite.txt"
    p2.write_text("1 2\nnan 4\n", encoding="utf-8")
    with pytest.raises(DomainError):
        init(InitialSpec.from_file(str(p2)), 2, 2)
    with pytest.raises(DomainError):
        load_snapshot("1 2\n3\n")
    with pytest.raises(DomainError):
        load_snapshot("t=0 N=3 d=2 seed=0\n1 2\n3 4\n")
    with pytest.raises(DomainError):
        load_snapshot("")


# ---------------------------------------------------------------------------
# majorant


def test_pair_majorant_cases():
    e = init(InitialSpec.gaussian(seed=2), 64, 3)
    assert pair_majorant(e, MAXWELL) == MAXWELL.phi_upper
    etot = total_energy(e)
    assert pair_majorant(e, HARD) == pytest.approx(
        HARD.phi_upper * 2.0 * math.sqrt(etot), rel=1e-15)
    assert pair_majorant(e, SOFT) == 25.0
    assert majorant_rate is pair_majorant


def test_pair_majorant_dominates_all_pairs():
    e = init(InitialSpec.gaussian(seed=8), 40, 3)
    diffs = e.velocities[:, None, :] - e.velocities[None, :, :]
    z = np.sqrt(np.sum(diffs ** 2, axis=2))
    iu = np.triu_indices(40, k=1)
    for k in (MAXWELL, HARD, SOFT):
        lam = pair_majorant(e, k)
        phis = kphi(k, z[iu])
        assert lam >= phis.max() - 1e-12 * lam


def test_total_event_rate_formula():
    e = init(InitialSpec.gaussian(seed=2), 10, 3)
    s_eps = angular_constants(MAXWELL.angular, 3).s_eps
    assert total_event_rate(e, MAXWELL) == pytest.approx(
        0.5 * 9 * MAXWELL.phi_upper * s_eps, rel=1e-15)


# ---------------------------------------------------------------------------
# event loop


def test_step_applies_at_most_one_collision():
    e = init(InitialSpec.gaussian(seed=1), 8, 3)
    t0 = e.time
    for _ in range(20):
        before = e.collision_count
        step(e, MAXWELL)
        assert e.collision_count - before in (0, 1)
        assert e.time > t0
        t0 = e.time


def test_step_requires_live_rng():
    e = init(InitialSpec.gaussian(seed=1), 4, 3)
    frozen = e.copy()
    with pytest.raises(DomainError):
        step(frozen, MAXWELL)


def test_step_dimension_mismatch():
    e = init(InitialSpec.gaussian(seed=1), 4, 2)
    with pytest.raises(DomainError):
        step(e, MAXWELL)


def test_zero_rate_jumps_to_horizon():
    # all-zero ensemble with gamma > 0: majorant 0, no events can occur
    e = init(InitialSpec.uniform_ball(0.0, seed=0), 6, 3)
    out = run(e, HARD, 2.0, [1.0, 2.0])
    assert [s.time for s in out] == [1.0, 2.0]
    assert e.collision_count == 0
    assert np.array_equal(e.velocities, np.zeros((6, 3)))


def test_thinning_rate_matches_poisson_law():
    # Two particles at fixed separation z under gamma = 1: accepted
    # collisions form a Poisson process of rate Phi(z) S_eps / N, and both
    # z and the majorant are collision invariants, so the count over [0, T]
    # is exactly Poisson(T Phi(z) S_eps / 2).
    vel = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    e = Ensemble(vel.copy(), rng=stream_rng(123, ens.PURPOSE_DYNAMICS))
    z = 2.0
    s_eps = angular_constants(HARD.angular, 3).s_eps
    rate = float(kphi(HARD, z)) * s_eps / 2.0
    lam = pair_majorant(e, HARD)
    assert lam > float(kphi(HARD, z))  # genuine thinning, not accept-all
    expected = 20000.0
    T = expected / rate
    run(e, HARD, T, [])
    zs = float(np.linalg.norm(e.velocities[0] - e.velocities[1]))
    assert zs == pytest.approx(z, rel=1e-12)
    assert abs(e.collision_count - expected) <= 3.5 * math.sqrt(expected)


def test_maxwell_accepts_every_candidate():
    e = init(InitialSpec.gaussian(seed=4), 2, 3)
    s_eps = angular_constants(MAXWELL.angular, 3).s_eps
    rate = MAXWELL.phi_upper * s_eps / 2.0
    expected = 10000.0
    run(e, MAXWELL, expected / rate, [])
    assert abs(e.collision_count - expected) <= 3.5 * math.sqrt(expected)


def test_run_conserves_momentum_and_energy():
    e = init(InitialSpec.gaussian(mean=(0.3, -0.1, 0.2), seed=6), 64, 3)
    p0 = total_momentum(e)
    e0 = total_energy(e)
    run(e, MAXWELL, 3.0, [])
    assert e.collision_count > 5000
    assert np.all(np.abs(total_momentum(e) - p0) <= 1e-9 * (1.0 + np.abs(p0)))
    assert abs(total_energy(e) - e0) <= 1e-9 * e0


def test_single_collision_conservation_is_tight():
    e = init(InitialSpec.gaussian(seed=13), 2, 3)
    for _ in range(200):
        p0 = total_momentum(e)
        e0 = total_energy(e)
        c0 = e.collision_count
        step(e, MAXWELL)
        if e.collision_count > c0:
            assert np.all(np.abs(total_momentum(e) - p0) <= 1e-12)
            assert abs(total_energy(e) - e0) <= 1e-12 * max(e0, 1.0)


def test_soft_kernel_runs_and_conserves():
    e = init(InitialSpec.gaussian(seed=21), 32, 3)
    e0 = total_energy(e)
    run(e, SOFT, 0.2, [])
    assert e.collision_count > 0
    assert abs(total_energy(e) - e0) <= 1e-9 * e0


def test_run_is_deterministic_and_checkpointed():
    spec = InitialSpec.gaussian(seed=77)
    e1 = init(spec, 32, 3)
    e2 = init(spec, 32, 3)
    snaps1 = run(e1, MAXWELL, 1.0, [0.25, 0.5, 1.0])
    snaps2 = run(e2, MAXWELL, 1.0, [0.25, 0.5, 1.0])
    assert [s.time for s in snaps1] == [0.25, 0.5, 1.0]
    for a, b in zip(snaps1, snaps2):
        assert np.array_equal(a.velocities, b.velocities)
        assert a.collision_count == b.collision_count
    assert snaps1[0].rng is None
    # snapshots are decoupled copies
    snaps1[0].velocities[0, 0] = 99.0
    assert e1.velocities[0, 0] != 99.0


def test_run_validates_checkpoints():
    e = init(InitialSpec.gaussian(seed=1), 4, 3)
    with pytest.raises(DomainError):
        run(e, MAXWELL, 1.0, [0.5, 0.25])
    with pytest.raises(DomainError):
        run(e, MAXWELL, 1.0, [0.5, 1.5])
    e.time = 0.3
    with pytest.raises(DomainError):
        run(e, MAXWELL, 1.0, [0.1])


def test_identical_velocities_collide_as_identity():
    vel = np.array([[1.0, 2.0], [1.0, 2.0]])
    e = Ensemble(vel.copy(), rng=stream_rng(5, ens.PURPOSE_DYNAMICS))
    k2 = CollisionKernel(gamma=0.0, phi_upper=1.0, phi_lower=1.0,
                         angular=AngularMeasure(nu=0.5, strength=1.0,
                                                eps_theta=0.01),
                         dimension=2)
    run(e, k2, 0.5, [])
    assert e.collision_count > 0
    assert np.array_equal(e.velocities, vel)
