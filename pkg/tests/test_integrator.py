import numpy as np
import pytest

from morphpd.adaptivity import Criterion
from morphpd.assembly import LoadProgram
from morphpd.bonds import MaterialParams
from morphpd.errors import ConsistencyError, ParameterError, SingularMassError
from morphpd.integrator import Problem, Simulation, bootstrap, critical_dt, rayleigh_factor, step, wave_speeds
from morphpd.mesh import generate_structured_quad_mesh

from conftest import GLASS


def test_wave_speeds_glass():
    ws = wave_speeds(72e3, 1.0 / 3.0, 2.44e-9)
    assert ws.C == pytest.approx(5.4322e6, rel=1e-4)
    assert ws.C_S == pytest.approx(ws.C * np.sqrt(3.0 / 8.0))
    assert ws.C_R == pytest.approx(3.0986e6, rel=1e-4)
    assert ws.C_R < ws.C_S < ws.C
    assert rayleigh_factor(0.0) == pytest.approx(0.6095, abs=1e-4)
    for nu in np.linspace(0.0, 0.49, 12):
        assert 0 < rayleigh_factor(nu) < 1
    with pytest.raises(ParameterError):
        wave_speeds(72e3, 0.5, 2.44e-9)


def test_critical_dt(patch4):
    assert critical_dt(patch4, 72e3, 2.44e-9) == pytest.approx(1.0 / np.sqrt(72e3 / 2.44e-9))


def test_bootstrap_cases():
    m = np.array([2.0, 2.0])
    K = np.zeros((2, 2))
    u0 = np.array([1.0, -1.0])
    assert np.allclose(bootstrap(u0, np.zeros(2), np.zeros(2), m, K, 0.1), u0)
    assert np.allclose(bootstrap(u0, np.array([3.0, 0.0]), np.zeros(2), m, K, 0.1), [0.7, -1.0])
    # a0 = F / m = 2, u(-dt) = 0.5 * dt^2 * a0
    assert np.allclose(bootstrap(np.zeros(2), np.zeros(2), np.array([4.0, 0.0]), m, K, 0.1), [0.01, 0.0])
    with pytest.raises(SingularMassError):
        bootstrap(u0, u0, u0, np.array([1.0, 0.0]), K, 0.1)
    with pytest.raises(ConsistencyError):
        bootstrap(u0, u0, np.zeros(3), m, K, 0.1)


def test_step_free_flight_and_oscillator():
    m = np.ones(1)
    K = np.zeros((1, 1))
    assert step(np.array([1.0]), np.array([0.5]), np.zeros(1), m, K, 0.1)[0] == pytest.approx(1.5)
    # harmonic oscillator, omega = 1
    K = np.eye(1)
    dt = 1e-3
    u_prev = bootstrap(np.ones(1), np.zeros(1), np.zeros(1), m, K, dt)
    u = np.ones(1)
    for _ in range(int(round(np.pi / dt))):
        u, u_prev = step(u, u_prev, np.zeros(1), m, K, dt), u
    assert u[0] == pytest.approx(np.cos(np.pi), abs=1e-5)
    with pytest.raises(ConsistencyError):
        step(np.zeros(2), np.zeros(1), np.zeros(1), m, K, dt)


def test_zero_load_run_stays_at_rest():
    mat = MaterialParams(delta=1.5, **GLASS)
    mesh = generate_structured_quad_mesh(((0.0, 0.0), (10.0, 10.0)), 0.5)
    dt = 0.5 * critical_dt(mesh, mat.E, mat.rho)
    pb = Problem(mesh, mat, Criterion("broken_bond", s_crit=mat.s_crit), LoadProgram(), dt, 50 * dt)
    sim = Simulation(pb).run()
    assert sim.state.step == 50
    assert np.all(sim.state.u_curr == 0.0)
    assert sim.n_broken == 0 and sim.pd_dofs == 0 and len(sim.flags) == 0
    assert np.all(sim.damage() == 0.0)
