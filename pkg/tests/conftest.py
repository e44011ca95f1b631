import dataclasses
import warnings

import numpy as np
import pytest

import safereg as sr
import safereg.cli as cli
import safereg.kernels as kmod

warnings.filterwarnings("ignore", message=r"\(A, C\) fails the observability")


@pytest.fixture(scope="session")
def uav_plant():
    return sr.build_uav()


@pytest.fixture(scope="session")
def uav_exo():
    S_r = np.array([[0.0, 0.25 * np.pi], [-0.25 * np.pi, 0.0]])
    S_d = np.zeros((4, 4))
    S_d[0, 1], S_d[1, 0] = 0.25, -0.25
    S_d[2, 3], S_d[3, 2] = 0.5, -0.5
    return sr.validate_exo(S_r, S_d, [1.0, 1.0], np.eye(4))


@pytest.fixture(scope="session")
def uav_chain(uav_plant, uav_exo):
    return sr.build_chain(uav_plant, uav_exo)


@pytest.fixture(scope="session")
def uav_kset(uav_plant, uav_exo, uav_chain):
    return sr.solve_controller_kernels(uav_plant, uav_exo, uav_chain)


# pole-placed estimator gains used by the bundled scenarios
L_D = np.array([-7.983607, 93.891581, -28.789938, -48.531184])
L_R = np.array([0.323826, 2.976174])


@pytest.fixture(scope="session")
def uav_okset(uav_plant, uav_exo):
    return sr.solve_observer_kernels(uav_plant, uav_exo, L_D, L_R)


@pytest.fixture(scope="session")
def nominal_plant(uav_plant):
    """Same numbers with the in-domain self-coupling switched off (the plain
    transport form)."""
    return dataclasses.replace(uav_plant, c_self=0.0)


@pytest.fixture(scope="session")
def nominal_kset(nominal_plant, uav_exo, uav_chain):
    return sr.solve_controller_kernels(nominal_plant, uav_exo, uav_chain)


@pytest.fixture(scope="session")
def uav_ic():
    return sr.FieldIC(
        z0=lambda x: np.sin(3 * np.pi * np.asarray(x, float)),
        w0=lambda x: np.cos(2 * np.pi * np.asarray(x, float)),
        Y0=np.array([8.0, 0.0]),
        v0=np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
    )


def load_scenario(name, **kw):
    cfg = cli.parse_config(name)
    return cli.build_scenario_from_config(cfg, **kw)


@pytest.fixture(scope="session")
def case1_safe_traj():
    sc = load_scenario("case1_safe")
    return sc, sr.run_closed_loop(sc)


@pytest.fixture(scope="session")
def observer_check_traj():
    sc = load_scenario("observer_check")
    return sc, sr.run_closed_loop(sc)
