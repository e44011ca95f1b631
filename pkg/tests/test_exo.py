import numpy as np
import pytest

import safereg as sr
from safereg.errors import NotObservable, SpectrumOffAxis


def test_uav_exosystem_valid(uav_exo):
    assert uav_exo.n_r == 2 and uav_exo.n_d == 4 and uav_exo.n_v == 6
    assert uav_exo.m_d == 4


def test_off_axis_spectrum_rejected():
    with pytest.raises(SpectrumOffAxis):
        sr.validate_exo([[1.0]], np.zeros((0, 0)), [1.0], np.zeros((0, 0)))


def test_constant_reference_model_valid():
    model = sr.validate_exo([[0.0]], np.zeros((0, 0)), [1.0], np.zeros((0, 0)))
    v = sr.evolve_exo(model, [3.0], 7.5)
    np.testing.assert_allclose(v, [3.0], atol=1e-12)


def test_unobservable_reference_rejected():
    S_r = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(NotObservable):
        sr.validate_exo(S_r, np.zeros((0, 0)), [0.0, 0.0], np.zeros((0, 0)))


def test_rotation_block_closed_form(uav_exo):
    v0 = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    for t in (0.0, 0.4, 3.7):
        v = sr.evolve_exo(uav_exo, v0, t)
        np.testing.assert_allclose(
            v[:2], [np.sin(0.25 * np.pi * t), np.cos(0.25 * np.pi * t)], atol=1e-12
        )
        np.testing.assert_allclose(v[2], np.sin(0.25 * t), atol=1e-12)
        np.testing.assert_allclose(v[5], np.cos(0.5 * t), atol=1e-12)


def test_evolution_at_zero_is_identity(uav_exo):
    v0 = np.arange(6.0)
    np.testing.assert_allclose(sr.evolve_exo(uav_exo, v0, 0.0), v0, atol=1e-14)


def test_semigroup_property(uav_exo):
    rng = np.random.default_rng(7)
    for _ in range(5):
        v0 = rng.normal(size=6)
        t1, t2 = rng.uniform(0, 5, size=2)
        a = sr.evolve_exo(uav_exo, v0, t1 + t2)
        b = sr.evolve_exo(uav_exo, sr.evolve_exo(uav_exo, v0, t1), t2)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_marginal_boundedness(uav_exo):
    v0 = np.ones(6)
    _, vecs = np.linalg.eig(uav_exo.S)
    bound = np.linalg.cond(vecs) * np.linalg.norm(v0)
    norms = [np.linalg.norm(sr.evolve_exo(uav_exo, v0, t)) for t in np.linspace(0, 50, 40)]
    assert max(norms) <= bound * (1 + 1e-9)


def test_signals(uav_exo):
    t = 1.3
    v = sr.evolve_exo(uav_exo, [0, 1, 0, 1, 0, 1], t)
    r, d = sr.signals(uav_exo, v)
    assert r == pytest.approx(np.sin(0.25 * np.pi * t) + np.cos(0.25 * np.pi * t), abs=1e-12)
    np.testing.assert_allclose(d, v[2:], atol=1e-14)  # Pbar_d = I
    r0, d0 = sr.signals(uav_exo, np.zeros(6))
    assert r0 == 0.0 and np.all(d0 == 0.0)


def test_no_disturbance_block_supported():
    model = sr.validate_exo([[0.0, 1.0], [-1.0, 0.0]], np.zeros((0, 0)),
                            [1.0, 0.0], np.zeros((0, 0)))
    assert model.n_d == 0
    r, d = sr.signals(model, [2.0, 0.0])
    assert r == 2.0 and d.size == 0
