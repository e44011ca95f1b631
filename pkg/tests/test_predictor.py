import numpy as np
import pytest
import scipy.linalg as sla

import safereg as sr
from safereg.errors import OutOfHorizon
from safereg.predictor import Predictor, expAz, initial_safety_check


@pytest.fixture(scope="module")
def pred(uav_plant, uav_exo, uav_chain, uav_kset):
    xs = np.linspace(0.0, 1.0, 21)
    return Predictor(uav_plant, uav_exo, uav_chain, uav_kset, xs)


def test_nilpotent_exponential_matches_expm():
    for n in (2, 3, 5):
        Az = np.zeros((n, n))
        Az[np.arange(n - 1), np.arange(1, n)] = 1.0
        for s in (0.0, 0.058, 1.3):
            np.testing.assert_allclose(expAz(n, s), sla.expm(Az * s), atol=1e-13)


def test_zero_horizon_is_identity(pred, uav_chain):
    rng = np.random.default_rng(1)
    z, w = rng.normal(size=(2, 21))
    Y = rng.normal(size=2)
    v = rng.normal(size=6)
    Z0 = sr.to_error(uav_chain, Y, v)
    Zp, Yp, ep = pred.predict(z, w, Y, v, a=0.0)
    np.testing.assert_allclose(Zp, Z0, atol=1e-12)
    np.testing.assert_allclose(Yp, Y, atol=1e-12)
    assert ep == pytest.approx(Z0[0], abs=1e-12)


def test_zero_fields_polynomial_prediction(uav_plant, uav_exo):
    """When the transformed field is identically zero (zero data on a plant
    whose gain rows lam vanish: K = 0 and C = 0), the prediction is the bare
    nilpotent flow of Z."""
    import dataclasses

    A = np.zeros((2, 2))
    A[0, 1] = 1.0
    plant = dataclasses.replace(uav_plant, A=A, C=np.array([[0.0, 0.0]]))
    chain = sr.build_chain(plant, uav_exo)
    kset = sr.solve_controller_kernels(plant, uav_exo, chain, N_k=101)
    p = Predictor(plant, uav_exo, chain, kset, np.linspace(0, 1, 21))
    Y = np.array([2.0, -1.0])
    zeros = np.zeros(21)
    v = np.zeros(6)
    for a in (0.3 / plant.q2, 1.0 / plant.q2):
        Zp, _, _ = p.predict(zeros, zeros, Y, v, a=a)
        Z0 = chain.T_z @ Y
        np.testing.assert_allclose(Zp, expAz(2, a) @ Z0, atol=1e-10)


def test_out_of_horizon(pred, uav_plant):
    with pytest.raises(OutOfHorizon):
        pred.predict(np.zeros(21), np.zeros(21), np.zeros(2), np.zeros(6),
                     a=1.5 / uav_plant.q2)


def test_initial_safety_verdicts(pred):
    z0 = np.sin(3 * np.pi * pred.xs)
    w0 = np.cos(2 * np.pi * pred.xs)
    v0 = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    spec = sr.AffineBarrier()
    verdict, h = initial_safety_check((z0, w0, np.array([8.0, 0.0]), v0), pred, spec)
    assert verdict == "safe" and h > 0
    verdict, h = initial_safety_check((z0, w0, np.array([-1.0, 0.0]), v0), pred, spec)
    assert verdict == "unsafe_nonpositive_hbar" and h < 0


def test_zero_fields_positive_reference_is_unsafe(pred):
    """Starting exactly on the reference-barrier with nothing stored in the
    fields, the predicted error is -r(tbar0) < 0."""
    v0 = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    spec = sr.AffineBarrier()
    verdict, h = initial_safety_check(
        (np.zeros(21), np.zeros(21), np.zeros(2), v0), pred, spec
    )
    assert verdict == "unsafe_nonpositive_hbar"
    r_tb = float(np.sin(0.25 * np.pi * pred.a_max) + np.cos(0.25 * np.pi * pred.a_max))
    assert h == pytest.approx(-r_tb, abs=0.05)


def test_prediction_tracks_simulation(case1_safe_traj):
    """e predicted one transport time ahead matches the realized e to within
    a couple percent of the error scale (first-order scheme)."""
    sc, traj = case1_safe_traj
    a = sc.predictor.a_max
    t = traj.t
    realized = np.interp(t + a, t, traj.e)
    m = t <= t[-1] - a
    err = np.abs(traj.e_pred[m] - realized[m])
    assert err.max() <= 0.02 * np.abs(traj.e).max()


def test_prediction_error_refines_first_order(uav_plant, uav_exo, uav_chain, uav_kset):
    errs = []
    for refine in (1, 2):
        sc = sr.build_scenario(
            uav_plant, uav_exo,
            sr.FieldIC(
                z0=lambda x: np.sin(3 * np.pi * np.asarray(x)),
                w0=lambda x: np.cos(2 * np.pi * np.asarray(x)),
                Y0=np.array([8.0, 0.0]),
                v0=np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
            ),
            sr.AffineBarrier(), sr.Gains(np.array([1.5, 4.0])),
            sr.SimConfig(N=20 * refine, dt=1e-3 / refine, T_end=4.0),
            kset=uav_kset,
        )
        traj = sr.run_closed_loop(sc)
        a = sc.predictor.a_max
        realized = np.interp(traj.t + a, traj.t, traj.e)
        m = traj.t <= traj.t[-1] - a
        errs.append(np.abs(traj.e_pred[m] - realized[m]).max())
    ratio = errs[1] / errs[0]
    assert 0.4 <= ratio <= 0.6


def test_p_boundary_transport_consistency(uav_plant, uav_exo, uav_chain, uav_kset):
    """p(1,t) equals the actuated-boundary target evaluated one transport
    time later, e^{c/q2} (-f/theta)(t + 1/q2), to first order in the grid."""
    import scipy.linalg as sla
    from safereg.barrier import HChain

    xs = np.linspace(0, 1, 21)
    dt = 1e-3
    pred = Predictor(uav_plant, uav_exo, uav_chain, uav_kset, xs)
    bump = sr.RescueBump(active=False, tbar0=pred.a_max)
    hch = HChain(sr.AffineBarrier(), bump, sr.Gains(np.array([1.5, 4.0])))
    from safereg.regulator import Controller

    ctrl = Controller(uav_plant, uav_exo, uav_chain, uav_kset, pred, hch)
    z = np.sin(3 * np.pi * xs)
    w = np.cos(2 * np.pi * xs)
    Y = np.array([8.0, 0.0])
    v = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    eS = sla.expm(uav_exo.S * dt)
    growth = np.exp(uav_plant.c_self / uav_plant.q2)
    nst = 1500
    p1_rec = np.zeros(nst)
    f_rec = np.zeros(nst)
    t = 0.0
    for k in range(nst):
        p1_rec[k] = pred.p_boundary(z, w, Y, v, hch, t)
        Z = sr.to_error(uav_chain, Y, v)
        f_rec[k] = -growth * hch.f(Z, t, uav_plant.b, check=False)
        U = ctrl.u_state(z, w, Y, v, t)
        vn = eS @ v
        z, w, Y = sr.plant_step(z, w, Y, U, uav_exo.P_d @ v, uav_plant, dt,
                                d_next=uav_exo.P_d @ vn)
        v = vn
        t += dt
    shift = int(round(pred.a_max / dt))
    err = np.abs(p1_rec[:-shift] - f_rec[shift:])
    assert err.max() < 0.15 * max(1.0, np.abs(f_rec).max())
