"""Safe output regulation for coupled 2x2 hyperbolic PDE-ODE systems.

Library + CLI implementing nonovershooting backstepping boundary control
with barrier-function safety, a boundary-measurement state/disturbance
observer with certified error envelopes, and a finite-difference closed-loop
simulator for the UAV cable-payload case studies.
"""

from . import bessel
from .barrier import (
    AffineBarrier,
    BarrierSpec,
    Gains,
    HChain,
    RescueBump,
    TwoSidedDecayBarrier,
    chain_eval,
    f_eval,
    min_gains,
    sigma_eval,
)
from .chain import ChainMaps, build_chain, to_error
from .exo import ExoModel, evolve_exo, signals, validate_exo
from .kernels import (
    FHKernel,
    KernelSet,
    ObsKernelSet,
    eval_FH,
    pi_func,
    solve_controller_kernels,
    solve_observer_kernels,
)
from .observer import Measurement, ObserverIntegrator, ObserverState, observer_step
from .plant import FieldIC, Plant, UavParams, build_uav, riemann, riemann_inverse, validate_plant
from .predictor import Predictor, initial_safety_check
from .regulator import (
    Controller,
    EnvelopeParams,
    InitBounds,
    estimate_xi_e,
    lemma2_bound,
    lemma3_envelope,
)
from .simkit import (
    Metrics,
    Scenario,
    SimConfig,
    Trajectory,
    build_scenario,
    metrics,
    plant_step,
    run_closed_loop,
)

__version__ = "0.1.0"
