"""magsat: closed-loop magnetorquer attitude control with receding-horizon MPC.

Rigid-body quaternion dynamics, a Keplerian orbit with a tilted-dipole
geomagnetic field, a box-constrained nonlinear MPC on the commanded dipole,
and a seven-level quantizer between controller and actuator, plus a scenario
runner and CLI that reproduce the shipped presets from config files.
"""

from .controller import (
    ControlSequence,
    MpcConfig,
    PredictedTrajectory,
    SolveResult,
    gradient,
    predict,
    shift_warm_start,
    solve,
    total_cost,
)
from .dynamics import (
    AttitudeState,
    DipoleCommand,
    InertiaTensor,
    Torque,
    euler_dynamics,
    magnetic_torque,
    propagate,
    quat_kinematics,
    step,
)
from .errors import ConfigError, FrameError, IntegrationDivergedError
from .orbit import (
    BODY,
    ORBITAL,
    DipoleConstants,
    FieldSample,
    OrbitalElements,
    dipole_field,
    field_at_time,
    field_function,
    mean_motion,
    orbit_radius,
    orbital_period,
    rotation_matrix,
    solve_kepler,
    to_body_frame,
    true_anomaly,
)
from .quantizer import QuantizerLevels, quantize, quantize_vector
from .scenario import (
    RunLog,
    ScenarioConfig,
    load_config,
    run_scenario,
    scenario_from_dict,
    settle_time,
    summarize,
)

__version__ = "0.1.0"
