"""Built-in scenario presets.

"sso-paper" is the sun-synchronous orbit used by both shipped scenarios and
can be referenced by name from the "elements" field of any config.
"detumble-paper" is the rate-damping run (tight 2 s sampling, rate-only
weights); "attitude-paper" is the large slew to the target quaternion
(0, 1, 0, 0) with 30 s sampling. Both default to the quantizer enabled.
"""

from copy import deepcopy

SSO_ELEMENTS = {
    "a_km": 6691.6,
    "e": 0.046440,
    "i_deg": 96.7,
    "raan_deg": 100.90,
    "argp_deg": 119.70,
    "mean_anomaly_deg": 240.49,
}

_INERTIA = {"ix": 0.020, "iy": 0.030, "iz": 0.040}

DETUMBLE = {
    "elements": "sso-paper",
    "inertia": dict(_INERTIA),
    "mpc": {
        "q_diag": [0.0, 0.0, 0.0, 0.0, 500.0, 1000.0, 250.0],
        "r_diag": [1e-8, 1e-8, 1e-8],
        "horizon": 10,
        "ts": 2.0,
        "u_max": 0.1,
        "x_ref": {"q": [0.0, 0.0, 0.0, 1.0], "omega": [0.0, 0.0, 0.0]},
    },
    "x0": {"q": [0.0, 0.0, 0.0, 1.0], "omega_deg": [4.0, 3.0, -3.0]},
    "duration": 2400.0,
    "pwm": True,
    "substeps": 20,
    "output": "detumble-paper.csv",
}

ATTITUDE = {
    "elements": "sso-paper",
    "inertia": dict(_INERTIA),
    "mpc": {
        "q_diag": [20.0, 20.0, 20.0, 20.0, 1e4, 1e4, 1e4],
        "r_diag": [1e-8, 1e-8, 1e-8],
        "horizon": 10,
        "ts": 30.0,
        "u_max": 0.1,
        "x_ref": {"q": [0.0, 1.0, 0.0, 0.0], "omega": [0.0, 0.0, 0.0]},
    },
    "x0": {"q": [0.0, 0.1, 0.0, 1.0], "omega": [0.0, 0.0, 0.0]},
    "duration": 5400.0,
    "pwm": True,
    "substeps": 20,
    "output": "attitude-paper.csv",
}

ELEMENT_PRESETS = {"sso-paper": SSO_ELEMENTS}

SCENARIO_PRESETS = {"detumble-paper": DETUMBLE, "attitude-paper": ATTITUDE}

DESCRIPTIONS = {
    "sso-paper": "sun-synchronous orbital elements (usable as an 'elements' reference)",
    "detumble-paper": "rate-damping scenario: 2 s sampling, rate-only state weights",
    "attitude-paper": "attitude-slew scenario: 30 s sampling, target quaternion (0, 1, 0, 0)",
}


def preset_names() -> list[str]:
    return sorted(list(ELEMENT_PRESETS) + list(SCENARIO_PRESETS))


def get_scenario_preset(name: str) -> dict:
    return deepcopy(SCENARIO_PRESETS[name])


def get_element_preset(name: str) -> dict:
    return deepcopy(ELEMENT_PRESETS[name])
