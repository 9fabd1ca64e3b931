"""Rebuild tests/golden/regression.json from pilot runs.

Run from the repository root:  python tests/golden/regenerate.py
The values are regression anchors, not ground truth.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from satwave.analysis import multiplier_identity_residual, simulate
from satwave.elliptic import assemble_operators
from satwave.experiment import ExperimentConfig, analyze_run, run_experiment
from satwave.feedback import make_feedback, make_identity
from satwave.mesh import build_unit_square_mesh
from satwave.stepper import State

HERE = Path(__file__).parent

ANNULUS_MULTIPLIER = {
    "mesh": {"type": "annulus", "r_inner": 0.5, "r_outer": 1.0, "resolution": 1 / 48},
    "nonlinearity": {"type": "saturation", "S": 1.0},
    "initial_data": {"preset": "annulus_mode", "k": 0, "energy": 1.0},
    "x0": [0.0, 0.0], "t_end": 10.0, "r": 2.0,
}

ANNULUS_DECAY = {
    "mesh": {"type": "annulus", "r_inner": 0.5, "r_outer": 1.0, "resolution": 0.025},
    "nonlinearity": {"type": "saturation", "S": 1.0},
    "initial_data": {"preset": "annulus_mode", "k": 0, "energy": 1.0},
    "x0": [0.0, 0.0], "t_end": 10.0, "r": 2.0,
}


def square_multiplier(n):
    ops = assemble_operators(build_unit_square_mesh(n))
    fb = make_feedback(ops, make_identity())
    u0 = ops.interpolate(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    dt = 2 * ops.mesh.h
    tr = simulate(ops, fb, State(u0, np.zeros(ops.n)), dt, int(np.ceil(2.0 / dt)),
                  snapshot_every=1)
    return multiplier_identity_residual(tr, 0.0, tr.snapshot_times[-1], 2.0, (0.5, 0.5))


def main():
    out = {}
    out["square_multiplier"] = {"n": 16, "dt": "2h", "t_end": "ceil(2/dt) steps",
                                "snapshot_every": 1, "x0": [0.5, 0.5], "r": 2.0,
                                "residual": square_multiplier(16)}
    with tempfile.TemporaryDirectory() as tmp:
        cfg = ExperimentConfig.from_dict(ANNULUS_MULTIPLIER)
        run_experiment(cfg, Path(tmp) / "mult")
        rep = analyze_run(Path(tmp) / "mult", window=(1.0, 5.0), tau=(0.0, 10.0))
        out["annulus_analysis"] = {
            "config": ANNULUS_MULTIPLIER, "window": [1.0, 5.0], "tau": [0.0, 10.0],
            "multiplier_residual": rep["multiplier_residual"],
            "p_phi_residual_max": rep["p_phi_residual_max"],
            "fit_alpha": rep["fit"]["alpha"],
            "komornik_T": rep["komornik"]["T_estimate"],
            "rtol": 1e-6,
        }
        cfg = ExperimentConfig.from_dict(ANNULUS_DECAY)
        man = run_experiment(cfg, Path(tmp) / "decay")
        rows = np.genfromtxt(Path(tmp) / "decay" / "trace.csv", delimiter=",", names=True)
        t, E = rows["t"], rows["energy"]
        T = float(t[np.argmax(E / E[0] < 0.1)])
        T = float(np.ceil(T))
        k = int(np.argmin(np.abs(t - T)))
        out["annulus_decay"] = {"config": ANNULUS_DECAY, "n_dofs": man["n_dofs"],
                                "T": T, "pilot_ratio_at_T": float(E[k] / E[0])}
    (HERE / "regression.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
