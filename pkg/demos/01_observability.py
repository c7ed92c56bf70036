"""Which sets of end-effector rotations pin down the hand-eye translation?

Every reconstructed cloud adds three rows ``[I | -R_be]`` to the system.
This walk-through shows the rank as clouds are added, the direction that
stays invisible with two clouds, and an exact solve with three.
"""

import math

import numpy as np

from profilecal.calibration import (
    CalibObservation,
    build_system,
    check_rank_conditions,
    nullspace_vector_m2,
    solve_translation,
)
from profilecal.geometry import rotx, roty, rotz

np.set_printoptions(precision=4, suppress=True)

o_c = np.array([100.0, 200.0, 300.0])     # target origin in the base frame
o_es = np.array([907.5, 97.0, 40.0])      # what we want to recover

# %% one, two and three clouds
sets = {
    "one cloud": [np.eye(3)],
    "two clouds": [np.eye(3), rotz(math.radians(30))],
    "three, shared axis": [np.eye(3), rotz(math.radians(10)), rotz(math.radians(20))],
    "three, distinct axes": [np.eye(3), rotx(math.radians(30)), roty(math.radians(30))],
}
for name, rots in sets.items():
    d = check_rank_conditions(rots)
    print(f"{name:22s} rank {d.numeric_rank}  verdict {d.verdict}")

# %% the blind direction with two clouds
R1, R2 = np.eye(3), rotz(math.radians(30))
v = nullspace_vector_m2(R1, R2)
A = build_system([CalibObservation(np.zeros(3), R) for R in (R1, R2)]).A
print("\nnull vector", v, " |A v| =", np.linalg.norm(A @ v))
# shifting both unknowns along the common rotation axis leaves every residual unchanged

# %% exact recovery
obs = [CalibObservation(o_c - R @ o_es, R) for R in sets["three, distinct axes"]]
res = solve_translation(build_system(obs))
print("\nrecovered o_es", res.hand_eye_translation, " residual", res.residual_norm)
print("condition number", round(res.condition_number, 2))
