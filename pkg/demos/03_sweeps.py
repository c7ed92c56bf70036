"""Small versions of the two sensitivity sweeps.

How fast does the estimate degrade when the hand-eye rotation used for
reconstruction is slightly wrong, and how much do extra clouds help?
Pass a repetition count on the command line (default 3; the acceptance
suite uses 20).
"""

import sys

from profilecal.harness import default_config, run_cloud_count_sweep, run_rotation_perturbation_sweep

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = default_config(noise=True, seed=0)

# %% wrong rotation about the sensor z axis
rot = run_rotation_perturbation_sweep(cfg, [0, 0.5, 1, 2, 5, 10], repetitions=reps)
print(rot.to_csv())

# %% more clouds
count = run_cloud_count_sweep(cfg, [3, 4, 6, 8, 10], repetitions=reps)
print(count.to_csv())
