"""Bundled example data."""

import numpy as np

# Sample covariance matrix of self-reported weekday sleep duration (hours)
# from a four-wave adolescent cohort (ages 10, 12, 14 and 16), complete
# cases only.
SLEEP_COV = np.array(
    [
        [0.394, 0.253, 0.185, 0.095],
        [0.253, 0.546, 0.304, 0.146],
        [0.185, 0.304, 0.738, 0.332],
        [0.095, 0.146, 0.332, 0.809],
    ]
)
SLEEP_N = 1294
SLEEP_LABELS = ("SD10", "SD12", "SD14", "SD16")
