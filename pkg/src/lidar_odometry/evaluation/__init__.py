from .metrics import (
    OdomErrors,
    SubSequenceSet,
    accumulate,
    odometry_errors,
    pose_error,
    subsequence_set,
)
from .report import errors_to_csv, write_poses

__all__ = [
    "OdomErrors",
    "SubSequenceSet",
    "accumulate",
    "errors_to_csv",
    "odometry_errors",
    "pose_error",
    "subsequence_set",
    "write_poses",
]
