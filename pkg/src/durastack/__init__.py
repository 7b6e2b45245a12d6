"""Surgical case-duration prediction toolkit.

Builds, validates, locks, and serves a stacked regression model of
log-transformed case duration: chained-equation imputation, four base
learners tuned by leave-one-cluster-out cross-validation, convex stacking,
and calibration-centric reporting.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
