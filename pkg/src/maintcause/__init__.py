"""Benchmark toolkit for causal dose-response on maintenance contracts.

Generates semi-synthetic contract populations with controllable
treatment-selection bias, fits counterfactual outcome estimators, turns
them into cost-minimizing preventive-maintenance prescriptions, and
scores everything against the generator's ground truth.
"""

__version__ = "0.1.0"
