"""
Energy-based stochastic state reduction: state-vector SDE integration,
closed-form solutions under a change of measure, dephasing master equation
and statistical verification of the reduction laws.
"""
