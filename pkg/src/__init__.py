"""
rotinv-bench: Bayesian linear regression with rotationally-invariant designs.
"""
