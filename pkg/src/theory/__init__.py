"""
Replica-symmetric theory: scalar channel, spectral transforms, fixed point and overlaps.
"""
