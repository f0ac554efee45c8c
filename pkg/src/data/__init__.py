"""
Synthetic instances and ground-truth posterior oracles.
"""
