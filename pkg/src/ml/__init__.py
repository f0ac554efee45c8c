"""
Algorithms run on concrete instances.
"""
