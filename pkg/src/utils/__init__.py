"""
Shared configuration, logging, errors and output helpers.
"""
