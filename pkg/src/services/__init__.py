"""
Experiment orchestration behind the command-line subcommands.
"""
