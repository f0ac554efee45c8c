"""
Setup script for the rotationally-invariant regression bench.
"""
from setuptools import setup, find_packages

setup(
    name="rotinv-bench",
    version="1.0.0",
    description="Replica fixed points, VAMP and exact oracles for Bayesian linear regression "
                "with rotationally-invariant designs",
    author="rotinv-bench contributors",
    packages=find_packages(exclude=["examples", "examples.*"]),
    install_requires=[
        "python-dotenv>=1.0.0",
        "pydantic>=1.10,<2",
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "pandas>=2.0.0",
        "wandb>=0.16.0",
    ],
    entry_points={
        "console_scripts": [
            "rotinv-bench=src.cli:main",
        ],
    },
    python_requires=">=3.8",
)
