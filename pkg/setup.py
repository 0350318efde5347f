#!/usr/bin/env python

from setuptools import find_packages, setup

setup(
    name="learning-patterns",
    version="1.0.0",
    description="Learning patterns from learner behaviour with non-negative matrix factorization and bootstrap inference",
    author="",
    author_email="",
    url="https://github.com/user/project",
    install_requires=[
        "hydra-core==1.3.2",
        "hydra-colorlog==1.2.0",
        "rootutils",
        "rich",
        "matplotlib",
        "numpy>=1.22",
        "pandas",
        "pyyaml",
        "scipy",
        "tqdm",
    ],
    packages=find_packages(),
    package_data={"src.data": ["schemas/*.yaml"], "configs": ["**/*.yaml", "*.yaml"]},
    # use this to customize global commands available in the terminal after installing the package
    entry_points={
        "console_scripts": [
            "learning-patterns = src.cli:main",
        ]
    },
)
