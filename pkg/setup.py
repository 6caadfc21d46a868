"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import os
import re

from setuptools import find_packages, setup

# get version string from module
with open(os.path.join(os.path.dirname(__file__), "tsarmvs/__init__.py"), "r") as f:
    readval = re.search(r"__version__ = ['\"]([^'\"]*)['\"]", f.read(), re.M)
    if readval is None:
        raise RuntimeError("Version not found.")
    version = readval.group(1)
    print("-- Building version " + version)

with open("README.md", encoding="utf8") as f:
    readme = f.read()

install_requires = [
    "numpy>=1.18.5",
    "scipy>=1.7.0",
    "scikit_image>=0.19.0",
    "torch>=1.8.0",
    "runstats>=1.8.0",
    "PyYAML>=5.3.1",
    "pandas>=1.3.4",
    "tqdm>=4.50.0",
    "matplotlib>=3.5.0",
]

setup(
    name="tsarmvs",
    author="tsarmvs contributors",
    version=version,
    license="MIT",
    description="Textureless-aware multi-view stereo with synthetic scenes and evaluation.",
    long_description_content_type="text/markdown",
    long_description=readme,
    python_requires=">=3.8",
    packages=find_packages(
        exclude=[
            "tests",
            "tsarmvs_examples*",
        ]
    ),
    setup_requires=["wheel"],
    install_requires=install_requires,
    entry_points={"console_scripts": ["tsarmvs=tsarmvs.cli:main"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Processing",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
)
