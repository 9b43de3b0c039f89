# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0


from setuptools import setup
import os
import re


def get_version():

    this_dir = os.path.dirname(os.path.realpath(__file__))

    with open(os.path.join(this_dir, "python", "__init__.py"), encoding="utf-8") as fh:
        match = re.search(r'^__version__ = "([^"]+)"', fh.read(), re.MULTILINE)

    return match.group(1)


with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt") as fh:
    requirements = [line.strip() for line in fh if line.strip()]

setup(
    name="kobt",
    version=get_version(),
    description="Knockoff boosted trees: FDR-controlled feature selection with gradient-boosted tree importances",
    license="Apache License 2.0",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
    ],
    package_dir={"kobt": "python"},
    packages=["kobt"],
    entry_points={
        "console_scripts": [
            "kobt=kobt.cli:main",
        ],
    },
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={"test": ["pytest"]},
)
