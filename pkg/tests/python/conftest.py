# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

import importlib.util
import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
SOURCE = os.path.join(ROOT, "python")

KOBT_INSTALLED = importlib.util.find_spec("kobt") is not None

if not KOBT_INSTALLED:
    # run against the source tree when the package is not installed
    _spec = importlib.util.spec_from_file_location(
        "kobt", os.path.join(SOURCE, "__init__.py"), submodule_search_locations=[SOURCE]
    )
    _module = importlib.util.module_from_spec(_spec)
    sys.modules["kobt"] = _module
    _spec.loader.exec_module(_module)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte Carlo studies")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
