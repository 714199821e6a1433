import os
import pathlib

import pytest

try:
    import _robrec as robrec_module
except ImportError:
    import robrec as robrec_module


@pytest.fixture(scope="session")
def rr():
    return robrec_module


@pytest.fixture(scope="session")
def source_dir():
    return pathlib.Path(os.environ.get("ROBREC_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
