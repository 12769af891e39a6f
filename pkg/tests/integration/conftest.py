"""Integration test configuration: full numerical runs on realistic grids.

These tests take minutes, not seconds.  Set ``QLAB_SKIP_INTEGRATION=1``
to skip the whole directory, or deselect with ``-m "not integration"``.
"""

import importlib
import os
import sys

import pytest

sys.path.insert(0, "src")

pytestmark = pytest.mark.integration


def pytest_collection_modifyitems(config, items):
    """Mark everything here as integration; skip on request."""
    skip = None
    if os.getenv("QLAB_SKIP_INTEGRATION") == "1":
        skip = pytest.mark.skip(reason="QLAB_SKIP_INTEGRATION=1")
    for item in items:
        if "integration" in str(item.fspath):
            item.add_marker(pytest.mark.integration)
            if skip is not None:
                item.add_marker(skip)


@pytest.fixture(scope="session", autouse=True)
def qlab_env(tmp_path_factory):
    """Scratch output directory and a small worker pool for the session."""
    import config as config_mod

    out_dir = str(tmp_path_factory.mktemp("qlab-out"))
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("QLAB_OUT_DIR", out_dir)
        mp.setenv("QLAB_THREADS", "2")
        # Config reads the environment at import time
        importlib.reload(config_mod)
        yield out_dir
    importlib.reload(config_mod)


@pytest.fixture(scope="session")
def rigid_chart64():
    from kahler_family import linear_family
    from tensor_geometry import GridDomain
    return linear_family(GridDomain(1, 64))


@pytest.fixture(scope="session")
def perturbed_run():
    from run_config import DEFAULT_RUN_PATH, load_run_config
    return load_run_config(os.path.join(os.path.dirname(DEFAULT_RUN_PATH), "perturbed_run.yaml"))
