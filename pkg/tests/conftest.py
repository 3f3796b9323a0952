"""Configuración compartida de pytest.

Las reproducciones largas de escenarios se marcan con ``@pytest.mark.slow`` y
solo corren con ``RUN_SLOW=1``.
"""

import os
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: escenario largo, requiere RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("RUN_SLOW") == "1":
        return
    saltar = pytest.mark.skip(reason="escenario largo; usar RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(saltar)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
