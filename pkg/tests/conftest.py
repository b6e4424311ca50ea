from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ccbf.dynamics import SisModel, SisParams
from ccbf.graph import NetworkGraph

settings.register_profile(
    "det",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("det")

# parameters of the bundled paper_sis3 scenario, inlined for direct use
PAPER_EDGES = [(2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3)]
PAPER_BETA = [[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]]
PAPER_GAMMA = [0.3, 0.3, 0.3]
PAPER_UMAX = [0.75, 0.75, 0.75]
PAPER_XBAR = [0.1, 0.12, 0.18]
PAPER_X0 = [0.04, 0.01, 0.02]


@pytest.fixture(scope="session")
def paper_graph() -> NetworkGraph:
    return NetworkGraph(3, PAPER_EDGES)


@pytest.fixture(scope="session")
def paper_model(paper_graph) -> SisModel:
    params = SisParams(np.array(PAPER_BETA), np.array(PAPER_GAMMA), np.array(PAPER_UMAX))
    return SisModel(paper_graph, params)
