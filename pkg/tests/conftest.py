import numpy as np
import pytest

from bargeval.game import GameParams, Instance, InstanceDB


@pytest.fixture(scope="session")
def default_db():
    from bargeval.game import enumerate_instances

    return enumerate_instances()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def toy_db() -> InstanceDB:
    """Two instances sharing a pool and player 1's valuation, so player 1's
    belief over player 2 is genuinely uncertain."""
    return InstanceDB(
        instances=[
            Instance((1, 2, 2), (2, 2, 2), (4, 1, 2)),
            Instance((1, 2, 2), (2, 2, 2), (0, 3, 2)),
        ],
        note="toy",
    )


@pytest.fixture()
def tiny_db():
    return toy_db()


@pytest.fixture()
def barg2():
    return GameParams(max_rounds=2, terminate_prob=0.0, discount=1.0)


@pytest.fixture()
def barg10():
    return GameParams(max_rounds=10, terminate_prob=0.0, discount=1.0)
