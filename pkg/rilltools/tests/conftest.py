import pytest

from rilltools.datasets import AdditionTaskSpec, gen_addition_groups
from rilltools.fuzzy import Lukasiewicz, Reichenbach, Sigmoidal
from rilltools.tests.factory import DummyWorkspaceFactory

OPERATOR_PARAMS = (
    Reichenbach(),
    Lukasiewicz(),
    Sigmoidal(4.0),
    Sigmoidal(8.0),
    Sigmoidal(16.0),
    Sigmoidal(32.0),
)

#: Small blob addition task shared by the training tests
SMALL_ADDITION = AdditionTaskSpec(train_groups=200, test_samples_per_class=20,
                                  pool_per_class=30, labelled_per_class=10, dim=8, margin=6.0)


@pytest.fixture(scope='session', params=OPERATOR_PARAMS, ids=repr)
def operator(request):
    """Every implication operator, the sigmoidal one at four steepness values."""
    return request.param


@pytest.fixture(scope='session')
def addition_task():
    task, text = gen_addition_groups(SMALL_ADDITION, seed=2020)
    return task, text


@pytest.fixture(scope='function')
def workspace():
    with DummyWorkspaceFactory() as factory:
        yield factory
