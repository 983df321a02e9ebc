import numpy as np
import pytest

from maskpath.models import PartialSequence, TabularJointModel, Vocab


@pytest.fixture
def vocab2() -> Vocab:
    return Vocab(2)


@pytest.fixture
def correlated_pair(vocab2) -> TabularJointModel:
    """Two tokens, X0 = X1, uniform on {0, 1}."""
    support = np.array([[0, 0], [1, 1]])
    return TabularJointModel(vocab2, 2, support, np.array([0.5, 0.5]))


@pytest.fixture
def independent_pair(vocab2) -> TabularJointModel:
    """Two independent uniform bits."""
    support = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    return TabularJointModel(vocab2, 2, support, np.full(4, 0.25))


@pytest.fixture
def deterministic_model(vocab2) -> TabularJointModel:
    """All mass on one sequence."""
    support = np.array([[1, 0, 1]])
    return TabularJointModel(vocab2, 3, support, np.array([1.0]))


@pytest.fixture
def masked_pair(vocab2) -> PartialSequence:
    return PartialSequence.fully_masked(vocab2, 2)
