import numpy as np
import pytest

from prevcorr.models import LabelSpace, ModelSpec

SPECS = [
    ModelSpec("logistic-binary", 3),
    ModelSpec("logistic-multinomial", 2, LabelSpace(4)),
    ModelSpec("mlp-1hidden", 3, LabelSpace(3), hidden_dim=5, activation="tanh"),
    ModelSpec("mlp-1hidden", 2, LabelSpace(2), hidden_dim=4, activation="relu"),
]


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(params=SPECS, ids=lambda s: f"{s.kind}-{s.activation}" if s.hidden_dim else s.kind)
def any_spec(request):
    return request.param


def table1():
    """Contingency table cells as arrays (x, y)."""
    X = np.array([0.0] * 91 + [1.0] * 9)[:, None]
    y = np.array([0] * 47 + [1] * 44 + [0] * 3 + [1] * 6)
    return X, y
