import pytest

from advarena.models import adversarial_train, train
from advarena.synthdata import generate_synthetic_dataset
from advarena.tournament import assign_targets

DESK_SEED = 7
DESK_CLASSES = 10
DESK_SHAPE = (8, 8, 1)


@pytest.fixture(scope="session")
def train_data():
    # desk defaults: 10 classes x 20 = 200 training samples of 8x8x1
    return generate_synthetic_dataset(DESK_SEED, DESK_CLASSES, 20, DESK_SHAPE,
                                      "train")


@pytest.fixture(scope="session")
def val_data():
    data = generate_synthetic_dataset(DESK_SEED, DESK_CLASSES, 5, DESK_SHAPE,
                                      "validation")
    return assign_targets(data, DESK_SEED)


@pytest.fixture(scope="session")
def vanilla_model(train_data):
    return train(train_data, epochs=40, learning_rate=0.5, seed=11)


@pytest.fixture(scope="session")
def adv_model(train_data):
    return adversarial_train(train_data, epochs=40, learning_rate=0.5,
                             epsilon=0.5, seed=11)


@pytest.fixture(scope="session")
def substitute_model(train_data):
    return train(train_data, epochs=40, learning_rate=0.5, seed=99)
