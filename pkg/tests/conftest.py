import pytest

from app.core.config import RunConfig, validate_config
from app.services.dataset_service import generate_strain_dataset
from app.services.prediction_service import save_result
from app.services.training_service import train


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end studies")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_config(**overrides) -> RunConfig:
    """A small, fast configuration; keyword names use '__' for dots."""
    config = RunConfig()
    config.dataset.synthetic.n_per_class = 4
    config.train.epochs = 1
    config.train.batch = 8
    for key, value in overrides.items():
        section, name = key.split("__", 1)
        setattr(getattr(config, section), name, value)
    validate_config(config)
    return config


@pytest.fixture
def tiny_config() -> RunConfig:
    return make_config()


@pytest.fixture
def config_factory():
    return make_config


@pytest.fixture(scope="session")
def tiny_train_set():
    return generate_strain_dataset(4, seed=1)


@pytest.fixture(scope="session")
def tiny_test_set():
    return generate_strain_dataset(3, seed=2)


@pytest.fixture(scope="session")
def trained(tiny_train_set, tiny_test_set):
    return train(make_config(), tiny_train_set, tiny_test_set, seed=0)


@pytest.fixture(scope="session")
def checkpoint_path(trained, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.gfef"
    save_result(trained, str(path))
    return str(path)
