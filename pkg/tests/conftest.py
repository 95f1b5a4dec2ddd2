import pytest

from vdss.config import default_registry, load_config_file
from vdss.contracts import ContractValidator


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def validator(registry):
    return ContractValidator(registry)


@pytest.fixture(scope="session")
def detection_rules():
    return load_config_file("detection_rules.json")


@pytest.fixture(scope="session")
def planner_templates():
    return load_config_file("planner_templates.json")


@pytest.fixture(scope="session")
def reflect_rules():
    return load_config_file("reflect_rules.json")
