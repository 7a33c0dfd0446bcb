import pytest

from gridstorm.model import Branch, Bus, Generator, GridCase


def make_triangle(capacities=(None, None, None)) -> GridCase:
    """Three buses in a ring: one generator feeding two unit loads."""
    c12, c13, c23 = capacities
    grid = GridCase(
        name="triangle",
        buses=[
            Bus(1, "generator"),
            Bus(2, "load", 1.0),
            Bus(3, "load", 1.0),
        ],
        generators=[Generator(1, 0.0, 2.0)],
        branches=[
            Branch(1, 1, 2, 0.1, c12),
            Branch(2, 1, 3, 0.1, c13),
            Branch(3, 2, 3, 0.1, c23),
        ],
    )
    grid.validate()
    return grid


def make_two_bus(capacity=None) -> GridCase:
    grid = GridCase(
        name="twobus",
        buses=[Bus(1, "generator"), Bus(2, "load", 1.0)],
        generators=[Generator(1, 0.0, 3.0)],
        branches=[Branch(1, 1, 2, 0.1, capacity)],
    )
    grid.validate()
    return grid


@pytest.fixture
def triangle() -> GridCase:
    return make_triangle()


@pytest.fixture
def two_bus() -> GridCase:
    return make_two_bus()


@pytest.fixture(scope="session")
def default_experiment():
    from gridstorm.experiments import ExperimentConfig, build_experiment

    return build_experiment(ExperimentConfig())
