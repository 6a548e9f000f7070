import os

import pytest

from goal_driving_server.core.road_map import load_map, load_map_file
from goal_driving_server.core.trajectory import VehicleState
from goal_driving_server.harness.scenarios import MAP_DIR


def straight_road_document(length: float = 100.0, speed_limit: float = 10.0) -> dict:
    """Two same-direction lanes along the x axis; left lane at y=1.75."""
    return {
        "speed_limit": speed_limit,
        "roads": [
            {
                "id": "road",
                "lanes": [
                    {"id": "left", "centerline": [[0.0, 1.75], [length, 1.75]], "width": 3.5,
                     "left": None, "right": "right", "successors": []},
                    {"id": "right", "centerline": [[0.0, -1.75], [length, -1.75]], "width": 3.5,
                     "left": "left", "right": None, "successors": []},
                ],
            }
        ],
    }


@pytest.fixture
def straight_map():
    return load_map(straight_road_document())


@pytest.fixture
def s1_map():
    return load_map_file(os.path.join(MAP_DIR, "s1_exit.json"))


@pytest.fixture
def t_junction_map():
    return load_map_file(os.path.join(MAP_DIR, "t_junction.json"))


@pytest.fixture
def roundabout_map():
    return load_map_file(os.path.join(MAP_DIR, "roundabout.json"))


def straight_history(x0: float, y: float, speed: float, count: int, dt: float = 0.5):
    return [VehicleState((x0 + speed * dt * k, y), 0.0, speed, 0.0, dt * k) for k in range(count)]
