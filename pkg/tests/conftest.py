import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("gavis", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("gavis")


@pytest.fixture(scope="session")
def two_room():
    from gavis.scene import synth_two_room, two_room_layout

    scene, occ = synth_two_room(seed=7)
    return scene, occ, two_room_layout()


@pytest.fixture(scope="session")
def survey(two_room):
    """Room-A survey: field, augmented scene and the incremental mapper behind them."""
    from gavis.planner import IncrementalMapper
    from gavis.scene import room_a_survey_trajectory

    scene, occ, layout = two_room
    t = time.perf_counter()
    traj = room_a_survey_trajectory(layout)
    mapper = IncrementalMapper(scene, occ)
    mapper.extend(traj)
    field, aug = mapper.field(), mapper.augmented_scene()
    return {"scene": scene, "occ": occ, "layout": layout, "traj": traj, "mapper": mapper,
            "field": field, "aug": aug, "build_seconds": time.perf_counter() - t}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tmp_cwd(tmp_path):
    old = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(old)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
