import numpy as np
import pytest

from rncover.geometry import Box, SceneBounds
from rncover.sim import EnvConfig, EnvState, EpisodeParams, Sensor, SimObject


def make_state(sensors, objects, horizon=10, config=None, seed=0):
    """Hand-built episode: sensors as (cx, cy, w, h[, speed]), objects as
    (cx, cy, w, h) stationary boxes."""
    config = config or EnvConfig(p_toggle=0.0, spawn_rate=0.0)
    scene = SceneBounds(config.scene_width, config.scene_height)
    ss = [Sensor(i, Box(*s[:4]), s[4] if len(s) > 4 else 0.05) for i, s in enumerate(sensors)]
    os_ = [SimObject(i, Box(*o), 0.0, 0.0, False) for i, o in enumerate(objects)]
    params = EpisodeParams(scene, len(ss), len(os_), 1.0, horizon, config.spawn_rate)
    state = EnvState(params, os_, ss, np.random.default_rng(seed), config)
    state.next_id = len(os_)
    return state


@pytest.fixture
def small_env():
    return EnvConfig(n_sensors=(1, 2), n_objects=(5, 15), horizon=(300, 600))


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
