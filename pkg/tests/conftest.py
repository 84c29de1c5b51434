import numpy as np
import pytest

from saferoute.trajectory import TrackPoint


def eye_points(vertical=(3.0, 3.0), width=10.0, cx=0.0, cy=0.0):
    """Six eye landmarks p1..p6 with the given vertical gaps and corner distance."""
    v1, v2 = vertical
    x1, x2 = cx - width / 6, cx + width / 6
    return np.array([
        (cx - width / 2, cy),
        (x1, cy + v1 / 2),
        (x2, cy + v2 / 2),
        (cx + width / 2, cy),
        (x2, cy - v2 / 2),
        (x1, cy - v1 / 2),
    ])


def mouth_points(gaps=(1.0, 1.0), width=10.0):
    """Eight inner-lip landmarks 60..67 with gaps at 61/67 and 63/65."""
    g1, g2 = gaps
    return np.array([
        (-width / 2, 0.0),
        (-width / 4, g1 / 2), (0.0, 0.0), (width / 4, g2 / 2),
        (width / 2, 0.0),
        (width / 4, -g2 / 2), (0.0, 0.0), (-width / 4, -g1 / 2),
    ])


def face_landmarks(eye_vertical=(3.0, 3.0), eye_width=10.0, mouth_gaps=(0.0, 0.0)):
    lm = np.zeros((68, 2))
    lm[:] = np.linspace(0, 1, 68)[:, None] * [50.0, 60.0]
    lm[36:42] = eye_points(eye_vertical, eye_width, -15.0, 0.0)
    lm[42:48] = eye_points(eye_vertical, eye_width, 15.0, 0.0)
    lm[60:68] = mouth_points(mouth_gaps) + [0.0, -30.0]
    return lm


def point(vid, s, speed=0.0, lane="L1", t=0.0, accel=0.0, **kw):
    return TrackPoint(vid, t, s, lane, speed=speed, accel=accel, **kw)


@pytest.fixture(scope="session")
def default_table():
    """The seeded 3-lane, 50-vehicle, 10-minute simulator run, fused."""
    from saferoute.sim.dataset import simulate_table
    from saferoute.sim.traffic import ScenarioConfig

    return simulate_table(ScenarioConfig(seed=0))


_CRITERIA: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.outcome != "passed"):
        return
    _CRITERIA.setdefault(mark.args[0], []).append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok = all(o == "passed" for o in _CRITERIA[n])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}")
