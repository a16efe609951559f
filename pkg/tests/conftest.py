import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cuboidtrack.geometry import CameraIntrinsics, Cuboid, CuboidDimensions, RigidTransform


@pytest.fixture
def camera():
    return CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_cuboid(rng, depth=(3.0, 6.0), dims=(0.5, 2.0)) -> Cuboid:
    """A box in front of the camera, fully inside z > 0."""
    t = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(*depth)])
    return Cuboid(RigidTransform(random_rotation(rng), t), CuboidDimensions(rng.uniform(*dims, 3)))


# -- acceptance reporting -------------------------------------------------------

_VERDICTS: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed = report.failed
    if report.when == "call" or (failed and report.when == "setup"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if failed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
        _VERDICTS.append(f"{'FAIL' if failed else 'PASS'} {marker.args[0]}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
