import numpy as np
import pytest

from dnhb.channel import (
    ChannelGeometry,
    ChannelRealization,
    GeometryParams,
    SystemConfig,
    UserChannel,
    generate_channel,
)
from dnhb.numerics import ComplexMatrix, Rng


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def random_batch(rng, rows, cols, scale=1.0):
    return ComplexMatrix(scale * rng.normal((rows, cols)), scale * rng.normal((rows, cols)))


def single_path(angle_r, angle_t, gain=1.0 + 0j):
    return ChannelGeometry(
        n_clusters=1,
        n_rays=1,
        angular_spread=0.0,
        cluster_aoa=np.array([angle_r]),
        cluster_aod=np.array([angle_t]),
        aoa=np.array([[angle_r]]),
        aod=np.array([[angle_t]]),
        gains=np.array([[gain]]),
    )


def fixed_realization(cfg, matrices):
    """Realization with hand-picked channel matrices (geometry is a placeholder)."""
    users = tuple(UserChannel(ComplexMatrix.from_complex(np.atleast_2d(h)), single_path(0.0, 0.0)) for h in matrices)
    return ChannelRealization(cfg, users)


@pytest.fixture
def tiny_cfg():
    return SystemConfig(n_t=2, n_r=2, n_rf_t=1, n_rf_r=1, n_s=1, k_users=1)


@pytest.fixture
def desk_cfg():
    return SystemConfig(n_t=16, n_r=4, n_rf_t=4, n_rf_r=2, n_s=2, k_users=2)


@pytest.fixture
def desk_realization(desk_cfg):
    return generate_channel(desk_cfg, GeometryParams(), Rng(31))


# -- acceptance reporting ------------------------------------------------------------
#
# Tests marked ``@pytest.mark.criterion(id, title)`` get one PASS/FAIL line in
# the terminal summary. A test may attach a short measurement through
# ``record_property("detail", text)``.

_criteria_lines: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "FAIL"
        detail = dict(item.user_properties).get("detail")
        line = f"{status}  criterion {marker.args[0]}: {marker.args[1]}"
        _criteria_lines.append(line + (f"  [{detail}]" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _criteria_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criteria_lines:
            terminalreporter.line(line)
