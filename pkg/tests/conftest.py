import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from profilecal.geometry import rot_from_axis_angle
from profilecal.harness import default_config

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rotation(rng):
    """Uniformly distributed rotation (via a random unit quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_axis(rng):
    a = rng.normal(size=3)
    return a / np.linalg.norm(a)


def small_config(noise=False, m=3, thin=3, repetitions=2):
    """Default scene cut to ``m`` clouds with every ``thin``-th profile, for quick runs."""
    cfg = default_config(noise=noise, repetitions=repetitions)
    trajs = []
    for t in cfg.trajectories[:m]:
        t = dict(t)
        t["steps"] = max(1, t["steps"] // thin)
        trajs.append(t)
    return cfg.replace(trajectories=trajs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["random_rotation", "random_axis", "rot_from_axis_angle", "small_config"]


# --- acceptance summary ------------------------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_A"):
        return
    label = name[len("test_"):].split("_", 1)[0]
    measured = "; ".join(str(v) for k, v in report.user_properties if k == "measured")
    outcome = "PASS" if report.outcome == "passed" else ("FAIL" if report.outcome == "failed" else report.outcome.upper())
    prev = _ACCEPTANCE.get(label)
    if prev is not None:
        # parametrized criteria: any failure fails the criterion
        outcome = prev[0] if prev[0] != "PASS" else outcome
        measured = "; ".join(m for m in (prev[1], measured) if m)
    _ACCEPTANCE[label] = (outcome, measured)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s[1:])):
        outcome, measured = _ACCEPTANCE[label]
        terminalreporter.write_line(f"{label}: {outcome}" + (f"  ({measured})" if measured else ""))
