import numpy as np
import pytest

from trafficast.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def network():
    """Default labelled network: 3 archetypes x 9 segments x 60 days."""
    return generate(SynthSpec(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict(request):
    """Record one acceptance line; printed in the terminal summary."""
    def record(name: str, ok: bool, detail: str):
        line = f"{name}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        request.config._acceptance = getattr(request.config, "_acceptance", []) + [line]
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0][1:])):
            terminalreporter.write_line(line)
