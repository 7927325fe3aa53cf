import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from twinsim.lattice import Grid1D
from twinsim.source import SourceParams, build_twin_beams

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def uniform_source(gain=1.5, coherence=16.0, power=1.0e4):
    return SourceParams(gain_peak=gain, pump_waist=math.inf, coherence_length=coherence,
                        seed_waist=math.inf, seed_power=power)


@pytest.fixture(scope="session")
def small_grid():
    return Grid1D.centered(32, 4.0)


@pytest.fixture(scope="session")
def twin_small(small_grid):
    src = SourceParams(gain_peak=1.5, pump_waist=60.0, coherence_length=12.0, seed_waist=50.0)
    return build_twin_beams(small_grid, src)


def random_physical_cov(rng, n_pixels, spread=1.0):
    """S diag(nu) S^T with nu >= 1 and S = expm(Omega H) symplectic for a random symmetric H."""
    from scipy.linalg import expm

    from twinsim.lattice import symplectic_form

    dim = 4 * n_pixels
    h = rng.normal(size=(dim, dim)) * spread / math.sqrt(dim)
    s = expm(symplectic_form(n_pixels) @ (h + h.T))
    nu = 1.0 + rng.exponential(0.5, size=2 * n_pixels)
    # each mode's X and P share its thermal occupation
    thermal = np.concatenate([nu[:n_pixels], nu[:n_pixels], nu[n_pixels:], nu[n_pixels:]])
    return s @ np.diag(thermal) @ s.T


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
