import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import uniform_source
from twinsim.detection import ScanResult, SlitParams, measure_noise, run_scan, slit_width_sweep
from twinsim.errors import DomainError, MeasurementError
from twinsim.lattice import FieldState, Grid1D, apply_loss, coherent_state
from twinsim.selftest import full_slit
from twinsim.source import SourceParams, build_twin_beams, closed_form_noise

GRID = Grid1D.centered(128, 4.0)
LC = 24.0


@pytest.fixture(scope="module")
def uniform_state():
    return build_twin_beams(GRID, uniform_source(1.5, coherence=LC))


@pytest.fixture(scope="module")
def gaussian_state():
    grid = Grid1D.centered(256, 4.0)
    src = SourceParams(gain_peak=1.5, pump_waist=500.0, coherence_length=60.0, seed_waist=375.0)
    return build_twin_beams(grid, src)


@given(xp=st.floats(-250, 250), xc=st.floats(-250, 250), w=st.floats(4.0, 200.0))
def test_coherent_state_is_exactly_shot_noise(xp, xc, w):
    rng = np.random.default_rng(0)
    mp = rng.normal(size=GRID.pixel_count) + 1j * rng.normal(size=GRID.pixel_count)
    s = coherent_state(GRID, mp, 0.3 * mp[::-1])
    r = measure_noise(s, SlitParams(xp, w), SlitParams(xc, w))
    assert abs(r.v_rel - 1.0) < 1e-12


def test_full_beam_lossless_is_minus_3_01_db(uniform_state):
    slit = full_slit(GRID)
    r = measure_noise(uniform_state, slit, slit)
    assert r.db == pytest.approx(-3.0103, abs=0.01)
    assert abs(r.v_rel - 0.5) < 1e-6
    assert r.qnl_flux == pytest.approx(np.sum(uniform_state.intensity("probe") + uniform_state.intensity("conj")))


def test_full_beam_engine_matches_formula_grid():
    slit = full_slit(GRID)
    for g in (1.2, 1.5, 2.0):
        base = build_twin_beams(GRID, uniform_source(g, coherence=LC))
        for ep in (0.3, 0.7, 1.0):
            for ec in (0.3, 0.7, 1.0):
                s = apply_loss(apply_loss(base, "probe", ep), "conj", ec)
                v = measure_noise(s, slit, slit).v_rel
                ref = closed_form_noise(g, ep, ec)
                assert abs(v - ref) <= 1e-6 * ref


def test_matched_vs_offset(uniform_state):
    w = 2 * LC
    matched = measure_noise(uniform_state, SlitParams(0, w), SlitParams(0, w)).db
    offset = measure_noise(uniform_state, SlitParams(0, w), SlitParams(3 * LC + w, w)).db
    assert matched < 0 < offset


def test_dark_slits_raise_and_scan_records_nan():
    mp = np.where(np.abs(GRID.x) < 50, 1.0, 0.0)
    s = coherent_state(GRID, mp, mp)
    with pytest.raises(MeasurementError, match="no light on detector"):
        measure_noise(s, SlitParams(200, 20), SlitParams(-200, 20))
    res = run_scan(s, 20.0, [-200.0, 0.0], [-200.0, 0.0])
    assert math.isnan(res.noise_db[0, 0]) and res.qnl_flux[0, 0] == 0.0
    assert res.noise_db[1, 1] == pytest.approx(0.0, abs=1e-12)


def test_slit_off_grid_is_domain_error(uniform_state):
    with pytest.raises(DomainError):
        measure_noise(uniform_state, SlitParams(5000, 10), SlitParams(0, 10))
    with pytest.raises(DomainError):
        SlitParams(0, 0).mask(GRID.x)


def test_scan_of_coherent_state_is_flat():
    s = coherent_state(GRID, 3.0 + 1j, 2.0)
    res = run_scan(s, 40.0, np.arange(-200.0, 201.0, 50.0), np.arange(-200.0, 201.0, 25.0))
    assert np.abs(res.noise_db).max() < 1e-12


def test_translation_invariance(uniform_state):
    centers = np.arange(-160.0, 161.0, 16.0)
    res = run_scan(uniform_state, 32.0, centers, centers)
    for k in range(-5, 6):
        diag = np.diagonal(res.noise_db, offset=k)
        assert np.ptp(diag) < 1e-8


def test_swap_symmetry(uniform_state):
    a, b = SlitParams(-40, 48), SlitParams(30, 48)
    assert measure_noise(uniform_state, a, b).v_rel == pytest.approx(measure_noise(uniform_state, b, a).v_rel, rel=1e-12)
    # exchanging the beams and the slits together is an identity
    n = uniform_state.n
    perm = np.r_[2 * n:4 * n, 0:2 * n]
    swapped = FieldState(uniform_state.grid, uniform_state.mean_conj, uniform_state.mean_probe,
                         uniform_state.cov[np.ix_(perm, perm)])
    assert measure_noise(swapped, b, a).v_rel == pytest.approx(measure_noise(uniform_state, a, b).v_rel, rel=1e-12)


def test_single_dip_per_probe_trace(gaussian_state):
    conj = np.arange(-400.0, 401.0, 10.0)
    res = run_scan(gaussian_state, 112.0, [-150.0, 0.0, 150.0], conj)
    for i, xp in enumerate(res.probe_positions):
        x, y = res.trace(i)
        below = y < 0
        # one contiguous run below the QNL, containing the matched position
        runs = np.flatnonzero(np.diff(below.astype(int)))
        assert below.any() and runs.size == 2
        assert below[np.argmin(np.abs(x - xp))]
        assert abs(x[np.argmin(y)] - xp) <= 20.0


def test_excess_noise_larger_at_centre(gaussian_state):
    w = 112.0
    centre = measure_noise(gaussian_state, SlitParams(0, w), SlitParams(240, w)).db
    edge = measure_noise(gaussian_state, SlitParams(-300, w), SlitParams(-60, w)).db
    assert centre > edge > 0


def test_run_scan_thread_independent(gaussian_state):
    args = (gaussian_state, 112.0, [-100.0, 0.0, 100.0], np.arange(-300.0, 301.0, 30.0))
    a, b = run_scan(*args, threads=1), run_scan(*args, threads=4)
    assert np.array_equal(a.noise_db, b.noise_db)


def test_run_scan_requires_monotone_lists(uniform_state):
    with pytest.raises(DomainError):
        run_scan(uniform_state, 10.0, [0.0, -10.0, 5.0], [0.0])
    with pytest.raises(DomainError):
        run_scan(uniform_state, 10.0, [], [0.0])


def test_scan_csv_roundtrip(gaussian_state):
    meta = {"slit_width_um": 112.0, "config": {"a": [1, 2]}}
    res = run_scan(gaussian_state, 112.0, [0.0, 50.0], [-20.0, 0.0, 20.0], metadata=meta, config_hash="abc123")
    res.noise_db[0, 1] = np.nan
    text = res.to_csv()
    assert text.splitlines()[0] == "# config_hash=abc123"
    back = ScanResult.from_csv(text)
    assert back.config_hash == "abc123" and back.metadata == meta
    assert np.array_equal(back.probe_positions, res.probe_positions)
    assert np.array_equal(back.noise_db, res.noise_db, equal_nan=True)
    assert np.array_equal(back.qnl_flux, res.qnl_flux)
    assert back.to_csv() == text


def test_slit_width_sweep_tends_to_qnl(gaussian_state):
    lc = 60.0
    full = measure_noise(gaussian_state, full_slit(gaussian_state.grid), full_slit(gaussian_state.grid)).db
    db = slit_width_sweep(gaussian_state, [4 * lc, 2 * lc, lc, lc / 2, 4.0])
    assert abs(db[0] - full) < 0.5
    assert abs(db[-1]) <= 0.5
    assert all(abs(a) > abs(b) for a, b in zip(db, db[1:]))


def test_slit_width_sweep_validation(gaussian_state):
    with pytest.raises(DomainError):
        slit_width_sweep(gaussian_state, [10.0, 20.0])
