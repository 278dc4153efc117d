import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcfqkd.detection import (DetectorSpec, SourceSpec, apply_dead_time, click_probability,
                              control_detector, dark_probability, invert_dead_time,
                              pulse_level_clicks, pulse_level_counts, quantum_detector,
                              sample_counts, simulate_pulses_photon_level)
from mcfqkd.errors import ParameterError


def test_detector_defaults():
    q, c = quantum_detector(), control_detector()
    assert (q.efficiency, q.dead_time_us, q.dark_rate) == (0.2, 20.0, 500.0)
    assert (c.efficiency, c.dead_time_us) == (0.1, 5.0)


def test_detector_and_source_validation():
    with pytest.raises(ParameterError):
        DetectorSpec(efficiency=1.5)
    with pytest.raises(ParameterError):
        DetectorSpec(dark_rate=-1)
    with pytest.raises(ParameterError):
        SourceSpec(mean_photon_numbers={"signal": -0.1})
    with pytest.raises(ParameterError):
        SourceSpec(mean_photon_numbers={"vacuum": 0.1})
    with pytest.raises(ParameterError):
        SourceSpec().mu("bright")
    assert SourceSpec().mu("signal") == 0.0052


def test_click_probability_oracle():
    det = quantum_detector()
    mu, t, p = 0.0052, 10 ** -0.7, 0.975
    pd = 500 / 600e6
    ps = 1 - math.exp(-mu * t * p * 0.2)
    want = 1 - (1 - ps) * (1 - pd)
    assert abs(click_probability(mu, t, p, det) - want) < 1e-18
    assert click_probability(0.0, t, p, det) == pytest.approx(pd, rel=1e-9)
    assert dark_probability(det, 600e6) == pd


def test_dead_time_examples():
    assert apply_dead_time(0.0, 20e-6) == 0.0
    assert abs(apply_dead_time(1e4, 20e-6) - 1e4 / 1.2) < 1e-9
    r = np.array([0.0, 10.0, 1e3, 1e5])
    assert np.allclose(invert_dead_time(apply_dead_time(r, 20e-6), 20e-6), r, rtol=1e-12)
    with pytest.raises(ParameterError):
        apply_dead_time(-1.0, 20e-6)
    with pytest.raises(ParameterError):
        invert_dead_time(1.1 / 20e-6, 20e-6)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0, 1e8), tau=st.floats(0, 1e-4))
def test_dead_time_monotone_bounded(r, tau):
    obs = apply_dead_time(r, tau)
    assert obs <= r + 1e-9 * r
    if tau > 0:
        assert obs < 1 / tau
        assert apply_dead_time(r * 1.01 + 1, tau) >= obs


def test_sample_counts_mean_and_errors():
    rng = np.random.default_rng(0)
    n = sample_counts(np.full(20_000, 50.0), 0.1, rng)
    assert abs(n.mean() - 5.0) < 3 * math.sqrt(5 / 20_000)
    with pytest.raises(ParameterError):
        sample_counts(1.0, 0.0, rng)
    with pytest.raises(ParameterError):
        sample_counts(-1.0, 1.0, rng)


def test_photon_level_agrees_with_click_probability():
    # bright enough that the comparison is statistically meaningful
    det = DetectorSpec(efficiency=0.2, dead_time_us=0, dark_rate=5e4)
    rng = np.random.default_rng(3)
    n = 2_000_000
    clicks = simulate_pulses_photon_level(0.5, 0.3, 0.8, det, n, rng)
    p = click_probability(0.5, 0.3, 0.8, det)
    assert abs(clicks.mean() - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_pulse_level_clicks_match_dead_time_formula():
    # Bernoulli stream with blanking: expected rate p / (1 + p * dead)
    rng = np.random.default_rng(1)
    p, dead, n = 1e-3, 500, 10_000_000
    got = pulse_level_clicks(p, n, dead, rng)
    want = n * p / (1 + p * dead)
    assert abs(got - want) < 5 * math.sqrt(want)
    assert pulse_level_clicks(0.0, n, dead, rng) == 0


def test_pulse_level_counts_carries_blanking_over_steps():
    rng = np.random.default_rng(2)
    p, dead = 2e-3, 300
    steps = np.full(2000, p)
    got = pulse_level_counts(steps, 5000, dead, rng)
    n = steps.size * 5000
    want = n * p / (1 + p * dead)
    assert abs(got - want) < 5 * math.sqrt(want)
    # a certain click every slot, blanked for `dead` slots, gives one click per dead+1 slots
    assert pulse_level_counts(np.ones(3), 1000, 99, rng) == 30
