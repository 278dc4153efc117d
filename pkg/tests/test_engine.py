import math
from dataclasses import replace

import numpy as np
import pytest

from mcfqkd.channel import DriftProcess
from mcfqkd.detection import DetectorSpec, apply_dead_time
from mcfqkd.engine import (ExperimentConfig, OutcomeModel, TimeSeries, VisibilityModel,
                           compare_detection_levels, contrast_decorrelation_time, correct_counts,
                           crosstalk_background, quantum_path_transmittance, run_long_qber,
                           run_qkd_emulation, run_stability_comparison, run_state_distribution,
                           stream_seed)
from mcfqkd.errors import ParameterError, ProgressStallError
from mcfqkd.keyrate import DecoyProtocolParams
from mcfqkd.states import detection_probabilities, standard_bases


def test_stream_seed_reproducible_and_distinct():
    assert stream_seed(3, "a", 1) == stream_seed(3, "a", 1)
    seeds = {stream_seed(3, "a"), stream_seed(3, "b"), stream_seed(4, "a"), stream_seed(3, "a", 0)}
    assert len(seeds) == 4


def test_config_validation():
    with pytest.raises(ParameterError):
        ExperimentConfig(mode="photon")
    with pytest.raises(ParameterError):
        ExperimentConfig(duration=1.0, bin=2.0)
    with pytest.raises(ParameterError, match="capped"):
        ExperimentConfig(mode="pulse_level", duration=5.0, bin=1.0)
    with pytest.raises(ParameterError):
        VisibilityModel(kind="sine")


def test_visibility_model():
    v = VisibilityModel(initial=0.95, slope_per_hour=-0.01)
    assert np.allclose(v.sample(np.array([0.0, 3600.0, 7200.0])), [0.95, 0.94, 0.93])
    ou = VisibilityModel(kind="ou", ou_sigma=0.005, ou_time=600.0)
    s = ou.sample(np.arange(0, 36000.0, 10.0), np.random.default_rng(0))
    assert np.all((s >= 0) & (s <= 1))


def test_path_transmittance_is_equalized_ceiling():
    assert quantum_path_transmittance(ExperimentConfig()) == pytest.approx(10 ** -0.7)


def test_outcome_model_matches_state_algebra():
    rng = np.random.default_rng(0)
    for scheme in ("this_work", "ding_3basis", "canas_4core"):
        for basis in standard_bases(scheme):
            for sent in basis:
                model = OutcomeModel.build(sent, basis, 1e-5)
                core = sent.support()[-1]
                for e, v in zip(rng.uniform(-4, 4, 5), rng.uniform(0, 1, 5)):
                    want = detection_probabilities(sent.with_phase(core, e), basis, v, 1e-5)
                    assert np.allclose(model.probabilities(e, v), want, atol=1e-12)


def test_outcome_model_vectorized():
    basis = standard_bases()[1]
    model = OutcomeModel.build(basis[1], basis)
    e = np.linspace(-1, 1, 7)
    p = model.probabilities(e, np.full(7, 0.9))
    assert p.shape == (7, 4)
    assert np.allclose(p.sum(axis=1), 1)


def test_crosstalk_background_oracle():
    cfg = ExperimentConfig()
    sent = standard_bases()[0][0]  # cores 1 and 5
    xt = cfg.fiber.crosstalk_db
    leak = sum(0.5 * 10 ** (xt[s - 1, o - 1] / 10) for s in (1, 5) for o in (2, 7))
    assert crosstalk_background(cfg, sent) == pytest.approx(leak / 2)
    assert crosstalk_background(cfg, standard_bases("canas_4core")[0][0]) == 0.0


def test_correct_counts_inverts_detector():
    det = DetectorSpec(efficiency=0.2, dead_time_us=20, dark_rate=500)
    true = np.array([0.0, 1e3, 2e4])
    window = 0.5
    counts = apply_dead_time(true + det.dark_rate, det.dead_time) * window
    assert np.allclose(correct_counts(counts, window, det), true, atol=1e-6)


def short(**kw):
    return ExperimentConfig(**{"duration": 2.0, "bin": 0.5, **kw})


def test_stability_comparison_separates_fibers():
    cfg = ExperimentConfig(duration=20.0, bin=0.002, rng_seed=1)
    mcf, smf = run_stability_comparison(cfg)
    assert mcf.counts.shape == (10_000, 2) and mcf.detectors == ("out_plus", "out_minus")
    tm, ts = contrast_decorrelation_time(mcf), contrast_decorrelation_time(smf)
    assert 0.3 < tm < 3.0
    assert ts <= 0.01
    again, _ = run_stability_comparison(cfg)
    assert np.array_equal(again.counts, mcf.counts)


def test_state_distribution_shape_and_determinism():
    cfg = short(duration=1.0, bin=1.0, rng_seed=3)
    a = run_state_distribution(cfg)
    b = run_state_distribution(cfg)
    assert a.counts.shape == (8, 4)
    assert a.labels[:2] == ["psi1", "psi2"] and a.labels[4] == "phi1"
    assert np.array_equal(a.counts, b.counts)
    assert np.allclose(a.raw.sum(axis=1), 1) and np.allclose(a.corrected.sum(axis=1), 1)
    f = a.fidelities()
    assert np.all(f > 0.9)
    # dead time and darks push the raw fidelity below the corrected one
    assert np.all(a.fidelities(corrected=False) < f)


def test_state_distribution_pulse_level_small_window():
    cfg = short(duration=0.05, bin=0.05, mode="pulse_level", rng_seed=2)
    sd = run_state_distribution(cfg, sent_states=[(0, 0)])
    assert sd.counts.shape == (1, 4)
    assert sd.counts[0, 0] > sd.counts[0, 1]


def test_detection_levels_agree_within_three_sigma():
    for seed in (0, 1):
        out = compare_detection_levels(ExperimentConfig(rng_seed=seed, duration=0.1, bin=0.1))
        exp = out["expected"]
        for key in ("rate_level", "pulse_level"):
            assert np.all(np.abs(out[key] - exp) <= 3 * np.sqrt(exp) + 1)


def test_long_qber_short_run():
    cfg = ExperimentConfig(duration=60.0, bin=1.0, rng_seed=4)
    ts = run_long_qber(cfg)
    assert ts.counts.shape == (60, 4)
    assert ts.detectors == ("D1", "D2", "D3", "D4")
    assert np.all(ts.qber_defined)
    q = np.nanmean(ts.qber_corrected)
    assert 0.015 < q < 0.04
    assert np.nanmean(ts.qber) > q
    cols = ts.columns()
    assert set(cols) >= {"time_s", "counts_D1", "qber", "qber_corrected", "locked_fraction",
                         "lock_losses", "qber_defined"}
    ts2 = run_long_qber(cfg)
    assert np.array_equal(ts.counts, ts2.counts)


def test_long_qber_undefined_bins():
    blind = DetectorSpec(efficiency=0.0, dead_time_us=20, dark_rate=0.0)
    ts = run_long_qber(ExperimentConfig(duration=3.0, bin=1.0, quantum_detector=blind))
    assert not np.any(ts.qber_defined)
    assert np.all(np.isnan(ts.qber))


def test_long_qber_rejects_pulse_level():
    with pytest.raises(ParameterError):
        run_long_qber(ExperimentConfig(mode="pulse_level", duration=0.5, bin=0.5))


def test_pi_step_qber_recovers():
    base = ExperimentConfig(duration=40.0, bin=1.0, rng_seed=6,
                            visibility=VisibilityModel(slope_per_hour=0.0))
    clean = run_long_qber(base)
    hit = run_long_qber(replace(base, faults=((20.0, math.pi),)))
    after = slice(25, 40)
    diff = np.nanmean(hit.qber_corrected[after]) - np.nanmean(clean.qber_corrected[after])
    assert abs(diff) < 0.005


def test_qkd_emulation_small_block():
    p = DecoyProtocolParams(n_Z=1e6)
    cfg = ExperimentConfig(duration=1.0, bin=1.0, rng_seed=5)
    stats = run_qkd_emulation(cfg, p, step_seconds=0.01)
    assert stats.n[0].sum() >= 1e6
    assert 0.02 < stats.qber("Z") < 0.06
    assert 0.02 < stats.qber("X") < 0.06
    again = run_qkd_emulation(cfg, p, step_seconds=0.01)
    assert np.array_equal(stats.n, again.n) and np.array_equal(stats.m, again.m)


def test_qkd_emulation_stalls_without_detections():
    blind = DetectorSpec(efficiency=0.0, dead_time_us=20, dark_rate=0.0)
    cfg = ExperimentConfig(duration=0.2, bin=0.2, quantum_detector=blind)
    with pytest.raises(ProgressStallError):
        run_qkd_emulation(cfg, DecoyProtocolParams(n_Z=1e6))


def test_time_series_columns_without_qber():
    ts = TimeSeries(np.arange(3.0), np.zeros((3, 2), int), ("a", "b"))
    assert list(ts.columns()) == ["time_s", "counts_a", "counts_b"]
    assert not ts.qber_defined.any()


def test_contrast_decorrelation_of_still_phase():
    cfg = ExperimentConfig(duration=2.0, bin=0.01,
                           mcf_drift=DriftProcess(diffusion=0.0), cw_rate=0.0)
    mcf, _ = run_stability_comparison(cfg)
    # only dark-count shot noise is left: uncorrelated from bin to bin
    assert contrast_decorrelation_time(mcf) <= 0.01
