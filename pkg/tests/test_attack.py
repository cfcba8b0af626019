"""Attacker pipeline tests on hand-built streams with known geometry."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cowqkd.attack import (
    AttackConfig,
    CalibrationError,
    EveInference,
    _circular_center,
    _circular_dist,
    _circular_runs,
    _merge_runs,
    _span_covering,
    calibrate,
    fold_and_cluster,
    infer_bits,
    learning_metrics,
    write_clusters_csv,
    write_inference_csv,
)
from cowqkd.distill import ClassicalTranscript, SiftedKey
from cowqkd.source import ConfigError

PERIOD = 32000


def make_scene(n_frames=400, reflect=True, seed=0, swap_positions=False, disclose_every=3):
    # an odd disclosure stride keeps both bit parities in the transcript
    """One receiver click per frame, alternating bits, plus eavesdropper light.

    Returns (transcript, retained_key, eve_times, truth) where truth maps each
    backflash sample to the bit that caused it.
    """
    rng = np.random.default_rng(seed)
    frames = np.arange(n_frames, dtype=np.int64)
    bits = (frames % 2).astype(np.int8)
    pos0, pos1 = (3500, 500) if swap_positions else (500, 3500)
    bob_t = frames * PERIOD + np.where(bits == 0, pos0, pos1)

    delays = rng.integers(200, 800, size=n_frames)
    backflash_t = bob_t + delays
    eve_parts = [backflash_t]
    if reflect:
        jitter = rng.integers(0, 400, size=n_frames)
        eve_parts.append(frames * PERIOD + 20000 + jitter)
    eve_t = np.sort(np.concatenate(eve_parts))

    disc = np.zeros(n_frames, dtype=bool)
    disc[::disclose_every] = True
    transcript = ClassicalTranscript(
        block_id=0,
        block_length=n_frames,
        disclosed_time_ps=bob_t[disc],
        disclosed_bit=bits[disc],
        announced_qber=0.0,
    )
    retained = SiftedKey(
        block_id=0,
        time_ps=bob_t[~disc],
        bit=bits[~disc],
        alice_bit=bits[~disc],
        qber=0.0,
    )
    truth = {"backflash_t": backflash_t, "bits": bits}
    return transcript, retained, eve_t, truth


# --- config ----------------------------------------------------------------

def test_attack_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(fold_bin_width_ps=0)
    with pytest.raises(ConfigError):
        AttackConfig(calibration_floor=0.0)
    with pytest.raises(ConfigError):
        AttackConfig(boundary="nearest")
    with pytest.raises(ConfigError):
        AttackConfig(boundary="cut")
    AttackConfig(boundary="cut", boundary_cut_ps=2500)


# --- calibration -----------------------------------------------------------

class TestCalibrate:
    def test_exact_on_clean_copy(self):
        transcript, _, _, _ = make_scene(200)
        for delta in (0, 37, -4444, 15000, -31993):
            eve = transcript.disclosed_time_ps - delta
            res = calibrate(eve, transcript, PERIOD, 1000, AttackConfig())
            assert res.offset_ps == delta
            assert res.matched_fraction == 1.0

    def test_survives_spurious_clicks(self):
        transcript, _, _, _ = make_scene(200)
        rng = np.random.default_rng(3)
        n = len(transcript)
        span = int(transcript.disclosed_time_ps.max())
        for delta in (123, -9871):
            spurious = rng.integers(0, span, size=n // 5)
            eve = np.concatenate([transcript.disclosed_time_ps - delta, spurious])
            res = calibrate(eve, transcript, PERIOD, 1000, AttackConfig())
            assert abs(res.offset_ps - delta) <= 500

    def test_scan_record_kept(self):
        transcript, _, _, _ = make_scene(50)
        res = calibrate(transcript.disclosed_time_ps, transcript, PERIOD, 1000, AttackConfig())
        shifts = [s for s, _ in res.candidate_scores]
        assert -PERIOD in shifts and PERIOD in shifts
        assert max(score for _, score in res.candidate_scores) == res.score

    def test_empty_inputs_raise(self):
        transcript, _, _, _ = make_scene(10)
        with pytest.raises(CalibrationError):
            calibrate(np.empty(0, dtype=np.int64), transcript, PERIOD, 1000, AttackConfig())
        empty = ClassicalTranscript(0, 0, np.empty(0, dtype=np.int64),
                                    np.empty(0, dtype=np.int8), 0.0)
        with pytest.raises(CalibrationError):
            calibrate(np.array([5]), empty, PERIOD, 1000, AttackConfig())

    def test_floor_failure(self):
        transcript, _, _, _ = make_scene(100)
        eve = transcript.disclosed_time_ps[:2]
        with pytest.raises(CalibrationError):
            calibrate(eve, transcript, PERIOD, 1000, AttackConfig(calibration_floor=0.9))


# --- circular helpers ------------------------------------------------------

class TestCircularHelpers:
    def test_runs_plain_and_wrapping(self):
        assert _circular_runs(np.array([False, True, True, False])) == [(1, 2)]
        assert _circular_runs(np.array([True, False, False, True])) == [(3, 2)]
        assert _circular_runs(np.array([False, False])) == []
        assert _circular_runs(np.array([True, True, True])) == [(0, 3)]

    def test_runs_multiple_islands(self):
        active = np.array([True, False, True, True, False, False, True])
        runs = sorted(_circular_runs(active))
        assert runs == [(2, 2), (6, 2)]  # 6 wraps onto 0

    def test_merge_within_gap(self):
        assert _merge_runs([(0, 2), (4, 2)], 10, 2) == [(0, 6)]
        assert _merge_runs([(0, 2), (5, 2)], 10, 2) == [(0, 2), (5, 2)]

    def test_merge_wraps(self):
        assert _merge_runs([(0, 2), (8, 1)], 10, 1) == [(8, 4)]

    def test_span_covering(self):
        assert _span_covering([(2, 3)], 100) == (2, 3)
        assert _span_covering([(10, 5), (30, 5)], 100) == (10, 25)
        # runs near the wrap point: the short arc crosses zero
        assert _span_covering([(90, 5), (2, 4)], 100) == (90, 16)

    def test_circular_center(self):
        assert _circular_center(np.array([100, 200, 300]), PERIOD) == 200
        wrapped = _circular_center(np.array([31900, 50, 100]), PERIOD)
        assert wrapped in (50, PERIOD - 50) or _circular_dist(wrapped, 50, PERIOD) <= 100
        assert _circular_center(np.empty(0), PERIOD) == 0
        assert _circular_center(np.array([7]), PERIOD) == 7

    def test_circular_dist(self):
        assert _circular_dist(10, 20, 100) == 10
        assert _circular_dist(5, 95, 100) == 10
        assert _circular_dist(0, 50, 100) == 50


# --- folding and clustering ------------------------------------------------

class TestFoldAndCluster:
    def test_windows_cover_truth(self):
        transcript, _, eve_t, truth = make_scene()
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, AttackConfig())
        folded_bf = truth["backflash_t"] % PERIOD
        assert bool(np.all(cmap.in_backflash(folded_bf)))
        assert cmap.reflection_start_ps is not None
        assert cmap.in_reflection(np.array([20200]))[0]
        assert not cmap.in_backflash(np.array([20200]))[0]

    def test_no_reflection_cluster_when_absent(self):
        transcript, _, eve_t, _ = make_scene(reflect=False)
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, AttackConfig())
        assert cmap.reflection_start_ps is None
        assert not cmap.in_reflection(np.array([20200]))[0]

    def test_modes_follow_disclosed_bits(self):
        transcript, _, eve_t, _ = make_scene()
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, AttackConfig())
        # zeros click around 500 and trail into ~700-1300; ones around 3500
        assert _circular_dist(cmap.zero_mode_ps, 1000, PERIOD) < 800
        assert _circular_dist(cmap.one_mode_ps, 4000, PERIOD) < 800

    def test_modes_swap_with_swapped_positions(self):
        transcript, _, eve_t, _ = make_scene(swap_positions=True)
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, AttackConfig())
        assert _circular_dist(cmap.zero_mode_ps, 4000, PERIOD) < 800
        assert _circular_dist(cmap.one_mode_ps, 1000, PERIOD) < 800

    def test_classify_ring_regions(self):
        transcript, _, eve_t, truth = make_scene()
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, AttackConfig())
        folded = truth["backflash_t"] % PERIOD
        got = cmap.classify(folded)
        assert np.array_equal(got, truth["bits"])
        assert cmap.classify(np.array([20100]))[0] == -2
        assert cmap.classify(np.array([15000]))[0] == -1

    @pytest.mark.parametrize("boundary,extra", [("midpoint", {}), ("valley", {}),
                                                ("cut", {"boundary_cut_ps": 2500})])
    def test_boundary_modes_all_separate_the_clusters(self, boundary, extra):
        transcript, retained, eve_t, _ = make_scene()
        cfg = AttackConfig(boundary=boundary, **extra)
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, cfg)
        inf = infer_bits(eve_t, cmap, retained, cfg)
        m = learning_metrics(inf, retained)
        assert m.accuracy_matched == 1.0

    def test_empty_stream_raises(self):
        transcript, _, _, _ = make_scene(10)
        with pytest.raises(CalibrationError):
            fold_and_cluster(np.empty(0, dtype=np.int64), transcript, PERIOD, AttackConfig())

    def test_uncorrelated_only_raises(self):
        transcript, _, _, _ = make_scene(200)
        frames = np.arange(200, dtype=np.int64)
        reflections_only = frames * PERIOD + 20000
        with pytest.raises(CalibrationError):
            fold_and_cluster(reflections_only, transcript, PERIOD, AttackConfig())

    def test_run_summary_reports_all_clusters(self):
        transcript, _, eve_t, _ = make_scene()
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, AttackConfig())
        assert len(cmap.run_summary) >= 2
        corr = sorted(r["correlation"] for r in cmap.run_summary)
        assert corr[0] < 0.02 <= corr[-1]


@given(st.integers(min_value=0, max_value=40))
def test_folding_invariance_under_whole_frame_shifts(k):
    transcript, retained, eve_t, _ = make_scene(150, seed=5)
    cfg = AttackConfig()
    cmap = fold_and_cluster(eve_t, transcript, PERIOD, cfg)
    base = cmap.classify(eve_t % PERIOD)
    shifted = cmap.classify((eve_t + k * PERIOD) % PERIOD)
    assert np.array_equal(base, shifted)


# --- inference and scoring -------------------------------------------------

class TestInference:
    def test_scores_against_retained_key(self):
        transcript, retained, eve_t, truth = make_scene()
        cfg = AttackConfig()
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, cfg)
        inf = infer_bits(eve_t, cmap, retained, cfg)
        # every backflash is kept, every reflection discarded
        assert len(inf) == truth["backflash_t"].size
        assert inf.discarded_reflection > 0
        assert inf.discarded_outside == 0
        # backflashes on disclosed frames have no retained partner, and the
        # nearest other click sits a whole frame away
        assert inf.unmatched_count == len(transcript)
        assert inf.correct_count + inf.incorrect_count == len(inf) - len(transcript)

    def test_unmatched_when_key_has_gaps(self):
        cmap_cfg = AttackConfig(match_window_ps=100)
        transcript, retained, eve_t, truth = make_scene()
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, cmap_cfg)
        inf = infer_bits(eve_t, cmap, retained, cmap_cfg)
        # delays are 200..800 ps, so a 100 ps window matches nothing
        assert inf.unmatched_count == len(inf)
        assert inf.correct_count == 0

    def test_bit_tallies_balanced_for_alternating_truth(self):
        transcript, retained, eve_t, _ = make_scene()
        cfg = AttackConfig()
        cmap = fold_and_cluster(eve_t, transcript, PERIOD, cfg)
        inf = infer_bits(eve_t, cmap, retained, cfg)
        zeros, ones = inf.bit_tallies()
        assert zeros + ones == len(inf)
        assert abs(zeros - ones) <= 2

    def test_metrics_arithmetic(self):
        inf = EveInference(
            eve_time_ps=np.arange(10, dtype=np.int64),
            folded_ps=np.arange(10, dtype=np.int64),
            bit=np.zeros(10, dtype=np.int8),
            matched_bob_ps=np.where(np.arange(10) < 8, np.arange(10), -1),
            correct=np.array([1, 1, 1, 1, 1, 1, 0, 0, -1, -1], dtype=np.int8),
            discarded_reflection=3,
            discarded_outside=4,
        )
        key = SiftedKey(0, np.arange(20, dtype=np.int64), np.zeros(20, dtype=np.int8),
                        np.zeros(20, dtype=np.int8), 0.0)
        m = learning_metrics(inf, key)
        assert m.accuracy_matched == 6 / 8
        assert m.accuracy_all == 6 / 10
        assert m.learning_rate == 6 / 20
        assert m.matched_fraction == 8 / 10

    def test_metrics_empty_inference(self):
        inf = EveInference(*(np.empty(0, dtype=np.int64) for _ in range(3)),
                           np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8), 0, 0)
        key = SiftedKey(0, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8),
                        np.empty(0, dtype=np.int8), 0.0)
        m = learning_metrics(inf, key)
        assert m == type(m)(0.0, 0.0, 0.0, 0.0)


# --- artifacts -------------------------------------------------------------

def test_inference_csv(tmp_path):
    transcript, retained, eve_t, _ = make_scene(50)
    cfg = AttackConfig()
    cmap = fold_and_cluster(eve_t, transcript, PERIOD, cfg)
    inf = infer_bits(eve_t, cmap, retained, cfg)
    path = tmp_path / "inf.csv"
    write_inference_csv(inf, path, ["seed=50"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=50"
    assert lines[1] == "eve_ts_ps,folded_ps,inferred_bit,matched_bob_ts_ps,correct"
    assert len(lines) == 2 + len(inf)

def test_clusters_csv(tmp_path):
    transcript, _, eve_t, _ = make_scene(50)
    cmap = fold_and_cluster(eve_t, transcript, PERIOD, AttackConfig())
    path = tmp_path / "cl.csv"
    write_clusters_csv(cmap, path)
    text = path.read_text()
    assert "backflash_window_start_ps=" in text
    assert "bin_start_ps,count,normalized" in text
    n_bins = -(-PERIOD // 100)
    assert len([l for l in text.splitlines() if not l.startswith("#")]) == 1 + n_bins
