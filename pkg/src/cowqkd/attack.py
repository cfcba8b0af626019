"""Eavesdropper pipeline: offset calibration, folding, and bit inference.

The attacker timestamps whatever light leaves the receiver, aligns her clock
to the disclosed samples from the public channel, folds her stream modulo
the frame period, separates the click clusters, and assigns a logical bit to
every count inside the backflash cluster.

Only public information (her own timestamps plus the disclosed transcript)
feeds the inference.  Retained-key data appears solely in the scoring step,
which is evaluation machinery, not part of the attack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .distill import ClassicalTranscript, SiftedKey
from .source import ConfigError


class CalibrationError(RuntimeError):
    """Offset recovery or cluster identification failed."""


@dataclass(frozen=True)
class AttackConfig:
    fold_bin_width_ps: int = 100
    calibration_window_ps: int = 1000
    calibration_floor: float = 0.01
    corr_window_ps: int = 6000
    corr_floor: float = 0.02
    cluster_threshold: float = 0.05
    cluster_min_gap_ps: int = 1000
    smooth_bins: int = 5
    mode_min_separation_ps: int = 1500
    boundary: str = "midpoint"
    boundary_cut_ps: int | None = None
    match_window_ps: int = 6000
    clock_offset_ps: int = 0

    def __post_init__(self) -> None:
        if self.fold_bin_width_ps <= 0 or self.calibration_window_ps <= 0:
            raise ConfigError("fold bin width and calibration window must be positive")
        if not 0.0 < self.calibration_floor <= 1.0:
            raise ConfigError("calibration floor must lie in (0, 1]")
        if self.boundary not in ("midpoint", "valley", "cut"):
            raise ConfigError(f"unknown boundary mode {self.boundary!r}")
        if self.boundary == "cut" and self.boundary_cut_ps is None:
            raise ConfigError("boundary mode 'cut' needs boundary_cut_ps")


@dataclass
class CalibrationResult:
    """Recovered clock offset b, applied as calibrated = raw + b.

    ``offset_ps`` is the median raw-to-disclosed difference over the pairs
    matched at the best-scoring scanned shift; it therefore lies within one
    coincidence window of the score argmax while staying exact when the two
    streams are copies of each other.
    """

    offset_ps: int
    score: int
    matched_fraction: float
    candidate_scores: list[tuple[int, int]]
    ties: list[int] = field(default_factory=list)


def _match_count(eve_sorted: np.ndarray, disclosed: np.ndarray, shift: int, window: int) -> int:
    lo = np.searchsorted(eve_sorted, disclosed - shift - window, side="left")
    hi = np.searchsorted(eve_sorted, disclosed - shift + window, side="right")
    return int(np.sum(hi > lo))


def calibrate(
    eve_time_ps: np.ndarray,
    transcript: ClassicalTranscript,
    frame_period_ps: int,
    bin_width_ps: int,
    cfg: AttackConfig,
) -> CalibrationResult:
    """Scan clock shifts against the disclosed samples and refine the best.

    Candidates cover one frame period each way: bin-width steps first, then
    10 ps steps around the coarse peak.  The returned offset is the median
    difference over the matched pairs, which pins the plateau that a pure
    argmax leaves ambiguous under spurious clicks.
    """
    eve = np.sort(np.asarray(eve_time_ps, dtype=np.int64))
    disclosed = np.sort(np.asarray(transcript.disclosed_time_ps, dtype=np.int64))
    if eve.size == 0 or disclosed.size == 0:
        raise CalibrationError("empty eavesdropper stream or transcript")

    period = int(frame_period_ps)
    coarse_window = max(cfg.calibration_window_ps, bin_width_ps)
    scanned: list[tuple[int, int]] = []

    def best(candidates: np.ndarray, window: int) -> tuple[int, int, list[int]]:
        scores = np.array([_match_count(eve, disclosed, int(s), window) for s in candidates])
        scanned.extend(zip(candidates.tolist(), scores.tolist()))
        top = int(scores.max())
        tied = sorted((int(s) for s in candidates[scores == top]), key=lambda s: (abs(s), s))
        return tied[0], top, tied[1:]

    coarse = np.arange(-period, period + 1, bin_width_ps, dtype=np.int64)
    c_best, _, _ = best(coarse, coarse_window)
    fine = np.arange(c_best - bin_width_ps, c_best + bin_width_ps + 1, 10, dtype=np.int64)
    s0, score, ties = best(fine, cfg.calibration_window_ps)

    frac = score / disclosed.size
    if frac < cfg.calibration_floor:
        raise CalibrationError(
            f"best shift matches {frac:.4f} of disclosed samples (floor {cfg.calibration_floor})"
        )

    # Median refinement over the pairs matched at the argmax shift.
    target = disclosed - s0
    right = np.searchsorted(eve, target, side="left")
    left = np.clip(right - 1, 0, eve.size - 1)
    right = np.clip(right, 0, eve.size - 1)
    d_left = np.abs(target - eve[left])
    d_right = np.abs(eve[right] - target)
    nearest = np.where(d_left <= d_right, eve[left], eve[right])
    dist = np.minimum(d_left, d_right)
    matched = dist <= cfg.calibration_window_ps
    if not np.any(matched):
        raise CalibrationError("no matched pairs at the best shift")
    offset = int(np.median(disclosed[matched] - nearest[matched]))

    return CalibrationResult(
        offset_ps=offset,
        score=score,
        matched_fraction=frac,
        candidate_scores=scanned,
        ties=ties,
    )


# ---------------------------------------------------------------------------
# Folding and clustering.

@dataclass
class ClusterMap:
    """Folded histogram with the windows and boundaries the attacker uses.

    Windows are half-open circular arcs (start, length) on [0, frame
    period).  ``zero_boundary_ps`` and ``one_boundary_ps`` are the arc
    positions where the zero and one decision regions begin inside the
    backflash window.
    """

    frame_period_ps: int
    fold_bin_width_ps: int
    counts: np.ndarray
    backflash_start_ps: int
    backflash_len_ps: int
    reflection_start_ps: int | None
    reflection_len_ps: int | None
    zero_boundary_ps: int
    one_boundary_ps: int
    zero_mode_ps: int
    one_mode_ps: int
    run_summary: list[dict] = field(default_factory=list)

    @property
    def backflash_end_ps(self) -> int:
        return (self.backflash_start_ps + self.backflash_len_ps) % self.frame_period_ps

    def arc_position(self, folded_ps: np.ndarray) -> np.ndarray:
        return (folded_ps - self.backflash_start_ps) % self.frame_period_ps

    def in_backflash(self, folded_ps: np.ndarray) -> np.ndarray:
        return self.arc_position(folded_ps) < self.backflash_len_ps

    def in_reflection(self, folded_ps: np.ndarray) -> np.ndarray:
        if self.reflection_start_ps is None:
            return np.zeros(np.asarray(folded_ps).shape, dtype=bool)
        return (folded_ps - self.reflection_start_ps) % self.frame_period_ps < self.reflection_len_ps

    def classify(self, folded_ps: np.ndarray) -> np.ndarray:
        """Bit per folded timestamp: 0/1, -1 outside, -2 reflection."""
        folded_ps = np.asarray(folded_ps, dtype=np.int64)
        out = np.full(folded_ps.shape, -1, dtype=np.int8)
        refl = self.in_reflection(folded_ps)
        out[refl] = -2
        inside = self.in_backflash(folded_ps) & ~refl
        arc = self.arc_position(folded_ps)
        zero_from = (self.zero_boundary_ps - self.backflash_start_ps) % self.frame_period_ps
        one_from = (self.one_boundary_ps - self.backflash_start_ps) % self.frame_period_ps
        if zero_from <= one_from:
            is_zero = (arc >= zero_from) & (arc < one_from)
        else:
            is_zero = (arc >= zero_from) | (arc < one_from)
        out[inside & is_zero] = 0
        out[inside & ~is_zero] = 1
        return out


def _circular_smooth(counts: np.ndarray, half: int) -> np.ndarray:
    if half <= 0:
        return counts.astype(float)
    k = 2 * half + 1
    padded = np.concatenate([counts[-half:], counts, counts[:half]])
    return np.convolve(padded, np.ones(k) / k, mode="valid")


def _circular_runs(active: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) runs of True, treating the array as a ring."""
    n = active.size
    if not np.any(active):
        return []
    if np.all(active):
        return [(0, n)]
    start = int(np.argmin(active))  # rotate so position 0 is inactive
    rolled = np.roll(active, -start)
    idx = np.flatnonzero(rolled)
    splits = np.flatnonzero(np.diff(idx) > 1) + 1
    return [(int((g[0] + start) % n), int(g.size)) for g in np.split(idx, splits)]


def _merge_runs(runs: list[tuple[int, int]], n: int, max_gap: int) -> list[tuple[int, int]]:
    if len(runs) <= 1:
        return runs
    runs = sorted(runs)
    merged = [list(runs[0])]
    for s, ln in runs[1:]:
        ps, pl = merged[-1]
        if s - (ps + pl) <= max_gap:
            merged[-1][1] = s + ln - ps
        else:
            merged.append([s, ln])
    # wrap-around merge between last and first
    if len(merged) > 1:
        fs, fl = merged[0]
        ls, ll = merged[-1]
        if (fs + n) - (ls + ll) <= max_gap:
            merged[0] = [ls, min((fs + n - ls) + fl, n)]
            merged.pop()
    return [(int(s) % n, int(ln)) for s, ln in merged]


def _span_covering(runs: list[tuple[int, int]], n: int) -> tuple[int, int]:
    """Shortest circular arc containing every run."""
    if len(runs) == 1:
        return runs[0]
    runs = sorted(runs)
    # largest gap between consecutive runs (circularly) is left outside
    gaps = []
    for i, (s, ln) in enumerate(runs):
        ns, _ = runs[(i + 1) % len(runs)]
        if i + 1 == len(runs):
            ns += n
        gaps.append((ns - (s + ln), i))
    gap, idx = max(gaps)
    start = runs[(idx + 1) % len(runs)][0]
    return start, n - gap


def fold_and_cluster(
    calibrated_ps: np.ndarray,
    transcript: ClassicalTranscript,
    frame_period_ps: int,
    cfg: AttackConfig,
) -> ClusterMap:
    """Fold the calibrated stream and locate the attack windows.

    Clusters whose members sit near disclosed timestamps are backflash (they
    follow the receiver's avalanches); remaining clusters are facet
    reflections, which track every transmitted pulse instead and so show no
    such correlation.  With the default geometry the reflections land inside
    the backflash arc and simply merge into it, leaving the reflection
    window empty.
    """
    period = int(frame_period_ps)
    t = np.asarray(calibrated_ps, dtype=np.int64)
    if t.size == 0:
        raise CalibrationError("nothing to fold")
    folded = t % period
    nbins = -(-period // cfg.fold_bin_width_ps)
    counts = np.bincount(folded // cfg.fold_bin_width_ps, minlength=nbins).astype(np.int64)

    sm = _circular_smooth(counts, cfg.smooth_bins // 2)
    peak = sm.max()
    if peak <= 0:
        raise CalibrationError("empty folded histogram")
    active = sm >= max(cfg.cluster_threshold * peak, 1e-12)
    gap_bins = max(1, cfg.cluster_min_gap_ps // cfg.fold_bin_width_ps)
    runs = _merge_runs(_circular_runs(active), nbins, gap_bins)
    if not runs:
        raise CalibrationError("no clusters found")

    disclosed = np.sort(transcript.disclosed_time_ps)
    bin_idx = folded // cfg.fold_bin_width_ps

    def correlation(run: tuple[int, int]) -> float:
        # Fraction of disclosed receiver clicks with a cluster member nearby
        # in unfolded time.  Backflash trails the receiver's avalanches, so
        # its clusters score near the per-click leak probability; reflection
        # clusters track transmitted pulses and score near accidental level.
        s, ln = run
        mt = np.sort(t[(bin_idx - s) % nbins < ln])
        if mt.size == 0 or disclosed.size == 0:
            return 0.0
        lo = np.searchsorted(mt, disclosed - cfg.corr_window_ps, side="left")
        hi = np.searchsorted(mt, disclosed + cfg.corr_window_ps, side="right")
        return float(np.mean(hi > lo))

    summary = []
    corr_runs, other_runs = [], []
    for run in runs:
        c = correlation(run)
        mass = int(_run_mass(counts, run, nbins))
        summary.append({
            "start_ps": run[0] * cfg.fold_bin_width_ps,
            "len_ps": run[1] * cfg.fold_bin_width_ps,
            "mass": mass,
            "correlation": c,
        })
        (corr_runs if c >= cfg.corr_floor else other_runs).append((run, mass))

    if not corr_runs:
        raise CalibrationError("no cluster correlates with the disclosed samples")

    bf_start_bin, bf_len_bin = _span_covering([r for r, _ in corr_runs], nbins)
    bf_start = bf_start_bin * cfg.fold_bin_width_ps
    bf_len = min(bf_len_bin * cfg.fold_bin_width_ps, period)

    refl_start = refl_len = None
    outside = [
        (run, mass) for run, mass in other_runs
        if (run[0] - bf_start_bin) % nbins >= bf_len_bin
    ]
    if outside:
        run, _ = max(outside, key=lambda rm: rm[1])
        refl_start = run[0] * cfg.fold_bin_width_ps
        refl_len = run[1] * cfg.fold_bin_width_ps

    zero_mode, one_mode = _find_modes(sm, bf_start_bin, bf_len_bin, nbins, cfg)
    zero_mode_ps = zero_mode * cfg.fold_bin_width_ps
    one_mode_ps = one_mode * cfg.fold_bin_width_ps

    # Which mode carries which bit comes from the disclosed samples: the
    # attacker knows where the receiver's zero and one clicks fold to.
    zero_ref = _circular_center(disclosed[transcript.disclosed_bit == 0] % period, period)
    one_ref = _circular_center(disclosed[transcript.disclosed_bit == 1] % period, period)
    m_first_ps, m_second_ps = zero_mode_ps, one_mode_ps
    if _circular_dist(m_first_ps, zero_ref, period) + _circular_dist(m_second_ps, one_ref, period) > \
       _circular_dist(m_first_ps, one_ref, period) + _circular_dist(m_second_ps, zero_ref, period):
        zero_mode_ps, one_mode_ps = one_mode_ps, zero_mode_ps

    if zero_mode_ps == one_mode_ps and cfg.boundary != "cut":
        # Single mode: the whole window carries whichever bit the disclosed
        # references place nearer, instead of defaulting to zero.
        if _circular_dist(zero_mode_ps, one_ref, period) < _circular_dist(zero_mode_ps, zero_ref, period):
            zero_boundary = one_boundary = bf_start
        else:
            zero_boundary, one_boundary = bf_start, (bf_start + bf_len) % period
    else:
        cut_ps = _decision_cut(sm, zero_mode_ps, one_mode_ps, bf_start, bf_len, period, cfg)

        # Region starts: the arc runs [window start .. cut .. window end); the
        # mode nearer the window start owns the first region.
        first_is_zero = _arc(zero_mode_ps, bf_start, period) <= _arc(one_mode_ps, bf_start, period)
        if first_is_zero:
            zero_boundary, one_boundary = bf_start, cut_ps
        else:
            zero_boundary, one_boundary = cut_ps, bf_start

    return ClusterMap(
        frame_period_ps=period,
        fold_bin_width_ps=cfg.fold_bin_width_ps,
        counts=counts,
        backflash_start_ps=int(bf_start),
        backflash_len_ps=int(bf_len),
        reflection_start_ps=refl_start,
        reflection_len_ps=refl_len,
        zero_boundary_ps=int(zero_boundary % period),
        one_boundary_ps=int(one_boundary % period),
        zero_mode_ps=int(zero_mode_ps),
        one_mode_ps=int(one_mode_ps),
        run_summary=summary,
    )


def _run_mass(counts: np.ndarray, run: tuple[int, int], nbins: int) -> int:
    s, ln = run
    idx = (np.arange(s, s + ln)) % nbins
    return int(counts[idx].sum())


def _arc(pos: int, start: int, period: int) -> int:
    return (pos - start) % period


def _circular_dist(a: int, b: int, period: int) -> int:
    d = abs((a - b) % period)
    return min(d, period - d)


def _circular_center(values: np.ndarray, period: int) -> int:
    """Median position of folded values, robust to wrap-around."""
    if values.size == 0:
        return 0
    # rotate so the largest empty arc straddles the cut point
    v = np.sort(values % period)
    if v.size == 1:
        return int(v[0])
    gaps = np.diff(np.append(v, v[0] + period))
    cut = int(np.argmax(gaps))
    rolled = np.where(np.arange(v.size) <= cut, v + period, v)
    return int(np.median(rolled)) % period


def _find_modes(sm: np.ndarray, start_bin: int, len_bin: int, nbins: int, cfg: AttackConfig) -> tuple[int, int]:
    idx = (start_bin + np.arange(len_bin)) % nbins
    vals = sm[idx]
    first = int(np.argmax(vals))
    sep = max(1, cfg.mode_min_separation_ps // cfg.fold_bin_width_ps)
    masked = vals.copy()
    lo = max(0, first - sep)
    masked[lo: first + sep + 1] = -1.0
    if np.all(masked < 0) or masked.max() <= 0:
        m = int(idx[first])
        return m, m
    second = int(np.argmax(masked))
    a, b = sorted((first, second))
    return int(idx[a]), int(idx[b])


def _decision_cut(sm, zero_mode_ps, one_mode_ps, bf_start, bf_len, period, cfg) -> int:
    if cfg.boundary == "cut":
        return int(cfg.boundary_cut_ps) % period
    a0, a1 = sorted((_arc(zero_mode_ps, bf_start, period), _arc(one_mode_ps, bf_start, period)))
    if a0 == a1:
        return (bf_start + bf_len) % period  # single mode: one region only
    if cfg.boundary == "midpoint":
        return (bf_start + (a0 + a1) // 2) % period
    # valley: minimum of the smoothed histogram strictly between the modes
    b0 = a0 // cfg.fold_bin_width_ps
    b1 = a1 // cfg.fold_bin_width_ps
    if b1 - b0 < 2:
        return (bf_start + (a0 + a1) // 2) % period
    nbins = sm.size
    idx = (bf_start // cfg.fold_bin_width_ps + np.arange(b0 + 1, b1)) % nbins
    vals = sm[idx]
    argmins = np.flatnonzero(vals == vals.min())
    pick = int(argmins[len(argmins) // 2])
    return (bf_start + (b0 + 1 + pick) * cfg.fold_bin_width_ps) % period


# ---------------------------------------------------------------------------
# Inference and scoring.

@dataclass
class EveInference:
    """Per-detection inferences plus evaluation tallies.

    ``matched_bob_ps`` and ``correct`` come from comparing against the
    retained key and exist only to score the attack; -1 marks entries with
    no receiver detection inside the match window.
    """

    eve_time_ps: np.ndarray
    folded_ps: np.ndarray
    bit: np.ndarray
    matched_bob_ps: np.ndarray
    correct: np.ndarray
    discarded_reflection: int
    discarded_outside: int

    def __len__(self) -> int:
        return self.eve_time_ps.size

    @property
    def correct_count(self) -> int:
        return int(np.sum(self.correct == 1))

    @property
    def incorrect_count(self) -> int:
        return int(np.sum(self.correct == 0))

    @property
    def unmatched_count(self) -> int:
        return int(np.sum(self.correct == -1))

    def bit_tallies(self) -> tuple[int, int]:
        return int(np.sum(self.bit == 0)), int(np.sum(self.bit == 1))


def infer_bits(
    calibrated_ps: np.ndarray,
    clusters: ClusterMap,
    retained: SiftedKey,
    cfg: AttackConfig,
) -> EveInference:
    """Assign a bit to every count in the backflash window and score it."""
    t = np.asarray(calibrated_ps, dtype=np.int64)
    folded = t % clusters.frame_period_ps
    cls = clusters.classify(folded)

    keep = cls >= 0
    discarded_reflection = int(np.sum(cls == -2))
    discarded_outside = int(np.sum(cls == -1))
    t, folded, bits = t[keep], folded[keep], cls[keep]

    bob_t = np.asarray(retained.time_ps, dtype=np.int64)
    order = np.argsort(bob_t)
    bob_sorted = bob_t[order]
    bob_bits_sorted = np.asarray(retained.bit)[order]

    matched = np.full(t.size, -1, dtype=np.int64)
    correct = np.full(t.size, -1, dtype=np.int8)
    if bob_sorted.size and t.size:
        pos = np.searchsorted(bob_sorted, t)
        left = np.clip(pos - 1, 0, bob_sorted.size - 1)
        right = np.clip(pos, 0, bob_sorted.size - 1)
        d_left = np.abs(t - bob_sorted[left])
        d_right = np.abs(bob_sorted[right] - t)
        use_left = d_left <= d_right
        nearest = np.where(use_left, left, right)
        dist = np.where(use_left, d_left, d_right)
        hit = dist <= cfg.match_window_ps
        matched[hit] = bob_sorted[nearest[hit]]
        correct[hit] = (bits[hit] == bob_bits_sorted[nearest[hit]]).astype(np.int8)

    return EveInference(
        eve_time_ps=t,
        folded_ps=folded,
        bit=bits,
        matched_bob_ps=matched,
        correct=correct,
        discarded_reflection=discarded_reflection,
        discarded_outside=discarded_outside,
    )


@dataclass(frozen=True)
class LearningMetrics:
    """Attack quality figures; both accuracy denominators are reported."""

    accuracy_matched: float
    accuracy_all: float
    learning_rate: float
    matched_fraction: float


def learning_metrics(inference: EveInference, retained: SiftedKey) -> LearningMetrics:
    """Per-detection accuracy and the fraction of the key the attacker got."""
    n = len(inference)
    scored = inference.correct_count + inference.incorrect_count
    acc_m = inference.correct_count / scored if scored else 0.0
    acc_a = inference.correct_count / n if n else 0.0
    lr = inference.correct_count / len(retained) if len(retained) else 0.0
    return LearningMetrics(
        accuracy_matched=acc_m,
        accuracy_all=acc_a,
        learning_rate=lr,
        matched_fraction=scored / n if n else 0.0,
    )


# ---------------------------------------------------------------------------
# Artifact writers.

def write_inference_csv(inference: EveInference, path, header_lines: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["eve_ts_ps", "folded_ps", "inferred_bit", "matched_bob_ts_ps", "correct"])
        for i in range(len(inference)):
            c = int(inference.correct[i])
            w.writerow([
                int(inference.eve_time_ps[i]),
                int(inference.folded_ps[i]),
                int(inference.bit[i]),
                int(inference.matched_bob_ps[i]),
                "unknown" if c < 0 else c,
            ])


def write_clusters_csv(clusters: ClusterMap, path, header_lines: list[str] | None = None) -> None:
    meta = [
        f"backflash_window_start_ps={clusters.backflash_start_ps} len_ps={clusters.backflash_len_ps}",
        f"reflection_window_start_ps={clusters.reflection_start_ps} len_ps={clusters.reflection_len_ps}",
        f"zero_boundary_ps={clusters.zero_boundary_ps} one_boundary_ps={clusters.one_boundary_ps}",
        f"zero_mode_ps={clusters.zero_mode_ps} one_mode_ps={clusters.one_mode_ps}",
    ]
    with open(path, "w", newline="") as fh:
        for line in (header_lines or []) + meta:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["bin_start_ps", "count", "normalized"])
        peak = max(1, int(clusters.counts.max()))
        for i, c in enumerate(clusters.counts.tolist()):
            w.writerow([i * clusters.fold_bin_width_ps, c, f"{c / peak:.10g}"])
