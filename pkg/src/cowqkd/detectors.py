"""Receiver SPAD, eavesdropper SNSPD, and start-stop timing histograms.

The SPAD is gated once per frame.  Each avalanche (photon- or dark-triggered)
may emit a backflash photon toward the line after a bounded delay, and every
incident pulse is partially reflected at the fiber facet regardless of
whether it produced a click.  Both leak paths are what the eavesdropper
collects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .source import ChannelConfig, ConfigError, FrameBatch, SourceConfig, channel_transmittance
from .timebase import (
    PS_PER_S,
    DelayDistribution,
    DeviceRngs,
    RngStream,
    poisson_event_times,
    sample_delay,
)

BOB = "bob"
EVE = "eve"


class Cause(IntEnum):
    PHOTON = 0
    DARK = 1
    BACKFLASH = 2
    REFLECTION = 3


CAUSE_NAMES = {c: c.name.lower() for c in Cause}

# Excess-bias operating points: label -> (detection efficiency, dark counts/s).
SPAD_BIAS_TABLE = {
    "2v": (0.07, 100.0),
    "5v": (0.20, 200.0),
    "7v": (0.25, 350.0),
}


def _default_delay() -> DelayDistribution:
    return DelayDistribution.truncated_exponential(scale_ps=600.0, support_max_ps=5000)


@dataclass(frozen=True)
class SpadConfig:
    """Gated receiver detector."""

    detection_efficiency: float = 0.20
    dark_count_rate_cps: float = 200.0
    gate_width_ps: int = 4000
    gate_period_ps: int = 32000
    gate_phase_ps: int = 0
    hold_off_s: float = 10e-6
    excess_bias_label: str = "5v"
    backflash_probability: float = 0.12
    backflash_delay: DelayDistribution = field(default_factory=_default_delay)
    facet_reflectance: float = 1e-2

    def __post_init__(self) -> None:
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ConfigError("detection efficiency must lie in [0, 1]")
        if self.dark_count_rate_cps < 0:
            raise ConfigError("dark count rate must be >= 0")
        if self.gate_width_ps <= 0 or self.gate_period_ps <= 0:
            raise ConfigError("gate width and period must be positive")
        if self.gate_width_ps > self.gate_period_ps:
            raise ConfigError("gate width cannot exceed the gate period")
        if not 0 <= self.gate_phase_ps < self.gate_period_ps:
            raise ConfigError("gate phase must lie in [0, gate period)")
        if self.hold_off_s < 0:
            raise ConfigError("hold-off must be >= 0")
        if not 0.0 <= self.backflash_probability <= 1.0:
            raise ConfigError("backflash probability must lie in [0, 1]")
        if not 0.0 <= self.facet_reflectance <= 1.0:
            raise ConfigError("facet reflectance must lie in [0, 1]")

    @property
    def hold_off_ps(self) -> int:
        return int(round(self.hold_off_s * PS_PER_S))

    @property
    def dark_probability_per_gate(self) -> float:
        """Dark-count probability while one gate is open."""
        return self.dark_count_rate_cps * self.gate_width_ps / PS_PER_S


def spad_preset(label: str, **overrides) -> SpadConfig:
    """SpadConfig for one of the tabulated excess-bias points (2v/5v/7v)."""
    key = label.lower()
    if key not in SPAD_BIAS_TABLE:
        raise ConfigError(f"unknown bias preset {label!r}; expected one of {sorted(SPAD_BIAS_TABLE)}")
    eff, dcr = SPAD_BIAS_TABLE[key]
    params = dict(
        detection_efficiency=eff,
        dark_count_rate_cps=dcr,
        excess_bias_label=key,
    )
    params.update(overrides)
    return SpadConfig(**params)


@dataclass(frozen=True)
class SnspdConfig:
    """Eavesdropper's free-running detector (no dead time modeled)."""

    detection_efficiency: float = 0.74
    dark_count_rate_cps: float = 16.4

    def __post_init__(self) -> None:
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ConfigError("detection efficiency must lie in [0, 1]")
        if self.dark_count_rate_cps < 0:
            raise ConfigError("dark count rate must be >= 0")


@dataclass
class DetectionLog:
    """Columnar click record for one detector.

    ``source_ps`` is ground truth provenance (originating avalanche or pulse
    time, -1 for dark counts); it is kept out of exported transcripts and is
    only read by tests and diagnostics.
    """

    detector: str
    time_ps: np.ndarray
    cause: np.ndarray
    source_ps: np.ndarray

    def __len__(self) -> int:
        return self.time_ps.size

    @classmethod
    def empty(cls, detector: str) -> "DetectionLog":
        z = np.empty(0, dtype=np.int64)
        return cls(detector, z, np.empty(0, dtype=np.int8), z.copy())

    @classmethod
    def merge(cls, parts: list["DetectionLog"]) -> "DetectionLog":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(BOB)
        det = parts[0].detector
        t = np.concatenate([p.time_ps for p in parts])
        c = np.concatenate([p.cause for p in parts])
        s = np.concatenate([p.source_ps for p in parts])
        order = np.lexsort((c, t))
        return cls(det, t[order], c[order], s[order])

    def counts_by_cause(self) -> dict[str, int]:
        return {CAUSE_NAMES[c]: int(np.sum(self.cause == c)) for c in Cause}


def write_detections_csv(logs: list[DetectionLog], path, header_lines: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["detector", "timestamp_ps", "cause"])
        for log in logs:
            for t, c in zip(log.time_ps.tolist(), log.cause.tolist()):
                w.writerow([log.detector, t, CAUSE_NAMES[Cause(c)]])


@dataclass
class BackflashEvents:
    """Avalanche times and the emission times they produced."""

    avalanche_ps: np.ndarray
    emission_ps: np.ndarray

    def __len__(self) -> int:
        return self.avalanche_ps.size

    @classmethod
    def empty(cls) -> "BackflashEvents":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z.copy())


@dataclass
class EveArrivals:
    """Light leaving the receiver toward the line."""

    backflash: BackflashEvents
    reflection_ps: np.ndarray
    reflected_mean_photon: float


@dataclass
class SpadResult:
    clicks: DetectionLog
    backflash: BackflashEvents
    reflection_ps: np.ndarray
    reflected_mean_photon: float
    dead_until_ps: int
    n_gates: int

    def eve_arrivals(self) -> EveArrivals:
        return EveArrivals(self.backflash, self.reflection_ps, self.reflected_mean_photon)


def _dead_time_filter(times: np.ndarray, hold_off_ps: int, dead_until_ps: int) -> tuple[np.ndarray, int]:
    """Non-paralyzable dead time: suppressed candidates do not extend it."""
    keep = np.zeros(times.size, dtype=bool)
    dead = int(dead_until_ps)
    if hold_off_ps <= 0:
        return ~keep, dead
    tl = times.tolist()
    for i, t in enumerate(tl):
        if t >= dead:
            keep[i] = True
            dead = t + hold_off_ps
    return keep, dead


def spad_detect(
    frames: FrameBatch,
    source: SourceConfig,
    spad: SpadConfig,
    channel: ChannelConfig,
    rngs: DeviceRngs,
    dead_until_ps: int = 0,
    mean_photon_override: float | None = None,
) -> SpadResult:
    """Detect one batch of frames.

    ``dead_until_ps`` carries hold-off state across consecutive batches.
    ``mean_photon_override`` (e.g. 0 for a dark-count-only exposure) replaces
    the source mean photon number without touching the frame layout.
    """
    g = frames.geometry
    if spad.gate_period_ps != g.frame_period_ps:
        raise ConfigError("gate period must match the frame period")

    mu = source.mean_photon_number if mean_photon_override is None else float(mean_photon_override)
    if mu < 0:
        raise ConfigError("mean photon number must be >= 0")
    t_ch = channel_transmittance(channel)

    pulses = frames.pulses()
    n_pulses = pulses["time_ps"].size
    arrival = pulses["time_ps"] + rngs.arrival.gen.integers(
        0, source.occupied_width_ps, size=n_pulses, dtype=np.int64
    )

    p_click = 1.0 - np.exp(-mu * t_ch * spad.detection_efficiency)
    clicked = rngs.spad.gen.random(n_pulses) < p_click
    in_gate = ((arrival - spad.gate_phase_ps) % spad.gate_period_ps) < spad.gate_width_ps
    cand_mask = clicked & in_gate
    photon_t = arrival[cand_mask]
    photon_src = pulses["time_ps"][cand_mask]

    # Dark candidates, thinned directly onto open gates.
    n_gates = len(frames)
    lam = spad.dark_count_rate_cps * n_gates * (spad.gate_width_ps / PS_PER_S)
    n_dark = int(rngs.spad_dark.gen.poisson(lam)) if lam > 0 else 0
    if n_dark:
        gate = rngs.spad_dark.gen.integers(0, n_gates, size=n_dark, dtype=np.int64)
        off = rngs.spad_dark.gen.integers(0, spad.gate_width_ps, size=n_dark, dtype=np.int64)
        dark_t = (frames.start_frame + gate) * spad.gate_period_ps + spad.gate_phase_ps + off
    else:
        dark_t = np.empty(0, dtype=np.int64)

    t = np.concatenate([photon_t, dark_t])
    cause = np.concatenate([
        np.full(photon_t.size, Cause.PHOTON, dtype=np.int8),
        np.full(dark_t.size, Cause.DARK, dtype=np.int8),
    ])
    src = np.concatenate([photon_src, np.full(dark_t.size, -1, dtype=np.int64)])
    order = np.lexsort((cause, t))
    t, cause, src = t[order], cause[order], src[order]

    keep, dead_after = _dead_time_filter(t, spad.hold_off_ps, dead_until_ps)
    clicks = DetectionLog(BOB, t[keep], cause[keep], src[keep])

    # Each accepted avalanche may emit one backflash photon; the delay model
    # is quenched at the gate edge, which reshapes timing but not probability.
    n_clicks = len(clicks)
    emits = rngs.backflash.gen.random(n_clicks) < spad.backflash_probability
    av = clicks.time_ps[emits]
    if av.size:
        eff_delay = spad.backflash_delay.truncated(min(spad.backflash_delay.support_max_ps, spad.gate_width_ps))
        delays = sample_delay(eff_delay, rngs.backflash, size=av.size)
        bf = BackflashEvents(av, av + delays)
    else:
        bf = BackflashEvents.empty()

    reflected_mu = mu * t_ch * spad.facet_reflectance
    reflection_ps = arrival if spad.facet_reflectance > 0 else np.empty(0, dtype=np.int64)

    return SpadResult(
        clicks=clicks,
        backflash=bf,
        reflection_ps=reflection_ps,
        reflected_mean_photon=reflected_mu,
        dead_until_ps=dead_after,
        n_gates=n_gates,
    )


def snspd_detect(
    arrivals: EveArrivals,
    snspd: SnspdConfig,
    window_ps: tuple[int, int],
    rngs: DeviceRngs,
) -> DetectionLog:
    """Thin arriving light onto the eavesdropper's detector and add darks."""
    eff = snspd.detection_efficiency
    bf = arrivals.backflash
    got_bf = rngs.snspd.gen.random(len(bf)) < eff
    bf_t = bf.emission_ps[got_bf]
    bf_src = bf.avalanche_ps[got_bf]

    p_refl = 1.0 - float(np.exp(-arrivals.reflected_mean_photon * eff))
    got_r = rngs.snspd.gen.random(arrivals.reflection_ps.size) < p_refl
    refl_t = arrivals.reflection_ps[got_r]

    dark_t = poisson_event_times(snspd.dark_count_rate_cps, window_ps, rngs.snspd)

    t = np.concatenate([bf_t, refl_t, dark_t])
    cause = np.concatenate([
        np.full(bf_t.size, Cause.BACKFLASH, dtype=np.int8),
        np.full(refl_t.size, Cause.REFLECTION, dtype=np.int8),
        np.full(dark_t.size, Cause.DARK, dtype=np.int8),
    ])
    src = np.concatenate([bf_src, refl_t, np.full(dark_t.size, -1, dtype=np.int64)])
    order = np.lexsort((cause, t))
    return DetectionLog(EVE, t[order], cause[order], src[order])


@dataclass
class Histogram:
    """Fixed-width histogram over integer picoseconds."""

    start_ps: int
    bin_width_ps: int
    counts: np.ndarray

    @property
    def bin_starts_ps(self) -> np.ndarray:
        return self.start_ps + self.bin_width_ps * np.arange(self.counts.size, dtype=np.int64)

    @property
    def centers_ps(self) -> np.ndarray:
        return self.bin_starts_ps + self.bin_width_ps / 2.0

    def normalized(self) -> np.ndarray:
        """Peak-normalized counts (all zero stays all zero)."""
        peak = self.counts.max() if self.counts.size else 0
        if peak <= 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / float(peak)

    def total(self) -> int:
        return int(self.counts.sum())

    def mean_ps(self) -> float:
        n = self.total()
        if n == 0:
            return float("nan")
        return float(np.sum(self.centers_ps * self.counts) / n)

    def std_ps(self) -> float:
        n = self.total()
        if n == 0:
            return float("nan")
        m = self.mean_ps()
        return float(np.sqrt(np.sum(self.counts * (self.centers_ps - m) ** 2) / n))

    def write_csv(self, path, header_lines: list[str] | None = None) -> None:
        norm = self.normalized()
        with open(path, "w", newline="") as fh:
            for line in header_lines or []:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["bin_start_ps", "count", "normalized"])
            for b, c, v in zip(self.bin_starts_ps.tolist(), self.counts.tolist(), norm.tolist()):
                w.writerow([b, c, f"{v:.10g}"])

    @classmethod
    def from_samples(cls, samples: np.ndarray, bin_width_ps: int, start_ps: int, stop_ps: int) -> "Histogram":
        if bin_width_ps <= 0 or stop_ps <= start_ps:
            raise ConfigError("histogram needs positive bin width and a non-empty range")
        nbins = -(-(stop_ps - start_ps) // bin_width_ps)
        s = np.asarray(samples, dtype=np.int64)
        s = s[(s >= start_ps) & (s < stop_ps)]
        counts = np.bincount((s - start_ps) // bin_width_ps, minlength=nbins)
        return cls(int(start_ps), int(bin_width_ps), counts.astype(np.int64))


def correlation_histogram(
    start_ps: np.ndarray,
    stop_ps: np.ndarray,
    bin_width_ps: int = 10,
    range_ps: int | tuple[int, int] = 6000,
) -> Histogram:
    """Start-stop histogram: every stop within range of every start counts.

    ``range_ps`` may be an upper bound (lower bound 0) or an explicit
    (lo, hi) pair; differences d satisfy lo <= d < hi.
    """
    if isinstance(range_ps, tuple):
        lo, hi = int(range_ps[0]), int(range_ps[1])
    else:
        lo, hi = 0, int(range_ps)
    if bin_width_ps <= 0 or hi <= lo:
        raise ConfigError("need positive bin width and lo < hi")
    nbins = -(-(hi - lo) // bin_width_ps)

    starts = np.sort(np.asarray(start_ps, dtype=np.int64))
    stops = np.sort(np.asarray(stop_ps, dtype=np.int64))
    if starts.size == 0 or stops.size == 0:
        return Histogram(lo, int(bin_width_ps), np.zeros(nbins, dtype=np.int64))

    i_lo = np.searchsorted(stops, starts + lo, side="left")
    i_hi = np.searchsorted(stops, starts + hi, side="left")
    reps = i_hi - i_lo
    total = int(reps.sum())
    if total == 0:
        return Histogram(lo, int(bin_width_ps), np.zeros(nbins, dtype=np.int64))
    cum = np.cumsum(reps)
    within = np.arange(total, dtype=np.int64) - np.repeat(cum - reps, reps)
    sel = stops[np.repeat(i_lo, reps) + within]
    d = sel - np.repeat(starts, reps)
    counts = np.bincount((d - lo) // bin_width_ps, minlength=nbins)
    return Histogram(lo, int(bin_width_ps), counts.astype(np.int64))
