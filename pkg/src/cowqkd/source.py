"""Time-bin source and fiber channel.

A frame is one detection opportunity: ``bits_per_frame`` logical bits packed
into the leading signal window, one pulse pair (occupied bin + vacuum bin)
per bit, followed by dead bins until the next frame.  Logical zero puts the
pulse in the first bin of its slot, logical one in the second, and a decoy
occupies both.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .timebase import RngStream, check_time_range

PATTERN_ALTERNATING = "alternating"
PATTERN_RANDOM = "random"

ENCODING_NRZ = "nrz"
ENCODING_RZ = "rz"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class LogicalBit(IntEnum):
    ZERO = 0
    ONE = 1
    DECOY = 2


@dataclass(frozen=True)
class FrameGeometry:
    """Static layout of a frame in integer picoseconds."""

    bin_width_ps: int = 1000
    frame_period_ps: int = 32000
    bits_per_frame: int = 2

    def __post_init__(self) -> None:
        if self.bin_width_ps <= 0 or self.frame_period_ps <= 0:
            raise ConfigError("bin width and frame period must be positive")
        if self.bits_per_frame < 1:
            raise ConfigError("need at least one bit slot per frame")
        if self.signal_window_ps > self.frame_period_ps:
            raise ConfigError("signal window does not fit in the frame period")

    @property
    def signal_window_ps(self) -> int:
        return 2 * self.bits_per_frame * self.bin_width_ps

    @property
    def frame_rate_hz(self) -> float:
        return 1e12 / self.frame_period_ps

    def slot_bin_ps(self, slot: int, sub_bin: int) -> int:
        """Frame-local start of a slot's first (0) or second (1) bin."""
        return (2 * slot + sub_bin) * self.bin_width_ps


@dataclass(frozen=True)
class SourceConfig:
    """Transmitter settings."""

    mean_photon_number: float = 0.2
    bin_width_ps: int = 1000
    frame_period_ps: int = 32000
    bits_per_frame: int = 2
    encoding: str = ENCODING_NRZ
    pattern: str = PATTERN_ALTERNATING
    decoy_probability: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.mean_photon_number < 1:
            raise ConfigError("mean photon number must lie in (0, 1)")
        if self.encoding not in (ENCODING_NRZ, ENCODING_RZ):
            raise ConfigError(f"unknown encoding {self.encoding!r}")
        if self.pattern not in (PATTERN_ALTERNATING, PATTERN_RANDOM):
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if not 0.0 <= self.decoy_probability <= 1.0:
            raise ConfigError("decoy probability must lie in [0, 1]")
        self.geometry  # validate layout

    @property
    def geometry(self) -> FrameGeometry:
        return FrameGeometry(self.bin_width_ps, self.frame_period_ps, self.bits_per_frame)

    @property
    def occupied_width_ps(self) -> int:
        """Width of the occupied part of a pulse bin (full bin for NRZ)."""
        return self.bin_width_ps if self.encoding == ENCODING_NRZ else max(1, self.bin_width_ps // 2)


@dataclass(frozen=True)
class ChannelConfig:
    """Fiber between transmitter and receiver."""

    length_km: float = 0.0
    attenuation_db_per_km: float = 0.2
    excess_loss_db: float = 0.0

    def __post_init__(self) -> None:
        if self.length_km < 0 or self.attenuation_db_per_km < 0 or self.excess_loss_db < 0:
            raise ConfigError("channel losses must be non-negative")


def channel_transmittance(channel: ChannelConfig) -> float:
    """Power transmittance of the fiber link.

    >>> channel_transmittance(ChannelConfig(length_km=0.0))
    1.0
    """
    total_db = channel.length_km * channel.attenuation_db_per_km + channel.excess_loss_db
    return 10.0 ** (-total_db / 10.0)


def detection_probability(mean_photon_number: float, efficiency: float) -> float:
    """Click probability for a coherent pulse on a threshold detector."""
    if mean_photon_number < 0 or efficiency < 0:
        raise ConfigError("mean photon number and efficiency must be >= 0")
    return 1.0 - float(np.exp(-mean_photon_number * efficiency))


@dataclass(frozen=True)
class PulseFrame:
    """One frame: global start time, slot bits, occupied frame-local bins."""

    start_ps: int
    bits: tuple[int, ...]
    pulse_bins_ps: tuple[int, ...]


class FrameBatch:
    """Columnar batch of frames; indexable as a sequence of PulseFrame."""

    def __init__(self, geometry: FrameGeometry, bits: np.ndarray, start_frame: int = 0):
        bits = np.asarray(bits, dtype=np.int8)
        if bits.ndim != 2 or bits.shape[1] != geometry.bits_per_frame:
            raise ConfigError("bits array must be (n_frames, bits_per_frame)")
        self.geometry = geometry
        self.bits = bits
        self.start_frame = int(start_frame)
        check_time_range((self.start_frame + len(bits) + 1) * geometry.frame_period_ps)

    def __len__(self) -> int:
        return self.bits.shape[0]

    @property
    def start_ps(self) -> int:
        return self.start_frame * self.geometry.frame_period_ps

    @property
    def end_ps(self) -> int:
        return (self.start_frame + len(self)) * self.geometry.frame_period_ps

    def __getitem__(self, i: int) -> PulseFrame:
        g = self.geometry
        row = self.bits[i]
        bins = []
        for slot, b in enumerate(row):
            if b == LogicalBit.DECOY:
                bins.append(g.slot_bin_ps(slot, 0))
                bins.append(g.slot_bin_ps(slot, 1))
            else:
                bins.append(g.slot_bin_ps(slot, int(b)))
        return PulseFrame(
            start_ps=(self.start_frame + i) * g.frame_period_ps,
            bits=tuple(int(b) for b in row),
            pulse_bins_ps=tuple(bins),
        )

    def pulses(self) -> dict[str, np.ndarray]:
        """Flatten to one record per emitted pulse.

        Returns arrays ``time_ps`` (global occupied-bin start), ``frame``
        (global frame index), ``slot`` and ``bit`` (slot's logical value;
        decoy slots contribute two pulses tagged DECOY).
        """
        g = self.geometry
        n, k = self.bits.shape
        frame_idx = np.repeat(np.arange(n, dtype=np.int64), k)
        slot_idx = np.tile(np.arange(k, dtype=np.int64), n)
        flat = self.bits.reshape(-1)
        is_decoy = flat == LogicalBit.DECOY
        sub = np.where(is_decoy, 0, flat).astype(np.int64)

        frame_idx = np.concatenate([frame_idx, frame_idx[is_decoy]])
        slot_idx = np.concatenate([slot_idx, slot_idx[is_decoy]])
        bit = np.concatenate([flat, flat[is_decoy]]).astype(np.int8)
        sub = np.concatenate([sub, np.ones(int(is_decoy.sum()), dtype=np.int64)])

        time_ps = (
            (self.start_frame + frame_idx) * g.frame_period_ps
            + (2 * slot_idx + sub) * g.bin_width_ps
        )
        order = np.argsort(time_ps, kind="stable")
        return {
            "time_ps": time_ps[order],
            "frame": self.start_frame + frame_idx[order],
            "slot": slot_idx[order],
            "bit": bit[order],
        }

    def is_decoy(self, frame: np.ndarray, slot: np.ndarray) -> np.ndarray:
        local = np.asarray(frame, dtype=np.int64) - self.start_frame
        return self.bits[local, np.asarray(slot, dtype=np.int64)] == LogicalBit.DECOY

    def bit_at(self, frame: np.ndarray, slot: np.ndarray) -> np.ndarray:
        local = np.asarray(frame, dtype=np.int64) - self.start_frame
        return self.bits[local, np.asarray(slot, dtype=np.int64)]


def generate_frames(cfg: SourceConfig, count: int, rng: RngStream, start_frame: int = 0) -> FrameBatch:
    """Draw ``count`` frames starting at global frame index ``start_frame``."""
    if count < 0:
        raise ConfigError("frame count must be >= 0")
    g = cfg.geometry
    k = g.bits_per_frame
    if cfg.pattern == PATTERN_ALTERNATING:
        row = np.arange(k, dtype=np.int8) % 2
        bits = np.tile(row, (count, 1))
    else:
        bits = rng.gen.integers(0, 2, size=(count, k), dtype=np.int8)
    if cfg.decoy_probability > 0 and count > 0:
        decoy = rng.gen.random(size=(count, k)) < cfg.decoy_probability
        bits[decoy] = LogicalBit.DECOY
    return FrameBatch(g, bits, start_frame=start_frame)


def write_frames_csv(batch: FrameBatch, path, header_lines: list[str] | None = None) -> None:
    """Frame log: one row per frame with its occupied frame-local bins."""
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["frame_start_ps", "bits", "pulse_bins_ps"])
        for i in range(len(batch)):
            f = batch[i]
            w.writerow([
                f.start_ps,
                "".join(str(b) for b in f.bits),
                ";".join(str(p) for p in f.pulse_bins_ps),
            ])
