"""Receiver-side key distillation: sifting, disclosure, and clock alignment.

A click is decoded by its position inside the frame: the first bin of a bit
slot means zero, the second means one.  A fixed-size block of sifted bits is
split into a disclosed subset, published with timestamps on the classical
channel, and a retained remainder that becomes key material.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .detectors import DetectionLog
from .source import ConfigError, FrameBatch, LogicalBit
from .timebase import RngStream


class AlignmentError(RuntimeError):
    """No candidate clock shift reached the required match fraction."""


@dataclass(frozen=True)
class DistillConfig:
    block_length: int = 20000
    disclosure_size: int = 2000
    coincidence_window_ps: int = 1000
    alignment_floor: float = 0.2

    def __post_init__(self) -> None:
        if self.block_length <= 0:
            raise ConfigError("block length must be positive")
        if not 0 <= self.disclosure_size < self.block_length:
            raise ConfigError("disclosure size must lie in [0, block length)")
        if self.coincidence_window_ps <= 0:
            raise ConfigError("coincidence window must be positive")
        if not 0.0 < self.alignment_floor <= 1.0:
            raise ConfigError("alignment floor must lie in (0, 1]")


@dataclass
class SiftedBits:
    """Columnar sifted detections with transmitter ground truth alongside.

    ``alice_bit`` never leaves the simulator; it exists so tests and error
    accounting can score decisions without re-deriving the pattern.
    """

    time_ps: np.ndarray
    bit: np.ndarray
    alice_bit: np.ndarray
    excluded_outside: int = 0
    excluded_decoy: int = 0

    def __len__(self) -> int:
        return self.time_ps.size

    @classmethod
    def empty(cls) -> "SiftedBits":
        z = np.empty(0, dtype=np.int64)
        b = np.empty(0, dtype=np.int8)
        return cls(z, b, b.copy())

    @classmethod
    def concat(cls, parts: list["SiftedBits"]) -> "SiftedBits":
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.time_ps for p in parts]),
            np.concatenate([p.bit for p in parts]),
            np.concatenate([p.alice_bit for p in parts]),
            sum(p.excluded_outside for p in parts),
            sum(p.excluded_decoy for p in parts),
        )


def sift(clicks: DetectionLog | np.ndarray, frames: FrameBatch) -> SiftedBits:
    """Decode clicks into sifted bits for one batch of frames.

    Clicks outside any bit slot are dropped and counted, as are clicks on
    decoy slots (announced by the transmitter after the fact).
    """
    t = clicks.time_ps if isinstance(clicks, DetectionLog) else np.asarray(clicks, dtype=np.int64)
    g = frames.geometry
    frame = t // g.frame_period_ps
    local = t - frame * g.frame_period_ps
    bin_idx = local // g.bin_width_ps

    in_window = bin_idx < 2 * g.bits_per_frame
    in_range = (frame >= frames.start_frame) & (frame < frames.start_frame + len(frames))
    ok = in_window & in_range
    excluded_outside = int(np.sum(~ok))

    frame, bin_idx, t_ok = frame[ok], bin_idx[ok], t[ok]
    slot = bin_idx // 2
    bit = (bin_idx % 2).astype(np.int8)
    alice = frames.bit_at(frame, slot).astype(np.int8)

    decoy = alice == LogicalBit.DECOY
    excluded_decoy = int(np.sum(decoy))
    keep = ~decoy
    return SiftedBits(
        time_ps=t_ok[keep],
        bit=bit[keep],
        alice_bit=alice[keep],
        excluded_outside=excluded_outside,
        excluded_decoy=excluded_decoy,
    )


def compute_qber(bob_bits: np.ndarray, alice_bits: np.ndarray) -> float:
    """Fraction of sifted bits that disagree with what was sent."""
    bob_bits = np.asarray(bob_bits)
    alice_bits = np.asarray(alice_bits)
    if bob_bits.shape != alice_bits.shape:
        raise ConfigError("bit arrays must have matching shapes")
    if bob_bits.size == 0:
        return 0.0
    return float(np.mean(bob_bits != alice_bits))


@dataclass
class ClassicalTranscript:
    """What crosses the public channel for one block."""

    block_id: int
    block_length: int
    disclosed_time_ps: np.ndarray
    disclosed_bit: np.ndarray
    announced_qber: float

    def __len__(self) -> int:
        return self.disclosed_time_ps.size


@dataclass
class SiftedKey:
    """Retained portion of one block."""

    block_id: int
    time_ps: np.ndarray
    bit: np.ndarray
    alice_bit: np.ndarray
    qber: float

    def __len__(self) -> int:
        return self.time_ps.size


def disclose(block: SiftedBits, cfg: DistillConfig, rng: RngStream, block_id: int = 0) -> tuple[ClassicalTranscript, SiftedKey]:
    """Split one full block into a public transcript and retained key."""
    n = len(block)
    if n != cfg.block_length:
        raise ConfigError(f"block has {n} bits, expected {cfg.block_length}")
    pick = rng.gen.choice(n, size=cfg.disclosure_size, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[pick] = True

    announced = compute_qber(block.bit[mask], block.alice_bit[mask]) if cfg.disclosure_size else 0.0
    transcript = ClassicalTranscript(
        block_id=block_id,
        block_length=n,
        disclosed_time_ps=block.time_ps[mask],
        disclosed_bit=block.bit[mask],
        announced_qber=announced,
    )
    retained = SiftedKey(
        block_id=block_id,
        time_ps=block.time_ps[~mask],
        bit=block.bit[~mask],
        alice_bit=block.alice_bit[~mask],
        qber=compute_qber(block.bit[~mask], block.alice_bit[~mask]),
    )
    return transcript, retained


def form_blocks(sifted: SiftedBits, cfg: DistillConfig, rng: RngStream) -> tuple[list[tuple[ClassicalTranscript, SiftedKey]], int]:
    """Cut the sifted stream into full blocks; returns (blocks, leftover bits)."""
    out = []
    n_full = len(sifted) // cfg.block_length
    for b in range(n_full):
        sl = slice(b * cfg.block_length, (b + 1) * cfg.block_length)
        piece = SiftedBits(sifted.time_ps[sl], sifted.bit[sl], sifted.alice_bit[sl])
        out.append(disclose(piece, cfg, rng, block_id=b))
    leftover = len(sifted) - n_full * cfg.block_length
    return out, leftover


@dataclass
class AlignmentResult:
    offset_ps: int
    score: int
    matched_fraction: float
    ties: list[int] = field(default_factory=list)


def _alignment_score(frames: FrameBatch, shifted_ps: np.ndarray, bits: np.ndarray) -> int:
    """Disclosed samples landing in the pulse bin their bit occupies."""
    g = frames.geometry
    frame = shifted_ps // g.frame_period_ps
    local = shifted_ps - frame * g.frame_period_ps
    bin_idx = local // g.bin_width_ps
    ok = (bin_idx < 2 * g.bits_per_frame) & (frame >= frames.start_frame) & (frame < frames.start_frame + len(frames))
    if not np.any(ok):
        return 0
    sub = (bin_idx[ok] % 2).astype(np.int8)
    slot = bin_idx[ok] // 2
    alice = frames.bit_at(frame[ok], slot)
    b = bits[ok]
    return int(np.sum((sub == b) & (alice == b)))


def align_clocks(frames: FrameBatch, transcript: ClassicalTranscript, cfg: DistillConfig) -> AlignmentResult:
    """Recover the receiver clock offset from disclosed samples.

    Scans candidate shifts over one full frame period each way, first at
    bin-width granularity and then at 10 ps around the coarse peak.  Among
    equal scores the smallest-magnitude shift wins and the rest are reported
    as ties.
    """
    ts = transcript.disclosed_time_ps
    bits = transcript.disclosed_bit
    if ts.size == 0:
        raise AlignmentError("no disclosed samples to align on")
    g = frames.geometry
    period = g.frame_period_ps

    def best(candidates: np.ndarray) -> tuple[int, int, list[int]]:
        scores = np.array([_alignment_score(frames, ts + int(s), bits) for s in candidates])
        top = int(scores.max())
        tied = [int(s) for s in candidates[scores == top]]
        tied.sort(key=lambda s: (abs(s), s))
        return tied[0], top, tied[1:]

    coarse = np.arange(-period, period + 1, g.bin_width_ps, dtype=np.int64)
    c_best, _, _ = best(coarse)
    fine = np.arange(c_best - g.bin_width_ps, c_best + g.bin_width_ps + 1, 10, dtype=np.int64)
    offset, score, ties = best(fine)

    frac = score / ts.size
    if frac < cfg.alignment_floor:
        raise AlignmentError(
            f"best shift {offset} ps matches only {frac:.3f} of disclosed samples "
            f"(floor {cfg.alignment_floor})"
        )
    return AlignmentResult(offset_ps=int(offset), score=score, matched_fraction=frac, ties=ties)


# ---------------------------------------------------------------------------
# Artifact writers and readers.

def write_transcript(transcript: ClassicalTranscript, path, header_lines: list[str] | None = None) -> None:
    """Line records: record_type,timestamp_ps,bit."""
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["record_type", "timestamp_ps", "bit"])
        w.writerow(["block-start", transcript.block_id, transcript.block_length])
        for t, b in zip(transcript.disclosed_time_ps.tolist(), transcript.disclosed_bit.tolist()):
            w.writerow(["disclosed", t, b])
        w.writerow(["qber", "", f"{transcript.announced_qber:.10g}"])


def read_transcript(path) -> ClassicalTranscript:
    block_id = 0
    block_length = 0
    times: list[int] = []
    bits: list[int] = []
    qber = 0.0
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    for row in rows[1:]:
        kind = row[0]
        if kind == "block-start":
            block_id, block_length = int(row[1]), int(row[2])
        elif kind == "disclosed":
            times.append(int(row[1]))
            bits.append(int(row[2]))
        elif kind == "qber":
            qber = float(row[2])
    return ClassicalTranscript(
        block_id=block_id,
        block_length=block_length,
        disclosed_time_ps=np.asarray(times, dtype=np.int64),
        disclosed_bit=np.asarray(bits, dtype=np.int8),
        announced_qber=qber,
    )


def write_key_file(key: SiftedKey, path, header_lines: list[str] | None = None) -> None:
    with open(path, "w") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        fh.write(f"# block_id={key.block_id} qber={key.qber:.10g} n={len(key)}\n")
        fh.write("".join(str(int(b)) for b in key.bit) + "\n")
