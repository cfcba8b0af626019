"""Experiment orchestration: full runs, sweeps, and reproducible artifacts.

A run is ``trials`` independent repetitions of the same configuration with
per-trial RNG streams.  Frames are simulated in fixed-size chunks so memory
stays bounded while hold-off state flows across chunk borders.  Identical
(config, seed) pairs produce byte-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import distill as distill_mod
from .attack import AttackConfig, CalibrationResult, EveInference, LearningMetrics
from .detectors import (
    BackflashEvents,
    Cause,
    DetectionLog,
    EveArrivals,
    Histogram,
    SnspdConfig,
    SpadConfig,
    _dead_time_filter,
    correlation_histogram,
    snspd_detect,
    spad_detect,
    spad_preset,
    write_detections_csv,
)
from .distill import ClassicalTranscript, DistillConfig, SiftedBits, SiftedKey, sift
from .rates import (
    McCounts,
    RateInputs,
    RateReport,
    compare,
    composite_efficiency,
    dark_probability_per_gate,
    gate_mean_photon,
    p_err,
    p_sift_simple,
)
from .source import ChannelConfig, ConfigError, SourceConfig, channel_transmittance, generate_frames, write_frames_csv
from .timebase import PS_PER_S, DelayDistribution, DeviceRngs, check_time_range, sample_delay

CHUNK_FRAMES = 1_000_000  # fixed so chunking never affects drawn sequences


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    spad: SpadConfig = field(default_factory=SpadConfig)
    snspd: SnspdConfig = field(default_factory=SnspdConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    seed: int = 0
    seeds: tuple[int, ...] | None = None
    trials: int = 1
    frames_per_trial: int = 7_800_000
    workers: int = 1
    attack_enabled: bool = True
    export_frames: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.frames_per_trial < 1:
            raise ConfigError("frames_per_trial must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.seeds is not None and len(self.seeds) != self.trials:
            raise ConfigError("seeds list must have one entry per trial")
        if self.export_frames < 0:
            raise ConfigError("export_frames must be >= 0")
        if self.spad.gate_period_ps != self.source.frame_period_ps:
            raise ConfigError("SPAD gate period must equal the source frame period")
        check_time_range(self.frames_per_trial * self.source.frame_period_ps + 10**9)
        if self.attack_enabled:
            expected = self.trials * self.frames_per_trial * self.analytic_p_sift()
            if expected < self.distill.block_length:
                raise ConfigError(
                    f"expected {expected:.0f} sifted detections cannot fill a "
                    f"{self.distill.block_length}-bit block; add frames or shrink the block"
                )

    def trial_seed(self, trial: int) -> int:
        return self.seeds[trial] if self.seeds is not None else self.seed

    def rate_inputs(self, qber: float | None = None) -> RateInputs:
        eta = composite_efficiency(channel_transmittance(self.channel), self.spad.detection_efficiency)
        return RateInputs(
            mu=gate_mean_photon(self.source.mean_photon_number, self.source.bits_per_frame),
            eta=eta,
            p_dark=dark_probability_per_gate(self.spad.dark_count_rate_cps, self.spad.gate_width_ps),
            opportunity_rate_hz=self.source.geometry.frame_rate_hz,
            hold_off_s=self.spad.hold_off_s,
            p_b=self.spad.backflash_probability * self.snspd.detection_efficiency,
            qber=qber,
        )

    def analytic_p_sift(self) -> float:
        r = self.rate_inputs()
        q = p_sift_simple(r.mu, r.eta, r.p_dark)
        return q / (1.0 + r.opportunity_rate_hz * q * r.hold_off_s)


# ---------------------------------------------------------------------------
# Flat dotted-key config mapping (config files and --set overrides).

_SECTIONS = ("source", "channel", "spad", "snspd", "distill", "attack")
_TOP_FIELDS = ("seed", "trials", "frames_per_trial", "workers", "attack_enabled", "export_frames")


def config_to_flat(cfg: ExperimentConfig) -> dict[str, str]:
    flat: dict[str, str] = {}
    for name in _TOP_FIELDS:
        flat[name] = _fmt(getattr(cfg, name))
    for sec in _SECTIONS:
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, DelayDistribution):
                flat[f"{sec}.{f.name}.kind"] = v.kind
                flat[f"{sec}.{f.name}.support_max_ps"] = str(v.support_max_ps)
                if v.kind == "truncated-exponential":
                    flat[f"{sec}.{f.name}.scale_ps"] = _fmt(v.scale_ps)
                else:
                    flat[f"{sec}.{f.name}.bin_edges_ps"] = ";".join(str(x) for x in v.bin_edges_ps)
                    flat[f"{sec}.{f.name}.weights"] = ";".join(_fmt(x) for x in v.weights)
            else:
                flat[f"{sec}.{f.name}"] = _fmt(v)
    return flat


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, tuple):
        return ";".join(str(x) for x in v)
    return str(v)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Return a new config with dotted-key overrides applied."""
    by_section: dict[str, dict[str, str]] = {s: {} for s in _SECTIONS}
    top: dict[str, str] = {}
    delay_parts: dict[str, dict[str, str]] = {}
    for key, raw in overrides.items():
        parts = key.split(".")
        if len(parts) == 1:
            if key not in _TOP_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = raw
        elif len(parts) == 2:
            sec, name = parts
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown config section {sec!r}")
            by_section[sec][name] = raw
        elif len(parts) == 3:
            sec, name, sub = parts
            delay_parts.setdefault(f"{sec}.{name}", {})[sub] = raw
        else:
            raise ConfigError(f"malformed config key {key!r}")

    kwargs: dict = {}
    for name, raw in top.items():
        kwargs[name] = _parse_field(ExperimentConfig, name, raw)
    for sec, vals in by_section.items():
        if not vals:
            continue
        obj = getattr(cfg, sec)
        sec_kwargs = {}
        for name, raw in vals.items():
            sec_kwargs[name] = _parse_field(type(obj), name, raw)
        kwargs[sec] = replace(obj, **sec_kwargs)
    for dotted, subs in delay_parts.items():
        sec, name = dotted.split(".")
        base = kwargs.get(sec, getattr(cfg, sec))
        current = getattr(base, name)
        if not isinstance(current, DelayDistribution):
            raise ConfigError(f"{dotted} is not a delay distribution")
        kwargs[sec] = replace(base, **{name: _parse_delay(current, subs)})
    return replace(cfg, **kwargs)


def _parse_field(cls, name: str, raw: str):
    for f in dataclasses.fields(cls):
        if f.name == name:
            return _parse_value(f.type, raw, name)
    raise ConfigError(f"unknown config key {cls.__name__}.{name}")


def _parse_value(type_str, raw: str, name: str):
    raw = raw.strip()
    t = str(type_str)
    if raw.lower() == "none":
        return None
    if "bool" in t:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if "tuple" in t:
            return tuple(int(x) for x in raw.split(";") if x)
        if "int" in t:
            return int(raw)
        if "float" in t:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc
    return raw


def _parse_delay(current: DelayDistribution, subs: dict[str, str]) -> DelayDistribution:
    kind = subs.get("kind", current.kind)
    if kind == "truncated-exponential":
        scale = float(subs.get("scale_ps", current.scale_ps or 600.0))
        support = int(subs.get("support_max_ps", current.support_max_ps))
        return DelayDistribution.truncated_exponential(scale, support)
    if kind == "empirical-histogram":
        if "bin_edges_ps" in subs:
            edges = [int(x) for x in subs["bin_edges_ps"].split(";") if x]
            weights = [float(x) for x in subs.get("weights", "").split(";") if x]
        elif current.kind == "empirical-histogram":
            edges, weights = current.bin_edges_ps, current.weights
        else:
            raise ConfigError("empirical-histogram needs bin_edges_ps and weights")
        return DelayDistribution.empirical(edges, weights)
    raise ConfigError(f"unknown delay model kind {kind!r}")


def read_config_file(path) -> dict[str, str]:
    """Flat dotted-key file: one ``key = value`` per line, '#' comments."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = s.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    text = "\n".join(f"{k} = {v}" for k, v in sorted(config_to_flat(cfg).items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Presets.

def preset_config(name: str) -> ExperimentConfig:
    key = name.lower()
    if key in ("2v", "5v", "7v"):
        return ExperimentConfig(
            spad=spad_preset(key),
            source=SourceConfig(mean_photon_number=0.1),
            frames_per_trial=1_000_000,
            attack_enabled=False,
        )
    if key == "paper":
        # Reference tabletop run: 5 V bias point, zero-length channel,
        # alternating pattern, one full disclosure block.
        return ExperimentConfig(
            spad=spad_preset("5v"),
            source=SourceConfig(mean_photon_number=0.2, pattern="alternating"),
            channel=ChannelConfig(length_km=0.0),
            distill=DistillConfig(block_length=20000, disclosure_size=2000),
            attack=AttackConfig(boundary="valley"),
            frames_per_trial=7_800_000,
            attack_enabled=True,
        )
    raise ConfigError(f"unknown preset {name!r}; expected 2v, 5v, 7v or paper")


# ---------------------------------------------------------------------------
# Single-trial pipeline.

@dataclass
class BlockOutcome:
    transcript: ClassicalTranscript
    retained: SiftedKey
    clusters: attack_mod.ClusterMap | None = None
    inference: EveInference | None = None
    metrics: LearningMetrics | None = None


@dataclass
class TrialResult:
    trial: int
    seed: int
    n_frames: int
    sifted: SiftedBits
    bob_log: DetectionLog
    eve_log: DetectionLog
    blocks: list[BlockOutcome]
    leftover: int
    calibration: CalibrationResult | None
    n_err: int
    n_retained: int
    n_eve_backflash_retained: int
    n_eve_backflash_blocks: int
    n_eve_correct: int


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialResult:
    rngs = DeviceRngs(cfg.trial_seed(trial), trial=trial)
    period = cfg.source.frame_period_ps

    sift_parts: list[SiftedBits] = []
    bob_parts: list[DetectionLog] = []
    eve_parts: list[DetectionLog] = []
    dead_until = 0
    done = 0
    while done < cfg.frames_per_trial:
        n = min(CHUNK_FRAMES, cfg.frames_per_trial - done)
        batch = generate_frames(cfg.source, n, rngs.bits, start_frame=done)
        res = spad_detect(batch, cfg.source, cfg.spad, cfg.channel, rngs, dead_until_ps=dead_until)
        dead_until = res.dead_until_ps
        bob_parts.append(res.clicks)
        sift_parts.append(sift(res.clicks, batch))
        if cfg.attack_enabled:
            window = (batch.start_ps, batch.end_ps)
            eve_parts.append(snspd_detect(res.eve_arrivals(), cfg.snspd, window, rngs))
        done += n

    sifted = SiftedBits.concat(sift_parts)
    bob_log = DetectionLog.merge(bob_parts)
    eve_log = DetectionLog.merge(eve_parts) if cfg.attack_enabled else DetectionLog.empty("eve")
    n_err = int(np.sum(sifted.bit != sifted.alice_bit))

    pairs, leftover = distill_mod.form_blocks(sifted, cfg.distill, rngs.disclose)
    blocks = [BlockOutcome(transcript=t, retained=r) for t, r in pairs]

    calibration = None
    n_retained = sum(len(b.retained) for b in blocks)
    n_eve_bf_retained = 0
    n_eve_bf_blocks = 0
    n_eve_correct = 0

    if cfg.attack_enabled:
        if not blocks:
            raise attack_mod.CalibrationError("no full block available for the attack pipeline")
        eve_raw = eve_log.time_ps + cfg.attack.clock_offset_ps
        calibration = attack_mod.calibrate(
            eve_raw, blocks[0].transcript, period, cfg.source.bin_width_ps, cfg.attack
        )
        calibrated = eve_raw + calibration.offset_ps

        av = eve_log.source_ps[eve_log.cause == Cause.BACKFLASH]
        if n_retained:
            retained_all = np.sort(np.concatenate([b.retained.time_ps for b in blocks]))
            n_eve_bf_retained = _member_count(retained_all, av)
            block_all = np.sort(np.concatenate(
                [b.retained.time_ps for b in blocks] + [b.transcript.disclosed_time_ps for b in blocks]
            ))
            n_eve_bf_blocks = _member_count(block_all, av)

        margin = 2 * period
        for b in blocks:
            lo = int(b.retained.time_ps.min()) - margin if len(b.retained) else 0
            hi = int(b.retained.time_ps.max()) + margin if len(b.retained) else 0
            sub = calibrated[(calibrated >= lo) & (calibrated <= hi)]
            if sub.size == 0:
                continue
            b.clusters = attack_mod.fold_and_cluster(sub, b.transcript, period, cfg.attack)
            b.inference = attack_mod.infer_bits(sub, b.clusters, b.retained, cfg.attack)
            b.metrics = attack_mod.learning_metrics(b.inference, b.retained)
            n_eve_correct += b.inference.correct_count

    return TrialResult(
        trial=trial,
        seed=cfg.trial_seed(trial),
        n_frames=cfg.frames_per_trial,
        sifted=sifted,
        bob_log=bob_log,
        eve_log=eve_log,
        blocks=blocks,
        leftover=leftover,
        calibration=calibration,
        n_err=n_err,
        n_retained=n_retained,
        n_eve_backflash_retained=n_eve_bf_retained,
        n_eve_backflash_blocks=n_eve_bf_blocks,
        n_eve_correct=n_eve_correct,
    )


def _member_count(sorted_ref: np.ndarray, values: np.ndarray) -> int:
    """How many values appear exactly in the sorted reference array."""
    if sorted_ref.size == 0 or values.size == 0:
        return 0
    pos = np.clip(np.searchsorted(sorted_ref, values), 0, sorted_ref.size - 1)
    return int(np.sum(sorted_ref[pos] == values))


# ---------------------------------------------------------------------------
# Full runs.

@dataclass
class RunResult:
    config: ExperimentConfig
    trials: list[TrialResult]
    counts: McCounts
    report: RateReport
    manifest: dict

    @property
    def hash(self) -> str:
        return self.manifest["config_hash"]


def run_simulation(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            trials = list(pool.map(run_trial, [cfg] * cfg.trials, range(cfg.trials)))
    else:
        trials = [run_trial(cfg, i) for i in range(cfg.trials)]
    trials.sort(key=lambda t: t.trial)

    n_frames = sum(t.n_frames for t in trials)
    n_sift = sum(len(t.sifted) for t in trials)
    n_in_blocks = sum(len(b.retained) + len(b.transcript) for t in trials for b in t.blocks)
    counts = McCounts(
        n_frames=n_frames,
        n_sift=n_sift,
        n_err=sum(t.n_err for t in trials),
        n_retained=sum(t.n_retained for t in trials),
        n_eve_backflash=sum(t.n_eve_backflash_retained for t in trials),
        n_eve_backflash_blocks=sum(t.n_eve_backflash_blocks for t in trials),
        n_eve_correct=sum(t.n_eve_correct for t in trials),
        n_frames_covered=round(n_frames * n_in_blocks / n_sift) if n_sift else 0,
    )
    inputs = cfg.rate_inputs()
    if not cfg.attack_enabled:
        inputs = replace(inputs, p_b=0.0)
    report = compare(counts, inputs)

    manifest = {
        "config_hash": config_hash(cfg),
        "config": config_to_flat(cfg),
        "seeds": [cfg.trial_seed(i) for i in range(cfg.trials)],
        "counts": dataclasses.asdict(counts),
        "qber": counts.n_err / counts.n_sift if counts.n_sift else 0.0,
        "leftover_bits": sum(t.leftover for t in trials),
        "blocks": sum(len(t.blocks) for t in trials),
        "report": report.as_dict(),
        "learning": [
            dataclasses.asdict(b.metrics)
            for t in trials for b in t.blocks if b.metrics is not None
        ],
        "calibration_offsets_ps": [
            t.calibration.offset_ps for t in trials if t.calibration is not None
        ],
        "artifacts": {},
    }
    result = RunResult(cfg, trials, counts, report, manifest)
    if out_dir is not None:
        write_run_artifacts(result, Path(out_dir))
    return result


def _headers(cfg: ExperimentConfig) -> list[str]:
    return [f"config_hash={config_hash(cfg)} seed={cfg.seed}"]


def write_run_artifacts(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    heads = _headers(cfg)
    art: dict[str, str] = {}

    p = out_dir / "rates.csv"
    write_rates_csv(result.report, p, heads)
    art["rates"] = p.name

    t0 = result.trials[0]
    p = out_dir / "detections.csv"
    write_detections_csv([t0.bob_log, t0.eve_log], p, heads)
    art["detections"] = p.name

    for b in t0.blocks[:1]:
        p = out_dir / f"transcript_block{b.transcript.block_id}.csv"
        distill_mod.write_transcript(b.transcript, p, heads)
        art["transcript"] = p.name
        p = out_dir / f"key_block{b.retained.block_id}.txt"
        distill_mod.write_key_file(b.retained, p, heads)
        art["key"] = p.name
        if b.clusters is not None:
            p = out_dir / f"attack_histogram_block{b.retained.block_id}.csv"
            attack_mod.write_clusters_csv(b.clusters, p, heads)
            art["attack_histogram"] = p.name
        if b.inference is not None:
            p = out_dir / f"inference_block{b.retained.block_id}.csv"
            attack_mod.write_inference_csv(b.inference, p, heads)
            art["inference"] = p.name

    if cfg.export_frames > 0:
        rngs = DeviceRngs(cfg.trial_seed(0), trial=0)
        n = min(cfg.export_frames, cfg.frames_per_trial, CHUNK_FRAMES)
        batch = generate_frames(cfg.source, n, rngs.bits, start_frame=0)
        p = out_dir / "frames.csv"
        write_frames_csv(batch, p, heads)
        art["frames"] = p.name

    result.manifest["artifacts"] = art
    (out_dir / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")


def write_rates_csv(report: RateReport, path, header_lines: list[str] | None = None) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["name", "analytic", "empirical", "lo", "hi", "ok"])
        for r in report.rows:
            w.writerow([
                r.name,
                f"{r.analytic:.10g}",
                "" if r.empirical is None else f"{r.empirical:.10g}",
                "" if r.lo is None else f"{r.lo:.10g}",
                "" if r.hi is None else f"{r.hi:.10g}",
                int(r.ok),
            ])


# ---------------------------------------------------------------------------
# Sweeps.

SWEEP_AXES = ("distance", "bias", "mu", "backflash-probability")


def _apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "distance":
        return replace(cfg, channel=replace(cfg.channel, length_km=float(value)))
    if axis == "bias":
        label = value if isinstance(value, str) else f"{int(float(value))}v"
        spad = spad_preset(label, **{
            f.name: getattr(cfg.spad, f.name)
            for f in dataclasses.fields(SpadConfig)
            if f.name not in ("detection_efficiency", "dark_count_rate_cps", "excess_bias_label")
        })
        return replace(cfg, spad=spad)
    if axis == "mu":
        return replace(cfg, source=replace(cfg.source, mean_photon_number=float(value)))
    if axis == "backflash-probability":
        return replace(cfg, spad=replace(cfg.spad, backflash_probability=float(value)))
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_sweep(cfg: ExperimentConfig, axis: str, values: list, out_path: str | Path | None = None) -> list[dict]:
    """One row per value; Monte Carlo columns are filled when trials run."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in values:
        point = _apply_axis(cfg, axis, value)
        analytic_inputs = point.rate_inputs()
        q1 = p_sift_simple(analytic_inputs.mu, analytic_inputs.eta, analytic_inputs.p_dark)
        qber_analytic = p_err(analytic_inputs.mu, analytic_inputs.eta, analytic_inputs.p_dark, q1)

        run = run_simulation(point)
        row = {
            "distance_km": point.channel.length_km,
            "bias_v": point.spad.excess_bias_label,
            "axis": axis,
            "value": value,
            "qber_analytic": qber_analytic,
            "config_hash": config_hash(point),
        }
        for r in run.report.rows:
            row[r.name] = r.analytic
            row[f"{r.name}_mc"] = r.empirical
            row[f"{r.name}_lo"] = r.lo
            row[f"{r.name}_hi"] = r.hi
        row["insecure"] = run.report.insecure
        learning = [b.metrics for t in run.trials for b in t.blocks if b.metrics is not None]
        row["learning_rate_mc"] = (
            sum(m.learning_rate for m in learning) / len(learning) if learning else None
        )
        rows.append(row)
    if out_path is not None:
        write_sweep_csv(rows, out_path, _headers(cfg))
    return rows


def write_sweep_csv(rows: list[dict], path, header_lines: list[str] | None = None) -> None:
    import csv

    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([_csv_cell(row.get(c)) for c in cols])


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


# ---------------------------------------------------------------------------
# Dark-exposure timing correlation (no input light).

def emit_timing_correlation(
    cfg: ExperimentConfig,
    gate_widths_ps: list[int],
    clicks_per_width: int = 100_000,
    bin_width_ps: int = 10,
    range_ps: tuple[int, int] = (0, 6000),
    out_dir: str | Path | None = None,
) -> dict[int, Histogram]:
    """Start-stop histograms between receiver clicks and leaked photons.

    The source is blocked: every avalanche is dark-triggered, so the
    histogram profiles the backflash delay alone.  The delay support is
    capped by the gate width (the avalanche is quenched when the gate
    closes), which is what makes the spread grow with width until the
    intrinsic bound takes over.
    """
    if clicks_per_width < 1:
        raise ConfigError("clicks_per_width must be >= 1")
    out: dict[int, Histogram] = {}
    for w in gate_widths_ps:
        spad = replace(cfg.spad, gate_width_ps=int(w), hold_off_s=1e-6)
        rngs = DeviceRngs(cfg.seed, trial=int(w))

        p_dark_gate = spad.dark_count_rate_cps * spad.gate_width_ps / PS_PER_S
        n_gates = int(clicks_per_width / max(p_dark_gate, 1e-30) * 1.05) + 1
        span_ps = check_time_range(n_gates * spad.gate_period_ps)

        lam = spad.dark_count_rate_cps * n_gates * (spad.gate_width_ps / PS_PER_S)
        n_dark = int(rngs.spad_dark.gen.poisson(lam))
        gate = rngs.spad_dark.gen.integers(0, n_gates, size=n_dark, dtype=np.int64)
        off = rngs.spad_dark.gen.integers(0, spad.gate_width_ps, size=n_dark, dtype=np.int64)
        t = np.sort(gate * spad.gate_period_ps + spad.gate_phase_ps + off)

        keep, _ = _dead_time_filter(t, spad.hold_off_ps, 0)
        clicks = t[keep]

        emits = rngs.backflash.gen.random(clicks.size) < spad.backflash_probability
        av = clicks[emits]
        eff_delay = spad.backflash_delay.truncated(min(spad.backflash_delay.support_max_ps, spad.gate_width_ps))
        delays = sample_delay(eff_delay, rngs.backflash, size=av.size) if av.size else np.empty(0, dtype=np.int64)
        arrivals = EveArrivals(BackflashEvents(av, av + delays), np.empty(0, dtype=np.int64), 0.0)
        eve = snspd_detect(arrivals, cfg.snspd, (0, span_ps), rngs)

        hist = correlation_histogram(clicks, eve.time_ps, bin_width_ps, range_ps)
        out[int(w)] = hist
        if out_dir is not None:
            path = Path(out_dir)
            path.mkdir(parents=True, exist_ok=True)
            hist.write_csv(path / f"correlation_w{int(w)}.csv", _headers(cfg) + [f"gate_width_ps={int(w)}"])
    return out
