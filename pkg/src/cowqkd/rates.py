"""Closed-form sifting, error, leakage, and secure-rate expressions.

All probabilities are per detection opportunity (one gate opening, i.e. one
frame).  ``mu`` is therefore the total signal mean photon number arriving
during one gate and ``eta`` the composite of channel transmittance and
detector efficiency.  Helpers at the bottom document those conversions so a
different convention can be swapped in one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import exp, log2

import numpy as np
from scipy import stats


def p_sift_simple(mu: float, eta: float, p_dark: float) -> float:
    """Probability that a gate produces a click, ignoring dead time.

    >>> round(p_sift_simple(0.5, 0.2, 8e-7), 6)
    0.095163
    """
    _check_prob("p_dark", p_dark)
    if mu < 0 or eta < 0:
        raise ValueError("mu and eta must be >= 0")
    return 1.0 - exp(-mu * eta) * (1.0 - p_dark)


def p_sift_holdoff(mu: float, eta: float, p_dark: float, opportunity_rate_hz: float, hold_off_s: float) -> float:
    """Sifting probability with non-paralyzable hold-off dead time.

    >>> round(p_sift_holdoff(0.5, 0.2, 8e-7, 31.25e6, 10e-6), 6)
    0.003096
    """
    if opportunity_rate_hz < 0 or hold_off_s < 0:
        raise ValueError("rate and hold-off must be >= 0")
    q = p_sift_simple(mu, eta, p_dark)
    return q / (1.0 + opportunity_rate_hz * q * hold_off_s)


def p_err(mu: float, eta: float, p_dark: float, p_sift: float) -> float:
    """Fraction of sifted bits flipped by dark counts.

    ``p_sift`` is the denominator convention the caller wants errors
    referred to (normally the no-dead-time value, since hold-off thins
    errors and correct clicks alike).

    >>> round(p_err(0.5, 0.2, 8e-7, p_sift_simple(0.5, 0.2, 8e-7)), 10)
    7.6066e-06
    """
    _check_prob("p_dark", p_dark)
    if p_sift <= 0:
        raise ValueError("p_sift must be positive")
    return exp(-mu * eta) * (1.0 - p_dark) * p_dark / p_sift


def p_backflash(n_eve: int, n_sift: int) -> float:
    """Leak probability per sifted detection, from observed counts.

    >>> round(p_backflash(1598, 18000), 5)
    0.08878
    """
    if n_sift <= 0:
        raise ValueError("n_sift must be positive")
    if n_eve < 0 or n_eve > n_sift:
        raise ValueError("n_eve must lie in [0, n_sift]")
    return n_eve / n_sift


def p_learn(p_b: float, p_sift: float) -> float:
    """Probability per opportunity that the eavesdropper learns a key bit.

    >>> round(p_learn(0.08878, 0.003096), 7)
    0.0002749
    """
    _check_prob("p_b", p_b)
    _check_prob("p_sift", p_sift)
    return p_b * p_sift


def binary_entropy(e: float) -> float:
    """Shannon entropy of a binary variable.

    >>> binary_entropy(0.5)
    1.0
    >>> binary_entropy(0.0)
    0.0
    """
    if not 0.0 <= e <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    if e in (0.0, 1.0):
        return 0.0
    return -e * log2(e) - (1.0 - e) * log2(1.0 - e)


def p_sec(p_sift: float, p_b: float, qber: float, reconciliation_inefficiency: float = 1.15) -> tuple[float, bool]:
    """Asymptotic secure fraction, clamped at zero.

    Returns (rate, insecure) where ``insecure`` marks a negative raw value.

    >>> rate, insecure = p_sec(0.003096, 0.089, 0.0)
    >>> round(rate / 0.003096, 3), insecure
    (0.911, False)
    """
    _check_prob("p_sift", p_sift)
    _check_prob("p_b", p_b)
    if reconciliation_inefficiency < 1.0:
        raise ValueError("reconciliation inefficiency must be >= 1")
    raw = p_sift * (1.0 - p_b - reconciliation_inefficiency * binary_entropy(qber))
    if raw < 0.0:
        return 0.0, True
    return raw, False


@dataclass(frozen=True)
class FiniteSizeInputs:
    """Finite-block correction terms, all expressed as key fractions.

    ``leak_ec`` defaults to the reconciliation leakage f*H(e) when None.
    The security parameters default to negligible contributions; they are
    deployment inputs, not derived quantities.
    """

    leak_ec: float | None = None
    beta_ec: float = 1e-10
    beta_pa: float = 1e-10


def p_sec_finite(
    p_sift: float,
    qber: float,
    finite: FiniteSizeInputs = FiniteSizeInputs(),
    reconciliation_inefficiency: float = 1.15,
) -> tuple[float, bool]:
    """Finite-size secure fraction, clamped at zero.

    >>> rate, _ = p_sec_finite(1.0, 0.02, FiniteSizeInputs(beta_ec=1e-2, beta_pa=1e-2))
    >>> round(rate, 5)
    0.81734
    """
    _check_prob("p_sift", p_sift)
    leak = finite.leak_ec
    if leak is None:
        leak = reconciliation_inefficiency * binary_entropy(qber)
    if leak < 0 or finite.beta_ec < 0 or finite.beta_pa < 0:
        raise ValueError("finite-size terms must be >= 0")
    raw = p_sift * (1.0 - leak - finite.beta_ec - finite.beta_pa)
    if raw < 0.0:
        return 0.0, True
    return raw, False


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


# ---------------------------------------------------------------------------
# Convention helpers shared by the simulator and this module.

def dark_probability_per_gate(dark_count_rate_cps: float, gate_width_ps: int) -> float:
    """P_dark convention: dark rate integrated over one open gate."""
    return dark_count_rate_cps * gate_width_ps / 1e12


def composite_efficiency(transmittance: float, detector_efficiency: float) -> float:
    """eta convention: channel transmittance times detector efficiency."""
    return transmittance * detector_efficiency


def gate_mean_photon(mean_photon_per_pulse: float, bits_per_frame: int) -> float:
    """mu convention: total signal photons per gate (one pulse per bit slot)."""
    return mean_photon_per_pulse * bits_per_frame


# ---------------------------------------------------------------------------
# Monte Carlo vs analytic comparison.

@dataclass(frozen=True)
class RateInputs:
    """Everything the closed forms need, in per-gate convention."""

    mu: float
    eta: float
    p_dark: float
    opportunity_rate_hz: float = 31.25e6
    hold_off_s: float = 10e-6
    p_b: float = 0.0888
    qber: float | None = None
    reconciliation_inefficiency: float = 1.15
    finite: FiniteSizeInputs = field(default_factory=FiniteSizeInputs)


@dataclass(frozen=True)
class McCounts:
    """Tallies from a simulation run.

    ``n_frames_covered`` is the frame share whose sifted detections landed in
    a completed disclosure block; leftover detections never reach the
    attacker's scoring, so the learning comparison uses this denominator.
    """

    n_frames: int
    n_sift: int
    n_err: int
    n_retained: int = 0
    n_eve_backflash: int = 0
    n_eve_backflash_blocks: int = 0
    n_eve_correct: int = 0
    n_frames_covered: int | None = None


@dataclass(frozen=True)
class RateRow:
    name: str
    analytic: float
    empirical: float | None
    lo: float | None
    hi: float | None
    ok: bool


@dataclass
class RateReport:
    rows: list[RateRow]
    insecure: bool
    insecure_finite: bool

    def row(self, name: str) -> RateRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def all_ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def as_dict(self) -> dict:
        return {
            "rows": [vars(r) for r in self.rows],
            "insecure": self.insecure,
            "insecure_finite": self.insecure_finite,
        }


def count_interval(n: int, p: float) -> tuple[int, int]:
    """Two-sided 99.7% (3-sigma-equivalent) binomial count interval.

    Exact quantiles keep the check honest when the expected count is tiny,
    where a Gaussian 3-sigma band would be meaningless.
    """
    if n <= 0 or p <= 0:
        return 0, 0
    p = min(p, 1.0)
    lo = int(stats.binom.ppf(0.00135, n, p))
    hi = int(stats.binom.ppf(0.99865, n, p))
    return lo, hi


def compare(mc: McCounts, inputs: RateInputs) -> RateReport:
    """Check simulated tallies against the closed forms at 3-sigma coverage."""
    q1 = p_sift_simple(inputs.mu, inputs.eta, inputs.p_dark)
    sift = p_sift_holdoff(inputs.mu, inputs.eta, inputs.p_dark,
                          inputs.opportunity_rate_hz, inputs.hold_off_s)
    err = p_err(inputs.mu, inputs.eta, inputs.p_dark, q1)
    qber = inputs.qber
    if qber is None:
        qber = mc.n_err / mc.n_sift if mc.n_sift else 0.0
    learn = p_learn(inputs.p_b, sift)

    rows = []

    def add_count_row(name: str, analytic_p: float, observed: int, n: int) -> None:
        if n > 0:
            lo, hi = count_interval(n, analytic_p)
            ok = lo <= observed <= hi
            rows.append(RateRow(name, analytic_p, observed / n, lo / n, hi / n, ok))
        else:
            rows.append(RateRow(name, analytic_p, None, None, None, True))

    # The learning form counts leak opportunities (a backflash detection on a
    # sifted click), not the attacker's inference successes; the latter carry
    # window-coverage and boundary effects that the closed form ignores.
    covered = mc.n_frames if mc.n_frames_covered is None else mc.n_frames_covered
    add_count_row("p_sift", sift, mc.n_sift, mc.n_frames)
    add_count_row("p_err", err, mc.n_err, mc.n_sift)
    add_count_row("p_b", inputs.p_b, mc.n_eve_backflash, mc.n_retained)
    add_count_row("p_learn", learn, mc.n_eve_backflash_blocks, covered)

    sec, insecure = p_sec(sift, inputs.p_b, qber, inputs.reconciliation_inefficiency)
    sec_f, insecure_f = p_sec_finite(sift, qber, inputs.finite, inputs.reconciliation_inefficiency)
    rows.append(RateRow("p_sec", sec, None, None, None, True))
    rows.append(RateRow("p_sec_finite", sec_f, None, None, None, True))

    return RateReport(rows=rows, insecure=insecure, insecure_finite=insecure_f)
