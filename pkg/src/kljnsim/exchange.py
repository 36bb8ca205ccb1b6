"""Per-bit KLJN exchange: resistor choice, classification, discard, monitor.

Each bit period both parties connect the resistor encoding their random bit
(0 -> r_low, 1 -> r_high), the loop runs for ``samples_per_bit`` samples,
and both ends estimate the wire spectra.  Like-bit periods (LL, HH) sit at
singular noise levels and are discarded; opposite-bit periods land on the
shared MID level, indistinguishable from outside, and yield one secure bit
after the pre-agreed inversion (end A inverts).

Classification places the measured (log s_u, log s_i) point against the
three analytic level pairs; using both coordinates separates adjacent
levels ~3x better than either alone, since the weak voltage gap (LL vs MID)
pairs with the strong current gap and vice versa.

The active-attack defense ("monitor") compares the instantaneous voltage
and current values seen by the two ends over an authenticated channel; any
per-sample difference beyond a tolerance raises an alarm and the bit is
discarded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .noise import (
    NoiseConfig,
    SpectraEstimate,
    WireTrace,
    compose_loop,
    generate_noise,
    johnson_psd,
    measure_spectra,
    parallel_resistance,
)
from .privacy import BitString

# Adversary hook: given the two generator traces and resistances, return the
# wire views seen by end A and end B.  ``None`` means an ideal shared wire.
AdversaryHook = Callable[
    [np.ndarray, np.ndarray, float, float, NoiseConfig],
    tuple[WireTrace, WireTrace],
]

# Alarmed periods tolerated before an exchange is declared hostile.
ALARM_ABORT_COUNT = 3

MONITOR_TOLERANCE = 1e-6  # relative to signal RMS


class UnclassifiableLevelError(ValueError):
    """Measured spectra fall outside every level's acceptance band."""


class ChannelCompromisedError(RuntimeError):
    """Alarm rate during an exchange exceeded the abort threshold."""


class LoopClass(enum.Enum):
    LL = "LL"
    MID = "MID"  # LH or HL; physically indistinguishable
    HH = "HH"

    def __str__(self) -> str:  # keeps CLI records compact
        return self.value


@dataclass(frozen=True)
class MonitorReport:
    """Result of the two-end instantaneous comparison."""

    max_abs_voltage_diff: float
    max_abs_current_diff: float
    alarm: bool


@dataclass
class BitExchangeRecord:
    """Everything one bit period produced."""

    alice_bit: int
    bob_bit: int
    trace: WireTrace                      # end A's view
    spectra_alice: SpectraEstimate
    spectra_bob: SpectraEstimate
    loop_class: Optional[LoopClass]       # None when unclassifiable
    retained: bool
    alarm: bool
    monitor: MonitorReport
    bob_trace: Optional[WireTrace] = None  # set only when views differ


@dataclass
class ExchangeStats:
    periods_run: int = 0
    retained: int = 0
    alarms: int = 0
    anomalies: int = 0  # unclassifiable periods

    @property
    def discard_fraction(self) -> float:
        if self.periods_run == 0:
            return 0.0
        return 1.0 - self.retained / self.periods_run


def class_levels(cfg: NoiseConfig) -> dict[LoopClass, SpectraEstimate]:
    """Analytic (s_u, s_i) level pair for each loop class."""
    four_kt = 4.0 * cfg.boltzmann_k * cfg.t_eff
    pairs = {
        LoopClass.LL: (cfg.r_low, cfg.r_low),
        LoopClass.MID: (cfg.r_low, cfg.r_high),
        LoopClass.HH: (cfg.r_high, cfg.r_high),
    }
    return {
        cls: SpectraEstimate(
            s_u=four_kt * parallel_resistance(ra, rb),
            s_i=four_kt / (ra + rb),
            n_samples=0,
        )
        for cls, (ra, rb) in pairs.items()
    }


def _log_point(s: SpectraEstimate) -> tuple[float, float]:
    return (math.log(s.s_u), math.log(s.s_i))


def classify_level(s: SpectraEstimate, cfg: NoiseConfig) -> LoopClass:
    """Assign measured spectra to the nearest analytic level.

    Distance is Euclidean in (log s_u, log s_i).  A measurement farther
    from its nearest level than ``classify_margin`` times that level's gap
    to its own nearest neighbor is rejected as unclassifiable.
    """
    if s.s_u <= 0:
        raise ValueError(f"s_u must be positive to classify, got {s.s_u}")
    if s.s_i <= 0:
        raise ValueError(f"s_i must be positive to classify, got {s.s_i}")
    levels = class_levels(cfg)
    pts = {cls: _log_point(lv) for cls, lv in levels.items()}
    mx, my = _log_point(s)
    dist = {
        cls: math.hypot(mx - px, my - py) for cls, (px, py) in pts.items()
    }
    best = min(dist, key=dist.get)
    gap = min(
        math.hypot(pts[best][0] - px, pts[best][1] - py)
        for cls, (px, py) in pts.items()
        if cls is not best
    )
    if dist[best] > cfg.classify_margin * gap:
        raise UnclassifiableLevelError(
            f"spectra {(s.s_u, s.s_i)} lie {dist[best]:.3f} log-units from "
            f"nearest level {best}, beyond margin "
            f"{cfg.classify_margin * gap:.3f}")
    return best


def monitor_compare(end_a_view: WireTrace, end_b_view: WireTrace,
                    tolerance: float = MONITOR_TOLERANCE) -> MonitorReport:
    """Compare the instantaneous values seen by the two ends.

    Alarm iff any per-sample absolute difference in voltage or current
    exceeds ``tolerance`` times the RMS of the respective signal (RMS
    pooled over both views).  A shared ideal wire gives exactly zero
    differences, so the honest-channel false-alarm rate is structurally
    zero.
    """
    if len(end_a_view) != len(end_b_view):
        raise ValueError("monitor views must have equal length")
    dv = np.abs(end_a_view.voltage - end_b_view.voltage)
    di = np.abs(end_a_view.current - end_b_view.current)
    rms_v = math.sqrt(0.5 * (np.mean(end_a_view.voltage ** 2)
                             + np.mean(end_b_view.voltage ** 2)))
    rms_i = math.sqrt(0.5 * (np.mean(end_a_view.current ** 2)
                             + np.mean(end_b_view.current ** 2)))
    max_dv = float(dv.max())
    max_di = float(di.max())
    alarm = bool(max_dv > tolerance * rms_v or max_di > tolerance * rms_i)
    return MonitorReport(max_abs_voltage_diff=max_dv,
                         max_abs_current_diff=max_di,
                         alarm=alarm)


def first_divergence_index(end_a_view: WireTrace, end_b_view: WireTrace,
                           tolerance: float = MONITOR_TOLERANCE,
                           ) -> Optional[int]:
    """Index of the first sample whose two-end difference breaks tolerance.

    Returns None when no sample does (no alarm).  Used by attack harnesses
    to report how quickly an intrusion is caught.
    """
    if len(end_a_view) != len(end_b_view):
        raise ValueError("monitor views must have equal length")
    dv = np.abs(end_a_view.voltage - end_b_view.voltage)
    di = np.abs(end_a_view.current - end_b_view.current)
    rms_v = math.sqrt(0.5 * (np.mean(end_a_view.voltage ** 2)
                             + np.mean(end_b_view.voltage ** 2)))
    rms_i = math.sqrt(0.5 * (np.mean(end_a_view.current ** 2)
                             + np.mean(end_b_view.current ** 2)))
    hits = np.nonzero((dv > tolerance * rms_v) | (di > tolerance * rms_i))[0]
    return int(hits[0]) if hits.size else None


def _bit_resistance(bit: int, cfg: NoiseConfig) -> float:
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit}")
    return cfg.r_high if bit else cfg.r_low


def run_bit_period(alice_bit: int, bob_bit: int, cfg: NoiseConfig, seed,
                   adversary: Optional[AdversaryHook] = None,
                   ) -> BitExchangeRecord:
    """Simulate one full bit period.

    Maps bits to resistors at both ends, draws two independent noise
    sequences, solves the loop (or lets the adversary hook supply the two
    ends' views), measures and classifies at both ends, and runs the
    monitor comparison.  Pure function of (inputs, seed).
    """
    r_a = _bit_resistance(alice_bit, cfg)
    r_b = _bit_resistance(bob_bit, cfg)
    rng = np.random.default_rng(seed)
    u_a = generate_noise(johnson_psd(r_a, cfg), cfg, rng)
    u_b = generate_noise(johnson_psd(r_b, cfg), cfg, rng)

    if adversary is None:
        trace = compose_loop(u_a, u_b, r_a, r_b, cfg.sample_rate)
        view_a = view_b = trace
    else:
        view_a, view_b = adversary(u_a, u_b, r_a, r_b, cfg)

    spectra_a = measure_spectra(view_a, cfg)
    spectra_b = spectra_a if view_b is view_a else measure_spectra(view_b,
                                                                   cfg)

    # An unclassifiable measurement (or, under an adversary, disagreeing
    # end classifications) leaves loop_class None: discarded, logged as an
    # anomaly by the exchange loop.
    try:
        class_a = classify_level(spectra_a, cfg)
    except UnclassifiableLevelError:
        class_a = None
    if view_b is view_a:
        class_b = class_a
    else:
        try:
            class_b = classify_level(spectra_b, cfg)
        except UnclassifiableLevelError:
            class_b = None

    monitor = monitor_compare(view_a, view_b)
    loop_class = class_a if class_a is class_b else None
    retained = (loop_class is LoopClass.MID) and not monitor.alarm
    return BitExchangeRecord(
        alice_bit=alice_bit,
        bob_bit=bob_bit,
        trace=view_a,
        spectra_alice=spectra_a,
        spectra_bob=spectra_b,
        loop_class=loop_class,
        retained=retained,
        alarm=monitor.alarm,
        monitor=monitor,
        bob_trace=None if view_b is view_a else view_b,
    )


def exchange_key(target_len: int, cfg: NoiseConfig, seed,
                 adversary: Optional[AdversaryHook] = None,
                 bit_source: Optional[
                     Callable[[np.random.Generator], tuple[int, int]]] = None,
                 record_sink: Optional[
                     Callable[[BitExchangeRecord], None]] = None,
                 ) -> tuple[BitString, BitString, ExchangeStats]:
    """Run bit periods until ``target_len`` secure bits are retained.

    Both ends draw independent uniform bits each period (override with
    ``bit_source`` for scripted scenarios).  End A inverts her retained
    bits (the pre-agreed side), so both returned keys are identical.
    ``record_sink`` receives every period's record as it happens (the
    card protocol collects the monitor data to authenticate this way).

    Raises
    ------
    ChannelCompromisedError
        Once ALARM_ABORT_COUNT alarmed periods accumulate.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    bit_rng_seed, noise_seed = ss.spawn(2)
    bit_rng = np.random.default_rng(bit_rng_seed)
    noise_rng = np.random.default_rng(noise_seed)
    if bit_source is None:
        def bit_source(rng):
            return int(rng.integers(0, 2)), int(rng.integers(0, 2))

    alice_bits: list[int] = []
    bob_bits: list[int] = []
    stats = ExchangeStats()
    max_periods = 64 * target_len + 1024  # generous; expected use is ~2x
    while stats.retained < target_len:
        if stats.periods_run >= max_periods:
            raise RuntimeError(
                f"exchange did not converge within {max_periods} periods")
        a_bit, b_bit = bit_source(bit_rng)
        rec = run_bit_period(a_bit, b_bit, cfg, noise_rng,
                             adversary=adversary)
        stats.periods_run += 1
        if record_sink is not None:
            record_sink(rec)
        if rec.alarm:
            stats.alarms += 1
            if stats.alarms >= ALARM_ABORT_COUNT:
                raise ChannelCompromisedError(
                    f"{stats.alarms} alarms in {stats.periods_run} periods")
            continue
        if rec.loop_class is None:
            stats.anomalies += 1
            continue
        if rec.retained:
            stats.retained += 1
            alice_bits.append(1 - rec.alice_bit)  # pre-agreed inversion
            bob_bits.append(rec.bob_bit)

    alice_key = BitString(np.array(alice_bits, dtype=np.uint8), "raw_kljn")
    bob_key = BitString(np.array(bob_bits, dtype=np.uint8), "raw_kljn")
    return alice_key, bob_key, stats
