"""Oscillator and local-clock models.

Every node owns one oscillator with a constant drift (ppm, no wander): the
actual tick period is t_sys_nominal / (1 + drift_ppm * 1e-6), so a +200 ppm
oscillator produces more ticks per true second.  All arithmetic is exact
rational; phase is carried so that splitting an interval never loses ticks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

from .kernel import SimTime

MILLION = 1_000_000


@dataclass(frozen=True)
class OscillatorState:
    """Free-running oscillator: nominal period, drift, fractional-tick phase."""

    t_sys_ps: int
    drift_ppm: Fraction = Fraction(0)
    phase: Fraction = Fraction(0)  # elapsed fraction of the current tick, [0,1)

    def __post_init__(self):
        if self.t_sys_ps <= 0:
            raise ValueError("t_sys must be positive")
        if not 0 <= self.phase < 1:
            raise ValueError("phase must lie in [0,1)")

    @property
    def rate(self) -> Fraction:
        """Ticks per true picosecond."""
        return Fraction(MILLION + Fraction(self.drift_ppm), MILLION * self.t_sys_ps)

    @property
    def actual_period_ps(self) -> Fraction:
        """True duration of one tick: t_sys / (1 + drift_ppm * 1e-6)."""
        return 1 / self.rate


def ticks_elapsed(osc: OscillatorState, true_dt: SimTime) -> tuple[int, OscillatorState]:
    """Whole ticks in a true interval, with the residual phase carried.

    Linearity is exact: summing the results of consecutive calls equals one
    call over the combined interval.
    """
    if true_dt < 0:
        raise ValueError("negative interval")
    total = osc.phase + true_dt * osc.rate
    ticks = int(total)  # floor; total >= 0
    return ticks, replace(osc, phase=total - ticks)


def true_duration_of_ticks(osc: OscillatorState, n: int) -> SimTime:
    """True picoseconds spanned by n ticks, rounded to the nearest ps."""
    if n < 0:
        raise ValueError("negative tick count")
    exact = n / osc.rate
    return int(exact + Fraction(1, 2))


class TickClock:
    """Anchored integer-math view of an oscillator on the true timeline.

    Tick period is the exact rational p/q ps.  Used where the simulation needs
    the inverse map (true instant when a tick count is reached), which the
    functional OscillatorState API does not provide.
    """

    __slots__ = ("p", "q", "anchor_true", "anchor_ticks", "anchor_rem")

    def __init__(self, t_sys_ps: int, drift_ppm, start_true: SimTime = 0,
                 phase_rem: int = 0):
        period = Fraction(t_sys_ps * MILLION, MILLION + Fraction(drift_ppm))
        self.p = period.numerator
        self.q = period.denominator
        self.anchor_true: SimTime = start_true
        self.anchor_ticks = 0
        # Sub-tick position scaled so a full tick is p units; [0, p).
        self.anchor_rem = phase_rem % self.p

    def ticks_at(self, t: SimTime) -> int:
        """Tick count at true time t (t may not precede the anchor)."""
        dt = t - self.anchor_true
        if dt < 0:
            raise ValueError("querying before clock anchor")
        return self.anchor_ticks + (self.anchor_rem + dt * self.q) // self.p

    def true_of_tick(self, n: int) -> SimTime:
        """Earliest integer true time at which the count reaches n."""
        num = (n - self.anchor_ticks) * self.p - self.anchor_rem
        if num <= 0:
            return self.anchor_true
        return self.anchor_true + -(-num // self.q)

    def advance_anchor(self, t: SimTime) -> None:
        """Move the anchor forward to true time t (keeps values exact)."""
        dt = t - self.anchor_true
        if dt < 0:
            raise ValueError("anchor may only move forward")
        total = self.anchor_rem + dt * self.q
        self.anchor_ticks += total // self.p
        self.anchor_rem = total % self.p
        self.anchor_true = t
