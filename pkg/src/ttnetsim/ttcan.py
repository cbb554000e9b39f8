"""Time-triggered CAN: level-2 clock state, system matrix, frame timing.

Local_Time is a fixed-point counter: 24 integer + 3 fractional NTU bits, so
one count is NTU/8 and the counter wraps at 2**27 counts.  All mark values
(sync/ref/master-ref marks) are stored in counts.  One NTU lasts TUR
oscillator periods; TUR is an exact rational, renormalized after each drift
correction so operands stay bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from .kernel import SimTime
from .clocks import MILLION

FRAC_BITS = 3
COUNTER_BITS = 24 + FRAC_BITS
COUNTER_MOD = 1 << COUNTER_BITS
COUNTS_PER_NTU = 1 << FRAC_BITS

# TUR renormalization denominator; error ~2**-33 relative per correction.
TUR_RENORM_DEN = 1 << 32

REFERENCE_CAN_ID = 0  # highest priority on the bus
CAN_ID_BITS = 11
CAN_MAX_ID = (1 << CAN_ID_BITS) - 1

# Standard 11-bit-id data frame, bit-field budget (no stuffing):
# SOF 1 + ID 11 + RTR 1 + IDE 1 + r0 1 + DLC 4 + data 8*L + CRC 15 +
# CRC delim 1 + ACK 1 + ACK delim 1 + EOF 7 = 44 + 8*L, plus 3 bits IFS.
CAN_OVERHEAD_BITS = 44
CAN_IFS_BITS = 3
# Stuffing applies from SOF through CRC (34 + 8*L bits), worst case 1-in-4.
CAN_STUFFABLE_BITS = 34


class CanConfigError(ValueError):
    """Static TT-CAN configuration problem (matrix, ids, windows)."""


def wrap(value: int) -> int:
    return value % COUNTER_MOD


def wrap_forward(a: int, b: int) -> int:
    """Counts from b forward to a, wrap-aware (result in [0, 2**27))."""
    return (a - b) % COUNTER_MOD


def wrap_signed(a: int, b: int) -> int:
    """Shortest signed distance from b to a, in [-2**26, 2**26)."""
    return (a - b + COUNTER_MOD // 2) % COUNTER_MOD - COUNTER_MOD // 2


def ntu_to_counts(ntu) -> int:
    """NTU value (int or Fraction) to whole counter counts (must be exact)."""
    c = Fraction(ntu) * COUNTS_PER_NTU
    if c.denominator != 1:
        raise CanConfigError(f"{ntu} NTU is not a multiple of 1/8 NTU")
    return int(c)


# ---------------------------------------------------------------------------
# Frame timing
# ---------------------------------------------------------------------------

def can_frame_bits(dlc: int, mode: str = "nominal") -> int:
    """Wire bits of a data frame incl. 3-bit interframe space."""
    if not 0 <= dlc <= 8:
        raise ValueError(f"dlc {dlc} outside 0..8")
    bits = CAN_OVERHEAD_BITS + 8 * dlc + CAN_IFS_BITS
    if mode == "worst":
        bits += (CAN_STUFFABLE_BITS + 8 * dlc - 1) // 4
    elif mode != "nominal":
        raise ValueError(f"unknown stuffing mode {mode!r}")
    return bits


def can_frame_duration(dlc: int, bitrate_bps: int, mode: str = "nominal") -> SimTime:
    """Frame wire time in ps at the nominal bit rate."""
    return round(can_frame_bits(dlc, mode) * Fraction(10**12, bitrate_bps))


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

@dataclass
class CanFrame:
    can_id: int
    dlc: int
    payload: bytes = b""
    src: str = ""
    flow_id: str = ""
    seq: int = -1
    born: SimTime = 0  # origin timestamp, rides through encapsulation

    def __post_init__(self):
        if not 0 <= self.can_id <= CAN_MAX_ID:
            raise ValueError(f"can id {self.can_id} outside 11-bit range")
        if not 0 <= self.dlc <= 8:
            raise ValueError(f"dlc {self.dlc} outside 0..8")


@dataclass
class ReferenceMessage:
    """Reference frame payload: master ref mark, resync gap, cycle index."""

    master_ref_mark: int  # counts, wrapped
    t_gap: int = 0        # counts, signed; 0 for standalone masters
    cycle_index: int = 0

    def to_frame(self, src: str) -> CanFrame:
        # 8-byte payload: mark(4) gap(2, signed) cycle(1) flags(1).
        body = (wrap(self.master_ref_mark).to_bytes(4, "big")
                + (self.t_gap & 0xFFFF).to_bytes(2, "big")
                + bytes([self.cycle_index & 0xFF, 0]))
        return CanFrame(REFERENCE_CAN_ID, 8, body, src=src)

    @classmethod
    def from_frame(cls, frame: CanFrame) -> "ReferenceMessage":
        if frame.can_id != REFERENCE_CAN_ID or frame.dlc != 8:
            raise CanConfigError("not a reference frame")
        mark = int.from_bytes(frame.payload[0:4], "big")
        gap = int.from_bytes(frame.payload[4:6], "big")
        if gap >= 1 << 15:
            gap -= 1 << 16
        return cls(mark, gap, frame.payload[6])


# ---------------------------------------------------------------------------
# Node timing state and mark operations
# ---------------------------------------------------------------------------

@dataclass
class TtcanNodeState:
    """Level-2 timing state of one bus node (marks in counter counts)."""

    sync_mark: int = 0
    ref_mark: int = 0
    ref_mark_prev: int = 0
    master_ref_mark: int = 0
    master_ref_mark_prev: int = 0
    local_offset: int = 0
    cycle_index: int = 0
    refs_seen: int = 0


def capture_sync_mark(state: TtcanNodeState, local_time: int,
                      is_reference: bool) -> None:
    """Latch local time at the SOF sample point of a frame.

    For a reference message the sync mark becomes the new ref mark and the
    previous ref mark is kept for the drift-factor ratio.
    """
    state.sync_mark = wrap(local_time)
    if is_reference:
        state.ref_mark_prev = state.ref_mark
        state.ref_mark = state.sync_mark


def cycle_time(local_time: int, ref_mark: int) -> int:
    """Counts since the cycle reference (wrap-aware, always >= 0)."""
    return wrap_forward(local_time, ref_mark)


def global_time(local_time: int, local_offset: int) -> int:
    return wrap(local_time + local_offset)


def local_offset(ref_mark: int, master_ref_mark: int) -> int:
    """Offset that maps local time onto the master timebase."""
    return wrap(master_ref_mark - ref_mark)


def drift_factor(ref_mark: int, ref_mark_prev: int,
                 master_ref_mark: int, master_ref_mark_prev: int) -> Fraction:
    """Ratio of local to master elapsed counts between consecutive references."""
    num = wrap_forward(ref_mark, ref_mark_prev)
    den = wrap_forward(master_ref_mark, master_ref_mark_prev)
    if den == 0:
        raise ZeroDivisionError("master ref marks did not advance")
    return Fraction(num, den)


def renormalize_tur(tur: Fraction) -> Fraction:
    """Bound TUR's denominator (round to nearest multiple of 2**-32)."""
    scaled = tur * TUR_RENORM_DEN
    return Fraction(int(scaled + Fraction(1, 2)), TUR_RENORM_DEN)


def apply_drift_correction(tur: Fraction, df: Fraction,
                           smoothing: Fraction = Fraction(1)) -> Fraction:
    """New TUR = df * TUR (optionally blended; smoothing=1 is full correction)."""
    if df <= 0:
        raise ValueError("drift factor must be positive")
    factor = smoothing * df + (1 - smoothing)
    if factor == 1:
        return tur  # no-op update: don't quantize the configured value
    return renormalize_tur(tur * factor)


# ---------------------------------------------------------------------------
# System matrix
# ---------------------------------------------------------------------------

class WindowKind(Enum):
    EXCLUSIVE = "exclusive"
    ARBITRATION = "arbitration"
    FREE = "free"


@dataclass(frozen=True)
class TimeWindow:
    kind: WindowKind
    start_ntu: int
    length_ntu: int
    owner: Optional[int] = None  # message id, exclusive windows only

    @property
    def end_ntu(self) -> int:
        return self.start_ntu + self.length_ntu


@dataclass(frozen=True)
class SystemMatrix:
    """Rows of basic cycles; the reference window opens every row at offset 0."""

    t_cycle_ntu: int
    ref_window_ntu: int
    rows: tuple[tuple[TimeWindow, ...], ...]

    @property
    def n_rows(self) -> int:
        return len(self.rows)


def build_system_matrix(t_cycle_ntu: int, ref_window_ntu: int,
                        rows: list[list[TimeWindow]]) -> SystemMatrix:
    """Validate and freeze a system matrix.

    The reference window is inserted at offset 0 of every row; user windows
    must not overlap it, each other, or the cycle end.  Exclusive windows in
    one row must have distinct owners (duplicate ids are a config error).
    """
    if t_cycle_ntu <= 0:
        raise CanConfigError("t_cycle must be positive")
    if not 0 < ref_window_ntu <= t_cycle_ntu:
        raise CanConfigError("reference window must fit the basic cycle")
    if not rows:
        raise CanConfigError("matrix needs at least one row")
    frozen = []
    for r, row in enumerate(rows):
        ref = TimeWindow(WindowKind.EXCLUSIVE, 0, ref_window_ntu,
                         owner=REFERENCE_CAN_ID)
        ordered = sorted(row, key=lambda w: w.start_ntu)
        prev_end = ref.end_ntu
        for w in ordered:
            if w.length_ntu <= 0:
                raise CanConfigError(f"row {r}: window length must be positive")
            if w.start_ntu < prev_end:
                raise CanConfigError(
                    f"row {r}: window at {w.start_ntu} NTU overlaps previous")
            if w.end_ntu > t_cycle_ntu:
                raise CanConfigError(
                    f"row {r}: window at {w.start_ntu} NTU exceeds the cycle")
            if w.kind is WindowKind.EXCLUSIVE:
                if w.owner is None:
                    raise CanConfigError(
                        f"row {r}: exclusive window at {w.start_ntu} has no owner")
                if w.owner == REFERENCE_CAN_ID:
                    raise CanConfigError(
                        f"row {r}: owner id {REFERENCE_CAN_ID} is reserved "
                        f"for the reference message")
            elif w.owner is not None:
                raise CanConfigError(
                    f"row {r}: only exclusive windows have owners")
            prev_end = w.end_ntu
        frozen.append(tuple([ref] + ordered))
    return SystemMatrix(t_cycle_ntu, ref_window_ntu, tuple(frozen))


def window_at(matrix: SystemMatrix, row: int, cycle_counts: int) -> Optional[TimeWindow]:
    """Window active at a cycle-time position (counter counts), if any."""
    for w in matrix.rows[row % matrix.n_rows]:
        if w.start_ntu * COUNTS_PER_NTU <= cycle_counts < w.end_ntu * COUNTS_PER_NTU:
            return w
    return None


def arbitrate(contenders: list[CanFrame]) -> CanFrame:
    """CSMA/CR outcome: the lowest id wins; duplicate ids are a config error."""
    if not contenders:
        raise ValueError("nothing to arbitrate")
    ids = [f.can_id for f in contenders]
    if len(set(ids)) != len(ids):
        dup = sorted(i for i in ids if ids.count(i) > 1)[0]
        raise CanConfigError(f"duplicate can id {dup} contending in one window")
    return min(contenders, key=lambda f: f.can_id)


# ---------------------------------------------------------------------------
# Counter runtime (true-timeline view of one node's NTU counter)
# ---------------------------------------------------------------------------

class NtuCounter:
    """Local_Time counter driven by a drifting oscillator through TUR.

    One count (NTU/8) lasts TUR * t_sys_actual / 8 true picoseconds, kept as
    the exact rational p/q.  The internal count is unbounded; reads are
    wrapped to the 27-bit counter.  Corrections re-anchor at the correction
    instant, preserving the sub-count remainder (writing the counter register
    does not reset the prescaler).
    """

    __slots__ = ("t_sys_ps", "drift_ppm", "tur", "p", "q",
                 "anchor_true", "anchor_count", "anchor_rem")

    def __init__(self, t_sys_ps: int, drift_ppm, tur: Fraction,
                 start_true: SimTime = 0, start_count: int = 0,
                 phase_rem_unit: Fraction = Fraction(0)):
        if tur <= 1:
            raise CanConfigError("TUR must exceed 1")
        self.t_sys_ps = t_sys_ps
        self.drift_ppm = Fraction(drift_ppm)
        self.tur = tur
        self.anchor_true: SimTime = start_true
        self.anchor_count = start_count
        self._set_step()
        # phase_rem_unit is the already-elapsed fraction of the current count.
        self.anchor_rem = int(phase_rem_unit * self.p)

    def _set_step(self) -> None:
        t_sys_actual = Fraction(self.t_sys_ps * MILLION, MILLION + self.drift_ppm)
        step = self.tur * t_sys_actual / COUNTS_PER_NTU
        self.p = step.numerator
        self.q = step.denominator

    @property
    def ntu_true_ps(self) -> Fraction:
        """Effective NTU length on the true timeline."""
        return Fraction(self.p, self.q) * COUNTS_PER_NTU

    def count_at(self, t: SimTime) -> int:
        """Unbounded internal count at true time t (>= anchor)."""
        dt = t - self.anchor_true
        if dt < 0:
            raise ValueError("querying before counter anchor")
        return self.anchor_count + (self.anchor_rem + dt * self.q) // self.p

    def local_time(self, t: SimTime) -> int:
        """Wrapped 27-bit Local_Time at true time t."""
        return wrap(self.count_at(t))

    def true_of_count(self, target: int) -> SimTime:
        """Earliest true instant at which the internal count reaches target."""
        num = (target - self.anchor_count) * self.p - self.anchor_rem
        if num <= 0:
            return self.anchor_true
        return self.anchor_true + -(-num // self.q)

    def advance_anchor(self, t: SimTime) -> None:
        dt = t - self.anchor_true
        if dt < 0:
            raise ValueError("anchor may only move forward")
        total = self.anchor_rem + dt * self.q
        self.anchor_count += total // self.p
        self.anchor_rem = total % self.p
        self.anchor_true = t

    def adjust_counts(self, t: SimTime, delta: int) -> None:
        """Local_Time += delta at true time t (resync gap, adoption)."""
        self.advance_anchor(t)
        self.anchor_count += delta

    def set_local_time(self, t: SimTime, wrapped_value: int) -> None:
        """Write the counter register (nearest unwrapped interpretation)."""
        self.advance_anchor(t)
        self.anchor_count += wrap_signed(wrapped_value, wrap(self.anchor_count))

    def set_tur(self, t: SimTime, new_tur: Fraction) -> None:
        """Rate correction; the sub-count position carries over by fraction."""
        if new_tur <= 1:
            raise CanConfigError("TUR must exceed 1")
        self.advance_anchor(t)
        old_p = self.p
        self.tur = new_tur
        self._set_step()
        self.anchor_rem = self.anchor_rem * self.p // old_p
