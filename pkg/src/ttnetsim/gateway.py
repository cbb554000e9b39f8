"""Backbone/bus clock coupling and CAN-in-Ethernet packing.

A gateway owns one oscillator.  Its backbone side runs the corrected
Ethernet clock; its bus side runs the NTU counter it masters.  Once per
basic cycle the gateway realigns the counter to the backbone timebase
(phase gap + rate factor), so every bus it masters ticks in backbone time.
Bus slaves adopt the master's time from each reference frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .ttcan import (
    COUNTS_PER_NTU,
    CanConfigError,
    CanFrame,
    apply_drift_correction,
    wrap,
    wrap_forward,
    wrap_signed,
)

ENCAP_HEADER_BYTES = 1       # tuple count
ENCAP_TUPLE_OVERHEAD = 4     # bus(1) id(2) dlc(1)


def counts_of_ps_nominal(dt_ps: int, ntu_nominal_ps: int) -> int:
    """Counter counts a drift-free, uncorrected counter accrues in dt_ps
    (round half up).  Also maps a backbone-clock reading to the counter
    value an epoch-aligned ideal counter would show."""
    if dt_ps < 0:
        raise ValueError("negative duration")
    num = dt_ps * COUNTS_PER_NTU
    return (2 * num + ntu_nominal_ps) // (2 * ntu_nominal_ps)


# ---------------------------------------------------------------------------
# Gateway-side resync (bus master)
# ---------------------------------------------------------------------------

@dataclass
class MasterSyncState:
    """Bus-master coupling state; marks are wrapped counter values."""

    tur: Fraction
    smoothing: Fraction = Fraction(1)
    ideal_prev: Optional[int] = None  # counter value after the last realign


@dataclass(frozen=True)
class MasterResync:
    t_gap: int        # counts added to Local_Time (signed)
    df: Fraction      # measured local/backbone rate ratio
    new_tur: Fraction
    mrm: int          # reference mark announced downstream (= ideal)


def master_cycle_resync(state: MasterSyncState, lt_end: int,
                        ideal: int) -> MasterResync:
    """End of basic cycle: snap the counter onto the backbone grid.

    lt_end  -- counter reading at the cycle boundary, before adjustment
    ideal   -- epoch-aligned counter value for the backbone clock reading

    The counter register jumps by t_gap (so the post-gap value equals
    ideal), and the rate is scaled by the drift observed since the last
    boundary.  Because each boundary re-anchors the mark to the ideal
    grid, consecutive marks differ by exactly the backbone-measured
    cycle length; slaves can difference them without seeing the gaps.
    """
    ideal = wrap(ideal)
    t_gap = wrap_signed(ideal, lt_end)
    if state.ideal_prev is None:
        df = Fraction(1)
        new_tur = state.tur
    else:
        actual = wrap_forward(lt_end, state.ideal_prev)
        backbone = wrap_forward(ideal, state.ideal_prev)
        if actual == 0 or backbone == 0:
            raise CanConfigError("bus counter or backbone clock stalled")
        df = Fraction(actual, backbone)
        new_tur = apply_drift_correction(state.tur, df, state.smoothing)
    state.tur = new_tur
    state.ideal_prev = ideal
    return MasterResync(t_gap, df, new_tur, ideal)


# ---------------------------------------------------------------------------
# Slave time adoption (gateway-mastered bus)
# ---------------------------------------------------------------------------

@dataclass
class SlaveSyncState:
    """Time-adopting slave state.  Progression is measured between the END
    instants of consecutive reference frames: the previous adoption wrote
    the counter at a frame end, and the next reference is read at its end,
    so numerator and denominator cover the same true interval."""

    tur: Fraction
    smoothing: Fraction = Fraction(1)
    adopted_prev: Optional[int] = None
    mrm_prev: Optional[int] = None


@dataclass(frozen=True)
class SlaveAdoption:
    df: Fraction
    new_tur: Fraction
    adopted_lt: int   # value written into Local_Time at the frame end


def slave_on_reference(state: SlaveSyncState, lt_end: int, mrm: int,
                       t_gap: int, tau_counts: int) -> SlaveAdoption:
    """Process a reference frame at its end-of-frame instant.

    lt_end     -- slave counter reading at the frame end, pre-adoption
    mrm        -- master reference mark from the payload
    t_gap      -- realignment gap from the same payload
    tau_counts -- frame duration + propagation, in nominal counts

    The master's mark deltas sit on the backbone grid because each
    realignment absorbs the gap; subtracting the in-band t_gap recovers
    the master counter's raw progression, which is what the slave's own
    raw count is compared against.
    """
    adopted = wrap(mrm + tau_counts)
    if state.adopted_prev is None or state.mrm_prev is None:
        df = Fraction(1)
        new_tur = state.tur
    else:
        own = wrap_forward(lt_end, state.adopted_prev)
        master = wrap_forward(mrm, state.mrm_prev) - t_gap
        if own <= 0 or master <= 0:
            raise CanConfigError("reference interval measured as zero")
        df = Fraction(own, master)
        new_tur = apply_drift_correction(state.tur, df, state.smoothing)
    state.tur = new_tur
    state.adopted_prev = adopted
    state.mrm_prev = wrap(mrm)
    return SlaveAdoption(df, new_tur, adopted)


# ---------------------------------------------------------------------------
# CAN-in-Ethernet packing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncapTuple:
    """One bus frame riding inside an Ethernet payload."""

    bus: int
    frame: CanFrame

    @property
    def wire_bytes(self) -> int:
        return ENCAP_TUPLE_OVERHEAD + self.frame.dlc


def encap_capacity(payload_bytes: int, dlc: int = 8) -> int:
    """How many fixed-size tuples fit in one Ethernet payload."""
    return (payload_bytes - ENCAP_HEADER_BYTES) // (ENCAP_TUPLE_OVERHEAD + dlc)


def select_for_encap(pending: list[EncapTuple],
                     payload_bytes: int) -> tuple[list[EncapTuple], list[EncapTuple]]:
    """Greedy FIFO fill of one payload; returns (taken, leftover)."""
    room = payload_bytes - ENCAP_HEADER_BYTES
    taken: list[EncapTuple] = []
    i = 0
    while i < len(pending) and pending[i].wire_bytes <= room:
        room -= pending[i].wire_bytes
        taken.append(pending[i])
        i += 1
    return taken, pending[i:]


def pack_tuples(tuples: list[EncapTuple], payload_bytes: int) -> bytes:
    body = bytearray([len(tuples)])
    for t in tuples:
        if not 0 <= t.bus <= 255:
            raise CanConfigError(f"bus index {t.bus} outside one byte")
        body.append(t.bus)
        body += t.frame.can_id.to_bytes(2, "big")
        body.append(t.frame.dlc)
        body += t.frame.payload[:t.frame.dlc].ljust(t.frame.dlc, b"\0")
    if len(body) > payload_bytes:
        raise CanConfigError(
            f"{len(body)} B of tuples exceed the {payload_bytes} B payload")
    return bytes(body)


def unpack_tuples(data: bytes) -> list[tuple[int, int, int, bytes]]:
    """Inverse of pack_tuples: (bus, can id, dlc, payload) per tuple."""
    n = data[0]
    out = []
    pos = 1
    for _ in range(n):
        bus = data[pos]
        can_id = int.from_bytes(data[pos + 1:pos + 3], "big")
        dlc = data[pos + 3]
        payload = data[pos + 4:pos + 4 + dlc]
        if len(payload) != dlc:
            raise CanConfigError("truncated tuple payload")
        out.append((bus, can_id, dlc, payload))
        pos += 4 + dlc
    return out
