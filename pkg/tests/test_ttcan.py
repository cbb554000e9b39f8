"""TT-CAN protocol units: frame timing oracles, marks, drift factor,
counter wrap vs an unbounded oracle, system matrix, arbitration."""

import random
from fractions import Fraction

import pytest

from ttnetsim.kernel import PS_PER_US, PS_PER_S
from ttnetsim import ttcan
from ttnetsim.ttcan import (CanConfigError, CanFrame, NtuCounter,
                            ReferenceMessage, SystemMatrix, TimeWindow,
                            TtcanNodeState, WindowKind, arbitrate,
                            apply_drift_correction, build_system_matrix,
                            can_frame_bits, can_frame_duration,
                            capture_sync_mark, cycle_time, drift_factor,
                            global_time, local_offset, renormalize_tur,
                            window_at, wrap, wrap_forward, wrap_signed,
                            COUNTER_MOD, COUNTS_PER_NTU)


# --- frame timing ----------------------------------------------------------

def test_frame_bits_field_sum_oracle():
    # SOF+ID+RTR+IDE+r0+DLC+CRC+delims+ACK+EOF = 44 bits of overhead.
    field_sum = 1 + 11 + 1 + 1 + 1 + 4 + 15 + 1 + 1 + 1 + 7
    assert field_sum == 44
    for dlc in range(9):
        assert can_frame_bits(dlc) == field_sum + 8 * dlc + 3


def test_8_byte_frame_at_1mbps_is_111_us():
    assert can_frame_bits(8) == 111
    assert can_frame_duration(8, 1_000_000) == 111 * PS_PER_US


def test_0_byte_frame_is_47_bits():
    assert can_frame_bits(0) == 47
    assert can_frame_duration(0, 1_000_000) == 47 * PS_PER_US


def test_worst_case_stuffing_exceeds_nominal_and_is_monotonic():
    prev = 0
    for dlc in range(9):
        worst = can_frame_bits(dlc, "worst")
        assert worst > can_frame_bits(dlc)
        assert worst > prev
        prev = worst
    # 8-byte frame: 34+64 stuffable bits -> floor(97/4)=24 stuff bits.
    assert can_frame_bits(8, "worst") == 111 + 24


def test_bad_dlc_and_mode_rejected():
    with pytest.raises(ValueError):
        can_frame_bits(9)
    with pytest.raises(ValueError):
        can_frame_bits(4, "pessimal")


# --- wrap arithmetic vs unbounded oracle -----------------------------------

def test_counter_wrap_matches_unbounded_oracle_100_cases():
    # Random mark walks; wrapped differences must equal the unbounded ones
    # whenever the true distance fits the counter's range.
    rng = random.Random(23)
    for case in range(100):
        unbounded = rng.randrange(0, 10**15)
        wrapped = wrap(unbounded)
        for _ in range(20):
            step = rng.randrange(0, COUNTER_MOD - 1)
            new_unbounded = unbounded + step
            new_wrapped = wrap(new_unbounded)
            assert wrap_forward(new_wrapped, wrapped) == step, f"case {case}"
            assert cycle_time(new_wrapped, wrapped) == step
            signed = rng.randrange(-(COUNTER_MOD // 2), COUNTER_MOD // 2)
            assert wrap_signed(wrap(unbounded + signed), wrapped) == signed
            unbounded, wrapped = new_unbounded, new_wrapped


def test_global_time_wraps():
    lt = COUNTER_MOD - 5
    assert global_time(lt, 10) == 5
    assert global_time(5, -10 % COUNTER_MOD) == COUNTER_MOD - 5


def test_local_offset_maps_local_onto_master():
    rng = random.Random(3)
    for _ in range(100):
        master = rng.randrange(COUNTER_MOD)
        local = rng.randrange(COUNTER_MOD)
        off = local_offset(local, master)
        assert global_time(local, off) == master


# --- marks and drift factor -------------------------------------------------

def test_capture_sync_mark_shifts_ref_history_only_for_references():
    st = TtcanNodeState()
    capture_sync_mark(st, 1000, is_reference=False)
    assert (st.sync_mark, st.ref_mark, st.ref_mark_prev) == (1000, 0, 0)
    capture_sync_mark(st, 2000, is_reference=True)
    assert (st.ref_mark, st.ref_mark_prev) == (2000, 0)
    capture_sync_mark(st, 3500, is_reference=True)
    assert (st.ref_mark, st.ref_mark_prev) == (3500, 2000)


def test_drift_factor_fast_clock_example():
    # +200 ppm node over one 65536-count master interval: the local interval
    # is 65549.1 counts; with floor capture the ratio lands within one count
    # of 1.0002 exactly.
    master_prev, master = 100_000, 100_000 + 65_536
    local_prev = 40_000
    local = local_prev + int(65_536 * Fraction(1_000_200, 1_000_000))
    df = drift_factor(local, local_prev, master, master_prev)
    assert abs(df - Fraction(10002, 10000)) <= Fraction(1, 65_536)


def test_drift_factor_wraps_and_rejects_stalled_master():
    df = drift_factor(wrap(COUNTER_MOD + 90), COUNTER_MOD - 10, 150, 50)
    assert df == Fraction(100, 100)
    with pytest.raises(ZeroDivisionError):
        drift_factor(1, 0, 77, 77)


def test_apply_drift_correction_cancels_constant_drift():
    # TUR correction by the measured ratio equalizes effective NTU lengths.
    tur = Fraction(16)
    node = NtuCounter(62_500, 200, tur)      # +200 ppm
    master = NtuCounter(62_500, 0, tur)
    df = master.ntu_true_ps / node.ntu_true_ps * 1  # ideal measured ratio
    corrected = apply_drift_correction(tur, df)
    node.set_tur(0, corrected)
    rel = abs(node.ntu_true_ps - master.ntu_true_ps) / master.ntu_true_ps
    assert rel < Fraction(1, 10**8)  # renormalization residue only


def test_renormalize_tur_error_bound_and_smoothing_off():
    x = Fraction(123_456_789, 7_654_321)
    assert abs(renormalize_tur(x) - x) <= Fraction(1, 2**33)
    assert apply_drift_correction(Fraction(16), Fraction(1)) == Fraction(16)
    half = apply_drift_correction(Fraction(16), Fraction(2), Fraction(1, 2))
    assert half == Fraction(24)  # halfway between 16 and 32


# --- system matrix -----------------------------------------------------------

def _matrix():
    rows = [
        [TimeWindow(WindowKind.EXCLUSIVE, 200, 120, owner=0x10),
         TimeWindow(WindowKind.ARBITRATION, 400, 200),
         TimeWindow(WindowKind.FREE, 700, 300)],
        [TimeWindow(WindowKind.EXCLUSIVE, 200, 120, owner=0x11)],
    ]
    return build_system_matrix(1024, 150, rows)


def test_reference_window_opens_every_row_at_zero():
    m = _matrix()
    assert m.n_rows == 2
    for row in m.rows:
        assert row[0].start_ntu == 0
        assert row[0].owner == ttcan.REFERENCE_CAN_ID
        assert row[0].length_ntu == 150


def test_window_at_boundaries():
    m = _matrix()
    c = COUNTS_PER_NTU
    assert window_at(m, 0, 0).owner == ttcan.REFERENCE_CAN_ID
    assert window_at(m, 0, 200 * c).owner == 0x10
    assert window_at(m, 0, 320 * c) is None          # gap is idle
    assert window_at(m, 0, 400 * c).kind is WindowKind.ARBITRATION
    assert window_at(m, 2, 200 * c).owner == 0x10    # rows repeat
    assert window_at(m, 1, 999 * c) is None


def test_matrix_validation_errors():
    with pytest.raises(CanConfigError):  # overlaps the reference window
        build_system_matrix(1024, 150, [[TimeWindow(WindowKind.FREE, 100, 100)]])
    with pytest.raises(CanConfigError):  # overlapping pair
        build_system_matrix(1024, 100, [[
            TimeWindow(WindowKind.EXCLUSIVE, 200, 120, owner=1),
            TimeWindow(WindowKind.EXCLUSIVE, 300, 120, owner=2)]])
    with pytest.raises(CanConfigError):  # beyond cycle end
        build_system_matrix(1024, 100, [[TimeWindow(WindowKind.FREE, 1000, 100)]])
    with pytest.raises(CanConfigError):  # owner 0 is the reference id
        build_system_matrix(1024, 100, [[
            TimeWindow(WindowKind.EXCLUSIVE, 200, 100, owner=0)]])
    with pytest.raises(CanConfigError):  # exclusive without owner
        build_system_matrix(1024, 100, [[TimeWindow(WindowKind.EXCLUSIVE, 200, 100)]])
    # one message may own several columns of a row
    m = build_system_matrix(2048, 100, [[
        TimeWindow(WindowKind.EXCLUSIVE, 200, 100, owner=5),
        TimeWindow(WindowKind.EXCLUSIVE, 400, 100, owner=5)]])
    assert [w.owner for w in m.rows[0]] == [0, 5, 5]


# --- arbitration -------------------------------------------------------------

def test_arbitration_lowest_id_wins_any_order_100_cases():
    rng = random.Random(31)
    for case in range(100):
        ids = rng.sample(range(1, 2048), rng.randrange(1, 12))
        frames = [CanFrame(i, 0) for i in ids]
        rng.shuffle(frames)
        assert arbitrate(frames).can_id == min(ids), f"case {case}"


def test_arbitration_duplicate_id_is_config_error():
    with pytest.raises(CanConfigError):
        arbitrate([CanFrame(9, 0), CanFrame(9, 0)])


def test_reference_message_round_trip_fits_8_bytes():
    frame = ReferenceMessage(0x123456, t_gap=-40, cycle_index=3).to_frame("gw")
    assert frame.can_id == ttcan.REFERENCE_CAN_ID
    assert frame.dlc == 8 and len(frame.payload) == 8


# --- counter runtime ---------------------------------------------------------

def test_counter_nominal_rate_closed_form():
    # TUR 16 at 16 MHz: NTU = 1 us, one count = 125 ns.
    c = NtuCounter(62_500, 0, Fraction(16))
    assert c.ntu_true_ps == PS_PER_US
    assert c.count_at(PS_PER_S) == 8_000_000


def test_counter_fast_oscillator_closed_form():
    c = NtuCounter(62_500, 200, Fraction(16))
    # +200 ppm: exactly 0.02% more counts per true second.
    assert c.count_at(PS_PER_S) == 8_001_600


def test_counter_inverse_is_tight_100_cases():
    rng = random.Random(41)
    for case in range(100):
        c = NtuCounter(rng.choice([62_500, 125_000, 50_000]),
                       rng.randrange(-300, 301),
                       Fraction(rng.randrange(17, 2000), 10),
                       phase_rem_unit=Fraction(rng.randrange(0, 97), 97))
        n = rng.randrange(1, 200_000)
        t = c.true_of_count(n)
        assert c.count_at(t) >= n
        assert c.count_at(t - 1) < n, f"case {case}"


def test_counter_adjust_and_write_are_wrap_aware():
    c = NtuCounter(62_500, 0, Fraction(16), start_count=COUNTER_MOD - 8)
    t = 10**7
    before = c.local_time(t)
    c.adjust_counts(t, 16)
    assert c.local_time(t) == wrap(before + 16)
    c.set_local_time(t, 5)  # near-wrap write resolves to the closest value
    assert c.local_time(t) == 5
    later = c.true_of_count(c.count_at(t) + 100)
    assert c.local_time(later) == wrap(5 + 100)


def test_counter_anchor_moves_do_not_change_readings():
    c = NtuCounter(62_500, -200, Fraction(16),
                   phase_rem_unit=Fraction(1, 3))
    probe = 5 * PS_PER_S + 17
    expect = c.count_at(probe)
    c.advance_anchor(123_456_789)
    c.advance_anchor(987_654_321)
    assert c.count_at(probe) == expect
