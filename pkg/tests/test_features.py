import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kneesight.features import (
    DescriptorConfig,
    build_trajectory,
    cycle_features,
    delivered_capacity,
    detect_eol,
    energy_throughput,
    extract_cycle_table,
    shape_descriptors,
)
from kneesight.ingest import Cycle, RawTimeSeries
from kneesight.records import CapacityTrajectory, CycleFeatures


def discharge(t, current, voltage, entry=None, temperature=None):
    t = np.asarray(t, dtype=float)
    current = np.broadcast_to(np.asarray(current, dtype=float), t.shape).copy()
    voltage = np.broadcast_to(np.asarray(voltage, dtype=float), t.shape).copy()
    return Cycle("c", 0, "discharge", 0, t, current, voltage, temperature, float(voltage[0] if entry is None else entry))


T = np.arange(3601.0)


def test_constant_current_capacity():
    assert delivered_capacity(discharge(T, -1.0, 3.7)) == pytest.approx(1.0, rel=1e-12)


def test_zero_current_capacity():
    assert delivered_capacity(discharge(T, 0.0, 3.7)) == 0.0
    assert energy_throughput(discharge(T, 0.0, 3.7)) == 0.0


def test_triangular_ramp_capacity():
    i = -2.0 * T / 3600.0
    assert delivered_capacity(discharge(T, i, 3.7)) == pytest.approx(1.0, rel=1e-12)


def test_energy_constant_and_linear_voltage():
    assert energy_throughput(discharge(T, -1.0, 3.6)) == pytest.approx(3.6, rel=1e-12)
    v = 4.2 - 1.2 * T / 3600.0
    assert energy_throughput(discharge(T, -1.0, v)) == pytest.approx(3.6, rel=1e-12)


def test_charge_segment_rejected():
    c = Cycle("c", 0, "charge", 0, T, np.ones_like(T), np.full_like(T, 3.7), None, 3.7)
    with pytest.raises(ValueError):
        delivered_capacity(c)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.0, 5.0), min_size=3, max_size=12),
    st.lists(st.floats(2.5, 4.2), min_size=3, max_size=12),
    st.integers(1, 4),
)
def test_refinement_invariance(currents, volts, k):
    n = min(len(currents), len(volts))
    t = np.arange(n) * 10.0
    i = -np.asarray(currents[:n])
    v = np.asarray(volts[:n])
    # insert k collinear points in every interval
    tf = np.concatenate([np.linspace(t[j], t[j + 1], k + 2)[:-1] for j in range(n - 1)] + [t[-1:]])
    a = discharge(t, i, v)
    b = discharge(tf, np.interp(tf, t, i), np.interp(tf, t, v))
    qa, qb = delivered_capacity(a), delivered_capacity(b)
    assert abs(qa - qb) <= 1e-12 * max(qa, 1e-300) + 1e-300
    # energy is not piecewise linear in a product of two linear pieces, so only current is refined
    c = discharge(tf, np.interp(tf, t, i), 3.7)
    assert energy_throughput(c) == pytest.approx(3.7 * qa, rel=1e-12, abs=1e-300)


def test_flat_voltage_descriptors():
    dv, slope, plateau, mid = shape_descriptors(discharge(T, -1.0, 3.7))
    assert dv == 0.0
    assert slope == pytest.approx(0.0, abs=1e-12)
    assert plateau == pytest.approx(1.0, rel=1e-9)
    assert mid == pytest.approx(0.0, abs=1e-9)


def test_linear_voltage_descriptors():
    q = T / 3600.0
    dv, slope, plateau, mid = shape_descriptors(discharge(T, -1.0, 4.2 - 1.0 * q))
    assert slope == pytest.approx(-1.0, rel=1e-9)
    assert plateau == 0.0
    assert mid == pytest.approx(0.0, abs=1e-6)


def test_knee_shaped_voltage_descriptors():
    q = T / 3600.0
    v = 4.2 - 0.5 * q - 2.0 * np.maximum(0.0, q - 0.8) ** 2
    _, slope, plateau, _ = shape_descriptors(discharge(T, -1.0, v))
    assert slope < -0.5
    assert plateau == 0.0


def test_ir_drop_from_entry_voltage():
    q = T / 3600.0
    v = 4.0 - 0.36 * q
    dv, *_ = shape_descriptors(discharge(T, -1.0, v, entry=4.1), DescriptorConfig(ir_window=10.0))
    assert dv == pytest.approx(4.1 - (4.0 - 0.001), abs=1e-12)


def test_cycle_features_short_cycle_keeps_nan_descriptors():
    f = cycle_features(discharge([0.0, 1.0, 2.0], -1.0, 3.7), q0=1.0)
    assert math.isnan(f.dv_ir) and math.isnan(f.plateau_ah)
    assert f.q_ah == pytest.approx(2.0 / 3600.0)


def _rows(qs, cell="c"):
    return [CycleFeatures(cell_id=cell, cycle_index=i, q_ah=q, soh=q, e_wh=3.6 * q) for i, q in enumerate(qs)]


def test_single_cycle_soh_one():
    tr = build_trajectory(_rows([0.9]))
    np.testing.assert_array_equal(tr.soh, [1.0])


def test_soh_division_rated():
    tr = build_trajectory(_rows([1.0, 0.9, 0.79]), q0_rule="rated", rated_q0=1.0)
    np.testing.assert_allclose(tr.soh, [1.0, 0.9, 0.79])
    assert tr.eol_cycle == 2


def test_soh_scales_inversely_with_q0():
    rows = _rows([1.1, 1.0, 0.85, 0.7])
    a = build_trajectory(rows, "rated", rated_q0=1.0)
    b = build_trajectory(rows, "rated", rated_q0=2.0)
    np.testing.assert_allclose(b.soh, a.soh / 2.0, rtol=0, atol=1e-15)


def test_mixed_cells_rejected():
    with pytest.raises(ValueError):
        build_trajectory(_rows([1.0]) + _rows([1.0], cell="d"))


def test_detect_eol_examples():
    tr = CapacityTrajectory("c", 1.0, [0, 1, 2, 3], [1.0, 0.85, 0.79, 0.70])
    assert detect_eol(tr) == 2
    tr = CapacityTrajectory("c", 1.0, [0, 1, 2], [1.0, 0.9, 0.8])
    assert detect_eol(tr) is None


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.01, 1.2), min_size=1, max_size=40), st.floats(0.5, 1.0), st.floats(0.0, 0.3))
def test_detect_eol_monotone_in_threshold(soh, lo, gap):
    tr = CapacityTrajectory("c", 1.0, np.arange(len(soh)), soh)
    e_lo, e_hi = detect_eol(tr, lo), detect_eol(tr, lo + gap)
    if e_lo is not None:
        assert e_hi is not None and e_hi <= e_lo


def test_extract_cycle_table_end_to_end():
    # three 1 A discharges of 1800 s, 1620 s, 1440 s separated by charge and rest
    parts_i, parts_v = [], []
    for dur in (1800, 1620, 1440):
        parts_i += [np.zeros(20), -np.ones(dur), np.zeros(20), np.ones(dur)]
        parts_v += [np.full(20, 4.2), np.linspace(4.1, 3.0, dur), np.full(20, 3.2), np.linspace(3.3, 4.2, dur)]
    cur = np.concatenate(parts_i)
    volt = np.concatenate(parts_v)
    s = RawTimeSeries("x", "lab", np.arange(len(cur), dtype=float), cur, volt, np.full(len(cur), 25.0))
    rows = extract_cycle_table([s])
    assert [r.cycle_index for r in rows] == [0, 1, 2]
    q = np.array([r.q_ah for r in rows])
    np.testing.assert_allclose(q, np.array([1799, 1619, 1439]) / 3600.0, rtol=1e-12)
    np.testing.assert_allclose([r.soh for r in rows], q / q[0])
    assert all(r.dataset_tag == "lab" and r.mean_temp_c == 25.0 and r.mean_current_a == -1.0 for r in rows)
    tr = build_trajectory(rows)
    assert tr.eol_cycle == 2  # 1439/1799 < 0.8
