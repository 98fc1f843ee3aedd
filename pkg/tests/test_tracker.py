import numpy as np
import pytest

from fccopt import MomentumVector, TrackerTable, make_rng, tracker_error

from conftest import linear_problem


def test_table_validation():
    with pytest.raises(ValueError):
        TrackerTable(0, 1, 0.5)
    with pytest.raises(ValueError):
        TrackerTable(1, 0, 0.5)
    with pytest.raises(ValueError):
        TrackerTable(1, 1, 0.0)
    with pytest.raises(ValueError):
        TrackerTable(1, 1, 1.5)
    TrackerTable(1, 1, 1.0)  # gamma = 1 is the no-memory edge


def test_first_touch_writes_through():
    table = TrackerTable(3, 2, 0.25)
    assert not table.initialized.any()
    ghat = np.array([2.0, -1.0])
    u_prev, u_new = table.sox_update(1, ghat)
    assert np.array_equal(u_prev, ghat)
    assert np.array_equal(u_new, ghat)
    assert table.initialized[1] and not table.initialized[0]
    # Rows other than 1 stay at their placeholder zeros.
    assert np.array_equal(table.u[0], np.zeros(2))


def test_blend_after_first_touch():
    table = TrackerTable(2, 1, 0.25)
    table.sox_update(0, np.array([4.0]))
    u_prev, u_new = table.sox_update(0, np.array([8.0]))
    assert u_prev == pytest.approx(4.0)
    assert u_new == pytest.approx(0.75 * 4.0 + 0.25 * 8.0)
    assert table.u[0, 0] == pytest.approx(5.0)


def test_sox_update_rejects_non_finite():
    table = TrackerTable(2, 1, 0.5)
    with pytest.raises(ValueError, match="non-finite"):
        table.sox_update(0, np.array([np.nan]))


def test_moap_update_by_hand():
    # n=4 rows, b1=2 sampled, gamma=0.5, scale = gamma * n/b1 = 1.
    table = TrackerTable(4, 1, 0.5)
    table.sox_update(0, np.array([8.0]))
    table.sox_update(1, np.array([4.0]))
    table.sox_update(2, np.array([2.0]))
    # Row 3 left uninitialized.
    table.moap_update([0, 1], {0: np.array([2.0]), 1: np.array([6.0])}, 2, 4)
    assert table.u[0, 0] == pytest.approx(0.5 * 8.0 + 1.0 * 2.0)
    assert table.u[1, 0] == pytest.approx(0.5 * 4.0 + 1.0 * 6.0)
    assert table.u[2, 0] == pytest.approx(0.5 * 2.0)  # unsampled: decay only
    assert table.u[3, 0] == 0.0
    assert not table.initialized[3]


def test_moap_first_touch_writes_through():
    table = TrackerTable(3, 1, 0.5)
    table.moap_update([1], {1: np.array([5.0])}, 1, 3)
    assert table.u[1, 0] == 5.0
    assert table.initialized[1]


def test_moap_update_validation():
    table = TrackerTable(3, 1, 0.5)
    with pytest.raises(ValueError):
        table.moap_update([0, 1], {0: np.array([1.0]), 1: np.array([1.0])}, 3, 3)
    with pytest.raises(ValueError):
        table.moap_update([0], {0: np.array([1.0])}, 1, 4)
    with pytest.raises(ValueError):
        table.moap_update([], {}, 0, 3)


def test_momentum_recurrence():
    mom = MomentumVector(2, 0.25)
    v1 = mom.momentum_update(np.array([4.0, 0.0]))
    assert np.allclose(v1, [1.0, 0.0])
    v2 = mom.momentum_update(np.array([0.0, 8.0]))
    assert np.allclose(v2, [0.75, 2.0])
    # Returned vectors are copies, not views of internal state.
    v2[0] = 99.0
    assert mom.v[0] == pytest.approx(0.75)


def test_momentum_validation():
    with pytest.raises(ValueError):
        MomentumVector(0, 0.5)
    with pytest.raises(ValueError):
        MomentumVector(2, 0.0)
    mom = MomentumVector(2, 0.5)
    with pytest.raises(ValueError):
        mom.momentum_update(np.zeros(3))


def test_tracker_error_requires_full_initialization():
    prob = linear_problem("identity")
    table = TrackerTable(prob.n_outer, 1, 0.5)
    table.sox_update(0, np.array([1.0]))
    with pytest.raises(ValueError, match="tracker row 1 uninitialized"):
        tracker_error(table, prob, np.zeros(prob.dim_w))


def test_tracker_error_value():
    from fccopt import g_full

    prob = linear_problem("identity")
    w = np.array([0.5, -0.5])
    table = TrackerTable(prob.n_outer, 1, 0.5)
    offsets = [0.1, -0.2, 0.3]
    for i in range(prob.n_outer):
        table.sox_update(i, g_full(prob, w, i) + offsets[i])
    expected = float(np.mean([d * d for d in offsets]))
    assert tracker_error(table, prob, w) == pytest.approx(expected, abs=1e-14)


def test_tracker_error_shape_mismatch():
    prob = linear_problem("identity")
    table = TrackerTable(prob.n_outer + 1, 1, 0.5)
    with pytest.raises(ValueError, match="shape"):
        tracker_error(table, prob, np.zeros(prob.dim_w))
