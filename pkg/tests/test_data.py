import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddpc.data import (DataError, DataLog, DdpHyper, Mode, OperationalDataset,
                       OperationalSegment, build_hankel, check_pe, hankel, read_dataset,
                       stack_segments, write_dataset)

from conftest import random_lti, segment


# --- Hankel construction -------------------------------------------------------

def test_hankel_scalar_hand_example():
    H = hankel([1, 2, 3, 4, 5], 3)
    np.testing.assert_array_equal(H, [[1, 2, 3], [2, 3, 4], [3, 4, 5]])


def test_hankel_two_channels_time_major():
    x = np.array([[1, 10], [2, 20], [3, 30]])
    H = hankel(x, 2)
    np.testing.assert_array_equal(H, [[1, 2], [10, 20], [2, 3], [20, 30]])


def test_hankel_too_short_raises():
    with pytest.raises(DataError, match="insufficient data"):
        hankel(np.arange(3), 4)


@given(T=st.integers(1, 40), L=st.integers(1, 40), n=st.integers(1, 3))
def test_hankel_entries_match_definition(T, L, n):
    x = np.arange(T * n, dtype=float).reshape(T, n)
    if T < L:
        with pytest.raises(DataError):
            hankel(x, L)
        return
    H = hankel(x, L)
    assert H.shape == (L * n, T - L + 1)
    for j in range(T - L + 1):
        np.testing.assert_array_equal(H[:, j], x[j:j + L].reshape(-1))


def test_build_hankel_channels():
    seg = OperationalSegment(0, np.arange(6.0), np.ones((6, 2)), -np.arange(6.0))
    H = build_hankel(seg, 4)
    assert H["u"].shape == (4, 3) and H["w"].shape == (8, 3) and H["y"].shape == (4, 3)
    np.testing.assert_array_equal(H["y"], -H["u"])


# --- segments and stacking -----------------------------------------------------

def test_segment_validation_and_readonly():
    with pytest.raises(ValueError, match="lengths differ"):
        OperationalSegment(0, np.zeros(3), np.zeros((4, 2)), np.zeros(3))
    seg = OperationalSegment(5, np.zeros(3), np.zeros((3, 2)), np.zeros(3), "h")
    assert seg.mode is Mode.HEATING and seg.end_index == 8
    with pytest.raises(ValueError):
        seg.u[0] = 1.0


def test_segment_slice_uses_absolute_indices():
    seg = OperationalSegment(10, np.arange(5.0), np.zeros((5, 2)), np.zeros(5))
    sub = seg.slice(12, 14)
    assert sub.start_index == 12
    np.testing.assert_array_equal(sub.u[:, 0], [2.0, 3.0])
    with pytest.raises(ValueError):
        seg.slice(20, 30)


def _seg(start, n, mode=Mode.COOLING, offset=0.0):
    u = offset + np.arange(n, dtype=float)
    return OperationalSegment(start, u, np.zeros((n, 2)), u, mode)


def test_stack_segments_enumeration_and_budget():
    hyper = DdpHyper(T=10, t_init=2, N=2)           # L=4, budget 7 columns
    a, b = _seg(0, 6), _seg(100, 6, offset=100)     # 3 columns each
    H = stack_segments([b, a], hyper, Mode.COOLING)
    assert H.n_cols == 6
    # oldest first, columns never straddle the gap
    np.testing.assert_array_equal(H.H_u_init[0], [0, 1, 2, 100, 101, 102])
    np.testing.assert_array_equal(H.H_u_pred[-1], [3, 4, 5, 103, 104, 105])

    c = _seg(200, 8, offset=200)                    # 5 columns; budget drops oldest
    H = stack_segments([a, b, c], hyper, Mode.COOLING)
    assert H.n_cols == 7
    np.testing.assert_array_equal(H.H_u_init[0], [101, 102, 200, 201, 202, 203, 204])
    assert H.sources[0].start_index == 101 and H.last_index == 208


def test_stack_segments_skips_short_and_other_mode():
    hyper = DdpHyper(T=10, t_init=2, N=2)
    H = stack_segments([_seg(0, 3), _seg(10, 6), _seg(20, 6, Mode.HEATING)], hyper, "c")
    assert H.n_cols == 3 and len(H.sources) == 1
    with pytest.raises(DataError, match="no data"):
        stack_segments([_seg(0, 3)], hyper, Mode.COOLING)


def test_hyper_validation():
    with pytest.raises(ValueError):
        DdpHyper(T=10, t_init=6, N=6)
    with pytest.raises(ValueError):
        DdpHyper(T=100, t_init=6, N=6, e_g=0.0)
    with pytest.raises(ValueError):
        DdpHyper(T=100, t_init=0, N=6)
    h = DdpHyper(T=100, t_init=6, N=6, n_x=3)
    assert (h.L, h.L_pe, h.n_cols) == (12, 15, 89)


# --- persistent excitation -----------------------------------------------------

def test_pe_constant_input_fails():
    hyper = DdpHyper(T=300, t_init=5, N=5, n_x=3)
    seg = OperationalSegment(0, np.ones(300), np.ones((300, 2)), np.zeros(300))
    pe = check_pe(stack_segments([seg], hyper, "c"), hyper.n_x)
    assert not pe and pe.reason == "rank deficient" and pe.rank == 1


def test_pe_random_input_passes():
    hyper = DdpHyper(T=300, t_init=5, N=5, n_x=3)
    pe = check_pe(stack_segments([segment(random_lti(0), 300, 1)], hyper, "c"), hyper.n_x)
    assert pe and pe.rank == pe.required == 13 * 3


def test_pe_too_few_columns():
    hyper = DdpHyper(T=20, t_init=5, N=5, n_x=3)
    pe = check_pe(stack_segments([segment(random_lti(0), 20, 1)], hyper, "c"), hyper.n_x)
    assert not pe and pe.reason == "not enough columns"


# --- log ------------------------------------------------------------------------

def test_datalog_segments_cut_at_mode_changes():
    log = DataLog(n_w=2, capacity=2)
    modes = "cccchhc"
    for k, m in enumerate(modes):
        log.append(k, [k, -k], 10 + k, m)
    segs = log.segments()
    assert [(s.start_index, len(s), s.mode.code) for s in segs] == \
        [(0, 4, "C"), (4, 2, "H"), (6, 1, "C")]
    y, u, w = log.init_windows(3)
    np.testing.assert_array_equal(u, [4, 5, 6])
    np.testing.assert_array_equal(y, [14, 15, 16])
    np.testing.assert_array_equal(w, [4, -4, 5, -5, 6, -6])
    with pytest.raises(DataError):
        log.init_windows(8)


# --- CSV ------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    ds = OperationalDataset([segment(random_lti(1), 30, 0),
                             segment(random_lti(1), 10, 1, start=40, mode=Mode.HEATING)])
    p = tmp_path / "d.csv"
    write_dataset(ds, p)
    back = read_dataset(p)
    assert [(s.start_index, len(s), s.mode) for s in back] == \
        [(0, 30, Mode.COOLING), (40, 10, Mode.HEATING)]
    for a, b in zip(ds, back):
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.w, b.w)
        np.testing.assert_array_equal(a.y, b.y)


def test_csv_iso_timestamps_and_gaps(tmp_path):
    p = tmp_path / "d.csv"
    rows = ["t,u,w1,w2,y,mode",
            "2024-06-01T00:00:00Z,1,2,3,4,C",
            "2024-06-01T00:15:00Z,1,2,3,4,C",
            "2024-06-01T01:00:00Z,1,2,3,4,C",   # 45-minute gap: new segment
            "2024-06-01T01:15:00Z,1,2,3,4,H"]   # mode change: new segment
    p.write_text("\n".join(rows) + "\n")
    ds = read_dataset(p)
    assert [(s.start_index, len(s), s.mode.code) for s in ds] == \
        [(0, 2, "C"), (4, 1, "C"), (5, 1, "H")]


@pytest.mark.parametrize("body, msg", [
    ("a,b\n", "expected header"),
    ("t,u,w1,w2,y,mode\n0,1,2,3,4,C\n0,1,2,3,4,C\n", "unsorted"),
    ("t,u,w1,w2,y,mode\n0,1,2,nan,4,C\n", "non-finite"),
    ("t,u,w1,w2,y,mode\n0,1,2,3,C\n", "expected 6 fields"),
    ("t,u,w1,w2,y,mode\n0,1,2,3,4,X\n", "malformed"),
    ("t,u,w1,w2,y,mode\n", "no data rows"),
])
def test_csv_errors(tmp_path, body, msg):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=msg):
        read_dataset(p)


def test_csv_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope.csv")
