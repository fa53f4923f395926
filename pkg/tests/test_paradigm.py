import numpy as np
import pytest

from dlsc.core import DegenerateAtomError, ValidationError
from dlsc.paradigm import (
    HrfSpec,
    TaskParadigm,
    boxcar,
    build_fixed_dictionary,
    canonical_hrf,
    default_motor_paradigm,
    load_paradigm,
    save_paradigm,
    stimulus_regressor,
)

from oracles import double_gamma

TR = 0.72
N = 284


def single(onset, duration, total=214.0, name="a"):
    return TaskParadigm(((name, ((onset, duration),)),), total)


def test_hrf_starts_at_zero_and_peaks_at_one():
    h = canonical_hrf(HrfSpec(), 0.1)
    assert h[0] == 0.0
    assert h.max() == 1.0
    assert len(h) == 321


def test_hrf_matches_dense_double_gamma():
    h = canonical_hrf(HrfSpec(), 0.1)
    ref = np.array([double_gamma(i * 0.1) for i in range(321)])
    np.testing.assert_allclose(h, ref / ref.max(), rtol=1e-12, atol=1e-15)
    peak = np.argmax(ref) * 0.1
    assert 4.5 <= peak <= 5.5
    assert np.argmax(h) * 0.1 == pytest.approx(peak)


def test_hrf_single_sign_change_after_peak():
    h = canonical_hrf(HrfSpec(), 0.1)
    tail = h[np.argmax(h):]
    signs = np.sign(tail[tail != 0])
    assert np.count_nonzero(np.diff(signs)) == 1
    assert signs[0] > 0 and signs[-1] < 0


def test_hrf_independent_of_oversample_at_fixed_dt():
    a = canonical_hrf(HrfSpec(oversample_factor=16), 0.045)
    b = canonical_hrf(HrfSpec(oversample_factor=32), 0.045)
    np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)


def test_hrf_rejects_bad_dt():
    with pytest.raises(ValidationError):
        canonical_hrf(HrfSpec(), 0.0)
    with pytest.raises(ValidationError):
        canonical_hrf(HrfSpec(), 40.0)


def test_boxcar_frames_5_to_20():
    b = boxcar(single(3.0, 12.0), "a", 40, TR)
    assert np.flatnonzero(b).tolist() == list(range(5, 21))


def test_boxcar_empty_condition_and_unknown_name():
    p = TaskParadigm((("a", ()), ("b", ((0.0, 1.0),))), 10.0)
    assert not boxcar(p, "a", 10, 1.0).any()
    assert not stimulus_regressor(p, "a", 10, 1.0).any()
    with pytest.raises(KeyError):
        boxcar(p, "nope", 10, 1.0)


def test_boxcar_disjoint_events_add():
    two = TaskParadigm((("a", ((3.0, 12.0), (40.0, 12.0))),), 214.0)
    total = boxcar(two, "a", N, TR)
    parts = boxcar(single(3.0, 12.0), "a", N, TR) + boxcar(single(40.0, 12.0), "a", N, TR)
    np.testing.assert_array_equal(total, parts)
    assert set(np.unique(total)) <= {0.0, 1.0}


def test_regressor_lags_block_onset():
    reg = stimulus_regressor(single(30.0, 12.0), "a", N, TR)
    onset_frame = int(np.ceil(30.0 / TR))
    assert np.argmax(reg) > onset_frame


def test_regressor_shift_by_ten_frames():
    a = stimulus_regressor(single(30.0, 12.0), "a", N, TR)
    b = stimulus_regressor(single(30.0 + 7.2, 12.0), "a", N, TR)
    np.testing.assert_allclose(b[10:], a[:-10], atol=1e-12, rtol=0)


def test_regressor_linear_in_disjoint_events():
    both = TaskParadigm((("a", ((3.0, 12.0), (60.0, 12.0))),), 214.0)
    lhs = stimulus_regressor(both, "a", N, TR)
    rhs = stimulus_regressor(single(3.0, 12.0), "a", N, TR) + stimulus_regressor(
        single(60.0, 12.0), "a", N, TR
    )
    np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0)


def test_default_motor_paradigm_counts():
    p = default_motor_paradigm()
    assert p.names == ["cue", "lh", "lf", "rh", "rf", "t"]
    cues = p.events("cue")
    assert len(cues) == 10 and all(d == 3.0 for _, d in cues)
    for eff in ("lh", "lf", "rh", "rf", "t"):
        evs = p.events(eff)
        assert len(evs) == 2 and all(d == 12.0 for _, d in evs)
    assert p.total_duration_seconds == 214.0
    ends = [o + d for _, evs in p.conditions for o, d in evs]
    fixation = 3 * 15.0
    assert max(ends) == 10 * (3 + 12) + fixation == 195.0


def test_default_motor_paradigm_order():
    p = default_motor_paradigm()
    starts = sorted((o, name) for name, evs in p.conditions if name != "cue" for o, _ in evs)
    assert [name for _, name in starts] == ["lh", "lf", "rh", "rf", "t"] * 2
    # fixation gaps follow blocks 3, 6 and 9
    assert [o for o, _ in starts] == [3, 18, 33, 63, 78, 93, 123, 138, 153, 183]


def test_fixed_dictionary_six_unit_atoms():
    d = build_fixed_dictionary(default_motor_paradigm(), N, TR)
    assert d.fixed_count == 6 and d.learned_count == 0
    assert d.atom_labels == ("cue", "lh", "lf", "rh", "rf", "t")
    np.testing.assert_allclose(np.linalg.norm(d.atoms, axis=0), 1.0, atol=1e-12)


def test_fixed_dictionary_single_and_identical_conditions():
    one = build_fixed_dictionary(single(10.0, 12.0), N, TR)
    assert one.size == 1
    assert np.linalg.norm(one.atoms[:, 0]) == pytest.approx(1.0, abs=1e-12)
    twin = TaskParadigm((("a", ((10.0, 12.0),)), ("b", ((10.0, 12.0),))), 214.0)
    d = build_fixed_dictionary(twin, N, TR)
    np.testing.assert_array_equal(d.atoms[:, 0], d.atoms[:, 1])


def test_fixed_dictionary_degenerate_atom_named():
    late = TaskParadigm((("early", ((0.0, 5.0),)), ("late", ((200.0, 10.0),))), 214.0)
    with pytest.raises(DegenerateAtomError, match="late"):
        build_fixed_dictionary(late, 100, TR)


def test_paradigm_validation():
    with pytest.raises(ValidationError):
        TaskParadigm((("a", ((210.0, 12.0),)),), 214.0)
    with pytest.raises(ValidationError):
        TaskParadigm((("a", ()), ("a", ())), 10.0)
    with pytest.raises(ValidationError):
        HrfSpec(oversample_factor=0)


def test_paradigm_file_round_trip(tmp_path):
    p = default_motor_paradigm()
    save_paradigm(p, tmp_path / "p.csv")
    text = (tmp_path / "p.csv").read_text().splitlines()
    assert text[0] == "total=214" and text[1] == "condition,onset_seconds,duration_seconds"
    assert load_paradigm(tmp_path / "p.csv") == p
