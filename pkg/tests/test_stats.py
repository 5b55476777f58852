"""Pairwise significance tests and the Holm correction."""

from collections import OrderedDict

import numpy as np
import pytest

from antispoof import stats
from antispoof.data import ProtocolSet, TrialRecord
from antispoof.errors import ParameterError
from antispoof.evaluate import ScoreSet


def _protocol(n_bona, n_spoof):
    records = [TrialRecord(f"b{i}", "bonafide") for i in range(n_bona)]
    records += [
        TrialRecord(f"s{i}", "spoof", attack_id="A01") for i in range(n_spoof)
    ]
    return ProtocolSet(records=tuple(records))


def _scores(protocol, values):
    return ScoreSet(
        scores=OrderedDict(
            (rec.trial_id, float(v)) for rec, v in zip(protocol, values)
        )
    )


def test_identical_systems_p_one():
    protocol = _protocol(5, 5)
    rng = np.random.default_rng(0)
    values = rng.normal(0, 1, 10)
    a = _scores(protocol, values)
    b = _scores(protocol, values.copy())
    assert stats.eer_significance_pair(a, b, protocol) == 1.0


def test_pair_symmetry():
    protocol = _protocol(20, 20)
    rng = np.random.default_rng(1)
    a = _scores(protocol, rng.normal(0.5, 1, 40))
    b = _scores(protocol, rng.normal(0.0, 1, 40))
    p_ab = stats.eer_significance_pair(a, b, protocol)
    p_ba = stats.eer_significance_pair(b, a, protocol)
    assert p_ab == p_ba


def test_perfect_vs_chance_large_n():
    n = 500
    protocol = _protocol(n, n)
    perfect = _scores(protocol, [1.0] * n + [-1.0] * n)
    # identical score multisets for both classes: 50% errors at its own EER point
    chance = _scores(protocol, list(range(n)) + list(range(n)))
    p = stats.eer_significance_pair(perfect, chance, protocol)
    assert p < 1e-6


def test_pair_trial_mismatch_rejected():
    protocol = _protocol(2, 2)
    a = _scores(protocol, [1, 2, 3, 4])
    b = ScoreSet(scores=OrderedDict([("b0", 0.1)]))
    with pytest.raises(ParameterError):
        stats.eer_significance_pair(a, b, protocol)


def test_flip_convention_invariance():
    rng = np.random.default_rng(2)
    protocol = _protocol(15, 15)
    va = rng.normal(0.3, 1, 30)
    vb = rng.normal(-0.3, 1, 30)
    p = stats.eer_significance_pair(
        _scores(protocol, va), _scores(protocol, vb), protocol
    )
    flipped = ProtocolSet(
        records=tuple(
            TrialRecord(
                rec.trial_id,
                "spoof" if rec.label == "bonafide" else "bonafide",
                attack_id="A01" if rec.label == "bonafide" else None,
            )
            for rec in protocol
        )
    )
    p_flip = stats.eer_significance_pair(
        _scores(flipped, -va), _scores(flipped, -vb), flipped
    )
    assert p_flip == pytest.approx(p, abs=1e-9)


# ---------------------------------------------------------------------------
# Holm correction
# ---------------------------------------------------------------------------


def test_holm_empty():
    assert stats.holm_bonferroni([], 0.05) == []


def test_holm_hand_derived_all_reject():
    # thresholds 0.05/3, 0.05/2, 0.05/1 -> 0.0167, 0.025, 0.05
    assert stats.holm_bonferroni([0.01, 0.02, 0.04], 0.05) == [True, True, True]


def test_holm_hand_derived_none_reject():
    assert stats.holm_bonferroni([0.04, 0.04, 0.04], 0.05) == [
        False,
        False,
        False,
    ]


def test_holm_stops_at_first_failure():
    # sorted: 0.001 (<= 0.0125), 0.02 (> 0.0167) stops; 0.03, 0.04 not tested
    flags = stats.holm_bonferroni([0.03, 0.001, 0.04, 0.02], 0.05)
    assert flags == [False, True, False, False]


def test_holm_input_validation():
    with pytest.raises(ParameterError):
        stats.holm_bonferroni([1.5], 0.05)
    with pytest.raises(ParameterError):
        stats.holm_bonferroni([0.5], 0.0)


def holm_oracle(ps, alpha):
    """Re-run reference: reject i iff p_i survives the step-down walk."""
    m = len(ps)
    order = sorted(range(m), key=lambda i: ps[i])
    flags = [False] * m
    for rank, idx in enumerate(order):
        if ps[idx] <= alpha / (m - rank):
            flags[idx] = True
        else:
            break
    return flags


def test_holm_monotone_and_sandwiched():
    rng = np.random.default_rng(3)
    for _ in range(300):
        m = int(rng.integers(1, 9))
        ps = rng.uniform(0, 0.3, m).tolist()
        flags = stats.holm_bonferroni(ps, 0.05)
        assert flags == holm_oracle(ps, 0.05)
        # sandwich: Bonferroni subset, uncorrected superset
        bonf = [p <= 0.05 / m for p in ps]
        plain = [p <= 0.05 for p in ps]
        for b, h, u in zip(bonf, flags, plain):
            assert (not b or h) and (not h or u)
        # monotonicity: lowering one p never un-rejects another
        k = int(rng.integers(0, m))
        lowered = list(ps)
        lowered[k] = lowered[k] * 0.1
        new_flags = stats.holm_bonferroni(lowered, 0.05)
        for i in range(m):
            if i != k and flags[i]:
                assert new_flags[i]


# ---------------------------------------------------------------------------
# matrix
# ---------------------------------------------------------------------------


def test_matrix_two_identical_sets():
    protocol = _protocol(4, 4)
    rng = np.random.default_rng(4)
    values = rng.normal(0, 1, 8)
    a = _scores(protocol, values)
    b = _scores(protocol, values.copy())
    matrix = stats.build_matrix([("a", a), ("b", b)], protocol, alpha=0.05)
    assert matrix.p_values[0, 1] == 1.0
    assert not matrix.reject.any()
    assert np.all(np.diag(matrix.p_values) == 1.0)


def test_matrix_three_sets_three_pairs(tmp_path):
    protocol = _protocol(10, 10)
    rng = np.random.default_rng(5)
    sets = [(f"m{i}", _scores(protocol, rng.normal(0, 1, 20))) for i in range(3)]
    matrix = stats.build_matrix(sets, protocol)
    assert matrix.p_values.shape == (3, 3)
    np.testing.assert_array_equal(matrix.p_values, matrix.p_values.T)
    path = tmp_path / "sig.csv"
    stats.write_matrix_csv(path, matrix)
    lines = path.read_text().splitlines()
    assert lines[0] == "labelA,labelB,p,reject"
    assert len(lines) == 1 + 3  # C(3,2) pairs


def test_matrix_needs_two_sets():
    protocol = _protocol(2, 2)
    a = _scores(protocol, [1, 2, 3, 4])
    with pytest.raises(ParameterError):
        stats.build_matrix([("a", a)], protocol)
