import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import agglomerate_naive
from scipy.cluster.hierarchy import linkage as scipy_linkage
from sklearn.metrics import adjusted_rand_score

from learnpath.errors import DataError, ParameterError
from learnpath.eventlog import SequenceTable
from learnpath.hac import (
    ClusterAssignment,
    Dendrogram,
    Linkage,
    adjusted_rand_index,
    agglomerate,
    canonical_assignment,
    cluster_stats,
    cut_tree,
    silhouette,
    stats_to_json,
)
from learnpath.seqdist import CondensedDistanceMatrix, pairwise_distances
from learnpath.synth import SynthGroup, SynthSpec, generate_corpus

ABC = CondensedDistanceMatrix(3, np.array([1.0, 5.0, 6.0]))  # d(A,B), d(A,C), d(B,C)


def _perturbed(rng, n, high=20):
    base = rng.integers(0, high, size=n * (n - 1) // 2).astype(np.float64)
    eps = rng.permutation(base.size) * (1e-7 / base.size)
    return CondensedDistanceMatrix(n, base + eps, dtype=np.float64)


def test_ward_hand_computed():
    d = agglomerate(ABC, Linkage.WARD_SQUARED)
    (a0, b0, h0, s0), (a1, b1, h1, s1) = d.merges()
    assert (a0, b0, s0) == (0, 1, 2)
    assert h0 == pytest.approx(1.0)
    assert (a1, b1, s1) == (3, 2, 3)
    # Lance-Williams by hand: ((1+1)*25 + (1+1)*36 - 1*1) / 3
    assert h1 == pytest.approx(math.sqrt((2 * 25 + 2 * 36 - 1) / 3))
    assert h1 == pytest.approx(6.3509, abs=1e-4)


def test_single_hand_computed():
    d = agglomerate(ABC, "single")
    assert d.merges() == [(0, 1, 1.0, 2), (3, 2, 5.0, 3)]


def test_ward_raw_uses_unsquared_recurrence():
    d = agglomerate(ABC, Linkage.WARD_RAW)
    assert d.height[1] == pytest.approx((2 * 5 + 2 * 6 - 1) / 3)


@pytest.mark.parametrize("kind", [Linkage.WARD_SQUARED, Linkage.AVERAGE, Linkage.COMPLETE, Linkage.SINGLE])
def test_equal_distances_first_merge_at_c(kind):
    n = 6
    d = agglomerate(CondensedDistanceMatrix(n, np.full(n * (n - 1) // 2, 2.5)), kind)
    assert d.height[0] == pytest.approx(2.5)
    # Tie policy: smallest slot pair first.
    assert (d.left[0], d.right[0]) == (0, 1)


@pytest.mark.parametrize("kind", list(Linkage))
def test_matches_naive_oracle(kind):
    rng = np.random.default_rng(2024)
    for _ in range(10):
        m = _perturbed(rng, 25)
        fast, slow = agglomerate(m, kind), agglomerate_naive(m, kind)
        assert np.array_equal(fast.left, slow.left)
        assert np.array_equal(fast.right, slow.right)
        assert np.array_equal(fast.size, slow.size)
        np.testing.assert_allclose(fast.height, slow.height, rtol=0, atol=1e-9)


@pytest.mark.parametrize("kind", list(Linkage))
def test_tie_policy_matches_naive_on_integer_distances(kind):
    # Heavy ties: both implementations must pick the smallest slot pair.
    rng = np.random.default_rng(11)
    for _ in range(5):
        n = 15
        m = CondensedDistanceMatrix(n, rng.integers(0, 4, size=n * (n - 1) // 2), dtype=np.float64)
        fast, slow = agglomerate(m, kind), agglomerate_naive(m, kind)
        if kind in (Linkage.SINGLE, Linkage.COMPLETE):
            # Exact integer arithmetic, so tie resolution must agree exactly.
            assert np.array_equal(fast.left, slow.left) and np.array_equal(fast.right, slow.right)


@pytest.mark.parametrize("method, kind", [("ward", Linkage.WARD_SQUARED), ("average", Linkage.AVERAGE),
                                          ("complete", Linkage.COMPLETE), ("single", Linkage.SINGLE)])
def test_heights_agree_with_scipy(method, kind):
    rng = np.random.default_rng(3)
    m = _perturbed(rng, 30)
    ours = np.sort(agglomerate(m, kind).height)
    theirs = np.sort(scipy_linkage(m.data, method=method)[:, 2])
    np.testing.assert_allclose(ours, theirs, atol=1e-9)


@given(st.integers(3, 18), st.integers(0, 2**32 - 1), st.sampled_from([k for k in Linkage if k.monotone]))
@settings(max_examples=60, deadline=None)
def test_monotone_heights(n, seed, kind):
    rng = np.random.default_rng(seed)
    m = CondensedDistanceMatrix(n, rng.random(n * (n - 1) // 2) * 10, dtype=np.float64)
    h = agglomerate(m, kind).height
    assert np.all(np.diff(h) >= -1e-12)


@given(st.integers(3, 15), st.integers(0, 2**32 - 1), st.sampled_from(list(Linkage)), st.floats(0.1, 50))
@settings(max_examples=60, deadline=None)
def test_merge_order_invariant_to_scaling(n, seed, kind, scale):
    rng = np.random.default_rng(seed)
    base = rng.random(n * (n - 1) // 2) + 0.01
    a = agglomerate(CondensedDistanceMatrix(n, base, dtype=np.float64), kind)
    b = agglomerate(CondensedDistanceMatrix(n, base * scale, dtype=np.float64), kind)
    assert np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)


def test_dendrogram_structure():
    rng = np.random.default_rng(8)
    n = 30
    d = agglomerate(_perturbed(rng, n))
    assert len(d) == n - 1
    seen = set()
    sizes = {i: 1 for i in range(n)}
    for m, (a, b, _, s) in enumerate(d.merges()):
        assert a < n + m and b < n + m
        assert a not in seen and b not in seen
        seen.update((a, b))
        sizes[n + m] = sizes[a] + sizes[b]
        assert s == sizes[n + m]
    assert d.size[-1] == n


def test_agglomerate_errors():
    with pytest.raises(DataError):
        agglomerate(CondensedDistanceMatrix(1, np.array([])))
    with pytest.raises(DataError):
        agglomerate(CondensedDistanceMatrix(3, np.array([1.0, np.nan, 2.0])))
    with pytest.raises(ParameterError):
        agglomerate(ABC, "median")


def test_cut_tree_extremes_and_abc():
    d = agglomerate(ABC)
    assert cut_tree(d, 3).labels.tolist() == [0, 1, 2]
    assert cut_tree(d, 1).labels.tolist() == [0, 0, 0]
    assert cut_tree(d, 2).labels.tolist() == [0, 0, 1]
    with pytest.raises(ParameterError):
        cut_tree(d, 0)
    with pytest.raises(ParameterError):
        cut_tree(d, 4)


@given(st.integers(2, 25), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_cut_tree_counts_and_refinement(n, seed):
    rng = np.random.default_rng(seed)
    d = agglomerate(CondensedDistanceMatrix(n, rng.random(n * (n - 1) // 2), dtype=np.float64))
    previous = None
    for k in range(1, n + 1):
        a = cut_tree(d, k)
        assert a.k == k
        assert sorted(set(a.labels.tolist())) == list(range(k))
        first = [a.labels.tolist().index(c) for c in range(k)]
        assert first == sorted(first)
        if previous is not None:
            # Each finer cluster lies inside exactly one coarser cluster.
            for c in range(k):
                assert len(set(previous.labels[a.labels == c].tolist())) == 1
        previous = a


def test_cut_tree_matches_scipy_partition():
    from scipy.cluster.hierarchy import fcluster

    rng = np.random.default_rng(21)
    m = _perturbed(rng, 40)
    ours = agglomerate(m)
    Z = scipy_linkage(m.data, method="ward")
    for k in (2, 3, 5, 9):
        theirs = fcluster(Z, t=k, criterion="maxclust")
        assert adjusted_rand_score(theirs, cut_tree(ours, k).labels) == 1.0


def test_cluster_stats_examples():
    table = SequenceTable.from_tokens([("a", list("xy")), ("b", list("xyz")), ("c", list("wxyz")), ("d", list("q" * 7))])
    assign = canonical_assignment([0, 0, 0, 1])
    rows = cluster_stats(assign, table)
    assert (rows[0].student_count, rows[0].mean_length, rows[0].sd_length) == (3, 3.0, 1.0)
    assert (rows[1].student_count, rows[1].mean_length, rows[1].sd_length) == (1, 7.0, 0.0)
    assert sum(r.student_count for r in rows) == 4
    with pytest.raises(ParameterError):
        cluster_stats(canonical_assignment([0, 1]), table)


def test_stats_json_fields():
    rows = json.loads(stats_to_json(cluster_stats(canonical_assignment([0, 1]), [[1, 2], [3]])))
    assert [set(r) for r in rows] == [{"cluster_id", "student_count", "mean_length", "sd_length"}] * 2


def test_dendrogram_csv_roundtrip():
    d = agglomerate(_perturbed(np.random.default_rng(4), 12))
    text = d.to_csv()
    assert text.splitlines()[0] == "merge_index,left,right,height,size"
    assert text.splitlines()[-1].split(",")[1][0] == "M"
    back = Dendrogram.read_csv(io.StringIO(text))
    assert back.merges() == d.merges()


def test_assignment_csv_roundtrip():
    a = canonical_assignment([2, 2, 0, 1])
    assert a.labels.tolist() == [0, 0, 1, 2]
    text = a.to_csv(["s1", "s2", "s3", "s4"])
    ids, back = ClusterAssignment.read_csv(io.StringIO(text))
    assert ids == ["s1", "s2", "s3", "s4"]
    assert back.labels.tolist() == a.labels.tolist()


def test_adjusted_rand_matches_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.integers(0, 4, size=60)
        b = rng.integers(0, 3, size=60)
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
    assert adjusted_rand_index([0, 0, 1], [5, 5, 9]) == 1.0


def test_silhouette_matches_sklearn():
    from sklearn.metrics import silhouette_score

    rng = np.random.default_rng(9)
    m = _perturbed(rng, 40)
    a = cut_tree(agglomerate(m), 4)
    expected = silhouette_score(m.to_square(), a.labels, metric="precomputed")
    assert silhouette(m, a) == pytest.approx(expected, abs=1e-9)


def test_planted_recovery_on_separated_groups():
    # Three disjoint backbones with overlapping length ranges, light noise.
    groups = [
        SynthGroup(60, 10, 2, tuple(range(0, 30)), 0.1),
        SynthGroup(50, 12, 2, tuple(range(30, 60)), 0.1),
        SynthGroup(40, 14, 2, tuple(range(60, 90)), 0.1),
    ]
    table, truth = generate_corpus(SynthSpec(groups, alphabet_size=90, seed=17))
    labels = cut_tree(agglomerate(pairwise_distances(table)), 3).labels
    assert adjusted_rand_index(labels, truth.labels) >= 0.9
