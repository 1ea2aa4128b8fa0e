from collections import Counter

import numpy as np
import pytest

from lmclab.errors import ShapeError
from lmclab.mlp import Arch, forward, init, param_distance
from lmclab.ndcore import make_rng
from lmclab.symmetry import (
    Permutation,
    apply,
    assignment_solve,
    load_permutation,
    random_permutation,
    save_permutation,
    weight_match,
)
from lmclab.trainer import evaluate
from oracles import brute_force_assignment


class TestPermutation:
    def test_rejects_non_bijection(self):
        with pytest.raises(ValueError):
            Permutation([np.array([0, 0, 2])])

    def test_inverse_and_compose(self, small_arch):
        pi = random_permutation(small_arch, make_rng(0))
        assert pi.compose(pi.inverse()).is_identity()
        assert pi.inverse().compose(pi).is_identity()

    def test_compose_order(self, random_params):
        p, q = random_permutation(random_params.arch, make_rng(1)), random_permutation(random_params.arch, make_rng(2))
        assert apply(p.compose(q), random_params).bit_equal(apply(p, apply(q, random_params)))

    def test_width_mismatch(self, random_params):
        with pytest.raises(ShapeError):
            apply(Permutation([np.arange(3), np.arange(32)]), random_params)


class TestApply:
    def test_identity(self, random_params):
        assert apply(Permutation.identity(random_params.arch), random_params).bit_equal(random_params)

    def test_function_preserved(self, trained_pair, rng):
        p = trained_pair[0].params
        x = rng.standard_normal((256, 16))
        for s in range(20):
            q = apply(random_permutation(p.arch, make_rng(s)), p)
            assert np.max(np.abs(forward(p, x) - forward(q, x))) < 1e-9

    def test_evaluate_preserved(self, trained_pair, blobs):
        p = trained_pair[1].params
        q = apply(random_permutation(p.arch, make_rng(7)), p)
        (l1, a1), (l2, a2) = evaluate(p, blobs[1]), evaluate(q, blobs[1])
        assert abs(l1 - l2) < 1e-9 and a1 == a2

    def test_inverse_round_trip_bitwise(self, random_params):
        pi = random_permutation(random_params.arch, make_rng(3))
        assert apply(pi, apply(pi.inverse(), random_params)).bit_equal(random_params)

    def test_rows_and_columns_move(self, random_params):
        pi = random_permutation(random_params.arch, make_rng(4))
        q = apply(pi, random_params)
        np.testing.assert_array_equal(q.weights[0], random_params.weights[0][pi.perms[0]])
        np.testing.assert_array_equal(q.weights[1], random_params.weights[1][pi.perms[1]][:, pi.perms[0]])
        np.testing.assert_array_equal(q.weights[2], random_params.weights[2][:, pi.perms[1]])

    def test_bias_free(self):
        p = init(Arch((5, 6, 7, 2), with_bias=False), make_rng(0))
        x = np.random.default_rng(0).standard_normal((10, 5))
        q = apply(random_permutation(p.arch, make_rng(1)), p)
        np.testing.assert_allclose(forward(q, x), forward(p, x), atol=1e-12)


class TestRandomPermutation:
    def test_width_one_is_identity(self):
        assert random_permutation(Arch((4, 1, 1, 3)), make_rng(0)).is_identity()

    def test_deterministic(self, small_arch):
        assert random_permutation(small_arch, make_rng(5)) == random_permutation(small_arch, make_rng(5))

    def test_uniform_on_three(self):
        rng = make_rng(123)
        arch = Arch((2, 3, 2))
        counts = Counter(tuple(random_permutation(arch, rng).perms[0]) for _ in range(10_000))
        assert len(counts) == 6
        for c in counts.values():
            assert abs(c / 10_000 - 1 / 6) < 0.02


class TestAssignment:
    def test_identity_favoured(self):
        cost = np.ones((4, 4)) - np.eye(4)
        np.testing.assert_array_equal(assignment_solve(cost), np.arange(4))

    def test_hand_example(self):
        cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
        col = assignment_solve(cost)
        assert cost[np.arange(3), col].sum() == 5.0
        assert brute_force_assignment(cost) == 5.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            n = int(rng.integers(1, 6))
            cost = rng.integers(0, 6, (n, n)).astype(float) if trial % 2 else rng.random((n, n))
            col = assignment_solve(cost)
            assert sorted(col.tolist()) == list(range(n))
            assert cost[np.arange(n), col].sum() == pytest.approx(brute_force_assignment(cost), abs=1e-12)

    def test_row_relabelling(self):
        rng = np.random.default_rng(1)
        cost = rng.random((6, 6))
        perm = rng.permutation(6)
        c1, c2 = assignment_solve(cost), assignment_solve(cost[perm])
        assert cost[np.arange(6), c1].sum() == pytest.approx(cost[perm][np.arange(6), c2].sum(), abs=1e-12)
        np.testing.assert_array_equal(c2, c1[perm])

    def test_non_square(self):
        with pytest.raises(ShapeError):
            assignment_solve(np.zeros((2, 3)))


class TestWeightMatch:
    def test_planted_recovery(self, trained_pair):
        a = trained_pair[0].params
        for s in range(5):
            b = apply(random_permutation(a.arch, make_rng(s)), a)
            pi = weight_match(a, b, make_rng(100 + s))
            assert param_distance(a, apply(pi, b)) < 1e-9

    def test_self_match_identity(self, trained_pair):
        a = trained_pair[0].params
        pi = weight_match(a, a, make_rng(0))
        assert pi.is_identity()

    def test_monotone_and_not_worse(self, trained_pair):
        a, b = trained_pair[0].params, trained_pair[1].params
        hist: list[float] = []
        pi = weight_match(a, b, make_rng(0), history=hist)
        assert len(hist) >= 2
        assert all(y <= x + 1e-12 for x, y in zip(hist, hist[1:]))
        assert param_distance(a, apply(pi, b)) < param_distance(a, b)

    def test_random_pairs_monotone(self):
        arch = Arch((6, 10, 10, 10, 3))
        for s in range(5):
            a, b = init(arch, make_rng(s, 0)), init(arch, make_rng(s, 1))
            hist: list[float] = []
            weight_match(a, b, make_rng(s), history=hist)
            assert all(y <= x + 1e-12 for x, y in zip(hist, hist[1:]))

    def test_max_sweeps_one(self, trained_pair):
        hist: list[float] = []
        weight_match(trained_pair[0].params, trained_pair[1].params, make_rng(0), max_sweeps=1, history=hist)
        assert len(hist) == 2

    def test_arch_mismatch(self, random_params):
        with pytest.raises(ShapeError):
            weight_match(random_params, init(Arch((16, 8, 8, 4)), make_rng(0)), make_rng(0))


class TestPersistence:
    def test_round_trip(self, small_arch, tmp_path):
        pi = random_permutation(small_arch, make_rng(9))
        save_permutation(pi, tmp_path / "p.lmc", {"mode": "random"})
        assert load_permutation(tmp_path / "p.lmc") == pi
