import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from clmmmc.errors import (
    AmbiguousStationary,
    ConfigError,
    DimensionMismatch,
    IndexOutOfRange,
    LengthMismatch,
    NegativeEntry,
    NotConverged,
    RowSumViolation,
)
from clmmmc.stochastic import (
    Partition,
    child_seed,
    closed_class_count,
    dist_exp,
    dist_stat,
    is_stochastic,
    make_rng,
    random_prob_vector,
    random_stochastic_matrix,
    sample_categorical,
    stationary_distribution,
    tv_distance,
    validate_prob_vector,
    validate_stochastic,
)


def stationary_by_solve(A):
    """Independent oracle: solve psi (A - I) = 0 with sum(psi) = 1 by least squares."""
    n = A.shape[0]
    M = np.vstack([(A - np.eye(n)).T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(M, b, rcond=None)[0]


class TestValidate:
    def test_identity_accepted(self):
        out = validate_stochastic([[1, 0], [0, 1]])
        np.testing.assert_array_equal(out, np.eye(2))

    def test_row_within_tolerance_renormalized(self):
        out = validate_stochastic([[0.5, 0.5000000001], [1, 0]], tol=1e-8)
        assert abs(out[0].sum() - 1.0) <= 1e-15
        np.testing.assert_array_equal(out[1], [1.0, 0.0])

    def test_exact_rows_untouched(self):
        row = np.array([0.1, 0.2, 0.7])
        out = validate_stochastic([row])
        assert out[0].tobytes() == row.tobytes()

    def test_negative_entry(self):
        with pytest.raises(NegativeEntry):
            validate_stochastic([[0.5, -0.5], [1, 0]])

    @pytest.mark.parametrize("bad", [[[0.5, 0.6], [1, 0]], [[np.nan, 1.0], [1, 0]]])
    def test_row_sum_violation(self, bad):
        with pytest.raises(RowSumViolation):
            validate_stochastic(bad)

    def test_not_a_matrix(self):
        with pytest.raises(DimensionMismatch):
            validate_stochastic([0.5, 0.5])

    def test_prob_vector(self):
        np.testing.assert_array_equal(validate_prob_vector([0.25, 0.75]), [0.25, 0.75])
        with pytest.raises(RowSumViolation):
            validate_prob_vector([0.2, 0.2])

    def test_is_stochastic(self):
        assert is_stochastic(np.eye(3))
        assert not is_stochastic([[0.5, 0.4]])


class TestRandom:
    def test_one_by_one(self, rng):
        np.testing.assert_array_equal(random_stochastic_matrix(1, 1, rng), [[1.0]])

    def test_reproducible(self):
        a = random_stochastic_matrix(2, 3, make_rng(9))
        b = random_stochastic_matrix(2, 3, make_rng(9))
        assert a.tobytes() == b.tobytes()

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_output_validates_strictly(self, n, m, seed):
        A = random_stochastic_matrix(n, m, make_rng(seed))
        validate_stochastic(A, tol=1e-12)
        assert A.min() > 0

    def test_support_mask(self, rng):
        mask = np.array([[True, False, True], [False, True, False]])
        A = random_stochastic_matrix(2, 3, rng, support=mask)
        assert np.all(A[~mask] == 0)
        assert np.all(A[mask] > 0)
        validate_stochastic(A, tol=1e-12)

    def test_support_empty_row(self, rng):
        with pytest.raises(DimensionMismatch):
            random_stochastic_matrix(2, 2, rng, support=[[True, True], [False, False]])

    def test_prob_vector_sums_to_one(self, rng):
        v = random_prob_vector(5, rng)
        assert abs(v.sum() - 1) <= 1e-12 and v.min() >= 0

    def test_child_seeds_differ_and_repeat(self):
        a = make_rng(child_seed(3, 0)).random()
        b = make_rng(child_seed(3, 1)).random()
        assert a != b
        assert a == make_rng(child_seed(3, 0)).random()


class TestSampleCategorical:
    @pytest.mark.parametrize("p, expected", [([0, 1, 0], 1), ([1, 0], 0)])
    def test_degenerate(self, rng, p, expected):
        assert all(sample_categorical(p, rng) == expected for _ in range(200))

    def test_fair_coin_frequency(self):
        rng = make_rng(2024)
        draws = [sample_categorical([0.5, 0.5], rng) for _ in range(100_000)]
        assert 0.49 <= np.mean(draws) <= 0.51

    def test_rounding_never_picks_zero_mass(self):
        from clmmmc.stochastic import draw_from_cumulative
        cum = np.cumsum([0.3, 0.7 - 1e-16, 0.0])
        assert draw_from_cumulative(cum, 1.0 - 1e-17) == 1


class TestStationary:
    def test_periodic_swap(self):
        np.testing.assert_allclose(stationary_distribution([[0, 1], [1, 0]]), [0.5, 0.5])

    def test_hand_solved(self):
        # psi = psi A  =>  0.1 psi_1 = 0.5 psi_2  =>  psi = (5/6, 1/6)
        psi = stationary_distribution([[0.9, 0.1], [0.5, 0.5]])
        np.testing.assert_allclose(psi, [5 / 6, 1 / 6], atol=1e-11)

    def test_identity_is_ambiguous(self):
        with pytest.raises(NotConverged):
            stationary_distribution(np.eye(2))
        with pytest.raises(AmbiguousStationary):
            stationary_distribution(np.eye(2))

    def test_periodic_non_uniform_start_fails(self):
        # period 2 with unequal block sizes: the uniform start oscillates
        A = np.array([[0, 0.5, 0.5], [1, 0, 0], [1, 0, 0]])
        with pytest.raises(NotConverged):
            stationary_distribution(A, max_iter=1000)

    def test_not_square(self):
        with pytest.raises(DimensionMismatch):
            stationary_distribution(np.ones((2, 3)) / 3)

    def test_closed_classes(self):
        assert closed_class_count(np.eye(3)) == 3
        assert closed_class_count([[0.5, 0.5], [0, 1]]) == 1

    @given(st.integers(1, 7), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_fixed_point_residual(self, n, seed):
        A = random_stochastic_matrix(n, n, make_rng(seed))
        psi = stationary_distribution(A)
        assert np.abs(psi @ A - psi).max() <= 10 * 1e-12
        assert abs(psi.sum() - 1) <= 1e-12 and psi.min() >= 0

    def test_matches_linear_solve(self, rng):
        for _ in range(20):
            A = random_stochastic_matrix(6, 6, rng)
            np.testing.assert_allclose(stationary_distribution(A), stationary_by_solve(A), atol=1e-10)


finite_probs = arrays(np.float64, st.integers(1, 6), elements=st.floats(0, 1))


def _normalize(x):
    s = x.sum()
    return x / s if s > 0 else np.full(x.shape, 1.0 / x.shape[0])


class TestTV:
    def test_examples(self):
        assert tv_distance([0.2, 0.8], [0.2, 0.8]) == 0
        assert tv_distance([1, 0], [0, 1]) == 1
        assert tv_distance([0.5, 0.5], [1, 0]) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            tv_distance([1.0], [0.5, 0.5])

    @given(st.data())
    @settings(max_examples=100, deadline=None)
    def test_metric_axioms(self, data):
        n = data.draw(st.integers(1, 6))
        vec = arrays(np.float64, n, elements=st.floats(0, 1))
        f, g, h = (_normalize(data.draw(vec)) for _ in range(3))
        assert tv_distance(f, g) == tv_distance(g, f)
        assert tv_distance(f, g) >= 0
        assert tv_distance(f, f) == 0
        assert tv_distance(f, h) <= tv_distance(f, g) + tv_distance(g, h) + 1e-12


class TestChainDistances:
    def test_identical(self, rng):
        A = random_stochastic_matrix(4, 4, rng)
        assert dist_stat(A, A) == 0.0
        assert dist_exp(A, A) == 0.0

    def test_equal_stationary_different_chains(self):
        assert dist_stat([[0, 1], [1, 0]], [[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(0, abs=1e-15)

    def test_dist_stat_linear_solve_oracle(self, rng):
        for _ in range(10):
            A, B = random_stochastic_matrix(6, 6, rng), random_stochastic_matrix(6, 6, rng)
            oracle = 0.5 * np.abs(stationary_by_solve(A) - stationary_by_solve(B)).sum()
            assert dist_stat(A, B) == pytest.approx(oracle, abs=1e-10)

    def test_dist_exp_zero_weight_row_invisible(self):
        true = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
        est = true.copy()
        est[2] = [1.0, 0.0, 0.0]  # state 3 has zero stationary mass under truth
        assert dist_exp(est, true) == pytest.approx(0.0, abs=1e-15)

    def test_dist_exp_double_loop_oracle(self, rng):
        A, B = random_stochastic_matrix(3, 3, rng), random_stochastic_matrix(3, 3, rng)
        psi = stationary_by_solve(B)
        total = 0.0
        for i in range(3):
            row = 0.0
            for j in range(3):
                row += abs(A[i, j] - B[i, j])
            total += psi[i] * 0.5 * row
        assert dist_exp(A, B) == pytest.approx(total, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            dist_exp(np.eye(2), np.eye(3))


class TestPartition:
    def test_parse_ranges(self):
        g = Partition.parse("8,9|1-7", 9)
        assert g.p == 2
        assert g.to_lists() == [[8, 9], [1, 2, 3, 4, 5, 6, 7]]
        assert g(7) == 0 and g(0) == 1

    def test_trivial(self):
        g = Partition.trivial(4)
        np.testing.assert_array_equal(g.membership, [0, 0, 0, 0])

    def test_membership_round_trip(self):
        g = Partition.from_membership([1, 0, 1, 2])
        np.testing.assert_array_equal(g.membership, [1, 0, 1, 2])
        assert g.membership.flags.writeable is False

    @pytest.mark.parametrize("spec, err", [
        ("1,2|2,3", DimensionMismatch),
        ("1|2", DimensionMismatch),
        ("1-3|4", IndexOutOfRange),
        ("1,x|2,3", ConfigError),
    ])
    def test_bad_specs(self, spec, err):
        with pytest.raises(err):
            Partition.parse(spec, 3)
