"""Sampling operator, interpolator, admissibility and greedy selection."""

import itertools
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sggru.graph import Spectrum, complete_graph, graph_spectrum, path_graph, random_geometric_graph
from sggru.sampling import (
    GREEDY_TIE_TOL,
    IllConditionedWarning,
    SamplingError,
    SamplingPlan,
    bandlimit_split,
    build_interpolator,
    build_sampling_operator,
    check_admissibility,
    choose_frequency_set,
    default_k,
    greedy_scores,
    greedy_scores_direct,
    make_plan,
    pinv_gram,
    reconstruction_error_bound,
    select_plan,
    select_sampling_set_greedy,
    singular_values,
)


@pytest.fixture(scope="module")
def spec20():
    return graph_spectrum(random_geometric_graph(20, seed=7))


class TestOperators:
    def test_sampling_operator_selects_rows(self):
        psi = build_sampling_operator([2, 0], 4)
        np.testing.assert_array_equal(psi @ np.array([10.0, 11, 12, 13]), [12, 10])

    def test_sampling_operator_rejects_duplicates_and_range(self):
        with pytest.raises(SamplingError):
            build_sampling_operator([1, 1], 3)
        with pytest.raises(SamplingError):
            build_sampling_operator([3], 3)

    def test_singular_values_match_numpy(self, rng):
        for shape in [(5, 2), (3, 3), (2, 4), (7, 1)]:
            a = rng.normal(size=shape)
            np.testing.assert_allclose(singular_values(a), np.linalg.svd(a, compute_uv=False), atol=1e-12)

    def test_pinv_matches_least_squares(self, rng):
        a = rng.normal(size=(7, 3))
        b = rng.normal(size=7)
        np.testing.assert_allclose(pinv_gram(a) @ b, np.linalg.lstsq(a, b, rcond=None)[0], atol=1e-10)

    def test_interpolator_against_closed_form(self, spec20):
        s, f = [0, 3, 5, 8, 13, 17], [0, 1, 2]
        u_f = spec20.eigenvectors[:, f]
        psi = build_sampling_operator(s, 20)
        expected = u_f @ np.linalg.inv(u_f.T @ psi.T @ psi @ u_f) @ u_f[s].T
        np.testing.assert_allclose(build_interpolator(s, f, spec20), expected, atol=1e-10)

    def test_spectral_interpolator_is_basis(self, spec20):
        plan = select_plan(spec20, 8, [0, 2, 4])
        np.testing.assert_allclose(plan.spectral_interpolator, plan.basis, atol=1e-10)


class TestAdmissibility:
    def test_rank_deficient_rejected(self):
        spec = graph_spectrum(complete_graph(4))
        # every eigenvector but the first sums to zero; so U[S, F] has rank < 2 if S is one node
        with pytest.raises(SamplingError, match="admissible"):
            build_interpolator([0], [0, 1], spec)

    def test_sv_min_is_cos_theta(self, spec20):
        plan = select_plan(spec20, 6, [0, 1, 2])
        sub = spec20.eigenvectors[np.ix_(plan.sample_nodes, [0, 1, 2])]
        assert plan.cos_theta == pytest.approx(np.linalg.svd(sub, compute_uv=False)[-1], abs=1e-12)

    def test_rank_matches_complement_condition(self):
        rng = np.random.default_rng(3)
        for trial in range(200):
            n = int(rng.integers(3, 10))
            spec = graph_spectrum(random_geometric_graph(n, k=2, seed=trial))
            k = int(rng.integers(1, n))
            m = int(rng.integers(1, n))
            s = rng.choice(n, size=m, replace=False)
            f = rng.choice(n, size=k, replace=False)
            adm = check_admissibility(s, f, spec)
            if 1e-6 < adm.sv_min and adm.sv_max_complement < 1 - 1e-6 or adm.sv_min < 1e-12:
                assert adm.rank_ok == adm.complement_ok

    def test_ill_conditioned_warning(self):
        # U[S, F] = diag(1, 1e-9): full rank but condition number 1e9
        c, t = np.cos(1e-9), np.sin(1e-9)
        u = np.array([[1.0, 0.0, 0.0], [0.0, c, -t], [0.0, t, c]])
        spec = Spectrum(np.array([0.0, 1.0, 2.0]), u)
        with pytest.warns(IllConditionedWarning):
            build_interpolator([0, 2], [0, 1], spec)

    def test_error_bound_requires_positive_sv(self):
        with pytest.raises(SamplingError):
            reconstruction_error_bound(1.0, 0.0)
        assert reconstruction_error_bound(0.5, 0.25) == 2.0


@settings(max_examples=60, deadline=None)
@given(n=st.integers(3, 18), seed=st.integers(0, 99_999), data=st.data())
def test_reconstruction_exact_on_bandlimited(n, seed, data):
    spec = graph_spectrum(random_geometric_graph(n, seed=seed))
    k = data.draw(st.integers(1, min(5, n)))
    m = data.draw(st.integers(k, n))
    f = sorted(data.draw(st.lists(st.integers(0, n - 1), min_size=k, max_size=k, unique=True)))
    plan = make_plan(spec, select_sampling_set_greedy(spec, f, m), f)
    x = plan.basis @ np.random.default_rng(seed).normal(size=k)
    np.testing.assert_allclose(plan.interpolate(plan.sample(x)), x, atol=1e-9)
    # with hidden nodes, interpolating arbitrary samples yields an F-bandlimited signal
    if m == n:
        return
    y = np.random.default_rng(seed + 1).normal(size=n)
    assert bandlimit_split(plan.interpolate(plan.sample(y)), f, spec).epsilon < 1e-9


class TestGreedy:
    def test_fast_scorer_matches_svd(self, spec20, rng):
        u = spec20.eigenvectors[:, [0, 1, 3, 6]]
        for size in range(0, 9):
            rows = u[rng.choice(20, size=size, replace=False)]
            np.testing.assert_allclose(greedy_scores(rows, u), greedy_scores_direct(rows, u), atol=1e-12)

    def test_same_selection_as_svd_scorer(self, spec20):
        for f in ([0, 1], [0, 1, 2, 3], [2, 5, 9]):
            assert (select_sampling_set_greedy(spec20, f, 10)
                    == select_sampling_set_greedy(spec20, f, 10, scorer=greedy_scores_direct))

    def test_ties_go_to_lowest_index(self):
        # the constant eigenvector scores every node identically
        spec = graph_spectrum(path_graph(5))
        assert select_sampling_set_greedy(spec, [0], 1) == [0]

    def test_deterministic(self, spec20):
        a = select_sampling_set_greedy(spec20, [0, 1, 2], 7)
        assert a == select_sampling_set_greedy(spec20, [0, 1, 2], 7)
        assert len(set(a)) == 7

    def test_m_below_k_rejected(self, spec20):
        with pytest.raises(SamplingError):
            select_sampling_set_greedy(spec20, [0, 1, 2], 2)

    def test_near_exhaustive_optimum(self):
        ratios = []
        for seed in range(10):
            spec = graph_spectrum(random_geometric_graph(9, k=3, seed=seed))
            u = spec.eigenvectors[:, :3]
            best = max(np.linalg.svd(u[list(s)], compute_uv=False)[-1]
                       for s in itertools.combinations(range(9), 4))
            got = np.linalg.svd(u[select_sampling_set_greedy(spec, [0, 1, 2], 4)], compute_uv=False)[-1]
            ratios.append(got / best)
        assert min(ratios) > 0.8


class TestFrequencySets:
    def test_default_k(self):
        assert default_k(9) == 3 and default_k(10) == 3 and default_k(2) == 0

    def test_smallest(self, spec20):
        assert choose_frequency_set("smallest", spec20, k=4) == [0, 1, 2, 3]
        assert choose_frequency_set("smallest", spec20, m=9) == [0, 1, 2]

    def test_dominant_picks_energetic_modes(self, spec20):
        coeffs = np.zeros((20, 30))
        coeffs[[3, 11]] = 5.0
        coeffs[7] = 1.0
        x = spec20.eigenvectors @ coeffs
        assert choose_frequency_set("dominant", spec20, k=2, calibration_signals=x) == [3, 11]
        with pytest.raises(ValueError):
            choose_frequency_set("dominant", spec20, k=2)


class TestPlan:
    def test_round_trip(self, spec20, tmp_path):
        plan = select_plan(spec20, 9, [0, 1, 2])
        plan.save(tmp_path / "p.json")
        back = SamplingPlan.load(tmp_path / "p.json")
        assert back.content_hash() == plan.content_hash()
        np.testing.assert_array_equal(back.interpolator, plan.interpolator)

    def test_tampered_payload_rejected(self, spec20):
        d = select_plan(spec20, 9, [0, 1, 2]).to_dict()
        d["interpolator"]["data"][0] += 1.0
        with pytest.raises(SamplingError, match="hash"):
            SamplingPlan.from_dict(d)

    def test_full_sampling_identity(self, spec20):
        plan = select_plan(spec20, 20, [0, 1, 2, 3])
        assert plan.sample_nodes == tuple(range(20))
        np.testing.assert_array_equal(plan.interpolator, np.eye(20))
        np.testing.assert_allclose(plan.spectral_interpolator, plan.basis)
        assert plan.hidden_nodes.size == 0

    def test_hidden_nodes_complement(self, spec20):
        plan = select_plan(spec20, 6, [0, 1])
        assert sorted(set(plan.hidden_nodes) | set(plan.sample_nodes)) == list(range(20))

    def test_truncated_gft_shape(self, spec20):
        plan = select_plan(spec20, 6, [0, 1])
        assert plan.truncated_gft.shape == (2, 6)


def test_secular_scores_resolve_below_tie_tolerance():
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(300):
        n, k, i = rng.integers(4, 30), rng.integers(1, 9), rng.integers(0, 12)
        u = np.linalg.qr(rng.normal(size=(n, n)))[0][:, :k]
        idx = rng.permutation(n)
        if i >= n:
            continue
        worst = max(worst, np.max(np.abs(greedy_scores(u[idx[:i]], u[idx[i:]])
                                         - greedy_scores_direct(u[idx[:i]], u[idx[i:]]))))
    assert worst < 0.1 * GREEDY_TIE_TOL
