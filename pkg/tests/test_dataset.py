import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inattention.dataset import (
    TAU_MATCH,
    YOUTUBE_SCHEMA,
    DatasetParseError,
    DatasetSchema,
    DatasetValidationError,
    EstimatedModel,
    StochasticChoiceDataset,
    compute_posteriors,
    data_matching_residual,
    dedup_posteriors,
    estimate_policy_prior,
    ingest,
    model_from_policies,
    parse_csv,
    recover_attention_function,
    recover_choice_function,
)


def _csv(rows):
    return "t,x,f,a,k\n" + "".join(",".join(map(str, r)) + "\n" for r in rows)


class TestIngest:
    def test_four_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(_csv([(1, 1, 1, 1, 1), (2, 2, 1, 2, 1), (3, 1, 1, 2, 1), (4, 2, 1, 1, 1)]))
        d = ingest(p)
        assert d.T == 4
        assert d.T_k == (4,)
        assert d.state_count == 2

    def test_action_out_of_range(self):
        with pytest.raises(DatasetValidationError, match="a=7"):
            parse_csv(_csv([(1, 1, 1, 7, 1)]), YOUTUBE_SCHEMA)

    def test_youtube_schema_accepted(self):
        rows = [(t, 1 + t % 2, 1 + t % 4, 1 + t % 6, 1 + t % 2) for t in range(1, 49)]
        d = parse_csv(_csv(rows), YOUTUBE_SCHEMA)
        assert d.frame_count == 4 and d.schema.action_counts == (6, 6)
        assert YOUTUBE_SCHEMA.state_labels[0] == "viewcount above 10,000"

    def test_malformed_row_reports_line(self):
        text = "t,x,f,a,k\n1,1,1,1,1\n2,1,x,1,1\n"
        with pytest.raises(DatasetParseError) as e:
            parse_csv(text)
        assert e.value.line == 3

    def test_short_row(self):
        with pytest.raises(DatasetParseError, match="line 2"):
            parse_csv("t,x,f,a,k\n1,1,1\n")

    def test_missing_column(self):
        with pytest.raises(DatasetParseError, match="missing"):
            parse_csv("t,x,f,a\n1,1,1,1\n")

    def test_time_must_increase(self):
        with pytest.raises(DatasetValidationError, match="increasing"):
            parse_csv(_csv([(2, 1, 1, 1, 1), (2, 1, 1, 1, 1)]))

    def test_csv_round_trip(self):
        d = parse_csv(_csv([(1, 1, 1, 1, 1), (5, 2, 1, 2, 1)]))
        assert parse_csv(d.to_csv(), d.schema).to_array().tolist() == d.to_array().tolist()


class TestEstimate:
    def test_prior_symmetry(self):
        d = parse_csv(_csv([(1, 1, 1, 1, 1), (2, 1, 1, 1, 1), (3, 2, 1, 1, 1), (4, 2, 1, 1, 1)]))
        m = estimate_policy_prior(d)
        assert m.prior.tolist() == [0.5, 0.5]

    def test_count_ratio(self):
        rows = [(t, 1, 1, a, 1) for t, a in zip(range(1, 5), (1, 1, 1, 2))]
        m = estimate_policy_prior(parse_csv(_csv(rows)))
        assert m.policies[0][0, 0].tolist() == [0.75, 0.25]

    def test_unobserved_cell_flagged(self):
        schema = DatasetSchema(2, 1, (2,))
        m = estimate_policy_prior(parse_csv(_csv([(1, 1, 1, 1, 1)]), schema))
        assert np.isnan(m.policies[0][0, 1]).all()
        assert not m.observed(0)[0, 1]
        assert any("x=2" in n for n in m.notes)
        m = compute_posteriors(m)
        assert m.signal_sets[0][0].shape[0] == 0

    def test_empty_dataset(self):
        with pytest.raises(DatasetValidationError):
            estimate_policy_prior(StochasticChoiceDataset.from_array(np.zeros((0, 5)), DatasetSchema(1, 1, (1,))))

    def test_mle_converges(self):
        rng = np.random.default_rng(0)
        pi = np.array([[0.7, 0.3], [0.2, 0.8]])
        tv = []
        for T in (100, 10_000):
            x = rng.integers(1, 3, size=T)
            a = np.array([rng.choice(2, p=pi[xx - 1]) + 1 for xx in x])
            arr = np.column_stack([np.arange(1, T + 1), x, np.ones(T, int), a, np.ones(T, int)])
            m = estimate_policy_prior(StochasticChoiceDataset.from_array(arr))
            tv.append(0.5 * np.abs(m.policies[0][0] - pi).sum(axis=1).max())
        assert tv[1] < tv[0]


class TestPosteriors:
    def test_fully_revealing(self):
        m = model_from_policies([0.5, 0.5], [np.eye(2)])
        assert m.posteriors[0][0, 0, 0] == 1.0

    def test_mixed_bayes(self):
        m = model_from_policies([0.5, 0.5], [np.array([[0.8, 0.2], [0.4, 0.6]])])
        assert m.posteriors[0][0, 0, 0] == pytest.approx(2 / 3, abs=1e-15)
        alpha = recover_attention_function(m, 0, 0)
        assert alpha[0].tolist() == pytest.approx([0.8, 0.4])

    def test_uninformative_collapses(self):
        m = model_from_policies([0.3, 0.7], [np.array([[0.5, 0.5], [0.5, 0.5]])])
        assert m.signal_sets[0][0].shape[0] == 1
        assert m.signal_sets[0][0][0] == pytest.approx([0.3, 0.7])
        assert recover_attention_function(m, 0, 0).tolist() == [[1.0, 1.0]]

    def test_zero_marginal_warns(self):
        with pytest.warns(UserWarning, match="zero marginal"):
            m = model_from_policies([0.5, 0.5], [np.array([[1.0, 0.0], [1.0, 0.0]])])
        assert m.signal_of_action[0][0].tolist() == [0, -1]

    def test_choice_one_action_per_signal(self):
        m = model_from_policies([0.5, 0.5], [np.eye(2)])
        assert recover_choice_function(m, 0, 0).tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_choice_shared_signal_ratio(self):
        # actions 1 and 2 share a posterior; marginals 0.3 and 0.6
        pol = np.array([[4 / 15, 8 / 15, 0.2], [1 / 3, 2 / 3, 0.0]])
        mu = np.array([0.5, 0.5])
        m = model_from_policies(mu, [pol])
        eta = recover_choice_function(m, 0, 0)
        s = m.signal_of_action[0][0][0]
        assert m.marginals[0][0][:2] == pytest.approx([0.3, 0.6], abs=1e-15)
        assert m.signal_of_action[0][0][1] == s
        assert eta[:2, s] == pytest.approx([1 / 3, 2 / 3], abs=1e-15)

    def test_reconstruction_random_three_state(self):
        rng = np.random.default_rng(4)
        mu = rng.dirichlet(np.ones(3))
        pol = rng.dirichlet(np.ones(4), size=3)
        pol[:, 3] = pol[:, 2] * 0.5  # make two actions share a posterior
        pol /= pol.sum(axis=1, keepdims=True)
        m = model_from_policies(mu, [pol])
        assert data_matching_residual(m, 0, 0) <= 1e-10

    def test_dedup_bound(self):
        posts = np.array([[0.5, 0.5], [0.5 + 0.9e-9, 0.5 - 0.9e-9], [0.5 + 1.8e-9, 0.5 - 1.8e-9]])
        sig, idx = dedup_posteriors(posts, np.ones(3, bool))
        # the third row is 1.8e-9 from the representative, so it starts a new signal
        assert idx.tolist() == [0, 0, 1]

    def test_json_round_trip(self):
        m = model_from_policies([0.25, 0.75], [np.array([[0.8, 0.2], [0.4, 0.6]])])
        blob = json.dumps(m.to_dict())
        m2 = EstimatedModel.from_dict(json.loads(blob))
        assert np.array_equal(m2.policies[0], m.policies[0])
        assert np.array_equal(m2.prior, m.prior)


@st.composite
def random_datasets(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    X = draw(st.integers(1, 4))
    N = draw(st.integers(1, 2))
    A = tuple(draw(st.lists(st.integers(1, 4), min_size=1, max_size=3)))
    T = draw(st.integers(1, 200))
    k = rng.integers(1, len(A) + 1, size=T)
    a = np.array([rng.integers(1, A[kk - 1] + 1) for kk in k])
    arr = np.column_stack(
        [np.arange(1, T + 1), rng.integers(1, X + 1, size=T), rng.integers(1, N + 1, size=T), a, k]
    )
    return StochasticChoiceDataset.from_array(arr, DatasetSchema(X, N, A))


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(random_datasets())
    def test_bayes_consistency_and_data_matching(self, d):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = compute_posteriors(estimate_policy_prior(d))
        assert sum(d.T_k) == d.T
        assert abs(m.prior.sum() - 1.0) <= 1e-12
        for k in range(m.K):
            obs = m.observed(k)
            assert np.allclose(m.policies[k][obs].sum(axis=-1), 1.0, atol=1e-12)
            for f in range(m.N):
                if not m.complete(k, f):
                    continue
                post = m.posteriors[k][f]
                ok = m.marginals[k][f] > 0
                assert np.all(np.abs(post[ok].sum(axis=1) - 1.0) <= 1e-12)
                assert data_matching_residual(m, k, f) <= TAU_MATCH
                alpha = recover_attention_function(m, k, f)
                assert np.allclose(alpha.sum(axis=0), 1.0, atol=1e-12)
                eta = recover_choice_function(m, k, f)
                assert np.allclose(eta.sum(axis=0), 1.0, atol=1e-12)
                # every signal is some action's posterior
                for s in m.signal_sets[k][f]:
                    assert np.any(np.all(np.abs(post[ok] - s) <= 1e-9, axis=1))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8))
    def test_dedup_never_merges_far_vectors(self, seed, n):
        rng = np.random.default_rng(seed)
        base = rng.dirichlet(np.ones(3))
        posts = base + rng.uniform(-3e-9, 3e-9, size=(n, 3))
        sig, idx = dedup_posteriors(posts, np.ones(n, bool))
        for i in range(n):
            for j in range(n):
                if idx[i] == idx[j]:
                    assert np.max(np.abs(posts[i] - posts[j])) <= 2e-9 + 1e-18
