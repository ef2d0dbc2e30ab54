import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from inattention.frames import (
    Autoencoder,
    ClusteringError,
    DeepEmbeddedClustering,
    TrainingConfig,
    TrainingDivergedError,
    dec_objective,
    dec_train,
    init_centers,
    kl_divergence,
    pretrain,
    read_features,
    soft_assign,
    target_distribution,
    write_assignments,
    write_latent,
)


def best_permutation_accuracy(truth, pred, n):
    return max(np.mean(np.asarray(p)[pred] == truth) for p in itertools.permutations(range(n)))


def kmeans_ratio(Z, labels):
    """Within-cluster sum of squares over total sum of squares."""
    total = np.sum((Z - Z.mean(axis=0)) ** 2)
    within = sum(np.sum((Z[labels == c] - Z[labels == c].mean(axis=0)) ** 2) for c in np.unique(labels))
    return within / total


def exact_two_means(Z):
    """Best 2-means split along the leading principal direction; exact for well-separated blobs."""
    best = None
    direction = np.linalg.svd(Z - Z.mean(axis=0))[2][0]
    order = np.argsort(Z @ direction)
    for cut in range(1, len(Z)):
        labels = np.zeros(len(Z), dtype=int)
        labels[order[cut:]] = 1
        cost = sum(np.sum((Z[labels == c] - Z[labels == c].mean(axis=0)) ** 2) for c in (0, 1))
        if best is None or cost < best[0]:
            best = (cost, labels)
    return best[1]


def blobs(centers, n, sigma, seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([c + sigma * rng.standard_normal((n, len(c))) for c in centers])
    return X, np.repeat(np.arange(len(centers)), n)


# --- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("activation", ["tanh", "linear"])
def test_dec_objective_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(3)
    ae = Autoencoder(5, latent_dim=3, hidden=(4,), activation=activation, seed=1)
    X = rng.standard_normal((7, 5))
    centers = rng.standard_normal((3, 3))
    P = target_distribution(soft_assign(rng.standard_normal((7, 3)), centers))
    _, grads, grad_c = dec_objective(ae, centers, X, P)
    h = 1e-6
    for p, g in [*zip(ae.params, grads), (centers, grad_c)]:
        for idx in list(np.ndindex(p.shape))[:6]:
            old = p[idx]
            p[idx] = old + h
            up = dec_objective(ae, centers, X, P, grad=False)[0]
            p[idx] = old - h
            down = dec_objective(ae, centers, X, P, grad=False)[0]
            p[idx] = old
            assert g[idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-7)


def test_autoencoder_dict_round_trip():
    ae = Autoencoder(4, latent_dim=2, seed=5)
    back = Autoencoder.from_dict(ae.to_dict())
    X = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(back.encode(X), ae.encode(X))


# --- soft assignment and target ----------------------------------------------


@pytest.mark.parametrize("N", [2, 3, 5])
def test_soft_assign_point_on_center(N):
    centers = np.zeros((N, N))
    centers[1:] = np.eye(N)[1:]  # z at center 0, every other center at distance 1
    q = soft_assign(np.zeros((1, N)), centers)
    assert q[0, 0] == pytest.approx(1 / (1 + (N - 1) / 2), abs=1e-15)


def test_soft_assign_equidistant_and_single_center():
    centers = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    assert np.allclose(soft_assign(np.zeros((1, 2)), centers), 0.25, atol=1e-15)
    assert np.array_equal(soft_assign(np.random.default_rng(0).standard_normal((5, 2)), centers[:1]), np.ones((5, 1)))


def test_soft_assign_dimension_mismatch():
    with pytest.raises(ValueError):
        soft_assign(np.zeros((2, 3)), np.zeros((2, 2)))


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, (6, 3), elements=st.floats(-50, 50)),
    arrays(np.float64, (4, 3), elements=st.floats(-50, 50)),
)
def test_soft_assign_and_target_rows_sum_to_one(Z, centers):
    q = soft_assign(Z, centers)
    assert np.all(q > 0)
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-12)
    p = target_distribution(q)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert kl_divergence(p, q) >= -1e-15


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(0.01, 1.0)))
def test_target_sharpens_strict_max_in_least_frequent_cluster(raw):
    q = raw / raw.sum(axis=1, keepdims=True)
    p = target_distribution(q)
    F = q.sum(axis=0)
    for t in range(q.shape[0]):
        n = int(np.argmax(q[t]))
        strict = np.sum(q[t] == q[t, n]) == 1
        if strict and np.all(F[n] <= F):
            assert p[t, n] >= q[t, n] - 1e-12


def test_target_distribution_examples():
    onehot = np.eye(3)[[0, 1, 2, 1]]
    assert np.array_equal(target_distribution(onehot), onehot)
    assert np.allclose(target_distribution(np.full((2, 2), 0.5)), 0.5)
    q = np.array([[0.6, 0.4], [0.4, 0.6]])  # column sums F = (1, 1)
    assert np.allclose(target_distribution(q)[0], np.array([0.36, 0.16]) / 0.52, atol=1e-15)
    # an empty cluster column stays empty instead of producing NaN
    assert np.array_equal(target_distribution(np.eye(3)[[0, 0, 1]]), np.eye(3)[[0, 0, 1]])


def test_kl_zero_at_fixed_point_and_positive_elsewhere():
    onehot = np.eye(2)[[0, 1]]
    assert kl_divergence(target_distribution(onehot), onehot) == 0.0
    q = np.array([[0.7, 0.3], [0.2, 0.8]])
    assert kl_divergence(target_distribution(q), q) > 0


# --- pretraining -------------------------------------------------------------


def test_pretrain_reduces_loss():
    X, _ = blobs(np.array([[0.0] * 6, [4.0] * 6]), 100, 1.0, 0)
    _, hist = pretrain(X, config=TrainingConfig(pretrain_epochs=30), latent_dim=3)
    assert hist[-1] <= 0.9 * hist[0]


def test_pretrain_linear_subspace_reconstructs_exactly():
    rng = np.random.default_rng(1)
    basis = np.linalg.qr(rng.standard_normal((8, 2)))[0]
    X = rng.standard_normal((200, 2)) @ basis.T
    ae = Autoencoder(8, latent_dim=2, hidden=(2,), activation="linear", noise=0.0, seed=0)
    ae, _ = pretrain(X, ae, TrainingConfig(learning_rate=0.02, pretrain_epochs=300))
    assert ae.reconstruction_loss(X) <= 1e-3


def test_pretrain_without_noise_beats_noisy_input_baseline():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((300, 6))
    sigma = 0.1
    ae = Autoencoder(6, latent_dim=6, hidden=(6,), activation="tanh", noise=0.0, seed=0)
    ae, _ = pretrain(X, ae, TrainingConfig(learning_rate=0.01, pretrain_epochs=200))
    # reconstructing with the corrupted input itself costs sigma^2 * d per record
    assert ae.reconstruction_loss(X) <= sigma**2 * 6


def test_pretrain_latent_space_separates_better_than_raw():
    rng = np.random.default_rng(4)
    mu = np.zeros(10)
    mu[:2] = 3.0
    X, y = blobs(np.vstack([mu, -mu]), 100, 1.0, 4)
    ae, _ = pretrain(X, config=TrainingConfig(pretrain_epochs=100), latent_dim=2)
    Z = ae.encode(X)
    assert kmeans_ratio(Z, exact_two_means(Z)) < kmeans_ratio(X, exact_two_means(X))


def test_pretrain_divergence_names_learning_rate():
    X = np.random.default_rng(0).standard_normal((64, 4)) * 100
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(
        TrainingDivergedError, match="learning_rate"
    ):
        pretrain(
            X, config=TrainingConfig(learning_rate=50.0, pretrain_epochs=20), activation="linear"
        )


def test_pretrain_needs_two_records_per_cluster():
    with pytest.raises(ClusteringError):
        pretrain(np.zeros((5, 2)), n_clusters=3)


# --- center initialization ---------------------------------------------------


def test_init_centers_single_cluster_is_mean():
    Z = np.random.default_rng(0).standard_normal((20, 3))
    assert np.allclose(init_centers(Z, 1), Z.mean(axis=0))


def test_init_centers_recovers_blob_means():
    Z, y = blobs(np.array([[0.0, 0.0], [10.0, 0.0]]), 30, 0.5, 1)
    truth = np.array([Z[y == c].mean(axis=0) for c in (0, 1)])
    oracle = exact_two_means(Z)
    oracle_means = np.array([Z[oracle == c].mean(axis=0) for c in (0, 1)])
    got = init_centers(Z, 2)
    for means in (truth, oracle_means):
        dist = min(
            np.max(np.linalg.norm(got[list(p)] - means, axis=1))
            for p in itertools.permutations(range(2))
        )
        assert dist <= 0.1 * 10.0


def test_init_centers_with_duplicates():
    Z = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 5 + [[5.0, 5.0]] * 2)
    c = init_centers(Z, 3)
    labels = np.argmax(soft_assign(Z, c), axis=1)
    assert len(np.unique(labels)) == 3
    with pytest.raises(ClusteringError):
        init_centers(Z, 4)


# --- joint training ----------------------------------------------------------


def _trained(X, n, seed=0, **kw):
    ae = Autoencoder(X.shape[1], latent_dim=2, hidden=(8,), seed=seed)
    ae, _ = pretrain(X, ae, TrainingConfig(pretrain_epochs=20, seed=seed), n_clusters=n)
    return ae, init_centers(ae.encode(X), n)


def test_point_masses_converge_after_one_refresh():
    X = np.repeat(np.array([[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 3.0]]), 10, axis=0)
    ae, centers = _trained(X, 3)
    res = dec_train(ae, X, centers, update_interval=20)
    assert res.converged
    assert res.refreshes == 2 and res.changed_history == [0.0, 0.0]
    assert len(np.unique(res.assignments)) == 3


def test_full_batch_loss_non_increasing_within_intervals():
    X, _ = blobs(np.array([[0.0] * 4, [3.0] * 4, [-3.0, 3.0, 0.0, 0.0]]), 40, 1.0, 5)
    ae, centers = _trained(X, 3)
    res = dec_train(
        ae, X, centers, tol=1e-9, update_interval=15, max_iter=90, full_batch=True,
        config=TrainingConfig(learning_rate=0.05),
    )
    assert len(res.interval_losses) >= 3
    for losses in res.interval_losses:
        assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert res.interval_losses[0][-1] < res.interval_losses[0][0]


def test_confidence_filter_is_exactly_the_discard_rule():
    X, _ = blobs(np.array([[0.0] * 4, [1.5] * 4]), 100, 1.0, 6)
    ae, centers = _trained(X, 2)
    res = dec_train(ae, X, centers, confidence=0.99, update_interval=30, max_iter=300)
    kept = res.labels >= 0
    assert np.all(res.max_confidence[kept] > 0.99)
    assert np.all(res.max_confidence[~kept] <= 0.99)
    assert np.array_equal(res.labels[kept], res.assignments[kept])


def test_label_stability_at_exit_and_non_convergence_flag():
    X, _ = blobs(np.array([[0.0] * 4, [6.0] * 4]), 50, 1.0, 7)
    ae, centers = _trained(X, 2)
    res = dec_train(ae, X, centers, update_interval=10)
    assert res.converged and res.changed_history[-1] < res.tol
    ae, centers = _trained(X, 2)
    capped = dec_train(ae, X, centers, tol=1e-9, update_interval=10, max_iter=5)
    assert not capped.converged


def test_four_gaussians_clustered_accurately():
    rng = np.random.default_rng(11)
    centers = np.zeros((4, 10))
    centers[:, :4] = 8.0 * np.eye(4)
    X = np.vstack([c + rng.standard_normal((400, 10)) for c in centers])
    y = np.repeat(np.arange(4), 400)
    model = DeepEmbeddedClustering(n_clusters=4, pretrain_epochs=50, random_state=1).fit(X)
    assert best_permutation_accuracy(y, model.clustering_.assignments, 4) >= 0.95


# --- estimator and files -----------------------------------------------------


def test_estimator_api():
    X, _ = blobs(np.array([[0.0] * 3, [6.0] * 3]), 20, 0.5, 8)
    est = DeepEmbeddedClustering(n_clusters=2, latent_dim=2, hidden=(8,), pretrain_epochs=10)
    assert clone(est).get_params() == est.get_params()
    est.fit(X)
    assert est.transform(X).shape == (40, 2)
    assert np.array_equal(est.predict(X), est.labels_)
    assert est.predict_proba(X).shape == (40, 2)
    with pytest.raises(ValueError):
        DeepEmbeddedClustering(activation="relu").fit(X)


def test_feature_and_output_csv(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text("t,v1,v2\n1,0.5,1.0\n2,-1.0,2.0\n")
    t, X = read_features(str(path))
    assert t.tolist() == [1, 2] and X.shape == (2, 2)
    bad = tmp_path / "bad.csv"
    bad.write_text("t,v1\n1,abc\n")
    with pytest.raises(ValueError, match=":2:"):
        read_features(str(bad))
    X4 = np.vstack([X, X + 5])
    ae, centers = _trained(X4, 2)
    res = dec_train(ae, X4, centers, update_interval=5)
    out = tmp_path / "frames.csv"
    write_assignments(str(out), [1, 2, 3, 4], res)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,frame,confidence" and len(lines) == 5
    for line, lab in zip(lines[1:], res.labels):
        assert int(line.split(",")[1]) == (lab + 1 if lab >= 0 else -1)
    write_latent(str(tmp_path / "z.csv"), [1, 2, 3, 4], res.latent)
    assert (tmp_path / "z.csv").read_text().startswith("t,z1,z2\n")
