import numpy as np
import pytest

import oracles
from fpindex.descriptor import DescriptorTransform, project
from fpindex.errors import FormatError, ParameterError, TrainingError
from fpindex.training import (
    Codebook, LDAResult, PCAResult, codebook_to_bytes, compose_transform, fit_codebook, fit_lda, fit_pca,
    load_codebook, load_transform, save_codebook, save_transform, train_models, transform_to_bytes,
)


# -- PCA -----------------------------------------------------------------------

def test_pca_line_data(rng):
    direction = rng.normal(size=360)
    x = 5.0 + np.outer(rng.normal(size=80), direction)
    p = fit_pca(x, 30)
    assert p.eigenvalues[0] > 0
    assert np.all(p.eigenvalues[1:] <= 1e-9 * p.eigenvalues[0])


def test_pca_matches_dense_eigensolver(rng):
    x = rng.normal(size=(500, 360))
    p = fit_pca(x, 30)
    mean, w, v = oracles.pca_oracle(x, 30)
    np.testing.assert_allclose(p.eigenvalues, w, rtol=1e-9)

    def recon_error(basis):
        c = x - mean
        return np.sum((c - c @ basis @ basis.T) ** 2)

    assert abs(recon_error(p.matrix) - recon_error(v)) <= 1e-6 * recon_error(v)


def test_pca_orthonormal_sorted_centered(rng):
    x = rng.normal(size=(200, 360)) * np.linspace(3, 0.1, 360)
    p = fit_pca(x, 30)
    assert p.matrix.shape == (360, 30)
    assert np.max(np.abs(p.matrix.T @ p.matrix - np.eye(30))) <= 1e-9
    assert np.all(np.diff(p.eigenvalues) <= 0)
    assert np.max(np.abs(p.apply(p.mean))) == 0


def test_pca_deterministic_signs(rng):
    x = rng.normal(size=(100, 40))
    a, b = fit_pca(x, 5), fit_pca(x.copy(), 5)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert np.all(a.matrix[np.argmax(np.abs(a.matrix), axis=0), range(5)] > 0)


def test_pca_too_few_samples():
    with pytest.raises(TrainingError):
        fit_pca(np.random.default_rng(0).normal(size=(20, 360)), 30)
    with pytest.raises(TrainingError):
        fit_pca(np.ones((100, 10)), 30)


# -- LDA -----------------------------------------------------------------------

def test_lda_two_class_fisher(rng):
    cov = np.diag(np.linspace(0.2, 3.0, 30))
    a = rng.multivariate_normal(np.zeros(30), cov, size=400)
    b = rng.multivariate_normal(np.full(30, 1.5), cov, size=400)
    x = np.vstack([a, b])
    labels = np.repeat([0, 1], 400)
    lda = fit_lda(x, labels, out_dim=1)
    w = lda.matrix[:, 0]
    cos = abs(w @ oracles.fisher_direction(x, labels))
    assert cos >= 0.99


def _clustered(rng, n_classes=40, per=12, dim=30, spread=None):
    spread = np.ones(dim) if spread is None else spread
    means = rng.normal(size=(n_classes, dim)) * spread
    x = np.repeat(means, per, axis=0) + rng.normal(size=(n_classes * per, dim)) * 0.3
    return x, np.repeat(np.arange(n_classes), per)


def test_lda_eigenvalues_collapse_when_labels_shuffled(rng):
    x, labels = _clustered(rng)
    real = fit_lda(x, labels, 25)
    fake = fit_lda(x, rng.permutation(labels), 25)
    assert fake.eigenvalues[0] <= 0.05 * real.eigenvalues[0]
    assert fake.eigenvalues[0] < 1.0


def test_lda_single_separating_direction(rng):
    spread = np.zeros(30)
    spread[7] = 5.0
    x, labels = _clustered(rng, spread=spread)
    lda = fit_lda(x, labels, 25)
    assert lda.eigenvalues[0] >= 10 * lda.eigenvalues[1]
    assert np.argmax(np.abs(lda.matrix[:, 0])) == 7
    np.testing.assert_allclose(np.linalg.norm(lda.matrix, axis=0), 1.0, atol=1e-12)


def test_lda_needs_enough_classes(rng):
    x, labels = _clustered(rng, n_classes=10)
    with pytest.raises(TrainingError, match="need ≥ 26 classes"):
        fit_lda(x, labels, 25)


def test_lda_drops_singletons(rng):
    x, labels = _clustered(rng, n_classes=30)
    x2 = np.vstack([x, rng.normal(size=(3, 30))])
    labels2 = np.concatenate([labels, [100, 101, 102]])
    np.testing.assert_allclose(fit_lda(x2, labels2, 25).matrix, fit_lda(x, labels, 25).matrix, atol=1e-12)


# -- composition ---------------------------------------------------------------

def test_compose_selectors():
    pca = PCAResult(np.eye(360)[:, :30], np.zeros(360), np.ones(30))
    lda = LDAResult(np.eye(30)[:, :25], np.ones(25))
    t = compose_transform(pca, lda)
    assert t.matrix.shape == (360, 25)
    v = np.arange(360.0)
    assert project(v, t).tolist() == list(range(25))


def test_compose_equals_sequential(rng):
    x, labels = _clustered(rng, n_classes=40, per=10, dim=360)
    pca = fit_pca(x, 30)
    lda = fit_lda(pca.apply(x), labels, 25)
    t = compose_transform(pca, lda)
    assert t.matrix.shape == (360, 25)
    v = rng.normal(size=(10, 360))
    assert np.max(np.abs(project(v, t) - lda.apply(pca.apply(v)))) <= 1e-12 * max(1, np.abs(project(v, t)).max())


def test_compose_dim_mismatch():
    with pytest.raises(ParameterError):
        compose_transform(PCAResult(np.eye(5)[:, :3], np.zeros(5), np.ones(3)), LDAResult(np.eye(4)[:, :2], np.ones(2)))


# -- k-means -------------------------------------------------------------------

def test_kmeans_k_points(rng):
    x = rng.normal(size=(6, 25))
    cb = fit_codebook(x, k=6, seed=1)
    assert cb.inertia == 0
    assert sorted(map(tuple, cb.centroids)) == sorted(map(tuple, x))


def test_kmeans_two_blobs(rng):
    a = rng.normal(size=(50, 25)) * 1e-3
    b = rng.normal(size=(50, 25)) * 1e-3 + 10
    cb = fit_codebook(np.vstack([a, b]), k=2, seed=0)
    c = cb.centroids[np.argsort(cb.centroids[:, 0])]
    np.testing.assert_allclose(c[0], a.mean(0), atol=1e-6)
    np.testing.assert_allclose(c[1], b.mean(0), atol=1e-6)


def test_kmeans_matches_straight_line_oracle(rng):
    x = rng.normal(size=(300, 25))
    cb = fit_codebook(x, k=8, seed=42)
    centers, inertia, history = oracles.kmeans_oracle(x, 8, 42)
    assert cb.inertia == inertia
    np.testing.assert_array_equal(cb.centroids, centers)
    assert list(cb.inertia_history[:-1]) == history


def test_kmeans_inertia_monotone_and_fixed_point(rng):
    x = np.vstack([rng.normal(size=(100, 5)) + c for c in rng.normal(size=(6, 5)) * 3])
    cb = fit_codebook(x, k=12, seed=7)
    h = np.array(cb.inertia_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    labels = np.argmin(((x[:, None] - cb.centroids[None]) ** 2).sum(-1), axis=1)
    for j in range(cb.k):
        np.testing.assert_allclose(cb.centroids[j], x[labels == j].mean(0), atol=1e-9)


def test_kmeans_deterministic(rng):
    x = rng.normal(size=(200, 25))
    a, b = fit_codebook(x, 10, seed=3), fit_codebook(x, 10, seed=3)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert a.inertia_history == b.inertia_history


def test_kmeans_needs_distinct_points():
    with pytest.raises(TrainingError):
        fit_codebook(np.ones((50, 3)), k=2)
    with pytest.raises(ParameterError):
        fit_codebook(np.ones((50, 3)), k=1)


def test_codebook_validation():
    with pytest.raises(ParameterError):
        Codebook(np.zeros((3, 2)))
    with pytest.raises(ParameterError):
        Codebook(np.array([[0.0, np.inf], [1.0, 1.0]]))


# -- end to end ----------------------------------------------------------------

def test_train_models_ignores_unlabeled_in_lda(rng):
    x, labels = _clustered(rng, n_classes=30, per=6, dim=360)
    noise = rng.normal(size=(40, 360))
    xs = np.vstack([x, noise])
    ids = np.concatenate([labels, np.full(40, -1)])
    t, cb, rep = train_models(xs, ids, k=10, seed=0)
    assert (rep.n_features, rep.n_labeled, rep.n_classes) == (220, 180, 30)
    assert t.matrix.shape == (360, 25) and cb.centroids.shape == (10, 25)
    assert rep.inertia == cb.inertia


# -- persistence ---------------------------------------------------------------

@pytest.mark.parametrize("suffix", [".fpix", ".json"])
def test_transform_round_trip(tmp_path, rng, suffix):
    t = DescriptorTransform(rng.normal(size=(360, 25)), rng.normal(size=360))
    p1, p2 = tmp_path / f"a{suffix}", tmp_path / f"b{suffix}"
    save_transform(p1, t)
    back = load_transform(p1)
    assert back.provenance == "loaded"
    np.testing.assert_array_equal(back.matrix, t.matrix)
    np.testing.assert_array_equal(back.mean, t.mean)
    save_transform(p2, back)
    assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize("suffix", [".fpix", ".json"])
def test_codebook_round_trip(tmp_path, rng, suffix):
    cb = Codebook(rng.normal(size=(200, 25)))
    p1, p2 = tmp_path / f"a{suffix}", tmp_path / f"b{suffix}"
    save_codebook(p1, cb)
    save_codebook(p2, load_codebook(p1))
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(load_codebook(p2).centroids, cb.centroids)


def test_binary_layout(rng):
    cb = Codebook(rng.normal(size=(3, 2)))
    data = codebook_to_bytes(cb)
    assert data[:4] == b"FPIX"
    assert data[4:8] == (1).to_bytes(4, "little") and data[8] == 2
    assert np.frombuffer(data[17:], "<f8").tolist() == cb.centroids.ravel().tolist()
    t = DescriptorTransform(np.arange(6.0).reshape(3, 2), np.array([7.0, 8.0, 9.0]))
    assert np.frombuffer(transform_to_bytes(t)[17:], "<f8").tolist() == [7, 8, 9, 0, 1, 2, 3, 4, 5]


def test_load_rejects_bad_files(tmp_path, rng):
    good = codebook_to_bytes(Codebook(rng.normal(size=(3, 2))))
    cases = {"magic": b"XXXX" + good[4:], "short": good[:10], "trunc": good[:-8], "version": good[:4] + b"\x09" + good[5:]}
    for name, data in cases.items():
        p = tmp_path / f"{name}.fpix"
        p.write_bytes(data)
        with pytest.raises(FormatError, match=name):
            load_codebook(p)
    p = tmp_path / "type.fpix"
    p.write_bytes(good)
    with pytest.raises(FormatError, match="record type"):
        load_transform(p)
