import numpy as np
import pytest

from doseresponse.knn import CommonSupportError, KnnModel


def toy_training_set(seed=0, n=50, p=4, k=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = rng.integers(0, k, size=n)
    s = rng.uniform(0.0, 1.0, size=n)
    y = rng.normal(size=n)
    return X, t, s, y


def test_k1_self_query_returns_own_outcome():
    data = toy_training_set()
    X, t, s, y = data
    model = KnnModel(num_neighbours=1, bandwidth=0.05).fit(data)
    for i in (0, 7, 23):
        pred = model.predict(X[i : i + 1], int(t[i]), float(s[i]))
        assert pred[0] == y[i]


def test_prediction_within_neighbour_outcome_range():
    data = toy_training_set(seed=1)
    X, t, s, y = data
    model = KnnModel(num_neighbours=5, bandwidth=0.2).fit(data)
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = rng.normal(size=(1, 4))
        pred = model.predict(q, 0, 0.5)[0]
        assert y.min() <= pred <= y.max()


def test_matches_exhaustive_scan():
    data = toy_training_set(seed=3)
    X, t, s, y = data
    K, h = 3, 0.15
    model = KnnModel(num_neighbours=K, bandwidth=h).fit(data)
    rng = np.random.default_rng(4)
    for _ in range(15):
        q = rng.normal(size=4)
        tt = int(rng.integers(0, 2))
        ss = float(rng.uniform(0.0, 1.0))
        # independent scan: widen h until >= K candidates, then K nearest
        width = h
        while True:
            cand = [
                j
                for j in range(X.shape[0])
                if t[j] == tt and abs(s[j] - ss) <= width
            ]
            if len(cand) >= K:
                break
            width *= 2.0
        cand.sort(key=lambda j: (float(np.sum((X[j] - q) ** 2)), j))
        expected = float(np.mean([y[j] for j in cand[:K]]))
        assert model.predict(q[None, :], tt, ss)[0] == pytest.approx(expected, rel=1e-12)


def test_missing_treatment_is_common_support_error():
    X, t, s, y = toy_training_set(seed=5)
    t = np.zeros_like(t)
    model = KnnModel().fit((X, t, s, y))
    with pytest.raises(CommonSupportError):
        model.predict(X[:1], 1, 0.5)


def test_permutation_invariance():
    data = toy_training_set(seed=6)
    X, t, s, y = data
    model_a = KnnModel(num_neighbours=4, bandwidth=0.1).fit(data)
    perm = np.random.default_rng(7).permutation(X.shape[0])
    model_b = KnnModel(num_neighbours=4, bandwidth=0.1).fit((X[perm], t[perm], s[perm], y[perm]))
    rng = np.random.default_rng(8)
    for _ in range(10):
        q = rng.normal(size=(1, 4))
        ss = float(rng.uniform(0.0, 1.0))
        assert model_a.predict(q, 1, ss)[0] == pytest.approx(
            model_b.predict(q, 1, ss)[0], rel=1e-12
        )


def test_bandwidth_widens_until_enough_candidates():
    X = np.zeros((3, 2))
    t = np.zeros(3, dtype=int)
    s = np.array([0.1, 0.5, 0.9])
    y = np.array([1.0, 2.0, 3.0])
    model = KnnModel(num_neighbours=3, bandwidth=0.01).fit((X, t, s, y))
    assert model.predict(np.zeros((1, 2)), 0, 0.1)[0] == pytest.approx(2.0)


def test_deterministic_given_inputs():
    data = toy_training_set(seed=9)
    m1 = KnnModel(num_neighbours=2, bandwidth=0.3).fit(data)
    m2 = KnnModel(num_neighbours=2, bandwidth=0.3).fit(data)
    q = np.random.default_rng(10).normal(size=(5, 4))
    assert np.array_equal(m1.predict(q, 0, 0.7), m2.predict(q, 0, 0.7))


def test_predict_each_and_factual_paths():
    data = toy_training_set(seed=11)
    X, t, s, y = data
    model = KnnModel(num_neighbours=1, bandwidth=0.05).fit(data)
    fact = model.predict_factual(X[:10], t[:10], s[:10])
    assert np.array_equal(fact, y[:10])  # K=1 self-queries
    each = model.predict_each(X[:4], 0, np.array([0.2, 0.4, 0.6, 0.8]))
    assert each.shape == (4,)
