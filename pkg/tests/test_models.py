import numpy as np
import pytest

from doseresponse.models import (
    DosageError,
    DosageRange,
    DRNet,
    DRNetConfig,
    MLPModel,
    build_baseline,
    copy_parameters,
    fit,
    load_model,
    save_model,
    stratum_index,
    stratum_indices,
)
from doseresponse.nn import Adam


def small_config(**overrides):
    base = dict(
        input_dim=7,
        num_treatments=2,
        num_strata=3,
        base_depth=2,
        base_width=8,
        treatment_depth=1,
        treatment_width=6,
        head_depth=2,
        head_width=5,
        repeat_dosage=True,
        dosage_ranges=[DosageRange(0.0, 1.0), DosageRange(0.0, 1.0)],
    )
    base.update(overrides)
    return DRNetConfig(**base)


def toy_batch(rng, n, k=2, input_dim=7):
    X = rng.normal(size=(n, input_dim))
    t = rng.integers(0, k, size=n)
    s = rng.uniform(0.05, 1.0, size=n)
    y = np.sin(3.0 * s) + 0.5 * X[:, 0] + t
    return X, t, s, y


# ---------------------------------------------------------------- strata


def test_stratum_upper_boundary_maps_to_top():
    r = DosageRange(0.0, 1.0)
    for e in (1, 2, 5, 10):
        assert stratum_index(1.0, r, e) == e - 1


def test_stratum_direct_floor_evaluation():
    assert stratum_index(0.39, DosageRange(0.0, 1.0), 5) == 1


def test_single_stratum_always_zero():
    r = DosageRange(0.2, 0.8)
    for s in (0.2, 0.5, 0.8):
        assert stratum_index(s, r, 1) == 0


def test_stratum_out_of_range_names_dosage():
    with pytest.raises(DosageError) as err:
        stratum_index(1.5, DosageRange(0.0, 1.0), 5)
    assert "1.5" in str(err.value)


def test_strata_partition_is_exhaustive_and_disjoint():
    r = DosageRange(0.0, 1.0)
    E = 5
    grid = np.linspace(0.0, 1.0, 2001)
    idx = stratum_indices(grid, r, E)
    assert idx.min() == 0 and idx.max() == E - 1
    assert np.all(np.diff(idx) >= 0)  # monotone: no overlap
    # interior boundaries belong to the higher stratum
    for e in range(1, E):
        assert stratum_index(e / E, r, E) == e
    assert set(np.unique(idx)) == set(range(E))


# ---------------------------------------------------------------- prediction


def test_identical_parameters_identical_predictions():
    cfg = small_config()
    a = DRNet(cfg, rng=np.random.default_rng(1))
    b = DRNet(cfg, rng=np.random.default_rng(2))
    copy_parameters(a, b)
    X = np.random.default_rng(3).normal(size=(4, 7))
    for t in (0, 1):
        for s in (0.1, 0.5, 1.0):
            assert np.array_equal(a.predict(X, t, s), b.predict(X, t, s))


def test_head_perturbation_is_isolated_to_its_stratum():
    cfg = small_config()
    model = DRNet(cfg, rng=np.random.default_rng(5))
    X = np.random.default_rng(6).normal(size=(3, 7))
    # dosages per stratum (E=3): stratum 0,1,2
    probes = {0: 0.1, 1: 0.5, 2: 0.9}
    before = {(t, e): model.predict(X, t, s) for t in (0, 1) for e, s in probes.items()}
    model.heads[1][2].layers[0].weights[0, 0] += 0.37
    for t in (0, 1):
        for e, s in probes.items():
            after = model.predict(X, t, s)
            if (t, e) == (1, 2):
                assert not np.allclose(after, before[(t, e)])
            else:
                assert np.array_equal(after, before[(t, e)])


def test_base_perturbation_changes_all_treatments():
    cfg = small_config()
    model = DRNet(cfg, rng=np.random.default_rng(8))
    X = np.random.default_rng(9).normal(size=(3, 7))
    before = [model.predict(X, t, 0.5) for t in (0, 1)]
    model.base.layers[0].weights += 0.2
    after = [model.predict(X, t, 0.5) for t in (0, 1)]
    for b, a in zip(before, after):
        assert not np.allclose(b, a)


def test_predict_each_matches_scalar_predict():
    cfg = small_config()
    model = DRNet(cfg, rng=np.random.default_rng(11))
    rng = np.random.default_rng(12)
    X = rng.normal(size=(6, 7))
    s = rng.uniform(0.0, 1.0, size=6)
    each = model.predict_each(X, 1, s)
    ref = np.array([model.predict(X[i : i + 1], 1, s[i])[0] for i in range(6)])
    assert np.allclose(each, ref, atol=1e-12)


def test_predict_rejects_bad_treatment_and_dosage():
    model = DRNet(small_config(), rng=np.random.default_rng(0))
    X = np.zeros((1, 7))
    with pytest.raises(ValueError):
        model.predict(X, 5, 0.5)
    with pytest.raises(DosageError):
        model.predict(X, 0, 2.0)


# ---------------------------------------------------------------- training


def test_single_treatment_batch_leaves_other_stacks_untouched():
    cfg = small_config()
    model = DRNet(cfg, rng=np.random.default_rng(21))
    rng = np.random.default_rng(22)
    X, _, s, y = toy_batch(rng, 16)
    t = np.zeros(16, dtype=np.int64)
    frozen_treat = [p.copy() for p, _ in model.treatments[1].parameters()]
    frozen_heads = [
        [p.copy() for p, _ in head.parameters()] for head in model.heads[1]
    ]
    opt = Adam(learning_rate=1e-2)
    for _ in range(5):
        model.train_step((X, t, s, y), opt, rng)
    for before, (after, _) in zip(frozen_treat, model.treatments[1].parameters()):
        assert np.array_equal(before, after)
    for head_before, head in zip(frozen_heads, model.heads[1]):
        for before, (after, _) in zip(head_before, head.parameters()):
            assert np.array_equal(before, after)


def test_train_step_moves_base_and_routed_stacks():
    model = DRNet(small_config(), rng=np.random.default_rng(31))
    rng = np.random.default_rng(32)
    X, _, _, y = toy_batch(rng, 8)
    t = np.zeros(8, dtype=np.int64)
    s = np.full(8, 0.5)  # stratum 1 of 3
    base_before = model.base.layers[0].weights.copy()
    head_before = model.heads[0][1].layers[0].weights.copy()
    model.train_step((X, t, s, y), Adam(learning_rate=1e-2), rng)
    assert not np.array_equal(base_before, model.base.layers[0].weights)
    assert not np.array_equal(head_before, model.heads[0][1].layers[0].weights)


def test_overfit_four_samples():
    cfg = small_config(num_strata=2)
    model = DRNet(cfg, rng=np.random.default_rng(41))
    rng = np.random.default_rng(42)
    X = rng.normal(size=(4, 7))
    t = np.array([0, 0, 1, 1])
    s = np.array([0.2, 0.8, 0.3, 0.9])
    y = np.array([1.0, -0.5, 2.0, 0.25])
    opt = Adam(learning_rate=5e-3)
    loss = np.inf
    for _ in range(1500):
        loss = model.train_step((X, t, s, y), opt, rng)
        if loss < 1e-3:
            break
    assert loss < 1e-3


def test_zero_learning_rate_changes_nothing():
    model = DRNet(small_config(), rng=np.random.default_rng(51))
    rng = np.random.default_rng(52)
    batch = toy_batch(rng, 10)
    params_before = [p.copy() for p in model.parameter_arrays()]
    pre_step_mse = float(
        np.mean((model.predict_factual(batch[0], batch[1], batch[2]) - batch[3]) ** 2)
    )
    loss = model.train_step(batch, Adam(learning_rate=0.0), rng)
    assert loss == pytest.approx(pre_step_mse, rel=0, abs=0)
    for before, after in zip(params_before, model.parameter_arrays()):
        assert np.array_equal(before, after)


def test_empty_batch_raises():
    model = DRNet(small_config(), rng=np.random.default_rng(0))
    empty = (np.zeros((0, 7)), np.zeros(0, dtype=int), np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        model.train_step(empty, Adam(), np.random.default_rng(0))


def test_dosage_influences_trained_predictions():
    # after training on dosage-dependent outcomes, d(yhat)/ds != 0 on >90% of probes
    cfg = small_config(num_strata=2, head_width=8)
    model = DRNet(cfg, rng=np.random.default_rng(61))
    rng = np.random.default_rng(62)
    X, t, s, y = toy_batch(rng, 64)
    fit(model, (X, t, s, y), epochs=30, batch_size=16, learning_rate=5e-3, seed=7)
    probes = rng.normal(size=(50, 7))
    s0 = rng.uniform(0.1, 0.9, size=50)
    h = 1e-4
    nonzero = 0
    for i in range(50):
        lo = model.predict(probes[i : i + 1], 0, s0[i] - h)[0]
        hi = model.predict(probes[i : i + 1], 0, s0[i] + h)[0]
        if abs(hi - lo) > 0.0:
            nonzero += 1
    assert nonzero / 50 > 0.9


# ---------------------------------------------------------------- baselines


def test_tarnet_has_one_head_per_treatment():
    tarnet = build_baseline("tarnet", small_config(), rng=np.random.default_rng(0))
    assert len(tarnet.heads) == 2
    assert all(len(per_t) == 1 for per_t in tarnet.heads)


def test_drnet_e1_norepeat_matches_tarnet_exactly():
    cfg = small_config(num_strata=1, repeat_dosage=False)
    drnet = DRNet(cfg, rng=np.random.default_rng(71))
    tarnet = build_baseline("tarnet", small_config(), rng=np.random.default_rng(72))
    shapes_a = [p.shape for p in drnet.parameter_arrays()]
    shapes_b = [p.shape for p in tarnet.parameter_arrays()]
    assert shapes_a == shapes_b
    copy_parameters(drnet, tarnet)
    X = np.random.default_rng(73).normal(size=(5, 7))
    for t in (0, 1):
        for s in (0.05, 0.42, 1.0):
            assert np.array_equal(drnet.predict(X, t, s), tarnet.predict(X, t, s))


def test_mlp_learns_treatment_sensitivity():
    mlp = build_baseline("mlp", small_config(), rng=np.random.default_rng(81))
    rng = np.random.default_rng(82)
    n = 128
    X = rng.normal(size=(n, 7))
    t = rng.integers(0, 2, size=n)
    s = rng.uniform(0.05, 1.0, size=n)
    y = 3.0 * t - 1.5  # outcome driven by treatment alone
    fit(mlp, (X, t, s, y), epochs=60, batch_size=32, learning_rate=5e-3, seed=3)
    probe = rng.normal(size=(10, 7))
    gap = np.abs(mlp.predict(probe, 1, 0.5) - mlp.predict(probe, 0, 0.5))
    assert np.all(gap > 1.0)


def test_build_baseline_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_baseline("gps", small_config())


# ---------------------------------------------------------------- bookkeeping


def test_parameter_count_is_function_of_config():
    # hand-computed: base 64+72, treatments 2*54, heads 6*(40+35+6)
    model = DRNet(small_config(), rng=np.random.default_rng(0))
    assert model.parameter_count() == 730
    norepeat = DRNet(small_config(repeat_dosage=False), rng=np.random.default_rng(0))
    assert norepeat.parameter_count() == 700
    # repeat widens every head hidden layer input by exactly one
    per_head_delta = (730 - 700) // 6
    assert per_head_delta == 5  # head_width extra weights per repeated layer


def test_mlp_parameter_count():
    mlp = build_baseline("mlp", small_config(), rng=np.random.default_rng(0))
    # input 7 + 2 (one-hot) + 1 (dosage) = 10; depth 2+1+2=5, width 8
    expected = (8 * 10 + 8) + 4 * (8 * 8 + 8) + (1 * 8 + 1)
    assert mlp.parameter_count() == expected


def test_model_serialization_round_trip(tmp_path):
    model = DRNet(small_config(), rng=np.random.default_rng(91))
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    for a, b in zip(model.parameter_arrays(), loaded.parameter_arrays()):
        assert np.array_equal(a, b)
    X = np.random.default_rng(92).normal(size=(4, 7))
    assert np.array_equal(model.predict(X, 1, 0.7), loaded.predict(X, 1, 0.7))


def test_mlp_serialization_round_trip(tmp_path):
    mlp = build_baseline("mlp", small_config(), rng=np.random.default_rng(93))
    path = tmp_path / "mlp.json"
    save_model(mlp, path)
    loaded = load_model(path)
    assert isinstance(loaded, MLPModel)
    X = np.random.default_rng(94).normal(size=(4, 7))
    assert np.array_equal(mlp.predict(X, 0, 0.3), loaded.predict(X, 0, 0.3))


def test_tarnet_serialization_keeps_kind(tmp_path):
    tarnet = build_baseline("tarnet", small_config(), rng=np.random.default_rng(95))
    path = tmp_path / "tarnet.json"
    save_model(tarnet, path)
    assert load_model(path).kind == "tarnet"


def test_fit_is_deterministic():
    def run():
        model = DRNet(small_config(), rng=np.random.default_rng(101))
        rng = np.random.default_rng(102)
        data = toy_batch(rng, 48)
        fit(model, data, epochs=8, batch_size=16, learning_rate=1e-3, dropout=0.1, seed=5)
        return [p.copy() for p in model.parameter_arrays()]

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)
