import numpy as np
import pytest

from mudinet.baselines import (
    BaselineConfig,
    MLPRegressor,
    TransformerRegressor,
    mean_predictor,
    predict_baseline,
    single_time_view,
    train_baseline,
)
from mudinet.model import ModelConfig, MudiNet, TrainConfig, load_model, save_model

from test_model import smoke_split

MC = ModelConfig(taps=8, T=4, d=4, l_s=2, l_d=2, l_u=3, hidden=6, layers=2)


def test_config_modes():
    assert BaselineConfig("mlp").input_mode == "single-time"
    assert BaselineConfig("transformer").input_mode == "multi-time"
    with pytest.raises(ValueError):
        BaselineConfig("mlp", input_mode="multi-time")
    with pytest.raises(ValueError):
        BaselineConfig("transformer", input_mode="single-time")
    with pytest.raises(ValueError):
        BaselineConfig("cnn")


def test_mlp_mirrors_ue_branch_and_position_head():
    mlp = MLPRegressor(BaselineConfig.mirroring("mlp", MC), 0)
    net = MudiNet(MC, 0)
    for name, p in mlp.params.items():
        if name != "pos.h0.W":
            assert p.shape == net.params[name].shape, name
    # the MLP is exactly the attention-free, variance-free subset
    shared = {k for k in net.params if k.startswith(("ue.h", "ue_mu", "pos.h", "pos.out"))}
    assert set(mlp.params) == shared
    # the position head sees z_u only, so its first layer is narrower by l_s
    assert mlp.params["pos.h0.W"].shape[0] == MC.l_u


def test_single_time_view_row_count():
    x = np.zeros((5, 10, 8))
    y = np.zeros((5, 10, 2))
    xs, ys = single_time_view(x, y)
    assert xs.shape == (50, 1, 8) and ys.shape == (50, 1, 2)


def test_mlp_is_rowwise():
    mlp = MLPRegressor(BaselineConfig.mirroring("mlp", MC), 0)
    x = np.random.default_rng(0).uniform(size=(4, MC.taps))
    p = mlp.predict(x)
    x2 = x.copy()
    x2[1] += 1.0
    p2 = mlp.predict(x2)
    np.testing.assert_array_equal(p[[0, 2, 3]], p2[[0, 2, 3]])
    assert not np.array_equal(p[1], p2[1])


def test_transformer_permutation_equivariant():
    tf = TransformerRegressor(BaselineConfig.mirroring("transformer", MC), 0)
    x = np.random.default_rng(1).uniform(size=(MC.T, MC.taps))
    perm = [2, 0, 3, 1]
    np.testing.assert_allclose(tf.predict(x[perm]), tf.predict(x)[perm], rtol=1e-12, atol=1e-12)
    assert np.array_equal(predict_baseline(tf, x), predict_baseline(tf, x))


def test_predict_shape_check():
    mlp = MLPRegressor(BaselineConfig.mirroring("mlp", MC), 0)
    with pytest.raises(ValueError):
        mlp.predict(np.zeros((3, MC.taps + 1)))


@pytest.mark.parametrize("kind", ["mlp", "transformer"])
def test_training_deterministic(kind, tmp_path):
    split = smoke_split()
    bc = BaselineConfig.mirroring(kind, MC)
    a, ha = train_baseline(split, bc, epochs=3, batch=4, seed=2)
    b, hb = train_baseline(split, bc, epochs=3, batch=4, seed=2)
    assert len(ha) == 3 and ha[-1]["total"] == hb[-1]["total"]
    assert ha[-1]["kl_s"] == 0.0 and ha[-1]["rec"] == 0.0
    x, _ = split.arrays("test")
    save_model(a, tmp_path / "b.mdpw")
    back = load_model(tmp_path / "b.mdpw")
    assert np.array_equal(back.predict(x), a.predict(x))


def test_mlp_step_parity_with_multi_time_models(monkeypatch):
    import mudinet.model as model_mod
    calls = {"n": 0}
    real = model_mod.adam_step

    def counting(*args, **kw):
        calls["n"] += 1
        return real(*args, **kw)
    monkeypatch.setattr(model_mod, "adam_step", counting)
    split = smoke_split(n=20)
    steps = {}
    for kind in ("mlp", "transformer"):
        calls["n"] = 0
        train_baseline(split, BaselineConfig.mirroring(kind, MC), epochs=2, batch=4, seed=0)
        steps[kind] = calls["n"]
    assert steps["mlp"] == steps["transformer"] == 2 * 4  # 16 training samples, batch 4


def test_smoke_mlp_beats_mean_predictor():
    split = smoke_split(n=40, seed=3)
    mc = ModelConfig(taps=8, T=4, d=8, l_s=2, l_d=2, l_u=6, hidden=32, layers=2)
    model, _ = train_baseline(split, BaselineConfig.mirroring("mlp", mc), epochs=80, batch=8, seed=0,
                              train_config=TrainConfig(lr_base=1e-2, lr_floor=1e-3))
    x, y = split.arrays("test")
    me = np.linalg.norm(model.predict(x) - y, axis=-1).mean()
    me_mean = np.linalg.norm(mean_predictor(split)(x) - y, axis=-1).mean()
    assert me < me_mean


def test_mean_predictor_returns_train_centre():
    split = smoke_split()
    _, y = split.arrays("train")
    pred = mean_predictor(split)(np.zeros((2, 4, 8)))
    assert pred.shape == (2, 4, 2)
    np.testing.assert_allclose(pred[0, 0], y.reshape(-1, 2).mean(0))


def test_empty_split_rejected():
    from mudinet.dataset import DatasetSplit
    with pytest.raises(ValueError):
        train_baseline(DatasetSplit([], [], 0, 1), BaselineConfig("mlp", taps=8), 1, 1)
