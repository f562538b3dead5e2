import numpy as np
import pytest

from conftest import small_config
from structra import ndgrad as nd
from structra.hmm import Hmm
from structra.model import AlignedForecaster, load_model, save_model
from structra.structal import ConfigurationError


@pytest.fixture
def model():
    return AlignedForecaster.from_text(small_config(), Hmm.random(3, 6, seed=1, scale=1.0))


def test_forward_shapes(model, rng):
    fwd = model.run(rng.normal(size=(4, 32)))
    assert fwd.z.shape == (4, 4, 8) and fwd.gamma.shape == (4, 4, 3)
    assert fwd.aligned.shape == (4, 4, 8) and fwd.y.shape == (4, 8)
    np.testing.assert_allclose(fwd.gamma_tilde.data.sum(-1), 1.0, atol=1e-9)
    assert model.predict(rng.normal(size=(5, 2, 32))).shape == (5, 2, 8)
    with pytest.raises(ConfigurationError):
        model.run(rng.normal(size=(4, 31)))


def test_composed_gradients(model, rng):
    x, y = rng.normal(size=(2, 2, 32)), rng.normal(size=(2, 2, 8))
    with nd.Tape() as tape:
        loss = model.loss(x, y)
    grads = tape.backward(loss)
    names = dict((id(p), n) for n, p in model.named_parameters())
    for p in model.trainable():
        num = nd.numerical_grad(lambda: model.loss(x, y).item(), p)
        assert nd.max_rel_err(grads[p], num) < 1e-4, names[id(p)]


def test_backbone_receives_no_gradient_but_passes_it(model, rng):
    x, y = rng.normal(size=(2, 2, 32)), rng.normal(size=(2, 2, 8))
    with nd.Tape() as tape:
        loss = model.loss(x, y)
    grads = tape.backward(loss)
    backbone_ids = {id(a) for _, a in model.backbone.named_arrays()}
    assert not any(id(p) in backbone_ids for p in grads)
    assert np.abs(grads[model.bank.mu]).max() > 0


def test_smape_loss_finite(rng):
    model = AlignedForecaster.from_text(small_config(loss="smape"), Hmm.random(3, 6, seed=1))
    loss = model.loss(rng.normal(size=(2, 2, 32)), rng.normal(size=(2, 2, 8)))
    assert 0 <= loss.item() <= 200


def test_save_load_round_trip(model, tmp_path, rng):
    save_model(model, tmp_path / "m.ckpt", {"dataset": "toy"})
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["dataset"] == "toy" and meta["config"]["states"] == 3
    assert back.checksum() == model.checksum()
    x = rng.normal(size=(3, 2, 32))
    np.testing.assert_array_equal(back.predict(x), model.predict(x))


def test_structure_mismatch():
    with pytest.raises(ConfigurationError):
        AlignedForecaster.from_text(small_config(states=4), Hmm.random(3, 6))
