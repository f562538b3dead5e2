from fractions import Fraction

import numpy as np
import pytest

from conftest import small_config
from structra.harness.config import ConfigError, TrainConfig, load_config, parse_config_text
from structra.harness.data import (DatasetError, assert_no_leakage, few_shot_subset, load_csv_dataset,
                                   make_windows, read_csv_series, sinusoid_mixture, split_windows,
                                   window_count, write_csv_series)
from structra.harness.metrics import (m4_metrics, mae, mase_per_series, mse, naive_last_value, report,
                                      seasonal_naive, smape_per_series)
from structra.harness.protocols import evaluate, naive_report, train, zero_shot_eval
from structra.hmm import Hmm
from structra.structal import ConfigurationError


# config

def test_config_defaults_and_patches():
    cfg = TrainConfig()
    assert (cfg.input_len, cfg.horizon, cfg.patch_len, cfg.stride, cfg.states) == (96, 16, 16, 8, 10)
    assert cfg.n_patches == 11


@pytest.mark.parametrize("bad", [dict(lr=0), dict(few_shot=0.0), dict(few_shot=1.5), dict(states=0),
                                 dict(loss="huber"), dict(split_ratios=(0.5, 0.5, 0.5)),
                                 dict(patch_len=200)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# demo\nstates = 4\nlr=0.01\nfreeze-prior = yes\nsplit_ratios = 0.6,0.2,0.2\n")
    cfg = load_config(f)
    assert cfg.states == 4 and cfg.lr == 0.01 and cfg.freeze_prior and cfg.split_ratios == (0.6, 0.2, 0.2)
    assert cfg.updated(states=6).states == 6
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nope": 1})
    with pytest.raises(ConfigError):
        parse_config_text("states 4")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"states": "many"})


# data

def test_window_count_example():
    assert window_count(200, 96, 16) == 89
    x, y, starts = make_windows(np.arange(200.0)[None], 96, 16)
    assert x.shape == (89, 1, 96) and y.shape == (89, 1, 16)
    assert y[5, 0, 0] == x[5, 0, -1] + 1


def test_split_partition_and_chronology():
    values = np.arange(2000.0).reshape(1, -1)
    tr, va, te = split_windows(values, 96, 16)
    assert (len(tr), len(va), len(te)) == (1289, 185, 385)
    spans = [s.target_span() for s in (tr, va, te)]
    assert spans[0][1] < spans[1][0] and spans[1][1] < spans[2][0]
    assert_no_leakage(tr, va, te)
    assert tr.starts.max() + 112 <= 1400 and te.starts.min() + 96 >= 1600


def test_split_too_short():
    with pytest.raises(DatasetError):
        split_windows(np.zeros((1, 100)), 96, 16)
    with pytest.raises(DatasetError):
        split_windows(np.zeros((1, 140)), 96, 16)


def test_leakage_assertion_fires():
    tr, va, _ = split_windows(np.arange(2000.0)[None], 96, 16)
    with pytest.raises(AssertionError):
        assert_no_leakage(va, tr)


def test_csv_round_trip_and_errors(tmp_path):
    values = sinusoid_mixture(300, 2, 24.0, seed=1)
    write_csv_series(tmp_path / "s.csv", values)
    back, names = read_csv_series(tmp_path / "s.csv")
    assert names == ["ch0", "ch1"] and np.array_equal(back, values)
    assert len(load_csv_dataset(tmp_path / "s.csv", 32, 8)[2]) > 0
    (tmp_path / "bad.csv").write_text("t,a,b\n0,1,2\n1,x,3\n")
    with pytest.raises(DatasetError, match="line 3.*'a'"):
        read_csv_series(tmp_path / "bad.csv")
    (tmp_path / "short.csv").write_text("t,a\n0,1\n1\n")
    with pytest.raises(DatasetError, match="line 3"):
        read_csv_series(tmp_path / "short.csv")


def test_few_shot_subset():
    tr, va, te = split_windows(np.arange(500.0)[None], 32, 8)
    assert few_shot_subset(tr, 1.0).starts.tolist() == tr.starts.tolist()
    sub = few_shot_subset(tr.subset(np.arange(100)), 0.1)
    assert sub.starts.tolist() == list(range(10))
    assert len(va) == len(split_windows(np.arange(500.0)[None], 32, 8)[1])
    with pytest.raises(ValueError):
        few_shot_subset(tr, 0.0)


# metrics

def test_metrics_zero_error():
    y = np.array([[1.0, 2.0, 3.0]])
    x = np.array([[0.0, 1.0, 3.0, 2.0]])
    assert mse(y, y) == 0 and mae(y, y) == 0
    assert m4_metrics(y, y, x) == (0.0, 0.0, 0.0)
    assert mae(y + 1, y) == 1.0


def test_naive_self_owa_is_one():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(5, 30)), rng.normal(size=(5, 6))
    for m in (1, 4):
        assert m4_metrics(seasonal_naive(x, 6, m), y, x, m)[2] == 1.0


def test_metrics_h2_manual_oracle():
    y, f, x = [2, 4], [Fraction(5, 2), 5], [1, 2, 4, 3]
    smape = Fraction(200, 2) * sum(abs(a - b) / (abs(a) + abs(b)) for a, b in zip(y, f))
    scale = Fraction(sum(abs(x[i] - x[i - 1]) for i in range(1, 4)), 3)
    mase_ = Fraction(sum(abs(a - b) for a, b in zip(y, f)), 2) / scale
    naive = [x[-1]] * 2
    smape_n = Fraction(200, 2) * sum(Fraction(abs(a - b), abs(a) + abs(b)) for a, b in zip(y, naive))
    mase_n = Fraction(sum(abs(a - b) for a, b in zip(y, naive)), 2) / scale
    owa = (smape / smape_n + mase_ / mase_n) / 2
    got = m4_metrics(np.array([[2.5, 5.0]]), np.array([[2.0, 4.0]]), np.array([[1.0, 2.0, 4.0, 3.0]]))
    for g, want in zip(got, (smape, mase_, owa)):
        assert abs(g - float(want)) < 1e-12


def test_metric_ranges():
    rng = np.random.default_rng(1)
    f, y = rng.normal(size=(7, 5)), rng.normal(size=(7, 5))
    s = smape_per_series(f, y)
    assert np.all((s >= 0) & (s <= 200))
    assert mae(f, y) ** 2 <= mse(f, y) + 1e-15
    assert np.all(mase_per_series(f, y, rng.normal(size=(7, 10))) >= 0)
    np.testing.assert_array_equal(naive_last_value(np.array([[1.0, 2.0, 7.0]]), 3), [[7.0, 7.0, 7.0]])
    assert smape_per_series(np.zeros(2), np.zeros(2)) == 0.0


def test_report_fields():
    rep = report("d", "test", np.ones((3, 2)), np.ones((3, 2)), np.arange(12.0).reshape(3, 4))
    rec = rep.to_record()
    assert rec["mse"] == 0 and rec["horizon"] == 2 and rec["n_series"] == 3 and "meta" in rec


# protocols (tiny widths)

@pytest.fixture
def toy_splits():
    return split_windows(sinusoid_mixture(400, 2, 16.0, seed=4), 32, 8)


def test_train_deterministic_and_improves(toy_splits):
    tr, va, te = toy_splits
    cfg = small_config(epochs=3)
    hmm = Hmm.random(3, 6, seed=0, scale=1.0)
    m1, t1 = train(cfg, tr, va, hmm)
    m2, t2 = train(cfg, tr, va, hmm)
    assert t1.train_loss == t2.train_loss and t1.val_mse == t2.val_mse
    assert t1.train_loss[-1] < t1.train_loss[0]
    assert m1.epochs_trained == 3 and m1.checksum() == m2.checksum()
    rep = evaluate(m1, te, "toy")
    assert np.isfinite(rep.mse) and rep.meta["config"]["epochs"] == 3


def test_train_freeze_prior(toy_splits):
    tr, va, _ = toy_splits
    hmm = Hmm.random(3, 6, seed=0, scale=1.0)
    model, _ = train(small_config(epochs=1, freeze_prior=True), tr, va, hmm)
    np.testing.assert_array_equal(model.prior.trans_logits.data, np.log(hmm.trans))
    np.testing.assert_array_equal(model.prior.pi_logits.data, np.log(hmm.pi))
    free, _ = train(small_config(epochs=1), tr, va, hmm)
    assert not np.array_equal(free.prior.trans_logits.data, np.log(hmm.trans))


def test_train_state_mismatch(toy_splits):
    tr, va, _ = toy_splits
    with pytest.raises(ConfigurationError):
        train(small_config(), tr, va, Hmm.random(4, 6))


def test_zero_shot_contract(toy_splits):
    tr, va, te = toy_splits
    model, _ = train(small_config(epochs=1), tr, va, Hmm.random(3, 6, seed=0, scale=1.0))
    before = model.checksum()
    same = zero_shot_eval(model, te, "toy")
    assert same.mse == evaluate(model, te, "toy").mse and model.checksum() == before
    _, _, other = split_windows(sinusoid_mixture(400, 3, 20.0, seed=9), 32, 8)
    assert np.isfinite(zero_shot_eval(model, other, "other").mse)
    _, _, wrong = split_windows(sinusoid_mixture(400, 3, 20.0, seed=9), 40, 8)
    with pytest.raises(ConfigurationError):
        zero_shot_eval(model, wrong)
    assert naive_report(te).meta["model"] == "naive-last-value"
