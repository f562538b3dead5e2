import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from structra import ndgrad as nd
from structra.analysis import export_transition_graph, l1_distance
from structra.harness.data import few_shot_subset, split_windows
from structra.harness.metrics import mae, mse, smape_per_series
from structra.hmm import Hmm, brute_force_log_likelihood, log_forward
from structra.patching import denormalize, instance_normalize
from structra.semal import aggregate
from structra.structal import StructuralPrior, memm_decode

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2**31 - 1)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_on_simplex(x):
    out = nd.softmax(x, axis=-1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)
    assert np.all(nd.logsumexp(x, axis=-1).data >= x.max(-1) - 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), seeds)
def test_forward_equals_enumeration(n, m, t, seed):
    rng = np.random.default_rng(seed)
    hmm = Hmm.random(n, m, seed=seed, scale=2.0)
    seq = rng.integers(0, m, t)
    assert abs(log_forward(hmm, seq)[0] - brute_force_log_likelihood(hmm, seq)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), seeds, st.sampled_from(["softmax", "normalize"]))
def test_memm_rows_on_simplex(n, p, seed, mode):
    rng = np.random.default_rng(seed)
    prior = StructuralPrior(rng.normal(0, 3, n), rng.normal(0, 3, (n, n)))
    gamma = rng.dirichlet(np.ones(n), size=p)
    out = memm_decode(gamma, prior, mode).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)


@settings(deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 40)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_normalize_round_trip(x):
    out, stats = instance_normalize(x)
    back = denormalize(out, stats)
    ok = ~stats.degenerate
    np.testing.assert_allclose(back[ok], x[ok], atol=1e-9 * max(1.0, np.abs(x).max()))
    np.testing.assert_allclose(back[~ok], x[~ok].mean(axis=-1, keepdims=True)
                               * np.ones_like(x[~ok]), atol=1e-6)


@given(seeds, st.integers(1, 5))
def test_aggregate_is_convex(seed, n):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n, 4))
    out = aggregate(h, rng.dirichlet(np.ones(n))).data
    assert np.all(out >= h.min(0) - 1e-12) and np.all(out <= h.max(0) + 1e-12)


@given(seeds, st.integers(2, 6), st.floats(0.0, 1.0))
def test_graph_masks_match_threshold(seed, n, thr):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(n), size=n), rng.dirichlet(np.ones(n), size=n)
    text, time = export_transition_graph(a, b, thr).masks()
    assert np.array_equal(text, a >= thr) and np.array_equal(time, b >= thr)
    assert l1_distance(a, b) == l1_distance(b, a) >= 0


@settings(deadline=None)
@given(st.integers(150, 600), st.integers(8, 40), st.integers(1, 12), st.floats(0.05, 1.0))
def test_splits_never_leak(length, t, h, frac):
    try:
        tr, va, te = split_windows(np.arange(float(length))[None], t, h)
    except ValueError:
        return
    assert tr.time_span()[1] < va.target_span()[0] and va.target_span()[1] < te.target_span()[0]
    sub = few_shot_subset(tr, frac)
    assert sub.starts[0] == tr.starts[0] and len(sub) == int(np.ceil(frac * len(tr)))


@given(seeds, st.integers(1, 8))
def test_metric_identities(seed, h):
    rng = np.random.default_rng(seed)
    f, y = rng.normal(size=(4, h)), rng.normal(size=(4, h))
    assert mse(f, y) >= 0 and mae(f, y) ** 2 <= mse(f, y) + 1e-12
    s = smape_per_series(f, y)
    assert np.all((s >= 0) & (s <= 200 + 1e-9))
