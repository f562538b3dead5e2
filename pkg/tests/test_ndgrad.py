import numpy as np
import pytest

from structra import ndgrad as nd
from structra.ndgrad import Tape, max_rel_err, numerical_grad

PRIM_TOL = 1e-6


def grad_check(build, params, tol=PRIM_TOL):
    """Tape gradient of ``build()`` (a scalar Array) vs central differences."""
    with Tape() as tape:
        loss = build()
    grads = tape.backward(loss)
    for p in params:
        numeric = numerical_grad(lambda: build().item(), p)
        err = max_rel_err(grads.get(p, np.zeros(p.shape)), numeric)
        assert err < tol, f"{p.name or p.shape}: rel err {err:.2e}"


def test_matmul_examples():
    a = nd.as_array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nd.matmul(np.eye(2), a).data, a.data)
    assert nd.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_shape_error():
    with pytest.raises(nd.ShapeError):
        nd.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_logsumexp_examples(rng):
    assert nd.logsumexp([0.0, 0.0]).item() == pytest.approx(np.log(2), abs=1e-12)
    assert nd.logsumexp([1000.0, 1000.0]).item() == pytest.approx(1000 + np.log(2), abs=1e-12)
    x = rng.normal(0, 3, 5)
    assert abs(nd.logsumexp(x).item() - np.log(np.exp(x).sum())) < 1e-12


def test_softmax_examples(rng):
    np.testing.assert_allclose(nd.softmax(np.zeros(4)).data, 0.25)
    np.testing.assert_allclose(nd.softmax(np.log([1.0, 3.0])).data, [0.25, 0.75], atol=1e-15)
    x = rng.normal(0, 5, (4, 7))
    np.testing.assert_allclose(nd.softmax(x, axis=-1).data.sum(-1), 1.0, atol=1e-12)
    with pytest.raises(nd.ParameterError):
        nd.softmax(x, temperature=0.0)


def test_sqeuclid_and_layer_norm_identities(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(np.diag(nd.sqeuclid_dist(x, x).data), 0.0, atol=1e-12)
    np.testing.assert_allclose(nd.layer_norm(np.full(6, 2.5)).data, 0.0, atol=1e-12)


def test_closed_form_adjoints(rng):
    x = nd.parameter([3.0])
    with Tape() as tape:
        y = nd.sum_(nd.square(x))
    assert tape.backward(y)[x].tolist() == [6.0]
    v = nd.parameter(rng.normal(size=6))
    with Tape() as tape:
        out = nd.logsumexp(v)
    np.testing.assert_allclose(tape.backward(out)[v], nd.softmax(v.data).data, atol=1e-14)


def test_backward_requires_scalar():
    x = nd.parameter(np.ones(3))
    with Tape() as tape:
        y = nd.mul(x, 2.0)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_non_finite_detected():
    with pytest.raises(nd.NonFiniteError):
        nd.log(np.array([0.0, 1.0]))
    with pytest.raises(nd.NonFiniteError):
        nd.exp(np.array([1e4]))


def test_arrays_are_immutable():
    a = nd.parameter(np.ones(3))
    with pytest.raises(ValueError):
        a.data[0] = 5.0


def test_determinism(rng):
    x = rng.normal(size=(4, 5))

    def run():
        p = nd.parameter(x)
        with Tape() as tape:
            loss = nd.sum_(nd.softmax(nd.matmul(p, p.T)))
        return loss.item(), tape.backward(loss)[p]

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2 and np.array_equal(g1, g2)


# each primitive against central differences
def _w(rng, shape):
    return rng.normal(size=shape)


PRIMITIVES = {
    "add_broadcast": lambda a, b: nd.sum_(nd.square(nd.add(a, b[0]))),
    "sub": lambda a, b: nd.sum_(nd.square(nd.sub(a, b))),
    "mul": lambda a, b: nd.sum_(nd.mul(a, b)),
    "div": lambda a, b: nd.sum_(nd.div(a, nd.add(nd.square(b), 1.0))),
    "exp": lambda a, b: nd.sum_(nd.mul(nd.exp(nd.mul(a, 0.3)), b)),
    "log": lambda a, b: nd.sum_(nd.log(nd.add(nd.square(a), 1.0))),
    "tanh": lambda a, b: nd.sum_(nd.mul(nd.tanh(a), b)),
    "gelu": lambda a, b: nd.sum_(nd.mul(nd.gelu(a), b)),
    "matmul": lambda a, b: nd.sum_(nd.square(nd.matmul(a, nd.transpose(b)))),
    "einsum": lambda a, b: nd.sum_(nd.square(nd.einsum("ij,kj->ik", a, b))),
    "mean_axis": lambda a, b: nd.sum_(nd.square(nd.mean(nd.mul(a, b), axis=0))),
    "reshape_transpose": lambda a, b: nd.sum_(nd.mul(nd.transpose(nd.reshape(a, (4, 3))), nd.reshape(b, (3, 4)))),
    "gather": lambda a, b: nd.sum_(nd.square(a[np.array([0, 2, 0]), 1:])),
    "take": lambda a, b: nd.sum_(nd.square(nd.take(a, np.array([3, 1, 3]), axis=1))),
    "concat_stack": lambda a, b: nd.sum_(nd.square(nd.concat([a, nd.stack([b[0], b[1]], axis=0)], axis=0))),
    "logsumexp": lambda a, b: nd.sum_(nd.mul(nd.logsumexp(a, axis=1), nd.sum_(b, axis=1))),
    "softmax_temp": lambda a, b: nd.sum_(nd.mul(nd.softmax(a, axis=-1, temperature=1.7), b)),
    "log_softmax": lambda a, b: nd.sum_(nd.mul(nd.log_softmax(a, axis=0), b)),
    "layer_norm": lambda a, b: nd.sum_(nd.mul(nd.layer_norm(a, b[0], b[1]), nd.gelu(a))),
    "sqeuclid": lambda a, b: nd.sum_(nd.tanh(nd.mul(nd.sqeuclid_dist(a, b), 0.1))),
    "where": lambda a, b: nd.sum_(nd.square(nd.where(a.data > 0, a, nd.mul(b, 3.0)))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    a = nd.parameter(_w(rng, (3, 4)), name="a")
    b = nd.parameter(_w(rng, (3, 4)), name="b")
    grad_check(lambda: PRIMITIVES[name](a, b), [a, b])
