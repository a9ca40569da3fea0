import numpy as np
import pytest

from wtckit import autodiff as ad
from wtckit.nn import Adam, adam_step, clip_parameters, init_dense_net

from conftest import rel_err


def test_critic_shaped_net():
    net = init_dense_net([10, 256, 256, 256, 1],
                         ["relu", "relu", "relu", "none"],
                         np.random.default_rng(0))
    assert [l.weight.shape for l in net.layers] == [
        (10, 256), (256, 256), (256, 256), (256, 1)]
    assert [l.activation for l in net.layers] == ["relu"] * 3 + ["none"]


def test_init_bounds_and_zero_bias():
    net = init_dense_net([7, 20, 3], ["relu", "none"], np.random.default_rng(1))
    for layer in net.layers:
        bound = np.sqrt(6.0 / layer.weight.shape[0])
        assert np.abs(layer.weight.data).max() <= bound
        assert np.all(layer.bias.data == 0.0)


def test_init_deterministic():
    a = init_dense_net([4, 8, 2], ["relu", "none"], np.random.default_rng(3))
    b = init_dense_net([4, 8, 2], ["relu", "none"], np.random.default_rng(3))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_init_rejects_bad_args():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        init_dense_net([5], ["none"], rng)
    with pytest.raises(ValueError):
        init_dense_net([5, 0], ["none"], rng)
    with pytest.raises(ValueError):
        init_dense_net([5, 3], ["relu", "none"], rng)
    with pytest.raises(ValueError):
        init_dense_net([5, 3], ["tanh"], rng)


def test_forward_zero_net_is_zero(rng):
    net = init_dense_net([4, 3], ["none"], rng)
    net.layers[0].weight.data = np.zeros((4, 3))
    out = net.forward(ad.constant(rng.standard_normal((5, 4))))
    np.testing.assert_array_equal(out.data, np.zeros((5, 3)))


def test_single_linear_layer_is_affine(rng):
    net = init_dense_net([3, 2], ["none"], rng)
    net.layers[0].bias.data = rng.standard_normal(2)
    x = rng.standard_normal((4, 3))
    want = x @ net.layers[0].weight.data + net.layers[0].bias.data
    np.testing.assert_allclose(net.forward(ad.constant(x)).data, want)
    np.testing.assert_allclose(net.forward_numpy(x), want)


def test_two_layer_relu_hand_computed():
    net = init_dense_net([2, 2, 1], ["relu", "none"], np.random.default_rng(0))
    net.layers[0].weight.data = np.array([[1.0, -1.0], [2.0, 1.0]])
    net.layers[0].bias.data = np.array([0.5, -0.5])
    net.layers[1].weight.data = np.array([[3.0], [-2.0]])
    net.layers[1].bias.data = np.array([1.0])
    x = np.array([[1.0, 2.0]])
    # hidden pre-act: [1+4+0.5, -1+2-0.5] = [5.5, 0.5]; out: 3*5.5 - 2*0.5 + 1
    np.testing.assert_allclose(net.forward(ad.constant(x)).data, [[16.5]])


def test_forward_shape_mismatch():
    net = init_dense_net([4, 2], ["none"], np.random.default_rng(0))
    with pytest.raises(ad.ShapeError):
        net.forward(ad.constant(np.ones((3, 5))))


def test_forward_numpy_matches_graph(rng):
    net = init_dense_net([6, 16, 16, 2], ["relu", "relu", "none"], rng)
    x = rng.standard_normal((9, 6))
    np.testing.assert_array_equal(net.forward(ad.constant(x)).data,
                                  net.forward_numpy(x))


def test_load_state_roundtrip(rng):
    net = init_dense_net([3, 5, 2], ["relu", "none"], rng)
    state = {n: p.data.copy() for n, p in net.named_parameters()}
    other = init_dense_net([3, 5, 2], ["relu", "none"], rng)
    other.load_state(state)
    for (_, pa), (_, pb) in zip(net.named_parameters(),
                                other.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def _scalar_param(value):
    return ad.constant(np.array([value]))


def test_adam_zero_gradient_keeps_params():
    p = _scalar_param(0.7)
    opt = Adam([p], lr=1e-4)
    opt.step({p: np.zeros(1)})
    np.testing.assert_array_equal(p.data, [0.7])


def test_adam_first_step_magnitude():
    # t=1, g=1: m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
    p = _scalar_param(0.0)
    opt = Adam([p], lr=1e-4)
    opt.step({p: np.ones(1)})
    want = -1e-4 * 1.0 / (1.0 + 1e-8)
    assert abs(p.data[0] - want) < 1e-18


def test_adam_second_identical_step_closed_form():
    lr, b1, b2, eps = 1e-4, 0.9, 0.999, 1e-8
    p = _scalar_param(0.0)
    opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    opt.step({p: np.ones(1)})
    first = p.data[0]
    opt.step({p: np.ones(1)})
    second = p.data[0] - first
    # closed form at t=2 with g=1: m_hat = 1, v_hat = 1 exactly
    m2 = b1 * (1 - b1) + (1 - b1)
    v2 = b2 * (1 - b2) + (1 - b2)
    want = -lr * (m2 / (1 - b1 ** 2)) / (np.sqrt(v2 / (1 - b2 ** 2)) + eps)
    assert abs(second - want) < 1e-18
    assert abs(second) <= abs(first) + 1e-18


def test_adam_deterministic(rng):
    g = rng.standard_normal((4, 3))

    def run():
        p = ad.constant(np.ones((4, 3)))
        opt = Adam([p], lr=1e-3)
        for _ in range(5):
            opt.step({p: g})
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())


def test_adam_descends_against_gradient_sign(rng):
    p = ad.constant(rng.standard_normal((6,)))
    before = p.data.copy()
    g = rng.standard_normal((6,)) + np.where(rng.random(6) > 0.5, 2.0, -2.0)
    opt = Adam([p], lr=1e-3)
    opt.step({p: g})
    delta = p.data - before
    assert np.all(np.sign(delta) == -np.sign(g))


def test_adam_rejects_non_finite_gradient():
    p = _scalar_param(0.0)
    opt = Adam([p], lr=1e-4)
    with pytest.raises(ad.NonFiniteError):
        opt.step({p: np.array([np.nan])})
    with pytest.raises(ad.ShapeError):
        opt.step({p: np.zeros(2)})


def test_adam_step_counter_increments():
    p = _scalar_param(0.0)
    opt = Adam([p], lr=1e-4)
    assert opt.t == 0
    opt.step({p: np.ones(1)})
    opt.step({p: np.ones(1)})
    assert opt.t == 2


def test_adam_step_functional_alias():
    p = _scalar_param(1.0)
    opt = Adam([p], lr=1e-4)
    same = adam_step(opt, {p: np.ones(1)})
    assert same is opt and opt.t == 1
    assert p.data[0] != 1.0


def test_clip_parameters(rng):
    net = init_dense_net([4, 8, 1], ["relu", "none"], rng)
    net.layers[0].weight.data += 5.0
    clip_parameters(net, 0.01)
    for p in net.parameters():
        assert np.abs(p.data).max() <= 0.01
    with pytest.raises(ValueError):
        clip_parameters(net, 0.0)
