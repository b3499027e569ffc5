import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lensmae.core import NonFiniteError, ShapeError, Tensor
from lensmae.heads import ClassifierHead
from lensmae.optim import Adam, ParamGroup, adam_step, module_group, param_groups
from lensmae.vit import Encoder, ViTConfig


def hand_adam(theta, grads, lr, wd=0.0, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * (mhat / (vhat**0.5 + eps) + wd * theta)
        out.append(theta)
    return out


def scalar_param(value=0.0):
    return Tensor(np.array([value]), requires_grad=True)


def test_first_step_is_lr_times_sign():
    p = scalar_param(0.0)
    opt = Adam([ParamGroup("g", [("p", p)], 1e-4)])
    p.grad = np.array([1.0])
    opt.step()
    expect = -1e-4 * (1.0 / (1.0 + 1e-8))
    assert abs(p.data[0] - expect) < 1e-18


def test_zero_gradient_no_decay_leaves_params():
    p = scalar_param(0.7)
    opt = Adam([ParamGroup("g", [("p", p)], 1e-2)])
    for _ in range(3):
        p.grad = np.zeros(1)
        opt.step()
    assert p.data[0] == 0.7


def test_three_steps_match_hand_recurrence():
    p = scalar_param(0.5)
    opt = Adam([ParamGroup("g", [("p", p)], 1e-3, weight_decay=1e-2)])
    expect = hand_adam(0.5, [1.0, -1.0, 1.0], 1e-3, wd=1e-2)
    for g, e in zip([1.0, -1.0, 1.0], expect):
        p.grad = np.array([g])
        opt.step()
        assert abs(p.data[0] - e) < 1e-12
    assert opt.state.t == 3


def test_functional_step_matches_class():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal((3, 2))
    grads = [rng.standard_normal((3, 2)) for _ in range(4)]
    p = Tensor(theta.copy(), requires_grad=True)
    opt = Adam([ParamGroup("g", [("p", p)], 3e-3, weight_decay=1e-5)])
    params, state = [theta.copy()], {}
    for g in grads:
        p.grad = g
        opt.step()
        params, state = adam_step(params, [g], state, 3e-3, 1e-5)
    np.testing.assert_allclose(p.data, params[0], rtol=0, atol=1e-15)
    assert state["t"] == 4


def test_functional_step_errors():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.zeros(3)], {}, 1e-3)
    with pytest.raises(NonFiniteError):
        adam_step([np.zeros(2)], [np.array([1.0, np.nan])], {}, 1e-3)


def test_class_step_errors():
    p = scalar_param()
    opt = Adam([ParamGroup("g", [("p", p)], 1e-3)])
    p.grad = np.zeros(2)
    with pytest.raises(ShapeError):
        opt.step()
    p.grad = np.array([np.inf])
    with pytest.raises(NonFiniteError):
        opt.step()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=8))
def test_negated_gradients_negate_updates(gs):
    a, b = scalar_param(0.0), scalar_param(0.0)
    oa = Adam([ParamGroup("g", [("p", a)], 1e-2)])
    ob = Adam([ParamGroup("g", [("p", b)], 1e-2)])
    for g in gs:
        a.grad, b.grad = np.array([g]), np.array([-g])
        oa.step()
        ob.step()
    assert a.data[0] == -b.data[0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=10))
def test_second_moment_nonnegative(gs):
    p = scalar_param()
    opt = Adam([ParamGroup("g", [("p", p)], 1e-3)])
    for g in gs:
        p.grad = np.array([g])
        opt.step()
        assert all((v >= 0).all() for v in opt.state.v.values())


def test_params_without_grad_are_untouched():
    a, b = scalar_param(1.0), scalar_param(2.0)
    opt = Adam([ParamGroup("g", [("a", a), ("b", b)], 1e-2, weight_decay=0.1)])
    a.grad = np.array([1.0])
    opt.step()
    assert b.data[0] == 2.0 and a.data[0] != 1.0


def _enc_head():
    rng = np.random.default_rng(0)
    cfg = ViTConfig(image_size=16, embed_dim=8, depth=1, num_heads=2, with_cls_token=True)
    return Encoder(cfg, rng), ClassifierHead(8, rng)


def test_param_groups_frozen_is_head_only():
    enc, head = _enc_head()
    (group,) = param_groups(enc, head, False, 5e-5, 1e-5)
    assert all(name.startswith("head.") for name, _ in group.params)
    assert group.num_parameters == head.num_parameters()


def test_param_groups_full_counts_everything():
    enc, head = _enc_head()
    (group,) = param_groups(enc, head, True, 5e-5, 1e-5)
    assert group.num_parameters == enc.num_parameters() + head.num_parameters()
    assert (group.lr, group.weight_decay) == (5e-5, 1e-5)


def test_hyperparameters_record_lr_per_group():
    enc, head = _enc_head()
    opt = Adam([module_group("enc", [("encoder", enc)], 1e-4), module_group("head", [("head", head)], 1e-3)])
    hp = opt.hyperparameters()
    assert [g["lr"] for g in hp["groups"]] == [1e-4, 1e-3]
    assert (hp["beta1"], hp["beta2"], hp["eps"]) == (0.9, 0.999, 1e-8)
    assert hp["weight_decay_mode"] == "decoupled"
