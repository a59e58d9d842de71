import numpy as np
import pytest

from psychonet.autograd import Parameter
from psychonet.optim import AdamW, onecycle_lr

from oracles import adamw_reference


def make(values, **kw):
    p = Parameter(np.asarray(values, dtype=np.float64))
    return p, AdamW([("w", p)], **kw)


def test_decay_only_step(f64):
    p, opt = make([1.0, -2.0, 3.0], lr=0.1, weight_decay=0.01)
    p.grad = np.zeros(3)
    opt.step()
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0, 3.0]) * (1 - 0.001), rtol=1e-15)


def test_first_step_moves_against_gradient(f64):
    p, opt = make([0.5, 0.5, 0.5], lr=1e-2, weight_decay=0.0)
    g = np.array([3.0, -0.2, 1e-3])
    p.grad = g
    opt.step()
    # bias correction makes m_hat = g, v_hat = g^2, so each step is lr*sign(g) up to eps
    np.testing.assert_allclose(0.5 - p.data, 1e-2 * np.sign(g), rtol=1e-4)


def test_five_steps_match_reference(f64, rng):
    p0 = rng.normal(size=6)
    p, opt = make(p0.copy(), lr=3e-3, weight_decay=0.05)
    grads = []
    for _ in range(5):
        g = 2 * p.data  # quadratic loss |p|^2
        grads.append(g.copy())
        p.grad = g
        opt.step()
    ref = adamw_reference(p0, grads, lr=3e-3, wd=0.05)
    assert np.abs(p.data - ref).max() < 1e-7


def test_nan_gradient_names_parameter():
    p, opt = make([1.0])
    q = Parameter(np.ones(2))
    opt = AdamW([("layers.0.weight", p), ("head.bias", q)])
    p.grad = np.zeros(1)
    q.grad = np.array([0.0, np.nan])
    with pytest.raises(FloatingPointError, match="head.bias"):
        opt.step()
    assert opt.t == 0


def test_parameters_without_grad_untouched():
    p, opt = make([1.0, 2.0])
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_state_round_trip(rng):
    p, opt = make(rng.normal(size=4))
    p.grad = rng.normal(size=4)
    opt.step()
    q, opt2 = make(p.data.copy())
    opt2.load_state(opt.hyperparams(), opt.state_tensors())
    g = rng.normal(size=4)
    p.grad, q.grad = g, g.copy()
    opt.step()
    opt2.step()
    np.testing.assert_array_equal(p.data, q.data)


def test_load_state_missing_tensor():
    p, opt = make([1.0])
    with pytest.raises(KeyError, match="optim.v.w"):
        opt.load_state(opt.hyperparams(), {"optim.m.w": np.zeros(1)})


# ---------------------------------------------------------------------------
# one-cycle schedule
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("total", [10, 100, 3910])
def test_peak_at_warmup_boundary(total):
    peak = 0.3 * total
    if peak == int(peak):
        assert onecycle_lr(int(peak), total, 1e-3) == 1e-3
    lrs = [onecycle_lr(s, total, 1e-3) for s in range(total)]
    assert max(lrs) <= 1e-3


def test_start_and_end_values():
    assert onecycle_lr(0, 100, 1e-3) == pytest.approx(4e-5, abs=1e-18)
    assert onecycle_lr(99, 100, 1e-3) == pytest.approx(1e-7, rel=1e-12)


def test_continuous_at_boundary():
    left = onecycle_lr(30 - 1e-7, 100, 1e-3)
    right = onecycle_lr(30 + 1e-7, 100, 1e-3)
    assert abs(left - right) < 1e-12


def test_monotone_phases():
    lrs = np.array([onecycle_lr(s, 200, 1e-3) for s in range(200)])
    assert np.all(np.diff(lrs[:61]) > 0)
    assert np.all(np.diff(lrs[60:]) < 0)


@pytest.mark.parametrize("step", [-1, 100])
def test_step_out_of_range(step):
    with pytest.raises(ValueError):
        onecycle_lr(step, 100, 1e-3)
