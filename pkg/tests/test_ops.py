import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csinas import autograd as ag
from csinas.autograd import ShapeError, Tensor
from csinas.gradcheck import grad_check
from csinas.ops import (
    OP_NAMES,
    PARAMETER_FREE,
    Operator,
    apply,
    check_operator,
    op_flops,
    op_param_count,
    validate_op_set,
)


def test_op_set_is_the_eight_names_in_fixed_order():
    assert OP_NAMES == (
        "zero",
        "skip_connection",
        "sep_conv3x3",
        "dil_conv3x3",
        "dil_conv5x5",
        "conv3x3",
        "conv1x5_5x1",
        "conv1x9_9x1",
    )


def test_validate_op_set_canonicalizes_and_rejects():
    assert validate_op_set(["conv3x3", "skip_connection"]) == ("skip_connection", "conv3x3")
    with pytest.raises(ValueError):
        validate_op_set(["conv7x7"])
    with pytest.raises(ValueError):
        validate_op_set(["zero", "zero"])


@given(
    kind=st.sampled_from(OP_NAMES),
    c=st.integers(1, 4),
    h=st.integers(1, 7),
    w=st.integers(1, 7),
    b=st.integers(1, 2),
    seed=st.integers(0, 2**16),
)
def test_shape_preserved(kind, c, h, w, b, seed):
    r = np.random.default_rng(seed)
    op = Operator(kind, c, r)
    assert apply(op, Tensor(r.standard_normal((b, c, h, w)))).shape == (b, c, h, w)


def test_zero_and_skip(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert np.array_equal(apply(Operator("zero", 3, rng), x).data, np.zeros((2, 3, 4, 4)))
    assert np.array_equal(apply(Operator("skip_connection", 3, rng), x).data, x.data)
    for kind in PARAMETER_FREE:
        assert Operator(kind, 3, rng).parameters() == []


def test_zero_kernel_conv_gives_zero(rng):
    op = Operator("conv3x3", 3, rng)
    for p in op.parameters():
        p.data[...] = 0.0
    assert np.array_equal(apply(op, Tensor(rng.standard_normal((1, 3, 5, 5)))).data, np.zeros((1, 3, 5, 5)))


def test_channel_mismatch(rng):
    with pytest.raises(ShapeError, match="conv3x3"):
        apply(Operator("conv3x3", 3, rng), Tensor(np.zeros((1, 4, 5, 5))))


def test_zero_annihilates_gradients(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    ag.mse(apply(Operator("zero", 3, rng), x), Tensor(np.ones((2, 3, 4, 4)))).backward()
    assert np.array_equal(x.grad, np.zeros_like(x.data))


def test_flops_examples():
    assert op_flops("conv3x3", 7, 32, 32) == 2 * 9 * 7 * 7 * 32 * 32 == 903_168
    assert op_flops("conv1x9_9x1", 7, 32, 32) == 1_806_336
    assert op_flops("skip_connection", 7, 32, 32) == 0
    assert op_flops("zero", 7, 32, 32) == 0


def test_param_examples():
    assert op_param_count("conv3x3", 7) == 448
    assert op_param_count("sep_conv3x3", 7) == 119
    assert op_param_count("zero", 7) == 0


@pytest.mark.parametrize("kind", OP_NAMES)
def test_param_count_matches_instantiated_tensors(kind, rng):
    assert Operator(kind, 5, rng).num_parameters() == op_param_count(kind, 5)


# at c=1 conv1x5_5x1 and sep_conv3x3 tie (20 * h * w each), so the order is strict from c=2
@given(c=st.integers(2, 16), h=st.integers(1, 32), w=st.integers(1, 32))
def test_flops_ordering(c, h, w):
    assert op_flops("conv1x9_9x1", c, h, w) > op_flops("conv1x5_5x1", c, h, w) > op_flops("sep_conv3x3", c, h, w)


@pytest.mark.parametrize("kind", OP_NAMES)
@pytest.mark.parametrize("relu", [True, False])
def test_operator_gradcheck(kind, relu):
    r = np.random.default_rng(OP_NAMES.index(kind))
    assert check_operator(kind, (2, 3, 5, 6), r, relu=relu) < 1e-4


def test_skip_gradcheck_is_exact(rng):
    # integer data and a power-of-two step keep every finite difference exact
    op = Operator("skip_connection", 2, rng)
    x = Tensor(rng.integers(-4, 5, (1, 2, 3, 3)), requires_grad=True)
    target = Tensor(rng.integers(-4, 5, (1, 2, 3, 3)))
    assert grad_check(lambda: ag.mse(op(x), target), [x], eps=2.0**-10) == 0.0
