from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from kdflow.tensor import (
    DType,
    FormatError,
    NumericError,
    ShapeError,
    Tensor,
    add,
    dumps,
    gelu,
    linear,
    loads,
    make_rng,
    matmul,
    mul,
    project_bf16,
    read_tensor,
    rmsnorm,
    softmax,
    tensor,
    total,
    write_tensor,
)
from kdflow.tensor.serialize import header_bytes
from oracles import KDT1_HEADER_F32_2x3, PI_BF16E, bf16_truncate, naive_matmul

finite_f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


class TestTensor:
    def test_rank_and_dims_checked(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1), np.float32))
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 0), np.float32))
        with pytest.raises(ShapeError):
            Tensor(np.float32(1.0))

    def test_immutable_and_row_major(self):
        t = tensor(np.arange(24).reshape(2, 3, 4))
        assert t.shape == (2, 3, 4) and t.size == 24
        assert t.data.flags.c_contiguous and not t.data.flags.writeable
        assert t.data.ravel()[1 * 12 + 2 * 4 + 3] == t.data[1, 2, 3]
        with pytest.raises(ValueError):
            t.data[0, 0, 0] = 5

    def test_callers_array_stays_writable(self):
        a = np.ones(3, np.float32)
        Tensor(a)
        a[0] = 2.0

    def test_bf16e_tensor_is_projected(self):
        t = tensor([math.pi, 1.0], DType.BF16E)
        assert t.data[0] == np.float32(PI_BF16E)
        assert t.data[1] == 1.0


class TestBF16E:
    def test_truncation_matches_scalar_oracle(self, rng):
        x = rng.standard_normal(1000).astype(np.float32) * 100
        got = project_bf16(x)
        want = np.array([bf16_truncate(float(v)) for v in x], np.float32)
        assert np.array_equal(got.view(np.uint32), want.view(np.uint32))

    @given(hnp.arrays(np.float32, st.integers(1, 64), elements=finite_f32))
    def test_projection_idempotent(self, x):
        once = project_bf16(x)
        assert np.array_equal(project_bf16(once).view(np.uint32), once.view(np.uint32))

    @given(hnp.arrays(np.float32, st.integers(1, 64), elements=finite_f32))
    def test_relative_error_bounded(self, x):
        y = project_bf16(x)
        nz = np.abs(x) > 1e-30
        assert np.all(np.abs(y[nz] - x[nz]) <= np.abs(x[nz]) * 2.0**-7)


class TestMatmul:
    def test_identity(self):
        out = matmul(tensor([[1, 0], [0, 1]]), tensor([[5, 6], [7, 8]]))
        assert out.data.tolist() == [[5, 6], [7, 8]]

    def test_hand_arithmetic(self):
        assert matmul(tensor([[1, 2]]), tensor([[3], [4]])).data.tolist() == [[11]]

    @pytest.mark.parametrize("seed", range(5))
    def test_bitwise_equal_to_triple_loop(self, seed):
        rng = make_rng(seed)
        a = rng.standard_normal((8, 8)).astype(np.float32)
        b = rng.standard_normal((8, 8)).astype(np.float32)
        got = matmul(Tensor(a), Tensor(b)).data
        assert np.array_equal(got.view(np.uint32), naive_matmul(a, b).view(np.uint32))

    def test_rectangular_and_batched(self, rng):
        a = rng.standard_normal((3, 5, 7)).astype(np.float32)
        b = rng.standard_normal((7, 4)).astype(np.float32)
        got = linear(Tensor(a), Tensor(b)).data
        for i in range(3):
            assert np.array_equal(got[i], naive_matmul(a[i], b))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\[2, 3\].*\[4, 5\]"):
            matmul(tensor(np.ones((2, 3))), tensor(np.ones((4, 5))))

    def test_dtype_mismatch(self):
        with pytest.raises((ShapeError, TypeError, ValueError)):
            matmul(tensor(np.ones((2, 2))), tensor(np.ones((2, 2)), DType.BF16E))

    def test_bf16e_accumulates_in_f32_then_projects(self, rng):
        a = project_bf16(rng.standard_normal((4, 6)).astype(np.float32))
        b = project_bf16(rng.standard_normal((6, 3)).astype(np.float32))
        got = matmul(Tensor(a, DType.BF16E), Tensor(b, DType.BF16E))
        assert got.dtype is DType.BF16E
        assert np.array_equal(got.data, project_bf16(naive_matmul(a, b)))


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax(tensor([0, 0, 0, 0])).data, 0.25, atol=0)

    def test_no_overflow(self):
        out = softmax(tensor([1000, 0])).data
        assert abs(out[0] - 1.0) < 1e-6 and abs(out[1]) < 1e-6

    def test_temperature_identity(self):
        a = softmax(tensor([1, 2, 3]), temperature=2.0).data
        b = softmax(tensor([0.5, 1, 1.5])).data
        assert np.allclose(a, b, rtol=0, atol=1e-7)

    def test_bad_temperature_and_nonfinite(self):
        with pytest.raises(ValueError):
            softmax(tensor([1, 2]), temperature=0)
        with pytest.raises(NumericError):
            softmax(tensor([1, np.inf]))
        with pytest.raises(NumericError):
            softmax(tensor([np.nan, 1.0]))

    @given(hnp.arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 40)),
                      elements=st.floats(-50, 50, width=32)),
           st.floats(0.1, 10))
    def test_rows_sum_to_one(self, z, temperature):
        out = softmax(Tensor(z), temperature).data
        assert np.all(out >= 0)
        assert np.all(np.abs(out.astype(np.float64).sum(-1) - 1.0) <= 1e-6)


class TestElementwise:
    def test_add_bias_and_mul(self):
        x = tensor(np.ones((2, 3)))
        assert add(x, tensor([1, 2, 3])).data.tolist() == [[2, 3, 4], [2, 3, 4]]
        assert mul(x, tensor(np.full((2, 3), 2.0))).data.sum() == 12

    def test_total_left_to_right(self):
        x = np.array([1e8, 1.0, -1e8, 1.0], np.float32)
        acc = np.float32(0)
        for v in x:
            acc = np.float32(acc + v)
        assert total(Tensor(x)).data.reshape(-1)[0] == acc

    def test_rmsnorm_unit_gain(self, rng):
        x = rng.standard_normal((3, 16)).astype(np.float32)
        y = rmsnorm(Tensor(x), tensor(np.ones(16))).data.astype(np.float64)
        assert np.allclose(np.sqrt((y * y).mean(-1)), 1.0, atol=1e-4)

    def test_gelu_reference_points(self):
        y = gelu(tensor([0.0, 1.0, -1.0])).data
        assert y[0] == 0.0
        assert abs(y[1] - 0.8411920) < 1e-6 and abs(y[2] + 0.1588080) < 1e-6


class TestSerialization:
    def test_header_bytes_frozen(self):
        assert header_bytes(DType.F32, (2, 3)) == KDT1_HEADER_F32_2x3
        blob = dumps(tensor(np.arange(6).reshape(2, 3)))
        assert blob[: len(KDT1_HEADER_F32_2x3)] == KDT1_HEADER_F32_2x3
        assert np.frombuffer(blob[len(KDT1_HEADER_F32_2x3):], "<f4").tolist() == [0, 1, 2, 3, 4, 5]

    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5), elements=finite_f32),
           st.sampled_from([DType.F32, DType.BF16E]))
    def test_roundtrip(self, arr, dtype):
        t = Tensor(arr, dtype)
        back = loads(dumps(t))
        assert back.dtype is dtype and back.shape == t.shape
        assert np.array_equal(back.data.view(np.uint32), t.data.view(np.uint32))

    def test_stream_of_tensors(self, rng):
        buf = io.BytesIO()
        ts = [Tensor(rng.standard_normal(s).astype(np.float32)) for s in [(3,), (2, 2), (1, 2, 3)]]
        for t in ts:
            write_tensor(buf, t)
        buf.seek(0)
        for t in ts:
            assert np.array_equal(read_tensor(buf).data, t.data)

    @pytest.mark.parametrize("blob", [b"", b"KDT0\x00\x01\x01\x00\x00\x00", b"KDT1\x07\x01\x01\x00\x00\x00",
                                      b"KDT1\x00\x01\x02\x00\x00\x00"])
    def test_malformed(self, blob):
        with pytest.raises(FormatError):
            loads(blob)


def test_rng_is_counter_based_and_keyed():
    a = make_rng(1, 2).random(4)
    assert np.array_equal(a, make_rng(1, 2).random(4))
    assert not np.array_equal(a, make_rng(2, 1).random(4))
