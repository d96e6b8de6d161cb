import numpy as np
import pytest

from boolnet import binkernels as bk
from boolnet import bittensor as bt
from boolnet.errors import (
    GroupDivisibility,
    GroupMismatch,
    OddChannelSplit,
    ShapeMismatch,
)

from oracles import conv2d_ref, maxpool_ref, replicate_pad_ref, shuffle_index_ref


def random_pm1(rng, shape):
    return np.where(rng.random(shape) < 0.5, -1.0, 1.0).astype(np.float32)


class TestBConv2d:
    def test_1x1_orthogonal_vectors(self):
        x = np.array([1.0, -1.0, 1.0, -1.0]).reshape(1, 4, 1, 1)
        w = np.array([1.0, 1.0, -1.0, -1.0]).reshape(1, 4, 1, 1)
        acc = bk.bconv2d(bt.pack(x), bt.pack(w))
        assert acc.shape == (1, 1, 1, 1)
        assert acc[0, 0, 0, 0] == 0

    def test_all_agree_interior(self):
        x = bt.pack(np.ones((1, 8, 5, 5), dtype=np.float32))
        w = bt.pack(np.ones((1, 8, 3, 3), dtype=np.float32))
        acc = bk.bconv2d(x, w)
        assert acc[0, 0, 2, 2] == 72  # 3*3*8 all agreeing

    def test_matches_float_oracle_fixed(self):
        rng = np.random.default_rng(1)
        x = random_pm1(rng, (2, 4, 5, 5))
        w = random_pm1(rng, (3, 4, 3, 3))
        acc = bk.bconv2d(bt.pack(x), bt.pack(w))
        assert np.array_equal(acc, conv2d_ref(x, w).astype(np.int32))

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_float_oracle_random(self, seed):
        rng = np.random.default_rng(seed)
        groups = int(rng.integers(1, 4))
        icg = int(rng.integers(1, 40))
        ocg = int(rng.integers(1, 5))
        kh = int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        h = int(rng.integers(kh, 8))
        x = random_pm1(rng, (2, groups * icg, h, h))
        w = random_pm1(rng, (groups * ocg, icg, kh, kh))
        acc = bk.bconv2d(bt.pack(x), bt.pack(w), stride=stride, groups=groups)
        ref = conv2d_ref(x, w, stride=stride, groups=groups)
        assert np.array_equal(acc, ref.astype(np.int32))

    def test_dilation_matches_oracle(self):
        rng = np.random.default_rng(9)
        x = random_pm1(rng, (1, 6, 8, 8))
        w = random_pm1(rng, (2, 6, 3, 3))
        acc = bk.bconv2d(bt.pack(x), bt.pack(w), dilation=2)
        ref = conv2d_ref(x, w, dilation=2)
        assert np.array_equal(acc, ref.astype(np.int32))

    def test_group_mismatch(self):
        x = bt.pack(np.ones((1, 6, 3, 3), dtype=np.float32))
        w = bt.pack(np.ones((2, 2, 1, 1), dtype=np.float32))
        with pytest.raises(GroupMismatch):
            bk.bconv2d(x, w, groups=2)


class TestReplicatePad:
    def test_pad_zero_identity(self):
        x = bt.pack(np.ones((1, 3, 2, 2), dtype=np.float32))
        assert bk.replicate_pad(x, 0) is x

    def test_single_pixel(self):
        rng = np.random.default_rng(3)
        x = random_pm1(rng, (1, 5, 1, 1))
        padded = bk.replicate_pad(bt.pack(x), 1)
        up = bt.unpack(padded)
        assert up.shape == (1, 5, 3, 3)
        assert (up == x).all()

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(1, 130))
        x = random_pm1(rng, (1, c, 2, 3))
        pad = int(rng.integers(1, 3))
        got = bt.unpack(bk.replicate_pad(bt.pack(x), pad))
        assert np.array_equal(got, replicate_pad_ref(x, pad))


class TestLogicOps:
    def pairs(self):
        vals = [-1.0, 1.0]
        for a in vals:
            for b in vals:
                yield a, b

    def test_xnor_truth_table(self):
        for a, b in self.pairs():
            ta = bt.pack(np.full((1, 1, 1, 1), a))
            tb = bt.pack(np.full((1, 1, 1, 1), b))
            got = bt.unpack(bk.logic_xnor(ta, tb))[0, 0, 0, 0]
            assert got == a * b  # Eq. float form: XNOR == product

    def test_or_truth_table(self):
        expect = {(-1, -1): -1, (-1, 1): 1, (1, -1): 1, (1, 1): 1}
        for a, b in self.pairs():
            ta = bt.pack(np.full((1, 1, 1, 1), a))
            tb = bt.pack(np.full((1, 1, 1, 1), b))
            got = bt.unpack(bk.logic_or(ta, tb))[0, 0, 0, 0]
            assert got == expect[(a, b)]
            # float relaxation 2*min(1,(a+b)/2+1)-1 agrees
            assert got == 2 * min(1.0, (a + b) / 2 + 1) - 1

    def test_or_identity_and_absorbing(self):
        rng = np.random.default_rng(5)
        b = bt.pack(random_pm1(rng, (1, 70, 2, 2)))
        ones = bt.pack(np.ones((1, 70, 2, 2), dtype=np.float32))
        negs = bt.pack(-np.ones((1, 70, 2, 2), dtype=np.float32))
        assert bk.logic_or(ones, b) == ones
        assert bk.logic_or(negs, b) == b

    def test_xnor_self_and_complement(self):
        rng = np.random.default_rng(6)
        x = random_pm1(rng, (1, 65, 2, 2))
        a = bt.pack(x)
        na = bt.pack(-x)
        assert bt.unpack(bk.logic_xnor(a, a)).min() == 1.0
        assert bt.unpack(bk.logic_xnor(a, na)).max() == -1.0

    def test_shape_mismatch(self):
        a = bt.pack(np.ones((1, 2, 1, 1), dtype=np.float32))
        b = bt.pack(np.ones((1, 3, 1, 1), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            bk.logic_xnor(a, b)


class TestOrMaxpool:
    def test_single_window(self):
        x = np.array([-1.0, -1.0, -1.0, 1.0]).reshape(1, 1, 2, 2)
        out = bt.unpack(bk.or_maxpool2d(bt.pack(x), 2, 2))
        assert out[0, 0, 0, 0] == 1.0
        out = bt.unpack(bk.or_maxpool2d(bt.pack(-np.ones((1, 1, 2, 2))), 2, 2))
        assert out[0, 0, 0, 0] == -1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_float_maxpool(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(1, 100))
        h = int(rng.integers(2, 8))
        x = random_pm1(rng, (2, c, h, h))
        k = int(rng.integers(1, min(3, h) + 1))
        s = int(rng.integers(1, 3))
        got = bt.unpack(bk.or_maxpool2d(bt.pack(x), k, s))
        assert np.array_equal(got, maxpool_ref(x, k, s))

    def test_idempotent_at_unit_window(self):
        rng = np.random.default_rng(11)
        x = bt.pack(random_pm1(rng, (1, 33, 4, 4)))
        assert bk.or_maxpool2d(x, 1, 1) == x

    def test_monotone(self):
        # flipping one input bit -1 -> +1 never flips an output +1 -> -1
        rng = np.random.default_rng(12)
        x = random_pm1(rng, (1, 3, 4, 4))
        base = bt.unpack(bk.or_maxpool2d(bt.pack(x), 2, 2))
        neg = np.argwhere(x == -1.0)
        for idx in neg[:20]:
            y = x.copy()
            y[tuple(idx)] = 1.0
            out = bt.unpack(bk.or_maxpool2d(bt.pack(y), 2, 2))
            assert not ((base == 1.0) & (out == -1.0)).any()


class TestChannelOps:
    def test_concat_inverts_split(self):
        rng = np.random.default_rng(13)
        for c in [2, 64, 66, 128]:
            x = bt.pack(random_pm1(rng, (2, c, 3, 3)))
            a, b = bk.channel_split(x)
            assert bk.channel_concat(a, b) == x

    def test_split_odd_raises(self):
        x = bt.pack(np.ones((1, 3, 1, 1), dtype=np.float32))
        with pytest.raises(OddChannelSplit):
            bk.channel_split(x)

    def test_shuffle_example(self):
        # C=4, g=2: order (0,1,2,3) -> (0,2,1,3)
        x = np.stack(
            [np.full((1, 1), v) for v in [1.0, -1.0, 1.0, -1.0]]
        ).reshape(1, 4, 1, 1)
        out = bt.unpack(bk.channel_shuffle(bt.pack(x), 2))
        assert out[0, :, 0, 0].tolist() == [1.0, 1.0, -1.0, -1.0]

    @pytest.mark.parametrize("c,g", [(4, 2), (6, 3), (64, 4), (120, 8)])
    def test_shuffle_matches_index_formula(self, c, g):
        rng = np.random.default_rng(c * g)
        x = random_pm1(rng, (1, c, 2, 2))
        got = bt.unpack(bk.channel_shuffle(bt.pack(x), g))
        assert np.array_equal(got, x[:, shuffle_index_ref(c, g)])

    def test_shuffle_inverse(self):
        rng = np.random.default_rng(14)
        x = bt.pack(random_pm1(rng, (1, 12, 2, 2)))
        assert bk.channel_shuffle(bk.channel_shuffle(x, 3), 4) == x

    def test_shuffle_is_bijection(self):
        for c, g in [(8, 2), (12, 4), (66, 6)]:
            idx = shuffle_index_ref(c, g)
            assert sorted(idx) == list(range(c))

    def test_shuffle_divisibility(self):
        x = bt.pack(np.ones((1, 5, 1, 1), dtype=np.float32))
        with pytest.raises(GroupDivisibility):
            bk.channel_shuffle(x, 2)

    def test_slice_matches_numpy(self):
        rng = np.random.default_rng(15)
        x = random_pm1(rng, (2, 130, 2, 2))
        t = bt.pack(x)
        for lo, hi in [(0, 1), (3, 70), (64, 128), (65, 130), (0, 130)]:
            got = bt.unpack(bk.channel_slice(t, lo, hi))
            assert np.array_equal(got, x[:, lo:hi])
