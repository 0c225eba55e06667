"""Mask-interaction blocks against their naive oracles and invariants."""

import numpy as np
import pytest

from maisenet import ops
from maisenet.mai import Aspp, Cbam, Csab, MaskInteractionChain, NonLocalBlock
from maisenet.model import init_weights
from maisenet.tensor import ShapeError, Tensor

from naive_oracles import naive_aspp, naive_cbam, naive_csab, naive_nlb


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


class TestAspp:
    def test_zero_weights_zero_output(self):
        rng = np.random.default_rng(0)
        block = Aspp(4)
        assert np.all(block(rand(rng, 1, 4, 14, 14)).data == 0.0)

    def test_shape_contract(self):
        rng = np.random.default_rng(1)
        block = Aspp(8)
        init_weights(block, 1)
        out = block(rand(rng, 2, 8, 14, 14))
        assert out.data.shape == (2, 8, 14, 14)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        rates = (2, 3, 4, 5)
        block = Aspp(4, rates)
        init_weights(block, seed)
        x = rng.standard_normal((1, 4, 14, 14))
        got = block(Tensor(x)).data
        want = naive_aspp(
            x,
            [getattr(block, f"branch{i}").weight.data for i in range(4)],
            [getattr(block, f"branch{i}").bias.data for i in range(4)],
            block.reduce.weight.data,
            block.reduce.bias.data,
            rates,
        )
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_channel_mismatch_rejected(self):
        block = Aspp(4)
        with pytest.raises(ShapeError, match="channel"):
            block(Tensor(np.zeros((1, 6, 14, 14))))

    def test_translation_consistency(self):
        rng = np.random.default_rng(11)
        block = Aspp(4)
        init_weights(block, 11)
        x = rand(rng, 1, 4, 14, 14)
        rolled = Tensor(np.roll(x.data, 1, axis=3))
        margin = 6
        a = block(x).data[:, :, margin:-margin, margin:-margin]
        b = np.roll(block(rolled).data, -1, axis=3)[:, :, margin:-margin, margin:-margin]
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestNonLocalBlock:
    def test_residual_identity_bit_exact(self):
        rng = np.random.default_rng(2)
        block = NonLocalBlock(8)
        init_weights(block, 2)
        block.z.weight.data[...] = 0.0
        block.z.bias.data[...] = 0.0
        x = rand(rng, 2, 8, 4, 4)
        assert np.array_equal(block(x).data, x.data)

    def test_constant_input_uniform_attention(self):
        block = NonLocalBlock(4)
        init_weights(block, 3)
        x = Tensor(np.full((1, 4, 3, 3), 1.2))
        out, attn = block.forward_with_attention(x)
        np.testing.assert_allclose(attn.data, 1.0 / 9.0, rtol=0, atol=1e-12)
        assert np.all(out.data.var(axis=(2, 3)) <= 1e-24)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dense_attention_oracle(self, seed):
        rng = np.random.default_rng(seed)
        block = NonLocalBlock(4)
        init_weights(block, seed)
        x = rng.standard_normal((1, 4, 3, 3))
        got, attn = block.forward_with_attention(Tensor(x))
        want, want_attn = naive_nlb(
            x,
            block.theta.weight.data, block.theta.bias.data,
            block.phi.weight.data, block.phi.bias.data,
            block.g.weight.data, block.g.bias.data,
            block.z.weight.data, block.z.bias.data,
        )
        np.testing.assert_allclose(got.data, want, rtol=0, atol=1e-12)
        np.testing.assert_allclose(attn.data, want_attn, rtol=0, atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        block = NonLocalBlock(8)
        init_weights(block, 4)
        for _ in range(100):
            x = rand(rng, 1, 8, 4, 4)
            _, attn = block.forward_with_attention(x)
            assert np.all(np.abs(attn.data.sum(axis=2) - 1.0) <= 1e-12)

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ShapeError, match="divisible"):
            NonLocalBlock(6)


class TestCbam:
    def test_zero_parameters_half_weights(self):
        rng = np.random.default_rng(5)
        block = Cbam(16, reduction=4)
        x = rand(rng, 1, 16, 4, 4)
        w_ca, w_sa, out = block(x)
        assert np.all(w_ca.data == 0.5)
        assert np.all(w_sa.data == 0.5)
        np.testing.assert_allclose(out.data, x.data / 4.0, rtol=0, atol=1e-16)

    def test_weights_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(6)
        block = Cbam(16, reduction=16)
        init_weights(block, 6)
        for _ in range(20):
            w_ca, w_sa, out = block(rand(rng, 2, 16, 5, 5))
            for w in (w_ca, w_sa):
                assert np.all(w.data > 0.0) and np.all(w.data < 1.0)

    def test_contraction(self):
        rng = np.random.default_rng(7)
        block = Cbam(16, reduction=4)
        init_weights(block, 7)
        x = rand(rng, 1, 16, 4, 4)
        _, _, out = block(x)
        assert np.all(np.abs(out.data) <= np.abs(x.data))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_stepwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        block = Cbam(16, reduction=4)
        init_weights(block, seed)
        x = rng.standard_normal((1, 16, 4, 4))
        w_ca, w_sa, out = block(Tensor(x))
        ref_ca, ref_sa, ref_out = naive_cbam(
            x,
            block.mlp1.weight.data, block.mlp1.bias.data,
            block.mlp2.weight.data, block.mlp2.bias.data,
            block.spatial.weight.data, block.spatial.bias.data,
        )
        np.testing.assert_allclose(w_ca.data, ref_ca, rtol=0, atol=1e-12)
        np.testing.assert_allclose(w_sa.data, ref_sa, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out.data, ref_out, rtol=0, atol=1e-12)

    def test_reduction_divisibility_rejected(self):
        with pytest.raises(ShapeError, match="reduction"):
            Cbam(10, reduction=4)


class TestCsab:
    def test_group_independence(self):
        rng = np.random.default_rng(8)
        block = Csab(4, reduction=4)
        init_weights(block, 8)
        block.refine.weight.data[4:] = 0.0
        block.refine.bias.data[4:] = 0.0
        fb, fp = rand(rng, 1, 4, 6, 6), rand(rng, 1, 4, 6, 6)
        refined = block.refine(ops.concat([fb, fp], axis=1))
        assert np.all(refined.data[:, 4:] == 0.0)
        assert np.any(refined.data[:, :4] != 0.0)

    def test_output_shape_keeps_fused_channels(self):
        rng = np.random.default_rng(9)
        block = Csab(8, reduction=16)
        init_weights(block, 9)
        out = block(rand(rng, 2, 8, 14, 14), rand(rng, 2, 8, 14, 14))
        assert out.data.shape == (2, 16, 14, 14)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_composition_oracle(self, seed):
        rng = np.random.default_rng(seed)
        block = Csab(4, reduction=4)
        init_weights(block, seed)
        fb = rng.standard_normal((1, 4, 14, 14))
        fp = rng.standard_normal((1, 4, 14, 14))
        got = block(Tensor(fb), Tensor(fp)).data
        cbam = block.attention
        want = naive_csab(
            fb, fp,
            block.refine.weight.data, block.refine.bias.data,
            (
                cbam.mlp1.weight.data, cbam.mlp1.bias.data,
                cbam.mlp2.weight.data, cbam.mlp2.bias.data,
                cbam.spatial.weight.data, cbam.spatial.bias.data,
            ),
        )
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        block = Csab(4, reduction=4)
        with pytest.raises(ShapeError, match="shapes differ"):
            block(Tensor(np.zeros((1, 4, 6, 6))), Tensor(np.zeros((1, 4, 5, 5))))


class TestChain:
    def test_three_logit_maps_at_double_resolution(self):
        rng = np.random.default_rng(10)
        chain = MaskInteractionChain(channels=8, cbam_reduction=16)
        init_weights(chain, 10)
        outs = chain(rand(rng, 2, 8, 14, 14))
        assert len(outs) == 3
        for out in outs:
            assert out.data.shape == (2, 1, 28, 28)

    def test_stage1_invariant_to_later_stages(self):
        rng = np.random.default_rng(11)
        chain = MaskInteractionChain(channels=4, cbam_reduction=4)
        init_weights(chain, 11)
        x = rand(rng, 1, 4, 14, 14)
        first = chain(x)[0].data.copy()
        for name, param in chain.named_parameters():
            if name.startswith(("stage2", "stage3")):
                param.data[...] = rng.standard_normal(param.data.shape)
        assert np.array_equal(chain(x)[0].data, first)

    def test_stage_metadata_kept(self):
        chain = MaskInteractionChain(channels=4, cbam_reduction=4)
        assert chain.config.stage_iou_thresholds == (0.5, 0.6, 0.7)
        assert chain.config.roi_size == 14

    def test_parameter_names_follow_manifest_style(self):
        chain = MaskInteractionChain(channels=4, cbam_reduction=4)
        names = {name for name, _ in chain.named_parameters()}
        assert "stage2.aspp.branch0.weight" in names
        assert "stage2.nlb.theta.weight" in names
        assert "stage3.csab.refine.weight" in names
        assert "stage1.head.conv0.weight" in names
        assert "stage3.restore.weight" in names
