import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import ratenet as rn
from ratenet.losses import (LossWeights, SurrogateFeatureExtractor,
                            VGG19Features, _gram_batch, gan_loss_d,
                            gan_loss_g, gram_matrix, l1_terms, l2_terms,
                            loss_L1, loss_L2, perceptual_loss, recon_l1,
                            style_loss)

LN2 = 0.6931471805599453


class IdentityFx:
    """Single tap returning the input unchanged; fully hand-checkable."""

    n_taps = 1
    provenance = "test-identity"

    def features(self, x):
        return [x]


class TwoTapFx:
    """Input plus a doubled, strided copy; still hand-checkable."""

    n_taps = 2

    def features(self, x):
        return [x, 2.0 * x[:, :, ::2, ::2]]


def mean_abs_loop(a, b):
    a, b = a.detach().numpy().ravel(), b.detach().numpy().ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += abs(float(x) - float(y))
    return total / a.size


def gram_loop(feat):
    feat = feat.detach().numpy()
    c, h, w = feat.shape
    out = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            s = 0.0
            for y in range(h):
                for x in range(w):
                    s += float(feat[i, y, x]) * float(feat[j, y, x])
            out[i, j] = s / (c * h * w)
    return out


def bce_logits_loop(scores, label):
    vals = scores.detach().numpy().ravel()
    total = 0.0
    for s in vals:
        p = 1.0 / (1.0 + math.exp(-float(s)))
        total += -(label * math.log(p) + (1 - label) * math.log(1 - p))
    return total / vals.size


def rand_pair(shape=(2, 3, 8, 8), seed=0):
    g = torch.Generator().manual_seed(seed)
    a = torch.rand(*shape, generator=g) * 2 - 1
    b = torch.rand(*shape, generator=g) * 2 - 1
    return a, b


class TestReconstruction:
    def test_matches_loop_oracle(self):
        pred, target = rand_pair()
        assert recon_l1(pred, target).item() == pytest.approx(
            mean_abs_loop(pred, target), abs=1e-6)

    def test_constant_offset(self):
        target = torch.zeros(2, 3, 4, 4)
        assert recon_l1(target + 0.1, target).item() == pytest.approx(0.1, abs=1e-7)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            recon_l1(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 2, 2))


class TestPerceptual:
    def test_identity_extractor_reduces_to_recon(self):
        pred, target = rand_pair(seed=1)
        per = perceptual_loss(pred, target, IdentityFx(), [1.0])
        assert per.item() == pytest.approx(recon_l1(pred, target).item(), abs=1e-7)

    def test_two_tap_loop_oracle(self):
        pred, target = rand_pair(seed=2)
        fx = TwoTapFx()
        got = perceptual_loss(pred, target, fx, [0.3, 0.7]).item()
        taps_p, taps_t = fx.features(pred), fx.features(target)
        want = (0.3 * mean_abs_loop(taps_p[0], taps_t[0])
                + 0.7 * mean_abs_loop(taps_p[1], taps_t[1]))
        assert got == pytest.approx(want, abs=1e-6)

    def test_surrogate_loop_oracle(self):
        pred, target = rand_pair(shape=(2, 3, 16, 16), seed=3)
        fx = SurrogateFeatureExtractor(seed=0)
        weights = [0.25, 0.25, 0.25, 0.25]
        got = perceptual_loss(pred, target, fx, weights).item()
        want = sum(w * mean_abs_loop(a, b) for w, a, b
                   in zip(weights, fx.features(pred), fx.features(target)))
        assert got == pytest.approx(want, rel=1e-5)

    def test_weight_count_mismatch_rejected(self):
        pred, target = rand_pair()
        with pytest.raises(ValueError, match="weights"):
            perceptual_loss(pred, target, IdentityFx(), [0.5, 0.5])


class TestGram:
    def test_zeros(self):
        assert torch.all(gram_matrix(torch.zeros(3, 4, 4)) == 0)

    def test_tiny_example_by_hand(self):
        # channel 0 = [1, 1], channel 1 = [0, 0]; C*H*W = 4
        feat = torch.tensor([[[1.0, 1.0]], [[0.0, 0.0]]])
        expected = torch.tensor([[0.5, 0.0], [0.0, 0.0]])
        assert torch.allclose(gram_matrix(feat), expected, atol=1e-7)

    def test_matches_loop_oracle(self):
        g = torch.Generator().manual_seed(4)
        feat = torch.randn(5, 3, 4, generator=g)
        got = gram_matrix(feat).numpy()
        assert np.allclose(got, gram_loop(feat), atol=1e-6)

    def test_positive_semidefinite(self):
        g = torch.Generator().manual_seed(5)
        feat = torch.randn(6, 5, 5, generator=g)
        eigvals = np.linalg.eigvalsh(gram_matrix(feat).numpy())
        assert eigvals.min() >= -1e-8

    def test_batch_helper_agrees_per_sample(self):
        g = torch.Generator().manual_seed(6)
        feat = torch.randn(3, 4, 5, 5, generator=g)
        batched = _gram_batch(feat)
        for n in range(3):
            assert torch.allclose(batched[n], gram_matrix(feat[n]), atol=1e-6)

    def test_requires_single_sample(self):
        with pytest.raises(ValueError):
            gram_matrix(torch.zeros(1, 3, 4, 4))


class TestStyle:
    def test_matches_loop_oracle(self):
        pred, target = rand_pair(shape=(2, 3, 4, 4), seed=7)
        got = style_loss(pred, target, IdentityFx()).item()
        want = 0.0
        for n in range(2):
            diff = gram_loop(pred[n]) - gram_loop(target[n])
            want += float((diff ** 2).sum())
        want /= 2
        assert got == pytest.approx(want, rel=1e-5)

    def test_invariant_to_spatial_shuffle(self):
        g = torch.Generator().manual_seed(8)
        pred = torch.randn(1, 3, 4, 4, generator=g)
        perm = torch.randperm(16, generator=g)
        shuffled = pred.reshape(1, 3, 16)[:, :, perm].reshape(1, 3, 4, 4)
        assert recon_l1(pred, shuffled).item() > 0.01
        assert style_loss(pred, shuffled, IdentityFx()).item() == pytest.approx(0.0, abs=1e-9)

    def test_zero_at_identity(self):
        pred, _ = rand_pair(seed=9)
        assert style_loss(pred, pred.clone(), TwoTapFx()).item() == 0.0


class TestAdversarial:
    def test_zero_logits_give_log_two(self):
        scores = torch.zeros(2, 1, 4, 4)
        assert gan_loss_g(scores).item() == pytest.approx(LN2, abs=1e-7)
        assert gan_loss_d(scores, scores).item() == pytest.approx(LN2, abs=1e-7)

    def test_confident_real_score(self):
        scores = torch.full((1, 1, 1, 1), 10.0)
        assert gan_loss_g(scores).item() == pytest.approx(
            4.5398899216870535e-05, abs=1e-10)

    def test_generator_loop_oracle(self):
        g = torch.Generator().manual_seed(10)
        scores = torch.randn(2, 1, 4, 4, generator=g) * 3
        assert gan_loss_g(scores).item() == pytest.approx(
            bce_logits_loop(scores, 1), abs=1e-6)

    def test_discriminator_loop_oracle(self):
        g = torch.Generator().manual_seed(11)
        real = torch.randn(2, 1, 4, 4, generator=g) * 3
        fake = torch.randn(2, 1, 4, 4, generator=g) * 3
        want = 0.5 * (bce_logits_loop(real, 1) + bce_logits_loop(fake, 0))
        assert gan_loss_d(real, fake).item() == pytest.approx(want, abs=1e-6)

    def test_discriminator_prefers_separation(self):
        sep = gan_loss_d(torch.full((1, 1, 2, 2), 4.0), torch.full((1, 1, 2, 2), -4.0))
        confused = gan_loss_d(torch.full((1, 1, 2, 2), -4.0), torch.full((1, 1, 2, 2), 4.0))
        assert sep.item() < LN2 < confused.item()


class TestStagedObjectives:
    def test_l1_component_arithmetic(self):
        pred, target = rand_pair(seed=12)
        w = LossWeights(layer_weights=(1.0,))
        terms = l1_terms(pred, target, w, IdentityFx())
        assert set(terms) == {"recon", "per", "total"}
        want = w.lambda_recon * terms["recon"] + w.lambda_per * terms["per"]
        assert terms["total"].item() == pytest.approx(want.item(), rel=1e-6)
        assert loss_L1(pred, target, w, IdentityFx()).item() == pytest.approx(
            terms["total"].item(), abs=0)

    def test_l1_recon_only_spot_value(self):
        target = torch.zeros(2, 3, 4, 4)
        w = LossWeights(lambda_recon=10.0, lambda_per=0.0, layer_weights=(1.0,))
        terms = l1_terms(target + 0.1, target, w, IdentityFx())
        assert terms["total"].item() == pytest.approx(1.0, abs=1e-6)

    def test_l2_component_arithmetic(self):
        pred, target = rand_pair(seed=13)
        w = LossWeights(layer_weights=(1.0,))
        g = torch.Generator().manual_seed(14)
        fs = torch.randn(2, 1, 2, 2, generator=g)
        fa = torch.randn(2, 1, 2, 2, generator=g)
        terms = l2_terms(pred, target, w, IdentityFx(), fs, fa)
        assert set(terms) == {"recon", "per", "sty", "gan", "total"}
        want = (w.lambda_recon * terms["recon"] + w.lambda_per * terms["per"]
                + w.lambda_sty * terms["sty"] + w.lambda_gan * terms["gan"])
        assert terms["total"].item() == pytest.approx(want.item(), rel=1e-6)
        assert terms["gan"].item() == pytest.approx(
            gan_loss_g(fs).item() + gan_loss_g(fa).item(), abs=1e-6)
        assert loss_L2(pred, target, w, IdentityFx(), fs, fa).item() == pytest.approx(
            terms["total"].item(), abs=0)

    def test_l2_gan_only_spot_value(self):
        pred, target = rand_pair(seed=15)
        w = LossWeights(lambda_recon=0.0, lambda_per=0.0, lambda_sty=0.0,
                        lambda_gan=5.0, layer_weights=(1.0,))
        zeros = torch.zeros(2, 1, 2, 2)
        total = loss_L2(pred, target, w, IdentityFx(), zeros, zeros)
        assert total.item() == pytest.approx(10 * LN2, abs=1e-6)

    def test_all_zero_weights(self):
        pred, target = rand_pair(seed=16)
        w = LossWeights(lambda_recon=0.0, lambda_per=0.0, lambda_sty=0.0,
                        lambda_gan=0.0, layer_weights=(0.0,))
        zeros = torch.zeros(1, 1, 1, 1)
        assert loss_L2(pred, target, w, IdentityFx(), zeros, zeros).item() == 0.0

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_terms_nonnegative_and_zero_at_identity(self, seed):
        g = torch.Generator().manual_seed(seed)
        pred = torch.rand(1, 3, 8, 8, generator=g) * 2 - 1
        target = torch.rand(1, 3, 8, 8, generator=g) * 2 - 1
        w = LossWeights(layer_weights=(0.5, 0.5))
        fx = TwoTapFx()
        scores = torch.randn(1, 1, 2, 2, generator=g)
        terms = l2_terms(pred, target, w, fx, scores, scores)
        for name, value in terms.items():
            assert value.item() >= 0.0, name
        same = l1_terms(pred, pred.clone(), w, fx)
        assert same["recon"].item() == 0.0
        assert same["per"].item() == 0.0

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_recon=-1.0)
        with pytest.raises(ValueError):
            LossWeights(layer_weights=(0.5, -0.5))
        w = LossWeights(layer_weights=[1, 2])
        assert w.layer_weights == (1.0, 2.0)

    def test_default_weights(self):
        w = LossWeights()
        assert (w.lambda_recon, w.lambda_per, w.lambda_sty, w.lambda_gan) == (10.0, 5.0, 5.0, 5.0)
        assert w.layer_weights == (0.25, 0.25, 0.25, 0.25)


class TestSurrogateExtractor:
    def test_tap_shapes(self):
        fx = SurrogateFeatureExtractor(seed=0)
        taps = fx.features(torch.randn(2, 3, 16, 16))
        assert [t.shape for t in taps] == [
            (2, 16, 16, 16), (2, 32, 8, 8), (2, 64, 4, 4), (2, 64, 2, 2)]
        assert fx.n_taps == 4

    def test_pooled_is_deepest_tap_mean(self):
        fx = SurrogateFeatureExtractor(seed=0)
        x = torch.randn(3, 3, 16, 16)
        assert torch.allclose(fx.pooled(x), fx.features(x)[-1].mean(dim=(2, 3)))
        assert fx.pooled(x).shape == (3, 64)

    def test_frozen_and_eval(self):
        fx = SurrogateFeatureExtractor(seed=0)
        assert not fx.training
        assert all(not p.requires_grad for p in fx.parameters())

    def test_seed_determines_weights(self):
        x = torch.randn(1, 3, 16, 16)
        a = SurrogateFeatureExtractor(seed=0).features(x)
        b = SurrogateFeatureExtractor(seed=0).features(x)
        c = SurrogateFeatureExtractor(seed=1).features(x)
        for ta, tb in zip(a, b):
            assert torch.equal(ta, tb)
        assert not torch.equal(a[0], c[0])

    def test_provenance_string(self):
        assert SurrogateFeatureExtractor().provenance == "fixed-seed-surrogate"

    def test_input_validation(self):
        fx = SurrogateFeatureExtractor()
        with pytest.raises(ValueError):
            fx.features(torch.randn(3, 16, 16))
        with pytest.raises(ValueError):
            fx.features(torch.randn(1, 4, 16, 16))


class TestVGG19Graph:
    def test_tap_count_and_shapes(self):
        fx = VGG19Features()
        taps = fx.features(torch.randn(1, 3, 32, 32))
        assert fx.n_taps == 4
        assert [t.shape for t in taps] == [
            (1, 64, 32, 32), (1, 128, 16, 16), (1, 256, 8, 8), (1, 512, 4, 4)]
        assert fx.provenance == "pretrained-vgg19"

    def test_frozen(self):
        fx = VGG19Features()
        assert not fx.training
        assert all(not p.requires_grad for p in fx.parameters())

    def test_loads_torchvision_layout(self, tmp_path):
        donor = VGG19Features()
        state = {f"features.{k}": v for k, v in donor.features_net.state_dict().items()}
        state["classifier.0.weight"] = torch.zeros(2, 2)  # extra keys are ignored
        path = tmp_path / "vgg19.pt"
        torch.save(state, path)
        loaded = VGG19Features(weights_path=str(path))
        x = torch.randn(1, 3, 32, 32)
        for a, b in zip(donor.features(x), loaded.features(x)):
            assert torch.equal(a, b)

    def test_loads_bare_layout(self, tmp_path):
        donor = VGG19Features()
        path = tmp_path / "bare.pt"
        torch.save(donor.features_net.state_dict(), path)
        loaded = VGG19Features(weights_path=str(path))
        x = torch.randn(1, 3, 32, 32)
        assert torch.equal(donor.features(x)[-1], loaded.features(x)[-1])

    def test_missing_parameters_rejected(self, tmp_path):
        donor = VGG19Features()
        state = donor.features_net.state_dict()
        state.pop("0.weight")
        path = tmp_path / "partial.pt"
        torch.save(state, path)
        with pytest.raises(ValueError, match="missing parameters"):
            VGG19Features(weights_path=str(path))
