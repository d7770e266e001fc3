import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurodyn import autodiff as ad
from neurodyn.errors import ContractError, DegenerateError, DimensionError, ParameterError
from neurodyn.gradcheck import grad_check, grad_check_params
from neurodyn.multitask.model import forward_tensors
from neurodyn.multitask import (
    AugmentConfig, LossWeights, MtlConfig, MtlParams, attention, augment, augment_batch, binary_f1,
    corpus_arrays, cross_entropy, embed, evaluate, init_mtl, linear_probe, mtl_forward,
    mtl_train, nt_xent, total_loss,
)
from neurodyn.synth import gen_corpus
from oracles import brute_bce, brute_cross_entropy, brute_nt_xent

TINY = MtlConfig.toy(d_model=8, n_heads=2, ffn_dim=8, stem_filters=(4, 4), n_tokens=4, proj_dim=8,
                     dropout=0.0)


class TestAugment:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 50))
        np.testing.assert_array_equal(augment(x, AugmentConfig.identity(), np.random.default_rng(1)), x)

    def test_light_never_zeroes(self):
        rng = np.random.default_rng(2)
        x = np.random.default_rng(0).uniform(1, 2, size=(4, 320))
        for _ in range(200):
            assert np.all(augment(x, AugmentConfig.light(), rng) != 0)

    def test_mask_width(self):
        cfg = AugmentConfig(0.0, 0.0, mask_prob=1.0, chdrop_prob=0.0)
        x = np.ones((2, 320))
        out = augment(x, cfg, np.random.default_rng(3))
        cols = np.flatnonzero(np.all(out == 0, axis=0))
        assert cols.size == 16 and np.all(np.diff(cols) == 1)

    def test_channel_drop(self):
        cfg = AugmentConfig(0.0, 0.0, mask_prob=0.0, chdrop_p=1.0, chdrop_prob=1.0)
        assert not augment(np.ones((3, 10)), cfg, np.random.default_rng(0)).any()

    def test_reproducible_from_state(self):
        x = np.random.default_rng(0).normal(size=(2, 64))
        a = augment_batch([x, x], AugmentConfig(), np.random.default_rng(9))
        b = augment_batch([x, x], AugmentConfig(), np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_validation(self):
        with pytest.raises(ParameterError):
            AugmentConfig(mask_prob=1.5)
        with pytest.raises(ParameterError):
            AugmentConfig(jitter_sigma=-1)


class TestNtXent:
    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        Z = np.random.default_rng(seed).normal(size=(8, 16))
        assert abs(nt_xent(Z, 0.5).item() - brute_nt_xent(Z, 0.5)) < 1e-10

    def test_single_pair(self):
        assert nt_xent(np.random.default_rng(0).normal(size=(2, 5))).item() == 0.0

    def test_orthogonal_fixture(self):
        e = np.eye(4)
        Z = np.stack([e[0], e[0], e[1], e[1]])
        assert abs(nt_xent(Z, 0.5).item() - math.log(1 + 2 * math.exp(-2))) < 1e-12

    def test_rotation_invariant(self):
        rng = np.random.default_rng(1)
        Z = rng.normal(size=(6, 5))
        Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        assert abs(nt_xent(Z).item() - nt_xent(Z @ Q).item()) < 1e-9

    def test_errors(self):
        with pytest.raises(ParameterError):
            nt_xent(np.ones((2, 2)), tau=0.0)
        with pytest.raises(DimensionError):
            nt_xent(np.ones((3, 2)))

    def test_gradient(self):
        Z = np.random.default_rng(2).normal(size=(4, 8))
        assert grad_check(lambda z: nt_xent(z, 0.5), Z) < 1e-4


class TestSupervisedLosses:
    def test_cross_entropy_oracle(self):
        rng = np.random.default_rng(0)
        L, y = rng.normal(size=(6, 3)), rng.integers(0, 3, 6)
        assert cross_entropy(L, y).item() == pytest.approx(brute_cross_entropy(L, y), abs=1e-12)

    def test_saturated_logits(self):
        out = {"logits_mi": np.array([[30.0, -30.0], [-30.0, 30.0]]), "logit_chaos": np.array([30.0, -30.0])}
        _, parts = total_loss(out, {"mi": [0, 1], "chaos": [1, 0]}, LossWeights(1, 0.6, 0))
        assert parts["classification"] < 1e-9 and parts["chaos"] < 1e-9

    def test_weighted_sum_fixture(self):
        rng = np.random.default_rng(1)
        out = {"logits_mi": rng.normal(size=(4, 2)), "logit_chaos": rng.normal(size=4)}
        Z = rng.normal(size=(8, 5))
        y = {"mi": [0, 1, 1, 0], "chaos": [1, 1, 0, 0]}
        loss, parts = total_loss(out, y, LossWeights(1.0, 0.6, 0.3), 0.5, proj_pairs=Z)
        ref = (brute_cross_entropy(out["logits_mi"], y["mi"]) + 0.6 * brute_bce(out["logit_chaos"], y["chaos"])
               + 0.3 * brute_nt_xent(Z, 0.5))
        assert abs(loss.item() - ref) < 1e-12
        assert parts["total"] == loss.item()

    def test_contrastive_only(self):
        rng = np.random.default_rng(2)
        out = {"logits_mi": rng.normal(size=(2, 2)), "logit_chaos": rng.normal(size=2), "proj": rng.normal(size=(4, 3))}
        loss, _ = total_loss(out, {"mi": [0, 1], "chaos": [0, 1]}, LossWeights(0, 0, 1))
        assert loss.item() == pytest.approx(nt_xent(out["proj"]).item(), abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        out = {"logits_mi": rng.normal(0, 5, (4, 2)), "logit_chaos": rng.normal(0, 5, 4)}
        loss, _ = total_loss(out, {"mi": rng.integers(0, 2, 4), "chaos": rng.integers(0, 2, 4)},
                             proj_pairs=rng.normal(size=(8, 4)))
        assert loss.item() >= 0


class TestAttention:
    def test_single_token(self):
        v = np.array([[[1.0, 2.0, 3.0]]])
        out, w = attention(np.ones((1, 1, 3)), np.ones((1, 1, 3)), v, return_weights=True)
        assert w.data.item() == 1.0
        np.testing.assert_array_equal(out.data, v)

    def test_orthogonal_keys_average(self):
        q = np.zeros((1, 2, 2))
        v = np.array([[[1.0, 4.0], [3.0, 0.0]]])
        out = attention(q, np.eye(2)[None], v).data
        np.testing.assert_allclose(out[0], [[2.0, 2.0], [2.0, 2.0]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_rows_convex(self, seed):
        rng = np.random.default_rng(seed)
        q, k, v = rng.normal(size=(3, 2, 5, 4))
        out, w = attention(q, k, v, return_weights=True)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(out.data <= v.max(axis=-2, keepdims=True) + 1e-12)
        assert np.all(out.data >= v.min(axis=-2, keepdims=True) - 1e-12)


def _random_biases(params, rng):
    # move off exact ReLU kinks left by zero-initialized biases
    return {k: (rng.normal(0, 0.1, v.shape) if k.endswith("_b") else v) for k, v in params.arrays.items()}


class TestModel:
    def test_output_shapes(self):
        cfg = MtlConfig.toy()
        p = init_mtl(3, cfg, np.random.default_rng(0))
        out = mtl_forward(p, np.zeros((5, 3, 160)), cfg)
        assert out["logits_mi"].shape == (5, 2) and out["logit_chaos"].shape == (5,)
        assert out["proj"].shape == (5, 128)
        np.testing.assert_allclose(np.linalg.norm(out["proj"], axis=1), 1.0, atol=1e-12)
        assert embed(p, np.zeros((3, 160)), cfg).shape == (1, 32)

    def test_channel_mismatch(self):
        cfg = MtlConfig.toy()
        p = init_mtl(3, cfg)
        with pytest.raises(ContractError):
            mtl_forward(p, np.zeros((2, 4, 160)), cfg)

    def test_config_checks(self):
        with pytest.raises(ParameterError):
            MtlConfig(d_model=10, n_heads=4)
        assert MtlConfig.from_dict(MtlConfig.toy().to_dict()) == MtlConfig.toy()
        assert MtlConfig.paper().d_model == 128

    @pytest.mark.parametrize("seed", range(3))
    def test_full_model_gradient(self, seed):
        rng = np.random.default_rng(seed)
        p = init_mtl(2, TINY, rng)
        X = rng.normal(size=(4, 2, 24))
        y = {"mi": np.array([0, 1, 0, 1]), "chaos": np.array([1, 0, 0, 1])}
        views = rng.normal(size=(8, 2, 24))
        meta = p.meta()

        def f(t):
            out = forward_tensors(t, np.concatenate([X, views]), meta, TINY)
            sup = {"logits_mi": out["logits_mi"][:4], "logit_chaos": out["logit_chaos"][:4]}
            return total_loss(sup, y, TINY.weights, TINY.tau, proj_pairs=out["proj"][4:])[0]

        errs = grad_check_params(f, _random_biases(p, rng))
        assert max(errs.values()) < 1e-4


@pytest.fixture(scope="module")
def small_corpus():
    return gen_corpus(8, seed=0, channels=2)


class TestTraining:
    def test_zero_epochs(self, small_corpus):
        init = init_mtl(2, MtlConfig.toy(), np.random.default_rng(0))
        p, rep = mtl_train(small_corpus, MtlConfig.toy(epochs=0), init=init)
        assert p == init and rep.losses == ()

    def test_deterministic(self, small_corpus):
        cfg = MtlConfig.toy(epochs=2, batch_size=8)
        a, ra = mtl_train(small_corpus, cfg)
        b, rb = mtl_train(small_corpus, cfg)
        assert a == b and ra == rb

    def test_no_contrastive_ignores_augmentation(self, small_corpus):
        base = MtlConfig.toy(epochs=2, batch_size=8, weights=LossWeights(1.0, 0.6, 0.0))
        a, _ = mtl_train(small_corpus, base)
        b, _ = mtl_train(small_corpus, replace(base, augment=AugmentConfig.identity()))
        assert a == b

    def test_light_preset_runs(self, small_corpus):
        cfg = MtlConfig.toy(epochs=1, batch_size=8, augment=AugmentConfig.light())
        _, rep = mtl_train(small_corpus, cfg)
        assert len(rep.losses) == 1 and rep.components[0][2] > 0

    def test_needs_both_classes(self, small_corpus):
        one = [t for t in small_corpus if t.mi_label == "real"]
        with pytest.raises(ParameterError):
            mtl_train(one, MtlConfig.toy(epochs=1))

    def test_corpus_arrays(self, small_corpus):
        X, y_mi, y_ch = corpus_arrays(small_corpus)
        assert X.shape == (16, 2, 160) and y_mi.sum() == 8 and y_ch.sum() == 8
        assert corpus_arrays((X, y_mi, y_ch))[0] is not None


class TestEvaluation:
    def test_f1(self):
        labels = [1, 1, 1, 1, 0, 0]
        preds = [1, 1, 1, 0, 1, 0]  # TP 3, FN 1, FP 1
        assert binary_f1(labels, preds) == 0.75
        assert binary_f1([1, 1], [1, 1]) is None
        assert binary_f1([0, 1], [1, 0]) == 0.0

    def test_evaluate_keys(self, small_corpus):
        cfg = MtlConfig.toy()
        m = evaluate(init_mtl(2, cfg), small_corpus, cfg)
        assert set(m) == {"acc_mi", "f1_mi", "acc_chaos", "f1_chaos"}
        assert 0 <= m["acc_mi"] <= 1

    def test_probe_separable(self):
        rng = np.random.default_rng(0)
        y = np.repeat([0, 1], 50)
        E = rng.normal(size=(100, 2)) * 0.3 + y[:, None] * 3.0
        assert linear_probe(E, y) == 1.0

    def test_probe_chance(self):
        accs = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            accs.append(linear_probe(rng.normal(size=(200, 4)), rng.permutation(np.repeat([0, 1], 100)), seed=seed))
        assert abs(np.mean(accs) - 0.5) < 0.1

    def test_probe_degenerate(self):
        with pytest.raises(DegenerateError):
            linear_probe(np.zeros((4, 2)), np.zeros(4))


def test_params_with_arrays_roundtrip():
    p = init_mtl(2, MtlConfig.toy())
    assert p.with_arrays(p.arrays) == p
    assert isinstance(p, MtlParams)
