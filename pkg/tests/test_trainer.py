import numpy as np
import pytest

from hycone.losses import SimilarityMode, logit_matrix
from hycone.trainer import (
    AdamState,
    EncoderParams,
    TrainConfig,
    adamw_step,
    build_embedding_index,
    checkpoint_bytes,
    curve_csv,
    encoder_forward,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
)

TINY = dict(batch_size=8, steps=30, warmup=3, depth=2, branching=3,
            latent_dim=8, embed_dim=8, held_out_per_leaf=2)


class TestSchedule:
    def test_warmup_endpoints(self):
        cfg = TrainConfig(steps=1000, warmup=100, peak_lr=5e-4)
        assert lr_at(0, cfg) == 0.0
        assert lr_at(100, cfg) == cfg.peak_lr
        assert lr_at(50, cfg) == pytest.approx(cfg.peak_lr / 2)

    def test_cosine_reaches_zero(self):
        cfg = TrainConfig(steps=1000, warmup=100, peak_lr=5e-4)
        assert abs(lr_at(1000, cfg)) < 1e-12

    def test_monotone_decay_after_warmup(self):
        cfg = TrainConfig(steps=500, warmup=50)
        vals = [lr_at(s, cfg) for s in range(50, 501)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_range_validated(self):
        cfg = TrainConfig(steps=100, warmup=10)
        with pytest.raises(ValueError):
            lr_at(101, cfg)
        with pytest.raises(ValueError):
            TrainConfig(steps=100, warmup=100)


class TestAdamW:
    def test_one_step_closed_form(self):
        params = {"w": np.array(1.0)}
        grads = {"w": np.array(1.0)}
        state = AdamState.zeros(params)
        new, state = adamw_step(params, grads, state, lr=0.1, weight_decay=0.0)
        # bias-corrected m_hat = v_hat = 1
        assert float(new["w"]) == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
        assert state.step == 1

    def test_decoupled_decay_only(self):
        params = {"w": np.array([[2.0]])}   # 2-D: decays by default
        grads = {"w": np.array([[0.0]])}
        state = AdamState.zeros(params)
        new, _ = adamw_step(params, grads, state, lr=0.1, weight_decay=0.2)
        np.testing.assert_allclose(new["w"], [[2.0 * (1 - 0.02)]], atol=1e-15)

    def test_zero_grad_no_decay_unchanged(self):
        params = {"b": np.array([1.0, -1.0])}   # 1-D: no decay
        grads = {"b": np.zeros(2)}
        state = AdamState.zeros(params)
        new, _ = adamw_step(params, grads, state, lr=0.1, weight_decay=0.2)
        np.testing.assert_array_equal(new["b"], params["b"])

    def test_nonfinite_grad_rejected(self):
        params = {"w": np.array(1.0)}
        grads = {"w": np.array(np.nan)}
        with pytest.raises(ValueError, match="non-finite gradient"):
            adamw_step(params, grads, AdamState.zeros(params), lr=0.1)


class TestTraining:
    def test_bitwise_determinism(self):
        cfg = TrainConfig(seed=11, **TINY)
        a = train(cfg)
        b = train(cfg)
        assert checkpoint_bytes(a) == checkpoint_bytes(b)
        assert np.array_equal(a.curve, b.curve)
        assert np.array_equal(a.index.vectors, b.index.vectors)

    def test_seed_changes_result(self):
        a = train(TrainConfig(seed=1, **TINY))
        b = train(TrainConfig(seed=2, **TINY))
        assert checkpoint_bytes(a) != checkpoint_bytes(b)

    def test_loss_decreases(self):
        chk = train(TrainConfig(seed=11, **TINY))
        assert chk.curve[-1, 3] < chk.curve[0, 3]

    def test_no_entailment_flag(self):
        chk = train(TrainConfig(seed=11, no_entailment=True, **TINY))
        assert np.all(chk.curve[:, 2] == 0.0)

    def test_fixed_curvature_flag(self):
        cfg = TrainConfig(seed=11, fixed_curvature=True, **TINY)
        chk = train(cfg)
        assert float(chk.encoder.tensors["log_curv"]) == 0.0
        assert np.all(chk.curve[:, 6] == 1.0)

    def test_inner_product_logits_bound(self):
        cfg = TrainConfig(seed=11, inner_product_logits=True, **TINY)
        chk = train(cfg)
        # rebuild a batch of logits at the final parameters
        from hycone.hierarchy import PairSampler, generate_tree
        from hycone.losses import BatchEmbeddings, lift_batch

        tree = generate_tree(cfg.depth, cfg.branching, cfg.latent_dim, cfg.noise, cfg.seed)
        batch = PairSampler(tree, cfg.seed).next_batch(cfg.batch_size)
        enc = chk.encoder
        img = np.asarray(encoder_forward(enc.tensors, batch.image_latents, "img", cfg.hidden_dim))
        txt = np.asarray(encoder_forward(enc.tensors, batch.text_latents, "txt", cfg.hidden_dim))
        params = enc.loss_params()
        images, texts = lift_batch(BatchEmbeddings(images=img, texts=txt), params)
        logits = logit_matrix(images, texts, params, SimilarityMode.LORENTZ_INNER)
        bound = -(1.0 / params.curv().c) * params.inv_temp()
        assert np.all(logits <= bound + 1e-9)

    def test_sphere_space(self):
        chk = train(TrainConfig(seed=11, space="sphere", **TINY))
        assert chk.index.space == "sphere"
        assert np.all(chk.curve[:, 2] == 0.0)
        norms = np.linalg.norm(chk.index.vectors, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)

    def test_divergence_aborts_with_step(self):
        from hycone.trainer import DivergenceError

        cfg = TrainConfig(seed=11, peak_lr=1e305, **TINY)
        with pytest.raises(DivergenceError, match="step"):
            train(cfg)

    def test_scale_folding_preserves_embeddings(self):
        cfg = TrainConfig(seed=11, **TINY)
        chk = train(cfg)
        folded = chk.encoder.fold_scales()
        a = build_embedding_index(chk.encoder, cfg)
        b = build_embedding_index(folded, cfg)
        assert np.max(np.abs(a.vectors - b.vectors)) < 1e-10

    def test_hidden_layer_variant_trains(self):
        cfg = TrainConfig(seed=11, hidden_dim=12, batch_size=8, steps=300, warmup=10,
                          depth=2, branching=3, latent_dim=8, embed_dim=8,
                          held_out_per_leaf=2)
        chk = train(cfg)
        assert "img_w1" in chk.encoder.tensors
        assert chk.curve[-10:, 3].mean() < chk.curve[:10, 3].mean()


class TestEncoderInit:
    def test_expected_unit_norm_after_scale(self):
        cfg = TrainConfig(seed=0, **TINY)
        enc = EncoderParams.init(cfg)
        from hycone.hierarchy import PairSampler, generate_tree

        tree = generate_tree(cfg.depth, cfg.branching, cfg.latent_dim, cfg.noise, cfg.seed)
        batch = PairSampler(tree, cfg.seed).next_batch(8)
        rows = np.asarray(encoder_forward(enc.tensors, batch.image_latents, "img", 0))
        scaled = rows * np.exp(float(enc.tensors["log_scale_img"]))
        mean_norm = np.linalg.norm(scaled, axis=1).mean()
        assert 0.3 < mean_norm < 3.0


class TestCheckpointIO:
    def test_roundtrip(self, tmp_path):
        cfg = TrainConfig(seed=11, **TINY)
        chk = train(cfg)
        path = save_checkpoint(chk, tmp_path / "c.bin")
        loaded = load_checkpoint(path)
        assert loaded.config == cfg
        assert loaded.clamp_hits == chk.clamp_hits
        for k, v in chk.encoder.tensors.items():
            assert np.array_equal(loaded.encoder.tensors[k], v)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "c.bin"
        p.write_bytes(b"XXXX" + b"\0" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_curve_csv_header(self):
        chk = train(TrainConfig(seed=11, **TINY))
        text = curve_csv(chk.curve)
        assert text.splitlines()[0] == "step,contrastive,entailment,total,lr,tau,c"
        assert len(text.splitlines()) == 31
