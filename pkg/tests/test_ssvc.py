import numpy as np
import pytest

from semivc.features import FeatureSequence, InputError
from semivc.graph import RngState
from semivc.ssvc import (SsVcConfig, SsVcModel, TrainConfig, TrainingBatch,
                         TrainingDivergedError, convert, decode_x, decode_y,
                         encode, evaluate_model, load_checkpoint, loss_paired,
                         loss_unpaired, make_batches, save_checkpoint, train)
from semivc.stats import SpeakerStats

from helpers import FrozenRng

TINY = SsVcConfig(feature_dim=3, latent_dim=2, enc_widths=(4, 4),
                  dec_widths=(4, 4))
# FeatureSequence always carries 49 cepstra, so anything going through
# batching/training uses this config instead
TINY49 = SsVcConfig(feature_dim=49, latent_dim=2, enc_widths=(4, 4),
                    dec_widths=(4, 4))


def make_fs(mcep, f0=None):
    T = mcep.shape[0]
    return FeatureSequence(mcep=mcep, c0=np.zeros(T),
                           f0=f0 if f0 is not None else np.full(T, 120.0),
                           ap=np.zeros(T))


def identity_stats(d=49):
    return SpeakerStats(mcep_mean=np.zeros(d), mcep_std=np.ones(d),
                        logf0_mean=np.log(100.0), logf0_std=0.2)


def decoder_grad_norms(model):
    def norm(prefix):
        total = 0.0
        for name, t in model.params.items():
            if name.startswith(prefix) and t.grad is not None:
                total += float(np.sum(t.grad ** 2))
        return np.sqrt(total)
    return norm("decoder_x."), norm("decoder_y.")


class TestEncodeDecode:
    def test_shapes(self):
        model = SsVcModel(TINY, seed=0)
        x = np.random.default_rng(0).standard_normal((7, 3))
        mu, log_var = encode(model, x)
        assert mu.values.shape == (7, 2)
        assert log_var.values.shape == (7, 2)
        out = decode_y(model, mu.values)
        assert out.values.shape == (7, 3)

    def test_deterministic(self):
        model = SsVcModel(TINY, seed=1)
        x = np.random.default_rng(1).standard_normal((5, 3))
        a, _ = encode(model, x)
        b, _ = encode(model, x)
        np.testing.assert_array_equal(a.values, b.values)

    def test_decoders_have_independent_parameters(self):
        model = SsVcModel(TINY, seed=2)
        z = np.random.default_rng(2).standard_normal((4, 2))
        ox = decode_x(model, z).values
        oy = decode_y(model, z).values
        assert np.abs(ox - oy).max() > 1e-6
        # perturbing decoder_x never touches decoder_y output
        model.decoder_x["out.b"].values += 1.0
        np.testing.assert_array_equal(decode_y(model, z).values, oy)

    def test_shared_encoder_between_speakers(self):
        # the same encoder parameters process either speaker's features:
        # both paths run through model.encoder, so mutating it moves both
        model = SsVcModel(TINY, seed=3)
        x = np.random.default_rng(3).standard_normal((4, 3))
        mu0, _ = encode(model, x)
        model.encoder["head_mu.b"].values += 0.5
        mu1, _ = encode(model, x)
        np.testing.assert_allclose(mu1.values, mu0.values + 0.5)


class TestLossPaired:
    def test_hand_evaluated_oracle(self):
        """Recompute the two-sample paired bound from the public pieces."""
        model = SsVcModel(TINY, seed=4)
        gen = np.random.default_rng(4)
        x = gen.standard_normal((3, 3))
        y = gen.standard_normal((3, 3))
        rng = FrozenRng(0, [(3, 2)])
        got = loss_paired(model, x, y, rng).item()

        rng.reset()
        inv2s2 = 1.0 / (2.0 * model.config.sigma2)
        total = 0.0
        for feats in (x, y):
            mu, log_var = encode(model, feats)
            eps = rng.normal((3, 2))
            z = mu.values + np.exp(np.clip(log_var.values, -20, 6) / 2) * eps
            rx = np.sum((decode_x(model, z).values - x) ** 2)
            ry = np.sum((decode_y(model, z).values - y) ** 2)
            lv = np.clip(log_var.values, -20, 6)
            kl = 0.5 * np.sum(np.exp(lv) + mu.values ** 2 - 1.0 - lv)
            total += (rx + ry) * inv2s2 + kl
        assert abs(got - total / 2) <= 1e-10 * max(1.0, abs(total))

    def test_sigma2_scaling(self):
        # halving sigma^2 doubles the reconstruction part but not the KL
        gen = np.random.default_rng(5)
        x = gen.standard_normal((3, 3))
        y = gen.standard_normal((3, 3))
        m1 = SsVcModel(TINY, seed=5)
        cfg2 = SsVcConfig(feature_dim=3, latent_dim=2, enc_widths=(4, 4),
                          dec_widths=(4, 4), sigma2=TINY.sigma2 / 2)
        m2 = SsVcModel(cfg2, seed=5)
        l1 = loss_paired(m1, x, y, FrozenRng(3, [(3, 2)])).item()
        l2 = loss_paired(m2, x, y, FrozenRng(3, [(3, 2)])).item()
        # kl identical across the two models (same parameters, same input)
        mu, log_var = encode(m1, x)
        lv = np.clip(log_var.values, -20, 6)
        kl_x = 0.5 * np.sum(np.exp(lv) + mu.values ** 2 - 1.0 - lv)
        mu, log_var = encode(m1, y)
        lv = np.clip(log_var.values, -20, 6)
        kl_y = 0.5 * np.sum(np.exp(lv) + mu.values ** 2 - 1.0 - lv)
        kl = (kl_x + kl_y) / 2
        assert l2 - kl == pytest.approx(2 * (l1 - kl), rel=1e-9)

    def test_length_mismatch(self):
        model = SsVcModel(TINY, seed=6)
        with pytest.raises(InputError):
            loss_paired(model, np.zeros((3, 3)), np.zeros((4, 3)), RngState(0))

    def test_gradients_reach_everything(self):
        model = SsVcModel(TINY, seed=7)
        gen = np.random.default_rng(7)
        model.params.zero_grad()
        loss = loss_paired(model, gen.standard_normal((4, 3)),
                           gen.standard_normal((4, 3)), RngState(7))
        loss.backward()
        gx, gy = decoder_grad_norms(model)
        assert gx > 0 and gy > 0
        enc_norm = sum(float(np.sum(t.grad ** 2))
                       for n, t in model.params.items()
                       if n.startswith("encoder.") and t.grad is not None)
        assert enc_norm > 0


class TestLossUnpaired:
    def test_source_only_no_gradient_to_decoder_y(self):
        for seed in range(5):
            model = SsVcModel(TINY, seed=seed)
            x = np.random.default_rng(seed).standard_normal((4, 3))
            model.params.zero_grad()
            loss_unpaired(model, x, "source", RngState(seed)).backward()
            gx, gy = decoder_grad_norms(model)
            assert gx > 0
            assert gy == 0.0

    def test_target_only_no_gradient_to_decoder_x(self):
        for seed in range(5):
            model = SsVcModel(TINY, seed=seed + 50)
            y = np.random.default_rng(seed).standard_normal((4, 3))
            model.params.zero_grad()
            loss_unpaired(model, y, "target", RngState(seed)).backward()
            gx, gy = decoder_grad_norms(model)
            assert gy > 0
            assert gx == 0.0

    def test_matches_restricted_paired_structure(self):
        # hand recomputation of the single-sample unpaired bound
        model = SsVcModel(TINY, seed=8)
        x = np.random.default_rng(8).standard_normal((3, 3))
        rng = FrozenRng(1, [(3, 2)])
        got = loss_unpaired(model, x, "source", rng).item()
        rng.reset()
        mu, log_var = encode(model, x)
        eps = rng.normal((3, 2))
        z = mu.values + np.exp(np.clip(log_var.values, -20, 6) / 2) * eps
        recon = np.sum((decode_x(model, z).values - x) ** 2)
        lv = np.clip(log_var.values, -20, 6)
        kl = 0.5 * np.sum(np.exp(lv) + mu.values ** 2 - 1.0 - lv)
        want = recon / (2 * model.config.sigma2) + kl
        assert got == pytest.approx(want, rel=1e-12)

    def test_bad_which(self):
        model = SsVcModel(TINY, seed=9)
        with pytest.raises(InputError):
            loss_unpaired(model, np.zeros((2, 3)), "both", RngState(0))


class TestObjectiveAdditivity:
    def test_dataset_objective_is_plain_sum(self):
        """With frozen noise, summing per-batch losses equals evaluating the
        terms one at a time -- the dataset objective has no reweighting."""
        model = SsVcModel(TINY, seed=10)
        gen = np.random.default_rng(10)
        x1 = gen.standard_normal((3, 3))
        y1 = gen.standard_normal((3, 3))
        x2 = gen.standard_normal((3, 3))
        y2 = gen.standard_normal((3, 3))
        parts = [
            loss_paired(model, x1, y1, FrozenRng(0, [(3, 2)])).item(),
            loss_unpaired(model, x2, "source", FrozenRng(1, [(3, 2)])).item(),
            loss_unpaired(model, y2, "target", FrozenRng(2, [(3, 2)])).item(),
        ]
        total = (loss_paired(model, x1, y1, FrozenRng(0, [(3, 2)]))
                 + loss_unpaired(model, x2, "source", FrozenRng(1, [(3, 2)]))
                 + loss_unpaired(model, y2, "target", FrozenRng(2, [(3, 2)])))
        assert total.item() == pytest.approx(sum(parts), rel=1e-12)


class TestBatching:
    def test_kind_validation(self):
        fs = make_fs(np.zeros((3, 49)))
        with pytest.raises(InputError):
            TrainingBatch("paired", x=fs)
        with pytest.raises(InputError):
            TrainingBatch("source_only", x=fs, y=fs)
        with pytest.raises(InputError):
            TrainingBatch("mystery", x=fs)

    def test_chunking_long_utterance(self):
        fs = make_fs(np.random.default_rng(0).standard_normal((1500, 49)))
        batches = make_batches(source_only=[fs], max_frames=600)
        assert [b.x.n_frames for b in batches] == [600, 600, 300]
        np.testing.assert_array_equal(
            np.vstack([b.x.mcep for b in batches]), fs.mcep)

    def test_paired_chunks_stay_aligned(self):
        gen = np.random.default_rng(1)
        x = make_fs(gen.standard_normal((700, 49)))
        y = make_fs(gen.standard_normal((700, 49)))
        batches = make_batches(paired=[(x, y)], max_frames=600)
        for b in batches:
            assert b.x.n_frames == b.y.n_frames


class TestTrain:
    def _toy_batches(self, seed=0, n=4, T=6):
        gen = np.random.default_rng(seed)
        paired = [(make_fs(gen.standard_normal((T, 49))),
                   make_fs(gen.standard_normal((T, 49)))) for _ in range(n)]
        unpaired = [make_fs(gen.standard_normal((T, 49))) for _ in range(2)]
        return make_batches(paired=paired, source_only=unpaired[:1],
                            target_only=unpaired[1:])

    def test_loss_decreases(self):
        model = SsVcModel(TINY49, seed=11)
        batches = self._toy_batches(11)
        log = train(model, batches, TrainConfig(method="semi", epochs=15),
                    RngState(11))
        first = np.mean([r[2] for r in log[:len(batches)]])
        last = np.mean([r[2] for r in log[-len(batches):]])
        assert last < first

    def test_regression_loss_decreases(self):
        model = SsVcModel(TINY49, seed=12)
        batches = self._toy_batches(12)
        log = train(model, batches, TrainConfig(method="dblstm", epochs=15),
                    RngState(12))
        assert log[-1][2] < log[0][2]

    def test_vae_method_ignores_unpaired(self):
        batches = self._toy_batches(13)
        m1 = SsVcModel(TINY49, seed=13)
        train(m1, batches, TrainConfig(method="dblstm_vae", epochs=3),
              RngState(13))
        paired_only = [b for b in batches if b.kind == "paired"]
        m2 = SsVcModel(TINY49, seed=13)
        train(m2, paired_only, TrainConfig(method="dblstm_vae", epochs=3),
              RngState(13))
        for name, t in m1.params.items():
            np.testing.assert_array_equal(t.values, m2.params[name].values)

    def test_same_seed_identical_training(self):
        def run():
            model = SsVcModel(TINY49, seed=14)
            train(model, self._toy_batches(14),
                  TrainConfig(method="semi", epochs=3), RngState(14))
            return model.params.state_dict()
        s1, s2 = run(), run()
        for name in s1:
            np.testing.assert_array_equal(s1[name], s2[name])

    def test_divergence_abort(self):
        model = SsVcModel(TINY49, seed=15)
        model.params["encoder.head_mu.b"].values[:] = 1e200
        batches = self._toy_batches(15)
        with pytest.raises(TrainingDivergedError):
            train(model, batches, TrainConfig(method="semi", epochs=20),
                  RngState(15))

    def test_empty_batches_rejected(self):
        model = SsVcModel(TINY49, seed=16)
        with pytest.raises(InputError):
            train(model, [], TrainConfig(), RngState(0))

    def test_dblstm_without_paired_rejected(self):
        model = SsVcModel(TINY49, seed=17)
        only_unpaired = make_batches(
            source_only=[make_fs(np.zeros((3, 49)))])
        with pytest.raises(InputError):
            train(model, only_unpaired, TrainConfig(method="dblstm"),
                  RngState(0))

    def test_log_file_written(self, tmp_path):
        model = SsVcModel(TINY49, seed=18)
        path = tmp_path / "train.csv"
        train(model, self._toy_batches(18),
              TrainConfig(method="semi", epochs=1), RngState(18),
              log_path=path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "step,term_kind,loss,val_mcd"
        assert len(lines) > 1


class TestConvert:
    def _full_model(self, seed=20):
        cfg = SsVcConfig()  # 49-dim features
        return SsVcModel(cfg, seed=seed)

    def test_output_length_and_tracks(self):
        model = self._full_model()
        gen = np.random.default_rng(20)
        f0 = np.where(gen.random(30) < 0.7, 150.0, 0.0)
        x = make_fs(gen.standard_normal((30, 49)), f0=f0)
        src = identity_stats()
        tgt = SpeakerStats(np.zeros(49), np.ones(49), np.log(200.0), 0.3)
        out = convert(model, x, src, tgt)
        assert out.mcep_hat.shape == (30, 49)
        np.testing.assert_array_equal(out.c0, x.c0)
        np.testing.assert_array_equal(out.ap, x.ap)
        np.testing.assert_array_equal(out.f0_converted > 0, x.f0 > 0)

    def test_deterministic(self):
        model = self._full_model(21)
        x = make_fs(np.random.default_rng(21).standard_normal((12, 49)))
        s = identity_stats()
        a = convert(model, x, s, s).mcep_hat
        b = convert(model, x, s, s).mcep_hat
        np.testing.assert_array_equal(a, b)

    def test_chunked_matches_whole(self):
        # chunk boundary effects exist (bidirectional context resets), but
        # concatenated chunk lengths must cover the input exactly
        model = self._full_model(22)
        x = make_fs(np.random.default_rng(22).standard_normal((1300, 49)))
        s = identity_stats()
        out = convert(model, x, s, s)
        assert out.mcep_hat.shape[0] == 1300

    def test_identical_decoders_give_identity_like_symmetry(self):
        # with decoder_y forced equal to decoder_x, converting x->y equals
        # the model's x-reconstruction path
        model = SsVcModel(TINY, seed=23)
        for name in list(model.decoder_y.names()):
            model.decoder_y[name].values[:] = model.decoder_x[name].values
        z = np.random.default_rng(23).standard_normal((5, 2))
        np.testing.assert_array_equal(decode_x(model, z).values,
                                      decode_y(model, z).values)


class TestEvaluate:
    def test_perfect_model_scores_zero(self):
        # bypass the network: evaluate on pairs where conversion of x is
        # compared against itself via identical stats and an identity map is
        # impossible, so instead check evaluate_model is finite and positive
        model = SsVcModel(SsVcConfig(), seed=24)
        gen = np.random.default_rng(24)
        pairs = [(make_fs(gen.standard_normal((15, 49))),
                  make_fs(gen.standard_normal((12, 49))))]
        s = identity_stats()
        val = evaluate_model(model, pairs, s, s)
        assert np.isfinite(val) and val > 0

    def test_no_dtw_requires_equal_lengths(self):
        model = SsVcModel(SsVcConfig(), seed=25)
        gen = np.random.default_rng(25)
        pairs = [(make_fs(gen.standard_normal((10, 49))),
                  make_fs(gen.standard_normal((10, 49))))]
        s = identity_stats()
        val = evaluate_model(model, pairs, s, s, use_dtw=False)
        assert np.isfinite(val)


class TestCheckpoint:
    def test_round_trip_preserves_conversion(self, tmp_path):
        model = SsVcModel(SsVcConfig(), seed=26)
        s = identity_stats()
        path = tmp_path / "model.vckp"
        save_checkpoint(path, model, s, s)
        back, src, tgt = load_checkpoint(path)
        assert src is not None and tgt is not None
        x = make_fs(np.random.default_rng(26).standard_normal((8, 49)))
        a = convert(model, x, s, s).mcep_hat
        b = convert(back, x, src, tgt).mcep_hat
        # parameters pass through f32 storage
        assert np.abs(a - b).max() < 1e-3

    def test_seed_identical_checkpoints_byte_equal(self, tmp_path):
        def build(path):
            model = SsVcModel(TINY49, seed=27)
            batches = [TrainingBatch(
                "paired",
                x=make_fs(np.random.default_rng(27).standard_normal((5, 49))),
                y=make_fs(np.random.default_rng(28).standard_normal((5, 49))))]
            train(model, batches, TrainConfig(method="semi", epochs=2),
                  RngState(27))
            save_checkpoint(path, model)
        p1 = tmp_path / "a.vckp"
        p2 = tmp_path / "b.vckp"
        build(p1)
        build(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_stats_optional(self, tmp_path):
        model = SsVcModel(TINY, seed=28)
        path = tmp_path / "bare.vckp"
        save_checkpoint(path, model)
        _, src, tgt = load_checkpoint(path)
        assert src is None and tgt is None
