import math

import numpy as np
import pytest

from kwloc import tensor as tn
from kwloc.corpus import CorpusConfig, synthesize
from kwloc.models import KeywordModel, ModelConfig, Vocabulary, model_to_bytes
from kwloc.supervision import (
    Adam,
    DivergenceError,
    TargetSource,
    TrainConfig,
    VisualNoiseConfig,
    bce_multilabel,
    bce_single,
    simulate_visual_tagger,
    train,
)
from kwloc.tensor import Tape, Tensor


@pytest.fixture(scope="module")
def small_corpus():
    return synthesize(CorpusConfig(vocab_size=20, num_keywords=5, num_groups=2, train=24, dev=8, test=8, seed=5))


def desk(variant, corpus, seed=0):
    return KeywordModel(ModelConfig.desk(variant, init_seed=seed, feature_dim=corpus.feature_dim), corpus.vocab)


class TestBCE:
    def test_half(self):
        assert abs(bce_single(0.5, 1.0) - math.log(2)) < 1e-12

    def test_perfect(self):
        p = 1 - 1e-7
        assert bce_single(p, p) < 1e-5

    def test_soft_target(self):
        expected = -(0.3 * math.log(0.8) + 0.7 * math.log(0.2))
        assert abs(bce_single(0.8, 0.3) - expected) < 1e-12

    def test_clamped(self):
        assert math.isfinite(bce_single(0.0, 1.0))
        assert abs(bce_single(0.0, 1.0) - (-math.log(1e-7))) < 1e-6

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            bce_single(0.5, -0.1)

    def test_multilabel_half(self):
        assert abs(bce_multilabel(np.full(7, 0.5), np.array([0, 1, 0, 1, 1, 0, 0.3])) - 7 * math.log(2)) < 1e-12

    def test_multilabel_perfect(self):
        eps = 1e-7
        y = np.array([eps, 1 - eps, 1 - eps])
        assert bce_multilabel(y, y) < 1e-5

    def test_multilabel_elementwise(self):
        y_hat, y = np.array([0.9, 0.2]), np.array([1.0, 0.4])
        hand = -math.log(0.9) - (0.4 * math.log(0.2) + 0.6 * math.log(0.8))
        assert abs(bce_multilabel(y_hat, y) - hand) < 1e-12
        assert abs(float(bce_multilabel(Tensor(y_hat), y).data) - hand) < 1e-12

    def test_multilabel_length_mismatch(self):
        with pytest.raises(ValueError):
            bce_multilabel(np.full(3, 0.5), np.zeros(2))

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            assert bce_single(rng.uniform(), rng.uniform()) >= 0

    def test_logit_gradient_identity(self):
        rng = np.random.default_rng(1)
        z = Tensor(rng.normal(size=6), requires_grad=True, name="z")
        y = rng.uniform(size=6)
        with Tape() as tape:
            p = tn.sigmoid(z)
            loss = bce_multilabel(p, y)
        g = tn.backward(loss, tape)[z]
        assert np.max(np.abs(g - (p.data - y))) < 1e-5


class TestVisualTagger:
    def test_noiseless(self):
        y = np.array([1, 0, 0, 1], np.uint8)
        out = simulate_visual_tagger(y, VisualNoiseConfig(noiseless=True), np.random.default_rng(0))
        assert np.array_equal(out, y.astype(np.float32))

    def test_absent_scores_low(self):
        # P(Beta(1, 12) < 0.5) = 1 - 0.5**12
        assert 1 - 0.5**12 >= 0.99
        out = simulate_visual_tagger(np.zeros((20000,), np.uint8), VisualNoiseConfig(), np.random.default_rng(1))
        assert np.mean(out < 0.5) >= 0.99

    def test_present_mean(self):
        out = simulate_visual_tagger(np.ones(10000, np.uint8), VisualNoiseConfig(), np.random.default_rng(2))
        assert abs(out.mean() - 0.8) < 0.02

    def test_sibling_confusion(self):
        vocab = Vocabulary(["swim", "dog"], words=["swim", "dog", "backstroke"], groups=[["swim", "backstroke"]])
        rng = np.random.default_rng(3)
        draws = np.array(
            [simulate_visual_tagger(np.array([0, 0]), VisualNoiseConfig(), rng, vocab, {"backstroke"}) for _ in range(4000)]
        )
        assert abs(draws[:, 0].mean() - 0.5) < 0.02  # Beta(3, 3)
        assert abs(draws[:, 1].mean() - 1 / 13) < 0.01  # Beta(1, 12)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            VisualNoiseConfig(a_hi=0)


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True, name="p")
        opt = Adam(lr=0.1)
        opt.step({"p": p}, {"p": np.array([0.5, -3.0, 0.0])})
        # bias-corrected m / sqrt(v) = sign(g) on the first step
        assert np.allclose(p.data, [0.9, -1.9, 3.0], atol=1e-6)

    def test_matches_reference_recursion(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=5)
        p = Tensor(x.copy(), requires_grad=True, name="p")
        opt = Adam(lr=0.01)
        m = v = np.zeros(5)
        ref = x.copy()
        for t in range(1, 6):
            g = rng.normal(size=5)
            opt.step({"p": p}, {"p": g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert np.allclose(p.data, ref, atol=1e-12)


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [dict(lr=0), dict(epochs=0), dict(batch_size=0), dict(keyword_sampling="x"), dict(theta=2)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestTrain:
    def test_zero_batches_leaves_parameters(self, small_corpus):
        m = desk("psc", small_corpus)
        before = model_to_bytes(m)
        train(m, small_corpus.train, (), "bow", TrainConfig(epochs=1, max_batches=0))
        assert model_to_bytes(m) == before

    @pytest.mark.parametrize("variant", ["psc", "cnn-attend"])
    def test_deterministic(self, small_corpus, variant):
        cfg = TrainConfig(lr=1e-3, epochs=2, batch_size=8, seed=3)
        a, b = desk(variant, small_corpus, 1), desk(variant, small_corpus, 1)
        ra = train(a, small_corpus.train, small_corpus.dev, "visual", cfg)
        rb = train(b, small_corpus.train, small_corpus.dev, "visual", cfg)
        assert model_to_bytes(a) == model_to_bytes(b)
        assert [r["train_loss"] for r in ra.log] == [r["train_loss"] for r in rb.log]

    def test_visual_reads_only_visual_targets(self, small_corpus, monkeypatch):
        reads = []
        real = TargetSource.__call__

        def spy(self, utt):
            reads.append(self.kind)
            return real(self, utt)

        monkeypatch.setattr(TargetSource, "__call__", spy)
        res = train(desk("psc", small_corpus), small_corpus.train, (), "visual", TrainConfig(epochs=1, batch_size=8))
        assert set(reads) == {"visual"} and len(reads) == len(small_corpus.train)
        assert res.target_reads == {"visual": len(small_corpus.train)}

    def test_visual_with_hard_targets_equals_bow(self, small_corpus):
        import copy

        hard = copy.deepcopy(small_corpus.train)
        for u in hard:
            u.y_vis = u.y_bow.astype(np.float32)
        cfg = TrainConfig(lr=1e-3, epochs=1, batch_size=8)
        a, b = desk("cnn-pool", small_corpus), desk("cnn-pool", small_corpus)
        train(a, small_corpus.train, (), "bow", cfg)
        train(b, hard, (), "visual", cfg)
        assert model_to_bytes(a) == model_to_bytes(b)

    def test_loss_decreases_early(self, small_corpus):
        # first three epochs at the default learning rate, ten seeds
        wins = 0
        for seed in range(10):
            res = train(
                desk("psc", small_corpus, seed),
                small_corpus.train,
                (),
                "bow",
                TrainConfig(lr=1e-4, epochs=3, batch_size=8, seed=seed),
            )
            losses = [r["train_loss"] for r in res.log]
            wins += losses[0] > losses[1] > losses[2]
        assert wins >= 9

    def test_best_checkpoint_restored(self, small_corpus):
        m = desk("psc", small_corpus)
        res = train(m, small_corpus.train, small_corpus.dev, "bow", TrainConfig(lr=3e-3, epochs=4, batch_size=8))
        f1s = [r["dev_detection_F1"] for r in res.log]
        assert res.best_epoch == 1 + int(np.argmax(f1s))
        from kwloc.evaluate import detection_metrics

        assert abs(detection_metrics(m, small_corpus.dev, res.theta).f1 - max(f1s)) < 1e-12

    def test_log_file(self, small_corpus, tmp_path):
        path = tmp_path / "log.csv"
        train(desk("psc", small_corpus), small_corpus.train, small_corpus.dev, "bow", TrainConfig(epochs=2), log_path=path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[:3] == ["epoch", "train_loss", "dev_detection_P"]
        assert lines[0].endswith("wall_seconds") and len(lines) == 3

    def test_divergence_detected(self, small_corpus):
        m = desk("psc", small_corpus)
        m.params["conv0.w"].data[:] = np.nan
        with pytest.raises(DivergenceError):
            train(m, small_corpus.train, (), "bow", TrainConfig(epochs=1))

    def test_sampled_keywords_run(self, small_corpus):
        m = desk("cnn-attend", small_corpus)
        res = train(m, small_corpus.train, (), "bow", TrainConfig(epochs=1, keyword_sampling="sampled", batch_size=8))
        assert np.isfinite(res.log[0]["train_loss"])

    def test_empty_corpus(self, small_corpus):
        with pytest.raises(ValueError):
            train(desk("psc", small_corpus), [], (), "bow")
