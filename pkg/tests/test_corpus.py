import hashlib
import json

import numpy as np
import pytest

from kwloc import corpus as cp
from kwloc.corpus import Corpus, CorpusConfig, CorpusFormatError, Span, Utterance
from kwloc.models import Vocabulary


def small(**kw):
    base = dict(train=30, dev=10, test=10)
    base.update(kw)
    return CorpusConfig(**base)


def tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def corpus():
    return cp.synthesize(small())


class TestSynthesis:
    def test_default_sizes(self):
        cfg = CorpusConfig()
        assert (cfg.train, cfg.dev, cfg.test) == (2000, 400, 400)
        assert (cfg.vocab_size, cfg.num_keywords, cfg.feature_dim) == (100, 20, 13)

    def test_spans_tile_utterance(self, corpus):
        for u in corpus.train + corpus.dev + corpus.test:
            assert u.spans[0].start == 0 and u.spans[-1].end == u.frames - 1
            for a, b in zip(u.spans, u.spans[1:]):
                assert b.start == a.end + 1
            assert sum(len(s) for s in u.spans) == u.frames
            assert 20 <= u.frames <= 150
            assert 4 <= len(u.spans) <= 10

    def test_bow_matches_spans(self, corpus):
        for u in corpus.train:
            present = {s.word for s in u.spans}
            for w, kw in enumerate(corpus.vocab.keywords):
                assert u.y_bow[w] == (kw in present)

    def test_noiseless_copies_prototypes(self):
        cfg = small(noise=0.0)
        c = cp.synthesize(cfg)
        protos = cp.make_prototypes(cfg, c.vocab)
        for u in c.train:
            for s in u.spans:
                assert np.array_equal(u.features[s.start : s.end + 1], protos[s.word].pattern)
            assert cp.nearest_prototype_decode(u.features, u.spans, protos) == [s.word for s in u.spans]

    def test_same_seed_identical(self, tmp_path):
        a, b = cp.synthesize(small(seed=4)), cp.synthesize(small(seed=4))
        cp.write_corpus(a, tmp_path / "a")
        cp.write_corpus(b, tmp_path / "b")
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")

    def test_different_seed_differs(self):
        a, b = cp.synthesize(small(seed=1)), cp.synthesize(small(seed=2))
        assert not np.array_equal(a.train[0].features, b.train[0].features)

    def test_utterance_independent_of_split_size(self):
        a = cp.synthesize(small(train=5))
        b = cp.synthesize(small(train=30))
        assert a.train[4] == b.train[4]
        assert a.dev[0] == b.dev[0]

    def test_semantic_groups(self, corpus):
        groups = corpus.vocab.groups
        assert len(groups) == 6
        for g in groups:
            assert 2 <= len(g) <= 3
            assert g[0] in corpus.vocab.keywords
            assert all(w not in corpus.vocab.keywords for w in g[1:])

    def test_visual_targets_separate_classes(self):
        c = cp.synthesize(small(train=400, dev=0, test=0))
        Y = np.stack([u.y_bow for u in c.train]).astype(bool)
        V = np.stack([u.y_vis for u in c.train])
        for w in range(Y.shape[1]):
            if Y[:, w].any() and (~Y[:, w]).any():
                assert V[Y[:, w], w].mean() - V[~Y[:, w], w].mean() >= 0.2
        assert np.all((V >= 0) & (V <= 1))

    @pytest.mark.parametrize("kw", [dict(num_keywords=200), dict(noise=-1.0), dict(min_words=5, max_words=4)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            CorpusConfig(**kw)


class TestSpans:
    def _utt(self, words):
        spans, t = [], 0
        for w, d in words:
            spans.append(Span(w, t, t + d - 1))
            t += d
        vocab = Vocabulary(["a", "b"], words=["a", "b", "c"])
        return Utterance("u", np.zeros((t, 2), np.float32), spans, cp.bow_vector(spans, vocab), np.zeros(2)), vocab

    def test_absent(self):
        u, v = self._utt([("a", 3), ("c", 2)])
        assert cp.ground_truth_spans(u, 1, v) == []

    def test_two_occurrences(self):
        u, v = self._utt([("a", 3), ("c", 2), ("a", 4)])
        assert cp.ground_truth_spans(u, 0, v) == [(0, 2), (5, 8)]

    def test_linear_scan_oracle(self, corpus):
        for u in corpus.test:
            for w, kw in enumerate(corpus.vocab.keywords):
                frames = [t for t in range(u.frames) if any(s.word == kw and s.start <= t <= s.end for s in u.spans)]
                covered = [t for a, b in cp.ground_truth_spans(u, w, corpus.vocab) for t in range(a, b + 1)]
                assert covered == frames


class TestIO:
    def test_round_trip(self, corpus, tmp_path):
        cp.write_corpus(corpus, tmp_path / "c")
        back = cp.read_corpus(tmp_path / "c")
        assert back.vocab == corpus.vocab and back.config == corpus.config
        for split in cp.SPLITS:
            for a, b in zip(corpus.split(split), back.split(split)):
                assert a == b
                assert a.features.tobytes() == b.features.tobytes()
                assert a.y_vis.tobytes() == b.y_vis.tobytes()
        cp.write_corpus(back, tmp_path / "d")
        assert tree_hash(tmp_path / "c") == tree_hash(tmp_path / "d")

    def test_hand_built(self, tmp_path):
        vocab = Vocabulary(["x"], words=["x", "y"], groups=[["x", "y"]])
        feats = np.arange(12, dtype=np.float32).reshape(6, 2)
        u = Utterance("only", feats, [Span("y", 0, 1), Span("x", 2, 5)], np.array([1], np.uint8), np.array([0.75], np.float32))
        cp.write_corpus(Corpus(vocab, train=[u]), tmp_path)
        (back,) = cp.read_split(tmp_path, "train")
        assert back.id == "only" and back.spans == u.spans
        assert back.y_bow.tolist() == [1] and back.y_vis.tolist() == [0.75]
        assert np.array_equal(back.features, feats)
        line = json.loads((tmp_path / "train" / "manifest.jsonl").read_text())
        assert line == {
            "id": "only",
            "frames": 6,
            "spans": [{"word": "y", "start": 0, "end": 1}, {"word": "x", "start": 2, "end": 5}],
            "bow": [0],
            "vis": [0.75],
        }

    def test_feature_layout(self, tmp_path):
        path = tmp_path / "f.kwsf"
        cp.write_features(path, np.array([[1.0, 2.0]], np.float32))
        raw = path.read_bytes()
        assert raw[:4] == b"KWSF"
        assert raw[4:14] == (1).to_bytes(2, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert np.frombuffer(raw[14:], "<f4").tolist() == [1.0, 2.0]

    def test_missing_feature_file_names_utterance(self, corpus, tmp_path):
        cp.write_corpus(corpus, tmp_path)
        victim = corpus.dev[3].id
        (tmp_path / "dev" / "features" / f"{victim}.kwsf").unlink()
        with pytest.raises(CorpusFormatError, match=victim):
            cp.read_corpus(tmp_path)

    @pytest.mark.parametrize(
        "damage",
        [
            lambda b: b"NOPE" + b[4:],
            lambda b: b[:4] + (7).to_bytes(2, "little") + b[6:],
            lambda b: b[:-4],
        ],
    )
    def test_bad_feature_file(self, damage, tmp_path):
        path = tmp_path / "f.kwsf"
        cp.write_features(path, np.ones((3, 2), np.float32))
        path.write_bytes(damage(path.read_bytes()))
        with pytest.raises(CorpusFormatError):
            cp.read_features(path)

    def test_span_outside_utterance(self, corpus, tmp_path):
        cp.write_corpus(corpus, tmp_path)
        man = tmp_path / "test" / "manifest.jsonl"
        lines = man.read_text().splitlines()
        obj = json.loads(lines[0])
        obj["spans"][-1]["end"] = obj["frames"] + 3
        lines[0] = json.dumps(obj)
        man.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusFormatError, match="outside"):
            cp.read_corpus(tmp_path)

    def test_frame_count_mismatch(self, corpus, tmp_path):
        cp.write_corpus(corpus, tmp_path)
        man = tmp_path / "train" / "manifest.jsonl"
        lines = man.read_text().splitlines()
        obj = json.loads(lines[1])
        obj["frames"] += 1
        lines[1] = json.dumps(obj)
        man.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusFormatError, match=obj["id"]):
            cp.read_corpus(tmp_path)

    def test_find(self, corpus):
        assert corpus.find("dev-00002") is corpus.dev[2]
        with pytest.raises(KeyError):
            corpus.find("dev-99999")
