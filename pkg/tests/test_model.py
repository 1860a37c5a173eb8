import math

import numpy as np
import pytest

from pulsestream.errors import FormatError, InvalidArgument, VersionMismatch
from pulsestream.model import (AdamConfig, AdamState, ModelConfig, ModelParams,
                               TrainConfig, adam_step, backward, forward,
                               forward_batch, init_model, load_params, loss,
                               predict, save_params, train)
from pulsestream.textprep import (CleanConfig, Label, TokenSeq, build_vocabulary,
                                  one_hot, vectorize)

TINY = ModelConfig(vocab_len=7, embed_dim=4, lstm_hidden=3, dense_hidden=3,
                   max_len=5, seed=11)


def seq_of(ids, max_len=5):
    arr = np.zeros(max_len, dtype=np.int64)
    arr[:len(ids)] = ids
    return TokenSeq(ids=arr, true_len=len(ids))


def naive_forward(params: ModelParams, token_ids):
    """Independent scalar re-implementation of the whole network."""
    H = params.config.lstm_hidden
    h = [0.0] * H
    c = [0.0] * H
    sig = lambda x: 1.0 / (1.0 + math.exp(-x))
    for tok in token_ids:
        x = [float(v) for v in params.E[tok]]
        nh, nc = [0.0] * H, [0.0] * H
        for j in range(H):
            ai = params.b_i[j] + sum(x[k] * params.W_i[k][j] for k in range(len(x))) \
                + sum(h[k] * params.U_i[k][j] for k in range(H))
            af = params.b_f[j] + sum(x[k] * params.W_f[k][j] for k in range(len(x))) \
                + sum(h[k] * params.U_f[k][j] for k in range(H))
            ag = params.b_g[j] + sum(x[k] * params.W_g[k][j] for k in range(len(x))) \
                + sum(h[k] * params.U_g[k][j] for k in range(H))
            ao = params.b_o[j] + sum(x[k] * params.W_o[k][j] for k in range(len(x))) \
                + sum(h[k] * params.U_o[k][j] for k in range(H))
            nc[j] = sig(af) * c[j] + sig(ai) * math.tanh(ag)
            nh[j] = sig(ao) * math.tanh(nc[j])
        h, c = nh, nc
    z1 = [params.b1[j] + sum(h[k] * params.W1[k][j] for k in range(H))
          for j in range(params.config.dense_hidden)]
    a1 = [max(v, 0.0) for v in z1]
    z2 = [params.b2[j] + sum(a1[k] * params.W2[k][j] for k in range(len(a1)))
          for j in range(2)]
    m = max(z2)
    e = [math.exp(v - m) for v in z2]
    s = sum(e)
    return [v / s for v in e]


class TestInit:
    def test_deterministic(self):
        a, b = init_model(TINY), init_model(TINY)
        for name, t in a.tensors().items():
            assert (t == b.tensors()[name]).all(), name

    def test_forget_bias_one(self):
        p = init_model(TINY)
        assert (p.b_f == 1.0).all()
        assert (p.b_i == 0.0).all() and (p.b_g == 0.0).all() and (p.b_o == 0.0).all()

    def test_different_seeds_differ(self):
        a = init_model(TINY)
        b = init_model(ModelConfig(**{**TINY.__dict__, "seed": 12}))
        assert not (a.E == b.E).all()

    def test_glorot_bounds(self):
        p = init_model(TINY)
        s = math.sqrt(6.0 / (4 + 3))
        assert abs(p.W_i).max() <= s

    def test_zero_dims_rejected(self):
        with pytest.raises(InvalidArgument):
            ModelConfig(vocab_len=7, embed_dim=0)


class TestForward:
    def test_softmax_normalized(self):
        p = init_model(TINY)
        probs = forward(p, seq_of([1, 2, 3]))
        assert abs(probs.sum() - 1.0) < 1e-9
        assert (probs > 0).all() and (probs < 1).all()

    def test_empty_sequence_uses_zero_state(self):
        p = init_model(TINY)
        probs = forward(p, seq_of([]))
        assert probs.tolist() == naive_forward(p, []) == pytest.approx(probs.tolist())

    def test_matches_naive_oracle(self):
        p = init_model(TINY)
        for ids in ([2, 5], [1], [0, 3, 6, 4, 2]):
            got = forward(p, seq_of(ids))
            want = naive_forward(p, ids)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_padding_never_influences_result(self):
        p = init_model(TINY)
        a = forward(p, TokenSeq(ids=np.array([2, 5, 0, 0, 0]), true_len=2))
        b = forward(p, TokenSeq(ids=np.array([2, 5, 6, 6, 6]), true_len=2))
        np.testing.assert_array_equal(a, b)

    def test_id_out_of_range(self):
        p = init_model(TINY)
        with pytest.raises(InvalidArgument):
            forward(p, seq_of([7]))


class TestLoss:
    def test_analytic_ln2(self):
        assert loss(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(math.log(2))

    def test_floor(self):
        assert loss(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(0.0)
        assert np.isfinite(loss(np.array([0.0, 1.0]), np.array([1.0, 0.0])))

    def test_batch_mean_linearity(self):
        probs = np.array([[0.7, 0.3], [0.2, 0.8]])
        tgts = np.array([[1.0, 0.0], [0.0, 1.0]])
        singles = [loss(probs[i], tgts[i]) for i in range(2)]
        assert loss(probs, tgts) == pytest.approx(sum(singles) / 2)


def finite_diff_grads(params, batch, eps=1e-4):
    """Central finite differences of the mean batch loss over every parameter."""
    ids = np.stack([s.ids for s, _ in batch])
    lens = np.array([s.true_len for s, _ in batch], dtype=np.int64)
    targets = np.stack([t for _, t in batch])

    def batch_loss():
        probs, _ = forward_batch(params, ids, lens)
        return loss(probs, targets)

    grads = {}
    for name, tensor in params.tensors().items():
        g = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + eps
            up = batch_loss()
            tensor[idx] = orig - eps
            down = batch_loss()
            tensor[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestBackward:
    def batch_for_seed(self, seed):
        rng = np.random.default_rng(seed)
        ids1 = rng.integers(0, 7, size=rng.integers(1, 6))
        ids2 = rng.integers(0, 7, size=rng.integers(1, 6))
        lab1, lab2 = Label(int(rng.integers(2))), Label(int(rng.integers(2)))
        return [(seq_of(list(ids1)), one_hot(lab1)), (seq_of(list(ids2)), one_hot(lab2))]

    def test_gradients_match_finite_differences(self):
        cfg = ModelConfig(**{**TINY.__dict__, "seed": 5})
        params = init_model(cfg)
        batch = self.batch_for_seed(100)
        analytic = backward(params, batch)
        numeric = finite_diff_grads(params, batch)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_duplicate_sample_mean_invariance(self):
        params = init_model(TINY)
        one = [(seq_of([2, 4]), one_hot(Label.POSITIVE))]
        two = one * 2
        g1, g2 = backward(params, one), backward(params, two)
        for name in g1:
            np.testing.assert_allclose(g1[name], g2[name], atol=1e-15)

    def test_pad_only_sample_zero_lstm_grads(self):
        params = init_model(TINY)
        grads = backward(params, [(seq_of([]), one_hot(Label.NEGATIVE))])
        for g in "ifgo":
            assert (grads[f"W_{g}"] == 0).all()
            assert (grads[f"U_{g}"] == 0).all()
        assert (grads["E"] == 0).all()

    def test_untouched_embedding_rows_zero(self):
        params = init_model(TINY)
        grads = backward(params, [(seq_of([2, 3]), one_hot(Label.POSITIVE))])
        touched = {2, 3}
        for row in range(7):
            if row not in touched:
                assert (grads["E"][row] == 0).all()

    def test_empty_batch(self):
        with pytest.raises(InvalidArgument):
            backward(init_model(TINY), [])


class TestAdam:
    def test_one_step_decreases_loss(self):
        wins = 0
        for seed in range(20):
            cfg = ModelConfig(**{**TINY.__dict__, "seed": seed})
            params = init_model(cfg)
            batch = [(seq_of([1, 2, 3]), one_hot(Label.POSITIVE)),
                     (seq_of([4, 5]), one_hot(Label.NEGATIVE))]
            ids = np.stack([s.ids for s, _ in batch])
            lens = np.array([s.true_len for s, _ in batch], dtype=np.int64)
            tgts = np.stack([t for _, t in batch])
            probs, _ = forward_batch(params, ids, lens)
            before = loss(probs, tgts)
            grads = backward(params, batch)
            adam_step(params, grads, AdamState(params), AdamConfig(learning_rate=1e-3))
            probs, _ = forward_batch(params, ids, lens)
            after = loss(probs, tgts)
            if after < before:
                wins += 1
        assert wins >= 19


def toy_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    pos_words = ["hebat", "bagus", "dukung", "sukses"]
    neg_words = ["buruk", "tolak", "gagal", "kecewa"]
    filler = ["rakyat", "kebijakan", "daerah", "pemimpin", "kampanye"]
    data = []
    for i in range(n):
        lab = Label.POSITIVE if i % 2 == 0 else Label.NEGATIVE
        words = list(rng.choice(filler, size=3))
        words.insert(int(rng.integers(0, 4)),
                     str(rng.choice(pos_words if lab is Label.POSITIVE else neg_words)))
        data.append((" ".join(words), lab))
    return data


EMPTY_CLEAN = CleanConfig(stopword_list=frozenset())


class TestTrain:
    def test_learns_separable_corpus(self):
        data = toy_dataset(n=60)
        vocab = build_vocabulary([t for t, _ in data], max_size=50, max_len=8)
        cfg = ModelConfig(vocab_len=len(vocab), embed_dim=12, lstm_hidden=12,
                          dense_hidden=8, max_len=8, seed=1)
        params, history = train(data, cfg, TrainConfig(epochs=8, batch_size=8,
                                                       learning_rate=1e-2,
                                                       shuffle_seed=1),
                                vocab, clean_config=EMPTY_CLEAN)
        assert len(history.epochs) == 8
        assert history.epochs[-1].val_acc >= 0.9

    def test_single_class_rejected(self):
        data = [("a b", Label.POSITIVE)] * 12
        vocab = build_vocabulary(["a b"], max_size=10)
        cfg = ModelConfig(vocab_len=len(vocab), embed_dim=4, lstm_hidden=3,
                          dense_hidden=3, max_len=4)
        with pytest.raises(InvalidArgument):
            train(data, cfg, TrainConfig(), vocab)

    def test_too_small_rejected(self):
        vocab = build_vocabulary(["a"], max_size=10)
        cfg = ModelConfig(vocab_len=len(vocab), embed_dim=4, lstm_hidden=3,
                          dense_hidden=3, max_len=4)
        with pytest.raises(InvalidArgument):
            train([("a", Label.POSITIVE), ("a", Label.NEGATIVE)], cfg, TrainConfig(), vocab)

    def test_epochs_zero_rejected(self):
        with pytest.raises(InvalidArgument):
            TrainConfig(epochs=0)

    def test_deterministic_history(self):
        data = toy_dataset(n=30)
        vocab = build_vocabulary([t for t, _ in data], max_size=40, max_len=6)
        cfg = ModelConfig(vocab_len=len(vocab), embed_dim=6, lstm_hidden=5,
                          dense_hidden=4, max_len=6, seed=3)
        tc = TrainConfig(epochs=2, batch_size=8, shuffle_seed=9)
        p1, h1 = train(data, cfg, tc, vocab, clean_config=EMPTY_CLEAN)
        p2, h2 = train(data, cfg, tc, vocab, clean_config=EMPTY_CLEAN)
        assert h1.to_dict() == h2.to_dict()
        for name, t in p1.tensors().items():
            assert (t == p2.tensors()[name]).all(), name


class TestPredict:
    def trained(self):
        data = toy_dataset(n=60)
        vocab = build_vocabulary([t for t, _ in data], max_size=50, max_len=8)
        cfg = ModelConfig(vocab_len=len(vocab), embed_dim=12, lstm_hidden=12,
                          dense_hidden=8, max_len=8, seed=1)
        params, _ = train(data, cfg,
                          TrainConfig(epochs=8, batch_size=8, learning_rate=1e-2,
                                      shuffle_seed=1),
                          vocab, clean_config=EMPTY_CLEAN)
        return params, vocab

    def test_planted_phrase(self):
        params, vocab = self.trained()
        pred = predict(params, vocab, "rakyat dukung kampanye",
                       clean_config=EMPTY_CLEAN)
        assert pred.label is Label.POSITIVE
        assert 0.5 < pred.confidence <= 1.0

    def test_invariant_to_precleaning(self):
        params, vocab = self.trained()
        from pulsestream.textprep import clean_text
        raw = "Rakyat TOLAK kampanye! https://x.co/y"
        a = predict(params, vocab, raw, clean_config=EMPTY_CLEAN)
        b = predict(params, vocab, clean_text(raw, EMPTY_CLEAN),
                    clean_config=EMPTY_CLEAN)
        assert a == b

    def test_vocab_mismatch_guard(self):
        params, _ = self.trained()
        other = build_vocabulary(["x y z"], max_size=5)
        with pytest.raises(VersionMismatch):
            predict(params, other, "x")


class TestSerialization:
    def test_roundtrip_bit_identical(self, tmp_path):
        params = init_model(TINY, version="m7")
        path = tmp_path / "model.pstm"
        save_params(params, path)
        loaded = load_params(path)
        assert loaded.version == "m7"
        assert loaded.config == TINY
        for name, t in params.tensors().items():
            assert (t == loaded.tensors()[name]).all(), name

    def test_truncated_file(self, tmp_path):
        params = init_model(TINY)
        path = tmp_path / "model.pstm"
        save_params(params, path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(FormatError):
            load_params(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.pstm"
        path.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(FormatError):
            load_params(path)
