import numpy as np
import pytest

from bytelab import bytemodel as bm
from bytelab import fileforge as ff
from bytelab import ndgrad as ng
from bytelab.fileforge import derive_rng
from bytelab.windowing import AesConfig, WindowSpec, extract

TINY = bm.ArchDescriptor(embed_dim=8, conv_layers=((8, 16),), dense_layers=(32,))


@pytest.fixture(scope="module")
def small_corpus():
    labels = bm.DEFAULT_LABELS
    train = [(ff.generate(lab, 400 + i, 3000).data, lab) for lab in labels for i in range(20)]
    test = [(ff.generate(lab, 880 + i, 3200).data, lab) for lab in labels for i in range(4)]
    return bm.make_dataset(train, WindowSpec()), bm.make_dataset(test, WindowSpec()), train, test


def test_arch_bounds():
    with pytest.raises(ValueError):
        bm.ArchDescriptor(conv_layers=((7, 16),))
    with pytest.raises(ValueError):
        bm.ArchDescriptor(conv_layers=((8, 16),) * 5)
    with pytest.raises(ValueError):
        bm.ArchDescriptor(dense_layers=())
    with pytest.raises(ValueError):
        bm.ArchDescriptor(pool="sum")
    a = bm.ArchDescriptor()
    assert a.canonical_json() == bm.ArchDescriptor.from_dict(a.to_dict()).canonical_json()


def test_build_determinism_and_seed_sensitivity():
    a = bm.build(TINY, seed=1)
    b = bm.build(TINY, seed=1)
    c = bm.build(TINY, seed=2)
    for name in a.weights:
        assert np.array_equal(a.weights[name], b.weights[name])
    assert any(not np.array_equal(a.weights[n], c.weights[n]) for n in a.weights)


def test_probabilities_sum_to_one():
    model = bm.build(TINY, seed=3)
    data = ff.generate("png", 5, 4000).data
    label, probs = bm.predict_file(model, data)
    assert label in model.labels
    assert probs.min() >= 0
    assert abs(probs.sum() - 1.0) < 1e-5


def test_uniform_degenerate_model():
    model = bm.build(TINY, seed=4)
    for name in model.weights:
        model.weights[name][:] = 0
    _, probs = bm.predict_file(model, ff.generate("txt", 6, 3000).data)
    np.testing.assert_allclose(probs, np.full(len(model.labels), 1 / len(model.labels)), atol=1e-6)


def test_prediction_ignores_bytes_outside_window():
    model = bm.build(TINY, seed=5)
    data = bytearray(ff.generate("bin", 7, 6000).data)
    spans = model.window.slice_bounds(len(data))
    outside = next(
        i for i in range(len(data)) if not any(s <= i < e for s, e in spans)
    )
    _, p1 = bm.predict_file(model, bytes(data))
    data[outside] ^= 0xFF
    _, p2 = bm.predict_file(model, bytes(data))
    np.testing.assert_array_equal(p1, p2)


def test_predict_rejects_bad_window():
    model = bm.build(TINY, seed=6)
    w = extract(ff.generate("txt", 8, 3000).data, model.window)
    w.tokens[0] = 300
    with pytest.raises(ValueError):
        bm.predict(model, w)


def test_graph_and_numpy_forward_agree():
    model = bm.build(bm.ArchDescriptor(), seed=9)
    tokens = np.stack([bm.window_tokens(model, ff.generate(lab, 9, 4000).data)
                       for lab in ("pdf", "zip", "txt")])
    onehot = np.eye(model.arch.n_classes, dtype=np.float32)[[0, 1, 2]]
    loss, wt, _ = bm.loss_graph(model, tokens, onehot)
    logits_np = bm.forward_np(model, tokens)
    z = logits_np - logits_np.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    manual = float(-(onehot * logp).sum(axis=-1).mean())
    assert abs(float(loss.data) - manual) < 1e-6


def test_fast_embed_gradient_matches_graph():
    model = bm.build(bm.ArchDescriptor(), seed=10)
    tokens = bm.window_tokens(model, ff.generate("js", 11, 4000).data)
    for target in (None, 2):
        l_fast, g_fast = bm.input_gains(model, tokens, 5, target)
        l_ref, g_ref = bm.input_gains_graph(model, tokens, 5, target)
        assert abs(l_fast - l_ref) < 1e-12
        np.testing.assert_allclose(g_fast, g_ref, rtol=1e-9, atol=1e-18)


def test_training_reaches_accuracy_and_is_deterministic(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    cfg = bm.TrainConfig(seed=0, epochs=24, batch_size=32)
    m1, log1 = bm.train(bm.build(TINY, seed=2), train_ds, test_ds, cfg)
    assert max(r.test_accuracy for r in log1) >= 0.8
    m2, log2 = bm.train(bm.build(TINY, seed=2), train_ds, test_ds, cfg)
    for name in m1.weights:
        assert np.array_equal(m1.weights[name], m2.weights[name])
    assert [r.as_csv() for r in log1] == [r.as_csv() for r in log2]


def test_two_seeds_disagree_but_both_learn(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    cfg = bm.TrainConfig(seed=0, epochs=24, batch_size=32)
    m1, log1 = bm.train(bm.build(TINY, seed=21), train_ds, test_ds, cfg)
    m2, log2 = bm.train(bm.build(TINY, seed=22), train_ds, test_ds, cfg)
    assert max(r.test_accuracy for r in log1) >= 0.8
    assert max(r.test_accuracy for r in log2) >= 0.8
    assert any(not np.array_equal(m1.weights[n], m2.weights[n]) for n in m1.weights)


def test_overfit_single_sample():
    pairs = [(ff.generate("pdf", 1, 3000).data, "pdf")]
    ds = bm.make_dataset(pairs, WindowSpec())
    cfg = bm.TrainConfig(seed=0, epochs=3, batch_size=1)
    model = bm.build(TINY, seed=1)
    _, log = bm.train(model, ds, ds, cfg)
    assert log[-1].train_loss < log[0].train_loss


def test_train_rejects_empty_and_adversarial_budget(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    with pytest.raises(ValueError):
        bm.train(bm.build(TINY, seed=1), bm.WindowDataset(np.empty((0, 1536), np.int16), np.empty(0, np.int64)),
                 test_ds, bm.TrainConfig())
    with pytest.raises(ValueError):
        bm.train(bm.build(TINY, seed=1), train_ds, test_ds, bm.TrainConfig(adv_budget=5))
    with pytest.raises(ValueError):
        bm.TrainConfig(adv_budget=3)


def test_adversarial_train_zero_budget_equals_clean(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    cfg = bm.TrainConfig(seed=0, epochs=4)
    public = bm.build(TINY, seed=30)
    a, _ = bm.train(bm.build(TINY, seed=31), train_ds, test_ds, cfg)
    b, _ = bm.adversarial_train(bm.build(TINY, seed=31), public, train_ds, test_ds, cfg)
    for name in a.weights:
        assert np.array_equal(a.weights[name], b.weights[name])


def test_adversarial_train_runs_and_keeps_shapes(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    sub = bm.WindowDataset(train_ds.tokens[:48], train_ds.labels[:48])
    public, _ = bm.train(bm.build(TINY, seed=32), train_ds, test_ds, bm.TrainConfig(seed=0, epochs=8))
    cfg = bm.TrainConfig(seed=0, epochs=2, adv_budget=5, batch_size=24)
    trained, log = bm.adversarial_train(bm.build(TINY, seed=33), public, sub, test_ds, cfg)
    assert len(log) == 2
    assert set(trained.weights) == set(public.weights)


def test_unpair_penalty_gradient_matches_finite_differences():
    # mixed-second-derivative oracle on a classifier-sized graph
    arch = bm.ArchDescriptor(embed_dim=4, conv_layers=((8, 6),), dense_layers=(6,), n_classes=3)
    labels = ("a", "b", "c")
    private = bm.build(arch, seed=40, labels=labels)
    public = bm.build(arch, seed=41, labels=labels)
    tokens = np.stack([derive_rng("t", i).integers(0, 257, 1536).astype(np.int16) for i in range(2)])
    onehot = np.eye(3, dtype=np.float64)[[0, 1]]

    e_priv = ng.Tensor(private.weights["embed"].astype(np.float64)[tokens], requires_grad=True)
    priv_loss, _, _ = bm.loss_graph(private, tokens, onehot, weight_tensors=bm._f64_weights(private),
                                    embed_leaf=e_priv)
    (g_priv,) = ng.backward(priv_loss, [e_priv])
    g_priv_const = ng.tensor(g_priv.data.reshape(2, -1), dtype=np.float64)

    def penalty_and_grad(weights_f64: dict[str, np.ndarray]):
        wt = {n: ng.Tensor(w, requires_grad=True) for n, w in weights_f64.items()}
        e_pub = ng.Tensor(weights_f64["embed"][tokens], requires_grad=True)
        xe, _, _ = bm.loss_graph(public, tokens, onehot, weight_tensors=wt, embed_leaf=e_pub)
        (g_pub,) = ng.backward(xe, [e_pub])
        cs = ng.tmean(ng.cosine_similarity(ng.reshape(g_pub, (2, -1)), g_priv_const, axis=-1))
        grads = ng.backward(cs, [wt["conv0.w"]])
        return float(cs.data), grads[0].data

    w64 = {n: w.astype(np.float64) for n, w in public.weights.items()}
    _, analytic = penalty_and_grad(w64)

    rng = np.random.default_rng(0)
    idxs = [tuple(rng.integers(0, s) for s in w64["conv0.w"].shape) for _ in range(6)]
    eps = 1e-5
    for idx in idxs:
        w_hi = {n: w.copy() for n, w in w64.items()}
        w_hi["conv0.w"][idx] += eps
        hi, _ = penalty_and_grad(w_hi)
        w_lo = {n: w.copy() for n, w in w64.items()}
        w_lo["conv0.w"][idx] -= eps
        lo, _ = penalty_and_grad(w_lo)
        fd = (hi - lo) / (2 * eps)
        denom = max(abs(fd), abs(analytic[idx]), 1e-8)
        assert abs(analytic[idx] - fd) / denom < 1e-3, (idx, analytic[idx], fd)


def test_unpair_finetune_decreases_similarity(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    private, _ = bm.train(bm.build(TINY, seed=50), train_ds, test_ds,
                          bm.TrainConfig(seed=0, epochs=20, batch_size=32))
    cfg = bm.TrainConfig(seed=0, epochs=10, unpair_lambda=2.0, unpair_epochs=4, step_size=0.05)
    public, log = bm.unpair_finetune(private, train_ds, test_ds, cfg)
    assert log[-1].mean_cs < log[0].mean_cs
    acc_pub = bm.accuracy(public, test_ds.tokens, test_ds.labels)
    acc_priv = bm.accuracy(private, test_ds.tokens, test_ds.labels)
    assert acc_pub >= acc_priv - 0.1


def test_unpair_lambda_zero_is_plain_finetune(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    private, _ = bm.train(bm.build(TINY, seed=51), train_ds, test_ds, bm.TrainConfig(seed=0, epochs=6))
    cfg = bm.TrainConfig(seed=0, epochs=6, unpair_lambda=0.0, unpair_epochs=2)
    public, log = bm.unpair_finetune(private, train_ds, test_ds, cfg)
    assert len(log) == 2  # runs, with the similarity term contributing nothing
    assert np.isfinite(log[-1].train_loss)


def test_sample_arch_within_bounds():
    rng = derive_rng("arches", 0)
    for _ in range(100):
        arch = bm.sample_arch(rng)
        assert 1 <= len(arch.conv_layers) <= 4
        assert 1 <= len(arch.dense_layers) <= 4
        assert all(8 <= k <= 16 for k, _ in arch.conv_layers)
    a = bm.sample_arch(derive_rng("s", 1))
    b = bm.sample_arch(derive_rng("s", 2))
    assert a != b  # overwhelmingly likely across the sampling space


def test_sample_validated_arch_terminates(small_corpus):
    train_ds, test_ds, _, _ = small_corpus
    rng = derive_rng("archval", 3)
    cfg = bm.TrainConfig(seed=0, epochs=20, batch_size=32)
    arch, model, redraws = bm.sample_validated_arch(rng, train_ds, test_ds, cfg,
                                                    min_accuracy=0.75, max_redraws=5, seed=60)
    assert redraws < 5
    assert bm.accuracy(model, test_ds.tokens, test_ds.labels) >= 0.7


# --------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path, small_corpus):
    _, test_ds, _, _ = small_corpus
    model = bm.build(TINY, seed=70, aes=AesConfig(key=bytes(range(16)), rounds=2))
    path = tmp_path / "m.ckpt"
    bm.save(model, path)
    loaded = bm.load(path)
    assert loaded.labels == model.labels
    assert loaded.aes == model.aes
    assert loaded.window == model.window
    toks_a = bm.encode_plain(model, test_ds.tokens[:8])
    toks_b = bm.encode_plain(loaded, test_ds.tokens[:8])
    np.testing.assert_array_equal(toks_a, toks_b)
    np.testing.assert_array_equal(bm.forward_np(model, toks_a), bm.forward_np(loaded, toks_b))


def test_checkpoint_truncation_and_magic_errors(tmp_path):
    model = bm.build(TINY, seed=71)
    path = tmp_path / "m.ckpt"
    bm.save(model, path)
    blob = path.read_bytes()
    (tmp_path / "bad1.ckpt").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(bm.CheckpointError):
        bm.load(tmp_path / "bad1.ckpt")
    (tmp_path / "bad2.ckpt").write_bytes(blob[:-1])
    with pytest.raises(bm.CheckpointError):
        bm.load(tmp_path / "bad2.ckpt")
    (tmp_path / "bad3.ckpt").write_bytes(blob + b"\x00")
    with pytest.raises(bm.CheckpointError):
        bm.load(tmp_path / "bad3.ckpt")


def test_checkpoint_aes_key_changes_predictions(tmp_path, small_corpus):
    _, _, _, test_pairs = small_corpus
    m1 = bm.build(TINY, seed=72, aes=AesConfig(key=b"\x01" * 16, rounds=1))
    m2 = bm.build(TINY, seed=72, aes=AesConfig(key=b"\x02" * 16, rounds=1))
    differs = 0
    for data, _ in test_pairs[:40]:
        _, p1 = bm.predict_file(m1, data)
        _, p2 = bm.predict_file(m2, data)
        differs += not np.array_equal(p1, p2)
    assert differs > 0


def test_aes_requires_block_aligned_slices():
    with pytest.raises(ValueError):
        bm.build(TINY, seed=73, window=WindowSpec(b1=500, b2=524, b3=512),
                 aes=AesConfig(key=bytes(16), rounds=1))
