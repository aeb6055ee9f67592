import numpy as np
import pytest

from chronomt.corpus import LabelSet, ParallelExample
from chronomt.errors import ValidationError
from chronomt.lm import (
    CausalLM,
    LMConfig,
    LMSchedule,
    QueryTriple,
    build_query,
    finetune,
    perplexity,
    pretrain,
    score,
    score_batch,
)
from chronomt.vocab import EOS, SEP_CHRON, SEP_ZH_A, SEP_ZH_M, Vocabulary


def tiny_vocab(label_set):
    return Vocabulary(["甲", "乙", "丙", "丁"], label_set)


def tiny_lm(vocab_size, seed=0, dtype=np.float64, **kw):
    base = dict(num_layers=1, num_heads=2, model_dim=8, ffn_dim=16,
                context_len=24, dropout=0.0)
    base.update(kw)
    return CausalLM(LMConfig(**base), vocab_size, seed=seed, dtype=dtype)


def test_build_query_layout(label_set):
    vocab = tiny_vocab(label_set)
    label = label_set.get("han")
    ids = build_query(vocab, QueryTriple("甲乙", "丙", label))
    a = vocab.encode("甲乙")
    m = vocab.encode("丙")
    want = [SEP_ZH_A, *a.tolist(), SEP_ZH_M, *m.tolist(),
            SEP_CHRON, vocab.control_id(label), EOS]
    assert ids.tolist() == want
    assert len(ids) == 2 + 1 + 5  # |a| + |m| + 5 structural tokens


def test_query_triple_validation(label_set):
    label = label_set.get("han")
    with pytest.raises(ValidationError):
        QueryTriple("", "丙", label)
    with pytest.raises(ValidationError):
        QueryTriple("甲", "", label)
    with pytest.raises(ValidationError):
        QueryTriple("甲", "丙", None)


def test_uniform_lm_nll_is_log_vocab(label_set):
    # zeroed output layer -> uniform next-token distribution, so the
    # per-token NLL must be exactly ln |V| and perplexity |V|
    vocab = tiny_vocab(label_set)
    lm = tiny_lm(len(vocab))
    lm.store.params["out"].data[:] = 0.0
    seqs = [vocab.encode("甲乙丙").tolist() + [EOS],
            vocab.encode("丁").tolist() + [EOS]]
    nlls, lens = lm.sequence_nlls(seqs)
    per_tok = nlls / lens
    np.testing.assert_allclose(per_tok, np.log(len(vocab)), atol=1e-6)
    assert perplexity(lm, seqs) == pytest.approx(len(vocab), abs=1e-4)
    sc = score(lm, vocab, QueryTriple("甲乙", "丙", label_set.get("han")))
    assert sc.per_token_nll == pytest.approx(np.log(len(vocab)), abs=1e-6)


def test_loss_matches_sequence_nlls(label_set):
    vocab = tiny_vocab(label_set)
    lm = tiny_lm(len(vocab), seed=3)
    seqs = [vocab.encode("甲乙丙丁").tolist() + [EOS],
            vocab.encode("乙甲").tolist() + [EOS]]
    loss = lm.loss(seqs, train=False)
    nlls, lens = lm.sequence_nlls(seqs)
    assert float(loss.data) == pytest.approx(nlls.sum() / lens.sum(), rel=1e-10)


def test_score_batch_matches_single(label_set):
    vocab = tiny_vocab(label_set)
    lm = tiny_lm(len(vocab), seed=5)
    triples = [
        QueryTriple("甲乙", "丙", label_set.get("pre-qin")),
        QueryTriple("丁", "甲乙丙", label_set.get("han")),
        QueryTriple("丙丙", "乙", label_set.get("song")),
    ]
    batch = score_batch(lm, vocab, triples, batch_size=2)
    for triple, got in zip(triples, batch):
        one = score(lm, vocab, triple)
        assert got.total_nll == pytest.approx(one.total_nll, abs=1e-5)
        assert got.token_count == one.token_count
        assert got.per_token_nll == pytest.approx(one.per_token_nll, abs=1e-5)


def test_score_rejects_over_context_queries(label_set):
    vocab = tiny_vocab(label_set)
    lm = tiny_lm(len(vocab), context_len=8)
    triple = QueryTriple("甲乙丙丁", "甲乙丙丁", label_set.get("han"))
    with pytest.raises(ValidationError, match="exceeds LM context"):
        score(lm, vocab, triple)
    with pytest.raises(ValidationError, match="exceeds|exceeding"):
        score_batch(lm, vocab, [triple])


def test_logits_reject_over_context_input(label_set):
    lm = tiny_lm(12, context_len=6)
    ids = np.ones((1, 7), dtype=np.int64)
    with pytest.raises(ValidationError):
        lm.logits(ids)


def test_causal_masking(label_set):
    # changing a later token must not move the logits of earlier steps
    lm = tiny_lm(12, seed=7)
    a = np.array([[1, 4, 5, 6, 2]], dtype=np.int64)
    b = a.copy()
    b[0, 3] = 9
    la = lm.logits(a, train=False).data
    lb = lm.logits(b, train=False).data
    np.testing.assert_allclose(la[0, :3], lb[0, :3], atol=1e-10)
    assert np.abs(la[0, 3:] - lb[0, 3:]).max() > 0


def test_pretrain_reduces_loss_and_history(tmp_path, label_set):
    vocab = tiny_vocab(label_set)
    rng = np.random.default_rng(0)
    seqs = [
        rng.integers(10, 10 + 4, size=6).tolist() + [EOS] for _ in range(64)
    ]
    lm = tiny_lm(len(vocab), seed=1)
    sched = LMSchedule(epochs=3, batch_size=16, lr=3e-3, warmup_steps=4, seed=0)
    history, diverged = pretrain(lm, seqs, sched, dev_seqs=seqs[:16])
    assert not diverged
    assert [row["epoch"] for row in history] == [1, 2, 3]
    assert history[-1]["train_loss"] < history[0]["train_loss"]
    assert all(row["dev_ppl"] > 0 for row in history)


def test_pretrain_rejects_empty_corpus():
    lm = tiny_lm(12)
    with pytest.raises(ValidationError, match="empty"):
        pretrain(lm, [], LMSchedule())


def test_finetune_selects_best_dev_epoch(label_set):
    vocab = tiny_vocab(label_set)
    rng = np.random.default_rng(2)
    chars = "甲乙丙丁"
    examples = []
    for _ in range(48):
        src = "".join(rng.choice(list(chars), size=4))
        tgt = "".join(rng.choice(list(chars), size=4))
        examples.append(ParallelExample(src, tgt, label_set.get(label_set.names()[int(rng.integers(3))])))
    lm = tiny_lm(len(vocab), seed=4)
    sched = LMSchedule(epochs=4, batch_size=16, lr=2e-3, warmup_steps=4, seed=0)
    history, diverged = finetune(lm, vocab, examples, sched,
                                 dev_examples=examples[:12])
    assert not diverged
    assert lm.finetuned
    flags = [row["selected"] for row in history]
    assert sum(flags) == 1
    best = min(history, key=lambda r: r["dev_ppl"])
    assert best["selected"]
    # the restored parameters really are the best epoch's parameters
    dev_seqs = [
        build_query(vocab, QueryTriple(ex.source, ex.target, ex.label))
        for ex in examples[:12]
    ]
    assert perplexity(lm, dev_seqs) == pytest.approx(best["dev_ppl"], rel=1e-6)


def test_finetune_rejects_unlabeled_examples(label_set):
    vocab = tiny_vocab(label_set)
    lm = tiny_lm(len(vocab))
    rows = [
        ParallelExample("甲", "乙", label_set.get("han")),
        ParallelExample("乙", "丙", None),
    ]
    with pytest.raises(ValidationError, match="example 1"):
        finetune(lm, vocab, rows, LMSchedule(epochs=1))


def test_finetune_rejects_empty_corpus(label_set):
    vocab = tiny_vocab(label_set)
    lm = tiny_lm(len(vocab))
    with pytest.raises(ValidationError, match="empty"):
        finetune(lm, vocab, [], LMSchedule(epochs=1))


def test_snapshot_restore_round_trip(label_set):
    lm = tiny_lm(12, seed=8)
    snap = lm.snapshot()
    before = lm.logits(np.array([[1, 4, 5]], dtype=np.int64), train=False).data.copy()
    for p in lm.store.params.values():
        p.data += 0.25
    after = lm.logits(np.array([[1, 4, 5]], dtype=np.int64), train=False).data
    assert np.abs(after - before).max() > 0
    lm.restore(snap)
    restored = lm.logits(np.array([[1, 4, 5]], dtype=np.int64), train=False).data
    np.testing.assert_array_equal(restored, before)


def test_save_load_round_trip(tmp_path, label_set):
    lm = tiny_lm(14, seed=9)
    lm.finetuned = True
    path = str(tmp_path / "lm.ckpt")
    lm.save(path, extra_meta={"note": "x"})
    loaded, meta = CausalLM.load(path, dtype=np.float64)
    assert meta["kind"] == "causal_lm"
    assert meta["note"] == "x"
    assert loaded.finetuned
    assert loaded.vocab_size == 14
    ids = np.array([[1, 4, 5, 6]], dtype=np.int64)
    np.testing.assert_array_equal(
        loaded.logits(ids, train=False).data, lm.logits(ids, train=False).data
    )


def test_load_rejects_wrong_kind(tmp_path):
    from chronomt.checkpoint import save_checkpoint

    path = str(tmp_path / "bad.ckpt")
    save_checkpoint(path, {"x": np.zeros(2)}, {"kind": "seq2seq"})
    with pytest.raises(ValidationError, match="causal_lm"):
        CausalLM.load(path)


def test_schedule_validation():
    with pytest.raises(ValidationError):
        LMSchedule(epochs=0).validate()
    with pytest.raises(ValidationError):
        LMSchedule(lr=0.0).validate()
    with pytest.raises(ValidationError):
        LMSchedule(batch_size=0).validate()
