import numpy as np
import pytest

from chronomt.corpus import LabelSet, ParallelExample
from chronomt.errors import ValidationError
from chronomt.training import (
    METRIC_COLUMNS,
    ObjectiveWeights,
    TrainSchedule,
    mixing_proportions,
    train,
)
from chronomt.transformer import Seq2SeqTransformer, TransformerConfig
from chronomt.vocab import Vocabulary

CHARS = list("甲乙丙丁戊")


def make_vocab():
    return Vocabulary(CHARS, LabelSet())


def make_model(vocab, seed=0):
    cfg = TransformerConfig(
        num_layers=1, num_heads=2, model_dim=8, ffn_dim=16, max_len=16, dropout=0.0
    )
    return Seq2SeqTransformer(cfg, vocab.size, vocab.size, seed=seed)


def make_corpus(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        src = "".join(rng.choice(CHARS, size=int(rng.integers(3, 6))))
        tgt = "".join(rng.choice(CHARS, size=int(rng.integers(3, 6))))
        out.append(ParallelExample(src, tgt))
    return out


def sched(**kw):
    base = dict(epochs=2, batch_parallel=8, batch_mono=8, lr=1e-3,
                warmup_steps=4, seed=0, min_parallel_share=0.5)
    base.update(kw)
    return TrainSchedule(**base)


ALL_ON = {"P": True, "A": True, "M": True}


def test_mixing_proportions_floor_applies():
    pi = mixing_proportions({"P": 100, "A": 300, "M": 600}, ALL_ON, 0.5)
    assert pi["P"] == pytest.approx(0.5)
    assert pi["A"] == pytest.approx(0.5 * 300 / 900)
    assert pi["M"] == pytest.approx(0.5 * 600 / 900)
    assert sum(pi.values()) == pytest.approx(1.0)


def test_mixing_proportions_no_floor_when_parallel_large():
    pi = mixing_proportions({"P": 600, "A": 200, "M": 200}, ALL_ON, 0.25)
    assert pi == pytest.approx({"P": 0.6, "A": 0.2, "M": 0.2})


def test_mixing_proportions_drops_inactive_streams():
    pi = mixing_proportions({"P": 200, "A": 0, "M": 2000}, ALL_ON, 0.5)
    assert set(pi) == {"P", "M"}
    assert pi["P"] == pytest.approx(0.5)
    off_m = {"P": True, "A": True, "M": False}
    pi = mixing_proportions({"P": 200, "A": 100, "M": 2000}, off_m, 0.25)
    assert set(pi) == {"P", "A"}


def test_mixing_proportions_single_stream_is_unit():
    pi = mixing_proportions({"P": 50, "A": 0, "M": 0}, ALL_ON, 0.25)
    assert pi == {"P": 1.0}
    pi = mixing_proportions({"P": 0, "A": 0, "M": 70}, ALL_ON, 0.25)
    assert pi == {"M": 1.0}


def test_mixing_proportions_requires_active_stream():
    with pytest.raises(ValidationError):
        mixing_proportions({"P": 0, "A": 0, "M": 0}, ALL_ON, 0.25)
    with pytest.raises(ValidationError):
        mixing_proportions(
            {"P": 10, "A": 10, "M": 10},
            {"P": False, "A": False, "M": False},
            0.25,
        )


def test_objective_weights_validation():
    ObjectiveWeights(1.0, 0.0, 2.5)
    with pytest.raises(ValidationError):
        ObjectiveWeights(-1.0, 1.0, 1.0)
    with pytest.raises(ValidationError):
        ObjectiveWeights(1.0, float("nan"), 1.0)


def test_schedule_validation():
    with pytest.raises(ValidationError):
        sched(epochs=0).validate()
    with pytest.raises(ValidationError):
        sched(lr=0.0).validate()
    with pytest.raises(ValidationError):
        sched(min_parallel_share=1.5).validate()


def test_empty_monos_match_supervised_only_bit_for_bit():
    # with no monolingual data the composite objective must reduce to
    # the supervised loss exactly, not just in expectation
    vocab = make_vocab()
    parallel = make_corpus(24, seed=1)
    runs = []
    for weights in (ObjectiveWeights(1, 1, 1), ObjectiveWeights(1, 0, 0)):
        model = make_model(vocab, seed=7)
        result = train(model, vocab, vocab, parallel, [], [], weights, sched())
        runs.append((model.store.state_arrays(), result))
    arrays_a, res_a = runs[0]
    arrays_b, res_b = runs[1]
    assert arrays_a.keys() == arrays_b.keys()
    for k in arrays_a:
        np.testing.assert_array_equal(arrays_a[k], arrays_b[k])
    assert [r.total for r in res_a.epochs] == [r.total for r in res_b.epochs]
    assert res_a.proportions == res_b.proportions == {"P": 1.0}


def test_train_is_deterministic():
    vocab = make_vocab()
    parallel = make_corpus(16, seed=2)
    mono_m = ["".join(c) for c in np.random.default_rng(3).choice(CHARS, (20, 4))]
    finals = []
    for _ in range(2):
        model = make_model(vocab, seed=5)
        result = train(
            model, vocab, vocab, parallel, [], mono_m,
            ObjectiveWeights(), sched(epochs=2),
        )
        finals.append((model.store.state_arrays(), [r.total for r in result.epochs]))
    for k in finals[0][0]:
        np.testing.assert_array_equal(finals[0][0][k], finals[1][0][k])
    assert finals[0][1] == finals[1][1]


def test_stream_mixture_and_step_count():
    vocab = make_vocab()
    parallel = make_corpus(16, seed=4)
    mono_a = ["甲乙丙"] * 32
    mono_m = ["丁戊甲"] * 32
    model = make_model(vocab)
    schedule = sched(epochs=2, min_parallel_share=0.5)
    result = train(
        model, vocab, vocab, parallel, mono_a, mono_m,
        ObjectiveWeights(), schedule,
    )
    # floor pins P at 0.5: steps per epoch = ceil(16 / 8 / 0.5) = 4
    assert len(result.steps) == 2 * 4
    assert set(r.stream for r in result.steps) <= {"P", "A", "M"}
    assert result.proportions["P"] == pytest.approx(0.5)


def test_zero_weight_stream_never_sampled():
    vocab = make_vocab()
    parallel = make_corpus(16, seed=6)
    mono_a = ["甲乙丙"] * 40
    model = make_model(vocab)
    result = train(
        model, vocab, vocab, parallel, mono_a, [],
        ObjectiveWeights(lm_ancient=0.0), sched(),
    )
    assert set(r.stream for r in result.steps) == {"P"}
    assert "A" not in result.proportions


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_sets_flag_and_keeps_artifacts(tmp_path):
    vocab = make_vocab()
    parallel = make_corpus(16, seed=8)
    model = make_model(vocab)
    run_dir = tmp_path / "run"
    result = train(
        model, vocab, vocab, parallel, [], [],
        ObjectiveWeights(), sched(lr=1e9, warmup_steps=1, epochs=3),
        run_dir=str(run_dir),
    )
    assert result.diverged
    assert (run_dir / "metrics.csv").exists()


def test_metrics_csv_and_checkpoints(tmp_path):
    vocab = make_vocab()
    parallel = make_corpus(16, seed=9)
    dev = make_corpus(6, seed=10)
    model = make_model(vocab)
    run_dir = tmp_path / "run"
    result = train(
        model, vocab, vocab, parallel, [], [],
        ObjectiveWeights(), sched(epochs=3), dev=dev, run_dir=str(run_dir),
    )
    import csv

    with open(result.metrics_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(METRIC_COLUMNS)
    assert len(rows) == 1 + 3
    for row in rows[1:]:
        assert row[2] != ""  # L_sup present
        assert row[3] == row[4] == ""  # no mono streams ran
        assert row[6] != ""  # dev BLEU present

    # best checkpoint reflects the strictly-best dev BLEU epoch
    scores = [r.dev_bleu for r in result.epochs]
    want_best = scores.index(max(scores)) + 1
    assert result.best_epoch == want_best
    assert result.best_dev_bleu == pytest.approx(max(scores))
    best, meta = Seq2SeqTransformer.load(result.best_ckpt)
    assert meta["epoch"] == want_best
    last, meta_last = Seq2SeqTransformer.load(result.last_ckpt)
    assert meta_last["epoch"] == 3


def test_mono_only_training_runs():
    vocab = make_vocab()
    mono_m = ["甲乙丙丁"] * 24
    model = make_model(vocab)
    result = train(
        model, vocab, vocab, [], [], mono_m, ObjectiveWeights(), sched(epochs=1)
    )
    assert result.proportions == {"M": 1.0}
    assert len(result.steps) == 3  # ceil(24 / 8)
    assert all(r.stream == "M" for r in result.steps)
