import json

import pytest

from chronomt.cli import main

MINI = {
    "seed": 4,
    "data": {
        "synthetic": {
            "vocab_size": 10, "len_min": 3, "len_max": 5,
            "n_parallel": 30, "n_mono_a": 10, "n_mono_m": 10,
        },
        "dev_frac": 0.1,
        "test_frac": 0.1,
    },
    "mt": {"num_layers": 1, "num_heads": 2, "model_dim": 8, "ffn_dim": 16,
           "max_len": 16, "dropout": 0.0},
    "mt_train": {"epochs": 1, "batch_parallel": 8, "warmup_steps": 4},
    "lm": {"num_layers": 1, "num_heads": 2, "model_dim": 8, "ffn_dim": 16,
           "context_len": 32, "dropout": 0.0},
    "lm_pretrain": {"epochs": 1, "batch_size": 8, "warmup_steps": 4},
    "lm_finetune": {"epochs": 1, "batch_size": 8, "warmup_steps": 4},
    "decode": {"beam_size": 2, "top_k": 2},
}


def write_config(tmp_path):
    raw = json.loads(json.dumps(MINI))
    raw["workdir"] = str(tmp_path / "run")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return str(path)


def test_gen_synthetic_and_stats_exit_zero(tmp_path, capsys):
    outdir = tmp_path / "core"
    code = main([
        "gen-synthetic", "--outdir", str(outdir), "--seed", "3",
        "--vocab-size", "10", "--len-min", "3", "--len-max", "5",
        "--n-parallel", "20", "--n-mono-a", "5", "--n-mono-m", "5",
    ])
    assert code == 0
    sizes = json.loads(capsys.readouterr().out)
    assert sizes == {"parallel": 20, "mono_a": 5, "mono_m": 5}
    assert (outdir / "parallel.tsv").exists()

    code = main(["corpus", "stats", "--parallel", str(outdir / "parallel.tsv")])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["sentence_count"] == 20

    code = main([
        "corpus", "stats", "--mono", str(outdir / "mono_a.txt"), "--side", "zh-a",
    ])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["sentence_count"] == 5


def test_corpus_split_command(tmp_path, capsys):
    outdir = tmp_path / "core"
    main([
        "gen-synthetic", "--outdir", str(outdir), "--seed", "1",
        "--vocab-size", "10", "--len-min", "3", "--len-max", "5",
        "--n-parallel", "30", "--n-mono-a", "0", "--n-mono-m", "0",
    ])
    capsys.readouterr()
    code = main([
        "corpus", "split", "--input", str(outdir / "parallel.tsv"),
        "--outdir", str(tmp_path / "splits"),
        "--dev-frac", "0.2", "--test-frac", "0.2", "--seed", "7",
    ])
    assert code == 0
    sizes = json.loads(capsys.readouterr().out)
    assert sizes == {"dev": 6, "test": 6, "train": 18}
    for name in ("train.tsv", "dev.tsv", "test.tsv"):
        assert (tmp_path / "splits" / name).exists()


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["no-such-command"]) == 1
    assert main(["corpus", "split", "--input", "x.tsv"]) == 1  # missing --outdir
    capsys.readouterr()


def test_validation_errors_exit_one(tmp_path, capsys):
    # both corpus sources at once
    assert main(["corpus", "stats", "--parallel", "a", "--mono", "b"]) == 1
    # config file missing
    assert main(["prep", "--config", str(tmp_path / "absent.json")]) == 1
    # bad override value
    cfg = write_config(tmp_path)
    assert main(["prep", "--config", cfg, "--set", "mt.model_dim=9"]) == 1
    err = capsys.readouterr().err
    assert "error" in err


def test_missing_input_file_exits_one(tmp_path, capsys):
    assert main(["corpus", "stats", "--parallel", str(tmp_path / "nope.tsv")]) == 1
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_two(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["prep", "--config", cfg]) == 0
    code = main(["train-mt", "--config", cfg, "--set", "mt_train.lr=1e12"])
    assert code == 2
    assert "diverged" in capsys.readouterr().err


def test_run_and_evaluate_round_trip(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", cfg]) == 0
    run_dir = tmp_path / "run"
    assert (run_dir / "eval" / "report.json").exists()

    # standalone evaluate from plain files
    hyp = tmp_path / "hyp.txt"
    ref = tmp_path / "ref.txt"
    hyp.write_text("甲乙\n丙丁\n", encoding="utf-8")
    ref.write_text("甲乙\n丙丁\n", encoding="utf-8")
    outdir = tmp_path / "eval2"
    code = main([
        "evaluate", "--hyp", str(hyp), "--ref", str(ref), "--outdir", str(outdir),
    ])
    assert code == 0
    rep = json.loads((outdir / "report.json").read_text(encoding="utf-8"))
    assert rep["bleu_top1"]["bleu"] == 1.0
    capsys.readouterr()


def test_translate_and_score_commands(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", cfg,
                 "--stages", "prep,train-mt,train-lm,finetune-lm"]) == 0
    run_dir = tmp_path / "run"
    world = json.loads((run_dir / "data" / "world.json").read_text(encoding="utf-8"))
    chars = world["alphabet_a"]
    src_file = tmp_path / "sources.txt"
    src_file.write_text("".join(chars[:3]) + "\n", encoding="utf-8")
    out_file = tmp_path / "out.txt"
    code = main([
        "translate", "--config", cfg,
        "--input", str(src_file), "--output", str(out_file),
    ])
    assert code == 0
    assert len(out_file.read_text(encoding="utf-8").splitlines()) == 1

    # score a hand-built triple file with the finetuned LM
    rows = (run_dir / "data" / "parallel_train.tsv").read_text(
        encoding="utf-8"
    ).splitlines()
    first = rows[0].split("\t")
    triple_file = tmp_path / "triples.tsv"
    label = first[2] if len(first) > 2 and first[2] else "han"
    triple_file.write_text(
        f"{first[0]}\t{first[1]}\t{label}\n", encoding="utf-8"
    )
    score_out = tmp_path / "scores.tsv"
    code = main([
        "score", "--config", cfg,
        "--input", str(triple_file), "--output", str(score_out),
    ])
    assert code == 0
    lines = score_out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# scored with finetuned=true"
    assert len(lines) == 2
    assert len(lines[1].split("\t")) == 6
    capsys.readouterr()
