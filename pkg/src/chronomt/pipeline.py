"""Config-driven end-to-end pipeline.

Stages, in canonical order: prep, train-mt, train-lm, finetune-lm,
translate, rerank, evaluate.  Each stage reads artifacts from the run
workdir and overwrites its own outputs, so rerunning a stage is
idempotent.  Requesting a stage whose inputs are missing raises a
DependencyError naming the stage to run first.  The manifest records
the resolved config plus sha256 digests of every artifact written so
far; nothing in any artifact depends on wall-clock time, so two runs
from the same config and data are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .beam import beam_search
from .config import RunConfig
from .corpus import LabelSet, MonoCorpus, file_digest, load_mono, load_parallel, save_mono, save_parallel, split, write_manifest
from .errors import DependencyError, DivergenceError, ValidationError
from .evaluation import bleu, classification_metrics, write_reports
from .lm import CausalLM, LMSchedule, finetune, pretrain
from .rerank import rerank as rerank_one
from .synthetic import SyntheticConfig, SyntheticWorld, gen_synthetic
from .training import ObjectiveWeights, TrainSchedule, train
from .transformer import Seq2SeqTransformer, TransformerConfig
from .vocab import EOS, Vocabulary, build_vocab

STAGES = (
    "prep",
    "train-mt",
    "train-lm",
    "finetune-lm",
    "translate",
    "rerank",
    "evaluate",
)


class Paths:
    def __init__(self, workdir):
        self.root = Path(workdir)
        self.manifest = self.root / "manifest.json"
        self.train = self.root / "data" / "parallel_train.tsv"
        self.dev = self.root / "data" / "parallel_dev.tsv"
        self.test = self.root / "data" / "parallel_test.tsv"
        self.mono_a = self.root / "data" / "mono_a.txt"
        self.mono_m = self.root / "data" / "mono_m.txt"
        self.world = self.root / "data" / "world.json"
        self.vocab_a = self.root / "data" / "vocab_a.txt"
        self.vocab_m = self.root / "data" / "vocab_m.txt"
        self.vocab_joint = self.root / "data" / "vocab_joint.txt"
        self.mt_dir = self.root / "mt"
        self.mt_best = self.mt_dir / "best.ckpt"
        self.lm_dir = self.root / "lm"
        self.lm_pretrained = self.lm_dir / "pretrained.ckpt"
        self.lm_finetuned = self.lm_dir / "finetuned.ckpt"
        self.candidates = self.root / "decode" / "candidates.tsv"
        self.top1 = self.root / "decode" / "top1.txt"
        self.reranked = self.root / "rerank" / "reranked.tsv"
        self.selected = self.root / "rerank" / "selected.txt"
        self.pred_labels = self.root / "rerank" / "pred_labels.txt"
        self.grids = self.root / "rerank" / "grids.jsonl"
        self.eval_dir = self.root / "eval"


def _require(stage, needs, *paths):
    for p in paths:
        if not Path(p).exists():
            raise DependencyError(stage, needs, str(p))


def _update_manifest(paths, cfg, stage, artifacts):
    if paths.manifest.exists():
        with open(paths.manifest, encoding="utf-8") as f:
            manifest = json.load(f)
    else:
        manifest = {"config": cfg.to_dict(), "artifacts": {}}
    manifest["config"] = cfg.to_dict()
    for p in artifacts:
        p = Path(p)
        if p.exists():
            manifest["artifacts"][str(p.relative_to(paths.root))] = file_digest(p)
    write_manifest(paths.manifest, manifest)


def _write_lines(path, lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


# -----------------------------
# Stages
# -----------------------------

def stage_prep(cfg, paths):
    label_set = LabelSet(cfg.labels)
    d = cfg.data
    if d.synthetic is not None:
        syn = dict(d.synthetic)
        syn.setdefault("label_names", list(cfg.labels))
        syn_cfg = SyntheticConfig.from_dict(syn)
        parallel, mono_a, mono_m = gen_synthetic(syn_cfg, cfg.seed)
        SyntheticWorld(syn_cfg, cfg.seed).save(paths.world)
    else:
        parallel = load_parallel(d.parallel, label_set)
        mono_a = load_mono(d.mono_a, "zh-a") if d.mono_a else MonoCorpus("zh-a", ())
        mono_m = load_mono(d.mono_m, "zh-m") if d.mono_m else MonoCorpus("zh-m", ())
    train_set, dev_set, test_set = split(
        parallel, d.dev_frac, d.test_frac, cfg.seed, stratify=d.stratify
    )
    save_parallel(train_set, paths.train)
    save_parallel(dev_set, paths.dev)
    save_parallel(test_set, paths.test)
    save_mono(mono_a, paths.mono_a)
    save_mono(mono_m, paths.mono_m)

    a_text = [ex.source for ex in train_set] + list(mono_a.sentences)
    m_text = [ex.target for ex in train_set] + list(mono_m.sentences)
    joint = build_vocab(a_text + m_text, label_set, cfg.tokenizer.min_freq)
    joint.save(paths.vocab_joint)
    if cfg.tokenizer.joint_vocab:
        joint.save(paths.vocab_a)
        joint.save(paths.vocab_m)
    else:
        build_vocab(a_text, label_set, cfg.tokenizer.min_freq).save(paths.vocab_a)
        build_vocab(m_text, label_set, cfg.tokenizer.min_freq).save(paths.vocab_m)
    artifacts = [
        paths.train, paths.dev, paths.test, paths.mono_a, paths.mono_m,
        paths.vocab_a, paths.vocab_m, paths.vocab_joint, paths.world,
    ]
    _update_manifest(paths, cfg, "prep", artifacts)


def stage_train_mt(cfg, paths):
    _require("train-mt", "prep", paths.train, paths.vocab_a, paths.vocab_m)
    label_set = LabelSet(cfg.labels)
    vocab_a = Vocabulary.load(paths.vocab_a)
    vocab_m = Vocabulary.load(paths.vocab_m)
    train_set = load_parallel(paths.train, label_set)
    dev_set = load_parallel(paths.dev, label_set) if paths.dev.exists() else None
    mono_a = load_mono(paths.mono_a, "zh-a") if paths.mono_a.exists() else MonoCorpus("zh-a", ())
    mono_m = load_mono(paths.mono_m, "zh-m") if paths.mono_m.exists() else MonoCorpus("zh-m", ())
    t = cfg.mt_train
    model = Seq2SeqTransformer(cfg.mt, len(vocab_a), len(vocab_m), seed=cfg.seed)
    schedule = TrainSchedule(
        epochs=t.epochs,
        batch_parallel=t.batch_parallel,
        batch_mono=t.batch_mono,
        lr=t.lr,
        warmup_steps=t.warmup_steps,
        grad_clip=t.grad_clip,
        seed=cfg.seed,
        min_parallel_share=t.min_parallel_share,
        backward_parallel=t.backward_parallel,
    )
    weights = ObjectiveWeights(*t.weights)
    result = train(
        model, vocab_a, vocab_m,
        train_set, mono_a.sentences, mono_m.sentences,
        weights, schedule, dev=dev_set, run_dir=paths.mt_dir,
    )
    _update_manifest(
        paths, cfg, "train-mt",
        [paths.mt_best, paths.mt_dir / "last.ckpt", paths.mt_dir / "metrics.csv"],
    )
    if result.diverged:
        raise DivergenceError(
            "mt training diverged; last good checkpoint kept at "
            f"{result.best_ckpt or result.last_ckpt}"
        )
    return result


def stage_train_lm(cfg, paths):
    _require("train-lm", "prep", paths.vocab_joint, paths.train)
    vocab = Vocabulary.load(paths.vocab_joint)
    label_set = LabelSet(cfg.labels)
    sentences = []
    if paths.mono_m.exists():
        sentences = list(load_mono(paths.mono_m, "zh-m").sentences)
    if not sentences:
        # no modern monolingual data: fall back to the parallel targets
        sentences = [ex.target for ex in load_parallel(paths.train, label_set)]
    seqs = [np.append(vocab.encode(s), np.int64(EOS)) for s in sentences]
    dev_seqs = [s for i, s in enumerate(seqs) if i % 20 == 0]
    train_seqs = [s for i, s in enumerate(seqs) if i % 20 != 0]
    if not train_seqs:
        train_seqs, dev_seqs = dev_seqs, None
    p = cfg.lm_pretrain
    lm = CausalLM(cfg.lm, len(vocab), seed=cfg.seed)
    schedule = LMSchedule(
        epochs=p.epochs, batch_size=p.batch_size, lr=p.lr,
        warmup_steps=p.warmup_steps, grad_clip=p.grad_clip, seed=cfg.seed,
    )
    history, diverged = pretrain(lm, train_seqs, schedule, dev_seqs=dev_seqs)
    lm.save(paths.lm_pretrained, {"history": history})
    with open(paths.lm_dir / "pretrain_history.json", "w", encoding="utf-8") as f:
        json.dump(history, f, indent=2, sort_keys=True)
        f.write("\n")
    _update_manifest(
        paths, cfg, "train-lm",
        [paths.lm_pretrained, paths.lm_dir / "pretrain_history.json"],
    )
    if diverged:
        raise DivergenceError("lm pretraining diverged; last good state kept")
    return history


def stage_finetune_lm(cfg, paths):
    _require("finetune-lm", "train-lm", paths.lm_pretrained)
    _require("finetune-lm", "prep", paths.train, paths.vocab_joint)
    vocab = Vocabulary.load(paths.vocab_joint)
    label_set = LabelSet(cfg.labels)
    lm, _ = CausalLM.load(paths.lm_pretrained)
    train_set = [ex for ex in load_parallel(paths.train, label_set) if ex.label is not None]
    if not train_set:
        raise ValidationError("finetune-lm needs labeled parallel training examples")
    dev_set = None
    if paths.dev.exists():
        dev_set = [ex for ex in load_parallel(paths.dev, label_set) if ex.label is not None]
        dev_set = dev_set or None
    p = cfg.lm_finetune
    schedule = LMSchedule(
        epochs=p.epochs, batch_size=p.batch_size, lr=p.lr,
        warmup_steps=p.warmup_steps, grad_clip=p.grad_clip, seed=cfg.seed,
    )
    history, diverged = finetune(lm, vocab, train_set, schedule, dev_examples=dev_set)
    lm.save(paths.lm_finetuned, {"history": history})
    with open(paths.lm_dir / "finetune_history.json", "w", encoding="utf-8") as f:
        json.dump(history, f, indent=2, sort_keys=True)
        f.write("\n")
    _update_manifest(
        paths, cfg, "finetune-lm",
        [paths.lm_finetuned, paths.lm_dir / "finetune_history.json"],
    )
    if diverged:
        raise DivergenceError("lm finetuning diverged; last good state kept")
    return history


def stage_translate(cfg, paths, sources=None):
    _require("translate", "train-mt", paths.mt_best)
    _require("translate", "prep", paths.vocab_a, paths.vocab_m)
    vocab_a = Vocabulary.load(paths.vocab_a)
    vocab_m = Vocabulary.load(paths.vocab_m)
    model, _ = Seq2SeqTransformer.load(paths.mt_best)
    label_set = LabelSet(cfg.labels)
    if sources is None:
        _require("translate", "prep", paths.test)
        sources = [ex.source for ex in load_parallel(paths.test, label_set)]
    rows = []
    for src in sources:
        cands = beam_search(
            model,
            vocab_a.encode(src),
            beam_size=cfg.decode.beam_size,
            top_k=cfg.decode.top_k,
            max_len=cfg.decode.max_len,
        )
        rows.append([src] + [vocab_m.decode(c.tokens) for c in cands])
    _write_lines(paths.candidates, ["\t".join(r) for r in rows])
    _write_lines(paths.top1, [r[1] if len(r) > 1 else "" for r in rows])
    _update_manifest(paths, cfg, "translate", [paths.candidates, paths.top1])
    return rows


def stage_rerank(cfg, paths):
    _require("rerank", "translate", paths.candidates)
    _require("rerank", "finetune-lm", paths.lm_finetuned)
    vocab = Vocabulary.load(paths.vocab_joint)
    label_set = LabelSet(cfg.labels)
    lm, _ = CausalLM.load(paths.lm_finetuned)
    out_rows = []
    selected = []
    pred_labels = []
    grids = []
    for line in _read_lines(paths.candidates):
        fields = line.split("\t")
        src, cands = fields[0], fields[1:]
        best, grid = rerank_one(
            lm, vocab, src, cands, label_set, use_total_nll=cfg.rerank.use_total_nll
        )
        selected.append(best.modern)
        pred_labels.append(best.label.name)
        out_rows.append(
            f"{src}\t{best.modern}\t{best.label.name}\t"
            f"{best.score.total_nll:.6f}\t{best.score.token_count}\t"
            f"{best.score.per_token_nll:.6f}"
        )
        if cfg.rerank.dump_grid:
            grids.append(
                json.dumps(
                    [
                        {
                            "modern": c.modern,
                            "label": c.label.name,
                            "beam_rank": c.beam_rank,
                            "valid": c.valid,
                            "per_token_nll": c.score.per_token_nll if c.valid else None,
                            "total_nll": c.score.total_nll if c.valid else None,
                        }
                        for c in grid
                    ],
                    sort_keys=True,
                )
            )
    _write_lines(paths.reranked, out_rows)
    _write_lines(paths.selected, selected)
    _write_lines(paths.pred_labels, pred_labels)
    artifacts = [paths.reranked, paths.selected, paths.pred_labels]
    if cfg.rerank.dump_grid:
        _write_lines(paths.grids, grids)
        artifacts.append(paths.grids)
    _update_manifest(paths, cfg, "rerank", artifacts)


def stage_evaluate(cfg, paths):
    _require("evaluate", "prep", paths.test)
    _require("evaluate", "translate", paths.top1)
    label_set = LabelSet(cfg.labels)
    test_set = load_parallel(paths.test, label_set)
    refs = [ex.target for ex in test_set]
    labels = [ex.label.name if ex.label else None for ex in test_set]
    hyp_top1 = _read_lines(paths.top1)
    if len(hyp_top1) != len(refs):
        raise ValidationError(
            f"translate produced {len(hyp_top1)} hypotheses for {len(refs)} references"
        )
    bleu_top1 = bleu(hyp_top1, refs, labels=labels)
    bleu_reranked = None
    classification = None
    if paths.selected.exists():
        hyp_rr = _read_lines(paths.selected)
        if len(hyp_rr) != len(refs):
            raise ValidationError(
                f"rerank produced {len(hyp_rr)} hypotheses for {len(refs)} references"
            )
        bleu_reranked = bleu(hyp_rr, refs, labels=labels)
    if paths.pred_labels.exists():
        pred = _read_lines(paths.pred_labels)
        pairs = [(g, p) for g, p in zip(labels, pred) if g is not None]
        if pairs:
            classification = classification_metrics(
                [g for g, _ in pairs], [p for _, p in pairs], label_set
            )
    report_paths = write_reports(
        paths.eval_dir, bleu_top1, bleu_reranked, classification
    )
    _update_manifest(paths, cfg, "evaluate", list(report_paths.values()))
    return bleu_top1, bleu_reranked, classification


_STAGE_FUNCS = {
    "prep": stage_prep,
    "train-mt": stage_train_mt,
    "train-lm": stage_train_lm,
    "finetune-lm": stage_finetune_lm,
    "translate": stage_translate,
    "rerank": stage_rerank,
    "evaluate": stage_evaluate,
}


def run_pipeline(cfg: RunConfig, stages=None):
    """Run the requested stages in canonical order."""
    cfg.validate()
    if stages is None:
        stages = list(STAGES)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ValidationError(f"unknown stages {unknown}; valid stages: {list(STAGES)}")
    paths = Paths(cfg.workdir)
    ordered = [s for s in STAGES if s in set(stages)]
    for stage in ordered:
        _STAGE_FUNCS[stage](cfg, paths)
    return paths
