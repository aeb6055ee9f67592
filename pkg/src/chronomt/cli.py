"""Command-line interface.

Exit codes: 0 success, 1 validation problem (bad flags, bad files, bad
config), 2 runtime failure such as training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig
from .corpus import (
    DEFAULT_LABEL_NAMES,
    LabelSet,
    load_mono,
    load_parallel,
    save_mono,
    save_parallel,
    split,
    stats,
)
from .errors import ChronomtError, ValidationError
from .evaluation import bleu, classification_metrics, write_reports
from .lm import CausalLM, QueryTriple, score
from .pipeline import STAGES, Paths, run_pipeline, stage_translate
from .synthetic import SyntheticConfig, SyntheticWorld, gen_synthetic
from .vocab import Vocabulary


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _label_set(arg):
    names = arg.split(",") if arg else list(DEFAULT_LABEL_NAMES)
    return LabelSet([n.strip() for n in names])


def _load_config(args):
    return RunConfig.load(args.config, args.set or [])


# -----------------------------
# corpus
# -----------------------------

def cmd_corpus_stats(args):
    if (args.parallel is None) == (args.mono is None):
        raise ValidationError("give exactly one of --parallel or --mono")
    if args.parallel:
        data = load_parallel(args.parallel, _label_set(args.labels))
    else:
        data = load_mono(args.mono, args.side)
    print(json.dumps(stats(data).to_dict(), indent=2, sort_keys=True))


def cmd_corpus_split(args):
    label_set = _label_set(args.labels)
    examples = load_parallel(args.input, label_set)
    train, dev, test = split(
        examples, args.dev_frac, args.test_frac, args.seed, stratify=args.stratify
    )
    outdir = Path(args.outdir)
    save_parallel(train, outdir / "train.tsv")
    save_parallel(dev, outdir / "dev.tsv")
    save_parallel(test, outdir / "test.tsv")
    print(
        json.dumps(
            {"train": len(train), "dev": len(dev), "test": len(test)}, sort_keys=True
        )
    )


def cmd_gen_synthetic(args):
    config = SyntheticConfig(
        vocab_size=args.vocab_size,
        len_min=args.len_min,
        len_max=args.len_max,
        marker_rate=args.marker_rate[0] if len(args.marker_rate) == 1 else args.marker_rate,
        follow_prob=args.follow_prob,
        n_parallel=args.n_parallel,
        n_unlabeled=args.n_unlabeled,
        n_mono_a=args.n_mono_a,
        n_mono_m=args.n_mono_m,
        label_names=_label_set(args.labels).names(),
    )
    parallel, mono_a, mono_m = gen_synthetic(config, args.seed)
    outdir = Path(args.outdir)
    SyntheticWorld(config, args.seed).save(outdir / "world.json")
    if args.dev_frac > 0 or args.test_frac > 0:
        train, dev, test = split(
            parallel, args.dev_frac, args.test_frac, args.seed, stratify=args.stratify
        )
        save_parallel(train, outdir / "train.tsv")
        save_parallel(dev, outdir / "dev.tsv")
        save_parallel(test, outdir / "test.tsv")
    else:
        save_parallel(parallel, outdir / "parallel.tsv")
    save_mono(mono_a, outdir / "mono_a.txt")
    save_mono(mono_m, outdir / "mono_m.txt")
    print(json.dumps({"parallel": len(parallel), "mono_a": len(mono_a), "mono_m": len(mono_m)}, sort_keys=True))


# -----------------------------
# pipeline stages
# -----------------------------

def _stage_cmd(stage):
    def run(args):
        run_pipeline(_load_config(args), [stage])

    return run


def cmd_run(args):
    stages = args.stages.split(",") if args.stages else None
    run_pipeline(_load_config(args), stages)


def cmd_translate(args):
    cfg = _load_config(args)
    cfg.validate()
    paths = Paths(cfg.workdir)
    sources = None
    if args.input:
        with open(args.input, encoding="utf-8") as f:
            sources = [line.rstrip("\n") for line in f if line.rstrip("\n")]
    rows = stage_translate(cfg, paths, sources=sources)
    if args.output:
        out = [r[1] if len(r) > 1 else "" for r in rows]
        if args.output == "-":
            for line in out:
                print(line)
        else:
            with open(args.output, "w", encoding="utf-8") as f:
                for line in out:
                    f.write(line + "\n")


def cmd_score(args):
    cfg = _load_config(args)
    paths = Paths(cfg.workdir)
    lm_path = args.lm or paths.lm_finetuned
    lm, _ = CausalLM.load(lm_path)
    vocab = Vocabulary.load(paths.vocab_joint)
    label_set = LabelSet(cfg.labels)
    rows = []
    with open(args.input, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValidationError(
                    f"{args.input}:{line_no}: expected ancient<TAB>modern<TAB>label"
                )
            a, m, label_name = fields
            triple = QueryTriple(a, m, label_set.get(label_name))
            s = score(lm, vocab, triple)
            rows.append(
                f"{a}\t{m}\t{label_name}\t{s.total_nll:.6f}\t{s.token_count}\t{s.per_token_nll:.6f}"
            )
    header = f"# scored with finetuned={str(lm.finetuned).lower()}"
    out = [header] + rows
    if args.output and args.output != "-":
        with open(args.output, "w", encoding="utf-8") as f:
            for line in out:
                f.write(line + "\n")
    else:
        for line in out:
            print(line)


def cmd_evaluate(args):
    if args.config:
        run_pipeline(_load_config(args), ["evaluate"])
        return
    if not (args.hyp and args.ref and args.outdir):
        raise ValidationError("evaluate needs --config, or --hyp/--ref/--outdir")
    with open(args.hyp, encoding="utf-8") as f:
        hyps = [line.rstrip("\n") for line in f]
    with open(args.ref, encoding="utf-8") as f:
        refs = [line.rstrip("\n") for line in f]
    classification = None
    if args.gold_labels and args.pred_labels:
        label_set = _label_set(args.labels)
        with open(args.gold_labels, encoding="utf-8") as f:
            gold = [line.strip() for line in f if line.strip()]
        with open(args.pred_labels, encoding="utf-8") as f:
            pred = [line.strip() for line in f if line.strip()]
        classification = classification_metrics(gold, pred, label_set)
    write_reports(args.outdir, bleu(hyps, refs), None, classification)


# -----------------------------
# parser
# -----------------------------

def _add_config_args(p):
    p.add_argument("--config", required=True, help="path to a run config JSON file")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config entry, e.g. --set mt.model_dim=128",
    )


def build_parser():
    parser = _Parser(prog="chronomt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="corpus utilities")
    csub = corpus.add_subparsers(dest="subcommand", required=True)
    p = csub.add_parser("stats", help="sentence/character counts as JSON")
    p.add_argument("--parallel", help="parallel TSV file")
    p.add_argument("--mono", help="monolingual text file")
    p.add_argument("--side", default="zh-a", choices=["zh-a", "zh-m"])
    p.add_argument("--labels", help="comma-separated label names")
    p.set_defaults(func=cmd_corpus_stats)
    p = csub.add_parser("split", help="seeded train/dev/test split")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--dev-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratify", action="store_true")
    p.add_argument("--labels")
    p.set_defaults(func=cmd_corpus_split)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels")
    p.add_argument("--vocab-size", type=int, default=24)
    p.add_argument("--len-min", type=int, default=4)
    p.add_argument("--len-max", type=int, default=12)
    p.add_argument("--marker-rate", type=float, nargs="+", default=[0.5])
    p.add_argument("--follow-prob", type=float, default=0.75)
    p.add_argument("--n-parallel", type=int, default=2400)
    p.add_argument("--n-unlabeled", type=int, default=0)
    p.add_argument("--n-mono-a", type=int, default=2000)
    p.add_argument("--n-mono-m", type=int, default=2000)
    p.add_argument("--dev-frac", type=float, default=0.0)
    p.add_argument("--test-frac", type=float, default=0.0)
    p.add_argument("--stratify", action="store_true")
    p.set_defaults(func=cmd_gen_synthetic)

    for stage, desc in (
        ("prep", "generate/split data and build vocabularies"),
        ("train-mt", "train the translation model"),
        ("train-lm", "pretrain the chronology LM"),
        ("finetune-lm", "finetune the LM on labeled triples"),
        ("rerank", "rerank beam candidates with the LM"),
    ):
        p = sub.add_parser(stage, help=desc)
        _add_config_args(p)
        p.set_defaults(func=_stage_cmd(stage))

    p = sub.add_parser("translate", help="beam-decode test or custom input")
    _add_config_args(p)
    p.add_argument("--input", help="file of ancient sentences (default: test split)")
    p.add_argument("--output", help="write top-1 translations here ('-' for stdout)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="score ancient/modern/label triples with the LM")
    _add_config_args(p)
    p.add_argument("--input", required=True, help="TSV: ancient<TAB>modern<TAB>label")
    p.add_argument("--output", help="output TSV path ('-' for stdout)")
    p.add_argument("--lm", help="LM checkpoint (default: workdir finetuned LM)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="BLEU and chronology metrics")
    p.add_argument("--config", help="path to a run config JSON file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--hyp", help="hypothesis file, one sentence per line")
    p.add_argument("--ref", help="reference file, one sentence per line")
    p.add_argument("--gold-labels", help="gold label names, one per line")
    p.add_argument("--pred-labels", help="predicted label names, one per line")
    p.add_argument("--labels")
    p.add_argument("--outdir", help="directory for report files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run pipeline stages in order")
    _add_config_args(p)
    p.add_argument(
        "--stages",
        help=f"comma-separated subset of {','.join(STAGES)} (default: all)",
    )
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = args.func(args)
        return 0 if result is None else result
    except SystemExit as e:
        code = e.code
        return code if isinstance(code, int) else 1
    except ValidationError as e:
        print(f"chronomt: error: {e}", file=sys.stderr)
        return 1
    except ChronomtError as e:
        print(f"chronomt: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"chronomt: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
