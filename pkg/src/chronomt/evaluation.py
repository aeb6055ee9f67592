"""Character n-gram BLEU and chronology classification metrics.

BLEU here is corpus-level over character n-grams (n = 1..4, uniform
weights, clipped counts, multiplicative brevity penalty), reported on a
[0, 1] scale internally and multiplied by 100 only for presentation.
Smoothing: for n >= 2 a zero clipped count is replaced by
1 / (2 * total_n); order-1 is never smoothed, so disjoint corpora score
exactly zero.  Orders with no hypothesis n-grams at all contribute a
vacuous precision of 1, which keeps "identical corpora score 1.0" true
for very short sentences.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ValidationError

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple
    brevity_penalty: float
    hyp_chars: int
    ref_chars: int
    sentence_count: int
    matches: tuple
    totals: tuple
    per_label: Optional[dict] = None

    def to_dict(self):
        d = {
            "bleu": self.bleu,
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "hyp_chars": self.hyp_chars,
            "ref_chars": self.ref_chars,
            "sentence_count": self.sentence_count,
            "matches": list(self.matches),
            "totals": list(self.totals),
        }
        if self.per_label is not None:
            d["per_label"] = {
                name: sub.to_dict() for name, sub in self.per_label.items()
            }
        return d

    @classmethod
    def from_dict(cls, d):
        per_label = None
        if d.get("per_label") is not None:
            per_label = {
                name: cls.from_dict(sub) for name, sub in d["per_label"].items()
            }
        return cls(
            bleu=d["bleu"],
            precisions=tuple(d["precisions"]),
            brevity_penalty=d["brevity_penalty"],
            hyp_chars=d["hyp_chars"],
            ref_chars=d["ref_chars"],
            sentence_count=d["sentence_count"],
            matches=tuple(d["matches"]),
            totals=tuple(d["totals"]),
            per_label=per_label,
        )


def _ngrams(text, n):
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def _corpus_counts(hypotheses, references):
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_chars = 0
    ref_chars = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_chars += len(hyp)
        ref_chars += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(c, ref_counts[g]) for g, c in hyp_counts.items()
            )
    return matches, totals, hyp_chars, ref_chars


def _compose(matches, totals, hyp_chars, ref_chars, sentence_count, per_label=None):
    precisions = []
    for n in range(1, MAX_ORDER + 1):
        m, t = matches[n - 1], totals[n - 1]
        if t == 0:
            precisions.append(1.0)
        elif m == 0:
            precisions.append(0.0 if n == 1 else 1.0 / (2.0 * t))
        else:
            precisions.append(m / t)
    if hyp_chars == 0:
        bp = 0.0
    elif hyp_chars >= ref_chars:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_chars / hyp_chars)
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(
        bleu=score,
        precisions=tuple(precisions),
        brevity_penalty=bp,
        hyp_chars=hyp_chars,
        ref_chars=ref_chars,
        sentence_count=sentence_count,
        matches=tuple(matches),
        totals=tuple(totals),
        per_label=per_label,
    )


def bleu(hypotheses, references, labels=None):
    """Corpus BLEU; with labels, adds an identically-shaped report per label."""
    if len(hypotheses) != len(references):
        raise ValidationError(
            f"hypothesis/reference counts differ: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise ValidationError("cannot score an empty corpus")
    per_label = None
    if labels is not None:
        if len(labels) != len(hypotheses):
            raise ValidationError(
                f"label count {len(labels)} does not match corpus size {len(hypotheses)}"
            )
        groups = {}
        for hyp, ref, lab in zip(hypotheses, references, labels):
            if lab is None:
                continue
            groups.setdefault(str(lab), []).append((hyp, ref))
        per_label = {
            name: _compose(
                *_corpus_counts([h for h, _ in pairs], [r for _, r in pairs]),
                sentence_count=len(pairs),
            )
            for name, pairs in sorted(groups.items())
        }
    m, t, h, r = _corpus_counts(hypotheses, references)
    return _compose(m, t, h, r, len(hypotheses), per_label)


@dataclass(frozen=True)
class ClassificationReport:
    label_names: tuple
    confusion: tuple  # rows gold, columns predicted
    per_label: dict
    accuracy: float
    macro: dict
    weighted: dict
    total: int

    def to_dict(self):
        return {
            "label_names": list(self.label_names),
            "confusion": [list(row) for row in self.confusion],
            "per_label": {k: dict(v) for k, v in self.per_label.items()},
            "accuracy": self.accuracy,
            "macro": dict(self.macro),
            "weighted": dict(self.weighted),
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            label_names=tuple(d["label_names"]),
            confusion=tuple(tuple(row) for row in d["confusion"]),
            per_label={k: dict(v) for k, v in d["per_label"].items()},
            accuracy=d["accuracy"],
            macro=dict(d["macro"]),
            weighted=dict(d["weighted"]),
            total=d["total"],
        )


def _as_name(label):
    return label if isinstance(label, str) else label.name


def classification_metrics(gold, predicted, label_set):
    """Precision/recall/F1 per label plus accuracy, macro and weighted
    averages.  Zero denominators yield 0.0, never NaN."""
    if len(gold) != len(predicted):
        raise ValidationError(
            f"gold/predicted counts differ: {len(gold)} vs {len(predicted)}"
        )
    if not gold:
        raise ValidationError("cannot score empty predictions")
    names = label_set.names()
    k = len(names)
    index = {n: i for i, n in enumerate(names)}
    conf = [[0] * k for _ in range(k)]
    for g, p in zip(gold, predicted):
        gname, pname = _as_name(g), _as_name(p)
        if gname not in index:
            raise ValidationError(f"unknown gold label {gname!r}; known: {names}")
        if pname not in index:
            raise ValidationError(f"unknown predicted label {pname!r}; known: {names}")
        conf[index[gname]][index[pname]] += 1
    total = len(gold)
    per_label = {}
    for i, name in enumerate(names):
        tp = conf[i][i]
        pred_i = sum(conf[r][i] for r in range(k))
        gold_i = sum(conf[i])
        precision = tp / pred_i if pred_i else 0.0
        recall = tp / gold_i if gold_i else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_label[name] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": gold_i,
        }
    accuracy = sum(conf[i][i] for i in range(k)) / total

    def avg(weights):
        wsum = sum(weights)
        out = {}
        for key in ("precision", "recall", "f1"):
            vals = [per_label[n][key] for n in names]
            if wsum == 0:
                out[key] = 0.0
            else:
                out[key] = sum(v * w for v, w in zip(vals, weights)) / wsum
        return out

    macro = avg([1.0] * k)
    weighted = avg([per_label[n]["support"] for n in names])
    return ClassificationReport(
        label_names=tuple(names),
        confusion=tuple(tuple(row) for row in conf),
        per_label=per_label,
        accuracy=accuracy,
        macro=macro,
        weighted=weighted,
        total=total,
    )


# -----------------------------
# Report files
# -----------------------------

def _bleu_block(lines, title, rep):
    lines.append(f"  system: {title}")
    lines.append(f"    BLEU        {100.0 * rep.bleu:.2f}")
    lines.append(
        "    precisions  "
        + "  ".join(f"p{n} {100.0 * p:.2f}" for n, p in enumerate(rep.precisions, 1))
    )
    lines.append(
        f"    brevity     {rep.brevity_penalty:.4f}  "
        f"(hyp {rep.hyp_chars} chars, ref {rep.ref_chars} chars)"
    )
    lines.append(f"    sentences   {rep.sentence_count}")
    if rep.per_label:
        lines.append("    per label:")
        for name, sub in rep.per_label.items():
            lines.append(
                f"      {name:<12}{100.0 * sub.bleu:.2f}  ({sub.sentence_count} sentences)"
            )


def format_report(bleu_top1=None, bleu_reranked=None, classification=None):
    lines = ["character-level translation report", ""]
    if bleu_top1 is not None or bleu_reranked is not None:
        lines.append("translation quality (character 1-4 gram BLEU, x100)")
        if bleu_top1 is not None:
            _bleu_block(lines, "beam top-1", bleu_top1)
        if bleu_reranked is not None:
            _bleu_block(lines, "lm-reranked", bleu_reranked)
        lines.append("")
    if classification is not None:
        rep = classification
        lines.append("chronology inference")
        lines.append(
            f"  {'label':<14}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}"
        )
        for name in rep.label_names:
            row = rep.per_label[name]
            lines.append(
                f"  {name:<14}{row['precision']:>10.4f}{row['recall']:>10.4f}"
                f"{row['f1']:>10.4f}{row['support']:>10}"
            )
        correct = round(rep.accuracy * rep.total)
        lines.append(f"  accuracy      {rep.accuracy:.4f}  ({correct}/{rep.total})")
        lines.append(
            f"  {'macro avg':<14}{rep.macro['precision']:>10.4f}"
            f"{rep.macro['recall']:>10.4f}{rep.macro['f1']:>10.4f}{rep.total:>10}"
        )
        lines.append(
            f"  {'weighted avg':<14}{rep.weighted['precision']:>10.4f}"
            f"{rep.weighted['recall']:>10.4f}{rep.weighted['f1']:>10.4f}{rep.total:>10}"
        )
        lines.append("")
    return "\n".join(lines) + "\n"


def write_reports(outdir, bleu_top1=None, bleu_reranked=None, classification=None):
    """Write report.txt, report.json and confusion.csv; returns paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    payload = {
        "bleu_top1": bleu_top1.to_dict() if bleu_top1 else None,
        "bleu_reranked": bleu_reranked.to_dict() if bleu_reranked else None,
        "classification": classification.to_dict() if classification else None,
    }
    paths["json"] = str(outdir / "report.json")
    with open(paths["json"], "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    paths["txt"] = str(outdir / "report.txt")
    with open(paths["txt"], "w", encoding="utf-8") as f:
        f.write(format_report(bleu_top1, bleu_reranked, classification))
    if classification is not None:
        paths["confusion"] = str(outdir / "confusion.csv")
        with open(paths["confusion"], "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["gold\\pred", *classification.label_names])
            for name, row in zip(classification.label_names, classification.confusion):
                writer.writerow([name, *row])
    return paths


def load_report(path):
    """Round-trip loader for report.json."""
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    return {
        "bleu_top1": BleuReport.from_dict(payload["bleu_top1"])
        if payload.get("bleu_top1")
        else None,
        "bleu_reranked": BleuReport.from_dict(payload["bleu_reranked"])
        if payload.get("bleu_reranked")
        else None,
        "classification": ClassificationReport.from_dict(payload["classification"])
        if payload.get("classification")
        else None,
    }
