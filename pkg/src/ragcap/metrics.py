"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L and CIDEr-D.

All metrics share :func:`ragcap.encoder.tokenize`. CIDEr-D skips Porter
stemming, so absolute values are not comparable with the coco-caption
toolkit on natural text.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder import tokenize

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalPair:
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "candidate", tuple(self.candidate))
        object.__setattr__(self, "references", tuple(tuple(r) for r in self.references))
        if not self.references:
            raise MetricError("an evaluation pair needs at least one reference")

    @classmethod
    def from_text(cls, candidate: str, references: Sequence[str]) -> "EvalPair":
        return cls(tuple(tokenize(candidate)), tuple(tuple(tokenize(r)) for r in references))


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check(pairs: Sequence[EvalPair]) -> None:
    if not pairs:
        raise MetricError("no evaluation pairs")


def bleu(pairs: Sequence[EvalPair], n: int = 4) -> float:
    """Corpus BLEU-n, unsmoothed, closest-reference brevity penalty."""
    _check(pairs)
    if not 1 <= n <= 4:
        raise MetricError(f"BLEU order must be in 1..4, got {n}")
    matched = [0] * n
    total = [0] * n
    cand_len = ref_len = 0
    for p in pairs:
        c = len(p.candidate)
        cand_len += c
        # closest reference length, shorter one on ties
        ref_len += min((abs(len(r) - c), len(r)) for r in p.references)[1]
        for k in range(1, n + 1):
            cand = ngrams(p.candidate, k)
            max_ref: Counter = Counter()
            for r in p.references:
                max_ref |= ngrams(r, k)
            matched[k - 1] += sum(min(cnt, max_ref[g]) for g, cnt in cand.items())
            total[k - 1] += max(c - k + 1, 0)
    if cand_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(p: EvalPair, beta: float = ROUGE_BETA) -> float:
    best = 0.0
    for ref in p.references:
        lcs = lcs_length(p.candidate, ref)
        if lcs == 0:
            continue
        prec = lcs / len(p.candidate)
        rec = lcs / len(ref)
        f = (1 + beta**2) * prec * rec / (rec + beta**2 * prec)
        best = max(best, f)
    return best


def rouge_l(pairs: Sequence[EvalPair]) -> float:
    _check(pairs)
    return float(np.mean([rouge_l_pair(p) for p in pairs]))


def _tfidf(tokens: Sequence[str], df: Counter, log_n: float):
    vecs, norms = [], []
    for n in range(1, CIDER_MAX_N + 1):
        vec = {g: tf * (log_n - math.log(max(1.0, df[g]))) for g, tf in ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms, len(tokens)


def cider_d_scores(pairs: Sequence[EvalPair], sigma: float = CIDER_SIGMA) -> list[float]:
    """Per-pair CIDEr-D (already multiplied by 10)."""
    if len(pairs) < 2:
        raise MetricError("idf undefined: CIDEr-D needs at least 2 pairs")
    df: Counter = Counter()
    for p in pairs:
        seen = set()
        for r in p.references:
            for n in range(1, CIDER_MAX_N + 1):
                seen.update(ngrams(r, n))
        df.update(seen)
    log_n = math.log(float(len(pairs)))
    out = []
    for p in pairs:
        hv, hn, hl = _tfidf(p.candidate, df, log_n)
        acc = np.zeros(CIDER_MAX_N)
        for r in p.references:
            rv, rn, rl = _tfidf(r, df, log_n)
            penalty = math.exp(-((hl - rl) ** 2) / (2 * sigma**2))
            for n in range(CIDER_MAX_N):
                if hn[n] == 0 or rn[n] == 0:
                    continue
                dot = sum(min(w, rv[n][g]) * rv[n][g] for g, w in hv[n].items() if g in rv[n])
                acc[n] += dot / (hn[n] * rn[n]) * penalty
        out.append(float(acc.mean() / len(p.references) * 10.0))
    return out


def cider_d(pairs: Sequence[EvalPair]) -> float:
    return float(np.mean(cider_d_scores(pairs)))


@dataclass(frozen=True)
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider_d: float
    pair_count: int

    METRICS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider_d")

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in self.METRICS}

    def to_csv(self) -> str:
        lines = ["metric,value"]
        lines += [f"{m},{getattr(self, m):.4f}" for m in self.METRICS]
        lines.append(f"pair_count,{self.pair_count}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        rows = [ln.split(",") for ln in text.strip().splitlines()]
        if rows[0] != ["metric", "value"]:
            raise MetricError("bad report header")
        vals = {k: v for k, v in rows[1:]}
        return cls(*(float(vals[m]) for m in cls.METRICS), pair_count=int(vals["pair_count"]))

    def table(self) -> str:
        head = " ".join(f"{m:>8}" for m in self.METRICS)
        body = " ".join(f"{getattr(self, m):>8.4f}" for m in self.METRICS)
        return f"{head}\n{body}\n(pairs: {self.pair_count})"


def evaluate_corpus(pairs: Sequence[EvalPair]) -> MetricReport:
    if len(pairs) < 2:
        raise MetricError("need at least 2 pairs to evaluate a corpus")
    return MetricReport(
        bleu1=bleu(pairs, 1), bleu2=bleu(pairs, 2), bleu3=bleu(pairs, 3), bleu4=bleu(pairs, 4),
        rouge_l=rouge_l(pairs), cider_d=cider_d(pairs), pair_count=len(pairs),
    )
