"""Lexical and semantic caption-quality metrics.

BLEU is corpus-level with per-image multi-reference clipping and the
standard brevity penalty. ROUGE-L is the beta=1.2 LCS F-measure, METEOR is
a lite variant (Porter stems plus a pluggable synonym table instead of a
lexical database), and embedding similarity takes the maximum cosine over
reference captions. Every metric takes the max over references where the
convention calls for it and is invariant to reference order.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .stemmer import porter_stem

LEXICAL_METRICS = ("b1", "b2", "b3", "b4", "meteor", "rouge_l")
ROUGE_BETA = 1.2
METEOR_PENALTY_WEIGHT = 0.5
METEOR_PENALTY_POWER = 3.0


@dataclass(frozen=True)
class CaptionSet:
    """Generated candidates plus references for one (record, variant)."""

    record_id: str
    variant: str
    candidates: tuple[str, ...]
    references: tuple[str, ...]
    # model_tag -> vector for the scored candidate / list of reference vectors
    candidate_embeddings: dict = field(default_factory=dict)
    reference_embeddings: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.candidates:
            raise ValueError(f"record {self.record_id}: candidates must be non-empty")
        for tag, vec in self.candidate_embeddings.items():
            _check_unit(np.asarray(vec, dtype=np.float64), f"candidate[{tag}]")
        for tag, vecs in self.reference_embeddings.items():
            for i, vec in enumerate(vecs):
                _check_unit(np.asarray(vec, dtype=np.float64), f"ref:{i}[{tag}]")


def _check_unit(vec: np.ndarray, label: str) -> None:
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"embedding {label} has norm {norm}, expected 1 +- 1e-6")


@dataclass(frozen=True)
class CaptionConfig:
    candidate_rule: str = "first"  # or "max": per-image best by sentence score
    synonym_table: tuple = ()  # pairs of (word, synonym)

    def synonyms(self) -> dict[str, set[str]]:
        table: dict[str, set[str]] = {}
        for a, b in self.synonym_table:
            table.setdefault(a, set()).add(b)
            table.setdefault(b, set()).add(a)
        return table


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation.

    Intra-word hyphens and apostrophes survive; edge punctuation of any kind
    (including hyphens/apostrophes) is stripped. Tokens emptied by stripping
    are dropped.
    """
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and unicodedata.category(raw[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return tokens


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_counts(cand: list[str], refs: list[list[str]], n: int) -> tuple[int, int]:
    cand_counts = _ngrams(cand, n)
    if not cand_counts:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in refs:
        for gram, cnt in _ngrams(ref, n).items():
            if cnt > max_ref[gram]:
                max_ref[gram] = cnt
    clipped = sum(min(cnt, max_ref[gram]) for gram, cnt in cand_counts.items())
    return clipped, sum(cand_counts.values())


def _closest_ref_length(cand_len: int, refs: list[list[str]]) -> int:
    # closest reference length; ties broken toward the shorter reference
    return min((abs(len(r) - cand_len), len(r)) for r in refs)[1]


def _sentence_bleu(cand: list[str], refs: list[list[str]], n: int) -> float:
    log_sum = 0.0
    for order in range(1, n + 1):
        clipped, total = _clipped_counts(cand, refs, order)
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    r = _closest_ref_length(len(cand), refs)
    bp = 1.0 if len(cand) > r else math.exp(1.0 - r / len(cand)) if cand else 0.0
    return bp * math.exp(log_sum / n)


def select_candidate(cset: CaptionSet, n: int, config: CaptionConfig) -> int:
    """Index of the candidate scored for lexical metrics."""
    if config.candidate_rule == "first":
        return 0
    if config.candidate_rule == "max":
        refs = [tokenize(r) for r in cset.references]
        scores = [
            _sentence_bleu(tokenize(c), refs, n) for c in cset.candidates
        ]
        return int(np.argmax(scores))  # ties go to the first candidate
    raise ValueError(f"unknown candidate rule {config.candidate_rule!r}")


def bleu_n(corpus: list[CaptionSet], n: int, config: CaptionConfig = CaptionConfig()) -> float:
    """Corpus-level BLEU-n, no smoothing."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    if not corpus:
        raise ValueError("empty corpus")
    clipped_total = [0] * n
    count_total = [0] * n
    cand_len = 0
    ref_len = 0
    for cset in corpus:
        if not cset.references:
            raise ValueError(f"record {cset.record_id}: references must be non-empty")
        cand = tokenize(cset.candidates[select_candidate(cset, n, config)])
        refs = [tokenize(r) for r in cset.references]
        for order in range(1, n + 1):
            clipped, total = _clipped_counts(cand, refs, order)
            clipped_total[order - 1] += clipped
            count_total[order - 1] += total
        cand_len += len(cand)
        ref_len += _closest_ref_length(len(cand), refs)
    log_sum = 0.0
    for order in range(n):
        if clipped_total[order] == 0 or count_total[order] == 0:
            return 0.0
        log_sum += math.log(clipped_total[order] / count_total[order])
    if cand_len == 0:
        return 0.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / n)


def bleu_modified_precision(cand: list[str], refs: list[list[str]], n: int) -> float:
    """Clipped n-gram precision for one sentence (the BLEU-n numerator rule)."""
    clipped, total = _clipped_counts(cand, refs, n)
    return clipped / total if total else 0.0


def lcs_length(a: list[str], b: list[str]) -> int:
    """Dynamic-programming longest common subsequence length."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        curr = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[len(b)]


def rouge_l(candidate: list[str], references: list[list[str]], beta: float = ROUGE_BETA) -> float:
    """LCS F-measure with recall weighted by beta, max over references."""
    if not references:
        raise ValueError("empty reference set")
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0 or not candidate or not ref:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        f = (1.0 + beta * beta) * p * r / (r + beta * beta * p)
        best = max(best, f)
    return best


def _meteor_align(cand: list[str], ref: list[str], synonyms: dict[str, set[str]]):
    """Staged unigram alignment: exact, then stem, then synonym table.

    Greedy left-to-right within each stage; each token matches at most once.
    Returns matched (cand_pos, ref_pos) pairs sorted by candidate position.
    """
    cand_free = [True] * len(cand)
    ref_free = [True] * len(ref)
    pairs: list[tuple[int, int]] = []

    def run_stage(match_fn):
        for ci, ctok in enumerate(cand):
            if not cand_free[ci]:
                continue
            for ri, rtok in enumerate(ref):
                if ref_free[ri] and match_fn(ctok, rtok):
                    pairs.append((ci, ri))
                    cand_free[ci] = False
                    ref_free[ri] = False
                    break

    run_stage(lambda c, r: c == r)
    run_stage(lambda c, r: porter_stem(c) == porter_stem(r))
    if synonyms:
        run_stage(lambda c, r: r in synonyms.get(c, ()) or c in synonyms.get(r, ()))
    return sorted(pairs)


def _meteor_chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for ci, ri in pairs:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            chunks += 1
        prev = (ci, ri)
    return chunks


def meteor_lite(candidate: list[str], references: list[list[str]],
                synonym_table: dict[str, set[str]] | None = None) -> float:
    """METEOR with Porter stems and an optional synonym table, max over refs.

    F = 10PR / (R + 9P); penalty = 0.5 * (chunks / matches)^3.
    """
    synonyms = synonym_table or {}
    best = 0.0
    for ref in references:
        if not candidate or not ref:
            continue
        pairs = _meteor_align(candidate, ref, synonyms)
        m = len(pairs)
        if m == 0:
            continue
        p = m / len(candidate)
        r = m / len(ref)
        f = 10.0 * p * r / (r + 9.0 * p)
        penalty = METEOR_PENALTY_WEIGHT * (_meteor_chunks(pairs) / m) ** METEOR_PENALTY_POWER
        best = max(best, f * (1.0 - penalty))
    return best


def embed_similarity(candidate_vec, reference_vecs) -> float:
    """Max cosine (dot product of unit vectors) over reference embeddings."""
    cand = np.asarray(candidate_vec, dtype=np.float64)
    refs = [np.asarray(v, dtype=np.float64) for v in reference_vecs]
    if not refs:
        raise ValueError("empty references")
    for vec in refs:
        if vec.shape != cand.shape:
            raise ValueError(f"dimension mismatch: {vec.shape} vs {cand.shape}")
    return max(float(cand @ vec) for vec in refs)


@dataclass(frozen=True)
class CaptionScores:
    b1: float
    b2: float
    b3: float
    b4: float
    meteor: float
    rouge_l: float
    embed_sim: dict = field(default_factory=dict)  # model_tag -> mean max-cosine

    def as_dict(self) -> dict:
        out = {
            "b1": self.b1, "b2": self.b2, "b3": self.b3, "b4": self.b4,
            "meteor": self.meteor, "rouge_l": self.rouge_l,
        }
        for tag in sorted(self.embed_sim):
            out[f"embed_{tag}"] = self.embed_sim[tag]
        return out


def aggregate_caption_scores(corpus: list[CaptionSet], config: CaptionConfig = CaptionConfig()):
    """Per-variant corpus scores, plus warnings for uneven variant coverage.

    Returns (dict variant -> CaptionScores, warnings list). BLEU is corpus
    level; ROUGE-L, METEOR, and embedding similarity are means of per-image
    maxima over references.
    """
    by_variant: dict[str, list[CaptionSet]] = {}
    for cset in corpus:
        by_variant.setdefault(cset.variant, []).append(cset)

    warnings = []
    record_ids = {c.record_id for c in corpus}
    for variant, sets in sorted(by_variant.items()):
        missing = record_ids - {c.record_id for c in sets}
        if missing:
            warnings.append(
                f"variant {variant}: missing caption sets for records {sorted(missing)}"
            )

    synonyms = config.synonyms()
    out: dict[str, CaptionScores] = {}
    for variant, sets in sorted(by_variant.items()):
        sets = sorted(sets, key=lambda c: c.record_id)
        rouge_vals, meteor_vals = [], []
        embed_vals: dict[str, list[float]] = {}
        for cset in sets:
            if not cset.references:
                raise ValueError(f"record {cset.record_id}: references must be non-empty")
            cand = tokenize(cset.candidates[select_candidate(cset, 4, config)])
            refs = [tokenize(r) for r in cset.references]
            rouge_vals.append(rouge_l(cand, refs))
            meteor_vals.append(meteor_lite(cand, refs, synonyms))
            for tag, vec in sorted(cset.candidate_embeddings.items()):
                ref_vecs = cset.reference_embeddings.get(tag, ())
                if ref_vecs:
                    embed_vals.setdefault(tag, []).append(embed_similarity(vec, ref_vecs))
        out[variant] = CaptionScores(
            b1=bleu_n(sets, 1, config),
            b2=bleu_n(sets, 2, config),
            b3=bleu_n(sets, 3, config),
            b4=bleu_n(sets, 4, config),
            meteor=float(np.mean(meteor_vals)),
            rouge_l=float(np.mean(rouge_vals)),
            embed_sim={tag: float(np.mean(vals)) for tag, vals in embed_vals.items()},
        )
    return out, warnings
