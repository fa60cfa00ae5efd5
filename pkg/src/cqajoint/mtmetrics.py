"""Machine-translation similarity metrics over token lists.

BLEU (with all intermediate components exposed), NIST, TER, an
exact-match METEOR variant, and unigram precision/recall. These are
used as pairwise text-similarity features, so every function is total:
degenerate inputs (empty hypothesis or reference) map to documented
fallback values instead of raising.

Conventions shared by all metrics:
  * inputs are pre-tokenized lists of strings (see features.tokenize)
  * the first argument is the hypothesis, the second the reference
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuComponents:
    """Everything BLEU computes on the way to its score, n = 1..max_n."""

    precisions: tuple[float, ...]   # clipped n-gram precisions p_n
    matches: tuple[int, ...]        # clipped n-gram match counts m_n
    totals: tuple[int, ...]         # hypothesis n-gram counts t_n
    hyp_length: int
    ref_length: int
    length_ratio: float             # hyp_length / ref_length, 0 if ref empty
    brevity_penalty: float

    def as_vector(self) -> list[float]:
        return (
            [float(p) for p in self.precisions]
            + [float(m) for m in self.matches]
            + [float(t) for t in self.totals]
            + [float(self.hyp_length), float(self.ref_length),
               self.length_ratio, self.brevity_penalty]
        )


def bleu_with_components(hyp: Tokens, ref: Tokens, max_n: int = 4) -> tuple[float, BleuComponents]:
    """Sentence BLEU without smoothing, plus its component record.

    Any zero n-gram precision zeroes the score. An empty hypothesis
    yields all-zero components with brevity penalty defined as 0.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    hyp_len, ref_len = len(hyp), len(ref)
    if hyp_len == 0:
        zeros = tuple(0 for _ in range(max_n))
        comp = BleuComponents(tuple(0.0 for _ in range(max_n)), zeros, zeros,
                              0, ref_len, 0.0, 0.0)
        return 0.0, comp

    precisions, matches, totals = [], [], []
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        m = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        t = sum(hyp_counts.values())
        matches.append(m)
        totals.append(t)
        precisions.append(m / t if t > 0 else 0.0)

    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    ratio = hyp_len / ref_len if ref_len > 0 else 0.0
    comp = BleuComponents(tuple(precisions), tuple(matches), tuple(totals),
                          hyp_len, ref_len, ratio, bp)
    if any(p == 0.0 for p in precisions):
        return 0.0, comp
    score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return score, comp


# NIST brevity factor is 0.5 when the hypothesis is 2/3 of the reference length.
_NIST_BETA = math.log(0.5) / math.log(2.0 / 3.0) ** 2


class NistScorer:
    """NIST score with information weights fitted on a reference corpus.

    info(w1..wn) = log2(count(w1..w_{n-1}) / count(w1..wn)) over the
    fitted corpus; for unigrams the numerator is the corpus token count.
    N-grams absent from the corpus carry zero information.
    """

    def __init__(self, max_n: int = 5):
        self.max_n = max_n
        self._counts: list[Counter] = [Counter() for _ in range(max_n + 1)]
        self._total_words = 0

    def fit(self, references: Sequence[Tokens]) -> "NistScorer":
        for ref in references:
            self._total_words += len(ref)
            for n in range(1, self.max_n + 1):
                self._counts[n].update(_ngrams(ref, n))
        return self

    def info(self, gram: tuple[str, ...]) -> float:
        n = len(gram)
        denom = self._counts[n][gram]
        if denom == 0:
            return 0.0
        numer = self._total_words if n == 1 else self._counts[n - 1][gram[:-1]]
        if numer == 0:
            return 0.0
        return math.log2(numer / denom)

    def to_state(self) -> dict:
        return {
            "max_n": self.max_n,
            "total_words": self._total_words,
            "counts": [
                {" ".join(g): c for g, c in sorted(self._counts[n].items())}
                for n in range(1, self.max_n + 1)
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "NistScorer":
        scorer = cls(max_n=state["max_n"])
        scorer._total_words = state["total_words"]
        for n, table in enumerate(state["counts"], start=1):
            scorer._counts[n] = Counter({tuple(k.split(" ")): v for k, v in table.items()})
        return scorer

    def score(self, hyp: Tokens, ref: Tokens) -> float:
        """Information-weighted co-occurrence score for one pair.

        Matching is clipped against the pair's reference; weights come
        from the fitted corpus. Empty hypothesis or reference gives 0.
        """
        if len(hyp) == 0 or len(ref) == 0:
            return 0.0
        total = 0.0
        for n in range(1, self.max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            denom = sum(hyp_counts.values())
            if denom == 0:
                continue
            ref_counts = _ngrams(ref, n)
            numer = sum(min(c, ref_counts[g]) * self.info(g)
                        for g, c in hyp_counts.items())
            total += numer / denom
        ratio = min(len(hyp) / len(ref), 1.0)
        brevity = math.exp(_NIST_BETA * math.log(ratio) ** 2)
        return total * brevity


def _edit_distance(a: Tokens, b: Tokens) -> int:
    """Word-level Levenshtein distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


_TER_MAX_BLOCK = 10    # longest block a shift may move
_TER_MAX_DISTANCE = 10  # furthest a block may travel


def _best_shift(hyp: list, ref: Tokens, base: int) -> tuple[int, list | None]:
    """One round of greedy block-shift search.

    Tries every contiguous hypothesis block (length <= _TER_MAX_BLOCK)
    at every landing spot within _TER_MAX_DISTANCE and keeps the move
    with the lowest resulting edit distance, accepted only on strict
    improvement over `base`.
    """
    best = base
    best_hyp = None
    n = len(hyp)
    for start in range(n):
        for length in range(1, min(_TER_MAX_BLOCK, n - start) + 1):
            block = hyp[start:start + length]
            rest = hyp[:start] + hyp[start + length:]
            for pos in range(len(rest) + 1):
                if pos == start:
                    continue
                if abs(pos - start) > _TER_MAX_DISTANCE:
                    continue
                candidate = rest[:pos] + block + rest[pos:]
                d = _edit_distance(candidate, ref)
                if d < best:
                    best = d
                    best_hyp = candidate
    return best, best_hyp


def ter(hyp: Tokens, ref: Tokens) -> float:
    """Translation edit rate: (edits + shifts) / reference length.

    Shifts are found greedily, one per round, each accepted only when it
    strictly lowers the remaining edit distance, each costing one edit.
    Conventions: both empty -> 0; empty reference with nonempty
    hypothesis -> the hypothesis length.
    """
    if len(ref) == 0:
        return float(len(hyp))
    if len(hyp) == 0:
        return 1.0  # ref_len deletions / ref_len
    current = list(hyp)
    shifts = 0
    dist = _edit_distance(current, ref)
    while dist > 0:
        dist_after, shifted = _best_shift(current, ref, dist)
        if shifted is None:
            break
        current = shifted
        dist = dist_after
        shifts += 1
    return (dist + shifts) / len(ref)


_METEOR_ALPHA = 0.9
_METEOR_BETA = 3.0
_METEOR_GAMMA = 0.5


def _align_chunks(hyp: Tokens, ref: Tokens) -> tuple[int, int]:
    """Exact-match unigram alignment; returns (matches, chunks).

    Match count is the clipped-count maximum. The alignment walks the
    hypothesis left to right, preferring the reference position that
    extends the current contiguous chunk, otherwise the earliest unused
    occurrence, and chunks are maximal runs contiguous on both sides.
    """
    positions: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        positions.setdefault(tok, []).append(j)
    used = set()
    pairs = []
    for i, tok in enumerate(hyp):
        avail = [j for j in positions.get(tok, ()) if j not in used]
        if not avail:
            continue
        target = None
        if pairs and pairs[-1][0] == i - 1:
            want = pairs[-1][1] + 1
            if want in avail:
                target = want
        if target is None:
            target = avail[0]
        used.add(target)
        pairs.append((i, target))
    matches = len(pairs)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return matches, chunks


def meteor_lite(hyp: Tokens, ref: Tokens) -> float:
    """Exact-match METEOR: harmonic mean of unigram P/R with a
    fragmentation penalty. No stemming, synonym, or paraphrase stages.
    """
    if len(hyp) == 0 or len(ref) == 0:
        return 0.0
    matches, chunks = _align_chunks(hyp, ref)
    if matches == 0:
        return 0.0
    precision = matches / len(hyp)
    recall = matches / len(ref)
    f_mean = (precision * recall
              / (_METEOR_ALPHA * precision + (1 - _METEOR_ALPHA) * recall))
    penalty = _METEOR_GAMMA * (chunks / matches) ** _METEOR_BETA
    return f_mean * (1.0 - penalty)


def unigram_pr(hyp: Tokens, ref: Tokens) -> tuple[float, float]:
    """Clipped unigram precision and recall; empty denominators give 0."""
    if len(hyp) == 0 and len(ref) == 0:
        return 0.0, 0.0
    hyp_counts, ref_counts = Counter(hyp), Counter(ref)
    overlap = sum(min(c, ref_counts[t]) for t, c in hyp_counts.items())
    precision = overlap / len(hyp) if hyp else 0.0
    recall = overlap / len(ref) if ref else 0.0
    return precision, recall
