"""Text feature battery: embeddings, pairwise similarity vectors, node
features, and min-max scaling.

Slot orders are part of the contract: `PairwiseExtractor.slot_names` and
`NODE_FEATURE_SLOTS` fix the layout that downstream matrices, scalers,
and exported files rely on.

Fixed rules (documented here because no parser or external tokenizer is
in scope):

  * tokenize: lowercase; runs of [a-z0-9] (with internal apostrophes)
    are word tokens; every other non-space character is its own token.
  * sentences: split on runs of [.!?].
  * part-of-speech counts are closed-list/suffix heuristics, hence the
    `*_proxy` slot names.
  * URL:   https?://... or www....
  * email: name@host.tld
  * phone: 7+ digits allowing spaces/dashes/parens/leading +
  * image: file tokens ending .png/.jpg/.jpeg/.gif/.bmp or [img] markup
  * smileys: closed lists, e.g. :) :-D ;) =) vs. :( :'( D:
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import mtmetrics

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*|[^\sa-z0-9]")
_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")
_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_EMAIL_RE = re.compile(r"\b[\w.+-]+@[\w-]+(?:\.[\w-]+)+\b")
_PHONE_RE = re.compile(r"\+?\d(?:[\s\-()]?\d){6,}")
_IMAGE_RE = re.compile(r"\S+\.(?:png|jpe?g|gif|bmp)\b|\[/?img\]", re.IGNORECASE)
_EXCL_RUN_RE = re.compile(r"!+")
_INTERR_RUN_RE = re.compile(r"\?+")
_THANK_RE = re.compile(r"\bthank\w*\b", re.IGNORECASE)

_POSITIVE_SMILEYS = (":)", ":-)", ":d", ":-d", ";)", ";-)", "=)", ":p", ":-p", "^_^", ":]")
_NEGATIVE_SMILEYS = (":(", ":-(", ";(", ":'(", "d:", ":[", "=(", ":/", ":-/")

_PRONOUNS = frozenset("""
i you he she it we they me him her us them my your his its our their
mine yours hers ours theirs myself yourself himself herself itself
ourselves yourselves themselves this that these those who whom whose
which what anyone someone everyone nobody anybody somebody everybody
anything something everything nothing
""".split())

_VERB_LIST = frozenset("""
be am is are was were been being have has had having do does did doing
can could will would shall should may might must get got need needs
want wants know knows think thinks go goes went make makes made take
takes took see saw come came say says said ask asked tell told find
found give gave use used try tried call called work works worked help
helps helped
""".split())

_ADVERB_LIST = frozenset("""
very too quite always never often sometimes soon now then here there
well also just still already yet maybe perhaps really almost
""".split())

_ADJECTIVE_LIST = frozenset("""
good bad new old big small high low nice best better worse worst great
same other only own such free sure easy hard long short many few much
more most available possible
""".split())

_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "less", "ish", "ic", "al")
_VERB_SUFFIXES = ("ing", "ed", "ify", "ize", "ise")

POS_CLASSES = ("noun", "verb", "adjective", "adverb", "pronoun")


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation tokens; deterministic, may be empty."""
    return _TOKEN_RE.findall(text.lower())


def sentences(text: str) -> list[str]:
    """Nonempty sentence chunks split on runs of ., !, ?."""
    return [s for s in (p.strip() for p in _SENTENCE_SPLIT_RE.split(text)) if s]


def pos_proxy_class(token: str) -> str | None:
    """Heuristic word-class for an alphabetic token, None otherwise."""
    if not token.isalpha():
        return None
    if token in _PRONOUNS:
        return "pronoun"
    if token in _VERB_LIST:
        return "verb"
    if token in _ADVERB_LIST or (len(token) > 3 and token.endswith("ly")):
        return "adverb"
    if token in _ADJECTIVE_LIST or (len(token) > 4 and token.endswith(_ADJ_SUFFIXES)):
        return "adjective"
    if len(token) > 4 and token.endswith(_VERB_SUFFIXES):
        return "verb"
    return "noun"


def pos_proxy_counts(tokens: Sequence[str]) -> dict[str, int]:
    counts = {c: 0 for c in POS_CLASSES}
    for tok in tokens:
        cls = pos_proxy_class(tok)
        if cls is not None:
            counts[cls] += 1
    return counts


class EmbeddingTable:
    """Word -> vector lookup with a fixed dimension and a name.

    File format: one entry per line, whitespace separated, first field
    the word, the rest floats. The first line fixes the dimension.
    """

    def __init__(self, name: str, dimension: int, entries: Mapping[str, np.ndarray]):
        self.name = name
        self.dimension = dimension
        self.entries = dict(entries)
        for word, vec in self.entries.items():
            if vec.shape != (dimension,):
                raise ValueError(
                    f"embedding table {name!r}: entry {word!r} has length "
                    f"{vec.shape[0]}, expected {dimension}")

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    def get(self, word: str) -> np.ndarray | None:
        return self.entries.get(word.lower())

    def __len__(self) -> int:
        return len(self.entries)


def load_embedding_table(path: str, name: str | None = None) -> EmbeddingTable:
    entries: dict[str, np.ndarray] = {}
    dimension = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0].lower(), parts[1:]
            if dimension is None:
                dimension = len(values)
            elif len(values) != dimension:
                raise ValueError(
                    f"{path}:{lineno}: expected {dimension} values, got {len(values)}")
            entries[word] = np.array([float(v) for v in values])
    if dimension is None:
        raise ValueError(f"{path}: empty embedding file")
    return EmbeddingTable(name or path, dimension, entries)


def avg_embedding(tokens: Sequence[str], table: EmbeddingTable) -> tuple[np.ndarray, int]:
    """Mean vector of in-vocabulary tokens and the OOV token count.

    All-OOV or empty input falls back to the zero vector.
    """
    vecs = []
    oov = 0
    for tok in tokens:
        vec = table.get(tok)
        if vec is None:
            oov += 1
        else:
            vecs.append(vec)
    if not vecs:
        return np.zeros(table.dimension), oov
    return np.mean(vecs, axis=0), oov


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"cosine: length mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def _run_counts(text: str, pattern: re.Pattern) -> tuple[int, int, int]:
    """Counts of runs of length 1, 2, and >= 3."""
    single = double = triple = 0
    for match in pattern.finditer(text):
        n = len(match.group())
        if n == 1:
            single += 1
        elif n == 2:
            double += 1
        else:
            triple += 1
    return single, double, triple


NODE_FEATURE_SLOTS = (
    "noun_proxy", "verb_proxy", "adjective_proxy", "adverb_proxy", "pronoun_proxy",
    "urls", "images", "emails", "phones",
    "tokens", "sentences",
    "pos_smileys", "neg_smileys",
    "excl_single", "excl_double", "excl_triple",
    "interr_single", "interr_double", "interr_triple",
    "interrogative_sentences",
    "thank_mentions",
    "oov",
    "avg_token_length",
    "type_token_ratio",
    "same_author",
    "recip_rank_thread",    # 1/m
    "recip_rank_global",    # 1/[m + 10(i-1)]
    "recip_rank_question",  # 1/i
)


def node_and_meta_features(
    text: str,
    comment_rank: int,
    question_rank: int,
    comment_author: str = "",
    question_author: str = "",
    oov_table: EmbeddingTable | None = None,
) -> np.ndarray:
    """Per-comment count and rank features, ordered per NODE_FEATURE_SLOTS.

    `comment_rank` is the 1-based chronological position m inside the
    thread; `question_rank` is the 1-based retrieval position i of the
    thread. Type-token ratio of an empty text is defined as 1.
    """
    if comment_rank < 1 or question_rank < 1:
        raise ValueError("ranks are 1-based")
    tokens = tokenize(text)
    pos = pos_proxy_counts(tokens)
    excl = _run_counts(text, _EXCL_RUN_RE)
    interr = _run_counts(text, _INTERR_RUN_RE)
    sents = sentences(text)
    interrogative = sum(
        1 for m in re.finditer(r"([^.!?]*)([.!?]+)", text)
        if "?" in m.group(2) and m.group(1).strip())
    word_tokens = [t for t in tokens if t[0].isalnum()]
    if oov_table is not None:
        oov = sum(1 for t in word_tokens if t not in oov_table)
    else:
        oov = 0
    avg_len = float(np.mean([len(t) for t in word_tokens])) if word_tokens else 0.0
    ttr = len(set(tokens)) / len(tokens) if tokens else 1.0
    same_author = float(bool(comment_author) and comment_author == question_author)
    values = [
        pos["noun"], pos["verb"], pos["adjective"], pos["adverb"], pos["pronoun"],
        len(_URL_RE.findall(text)), len(_IMAGE_RE.findall(text)),
        len(_EMAIL_RE.findall(text)), len(_PHONE_RE.findall(text)),
        len(tokens), len(sents),
        _count_smileys(text, _POSITIVE_SMILEYS), _count_smileys(text, _NEGATIVE_SMILEYS),
        excl[0], excl[1], excl[2],
        interr[0], interr[1], interr[2],
        interrogative,
        len(_THANK_RE.findall(text)),
        oov,
        avg_len,
        ttr,
        same_author,
        1.0 / comment_rank,
        1.0 / (comment_rank + 10 * (question_rank - 1)),
        1.0 / question_rank,
    ]
    return np.array(values, dtype=float)


def _count_smileys(text: str, smileys: tuple[str, ...]) -> int:
    low = text.lower()
    return sum(low.count(s) for s in smileys)


QC_RATIO_SLOTS = ("sentences", "tokens") + tuple(POS_CLASSES) + ("oov",)


def qc_ratio_features(
    question_text: str,
    comment_text: str,
    oov_table: EmbeddingTable | None = None,
) -> np.ndarray:
    """Question-to-comment count ratios (0 when the comment count is 0)."""
    q_tokens, c_tokens = tokenize(question_text), tokenize(comment_text)
    q_pos, c_pos = pos_proxy_counts(q_tokens), pos_proxy_counts(c_tokens)

    def ratio(num: float, den: float) -> float:
        return num / den if den else 0.0

    values = [
        ratio(len(sentences(question_text)), len(sentences(comment_text))),
        ratio(len(q_tokens), len(c_tokens)),
    ]
    values += [ratio(q_pos[c], c_pos[c]) for c in POS_CLASSES]
    if oov_table is not None:
        q_oov = sum(1 for t in q_tokens if t[0].isalnum() and t not in oov_table)
        c_oov = sum(1 for t in c_tokens if t[0].isalnum() and t not in oov_table)
    else:
        q_oov = c_oov = 0
    values.append(ratio(q_oov, c_oov))
    return np.array(values, dtype=float)


MT_METRIC_SLOTS = ("bleu", "nist", "ter", "meteor", "unigram_precision", "unigram_recall")

BLEU_COMPONENT_SLOTS = (
    tuple(f"bleu_p{n}" for n in range(1, 5))
    + tuple(f"bleu_m{n}" for n in range(1, 5))
    + tuple(f"bleu_t{n}" for n in range(1, 5))
    + ("hyp_length", "ref_length", "length_ratio", "brevity_penalty")
)


class PairwiseExtractor:
    """Computes one pairwise similarity vector phi(reference, hypothesis).

    Slot layout (fixed order, identical for phi^a, phi^b, phi^c):
      cos_<table> per embedding table, the six MT metrics, the sixteen
      BLEU components, then the eight question-to-comment ratios.
    Within a pair the first text plays the reference/question role and
    the second the hypothesis/comment role.
    """

    def __init__(self, tables: Sequence[EmbeddingTable],
                 nist: mtmetrics.NistScorer, oov_table: EmbeddingTable | None = None):
        self.tables = list(tables)
        self.nist = nist
        self.oov_table = oov_table
        self.slot_names: tuple[str, ...] = (
            tuple(f"cos_{t.name}" for t in self.tables)
            + MT_METRIC_SLOTS + BLEU_COMPONENT_SLOTS
            + tuple(f"ratio_{s}" for s in QC_RATIO_SLOTS)
        )

    @property
    def width(self) -> int:
        return len(self.slot_names)

    def extract(self, reference_text: str, hypothesis_text: str) -> np.ndarray:
        ref = tokenize(reference_text)
        hyp = tokenize(hypothesis_text)
        parts = []
        for table in self.tables:
            ref_vec, _ = avg_embedding(ref, table)
            hyp_vec, _ = avg_embedding(hyp, table)
            parts.append(cosine(ref_vec, hyp_vec))
        bleu, comp = mtmetrics.bleu_with_components(hyp, ref)
        precision, recall = mtmetrics.unigram_pr(hyp, ref)
        parts += [
            bleu,
            self.nist.score(hyp, ref),
            mtmetrics.ter(hyp, ref),
            mtmetrics.meteor_lite(hyp, ref),
            precision,
            recall,
        ]
        parts += comp.as_vector()
        vec = np.array(parts, dtype=float)
        ratios = qc_ratio_features(reference_text, hypothesis_text, self.oov_table)
        return np.concatenate([vec, ratios])


class MinMaxScaler:
    """Per-slot min-max scaling fitted on training rows.

    Constant slots scale to 0; out-of-range values are clamped to [0,1].
    """

    def __init__(self, mins: np.ndarray, maxs: np.ndarray):
        if mins.shape != maxs.shape or np.any(mins > maxs):
            raise ValueError("invalid scaler bounds")
        self.mins = mins
        self.maxs = maxs

    @classmethod
    def fit(cls, rows: np.ndarray) -> "MinMaxScaler":
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise ValueError("fit requires a nonempty 2-d row matrix")
        return cls(rows.min(axis=0), rows.max(axis=0))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if rows.shape[-1] != self.mins.shape[0]:
            raise ValueError(
                f"scaler width {self.mins.shape[0]} does not match row width {rows.shape[-1]}")
        span = self.maxs - self.mins
        safe = np.where(span == 0.0, 1.0, span)
        scaled = (rows - self.mins) / safe
        scaled = np.where(span == 0.0, 0.0, scaled)
        return np.clip(scaled, 0.0, 1.0)

    def to_state(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "MinMaxScaler":
        return cls(np.array(state["mins"], dtype=float),
                   np.array(state["maxs"], dtype=float))


def assemble_pairwise(
    extractor: PairwiseExtractor,
    new_question: str,
    related_question: str,
    comment: str,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three pairwise vectors for one (q, q_i, c) triple.

    phi^a compares the related question with the comment, phi^b the two
    questions, phi^c the new question with the comment.
    """
    phi_a = extractor.extract(related_question, comment)
    phi_b = extractor.extract(new_question, related_question)
    phi_c = extractor.extract(new_question, comment)
    return phi_a, phi_b, phi_c


def write_feature_matrix(path: str, header: Sequence[str], ids: Sequence[Sequence],
                         matrix: np.ndarray) -> None:
    """Tab-separated export with a header row naming every slot."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] != len(ids):
        raise ValueError("row count mismatch between ids and matrix")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for key, row in zip(ids, matrix):
            cells = [str(k) for k in key] + [repr(float(v)) for v in row]
            fh.write("\t".join(cells) + "\n")


def read_feature_matrix(path: str, id_columns: int) -> tuple[list[str], list[tuple], np.ndarray]:
    """Inverse of write_feature_matrix; floats round-trip exactly."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        ids, rows = [], []
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            ids.append(tuple(cells[:id_columns]))
            rows.append([float(v) for v in cells[id_columns:]])
    matrix = np.array(rows, dtype=float) if rows else np.zeros((0, len(header) - id_columns))
    return header, ids, matrix
