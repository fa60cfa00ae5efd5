"""Dataset model for question groups, ingestion, and the synthetic
generator with a planted inter-subtask dependency.

The canonical on-disk format is a JSON document (schema below); a thin
adapter reads the thread-structured XML layout used by community-QA
shared tasks. Labels binarize per configurable maps: comment goodness
"Good" -> 1 and everything else 0; question relatedness "PerfectMatch"
or "Relevant" -> 1, "Irrelevant" -> 0; comment relevance to the new
question "Good" -> 1, rest 0.

JSON schema (one document per dataset):

    {"groups": [
       {"question": {"id": str, "text": str, "author": str},
        "threads": [
          {"question": {"id": str, "text": str, "author": str},
           "relatedness": str | null,        # subtask-B label
           "comments": [
             {"id": str, "text": str, "author": str,
              "goodness": str | null,        # subtask-A label
              "relevance": str | null,       # subtask-C label
              "vectors": {name: [floats]}?}  # optional inline features
           ],
           "vectors": {name: [floats]}?}],
        "vectors": {name: [floats]}?}]}

Ranks are assigned by document order: threads i = 1.. and comments
m = 1.. within their thread.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

GOODNESS_MAP = {"Good": 1, "PotentiallyUseful": 0, "Bad": 0}
RELATEDNESS_MAP = {"PerfectMatch": 1, "Relevant": 1, "Irrelevant": 0}
RELEVANCE_MAP = {"Good": 1, "PotentiallyUseful": 0, "Bad": 0}


class DatasetError(ValueError):
    """Malformed dataset content, annotated with its location."""


@dataclass
class Comment:
    id: str
    text: str
    author: str = ""
    rank: int = 0                      # chronological rank m, 1-based
    goodness: str | None = None        # raw subtask-A label
    relevance: str | None = None       # raw subtask-C label
    vectors: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Thread:
    question_id: str
    question_text: str
    question_author: str = ""
    rank: int = 0                      # retrieval rank i, 1-based
    relatedness: str | None = None     # raw subtask-B label
    comments: list[Comment] = field(default_factory=list)
    vectors: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class QuestionGroup:
    question_id: str
    question_text: str
    question_author: str = ""
    threads: list[Thread] = field(default_factory=list)
    vectors: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class LabelMaps:
    goodness: dict = field(default_factory=lambda: dict(GOODNESS_MAP))
    relatedness: dict = field(default_factory=lambda: dict(RELATEDNESS_MAP))
    relevance: dict = field(default_factory=lambda: dict(RELEVANCE_MAP))

    def binarize(self, kind: str, raw: str | None, where: str) -> int | None:
        if raw is None:
            return None
        table = getattr(self, kind)
        if raw not in table:
            raise DatasetError(f"{where}: unknown {kind} label {raw!r}")
        return table[raw]


def a_label(comment: Comment, maps: LabelMaps, where: str = "") -> int | None:
    return maps.binarize("goodness", comment.goodness, where or comment.id)


def b_label(thread: Thread, maps: LabelMaps, where: str = "") -> int | None:
    return maps.binarize("relatedness", thread.relatedness, where or thread.question_id)


def c_label(comment: Comment, maps: LabelMaps, where: str = "") -> int | None:
    return maps.binarize("relevance", comment.relevance, where or comment.id)


def _validate_groups(groups: list[QuestionGroup]) -> None:
    seen_ids: set[str] = set()
    for group in groups:
        for gid in [group.question_id] + [t.question_id for t in group.threads] + [
                c.id for t in group.threads for c in t.comments]:
            if gid in seen_ids:
                raise DatasetError(f"duplicate id {gid!r}")
            seen_ids.add(gid)
        for i, thread in enumerate(group.threads, start=1):
            if thread.rank != i:
                raise DatasetError(
                    f"group {group.question_id}: thread ranks not contiguous "
                    f"(expected {i}, found {thread.rank})")
            for m, comment in enumerate(thread.comments, start=1):
                if comment.rank != m:
                    raise DatasetError(
                        f"thread {thread.question_id}: comment ranks not contiguous")


def _vectors_from_json(obj: dict | None, where: str) -> dict[str, np.ndarray]:
    if not obj:
        return {}
    out = {}
    for name, values in obj.items():
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1:
            raise DatasetError(f"{where}: vector {name!r} is not one-dimensional")
        out[name] = arr
    return out


def _vectors_to_json(vectors: dict[str, np.ndarray]) -> dict | None:
    if not vectors:
        return None
    return {name: vec.tolist() for name, vec in sorted(vectors.items())}


def groups_from_json(doc: dict, maps: LabelMaps | None = None) -> list[QuestionGroup]:
    maps = maps or LabelMaps()
    groups = []
    for g_pos, g in enumerate(doc.get("groups", [])):
        where = f"groups[{g_pos}]"
        q = g["question"]
        group = QuestionGroup(
            question_id=str(q["id"]),
            question_text=q.get("text", ""),
            question_author=q.get("author", ""),
            vectors=_vectors_from_json(g.get("vectors"), where),
        )
        for t_pos, t in enumerate(g.get("threads", [])):
            t_where = f"{where}.threads[{t_pos}]"
            tq = t["question"]
            thread = Thread(
                question_id=str(tq["id"]),
                question_text=tq.get("text", ""),
                question_author=tq.get("author", ""),
                rank=t_pos + 1,
                relatedness=t.get("relatedness"),
                vectors=_vectors_from_json(t.get("vectors"), t_where),
            )
            maps.binarize("relatedness", thread.relatedness, t_where)
            for c_pos, c in enumerate(t.get("comments", [])):
                c_where = f"{t_where}.comments[{c_pos}]"
                comment = Comment(
                    id=str(c["id"]),
                    text=c.get("text", ""),
                    author=c.get("author", ""),
                    rank=c_pos + 1,
                    goodness=c.get("goodness"),
                    relevance=c.get("relevance"),
                    vectors=_vectors_from_json(c.get("vectors"), c_where),
                )
                maps.binarize("goodness", comment.goodness, c_where)
                maps.binarize("relevance", comment.relevance, c_where)
                thread.comments.append(comment)
            group.threads.append(thread)
        groups.append(group)
    _validate_groups(groups)
    return groups


def groups_to_json(groups: list[QuestionGroup]) -> dict:
    doc = {"groups": []}
    for group in groups:
        g = {
            "question": {"id": group.question_id, "text": group.question_text,
                         "author": group.question_author},
            "threads": [],
        }
        if group.vectors:
            g["vectors"] = _vectors_to_json(group.vectors)
        for thread in group.threads:
            t = {
                "question": {"id": thread.question_id, "text": thread.question_text,
                             "author": thread.question_author},
                "relatedness": thread.relatedness,
                "comments": [],
            }
            if thread.vectors:
                t["vectors"] = _vectors_to_json(thread.vectors)
            for comment in thread.comments:
                c = {"id": comment.id, "text": comment.text, "author": comment.author,
                     "goodness": comment.goodness, "relevance": comment.relevance}
                if comment.vectors:
                    c["vectors"] = _vectors_to_json(comment.vectors)
                t["comments"].append(c)
            g["threads"].append(t)
        doc["groups"].append(g)
    return doc


def _semeval_xml_groups(root: ET.Element) -> list[QuestionGroup]:
    """Adapter for the shared-task XML nesting: OrgQuestion elements
    (repeated per thread, same ORGQ_ID) holding Thread / RelQuestion /
    RelComment children with relevance attributes."""
    by_id: dict[str, QuestionGroup] = {}
    order: list[str] = []
    for org in root.iter("OrgQuestion"):
        org_id = org.attrib.get("ORGQ_ID", "")
        if org_id not in by_id:
            subject = org.findtext("OrgQSubject", "") or ""
            body = org.findtext("OrgQBody", "") or ""
            by_id[org_id] = QuestionGroup(
                question_id=org_id,
                question_text=(subject + " " + body).strip(),
            )
            order.append(org_id)
        group = by_id[org_id]
        for thread_el in org.iter("Thread"):
            rel_q = thread_el.find("RelQuestion")
            if rel_q is None:
                raise DatasetError(f"thread without RelQuestion under {org_id}")
            subject = rel_q.findtext("RelQSubject", "") or ""
            body = rel_q.findtext("RelQBody", "") or ""
            thread = Thread(
                question_id=rel_q.attrib.get("RELQ_ID", ""),
                question_text=(subject + " " + body).strip(),
                question_author=rel_q.attrib.get("RELQ_USERID", ""),
                rank=len(group.threads) + 1,
                relatedness=rel_q.attrib.get("RELQ_RELEVANCE2ORGQ"),
            )
            for c_el in thread_el.iter("RelComment"):
                thread.comments.append(Comment(
                    id=c_el.attrib.get("RELC_ID", ""),
                    text=c_el.findtext("RelCText", "") or "",
                    author=c_el.attrib.get("RELC_USERID", ""),
                    rank=len(thread.comments) + 1,
                    goodness=c_el.attrib.get("RELC_RELEVANCE2RELQ"),
                    relevance=c_el.attrib.get("RELC_RELEVANCE2ORGQ"),
                ))
            group.threads.append(thread)
    return [by_id[i] for i in order]


def parse_dataset(path: str, format: str = "json",
                  maps: LabelMaps | None = None) -> list[QuestionGroup]:
    """Load and validate a dataset file ("json" or "semeval_xml")."""
    maps = maps or LabelMaps()
    if format == "json":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
        return groups_from_json(doc, maps)
    if format == "semeval_xml":
        try:
            tree = ET.parse(path)
        except ET.ParseError as exc:
            raise DatasetError(f"{path}: invalid XML: {exc}")
        groups = _semeval_xml_groups(tree.getroot())
        for group in groups:
            for thread in group.threads:
                b_label(thread, maps, thread.question_id)
                for comment in thread.comments:
                    a_label(comment, maps, comment.id)
                    c_label(comment, maps, comment.id)
        _validate_groups(groups)
        return groups
    raise ValueError(f"unknown dataset format {format!r}")


def save_dataset(groups: list[QuestionGroup], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(groups_to_json(groups), fh, sort_keys=True, indent=1)
        fh.write("\n")


# --- synthetic data -----------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for the planted-dependency corpus.

    Comment goodness and thread relatedness are independent coin flips;
    comment relevance is their AND flipped with probability `noise`.
    Inline node vectors are 2-d one-hot label indicators plus Gaussian
    noise of scale `embedding_noise_sigma`, so each subtask sees its own
    label only partially and the cross-task structure carries signal.
    """

    groups: int = 100
    threads_per_group: int = 3
    comments_per_thread: int = 4
    p_a: float = 0.5
    p_b: float = 0.5
    noise: float = 0.1
    embedding_noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_a", "p_b", "noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")


_SYNTH_LABELS = {0: ("Bad", "Irrelevant", "Bad"), 1: ("Good", "PerfectMatch", "Good")}


def synth_generate(cfg: SynthConfig) -> list[QuestionGroup]:
    """Seed-deterministic synthetic question groups with inline vectors.

    Vector names: comments carry "a" and "c" indicator vectors, threads
    carry "b". Raw label strings are chosen so the default label maps
    binarize back to the planted bits.
    """
    rng = np.random.default_rng(cfg.seed)
    sigma = cfg.embedding_noise_sigma

    def indicator(bit: int) -> np.ndarray:
        base = np.array([1.0 - bit, float(bit)])
        return base + rng.normal(0.0, sigma, size=2)

    groups = []
    for g in range(cfg.groups):
        group = QuestionGroup(
            question_id=f"S{g + 1}",
            question_text="synthetic question",
        )
        for i in range(cfg.threads_per_group):
            y_b = int(rng.random() < cfg.p_b)
            thread = Thread(
                question_id=f"S{g + 1}_R{i + 1}",
                question_text="synthetic related question",
                rank=i + 1,
                relatedness=_SYNTH_LABELS[y_b][1],
                vectors={"b": indicator(y_b)},
            )
            for m in range(cfg.comments_per_thread):
                y_a = int(rng.random() < cfg.p_a)
                flip = int(rng.random() < cfg.noise)
                y_c = (y_a & y_b) ^ flip
                thread.comments.append(Comment(
                    id=f"S{g + 1}_R{i + 1}_C{m + 1}",
                    text="synthetic comment",
                    rank=m + 1,
                    goodness=_SYNTH_LABELS[y_a][0],
                    relevance=_SYNTH_LABELS[y_c][2],
                    vectors={"a": indicator(y_a), "c": indicator(y_c)},
                ))
            group.threads.append(thread)
        groups.append(group)
    return groups


# --- baseline orderings --------------------------------------------------


def baseline_orderings(group: QuestionGroup, seed: int = 0) -> dict[str, dict]:
    """Score maps for the trivial ranking baselines.

    random: a seeded permutation score for every item of each task.
    chronological (A): earliest comment in a thread scores highest.
    ir (B): threads keep their retrieval order.
    ir_chronological (C): comments ordered by (thread rank, comment rank).
    Keys are (i, m) for A/C items and i for B items.
    """
    rng = np.random.default_rng(seed)
    a_keys = [(t.rank, c.rank) for t in group.threads for c in t.comments]
    b_keys = [t.rank for t in group.threads]
    out = {
        "random": {
            "A": dict(zip(a_keys, rng.permutation(len(a_keys)).astype(float))),
            "B": dict(zip(b_keys, rng.permutation(len(b_keys)).astype(float))),
            "C": dict(zip(a_keys, rng.permutation(len(a_keys)).astype(float))),
        },
        "chronological": {
            "A": {(t.rank, c.rank): float(len(t.comments) - c.rank + 1)
                  for t in group.threads for c in t.comments},
        },
        "ir": {
            "B": {i: float(len(b_keys) - i + 1) for i in b_keys},
        },
        "ir_chronological": {
            "C": {(i, m): float(len(a_keys) - pos)
                  for pos, (i, m) in enumerate(sorted(a_keys))},
        },
    }
    return out
