"""Document model, CoNLL-2012 parsing, JSONL serialization and synthetic data.

Token indices are document-global; sentence boundaries are kept as the
nested ``sentences`` lists. Spans are inclusive (start, end) pairs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "CorpusError",
    "Document",
    "SynthConfig",
    "parse_conll",
    "parse_conll_lines",
    "write_jsonl",
    "read_jsonl",
    "generate_synthetic",
    "PRONOUNS",
]


class CorpusError(ValueError):
    """Malformed corpus input; carries a human-readable location."""


@dataclass
class Document:
    doc_key: str
    genre: str
    sentences: list[list[str]]
    speakers: list[list[str]]
    gold_clusters: list[tuple[tuple[int, int], ...]]

    def __post_init__(self):
        self.validate()

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    @property
    def tokens(self) -> list[str]:
        return [t for sent in self.sentences for t in sent]

    @property
    def flat_speakers(self) -> list[str]:
        return [s for sent in self.speakers for s in sent]

    def sentence_bounds(self) -> list[tuple[int, int]]:
        """Document-global (start, end) inclusive bounds per sentence."""
        bounds = []
        offset = 0
        for sent in self.sentences:
            bounds.append((offset, offset + len(sent) - 1))
            offset += len(sent)
        return bounds

    def validate(self) -> None:
        n = self.n_tokens
        if len(self.speakers) != len(self.sentences) or any(
            len(a) != len(b) for a, b in zip(self.speakers, self.sentences)
        ):
            raise CorpusError(f"{self.doc_key}: speakers do not align with sentences")
        seen: dict[tuple[int, int], int] = {}
        normalized = []
        for ci, cluster in enumerate(self.gold_clusters):
            spans = tuple(sorted((int(s), int(e)) for s, e in cluster))
            if len(set(spans)) != len(spans):
                raise CorpusError(f"{self.doc_key}: duplicate span in cluster {ci}")
            for s, e in spans:
                if not (0 <= s <= e < n):
                    raise CorpusError(
                        f"{self.doc_key}: span ({s}, {e}) outside document of {n} tokens"
                    )
                if (s, e) in seen:
                    raise CorpusError(
                        f"{self.doc_key}: span ({s}, {e}) in clusters {seen[(s, e)]} and {ci}"
                    )
                seen[(s, e)] = ci
            normalized.append(spans)
        self.gold_clusters = normalized

    def to_json(self) -> dict:
        return {
            "doc_key": self.doc_key,
            "genre": self.genre,
            "sentences": self.sentences,
            "speakers": self.speakers,
            "clusters": [[list(span) for span in cluster] for cluster in self.gold_clusters],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Document":
        required = {"doc_key", "genre", "sentences", "speakers", "clusters"}
        missing = required - obj.keys()
        if missing:
            raise CorpusError(f"document record missing fields: {sorted(missing)}")
        return cls(
            doc_key=obj["doc_key"],
            genre=obj["genre"],
            sentences=[list(s) for s in obj["sentences"]],
            speakers=[list(s) for s in obj["speakers"]],
            gold_clusters=[
                tuple((int(s), int(e)) for s, e in cluster) for cluster in obj["clusters"]
            ],
        )


# ---------------------------------------------------------------------------
# CoNLL-2012 column format
# ---------------------------------------------------------------------------

_BEGIN_RE = re.compile(r"#begin document \(([^)]*)\)(?:;\s*part\s+(\d+))?")
_COREF_ITEM_RE = re.compile(r"^(\((\d+))$|^((\d+)\))$|^(\((\d+)\))$")

# Columns (1-based): 1 doc id, 2 part, 3 token index, 4 word, 10 speaker,
# last coreference. Anything with fewer columns than speaker+coref is junk.
_MIN_COLUMNS = 11


def parse_conll(path) -> list[Document]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_conll_lines(fh, source=str(path))


def parse_conll_lines(lines, source: str = "<input>") -> list[Document]:
    docs: list[Document] = []
    in_doc = False
    doc_id = ""
    part = ""
    sentences: list[list[str]] = []
    speakers: list[list[str]] = []
    cur_tokens: list[str] = []
    cur_speakers: list[str] = []
    open_spans: dict[int, list[int]] = {}
    clusters: dict[int, list[tuple[int, int]]] = {}
    tok_idx = 0

    def fail(lineno: int, msg: str):
        raise CorpusError(f"{source}:{lineno}: {msg}")

    def flush_sentence():
        nonlocal cur_tokens, cur_speakers
        if cur_tokens:
            sentences.append(cur_tokens)
            speakers.append(cur_speakers)
            cur_tokens = []
            cur_speakers = []

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        stripped = line.strip()
        if stripped.startswith("#begin document"):
            m = _BEGIN_RE.match(stripped)
            if not m:
                fail(lineno, f"unparseable begin line: {stripped!r}")
            in_doc = True
            doc_id = m.group(1)
            part = m.group(2) or "0"
            sentences, speakers = [], []
            cur_tokens, cur_speakers = [], []
            open_spans, clusters = {}, {}
            tok_idx = 0
            continue
        if stripped.startswith("#end document"):
            if not in_doc:
                fail(lineno, "end without begin")
            flush_sentence()
            dangling = [cid for cid, stack in open_spans.items() if stack]
            if dangling:
                fail(lineno, f"unbalanced coreference brackets for clusters {sorted(dangling)}")
            doc_key = f"{doc_id}_{int(part):03d}"
            genre = doc_id.split("/")[0] if "/" in doc_id else doc_id
            docs.append(
                Document(
                    doc_key=doc_key,
                    genre=genre,
                    sentences=sentences,
                    speakers=speakers,
                    gold_clusters=[tuple(spans) for _, spans in sorted(clusters.items())],
                )
            )
            in_doc = False
            continue
        if stripped.startswith("#"):
            continue
        if not stripped:
            flush_sentence()
            continue
        if not in_doc:
            fail(lineno, "token line outside any document block")
        cols = stripped.split()
        if len(cols) < _MIN_COLUMNS:
            fail(lineno, f"expected at least {_MIN_COLUMNS} columns, got {len(cols)}")
        word = cols[3]
        speaker = cols[9]
        coref = cols[-1]
        cur_tokens.append(word)
        cur_speakers.append(speaker)
        if coref != "-":
            for item in coref.split("|"):
                m = _COREF_ITEM_RE.match(item)
                if not m:
                    fail(lineno, f"unparseable coreference field item {item!r}")
                if m.group(5) is not None:  # (N)
                    cid = int(m.group(6))
                    clusters.setdefault(cid, []).append((tok_idx, tok_idx))
                elif m.group(1) is not None:  # (N
                    cid = int(m.group(2))
                    open_spans.setdefault(cid, []).append(tok_idx)
                else:  # N)
                    cid = int(m.group(4))
                    stack = open_spans.get(cid)
                    if not stack:
                        fail(lineno, f"closing bracket for cluster {cid} with no opener")
                    start = stack.pop()
                    clusters.setdefault(cid, []).append((start, tok_idx))
        tok_idx += 1

    if in_doc:
        raise CorpusError(f"{source}: file ended inside a document block")
    return docs


# ---------------------------------------------------------------------------
# internal JSONL format
# ---------------------------------------------------------------------------


def write_jsonl(docs: list[Document], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_json(), sort_keys=True))
            fh.write("\n")


def read_jsonl(path) -> list[Document]:
    path = Path(path)
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            docs.append(Document.from_json(obj))
    return docs


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

# Distinct leading letters: the generator uses the initial as an agreement
# class shared between a pronoun and the names it can refer to.
PRONOUNS = ["he", "she", "it", "they", "you", "me"]


@dataclass
class SynthConfig:
    vocab_size: int = 50
    n_docs: int = 100
    entities_per_doc: int = 3
    mentions_per_entity: int = 4
    pronoun_rate: float = 0.5
    seed: int = 0
    name_width_max: int = 1

    def __post_init__(self):
        if min(self.vocab_size, self.n_docs, self.entities_per_doc,
               self.mentions_per_entity, self.name_width_max) < 1:
            raise CorpusError("all synthetic counts must be positive")
        if not 0.0 <= self.pronoun_rate <= 1.0:
            raise CorpusError(f"pronoun_rate {self.pronoun_rate} outside [0, 1]")


def _width_weights(max_width: int) -> np.ndarray:
    # Narrow names dominate so detection difficulty grows with width.
    w = np.array([2.0 ** (-(k - 1) / 3.0) for k in range(1, max_width + 1)])
    return w / w.sum()


def generate_synthetic(cfg: SynthConfig) -> list[Document]:
    """Seed-deterministic corpus of entity chains.

    Each entity is introduced by a unique multi-token name and referenced
    later by the same name or by its pronoun. Names carry a fixed pronoun
    class corpus-wide (an agreement cue, like grammatical gender), and the
    entities of one document use distinct pronoun classes, so pronoun
    reference is resolvable from content plus proximity. Mentions come in
    short same-entity bursts, so an anaphor's previous mention is usually
    close by, the way pronouns behave in real text. Filler tokens are
    disjoint from mention tokens, so gold clusters cover exactly the
    emitted mention spans.
    """
    rng = np.random.default_rng(cfg.seed)
    pool_size = max(cfg.entities_per_doc, len(PRONOUNS)) * 3
    pool_class = [k % len(PRONOUNS) for k in range(pool_size)]
    # A name starts with its pronoun's initial, the agreement cue the
    # hashed embeddings expose as a shared sub-word direction.
    name_pool = [f"{PRONOUNS[pool_class[k]][0]}n{k}" for k in range(pool_size)]
    fillers = [f"w{k}" for k in range(cfg.vocab_size)]
    width_p = _width_weights(cfg.name_width_max)
    docs = []
    for d in range(cfg.n_docs):
        classes = rng.permutation(len(PRONOUNS))[: min(cfg.entities_per_doc, len(PRONOUNS))]
        base_names = []
        for e in range(cfg.entities_per_doc):
            cls = int(classes[e % len(classes)])
            candidates = [
                k for k in range(pool_size)
                if pool_class[k] == cls and k not in base_names
            ]
            base_names.append(int(rng.choice(candidates)))
        ent_names: list[list[str]] = []
        for e in range(cfg.entities_per_doc):
            width = 1 + int(rng.choice(cfg.name_width_max, p=width_p))
            stem = name_pool[base_names[e]]
            ent_names.append([stem] + [f"{stem}x{k}" for k in range(1, width)])
        ent_pron = [PRONOUNS[pool_class[base_names[e]]] for e in range(cfg.entities_per_doc)]

        # Per-entity mention scripts: introduction by name, then name/pronoun.
        scripts: list[list[list[str]]] = []
        for e in range(cfg.entities_per_doc):
            script = [ent_names[e]]
            for _ in range(cfg.mentions_per_entity - 1):
                if rng.random() < cfg.pronoun_rate:
                    script.append([ent_pron[e]])
                else:
                    script.append(ent_names[e])
            scripts.append(script)

        # Emit mentions in bursts of one entity at a time so consecutive
        # same-entity mentions stay adjacent in mention order.
        remaining = [len(s) for s in scripts]
        order: list[int] = []
        while any(remaining):
            weights = np.array(remaining, dtype=np.float64)
            pick = int(rng.choice(cfg.entities_per_doc, p=weights / weights.sum()))
            burst = min(remaining[pick], 1 + int(rng.integers(1, 3)))
            order.extend([pick] * burst)
            remaining[pick] -= burst
        cursors = [0] * cfg.entities_per_doc

        sentences: list[list[str]] = []
        speakers: list[list[str]] = []
        spans: dict[int, list[tuple[int, int]]] = {e: [] for e in range(cfg.entities_per_doc)}
        tok = 0
        i = 0
        while i < len(order):
            sent: list[str] = []
            for _ in range(int(rng.integers(1, 3))):  # 1-2 mentions per sentence
                if i >= len(order):
                    break
                ent = order[i]
                mention = scripts[ent][cursors[ent]]
                cursors[ent] += 1
                i += 1
                for _ in range(int(rng.integers(1, 3))):
                    sent.append(fillers[int(rng.integers(cfg.vocab_size))])
                start = tok + len(sent)
                sent.extend(mention)
                spans[ent].append((start, start + len(mention) - 1))
            if rng.random() < 0.5:
                sent.append(fillers[int(rng.integers(cfg.vocab_size))])
            speaker = f"spk{int(rng.integers(2))}"
            speakers.append([speaker] * len(sent))
            sentences.append(sent)
            tok += len(sent)

        docs.append(
            Document(
                doc_key=f"synth/doc_{d:04d}_000",
                genre="synth",
                sentences=sentences,
                speakers=speakers,
                gold_clusters=[tuple(spans[e]) for e in range(cfg.entities_per_doc)],
            )
        )
    return docs
