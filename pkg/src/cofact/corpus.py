"""Synthetic faithfulness corpus.

Each document opens with a topic header, states one or two facts about the
topic, and mixes in distractor sentences that reuse the same relations with
different subjects and conflicting objects. The reference summary verbalizes
only the topic facts, so an attention-confused decoder that picks up a
distractor object produces a detectable factual error.

The sentence grammar is closed: every fact sentence matches exactly one
relation pattern, which makes triple extraction exact by construction.
"""

from __future__ import annotations

import dataclasses
import random
import zlib
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, GenerationError
from .utils import read_json, read_jsonl, write_json, write_jsonl
from .vocab import Vocabulary

_TEAMS = (
    "tigers", "sharks", "eagles", "wolves", "lions", "bears",
    "hawks", "falcons", "pirates", "comets", "giants", "royals",
)
_PEOPLE = (
    "anna", "omar", "lucy", "felix", "priya", "noah",
    "mara", "ivan", "ruth", "denis", "selma", "victor",
)
_PLACES = ("paris", "oslo", "cairo", "tokyo", "lima", "quito", "dover", "perth", "bern", "kyoto")
_NUMBERS = (
    "zero", "one", "two", "three", "four", "five", "six",
    "seven", "eight", "nine", "ten", "eleven", "twelve",
)

_CONNECTORS = ((), ("yesterday",), ("today",), ("meanwhile",))
_FILLERS = (
    ("the", "crowd", "was", "loud", "."),
    ("rain", "fell", "all", "day", "."),
    ("the", "weather", "was", "calm", "."),
    ("fans", "waited", "outside", "."),
)
_STRUCTURE_WORDS = (
    "report", "on", "the", "scored", "points", "beat", "signed",
    "visited", "won", "medals", ".",
    "yesterday", "today", "meanwhile",
    "crowd", "was", "loud", "rain", "fell", "all", "day",
    "weather", "calm", "fans", "waited", "outside",
)

# relation name -> (subject type, object type, team-style subject?)
_RELATIONS = {
    "scored": ("team", "number"),
    "beat": ("team", "team"),
    "signed": ("team", "person"),
    "visited": ("person", "place"),
    "won": ("person", "number"),
}
_TEMPLATE_ORDER = ("scored", "beat", "signed", "visited", "won")


@dataclasses.dataclass(frozen=True, order=True)
class FactTriple:
    subject: str
    relation: str
    object: str

    def as_list(self) -> list[str]:
        return [self.subject, self.relation, self.object]


@dataclasses.dataclass
class SyntheticExample:
    example_id: str
    document: list[str]
    summary: list[str]
    gold_facts: tuple[FactTriple, ...]
    distractor_facts: tuple[FactTriple, ...]
    entity_spans: list[tuple[int, int]]

    def to_record(self) -> dict:
        return {
            "id": self.example_id,
            "document": list(self.document),
            "summary": list(self.summary),
            "gold_facts": [f.as_list() for f in self.gold_facts],
            "distractor_facts": [f.as_list() for f in self.distractor_facts],
            "entity_spans": [list(span) for span in self.entity_spans],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SyntheticExample":
        return cls(
            example_id=rec["id"],
            document=list(rec["document"]),
            summary=list(rec["summary"]),
            gold_facts=tuple(FactTriple(*f) for f in rec["gold_facts"]),
            distractor_facts=tuple(FactTriple(*f) for f in rec["distractor_facts"]),
            entity_spans=[tuple(span) for span in rec["entity_spans"]],
        )


@dataclasses.dataclass(frozen=True)
class CorpusSpec:
    n_train: int = 2000
    n_test: int = 200
    seed: int = 0
    n_templates: int = 5
    n_teams: int = 10
    n_people: int = 10
    n_places: int = 8
    n_numbers: int = 13
    max_gold_facts: int = 2
    max_distractors: int = 3
    filler_prob: float = 0.5
    connector_prob: float = 0.6
    # Each (subject, relation) pair has a habitual object drawn this often,
    # giving models a learnable prior that conflicts with reading on the
    # remaining examples.
    object_preference: float = 0.6

    def __post_init__(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigurationError("n_train and n_test must be positive")
        if not 1 <= self.n_templates <= len(_TEMPLATE_ORDER):
            raise ConfigurationError(f"n_templates must lie in 1..{len(_TEMPLATE_ORDER)}")
        for name, value, limit in (
            ("n_teams", self.n_teams, len(_TEAMS)),
            ("n_people", self.n_people, len(_PEOPLE)),
            ("n_places", self.n_places, len(_PLACES)),
            ("n_numbers", self.n_numbers, len(_NUMBERS)),
        ):
            if not 1 <= value <= limit:
                raise ConfigurationError(f"{name} must lie in 1..{limit}")
        if not 0.0 <= self.object_preference <= 1.0:
            raise ConfigurationError("object_preference must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Grammar:
    """Relation patterns over fixed inventories; parsing is exact."""

    def __init__(self, teams, people, places, numbers, relations: Sequence[str]):
        self.teams = tuple(teams)
        self.people = tuple(people)
        self.places = tuple(places)
        self.numbers = tuple(numbers)
        self.relations = tuple(relations)
        self._by_type = {
            "team": set(self.teams),
            "person": set(self.people),
            "place": set(self.places),
            "number": set(self.numbers),
        }
        self.entity_tokens = frozenset().union(*self._by_type.values())

    @classmethod
    def from_spec(cls, spec: CorpusSpec) -> "Grammar":
        return cls(
            _TEAMS[: spec.n_teams],
            _PEOPLE[: spec.n_people],
            _PLACES[: spec.n_places],
            _NUMBERS[: spec.n_numbers],
            _TEMPLATE_ORDER[: spec.n_templates],
        )

    @classmethod
    def from_card(cls, card: dict) -> "Grammar":
        inv = card["inventories"]
        return cls(inv["teams"], inv["people"], inv["places"], inv["numbers"], card["relations"])

    def inventory(self, type_name: str) -> tuple[str, ...]:
        return {
            "team": self.teams,
            "person": self.people,
            "place": self.places,
            "number": self.numbers,
        }[type_name]

    def is_type(self, token: str, type_name: str) -> bool:
        return token in self._by_type[type_name]

    def verbalize(self, fact: FactTriple) -> list[str]:
        s, r, o = fact.subject, fact.relation, fact.object
        if r == "scored":
            return ["the", s, "scored", o, "points", "."]
        if r == "beat":
            return ["the", s, "beat", "the", o, "."]
        if r == "signed":
            return ["the", s, "signed", o, "."]
        if r == "visited":
            return [s, "visited", o, "."]
        if r == "won":
            return [s, "won", o, "medals", "."]
        raise ConfigurationError(f"unknown relation {r!r}")

    def match_anchor(self, tokens: Sequence[str], i: int) -> tuple[FactTriple, int, int] | None:
        """If a relation pattern matches around index i, return
        (triple, subject position, object position)."""
        rel = tokens[i]
        if rel not in _RELATIONS or rel not in self.relations:
            return None

        def tok(j: int) -> str | None:
            return tokens[j] if 0 <= j < len(tokens) else None

        if rel == "scored":
            if (
                tok(i - 2) == "the"
                and self.is_type(tok(i - 1) or "", "team")
                and self.is_type(tok(i + 1) or "", "number")
                and tok(i + 2) == "points"
            ):
                return FactTriple(tokens[i - 1], rel, tokens[i + 1]), i - 1, i + 1
        elif rel == "beat":
            if (
                tok(i - 2) == "the"
                and self.is_type(tok(i - 1) or "", "team")
                and tok(i + 1) == "the"
                and self.is_type(tok(i + 2) or "", "team")
            ):
                return FactTriple(tokens[i - 1], rel, tokens[i + 2]), i - 1, i + 2
        elif rel == "signed":
            if (
                tok(i - 2) == "the"
                and self.is_type(tok(i - 1) or "", "team")
                and self.is_type(tok(i + 1) or "", "person")
            ):
                return FactTriple(tokens[i - 1], rel, tokens[i + 1]), i - 1, i + 1
        elif rel == "visited":
            if self.is_type(tok(i - 1) or "", "person") and self.is_type(tok(i + 1) or "", "place"):
                return FactTriple(tokens[i - 1], rel, tokens[i + 1]), i - 1, i + 1
        elif rel == "won":
            if (
                self.is_type(tok(i - 1) or "", "person")
                and self.is_type(tok(i + 1) or "", "number")
                and tok(i + 2) == "medals"
            ):
                return FactTriple(tokens[i - 1], rel, tokens[i + 1]), i - 1, i + 1
        return None

    def object_type(self, relation: str) -> str:
        return _RELATIONS[relation][1]

    def subject_type(self, relation: str) -> str:
        return _RELATIONS[relation][0]


def split_sentences(tokens: Sequence[str]) -> list[list[str]]:
    sentences, current = [], []
    for tok in tokens:
        current.append(tok)
        if tok == ".":
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def parse_facts(tokens: Sequence[str], grammar: Grammar) -> tuple[list[tuple[FactTriple, int, int]], int]:
    """All matched (triple, subject pos, object pos) with document-level
    positions, plus the count of sentences whose relation word failed to parse."""
    found: list[tuple[FactTriple, int, int]] = []
    unparsed = 0
    offset = 0
    for sentence in split_sentences(tokens):
        matched = False
        has_anchor = any(t in _RELATIONS for t in sentence)
        for i in range(len(sentence)):
            hit = grammar.match_anchor(sentence, i)
            if hit is not None:
                triple, spos, opos = hit
                found.append((triple, offset + spos, offset + opos))
                matched = True
                break
        if has_anchor and not matched:
            unparsed += 1
        offset += len(sentence)
    return found, unparsed


def extract_triples(tokens: Sequence[str], grammar: Grammar) -> tuple[frozenset[FactTriple], int]:
    facts, unparsed = parse_facts(tokens, grammar)
    return frozenset(triple for triple, _, _ in facts), unparsed


def build_vocabulary(grammar: Grammar) -> Vocabulary:
    return Vocabulary.from_content(
        _STRUCTURE_WORDS + grammar.teams + grammar.people + grammar.places + grammar.numbers
    )


def _sample_distinct(rng: random.Random, pool: Sequence[str], exclude: Iterable[str]) -> str | None:
    options = [x for x in pool if x not in set(exclude)]
    if not options:
        return None
    return rng.choice(options)


def habitual_object(grammar: Grammar, subject: str, relation: str) -> str | None:
    """The object a subject habitually takes for a relation; stable across runs."""
    pool = [x for x in grammar.inventory(grammar.object_type(relation)) if x != subject]
    if not pool:
        return None
    digest = zlib.crc32(f"{subject}:{relation}".encode("utf-8"))
    return pool[digest % len(pool)]


_MAX_TRIES = 200


def _generate_example(spec: CorpusSpec, grammar: Grammar, rng: random.Random) -> SyntheticExample:
    team_relations = [r for r in grammar.relations if grammar.subject_type(r) == "team"]
    person_relations = [r for r in grammar.relations if grammar.subject_type(r) == "person"]
    topic_pools = [(t, rels) for t, rels in (("team", team_relations), ("person", person_relations)) if rels]
    if not topic_pools:
        raise GenerationError("no relations available for any topic type")
    topic_type, relations = topic_pools[rng.randrange(len(topic_pools))]
    topic = rng.choice(grammar.inventory(topic_type))

    n_gold = rng.randint(1, min(spec.max_gold_facts, len(relations)))
    # canonical relation order keeps the summary predictable from the document
    gold_relations = sorted(rng.sample(relations, n_gold), key=_TEMPLATE_ORDER.index)
    gold_facts: list[FactTriple] = []
    for rel in gold_relations:
        obj = None
        if rng.random() < spec.object_preference:
            obj = habitual_object(grammar, topic, rel)
        if obj is None:
            obj = _sample_distinct(rng, grammar.inventory(grammar.object_type(rel)), [topic])
        if obj is None:
            raise GenerationError(f"inventory too small for relation {rel!r}")
        gold_facts.append(FactTriple(topic, rel, obj))

    gold_objects = {f.relation: f.object for f in gold_facts}
    n_distract = rng.randint(1, spec.max_distractors)
    distractors: list[FactTriple] = []
    for _ in range(n_distract):
        for _attempt in range(_MAX_TRIES):
            anchor = rng.choice(gold_facts)
            subj = _sample_distinct(rng, grammar.inventory(grammar.subject_type(anchor.relation)), [topic])
            if subj is None:
                continue
            obj = _sample_distinct(
                rng,
                grammar.inventory(grammar.object_type(anchor.relation)),
                [gold_objects[anchor.relation], topic, subj],
            )
            if obj is None:
                continue
            candidate = FactTriple(subj, anchor.relation, obj)
            if candidate not in distractors and candidate not in gold_facts:
                distractors.append(candidate)
                break
        else:
            raise GenerationError(
                "inventory too small to build distractors without gold collisions"
            )

    def fact_sentence(fact: FactTriple) -> list[str]:
        connector = list(rng.choice(_CONNECTORS[1:])) if rng.random() < spec.connector_prob else []
        return connector + grammar.verbalize(fact)

    header = ["report", "on"] + (["the", topic] if topic_type == "team" else [topic]) + ["."]
    body = [fact_sentence(f) for f in gold_facts] + [fact_sentence(f) for f in distractors]
    if rng.random() < spec.filler_prob:
        body.append(list(rng.choice(_FILLERS)))
    rng.shuffle(body)

    document = header + [tok for sentence in body for tok in sentence]
    summary = [tok for fact in gold_facts for tok in grammar.verbalize(fact)]
    spans = [(i, i + 1) for i, tok in enumerate(document) if tok in grammar.entity_tokens]

    return SyntheticExample(
        example_id="",
        document=document,
        summary=summary,
        gold_facts=tuple(gold_facts),
        distractor_facts=tuple(distractors),
        entity_spans=spans,
    )


def generate_corpus(spec: CorpusSpec) -> tuple[list[SyntheticExample], list[SyntheticExample], Vocabulary, Grammar, dict]:
    """Deterministic corpus build: (train, test, vocab, grammar, data card)."""
    grammar = Grammar.from_spec(spec)
    vocab = build_vocabulary(grammar)
    rng = random.Random(spec.seed)
    total = spec.n_train + spec.n_test
    examples: list[SyntheticExample] = []
    seen_documents: set[tuple[str, ...]] = set()
    attempts = 0
    while len(examples) < total:
        attempts += 1
        if attempts > _MAX_TRIES * total:
            raise GenerationError("could not generate enough distinct documents")
        ex = _generate_example(spec, grammar, rng)
        key = tuple(ex.document)
        if key in seen_documents:
            continue
        seen_documents.add(key)
        examples.append(ex)

    for ex in examples:
        expected = frozenset(ex.gold_facts) | frozenset(ex.distractor_facts)
        extracted, unparsed = extract_triples(ex.document, grammar)
        if extracted != expected or unparsed:
            raise GenerationError(f"generator/extractor mismatch on document {ex.document}")

    train = examples[: spec.n_train]
    test = examples[spec.n_train :]
    for i, ex in enumerate(train):
        ex.example_id = f"train-{i:05d}"
    for i, ex in enumerate(test):
        ex.example_id = f"test-{i:05d}"

    card = {
        "spec": spec.to_dict(),
        "relations": list(grammar.relations),
        "inventories": {
            "teams": list(grammar.teams),
            "people": list(grammar.people),
            "places": list(grammar.places),
            "numbers": list(grammar.numbers),
        },
        "counts": {
            "train": len(train),
            "test": len(test),
            "vocab": vocab.size,
        },
    }
    return train, test, vocab, grammar, card


# ----------------------------------------------------------------------
# dataset directory layout: train.jsonl, test.jsonl, vocab.json, data_card.json


def save_corpus_dir(
    out_dir: Path | str,
    train: Sequence[SyntheticExample],
    test: Sequence[SyntheticExample],
    vocab: Vocabulary,
    card: dict,
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_dir / "train.jsonl", (ex.to_record() for ex in train))
    write_jsonl(out_dir / "test.jsonl", (ex.to_record() for ex in test))
    write_json(out_dir / "vocab.json", {"tokens": list(vocab.tokens)})
    write_json(out_dir / "data_card.json", card)


def load_corpus_dir(
    data_dir: Path | str,
) -> tuple[list[SyntheticExample], list[SyntheticExample], Vocabulary, Grammar, dict]:
    data_dir = Path(data_dir)
    card = read_json(data_dir / "data_card.json")
    vocab = Vocabulary(read_json(data_dir / "vocab.json")["tokens"])
    grammar = Grammar.from_card(card)
    train = [SyntheticExample.from_record(r) for r in read_jsonl(data_dir / "train.jsonl")]
    test = [SyntheticExample.from_record(r) for r in read_jsonl(data_dir / "test.jsonl")]
    return train, test, vocab, grammar, card
