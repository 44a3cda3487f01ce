"""Dialogue dataset model and pipelines.

Covers the end-to-end example format (history + dynamic memory + target +
skill annotation), the API-call synthesis rules that turn state-tracker
updates into SQL-style and booking-style query targets, the memory population
strategy, and a seeded synthetic multi-skill corpus used by the test and
acceptance suites.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

PAD, SOS, EOS, TM, UNK = "<PAD>", "<SOS>", "<EOS>", "<TM>", "<UNK>"
SPECIAL_TOKENS = [PAD, SOS, EOS, TM, UNK]

NOT_AVAILABLE = "Not Available"

API_SKILLS = ("SQL", "BOOK")

# Fixed clause ordering per domain; determinism here is what makes exact-match
# accuracy on query targets well defined.
DEFAULT_SLOT_ORDER = {
    "hotel": ["pricerange", "stars", "area", "type", "parking", "internet",
              "name", "people", "day", "stay"],
    "train": ["destination", "day", "arriveBy", "departure", "leaveAt", "people"],
    "restaurant": ["food", "pricerange", "area", "name", "time", "people", "day"],
    "taxi": ["leaveAt", "destination", "departure", "arriveBy"],
    "attraction": ["name", "type", "area"],
    "police": ["name"],
    "hospital": ["department"],
}


class VocabularyError(ValueError):
    """A token id fell outside the embedding tables."""


class CorpusFormatError(ValueError):
    """A corpus file line failed validation."""


# ---------------------------------------------------------------------------
# structured records


@dataclass
class MemoryRecord:
    """Ordered (attribute, value) pairs from a query result or booking."""

    pairs: list[tuple[str, str]]

    def __post_init__(self) -> None:
        names = [a for a, _ in self.pairs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in record: {names}")

    def values(self) -> list[str]:
        return [v for _, v in self.pairs]


@dataclass
class AnnotatedTurn:
    """One raw dialogue turn with tracker state and speech acts."""

    speaker: str  # "Usr" or "Sys"
    utterance: list[str]
    state: dict[str, dict[str, str]] = field(default_factory=dict)
    acts: dict[str, list[str]] = field(default_factory=dict)  # tag -> act values


@dataclass
class DialogueExample:
    """One training instance: history, memory, target, and skill annotation.

    ``types`` and ``segments`` annotate the concatenated input (history then
    memory), one entry per token.
    """

    history: list[str]
    memory: list[str]
    target: list[str]
    skills: list[str]
    types: list[str]
    segments: list[int]

    def validate(self, known_skills: Sequence[str] | None = None) -> None:
        n = len(self.history) + len(self.memory)
        if len(self.types) != n or len(self.segments) != n:
            raise CorpusFormatError(
                f"annotation length {len(self.types)}/{len(self.segments)} != input length {n}"
            )
        if not self.skills:
            raise CorpusFormatError("example has an empty skill set")
        if known_skills is not None:
            unknown = [s for s in self.skills if s not in known_skills]
            if unknown:
                raise CorpusFormatError(f"unknown skill name(s): {unknown}")

    @property
    def kind(self) -> str:
        """'sql' | 'book' | 'plain', derived from the target head."""
        if self.target[:1] == ["SELECT"]:
            return "sql"
        if self.target[:1] == ["BOOK"]:
            return "book"
        return "plain"

    @property
    def domain(self) -> str | None:
        for s in self.skills:
            if s not in API_SKILLS:
                return s
        return None


@dataclass
class PersonaProfile:
    sentences: list[list[str]]

    def __post_init__(self) -> None:
        if not self.sentences:
            raise ValueError("a persona profile needs at least one sentence")


def persona_profile(example: DialogueExample) -> PersonaProfile | None:
    """Split a chat example's memory on '.' separators into profile sentences."""
    if "Persona" not in example.skills or not example.memory:
        return None
    sentences, current = [], []
    for tok in example.memory:
        if tok == ".":
            if current:
                sentences.append(current)
            current = []
        else:
            current.append(tok)
    if current:
        sentences.append(current)
    return PersonaProfile(sentences) if sentences else None


# ---------------------------------------------------------------------------
# skill vectors


@dataclass(frozen=True)
class SkillVector:
    """Multi-hot prior over the declared skills."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"skill vector entries must be binary: {self.bits}")

    @classmethod
    def from_names(cls, names: Iterable[str], skills: Sequence[str]) -> "SkillVector":
        bits = [0] * len(skills)
        for name in names:
            if name not in skills:
                raise LookupError(f"unknown skill name: {name}")
            bits[skills.index(name)] = 1
        return cls(tuple(bits))

    def names(self, skills: Sequence[str]) -> list[str]:
        return [s for s, b in zip(skills, self.bits) if b]

    def array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)


def build_skill_vector(target_kind: str, domain: str, skills: Sequence[str]) -> SkillVector:
    """Skill bits for a target: API bit + domain bit for queries, domain bit
    (or the chit-chat bit) for plain responses."""
    domain_skill = domain if domain in skills else domain.capitalize()
    if domain_skill not in skills:
        raise LookupError(f"unknown domain: {domain}")
    if target_kind == "sql":
        return SkillVector.from_names(["SQL", domain_skill], skills)
    if target_kind == "book":
        return SkillVector.from_names(["BOOK", domain_skill], skills)
    if target_kind in ("plain", "chat"):
        return SkillVector.from_names([domain_skill], skills)
    raise ValueError(f"unknown target kind: {target_kind}")


# ---------------------------------------------------------------------------
# query synthesis and grammar


def _ordered_slots(domain: str, changed: Mapping[str, object]) -> list[str]:
    order = DEFAULT_SLOT_ORDER.get(domain)
    if order is None:
        return list(changed)
    known = [s for s in order if s in changed]
    extra = [s for s in changed if s not in order]
    return known + extra


def _clause_tokens(slot: str, value: object) -> list[str]:
    if isinstance(value, tuple):
        op, val = value
        if op not in ("=", "<", ">"):
            raise ValueError(f"unsupported comparison operator: {op}")
        return [slot, op, str(val)]
    return [slot, "=", str(value)]


def _synthesize(head: list[str], domain: str, changed_slots: Mapping[str, object]) -> list[str]:
    if not changed_slots:
        raise ValueError("query synthesis needs at least one changed slot")
    tokens = head + [domain, "WHERE"]
    for i, slot in enumerate(_ordered_slots(domain, changed_slots)):
        if i:
            tokens.append("AND")
        tokens.extend(_clause_tokens(slot, changed_slots[slot]))
    return tokens


def synthesize_sql_query(domain: str, changed_slots: Mapping[str, object]) -> list[str]:
    """Retrieval query tokens: SELECT * FROM domain WHERE slot = value ...

    Values may be plain strings or ``(op, value)`` pairs for comparisons.
    Clause order follows the declared per-domain slot order.
    """
    return _synthesize(["SELECT", "*", "FROM"], domain, changed_slots)


def synthesize_book_query(domain: str, changed_slots: Mapping[str, object]) -> list[str]:
    """Booking query tokens: BOOK FROM domain WHERE slot = value ..."""
    return _synthesize(["BOOK", "FROM"], domain, changed_slots)


def render_query(tokens: Sequence[str]) -> str:
    """Canonical string form of query tokens.

    Equality clauses collapse to ``slot="value"``; comparison operators keep
    surrounding spaces, with the value quoted: ``arriveBy < "1530"``.
    """
    out: list[str] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "=" and out and i + 1 < len(tokens):
            out[-1] = f'{out[-1]}="{tokens[i + 1]}"'
            i += 2
        elif tok in ("<", ">") and i + 1 < len(tokens):
            out.append(tok)
            out.append(f'"{tokens[i + 1]}"')
            i += 2
        else:
            out.append(tok)
            i += 1
    return " ".join(out)


_QUERY_HEAD = re.compile(r"^(SELECT \* FROM|BOOK FROM)\s+(\S+)\s+WHERE\s+(.*)$")
_CLAUSE = re.compile(r"^(\S+?)\s*(=|<|>)\s*(.+)$")
_QUOTES = [('"', '"'), ("'", "'"), ("``", "''"), ("`", "'")]


def _unquote(value: str) -> str:
    for left, right in _QUOTES:
        if value.startswith(left) and value.endswith(right) and len(value) >= len(left) + len(right):
            return value[len(left) : len(value) - len(right)]
    return value


@dataclass(frozen=True)
class ParsedQuery:
    kind: str  # "sql" | "book"
    domain: str
    clauses: tuple[tuple[str, str, str], ...]  # (slot, op, value)


def parse_query(text: str) -> ParsedQuery:
    """Parse a query string; accepts both straight and typographic quoting.

    Raises ValueError when the string does not match
    ``('SELECT * FROM'|'BOOK FROM') domain 'WHERE' clause ('AND' clause)*``.
    """
    text = normalize_whitespace(text)
    m = _QUERY_HEAD.match(text)
    if not m:
        raise ValueError(f"not a query: {text!r}")
    head, domain, rest = m.groups()
    clauses = []
    for part in re.split(r"\s+(?:AND|and)\s+", rest):
        cm = _CLAUSE.match(part.strip())
        if not cm:
            raise ValueError(f"bad clause {part!r} in query {text!r}")
        slot, op, value = cm.groups()
        clauses.append((slot, op, _unquote(value.strip())))
    if not clauses:
        raise ValueError(f"query has no clauses: {text!r}")
    kind = "sql" if head.startswith("SELECT") else "book"
    return ParsedQuery(kind, domain, tuple(clauses))


def is_query(tokens: Sequence[str]) -> bool:
    return tokens[:1] == ["SELECT"] or tokens[:1] == ["BOOK"]


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


# ---------------------------------------------------------------------------
# API-call triggering and memory population


def changed_slots(state: Mapping[str, Mapping[str, str]],
                  prev_state: Mapping[str, Mapping[str, str]]) -> dict[str, dict[str, str]]:
    """Per-domain slots whose value differs from the previous turn."""
    out: dict[str, dict[str, str]] = {}
    for domain, slots in state.items():
        prev = prev_state.get(domain, {})
        diff = {s: v for s, v in slots.items() if prev.get(s) != v}
        if diff:
            out[domain] = diff
    return out


def _has_inform_act(acts: Mapping[str, list[str]] | Iterable[str]) -> bool:
    tags = acts.keys() if isinstance(acts, Mapping) else acts
    return any(t.startswith(("INFORM", "RECOMMEND")) for t in tags)


def should_issue_api(turn: AnnotatedTurn,
                     prev_state: Mapping[str, Mapping[str, str]],
                     issued_history: Iterable[str],
                     kind: str = "sql") -> bool:
    """Decide whether this turn triggers a fresh API call.

    True only when the turn carries an informing/recommending act, the
    state tracker changed since the previous turn, and the candidate query has
    never been issued before.
    """
    if not _has_inform_act(turn.acts):
        return False
    diff = changed_slots(turn.state, prev_state)
    if not diff:
        return False
    synth = synthesize_sql_query if kind == "sql" else synthesize_book_query
    issued = set(issued_history)
    for domain, slots in diff.items():
        if render_query(synth(domain, slots)) not in issued:
            return True
    return False


def flatten_records(records: Sequence[MemoryRecord],
                    start_segment: int = 0) -> tuple[list[str], list[str], list[int]]:
    """Flatten records to ``attr value attr value ...`` with type and segment
    annotations (attribute name as the type, record index as the segment)."""
    tokens: list[str] = []
    types: list[str] = []
    segments: list[int] = []
    for i, rec in enumerate(records):
        for attr, value in rec.pairs:
            tokens.extend([attr, str(value)])
            types.extend([attr, attr])
            segments.extend([start_segment + i, start_segment + i])
    return tokens, types, segments


def populate_memory(results: Sequence[MemoryRecord],
                    acts: Mapping[str, list[str]] | Iterable[str] | None = None,
                    booking: bool = False) -> list[str]:
    """Memory tokens for a turn, following the record-count strategy.

    Without an informing act, more than five records collapse to the ``<TM>``
    placeholder and five or fewer are flattened in full.  With an informing
    act the records are filtered down to the ones carrying an act value.
    Booking outcomes are a single record, or the not-available marker.
    """
    tokens, _, _ = populate_memory_annotated(results, acts, booking)
    return tokens


def populate_memory_annotated(results: Sequence[MemoryRecord],
                              acts: Mapping[str, list[str]] | Iterable[str] | None = None,
                              booking: bool = False,
                              start_segment: int = 0) -> tuple[list[str], list[str], list[int]]:
    acts = acts or {}
    if booking:
        if not results:
            return [NOT_AVAILABLE], ["memory"], [start_segment]
        return flatten_records(list(results)[:1], start_segment)
    if _has_inform_act(acts):
        values = set()
        if isinstance(acts, Mapping):
            for tag, vals in acts.items():
                if tag.startswith(("INFORM", "RECOMMEND")):
                    values.update(str(v) for v in vals)
        if values:
            keep = [r for r in results if values & set(map(str, r.values()))]
            # memory stays bounded even when many records carry the act value
            return flatten_records(keep[:5], start_segment)
        # act without values: fall through to the record-count rules
    if len(results) > 5:
        return [TM], ["memory"], [start_segment]
    return flatten_records(results, start_segment)


# ---------------------------------------------------------------------------
# raw-dialogue adapter


def dialogues_to_examples(dialogues: Sequence[Mapping], skills: Sequence[str]) -> list[DialogueExample]:
    """Convert annotated dialogues into end-to-end training examples.

    Each system turn becomes a plain-response example; when the triggering
    conditions hold it is preceded by a query example whose target is the
    synthesized API call.  Expects per-dialogue dicts with a ``turns`` list of
    AnnotatedTurn-shaped entries plus optional ``db_results`` per turn.
    """
    out: list[DialogueExample] = []
    for dlg in dialogues:
        domain = dlg.get("domain", "")
        issued: list[str] = []
        prev_state: dict = {}
        history: list[str] = []
        types: list[str] = []
        segments: list[int] = []
        turn_idx = 0
        for raw in dlg["turns"]:
            turn = AnnotatedTurn(
                speaker=raw["speaker"],
                utterance=list(raw["utterance"]),
                state=raw.get("state", {}),
                acts=raw.get("acts", {}),
            )
            if turn.speaker != "Sys":
                history.extend(turn.utterance)
                types.extend([turn.speaker] * len(turn.utterance))
                segments.extend([turn_idx] * len(turn.utterance))
                turn_idx += 1
                continue

            records = [MemoryRecord(list(map(tuple, r))) for r in raw.get("db_results", [])]
            mem, mem_t, mem_s = populate_memory_annotated(records, turn.acts, start_segment=turn_idx)
            if should_issue_api(turn, prev_state, issued):
                diff = changed_slots(turn.state, prev_state)
                for dom, slots in diff.items():
                    query = synthesize_sql_query(dom, slots)
                    rendered = render_query(query)
                    if rendered in issued:
                        continue
                    issued.append(rendered)
                    out.append(DialogueExample(
                        history=list(history),
                        memory=[],
                        target=query,
                        skills=build_skill_vector("sql", dom, skills).names(skills),
                        types=list(types),
                        segments=list(segments),
                    ))
            prev_state = turn.state or prev_state
            out.append(DialogueExample(
                history=list(history),
                memory=mem,
                target=list(turn.utterance),
                skills=build_skill_vector("plain", domain, skills).names(skills) if domain else ["Persona"],
                types=list(types) + mem_t,
                segments=list(segments) + mem_s,
            ))
            history.extend(turn.utterance)
            types.extend(["Sys"] * len(turn.utterance))
            segments.extend([turn_idx] * len(turn.utterance))
            turn_idx += 1
    return out


# ---------------------------------------------------------------------------
# corpus files


@dataclass
class CorpusSchema:
    skills: list[str]
    domains: list[str]
    slot_order: dict
    entities: list[str]
    type_tags: list[str]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorpusSchema":
        return cls(**json.loads(text))


@dataclass
class Corpus:
    splits: dict[str, list[DialogueExample]]
    schema: CorpusSchema

    @property
    def train(self) -> list[DialogueExample]:
        return self.splits["train"]

    @property
    def valid(self) -> list[DialogueExample]:
        return self.splits["valid"]

    @property
    def test(self) -> list[DialogueExample]:
        return self.splits["test"]


_EXAMPLE_FIELDS = ("history", "memory", "target", "skills", "types", "segments")


def save_corpus(path, examples: Sequence[DialogueExample]) -> None:
    """Write one JSON object per line with the canonical field set."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            row = {f: getattr(ex, f) for f in _EXAMPLE_FIELDS}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_corpus(path, known_skills: Sequence[str] | None = None) -> list[DialogueExample]:
    """Read a corpus file, validating every line; errors carry line numbers."""
    out: list[DialogueExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                ex = DialogueExample(**{f: row[f] for f in _EXAMPLE_FIELDS})
                ex.validate(known_skills)
            except CorpusFormatError as err:
                raise CorpusFormatError(f"{path}:{lineno}: {err}") from None
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise CorpusFormatError(f"{path}:{lineno}: malformed example ({err})") from None
            out.append(ex)
    return out


# ---------------------------------------------------------------------------
# synthetic corpus


SYNTHETIC_SKILLS = ["SQL", "BOOK", "Hotel", "Persona"]

_SQL_VALUES = {
    "pricerange": ["cheap", "moderate", "expensive"],
    "stars": ["1", "2", "3", "4", "5"],
    "area": ["north", "south", "east", "west", "centre"],
    "type": ["hotel", "guesthouse"],
}
_BOOK_VALUES = {
    "people": [str(i) for i in range(1, 9)],
    "day": ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"],
    "stay": [str(i) for i in range(1, 8)],
}
_HOTEL_NAMES = [
    "acorn_house", "alpha_hotel", "arbury_lodge", "ashley_hotel", "avalon_inn",
    "aylesbray_lodge", "bridge_house", "carolina_house", "cityroomz", "el_shaddai",
    "express_inn", "finches_house", "gonville_hotel", "hamilton_lodge", "hobsons_house",
    "home_from_home", "huntingdon_hotel", "kirkwood_house", "lensfield_hotel", "leverton_house",
]
_PHONES = [f"phone_{i:03d}" for i in range(60)]
_ACTIVITIES = ["ski", "code", "swim", "read", "paint", "dance", "cook", "run",
               "sing", "fish", "hike", "knit"]
_COLOURS = ["red", "blue", "green", "yellow", "purple"]

_SQL_OPENERS = [
    ["i", "am", "looking", "for", "a", "hotel", "with"],
    ["find", "me", "a", "hotel", "with"],
    ["i", "need", "a", "hotel", "with"],
]
_BOOK_OPENERS = [
    ["please", "book", "it", "for"],
    ["book", "the", "hotel", "for"],
    ["can", "you", "book", "it", "for"],
]
_LOOKUP_OPENERS = [
    ["what", "is", "the"],
    ["can", "you", "tell", "me", "the"],
]
_GREETING = ["hello", "how", "can", "i", "help", "you"]


def _slot_phrase(slots: Mapping[str, str]) -> list[str]:
    tokens: list[str] = []
    for i, (slot, value) in enumerate(slots.items()):
        if i:
            tokens.append("and")
        tokens.extend([slot, value])
    return tokens


def _with_history(rng, usr_tokens: list[str]) -> tuple[list[str], list[str], list[int], int]:
    """Optionally prefix a greeting turn; returns history, types, segments, turns."""
    if rng.random() < 0.5:
        history = list(_GREETING) + usr_tokens
        types = ["Sys"] * len(_GREETING) + ["Usr"] * len(usr_tokens)
        segments = [0] * len(_GREETING) + [1] * len(usr_tokens)
        return history, types, segments, 2
    return list(usr_tokens), ["Usr"] * len(usr_tokens), [0] * len(usr_tokens), 1


def _pick_slots(rng, pool: Mapping[str, list[str]], order: Sequence[str]) -> dict[str, str]:
    count = int(rng.integers(1, 4))
    names = [s for s in order if s in pool]
    chosen = sorted(rng.choice(len(names), size=min(count, len(names)), replace=False))
    return {names[i]: str(rng.choice(pool[names[i]])) for i in chosen}


def _make_query_example(rng, kind: str) -> DialogueExample:
    if kind == "sql":
        slots = _pick_slots(rng, _SQL_VALUES, DEFAULT_SLOT_ORDER["hotel"])
        target = synthesize_sql_query("hotel", slots)
        opener = _SQL_OPENERS[int(rng.integers(len(_SQL_OPENERS)))]
    else:
        slots = _pick_slots(rng, _BOOK_VALUES, DEFAULT_SLOT_ORDER["hotel"])
        target = synthesize_book_query("hotel", slots)
        opener = _BOOK_OPENERS[int(rng.integers(len(_BOOK_OPENERS)))]
    usr = list(opener) + _slot_phrase(slots)
    history, types, segments, _ = _with_history(rng, usr)
    return DialogueExample(
        history=history, memory=[], target=target,
        skills=build_skill_vector(kind, "Hotel", SYNTHETIC_SKILLS).names(SYNTHETIC_SKILLS),
        types=types, segments=segments,
    )


def _make_lookup_example(rng) -> DialogueExample:
    n_records = int(rng.integers(2, 5))
    names = rng.choice(len(_HOTEL_NAMES), size=n_records, replace=False)
    records = []
    for idx in names:
        records.append(MemoryRecord([
            ("name", _HOTEL_NAMES[idx]),
            ("phone", _PHONES[int(rng.integers(len(_PHONES)))]),
            ("area", str(rng.choice(_SQL_VALUES["area"]))),
            ("stars", str(rng.choice(_SQL_VALUES["stars"]))),
        ]))
    pick = records[int(rng.integers(n_records))]
    attrs = dict(pick.pairs)
    attr = str(rng.choice(["phone", "area", "stars"]))
    opener = _LOOKUP_OPENERS[int(rng.integers(len(_LOOKUP_OPENERS)))]
    usr = list(opener) + [attr, "of", attrs["name"]]
    history, types, segments, turns = _with_history(rng, usr)
    mem, mem_t, mem_s = flatten_records(records, start_segment=turns)
    target = ["the", attr, "of", attrs["name"], "is", attrs[attr]]
    return DialogueExample(
        history=history, memory=mem, target=target,
        skills=build_skill_vector("plain", "Hotel", SYNTHETIC_SKILLS).names(SYNTHETIC_SKILLS),
        types=types + mem_t, segments=segments + mem_s,
    )


def _make_chat_example(rng) -> DialogueExample:
    persona_act = str(rng.choice(_ACTIVITIES))
    asked = str(rng.choice(_ACTIVITIES))
    colour = str(rng.choice(_COLOURS))
    usr = ["do", "you", "like", "to", asked]
    history, types, segments, turns = _with_history(rng, usr)
    mem = ["i", "like", "to", persona_act, ".", "my", "favourite", "colour", "is", colour, "."]
    if asked == persona_act:
        target = ["yes", ",", "i", "like", "to", persona_act]
    else:
        target = ["no", ",", "i", "like", "to", persona_act]
    return DialogueExample(
        history=history, memory=mem, target=target,
        skills=["Persona"],
        types=types + ["persona"] * len(mem),
        segments=segments + [turns] * len(mem),
    )


def _synthetic_schema() -> CorpusSchema:
    entities = sorted(set(_HOTEL_NAMES) | set(_PHONES) | set(_SQL_VALUES["area"])
                      | set(_ACTIVITIES) | set(_COLOURS))
    return CorpusSchema(
        skills=list(SYNTHETIC_SKILLS),
        domains=["Hotel", "Persona"],
        slot_order={"hotel": DEFAULT_SLOT_ORDER["hotel"]},
        entities=entities,
        type_tags=["Sys", "Usr", "name", "phone", "area", "stars", "persona", "memory"],
    )


def generate_synthetic_corpus(seed: int, sizes: Sequence[int] = (2000, 200, 200)) -> Corpus:
    """Deterministic multi-skill corpus over a small vocabulary.

    Four skills, each a distinct transformation: retrieval-query formatting,
    booking-query formatting, attribute lookup from memory records, and
    persona-grounded chat.  Query examples carry two skill bits.  The four
    example kinds are exactly balanced within every split.
    """
    if any(s <= 0 for s in sizes):
        raise ValueError(f"split sizes must be positive: {sizes}")
    rng = np.random.default_rng(seed)
    makers = {
        "sql": lambda: _make_query_example(rng, "sql"),
        "book": lambda: _make_query_example(rng, "book"),
        "lookup": lambda: _make_lookup_example(rng),
        "chat": lambda: _make_chat_example(rng),
    }
    kinds = list(makers)
    names = ["train", "valid", "test"]
    splits: dict[str, list[DialogueExample]] = {}
    for name, size in zip(names, sizes):
        examples = [makers[kinds[i % len(kinds)]]() for i in range(size)]
        order = rng.permutation(len(examples))
        splits[name] = [examples[i] for i in order]
    return Corpus(splits=splits, schema=_synthetic_schema())


# ---------------------------------------------------------------------------
# vocabulary and vectorization


class Vocabulary:
    """Token <-> id mapping with the special tokens pinned at the front."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, examples: Iterable[DialogueExample]) -> "Vocabulary":
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        for ex in examples:
            for tok in list(ex.history) + list(ex.memory) + list(ex.target):
                if tok not in seen:
                    seen.add(tok)
                    tokens.append(tok)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def token(self, idx: int) -> str:
        if idx < 0 or idx >= len(self.tokens):
            raise VocabularyError(f"token id {idx} outside vocabulary of {len(self.tokens)}")
        return self.tokens[idx]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def sos_id(self) -> int:
        return self.index[SOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]


@dataclass
class VecExample:
    """Arrays for one example, ready for the models.

    ``copy_ids`` extend the vocabulary with per-example ids for source tokens
    the tables do not know, so the copy path can still point at them;
    ``oov_tokens`` maps those extra ids back to surface forms.
    """

    src_ids: np.ndarray       # embedding ids, <UNK> where out of vocabulary
    copy_ids: np.ndarray      # extended ids for the copy distribution
    type_ids: np.ndarray
    seg_ids: np.ndarray
    tgt_in: np.ndarray        # <SOS> + target ids (embedding space)
    tgt_out: np.ndarray       # target ids + <EOS> (extended space)
    gold_bits: np.ndarray | None
    ext_width: int
    oov_tokens: list[str]
    example: DialogueExample | None = None


def vectorize(example: DialogueExample,
              vocab: Vocabulary,
              type_tags: Sequence[str],
              skills: Sequence[str] | None = None) -> VecExample:
    source = list(example.history) + list(example.memory)
    if not source:
        raise ValueError("example has an empty input")
    src_ids = np.array([vocab.id(t) for t in source], dtype=np.int64)

    oov_tokens: list[str] = []
    copy_ids = np.empty(len(source), dtype=np.int64)
    for i, tok in enumerate(source):
        idx = vocab.index.get(tok)
        if idx is None:
            if tok not in oov_tokens:
                oov_tokens.append(tok)
            idx = len(vocab) + oov_tokens.index(tok)
        copy_ids[i] = idx
    ext_width = len(vocab) + len(oov_tokens)

    tag_index = {t: i for i, t in enumerate(type_tags)}
    try:
        type_ids = np.array([tag_index[t] for t in example.types], dtype=np.int64)
    except KeyError as err:
        raise VocabularyError(f"unknown type tag {err}") from None
    seg_ids = np.asarray(example.segments, dtype=np.int64)

    tgt_in = np.array([vocab.sos_id] + [vocab.id(t) for t in example.target], dtype=np.int64)
    tgt_out = np.empty(len(example.target) + 1, dtype=np.int64)
    for i, tok in enumerate(example.target):
        idx = vocab.index.get(tok)
        if idx is None and tok in oov_tokens:
            idx = len(vocab) + oov_tokens.index(tok)
        tgt_out[i] = vocab.unk_id if idx is None else idx
    tgt_out[-1] = vocab.eos_id

    gold = None
    if skills is not None:
        gold = SkillVector.from_names(example.skills, skills).array()
    return VecExample(src_ids, copy_ids, type_ids, seg_ids, tgt_in, tgt_out,
                      gold, ext_width, oov_tokens, example)


def tokens_from_ids(ids: Sequence[int], vocab: Vocabulary, oov_tokens: Sequence[str]) -> list[str]:
    """Map (possibly extended) output ids back to surface tokens."""
    out = []
    for idx in ids:
        if idx < len(vocab):
            out.append(vocab.token(int(idx)))
        else:
            out.append(oov_tokens[int(idx) - len(vocab)])
    return out
