"""Template grammar turning spatial instructions into clause lists.

The grammar is layered: a predicate lexicon is matched first, an optional
metric phrase is bound to the predicate it immediately precedes, and the
anchor noun phrase is read off the text following the predicate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

LEXICON_VERSION = "1"


class Predicate(Enum):
    LEFT_OF = "left_of"
    RIGHT_OF = "right_of"
    FRONT_OF = "front_of"
    BEHIND = "behind"
    ABOVE = "above"
    BELOW = "below"
    NEAR = "near"
    BETWEEN = "between"


class Unit(Enum):
    METER = "m"
    CENTIMETER = "cm"
    FOOT = "ft"


class QueryKind(Enum):
    WHERE = "WhereQuery"
    WHICH_OBJECT = "WhichObjectQuery"


UNIT_TO_METERS = {Unit.METER: 1.0, Unit.CENTIMETER: 0.01, Unit.FOOT: 0.3048}
MIN_DISTANCE = 0.01
MAX_DISTANCE = 100.0


class ParseError(ValueError):
    def __init__(self, message: str, span: tuple[int, int] | None = None):
        super().__init__(message if span is None else f"{message} (at {span[0]}:{span[1]})")
        self.span = span


class NoPredicateFound(ParseError):
    pass


class AmbiguousMetricBinding(ParseError):
    pass


class InvalidMetric(ParseError):
    """Distance that is vague, a range, or outside the supported magnitude."""


class MissingAnchor(ParseError):
    pass


@dataclass(frozen=True)
class MetricConstraint:
    distance: float  # meters
    stated_unit: Unit = Unit.METER

    def __post_init__(self):
        if not MIN_DISTANCE <= self.distance <= MAX_DISTANCE:
            raise InvalidMetric(f"distance {self.distance:g} m outside [{MIN_DISTANCE}, {MAX_DISTANCE}] m")


@dataclass(frozen=True)
class SDCClause:
    anchor_text: str
    predicate: Predicate
    metric: MetricConstraint | None = None
    source_span: tuple[int, int] = (0, 0)
    anchor_text_2: str | None = None

    def __post_init__(self):
        if not self.anchor_text:
            raise MissingAnchor("clause anchor text is empty")
        if (self.anchor_text_2 is not None) != (self.predicate is Predicate.BETWEEN):
            raise MissingAnchor("a second anchor is required for 'between' and only for it")

    @property
    def anchors(self) -> tuple[str, ...]:
        return (self.anchor_text,) if self.anchor_text_2 is None else (self.anchor_text, self.anchor_text_2)


@dataclass(frozen=True)
class SDCQuery:
    kind: QueryKind
    clauses: tuple[SDCClause, ...]
    raw_text: str

    def canonical(self) -> list[str]:
        return [clause_to_canonical_string(c) for c in self.clauses]


# Longest phrases are tried first so "to the left of" wins over "left of".
PREDICATE_LEXICON: dict[str, Predicate] = {
    "to the left of": Predicate.LEFT_OF,
    "on the left of": Predicate.LEFT_OF,
    "to the left side of": Predicate.LEFT_OF,
    "on the left side of": Predicate.LEFT_OF,
    "left of": Predicate.LEFT_OF,
    "to the right of": Predicate.RIGHT_OF,
    "on the right of": Predicate.RIGHT_OF,
    "to the right side of": Predicate.RIGHT_OF,
    "on the right side of": Predicate.RIGHT_OF,
    "right of": Predicate.RIGHT_OF,
    "in front of": Predicate.FRONT_OF,
    "to the front of": Predicate.FRONT_OF,
    "at the front of": Predicate.FRONT_OF,
    "ahead of": Predicate.FRONT_OF,
    "behind": Predicate.BEHIND,
    "in back of": Predicate.BEHIND,
    "at the back of": Predicate.BEHIND,
    "to the back of": Predicate.BEHIND,
    "above": Predicate.ABOVE,
    "on top of": Predicate.ABOVE,
    "over": Predicate.ABOVE,
    "below": Predicate.BELOW,
    "under": Predicate.BELOW,
    "underneath": Predicate.BELOW,
    "beneath": Predicate.BELOW,
    "near": Predicate.NEAR,
    "near to": Predicate.NEAR,
    "nearby": Predicate.NEAR,
    "close to": Predicate.NEAR,
    "next to": Predicate.NEAR,
    "beside": Predicate.NEAR,
    "adjacent to": Predicate.NEAR,
    "away from": Predicate.NEAR,
    "between": Predicate.BETWEEN,
    "in between": Predicate.BETWEEN,
}

# Only a predicate when a distance directly precedes it ("2 meters from the sink").
METRIC_ONLY_LEXICON: dict[str, Predicate] = {"from": Predicate.NEAR}

NUMBER_WORDS = {
    w: i
    for i, w in enumerate(
        "zero one two three four five six seven eight nine ten eleven twelve thirteen "
        "fourteen fifteen sixteen seventeen eighteen nineteen twenty".split()
    )
}

UNIT_WORDS = {
    "meters": Unit.METER, "meter": Unit.METER, "metres": Unit.METER, "metre": Unit.METER, "m": Unit.METER,
    "centimeters": Unit.CENTIMETER, "centimeter": Unit.CENTIMETER, "centimetres": Unit.CENTIMETER,
    "centimetre": Unit.CENTIMETER, "cm": Unit.CENTIMETER,
    "feet": Unit.FOOT, "foot": Unit.FOOT, "ft": Unit.FOOT,
}

VAGUE_WORDS = ("about", "around", "roughly", "approximately", "almost", "nearly", "some", "several", "few", "couple")
FILLER_WORDS = ("away", "directly", "exactly", "further", "farther", "off", "straight")
DETERMINERS = ("the", "a", "an", "this", "these", "those", "my", "your", "our", "their", "its")
# Words that terminate an anchor noun phrase.
STOP_WORDS = frozenset(
    "and or but then that which who where while so if when is are was were to of in on at with for by "
    "from into onto as than please".split()
)

_WORD = r"[a-z0-9]+(?:['\-][a-z0-9]+)*"
_NUM_WORD = "|".join(sorted(NUMBER_WORDS, key=len, reverse=True))
_NUMBER = rf"(?:\d+(?:\.\d+)?|\.\d+|(?:{_NUM_WORD})(?:\s+point\s+(?:{_NUM_WORD}))?)"
_UNIT = "|".join(sorted(UNIT_WORDS, key=len, reverse=True))
_RANGE = rf"{_NUMBER}\s*(?:-|to|or)\s*{_NUMBER}\s*(?:{_UNIT})\b"
_METRIC_RE = re.compile(rf"(?<![\w.])(?P<num>{_NUMBER})\s*(?P<unit>{_UNIT})\b", re.IGNORECASE)
_RANGE_RE = re.compile(rf"(?<![\w.]){_RANGE}", re.IGNORECASE)
_VAGUE_RE = re.compile(
    rf"\b(?:{'|'.join(VAGUE_WORDS)})\s+(?:a\s+)?(?:of\s+)?(?:{_NUMBER}\s*)?(?:{_UNIT}|mile|miles|yard|yards)\b"
    rf"|\b(?:a|one|half\s+a)\s+(?:mile|miles|yard|yards)\b",
    re.IGNORECASE,
)
_FILLER_RE = re.compile(rf"\s*(?:(?:{'|'.join(FILLER_WORDS)})\s+)*", re.IGNORECASE)


def _phrase_regex(phrases) -> re.Pattern:
    alts = sorted(phrases, key=len, reverse=True)
    body = "|".join(r"\s+".join(map(re.escape, p.split())) for p in alts)
    return re.compile(rf"(?<![\w'-])(?:{body})(?![\w'-])", re.IGNORECASE)


_PREDICATE_RE = _phrase_regex(PREDICATE_LEXICON)
_METRIC_ONLY_RE = _phrase_regex(METRIC_ONLY_LEXICON)
_WORD_RE = re.compile(_WORD, re.IGNORECASE)


def _lookup(table: dict[str, Predicate], phrase: str) -> Predicate:
    return table[" ".join(phrase.lower().split())]


def _number_value(text: str) -> float:
    text = " ".join(text.lower().split())
    if " point " in text:
        whole, frac = text.split(" point ")
        return float(f"{NUMBER_WORDS[whole]}.{NUMBER_WORDS[frac]}")
    if text in NUMBER_WORDS:
        return float(NUMBER_WORDS[text])
    return float(text)


@dataclass
class _Match:
    start: int
    end: int
    predicate: Predicate


def _predicate_matches(text: str, metrics: list[re.Match]) -> list[_Match]:
    found = [_Match(m.start(), m.end(), _lookup(PREDICATE_LEXICON, m.group())) for m in _PREDICATE_RE.finditer(text)]
    for m in _METRIC_ONLY_RE.finditer(text):
        if any(_binds(text, metric, m.start()) for metric in metrics):
            found.append(_Match(m.start(), m.end(), _lookup(METRIC_ONLY_LEXICON, m.group())))
    found.sort(key=lambda m: (m.start, -m.end))
    kept: list[_Match] = []
    for m in found:
        if kept and m.start < kept[-1].end:
            continue
        kept.append(m)
    return kept


def _binds(text: str, metric: re.Match, predicate_start: int) -> bool:
    # Fillers may also open the predicate phrase itself ("away from").
    if predicate_start < metric.end():
        return False
    gap = _FILLER_RE.fullmatch(text, metric.end(), predicate_start)
    return gap is not None


def _read_noun_phrase(text: str, pos: int, limit: int) -> tuple[str, int]:
    """Collect words from ``pos`` up to a boundary; returns (phrase, end offset)."""
    words: list[str] = []
    end = i = pos
    while i < limit:
        if text[i].isspace():
            i += 1
            continue
        m = _WORD_RE.match(text, i)
        if m is None or m.end() > limit:
            break
        word = m.group().lower()
        if word in STOP_WORDS:
            break
        if words or word not in DETERMINERS:
            words.append(word)
            end = m.end()
        i = m.end()
    return " ".join(words), end


def parse(text: str) -> SDCQuery:
    if not text or not text.strip():
        raise NoPredicateFound("empty instruction")
    if _RANGE_RE.search(text):
        m = _RANGE_RE.search(text)
        raise InvalidMetric(f"distance ranges are not supported: {m.group()!r}", (m.start(), m.end()))
    vague = _VAGUE_RE.search(text)
    if vague:
        raise InvalidMetric(f"vague quantity not supported: {vague.group()!r}", (vague.start(), vague.end()))

    metrics = list(_METRIC_RE.finditer(text))
    preds = _predicate_matches(text, metrics)
    if not preds:
        raise NoPredicateFound(f"no spatial relation recognised in {text!r}")

    bound: dict[int, re.Match] = {}
    for metric in metrics:
        target = next((i for i, p in enumerate(preds) if _binds(text, metric, p.start)), None)
        if target is None:
            raise AmbiguousMetricBinding(
                f"distance {metric.group()!r} is not attached to any spatial relation", (metric.start(), metric.end())
            )
        if preds[target].predicate is Predicate.BETWEEN:
            raise AmbiguousMetricBinding(
                f"distance {metric.group()!r} cannot bind to 'between'", (metric.start(), preds[target].end)
            )
        bound[target] = metric

    clauses = []
    for i, p in enumerate(preds):
        limit = preds[i + 1].start if i + 1 < len(preds) else len(text)
        nxt_metric = [m.start() for m in metrics if p.end <= m.start() < limit]
        if nxt_metric:
            limit = min(nxt_metric)
        anchor, end = _read_noun_phrase(text, p.end, limit)
        anchor2 = None
        if p.predicate is Predicate.BETWEEN:
            m_and = re.compile(r"\s*and\b", re.IGNORECASE).match(text, end)
            if not anchor or m_and is None:
                raise MissingAnchor("'between' needs two anchors joined by 'and'", (p.start, end))
            anchor2, end = _read_noun_phrase(text, m_and.end(), limit)
            if not anchor2:
                raise MissingAnchor("'between' needs a second anchor", (p.start, end))
        if not anchor:
            raise MissingAnchor(f"no anchor object after {text[p.start:p.end]!r}", (p.start, p.end))
        metric = None
        start = p.start
        if i in bound:
            m = bound[i]
            unit = UNIT_WORDS[m.group("unit").lower()]
            distance = _number_value(m.group("num")) * UNIT_TO_METERS[unit]
            try:
                metric = MetricConstraint(distance, unit)
            except InvalidMetric as exc:
                raise InvalidMetric(str(exc), (m.start(), m.end())) from None
            start = m.start()
        clauses.append(SDCClause(anchor, p.predicate, metric, (start, end), anchor2))

    kind = QueryKind.WHERE if re.match(r"\s*where\b", text, re.IGNORECASE) else QueryKind.WHICH_OBJECT
    return SDCQuery(kind, tuple(clauses), text)


def clause_to_canonical_string(clause: SDCClause) -> str:
    if clause.predicate is Predicate.BETWEEN:
        return f"between({clause.anchor_text}, {clause.anchor_text_2})"
    if clause.metric is None:
        return f"{clause.predicate.value}({clause.anchor_text})"
    return f"{clause.predicate.value}({clause.anchor_text}, {clause.metric.distance:.3f}m)"


_CANON_RE = re.compile(r"^(?P<pred>[a-z_]+)\((?P<args>[^()]*)\)$")


def clause_from_canonical(text: str) -> SDCClause:
    """Inverse of :func:`clause_to_canonical_string`."""
    m = _CANON_RE.match(text.strip())
    if m is None:
        raise ParseError(f"not a canonical clause: {text!r}")
    try:
        pred = Predicate(m.group("pred"))
    except ValueError:
        raise ParseError(f"unknown predicate {m.group('pred')!r}") from None
    args = [a.strip() for a in m.group("args").split(",")]
    if pred is Predicate.BETWEEN:
        if len(args) != 2:
            raise ParseError("between() takes two anchors")
        return SDCClause(args[0], pred, None, (0, len(text)), args[1])
    metric = None
    if len(args) == 2:
        if not args[1].endswith("m"):
            raise ParseError(f"metric argument must be in meters: {args[1]!r}")
        metric = MetricConstraint(float(args[1][:-1]), Unit.METER)
    elif len(args) != 1:
        raise ParseError(f"too many arguments in {text!r}")
    return SDCClause(args[0], pred, metric, (0, len(text)))
