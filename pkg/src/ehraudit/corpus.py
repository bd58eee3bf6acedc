"""Patient trajectories, prompt construction, and sensitive-code categories.

A trajectory is one patient's chronologically ordered token sequence: event
tokens carrying a code id, interleaved with time-gap tokens counting whole
hours between recorded events. Gaps shorter than one hour are never recorded,
so ``gap_hours >= 1`` always. Prompts are trajectory prefixes built under a
named setup (``random``, ``static``, ``n_codes``), optionally with every code
of a sensitive category stripped out first.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import CohortFormatError

EVENT = "event"
TIME_GAP = "time-gap"


@dataclass(frozen=True)
class CodeToken:
    """One token of a trajectory: either a coded event or an hour-gap."""

    id: str = ""
    kind: str = EVENT
    gap_hours: int = 0

    def __post_init__(self):
        if self.kind == EVENT:
            if not self.id:
                raise CohortFormatError("event token requires a code id")
            if self.gap_hours:
                raise CohortFormatError("event token carries no gap")
        elif self.kind == TIME_GAP:
            if self.id:
                raise CohortFormatError("time-gap token carries no code id")
            if not isinstance(self.gap_hours, int) or self.gap_hours < 1:
                raise CohortFormatError(
                    f"gap_hours must be an integer >= 1, got {self.gap_hours!r}"
                )
        else:
            raise CohortFormatError(f"unknown token kind {self.kind!r}")

    @property
    def is_gap(self) -> bool:
        return self.kind == TIME_GAP


def event(code_id: str) -> CodeToken:
    return CodeToken(id=code_id, kind=EVENT)


def gap(hours: int) -> CodeToken:
    return CodeToken(kind=TIME_GAP, gap_hours=hours)


@dataclass(frozen=True)
class Trajectory:
    """One patient's record: static attributes plus the ordered token list."""

    patient_id: str
    statics: dict
    events: tuple
    cohort_tag: str = "unknown"

    def __post_init__(self):
        if self.cohort_tag not in ("train", "test", "unknown"):
            raise CohortFormatError(f"unknown cohort tag {self.cohort_tag!r}")
        object.__setattr__(self, "events", tuple(self.events))
        prev_gap = False
        for tok in self.events:
            if tok.is_gap and prev_gap:
                raise CohortFormatError(
                    f"patient {self.patient_id}: consecutive time-gap tokens"
                )
            prev_gap = tok.is_gap

    def event_codes(self) -> list[str]:
        return [t.id for t in self.events if not t.is_gap]


@dataclass(frozen=True)
class SensitiveCategory:
    """A named family of code-id prefixes whose disclosure is high risk."""

    name: str
    code_prefixes: tuple

    def __post_init__(self):
        object.__setattr__(self, "code_prefixes", tuple(self.code_prefixes))
        if not self.code_prefixes:
            raise ValueError(f"category {self.name!r} has no prefixes")

    def matches(self, code_id: str) -> bool:
        return any(code_id.startswith(p) for p in self.code_prefixes)

    @classmethod
    def from_json(cls, text: str) -> "SensitiveCategory":
        obj = json.loads(text)
        return cls(name=obj["name"], code_prefixes=tuple(obj["prefixes"]))


RANDOM = "random"
STATIC = "static"
N_CODES = "n_codes"


@dataclass(frozen=True)
class PromptSetup:
    """Information level handed to the model when prompting."""

    kind: str
    n: Optional[int] = None
    strip_category: Optional[SensitiveCategory] = None

    def __post_init__(self):
        if self.kind not in (RANDOM, STATIC, N_CODES):
            raise ValueError(f"unknown prompt setup kind {self.kind!r}")
        if self.kind == N_CODES:
            if self.n is None or self.n <= 0:
                raise ValueError("n_codes setup requires a positive n")
        elif self.n is not None:
            raise ValueError(f"{self.kind} setup takes no n")

    def label(self) -> str:
        if self.kind == N_CODES:
            return f"{self.n}_codes"
        return self.kind


@dataclass(frozen=True)
class Prompt:
    """A trajectory prefix (possibly empty) plus copied static attributes."""

    source_patient: str
    setup: PromptSetup
    tokens: tuple
    statics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def model_view(self) -> dict:
        """What the model is actually conditioned on.

        Random prompts expose nothing; static prompts only the statics map;
        n-codes prompts the statics plus the token prefix. Adapters hash this
        view, so two random prompts from different patients are one request.
        """
        if self.setup.kind == RANDOM:
            return {"statics": {}, "tokens": []}
        if self.setup.kind == STATIC:
            return {"statics": dict(self.statics), "tokens": []}
        return {"statics": dict(self.statics), "tokens": tokens_to_wire(self.tokens)}


def tokens_to_wire(tokens: Iterable[CodeToken]) -> list:
    """Wire encoding: event tokens as strings, gaps as bare integers."""
    return [t.gap_hours if t.is_gap else t.id for t in tokens]


def tokens_from_wire(items: Iterable) -> list[CodeToken]:
    out = []
    for it in items:
        if isinstance(it, str):
            out.append(event(it))
        elif isinstance(it, bool):
            raise CohortFormatError(f"invalid wire token {it!r}")
        elif isinstance(it, int):
            out.append(gap(it))
        elif isinstance(it, dict) and "code" in it:
            out.append(event(it["code"]))
        elif isinstance(it, dict) and "gap_hours" in it:
            out.append(gap(it["gap_hours"]))
        else:
            raise CohortFormatError(f"invalid wire token {it!r}")
    return out


def _parse_event_obj(obj, line_no):
    if not isinstance(obj, dict):
        raise CohortFormatError(f"event entry must be an object, got {obj!r}", line_no)
    if "code" in obj:
        if not isinstance(obj["code"], str) or not obj["code"]:
            raise CohortFormatError(f"bad code {obj['code']!r}", line_no)
        return event(obj["code"])
    if "gap_hours" in obj:
        hours = obj["gap_hours"]
        if not isinstance(hours, int) or isinstance(hours, bool) or hours < 1:
            raise CohortFormatError(f"gap_hours must be an integer >= 1, got {hours!r}", line_no)
        return gap(hours)
    raise CohortFormatError(f"event entry needs 'code' or 'gap_hours': {obj!r}", line_no)


def parse_cohort(stream) -> list[Trajectory]:
    """Parse a JSONL trajectory file into a list of trajectories.

    One record per line:
    ``{"patient_id": str, "cohort": "train"|"test", "statics": {...},
    "events": [{"code": str} | {"gap_hours": int>=1}, ...]}``.
    Raises :class:`CohortFormatError` with the offending line number on any
    malformed record, duplicate patient id, or invariant violation.
    """
    if isinstance(stream, (bytes, str)):
        stream = io.StringIO(stream.decode() if isinstance(stream, bytes) else stream)
    out = []
    seen = set()
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CohortFormatError(f"invalid JSON ({exc.msg})", line_no) from exc
        if not isinstance(obj, dict) or "patient_id" not in obj:
            raise CohortFormatError("record must be an object with a patient_id", line_no)
        pid = obj["patient_id"]
        if not isinstance(pid, str) or not pid:
            raise CohortFormatError(f"bad patient_id {pid!r}", line_no)
        if pid in seen:
            raise CohortFormatError(f"duplicate patient_id {pid!r}", line_no)
        seen.add(pid)
        statics = obj.get("statics", {})
        if not isinstance(statics, dict):
            raise CohortFormatError("statics must be an object", line_no)
        raw_events = obj.get("events", [])
        if not isinstance(raw_events, list) or not raw_events:
            raise CohortFormatError("events must be a nonempty list", line_no)
        tokens = [_parse_event_obj(e, line_no) for e in raw_events]
        try:
            traj = Trajectory(
                patient_id=pid,
                statics=statics,
                events=tokens,
                cohort_tag=obj.get("cohort", "unknown"),
            )
        except CohortFormatError as exc:
            raise CohortFormatError(str(exc), line_no) from exc
        out.append(traj)
    return out


def serialize_cohort(trajectories: Iterable[Trajectory]) -> str:
    """Inverse of :func:`parse_cohort`; emits one JSON record per line."""
    lines = []
    for t in trajectories:
        events = [
            {"gap_hours": tok.gap_hours} if tok.is_gap else {"code": tok.id}
            for tok in t.events
        ]
        rec = {
            "patient_id": t.patient_id,
            "cohort": t.cohort_tag,
            "statics": t.statics,
            "events": events,
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def strip_category(tokens: Iterable[CodeToken], category: SensitiveCategory) -> list[CodeToken]:
    """Delete category-matching event tokens, merging gaps left adjacent.

    When an event between two gaps is removed, the gaps collapse into one by
    summing, preserving total elapsed time.
    """
    out: list[CodeToken] = []
    for tok in tokens:
        if not tok.is_gap and category.matches(tok.id):
            continue
        if tok.is_gap and out and out[-1].is_gap:
            out[-1] = gap(out[-1].gap_hours + tok.gap_hours)
        else:
            out.append(tok)
    return out


def build_prompt(t: Trajectory, setup: PromptSetup) -> Prompt:
    """Build the prompt for one patient under the given setup.

    ``n_codes`` counts every token, time-gaps included, because the audited
    models tokenize time like any other symbol; stripping (when configured)
    happens before counting so a stripped prompt still carries n tokens when
    the record is long enough.
    """
    if setup.kind in (RANDOM, STATIC):
        return Prompt(t.patient_id, setup, (), dict(t.statics))
    if not t.events:
        raise CohortFormatError(f"patient {t.patient_id}: empty trajectory")
    tokens = list(t.events)
    if setup.strip_category is not None:
        tokens = strip_category(tokens, setup.strip_category)
    return Prompt(t.patient_id, setup, tuple(tokens[: setup.n]), dict(t.statics))


def contains_category(seq: Iterable[CodeToken], c: SensitiveCategory) -> bool:
    """True iff any event token's id starts with one of the category prefixes."""
    return any(not tok.is_gap and c.matches(tok.id) for tok in seq)
