"""Calendar scheduling: templated queries, a deterministic checker, and a
brute-force solver that doubles as the scoring oracle.

Queries follow the templated single-day form ("You need to schedule a meeting
for A, B and C for half an hour between the work hours of 9:00 to 17:00 on
Monday. ..."). Intervals are half-open [start, end) in minutes since
midnight, so a meeting may start exactly when a blocked span ends. The solver
enumerates candidate starts on a 5-minute grid and returns the earliest slot
that satisfies every schedule and preference; when preferences are jointly
unsatisfiable it falls back to the earliest schedule-only slot and flags the
result.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

from ..table import ReasoningTable, TableSchema
from . import ExtractionError

__all__ = [
    "CalendarInstance",
    "CalendarParseError",
    "CalendarSolution",
    "GeneratedInstance",
    "MeetingVerdict",
    "NotAfter",
    "NotBefore",
    "Participant",
    "ProposedMeeting",
    "TimeInterval",
    "check_meeting",
    "extract_answer",
    "format_time",
    "free_intervals",
    "generate_instances",
    "parse_answer",
    "parse_calendar_query",
    "parse_time",
    "parse_time_range",
    "read_corpus",
    "render_query",
    "score_calendar",
    "solve_calendar",
    "write_corpus",
]

WEEKDAYS = (
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
)

SLOT_GRANULARITY = 5  # minutes between candidate starts the solver tries


class CalendarParseError(ValueError):
    """Query text outside the recognized template; carries the bad sentence."""

    def __init__(self, sentence: str, why: str = "unrecognized sentence"):
        super().__init__(f"{why}: {sentence!r}")
        self.sentence = sentence


def parse_time(text: str) -> int:
    m = re.fullmatch(r"(\d{1,2}):(\d{2})", text.strip())
    if not m:
        raise CalendarParseError(text, "not a H:MM time")
    hours, minutes = int(m.group(1)), int(m.group(2))
    if hours > 24 or minutes > 59 or hours * 60 + minutes > 1440:
        raise CalendarParseError(text, "time out of range")
    return hours * 60 + minutes


def format_time(minutes: int) -> str:
    return f"{minutes // 60}:{minutes % 60:02d}"


@dataclass(frozen=True)
class TimeInterval:
    """Half-open span [start, end) in minutes since midnight."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end <= 1440):
            raise ValueError(f"bad interval [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "TimeInterval") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, other: "TimeInterval") -> bool:
        return self.start <= other.start and other.end <= self.end

    def render(self) -> str:
        return f"{format_time(self.start)}-{format_time(self.end)}"


def parse_time_range(text: str) -> TimeInterval:
    """Parse "14:30-15:00" (also "14:30 - 15:00" and "14:30 to 15:00")."""
    m = re.fullmatch(
        r"\s*(\d{1,2}:\d{2})\s*(?:-|–|to)\s*(\d{1,2}:\d{2})\s*", text
    )
    if not m:
        raise CalendarParseError(text, "not a time range")
    return TimeInterval(parse_time(m.group(1)), parse_time(m.group(2)))


@dataclass(frozen=True)
class NotAfter:
    """Meeting must end by this minute."""

    minute: int


@dataclass(frozen=True)
class NotBefore:
    """Meeting must not start before this minute."""

    minute: int


Preference = Union[NotAfter, NotBefore, None]


@dataclass(frozen=True)
class Participant:
    name: str
    blocked: tuple[TimeInterval, ...] = ()
    preference: Preference = None


@dataclass(frozen=True)
class CalendarInstance:
    participants: tuple[Participant, ...]
    day: str = "Monday"
    work_hours: TimeInterval = TimeInterval(9 * 60, 17 * 60)
    duration: int = 30

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        names = [p.name for p in self.participants]
        if len(set(names)) != len(names):
            raise ValueError("participant names must be distinct")

    def participant(self, name: str) -> Participant | None:
        for p in self.participants:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class ProposedMeeting:
    day: str
    slot: TimeInterval

    def render(self) -> str:
        return f"{self.day} {self.slot.render()}"


def parse_answer(text: str) -> ProposedMeeting:
    """Parse the canonical answer form "<Day> HH:MM-HH:MM"."""
    m = re.fullmatch(
        r"\s*(" + "|".join(WEEKDAYS) + r")[,\s]+(\d{1,2}:\d{2}\s*[-–]\s*\d{1,2}:\d{2})\s*",
        text,
    )
    if not m:
        raise CalendarParseError(text, "not a canonical meeting answer")
    return ProposedMeeting(day=m.group(1), slot=parse_time_range(m.group(2)))


# ---------------------------------------------------------------------------
# Query parsing
# ---------------------------------------------------------------------------

_DAY_ALT = "|".join(WEEKDAYS)
_TIME = r"\d{1,2}:\d{2}"
_NAME = r"[A-Z][A-Za-z'\-]*"

_MEETING_RE = re.compile(
    rf"You need to schedule a meeting for (?P<names>{_NAME}(?:\s*,\s*{_NAME})*(?:\s+and\s+{_NAME})?) "
    rf"for (?P<duration>half an hour|one hour) between the work hours of "
    rf"(?P<ws>{_TIME}) to (?P<we>{_TIME}) on (?P<day>{_DAY_ALT})$"
)

_SCHEDULE_INTRO = "Here are the existing schedules for everyone during the day:"

_BLOCKED_RE = re.compile(
    rf"(?P<name>{_NAME}) has (?:blocked their calendar|meetings) on (?P<day>{_DAY_ALT}) "
    rf"during (?P<times>{_TIME} to {_TIME}(?:\s*,\s*{_TIME} to {_TIME})*)$"
)

_PREFERENCE_RE = re.compile(
    rf"(?P<name>{_NAME}) (?:would rather not meet|do not want to meet|does not want to meet) "
    rf"on (?P<day>{_DAY_ALT}) (?P<direction>after|before) (?P<time>{_TIME})$"
)

_FINAL_RE = re.compile(
    r"Find a time that works for everyone'?s schedule and constraints$"
)

_DURATIONS = {"half an hour": 30, "one hour": 60}


def _segments(text: str) -> list[str]:
    collapsed = " ".join(text.split())
    parts = [p.strip() for p in re.split(r"[.;]", collapsed)]
    return [p for p in parts if p]


def parse_calendar_query(text: str) -> CalendarInstance:
    """Parse a templated query; unrecognized sentences raise CalendarParseError."""
    names: list[str] = []
    day: str | None = None
    work: TimeInterval | None = None
    duration: int | None = None
    blocked: dict[str, list[TimeInterval]] = {}
    preferences: dict[str, Preference] = {}

    for segment in _segments(text):
        if segment.startswith(_SCHEDULE_INTRO):
            segment = segment[len(_SCHEDULE_INTRO):].strip()
            if not segment:
                continue

        m = _MEETING_RE.fullmatch(segment)
        if m:
            if names:
                raise CalendarParseError(segment, "duplicate meeting sentence")
            names = [n.strip() for n in re.split(r",\s*|\s+and\s+", m.group("names"))]
            duration = _DURATIONS[m.group("duration")]
            work = TimeInterval(parse_time(m.group("ws")), parse_time(m.group("we")))
            day = m.group("day")
            continue

        m = _BLOCKED_RE.fullmatch(segment)
        if m:
            name = m.group("name")
            if name not in names:
                raise CalendarParseError(segment, f"unknown participant {name!r}")
            if day is not None and m.group("day") != day:
                raise CalendarParseError(segment, "schedule on a different day")
            spans = blocked.setdefault(name, [])
            for chunk in re.split(r"\s*,\s*", m.group("times")):
                start_text, end_text = chunk.split(" to ")
                spans.append(TimeInterval(parse_time(start_text), parse_time(end_text)))
            continue

        m = _PREFERENCE_RE.fullmatch(segment)
        if m:
            name = m.group("name")
            if name not in names:
                raise CalendarParseError(segment, f"unknown participant {name!r}")
            if day is not None and m.group("day") != day:
                raise CalendarParseError(segment, "preference on a different day")
            minute = parse_time(m.group("time"))
            preferences[name] = (
                NotAfter(minute) if m.group("direction") == "after" else NotBefore(minute)
            )
            continue

        if _FINAL_RE.fullmatch(segment):
            continue

        raise CalendarParseError(segment)

    if not names or day is None or work is None or duration is None:
        raise CalendarParseError(text, "missing meeting sentence")

    participants = tuple(
        Participant(
            name=name,
            blocked=tuple(blocked.get(name, ())),
            preference=preferences.get(name),
        )
        for name in names
    )
    return CalendarInstance(
        participants=participants, day=day, work_hours=work, duration=duration
    )


# ---------------------------------------------------------------------------
# Checking and solving
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeetingVerdict:
    valid: bool
    violations: tuple[str, ...] = ()


def check_meeting(
    instance: CalendarInstance,
    meeting: ProposedMeeting,
    respect_preferences: bool = True,
) -> MeetingVerdict:
    """Deterministic validity check of a proposed slot against the instance."""
    violations: list[str] = []
    slot = meeting.slot
    if meeting.day != instance.day:
        violations.append(f"wrong day: {meeting.day} (need {instance.day})")
    if slot.length != instance.duration:
        violations.append(
            f"slot is {slot.length} minutes (need {instance.duration})"
        )
    if not instance.work_hours.contains(slot):
        violations.append(
            f"outside work hours {instance.work_hours.render()}"
        )
    for participant in instance.participants:
        for span in participant.blocked:
            if slot.overlaps(span):
                violations.append(f"{participant.name} blocked {span.render()}")
        if respect_preferences and participant.preference is not None:
            pref = participant.preference
            if isinstance(pref, NotAfter) and slot.end > pref.minute:
                violations.append(
                    f"{participant.name} prefers not after {format_time(pref.minute)}"
                )
            elif isinstance(pref, NotBefore) and slot.start < pref.minute:
                violations.append(
                    f"{participant.name} prefers not before {format_time(pref.minute)}"
                )
    return MeetingVerdict(valid=not violations, violations=tuple(violations))


@dataclass(frozen=True)
class CalendarSolution:
    meeting: ProposedMeeting
    respects_preferences: bool


def _candidate_slots(instance: CalendarInstance) -> Iterable[TimeInterval]:
    work = instance.work_hours
    for start in range(work.start, work.end - instance.duration + 1, SLOT_GRANULARITY):
        yield TimeInterval(start, start + instance.duration)


def solve_calendar(instance: CalendarInstance) -> CalendarSolution | None:
    """Earliest valid slot on the 5-minute grid, preferences first.

    Preferences are hard while satisfiable; when no slot respects them the
    earliest schedule-only slot is returned flagged, and None means no slot
    fits the schedules at all.
    """
    for respect in (True, False):
        for slot in _candidate_slots(instance):
            meeting = ProposedMeeting(day=instance.day, slot=slot)
            if check_meeting(instance, meeting, respect_preferences=respect).valid:
                return CalendarSolution(meeting=meeting, respects_preferences=respect)
    return None


def free_intervals(
    blocked: Iterable[TimeInterval], work_hours: TimeInterval
) -> tuple[TimeInterval, ...]:
    """Complement of the blocked spans within working hours."""
    spans = sorted(
        (s for s in blocked if s.overlaps(work_hours)), key=lambda s: (s.start, s.end)
    )
    free: list[TimeInterval] = []
    cursor = work_hours.start
    for span in spans:
        start = max(span.start, work_hours.start)
        if start > cursor:
            free.append(TimeInterval(cursor, start))
        cursor = max(cursor, min(span.end, work_hours.end))
    if cursor < work_hours.end:
        free.append(TimeInterval(cursor, work_hours.end))
    return tuple(free)


def score_calendar(
    instance: CalendarInstance, predicted: ProposedMeeting, gold: ProposedMeeting
) -> bool:
    """Exact match on day and slot; a merely-valid different slot scores 0."""
    return (
        predicted.day == gold.day
        and predicted.slot.start == gold.slot.start
        and predicted.slot.end == gold.slot.end
    )


# ---------------------------------------------------------------------------
# Answer extraction from reasoning state
# ---------------------------------------------------------------------------

_ANSWER_COLUMN_RE = re.compile(r"(proposed|final|selected).*meeting.*time")
_DAY_COLUMN_RE = re.compile(r"(^|\s)day($|\s)")

_TEXT_ANSWER_RE = re.compile(
    rf"({_DAY_ALT})[,:]?\s*(\d{{1,2}}:\d{{2}})\s*[-–]\s*(\d{{1,2}}:\d{{2}})"
)


def _last_non_null(table: ReasoningTable, column_normalized: str):
    for row in reversed(table.rows):
        value = row.cells.get(column_normalized)
        if value is not None:
            return value
    return None


def extract_answer(
    state: ReasoningTable | str | None,
    schema: TableSchema | None,
    default_day: str = "Monday",
) -> ProposedMeeting:
    """Read the proposed meeting out of a final table or text draft.

    Table mode looks for a proposed/final/selected-meeting-time column and
    takes its last non-null value; the day comes from a day-named column when
    one exists, else ``default_day``. Text mode takes the last "Day HH:MM-HH:MM"
    match. Raises ExtractionError when nothing parseable is present.
    """
    if isinstance(state, ReasoningTable):
        answer_col = None
        for preference in ("final", "proposed", "selected"):
            for col in state.schema.columns:
                m = _ANSWER_COLUMN_RE.search(col.normalized)
                if m and m.group(1) == preference:
                    answer_col = col
                    break
            if answer_col:
                break
        if answer_col is None:
            raise ExtractionError("no meeting-time column in the final table")
        value = _last_non_null(state, answer_col.normalized)
        if value is None:
            raise ExtractionError(f"column {answer_col.name!r} has no value")
        try:
            slot = parse_time_range(str(value))
        except CalendarParseError as exc:
            raise ExtractionError(str(exc)) from exc

        day = default_day
        for col in state.schema.columns:
            if _DAY_COLUMN_RE.search(col.normalized):
                candidate = _last_non_null(state, col.normalized)
                if isinstance(candidate, str) and candidate.strip() in WEEKDAYS:
                    day = candidate.strip()
                break
        return ProposedMeeting(day=day, slot=slot)

    if isinstance(state, str):
        matches = list(_TEXT_ANSWER_RE.finditer(state))
        if not matches:
            raise ExtractionError("no day + time-range found in text")
        m = matches[-1]
        return ProposedMeeting(
            day=m.group(1),
            slot=TimeInterval(parse_time(m.group(2)), parse_time(m.group(3))),
        )

    raise ExtractionError("no final state to extract from")


# ---------------------------------------------------------------------------
# Instance generation and rendering
# ---------------------------------------------------------------------------

_NAME_POOL = (
    "Roy",
    "Kathryn",
    "Amy",
    "Charlotte",
    "Lauren",
    "Jesse",
    "Megan",
    "Daniel",
    "Sophie",
    "Victor",
    "Noah",
    "Priya",
    "Hannah",
    "Marcus",
    "Elena",
    "Tom",
)


def render_query(instance: CalendarInstance) -> str:
    """Render an instance back into the recognized query template."""
    names = [p.name for p in instance.participants]
    if len(names) == 1:
        name_list = names[0]
    else:
        name_list = ", ".join(names[:-1]) + " and " + names[-1]
    duration_text = {30: "half an hour", 60: "one hour"}.get(instance.duration)
    if duration_text is None:
        raise ValueError(f"no template wording for duration {instance.duration}")

    parts = [
        f"You need to schedule a meeting for {name_list} for {duration_text} "
        f"between the work hours of {format_time(instance.work_hours.start)} to "
        f"{format_time(instance.work_hours.end)} on {instance.day}. "
    ]
    schedule_bits = []
    for p in instance.participants:
        if not p.blocked:
            continue
        spans = ", ".join(f"{format_time(s.start)} to {format_time(s.end)}" for s in p.blocked)
        verb = "has blocked their calendar" if len(schedule_bits) % 2 == 0 else "has meetings"
        schedule_bits.append(f"{p.name} {verb} on {instance.day} during {spans}")
    parts.append(
        "Here are the existing schedules for everyone during the day: "
        + "; ".join(schedule_bits)
        + ". "
        if schedule_bits
        else "Here are the existing schedules for everyone during the day: "
    )
    for p in instance.participants:
        if isinstance(p.preference, NotAfter):
            parts.append(
                f"{p.name} would rather not meet on {instance.day} after "
                f"{format_time(p.preference.minute)}. "
            )
        elif isinstance(p.preference, NotBefore):
            parts.append(
                f"{p.name} do not want to meet on {instance.day} before "
                f"{format_time(p.preference.minute)}. "
            )
    parts.append("Find a time that works for everyone's schedule and constraints.")
    return "".join(parts)


@dataclass(frozen=True)
class GeneratedInstance:
    id: str
    instance: CalendarInstance
    query_text: str
    gold: ProposedMeeting


def generate_instances(
    seed: int,
    n: int,
    *,
    participants_range: tuple[int, int] = (2, 4),
    blocks_range: tuple[int, int] = (1, 4),
    preference_prob: float = 0.35,
    durations: tuple[int, ...] = (30, 60),
) -> list[GeneratedInstance]:
    """Deterministically generate solvable instances with their gold answers.

    Every instance has at least one valid slot (unsolvable drafts are
    discarded and redrawn), the rendered text re-parses to an equal instance,
    and the gold answer is the solver's earliest slot.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    out: list[GeneratedInstance] = []
    work = TimeInterval(9 * 60, 17 * 60)
    grid = list(range(work.start, work.end, 30))

    while len(out) < n:
        count = rng.randint(*participants_range)
        names = rng.sample(_NAME_POOL, count)
        duration = rng.choice(durations)
        people = []
        for name in names:
            n_blocks = rng.randint(*blocks_range)
            starts = sorted(rng.sample(grid, min(n_blocks, len(grid))))
            spans: list[TimeInterval] = []
            for start in starts:
                length = rng.choice((30, 30, 60))
                end = min(start + length, work.end)
                if spans and spans[-1].end > start:
                    continue
                spans.append(TimeInterval(start, end))
            preference: Preference = None
            if rng.random() < preference_prob:
                pivot = rng.choice(grid[2:-2])
                preference = (
                    NotAfter(pivot) if rng.random() < 0.5 else NotBefore(pivot)
                )
            people.append(Participant(name=name, blocked=tuple(spans), preference=preference))
        instance = CalendarInstance(
            participants=tuple(people), day="Monday", work_hours=work, duration=duration
        )
        solution = solve_calendar(instance)
        if solution is None:
            continue
        item_id = f"cal-{seed}-{len(out):04d}"
        out.append(
            GeneratedInstance(
                id=item_id,
                instance=instance,
                query_text=render_query(instance),
                gold=solution.meeting,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Corpus files (JSON lines)
# ---------------------------------------------------------------------------


def write_corpus(items: Iterable[GeneratedInstance], path: str | Path) -> None:
    with open(path, "w") as fh:
        for item in items:
            fh.write(
                json.dumps(
                    {
                        "id": item.id,
                        "query_text": item.query_text,
                        "gold": {
                            "day": item.gold.day,
                            "start": item.gold.slot.start,
                            "end": item.gold.slot.end,
                        },
                    }
                )
                + "\n"
            )


@dataclass(frozen=True)
class CorpusItem:
    id: str
    query_text: str
    gold: ProposedMeeting | None


def read_corpus(path: str | Path) -> list[CorpusItem]:
    items: list[CorpusItem] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        gold = None
        if doc.get("gold"):
            gold = ProposedMeeting(
                day=doc["gold"]["day"],
                slot=TimeInterval(int(doc["gold"]["start"]), int(doc["gold"]["end"])),
            )
        items.append(CorpusItem(id=str(doc["id"]), query_text=doc["query_text"], gold=gold))
    return items
