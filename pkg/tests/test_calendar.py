from __future__ import annotations

import random

import pytest

from tablethought.table import ColumnKind, ColumnSpec, ReasoningTable, Row, TableSchema
from tablethought.tasks import ExtractionError
from tablethought.tasks.calendar import (
    CalendarInstance,
    CalendarParseError,
    NotAfter,
    NotBefore,
    Participant,
    ProposedMeeting,
    TimeInterval,
    check_meeting,
    extract_answer,
    free_intervals,
    generate_instances,
    parse_answer,
    parse_calendar_query,
    parse_time,
    parse_time_range,
    read_corpus,
    render_query,
    score_calendar,
    solve_calendar,
    write_corpus,
)


def interval(text: str) -> TimeInterval:
    return parse_time_range(text)


# ---------------------------------------------------------------------------
# Independent per-minute bitmap oracle for participant availability
# ---------------------------------------------------------------------------


def bitmap_free(participant: Participant, slot: TimeInterval) -> bool:
    minutes = [True] * 1440
    for span in participant.blocked:
        for m in range(span.start, span.end):
            minutes[m] = False
    return all(minutes[m] for m in range(slot.start, slot.end))


# ---------------------------------------------------------------------------
# Times and intervals
# ---------------------------------------------------------------------------


def test_parse_time_and_range():
    assert parse_time("9:00") == 540
    assert parse_time("14:30") == 870
    assert interval("14:30-15:00") == TimeInterval(870, 900)
    assert interval("14:30 - 15:00") == TimeInterval(870, 900)
    with pytest.raises(CalendarParseError):
        parse_time("25:00")


def test_intervals_are_half_open():
    # Back-to-back spans do not conflict.
    assert not interval("9:00-9:30").overlaps(interval("9:30-10:00"))
    assert interval("9:00-9:31").overlaps(interval("9:30-10:00"))


# ---------------------------------------------------------------------------
# Query parsing goldens
# ---------------------------------------------------------------------------


def test_parse_first_reference_query(c1_query):
    instance = parse_calendar_query(c1_query)
    assert [p.name for p in instance.participants] == ["Roy", "Kathryn", "Amy"]
    assert instance.day == "Monday"
    assert instance.duration == 30
    assert instance.work_hours == TimeInterval(540, 1020)

    roy, kathryn, amy = instance.participants
    assert roy.blocked == (
        interval("9:00-9:30"),
        interval("10:00-10:30"),
        interval("11:00-11:30"),
        interval("12:30-13:00"),
    )
    assert len(kathryn.blocked) == 2
    assert amy.blocked == (
        interval("9:00-14:30"),
        interval("15:00-16:00"),
        interval("16:30-17:00"),
    )
    assert amy.preference == NotAfter(parse_time("15:30"))
    assert roy.preference is None


def test_parse_second_reference_query(c2_query):
    instance = parse_calendar_query(c2_query)
    assert [p.name for p in instance.participants] == ["Kathryn", "Charlotte", "Lauren"]
    charlotte = instance.participant("Charlotte")
    assert charlotte.preference == NotAfter(parse_time("13:30"))
    assert charlotte.blocked == (interval("12:00-12:30"), interval("16:00-16:30"))


def test_parse_rejects_sentences_outside_template(c1_query):
    with pytest.raises(CalendarParseError) as err:
        parse_calendar_query(c1_query + " Roy likes long lunches.")
    assert "likes long lunches" in str(err.value)


def test_parse_rejects_unknown_participant_schedule(c1_query):
    bad = c1_query.replace("Find a time", "Bob has meetings on Monday during 9:00 to 9:30. Find a time")
    with pytest.raises(CalendarParseError):
        parse_calendar_query(bad)


def test_parse_rejects_multi_day_schedules(c1_query):
    bad = c1_query.replace(
        "Kathryn has meetings on Monday", "Kathryn has meetings on Tuesday"
    )
    with pytest.raises(CalendarParseError):
        parse_calendar_query(bad)


# ---------------------------------------------------------------------------
# check_meeting
# ---------------------------------------------------------------------------


def test_reference_slot_is_valid_with_no_violations(c1_query):
    instance = parse_calendar_query(c1_query)
    verdict = check_meeting(
        instance, ProposedMeeting("Monday", interval("14:30-15:00")), True
    )
    assert verdict.valid and verdict.violations == ()


def test_morning_slot_names_both_blockers(c1_query):
    # Derived by hand: 9:00-9:30 sits inside Roy's and Amy's first blocks.
    instance = parse_calendar_query(c1_query)
    verdict = check_meeting(instance, ProposedMeeting("Monday", interval("9:00-9:30")))
    assert not verdict.valid
    text = " ".join(verdict.violations)
    assert "Roy" in text and "Amy" in text and "Kathryn" not in text


def test_slot_outside_work_hours_invalid(c1_query):
    instance = parse_calendar_query(c1_query)
    verdict = check_meeting(instance, ProposedMeeting("Monday", interval("16:45-17:15")))
    assert not verdict.valid
    assert any("work hours" in v for v in verdict.violations)


def test_preference_boundary_is_inclusive(c2_query):
    # NotAfter(13:30) accepts a slot ending exactly at 13:30.
    instance = parse_calendar_query(c2_query)
    verdict = check_meeting(instance, ProposedMeeting("Monday", interval("13:00-13:30")))
    assert not any("prefers" in v for v in verdict.violations)
    verdict = check_meeting(instance, ProposedMeeting("Monday", interval("13:30-14:00")))
    assert any("prefers" in v for v in verdict.violations)


def test_wrong_day_and_wrong_duration_reported(c1_query):
    instance = parse_calendar_query(c1_query)
    verdict = check_meeting(instance, ProposedMeeting("Tuesday", interval("14:30-15:30")))
    assert not verdict.valid
    assert any("wrong day" in v for v in verdict.violations)
    assert any("minutes" in v for v in verdict.violations)


def test_blocking_is_monotone(c1_query):
    # Adding a blocked interval never turns an invalid slot valid.
    instance = parse_calendar_query(c1_query)
    rng = random.Random(3)
    for _ in range(100):
        start = rng.randrange(540, 990, 5)
        slot = TimeInterval(start, start + 30)
        before = check_meeting(instance, ProposedMeeting("Monday", slot)).valid
        extra_start = rng.randrange(540, 990, 5)
        extra = TimeInterval(extra_start, extra_start + 30)
        blocked_more = CalendarInstance(
            participants=tuple(
                Participant(p.name, p.blocked + (extra,), p.preference)
                for p in instance.participants
            ),
            day=instance.day,
            work_hours=instance.work_hours,
            duration=instance.duration,
        )
        after = check_meeting(blocked_more, ProposedMeeting("Monday", slot)).valid
        assert not (after and not before)


# ---------------------------------------------------------------------------
# Solver goldens (brute force over the 5-minute grid IS the oracle)
# ---------------------------------------------------------------------------


def test_solver_first_reference_instance(c1_query):
    solution = solve_calendar(parse_calendar_query(c1_query))
    assert solution is not None
    assert solution.respects_preferences
    assert solution.meeting.render() == "Monday 14:30-15:00"


def test_solver_second_reference_instance(c2_query):
    solution = solve_calendar(parse_calendar_query(c2_query))
    assert solution is not None
    assert solution.meeting.render() == "Monday 10:00-10:30"


def test_solver_none_when_fully_blocked():
    instance = CalendarInstance(
        participants=(
            Participant("Alone", blocked=(TimeInterval(540, 1020),)),
        )
    )
    assert solve_calendar(instance) is None


def test_solver_falls_back_when_preferences_unsatisfiable():
    # Free only in the afternoon, but prefers to end by 10:00.
    instance = CalendarInstance(
        participants=(
            Participant(
                "Picky",
                blocked=(TimeInterval(540, 900),),
                preference=NotAfter(600),
            ),
        )
    )
    solution = solve_calendar(instance)
    assert solution is not None
    assert not solution.respects_preferences
    assert solution.meeting.slot.start == 900


def test_availability_matches_bitmap_oracle_on_random_instances():
    rng = random.Random(11)
    for item in generate_instances(11, 30):
        instance = item.instance
        for _ in range(20):
            start = rng.randrange(540, 1020 - instance.duration + 1, 5)
            slot = TimeInterval(start, start + instance.duration)
            for participant in instance.participants:
                via_intervals = not any(slot.overlaps(b) for b in participant.blocked)
                assert via_intervals == bitmap_free(participant, slot)


def test_free_intervals_complement():
    blocked = (interval("9:00-9:30"), interval("10:30-11:00"))
    work = TimeInterval(540, 1020)
    free = free_intervals(blocked, work)
    assert free == (
        interval("9:30-10:30"),
        interval("11:00-17:00"),
    )
    # Complement law: every free minute is in no blocked span and vice versa.
    for span in free:
        assert not any(span.overlaps(b) for b in blocked)


# ---------------------------------------------------------------------------
# Answer extraction
# ---------------------------------------------------------------------------


def _meeting_table(rows: list[dict], columns: list[str]) -> ReasoningTable:
    schema = TableSchema(columns=tuple(ColumnSpec(c, ColumnKind.TEXT) for c in columns))
    built = tuple(
        Row(
            id=str(i + 1),
            cells={
                schema.columns[j].normalized: row.get(columns[j])
                for j in range(len(columns))
            },
        )
        for i, row in enumerate(rows)
    )
    return ReasoningTable(schema=schema, rows=built)


def test_extract_from_multi_row_table_takes_last_value():
    table = _meeting_table(
        [
            {"Participant Name": "Kathryn", "Proposed Meeting Time": "10:00-10:30"},
            {"Participant Name": "Charlotte", "Proposed Meeting Time": "10:00-10:30"},
            {"Participant Name": "Lauren", "Proposed Meeting Time": "10:00-10:30"},
        ],
        ["Participant Name", "Proposed Meeting Time"],
    )
    meeting = extract_answer(table, table.schema, default_day="Monday")
    assert meeting.render() == "Monday 10:00-10:30"


def test_extract_prefers_final_over_proposed_column():
    table = _meeting_table(
        [{"Proposed Meeting Time": "9:00-9:30", "Final Meeting Time": "14:30-15:00"}],
        ["Proposed Meeting Time", "Final Meeting Time"],
    )
    meeting = extract_answer(table, table.schema, default_day="Monday")
    assert meeting.slot == interval("14:30-15:00")


def test_extract_reads_day_column_when_present():
    table = _meeting_table(
        [{"Meeting Day": "Tuesday", "Selected Meeting Time": "9:00-9:30"}],
        ["Meeting Day", "Selected Meeting Time"],
    )
    meeting = extract_answer(table, table.schema, default_day="Monday")
    assert meeting.day == "Tuesday"


def test_extract_fails_on_all_null_answer_column():
    table = _meeting_table(
        [{"Proposed Meeting Time": None}], ["Proposed Meeting Time"]
    )
    with pytest.raises(ExtractionError):
        extract_answer(table, table.schema)


def test_extract_from_text_takes_last_match():
    text = (
        "Maybe Monday, 9:00 - 9:30? No - that conflicts. "
        "This works for all. Here is the proposed time: Monday, 14:30 - 15:00"
    )
    meeting = extract_answer(text, None)
    assert meeting.render() == "Monday 14:30-15:00"


def test_extract_from_text_without_match_fails():
    with pytest.raises(ExtractionError):
        extract_answer("no times mentioned here", None)


def test_parse_answer_round_trip():
    meeting = ProposedMeeting("Monday", interval("14:30-15:00"))
    assert parse_answer(meeting.render()) == meeting


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def test_score_exact_match_semantics(c1_query):
    instance = parse_calendar_query(c1_query)
    gold = ProposedMeeting("Monday", interval("14:30-15:00"))
    assert score_calendar(instance, gold, gold)
    assert not score_calendar(
        instance, ProposedMeeting("Monday", interval("15:00-15:30")), gold
    )
    # Valid but different from gold still scores false (exact-match rule).
    different = ProposedMeeting("Monday", interval("13:30-14:00"))
    assert not score_calendar(instance, different, gold)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def test_generation_is_deterministic():
    a = generate_instances(7, 3)
    b = generate_instances(7, 3)
    assert a == b


def test_generated_instances_round_trip_and_validate():
    for item in generate_instances(7, 25):
        assert parse_calendar_query(item.query_text) == item.instance
        assert check_meeting(item.instance, item.gold, respect_preferences=False).valid
        solution = solve_calendar(item.instance)
        assert solution is not None and solution.meeting == item.gold


def test_zero_block_instances_round_trip():
    # Participants without schedule sentences still survive render/parse.
    for item in generate_instances(5, 3, blocks_range=(0, 0), preference_prob=1.0):
        assert parse_calendar_query(item.query_text) == item.instance


def test_generated_corpus_file_round_trip(tmp_path):
    items = generate_instances(3, 5)
    path = tmp_path / "corpus.jsonl"
    write_corpus(items, path)
    loaded = read_corpus(path)
    assert [i.id for i in loaded] == [i.id for i in items]
    assert loaded[0].gold == items[0].gold
    assert parse_calendar_query(loaded[0].query_text) == items[0].instance


def test_solver_earliest_wins_exhaustively():
    # Any 5-min-aligned valid slot must start at or after the solver's answer.
    for item in generate_instances(21, 40):
        instance = item.instance
        solution = solve_calendar(instance)
        for start in range(540, 1020 - instance.duration + 1, 5):
            slot = TimeInterval(start, start + instance.duration)
            meeting = ProposedMeeting(instance.day, slot)
            if check_meeting(instance, meeting, respect_preferences=True).valid:
                assert solution.meeting.slot.start <= start
