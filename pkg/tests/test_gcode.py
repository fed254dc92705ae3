"""G-code dialect: golden parses, negative cases, serializer round-trip."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probestation import gcode
from probestation.gcode import (
    BadNumber,
    DuplicateWord,
    EmptyCommand,
    GCodeCommand,
    UnexpectedValue,
    UnknownVerb,
    UnknownWord,
    Verb,
    parse_line,
    serialize,
)


def test_parse_linear_move():
    cmd = parse_line("G1 X10.5 Y-2 F600")
    assert cmd == GCodeCommand(Verb.LINEAR_MOVE, x=10.5, y=-2.0, f=600.0)


def test_parse_emergency_stop_keyword():
    assert parse_line("M112") == GCodeCommand(Verb.EMERGENCY_STOP)


def test_unknown_word_offset():
    with pytest.raises(UnknownWord) as err:
        parse_line("G1 Q5")
    assert err.value.offset == 3


def test_unknown_verb_offset():
    with pytest.raises(UnknownVerb) as err:
        parse_line("  G2 X1")
    assert err.value.offset == 2


def test_duplicate_word():
    with pytest.raises(DuplicateWord) as err:
        parse_line("G1 X1 X2")
    assert err.value.offset == 6


def test_bad_number():
    with pytest.raises(BadNumber):
        parse_line("G1 Xfoo")


def test_rejects_non_positive_feed():
    with pytest.raises(BadNumber):
        parse_line("G1 X1 F0")
    with pytest.raises(BadNumber):
        parse_line("G1 X1 F-5")


def test_empty_and_comment_only_lines():
    with pytest.raises(EmptyCommand):
        parse_line("")
    with pytest.raises(EmptyCommand):
        parse_line("   ; just a comment")


def test_comment_stripped():
    cmd = parse_line("G0 X5 ; park")
    assert cmd == GCodeCommand(Verb.RAPID_MOVE, x=5.0)


def test_home_with_axis_flags():
    assert parse_line("G28") == GCodeCommand(Verb.HOME)
    assert parse_line("g28 x z") == GCodeCommand(Verb.HOME, home_axes=frozenset({"x", "z"}))
    with pytest.raises(UnexpectedValue):
        parse_line("G28 X10")


def test_bare_verbs_take_no_words():
    with pytest.raises(UnknownWord):
        parse_line("M114 X1")
    with pytest.raises(UnknownWord):
        parse_line("G90 X1")


def test_g10_is_not_g1():
    with pytest.raises(UnknownVerb):
        parse_line("G10 X1")


def test_only_recognized_verbs_constructible():
    with pytest.raises(gcode.GCodeError):
        GCodeCommand("G2")
    with pytest.raises(BadNumber):
        GCodeCommand(Verb.LINEAR_MOVE, x=float("inf"))
    with pytest.raises(UnexpectedValue):
        GCodeCommand(Verb.REPORT_POSITION, x=1.0)


coords = st.none() | st.floats(
    min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False
)
feeds = st.none() | st.floats(min_value=1e-3, max_value=1e5, allow_nan=False)


def command_strategy():
    moves = st.builds(
        GCodeCommand,
        verb=st.sampled_from([Verb.RAPID_MOVE, Verb.LINEAR_MOVE]),
        x=coords, y=coords, z=coords, f=feeds,
    )
    homes = st.builds(
        GCodeCommand,
        verb=st.just(Verb.HOME),
        home_axes=st.sets(st.sampled_from(["x", "y", "z"])).map(frozenset),
    )
    bare = st.builds(
        GCodeCommand,
        verb=st.sampled_from([
            Verb.SET_ABSOLUTE, Verb.SET_RELATIVE,
            Verb.REPORT_POSITION, Verb.EMERGENCY_STOP,
        ]),
    )
    return st.one_of(moves, homes, bare)


@settings(max_examples=500)
@given(cmd=command_strategy())
def test_serialize_parse_roundtrip(cmd):
    assert parse_line(serialize(cmd)) == cmd


def test_roundtrip_bulk_seeded():
    # Bulk sweep complementing the hypothesis property: 10^4 generated commands.
    import random

    rng = random.Random(0)
    checked = 0
    for _ in range(10_000):
        kind = rng.randrange(3)
        if kind == 0:
            cmd = GCodeCommand(
                rng.choice([Verb.RAPID_MOVE, Verb.LINEAR_MOVE]),
                x=rng.choice([None, rng.uniform(-500, 500)]),
                y=rng.choice([None, rng.uniform(-500, 500)]),
                z=rng.choice([None, rng.uniform(-500, 500)]),
                f=rng.choice([None, rng.uniform(1, 6000)]),
            )
        elif kind == 1:
            cmd = GCodeCommand(
                Verb.HOME,
                home_axes=frozenset(rng.sample(["x", "y", "z"], rng.randrange(4))),
            )
        else:
            cmd = GCodeCommand(rng.choice([
                Verb.SET_ABSOLUTE, Verb.SET_RELATIVE,
                Verb.REPORT_POSITION, Verb.EMERGENCY_STOP,
            ]))
        assert parse_line(serialize(cmd)) == cmd
        checked += 1
    assert checked == 10_000
