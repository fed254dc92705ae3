"""Line-oriented G-code dialect: command types, parser, and serializer.

Supported dialect (Marlin-style framing, one reply line per command):

    G0 / G1   rapid / linear move, words X Y Z (mm) and F (mm/min)
    G28       home, optional bare axis flags (``G28 X Z``)
    G90 / G91 absolute / relative positioning
    M114      report position
    M112      emergency stop (always accepted)

Comments start at ``;``.  Parsing never raises anything other than
:class:`GCodeError` subclasses, each of which carries the byte offset of the
offending token in the original line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import StationError


class Verb(Enum):
    RAPID_MOVE = "G0"
    LINEAR_MOVE = "G1"
    HOME = "G28"
    SET_ABSOLUTE = "G90"
    SET_RELATIVE = "G91"
    REPORT_POSITION = "M114"
    EMERGENCY_STOP = "M112"


_VERB_ALIASES = {
    "G0": Verb.RAPID_MOVE,
    "G00": Verb.RAPID_MOVE,
    "G1": Verb.LINEAR_MOVE,
    "G01": Verb.LINEAR_MOVE,
    "G28": Verb.HOME,
    "G90": Verb.SET_ABSOLUTE,
    "G91": Verb.SET_RELATIVE,
    "M114": Verb.REPORT_POSITION,
    "M112": Verb.EMERGENCY_STOP,
}

_MOVE_VERBS = (Verb.RAPID_MOVE, Verb.LINEAR_MOVE)


class GCodeError(StationError):
    """Parse failure; `offset` is the byte offset of the offending token."""

    code = "gcode"

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


class EmptyCommand(GCodeError):
    code = "empty"


class UnknownVerb(GCodeError):
    code = "unknown-verb"


class UnknownWord(GCodeError):
    code = "unknown-word"


class DuplicateWord(GCodeError):
    code = "duplicate-word"


class BadNumber(GCodeError):
    code = "bad-number"


class UnexpectedValue(GCodeError):
    code = "unexpected-value"


@dataclass(frozen=True)
class GCodeCommand:
    """A parsed command.  Only recognized verbs are constructible."""

    verb: Verb
    x: float | None = None
    y: float | None = None
    z: float | None = None
    f: float | None = None
    home_axes: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not isinstance(self.verb, Verb):
            raise GCodeError(f"unknown verb {self.verb!r}")
        for name in ("x", "y", "z", "f"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise BadNumber(f"{name.upper()} value must be finite")
        if self.f is not None and self.f <= 0:
            raise BadNumber("F must be > 0")
        if self.verb not in _MOVE_VERBS and any(
            v is not None for v in (self.x, self.y, self.z, self.f)
        ):
            raise UnexpectedValue(f"{self.verb.value} takes no coordinate words")
        if self.home_axes and self.verb is not Verb.HOME:
            raise UnexpectedValue("home_axes only valid for G28")
        if not set(self.home_axes) <= {"x", "y", "z"}:
            raise UnexpectedValue(f"bad home axes {sorted(self.home_axes)}")


_NUMBER_RE = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")
_TOKEN_RE = re.compile(r"\S+")


def parse_line(line: str) -> GCodeCommand:
    """Parse one command line.  Total: any input yields a command or a GCodeError."""
    body = line.split(";", 1)[0]
    tokens = [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(body)]
    if not tokens:
        raise EmptyCommand("empty command line")

    head, head_off = tokens[0]
    verb = _VERB_ALIASES.get(head.upper())
    if verb is None:
        raise UnknownVerb(f"unknown verb {head!r}", head_off)

    if verb in _MOVE_VERBS:
        words: dict[str, float] = {}
        for token, off in tokens[1:]:
            letter = token[0].upper()
            if letter not in "XYZF":
                raise UnknownWord(f"unknown word {token!r}", off)
            if letter in words:
                raise DuplicateWord(f"duplicate word {letter}", off)
            text = token[1:]
            if not _NUMBER_RE.match(text):
                raise BadNumber(f"bad number in {token!r}", off)
            words[letter] = float(text)
        return GCodeCommand(
            verb,
            x=words.get("X"),
            y=words.get("Y"),
            z=words.get("Z"),
            f=words.get("F"),
        )

    if verb is Verb.HOME:
        axes: set[str] = set()
        for token, off in tokens[1:]:
            letter = token[0].upper()
            if letter not in "XYZ":
                raise UnknownWord(f"unknown word {token!r}", off)
            if len(token) > 1:
                raise UnexpectedValue(f"G28 axis flags take no value: {token!r}", off)
            if letter.lower() in axes:
                raise DuplicateWord(f"duplicate word {letter}", off)
            axes.add(letter.lower())
        return GCodeCommand(verb, home_axes=frozenset(axes))

    # Bare verbs: G90/G91/M114/M112 take no words at all.
    if len(tokens) > 1:
        token, off = tokens[1]
        raise UnknownWord(f"{verb.value} takes no words, got {token!r}", off)
    return GCodeCommand(verb)


def serialize(cmd: GCodeCommand) -> str:
    """Canonical text for a command; parse(serialize(c)) == c."""
    parts = [cmd.verb.value]
    if cmd.verb in _MOVE_VERBS:
        for letter, value in (("X", cmd.x), ("Y", cmd.y), ("Z", cmd.z), ("F", cmd.f)):
            if value is not None:
                parts.append(f"{letter}{value!r}")
    elif cmd.verb is Verb.HOME:
        parts.extend(axis.upper() for axis in sorted(cmd.home_axes))
    return " ".join(parts)
