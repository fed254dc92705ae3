"""Scene files: the complete virtual world one session runs against.

A scene bundles what the detector can see (junction geometry and detector
noise), the contact mechanics (chip surface height and probe stiffness), and
the electrical device under test.  Scene files are JSON with one object per
section; every field is optional and falls back to the documented default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .measurement import DutModel
from .stages import ContactModel
from .vision import SceneDescription

_SECTIONS = ("detector", "contact", "dut")


@dataclass(frozen=True)
class Scene:
    detector: SceneDescription
    contact: ContactModel
    dut: DutModel

    def to_dict(self) -> dict:
        return {
            "detector": self.detector.to_dict(),
            "contact": self.contact.to_dict(),
            "dut": self.dut.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ValidationError(f"unknown scene sections: {sorted(unknown)}")
        return cls(
            detector=SceneDescription.from_dict(data.get("detector", {})),
            contact=ContactModel.from_dict(data.get("contact", {})),
            dut=DutModel.from_dict(data.get("dut", {})),
        )

    def with_overrides(self, overrides: dict) -> "Scene":
        """A new scene with per-section field overrides applied."""
        unknown = set(overrides) - set(_SECTIONS)
        if unknown:
            raise ValidationError(f"unknown scene sections: {sorted(unknown)}")
        merged = self.to_dict()
        for section, fields in overrides.items():
            merged[section].update(fields)
        return Scene.from_dict(merged)


def standard_scene() -> Scene:
    """The default world: one junction at (110, 110), noiseless detector."""
    return Scene(detector=SceneDescription(), contact=ContactModel(), dut=DutModel())


def load_scene(path: str | Path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return Scene.from_dict(json.load(fh))


def save_scene(scene: Scene, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
