"""Synthetic scene detector: labeled bounding boxes over the camera view.

Stands in for a neural object detector with the same output contract: each
visible object yields one labeled box with a confidence value.  The camera is
rigidly fixed to the carriage, so carriage motion shifts bed-mounted objects
(the junction) across the frame while the probe tips stay put.  Projection is
a pure function of a state snapshot plus seeded noise, so frames can be taken
at any point of a procedure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StationError, ValidationError
from .machine import MachineConfig, MachineState, PixelPoint, probe_tips

LABELS = ("YZ_PROBE", "Z_PROBE", "JJ")


class MissingDetection(StationError):
    """A required label was absent from the frame; caller should re-detect."""

    code = "missing-detection"

    def __init__(self, label: str):
        super().__init__(f"no usable detection for {label}")
        self.label = label


class DegenerateCalibration(StationError):
    code = "degenerate-calibration"


@dataclass(frozen=True)
class SceneDescription:
    """The observable world: one junction plus the detector's noise figure.

    pad_span is the tip-to-tip length across both junction pads;
    pad_axis_angle is measured from the machine +Y axis (the inter-probe
    axis), so 0 means the pads already face the probes.
    """

    jj_center: tuple[float, float] = (110.0, 110.0)
    pad_span: float = 2.0
    pad_axis_angle: float = 0.0
    frame_width: int = 640
    frame_height: int = 480
    noise_sigma: float = 0.0        # px, box-center jitter
    detect_prob: float = 1.0        # per-object detection probability
    rng_seed: int = 0
    detect_latency: float = 0.022   # s charged to the sim clock per frame
    probe_box_px: float = 40.0
    pad_margin_px: float = 20.0

    def __post_init__(self) -> None:
        if self.pad_span <= 0:
            raise ValidationError("pad_span must be > 0")
        if not (0.0 <= self.detect_prob <= 1.0):
            raise ValidationError("detect_prob must lie in [0, 1]")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValidationError("frame dimensions must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "jj_center": list(self.jj_center),
            "pad_span": self.pad_span,
            "pad_axis_angle": self.pad_axis_angle,
            "frame_width": self.frame_width,
            "frame_height": self.frame_height,
            "noise_sigma": self.noise_sigma,
            "detect_prob": self.detect_prob,
            "rng_seed": self.rng_seed,
            "detect_latency": self.detect_latency,
            "probe_box_px": self.probe_box_px,
            "pad_margin_px": self.pad_margin_px,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneDescription":
        kwargs = dict(data)
        if "jj_center" in kwargs:
            kwargs["jj_center"] = tuple(kwargs["jj_center"])
        return cls(**kwargs)


@dataclass(frozen=True)
class Detection:
    """One labeled box; pixel coordinates with u_min < u_max, v_min < v_max."""

    label: str
    box: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self) -> None:
        u_min, v_min, u_max, v_max = self.box
        if not (u_min < u_max and v_min < v_max):
            raise ValidationError(f"degenerate box for {self.label}: {self.box}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError("confidence must lie in [0, 1]")

    @property
    def center(self) -> PixelPoint:
        u_min, v_min, u_max, v_max = self.box
        return PixelPoint((u_min + u_max) / 2.0, (v_min + v_max) / 2.0)

    def to_dict(self) -> dict:
        return {"label": self.label, "box": list(self.box), "confidence": self.confidence}


def project_point(
    wx: float, wy: float, state: MachineState, cfg: MachineConfig, scene: SceneDescription
) -> PixelPoint:
    """World (x, y) to camera pixels.  The optical axis sits on the carriage."""
    cx, cy, _ = state.carriage
    mirror = -1.0 if cfg.y_mirrored else 1.0
    u = scene.frame_width / 2.0 + (wx - cx) / cfg.pixel_scale
    v = scene.frame_height / 2.0 + mirror * (wy - cy) / cfg.pixel_scale
    return PixelPoint(u, v)


def pad_endpoints(scene: SceneDescription, state: MachineState) -> tuple:
    """True world positions of the two pad ends, rotation stage included."""
    theta = math.radians(scene.pad_axis_angle + state.rotation_stage)
    jx, jy = scene.jj_center
    ox = scene.pad_span / 2.0 * math.sin(theta)
    oy = scene.pad_span / 2.0 * math.cos(theta)
    return (jx - ox, jy - oy), (jx + ox, jy + oy)


def _in_frame(u: float, v: float, scene: SceneDescription) -> bool:
    return 0.0 <= u <= scene.frame_width and 0.0 <= v <= scene.frame_height


def _confidence(scene: SceneDescription, frame_index: int, label_index: int) -> float:
    # Deterministic jitter so repeated frames show believable, replayable values.
    jitter = 0.02 * ((frame_index + label_index) % 3)
    return min(1.0, max(0.0, scene.detect_prob - jitter))


def detect_frame(
    scene: SceneDescription,
    state: MachineState,
    cfg: MachineConfig,
    rng: np.random.Generator | None = None,
    frame_index: int = 0,
) -> list[Detection]:
    """Produce one frame of labeled detections.

    Box centers sit on the true projected geometry plus Gaussian jitter of
    noise_sigma px; each object is independently dropped with probability
    1 - detect_prob.  Objects whose center leaves the frame are absent, not
    errors.  The RNG draw pattern is fixed per frame so sessions replay
    identically.
    """
    if rng is None:
        rng = np.random.default_rng(scene.rng_seed)

    tips = probe_tips(state, cfg)
    jj_px = project_point(*scene.jj_center, state, cfg, scene)
    pad_a, pad_b = pad_endpoints(scene, state)
    pad_a_px = project_point(*pad_a, state, cfg, scene)
    pad_b_px = project_point(*pad_b, state, cfg, scene)

    half = scene.probe_box_px / 2.0
    out: list[Detection] = []
    for label_index, label in enumerate(LABELS):
        keep = rng.random() < scene.detect_prob
        draw = rng.normal(0.0, scene.noise_sigma, size=2)
        noise = (float(draw[0]), float(draw[1]))
        if label == "JJ":
            box = (
                min(pad_a_px.u, pad_b_px.u) - scene.pad_margin_px,
                min(pad_a_px.v, pad_b_px.v) - scene.pad_margin_px,
                max(pad_a_px.u, pad_b_px.u) + scene.pad_margin_px,
                max(pad_a_px.v, pad_b_px.v) + scene.pad_margin_px,
            )
        else:
            tip = tips["yz"] if label == "YZ_PROBE" else tips["z"]
            tip_px = project_point(tip[0], tip[1], state, cfg, scene)
            # The probe body extends away from the junction; the tip is the
            # midpoint of the box edge facing it.
            du = jj_px.u - tip_px.u
            dv = jj_px.v - tip_px.v
            if abs(dv) >= abs(du):
                if dv >= 0:
                    box = (tip_px.u - half, tip_px.v - scene.probe_box_px,
                           tip_px.u + half, tip_px.v)
                else:
                    box = (tip_px.u - half, tip_px.v,
                           tip_px.u + half, tip_px.v + scene.probe_box_px)
            else:
                if du >= 0:
                    box = (tip_px.u - scene.probe_box_px, tip_px.v - half,
                           tip_px.u, tip_px.v + half)
                else:
                    box = (tip_px.u, tip_px.v - half,
                           tip_px.u + scene.probe_box_px, tip_px.v + half)
        box = (box[0] + noise[0], box[1] + noise[1], box[2] + noise[0], box[3] + noise[1])

        if not keep:
            continue
        if not _in_frame((box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0, scene):
            continue
        out.append(Detection(label, box, _confidence(scene, frame_index, label_index)))
    return out


# -- calibration ------------------------------------------------------------


def calibrate_correction_factor(
    commanded_mm: float, before: Detection, after: Detection
) -> float:
    """mm-per-pixel scale from a known carriage move and the observed box shift.

    Uses the displacement component along the commanded axis (the dominant
    one); a zero pixel displacement cannot be calibrated.
    """
    if before.label != after.label:
        raise ValidationError(
            f"calibration needs the same label twice, got {before.label}/{after.label}"
        )
    if not math.isfinite(commanded_mm) or commanded_mm == 0:
        raise ValidationError("commanded_mm must be finite and nonzero")
    du = after.center.u - before.center.u
    dv = after.center.v - before.center.v
    component = du if abs(du) >= abs(dv) else dv
    if abs(component) < 1e-12:
        raise DegenerateCalibration("zero pixel displacement")
    return abs(commanded_mm / component)


# -- target extraction --------------------------------------------------------


@dataclass(frozen=True)
class Targets:
    """Pixel-frame control targets for one alignment step."""

    z_tip: PixelPoint
    yz_tip: PixelPoint
    jj_center: PixelPoint
    pad_for_z: PixelPoint
    pad_for_yz: PixelPoint


def _tip_from_box(det: Detection, toward: PixelPoint) -> PixelPoint:
    """Midpoint of the box edge nearest the given point."""
    u_min, v_min, u_max, v_max = det.box
    cu, cv = det.center
    candidates = (
        PixelPoint(cu, v_min),   # top
        PixelPoint(cu, v_max),   # bottom
        PixelPoint(u_min, cv),   # left
        PixelPoint(u_max, cv),   # right
    )
    return min(candidates, key=lambda p: (p.u - toward.u) ** 2 + (p.v - toward.v) ** 2)


def locate_targets(
    detections: list[Detection], cfg: MachineConfig, pad_span: float
) -> Targets:
    """Extract probe tips and their pad targets from one frame.

    Pad targets sit pad_span/2 (converted to pixels) either side of the
    junction box center along the inter-probe axis.  Raises MissingDetection
    when any of the three labels is absent.
    """
    by_label = {d.label: d for d in detections}
    for label in LABELS:
        if label not in by_label:
            raise MissingDetection(label)

    jj_center = by_label["JJ"].center
    z_tip = _tip_from_box(by_label["Z_PROBE"], jj_center)
    yz_tip = _tip_from_box(by_label["YZ_PROBE"], jj_center)

    axis_u = yz_tip.u - z_tip.u
    axis_v = yz_tip.v - z_tip.v
    norm = math.hypot(axis_u, axis_v)
    if norm < 1e-12:
        raise ValidationError("probe tips coincide; no inter-probe axis")
    half_px = pad_span / 2.0 / cfg.pixel_scale
    ux, vx = axis_u / norm, axis_v / norm
    return Targets(
        z_tip=z_tip,
        yz_tip=yz_tip,
        jj_center=jj_center,
        pad_for_z=PixelPoint(jj_center.u - half_px * ux, jj_center.v - half_px * vx),
        pad_for_yz=PixelPoint(jj_center.u + half_px * ux, jj_center.v + half_px * vx),
    )


def load_scene_description(path: str | Path) -> SceneDescription:
    with open(path, "r", encoding="utf-8") as fh:
        return SceneDescription.from_dict(json.load(fh))
