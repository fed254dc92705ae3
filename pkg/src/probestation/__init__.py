"""Virtual automated probe station for Josephson-junction resistance characterisation.

A hardware-in-the-loop simulator (virtual belt-driven printer, stepper stages,
load cell, synthetic scene detector, simulated junction) plus the automation
that drives it: vision-guided probe alignment, force-limited probe lowering,
compliance-limited IV sweeps, and multi-junction batch runs, all behind a
recorded, replayable command/telemetry service.
"""

from .control import (
    AlignmentParams,
    BatchPlan,
    LoweringParams,
    Outcome,
    ProcedureResult,
    auto_align,
    auto_lower_joint,
    auto_lower_sequential,
    run_batch,
    run_sweep,
)
from .machine import MachineConfig, MachineState, PixelPoint, WorldPoint
from .measurement import (
    DutModel,
    IVSample,
    IVSweepConfig,
    MeasurementResult,
    critical_current,
    fit_resistance,
    run_iv_sweep,
    timing_savings,
)
from .printer import SlipModel, VirtualPrinter
from .scene import Scene, load_scene, standard_scene
from .service import StationService
from .stages import ContactModel, ForceReading, StageCommand
from .station import Station
from .vision import Detection, SceneDescription, detect_frame, locate_targets

__version__ = "0.1.0"

__all__ = [
    "AlignmentParams",
    "BatchPlan",
    "ContactModel",
    "Detection",
    "DutModel",
    "ForceReading",
    "IVSample",
    "IVSweepConfig",
    "LoweringParams",
    "MachineConfig",
    "MachineState",
    "MeasurementResult",
    "Outcome",
    "PixelPoint",
    "ProcedureResult",
    "Scene",
    "SceneDescription",
    "SlipModel",
    "StageCommand",
    "Station",
    "StationService",
    "VirtualPrinter",
    "WorldPoint",
    "auto_align",
    "auto_lower_joint",
    "auto_lower_sequential",
    "critical_current",
    "detect_frame",
    "fit_resistance",
    "load_scene",
    "locate_targets",
    "run_batch",
    "run_iv_sweep",
    "run_sweep",
    "standard_scene",
    "timing_savings",
]
