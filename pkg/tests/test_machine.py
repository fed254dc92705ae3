"""Machine model: frame conversions, jogs, limits, e-stop freeze, clock monotonicity."""

from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probestation.errors import EStopError, LimitError, ValidationError
from probestation.machine import (
    MachineConfig,
    MachineState,
    PixelPoint,
    apply_jog,
    load_config,
    machine_delta_to_pixel_delta,
    pixel_delta_to_machine_delta,
    probe_tips,
    save_config,
)

CFG = MachineConfig()

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def test_pixel_to_machine_pure_x_scaling():
    dx, dy = pixel_delta_to_machine_delta(PixelPoint(100.0, 0.0), CFG)
    assert dx == pytest.approx(1.0)
    assert dy == 0.0


def test_pixel_to_machine_mirror_flips_y():
    dx, dy = pixel_delta_to_machine_delta(PixelPoint(0.0, 50.0), CFG)
    assert dx == 0.0
    assert dy == pytest.approx(-0.5)
    unmirrored = MachineConfig(y_mirrored=False)
    _, dy2 = pixel_delta_to_machine_delta(PixelPoint(0.0, 50.0), unmirrored)
    assert dy2 == pytest.approx(0.5)


def test_pixel_to_machine_identity_at_zero():
    assert pixel_delta_to_machine_delta(PixelPoint(0.0, 0.0), CFG) == (0.0, 0.0)


def test_non_finite_delta_rejected():
    with pytest.raises(ValidationError):
        pixel_delta_to_machine_delta(PixelPoint(float("nan"), 0.0), CFG)
    with pytest.raises(ValidationError):
        machine_delta_to_pixel_delta(float("inf"), 0.0, CFG)


@given(dx=finite, dy=finite)
def test_roundtrip_machine_pixel_machine(dx, dy):
    px = machine_delta_to_pixel_delta(dx, dy, CFG)
    dx2, dy2 = pixel_delta_to_machine_delta(px, CFG)
    assert abs(dx2 - dx) <= 1e-9
    assert abs(dy2 - dy) <= 1e-9


@given(au=finite, av=finite, bu=finite, bv=finite)
def test_pixel_conversion_is_linear(au, av, bu, bv):
    fa = pixel_delta_to_machine_delta(PixelPoint(au, av), CFG)
    fb = pixel_delta_to_machine_delta(PixelPoint(bu, bv), CFG)
    fab = pixel_delta_to_machine_delta(PixelPoint(au + bu, av + bv), CFG)
    assert fab[0] == pytest.approx(fa[0] + fb[0], rel=1e-12, abs=1e-15)
    assert fab[1] == pytest.approx(fa[1] + fb[1], rel=1e-12, abs=1e-15)


def test_jog_quarter_click_exact_step():
    state = MachineState.initial(MachineConfig(start_carriage=(10.0, 10.0, 5.0)))
    jogged = apply_jog(state, "x", 1, CFG)
    assert jogged.carriage == pytest.approx((10.1, 10.0, 5.0))
    assert jogged.sim_clock == pytest.approx(CFG.jog_step / CFG.carriage_speed)


def test_jog_refused_at_limit_leaves_state_unchanged():
    cfg = MachineConfig(
        start_carriage=(10.0, 10.0, 5.0),
        axis_limits={**CFG.axis_limits, "z": (5.0, 100.0)},
    )
    state = MachineState.initial(cfg)
    with pytest.raises(LimitError):
        apply_jog(state, "z", -1, cfg)
    assert state.carriage == (10.0, 10.0, 5.0)


def test_jog_opposite_pair_restores_position():
    state = MachineState.initial(MachineConfig(start_carriage=(10.0, 10.0, 5.0)))
    forth = apply_jog(state, "y", 1, CFG)
    back = apply_jog(forth, "y", -1, CFG)
    assert back.carriage == pytest.approx(state.carriage, abs=1e-12)


def test_jog_refused_when_estopped():
    state = replace(MachineState.initial(CFG), estop_latched=True)
    with pytest.raises(EStopError):
        apply_jog(state, "x", 1, CFG)


@settings(max_examples=200)
@given(
    moves=st.lists(
        st.tuples(st.sampled_from(["x", "y", "z"]), st.sampled_from([1, -1])),
        max_size=30,
    )
)
def test_sim_clock_never_decreases(moves):
    state = MachineState.initial(MachineConfig(start_carriage=(110.0, 110.0, 50.0)))
    clock = state.sim_clock
    for axis, sign in moves:
        try:
            state = apply_jog(state, axis, sign, CFG)
        except LimitError:
            pass
        assert state.sim_clock >= clock
        clock = state.sim_clock


def test_probe_tip_geometry():
    cfg = MachineConfig(start_carriage=(100.0, 100.0, 10.0))
    state = MachineState.initial(cfg)
    tips = probe_tips(state, cfg)
    assert tips["z"] == pytest.approx((100.0, 99.0, 10.0 + cfg.start_z_probe))
    assert tips["yz"] == pytest.approx((100.0, 101.0, 10.0 + cfg.start_yz_probe[1]))


def test_config_validation_rejects_bad_values():
    with pytest.raises(ValidationError):
        MachineConfig(pixel_scale=0.0)
    with pytest.raises(ValidationError):
        MachineConfig(jog_step=-0.1)
    with pytest.raises(ValidationError):
        MachineConfig(slip_fraction_range=(0.0, 1.0))
    with pytest.raises(ValidationError):
        MachineConfig(axis_limits={**CFG.axis_limits, "x": (5.0, 5.0)})


def test_config_roundtrip_through_file(tmp_path):
    cfg = MachineConfig(pixel_scale=0.02, jog_step=0.05)
    path = tmp_path / "machine.json"
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded == cfg
