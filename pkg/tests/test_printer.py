"""Virtual printer: slip model, limits, e-stop latching, reply discipline."""

import math
import random

import pytest

from probestation.machine import MachineConfig
from probestation.printer import SlipModel
from probestation.station import Station


def make_station(slip=None, **cfg_kwargs):
    cfg = MachineConfig(**cfg_kwargs)
    return Station(cfg=cfg, slip=slip)


def test_deterministic_slip_scales_xy_delta():
    st = make_station(slip=SlipModel(slip_x=0.2, slip_y=0.2),
                      start_carriage=(100.0, 100.0, 10.0))
    assert st.printer.submit("G91") == "ok"
    assert st.printer.submit("G1 X1.0") == "ok"
    assert st.state.carriage[0] == pytest.approx(100.8)


def test_slip_never_applies_to_z():
    st = make_station(slip=SlipModel(slip_x=0.2, slip_y=0.2),
                      start_carriage=(100.0, 100.0, 10.0))
    st.printer.submit("G91")
    assert st.printer.submit("G1 Z-0.5") == "ok"
    assert st.state.carriage[2] == pytest.approx(9.5, abs=1e-15)


def test_emergency_stop_latches_and_refuses_followups():
    st = make_station()
    assert st.printer.submit("M112") == "ok"
    assert st.state.estop_latched
    before = st.state.positions()
    reply = st.printer.submit("G1 X10")
    assert reply.startswith("error:estop")
    assert st.state.positions() == before


def test_estop_refuses_everything_but_is_idempotent():
    st = make_station()
    st.printer.submit("M112")
    assert st.printer.submit("M114").startswith("error:estop")
    assert st.printer.submit("M112") == "ok"


def test_limit_breach_refused_without_motion():
    st = make_station(start_carriage=(100.0, 100.0, 10.0))
    before = st.state.positions()
    t_before = st.now()
    reply = st.printer.submit("G1 X100000")
    assert reply.startswith("error:limit")
    assert st.state.positions() == before
    assert st.now() == t_before


def test_position_report_single_line():
    st = make_station(start_carriage=(10.0, 20.0, 5.0))
    assert st.printer.submit("M114") == "X:10.0000 Y:20.0000 Z:5.0000"


def test_move_time_uses_commanded_path_and_feed():
    st = make_station(start_carriage=(100.0, 100.0, 10.0))
    st.printer.submit("G91")
    st.printer.submit("G1 X3 Y4 F600")   # 5 mm at 10 mm/s
    assert st.now() == pytest.approx(0.5)


def test_feed_is_modal_and_defaults():
    st = make_station(start_carriage=(100.0, 100.0, 10.0))
    st.printer.submit("G91")
    st.printer.submit("G1 X1 F1200")
    t1 = st.now()
    st.printer.submit("G1 X1")           # inherits F1200 = 20 mm/s
    assert st.now() - t1 == pytest.approx(1.0 / 20.0)


def test_home_moves_to_home_position_exactly():
    st = make_station(slip=SlipModel(slip_x=0.5, slip_y=0.5),
                      start_carriage=(100.0, 100.0, 10.0))
    assert st.printer.submit("G28") == "ok"
    assert st.state.carriage == pytest.approx((0.0, 0.0, 10.0))


def test_parse_error_reply_is_single_line_with_code():
    st = make_station()
    reply = st.printer.submit("G1 Q5")
    assert reply.startswith("error:unknown-word:3:")
    assert "\n" not in reply


def test_zero_slip_matches_independent_kinematic_replay():
    # Oracle: accumulate the commanded targets directly, no printer involved.
    rng = random.Random(42)
    st = make_station(start_carriage=(110.0, 110.0, 50.0))
    ox, oy, oz = 110.0, 110.0, 50.0       # oracle position
    absolute = True
    for _ in range(300):
        kind = rng.randrange(4)
        if kind == 0:
            absolute = not absolute
            st.printer.submit("G90" if absolute else "G91")
            continue
        x = rng.uniform(50, 170) if absolute else rng.uniform(-3, 3)
        y = rng.uniform(50, 170) if absolute else rng.uniform(-3, 3)
        z = rng.uniform(10, 90) if absolute else rng.uniform(-3, 3)
        reply = st.printer.submit(f"G1 X{x!r} Y{y!r} Z{z!r}")
        if absolute:
            nx, ny, nz = x, y, z
        else:
            nx, ny, nz = ox + x, oy + y, oz + z
        lim = st.cfg.axis_limits
        in_range = all(
            lim[k][0] <= v <= lim[k][1] for k, v in (("x", nx), ("y", ny), ("z", nz))
        )
        if in_range:
            assert reply == "ok"
            ox, oy, oz = nx, ny, nz
        else:
            assert reply.startswith("error:limit")
        assert st.state.carriage == pytest.approx((ox, oy, oz), abs=1e-12)


def test_geometric_decay_of_residual_under_repeated_correction():
    # Correcting the full observed error with slip s leaves error_0 * s^n.
    s = 0.3
    st = make_station(slip=SlipModel(slip_x=s, slip_y=s),
                      start_carriage=(100.0, 100.0, 10.0))
    target = 104.0
    error0 = target - st.state.carriage[0]
    for n in range(1, 8):
        dx = target - st.state.carriage[0]
        st.printer.submit("G91")
        st.printer.submit(f"G1 X{dx!r}")
        residual = target - st.state.carriage[0]
        assert residual == pytest.approx(error0 * s ** n, rel=1e-9)


def test_stochastic_slip_reproducible_from_seed():
    def run(seed):
        st = make_station(
            slip=SlipModel(mode="stochastic", rng_seed=seed),
            start_carriage=(100.0, 100.0, 10.0),
        )
        st.printer.submit("G91")
        for _ in range(5):
            st.printer.submit("G1 X1 Y-1")
        return st.state.carriage

    assert run(7) == run(7)
    assert run(7) != run(8)


def test_one_reply_per_command_in_order():
    st = make_station(start_carriage=(100.0, 100.0, 10.0))
    lines = ["G91", "G1 X1", "bogus", "M114", "G1 Q1", "M112", "G1 X1"]
    replies = [st.printer.submit(line) for line in lines]
    assert len(replies) == len(lines)
    for reply in replies:
        assert isinstance(reply, str) and reply and "\n" not in reply
    assert replies[0] == "ok"
    assert replies[1] == "ok"
    assert replies[2].startswith("error:unknown-verb")
    assert replies[3].startswith("X:")
    assert replies[4].startswith("error:unknown-word")
    assert replies[5] == "ok"
    assert replies[6].startswith("error:estop")
