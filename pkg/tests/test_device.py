"""Profile mapping, simulated device timing, wire codec, sessions,
socket transport, and end-to-end replay."""

import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindctl.device import (
    APPLIANCE_PROFILE,
    LED_COLORS,
    LED_HOLD_MS,
    PROFILES,
    ROBOT_PROFILE,
    Command,
    DeviceSession,
    DeviceState,
    decode_ack,
    decode_command,
    device_apply,
    encode_ack,
    encode_command,
    led_on,
    map_intent,
    replay,
    serve,
)
from mindctl.errors import ProtocolError


# ---------------------------------------------------------------------------
# profiles

def test_robot_mapping_examples():
    assert map_intent(1, ROBOT_PROFILE) == "Walk Ahead"
    assert map_intent(2, ROBOT_PROFILE) == "Turn Left"
    assert map_intent(3, ROBOT_PROFILE) == "Turn Right"
    assert map_intent(4, ROBOT_PROFILE) == "Grasp"
    assert map_intent(5, ROBOT_PROFILE) == "Unloose"


def test_appliance_mapping_examples():
    assert map_intent(1, APPLIANCE_PROFILE) == "Turn on Blue LEDs"
    assert map_intent(2, APPLIANCE_PROFILE) == "Turn on White LED"
    assert map_intent(5, APPLIANCE_PROFILE) == "Turn on All LEDs"


def test_profiles_total_and_injective():
    for profile in PROFILES.values():
        actions = [map_intent(label, profile) for label in range(1, 6)]
        assert len(actions) == 5
        assert len(set(actions)) == 5


def test_map_intent_out_of_range():
    with pytest.raises(ValueError, match="outside"):
        map_intent(0, ROBOT_PROFILE)
    with pytest.raises(ValueError, match="outside"):
        map_intent(6, APPLIANCE_PROFILE)


# ---------------------------------------------------------------------------
# device timing

def test_led_holds_for_exactly_two_seconds():
    state = DeviceState.initial("appliance")
    state = device_apply(state, "Turn on Red LED", 0)
    assert led_on(state, "red", 0)
    assert led_on(state, "red", 1999)
    assert not led_on(state, "red", 2000)


def test_all_leds_action_lights_everything():
    state = DeviceState.initial("appliance")
    state = device_apply(state, "Turn on All LEDs", 100)
    for color in LED_COLORS:
        assert led_on(state, color, 100)
        assert led_on(state, color, 2099)
        assert not led_on(state, color, 2100)


def test_repeat_command_extends_deadline():
    state = DeviceState.initial("appliance")
    state = device_apply(state, "Turn on Red LED", 0)
    state = device_apply(state, "Turn on Red LED", 500)
    assert led_on(state, "red", 2000)  # past the first command's deadline
    assert led_on(state, "red", 2499)
    assert not led_on(state, "red", 2500)


def test_led_intervals_match_event_list_oracle():
    rng = np.random.default_rng(4)
    times = np.sort(rng.integers(0, 12000, size=25))
    colors = rng.choice(["red", "white", "yellow", "blue"], size=25)
    action_for = {
        "red": "Turn on Red LED",
        "white": "Turn on White LED",
        "yellow": "Turn on Yellow LED",
        "blue": "Turn on Blue LEDs",
    }

    state = DeviceState.initial("appliance")
    applied = []  # (t, color) so far
    for t, color in zip(times, colors):
        state = device_apply(state, action_for[color], int(t))
        applied.append((int(t), color))
        # probe from this command up to (exclusive) the next one: future
        # commands cannot light the past
        horizon = int(t) + 2500
        for probe in range(int(t), horizon, 97):
            for c in LED_COLORS:
                oracle = any(
                    ts <= probe < ts + LED_HOLD_MS
                    for ts, cc in applied
                    if cc == c
                )
                if probe <= int(t):
                    assert led_on(state, c, probe) == oracle
        # exact boundary probes for the command just applied
        assert led_on(state, color, int(t) + LED_HOLD_MS - 1)

    # after the last command the state is final: probe the whole horizon
    final_t = int(times[-1])
    for probe in range(final_t, final_t + 3000, 13):
        for c in LED_COLORS:
            oracle = any(
                ts <= probe < ts + LED_HOLD_MS for ts, cc in applied if cc == c
            )
            assert led_on(state, c, probe) == oracle


def test_robot_actions_append_to_log():
    state = DeviceState.initial("robot")
    state = device_apply(state, "Walk Ahead", 0)
    state = device_apply(state, "Grasp", 100)
    assert state.actions == ("Walk Ahead", "Grasp")


def test_unknown_action_is_protocol_error():
    state = DeviceState.initial("appliance")
    with pytest.raises(ProtocolError, match="unknown appliance action"):
        device_apply(state, "Self Destruct", 0)


def test_clock_cannot_move_backwards():
    state = DeviceState.initial("robot")
    state = device_apply(state, "Walk Ahead", 100)
    with pytest.raises(ProtocolError, match="before device clock"):
        device_apply(state, "Grasp", 50)


# ---------------------------------------------------------------------------
# codec

def test_encode_example_line():
    cmd = Command(seq=1, label=3, action_id="RIGHT", t_ms=0)
    assert encode_command(cmd) == b"CMD 1 3 RIGHT 0\n"


def test_decode_label_out_of_range():
    with pytest.raises(ProtocolError, match="label out of range"):
        decode_command(b"CMD 1 9 X 0\n")


@pytest.mark.parametrize(
    "line",
    [
        b"CMD 1 3 RIGHT 0",  # missing newline
        b"CMD 1 3 0\n",  # missing field
        b"cmd 1 3 RIGHT 0\n",  # wrong tag case
        b"CMD x 3 RIGHT 0\n",  # non-numeric seq
        b"CMD 1 3 right 0\n",  # lowercase action id
        b"CMD 1 0 RIGHT 0\n",  # label 0
        b"ACK 1\n",  # wrong verb
    ],
)
def test_decode_rejects_malformed_lines(line):
    with pytest.raises(ProtocolError) as exc:
        decode_command(line)
    assert repr(line)[2:-1] in str(exc.value) or "label" in str(exc.value)


@settings(max_examples=100, deadline=None)
@given(
    seq=st.integers(0, 10**9),
    label=st.integers(1, 5),
    t_ms=st.integers(0, 10**9),
)
def test_codec_round_trip(seq, label, t_ms):
    for profile in PROFILES.values():
        cmd = Command(seq=seq, label=label,
                      action_id=profile.wire_ids[label], t_ms=t_ms)
        assert decode_command(encode_command(cmd)) == cmd


def test_ack_codec():
    assert encode_ack(7) == b"ACK 7\n"
    assert decode_ack(b"ACK 7\n") == 7
    with pytest.raises(ProtocolError):
        decode_ack(b"ACK x\n")


# ---------------------------------------------------------------------------
# session

def test_session_acknowledges_each_command_once():
    session = DeviceSession(APPLIANCE_PROFILE)
    ack1 = session.handle_line(b"CMD 1 4 RED 0\n")
    ack2 = session.handle_line(b"CMD 2 4 RED 500\n")
    assert (ack1, ack2) == (b"ACK 1\n", b"ACK 2\n")
    assert len(session.transcript) == 2


def test_session_rejects_non_increasing_sequence():
    session = DeviceSession(APPLIANCE_PROFILE)
    session.handle_line(b"CMD 5 4 RED 0\n")
    with pytest.raises(ProtocolError, match="sequence number"):
        session.handle_line(b"CMD 5 4 RED 100\n")


def test_session_rejects_mismatched_action_id():
    session = DeviceSession(APPLIANCE_PROFILE)
    with pytest.raises(ProtocolError, match="does not match label"):
        session.handle_line(b"CMD 1 4 BLUE 0\n")


# ---------------------------------------------------------------------------
# socket transport

def test_socket_server_session():
    ready = threading.Event()
    port_box = {}

    def on_ready(port):
        port_box["port"] = port
        ready.set()

    results = {}

    def run_server():
        results["session"] = serve("127.0.0.1", 0, APPLIANCE_PROFILE,
                                   once=True, on_ready=on_ready)

    thread = threading.Thread(target=run_server, daemon=True)
    thread.start()
    assert ready.wait(5)

    with socket.create_connection(("127.0.0.1", port_box["port"]), 5) as conn:
        with conn.makefile("rb") as reader:
            conn.sendall(b"CMD 1 4 RED 0\n")
            assert reader.readline() == b"ACK 1\n"
            conn.sendall(b"CMD 2 5 ALL 250\n")
            assert reader.readline() == b"ACK 2\n"
            conn.sendall(b"this is not a command\n")
            assert reader.readline().startswith(b"ERR ")
    thread.join(5)
    assert not thread.is_alive()
    session = results["session"]
    assert [entry[1] for entry in session.transcript] == [1, 2]
    assert led_on(session.state, "red", 2249)


def test_socket_server_ends_session_on_clean_disconnect(tmp_path):
    ready = threading.Event()
    port_box = {}
    results = {}
    transcript = tmp_path / "transcript.csv"

    def run_server():
        results["session"] = serve(
            "127.0.0.1", 0, APPLIANCE_PROFILE, once=True,
            transcript_path=transcript,
            on_ready=lambda p: (port_box.update(port=p), ready.set()),
        )

    thread = threading.Thread(target=run_server, daemon=True)
    thread.start()
    assert ready.wait(5)

    with socket.create_connection(("127.0.0.1", port_box["port"]), 5) as conn:
        with conn.makefile("rb") as reader:
            conn.sendall(b"CMD 1 2 WHITE 0\n")
            assert reader.readline() == b"ACK 1\n"
    thread.join(5)
    assert not thread.is_alive()
    lines = transcript.read_text().splitlines()
    assert lines[0] == "t_ms,seq,label,action,ack"
    assert lines[1] == "0,1,2,Turn on White LED,1"


# ---------------------------------------------------------------------------
# replay

def test_replay_empty_sequence():
    session = DeviceSession(APPLIANCE_PROFILE)
    assert replay(None, np.empty((0, 64)), APPLIANCE_PROFILE, session) == []


def test_replay_produces_one_command_per_sample(toy_model, toy_split):
    samples = toy_split.test.features[:20]
    session = DeviceSession(APPLIANCE_PROFILE)
    log = replay(toy_model, samples, APPLIANCE_PROFILE, session,
                 cadence=1, step_ms=100)
    assert len(log) == 20
    assert [entry[1] for entry in log] == list(range(1, 21))
    assert [entry[0] for entry in log] == [i * 100 for i in range(20)]
    for _, _, label, action in log:
        assert action == APPLIANCE_PROFILE.actions[label]
    assert len(session.transcript) == 20


def test_replay_is_deterministic(toy_model, toy_split):
    samples = toy_split.test.features[:15]
    log_a = replay(toy_model, samples, ROBOT_PROFILE,
                   DeviceSession(ROBOT_PROFILE))
    log_b = replay(toy_model, samples, ROBOT_PROFILE,
                   DeviceSession(ROBOT_PROFILE))
    assert log_a == log_b


def test_replay_majority_vote_cadence(toy_model, toy_split):
    samples = toy_split.test.features[:12]
    session = DeviceSession(ROBOT_PROFILE)
    log = replay(toy_model, samples, ROBOT_PROFILE, session, cadence=4)
    assert len(log) == 3

    from mindctl.model import predict

    labels, _ = predict(toy_model, samples)
    for w, (_, _, decided, _) in enumerate(log):
        window = list(labels[w * 4 : (w + 1) * 4])
        counts = {lbl: window.count(lbl) for lbl in set(window)}
        best = max(counts.values())
        tied = [lbl for lbl, c in counts.items() if c == best]
        assert decided == min(tied)
