"""OSC wire-format tests against an independently written reference decoder."""

import logging
import socket
import struct

import pytest

from myobridge.fusion import EulerAngles, MotionState
from myobridge.mapping import EmgEnvelopes, SynthParams
from myobridge.osc import (
    InvalidAddressError,
    MessageTooLargeError,
    OscMessage,
    UdpSender,
    UnsupportedArgTypeError,
    emit_pipeline,
    encode_message,
    send_udp,
)


def decode_message_oracle(data):
    """Reference OSC 1.0 decoder, written from the format rules only."""
    assert len(data) % 4 == 0, "OSC messages are 4-byte aligned"

    def read_padded_string(buf, pos):
        end = buf.index(b"\x00", pos)
        value = buf[pos:end].decode("ascii")
        consumed = end - pos + 1
        consumed += (4 - consumed % 4) % 4
        return value, pos + consumed

    address, pos = read_padded_string(data, 0)
    tags, pos = read_padded_string(data, pos)
    assert tags.startswith(",")
    args = []
    for tag in tags[1:]:
        if tag == "f":
            args.append(struct.unpack(">f", data[pos:pos + 4])[0])
            pos += 4
        elif tag == "i":
            args.append(struct.unpack(">i", data[pos:pos + 4])[0])
            pos += 4
        elif tag == "s":
            value, pos = read_padded_string(data, pos)
            args.append(value)
        else:
            raise AssertionError(f"unexpected tag {tag}")
    assert pos == len(data)
    return address, tags, args


def f32(x):
    """The float32 the wire must carry, bit-exact."""
    return struct.unpack(">f", struct.pack(">f", x))[0]


# --- encoding -------------------------------------------------------------------

def test_golden_bare_address():
    assert encode_message(OscMessage("/a")) == bytes.fromhex("2f6100002c000000")


def test_golden_qom_float():
    expected = bytes.fromhex("2f716f6d000000002c6600003f800000")
    assert encode_message(OscMessage("/qom", (1.0,))) == expected


def test_emg_message_is_56_bytes_and_round_trips():
    values = (0.0, 0.125, 0.25, 0.5, 0.625, 0.75, 0.875, 1.0)
    data = encode_message(OscMessage("/myo/1/emg", values))
    assert len(data) == 56
    address, tags, args = decode_message_oracle(data)
    assert address == "/myo/1/emg"
    assert tags == ",ffffffff"
    assert args == [f32(v) for v in values]


def test_round_trip_mixed_args():
    msg = OscMessage("/mix/it", (1.5, 7, "hello", -0.25, -2**31))
    address, tags, args = decode_message_oracle(encode_message(msg))
    assert address == "/mix/it"
    assert tags == ",fisfi"
    assert args == [f32(1.5), 7, "hello", f32(-0.25), -2**31]


def test_random_messages_align_and_round_trip():
    import random
    rng = random.Random(31337)
    for _ in range(300):
        n = rng.randint(0, 6)
        args = []
        for _ in range(n):
            kind = rng.choice("fis")
            if kind == "f":
                args.append(rng.uniform(-1e6, 1e6))
            elif kind == "i":
                args.append(rng.randint(-2**31, 2**31 - 1))
            else:
                args.append("".join(rng.choice("abcdefg")
                                     for _ in range(rng.randint(0, 12))))
        msg = OscMessage("/" + "".join(rng.choice("xyz/") for _ in range(8)),
                         tuple(args))
        data = encode_message(msg)
        assert len(data) % 4 == 0
        address, _, decoded = decode_message_oracle(data)
        assert address == msg.address
        for got, want in zip(decoded, args):
            if isinstance(want, float):
                assert got == f32(want)
            else:
                assert got == want


def test_invalid_addresses():
    for bad in ("", "noslash", "/café"):
        with pytest.raises(InvalidAddressError):
            encode_message(OscMessage(bad))


def test_unsupported_arg_types():
    with pytest.raises(UnsupportedArgTypeError):
        encode_message(OscMessage("/x", (b"blob",)))
    with pytest.raises(UnsupportedArgTypeError):
        encode_message(OscMessage("/x", (True,)))
    with pytest.raises(UnsupportedArgTypeError):
        encode_message(OscMessage("/x", (2**40,)))


# --- pipeline emission -------------------------------------------------------------

def _state(gain=1.0):
    return MotionState(euler=EulerAngles(0.0, 0.0, 0.0), accel_mag=1.0,
                       gyro_mag=0.0, gyro_norm=0.0, qom=0.0,
                       stillness_s=30.0, master_gain=gain)


def _params(gain=1.0):
    return SynthParams(freqs=(220.0,) * 8, amps=(0.5,) * 8, drive=1.0,
                       master_gain=gain)


def test_emit_pipeline_message_count_and_order():
    msgs = emit_pipeline(_state(), EmgEnvelopes((0.0,) * 8), _params(), 3)
    assert len(msgs) == 7
    assert [m.address for m in msgs] == [
        "/myo/3/emg", "/myo/3/euler", "/myo/3/accmag", "/myo/3/gyrmag",
        "/myo/3/qom", "/myo/3/gate", "/myo/3/synth",
    ]


def test_emit_pipeline_identity_orientation():
    msgs = emit_pipeline(_state(), EmgEnvelopes((0.0,) * 8), _params(), 0)
    euler = [m for m in msgs if m.address == "/myo/0/euler"][0]
    assert euler.args == (0.0, 0.0, 0.0)


def test_emit_pipeline_muted_gate():
    msgs = emit_pipeline(_state(gain=0.0), EmgEnvelopes((0.0,) * 8),
                         _params(gain=0.0), 0)
    gate = [m for m in msgs if m.address == "/myo/0/gate"][0]
    assert gate.args == (0.0,)


def test_emit_pipeline_synth_args():
    msgs = emit_pipeline(_state(), EmgEnvelopes((0.25,) * 8), _params(), 0)
    synth = msgs[-1]
    assert len(synth.args) == 18
    assert synth.args[:8] == (220.0,) * 8
    assert synth.args[8:16] == (0.5,) * 8
    assert synth.args[16:] == (1.0, 1.0)


def test_emit_pipeline_all_encodable_and_aligned():
    msgs = emit_pipeline(_state(), EmgEnvelopes((0.5,) * 8), _params(), 12)
    for m in msgs:
        data = encode_message(m)
        assert len(data) % 4 == 0
        address, _, _ = decode_message_oracle(data)
        assert address == m.address


# --- UDP transport ------------------------------------------------------------------

def test_loopback_round_trip():
    receiver = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    receiver.bind(("127.0.0.1", 0))
    receiver.settimeout(2.0)
    port = receiver.getsockname()[1]
    payload = encode_message(OscMessage("/qom", (1.0,)))
    send_udp(payload, "127.0.0.1", port)
    got, _ = receiver.recvfrom(4096)
    receiver.close()
    assert got == payload


def test_oversized_datagram_rejected_before_send():
    with UdpSender("127.0.0.1", 9) as sender:
        with pytest.raises(MessageTooLargeError):
            sender.send(b"\x00" * 1473)
    # the largest pipeline message stays comfortably within the MTU guard
    synth = emit_pipeline(_state(), EmgEnvelopes((1.0,) * 8), _params(), 99)[-1]
    assert len(encode_message(synth)) <= 1472


def test_unresolvable_host_logged_not_raised(caplog):
    with caplog.at_level(logging.WARNING, logger="myobridge.osc"):
        with UdpSender("host.invalid.", 9000) as sender:
            sender.send(b"abcd")
            sender.send(b"abcd")
            assert sender.send_errors == 2
    assert "failed" in caplog.text
