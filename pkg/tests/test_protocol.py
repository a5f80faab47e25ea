import os
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartmask import protocol as p


KEY = bytes(range(32))


def fresh_key():
    return p.SessionKey(KEY)


f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)
pos_f32 = st.floats(0, 1e6, width=32)

telemetry_st = st.builds(
    p.Telemetry,
    timestamp_ms=st.integers(0, 2**32 - 1),
    number_bins=st.tuples(*[pos_f32] * 5),
    mass_bins=st.tuples(*[pos_f32] * 5),
    temperature=f32, rh=f32,
    risk=st.integers(0, 3))
status_st = st.builds(
    p.Status, battery_pct=st.integers(0, 100), liquid_pct=st.integers(0, 100),
    mode=st.integers(0, 1), spraying=st.integers(0, 1),
    cumulative_exposure=pos_f32)
alert_st = st.builds(p.Alert, code=st.sampled_from(
    [p.ALERT_RECHARGE, p.ALERT_REFILL, p.ALERT_DECONTAMINATE]))
command_st = st.one_of(
    st.builds(p.Command, code=st.just(p.CMD_SET_MODE), mode=st.integers(0, 1)),
    st.builds(p.Command, code=st.just(p.CMD_SPRAY_ON),
              duration=st.one_of(st.none(), st.floats(0.125, 600, width=32)),
              intensity=st.one_of(st.none(), st.floats(0, 1, width=32))),
    st.builds(p.Command, code=st.just(p.CMD_SPRAY_OFF)),
    st.builds(p.Command, code=st.just(p.CMD_ACK_ALERT),
              alert_code=st.integers(1, 3)),
    st.builds(p.Command, code=st.just(p.CMD_SET_PARAMS),
              duration=st.floats(0.125, 600, width=32),
              intensity=st.floats(0, 1, width=32),
              angle_factor=st.floats(0, 1, width=32)))
ack_st = st.builds(p.Ack, seq=st.integers(0, 65535), status=st.integers(0, 2))

message_st = st.one_of(telemetry_st, status_st, alert_st, command_st, ack_st)


def test_crc32_check_value():
    assert p.crc32(b"123456789") == 0xCBF43926


def test_alert_roundtrip_example():
    frame = p.encode_frame(p.Alert(code=1), seq=7)
    msg, seq = p.decode_frame(frame)
    assert msg == p.Alert(code=1) and seq == 7


def test_frame_layout_is_bit_exact():
    frame = p.encode_frame(p.Alert(code=2), seq=0x1234)
    assert frame[:2] == b"\xa5\x5a"
    assert frame[2] == 1                      # version
    assert frame[3] == p.MSG_ALERT
    assert frame[4] == 0                      # flags
    assert struct.unpack("<H", frame[5:7])[0] == 0x1234
    assert struct.unpack("<H", frame[7:9])[0] == 1
    assert frame[9] == 2
    assert struct.unpack("<I", frame[10:])[0] == p.crc32(frame[:-4])


@settings(max_examples=300, deadline=None)
@given(message_st, st.integers(0, 65535))
def test_roundtrip_unkeyed(msg, seq):
    assert p.decode_frame(p.encode_frame(msg, seq)) == (msg, seq)


@settings(max_examples=300, deadline=None)
@given(message_st, st.integers(0, 65535))
def test_roundtrip_keyed(msg, seq):
    frame = p.encode_frame(msg, seq, fresh_key())
    assert frame[4] & p.FLAG_ENCRYPTED
    assert p.decode_frame(frame, fresh_key()) == (msg, seq)


def test_wrong_key_fails_auth():
    frame = p.encode_frame(p.Status(50, 50, 0, 0, 1.5), 3, fresh_key())
    with pytest.raises(p.SecurityError):
        p.decode_frame(frame, p.SessionKey(os.urandom(32)))
    with pytest.raises(p.SecurityError):
        p.decode_frame(frame, None)


def test_every_single_byte_mutation_is_rejected():
    frame = bytearray(p.encode_frame(
        p.Telemetry(5, (1, 2, 3, 4, 5), (6, 7, 8, 9, 10), 21.0, 50.0, 1),
        42, fresh_key()))
    for i in range(len(frame)):
        for delta in (1, 0x80):
            bad = bytearray(frame)
            bad[i] ^= delta
            with pytest.raises(p.ProtocolError):
                p.decode_frame(bytes(bad), fresh_key())


def test_crc_detects_corruption_unkeyed():
    frame = bytearray(p.encode_frame(p.Ack(1, 0), 1))
    frame[10] ^= 0xFF
    with pytest.raises(p.ProtocolError):
        p.decode_frame(bytes(frame))


def test_truncated_and_empty_inputs():
    frame = p.encode_frame(p.Alert(code=1), 0)
    with pytest.raises(p.IncompleteError):
        p.decode_frame(b"")
    for cut in range(1, len(frame)):
        with pytest.raises(p.IncompleteError):
            p.decode_frame(frame[:cut])


def test_unknown_message_type():
    body = p.MAGIC + struct.pack("<BBBHH", 1, 99, 0, 0, 0)
    frame = body + struct.pack("<I", p.crc32(body))
    with pytest.raises(p.UnsupportedError):
        p.decode_frame(frame)


def test_bad_magic():
    frame = bytearray(p.encode_frame(p.Alert(code=1), 0))
    frame[0] = 0x00
    with pytest.raises(p.FramingError):
        p.decode_frame(bytes(frame))


def test_nonce_uniqueness_across_session():
    key = fresh_key()
    nonces = set()
    for i in range(500):
        frame = p.encode_frame(p.Alert(code=1), i, key)
        nonce = frame[p.HEADER_LEN:p.HEADER_LEN + p.NONCE_LEN]
        assert nonce not in nonces
        nonces.add(nonce)


def test_oversized_payload_rejected_on_encode():
    class Big(p.Alert):
        def to_bytes(self):
            return b"x" * 2000
    with pytest.raises(p.EncodeError):
        p.encode_frame(Big(code=1), 0)


# --- stream reassembly -----------------------------------------------------

def test_two_concatenated_frames():
    f1 = p.encode_frame(p.Alert(code=1), 1)
    f2 = p.encode_frame(p.Ack(9, 0), 2)
    frames, rem = p.stream_reassemble(f1 + f2)
    assert [m for m, _ in frames] == [p.Alert(code=1), p.Ack(9, 0)]
    assert rem == b""


def test_split_at_every_boundary():
    frame = p.encode_frame(p.Status(80, 60, 1, 0, 2.25), 5)
    for cut in range(len(frame) + 1):
        first, rem = p.stream_reassemble(frame[:cut])
        got, rem2 = p.stream_reassemble(rem + frame[cut:])
        all_frames = first + got
        assert [m for m, _ in all_frames] == [p.Status(80, 60, 1, 0, 2.25)]
        assert rem2 == b""


def test_garbage_prefix_resync():
    frame = p.encode_frame(p.Alert(code=3), 7)
    noisy = b"\x00\xa5\x00garbage\xa5\x5a\x01" + frame + b"trailing"
    frames, rem = p.stream_reassemble(noisy)
    assert [m for m, _ in frames] == [p.Alert(code=3)]


def test_interleaved_garbage_recovers_all_frames():
    rng = __import__("random").Random(7)
    frames = [p.encode_frame(p.Alert(code=(i % 3) + 1), i) for i in range(20)]
    stream = b""
    for f in frames:
        stream += bytes(rng.randrange(256) for _ in range(rng.randrange(8)))
        stream += f
    got, _ = p.stream_reassemble(stream)
    codes = [m.code for m, _ in got if isinstance(m, p.Alert)]
    # garbage may rarely mimic a valid short frame, but never drops real ones
    assert [(i % 3) + 1 for i in range(20)] == [c for c in codes]


def test_corrupt_frame_then_valid_frame():
    good = p.encode_frame(p.Alert(code=1), 1)
    bad = bytearray(p.encode_frame(p.Alert(code=2), 2))
    bad[12] ^= 0xFF  # break the crc
    frames, _ = p.stream_reassemble(bytes(bad) + good)
    assert [m for m, _ in frames] == [p.Alert(code=1)]


# --- json mirror -----------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(message_st, st.integers(0, 65535))
def test_json_mirror_roundtrip(msg, seq):
    assert p.message_from_json(p.message_to_json(msg, seq)) == (msg, seq)
