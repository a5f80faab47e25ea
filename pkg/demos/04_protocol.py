"""Binary telemetry frames: framing, CRC, authenticated encryption.

Encodes a telemetry frame plain and encrypted, shows the wire bytes, proves
a flipped byte is rejected, and reassembles frames from a noisy stream.
"""

import os

from smartmask import protocol as P


def main() -> None:
    msg = P.Telemetry(timestamp_ms=12_345,
                      number_bins=(120.0, 80.0, 30.5, 4.2, 0.3),
                      mass_bins=(9.1, 22.0, 51.0, 33.0, 8.8),
                      temperature=22.5, rh=45.0, risk=2)

    plain = P.encode_frame(msg, seq=1)
    print(f"plain frame     {len(plain):3d} B  {plain[:16].hex()}...")

    key = P.SessionKey(os.urandom(32))
    sealed = P.encode_frame(msg, seq=2, key=key)
    print(f"encrypted frame {len(sealed):3d} B  {sealed[:16].hex()}...")

    rx = P.SessionKey(key.key)
    decoded, seq = P.decode_frame(sealed, rx)
    print(f"round trip ok: seq={seq}, risk={decoded.risk}, "
          f"bins={decoded.number_bins}")

    tampered = bytearray(sealed)
    tampered[len(tampered) // 2] ^= 0x01
    try:
        P.decode_frame(bytes(tampered), rx)
        print("tampered frame accepted (should not happen)")
    except P.ProtocolError as e:
        print(f"tampered frame rejected: {type(e).__name__}: {e}")

    stream = (b"\x00garbage" + P.encode_frame(msg, 3)
              + b"\xa5\x00noise" + P.encode_frame(P.Alert(3), 4))
    frames, rest = P.stream_reassemble(stream)
    print(f"reassembled {len(frames)} frames from noisy stream "
          f"({len(rest)} B residue): "
          f"{[(type(m).__name__, s) for m, s in frames]}")

    print(f'CRC-32 check value: 0x{P.crc32(b"123456789"):08X}')


if __name__ == "__main__":
    main()
