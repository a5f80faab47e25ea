"""Live device server: NDJSON gateway session against a running simulation.

Starts the device server on free ports at 20x speed, connects to the JSON
gateway, watches telemetry, injects a sneeze, switches to manual mode via a
command, and asks for ground truth.
"""

import json
import socket

from smartmask import protocol as P
from smartmask.runner import ScenarioConfig
from smartmask.server import DeviceServer


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def lines(sock: socket.socket):
    buf = b""
    while True:
        chunk = sock.recv(4096)
        if not chunk:
            return
        buf += chunk
        while b"\n" in buf:
            line, buf = buf.split(b"\n", 1)
            yield json.loads(line)


def main() -> None:
    cfg = ScenarioConfig(duration=1e6, noise_sigma=0.0)
    server = DeviceServer(cfg, port=free_port(), gateway_port=free_port(),
                          speed=20.0)
    server.start()
    try:
        sock = socket.create_connection(("127.0.0.1", server.gateway_port))
        feed = lines(sock)

        print("telemetry stream:")
        for _ in range(3):
            msg = next(m for m in feed if m["type"] == "telemetry")
            print(f"  t={msg['timestamp_ms']} ms fine="
                  f"{msg['number_bins'][0] + msg['number_bins'][1]:.1f} "
                  f"risk={msg['risk']}")

        inject = {"type": "inject_event", "kind": "humidifier",
                  "rate": 5e8, "duration": 30.0}
        sock.sendall((json.dumps(inject) + "\n").encode())
        msg = next(m for m in feed if m["type"] == "telemetry"
                   and m["number_bins"][0] + m["number_bins"][1] > 100)
        print(f"injected aerosol visible at t={msg['timestamp_ms']} ms "
              f"fine={msg['number_bins'][0] + msg['number_bins'][1]:.1f}")

        cmd = P.message_to_json(P.Command(P.CMD_SET_MODE, mode=1), 42)
        sock.sendall(cmd.encode() + b"\n")
        ack = next(m for m in feed if m["type"] == "ack")
        print(f"SET_MODE ack: seq={ack['seq']} status={ack['status']}")

        sock.sendall(b'{"type": "ground_truth"}\n')
        gt = next(m for m in feed if m["type"] == "ground_truth")
        print(f"ground truth: mode={gt['mode']} "
              f"liquid={gt['liquid_ml']:.2f} mL")
        sock.close()
    finally:
        server.stop()


if __name__ == "__main__":
    main()
