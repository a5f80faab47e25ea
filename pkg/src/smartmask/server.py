"""Device emulation server: binary telemetry over TCP plus an NDJSON gateway.

Runs one simulation in real (or accelerated) time and exposes it twice:

* port 7450 — the device's native framed binary protocol (optionally
  encrypted); clients send command frames and receive telemetry, status,
  alert, and ack frames every control tick;
* port 7451 — a newline-delimited JSON mirror of the same traffic for web
  clients, which also accepts simulation controls (``inject_event``,
  ``set_speed``, ``ground_truth``) that are not part of the device protocol.

Commands received mid-tick are applied at the next control-tick boundary,
matching the cadence of the real firmware.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time

from . import controller as ctl
from . import protocol
from .env import EmissionEvent
from .runner import ScenarioConfig, ScheduledEmission, Simulation

log = logging.getLogger("smartmask.server")

DEFAULT_PORT = 7450
DEFAULT_GATEWAY_PORT = 7451


class _Client:
    """One connected peer on either listener."""

    def __init__(self, sock: socket.socket, binary: bool,
                 key: protocol.SessionKey | None):
        self.sock = sock
        self.binary = binary
        self.key = key
        self.buffer = b""
        self.tx_seq = 0
        self.lock = threading.Lock()

    def send_message(self, msg) -> None:
        try:
            if self.binary:
                with self.lock:
                    frame = protocol.encode_frame(msg, self.tx_seq, self.key)
                    self.tx_seq = (self.tx_seq + 1) & 0xFFFF
                    self.sock.sendall(frame)
            else:
                with self.lock:
                    line = protocol.message_to_json(msg, self.tx_seq)
                    self.tx_seq = (self.tx_seq + 1) & 0xFFFF
                    self.sock.sendall(line.encode() + b"\n")
        except OSError:
            pass

    def send_json(self, obj: dict) -> None:
        try:
            with self.lock:
                self.sock.sendall(json.dumps(obj).encode() + b"\n")
        except OSError:
            pass


class DeviceServer:
    """Owns the simulation thread and both TCP listeners."""

    def __init__(self, cfg: ScenarioConfig,
                 port: int = DEFAULT_PORT,
                 gateway_port: int = DEFAULT_GATEWAY_PORT,
                 key: bytes | None = None,
                 speed: float = 1.0):
        self.cfg = cfg
        self.sim = Simulation(cfg)
        self.key = protocol.SessionKey(key) if key else None
        self.speed = speed
        self.clients: list[_Client] = []
        self.clients_lock = threading.Lock()
        # (command, source client); drained at each tick boundary
        self.command_queue: "queue.Queue[tuple[protocol.Command, int, _Client]]" \
            = queue.Queue()
        self.stop_event = threading.Event()
        self.listeners = []
        self.threads: list[threading.Thread] = []
        self.port = port
        self.gateway_port = gateway_port

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        for port, binary in ((self.port, True), (self.gateway_port, False)):
            srv = socket.create_server(("127.0.0.1", port), reuse_port=False)
            srv.settimeout(0.2)
            self.listeners.append(srv)
            t = threading.Thread(target=self._accept_loop, args=(srv, binary),
                                 daemon=True)
            t.start()
            self.threads.append(t)
        t = threading.Thread(target=self._sim_loop, daemon=True)
        t.start()
        self.threads.append(t)
        log.info("device server on %d (binary) / %d (gateway)",
                 self.port, self.gateway_port)

    def stop(self) -> None:
        self.stop_event.set()
        for srv in self.listeners:
            srv.close()
        with self.clients_lock:
            for c in self.clients:
                try:
                    c.sock.close()
                except OSError:
                    pass
            self.clients.clear()
        for t in self.threads:
            t.join(timeout=2.0)

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self.stop_event.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- networking ---------------------------------------------------------

    def _accept_loop(self, srv: socket.socket, binary: bool) -> None:
        while not self.stop_event.is_set():
            try:
                sock, addr = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            client = _Client(sock, binary, self.key)
            with self.clients_lock:
                self.clients.append(client)
            t = threading.Thread(target=self._client_loop, args=(client,),
                                 daemon=True)
            t.start()
            log.info("client %s connected (%s)", addr,
                     "binary" if binary else "gateway")

    def _drop(self, client: _Client) -> None:
        with self.clients_lock:
            if client in self.clients:
                self.clients.remove(client)
        try:
            client.sock.close()
        except OSError:
            pass

    def _client_loop(self, client: _Client) -> None:
        client.sock.settimeout(0.5)
        while not self.stop_event.is_set():
            try:
                chunk = client.sock.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            client.buffer += chunk
            try:
                if client.binary:
                    self._drain_binary(client)
                else:
                    self._drain_gateway(client)
            except protocol.ProtocolError as exc:
                log.warning("dropping client after protocol error: %s", exc)
                break
        self._drop(client)

    def _drain_binary(self, client: _Client) -> None:
        msgs, client.buffer = protocol.stream_reassemble(client.buffer,
                                                         self.key)
        for msg, seq in msgs:
            if isinstance(msg, protocol.Command):
                self.command_queue.put((msg, seq, client))
            else:
                log.warning("ignoring non-command frame type from client")

    def _drain_gateway(self, client: _Client) -> None:
        while b"\n" in client.buffer:
            line, client.buffer = client.buffer.split(b"\n", 1)
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                client.send_json({"type": "error", "error": str(exc)})
                continue
            self._handle_gateway_message(client, obj, line.decode())

    def _handle_gateway_message(self, client: _Client, obj: dict,
                                line: str) -> None:
        kind = obj.get("type")
        if kind == "command":
            try:
                msg, seq = protocol.message_from_json(line)
            except (protocol.ProtocolError, KeyError, TypeError) as exc:
                client.send_json({"type": "error", "error": str(exc)})
                return
            self.command_queue.put((msg, seq, client))
        elif kind == "inject_event":
            try:
                ev = EmissionEvent.preset(obj["kind"],
                                          rate=obj.get("rate"),
                                          duration=float(obj.get("duration",
                                                                 0.0)))
            except Exception as exc:  # noqa: BLE001 - report to the peer
                client.send_json({"type": "error", "error": str(exc)})
                return
            self.inject_event(ev)
            client.send_json({"type": "ok", "applied": obj.get("kind")})
        elif kind == "set_speed":
            try:
                speed = float(obj["speed"])
                if not 0.01 <= speed <= 1000:
                    raise ValueError("speed out of range [0.01, 1000]")
            except (KeyError, ValueError) as exc:
                client.send_json({"type": "error", "error": str(exc)})
                return
            self.speed = speed
            client.send_json({"type": "ok", "speed": speed})
        elif kind == "ground_truth":
            client.send_json(self._ground_truth())
        else:
            client.send_json({"type": "error",
                              "error": f"unknown message type: {kind!r}"})

    # -- sim controls -------------------------------------------------------

    def inject_event(self, event: EmissionEvent) -> None:
        """Schedule an emission to fire at the next physics step."""
        sim = self.sim
        sim.cfg.emissions.append(ScheduledEmission(
            start=sim.env.sim_time, event=event))

    def _ground_truth(self) -> dict:
        env = self.sim.env
        return {
            "type": "ground_truth",
            "sim_time": env.sim_time,
            "breathing_number": [float(x) for x in env.breathing.number],
            "breathing_mist": [float(x) for x in env.breathing.mist_number],
            "ground_number": [float(x) for x in env.ground.number],
            "ground_mist": [float(x) for x in env.ground.mist_number],
            "liquid_ml": self.sim.actuator.liquid,
            "battery_mah": self.sim.actuator.battery_charge,
            "mode": int(self.sim.ctrl.mode),
            "spraying": self.sim.actuator.spraying,
        }

    # -- simulation loop ----------------------------------------------------

    def _sim_loop(self) -> None:
        cfg = self.cfg
        next_wall = time.monotonic()
        while not self.stop_event.is_set():
            senders = self._drain_commands_into_sim()
            record = self.sim.control_tick()
            self._broadcast_tick(record, senders)
            next_wall += cfg.control_dt / max(self.speed, 1e-9)
            delay = next_wall - time.monotonic()
            if delay > 0:
                self.stop_event.wait(delay)
            else:
                next_wall = time.monotonic()

    def _drain_commands_into_sim(self) -> list[_Client]:
        senders = []
        while True:
            try:
                cmd, seq, client = self.command_queue.get_nowait()
            except queue.Empty:
                return senders
            self.sim.queue_command(cmd, seq)
            senders.append(client)

    def _broadcast_tick(self, record, senders: list[_Client]) -> None:
        telemetry = protocol.Telemetry(
            timestamp_ms=int(round(record.time_s * 1000.0)),
            number_bins=tuple(float(x) for x in record.mask_n),
            mass_bins=tuple(float(x) for x in record.mask_m),
            temperature=record.temperature, rh=record.rh,
            risk=record.risk)
        actuator = self.sim.actuator
        status = protocol.Status(
            battery_pct=int(round(actuator.battery_pct)),
            liquid_pct=int(round(actuator.liquid_pct)),
            mode=int(self.sim.ctrl.mode),
            spraying=1 if actuator.spraying else 0,
            cumulative_exposure=self.sim.ctrl.cumulative_exposure)
        alerts = [protocol.Alert(code) for code in record.alerts]
        send_status = self.sim.tick_index % 5 == 1  # every 5th control tick

        with self.clients_lock:
            targets = list(self.clients)
        for client in targets:
            client.send_message(telemetry)
            if send_status:
                client.send_message(status)
            for alert in alerts:
                client.send_message(alert)
        # acks route back to the client that issued each command, in order
        for ack, client in zip(self.sim.last_acks, senders):
            client.send_message(ack)
        # the live device never ends its run; keep a bounded history
        if len(self.sim.records) > 4000:
            del self.sim.records[:-2000]


def serve_device(cfg: ScenarioConfig, port: int = DEFAULT_PORT,
                 gateway_port: int = DEFAULT_GATEWAY_PORT,
                 key: bytes | None = None, speed: float = 1.0) -> None:
    """Blocking entry point used by the command line."""
    DeviceServer(cfg, port=port, gateway_port=gateway_port, key=key,
                 speed=speed).serve_forever()
