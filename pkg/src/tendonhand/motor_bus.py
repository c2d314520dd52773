"""Bit-exact servo-bus codec plus a virtual bus with simulated motors.

Wire format (normative for this repo, usable against the common 15-servo
daisy-chain hardware): header FF FF FD 00, id, little-endian 16-bit
length, instruction, byte-stuffed params, CRC-16 (poly 0x8005, init 0,
MSB-first) over header..params, appended little-endian. Length counts
instruction + stuffed params + CRC. Any FF FF FD pattern inside params
gets an extra FD appended on encode and stripped on decode.

The virtual bus models each servo as a slew-limited position drive with
a current readout derived from the commanded load torque, a hard current
clamp, and a slow first-order thermal state that derates the torque
constant (so current under constant load rises, then plateaus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping

HEADER = bytes([0xFF, 0xFF, 0xFD, 0x00])
BROADCAST_ID = 254
MAX_FRAME_BODY = 4096   # length-field cap accepted by the parser
_STUFF_PATTERN = bytes([0xFF, 0xFF, 0xFD])


class BusError(Exception):
    pass


class EncodeError(BusError):
    pass


class Instruction(IntEnum):
    PING = 0x01
    READ = 0x02
    WRITE = 0x03
    SYNC_READ = 0x82
    SYNC_WRITE = 0x83
    STATUS = 0x55


_CRC_TABLE = []
for _i in range(256):
    _c = _i << 8
    for _ in range(8):
        _c = ((_c << 1) ^ 0x8005) & 0xFFFF if _c & 0x8000 else (_c << 1) & 0xFFFF
    _CRC_TABLE.append(_c)


def crc16(data: bytes) -> int:
    """CRC-16 poly 0x8005, init 0, MSB-first (table-driven)."""
    crc = 0
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ b) & 0xFF]
    return crc


@dataclass(frozen=True)
class BusFrame:
    id: int
    instruction: Instruction
    params: bytes = b""

    def __post_init__(self):
        if not (0 <= self.id <= 252 or self.id == BROADCAST_ID):
            raise EncodeError(f"invalid bus id {self.id}")


def stuff(params: bytes) -> bytes:
    out = bytearray()
    run = 0
    for b in params:
        out.append(b)
        if run == 2 and b == 0xFD:
            out.append(0xFD)
            run = 0
            continue
        run = run + 1 if b == 0xFF else (0 if b != 0xFD else 0)
        run = min(run, 2)
    return bytes(out)


def unstuff(params: bytes) -> bytes:
    out = bytearray()
    i = 0
    n = len(params)
    while i < n:
        out.append(params[i])
        if i >= 2 and params[i - 2] == 0xFF and params[i - 1] == 0xFF and params[i] == 0xFD:
            if i + 1 < n and params[i + 1] == 0xFD:
                i += 1  # drop the stuffing byte
        i += 1
    return bytes(out)


def encode_frame(frame: BusFrame) -> bytes:
    stuffed = stuff(frame.params)
    length = len(stuffed) + 3  # instruction + CRC16
    if length > MAX_FRAME_BODY:
        raise EncodeError(f"params too long: body {length} > {MAX_FRAME_BODY}")
    body = bytes([frame.id, length & 0xFF, length >> 8, int(frame.instruction)]) + stuffed
    crc = crc16(HEADER + body)
    return HEADER + body + bytes([crc & 0xFF, crc >> 8])


class StreamDecoder:
    """Incremental, resynchronizing frame parser.

    Chunking-invariant: any partition of a byte stream yields the same
    frame sequence. Frames failing CRC are dropped and counted; malformed
    headers/lengths are counted; no invalid frame is ever emitted.
    """

    def __init__(self):
        self._buf = bytearray()
        self.crc_errors = 0
        self.framing_errors = 0
        self.discarded_bytes = 0

    def feed(self, data: bytes) -> list[BusFrame]:
        self._buf.extend(data)
        frames: list[BusFrame] = []
        buf = self._buf
        while True:
            idx = buf.find(HEADER)
            if idx < 0:
                keep = min(len(buf), len(HEADER) - 1)
                self.discarded_bytes += len(buf) - keep
                del buf[: len(buf) - keep]
                return frames
            if idx > 0:
                self.discarded_bytes += idx
                del buf[:idx]
            if len(buf) < 7:
                return frames
            frame_id = buf[4]
            length = buf[5] | (buf[6] << 8)
            if frame_id in (253, 255) or length < 3 or length > MAX_FRAME_BODY:
                self.framing_errors += 1
                self.discarded_bytes += len(HEADER)
                del buf[: len(HEADER)]
                continue
            total = 7 + length
            if len(buf) < total:
                return frames
            calc = crc16(bytes(buf[: total - 2]))
            recv = buf[total - 2] | (buf[total - 1] << 8)
            if calc != recv:
                self.crc_errors += 1
                self.discarded_bytes += len(HEADER)
                del buf[: len(HEADER)]
                continue
            instruction = buf[7]
            try:
                instr = Instruction(instruction)
            except ValueError:
                self.framing_errors += 1
                del buf[:total]
                continue
            params = unstuff(bytes(buf[8 : total - 2]))
            frames.append(BusFrame(frame_id, instr, params))
            del buf[:total]


def decode_stream(data: bytes, decoder: StreamDecoder | None = None) -> tuple[list[BusFrame], StreamDecoder]:
    """Functional wrapper: feed bytes, return (frames, parser state)."""
    decoder = decoder or StreamDecoder()
    return decoder.feed(data), decoder


# --------------------------------------------------------------------------
# Register map and virtual motors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Register:
    name: str
    address: int
    width: int      # bytes: 1, 2 or 4
    access: str     # "r" or "rw"


TORQUE_ENABLE = Register("TorqueEnable", 64, 1, "rw")
GOAL_POSITION = Register("GoalPosition", 116, 4, "rw")       # microradians
PRESENT_CURRENT = Register("PresentCurrent", 126, 2, "r")    # mA
PRESENT_POSITION = Register("PresentPosition", 132, 4, "r")  # microradians

REGISTERS = {r.address: r for r in (TORQUE_ENABLE, GOAL_POSITION, PRESENT_CURRENT, PRESENT_POSITION)}

ERR_ACCESS = 0x07  # status error byte for unknown address / bad width

_URAD = 1e6


def _encode_int(value: int, width: int) -> bytes:
    return int(value).to_bytes(width, "little", signed=True)


def _decode_int(data: bytes) -> int:
    return int.from_bytes(data, "little", signed=True)


@dataclass
class VirtualMotor:
    """Position-servo emulation with current and thermal models.

    thermal_state is a dimensionless relative temperature in [0, 1]; it
    relaxes toward k_heat * |current| with time constant tau_thermal and
    derates the torque constant by (1 - derating * thermal_state), which
    makes current under a constant load rise before plateauing.
    """

    id: int
    goal_position: float = 0.0
    present_position: float = 0.0
    present_current: float = 0.0        # mA, signed
    load_torque: float = 0.0            # N*m the motor must exert to hold
    current_limit: float = 600.0        # mA
    torque_constant: float = 0.85       # N*m/A at ambient
    max_velocity: float = 8.0           # rad/s
    torque_enable: bool = True
    thermal_state: float = 0.0
    tau_thermal: float = 300.0          # s
    derating: float = 0.3               # max torque-constant loss at thermal_state 1
    k_heat: float = 1.0 / 600.0         # thermal target per mA

    def read(self, reg: Register) -> int:
        if reg.name == "TorqueEnable":
            return int(self.torque_enable)
        if reg.name == "GoalPosition":
            return round(self.goal_position * _URAD)
        if reg.name == "PresentPosition":
            return round(self.present_position * _URAD)
        if reg.name == "PresentCurrent":
            return round(self.present_current)
        raise KeyError(reg.name)

    def write(self, reg: Register, raw: int) -> None:
        if reg.name == "TorqueEnable":
            self.torque_enable = bool(raw)
        elif reg.name == "GoalPosition":
            self.goal_position = raw / _URAD
        else:
            raise KeyError(reg.name)

    def step(self, dt: float) -> None:
        if dt <= 0:
            raise ValueError("dt must be > 0")
        kt_eff = self.torque_constant * (1.0 - self.derating * min(self.thermal_state, 1.0))
        needed_ma = abs(self.load_torque) / kt_eff * 1000.0 if self.torque_enable else 0.0
        clamped = min(needed_ma, self.current_limit)
        self.present_current = math.copysign(clamped, self.load_torque) if self.load_torque else 0.0

        if self.torque_enable:
            step_limit = self.max_velocity * dt
            delta = self.goal_position - self.present_position
            self.present_position += max(-step_limit, min(step_limit, delta))
            if needed_ma > self.current_limit:
                # Torque deficit: the load backdrives the spool and position sags.
                deficit = (needed_ma - self.current_limit) / needed_ma
                self.present_position -= math.copysign(step_limit * deficit, self.load_torque)

        target = min(1.0, self.k_heat * abs(self.present_current))
        alpha = 1.0 - math.exp(-dt / self.tau_thermal)
        self.thermal_state += (target - self.thermal_state) * alpha

    @property
    def saturated(self) -> bool:
        return abs(self.present_current) >= self.current_limit


def _status(motor_id: int, error: int = 0, data: bytes = b"") -> BusFrame:
    return BusFrame(motor_id, Instruction.STATUS, bytes([error]) + data)


class VirtualBus:
    """Single-owner state machine for a chain of virtual motors.

    Frame-level API (handle_frame / step) plus the same byte-stream
    interface a serial adapter exposes (write / read).
    """

    def __init__(self, motors: Iterable[VirtualMotor]):
        self.motors: dict[int, VirtualMotor] = {m.id: m for m in motors}
        self._decoder = StreamDecoder()
        self._outbox = bytearray()

    def set_load_torques(self, torques: Mapping[int, float]) -> None:
        for mid, tau in torques.items():
            if mid in self.motors:
                self.motors[mid].load_torque = float(tau)

    def handle_frame(self, frame: BusFrame) -> list[BusFrame]:
        out: list[BusFrame] = []
        targets = list(self.motors.values()) if frame.id == BROADCAST_ID else \
            [self.motors[frame.id]] if frame.id in self.motors else []

        if frame.instruction is Instruction.PING:
            for m in targets:
                out.append(_status(m.id, 0, b"\x00\x00\x00"))
        elif frame.instruction is Instruction.WRITE:
            addr = _decode_int(frame.params[0:2])
            data = frame.params[2:]
            for m in targets:
                reg = REGISTERS.get(addr)
                if reg is None or reg.width != len(data) or reg.access != "rw":
                    out.append(_status(m.id, ERR_ACCESS))
                else:
                    m.write(reg, _decode_int(data))
                    out.append(_status(m.id))
        elif frame.instruction is Instruction.READ:
            addr = _decode_int(frame.params[0:2])
            width = _decode_int(frame.params[2:4])
            for m in targets:
                reg = REGISTERS.get(addr)
                if reg is None or reg.width != width:
                    out.append(_status(m.id, ERR_ACCESS))
                else:
                    out.append(_status(m.id, 0, _encode_int(m.read(reg), reg.width)))
        elif frame.instruction is Instruction.SYNC_WRITE:
            addr = _decode_int(frame.params[0:2])
            width = _decode_int(frame.params[2:4])
            reg = REGISTERS.get(addr)
            blocks = frame.params[4:]
            stride = 1 + max(width, 0)
            for i in range(0, len(blocks) - stride + 1, stride):
                mid = blocks[i]
                m = self.motors.get(mid)
                if m is None:
                    continue
                if reg is None or reg.width != width or reg.access != "rw":
                    out.append(_status(mid, ERR_ACCESS))
                else:
                    m.write(reg, _decode_int(blocks[i + 1 : i + 1 + width]))
        elif frame.instruction is Instruction.SYNC_READ:
            addr = _decode_int(frame.params[0:2])
            width = _decode_int(frame.params[2:4])
            reg = REGISTERS.get(addr)
            for mid in frame.params[4:]:
                m = self.motors.get(mid)
                if m is None:
                    continue
                if reg is None or reg.width != width:
                    out.append(_status(mid, ERR_ACCESS))
                else:
                    out.append(_status(mid, 0, _encode_int(m.read(reg), reg.width)))
        return out

    def step(self, dt: float) -> None:
        for m in self.motors.values():
            m.step(dt)

    # byte-stream (serial adapter) interface
    def write(self, data: bytes) -> None:
        for frame in self._decoder.feed(data):
            for reply in self.handle_frame(frame):
                self._outbox.extend(encode_frame(reply))

    def read(self, max_bytes: int | None = None) -> bytes:
        n = len(self._outbox) if max_bytes is None else min(max_bytes, len(self._outbox))
        out = bytes(self._outbox[:n])
        del self._outbox[:n]
        return out


def virtual_bus_step(
    motors: Iterable[VirtualMotor], inbound: Iterable[BusFrame], dt: float
) -> tuple[list[BusFrame], dict[int, VirtualMotor]]:
    """Deliver frames to the motors, advance physics, return status frames."""
    bus = VirtualBus(motors)
    status: list[BusFrame] = []
    for frame in inbound:
        status.extend(bus.handle_frame(frame))
    bus.step(dt)
    return status, bus.motors


def sync_write_goal_positions(goals: Mapping[int, float]) -> BusFrame:
    """SyncWrite frame setting GoalPosition (rad) for each motor id."""
    params = bytearray(_encode_int(GOAL_POSITION.address, 2) + _encode_int(GOAL_POSITION.width, 2))
    for mid in sorted(goals):
        params.append(mid)
        params.extend(_encode_int(round(goals[mid] * _URAD), GOAL_POSITION.width))
    return BusFrame(BROADCAST_ID, Instruction.SYNC_WRITE, bytes(params))


def sync_read_frame(register: Register, ids: Iterable[int]) -> BusFrame:
    params = _encode_int(register.address, 2) + _encode_int(register.width, 2) + bytes(sorted(ids))
    return BusFrame(BROADCAST_ID, Instruction.SYNC_READ, params)


def parse_sync_read_values(register: Register, frames: Iterable[BusFrame]) -> dict[int, float]:
    """Decode SyncRead replies; positions come back in rad, currents in mA."""
    out: dict[int, float] = {}
    for f in frames:
        if f.instruction is not Instruction.STATUS or not f.params or f.params[0]:
            continue
        raw = _decode_int(f.params[1 : 1 + register.width])
        if register.name in ("GoalPosition", "PresentPosition"):
            out[f.id] = raw / _URAD
        else:
            out[f.id] = float(raw)
    return out
