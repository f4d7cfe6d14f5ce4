"""
Wire format between device sessions and the worker: every frame is a 32-bit
big-endian byte count followed by that many bytes of UTF-8 JSON.
"""
from __future__ import annotations

import asyncio
import json
import struct
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, TypedDict

from aioguiprobe.util import ProtocolError


LENGTH = struct.Struct(">I")
MAX_FRAME_SIZE = 64 * 1024 * 1024


class MessageType(str, Enum):
    hello = "hello"
    get_q = "get_q"
    get_q_resp = "get_q_resp"
    add_training_data = "add_training_data"
    ack = "ack"
    get_model = "get_model"
    model_blob = "model_blob"
    error = "error"


REQUEST_TYPES = frozenset({MessageType.hello, MessageType.get_q, MessageType.add_training_data, MessageType.get_model})


class ErrorCode(str, Enum):
    malformed = "malformed"
    unknown_type = "unknown_type"
    unknown_session = "unknown_session"
    invalid_sequence = "invalid_sequence"
    backpressure = "backpressure"
    incompatible = "incompatible"
    internal = "internal"


class Hello(TypedDict):
    type: str
    cid: int
    session_id: str
    app_fingerprint: str


class GetQ(TypedDict):
    type: str
    cid: int
    session: str
    state: Dict[str, Any]
    candidates: List[Dict[str, Any]]
    goal: int


class GetQResp(TypedDict):
    type: str
    cid: int
    q_values: List[float]
    chosen: int
    model_version: int


class AddTrainingData(TypedDict):
    type: str
    cid: int
    session: str
    sequence: Dict[str, Any]


class Ack(TypedDict):
    type: str
    cid: int
    accepted: int


class GetModel(TypedDict):
    type: str
    cid: int
    have_version: int


class ModelBlob(TypedDict):
    type: str
    cid: int
    version: int
    bytes: Optional[str]  # base64, None when the client already has the latest


class Error(TypedDict):
    type: str
    cid: Optional[int]
    code: str
    message: str


def error_message(cid: Optional[int], code: ErrorCode, message: str) -> Error:
    return {"type": MessageType.error.value, "cid": cid, "code": code.value, "message": message}


def encode_frame(message: Mapping[str, Any]) -> bytes:
    payload = json.dumps(message, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    if len(payload) > MAX_FRAME_SIZE:
        raise ProtocolError(ErrorCode.malformed.value, f"Frame of {len(payload)} bytes exceeds {MAX_FRAME_SIZE}")
    return LENGTH.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> Dict[str, Any]:
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(ErrorCode.malformed.value, f"Undecodable frame: {e}")
    if not isinstance(message, dict) or not isinstance(message.get("type"), str):
        raise ProtocolError(ErrorCode.malformed.value, "Frame is not an object with a string 'type'")
    return message


async def read_frame(reader: asyncio.StreamReader, max_size: int = MAX_FRAME_SIZE) -> Optional[Dict[str, Any]]:
    """Next message, or None on a clean end of stream"""
    try:
        header = await reader.readexactly(LENGTH.size)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            return None
        raise ProtocolError(ErrorCode.malformed.value, "Truncated frame header")
    (size,) = LENGTH.unpack(header)
    if size > max_size:
        raise ProtocolError(ErrorCode.malformed.value, f"Frame of {size} bytes exceeds {max_size}")
    try:
        payload = await reader.readexactly(size)
    except asyncio.IncompleteReadError:
        raise ProtocolError(ErrorCode.malformed.value, "Truncated frame body")
    return decode_payload(payload)


async def write_frame(writer: asyncio.StreamWriter, message: Mapping[str, Any]) -> None:
    writer.write(encode_frame(message))
    await writer.drain()
