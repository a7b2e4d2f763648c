"""Message types and the bit-exact frame codec.

Frame::

    +----------------+-----+-------------------+
    | length: u32 BE | tag | payload           |
    +----------------+-----+-------------------+

``length`` counts the tag byte plus the payload. Payloads are sequences of
length-prefixed fields (``u32 BE length || bytes``); integers travel as
8-byte big-endian fields, booleans as one byte. See ``docs/wire-format.md``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

from .errors import ProtocolError
from .realm import DIGEST_SIZE, AttestationToken, decode_fields

HEADER = struct.Struct(">IB")
MAX_FRAME = 64 * 1024 * 1024


@dataclass(frozen=True)
class RealmImage:
    image_id: str
    payload: bytes
    published_measurement: bytes


@dataclass(frozen=True)
class ModelBlob:
    model_id: str
    weights: bytes
    version: int = 1

    @property
    def size_bytes(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class FetchImage:
    image_id: str


@dataclass(frozen=True)
class Image:
    image: RealmImage


@dataclass(frozen=True)
class Hello:
    pass


@dataclass(frozen=True)
class Challenge:
    nonce: bytes


@dataclass(frozen=True)
class Evidence:
    token: AttestationToken


@dataclass(frozen=True)
class ModelDelivery:
    model: ModelBlob
    encrypted: bool = True


@dataclass(frozen=True)
class UpdateQuery:
    model_id: str
    version: int


@dataclass(frozen=True)
class UpdateReply:
    model: Optional[ModelBlob] = None


@dataclass(frozen=True)
class Error:
    code: str


Message = Union[FetchImage, Image, Hello, Challenge, Evidence, ModelDelivery,
                UpdateQuery, UpdateReply, Error]

TAGS = {
    FetchImage: 1,
    Image: 2,
    Hello: 3,
    Challenge: 4,
    Evidence: 5,
    ModelDelivery: 6,
    UpdateQuery: 7,
    UpdateReply: 8,
    Error: 9,
}
_BY_TAG = {v: k for k, v in TAGS.items()}


def _f(value: bytes) -> bytes:
    return struct.pack(">I", len(value)) + value


def _u64(n: int) -> bytes:
    return _f(struct.pack(">Q", n))


def _int(raw: bytes) -> int:
    if len(raw) != 8:
        raise ProtocolError("integer field must be 8 bytes")
    return struct.unpack(">Q", raw)[0]


def _model_fields(m: ModelBlob) -> bytes:
    return _f(m.model_id.encode()) + _u64(m.version) + _f(m.weights)


def _model(fields: list[bytes]) -> ModelBlob:
    return ModelBlob(fields[0].decode(), fields[2], _int(fields[1]))


def encode_payload(msg: Message) -> bytes:
    if isinstance(msg, FetchImage):
        return _f(msg.image_id.encode())
    if isinstance(msg, Image):
        im = msg.image
        return _f(im.image_id.encode()) + _f(im.payload) + _f(im.published_measurement)
    if isinstance(msg, Hello):
        return b""
    if isinstance(msg, Challenge):
        return _f(msg.nonce)
    if isinstance(msg, Evidence):
        return _f(msg.token.to_bytes())
    if isinstance(msg, ModelDelivery):
        return _model_fields(msg.model) + _f(bytes([msg.encrypted]))
    if isinstance(msg, UpdateQuery):
        return _f(msg.model_id.encode()) + _u64(msg.version)
    if isinstance(msg, UpdateReply):
        if msg.model is None:
            return _f(b"\0")
        return _f(b"\1") + _model_fields(msg.model)
    if isinstance(msg, Error):
        return _f(msg.code.encode())
    raise TypeError(f"not a protocol message: {msg!r}")


def decode_payload(tag: int, payload: bytes) -> Message:
    kind = _BY_TAG.get(tag)
    if kind is None:
        raise ProtocolError(f"unknown message tag {tag}")
    try:
        if kind is Hello:
            if payload:
                raise ValueError("Hello carries no payload")
            return Hello()
        if kind is UpdateReply:
            present = decode_fields(payload[:5], 1)[0] if len(payload) >= 5 else b""
            if present == b"\0":
                decode_fields(payload, 1)
                return UpdateReply(None)
            fields = decode_fields(payload, 4)
            if fields[0] != b"\1":
                raise ValueError("bad presence flag")
            return UpdateReply(_model(fields[1:]))
        counts = {FetchImage: 1, Image: 3, Challenge: 1, Evidence: 1,
                  ModelDelivery: 4, UpdateQuery: 2, Error: 1}
        fields = decode_fields(payload, counts[kind])
        if kind is FetchImage:
            return FetchImage(fields[0].decode())
        if kind is Image:
            if len(fields[2]) != DIGEST_SIZE:
                raise ValueError("measurement must be 32 bytes")
            return Image(RealmImage(fields[0].decode(), fields[1], fields[2]))
        if kind is Challenge:
            return Challenge(fields[0])
        if kind is Evidence:
            return Evidence(AttestationToken.from_bytes(fields[0]))
        if kind is ModelDelivery:
            if fields[3] not in (b"\0", b"\1"):
                raise ValueError("bad encrypted flag")
            return ModelDelivery(_model(fields[:3]), fields[3] == b"\1")
        if kind is UpdateQuery:
            return UpdateQuery(fields[0].decode(), _int(fields[1]))
        return Error(fields[0].decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed {kind.__name__}: {exc}") from exc


def encode_frame(msg: Message) -> bytes:
    payload = encode_payload(msg)
    return HEADER.pack(len(payload) + 1, TAGS[type(msg)]) + payload


def decode_frame(frame: bytes) -> Message:
    if len(frame) < HEADER.size:
        raise ProtocolError("short frame")
    length, tag = HEADER.unpack_from(frame)
    if length != len(frame) - 4:
        raise ProtocolError(f"length prefix {length} != {len(frame) - 4}")
    return decode_payload(tag, frame[HEADER.size:])


def read_frame(stream) -> bytes:
    """Read one whole frame from a binary file-like object (``socket.makefile``)."""
    head = _read_exact(stream, 4)
    if not head:
        raise EOFError("stream closed")
    (length,) = struct.unpack(">I", head)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    return head + _read_exact(stream, length, partial_ok=False)


def _read_exact(stream, n: int, partial_ok: bool = True) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if not buf and partial_ok:
                return b""
            raise ProtocolError("stream closed mid-frame")
        buf += chunk
    return bytes(buf)
