"""Realm lifecycle, measured population and attestation tokens.

Measurement model (our interpretation of how the RMM measures the
hypervisor's population commands)::

    m0     = SHA256(params)
    m(k+1) = SHA256(m(k) || ipa:u64be || SHA256(page_content))

``ipa`` is the guest page number the content is mapped at; by default it is
the physical page number. The page content is zero-padded to 4 KiB before
hashing.

Token wire layout: five fields, each ``u32be length || bytes``, in the order
measurement(32), nonce(16), monitor_digest(32), rmm_digest(32), signature.
The signature covers the first four encoded fields byte-for-byte.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Optional, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from . import world
from .errors import InvalidTransition, LimitExceeded, NotActive, RealmSealed
from .world import PAGE_SIZE, GranuleProtectionTable, PasTag, SecurityState

DIGEST_SIZE = 32
NONCE_SIZE = 16


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class RealmState(enum.Enum):
    NEW = "New"
    ACTIVE = "Active"
    TERMINATED = "Terminated"


ALLOWED_TRANSITIONS = frozenset({
    (RealmState.NEW, RealmState.ACTIVE),
    (RealmState.NEW, RealmState.TERMINATED),
    (RealmState.ACTIVE, RealmState.TERMINATED),
})


@dataclass(frozen=True)
class UsagePolicy:
    max_inferences: Optional[int] = None
    valid_until: Optional[int] = None  # logical clock tick, inclusive

    def __post_init__(self):
        if self.max_inferences is not None and self.max_inferences < 0:
            raise ValueError("max_inferences must be non-negative")


@dataclass
class RealmDescriptor:
    id: int
    state: RealmState
    measurement: bytes
    granules: set[int] = field(default_factory=set)
    unprotected_region: set[int] = field(default_factory=set)
    inference_count: int = 0
    policy: UsagePolicy = field(default_factory=UsagePolicy)
    history: list[RealmState] = field(default_factory=list)

    def _move(self, new: RealmState) -> None:
        if (self.state, new) not in ALLOWED_TRANSITIONS:
            raise InvalidTransition(f"realm {self.id}: {self.state.value} -> {new.value}")
        self.state = new
        self.history.append(new)


def extend_measurement(measurement: bytes, ipa: int, content: bytes) -> bytes:
    page = bytes(content).ljust(PAGE_SIZE, b"\0")
    return digest(measurement + struct.pack(">Q", ipa) + digest(page))


def measure(params: bytes, pages) -> bytes:
    """Replay a population sequence of ``(ipa, content)`` without touching a GPT."""
    m = digest(params)
    for ipa, content in pages:
        m = extend_measurement(m, ipa, content)
    return m


def create_realm(gpt: GranuleProtectionTable, params: bytes,
                 policy: UsagePolicy | None = None) -> RealmDescriptor:
    # creation allocates nothing; pages arrive through populate
    gpt.realms_created += 1
    return RealmDescriptor(
        id=gpt.realms_created,
        state=RealmState.NEW,
        measurement=digest(params),
        policy=policy or UsagePolicy(),
        history=[RealmState.NEW],
    )


def populate(realm: RealmDescriptor, gpt: GranuleProtectionTable, page: int,
             content: bytes, ipa: int | None = None) -> RealmDescriptor:
    if realm.state is not RealmState.NEW:
        raise RealmSealed(f"realm {realm.id} is {realm.state.value}; population is closed")
    if len(content) > PAGE_SIZE:
        raise ValueError("content larger than one page")
    world.delegate(gpt, page, PasTag.REALM, caller=SecurityState.ROOT)
    padded = bytes(content).ljust(PAGE_SIZE, b"\0")
    # the RMM (Realm EL2) copies the hypervisor-supplied page into the granule
    world.write_page(gpt, SecurityState.REALM, page, padded)
    realm.measurement = extend_measurement(realm.measurement, page if ipa is None else ipa, padded)
    realm.granules.add(page)
    return realm


def activate(realm: RealmDescriptor) -> RealmDescriptor:
    if realm.state is not RealmState.NEW:
        raise InvalidTransition(f"realm {realm.id} is {realm.state.value}, cannot activate")
    realm._move(RealmState.ACTIVE)
    return realm


def grant_pages(realm: RealmDescriptor, gpt: GranuleProtectionTable, pages) -> RealmDescriptor:
    """Delegate extra unmeasured memory to an active realm (on-demand delegation)."""
    if realm.state is not RealmState.ACTIVE:
        raise NotActive(f"realm {realm.id} is {realm.state.value}")
    for page in pages:
        world.delegate(gpt, page, PasTag.REALM, caller=SecurityState.ROOT)
        realm.granules.add(page)
    return realm


def reclaim_pages(realm: RealmDescriptor, gpt: GranuleProtectionTable, pages) -> RealmDescriptor:
    for page in list(pages):
        if page not in realm.granules:
            raise ValueError(f"page {page} does not belong to realm {realm.id}")
        world.undelegate(gpt, page, caller=SecurityState.ROOT)
        realm.granules.discard(page)
    return realm


def record_inference(realm: RealmDescriptor, now: int = 0) -> RealmDescriptor:
    if realm.state is not RealmState.ACTIVE:
        raise NotActive(f"realm {realm.id} is {realm.state.value}")
    policy = realm.policy
    if policy.max_inferences is not None and realm.inference_count >= policy.max_inferences:
        raise LimitExceeded(f"realm {realm.id} used all {policy.max_inferences} inferences")
    if policy.valid_until is not None and now > policy.valid_until:
        raise LimitExceeded(f"realm {realm.id} expired at tick {policy.valid_until}")
    realm.inference_count += 1
    return realm


def destroy_realm(realm: RealmDescriptor, gpt: GranuleProtectionTable) -> RealmDescriptor:
    if realm.state is RealmState.TERMINATED:
        raise InvalidTransition(f"realm {realm.id} already terminated")
    for page in sorted(realm.granules):
        world.undelegate(gpt, page, caller=SecurityState.ROOT)
    realm.granules.clear()
    realm._move(RealmState.TERMINATED)
    return realm


# -- signing ---------------------------------------------------------------

class Signer(Protocol):
    def sign(self, message: bytes) -> bytes: ...


class Verifier(Protocol):
    def verify(self, signature: bytes, message: bytes) -> bool: ...


class Ed25519Signer:
    """Deterministic signatures (RFC 8032), so token bytes are reproducible."""

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("Ed25519 seed must be 32 bytes")
        self._key = Ed25519PrivateKey.from_private_bytes(seed)

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)

    def verifier(self) -> "Ed25519Verifier":
        return Ed25519Verifier(self._key.public_key())


class Ed25519Verifier:
    def __init__(self, public_key: Ed25519PublicKey):
        self._key = public_key

    def verify(self, signature: bytes, message: bytes) -> bool:
        try:
            self._key.verify(signature, message)
        except InvalidSignature:
            return False
        return True


class HmacSigner:
    """Symmetric alternative; the same object signs and verifies."""

    def __init__(self, key: bytes):
        self._key = key

    def sign(self, message: bytes) -> bytes:
        return hmac.new(self._key, message, hashlib.sha256).digest()

    def verify(self, signature: bytes, message: bytes) -> bool:
        return hmac.compare_digest(self.sign(message), signature)

    def verifier(self) -> "HmacSigner":
        return self


# -- tokens ----------------------------------------------------------------

@dataclass(frozen=True)
class PlatformClaims:
    monitor_digest: bytes
    rmm_digest: bytes


@dataclass(frozen=True)
class AttestationToken:
    measurement: bytes
    nonce: bytes
    platform: PlatformClaims
    signature: bytes

    def claims_bytes(self) -> bytes:
        return encode_claims(self.measurement, self.nonce, self.platform)

    def to_bytes(self) -> bytes:
        return self.claims_bytes() + _field(self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttestationToken":
        fields = decode_fields(data, 5)
        measurement, nonce, mon, rmm, sig = fields
        for name, value, size in (("measurement", measurement, DIGEST_SIZE),
                                  ("nonce", nonce, NONCE_SIZE),
                                  ("monitor_digest", mon, DIGEST_SIZE),
                                  ("rmm_digest", rmm, DIGEST_SIZE)):
            if len(value) != size:
                raise ValueError(f"{name} must be {size} bytes, got {len(value)}")
        return cls(measurement, nonce, PlatformClaims(mon, rmm), sig)


def _field(value: bytes) -> bytes:
    return struct.pack(">I", len(value)) + value


def encode_claims(measurement: bytes, nonce: bytes, platform: PlatformClaims) -> bytes:
    return b"".join(_field(v) for v in (measurement, nonce,
                                        platform.monitor_digest, platform.rmm_digest))


def decode_fields(data: bytes, count: int) -> list[bytes]:
    """Split ``count`` length-prefixed fields; trailing bytes are an error."""
    out = []
    pos = 0
    for _ in range(count):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError("field overruns buffer")
        out.append(bytes(data[pos:pos + n]))
        pos += n
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes")
    return out


def attest(realm: RealmDescriptor, nonce: bytes, signer: Signer,
           platform: PlatformClaims) -> AttestationToken:
    if realm.state is not RealmState.ACTIVE:
        raise NotActive(f"realm {realm.id} is {realm.state.value}")
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    claims = encode_claims(realm.measurement, nonce, platform)
    return AttestationToken(realm.measurement, bytes(nonce), platform, signer.sign(claims))


class RejectReason(enum.Enum):
    MALFORMED = "Malformed"
    BAD_SIGNATURE = "BadSignature"
    MEASUREMENT_MISMATCH = "MeasurementMismatch"
    PLATFORM_MISMATCH = "PlatformMismatch"
    STALE_NONCE = "StaleNonce"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Optional[RejectReason] = None

    def __bool__(self):
        return self.accepted


ACCEPT = Verdict(True)


def verify_token(token: AttestationToken, expected_measurement: bytes,
                 expected_platform: PlatformClaims, nonce: bytes,
                 verifier: Verifier) -> Verdict:
    if not verifier.verify(token.signature, token.claims_bytes()):
        return Verdict(False, RejectReason.BAD_SIGNATURE)
    if not hmac.compare_digest(token.measurement, expected_measurement):
        return Verdict(False, RejectReason.MEASUREMENT_MISMATCH)
    if token.platform != expected_platform:
        return Verdict(False, RejectReason.PLATFORM_MISMATCH)
    if not hmac.compare_digest(token.nonce, nonce):
        return Verdict(False, RejectReason.STALE_NONCE)
    return ACCEPT


def verify_serialized(data: bytes, expected_measurement: bytes,
                      expected_platform: PlatformClaims, nonce: bytes,
                      verifier: Verifier) -> Verdict:
    try:
        token = AttestationToken.from_bytes(data)
    except ValueError:
        return Verdict(False, RejectReason.MALFORMED)
    return verify_token(token, expected_measurement, expected_platform, nonce, verifier)
