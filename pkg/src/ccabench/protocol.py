"""Three-party model deployment: trusted verifier, client device, model provider.

The client side bundles the normal-world app, the hypervisor (page
allocation, realm creation) and the realm's own software. Every message to
the verifier or the provider is encoded to a frame and passed through a
:class:`WireTap`, which records what the normal world can observe. Once the
provider connection is up (step 3) frames are recorded as opaque, standing
in for the TLS channel.
"""

from __future__ import annotations

import logging
import os
import random
import socket
import struct
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import realm as rl
from . import wire
from .errors import (
    AttestationRejected,
    CcaError,
    Expired,
    LimitExceeded,
    NotReady,
    OutOfPages,
    ProtocolError,
    SessionRequired,
    UnknownImage,
)
from .realm import PlatformClaims, RealmDescriptor, RejectReason, UsagePolicy
from .wire import (
    Challenge,
    Error,
    Evidence,
    FetchImage,
    Hello,
    Image,
    ModelBlob,
    ModelDelivery,
    RealmImage,
    UpdateQuery,
    UpdateReply,
)
from .world import PAGE_SIZE, GranuleProtectionTable, PasTag, SecurityState, read_page, write_page

log = logging.getLogger(__name__)

NORMAL = SecurityState.NORMAL
REALM = SecurityState.REALM


def image_params(image_id: str) -> bytes:
    """Initial realm configuration bytes for an image (first measurement input)."""
    return b"realm-image:" + image_id.encode()


def split_pages(payload: bytes) -> list[bytes]:
    return [payload[i:i + PAGE_SIZE] for i in range(0, len(payload), PAGE_SIZE)]


def published_measurement(image_id: str, payload: bytes) -> bytes:
    return rl.measure(image_params(image_id), enumerate(split_pages(payload)))


# -- parties ---------------------------------------------------------------

class TrustedVerifier:
    def __init__(self):
        self._images: dict[str, RealmImage] = {}

    def register(self, image_id: str, payload: bytes) -> RealmImage:
        image = RealmImage(image_id, bytes(payload), published_measurement(image_id, payload))
        self._images[image_id] = image
        return image

    def serve(self, request: FetchImage) -> Image:
        try:
            return Image(self._images[request.image_id])
        except KeyError:
            raise UnknownImage(request.image_id) from None

    def handle(self, msg):
        if not isinstance(msg, FetchImage):
            return Error("unexpected-message")
        try:
            return self.serve(msg)
        except UnknownImage:
            return Error("unknown-image")


@dataclass
class ProviderExpectations:
    measurements: frozenset
    platform: PlatformClaims


class ModelProvider:
    """Session state machine: Hello -> Challenge -> Evidence -> ModelDelivery -> UpdateQuery*.

    One instance serves one session at a time; a fresh Hello starts another.
    """

    IDLE, CHALLENGED, DELIVERED, CLOSED = "idle", "challenged", "delivered", "closed"

    def __init__(self, expectations: ProviderExpectations, verifier: rl.Verifier,
                 model: ModelBlob, nonce_source: Callable[[], bytes] = lambda: os.urandom(16)):
        self.expectations = expectations
        self.verifier = verifier
        self.model = model
        self._nonce_source = nonce_source
        self.verdicts: list[rl.Verdict] = []
        self.deliveries = 0
        self.reset()

    def reset(self):
        self.state = self.IDLE
        self.nonce: Optional[bytes] = None

    def publish(self, model: ModelBlob) -> None:
        self.model = model

    def handle(self, msg):
        if isinstance(msg, Hello) and self.state != self.DELIVERED:
            # a Hello opens a fresh connection; any half-finished one is dropped
            self.nonce = self._nonce_source()
            self.state = self.CHALLENGED
            return Challenge(self.nonce)
        if isinstance(msg, Evidence) and self.state == self.CHALLENGED:
            verdict = self._check(msg.token)
            self.verdicts.append(verdict)
            if not verdict:
                self.state = self.CLOSED
                return Error(f"attestation:{verdict.reason.value}")
            self.state = self.DELIVERED
            self.deliveries += 1
            return ModelDelivery(self.model, encrypted=True)
        if isinstance(msg, UpdateQuery) and self.state == self.DELIVERED:
            if msg.model_id == self.model.model_id and self.model.version > msg.version:
                self.deliveries += 1
                return UpdateReply(self.model)
            return UpdateReply(None)
        if isinstance(msg, UpdateQuery):
            return Error("session-required")
        return Error("out-of-order")

    def _check(self, token) -> rl.Verdict:
        exp = self.expectations
        verdict = rl.ACCEPT
        for m in sorted(exp.measurements):
            verdict = rl.verify_token(token, m, exp.platform, self.nonce, self.verifier)
            if verdict or verdict.reason is not RejectReason.MEASUREMENT_MISMATCH:
                return verdict
        return verdict if exp.measurements else rl.Verdict(False, RejectReason.MEASUREMENT_MISMATCH)


# -- transport -------------------------------------------------------------

@dataclass(frozen=True)
class WireRecord:
    link: str
    direction: str          # "send" | "recv"
    tag: int
    length: int
    payload: Optional[bytes]  # None once the channel is confidential

    @property
    def kind(self) -> str:
        return wire._BY_TAG[self.tag].__name__


class WireTap:
    """Everything the normal world sees crossing its network stack."""

    def __init__(self):
        self.records: list[WireRecord] = []
        self._lock = threading.Lock()

    def record(self, link: str, direction: str, frame: bytes, opaque: bool) -> None:
        length, tag = wire.HEADER.unpack_from(frame)
        with self._lock:
            self.records.append(WireRecord(link, direction, tag, length,
                                           None if opaque else frame[wire.HEADER.size:]))

    def kinds(self, link: Optional[str] = None) -> list[str]:
        return [r.kind for r in self.records if link is None or r.link == link]

    def visible_payloads(self) -> list[bytes]:
        return [r.payload for r in self.records if r.payload]


class Link:
    """Request/reply endpoint. Subclasses move encoded frames to the peer."""

    def __init__(self, name: str, tap: WireTap):
        self.name = name
        self.tap = tap
        self.confidential = False

    def request(self, msg):
        frame = wire.encode_frame(msg)
        self.tap.record(self.name, "send", frame, self.confidential)
        reply = self._exchange(frame)
        self.tap.record(self.name, "recv", reply, self.confidential)
        return wire.decode_frame(reply)

    def secure(self) -> None:
        self.confidential = True

    def _exchange(self, frame: bytes) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessLink(Link):
    """Lock-step delivery on the caller's thread."""

    def __init__(self, name, tap, handler):
        super().__init__(name, tap)
        self._handler = handler

    def _exchange(self, frame):
        return wire.encode_frame(self._handler(wire.decode_frame(frame)))


class _FrameServer(threading.Thread):
    """Loopback TCP actor: owns its handler and serves one connection at a time."""

    def __init__(self, handler):
        super().__init__(daemon=True)
        self._handler = handler
        self._sock = socket.create_server(("127.0.0.1", 0))
        self.address = self._sock.getsockname()

    def run(self):
        while True:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            with conn, conn.makefile("rb") as rfile:
                while True:
                    try:
                        frame = wire.read_frame(rfile)
                    except (EOFError, ProtocolError, OSError):
                        break
                    try:
                        reply = self._handler(wire.decode_frame(frame))
                    except ProtocolError as exc:
                        reply = Error(f"malformed:{exc}")
                    conn.sendall(wire.encode_frame(reply))

    def stop(self):
        self._sock.close()


class SocketLink(Link):
    def __init__(self, name, tap, handler):
        super().__init__(name, tap)
        self._server = _FrameServer(handler)
        self._server.start()
        self._conn = socket.create_connection(self._server.address)
        self._rfile = self._conn.makefile("rb")

    def _exchange(self, frame):
        self._conn.sendall(frame)
        return wire.read_frame(self._rfile)

    def close(self):
        self._rfile.close()
        self._conn.close()
        self._server.stop()


def make_link(transport: str, name: str, tap: WireTap, handler) -> Link:
    if transport == "inproc":
        return InProcessLink(name, tap, handler)
    if transport == "socket":
        return SocketLink(name, tap, handler)
    raise ValueError(f"unknown transport {transport!r}")


# -- shared filesystem -----------------------------------------------------

STATUS_OK = 0
STATUS_EXPIRED = 1
_LEN = struct.Struct(">I")


class SharedFs:
    """Single-slot input/output exchange in unprotected (NormalPAS) pages.

    Layout: page 0 holds the ready flag; then ``slot_pages`` pages of input
    (``u32 length || data``) and ``slot_pages`` pages of output
    (``u8 status || u32 length || data``).
    """

    def __init__(self, gpt: GranuleProtectionTable, pages: list[int], slot_pages: int):
        if len(pages) != 1 + 2 * slot_pages:
            raise ValueError("page count does not match layout")
        for p in pages:
            if gpt.pas(p) is not PasTag.NORMAL:
                raise ValueError(f"shared page {p} is not NormalPAS")
        self.gpt = gpt
        self.pages = list(pages)
        self._ready = pages[0]
        self._input = pages[1:1 + slot_pages]
        self._output = pages[1 + slot_pages:]

    @property
    def capacity(self) -> int:
        return len(self._input) * PAGE_SIZE - 5

    def _write(self, who, pages, blob):
        if len(blob) > len(pages) * PAGE_SIZE:
            raise ValueError(f"{len(blob)} bytes exceed the {len(pages)}-page slot")
        blob = blob.ljust(len(pages) * PAGE_SIZE, b"\0")
        for i, p in enumerate(pages):
            write_page(self.gpt, who, p, blob[i * PAGE_SIZE:(i + 1) * PAGE_SIZE])

    def _read(self, who, pages):
        return b"".join(read_page(self.gpt, who, p) for p in pages)

    def set_ready(self, who, ready=True):
        write_page(self.gpt, who, self._ready, b"\1" if ready else b"\0")

    def is_ready(self, who) -> bool:
        return read_page(self.gpt, who, self._ready)[0] == 1

    def write_input(self, who, data: bytes):
        self._write(who, self._input, _LEN.pack(len(data)) + data)

    def read_input(self, who) -> Optional[bytes]:
        raw = self._read(who, self._input)
        (n,) = _LEN.unpack_from(raw)
        return raw[4:4 + n] if n else None

    def clear_input(self, who):
        self._write(who, self._input, b"")

    def write_output(self, who, status: int, data: bytes = b""):
        self._write(who, self._output, bytes([status]) + _LEN.pack(len(data)) + data)

    def read_output(self, who) -> tuple[int, Optional[bytes]]:
        raw = self._read(who, self._output)
        status = raw[0]
        (n,) = _LEN.unpack_from(raw, 1)
        return status, (raw[5:5 + n] if n or status != STATUS_OK else None)

    def nw_visible(self) -> list[bytes]:
        return []  # backing pages are covered by the GPT scan


class DirectorySharedFs:
    """Filesystem transport: ``input.bin``, ``output.bin`` and ``ready.flag``.

    ``output.bin`` starts with one status byte (0 ok, 1 expired).
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.capacity = 1 << 20

    def _path(self, name):
        return self.root / name

    def set_ready(self, who, ready=True):
        _atomic_write(self._path("ready.flag"), b"\1" if ready else b"\0")

    def is_ready(self, who) -> bool:
        p = self._path("ready.flag")
        return p.exists() and p.read_bytes()[:1] == b"\1"

    def write_input(self, who, data):
        _atomic_write(self._path("input.bin"), data)

    def read_input(self, who):
        p = self._path("input.bin")
        return p.read_bytes() if p.exists() else None

    def clear_input(self, who):
        self._path("input.bin").unlink(missing_ok=True)

    def write_output(self, who, status, data=b""):
        _atomic_write(self._path("output.bin"), bytes([status]) + data)

    def read_output(self, who):
        p = self._path("output.bin")
        if not p.exists():
            return STATUS_OK, None
        raw = p.read_bytes()
        return raw[0], raw[1:]

    def nw_visible(self) -> list[bytes]:
        return [p.read_bytes() for p in sorted(self.root.iterdir()) if p.is_file()]


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# -- hypervisor / client-side operations -----------------------------------

class Hypervisor:
    """Normal-world page allocator. Tracks which NormalPAS pages are in use."""

    def __init__(self, gpt: GranuleProtectionTable):
        self.gpt = gpt
        self.in_use: set[int] = set()

    def free_pages(self) -> list[int]:
        return [p for p in self.gpt.pages_tagged(PasTag.NORMAL) if p not in self.in_use]

    def allocate(self, n: int) -> list[int]:
        free = self.free_pages()
        if len(free) < n:
            raise OutOfPages(f"need {n} pages, {len(free)} free")
        pages = free[:n]
        self.in_use.update(pages)
        return pages

    def release(self, pages) -> None:
        self.in_use.difference_update(pages)


def client_boot(image: RealmImage, gpt: GranuleProtectionTable,
                hypervisor: Hypervisor | None = None,
                policy: UsagePolicy | None = None) -> RealmDescriptor:
    """Create, populate (in canonical page order) and activate a realm."""
    hyp = hypervisor or Hypervisor(gpt)
    chunks = split_pages(image.payload)
    pages = hyp.allocate(len(chunks))
    realm = rl.create_realm(gpt, image_params(image.image_id), policy)
    for ipa, (page, chunk) in enumerate(zip(pages, chunks)):
        rl.populate(realm, gpt, page, chunk, ipa=ipa)
    hyp.release(pages)  # RealmPAS now; they come back through undelegation
    return rl.activate(realm)


@dataclass
class Session:
    link: Link
    established: bool = False
    nonce: Optional[bytes] = None


@dataclass
class InstalledModel:
    model_id: str
    version: int
    size: int
    pages: list[int]


class RealmRuntime:
    """Software inside the realm: attestation client, model store, inference loop."""

    def __init__(self, realm: RealmDescriptor, gpt: GranuleProtectionTable,
                 hypervisor: Hypervisor, signer: rl.Signer, platform: PlatformClaims):
        self.realm = realm
        self.gpt = gpt
        self.hyp = hypervisor
        self.signer = signer
        self.platform = platform
        self.model: Optional[InstalledModel] = None
        self.announced = False

    def attest(self, nonce: bytes) -> rl.AttestationToken:
        return rl.attest(self.realm, nonce, self.signer, self.platform)

    def install(self, blob: ModelBlob) -> InstalledModel:
        """Write weights straight into freshly delegated realm granules."""
        chunks = split_pages(blob.weights)
        pages = self.hyp.allocate(len(chunks))
        rl.grant_pages(self.realm, self.gpt, pages)
        self.hyp.release(pages)  # no longer NormalPAS; the GPT owns the truth now
        for page, chunk in zip(pages, chunks):
            write_page(self.gpt, REALM, page, chunk.ljust(PAGE_SIZE, b"\0"))
        old, self.model = self.model, InstalledModel(blob.model_id, blob.version,
                                                     blob.size_bytes, pages)
        if old is not None:
            rl.reclaim_pages(self.realm, self.gpt, old.pages)
        return self.model

    def weights(self) -> bytes:
        if self.model is None:
            raise NotReady("no model installed")
        raw = b"".join(read_page(self.gpt, REALM, p) for p in self.model.pages)
        return raw[:self.model.size]


def provider_handshake(session: Session, runtime: RealmRuntime,
                       evidence_hook: Callable | None = None):
    """Steps 3-4. Returns the provider's reply to the evidence.

    ``evidence_hook`` lets a test or the tamper demo rewrite the token the
    normal world forwards.
    """
    if runtime.realm.state is not rl.RealmState.ACTIVE:
        raise rl.NotActive("realm not active")
    reply = session.link.request(Hello())
    session.link.secure()
    if not isinstance(reply, Challenge):
        raise ProtocolError(f"expected Challenge, got {type(reply).__name__}")
    session.nonce = reply.nonce
    token = runtime.attest(reply.nonce)
    if evidence_hook is not None:
        token = evidence_hook(token)
    reply = session.link.request(Evidence(token))
    if isinstance(reply, Error) and reply.code.startswith("attestation:"):
        raise AttestationRejected(RejectReason(reply.code.split(":", 1)[1]))
    if isinstance(reply, Error):
        raise ProtocolError(reply.code)
    session.established = True
    return reply


def provider_deliver_model(session: Session, delivery, runtime: RealmRuntime) -> InstalledModel:
    """Step 5: install the delivered model into realm-only memory."""
    if not session.established:
        raise SessionRequired("model delivery before attestation")
    if not isinstance(delivery, ModelDelivery):
        raise ProtocolError(f"expected ModelDelivery, got {type(delivery).__name__}")
    return runtime.install(delivery.model)


def announce_ready(runtime: RealmRuntime, shared) -> None:
    shared.set_ready(REALM)
    runtime.announced = True


def nw_query(shared, data: bytes) -> None:
    if not shared.is_ready(NORMAL):
        raise NotReady("realm has not announced readiness")
    shared.write_input(NORMAL, data)


def realm_answer(runtime: RealmRuntime, shared, infer: Callable[[bytes, bytes], bytes],
                 now: int = 0) -> bytes:
    """Serve one query from the input slot. On policy exhaustion, reclaim and raise Expired."""
    if not runtime.announced:
        raise NotReady("realm has not announced readiness")
    data = shared.read_input(REALM)
    if data is None:
        raise NotReady("no pending input")
    try:
        rl.record_inference(runtime.realm, now)
    except LimitExceeded as exc:
        shared.clear_input(REALM)
        shared.write_output(REALM, STATUS_EXPIRED)
        shared.set_ready(REALM, False)
        rl.destroy_realm(runtime.realm, runtime.gpt)
        runtime.model = None
        raise Expired(str(exc)) from exc
    out = infer(runtime.weights(), data)
    shared.clear_input(REALM)
    shared.write_output(REALM, STATUS_OK, out)
    return out


def nw_read_output(shared) -> bytes:
    status, data = shared.read_output(NORMAL)
    if status == STATUS_EXPIRED:
        raise Expired("realm reported expiry")
    if data is None:
        raise NotReady("no output yet")
    return data


def realm_check_update(session: Session, runtime: RealmRuntime) -> UpdateReply:
    """Step 8: ask for a newer model and install it if one arrives."""
    if not session.established:
        raise SessionRequired("update query before attestation")
    current = runtime.model
    reply = session.link.request(UpdateQuery(current.model_id, current.version))
    if isinstance(reply, Error):
        raise ProtocolError(reply.code)
    if reply.model is not None:
        runtime.install(reply.model)
    return reply


# -- end-to-end driver -----------------------------------------------------

def default_infer(weights: bytes, data: bytes) -> bytes:
    """Toy classifier: a label derived from the model and the input."""
    label = rl.digest(weights + data)[0] % 1001
    return f"class={label}".encode()


@dataclass
class DemoConfig:
    transport: str = "inproc"
    tamper: Optional[str] = None        # image | token | replay
    max_inferences: Optional[int] = None
    valid_until: Optional[int] = None
    queries: int = 3
    model_bytes: int = 1 << 20
    image_bytes: int = 16 * PAGE_SIZE
    total_pages: int = 1024
    shared_dir: Optional[Path] = None
    update: bool = True
    seed: int = 0


@dataclass
class DemoResult:
    events: list[str]
    outcome: str                       # ok | rejected
    reject_reason: Optional[RejectReason]
    gpt: GranuleProtectionTable
    tap: WireTap
    shared: object
    realm: Optional[RealmDescriptor]
    models: list[ModelBlob]
    nw_memory: list[bytes] = field(default_factory=list)
    snapshots: list[list[bytes]] = field(default_factory=list)

    def step_lines(self) -> list[str]:
        return [e for e in self.events if e.startswith("[step ")]

    def normal_visible(self) -> list[bytes]:
        """Every byte region the normal world can read right now."""
        regions = [data for _, data in self.gpt.readable_by(NORMAL)]
        return regions + self.tap.visible_payloads() + self.shared.nw_visible() + self.nw_memory


def run_demo(cfg: DemoConfig, infer=default_infer, on_step: Callable | None = None) -> DemoResult:
    rng = random.Random(cfg.seed)
    events: list[str] = []

    def emit(line):
        events.append(line)
        log.info(line)
        if on_step is not None:
            on_step(line, result)

    gpt = GranuleProtectionTable(cfg.total_pages, root_pages=8)
    hyp = Hypervisor(gpt)
    tap = WireTap()
    shared = _make_shared(cfg, gpt, hyp)

    image_payload = rng.randbytes(cfg.image_bytes)
    model = ModelBlob("model-a", rng.randbytes(cfg.model_bytes), version=1)
    update = ModelBlob("model-a", rng.randbytes(cfg.model_bytes), version=2)
    rmm_key = rl.Ed25519Signer(rng.randbytes(32))
    platform = PlatformClaims(rl.digest(b"tf-a monitor"), rl.digest(b"tf-rmm"))

    verifier = TrustedVerifier()
    published = verifier.register("realm-ml-v1", image_payload)
    provider = ModelProvider(ProviderExpectations(frozenset({published.published_measurement}),
                                                  platform),
                             rmm_key.verifier(), model,
                             nonce_source=lambda: rng.randbytes(16))

    result = DemoResult(events, "ok", None, gpt, tap, shared, None, [model])
    vlink = make_link(cfg.transport, "verifier", tap, verifier.handle)
    plink = make_link(cfg.transport, "provider", tap, provider.handle)
    try:
        # (1) realm image from the trusted verifier
        reply = vlink.request(FetchImage("realm-ml-v1"))
        if not isinstance(reply, Image):
            raise ProtocolError(f"verifier replied {reply!r}")
        image = reply.image
        result.nw_memory.append(image.payload)
        if cfg.tamper == "image":
            bad = bytearray(image.payload)
            bad[0] ^= 0xFF
            image = RealmImage(image.image_id, bytes(bad), image.published_measurement)
        emit(f"[step 1] fetched image {image.image_id} ({len(image.payload)} bytes)")

        # (2) create, populate, activate
        policy = UsagePolicy(cfg.max_inferences, cfg.valid_until)
        rlm = client_boot(image, gpt, hyp, policy)
        rlm.unprotected_region.update(getattr(shared, "pages", []))
        result.realm = rlm
        runtime = RealmRuntime(rlm, gpt, hyp, rmm_key, platform)
        emit(f"[step 2] realm {rlm.id} active, {len(rlm.granules)} granules, "
             f"measurement {rlm.measurement.hex()[:16]}")

        hook = None
        if cfg.tamper == "token":
            hook = _flip_measurement
        elif cfg.tamper == "replay":
            hook = _replay_hook(plink, runtime)

        # (3)+(4) connect and attest
        session = Session(plink)
        try:
            delivery = provider_handshake(session, runtime, evidence_hook=hook)
        except AttestationRejected as exc:
            emit("[step 3] connected to provider")
            emit(f"[step 4] attestation rejected: {exc.reason.value}")
            rl.destroy_realm(rlm, gpt)
            emit(f"realm {rlm.id} destroyed after rejection")
            result.outcome = "rejected"
            result.reject_reason = exc.reason
            return result
        emit("[step 3] connected to provider")
        emit(f"[step 4] attestation accepted (nonce {session.nonce.hex()})")

        # (5) model delivery
        installed = provider_deliver_model(session, delivery, runtime)
        emit(f"[step 5] model {installed.model_id} v{installed.version} installed "
             f"({installed.size} bytes in {len(installed.pages)} granules)")

        # (6) readiness
        announce_ready(runtime, shared)
        emit("[step 6] realm announced readiness")

        # (7) inference queries
        expired = False
        answered = 0
        for i in range(cfg.queries):
            data = f"input-{i}".encode()
            result.nw_memory.append(data)
            nw_query(shared, data)
            try:
                realm_answer(runtime, shared, infer, now=i)
            except Expired:
                expired = True
            try:
                out = nw_read_output(shared)
                result.nw_memory.append(out)
                answered += 1
                emit(f"  query {i + 1}: {out.decode(errors='replace')}")
            except Expired:
                emit(f"  query {i + 1}: Expired")
                emit(f"realm {rlm.id} reclaimed: {gpt.undelegations} pages scrubbed")
                break
        summary = f"[step 7] {answered} of {cfg.queries} queries answered"
        emit(summary + (", usage policy expired" if expired else ""))

        # (8) update check
        if expired or rlm.state is not rl.RealmState.ACTIVE:
            emit("[step 8] update check skipped: realm terminated")
        elif cfg.update:
            provider.publish(update)
            result.models.append(update)
            reply = realm_check_update(session, runtime)
            if reply.model is not None:
                emit(f"[step 8] updated to v{reply.model.version}")
            else:
                emit("[step 8] model up to date")
        else:
            emit("[step 8] model up to date")
        return result
    finally:
        vlink.close()
        plink.close()


def _make_shared(cfg, gpt, hyp):
    if cfg.shared_dir is not None:
        return DirectorySharedFs(cfg.shared_dir)
    slot = 2
    return SharedFs(gpt, hyp.allocate(1 + 2 * slot), slot)


def _flip_measurement(token):
    m = bytearray(token.measurement)
    m[0] ^= 0x01
    return rl.AttestationToken(bytes(m), token.nonce, token.platform, token.signature)


def _replay_hook(link, runtime):
    """Capture evidence for an earlier challenge, then present it against a fresh one."""
    challenge = link.request(Hello())  # this connection drops before evidence is sent
    stale = runtime.attest(challenge.nonce)
    return lambda token: stale


__all__ = [
    "CcaError", "DemoConfig", "DemoResult", "run_demo", "TrustedVerifier", "ModelProvider",
    "ProviderExpectations", "SharedFs", "DirectorySharedFs", "Hypervisor", "client_boot",
    "provider_handshake", "provider_deliver_model", "nw_query", "realm_answer",
    "nw_read_output", "realm_check_update", "Session", "RealmRuntime",
]
