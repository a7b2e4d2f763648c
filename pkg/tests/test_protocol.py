import pytest

from ccabench import realm as rl
from ccabench import protocol as pr
from ccabench.errors import Expired, NotReady, OutOfPages, SessionRequired
from ccabench.scan import scan_secrets
from ccabench.wire import Error, Evidence, Hello, ModelBlob, UpdateQuery
from ccabench.world import PAGE_SIZE, GranuleProtectionTable, PasTag, SecurityState


def small(**kw):
    kw.setdefault("model_bytes", 64 * 1024)
    kw.setdefault("total_pages", 256)
    return pr.DemoConfig(**kw)


@pytest.mark.parametrize("transport", ["inproc", "socket"])
def test_happy_path(transport):
    res = pr.run_demo(small(transport=transport))
    assert res.outcome == "ok"
    steps = res.step_lines()
    assert [s.split("]")[0] for s in steps] == [f"[step {i}" for i in range(1, 9)]
    assert "updated to v2" in steps[-1]
    kinds = res.tap.kinds("provider")
    assert kinds[:2] == ["Hello", "Challenge"]
    assert "ModelDelivery" in kinds
    # nothing after the Hello exchange is readable on the wire
    assert all(r.payload is None for r in res.tap.records
               if r.link == "provider" and r.kind not in ("Hello", "Challenge"))


@pytest.mark.parametrize("transport", ["inproc", "socket"])
@pytest.mark.parametrize("mode,reason", [
    ("image", rl.RejectReason.MEASUREMENT_MISMATCH),
    ("token", rl.RejectReason.BAD_SIGNATURE),
    ("replay", rl.RejectReason.STALE_NONCE),
])
def test_tamper_rejected(transport, mode, reason):
    res = pr.run_demo(small(transport=transport, tamper=mode))
    assert res.outcome == "rejected"
    assert res.reject_reason is reason
    assert "ModelDelivery" not in res.tap.kinds()
    assert res.realm.state is rl.RealmState.TERMINATED
    assert res.gpt.census()[PasTag.REALM] == 0


def test_same_results_over_both_transports():
    a = pr.run_demo(small(transport="inproc", seed=4))
    b = pr.run_demo(small(transport="socket", seed=4))
    assert a.step_lines() == b.step_lines()


@pytest.mark.parametrize("n", [1, 2, 10])
def test_policy_expiry_reclaims(n):
    res = pr.run_demo(small(max_inferences=n, queries=n + 1))
    assert any(f"query {n + 1}: Expired" in e for e in res.events)
    assert any("reclaimed" in e for e in res.events)
    gpt = res.gpt
    assert res.realm.state is rl.RealmState.TERMINATED
    assert gpt.census()[PasTag.REALM] == 0
    for page, data in gpt.readable_by(SecurityState.NORMAL):
        if gpt.granule(page).scrubbed:
            assert data == bytes(PAGE_SIZE)


def test_validity_window_expiry():
    res = pr.run_demo(small(valid_until=0, queries=2))
    assert any("query 2: Expired" in e for e in res.events)


def test_directory_shared_fs(tmp_path):
    res = pr.run_demo(small(shared_dir=tmp_path / "shared"))
    assert res.outcome == "ok"
    out = (tmp_path / "shared" / "output.bin").read_bytes()
    assert out[0] == pr.STATUS_OK and out[1:].startswith(b"class=")


def test_no_model_bytes_reach_normal_world():
    res = pr.run_demo(small(model_bytes=256 * 1024, seed=11))
    assert scan_secrets([m.weights for m in res.models], res.normal_visible()) == []


def test_provider_rejects_out_of_order():
    signer = rl.Ed25519Signer(bytes(32))
    platform = rl.PlatformClaims(bytes(32), bytes(32))
    p = pr.ModelProvider(pr.ProviderExpectations(frozenset({bytes(32)}), platform),
                         signer.verifier(), ModelBlob("m", b"w"))
    assert p.handle(UpdateQuery("m", 1)) == Error("session-required")
    tok = rl.AttestationToken(bytes(32), bytes(16), platform, b"sig")
    assert p.handle(Evidence(tok)) == Error("out-of-order")
    assert p.deliveries == 0
    ch = p.handle(Hello())
    assert len(ch.nonce) == 16


def test_step_preconditions():
    gpt = GranuleProtectionTable(64)
    hyp = pr.Hypervisor(gpt)
    shared = pr.SharedFs(gpt, hyp.allocate(5), 2)
    with pytest.raises(NotReady):
        pr.nw_query(shared, b"x")
    v = pr.TrustedVerifier()
    image = v.register("img", b"\x01" * (2 * PAGE_SIZE))
    realm = pr.client_boot(image, gpt, hyp)
    assert realm.measurement == image.published_measurement
    runtime = pr.RealmRuntime(realm, gpt, hyp, rl.HmacSigner(b"k"),
                              rl.PlatformClaims(bytes(32), bytes(32)))
    session = pr.Session(link=None)
    with pytest.raises(SessionRequired):
        pr.provider_deliver_model(session, None, runtime)
    with pytest.raises(NotReady):
        pr.realm_answer(runtime, shared, pr.default_infer)
    with pytest.raises(OutOfPages):
        hyp.allocate(10_000)


def test_expired_status_visible_to_normal_world():
    gpt = GranuleProtectionTable(64)
    hyp = pr.Hypervisor(gpt)
    shared = pr.SharedFs(gpt, hyp.allocate(5), 2)
    image = pr.TrustedVerifier().register("img", b"\x02" * PAGE_SIZE)
    realm = pr.client_boot(image, gpt, hyp, rl.UsagePolicy(max_inferences=0))
    runtime = pr.RealmRuntime(realm, gpt, hyp, rl.HmacSigner(b"k"),
                              rl.PlatformClaims(bytes(32), bytes(32)))
    runtime.install(ModelBlob("m", b"w" * 100))
    pr.announce_ready(runtime, shared)
    pr.nw_query(shared, b"q")
    with pytest.raises(Expired):
        pr.realm_answer(runtime, shared, pr.default_infer)
    with pytest.raises(Expired):
        pr.nw_read_output(shared)
    assert not shared.is_ready(SecurityState.NORMAL)
