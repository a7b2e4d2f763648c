import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccabench import realm as rl
from ccabench.errors import InvalidTransition, LimitExceeded, NotActive, RealmSealed
from ccabench.world import PAGE_SIZE, GranuleProtectionTable, PasTag, SecurityState, read_page

PLATFORM = rl.PlatformClaims(rl.digest(b"monitor"), rl.digest(b"rmm"))
NONCE = bytes(range(16))


def _realm(pages=(b"a", b"b"), policy=None, gpt=None):
    gpt = gpt or GranuleProtectionTable(16)
    r = rl.create_realm(gpt, b"params", policy)
    for i, content in enumerate(pages):
        rl.populate(r, gpt, i, content, ipa=i)
    rl.activate(r)
    return r, gpt


def test_measurement_matches_replay():
    r, _ = _realm()
    assert r.measurement == rl.measure(b"params", [(0, b"a"), (1, b"b")])


def test_measurement_order_and_content_sensitive():
    a = rl.measure(b"p", [(0, b"x"), (1, b"y")])
    assert a != rl.measure(b"p", [(1, b"y"), (0, b"x")])
    assert a != rl.measure(b"p", [(0, b"x"), (1, b"z")])
    assert a != rl.measure(b"q", [(0, b"x"), (1, b"y")])
    assert rl.measure(b"p", []) == rl.digest(b"p")


def test_populated_pages_hidden_from_normal_world():
    r, gpt = _realm()
    for page in r.granules:
        assert gpt.pas(page) is PasTag.REALM
    assert read_page(gpt, SecurityState.REALM, 0).startswith(b"a")


def test_population_closed_after_activation():
    r, gpt = _realm()
    with pytest.raises(RealmSealed):
        rl.populate(r, gpt, 5, b"late")
    with pytest.raises(InvalidTransition):
        rl.activate(r)


def test_state_machine():
    gpt = GranuleProtectionTable(4)
    r = rl.create_realm(gpt, b"p")
    rl.destroy_realm(r, gpt)  # New -> Terminated
    assert r.history == [rl.RealmState.NEW, rl.RealmState.TERMINATED]
    with pytest.raises(InvalidTransition):
        rl.destroy_realm(r, gpt)
    with pytest.raises(InvalidTransition):
        rl.activate(r)


def test_destroy_scrubs_and_returns_pages():
    r, gpt = _realm([b"\xff" * PAGE_SIZE] * 3)
    rl.grant_pages(r, gpt, [8, 9])
    rl.destroy_realm(r, gpt)
    for page in (0, 1, 2, 8, 9):
        assert gpt.pas(page) is PasTag.NORMAL
        assert read_page(gpt, SecurityState.NORMAL, page) == bytes(PAGE_SIZE)
    assert r.state is rl.RealmState.TERMINATED


def test_grant_requires_active():
    gpt = GranuleProtectionTable(4)
    r = rl.create_realm(gpt, b"p")
    with pytest.raises(NotActive):
        rl.grant_pages(r, gpt, [1])


@pytest.mark.parametrize("n", [0, 1, 2, 10])
def test_inference_limit(n):
    r, _ = _realm(policy=rl.UsagePolicy(max_inferences=n))
    for _ in range(n):
        rl.record_inference(r)
    with pytest.raises(LimitExceeded):
        rl.record_inference(r)


def test_validity_window():
    r, _ = _realm(policy=rl.UsagePolicy(valid_until=5))
    rl.record_inference(r, now=5)
    with pytest.raises(LimitExceeded):
        rl.record_inference(r, now=6)


def test_attest_and_verify():
    r, _ = _realm()
    signer = rl.Ed25519Signer(b"k" * 32)
    tok = rl.attest(r, NONCE, signer, PLATFORM)
    v = signer.verifier()
    assert rl.verify_token(tok, r.measurement, PLATFORM, NONCE, v)
    assert rl.AttestationToken.from_bytes(tok.to_bytes()) == tok


def test_verify_reasons_in_order():
    r, _ = _realm()
    signer = rl.Ed25519Signer(b"k" * 32)
    v = signer.verifier()
    tok = rl.attest(r, NONCE, signer, PLATFORM)
    wrong_m = rl.digest(b"other")
    other_platform = rl.PlatformClaims(rl.digest(b"m2"), rl.digest(b"r2"))
    R = rl.RejectReason
    assert rl.verify_token(tok, wrong_m, PLATFORM, NONCE, v).reason is R.MEASUREMENT_MISMATCH
    assert rl.verify_token(tok, r.measurement, other_platform, NONCE, v).reason is R.PLATFORM_MISMATCH
    assert rl.verify_token(tok, r.measurement, PLATFORM, bytes(16), v).reason is R.STALE_NONCE
    forged = rl.AttestationToken(tok.measurement, tok.nonce, tok.platform, bytes(64))
    # signature is checked before anything else
    assert rl.verify_token(forged, wrong_m, other_platform, bytes(16), v).reason is R.BAD_SIGNATURE
    assert rl.verify_serialized(b"\x00\x01", r.measurement, PLATFORM, NONCE, v).reason is R.MALFORMED


def test_hmac_signer_alternative():
    r, _ = _realm()
    signer = rl.HmacSigner(b"shared")
    tok = rl.attest(r, NONCE, signer, PLATFORM)
    assert rl.verify_token(tok, r.measurement, PLATFORM, NONCE, signer.verifier())
    assert not rl.verify_token(tok, r.measurement, PLATFORM, NONCE, rl.HmacSigner(b"other"))


def test_attest_requires_active_realm():
    gpt = GranuleProtectionTable(4)
    r = rl.create_realm(gpt, b"p")
    with pytest.raises(NotActive):
        rl.attest(r, NONCE, rl.HmacSigner(b"k"), PLATFORM)


def test_decode_rejects_trailing_bytes():
    with pytest.raises(ValueError):
        rl.decode_fields(b"\x00\x00\x00\x01a!", 1)


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.binary(min_size=16, max_size=16),
       st.binary(min_size=1, max_size=128))
def test_token_round_trip(measurement, nonce, sig):
    tok = rl.AttestationToken(measurement, nonce, PLATFORM, sig)
    assert rl.AttestationToken.from_bytes(tok.to_bytes()) == tok
