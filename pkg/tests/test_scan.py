import random

from hypothesis import given, settings
from hypothesis import strategies as st

from ccabench.scan import find_leaks, naive_contains_window


def test_detects_planted_window():
    rnd = random.Random(1)
    secret = rnd.randbytes(1 << 16)
    region = rnd.randbytes(5000) + secret[777:777 + 64] + rnd.randbytes(100)
    leaks = find_leaks(secret, [b"", region])
    assert len(leaks) == 1
    leak = leaks[0]
    assert (leak.region, leak.offset, leak.secret_offset, leak.length) == (1, 5000, 777, 64)


def test_ignores_short_fragments():
    rnd = random.Random(2)
    secret = rnd.randbytes(4096)
    region = secret[100:163] + b"\0" + secret[163:226]  # two 63-byte pieces
    assert find_leaks(secret, [region]) == []


def test_windows_do_not_span_regions():
    rnd = random.Random(3)
    secret = rnd.randbytes(4096)
    assert find_leaks(secret, [secret[:40], secret[40:80]]) == []


def test_whole_secret_found():
    rnd = random.Random(4)
    secret = rnd.randbytes(1 << 20)
    leaks = find_leaks(secret, [b"xx" + secret + b"yy"])
    assert [(l.offset, l.secret_offset, l.length) for l in leaks] == [(2, 0, len(secret))]


@settings(max_examples=300, deadline=None)
@given(st.binary(min_size=64, max_size=600), st.binary(max_size=300), st.binary(max_size=300),
       st.integers(0, 600), st.integers(0, 200))
def test_agrees_with_naive_scan(secret, pre, post, start, length):
    piece = secret[start:start + length]
    region = pre + piece + post
    assert bool(find_leaks(secret, [region])) == naive_contains_window(secret, region)
