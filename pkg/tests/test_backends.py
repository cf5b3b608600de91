"""The two interchangeable backends: the exact-semantics mock and the real
lattice backend, checked against each other and against the plain
interpreter on seeded random programs."""

import random

import numpy as np
import pytest

from vhe import bfv
from vhe.circuit import eval_he, eval_plain, random_program, required_rotation_steps
from vhe.errors import (
    DecryptionFailureError,
    KeyMaterialError,
    LayoutError,
    ParameterError,
)
from vhe.mock import MockBackend
from vhe.params import make_params, preset

PARAMS = preset("mock64")  # n=64 with a real 2-prime chain: fast for both backends
T = PARAMS.t
N = PARAMS.n


def make_real(params=PARAMS, steps=(1, -1, 2), seed=0):
    keys = bfv.keygen(params, rotation_steps=steps, rng=np.random.default_rng(seed))
    return bfv.BfvBackend(params, keys, rng=np.random.default_rng(seed + 1))


@pytest.fixture(scope="module")
def real():
    return make_real()


@pytest.fixture()
def mock():
    return MockBackend(PARAMS, rng=random.Random(3))


def rand_slots(rng):
    return [rng.randrange(T) for _ in range(N)]


# ---------------------------------------------------------------------------
# mock backend basics
# ---------------------------------------------------------------------------


def test_mock_roundtrip_and_reduction(mock):
    vals = list(range(N))
    assert mock.decrypt(mock.encrypt(vals)) == vals
    assert mock.decrypt(mock.encrypt([T + 5] * N)) == [5] * N
    with pytest.raises(ParameterError):
        mock.encrypt([1] * (N - 1))


def test_mock_fresh_encryptions_differ(mock):
    a = mock.encrypt([7] * N)
    b = mock.encrypt([7] * N)
    assert a != b  # nonce separates equal plaintexts
    assert mock.decrypt(a) == mock.decrypt(b)


def test_mock_depth_limit_raises_at_decrypt():
    mock = MockBackend(PARAMS, depth_limit=2, rng=random.Random(4))
    ct = mock.encrypt([2] * N)
    for _ in range(3):
        ct = mock.mul(ct, ct)
    with pytest.raises(DecryptionFailureError):
        mock.decrypt(ct)


def test_mock_ops_match_plain_semantics(mock):
    rng = random.Random(5)
    a, b = rand_slots(rng), rand_slots(rng)
    ca, cb = mock.encrypt(a), mock.encrypt(b)
    assert mock.decrypt(mock.add(ca, cb)) == [(x + y) % T for x, y in zip(a, b)]
    assert mock.decrypt(mock.sub(ca, cb)) == [(x - y) % T for x, y in zip(a, b)]
    assert mock.decrypt(mock.mul(ca, cb)) == [x * y % T for x, y in zip(a, b)]
    assert mock.decrypt(mock.neg(ca)) == [-x % T for x in a]
    k = rand_slots(rng)
    assert mock.decrypt(mock.mul_plain(ca, k)) == [x * y % T for x, y in zip(a, k)]
    row = N // 2
    rot = mock.decrypt(mock.rotate(ca, 5))
    assert rot[:row] == a[5:row] + a[:5]
    assert mock.decrypt(mock.row_swap(ca)) == a[row:] + a[:row]
    isum = mock.decrypt(mock.inner_sum(ca, 8))
    assert isum[0:8] == [sum(a[0:8]) % T] * 8


# ---------------------------------------------------------------------------
# real backend basics
# ---------------------------------------------------------------------------


def test_real_roundtrip(real):
    rng = random.Random(6)
    vals = rand_slots(rng)
    assert real.decrypt(real.encrypt(vals)) == vals
    assert real.decrypt(real.encrypt_zero()) == [0] * N


def test_real_fresh_encryptions_differ(real):
    a, b = real.encrypt([9] * N), real.encrypt([9] * N)
    assert not np.array_equal(a.polys[0].mat, b.polys[0].mat)
    assert real.decrypt(a) == real.decrypt(b) == [9] * N


def test_real_linear_ops(real):
    rng = random.Random(7)
    a, b = rand_slots(rng), rand_slots(rng)
    ca, cb = real.encrypt(a), real.encrypt(b)
    assert real.decrypt(real.add(ca, cb)) == [(x + y) % T for x, y in zip(a, b)]
    assert real.decrypt(real.sub(ca, cb)) == [(x - y) % T for x, y in zip(a, b)]
    assert real.decrypt(real.neg(ca)) == [-x % T for x in a]
    k = rand_slots(rng)
    assert real.decrypt(real.mul_plain(ca, k)) == [x * y % T for x, y in zip(a, k)]


def test_real_mul_and_relinearization_identity(real):
    rng = random.Random(8)
    a, b = rand_slots(rng), rand_slots(rng)
    ca, cb = real.encrypt(a), real.encrypt(b)
    expected = [x * y % T for x, y in zip(a, b)]
    raw = real.mul_no_relin(ca, cb)
    assert raw.degree == 3
    assert real.decrypt(raw) == expected          # degree-3 decryption
    rel = real.relinearize(raw)
    assert rel.degree == 2
    assert real.decrypt(rel) == expected          # key-switched back to (c0, c1)
    assert real.decrypt(real.mul(ca, cb)) == expected


def test_real_rotations(real):
    rng = random.Random(9)
    a = rand_slots(rng)
    ca = real.encrypt(a)
    row = N // 2
    left = real.decrypt(real.rotate(ca, 1))
    assert left == a[1:row] + a[:1] + a[row + 1 :] + a[row : row + 1]
    right = real.decrypt(real.rotate(ca, -1))
    assert right[:row] == a[row - 1 : row] + a[: row - 1]
    assert real.decrypt(real.row_swap(ca)) == a[row:] + a[:row]
    assert real.decrypt(real.rotate(ca, 0)) == a  # identity, no key needed


def test_real_missing_rotation_key(real):
    ca = real.encrypt([1] * N)
    with pytest.raises(KeyMaterialError):
        real.rotate(ca, 7)  # only ±1, 2 were generated


def _inner_sum_steps(block, stride):
    """± power-of-two step ladder inner_sum(block, stride) can touch."""
    steps = set()
    u = 1
    while u < block:
        steps.update((u * stride, -u * stride))
        u *= 2
    return steps


def test_real_inner_sum_matches_mock(real):
    rng = random.Random(10)
    mock = MockBackend(PARAMS, rng=rng)
    a = rand_slots(rng)
    for block in (1, 2):
        want = mock.decrypt(mock.inner_sum(mock.encrypt(a), block))
        got = real.decrypt(real.inner_sum(real.encrypt(a), block))
        assert got == want, f"block {block}"


def test_real_inner_sum_full_and_strided():
    rng = random.Random(11)
    a = rand_slots(rng)
    mock = MockBackend(PARAMS, rng=rng)
    row = N // 2
    cases = ((row, 1), (4, 1), (4, 2), (2, 8))
    steps = set()
    for block, stride in cases:
        steps |= _inner_sum_steps(block, stride)
    backend = make_real(steps=sorted(steps), seed=5)
    for block, stride in cases:
        want = mock.decrypt(mock.inner_sum(mock.encrypt(a), block, stride=stride))
        got = backend.decrypt(backend.inner_sum(backend.encrypt(a), block, stride=stride))
        assert got == want, f"block {block} stride {stride}"


def test_real_noise_budget_decreases(real):
    rng = random.Random(12)
    ca = real.encrypt(rand_slots(rng))
    fresh = real.noise_budget(ca)
    prod = real.mul(ca, ca)
    assert real.noise_budget(prod) < fresh
    assert fresh > 20


def test_real_noise_overflow_detected():
    params = make_params(n=64, t_bits=16, chain_len=1, name="tiny")
    backend = make_real(params, steps=(), seed=13)
    ct = backend.encrypt([3] * 64)
    with pytest.raises(DecryptionFailureError):
        # one multiplication blows a single 29-bit prime's budget
        backend.decrypt(backend.mul(ct, ct))


def test_real_decrypt_requires_secret(real):
    pub = bfv.BfvBackend(PARAMS, real.keys.public(), rng=np.random.default_rng(14))
    ct = pub.encrypt([5] * N)
    with pytest.raises(KeyMaterialError):
        pub.decrypt(ct)
    # but evaluation works with public material only
    assert real.decrypt(pub.mul(ct, ct)) == [25] * N


def test_big_plaintext_modulus_paths():
    """40-bit t exercises the large-modulus encode path end to end."""
    params = preset("mock64_wide")
    backend = make_real(params, steps=(1,), seed=15)
    rng = random.Random(16)
    vals = [rng.randrange(params.t) for _ in range(params.n)]
    ct = backend.encrypt(vals)
    assert backend.decrypt(ct) == vals
    other = [rng.randrange(params.t) for _ in range(params.n)]
    prod = backend.mul(ct, backend.encrypt(other))
    assert backend.decrypt(prod) == [x * y % params.t for x, y in zip(vals, other)]


# ---------------------------------------------------------------------------
# the differential: real vs mock vs plain on random programs
# ---------------------------------------------------------------------------


def test_random_programs_agree_across_backends():
    rng = random.Random(17)
    programs = [random_program(rng, width=N, t=T, max_depth=2) for _ in range(8)]
    steps = set()
    needs_swap = False
    for p in programs:
        s, sw = required_rotation_steps(p, stride=1, n_slots=N)
        steps |= s
        needs_swap = needs_swap or sw
    keys = bfv.keygen(PARAMS, rotation_steps=sorted(steps), rng=np.random.default_rng(18))
    real = bfv.BfvBackend(PARAMS, keys, rng=np.random.default_rng(19))
    mock = MockBackend(PARAMS, rng=random.Random(20))
    for p in programs:
        ins = [rand_slots(rng) for _ in range(p.num_inputs)]
        want = eval_plain(p, ins, T)
        got_mock = mock.decrypt(eval_he(p, [mock.encrypt(v) for v in ins], mock))
        got_real = real.decrypt(eval_he(p, [real.encrypt(v) for v in ins], real))
        assert got_mock == want
        assert got_real == want


def test_backend_tags():
    assert MockBackend(PARAMS, rng=random.Random(0)).backend_tag == "mock"
    assert make_real().backend_tag == "bfv"
