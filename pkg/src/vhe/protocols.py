"""Interactive sessions: packed proofs and re-quadratization.

Both protocols run over a tiny framed message layer (u32 length ‖ u8 tag ‖
payload) that works identically over an in-memory channel pair (tests,
single-process demos) and a TCP socket (the serve/connect commands).
Every endpoint records its own transcript, so tests can diff what a
client sent between honest and tampered runs.

Packed proof (PP): instead of shipping all d+1 response components, the
cloud sends c_0, receives a random evaluation point δ and a packing nonce
β, and returns one ciphertext m2 whose slots carry w_i = Y_i(δ) — each
component's slot-polynomial evaluated at δ — at slot i, plus the β-combined
sum H = Σ β^i·w_i at slot d+1.  The verifier checks H, w_0 against the
claimed data, and Σ w_i α^i against the challenge polynomial at δ.  Two
ciphertexts cross the wire cloud→client regardless of degree.

Re-quadratization (ReQ): whenever a product would push a stored tuple past
degree 2, the cloud sends the two high components (y_3, y_4), the client
returns blinded replacements folded into components 1 and 2, and the
verification offset picks up α·r̄ for that gate.  Four ciphertexts cross
the wire per round; component 0 — the data — is never touched.
"""

from __future__ import annotations

import queue
import random
import secrets as _secrets
import socket
import struct
import threading

from .circuit import Program, eval_challenge_pe
from .errors import ParameterError, ProtocolError, StructureError
from .pe import PeAuth, PeSecret, degree_schedule, final_offset, offset_walk
from .ring import slot_poly_eval
from .serialize import load_ciphertext, save_ciphertext

TAG_PP_RESULT = 0x01
TAG_PP_CHALLENGE = 0x02
TAG_PP_RESPONSE = 0x03
TAG_REQ_HIGH_TERMS = 0x10
TAG_REQ_BLINDED = 0x11
TAG_RESULT = 0x20  # plain result shipping (no interactive compression)

_CT_TAGS = (
    TAG_PP_RESULT,
    TAG_PP_RESPONSE,
    TAG_REQ_HIGH_TERMS,
    TAG_REQ_BLINDED,
    TAG_RESULT,
)

TAG_NAMES = {
    TAG_PP_RESULT: "pp-result",
    TAG_PP_CHALLENGE: "pp-challenge",
    TAG_PP_RESPONSE: "pp-response",
    TAG_REQ_HIGH_TERMS: "req-high-terms",
    TAG_REQ_BLINDED: "req-blinded",
    TAG_RESULT: "result",
}


def pack_cts(cts) -> bytes:
    out = bytearray(struct.pack("<B", len(cts)))
    for ct in cts:
        out += save_ciphertext(ct)
    return bytes(out)


def unpack_cts(payload: bytes):
    (count,) = struct.unpack_from("<B", payload, 0)
    off = 1
    cts = []
    for _ in range(count):
        ct, off = load_ciphertext(payload, off)
        cts.append(ct)
    if off != len(payload):
        raise ProtocolError("trailing bytes after ciphertexts")
    return cts


def message_ct_count(tag: int, payload: bytes) -> int:
    """Ciphertexts carried by one message (0 for scalar-only messages)."""
    return payload[0] if tag in _CT_TAGS and payload else 0


# ---------------------------------------------------------------------------
# endpoints
# ---------------------------------------------------------------------------


class Transcript:
    """Everything one endpoint sent and received, in order."""

    def __init__(self):
        self.sent: list[tuple[int, bytes]] = []
        self.received: list[tuple[int, bytes]] = []

    def cts_sent(self) -> int:
        return sum(message_ct_count(t, p) for t, p in self.sent)

    def cts_received(self) -> int:
        return sum(message_ct_count(t, p) for t, p in self.received)

    def sent_bytes(self) -> bytes:
        out = bytearray()
        for tag, payload in self.sent:
            out += struct.pack("<IB", 1 + len(payload), tag) + payload
        return bytes(out)


class _QueueEndpoint:
    """One side of an in-memory channel pair."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float):
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout
        self._closed = False
        self.transcript = Transcript()

    def send(self, tag: int, payload: bytes):
        if self._closed:
            raise ProtocolError("channel closed")
        self.transcript.sent.append((tag, bytes(payload)))
        self._outbox.put((tag, bytes(payload)))

    def recv(self):
        try:
            tag, payload = self._inbox.get(timeout=self._timeout)
        except queue.Empty:
            raise ProtocolError("timed out waiting for a message") from None
        if tag is None:
            raise ProtocolError("peer closed the channel")
        self.transcript.received.append((tag, payload))
        return tag, payload

    def close(self):
        if not self._closed:
            self._closed = True
            self._outbox.put((None, b""))


def memory_channel(timeout: float = 60.0):
    """A connected endpoint pair sharing two queues."""
    q_ab: queue.Queue = queue.Queue()
    q_ba: queue.Queue = queue.Queue()
    a = _QueueEndpoint(q_ba, q_ab, timeout)
    b = _QueueEndpoint(q_ab, q_ba, timeout)
    return a, b


class TcpEndpoint:
    """Framed messages over a connected socket; same interface as above."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self.transcript = Transcript()

    def send(self, tag: int, payload: bytes):
        self.transcript.sent.append((tag, bytes(payload)))
        self._sock.sendall(struct.pack("<IB", 1 + len(payload), tag) + payload)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise ProtocolError("connection closed mid-message")
            buf += chunk
        return bytes(buf)

    def recv(self):
        (length,) = struct.unpack("<I", self._read_exact(4))
        if length < 1:
            raise ProtocolError("empty frame")
        tag = self._read_exact(1)[0]
        payload = self._read_exact(length - 1)
        self.transcript.received.append((tag, payload))
        return tag, payload

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def tcp_listen(host: str, port: int, ready=None):
    """Accept one connection; returns (endpoint, bound port).

    `ready`, if given, is called with the bound port once the socket is
    listening but before this blocks in accept — lets a caller on another
    thread connect to an ephemeral port.
    """
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    bound = srv.getsockname()[1]
    if ready is not None:
        ready(bound)
    conn, _ = srv.accept()
    srv.close()
    return TcpEndpoint(conn), bound


def tcp_connect(host: str, port: int, timeout: float = 30.0) -> TcpEndpoint:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    return TcpEndpoint(sock)


def run_session(cloud_fn, client_fn):
    """Drive a cloud function (worker thread) against a client function.

    Returns (cloud result, client result); exceptions on either side
    propagate after the channel is torn down.
    """
    cloud_ep, client_ep = memory_channel()
    box: dict = {}

    def _run():
        try:
            box["result"] = cloud_fn(cloud_ep)
        except BaseException as exc:  # surfaced in the caller below
            box["error"] = exc
        finally:
            cloud_ep.close()

    worker = threading.Thread(target=_run, daemon=True)
    worker.start()
    try:
        client_result = client_fn(client_ep)
    finally:
        client_ep.close()
        worker.join()
    if "error" in box:
        raise box["error"]
    return box.get("result"), client_result


# ---------------------------------------------------------------------------
# packed proof
# ---------------------------------------------------------------------------


def pp_required_steps(n: int):
    """Rotation steps the packing needs: the power-of-two ladder of a row."""
    row = n // 2
    return {1 << u for u in range(row.bit_length() - 1)}


def pp_prove(backend, result: PeAuth, endpoint):
    """Cloud side: send c_0, take the challenge, return one packed response."""
    params = backend.params
    n, t = params.n, params.t
    row = n // 2
    d = result.degree
    if d + 2 > n:
        raise ParameterError(f"degree {d} does not fit the packing layout")
    endpoint.send(TAG_PP_RESULT, pack_cts([result.cts[0]]))
    tag, payload = endpoint.recv()
    if tag != TAG_PP_CHALLENGE:
        raise ProtocolError(
            f"expected the challenge, got {TAG_NAMES.get(tag, tag)}; aborting"
        )
    delta, beta = struct.unpack("<QQ", payload)
    pows = [pow(delta, j, t) for j in range(n)]
    acc = None
    for i, c in enumerate(result.cts):
        x = backend.mul_plain(c, pows)
        x = backend.inner_sum(x, row)
        x = backend.add(x, backend.row_swap(x))
        mask = [0] * n
        mask[i] = 1
        mask[d + 1] = pow(beta, i, t)
        x = backend.mul_plain(x, mask)
        acc = x if acc is None else backend.add(acc, x)
    endpoint.send(TAG_PP_RESPONSE, pack_cts([acc]))


def pp_verify(
    secret: PeSecret,
    backend,
    program: Program,
    endpoint,
    offset=None,
    rng: random.Random | None = None,
    reason: list | None = None,
    used_reducer: bool = False,
):
    """Client side: challenge at a random δ, check the packed response.

    Returns (accepted, claimed result slots).  The session aborts with
    ProtocolError if the cloud deviates from the message order — in
    particular if it asks for the challenge before committing to c_0.
    """

    def fail(msg: str):
        if reason is not None:
            reason.append(msg)
        return False, m

    t = secret.params.t
    rnd = rng if rng is not None else random.Random(_secrets.randbits(128))
    tag, payload = endpoint.recv()
    if tag != TAG_PP_RESULT:
        raise ProtocolError(
            "protocol order violated: expected the result commitment first, "
            f"got {TAG_NAMES.get(tag, tag)}; session aborted"
        )
    (m1,) = unpack_cts(payload)
    m = backend.decrypt(m1)
    delta = rnd.randrange(t)
    beta = rnd.randrange(t)
    endpoint.send(TAG_PP_CHALLENGE, struct.pack("<QQ", delta, beta))
    tag, payload = endpoint.recv()
    if tag != TAG_PP_RESPONSE:
        raise ProtocolError(
            f"expected the packed response, got {TAG_NAMES.get(tag, tag)}"
        )
    (m2,) = unpack_cts(payload)
    w = backend.decrypt(m2)
    d, _ = degree_schedule(program, use_reducer=used_reducer)
    ws = w[: d + 1]
    packed_sum = w[d + 1]
    if packed_sum != sum(pow(beta, i, t) * wi for i, wi in enumerate(ws)) % t:
        return fail("packed β-combination check failed")
    if ws[0] != slot_poly_eval(m, delta, t):
        return fail("data component does not match the committed result")
    rho = eval_challenge_pe(program, secret.key, t)
    if offset is not None:
        rho = [(x + int(o)) % t for x, o in zip(rho, offset)]
    lhs = sum(pow(secret.alpha, i, t) * wi for i, wi in enumerate(ws)) % t
    if lhs != slot_poly_eval(rho, delta, t):
        return fail("response identity fails at the challenge point")
    return True, m


# ---------------------------------------------------------------------------
# re-quadratization
# ---------------------------------------------------------------------------


class ReqCloudSession:
    """Evaluator-side hook: ships high components out, folds blinds back in.

    Plugs into pe_eval as its `reducer`; the at-rest cap of 2 means any
    product of stored tuples reaches degree at most 4 before reduction.
    """

    cap = 2

    def __init__(self, backend, endpoint):
        self.backend = backend
        self.endpoint = endpoint
        self.rounds = 0

    def reduce(self, comps: tuple, gate_idx: int) -> tuple:
        b = self.backend
        d = len(comps) - 1
        if d not in (3, 4):
            raise StructureError(
                f"re-quadratization expects degree 3 or 4, got {d}"
            )
        c3 = comps[3]
        c4 = comps[4] if d == 4 else b.encrypt_zero()
        self.endpoint.send(TAG_REQ_HIGH_TERMS, pack_cts([c3, c4]))
        tag, payload = self.endpoint.recv()
        if tag != TAG_REQ_BLINDED:
            raise ProtocolError(
                f"expected blinded terms, got {TAG_NAMES.get(tag, tag)}"
            )
        e1, e2 = unpack_cts(payload)
        self.rounds += 1
        return (comps[0], b.add(comps[1], e1), b.add(comps[2], e2))


class ReqClientSession:
    """Data-owner side: answers each round and tracks the offset ledger.

    The round-to-gate correspondence is fixed by the program structure
    (products are reduced in gate order), so no gate index travels on the
    wire; both sides derive the same schedule from the program.
    """

    def __init__(self, secret: PeSecret, backend, program: Program, rng=None):
        self.secret = secret
        self.backend = backend
        self.program = program
        _, self.schedule = degree_schedule(program, use_reducer=True)
        self.omega: dict[int, list[int]] = {}
        self.rnd = rng if rng is not None else random.Random(_secrets.randbits(128))
        self.round = 0

    @property
    def expected_rounds(self) -> int:
        return len(self.schedule)

    def respond(self, payload: bytes) -> bytes:
        if self.round >= len(self.schedule):
            raise ProtocolError("more reduction rounds than the program needs")
        t = self.secret.params.t
        n = self.secret.params.n
        alpha = self.secret.alpha
        gate = self.schedule[self.round]
        c3, c4 = unpack_cts(payload)
        y3 = self.backend.decrypt(c3)
        y4 = self.backend.decrypt(c4)
        _, _, naturals = offset_walk(
            self.program, self.secret.key, t, alpha, self.omega
        )
        a_inv = self.secret.alpha_inv
        big_delta = [a_inv * v % t for v in naturals[gate]]
        kap1 = self.rnd.randrange(t)
        kap2 = self.rnd.randrange(t)
        r = [self.rnd.randrange(t) for _ in range(n)]
        r_bar = [self.rnd.randrange(t) for _ in range(n)]
        a2 = alpha * alpha % t
        a3 = a2 * alpha % t
        yb2 = [
            (alpha * kap1 * y3[j] + a2 * kap2 * y4[j] + r[j]) % t for j in range(n)
        ]
        yb1 = [
            (a3 * y4[j] + a2 * y3[j] - alpha * yb2[j] - big_delta[j] + r_bar[j]) % t
            for j in range(n)
        ]
        self.omega[gate] = r_bar
        self.round += 1
        return pack_cts([self.backend.encrypt(yb1), self.backend.encrypt(yb2)])

    def serve(self, endpoint):
        """Answer exactly the rounds the program's schedule calls for."""
        for _ in range(self.expected_rounds):
            tag, payload = endpoint.recv()
            if tag != TAG_REQ_HIGH_TERMS:
                raise ProtocolError(
                    f"expected high terms, got {TAG_NAMES.get(tag, tag)}"
                )
            endpoint.send(TAG_REQ_BLINDED, self.respond(payload))

    def final_offset(self) -> list[int]:
        return final_offset(self.secret, self.program, self.omega)
