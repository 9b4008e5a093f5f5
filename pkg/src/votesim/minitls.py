"""Miniature TLS-like handshake with legacy export ciphersuites.

Four suites are modelled: plain RSA key transport, ephemeral
Diffie-Hellman, and the 1990s export-strength variants of both. Two
classic weaknesses are reproduced structurally, not as toggles on
outcomes:

* the client-side flaw behind export-RSA downgrades: an unpatched client
  accepts a signed temporary RSA key it never asked for;
* the protocol flaw behind export-DHE downgrades: the server's signature
  in ServerKeyExchange covers (client nonce, server nonce, key material)
  but deliberately NOT the negotiated suite, so a man in the middle can
  swap suites without invalidating anything.

Servers rotate their temporary export-RSA key once per simulated hour but
pin it to a connection for that connection's lifetime, so client-initiated
renegotiation turns a long-lived connection into a signature oracle over a
single factorable key.

Cryptanalysis runs for real at desk scale: Pollard rho factoring of the
64-bit-class export moduli, and a precompute-then-descend discrete log
(an oversized baby-step table makes the per-target step a small fraction
of the precompute, mirroring the real attack's cost structure).
"""

import hashlib
import hmac as hmac_mod
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from random import Random
from typing import Callable, Optional

from .envelope import ElGamalParams
from .numth import (
    find_subgroup_generator,
    gen_prime,
    gen_subgroup_prime,
    pollard_rho,
)
from sympy import isprime


class TlsError(Exception):
    pass


class NoCommonSuite(TlsError):
    pass


class BadSignature(TlsError):
    pass


class FinishedMismatch(TlsError):
    pass


class ConnectionClosed(TlsError):
    pass


class ClientPatched(TlsError):
    """Patched client rejected an unsolicited export key; handshake aborted."""


class NotFactorable(TlsError):
    pass


class NoSolution(TlsError):
    pass


class PrecomputeMissing(TlsError):
    pass


class DlogBudgetExceeded(TlsError):
    pass


class RecordTampered(TlsError):
    pass


class CipherSuite(Enum):
    RSA = "RSA"
    RSA_EXPORT = "RSA_EXPORT"
    DHE = "DHE"
    DHE_EXPORT = "DHE_EXPORT"


EXPORT_SUITES = frozenset({CipherSuite.RSA_EXPORT, CipherSuite.DHE_EXPORT})
NONCE_LEN = 16

# Published costs of running these attacks against real 512-bit parameters,
# carried as report metadata; desk-scale runs use the small analogs instead.
REAL_WORLD_COSTS = {
    "factor_512_rsa": {"wall_hours": 7, "usd": 100},
    "dlog_512_dhe": {"precompute_days": 7, "per_target_seconds": 90},
}
DLOG_INDIVIDUAL_DELAY = 90  # simulated seconds billed per descended target


# --- RSA primitive (textbook, simulation-grade) ---

@dataclass(frozen=True)
class RsaKey:
    n: int
    e: int
    d: Optional[int] = None

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    def public(self) -> "RsaKey":
        return RsaKey(n=self.n, e=self.e)


def gen_rsa_keypair(bits: int, rng: Random) -> RsaKey:
    e = 65537
    while True:
        p = gen_prime(bits // 2, rng)
        q = gen_prime(bits - bits // 2, rng)
        if p == q:
            continue
        lam = math.lcm(p - 1, q - 1)
        if math.gcd(e, lam) != 1:
            continue
        n = p * q
        if n.bit_length() != bits:
            continue
        return RsaKey(n=n, e=e, d=pow(e, -1, lam))


def _digest_int(data: bytes, n: int) -> int:
    return int.from_bytes(hashlib.sha256(data).digest(), "big") % n


def rsa_sign(key: RsaKey, data: bytes) -> int:
    if key.d is None:
        raise TlsError("signing needs the private exponent")
    return pow(_digest_int(data, key.n), key.d, key.n)


def rsa_verify(key: RsaKey, data: bytes, signature: int) -> bool:
    return pow(signature, key.e, key.n) == _digest_int(data, key.n)


def rsa_encrypt_int(key: RsaKey, m: int) -> int:
    if not 0 < m < key.n:
        raise TlsError("plaintext out of range")
    return pow(m, key.e, key.n)


def rsa_decrypt_int(key: RsaKey, c: int) -> int:
    if key.d is None:
        raise TlsError("decryption needs the private exponent")
    return pow(c, key.d, key.n)


def gen_export_dhe_params(bits: int, rng: Random) -> ElGamalParams:
    """Export-strength DHE group: `bits`-bit modulus with a deliberately
    short prime-order subgroup (about half the modulus bits) so that the
    precompute/descend discrete-log split is demonstrable at desk scale.
    """
    q_bits = max(16, bits // 2 - 2)
    p, q = gen_subgroup_prime(bits, q_bits, rng)
    g = find_subgroup_generator(p, q, rng)
    return ElGamalParams(p=p, g=g, q=q, bit_length=bits)


# --- handshake messages ---

@dataclass(frozen=True)
class ClientHello:
    nonce: bytes
    suites: tuple[CipherSuite, ...]


@dataclass(frozen=True)
class ServerHello:
    nonce: bytes
    suite: CipherSuite


@dataclass(frozen=True)
class ServerKeyExchange:
    kind: str  # "rsa_temp" or "dhe"
    params: tuple[int, ...]  # rsa_temp: (n, e); dhe: (p, g, server_pub)
    signature: int


@dataclass(frozen=True)
class ClientKeyExchange:
    kind: str  # "rsa" or "dhe"
    payload: int  # rsa: encrypted premaster; dhe: client public value


@dataclass(frozen=True)
class Finished:
    side: str  # "client" or "server"
    mac: bytes


HandshakeMessage = object


def signed_blob(client_nonce: bytes, server_nonce: bytes, kind: str,
                params: tuple[int, ...]) -> bytes:
    """Exactly what the ServerKeyExchange signature covers. The negotiated
    suite is intentionally absent; that omission is the protocol flaw the
    export-DHE downgrade rides on.
    """
    parts = [b"ske", client_nonce, server_nonce, kind.encode()]
    for v in params:
        parts.append(v.to_bytes((v.bit_length() + 7) // 8 or 1, "big"))
    return b"|".join(parts)


def message_bytes(msg: HandshakeMessage) -> bytes:
    if isinstance(msg, ClientHello):
        return b"ch|" + msg.nonce + b"|" + ",".join(s.value for s in msg.suites).encode()
    if isinstance(msg, ServerHello):
        return b"sh|" + msg.nonce + b"|" + msg.suite.value.encode()
    if isinstance(msg, ServerKeyExchange):
        return (b"skx|" + msg.kind.encode() + b"|"
                + b",".join(str(v).encode() for v in msg.params)
                + b"|" + str(msg.signature).encode())
    if isinstance(msg, ClientKeyExchange):
        return b"ckx|" + msg.kind.encode() + b"|" + str(msg.payload).encode()
    if isinstance(msg, Finished):
        return b"fin|" + msg.side.encode() + b"|" + msg.mac
    raise TlsError(f"unknown message {msg!r}")


def derive_session_key(premaster: int, client_nonce: bytes, server_nonce: bytes) -> bytes:
    pm = premaster.to_bytes((premaster.bit_length() + 7) // 8 or 1, "big")
    return hashlib.sha256(b"master" + pm + client_nonce + server_nonce).digest()


def finished_mac(session_key: bytes, side: str, transcript: list[bytes]) -> bytes:
    h = hashlib.sha256(b"".join(transcript)).digest()
    return hmac_mod.new(session_key, b"finished:" + side.encode() + h, hashlib.sha256).digest()


# --- transcripts ---

@dataclass
class HandshakeTranscript:
    """Ordered view of one handshake. Client- and server-side fields are
    kept separately because an interposed handshake gives the two ends
    different views.
    """

    messages: list[tuple[str, HandshakeMessage]] = field(default_factory=list)
    client_suite: Optional[CipherSuite] = None
    server_suite: Optional[CipherSuite] = None
    client_session_key: Optional[bytes] = None
    server_session_key: Optional[bytes] = None
    renegotiation_index: int = 0
    error: Optional[str] = None

    @property
    def negotiated_suite(self) -> Optional[CipherSuite]:
        return self.client_suite

    @property
    def session_key(self) -> Optional[bytes]:
        return self.client_session_key

    def record(self, direction: str, msg: HandshakeMessage) -> None:
        self.messages.append((direction, msg))

    def find(self, cls) -> Optional[HandshakeMessage]:
        for _, msg in self.messages:
            if isinstance(msg, cls):
                return msg
        return None

    def log_lines(self) -> list[str]:
        """One message per line: direction, type, fields in hex/decimal."""
        lines = []
        for direction, msg in self.messages:
            body = message_bytes(msg)
            lines.append(f"{direction} {type(msg).__name__} {body.hex()}")
        return lines


# --- configs and server runtime ---

@dataclass(frozen=True)
class ServerTlsConfig:
    name: str
    cert_key: RsaKey
    enabled_suites: frozenset[CipherSuite]
    temp_rsa_rotation_period: int = 3600
    export_rsa_bits: int = 64
    dhe_params: Optional[ElGamalParams] = None
    export_dhe_params: Optional[ElGamalParams] = None
    pin_temp_key_to_connection: bool = True  # observed behaviour; fixed on
    key_seed: int = 0

    def __post_init__(self):
        if self.temp_rsa_rotation_period <= 0:
            raise TlsError("rotation period must be positive")


@dataclass(frozen=True)
class ClientTlsConfig:
    offered_suites: tuple[CipherSuite, ...]
    patched: bool = True

    @property
    def accepts_unsolicited_export_rsa_key(self) -> bool:
        return not self.patched


def make_server_config(
    name: str,
    suites: frozenset[CipherSuite],
    rng: Random,
    rotation_period: int = 3600,
    export_bits: int = 64,
    cert_bits: int = 192,
) -> ServerTlsConfig:
    """Server identity plus key material sized so the certificate key is
    out of reach of the desk-scale factoring budget while export material
    is squarely inside it.
    """
    cert = gen_rsa_keypair(cert_bits, rng)
    dhe = None
    dhe_export = None
    if CipherSuite.DHE in suites:
        p, q = gen_subgroup_prime(128, 62, rng)
        g = find_subgroup_generator(p, q, rng)
        dhe = ElGamalParams(p=p, g=g, q=q, bit_length=128)
    if CipherSuite.DHE_EXPORT in suites:
        dhe_export = gen_export_dhe_params(export_bits, rng)
    return ServerTlsConfig(
        name=name,
        cert_key=cert,
        enabled_suites=suites,
        temp_rsa_rotation_period=rotation_period,
        export_rsa_bits=export_bits,
        dhe_params=dhe,
        export_dhe_params=dhe_export,
        key_seed=rng.getrandbits(64),
    )


class TlsServer:
    """Holds per-epoch temporary export-RSA keys. Epoch keys are derived
    deterministically from the config seed so whole runs replay.
    """

    def __init__(self, config: ServerTlsConfig, clock: Callable[[], int]):
        self.config = config
        self.clock = clock
        self._epoch_keys: dict[int, RsaKey] = {}

    def temp_rsa_key(self, now: int) -> RsaKey:
        epoch = now // self.config.temp_rsa_rotation_period
        key = self._epoch_keys.get(epoch)
        if key is None:
            key_rng = Random(f"{self.config.key_seed}:epoch:{epoch}")
            key = gen_rsa_keypair(self.config.export_rsa_bits, key_rng)
            self._epoch_keys[epoch] = key
        return key

    def connect(self) -> "ServerConnection":
        now = self.clock()
        return ServerConnection(server=self, opened_at=now,
                                pinned_temp_key=self.temp_rsa_key(now))


class ServerConnection:
    """One client connection. The temporary export-RSA key is pinned at
    connect time and reused for every renegotiation on this connection.
    """

    def __init__(self, server: TlsServer, opened_at: int, pinned_temp_key: RsaKey):
        self.server = server
        self.config = server.config
        self.opened_at = opened_at
        self.pinned_temp_key = pinned_temp_key
        self.renegotiation_count = 0
        self.closed = False

    def close(self) -> None:
        self.closed = True

    def ensure_open(self) -> None:
        if self.closed:
            raise ConnectionClosed("connection is closed")


# --- handshake state machines ---

class ClientHandshake:
    """Client side, driven message by message so an interposer can sit in
    the middle. Raises on any verification failure.
    """

    def __init__(self, config: ClientTlsConfig, rng: Random):
        self.config = config
        self.rng = rng
        self.nonce = rng.getrandbits(NONCE_LEN * 8).to_bytes(NONCE_LEN, "big")
        self.transcript_view: list[bytes] = []
        self.suite: Optional[CipherSuite] = None
        self.server_nonce: Optional[bytes] = None
        self.key_material: Optional[tuple] = None
        self.premaster: Optional[int] = None
        self.session_key: Optional[bytes] = None
        self.cert_key: Optional[RsaKey] = None

    def hello(self) -> ClientHello:
        msg = ClientHello(nonce=self.nonce, suites=self.config.offered_suites)
        self.transcript_view.append(message_bytes(msg))
        return msg

    def on_server_hello(self, msg: ServerHello, cert_key: RsaKey) -> None:
        if msg.suite not in self.config.offered_suites:
            raise NoCommonSuite(f"server chose {msg.suite.value}, not offered")
        self.suite = msg.suite
        self.server_nonce = msg.nonce
        self.cert_key = cert_key.public()
        self.transcript_view.append(message_bytes(msg))

    def on_server_key_exchange(self, msg: ServerKeyExchange) -> None:
        assert self.suite is not None and self.server_nonce is not None
        expects_ske = self.suite in (CipherSuite.RSA_EXPORT, CipherSuite.DHE,
                                     CipherSuite.DHE_EXPORT)
        if not expects_ske:
            # RSA key transport has no ServerKeyExchange. Accepting a
            # temporary export key here anyway is the client flaw behind
            # the export-RSA downgrade.
            if not (msg.kind == "rsa_temp" and self.config.accepts_unsolicited_export_rsa_key):
                raise ClientPatched("unsolicited ServerKeyExchange rejected")
        blob = signed_blob(self.nonce, self.server_nonce, msg.kind, msg.params)
        if not rsa_verify(self.cert_key, blob, msg.signature):
            raise BadSignature("ServerKeyExchange signature invalid")
        self.key_material = (msg.kind, msg.params)
        self.transcript_view.append(message_bytes(msg))

    def client_key_exchange(self) -> ClientKeyExchange:
        assert self.suite is not None
        if self.suite is CipherSuite.RSA and self.key_material is None:
            # key transport under the certificate key
            n = self.cert_key.n
            self.premaster = self.rng.randrange(2, n - 1)
            msg = ClientKeyExchange(kind="rsa", payload=rsa_encrypt_int(self.cert_key, self.premaster))
        elif self.key_material is not None and self.key_material[0] == "rsa_temp":
            n, e = self.key_material[1]
            self.premaster = self.rng.randrange(2, n - 1)
            msg = ClientKeyExchange(kind="rsa", payload=rsa_encrypt_int(RsaKey(n=n, e=e), self.premaster))
        elif self.key_material is not None and self.key_material[0] == "dhe":
            p, g, server_pub = self.key_material[1]
            xc = self.rng.randrange(2, p - 1)
            self.premaster = pow(server_pub, xc, p)
            msg = ClientKeyExchange(kind="dhe", payload=pow(g, xc, p))
        else:
            raise TlsError("no key material to respond to")
        self.transcript_view.append(message_bytes(msg))
        self.session_key = derive_session_key(self.premaster, self.nonce, self.server_nonce)
        return msg

    def finished(self) -> Finished:
        assert self.session_key is not None
        return Finished(side="client", mac=finished_mac(self.session_key, "client",
                                                        self.transcript_view))

    def on_server_finished(self, msg: Finished) -> None:
        expect = finished_mac(self.session_key, "server", self.transcript_view)
        if not hmac_mod.compare_digest(expect, msg.mac):
            raise FinishedMismatch("server Finished does not match client transcript")


class ServerHandshake:
    """Server side of one (re)negotiation on an open connection."""

    def __init__(self, conn: ServerConnection, rng: Random):
        conn.ensure_open()
        self.conn = conn
        self.config = conn.config
        self.rng = rng
        self.nonce = rng.getrandbits(NONCE_LEN * 8).to_bytes(NONCE_LEN, "big")
        self.transcript_view: list[bytes] = []
        self.suite: Optional[CipherSuite] = None
        self.client_nonce: Optional[bytes] = None
        self._dhe_secret: Optional[int] = None
        self._dhe_params: Optional[ElGamalParams] = None
        self.premaster: Optional[int] = None
        self.session_key: Optional[bytes] = None

    def on_client_hello(self, msg: ClientHello) -> ServerHello:
        self.client_nonce = msg.nonce
        self.transcript_view.append(message_bytes(msg))
        for suite in msg.suites:
            if suite in self.config.enabled_suites:
                self.suite = suite
                break
        if self.suite is None:
            raise NoCommonSuite("no client-offered suite is enabled")
        reply = ServerHello(nonce=self.nonce, suite=self.suite)
        self.transcript_view.append(message_bytes(reply))
        return reply

    def server_key_exchange(self) -> Optional[ServerKeyExchange]:
        if self.suite is CipherSuite.RSA:
            return None
        if self.suite is CipherSuite.RSA_EXPORT:
            temp = self.conn.pinned_temp_key
            kind, params = "rsa_temp", (temp.n, temp.e)
        else:
            dhe = (self.config.dhe_params if self.suite is CipherSuite.DHE
                   else self.config.export_dhe_params)
            if dhe is None:
                raise TlsError(f"no DHE parameters configured for {self.suite.value}")
            self._dhe_params = dhe
            self._dhe_secret = self.rng.randrange(2, dhe.q)
            server_pub = pow(dhe.g, self._dhe_secret, dhe.p)
            kind, params = "dhe", (dhe.p, dhe.g, server_pub)
        blob = signed_blob(self.client_nonce, self.nonce, kind, params)
        msg = ServerKeyExchange(kind=kind, params=params,
                                signature=rsa_sign(self.config.cert_key, blob))
        self.transcript_view.append(message_bytes(msg))
        return msg

    def on_client_key_exchange(self, msg: ClientKeyExchange) -> None:
        if msg.kind == "rsa" and self.suite in (CipherSuite.RSA,
                                                CipherSuite.RSA_EXPORT):
            key = (self.conn.pinned_temp_key if self.suite is CipherSuite.RSA_EXPORT
                   else self.config.cert_key)
            if not 0 < msg.payload < key.n:
                raise FinishedMismatch("ClientKeyExchange payload out of range")
            self.premaster = rsa_decrypt_int(key, msg.payload)
        elif msg.kind == "dhe" and self._dhe_secret is not None:
            if not 0 < msg.payload < self._dhe_params.p:
                raise FinishedMismatch("ClientKeyExchange payload out of range")
            self.premaster = pow(msg.payload, self._dhe_secret, self._dhe_params.p)
        else:
            raise FinishedMismatch(
                f"ClientKeyExchange kind {msg.kind} does not fit suite "
                f"{self.suite.value}")
        self.transcript_view.append(message_bytes(msg))
        self.session_key = derive_session_key(self.premaster, self.client_nonce, self.nonce)

    def on_client_finished(self, msg: Finished) -> Finished:
        expect = finished_mac(self.session_key, "client", self.transcript_view)
        if not hmac_mod.compare_digest(expect, msg.mac):
            raise FinishedMismatch("client Finished does not match server transcript")
        return Finished(side="server", mac=finished_mac(self.session_key, "server",
                                                        self.transcript_view))


# --- honest (possibly tapped) handshake driver ---

Channel = Callable[[str, HandshakeMessage], HandshakeMessage]


def _identity_channel(direction: str, msg: HandshakeMessage) -> HandshakeMessage:
    return msg


def handshake(
    client_config: ClientTlsConfig,
    conn: ServerConnection,
    rng: Random,
    channel: Channel = _identity_channel,
) -> HandshakeTranscript:
    """Run one full negotiation over `channel`, which sees every message in
    order and may return a substitute (a man-in-the-middle tap point).
    Raises the handshake errors; on success both sides hold equal keys.
    """
    conn.ensure_open()
    t = HandshakeTranscript(renegotiation_index=conn.renegotiation_count)
    client = ClientHandshake(client_config, rng)
    server = ServerHandshake(conn, rng)
    try:
        ch = channel("c->s", client.hello())
        t.record("c->s", ch)
        sh = channel("s->c", server.on_client_hello(ch))
        t.record("s->c", sh)
        client.on_server_hello(sh, conn.config.cert_key)
        ske = server.server_key_exchange()
        if ske is not None:
            ske = channel("s->c", ske)
            t.record("s->c", ske)
            client.on_server_key_exchange(ske)
        cke = channel("c->s", client.client_key_exchange())
        t.record("c->s", cke)
        server.on_client_key_exchange(cke)
        cfin = channel("c->s", client.finished())
        t.record("c->s", cfin)
        sfin = channel("s->c", server.on_client_finished(cfin))
        t.record("s->c", sfin)
        client.on_server_finished(sfin)
    except TlsError as exc:
        t.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        t.client_suite = client.suite
        t.server_suite = server.suite
        t.client_session_key = client.session_key
        t.server_session_key = server.session_key
        conn.renegotiation_count += 1
    return t


def renegotiate(
    conn: ServerConnection,
    rng: Random,
    client_config: Optional[ClientTlsConfig] = None,
    channel: Channel = _identity_channel,
) -> HandshakeTranscript:
    """Fresh client-initiated negotiation on a live connection. The server
    signs again but keeps the pinned temporary RSA key.
    """
    conn.ensure_open()
    if client_config is None:
        client_config = ClientTlsConfig(offered_suites=(CipherSuite.RSA_EXPORT,),
                                        patched=True)
    return handshake(client_config, conn, rng, channel)


def signature_oracle(conn: ServerConnection, victim_nonce: bytes,
                     rng: Random) -> tuple[bytes, ServerKeyExchange]:
    """Obtain the server's genuine signature over (victim nonce, fresh
    server nonce, pinned temp key) by renegotiating with the victim's
    nonce as our own. Returns (server_nonce, signed ServerKeyExchange).
    """
    conn.ensure_open()
    server = ServerHandshake(conn, rng)
    hello = ClientHello(nonce=victim_nonce, suites=(CipherSuite.RSA_EXPORT,))
    server.on_client_hello(hello)
    ske = server.server_key_exchange()
    conn.renegotiation_count += 1
    return server.nonce, ske


# --- cryptanalysis oracles ---

def factor_export_modulus(n: int, rng: Optional[Random] = None,
                          max_iters: int = 1 << 20) -> tuple[int, int]:
    """Factor an export-strength modulus within the iteration budget.
    Self-checking: returns (p, q) with p*q == n, both prime, p <= q.
    """
    if rng is None:
        rng = Random(0xFAC70)
    if n < 4:
        raise NotFactorable(f"{n} is not a semiprime")
    d = pollard_rho(n, rng, max_iters=max_iters)
    if d is None:
        raise NotFactorable(f"budget of {max_iters} iterations exhausted for {n.bit_length()}-bit modulus")
    p, q = sorted((d, n // d))
    if p * q != n or not (isprime(p) and isprime(q)):
        raise NotFactorable(f"{n} is not a product of two primes")
    return p, q


@dataclass
class PrecompTable:
    """Reusable baby-step table for one fixed group. Deliberately oversized
    (table_factor times sqrt(q)) so each individual descent is a small
    fraction of the precompute cost.
    """

    params: ElGamalParams
    table: dict[int, int]
    table_size: int
    stride_inv: int  # g^(-table_size) mod p
    metadata: dict = field(default_factory=lambda: dict(REAL_WORLD_COSTS["dlog_512_dhe"]))


def dlog_precompute(params: ElGamalParams, table_factor: int = 16) -> PrecompTable:
    p, g, q = params.p, params.g, params.q
    size = table_factor * math.isqrt(q)
    table: dict[int, int] = {}
    acc = 1
    for j in range(size):
        table[acc] = j
        acc = acc * g % p
    # acc == g^size here
    return PrecompTable(params=params, table=table, table_size=size,
                        stride_inv=pow(acc, -1, p))


def dlog_individual(y: int, table: PrecompTable) -> int:
    """Solve g^x = y (mod p) using the precomputed table. NoSolution if y
    lies outside the order-q subgroup the table was built for.
    """
    p, q = table.params.p, table.params.q
    if not 0 < y < p or pow(y, q, p) != 1:
        raise NoSolution("target is outside the precomputed subgroup")
    cur = y
    max_steps = q // table.table_size + 2
    for i in range(max_steps):
        j = table.table.get(cur)
        if j is not None:
            return (i * table.table_size + j) % q
        cur = cur * table.stride_inv % p
    raise DlogBudgetExceeded("giant-step walk exhausted")  # unreachable for subgroup members


# --- downgrade attacks ---

@dataclass
class MitmResult:
    success: bool
    error: Optional[str] = None
    attacker_session_key: Optional[bytes] = None
    client_session_key: Optional[bytes] = None
    server_session_key: Optional[bytes] = None
    client_transcript: Optional[HandshakeTranscript] = None
    simulated_delay: int = 0


def mitm_freak(
    client_config: ClientTlsConfig,
    oracle_conn: ServerConnection,
    factored_temp_key: Optional[RsaKey],
    rng: Random,
) -> MitmResult:
    """Export-RSA downgrade against one victim handshake.

    The attacker impersonates the server outright: he relays the victim's
    nonce through the signature oracle on his own long-lived connection,
    presents the pinned (pre-factored) temporary key with that genuine
    signature, decrypts the victim's key exchange, and forges the server
    Finished. Needs an unpatched victim and the factored pinned key.
    """
    t = HandshakeTranscript()
    client = ClientHandshake(client_config, rng)
    hello = client.hello()
    t.record("c->a", hello)

    preferred = next((s for s in client_config.offered_suites
                      if s in (CipherSuite.RSA, CipherSuite.RSA_EXPORT)), None)
    if preferred is None:
        return MitmResult(success=False, error="victim offers no RSA-family suite",
                          client_transcript=t)
    try:
        server_nonce, ske = signature_oracle(oracle_conn, hello.nonce, rng)
    except TlsError as exc:
        return MitmResult(success=False, error=f"{type(exc).__name__}: {exc}",
                          client_transcript=t)

    fake_hello = ServerHello(nonce=server_nonce, suite=preferred)
    t.record("a->c", fake_hello)
    client.on_server_hello(fake_hello, oracle_conn.config.cert_key)
    try:
        t.record("a->c", ske)
        client.on_server_key_exchange(ske)
    except ClientPatched as exc:
        t.error = str(exc)
        return MitmResult(success=False, error=f"ClientPatched: {exc}", client_transcript=t)

    cke = client.client_key_exchange()
    t.record("c->a", cke)
    if factored_temp_key is None or factored_temp_key.d is None \
            or factored_temp_key.n != ske.params[0]:
        return MitmResult(success=False, error="temp key not factored; cannot decrypt",
                          client_transcript=t, client_session_key=None)
    premaster = rsa_decrypt_int(factored_temp_key, cke.payload)
    attacker_key = derive_session_key(premaster, hello.nonce, server_nonce)

    cfin = client.finished()
    t.record("c->a", cfin)
    forged = Finished(side="server",
                      mac=finished_mac(attacker_key, "server", client.transcript_view))
    t.record("a->c", forged)
    client.on_server_finished(forged)  # completes with no client-visible error

    t.client_suite = client.suite
    t.client_session_key = client.session_key
    return MitmResult(success=True, attacker_session_key=attacker_key,
                      client_session_key=client.session_key, client_transcript=t)


def mitm_logjam(
    client_config: ClientTlsConfig,
    conn: ServerConnection,
    table: Optional[PrecompTable],
    rng: Random,
) -> MitmResult:
    """Export-DHE downgrade against any client, patched or not.

    The attacker rewrites the hello to offer only export DHE, lets the
    server's signed key exchange through untouched (the signature does not
    cover the suite), rewrites the server hello back to the suite the
    victim asked for, descends the server's ephemeral secret with the
    precomputed table, and forges both Finished messages.
    """
    if table is None:
        raise PrecomputeMissing("no discrete-log table for the server's group")
    t = HandshakeTranscript()
    client = ClientHandshake(client_config, rng)
    server = ServerHandshake(conn, rng)

    hello = client.hello()
    t.record("c->a", hello)
    preferred = next((s for s in client_config.offered_suites
                      if s in (CipherSuite.DHE, CipherSuite.DHE_EXPORT)), None)
    if preferred is None:
        return MitmResult(success=False, error="victim offers no DHE-family suite",
                          client_transcript=t)
    rewritten = ClientHello(nonce=hello.nonce, suites=(CipherSuite.DHE_EXPORT,))
    t.record("a->s", rewritten)
    try:
        sh = server.on_client_hello(rewritten)
    except NoCommonSuite as exc:
        conn.renegotiation_count += 1
        return MitmResult(success=False, error=f"NoCommonSuite: {exc}", client_transcript=t)
    t.record("s->a", sh)
    sh_for_client = ServerHello(nonce=sh.nonce, suite=preferred)
    t.record("a->c", sh_for_client)
    client.on_server_hello(sh_for_client, conn.config.cert_key)

    ske = server.server_key_exchange()
    t.record("s->c", ske)
    if table.params.p != ske.params[0]:
        conn.renegotiation_count += 1
        raise DlogBudgetExceeded("precompute table bound to a different modulus")
    client.on_server_key_exchange(ske)  # signature verifies: suite not covered

    cke = client.client_key_exchange()
    t.record("c->s", cke)
    server.on_client_key_exchange(cke)

    server_pub = ske.params[2]
    server_secret = dlog_individual(server_pub, table)
    premaster = pow(cke.payload, server_secret, table.params.p)
    attacker_key = derive_session_key(premaster, hello.nonce, sh.nonce)

    cfin = client.finished()
    t.record("c->a", cfin)
    forged_cfin = Finished(side="client",
                           mac=finished_mac(attacker_key, "client", server.transcript_view))
    t.record("a->s", forged_cfin)
    sfin = server.on_client_finished(forged_cfin)
    t.record("s->a", sfin)
    forged_sfin = Finished(side="server",
                           mac=finished_mac(attacker_key, "server", client.transcript_view))
    t.record("a->c", forged_sfin)
    client.on_server_finished(forged_sfin)
    conn.renegotiation_count += 1

    t.client_suite = client.suite  # victim believes the strong suite
    t.server_suite = server.suite
    t.client_session_key = client.session_key
    t.server_session_key = server.session_key
    return MitmResult(success=True, attacker_session_key=attacker_key,
                      client_session_key=client.session_key,
                      server_session_key=server.session_key,
                      client_transcript=t,
                      simulated_delay=DLOG_INDIVIDUAL_DELAY)


# --- record layer ---

def encrypt_record(session_key: bytes, seq: int, plaintext: bytes) -> bytes:
    key = hashlib.sha256(b"record-enc" + session_key + seq.to_bytes(8, "big")).digest()
    stream = bytearray()
    counter = 0
    while len(stream) < len(plaintext):
        stream += hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
        counter += 1
    body = bytes(a ^ b for a, b in zip(plaintext, stream))
    mac = hmac_mod.new(session_key, b"record" + seq.to_bytes(8, "big") + body,
                       hashlib.sha256).digest()[:16]
    return body + mac


def decrypt_record(session_key: bytes, seq: int, blob: bytes) -> bytes:
    if len(blob) < 16:
        raise RecordTampered("record too short")
    body, mac = blob[:-16], blob[-16:]
    expect = hmac_mod.new(session_key, b"record" + seq.to_bytes(8, "big") + body,
                          hashlib.sha256).digest()[:16]
    if not hmac_mod.compare_digest(expect, mac):
        raise RecordTampered("record MAC mismatch")
    key = hashlib.sha256(b"record-enc" + session_key + seq.to_bytes(8, "big")).digest()
    stream = bytearray()
    counter = 0
    while len(stream) < len(body):
        stream += hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(a ^ b for a, b in zip(body, stream))


# --- downgrade outcome matrix ---

@dataclass(frozen=True)
class MatrixCell:
    client_patched: bool
    export_rsa_enabled: bool
    export_dhe_enabled: bool
    freak_succeeded: bool
    logjam_succeeded: bool


def run_downgrade_matrix(rng: Random, export_bits: int = 64) -> list[MatrixCell]:
    """Exhaustive sweep of patched x export-RSA x export-DHE. The export-RSA
    flaw needs an unpatched client AND the export suite enabled; the
    export-DHE flaw needs only the export suite, any client.
    """
    cells = []
    export_dhe_params = gen_export_dhe_params(export_bits, rng)
    table = dlog_precompute(export_dhe_params)
    for patched in (False, True):
        for export_rsa in (False, True):
            for export_dhe in (False, True):
                suites = {CipherSuite.RSA, CipherSuite.DHE}
                if export_rsa:
                    suites.add(CipherSuite.RSA_EXPORT)
                if export_dhe:
                    suites.add(CipherSuite.DHE_EXPORT)
                cfg = make_server_config("matrix", frozenset(suites), rng,
                                         export_bits=export_bits)
                if export_dhe:
                    cfg = replace(cfg, export_dhe_params=export_dhe_params)
                clock_now = [0]
                server = TlsServer(cfg, clock=lambda: clock_now[0])

                # export-RSA attack: oracle connection, factor pinned key
                freak_ok = False
                oracle = server.connect()
                client_cfg = ClientTlsConfig(offered_suites=(CipherSuite.RSA, CipherSuite.DHE),
                                             patched=patched)
                try:
                    pinned = oracle.pinned_temp_key
                    if export_rsa:
                        _, probe = signature_oracle(oracle, b"\x00" * NONCE_LEN, rng)
                        fp, fq = factor_export_modulus(probe.params[0], rng)
                        lam = math.lcm(fp - 1, fq - 1)
                        factored = RsaKey(n=probe.params[0], e=probe.params[1],
                                          d=pow(probe.params[1], -1, lam))
                    else:
                        factored = None
                    result = mitm_freak(client_cfg, oracle, factored, rng)
                    freak_ok = result.success and \
                        result.attacker_session_key == result.client_session_key
                except TlsError:
                    freak_ok = False
                oracle.close()

                # export-DHE attack against a fresh connection
                logjam_ok = False
                conn = server.connect()
                try:
                    result = mitm_logjam(client_cfg, conn, table, rng)
                    logjam_ok = result.success and \
                        result.attacker_session_key == result.client_session_key == \
                        result.server_session_key
                except TlsError:
                    logjam_ok = False
                conn.close()

                cells.append(MatrixCell(
                    client_patched=patched,
                    export_rsa_enabled=export_rsa,
                    export_dhe_enabled=export_dhe,
                    freak_succeeded=freak_ok,
                    logjam_succeeded=logjam_ok,
                ))
    return cells
