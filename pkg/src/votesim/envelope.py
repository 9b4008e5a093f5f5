"""Digital-envelope hybrid encryption and voter credentials.

A sealed vote is a randomly drawn symmetric key wrapped once under each
of the two tabulation servers' public keys (so either server can open
it), plus the encoded ballot encrypted under that symmetric key with an
authenticated stream cipher, plus a keyed client tag over the ciphertext.

Parameters are desk-scale by default (64-bit modulus class). The
historical 512-bit export modulus observed in the wild ships as a
non-generable constant for reporting; no cryptanalysis is run against it.

All constructions here are simulation-grade, not production cryptography.
"""

import hashlib
import hmac as hmac_mod
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from random import Random
from typing import Optional

from .numth import gen_safe_prime, find_subgroup_generator, sqrt_mod_3mod4


class EnvelopeError(Exception):
    pass


class UnsupportedSize(EnvelopeError):
    pass


class MessageOutOfRange(EnvelopeError):
    pass


class AuthFailure(EnvelopeError):
    """Symmetric-layer authentication failed. Deliberately also covers
    wrong-key decryption so key errors are indistinguishable from tampering.
    """


class RegistryExhausted(EnvelopeError):
    pass


GENERABLE_BITS = (32, 64, 128)
HISTORICAL_BITS = 512
TAG_LEN = 16
NONCE_LEN = 12


@dataclass(frozen=True)
class ElGamalParams:
    """Prime-order subgroup of Z_p^*. For generable sizes p is a safe
    prime (p = 2q + 1) and g generates the quadratic residues.
    """

    p: int
    g: int
    q: int
    bit_length: int
    generable: bool = True

    def __post_init__(self):
        if not (1 < self.g < self.p):
            raise EnvelopeError("generator out of range")
        if self.generable and pow(self.g, self.q, self.p) != 1:
            raise EnvelopeError("generator does not have order q")


@dataclass(frozen=True)
class PublicKey:
    params: ElGamalParams
    y: int


@dataclass(frozen=True)
class KeyPair:
    params: ElGamalParams
    x: int
    y: int

    def public(self) -> PublicKey:
        return PublicKey(self.params, self.y)


def _historical_modulus() -> int:
    text = resources.files("votesim").joinpath("data/legacy_export_modulus.hex").read_text()
    return int(text.strip(), 16)


def gen_params(bit_length: int, rng: Random) -> ElGamalParams:
    """Safe-prime-derived parameters at a desk-scale size, deterministic
    for a given rng state. 512 returns the recorded historical modulus as
    a metadata-only, non-generable record (g fixed to 2, q unverified).
    """
    if bit_length == HISTORICAL_BITS:
        p = _historical_modulus()
        return ElGamalParams(p=p, g=2, q=(p - 1) // 2, bit_length=HISTORICAL_BITS,
                             generable=False)
    if bit_length not in GENERABLE_BITS:
        raise UnsupportedSize(f"bit length {bit_length} not in {GENERABLE_BITS + (512,)}")
    p, q = gen_safe_prime(bit_length, rng)
    g = find_subgroup_generator(p, q, rng)
    return ElGamalParams(p=p, g=g, q=q, bit_length=bit_length)


def gen_keypair(params: ElGamalParams, rng: Random) -> KeyPair:
    if not params.generable:
        raise UnsupportedSize("historical parameters are metadata only")
    x = rng.randrange(1, params.q)
    return KeyPair(params=params, x=x, y=pow(params.g, x, params.p))


def _encode_message(params: ElGamalParams, m: int) -> int:
    # Squaring maps [1, q] injectively into the quadratic-residue subgroup;
    # inverted by the principal square root since p % 4 == 3 for safe primes.
    if not 1 <= m <= params.q:
        raise MessageOutOfRange(f"message must be in [1, {params.q}]")
    return (m * m) % params.p


def _decode_message(params: ElGamalParams, s: int) -> int:
    r = sqrt_mod_3mod4(s, params.p)
    return min(r, params.p - r)


def elgamal_encrypt(params: ElGamalParams, y: int, msg: int, rng: Random) -> tuple[int, int]:
    s = _encode_message(params, msg)
    r = rng.randrange(1, params.q)
    return pow(params.g, r, params.p), (s * pow(y, r, params.p)) % params.p


def elgamal_decrypt(params: ElGamalParams, x: int, ciphertext: tuple[int, int]) -> int:
    c1, c2 = ciphertext
    shared = pow(c1, x, params.p)
    s = (c2 * pow(shared, params.p - 2, params.p)) % params.p
    return _decode_message(params, s)


# --- authenticated stream layer ---

def _key_bytes(key_int: int) -> bytes:
    return key_int.to_bytes((key_int.bit_length() + 7) // 8 or 1, "big")


def _stream(key: bytes, nonce: bytes, n: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < n:
        out += hashlib.sha256(key + nonce + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:n])


def symmetric_seal(key_int: int, plaintext: bytes, rng: Random) -> tuple[bytes, bytes, bytes]:
    """Encrypt-then-MAC under keys derived from the wrapped integer key.
    Returns (nonce, ciphertext, tag).
    """
    kb = _key_bytes(key_int)
    enc_key = hashlib.sha256(b"enc" + kb).digest()
    mac_key = hashlib.sha256(b"mac" + kb).digest()
    nonce = rng.getrandbits(NONCE_LEN * 8).to_bytes(NONCE_LEN, "big")
    ciphertext = bytes(a ^ b for a, b in zip(plaintext, _stream(enc_key, nonce, len(plaintext))))
    tag = hmac_mod.new(mac_key, nonce + ciphertext, hashlib.sha256).digest()[:TAG_LEN]
    return nonce, ciphertext, tag


def symmetric_open(key_int: int, nonce: bytes, ciphertext: bytes, tag: bytes) -> bytes:
    kb = _key_bytes(key_int)
    enc_key = hashlib.sha256(b"enc" + kb).digest()
    mac_key = hashlib.sha256(b"mac" + kb).digest()
    expect = hmac_mod.new(mac_key, nonce + ciphertext, hashlib.sha256).digest()[:TAG_LEN]
    if not hmac_mod.compare_digest(expect, tag):
        raise AuthFailure("vote ciphertext failed authentication")
    return bytes(a ^ b for a, b in zip(ciphertext, _stream(enc_key, nonce, len(ciphertext))))


def client_signature(session_key: bytes, vote_ciphertext: bytes) -> bytes:
    """Keyed tag the client attaches over the vote ciphertext. The real
    derivation of this key is undocumented; here it is a per-session key
    supplied by the casting context, and whether the collecting server can
    recreate it is a scenario toggle.
    """
    return hmac_mod.new(session_key, b"client-sig" + vote_ciphertext, hashlib.sha256).digest()[:TAG_LEN]


def verify_client_signature(session_key: bytes, vote_ciphertext: bytes, sig: bytes) -> bool:
    return hmac_mod.compare_digest(client_signature(session_key, vote_ciphertext), sig)


class ServerRole(Enum):
    ELECTION = "election"
    VERIFICATION = "verification"


@dataclass(frozen=True)
class DigitalEnvelope:
    wrapped_key_election: tuple[int, int]
    wrapped_key_verification: tuple[int, int]
    nonce: bytes
    vote_ciphertext: bytes
    tag: bytes
    client_sig: bytes

    def to_bytes(self) -> bytes:
        """Length-prefixed binary form for the wire layer."""
        parts = []
        for c1, c2 in (self.wrapped_key_election, self.wrapped_key_verification):
            for v in (c1, c2):
                vb = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
                parts.append(len(vb).to_bytes(2, "big") + vb)
        for blob in (self.nonce, self.vote_ciphertext, self.tag, self.client_sig):
            parts.append(len(blob).to_bytes(2, "big") + blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DigitalEnvelope":
        pos = 0
        fields = []
        for _ in range(8):
            if pos + 2 > len(data):
                raise EnvelopeError("truncated envelope")
            n = int.from_bytes(data[pos:pos + 2], "big")
            pos += 2
            if pos + n > len(data):
                raise EnvelopeError("truncated envelope")
            fields.append(data[pos:pos + n])
            pos += n
        if pos != len(data):
            raise EnvelopeError("trailing bytes after envelope")
        ints = [int.from_bytes(f, "big") for f in fields[:4]]
        return cls(
            wrapped_key_election=(ints[0], ints[1]),
            wrapped_key_verification=(ints[2], ints[3]),
            nonce=fields[4],
            vote_ciphertext=fields[5],
            tag=fields[6],
            client_sig=fields[7],
        )


def seal(
    ballot_bytes: bytes,
    election_pub: PublicKey,
    verification_pub: PublicKey,
    rng: Random,
    session_key: Optional[bytes] = None,
) -> DigitalEnvelope:
    """Seal a vote: fresh symmetric key, wrapped once per server, ballot
    encrypted under it. The symmetric key never leaves this function.
    """
    if election_pub.params != verification_pub.params:
        raise EnvelopeError("server keys must share parameters")
    params = election_pub.params
    k = rng.randrange(1, params.q)
    wrapped_e = elgamal_encrypt(params, election_pub.y, k, rng)
    wrapped_v = elgamal_encrypt(params, verification_pub.y, k, rng)
    nonce, ciphertext, tag = symmetric_seal(k, ballot_bytes, rng)
    if session_key is None:
        session_key = rng.getrandbits(256).to_bytes(32, "big")
    sig = client_signature(session_key, ciphertext)
    return DigitalEnvelope(
        wrapped_key_election=wrapped_e,
        wrapped_key_verification=wrapped_v,
        nonce=nonce,
        vote_ciphertext=ciphertext,
        tag=tag,
        client_sig=sig,
    )


def open_envelope(envelope: DigitalEnvelope, which: ServerRole, keypair: KeyPair) -> bytes:
    """Unwrap with the selected server key and decrypt. A wrong key decrypts
    to a wrong symmetric key and surfaces as AuthFailure, indistinguishable
    from ciphertext tampering by design.
    """
    wrapped = (
        envelope.wrapped_key_election
        if which is ServerRole.ELECTION
        else envelope.wrapped_key_verification
    )
    k = elgamal_decrypt(keypair.params, keypair.x, wrapped)
    return symmetric_open(k, envelope.nonce, envelope.vote_ciphertext, envelope.tag)


# --- credentials ---

LOGIN_ID_DIGITS = 8
PIN_DIGITS = 6
RECEIPT_DIGITS = 12


@dataclass(frozen=True)
class Credentials:
    login_id: str
    pin: str
    receipt: Optional[str] = None


class CredentialRegistry:
    """Issues unique zero-padded login ids and receipt numbers. Single
    writer: owned by the election event loop.
    """

    def __init__(self):
        self._issued_ids: set[str] = set()
        self._issued_receipts: set[str] = set()
        self._pin_hash: dict[str, bytes] = {}

    @staticmethod
    def hash_pin(pin: str) -> bytes:
        return hashlib.sha256(b"pin:" + pin.encode()).digest()

    def issue(self, pin_choice: Optional[str], rng: Random) -> Credentials:
        """Fresh credentials. The pin is the caller's choice when given,
        which models both an honest voter choosing and an attacker
        assigning one at registration.
        """
        if len(self._issued_ids) >= 10 ** LOGIN_ID_DIGITS:
            raise RegistryExhausted("login id space exhausted")
        while True:
            login_id = f"{rng.randrange(10 ** LOGIN_ID_DIGITS):0{LOGIN_ID_DIGITS}d}"
            if login_id not in self._issued_ids:
                break
        self._issued_ids.add(login_id)
        if pin_choice is not None:
            if len(pin_choice) != PIN_DIGITS or not pin_choice.isdigit():
                raise EnvelopeError("pin must be 6 digits")
            pin = pin_choice
        else:
            pin = f"{rng.randrange(10 ** PIN_DIGITS):0{PIN_DIGITS}d}"
        self._pin_hash[login_id] = self.hash_pin(pin)
        return Credentials(login_id=login_id, pin=pin)

    def issue_receipt(self, rng: Random) -> str:
        if len(self._issued_receipts) >= 10 ** RECEIPT_DIGITS:
            raise RegistryExhausted("receipt space exhausted")
        while True:
            receipt = f"{rng.randrange(10 ** RECEIPT_DIGITS):0{RECEIPT_DIGITS}d}"
            if receipt not in self._issued_receipts:
                self._issued_receipts.add(receipt)
                return receipt

    def check_pin(self, login_id: str, pin: str) -> bool:
        stored = self._pin_hash.get(login_id)
        return stored is not None and hmac_mod.compare_digest(stored, self.hash_pin(pin))


def issue_credentials(
    registry: CredentialRegistry, pin_choice: Optional[str], rng: Random
) -> Credentials:
    return registry.issue(pin_choice, rng)
