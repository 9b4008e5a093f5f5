"""Typed payloads carried by network events.

Everything that crosses a tap point is one of these. `trace_fields` keeps
trace lines stable and seed-reproducible (no object reprs, no addresses).
"""

from dataclasses import dataclass, field
from typing import Optional

from .ballots import Ballot
from .election import VoteChannel
from .envelope import Credentials, DigitalEnvelope


@dataclass
class SessionContext:
    """What the adversary ended up with for one voter's browsing session."""

    compromised: bool = False
    session_key: Optional[bytes] = None
    via: Optional[str] = None  # which downgrade delivered the compromise
    simulated_delay: int = 0


@dataclass
class RegistrationRequest:
    voter_id: str
    pin_choice: Optional[str]
    channel: VoteChannel

    def trace_fields(self):
        return {"voter": self.voter_id, "channel": self.channel.value}


@dataclass
class RegistrationReply:
    voter_id: str
    credentials: Credentials

    def trace_fields(self):
        return {"voter": self.voter_id, "login": self.credentials.login_id}


@dataclass
class CastIntent:
    """Client-side casting step, before the envelope is sealed. Taps that
    match it model injected in-browser code: they see and may replace the
    ballot while it is still plaintext.
    """

    voter_id: str
    credentials: Credentials
    ballot: Ballot
    cast_time: int
    channel: VoteChannel
    session: SessionContext = field(default_factory=SessionContext)
    show_receipt: bool = True
    suppress_submit: bool = False
    believed_receipt: Optional[str] = None  # what the client displays instead
    handled_by: Optional[str] = None  # first strategy to claim this cast wins

    def trace_fields(self):
        return {
            "voter": self.voter_id,
            "t": self.cast_time,
            "compromised": self.session.compromised,
        }


@dataclass
class CastTrigger:
    """Self-addressed wake-up that starts a voter's casting flow once
    credentials and session state are current.
    """

    voter_id: str

    def trace_fields(self):
        return {"voter": self.voter_id}


@dataclass
class CastSubmission:
    voter_id: str
    credentials: Credentials
    envelope: DigitalEnvelope
    channel: VoteChannel

    def to_bytes(self) -> bytes:
        env = self.envelope.to_bytes()
        head = "|".join([self.voter_id, self.credentials.login_id,
                         self.credentials.pin, self.channel.value]).encode()
        return len(head).to_bytes(2, "big") + head + env

    @classmethod
    def from_bytes(cls, data: bytes) -> "CastSubmission":
        n = int.from_bytes(data[:2], "big")
        head = data[2:2 + n].decode()
        voter_id, login_id, pin, channel = head.split("|")
        envelope = DigitalEnvelope.from_bytes(data[2 + n:])
        return cls(voter_id=voter_id,
                   credentials=Credentials(login_id=login_id, pin=pin),
                   envelope=envelope, channel=VoteChannel(channel))

    def trace_fields(self):
        return {"voter": self.voter_id, "login": self.credentials.login_id}


@dataclass
class SecureRecord:
    """Ciphertext record on an HTTPS path. Taps see only this; flipping
    bits without the session key trips the record MAC at the receiver.
    """

    session_id: str
    seq: int
    blob: bytes

    def trace_fields(self):
        return {"session": self.session_id, "seq": self.seq,
                "blob": self.blob[:8].hex()}


@dataclass
class PhoneCast:
    """Phone-channel vote: choices travel in the clear over the voice line
    and the voice server builds the envelope itself.
    """

    voter_id: str
    credentials: Credentials
    ballot: Ballot

    def trace_fields(self):
        return {"voter": self.voter_id, "login": self.credentials.login_id}


@dataclass
class VerifyCall:
    voter_id: str
    login_id: str
    pin: str
    receipt: str
    caller_id: Optional[str] = None

    def trace_fields(self):
        return {"voter": self.voter_id, "login": self.login_id}


@dataclass
class ReceiptQuery:
    voter_id: str
    receipt: str

    def trace_fields(self):
        return {"voter": self.voter_id, "receipt": self.receipt}


@dataclass
class C2Exfil:
    """Stolen credentials plus the intended vote, phoning home."""

    voter_id: str
    credentials: Credentials
    intended: Ballot

    def trace_fields(self):
        return {"voter": self.voter_id, "login": self.credentials.login_id}


@dataclass
class ThirdPartyFetch:
    """The background resource load that drags a weak third-party TLS
    endpoint into every voting session.
    """

    voter_id: str
    patched_client: bool

    def trace_fields(self):
        return {"voter": self.voter_id, "patched": self.patched_client}
