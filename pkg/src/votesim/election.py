"""The voting services and the four-step protocol they implement.

1. register: voter gets an 8-digit login id and a 6-digit PIN.
2. cast: the client seals the ballot in a digital envelope; the core
   voting system stores it, forwards it to the verification service, and
   returns a 12-digit receipt number.
3. verify (optional): the voter phones the verification IVR with login
   id, PIN and receipt and hears the vote read back. The service shuts
   down at the close of polls.
4. receipt lookup (optional): a no-login service reporting whether a
   receipt is included in the count; outlives the close of polls.

The verification service holds its own unwrapping key and decrypts on
receipt, so read-back answers come from its copy, never from the core
store: the two can disagree, which is exactly what the auditor is for.
A ground-truth intent ledger records what every honest voter meant to
cast; soundness and detection metrics are all defined against it.
"""

from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Optional

from .ballots import Ballot, ElectionManifest, TallyResult, decode_ballot, tally_first_preferences
from .envelope import (
    CredentialRegistry,
    Credentials,
    DigitalEnvelope,
    KeyPair,
    ServerRole,
    open_envelope,
)


class ElectionError(Exception):
    pass


class PollsClosed(ElectionError):
    pass


class BadCredentials(ElectionError):
    pass


class ServiceClosed(ElectionError):
    pass


class NoSuchRecord(ElectionError):
    pass


class UnknownComponent(ElectionError):
    pass


class VoteChannel(Enum):
    WEB = "web"
    PHONE = "phone"
    POLLING_PLACE = "polling_place"


class ComplaintKind(Enum):
    MISMATCH_READ = "mismatch_read"
    MISSING_VOTE = "missing_vote"
    RECEIPT_ABSENT = "receipt_absent"
    FALSE_COMPLAINT = "false_complaint"


@dataclass(frozen=True)
class ElectionTimeline:
    polls_open: int
    polls_close: int
    receipt_service_end: int

    def __post_init__(self):
        if not self.polls_open < self.polls_close < self.receipt_service_end:
            raise ElectionError("timeline must order open < close < receipt end")

    @property
    def verification_shutdown(self) -> int:
        # the read-back service dies with the polls, by design of the
        # real protocol; this asymmetry is what last-minute attacks use
        return self.polls_close


@dataclass
class CoreVotingRecord:
    login_id: str
    envelope: DigitalEnvelope
    receipt: str
    cast_time: int
    channel: VoteChannel
    superseded: bool = False
    signature_valid: bool = True  # set false by a forging-incapable corrupt server


@dataclass
class VerificationRecord:
    login_id: str
    pin_hash: bytes
    receipt: str
    ballot: Ballot
    channel: VoteChannel
    caller_id: Optional[str] = None


@dataclass
class ComplaintEntry:
    voter_id: str
    time: int
    kind: ComplaintKind


@dataclass
class VerifyLogEntry:
    voter_id: str
    login_id: str
    time: int
    outcome: str  # "read_back", "closed", "no_record"
    matched_intent: Optional[bool] = None


class RegistrationService:
    """Issues credentials and keeps the name-to-login-id link (the link is
    itself privacy-relevant; see linkage_report).
    """

    def __init__(self, registry: CredentialRegistry, timeline: ElectionTimeline):
        self.registry = registry
        self.timeline = timeline
        self.links: dict[str, list[str]] = {}  # voter -> login ids, oldest first
        self.owner: dict[str, str] = {}  # login id -> voter

    def register(self, voter_id: str, pin_choice: Optional[str],
                 channel: VoteChannel, now: int, rng: Random) -> Credentials:
        if now >= self.timeline.polls_close:
            raise PollsClosed("registration after close of polls")
        creds = self.registry.issue(pin_choice, rng)
        self.links.setdefault(voter_id, []).append(creds.login_id)
        self.owner[creds.login_id] = voter_id
        return creds


class VerificationService:
    """Independent store fed by the core system; decrypts with its own
    wrapped-key secret as envelopes arrive.
    """

    def __init__(self, keypair: KeyPair, manifest: ElectionManifest,
                 timeline: ElectionTimeline):
        self.keypair = keypair
        self.manifest = manifest
        self.timeline = timeline
        self.records: dict[tuple[str, str], VerificationRecord] = {}

    def receive(self, login_id: str, pin_hash: bytes, receipt: str,
                envelope: DigitalEnvelope, channel: VoteChannel) -> None:
        ballot_bytes = open_envelope(envelope, ServerRole.VERIFICATION, self.keypair)
        ballot = decode_ballot(ballot_bytes, self.manifest)
        self.records[(login_id, receipt)] = VerificationRecord(
            login_id=login_id, pin_hash=pin_hash, receipt=receipt,
            ballot=ballot, channel=channel,
        )

    def verify_ivr(self, login_id: str, pin: str, receipt: str, now: int,
                   caller_id: Optional[str] = None) -> Ballot:
        if now >= self.timeline.verification_shutdown:
            raise ServiceClosed("verification service stopped at close of polls")
        record = self.records.get((login_id, receipt))
        if record is None or record.pin_hash != CredentialRegistry.hash_pin(pin):
            raise NoSuchRecord("no record for those credentials")
        if caller_id is not None:
            record.caller_id = caller_id
        return record.ballot


class CoreVotingSystem:
    """Collects sealed votes, authenticates credentials, assigns receipts,
    and forwards a copy to the verification service.
    """

    def __init__(self, registry: CredentialRegistry, timeline: ElectionTimeline,
                 verification: VerificationService):
        self.registry = registry
        self.timeline = timeline
        self.verification = verification
        self.records: list[CoreVotingRecord] = []
        self.by_receipt: dict[str, CoreVotingRecord] = {}
        self.by_login: dict[str, list[CoreVotingRecord]] = {}

    def cast(self, credentials: Credentials, envelope: DigitalEnvelope,
             channel: VoteChannel, now: int, rng: Random) -> str:
        if now >= self.timeline.polls_close:
            raise PollsClosed("polls are closed")
        if not self.registry.check_pin(credentials.login_id, credentials.pin):
            raise BadCredentials("login id and PIN do not match")
        receipt = self.registry.issue_receipt(rng)
        record = CoreVotingRecord(
            login_id=credentials.login_id, envelope=envelope, receipt=receipt,
            cast_time=now, channel=channel,
        )
        # same-credential revote immediately supersedes the older record
        for old in self.by_login.get(credentials.login_id, ()):
            old.superseded = True
        self.records.append(record)
        self.by_login.setdefault(credentials.login_id, []).append(record)
        self.by_receipt[receipt] = record
        self.verification.receive(
            credentials.login_id, CredentialRegistry.hash_pin(credentials.pin),
            receipt, envelope, channel,
        )
        return receipt


class ReceiptService:
    """Post-close inclusion check, no login required."""

    def __init__(self, cvs: CoreVotingSystem, registration: RegistrationService,
                 timeline: ElectionTimeline):
        self.cvs = cvs
        self.registration = registration
        self.timeline = timeline

    def lookup(self, receipt: str, now: int) -> bool:
        if now >= self.timeline.receipt_service_end:
            raise ServiceClosed("receipt service has ended")
        record = self.cvs.by_receipt.get(receipt)
        if record is None:
            return False
        return record is _latest_record_for_voter(
            self.cvs, self.registration, record.login_id)


def _latest_record_for_voter(cvs: CoreVotingSystem, registration: RegistrationService,
                             login_id: str) -> Optional[CoreVotingRecord]:
    voter = registration.owner.get(login_id)
    if voter is None:
        ids = [login_id]
    else:
        ids = registration.links.get(voter, [login_id])
    latest = None
    for lid in ids:
        for record in cvs.by_login.get(lid, ()):
            if latest is None or record.cast_time >= latest.cast_time:
                latest = record
    return latest


def dedup_and_count(
    cvs: CoreVotingSystem,
    registration: RegistrationService,
    election_key: KeyPair,
    manifest: ElectionManifest,
) -> tuple[TallyResult, list[Ballot]]:
    """Keep exactly the latest cast per voter (re-registrations collapse
    onto the voter, later casts win), mark the rest superseded, decrypt
    with the election key, and tally first preferences.
    """
    keep: dict[str, CoreVotingRecord] = {}
    for record in cvs.records:
        voter = registration.owner.get(record.login_id, f"?{record.login_id}")
        cur = keep.get(voter)
        if cur is None or record.cast_time >= cur.cast_time:
            keep[voter] = record
    kept = set(id(r) for r in keep.values())
    for record in cvs.records:
        record.superseded = id(record) not in kept
    ballots = []
    for voter in sorted(keep):
        record = keep[voter]
        ballot_bytes = open_envelope(record.envelope, ServerRole.ELECTION, election_key)
        ballots.append(decode_ballot(ballot_bytes, manifest))
    return tally_first_preferences(ballots, manifest), ballots


class AuditMode(Enum):
    HONEST = "honest"
    BLIND_EYE = "blind_eye"


@dataclass(frozen=True)
class Inconsistency:
    login_id: str
    receipt: str
    kind: str  # "ballot_mismatch", "missing_verification", "missing_core", "bad_signature"


@dataclass
class AuditReport:
    mode: AuditMode
    inconsistencies: list[Inconsistency]


def audit_reconcile(
    mode: AuditMode,
    cvs: CoreVotingSystem,
    verification: VerificationService,
    election_key: KeyPair,
    manifest: ElectionManifest,
) -> AuditReport:
    """Reconcile the two stores. Honest mode reports every divergence;
    blind-eye mode reports nothing no matter what (the corrupt-auditor
    branch), which is why an empty report proves little on its own.
    """
    if mode is AuditMode.BLIND_EYE:
        return AuditReport(mode=mode, inconsistencies=[])
    found = []
    seen = set()
    for record in cvs.records:
        key = (record.login_id, record.receipt)
        seen.add(key)
        vrec = verification.records.get(key)
        if vrec is None:
            found.append(Inconsistency(record.login_id, record.receipt,
                                       "missing_verification"))
            continue
        ballot_bytes = open_envelope(record.envelope, ServerRole.ELECTION, election_key)
        ballot = decode_ballot(ballot_bytes, manifest)
        if ballot != vrec.ballot:
            found.append(Inconsistency(record.login_id, record.receipt,
                                       "ballot_mismatch"))
        elif not record.signature_valid:
            found.append(Inconsistency(record.login_id, record.receipt,
                                       "bad_signature"))
    for key in verification.records:
        if key not in seen:
            found.append(Inconsistency(key[0], key[1], "missing_core"))
    found.sort(key=lambda inc: (inc.login_id, inc.receipt, inc.kind))
    return AuditReport(mode=mode, inconsistencies=found)


# --- privacy linkage analysis ---

class Component(Enum):
    REGISTRATION = "registration"
    VERIFICATION_SERVER = "verification_server"
    VOICE_SERVER = "voice_server"
    AUDITOR = "auditor"
    POLLING_PLACE_MACHINE = "polling_place_machine"
    PHONE_TAP_CALLER_ID = "phone_tap_caller_id"


@dataclass
class DataHoldings:
    """What each component stores, reduced to identity/login/ballot pairs.
    The linkage computation is pure set joins over these relations; no
    cryptanalysis is involved.
    """

    identity_to_login: dict[Component, set[tuple[str, str]]] = field(default_factory=dict)
    login_to_ballot: dict[Component, set[tuple[str, Ballot]]] = field(default_factory=dict)
    identity_to_ballot: dict[Component, set[tuple[str, Ballot]]] = field(default_factory=dict)


def collect_holdings(
    registration: RegistrationService,
    verification: VerificationService,
    cvs: CoreVotingSystem,
    election_key: KeyPair,
    manifest: ElectionManifest,
    phone_tap_enabled: bool = True,
) -> DataHoldings:
    h = DataHoldings()
    h.identity_to_login[Component.REGISTRATION] = {
        (voter, login) for voter, logins in registration.links.items() for login in logins
    }
    ver_votes = {(rec.login_id, rec.ballot) for rec in verification.records.values()}
    h.login_to_ballot[Component.VERIFICATION_SERVER] = ver_votes
    # a caller who reveals a phone identity hands the verification server
    # the whole chain by itself
    h.identity_to_login[Component.VERIFICATION_SERVER] = {
        (rec.caller_id, rec.login_id)
        for rec in verification.records.values() if rec.caller_id is not None
    }
    h.login_to_ballot[Component.VOICE_SERVER] = {
        (rec.login_id, rec.ballot)
        for rec in verification.records.values() if rec.channel is VoteChannel.PHONE
    }
    # the auditor sees both stores' contents during reconciliation
    auditor_votes = set(ver_votes)
    for record in cvs.records:
        ballot_bytes = open_envelope(record.envelope, ServerRole.ELECTION, election_key)
        auditor_votes.add((record.login_id, decode_ballot(ballot_bytes, manifest)))
    h.login_to_ballot[Component.AUDITOR] = auditor_votes
    # polling-place machines register and collect on the same box
    polling_direct = set()
    for record in cvs.records:
        if record.channel is VoteChannel.POLLING_PLACE:
            voter = registration.owner.get(record.login_id)
            if voter is not None:
                ballot_bytes = open_envelope(record.envelope, ServerRole.ELECTION,
                                             election_key)
                polling_direct.add((voter, decode_ballot(ballot_bytes, manifest)))
    h.identity_to_ballot[Component.POLLING_PLACE_MACHINE] = polling_direct
    # a tap on the phone network hears ballots read back, and learns who is
    # calling exactly when the line carries a caller id
    tapped = set()
    if phone_tap_enabled:
        for rec in verification.records.values():
            if rec.caller_id is not None:
                tapped.add((rec.caller_id, rec.ballot))
    h.identity_to_ballot[Component.PHONE_TAP_CALLER_ID] = tapped
    return h


def linkage_report(
    compromised: set[Component],
    holdings: DataHoldings,
) -> set[tuple[str, Ballot]]:
    """Voter-to-decrypted-ballot pairs recoverable from the union of the
    compromised components' stored fields.
    """
    for comp in compromised:
        if not isinstance(comp, Component):
            raise UnknownComponent(f"unknown component {comp!r}")
    id_login: set[tuple[str, str]] = set()
    login_ballot: set[tuple[str, Ballot]] = set()
    linked: set[tuple[str, Ballot]] = set()
    for comp in compromised:
        id_login |= holdings.identity_to_login.get(comp, set())
        login_ballot |= holdings.login_to_ballot.get(comp, set())
        linked |= holdings.identity_to_ballot.get(comp, set())
    by_login: dict[str, set[str]] = {}
    for voter, login in id_login:
        by_login.setdefault(login, set()).add(voter)
    for login, ballot in login_ballot:
        for voter in by_login.get(login, ()):
            linked.add((voter, ballot))
    return linked


# --- ground truth ---

@dataclass
class IntentEntry:
    voter_id: str
    intended: Ballot
    cast_time: int
    channel: VoteChannel
    login_id: Optional[str] = None
    receipt: Optional[str] = None


class IntentLedger:
    """Out-of-band record of what every voter meant to do. The real system
    has nothing like it; the simulator needs it to define soundness.
    """

    def __init__(self):
        self.entries: dict[str, IntentEntry] = {}

    def record(self, entry: IntentEntry) -> None:
        self.entries[entry.voter_id] = entry

    def intent_ballots(self) -> list[Ballot]:
        return [e.intended for _, e in sorted(self.entries.items())]

    def intent_tally(self, manifest: ElectionManifest) -> TallyResult:
        return tally_first_preferences(self.intent_ballots(), manifest)
