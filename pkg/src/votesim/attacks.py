"""Adversary strategies, composed as tap handlers over the event network.

Every strategy writes to a shared manipulation ledger, which is the
ground truth all detection metrics are computed against. The point the
metrics make: complaints reaching the authorities understate manipulated
votes, by construction, for each of these strategies.

Strategies:

* vote rewrite       — compromised in-browser code swaps the ballot before
                       encryption and exfiltrates the intent + credentials.
* last-minute        — rewrite only inside a window before the close of
                       polls, when the read-back service can no longer be
                       reached in time.
* receipt-delay      — stall the receipt display; voters who leave never
                       get a receipt, so a fraudulent vote goes in with no
                       chance of a complaint; voters who wait get their
                       genuine vote.
* fake verification  — redirect a manipulated voter's verify call to an
                       attacker IVR that reads back the intent.
* clash              — misdirect registrations on the plain-HTTP gateway,
                       hand victims the credentials of a like-minded voter
                       who already cast an identical-by-prediction vote,
                       and spend each victim's real entitlement on an
                       attacker ballot.
"""

from dataclasses import dataclass, field
from random import Random
from typing import Optional

from .ballots import Ballot, ElectionManifest, encode_ballot
from .election import ComplaintEntry, ComplaintKind, VerifyLogEntry
from .envelope import Credentials
from .messages import CastIntent, C2Exfil, RegistrationRequest
from .netsim import Decision, Event, MitmTap, Simulator


class AttackError(Exception):
    pass


class NoSessionKey(AttackError):
    pass


class GatewayNotStripped(AttackError):
    pass


@dataclass
class C2Entry:
    voter_id: str
    credentials: Credentials
    intended: Ballot
    time: int


@dataclass
class PoolEntry:
    login_id: str
    pin: str
    receipt: str
    ballot: Ballot


@dataclass
class LedgerEntry:
    voter_id: str
    intended: Ballot
    submitted: Optional[Ballot]  # None when the vote was suppressed outright
    strategy: str
    cast_time: int
    masked: bool = False


@dataclass
class ClashVictim:
    voter_id: str
    handed_out: PoolEntry  # credentials the victim believes are his
    fresh: Credentials  # the entitlement the attacker spent
    predicted: Ballot


@dataclass
class AttackerState:
    """Shared adversary memory. The manipulation ledger is authoritative
    ground truth for every detection metric.
    """

    c2_log: list[C2Entry] = field(default_factory=list)
    clash_pool: dict[bytes, list[PoolEntry]] = field(default_factory=dict)
    stolen_registrations: list[RegistrationRequest] = field(default_factory=list)
    manipulation_ledger: list[LedgerEntry] = field(default_factory=list)
    clash_victims: dict[str, ClashVictim] = field(default_factory=dict)
    harvest_targets: dict[str, Credentials] = field(default_factory=dict)

    def c2_by_voter(self, voter_id: str) -> Optional[C2Entry]:
        for entry in reversed(self.c2_log):
            if entry.voter_id == voter_id:
                return entry
        return None

    def ledger_by_voter(self, voter_id: str) -> Optional[LedgerEntry]:
        for entry in reversed(self.manipulation_ledger):
            if entry.voter_id == voter_id:
                return entry
        return None


@dataclass
class DetectionMetrics:
    manipulated_count: int
    complaints_true: int
    complaints_false: int
    verify_attempts: int

    def __post_init__(self):
        if min(self.manipulated_count, self.complaints_true,
               self.complaints_false, self.verify_attempts) < 0:
            raise AttackError("counts must be nonnegative")
        if self.complaints_true > self.manipulated_count:
            raise AttackError("true complaints cannot exceed manipulated votes")

    @property
    def detection_ratio(self) -> Optional[float]:
        if self.manipulated_count == 0:
            return None
        return self.complaints_true / self.manipulated_count


def compute_metrics(
    ledger: list[LedgerEntry],
    complaints: list[ComplaintEntry],
    verify_log: list[VerifyLogEntry],
    strategy: Optional[str] = None,
) -> DetectionMetrics:
    """Exact counts against the ground-truth ledger, optionally restricted
    to a single strategy's entries.
    """
    entries = [e for e in ledger if strategy is None or e.strategy == strategy]
    manipulated = {e.voter_id for e in entries}
    true_count = 0
    false_count = 0
    for c in complaints:
        if c.kind is ComplaintKind.FALSE_COMPLAINT:
            false_count += 1
        elif c.voter_id in manipulated:
            true_count += 1
    attempts = sum(1 for v in verify_log
                   if strategy is None or v.voter_id in manipulated)
    return DetectionMetrics(
        manipulated_count=len(entries),
        complaints_true=true_count,
        complaints_false=false_count,
        verify_attempts=attempts,
    )


# --- in-browser rewrite strategies (hooks on the client casting step) ---

def inject_vote_rewrite(
    state: AttackerState,
    intent: CastIntent,
    attacker_ballot: Ballot,
    strategy: str = "vote_rewrite",
) -> Decision:
    """Swap the ballot before encryption and exfiltrate intent plus
    credentials. Needs a compromised session with recovered keys and a
    cast no earlier strategy has already claimed; anything else is
    forwarded untouched.
    """
    if intent.handled_by is not None:
        return Decision.forward()
    if not intent.session.compromised or intent.session.session_key is None:
        return Decision.forward()
    state.c2_log.append(C2Entry(
        voter_id=intent.voter_id, credentials=intent.credentials,
        intended=intent.ballot, time=intent.cast_time,
    ))
    state.manipulation_ledger.append(LedgerEntry(
        voter_id=intent.voter_id, intended=intent.ballot,
        submitted=attacker_ballot, strategy=strategy,
        cast_time=intent.cast_time,
    ))
    rewritten = CastIntent(
        voter_id=intent.voter_id, credentials=intent.credentials,
        ballot=attacker_ballot, cast_time=intent.cast_time,
        channel=intent.channel, session=intent.session,
        show_receipt=intent.show_receipt, handled_by=strategy,
    )
    return Decision.modify(rewritten)


def last_minute_rewrite(
    state: AttackerState,
    intent: CastIntent,
    attacker_ballot: Ballot,
    polls_close: int,
    safety_window: int,
) -> Decision:
    """Rewrite only votes cast inside the window before the deadline; the
    read-back service will be gone before those voters can call it.
    """
    if intent.cast_time < polls_close - safety_window:
        return Decision.forward()
    return inject_vote_rewrite(state, intent, attacker_ballot, strategy="last_minute")


def delay_receipt_gambit(
    state: AttackerState,
    intent: CastIntent,
    attacker_ballot: Ballot,
    p_leave_without_receipt: float,
    rng: Random,
) -> Decision:
    """Stall the receipt display. A voter who leaves never sees a receipt,
    so the fraudulent vote can never be verified or even looked up; a
    voter who waits gets the genuine vote and the real receipt. Either
    way the gambit claims the cast: once the attacker has chosen to give
    up on a waiter, a later strategy rewriting it anyway would hand the
    voter the very detection chance the gambit avoided.
    """
    if intent.handled_by is not None:
        return Decision.forward()
    if not intent.session.compromised or intent.session.session_key is None:
        return Decision.forward()
    leaves = rng.random() < p_leave_without_receipt
    if not leaves:
        kept = CastIntent(
            voter_id=intent.voter_id, credentials=intent.credentials,
            ballot=intent.ballot, cast_time=intent.cast_time,
            channel=intent.channel, session=intent.session,
            show_receipt=True, handled_by="receipt_delay",
        )
        return Decision.modify(kept)
    state.c2_log.append(C2Entry(
        voter_id=intent.voter_id, credentials=intent.credentials,
        intended=intent.ballot, time=intent.cast_time,
    ))
    state.manipulation_ledger.append(LedgerEntry(
        voter_id=intent.voter_id, intended=intent.ballot,
        submitted=attacker_ballot, strategy="receipt_delay",
        cast_time=intent.cast_time,
    ))
    rewritten = CastIntent(
        voter_id=intent.voter_id, credentials=intent.credentials,
        ballot=attacker_ballot, cast_time=intent.cast_time,
        channel=intent.channel, session=intent.session,
        show_receipt=False, handled_by="receipt_delay",
    )
    return Decision.modify(rewritten)


def fake_verification_redirect(
    state: AttackerState,
    voter_id: str,
    attacker_ivr: str,
    dials_genuine: bool,
) -> Decision:
    """Send a manipulated voter's verify call to the attacker's IVR, which
    will read back the intent it exfiltrated earlier. Voters who dial the
    genuine number anyway stay on the honest path.
    """
    entry = state.ledger_by_voter(voter_id)
    if entry is None or dials_genuine:
        return Decision.forward()
    entry.masked = True
    return Decision("modify", payload=None, dst=attacker_ivr)


# --- the clash registration front ---

@dataclass
class ClashOutcome:
    reused: bool
    handed_out: Credentials  # what the victim walks away with
    believed_receipt: Optional[str]
    fresh: Optional[Credentials]  # entitlement spent by the attacker, if any


def clash_register(
    state: AttackerState,
    request: RegistrationRequest,
    predicted: Ballot,
    manifest: ElectionManifest,
    register_entitlement,
    attacker_pin: str,
    gateway_stripped: bool,
    now: int,
    rng: Random,
) -> ClashOutcome:
    """Registration handler on the attacker's look-alike site.

    On a pool hit: the victim leaves with a previous like-minded voter's
    credentials and receipt (so every check the victim makes agrees with
    his intent exactly when the prediction was right), and the attacker
    quietly spends the victim's real entitlement on fresh credentials.
    On a miss: the victim is registered honestly, except the attacker
    assigns the PIN, so the eventual vote can be harvested into the pool.

    `register_entitlement(voter_id, pin, now) -> Credentials` performs the
    real registration.
    """
    if not gateway_stripped:
        raise GatewayNotStripped("registration gateway no longer serves plain HTTP")
    state.stolen_registrations.append(request)
    key = encode_ballot(predicted, manifest)
    pool = state.clash_pool.get(key, [])
    if pool:
        entry = pool[0]
        fresh = register_entitlement(request.voter_id, attacker_pin, now)
        victim = ClashVictim(
            voter_id=request.voter_id,
            handed_out=entry,
            fresh=fresh,
            predicted=predicted,
        )
        state.clash_victims[request.voter_id] = victim
        return ClashOutcome(
            reused=True,
            handed_out=Credentials(login_id=entry.login_id, pin=entry.pin),
            believed_receipt=entry.receipt,
            fresh=fresh,
        )
    creds = register_entitlement(request.voter_id, attacker_pin, now)
    state.harvest_targets[request.voter_id] = creds
    return ClashOutcome(reused=False, handed_out=creds, believed_receipt=None,
                        fresh=None)


def clash_note_cast(state: AttackerState, voter_id: str, credentials: Credentials,
                    receipt: str, ballot: Ballot, manifest: ElectionManifest) -> None:
    """Harvest a watched voter's completed cast into the clash pool, keyed
    by the exact canonical encoding of the ballot actually cast.
    """
    if voter_id not in state.harvest_targets:
        return
    key = encode_ballot(ballot, manifest)
    state.clash_pool.setdefault(key, []).append(PoolEntry(
        login_id=credentials.login_id, pin=credentials.pin,
        receipt=receipt, ballot=ballot,
    ))


def clash_suppress_cast(state: AttackerState, intent: CastIntent,
                        attacker_ballot: Ballot) -> Decision:
    """Client-side arm of the clash attack: a victim holding reused
    credentials must never reach the real voting server (a new vote would
    supersede the pooled one). The compromised client swallows the cast
    and displays the pooled receipt; the ledger charges the attacker
    ballot cast on the victim's entitlement.
    """
    victim = state.clash_victims.get(intent.voter_id)
    if victim is None or intent.handled_by is not None:
        return Decision.forward()
    state.manipulation_ledger.append(LedgerEntry(
        voter_id=intent.voter_id, intended=intent.ballot,
        submitted=attacker_ballot, strategy="clash",
        cast_time=intent.cast_time,
        masked=(intent.ballot == victim.handed_out.ballot),
    ))
    suppressed = CastIntent(
        voter_id=intent.voter_id, credentials=intent.credentials,
        ballot=intent.ballot, cast_time=intent.cast_time,
        channel=intent.channel, session=intent.session,
        suppress_submit=True, believed_receipt=victim.handed_out.receipt,
        handled_by="clash",
    )
    return Decision.modify(suppressed)


# --- tap factories (composition with the event network) ---

def make_rewrite_tap(
    state: AttackerState,
    attacker_ballot: Ballot,
    dst: str = "browser",
) -> MitmTap:
    def handler(event: Event, sim: Simulator) -> Decision:
        if not isinstance(event.payload, CastIntent):
            return Decision.forward()
        decision = inject_vote_rewrite(state, event.payload, attacker_ballot)
        if decision.kind == "modify":
            sim.schedule(event.time, event.src, "attacker-c2", C2Exfil(
                voter_id=event.payload.voter_id,
                credentials=event.payload.credentials,
                intended=event.payload.ballot,
            ))
        return decision

    return MitmTap(name="vote-rewrite", matcher=lambda s, d: d == dst, handler=handler)


def make_last_minute_tap(
    state: AttackerState,
    attacker_ballot: Ballot,
    polls_close: int,
    safety_window: int,
    dst: str = "browser",
) -> MitmTap:
    def handler(event: Event, sim: Simulator) -> Decision:
        if not isinstance(event.payload, CastIntent):
            return Decision.forward()
        decision = last_minute_rewrite(state, event.payload, attacker_ballot,
                                       polls_close, safety_window)
        if decision.kind == "modify":
            sim.schedule(event.time, event.src, "attacker-c2", C2Exfil(
                voter_id=event.payload.voter_id,
                credentials=event.payload.credentials,
                intended=event.payload.ballot,
            ))
        return decision

    return MitmTap(name="last-minute", matcher=lambda s, d: d == dst, handler=handler)


def make_receipt_delay_tap(
    state: AttackerState,
    attacker_ballot: Ballot,
    p_leave_without_receipt: float,
    rng: Random,
    dst: str = "browser",
) -> MitmTap:
    def handler(event: Event, sim: Simulator) -> Decision:
        if not isinstance(event.payload, CastIntent):
            return Decision.forward()
        return delay_receipt_gambit(state, event.payload, attacker_ballot,
                                    p_leave_without_receipt, rng)

    return MitmTap(name="receipt-delay", matcher=lambda s, d: d == dst, handler=handler)


def make_fake_ivr_tap(
    state: AttackerState,
    rng: Random,
    dial_genuine_rate: float = 0.0,
    attacker_ivr: str = "attacker-ivr",
    genuine_ivr: str = "verification-ivr",
) -> MitmTap:
    def handler(event: Event, sim: Simulator) -> Decision:
        voter_id = getattr(event.payload, "voter_id", None)
        if voter_id is None:
            return Decision.forward()
        dials_genuine = dial_genuine_rate > 0 and rng.random() < dial_genuine_rate
        decision = fake_verification_redirect(state, voter_id, attacker_ivr,
                                              dials_genuine)
        if decision.kind == "modify":
            decision.payload = event.payload
        return decision

    return MitmTap(name="fake-ivr", matcher=lambda s, d: d == genuine_ivr,
                   handler=handler)


def make_clash_cast_tap(
    state: AttackerState,
    attacker_ballot: Ballot,
    dst: str = "browser",
) -> MitmTap:
    def handler(event: Event, sim: Simulator) -> Decision:
        if not isinstance(event.payload, CastIntent):
            return Decision.forward()
        return clash_suppress_cast(state, event.payload, attacker_ballot)

    return MitmTap(name="clash-cast", matcher=lambda s, d: d == dst, handler=handler)
