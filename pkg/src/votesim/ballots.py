"""Preferential ballots: structure, canonical encoding, voter behaviour.

The election has two races. The assembly race is a plain candidate
ordering. The council race is cast either above the line (an ordering of
party groups) or below the line (an ordering of individual candidates,
subject to a minimum preference count).

Wire format of a ballot (all integers big-endian):

    byte 0        council mode, 0x00 = above the line, 0x01 = below
    u16           number of assembly preferences, then one u16 index
                  into manifest.assembly_candidates per preference
    u16           number of council preferences, then one u16 index
                  into manifest.groups (ATL) or manifest.candidates (BTL)

The encoding is deterministic and injective for a fixed manifest, which
is what the envelope layer and the clash-pool keying rely on.
"""

from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Optional


class BallotError(Exception):
    pass


class InvalidBallot(BallotError):
    """Ballot violates manifest invariants (unknown ids, duplicates, ...)."""


class MalformedEncoding(BallotError):
    """Byte sequence is not a well-formed ballot encoding."""


class CouncilMode(Enum):
    ABOVE_THE_LINE = 0
    BELOW_THE_LINE = 1


@dataclass(frozen=True)
class Ballot:
    assembly_prefs: tuple[str, ...]
    council_mode: CouncilMode
    council_prefs: tuple[str, ...]


@dataclass(frozen=True)
class ElectionManifest:
    """Race definitions plus the per-group how-to-vote cards.

    `candidates` maps candidate id -> group id (or None for ungrouped
    candidates). Cards are full ballots published by each group; the
    behavioural model reproduces them exactly for card-following voters.
    """

    groups: tuple[str, ...]
    candidates: dict[str, Optional[str]]
    assembly_candidates: tuple[str, ...]
    min_below_line_prefs: int = 1
    cards: dict[str, Ballot] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.groups)) != len(self.groups):
            raise InvalidBallot("duplicate group ids in manifest")
        if not self.groups or not self.candidates or not self.assembly_candidates:
            raise InvalidBallot("manifest races must be non-empty")
        if self.min_below_line_prefs < 1:
            raise InvalidBallot("min_below_line_prefs must be >= 1")
        known = set(self.groups)
        for cand, grp in self.candidates.items():
            if grp is not None and grp not in known:
                raise InvalidBallot(f"candidate {cand} references unknown group {grp}")
        for grp, card in self.cards.items():
            if grp not in known:
                raise InvalidBallot(f"card for unknown group {grp}")
            validate_ballot(card, self)

    @property
    def candidate_ids(self) -> tuple[str, ...]:
        return tuple(self.candidates.keys())

    def group_of(self, candidate_id: str) -> Optional[str]:
        return self.candidates[candidate_id]


@dataclass(frozen=True)
class VoterProfile:
    """Behavioural parameters for one simulated voter."""

    party_leaning: str
    follows_card: bool
    p_verify_ivr: float
    p_check_receipt_only: float
    p_false_complaint: float
    cast_time: int

    def __post_init__(self):
        for name in ("p_verify_ivr", "p_check_receipt_only", "p_false_complaint"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of [0,1]")
        if self.p_verify_ivr + self.p_check_receipt_only > 1.0 + 1e-12:
            raise ValueError("p_verify_ivr + p_check_receipt_only must be <= 1")


@dataclass(frozen=True)
class BehaviorModel:
    """Population-level behaviour knobs used when drawing profiles."""

    card_rate: float = 0.40
    p_verify_ivr: float = 0.2
    p_check_receipt_only: float = 0.3
    p_false_complaint: float = 0.0
    leaning_weights: Optional[dict[str, float]] = None


def make_manifest(
    num_groups: int = 24,
    num_candidates: int = 394,
    num_assembly: int = 24,
    min_below_line_prefs: int = 1,
) -> ElectionManifest:
    """Synthetic manifest with round-robin group membership and one
    single-first-preference card per group (the pattern that recurs most
    often in practice).
    """
    groups = tuple(f"g{i + 1:02d}" for i in range(num_groups))
    candidates = {
        f"c{i + 1:03d}": groups[i % num_groups] for i in range(num_candidates)
    }
    assembly = tuple(f"a{i + 1:02d}" for i in range(num_assembly))
    cards = {}
    for i, grp in enumerate(groups):
        cards[grp] = Ballot(
            assembly_prefs=(assembly[i % num_assembly],),
            council_mode=CouncilMode.ABOVE_THE_LINE,
            council_prefs=(grp,),
        )
    return ElectionManifest(
        groups=groups,
        candidates=candidates,
        assembly_candidates=assembly,
        min_below_line_prefs=min_below_line_prefs,
        cards=cards,
    )


def validate_ballot(ballot: Ballot, manifest: ElectionManifest) -> None:
    """Raise InvalidBallot unless `ballot` is well-formed for `manifest`."""
    if len(set(ballot.assembly_prefs)) != len(ballot.assembly_prefs):
        raise InvalidBallot("duplicate assembly preferences")
    if len(set(ballot.council_prefs)) != len(ballot.council_prefs):
        raise InvalidBallot("duplicate council preferences")
    if not ballot.assembly_prefs and not ballot.council_prefs:
        raise InvalidBallot("empty ballot")
    assembly_known = set(manifest.assembly_candidates)
    for cid in ballot.assembly_prefs:
        if cid not in assembly_known:
            raise InvalidBallot(f"unknown assembly candidate {cid}")
    if ballot.council_mode is CouncilMode.ABOVE_THE_LINE:
        known = set(manifest.groups)
        for gid in ballot.council_prefs:
            if gid not in known:
                raise InvalidBallot(f"unknown group {gid}")
    else:
        known = set(manifest.candidates)
        for cid in ballot.council_prefs:
            if cid not in known:
                raise InvalidBallot(f"unknown candidate {cid}")
        if ballot.council_prefs and len(ballot.council_prefs) < manifest.min_below_line_prefs:
            raise InvalidBallot(
                f"below-the-line ballot needs >= {manifest.min_below_line_prefs} preferences"
            )


def _u16(value: int) -> bytes:
    return value.to_bytes(2, "big")


def encode_ballot(ballot: Ballot, manifest: ElectionManifest) -> bytes:
    """Canonical byte encoding; see the module docstring for the format."""
    validate_ballot(ballot, manifest)
    assembly_index = {c: i for i, c in enumerate(manifest.assembly_candidates)}
    if ballot.council_mode is CouncilMode.ABOVE_THE_LINE:
        council_index = {g: i for i, g in enumerate(manifest.groups)}
    else:
        council_index = {c: i for i, c in enumerate(manifest.candidates)}
    out = bytearray()
    out.append(ballot.council_mode.value)
    out += _u16(len(ballot.assembly_prefs))
    for cid in ballot.assembly_prefs:
        out += _u16(assembly_index[cid])
    out += _u16(len(ballot.council_prefs))
    for pid in ballot.council_prefs:
        out += _u16(council_index[pid])
    return bytes(out)


def decode_ballot(data: bytes, manifest: ElectionManifest) -> Ballot:
    """Inverse of encode_ballot. MalformedEncoding for structural damage,
    InvalidBallot for well-formed bytes that reference impossible ballots.
    """
    if len(data) < 1:
        raise MalformedEncoding("empty input")
    mode_byte = data[0]
    if mode_byte not in (0, 1):
        raise MalformedEncoding(f"unknown mode byte {mode_byte:#04x}")
    mode = CouncilMode(mode_byte)
    pos = 1

    def take_u16() -> int:
        nonlocal pos
        if pos + 2 > len(data):
            raise MalformedEncoding("truncated encoding")
        v = int.from_bytes(data[pos:pos + 2], "big")
        pos += 2
        return v

    n_assembly = take_u16()
    assembly_idx = [take_u16() for _ in range(n_assembly)]
    n_council = take_u16()
    council_idx = [take_u16() for _ in range(n_council)]
    if pos != len(data):
        raise MalformedEncoding("trailing bytes after ballot")

    for i in assembly_idx:
        if i >= len(manifest.assembly_candidates):
            raise InvalidBallot(f"assembly index {i} out of range")
    if mode is CouncilMode.ABOVE_THE_LINE:
        pool: tuple[str, ...] = manifest.groups
    else:
        pool = manifest.candidate_ids
    for i in council_idx:
        if i >= len(pool):
            raise InvalidBallot(f"council index {i} out of range")

    ballot = Ballot(
        assembly_prefs=tuple(manifest.assembly_candidates[i] for i in assembly_idx),
        council_mode=mode,
        council_prefs=tuple(pool[i] for i in council_idx),
    )
    validate_ballot(ballot, manifest)
    return ballot


def draw_profile(
    behavior: BehaviorModel,
    manifest: ElectionManifest,
    rng: Random,
    cast_time: int = 0,
    leaning: Optional[str] = None,
) -> VoterProfile:
    """Draw one voter profile. Leaning is sampled from the configured
    weights (uniform by default) unless fixed by the caller.
    """
    if leaning is None:
        if behavior.leaning_weights:
            groups = list(behavior.leaning_weights.keys())
            weights = [behavior.leaning_weights[g] for g in groups]
            leaning = rng.choices(groups, weights=weights, k=1)[0]
        else:
            leaning = rng.choice(manifest.groups)
    return VoterProfile(
        party_leaning=leaning,
        follows_card=rng.random() < behavior.card_rate,
        p_verify_ivr=behavior.p_verify_ivr,
        p_check_receipt_only=behavior.p_check_receipt_only,
        p_false_complaint=behavior.p_false_complaint,
        cast_time=cast_time,
    )


def draw_ballot(profile: VoterProfile, manifest: ElectionManifest, rng: Random) -> Ballot:
    """Card followers cast their group's card exactly. Everyone else gets
    a random valid above-the-line ballot whose first council preference is
    their leaning (a modelling assumption, surfaced in scenario reports).
    """
    if profile.follows_card:
        card = manifest.cards.get(profile.party_leaning)
        if card is None:
            raise InvalidBallot(f"no card configured for group {profile.party_leaning}")
        return card
    others = [g for g in manifest.groups if g != profile.party_leaning]
    extra = rng.randint(0, len(others))
    tail = rng.sample(others, extra)
    n_assembly = rng.randint(1, min(4, len(manifest.assembly_candidates)))
    assembly = tuple(rng.sample(manifest.assembly_candidates, n_assembly))
    return Ballot(
        assembly_prefs=assembly,
        council_mode=CouncilMode.ABOVE_THE_LINE,
        council_prefs=(profile.party_leaning, *tail),
    )


@dataclass(frozen=True)
class TallyResult:
    counts: dict[str, int]
    margin: Optional[int]
    winner: Optional[str]
    runner_up: Optional[str]


def first_preference_key(ballot: Ballot, manifest: ElectionManifest) -> Optional[str]:
    """Group credited with the ballot's first council preference.

    Below-the-line ballots count toward the group of their first-ranked
    candidate; ungrouped candidates count under their own id.
    """
    if not ballot.council_prefs:
        return None
    first = ballot.council_prefs[0]
    if ballot.council_mode is CouncilMode.ABOVE_THE_LINE:
        return first
    grp = manifest.group_of(first)
    return grp if grp is not None else first


def tally_first_preferences(ballots: list[Ballot], manifest: ElectionManifest) -> TallyResult:
    """First-preference counts for the council race plus the top-two margin.

    The margin is the full count gap between first and second place; absent
    when no ballot carries a council vote. A single-horse race reports its
    full count as the margin.
    """
    counts: dict[str, int] = {}
    for b in ballots:
        key = first_preference_key(b, manifest)
        if key is None:
            continue
        counts[key] = counts.get(key, 0) + 1
    if not counts:
        return TallyResult(counts={}, margin=None, winner=None, runner_up=None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    winner, top = ranked[0]
    if len(ranked) > 1:
        runner_up, second = ranked[1]
    else:
        runner_up, second = None, 0
    return TallyResult(counts=counts, margin=top - second, winner=winner, runner_up=runner_up)
