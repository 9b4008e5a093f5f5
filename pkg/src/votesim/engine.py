"""Scenario engine: builds the network, services, voters and adversary
from a config, runs the event loop, and collects everything the report
needs. One run is a pure function of (config, seed).

Endpoint map:

    voter[i]  -> registration-gateway -> registration        (register)
    voter[i]  -> piwik                                       (script fetch)
    voter[i]  -> browser -> cvs                              (cast)
    voter[i]  -> voice-server -> cvs                         (phone cast)
    voter[i]  -> verification-ivr                            (read-back)
    voter[i]  -> receipt-service                             (inclusion)
    attacker-c2, attacker-ivr, attacker-registration         (adversary)

The "browser" hop is the in-device casting step: taps matching it play
the role of injected client-side code and see the ballot before it is
sealed. Everything voter-to-server rides the configured channel policy.
"""

import hashlib
import math
from dataclasses import dataclass, field
from random import Random
from typing import Optional

from . import attacks as atk
from . import ballots as bal
from . import election as el
from . import envelope as env
from . import minitls as tls
from . import netsim
from .config import ScenarioConfig
from .messages import (
    CastIntent,
    CastSubmission,
    CastTrigger,
    PhoneCast,
    ReceiptQuery,
    RegistrationReply,
    RegistrationRequest,
    SecureRecord,
    SessionContext,
    ThirdPartyFetch,
    VerifyCall,
)

FACTORING_SIM_SECONDS = 7 * 3600  # simulated cost of factoring one export modulus
REGISTRATION_LEAD = 1800
FETCH_LEAD_PLAIN = 10
FETCH_LEAD_DLOG = tls.DLOG_INDIVIDUAL_DELAY + 30


@dataclass
class VoterState:
    voter_id: str
    index: int
    rng: Random
    profile: bal.VoterProfile
    intended: bal.Ballot
    channel: el.VoteChannel
    reg_time: int
    fetch_time: int
    # pre-drawn behaviour, so paired runs stay aligned
    patched: bool = True
    controlled: bool = False
    granted: bool = False
    verifies: bool = False
    checks_receipt: bool = False
    false_complainer: bool = False
    dials_genuine: bool = False
    reveals_caller_id: bool = False
    suspicious: bool = False  # would notice an assigned-not-chosen PIN
    verify_delay: int = 600
    # evolving state (the session object is mutated in place so events
    # holding a reference observe attack outcomes)
    session: SessionContext = field(default_factory=SessionContext)
    credentials: Optional[env.Credentials] = None
    believed_credentials: Optional[env.Credentials] = None
    believed_receipt: Optional[str] = None
    actual_receipt: Optional[str] = None
    submitted: Optional[bal.Ballot] = None
    show_receipt: bool = True
    cast_ok: bool = False
    complained: bool = False


@dataclass
class FreakOracle:
    opened_at: int
    usable_from: int
    usable_until: int
    conn: tls.ServerConnection
    factored_key: Optional[tls.RsaKey]


class ScenarioEngine:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        seed = config.seed
        self.rng_setup = Random(f"{seed}:setup")
        self.rng_services = Random(f"{seed}:services")
        self.rng_attacker = Random(f"{seed}:attacker")

        self.manifest = bal.make_manifest(
            num_groups=config.manifest.groups,
            num_candidates=config.manifest.candidates,
            num_assembly=config.manifest.assembly,
            min_below_line_prefs=config.manifest.min_below_line_prefs,
        )
        if config.manifest.cards:
            merged = dict(self.manifest.cards)
            for grp, card in config.manifest.cards.items():
                mode = (bal.CouncilMode.ABOVE_THE_LINE
                        if card.get("mode", "atl") == "atl"
                        else bal.CouncilMode.BELOW_THE_LINE)
                merged[grp] = bal.Ballot(
                    assembly_prefs=tuple(card["assembly"]),
                    council_mode=mode,
                    council_prefs=tuple(card["council"]),
                )
            self.manifest = bal.ElectionManifest(
                groups=self.manifest.groups,
                candidates=self.manifest.candidates,
                assembly_candidates=self.manifest.assembly_candidates,
                min_below_line_prefs=self.manifest.min_below_line_prefs,
                cards=merged,
            )
        self.timeline = el.ElectionTimeline(
            polls_open=config.timeline.polls_open,
            polls_close=config.timeline.polls_close,
            receipt_service_end=config.timeline.receipt_service_end,
        )
        self.params = env.gen_params(config.crypto.envelope_bits, self.rng_setup)
        self.election_key = env.gen_keypair(self.params, self.rng_setup)
        self.verification_key = env.gen_keypair(self.params, self.rng_setup)

        self.registry = env.CredentialRegistry()
        self.registration = el.RegistrationService(self.registry, self.timeline)
        self.verification = el.VerificationService(self.verification_key,
                                                   self.manifest, self.timeline)
        self.cvs = el.CoreVotingSystem(self.registry, self.timeline, self.verification)
        self.receipt_service = el.ReceiptService(self.cvs, self.registration,
                                                 self.timeline)

        self.intents = el.IntentLedger()
        self.complaints: list[el.ComplaintEntry] = []
        self.verify_log: list[el.VerifyLogEntry] = []
        self.attacker = atk.AttackerState()
        self.session_keys: dict[str, bytes] = {}
        self.attack_events: list[dict] = []
        self.freak_attempts = 0
        self.freak_successes = 0
        self.logjam_attempts = 0
        self.logjam_successes = 0
        self.record_failures = 0

        target = config.attacks.target_group or self.manifest.groups[1 % len(self.manifest.groups)]
        if target not in self.manifest.cards:
            raise ValueError(f"attacks.target_group {target!r} not in manifest")
        self.attacker_ballot = self.manifest.cards[target]
        self.target_group = target

        self._tls_clock = 0
        self.piwik_server: Optional[tls.TlsServer] = None
        self.dlog_table: Optional[tls.PrecompTable] = None
        self.freak_oracles: list[FreakOracle] = []
        if config.tls.enabled:
            self._build_tls()

        self.sim = netsim.Simulator(start_time=min(0, self.timeline.polls_open))
        self.voters: dict[str, VoterState] = {}
        self._build_network()
        self._build_voters()
        self._install_attack_taps()

    # --- construction ---

    def _build_tls(self) -> None:
        cfg = self.config.tls
        suites = frozenset(tls.CipherSuite(s) for s in cfg.third_party_suites)
        server_cfg = tls.make_server_config(
            "piwik", suites, self.rng_setup,
            rotation_period=cfg.rotation_period,
            export_bits=cfg.export_bits,
        )
        self.piwik_server = tls.TlsServer(server_cfg, clock=lambda: self._tls_clock)
        if self.config.attacks.logjam.enabled and server_cfg.export_dhe_params is not None:
            # fixed up-front cost, paid before polls open and reused for
            # every connection that shares the group
            self.dlog_table = tls.dlog_precompute(server_cfg.export_dhe_params)
        if self.config.attacks.freak.enabled:
            self._build_freak_oracles()

    def _freak_window(self) -> tuple[int, int]:
        w = self.config.attacks.freak
        start = w.window_start if w.window_start is not None else self.timeline.polls_open
        end = w.window_end if w.window_end is not None else self.timeline.polls_close
        return start, end

    def _build_freak_oracles(self) -> None:
        """Staggered long-lived connections: each is opened, its pinned key
        factored (seven simulated hours), then used as a signature oracle
        until the connection dies.
        """
        lifetime = self.config.tls.oracle_connection_lifetime
        if lifetime <= FACTORING_SIM_SECONDS:
            raise ValueError("oracle connection lifetime shorter than factoring time")
        start, end = self._freak_window()
        open_at = start - FACTORING_SIM_SECONDS
        while open_at + FACTORING_SIM_SECONDS < end:
            self._tls_clock = open_at
            conn = self.piwik_server.connect()
            factored = None
            if tls.CipherSuite.RSA_EXPORT in conn.config.enabled_suites:
                n = conn.pinned_temp_key.n
                try:
                    p, q = tls.factor_export_modulus(n, self.rng_attacker)
                    lam = math.lcm(p - 1, q - 1)
                    factored = tls.RsaKey(n=n, e=conn.pinned_temp_key.e,
                                          d=pow(conn.pinned_temp_key.e, -1, lam))
                except tls.NotFactorable:
                    factored = None
            self.freak_oracles.append(FreakOracle(
                opened_at=open_at,
                usable_from=open_at + FACTORING_SIM_SECONDS,
                usable_until=open_at + lifetime,
                conn=conn,
                factored_key=factored,
            ))
            open_at += lifetime - FACTORING_SIM_SECONDS
        self._tls_clock = self.timeline.polls_open

    def _active_oracle(self, now: int) -> Optional[FreakOracle]:
        for oracle in self.freak_oracles:
            if oracle.usable_from <= now < oracle.usable_until:
                return oracle
        return None

    def _build_network(self) -> None:
        sim = self.sim
        cfgs = self.config
        https = None
        if self.piwik_server is not None:
            https = netsim.Https(self.piwik_server.config)
        gateway_policy = (netsim.PlainHttp() if cfgs.attacks.gateway_stripped
                          else netsim.Https(None))
        sim.add_endpoint(netsim.Endpoint(
            "registration-gateway", {"voter*": gateway_policy},
            handler=self._on_gateway))
        sim.add_endpoint(netsim.Endpoint(
            "registration", {"*": netsim.Https(None)}, handler=self._on_registration))
        sim.add_endpoint(netsim.Endpoint(
            "attacker-registration", {}, handler=self._on_attacker_registration))
        sim.add_endpoint(netsim.Endpoint(
            "piwik", {"voter*": https or netsim.Https(None)}, handler=self._on_piwik))
        sim.add_endpoint(netsim.Endpoint("browser", {}, handler=self._on_browser))
        sim.add_endpoint(netsim.Endpoint(
            "cvs", {"voter*": netsim.Https(None)}, handler=self._on_cvs))
        sim.add_endpoint(netsim.Endpoint(
            "voice-server", {"voter*": netsim.PhoneIvr()}, handler=self._on_voice))
        sim.add_endpoint(netsim.Endpoint(
            "verification-ivr", {"voter*": netsim.PhoneIvr()}, handler=self._on_ivr))
        sim.add_endpoint(netsim.Endpoint(
            "attacker-ivr", {}, handler=self._on_attacker_ivr))
        sim.add_endpoint(netsim.Endpoint(
            "receipt-service", {"voter*": netsim.Https(None)},
            handler=self._on_receipt_service))
        sim.add_endpoint(netsim.Endpoint("attacker-c2", {}, handler=None))
        sim.add_endpoint(netsim.Endpoint("voter*", {}, handler=self._on_voter))

    def _draw_leanings(self) -> list[str]:
        """Quota mode fixes group counts exactly; otherwise leanings are
        sampled per voter from the weights.
        """
        counts = self.config.behavior.leaning_counts
        n = self.config.voters
        if counts is None:
            return [None] * n  # draw per voter later
        order = []
        for group in sorted(counts):
            if group not in set(self.manifest.groups):
                raise ValueError(f"leaning_counts group {group!r} not in manifest")
            order.extend([group] * counts[group])
        if len(order) > n:
            raise ValueError("leaning_counts exceed voter count")
        remaining = [g for g in self.manifest.groups]
        rng = Random(f"{self.config.seed}:quota")
        while len(order) < n:
            order.append(rng.choice(remaining))
        rng.shuffle(order)
        return order

    def _build_voters(self) -> None:
        cfg = self.config
        behavior = bal.BehaviorModel(
            card_rate=cfg.behavior.card_rate,
            p_verify_ivr=cfg.behavior.p_verify_ivr,
            p_check_receipt_only=cfg.behavior.p_check_receipt_only,
            p_false_complaint=cfg.behavior.p_false_complaint,
            leaning_weights=cfg.behavior.leaning_weights,
        )
        fetch_lead = FETCH_LEAD_DLOG if cfg.attacks.logjam.enabled else FETCH_LEAD_PLAIN
        earliest_cast = self.timeline.polls_open + REGISTRATION_LEAD + fetch_lead + 1
        if earliest_cast >= self.timeline.polls_close:
            raise ValueError(
                "timeline.polls_close leaves no casting window after the "
                f"registration and fetch leads (needs > {earliest_cast})")
        leanings = self._draw_leanings()
        freak_w = self._freak_window()
        logjam_w = (cfg.attacks.logjam.window_start
                    if cfg.attacks.logjam.window_start is not None
                    else self.timeline.polls_open,
                    cfg.attacks.logjam.window_end
                    if cfg.attacks.logjam.window_end is not None
                    else self.timeline.polls_close)
        for i in range(cfg.voters):
            voter_id = f"voter{i:05d}"
            rng = Random(f"{cfg.seed}:voter:{i}")
            cast_time = rng.randint(earliest_cast, self.timeline.polls_close - 1)
            profile = bal.draw_profile(behavior, self.manifest, rng,
                                       cast_time=cast_time, leaning=leanings[i])
            intended = bal.draw_ballot(profile, self.manifest, rng)
            chan_draw = rng.random()
            if chan_draw < cfg.behavior.phone_fraction:
                channel = el.VoteChannel.PHONE
            elif chan_draw < cfg.behavior.phone_fraction + cfg.behavior.polling_fraction:
                channel = el.VoteChannel.POLLING_PLACE
            else:
                channel = el.VoteChannel.WEB
            state = VoterState(
                voter_id=voter_id,
                index=i,
                rng=rng,
                profile=profile,
                intended=intended,
                channel=channel,
                reg_time=cast_time - REGISTRATION_LEAD,
                fetch_time=cast_time - fetch_lead,
                patched=rng.random() < cfg.tls.client_patch_rate,
                verifies=rng.random() < profile.p_verify_ivr,
                checks_receipt=rng.random() < profile.p_check_receipt_only,
                false_complainer=rng.random() < profile.p_false_complaint,
                dials_genuine=rng.random() < cfg.attacks.fake_ivr_dial_genuine_rate,
                reveals_caller_id=rng.random() < cfg.behavior.caller_id_fraction,
                suspicious=rng.random() < cfg.behavior.p_pin_suspicion,
                verify_delay=rng.randint(cfg.behavior.verify_delay_min,
                                         cfg.behavior.verify_delay_max),
                granted=rng.random() < cfg.attacks.granted_compromise_rate,
            )
            in_freak = cfg.attacks.freak.enabled and \
                freak_w[0] <= state.fetch_time < freak_w[1] and \
                rng.random() < cfg.attacks.freak.control_rate
            in_logjam = cfg.attacks.logjam.enabled and \
                logjam_w[0] <= state.fetch_time < logjam_w[1] and \
                rng.random() < cfg.attacks.logjam.control_rate
            state.controlled = in_freak or in_logjam
            self.voters[voter_id] = state
            self.intents.record(el.IntentEntry(
                voter_id=voter_id, intended=intended, cast_time=cast_time,
                channel=channel,
            ))

    def _install_attack_taps(self) -> None:
        a = self.config.attacks
        if a.clash_enabled:
            self.sim.install_tap(netsim.make_sslstrip_tap("attacker-registration"))
            self.sim.install_tap(atk.make_clash_cast_tap(self.attacker,
                                                         self.attacker_ballot))
        if self.piwik_server is not None and (a.freak.enabled or a.logjam.enabled):
            self.sim.install_tap(netsim.MitmTap(
                name="downgrade-mitm",
                matcher=lambda s, d: d == "piwik",
                handler=self._piwik_mitm,
            ))
        if a.last_minute_enabled:
            self.sim.install_tap(atk.make_last_minute_tap(
                self.attacker, self.attacker_ballot,
                polls_close=self.timeline.polls_close,
                safety_window=a.last_minute_safety_window,
            ))
        if a.receipt_delay_enabled:
            self.sim.install_tap(atk.make_receipt_delay_tap(
                self.attacker, self.attacker_ballot,
                self.config.behavior.p_leave_without_receipt,
                self.rng_attacker,
            ))
        if a.vote_rewrite_enabled:
            self.sim.install_tap(atk.make_rewrite_tap(self.attacker,
                                                      self.attacker_ballot))
        if a.fake_ivr_enabled:
            self.sim.install_tap(netsim.MitmTap(
                name="fake-ivr",
                matcher=lambda s, d: d == "verification-ivr",
                handler=self._fake_ivr_tap,
            ))

    # --- adversary tap handlers needing engine state ---

    def _piwik_mitm(self, event: netsim.Event, sim: netsim.Simulator) -> netsim.Decision:
        payload = event.payload
        if not isinstance(payload, ThirdPartyFetch):
            return netsim.Decision.forward()
        state = self.voters[payload.voter_id]
        if not state.controlled or state.session.via is not None:
            return netsim.Decision.forward()
        now = event.time
        self._tls_clock = now
        client_cfg = tls.ClientTlsConfig(
            offered_suites=(tls.CipherSuite.RSA, tls.CipherSuite.DHE),
            patched=state.patched,
        )
        a = self.config.attacks
        attempted = False
        # export-RSA path first when both are on (cheaper per session); a
        # rejected downgrade just kills one background fetch, so the
        # attacker gets to try the protocol-level one on the retry
        if a.freak.enabled:
            oracle = self._active_oracle(now)
            if oracle is not None:
                attempted = True
                self.freak_attempts += 1
                result = tls.mitm_freak(client_cfg, oracle.conn,
                                        oracle.factored_key, state.rng)
                if result.success:
                    self.freak_successes += 1
                    state.session.compromised = True
                    state.session.session_key = result.attacker_session_key
                    state.session.via = "freak"
                    self.attack_events.append({
                        "time": now, "voter": payload.voter_id, "kind": "freak",
                        "outcome": "compromised",
                    })
                    return netsim.Decision.forward()
                self.attack_events.append({
                    "time": now, "voter": payload.voter_id, "kind": "freak",
                    "outcome": result.error or "failed",
                })
        if a.logjam.enabled:
            attempted = True
            self.logjam_attempts += 1
            conn = self.piwik_server.connect()
            try:
                result = tls.mitm_logjam(client_cfg, conn, self.dlog_table, state.rng)
            except tls.TlsError as exc:
                result = tls.MitmResult(success=False, error=f"{type(exc).__name__}: {exc}")
            if result.success:
                self.logjam_successes += 1
                state.session.compromised = True
                state.session.session_key = result.attacker_session_key
                state.session.via = "logjam"
                state.session.simulated_delay = result.simulated_delay
                self.attack_events.append({
                    "time": now, "voter": payload.voter_id, "kind": "logjam",
                    "outcome": "compromised", "delay": result.simulated_delay,
                })
                return netsim.Decision.forward()
            self.attack_events.append({
                "time": now, "voter": payload.voter_id, "kind": "logjam",
                "outcome": result.error or "failed",
            })
        if attempted:
            state.session.via = "attack_failed"
        return netsim.Decision.forward()

    def _fake_ivr_tap(self, event: netsim.Event, sim: netsim.Simulator) -> netsim.Decision:
        payload = event.payload
        if not isinstance(payload, VerifyCall):
            return netsim.Decision.forward()
        state = self.voters.get(payload.voter_id)
        dials_genuine = state.dials_genuine if state else False
        decision = atk.fake_verification_redirect(self.attacker, payload.voter_id,
                                                  "attacker-ivr", dials_genuine)
        if decision.kind == "modify":
            decision.payload = payload
        return decision

    # --- endpoint handlers ---

    def _on_gateway(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        if isinstance(event.payload, RegistrationRequest):
            sim.schedule(event.time, "registration-gateway", "registration",
                         event.payload)

    def _on_registration(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        req = event.payload
        if not isinstance(req, RegistrationRequest):
            return
        creds = self.registration.register(req.voter_id, req.pin_choice,
                                           req.channel, event.time,
                                           self.rng_services)
        sim.schedule(event.time, "registration", req.voter_id,
                     RegistrationReply(voter_id=req.voter_id, credentials=creds))

    def _on_attacker_registration(self, event: netsim.Event,
                                  sim: netsim.Simulator) -> None:
        req = event.payload
        if not isinstance(req, RegistrationRequest):
            return
        state = self.voters[req.voter_id]
        if state.suspicious:
            # the voter balks at being assigned a PIN and finds their way
            # to the genuine service; this victim is lost to the attacker
            sim.schedule(event.time, req.voter_id, "registration", req)
            return
        if self.config.attacks.clash_prediction == "perfect":
            predicted = state.intended
        else:
            predicted = self.manifest.cards[state.profile.party_leaning]

        def register_entitlement(voter_id: str, pin: str, now: int) -> env.Credentials:
            return self.registration.register(voter_id, pin, req.channel, now,
                                              self.rng_services)

        attacker_pin = f"{self.rng_attacker.randrange(10 ** env.PIN_DIGITS):06d}"
        outcome = atk.clash_register(
            self.attacker, req, predicted, self.manifest,
            register_entitlement, attacker_pin,
            gateway_stripped=self.config.attacks.gateway_stripped,
            now=event.time, rng=self.rng_attacker,
        )
        if outcome.reused:
            # spend the victim's entitlement on the attacker's ballot
            sim.schedule(event.time + 60, f"fraud:{req.voter_id}", "browser",
                         CastIntent(
                             voter_id=f"fraud:{req.voter_id}",
                             credentials=outcome.fresh,
                             ballot=self.attacker_ballot,
                             cast_time=event.time + 60,
                             channel=el.VoteChannel.WEB,
                         ))
            state.believed_receipt = outcome.believed_receipt
        sim.schedule(event.time, "attacker-registration", req.voter_id,
                     RegistrationReply(voter_id=req.voter_id,
                                       credentials=outcome.handed_out))

    def _on_voter(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        payload = event.payload
        if isinstance(payload, RegistrationReply):
            state = self.voters.get(payload.voter_id)
            if state is not None:
                state.credentials = payload.credentials
                state.believed_credentials = payload.credentials
            return
        if isinstance(payload, CastTrigger):
            state = self.voters.get(payload.voter_id)
            if state is None or state.believed_credentials is None:
                return  # registration never completed; this voter cannot cast
            sim.schedule(state.profile.cast_time, state.voter_id, "browser",
                         CastIntent(
                             voter_id=state.voter_id,
                             credentials=state.believed_credentials,
                             ballot=state.intended,
                             cast_time=state.profile.cast_time,
                             channel=state.channel,
                             session=state.session,
                         ))

    def _on_piwik(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        payload = event.payload
        if not isinstance(payload, ThirdPartyFetch):
            return
        state = self.voters[payload.voter_id]
        if state.session.via is not None:
            return  # the MITM already terminated this fetch
        if state.granted:
            # scenario-granted client compromise (malware, misdirection):
            # no downgrade machinery involved
            state.session.compromised = True
            state.session.session_key = hashlib.sha256(
                f"granted:{payload.voter_id}".encode()).digest()
            state.session.via = "granted"
            return
        if self.piwik_server is None:
            return
        self._tls_clock = event.time
        client_cfg = tls.ClientTlsConfig(
            offered_suites=(tls.CipherSuite.RSA, tls.CipherSuite.DHE),
            patched=payload.patched_client,
        )
        conn = self.piwik_server.connect()
        try:
            tls.handshake(client_cfg, conn, state.rng)
        except tls.TlsError:
            pass  # a failed analytics fetch does not block voting
        finally:
            conn.close()

    def _on_browser(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        intent = event.payload
        if not isinstance(intent, CastIntent):
            return
        state = self.voters.get(intent.voter_id)
        if intent.suppress_submit:
            # clash victims: nothing reaches the voting server, but the
            # voter walks away holding the pooled receipt and can still
            # phone the genuine read-back service
            if state is not None:
                state.believed_receipt = intent.believed_receipt
                state.submitted = None
                self._schedule_voter_followups(state, event.time, sim)
            return
        if intent.channel is el.VoteChannel.PHONE:
            sim.schedule(event.time, intent.voter_id, "voice-server", PhoneCast(
                voter_id=intent.voter_id,
                credentials=intent.credentials,
                ballot=intent.ballot,
            ))
            return
        rng = state.rng if state is not None else self.rng_services
        ballot_bytes = bal.encode_ballot(intent.ballot, self.manifest)
        session_id = f"cast:{intent.voter_id}"
        session_key = hashlib.sha256(
            f"{self.config.seed}:tls-session:{intent.voter_id}".encode()).digest()
        self.session_keys[session_id] = session_key
        sealed = env.seal(ballot_bytes, self.election_key.public(),
                          self.verification_key.public(), rng,
                          session_key=session_key)
        submission = CastSubmission(
            voter_id=intent.voter_id, credentials=intent.credentials,
            envelope=sealed, channel=intent.channel,
        )
        if state is not None:
            state.submitted = intent.ballot
            state.show_receipt = intent.show_receipt
        record = SecureRecord(
            session_id=session_id, seq=0,
            blob=tls.encrypt_record(session_key, 0, submission.to_bytes()),
        )
        sim.schedule(event.time, intent.voter_id, "cvs", record)

    def _on_cvs(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        payload = event.payload
        if not isinstance(payload, SecureRecord):
            return
        key = self.session_keys.get(payload.session_id)
        if key is None:
            self.record_failures += 1
            return
        try:
            plain = tls.decrypt_record(key, payload.seq, payload.blob)
        except tls.RecordTampered:
            self.record_failures += 1
            return
        submission = CastSubmission.from_bytes(plain)
        self._accept_cast(submission, event.time, sim)

    def _on_voice(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        payload = event.payload
        if not isinstance(payload, PhoneCast):
            return
        ballot_bytes = bal.encode_ballot(payload.ballot, self.manifest)
        sealed = env.seal(ballot_bytes, self.election_key.public(),
                          self.verification_key.public(), self.rng_services)
        submission = CastSubmission(
            voter_id=payload.voter_id, credentials=payload.credentials,
            envelope=sealed, channel=el.VoteChannel.PHONE,
        )
        self._accept_cast(submission, event.time, sim)

    def _accept_cast(self, submission: CastSubmission, now: int,
                     sim: netsim.Simulator) -> None:
        state = self.voters.get(submission.voter_id)
        try:
            receipt = self.cvs.cast(submission.credentials, submission.envelope,
                                    submission.channel, now, self.rng_services)
        except el.ElectionError:
            if state is not None:
                state.cast_ok = False
            return
        if state is None:
            return  # attacker-cast entitlement: no voter-side bookkeeping
        state.cast_ok = True
        state.actual_receipt = receipt
        if state.show_receipt:
            state.believed_receipt = receipt
        entry = self.intents.entries.get(submission.voter_id)
        if entry is not None:
            entry.login_id = submission.credentials.login_id
            entry.receipt = receipt
        if submission.voter_id in self.attacker.harvest_targets and \
                state.submitted is not None:
            atk.clash_note_cast(self.attacker, submission.voter_id,
                                submission.credentials, receipt,
                                state.submitted, self.manifest)
        self._schedule_voter_followups(state, now, sim)

    def _schedule_voter_followups(self, state: VoterState, now: int,
                                  sim: netsim.Simulator) -> None:
        if state.verifies and state.believed_receipt is not None:
            creds = state.believed_credentials or state.credentials
            sim.schedule(now + state.verify_delay, state.voter_id,
                         "verification-ivr", VerifyCall(
                             voter_id=state.voter_id,
                             login_id=creds.login_id,
                             pin=creds.pin,
                             receipt=state.believed_receipt,
                             caller_id=state.voter_id if state.reveals_caller_id else None,
                         ))
        if state.checks_receipt and state.believed_receipt is not None:
            when = max(now + state.verify_delay,
                       self.timeline.polls_close + 600)
            if when < self.timeline.receipt_service_end:
                sim.schedule(when, state.voter_id, "receipt-service",
                             ReceiptQuery(voter_id=state.voter_id,
                                          receipt=state.believed_receipt))

    def _on_ivr(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        call = event.payload
        if not isinstance(call, VerifyCall):
            return
        state = self.voters.get(call.voter_id)
        try:
            ballot = self.verification.verify_ivr(call.login_id, call.pin,
                                                  call.receipt, event.time,
                                                  caller_id=call.caller_id)
        except el.ServiceClosed:
            self.verify_log.append(el.VerifyLogEntry(
                voter_id=call.voter_id, login_id=call.login_id,
                time=event.time, outcome="closed"))
            return
        except el.NoSuchRecord:
            self.verify_log.append(el.VerifyLogEntry(
                voter_id=call.voter_id, login_id=call.login_id,
                time=event.time, outcome="no_record"))
            self._complain(call.voter_id, event.time, el.ComplaintKind.MISSING_VOTE)
            return
        matched = state is not None and ballot == state.intended
        self.verify_log.append(el.VerifyLogEntry(
            voter_id=call.voter_id, login_id=call.login_id,
            time=event.time, outcome="read_back", matched_intent=matched))
        if state is None:
            return
        if not matched:
            self._complain(call.voter_id, event.time, el.ComplaintKind.MISMATCH_READ)
        elif state.false_complainer:
            self._complain(call.voter_id, event.time, el.ComplaintKind.FALSE_COMPLAINT)

    def _on_attacker_ivr(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        call = event.payload
        if not isinstance(call, VerifyCall):
            return
        state = self.voters.get(call.voter_id)
        c2 = self.attacker.c2_by_voter(call.voter_id)
        readback = c2.intended if c2 is not None else \
            (state.intended if state is not None else None)
        matched = state is not None and readback == state.intended
        self.verify_log.append(el.VerifyLogEntry(
            voter_id=call.voter_id, login_id=call.login_id,
            time=event.time, outcome="read_back_fake", matched_intent=matched))
        if state is not None and matched and state.false_complainer:
            self._complain(call.voter_id, event.time, el.ComplaintKind.FALSE_COMPLAINT)

    def _on_receipt_service(self, event: netsim.Event, sim: netsim.Simulator) -> None:
        query = event.payload
        if not isinstance(query, ReceiptQuery):
            return
        try:
            included = self.receipt_service.lookup(query.receipt, event.time)
        except el.ServiceClosed:
            return
        if not included:
            self._complain(query.voter_id, event.time, el.ComplaintKind.RECEIPT_ABSENT)

    def _complain(self, voter_id: str, time: int, kind: el.ComplaintKind) -> None:
        state = self.voters.get(voter_id)
        if state is not None:
            if state.complained:
                return
            state.complained = True
        self.complaints.append(el.ComplaintEntry(voter_id=voter_id, time=time,
                                                 kind=kind))

    # --- run ---

    def schedule_all(self) -> None:
        for voter_id in sorted(self.voters):
            state = self.voters[voter_id]
            self.sim.schedule(state.reg_time, voter_id, "registration-gateway",
                              RegistrationRequest(voter_id=voter_id,
                                                  pin_choice=None,
                                                  channel=state.channel))
            if self.config.tls.enabled or self.config.attacks.granted_compromise_rate > 0:
                self.sim.schedule(state.fetch_time, voter_id, "piwik",
                                  ThirdPartyFetch(voter_id=voter_id,
                                                  patched_client=state.patched))
            self.sim.schedule(state.profile.cast_time - 1, voter_id, voter_id,
                              CastTrigger(voter_id=voter_id))

    def run(self) -> None:
        self.schedule_all()
        self.sim.run_all()
        self._apply_server_rewrite()
        self.tally, self.counted_ballots = el.dedup_and_count(
            self.cvs, self.registration, self.election_key, self.manifest)
        self.intent_tally = self.intents.intent_tally(self.manifest)
        self.audit = el.audit_reconcile(
            el.AuditMode(self.config.audit_mode), self.cvs, self.verification,
            self.election_key, self.manifest)
        holdings = el.collect_holdings(
            self.registration, self.verification, self.cvs, self.election_key,
            self.manifest, phone_tap_enabled=self.linkage_phone_tap_enabled())
        compromised = {el.Component(c) for c in self.config.linkage_compromised}
        self.linked = el.linkage_report(compromised, holdings)
        self.conservation = self.sim.finalize()

    def linkage_phone_tap_enabled(self) -> bool:
        return self.config.linkage_phone_tap

    def _apply_server_rewrite(self) -> None:
        """Corrupt collecting server rewrites stored envelopes after the
        close of polls. The verification store keeps the originals; only a
        willingly honest audit notices.
        """
        a = self.config.attacks
        if not a.server_rewrite_enabled or a.server_rewrite_count <= 0:
            return
        rng = Random(f"{self.config.seed}:server-rewrite")
        ballot_bytes = bal.encode_ballot(self.attacker_ballot, self.manifest)
        # only records whose vote the attacker actually wants changed
        candidates = []
        for r in self.cvs.records:
            if r.superseded:
                continue
            voter_id = self.registration.owner.get(r.login_id, "")
            state = self.voters.get(voter_id)
            if state is None or state.submitted == self.attacker_ballot:
                continue
            candidates.append(r)
        candidates.sort(key=lambda r: r.receipt)
        for record in candidates[:a.server_rewrite_count]:
            voter_id = self.registration.owner[record.login_id]
            state = self.voters.get(voter_id)
            intended = state.intended if state is not None else self.attacker_ballot
            session_key = self.session_keys.get(f"cast:{voter_id}")
            forged = env.seal(ballot_bytes, self.election_key.public(),
                              self.verification_key.public(), rng,
                              session_key=session_key)
            if not self.config.crypto.signature_forgeable_by_server or \
                    session_key is None:
                record.signature_valid = False
            record.envelope = forged
            self.attacker.manipulation_ledger.append(atk.LedgerEntry(
                voter_id=voter_id, intended=intended,
                submitted=self.attacker_ballot, strategy="server_rewrite",
                cast_time=self.timeline.polls_close,
            ))

    # --- metrics ---

    def metrics_by_strategy(self) -> dict[str, atk.DetectionMetrics]:
        strategies = sorted({e.strategy for e in self.attacker.manipulation_ledger})
        out = {}
        for strategy in strategies:
            out[strategy] = atk.compute_metrics(
                self.attacker.manipulation_ledger, self.complaints,
                self.verify_log, strategy=strategy)
        out["overall"] = atk.compute_metrics(
            self.attacker.manipulation_ledger, self.complaints, self.verify_log)
        return out


def run_engine(config: ScenarioConfig) -> ScenarioEngine:
    engine = ScenarioEngine(config)
    engine.run()
    return engine


def run_scenario(config_path: str) -> dict:
    """Load a scenario file, run it, and return the report tree."""
    from .config import load_config
    from .report import build_report

    return build_report(run_engine(load_config(config_path)))
