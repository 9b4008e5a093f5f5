"""Adversary strategies: per-strategy contracts, ground-truth accounting,
and the detection-undercount properties they exist to demonstrate.
"""

import math
from random import Random

import pytest

from votesim import attacks as atk
from votesim.ballots import make_manifest
from votesim.config import parse_config
from votesim.election import ComplaintKind, ServerRole, VoteChannel
from votesim.engine import run_engine
from votesim.envelope import CredentialRegistry, Credentials, open_envelope
from votesim.ballots import decode_ballot
from votesim.messages import CastIntent, RegistrationRequest, SessionContext
from votesim.netsim import Decision


def base_tree(**over):
    tree = {
        "schema_version": 1,
        "name": over.pop("name", "test"),
        "seed": over.pop("seed", 7),
        "voters": over.pop("voters", 150),
        "manifest": {"groups": 6, "candidates": 24, "assembly": 6},
        "behavior": over.pop("behavior", {}),
        "timeline": {"polls_open": 0, "polls_close": 43200,
                     "receipt_service_end": 86400},
        "tls": over.pop("tls", {"enabled": False}),
        "attacks": over.pop("attacks", {}),
        "audit": over.pop("audit", {"mode": "honest"}),
        "linkage": over.pop("linkage", {}),
    }
    tree.update(over)
    return tree


def run_tree(tree):
    return run_engine(parse_config(tree))


def compromised_intent(manifest, voter="voterX", ballot=None):
    return CastIntent(
        voter_id=voter,
        credentials=Credentials(login_id="12345678", pin="111111"),
        ballot=ballot or manifest.cards["g01"],
        cast_time=100,
        channel=VoteChannel.WEB,
        session=SessionContext(compromised=True, session_key=b"k" * 32),
    )


class TestInjectVoteRewrite:
    def setup_method(self):
        self.manifest = make_manifest(num_groups=6, num_candidates=12,
                                      num_assembly=3)

    def test_uncompromised_session_forwarded(self):
        state = atk.AttackerState()
        intent = compromised_intent(self.manifest)
        intent.session = SessionContext()  # no compromise
        decision = atk.inject_vote_rewrite(state, intent, self.manifest.cards["g02"])
        assert decision.kind == Decision.FORWARD
        assert state.manipulation_ledger == []
        assert state.c2_log == []

    def test_rewrite_swaps_ballot_and_exfiltrates(self):
        state = atk.AttackerState()
        intent = compromised_intent(self.manifest)
        decision = atk.inject_vote_rewrite(state, intent, self.manifest.cards["g02"])
        assert decision.kind == "modify"
        assert decision.payload.ballot == self.manifest.cards["g02"]
        entry = state.manipulation_ledger[0]
        assert entry.intended == self.manifest.cards["g01"]
        assert entry.submitted == self.manifest.cards["g02"]
        c2 = state.c2_log[0]
        assert c2.intended == self.manifest.cards["g01"]
        assert c2.credentials.login_id == "12345678"

    def test_engine_ledger_vs_cvs_diff_oracle(self):
        # ground-truth oracle: decrypt every stored envelope and compare
        # against the ledger entry (manipulated) or the intent (untouched)
        engine = run_tree(base_tree(
            voters=120,
            attacks={"granted_compromise_rate": 0.5,
                     "vote_rewrite": {"enabled": True},
                     "target_group": "g02"},
        ))
        ledgered = {e.voter_id: e for e in engine.attacker.manipulation_ledger}
        checked_manipulated = checked_honest = 0
        for record in engine.cvs.records:
            voter = engine.registration.owner[record.login_id]
            stored = decode_ballot(
                open_envelope(record.envelope, ServerRole.ELECTION,
                              engine.election_key), engine.manifest)
            state = engine.voters[voter]
            if voter in ledgered:
                assert stored == ledgered[voter].submitted
                assert ledgered[voter].intended == state.intended
                assert stored != state.intended or \
                    state.intended == engine.attacker_ballot
                checked_manipulated += 1
            else:
                assert stored == state.intended
                checked_honest += 1
        assert checked_manipulated > 10 and checked_honest > 10

    def test_manipulated_verifier_raises_mismatch_complaint(self):
        engine = run_tree(base_tree(
            voters=200,
            behavior={"p_verify_ivr": 1.0, "p_check_receipt_only": 0.0},
            attacks={"granted_compromise_rate": 1.0,
                     "vote_rewrite": {"enabled": True},
                     "target_group": "g02"},
        ))
        mismatches = [c for c in engine.complaints
                      if c.kind is ComplaintKind.MISMATCH_READ]
        # every manipulated voter whose intent differs from the attacker
        # ballot and who reached the service in time complains
        expected = 0
        ledgered = {e.voter_id for e in engine.attacker.manipulation_ledger}
        for v in engine.verify_log:
            st = engine.voters.get(v.voter_id)
            if v.outcome == "read_back" and st and v.voter_id in ledgered and \
                    st.intended != engine.attacker_ballot:
                expected += 1
        assert len(mismatches) == expected > 0


class TestLastMinute:
    def test_window_guard(self):
        manifest = make_manifest(num_groups=6, num_candidates=12, num_assembly=3)
        state = atk.AttackerState()
        inside = compromised_intent(manifest)
        inside.cast_time = 43000
        outside = compromised_intent(manifest)
        outside.cast_time = 10000
        assert atk.last_minute_rewrite(state, outside, manifest.cards["g02"],
                                       polls_close=43200,
                                       safety_window=600).kind == Decision.FORWARD
        assert atk.last_minute_rewrite(state, inside, manifest.cards["g02"],
                                       polls_close=43200,
                                       safety_window=600).kind == "modify"
        assert state.manipulation_ledger[0].strategy == "last_minute"

    def test_window_votes_unverifiable_detection_zero(self):
        # 1000 voters, ~5% in-window (safety window sized to the minimum
        # verify delay): every window verify attempt lands after shutdown
        engine = run_tree(base_tree(
            voters=1000,
            behavior={"p_verify_ivr": 0.5, "verify_delay_min": 2100,
                      "verify_delay_max": 3600},
            attacks={"granted_compromise_rate": 1.0,
                     "last_minute": {"enabled": True, "safety_window": 2100},
                     "target_group": "g02"},
        ))
        metrics = engine.metrics_by_strategy()["last_minute"]
        assert metrics.manipulated_count > 20
        assert metrics.complaints_true == 0
        assert metrics.detection_ratio == 0.0
        # ledger oracle: every manipulated cast sits inside the window
        for entry in engine.attacker.manipulation_ledger:
            assert entry.cast_time >= 43200 - 2100

    def test_outside_window_untouched(self):
        engine = run_tree(base_tree(
            voters=300,
            attacks={"granted_compromise_rate": 1.0,
                     "last_minute": {"enabled": True, "safety_window": 600},
                     "target_group": "g02"},
        ))
        window_start = 43200 - 600
        for record in engine.cvs.records:
            voter = engine.registration.owner[record.login_id]
            state = engine.voters[voter]
            stored = decode_ballot(
                open_envelope(record.envelope, ServerRole.ELECTION,
                              engine.election_key), engine.manifest)
            if state.profile.cast_time < window_start:
                assert stored == state.intended


class TestReceiptDelayGambit:
    def setup_method(self):
        self.manifest = make_manifest(num_groups=6, num_candidates=12,
                                      num_assembly=3)

    def test_leaver_and_waiter_branches(self):
        state = atk.AttackerState()
        always_leave = Random(1)
        intent = compromised_intent(self.manifest)
        d = atk.delay_receipt_gambit(state, intent, self.manifest.cards["g02"],
                                     p_leave_without_receipt=1.0, rng=always_leave)
        assert d.kind == "modify"
        assert d.payload.show_receipt is False
        assert state.manipulation_ledger[0].strategy == "receipt_delay"

        state2 = atk.AttackerState()
        waiter = compromised_intent(self.manifest)
        d2 = atk.delay_receipt_gambit(state2, waiter, self.manifest.cards["g02"],
                                      p_leave_without_receipt=0.0, rng=Random(2))
        # give-up branch: genuine ballot goes through, receipt shown,
        # nothing ledgered, but the gambit claims the cast
        assert d2.kind == "modify"
        assert d2.payload.ballot == waiter.ballot
        assert d2.payload.show_receipt is True
        assert d2.payload.handled_by == "receipt_delay"
        assert state2.manipulation_ledger == []

    def test_binomial_monte_carlo(self):
        # 10,000 compromised sessions at leave probability 0.3
        state = atk.AttackerState()
        rng = Random(3)
        n = 10_000
        manipulated = 0
        for i in range(n):
            intent = compromised_intent(self.manifest, voter=f"v{i}")
            d = atk.delay_receipt_gambit(state, intent, self.manifest.cards["g02"],
                                         p_leave_without_receipt=0.3, rng=rng)
            if d.kind == "modify" and d.payload.show_receipt is False:
                manipulated += 1
        assert abs(manipulated / n - 0.30) <= 0.015
        assert len(state.manipulation_ledger) == manipulated

    def test_leavers_never_complain_in_full_run(self):
        engine = run_tree(base_tree(
            voters=400,
            behavior={"p_verify_ivr": 0.5, "p_check_receipt_only": 0.4,
                      "p_leave_without_receipt": 0.3},
            attacks={"granted_compromise_rate": 1.0,
                     "receipt_delay": {"enabled": True},
                     "target_group": "g02"},
        ))
        metrics = engine.metrics_by_strategy()["receipt_delay"]
        assert metrics.manipulated_count > 50
        assert metrics.complaints_true == 0
        # leavers hold no receipt at all
        for entry in engine.attacker.manipulation_ledger:
            assert engine.voters[entry.voter_id].believed_receipt is None
        # waiters' votes are genuine: CVS matches intent
        ledgered = {e.voter_id for e in engine.attacker.manipulation_ledger}
        for record in engine.cvs.records:
            voter = engine.registration.owner[record.login_id]
            if voter not in ledgered:
                stored = decode_ballot(
                    open_envelope(record.envelope, ServerRole.ELECTION,
                                  engine.election_key), engine.manifest)
                assert stored == engine.voters[voter].intended


class TestFakeIvrRedirect:
    def run_pair(self, redirect_on):
        attacks = {"granted_compromise_rate": 1.0,
                   "vote_rewrite": {"enabled": True},
                   "target_group": "g02"}
        if redirect_on:
            attacks["fake_ivr"] = {"enabled": True, "dial_genuine_rate": 0.0}
        return run_tree(base_tree(
            voters=250,
            behavior={"p_verify_ivr": 0.5, "p_check_receipt_only": 0.0},
            attacks=attacks,
        ))

    def test_masked_voter_hears_intent_and_stays_silent(self):
        engine = self.run_pair(redirect_on=True)
        fake_readbacks = [v for v in engine.verify_log
                          if v.outcome == "read_back_fake"]
        assert fake_readbacks and all(v.matched_intent for v in fake_readbacks)
        assert engine.metrics_by_strategy()["vote_rewrite"].complaints_true == 0
        assert all(e.masked for e in engine.attacker.manipulation_ledger
                   if e.voter_id in {v.voter_id for v in fake_readbacks})

    def test_dial_genuine_unmasks(self):
        engine = run_tree(base_tree(
            voters=250,
            behavior={"p_verify_ivr": 0.5, "p_check_receipt_only": 0.0},
            attacks={"granted_compromise_rate": 1.0,
                     "vote_rewrite": {"enabled": True},
                     "fake_ivr": {"enabled": True, "dial_genuine_rate": 1.0},
                     "target_group": "g02"},
        ))
        assert engine.metrics_by_strategy()["vote_rewrite"].complaints_true > 0

    def test_paired_runs_redirect_strictly_lowers_detection(self):
        off = self.run_pair(redirect_on=False)
        on = self.run_pair(redirect_on=True)
        m_off = off.metrics_by_strategy()["vote_rewrite"]
        m_on = on.metrics_by_strategy()["vote_rewrite"]
        assert m_on.manipulated_count == m_off.manipulated_count
        assert m_off.detection_ratio > 0
        assert m_on.detection_ratio < m_off.detection_ratio


class TestClash:
    def manifest(self):
        return make_manifest(num_groups=6, num_candidates=12, num_assembly=3)

    def test_front_requires_stripped_gateway(self):
        m = self.manifest()
        state = atk.AttackerState()
        req = RegistrationRequest(voter_id="victim", pin_choice=None,
                                  channel=VoteChannel.WEB)
        with pytest.raises(atk.GatewayNotStripped):
            atk.clash_register(state, req, m.cards["g01"], m,
                               register_entitlement=lambda v, p, t: None,
                               attacker_pin="111111", gateway_stripped=False,
                               now=10, rng=Random(1))

    def test_pool_miss_registers_honestly_then_harvests(self):
        m = self.manifest()
        state = atk.AttackerState()
        registry = CredentialRegistry()
        rng = Random(2)

        def entitle(voter, pin, now):
            return registry.issue(pin, rng)

        req = RegistrationRequest(voter_id="first", pin_choice=None,
                                  channel=VoteChannel.WEB)
        outcome = atk.clash_register(state, req, m.cards["g01"], m, entitle,
                                     "111111", True, 10, rng)
        assert outcome.reused is False
        assert outcome.handed_out.pin == "111111"  # attacker-assigned
        assert "first" in state.harvest_targets
        # the harvested voter casts the predicted card vote
        atk.clash_note_cast(state, "first", outcome.handed_out, "000000000001",
                            m.cards["g01"], m)
        assert len(state.clash_pool) == 1

        # second like-minded victim hits the pool
        req2 = RegistrationRequest(voter_id="second", pin_choice=None,
                                   channel=VoteChannel.WEB)
        outcome2 = atk.clash_register(state, req2, m.cards["g01"], m, entitle,
                                      "222222", True, 20, rng)
        assert outcome2.reused is True
        assert outcome2.handed_out.login_id == outcome.handed_out.login_id
        assert outcome2.handed_out.pin == "111111"
        assert outcome2.believed_receipt == "000000000001"
        assert outcome2.fresh is not None  # the spent entitlement
        assert outcome2.fresh.login_id != outcome.handed_out.login_id

    def run_clash(self, voters=1500, prediction="card", seed=7, card_rate=0.40,
                  p_verify=0.2):
        return run_tree(base_tree(
            voters=voters, seed=seed,
            behavior={"card_rate": card_rate, "p_verify_ivr": p_verify,
                      "p_check_receipt_only": 0.3},
            attacks={"gateway_stripped": True,
                     "clash": {"enabled": True, "prediction": prediction},
                     "target_group": "g02"},
        ))

    def test_matching_victim_verifies_clean_attacker_gets_free_ballot(self):
        engine = self.run_clash(voters=600)
        # card-following victims hear their exact intent from the genuine
        # service and never complain
        ledgered = {e.voter_id: e for e in engine.attacker.manipulation_ledger}
        matched = [v for v in engine.verify_log
                   if v.outcome == "read_back" and v.voter_id in ledgered and
                   engine.voters[v.voter_id].profile.follows_card]
        assert matched and all(v.matched_intent for v in matched)
        complainers = {c.voter_id for c in engine.complaints}
        assert not any(engine.voters[v.voter_id].profile.follows_card
                       for v in matched if v.voter_id in complainers)
        # each pool hit spent the victim's entitlement on an attacker ballot
        for voter_id in list(ledgered)[:20]:
            entry = ledgered[voter_id]
            assert entry.submitted == engine.attacker_ballot
            login = engine.registration.links[voter_id][-1]
            rec = [r for r in engine.cvs.records if r.login_id == login]
            assert rec and decode_ballot(
                open_envelope(rec[-1].envelope, ServerRole.ELECTION,
                              engine.election_key),
                engine.manifest) == engine.attacker_ballot

    def test_deviating_victim_complains_only_via_ivr(self):
        engine = self.run_clash(voters=800)
        ledgered = {e.voter_id for e in engine.attacker.manipulation_ledger}
        for c in engine.complaints:
            if c.kind is ComplaintKind.MISMATCH_READ:
                st = engine.voters[c.voter_id]
                assert c.voter_id in ledgered
                assert not st.profile.follows_card  # prediction missed them
                assert st.verifies  # receipt-only checkers never complain
        # receipt-only victims see included=true and stay silent
        receipt_only = [v for v in engine.voters.values()
                        if v.voter_id in ledgered and v.checks_receipt
                        and not v.verifies]
        assert receipt_only
        absent = {c.voter_id for c in engine.complaints
                  if c.kind is ComplaintKind.RECEIPT_ABSENT}
        assert not any(v.voter_id in absent for v in receipt_only)

    def test_complaints_within_three_sigma_of_analytic(self):
        card_rate, p_verify = 0.40, 0.2
        engine = self.run_clash(voters=2000, card_rate=card_rate,
                                p_verify=p_verify)
        m = engine.metrics_by_strategy()["clash"]
        expect = m.manipulated_count * (1 - card_rate) * p_verify
        sigma = math.sqrt(m.manipulated_count * (1 - card_rate) * p_verify *
                          (1 - (1 - card_rate) * p_verify))
        assert abs(m.complaints_true - expect) <= 3 * sigma
        # coarse analytic bound: detection can never reach the miss rate
        assert m.detection_ratio < (1 - card_rate)

    def test_perfect_prediction_raises_no_alarm(self):
        engine = self.run_clash(voters=1200, prediction="perfect")
        m = engine.metrics_by_strategy()["clash"]
        assert m.manipulated_count > 0
        assert m.complaints_true == 0

    def test_pin_suspicion_defeats_the_front(self):
        # a voter who notices the assigned PIN escapes to the genuine
        # service; at rate 1.0 the attack collects nothing at all
        wary = run_tree(base_tree(
            voters=400,
            behavior={"card_rate": 0.4, "p_verify_ivr": 0.2,
                      "p_pin_suspicion": 1.0},
            attacks={"gateway_stripped": True,
                     "clash": {"enabled": True, "prediction": "card"},
                     "target_group": "g02"},
        ))
        assert wary.metrics_by_strategy()["overall"].manipulated_count == 0
        assert wary.attacker.stolen_registrations == []
        assert wary.tally.counts == wary.intent_tally.counts
        # partial suspicion thins the victim pool proportionally
        partial = self.run_clash(voters=400)
        half = run_tree(base_tree(
            voters=400,
            behavior={"card_rate": 0.4, "p_verify_ivr": 0.2,
                      "p_pin_suspicion": 0.5},
            attacks={"gateway_stripped": True,
                     "clash": {"enabled": True, "prediction": "card"},
                     "target_group": "g02"},
        ))
        full_m = partial.metrics_by_strategy()["clash"].manipulated_count
        half_m = half.metrics_by_strategy()["clash"].manipulated_count
        assert 0 < half_m < full_m


class TestDowngradeComposition:
    def test_freak_falls_back_to_logjam_for_patched_clients(self):
        # both downgrades enabled: the client flaw takes the unpatched half,
        # the protocol flaw takes everyone the patch saved
        engine = run_tree(base_tree(
            voters=60, seed=5,
            tls={"enabled": True, "client_patch_rate": 0.5,
                 "third_party_suites": ["RSA", "RSA_EXPORT", "DHE",
                                        "DHE_EXPORT"]},
            attacks={"freak": {"enabled": True, "control_rate": 1.0},
                     "logjam": {"enabled": True, "control_rate": 1.0},
                     "vote_rewrite": {"enabled": True},
                     "target_group": "g02"},
        ))
        assert all(v.session.compromised for v in engine.voters.values())
        for v in engine.voters.values():
            assert v.session.via == ("logjam" if v.patched else "freak")
        assert engine.freak_attempts == 60
        assert engine.logjam_attempts == engine.logjam_successes > 0
        assert engine.freak_successes + engine.logjam_successes == 60


class TestMetricsAndInvariants:
    def test_no_attack_metrics(self):
        metrics = atk.compute_metrics([], [], [])
        assert metrics.manipulated_count == 0
        assert metrics.detection_ratio is None

    def test_counts_validated(self):
        with pytest.raises(atk.AttackError):
            atk.DetectionMetrics(manipulated_count=1, complaints_true=2,
                                 complaints_false=0, verify_attempts=0)

    def test_no_attack_baseline_false_complaints_only(self):
        engine = run_tree(base_tree(
            voters=400,
            behavior={"p_verify_ivr": 0.5, "p_false_complaint": 0.05},
        ))
        kinds = {c.kind for c in engine.complaints}
        assert kinds <= {ComplaintKind.FALSE_COMPLAINT}
        metrics = engine.metrics_by_strategy()["overall"]
        assert metrics.complaints_true == 0
        # the false-complaint count is exactly the pre-drawn binomial:
        # verifiers flagged as false complainers who got a clean read-back
        expected = sum(1 for v in engine.voters.values()
                       if v.false_complainer and any(
                           e.outcome == "read_back" and e.voter_id == v.voter_id
                           for e in engine.verify_log))
        assert metrics.complaints_false == expected > 0

    def test_masking_soundness_every_true_complaint_is_ledgered(self):
        # over several strategies and seeds: a mismatch complaint implies a
        # ledger entry and a successful pre-shutdown read-back
        for seed in (1, 2, 3):
            engine = run_tree(base_tree(
                seed=seed, voters=300,
                behavior={"p_verify_ivr": 0.4, "p_check_receipt_only": 0.2,
                          "p_leave_without_receipt": 0.2},
                attacks={"granted_compromise_rate": 0.6,
                         "vote_rewrite": {"enabled": True},
                         "receipt_delay": {"enabled": True},
                         "target_group": "g02"},
            ))
            ledgered = {e.voter_id for e in engine.attacker.manipulation_ledger}
            readback_ok = {v.voter_id for v in engine.verify_log
                           if v.outcome == "read_back"
                           and v.time < engine.timeline.polls_close}
            for c in engine.complaints:
                if c.kind is ComplaintKind.MISMATCH_READ:
                    assert c.voter_id in ledgered
                    assert c.voter_id in readback_ok

    def test_composed_strategies_claim_each_cast_once(self):
        # receipt-delay and vote-rewrite both on: first installed wins per
        # cast, so no voter is ledgered twice and waiters stay genuine
        engine = run_tree(base_tree(
            voters=300,
            behavior={"p_verify_ivr": 0.3, "p_leave_without_receipt": 0.4},
            attacks={"granted_compromise_rate": 1.0,
                     "receipt_delay": {"enabled": True},
                     "vote_rewrite": {"enabled": True},
                     "target_group": "g02"},
        ))
        voters_ledgered = [e.voter_id for e in engine.attacker.manipulation_ledger]
        assert len(voters_ledgered) == len(set(voters_ledgered))
        # gambit owns every compromised cast; the rewrite tap got none
        assert all(e.strategy == "receipt_delay"
                   for e in engine.attacker.manipulation_ledger)
        ledgered = set(voters_ledgered)
        for record in engine.cvs.records:
            voter = engine.registration.owner[record.login_id]
            if voter not in ledgered:
                stored = decode_ballot(
                    open_envelope(record.envelope, ServerRole.ELECTION,
                                  engine.election_key), engine.manifest)
                assert stored == engine.voters[voter].intended

    def test_server_rewrite_signature_toggle(self):
        # when the corrupt server cannot recreate the client tag, its
        # rewritten records carry invalid signatures; when it can, they
        # stay clean (both branches of the undocumented-signing question)
        def run(forgeable):
            return run_tree(base_tree(
                voters=80,
                crypto={"envelope_bits": 64,
                        "signature_forgeable_by_server": forgeable},
                attacks={"server_rewrite": {"enabled": True, "count": 10},
                         "target_group": "g02"},
            ))

        weak = run(forgeable=False)
        rewritten = {e.voter_id for e in weak.attacker.manipulation_ledger}
        flagged = [r for r in weak.cvs.records if not r.signature_valid]
        assert {weak.registration.owner[r.login_id] for r in flagged} == rewritten
        strong = run(forgeable=True)
        assert all(r.signature_valid for r in strong.cvs.records)
        # either way the honest audit still catches the ballot divergence
        assert len(weak.audit.inconsistencies) == len(rewritten)

    def test_last_minute_window_never_increases_detection(self):
        base = run_tree(base_tree(
            voters=400,
            behavior={"p_verify_ivr": 0.5, "verify_delay_min": 600,
                      "verify_delay_max": 1200},
            attacks={"granted_compromise_rate": 1.0,
                     "vote_rewrite": {"enabled": True},
                     "target_group": "g02"},
        ))
        windowed = run_tree(base_tree(
            voters=400,
            behavior={"p_verify_ivr": 0.5, "verify_delay_min": 600,
                      "verify_delay_max": 1200},
            attacks={"granted_compromise_rate": 1.0,
                     "last_minute": {"enabled": True, "safety_window": 600},
                     "target_group": "g02"},
        ))
        m_base = base.metrics_by_strategy()["overall"]
        m_win = windowed.metrics_by_strategy()["overall"]
        assert m_base.detection_ratio is not None
        assert (m_win.detection_ratio or 0.0) <= m_base.detection_ratio
