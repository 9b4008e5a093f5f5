"""Scenario report: the evidence artifact a run produces.

Serialized as canonical JSON (sorted keys, fixed indentation) so that a
rerun with the same config and seed is byte-identical. Wall-clock time
never appears; the published real-world attack costs ride along as
static metadata.
"""

import hashlib
import json
from typing import Any

from .minitls import REAL_WORLD_COSTS

def model_assumptions(config) -> list[str]:
    return [
        "non-card ballots are drawn uniformly at random among valid ballots "
        "with the first council preference fixed to the voter's leaning",
        "voters notice an assigned-not-chosen PIN with probability "
        f"{config.behavior.p_pin_suspicion:g} (behavior.p_pin_suspicion; "
        "the default of 0 is optimistic for the attacker)",
        "voter verify/receipt-check behaviour is drawn independently per voter "
        "from the configured rates",
    ]


def _tally_section(tally) -> dict:
    return {
        "counts": {k: tally.counts[k] for k in sorted(tally.counts)},
        "margin": tally.margin,
        "winner": tally.winner,
        "runner_up": tally.runner_up,
    }


def build_report(engine) -> dict:
    """Collect a finished engine run into a JSON-ready tree."""
    cfg = engine.config
    metrics = engine.metrics_by_strategy()
    ledger = engine.attacker.manipulation_ledger

    manipulated_in_window = len(ledger)
    honest_margin = engine.intent_tally.margin
    flip_feasible = (honest_margin is not None and
                     manipulated_in_window >= honest_margin)
    flip_occurred = (engine.tally.winner != engine.intent_tally.winner)

    detection = {}
    for name, m in metrics.items():
        detection[name] = {
            "manipulated": m.manipulated_count,
            "complaints_true": m.complaints_true,
            "complaints_false": m.complaints_false,
            "verify_attempts": m.verify_attempts,
            "detection_ratio": m.detection_ratio,
        }

    trace_text = "\n".join(engine.sim.trace) + "\n"
    trace_digest = hashlib.sha256(trace_text.encode()).hexdigest()

    linked_voters = sorted({voter for voter, _ in engine.linked})

    report = {
        "schema_version": 1,
        "scenario": cfg.name,
        "seed": cfg.seed,
        "voters": cfg.voters,
        "votes": {
            "cast_accepted": sum(1 for v in engine.voters.values() if v.cast_ok),
            "counted": len(engine.counted_ballots),
            "superseded": sum(1 for r in engine.cvs.records if r.superseded),
            "records_total": len(engine.cvs.records),
            "record_failures": engine.record_failures,
        },
        "tally": _tally_section(engine.tally),
        "honest_intent_tally": _tally_section(engine.intent_tally),
        "winner_flip": {
            "occurred": flip_occurred,
            "feasible": flip_feasible,
            "manipulated": manipulated_in_window,
            "honest_margin": honest_margin,
        },
        "detection": detection,
        "complaints": {
            "total": len(engine.complaints),
            "by_kind": _complaints_by_kind(engine.complaints),
        },
        "downgrade": {
            "freak": {"attempted": engine.freak_attempts,
                      "succeeded": engine.freak_successes},
            "logjam": {"attempted": engine.logjam_attempts,
                       "succeeded": engine.logjam_successes},
            "client_patch_rate": cfg.tls.client_patch_rate,
            "third_party_suites": list(cfg.tls.third_party_suites),
        },
        "attack_timeline": engine.attack_events,
        "audit": {
            "mode": engine.audit.mode.value,
            "inconsistencies": [
                {"login_id": inc.login_id, "receipt": inc.receipt, "kind": inc.kind}
                for inc in engine.audit.inconsistencies
            ],
        },
        "linkage": {
            "compromised_components": sorted(cfg.linkage_compromised),
            "linked_voter_count": len(linked_voters),
            "linked_voters": linked_voters,
        },
        "real_world_cost_metadata": REAL_WORLD_COSTS,
        "event_conservation": engine.conservation,
        "assumptions": model_assumptions(cfg),
        "trace_digest": trace_digest,
    }
    return report


def _complaints_by_kind(complaints) -> dict:
    out: dict[str, int] = {}
    for c in complaints:
        out[c.kind.value] = out.get(c.kind.value, 0) + 1
    return {k: out[k] for k in sorted(out)}


def serialize_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def parse_report(text: str) -> dict:
    return json.loads(text)


def metrics_rows(report: dict) -> str:
    """Flat machine-readable rows (tab-separated key paths)."""
    rows = []

    def walk(prefix: str, node: Any):
        if isinstance(node, dict):
            for k in sorted(node):
                walk(f"{prefix}.{k}" if prefix else str(k), node[k])
        elif isinstance(node, list):
            rows.append((prefix, json.dumps(node, sort_keys=True)))
        else:
            rows.append((prefix, json.dumps(node)))

    walk("", report)
    return "".join(f"{k}\t{v}\n" for k, v in rows)


def diff_reports(a: dict, b: dict) -> list[tuple[str, Any, Any]]:
    """Structured delta: (key path, value in a, value in b) for every leaf
    that differs. Empty iff the reports are identical.
    """
    out: list[tuple[str, Any, Any]] = []

    def walk(path: str, left: Any, right: Any):
        if isinstance(left, dict) and isinstance(right, dict):
            for key in sorted(set(left) | set(right)):
                sub = f"{path}.{key}" if path else str(key)
                if key not in left:
                    out.append((sub, None, right[key]))
                elif key not in right:
                    out.append((sub, left[key], None))
                else:
                    walk(sub, left[key], right[key])
        elif left != right:
            out.append((path, left, right))

    walk("", a, b)
    return out
