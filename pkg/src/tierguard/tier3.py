"""Selective event logging, hash-chained ledger, and BFT consensus.

Only events clearing the three-clause filter (severity, cross-regional
frequency, consensus confidence) are batched into blocks. Validators run a
three-phase prepare/commit protocol; a committed block feeds the native
threat-registry rules that stand in for on-chain mitigation contracts.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .tier1 import ThreatClass, ThreatLevel, ThreatSignature, threat_level_for

ZERO_HASH = bytes(32)


@dataclass(frozen=True)
class FilterConfig:
    severity_threshold: float = 0.85
    frequency_threshold: int = 3
    confidence_threshold: float = 0.9
    frequency_window_ms: int = 60_000

    def __post_init__(self):
        if not 0.0 <= self.severity_threshold <= 1.0:
            raise ValueError("severity_threshold must lie in [0, 1]")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if self.frequency_threshold < 0 or self.frequency_window_ms <= 0:
            raise ValueError("frequency settings must be positive")


@dataclass(frozen=True)
class ThreatEvent:
    signature: ThreatSignature
    severity: float
    cross_regional_frequency: int
    consensus_confidence: float
    observed_at_ms: int

    def __post_init__(self):
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError("severity must lie in [0, 1]")
        if not 0.0 <= self.consensus_confidence <= 1.0:
            raise ValueError("consensus_confidence must lie in [0, 1]")
        if self.cross_regional_frequency < 0:
            raise ValueError("cross_regional_frequency must be >= 0")


def should_log(event: ThreatEvent, cfg: FilterConfig = FilterConfig()) -> bool:
    """Strict-inequality OR over the three logging clauses."""
    return (
        event.severity > cfg.severity_threshold
        or event.cross_regional_frequency > cfg.frequency_threshold
        or event.consensus_confidence > cfg.confidence_threshold
    )


def pattern_prefix(attack_class: ThreatClass, severity: float) -> bytes:
    """Coarse 8-byte campaign fingerprint: class plus quantized severity.

    Deliberately excludes vehicle identity so one campaign matches across
    vehicles and regions.
    """
    bucket = int(round(severity * 10))
    payload = attack_class.value.encode("utf-8") + struct.pack("<B", bucket)
    return hashlib.sha256(payload).digest()[:8]


class CrossRegionRegistry:
    """Sliding-window tracker of which regions reported each threat pattern."""

    def __init__(self, window_ms: int = 60_000):
        self.window_ms = window_ms
        self._seen: dict[tuple[ThreatClass, bytes], dict[str, int]] = {}

    def observe(self, signature: ThreatSignature, region_id: str, now_ms: int) -> int:
        """Record a report and return the distinct-region frequency in-window."""
        key = (signature.attack_class, pattern_prefix(signature.attack_class, signature.severity))
        regions = self._seen.setdefault(key, {})
        regions[region_id] = now_ms
        horizon = now_ms - self.window_ms
        expired = [r for r, ts in regions.items() if ts <= horizon]
        for r in expired:
            del regions[r]
        return len(regions)


# ---------------------------------------------------------------------------
# Ledger


def _event_record_bytes(event: ThreatEvent) -> bytes:
    sig = event.signature
    vid = sig.vehicle_id.encode("utf-8")
    rid = sig.region_id.encode("utf-8")
    return b"".join(
        [
            sig.digest,
            struct.pack("<d", round(event.severity, 6)),
            struct.pack("<B", list(ThreatClass).index(sig.attack_class)),
            struct.pack("<H", len(vid)),
            vid,
            struct.pack("<H", len(rid)),
            rid,
            struct.pack("<q", sig.timestamp_ms),
            struct.pack("<I", event.cross_regional_frequency),
            struct.pack("<d", round(event.consensus_confidence, 6)),
            struct.pack("<q", event.observed_at_ms),
        ]
    )


def event_digest(event: ThreatEvent) -> bytes:
    return hashlib.sha256(_event_record_bytes(event)).digest()


def transactions_digest(events: tuple[ThreatEvent, ...]) -> bytes:
    return hashlib.sha256(b"".join(event_digest(e) for e in events)).digest()


def block_hash(index: int, prev_hash: bytes, tx_digest: bytes,
               proposer_id: str, timestamp_ms: int) -> bytes:
    pid = proposer_id.encode("utf-8")
    payload = b"".join(
        [
            struct.pack("<q", index),
            prev_hash,
            tx_digest,
            struct.pack("<H", len(pid)),
            pid,
            struct.pack("<q", timestamp_ms),
        ]
    )
    return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    tx_digest: bytes
    transactions: tuple[ThreatEvent, ...]
    proposer_id: str
    timestamp_ms: int
    block_hash: bytes


def assemble_block(pending: list[ThreatEvent], prev: Block | None, proposer_id: str,
                   now_ms: int, batch_size: int = 5) -> Block:
    """Build the next block from up to batch_size pending events."""
    if not pending:
        raise ValueError("no pending events to assemble")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    txs = tuple(pending[:batch_size])
    index = 0 if prev is None else prev.index + 1
    prev_hash = ZERO_HASH if prev is None else prev.block_hash
    tx_digest = transactions_digest(txs)
    return Block(
        index=index,
        prev_hash=prev_hash,
        tx_digest=tx_digest,
        transactions=txs,
        proposer_id=proposer_id,
        timestamp_ms=now_ms,
        block_hash=block_hash(index, prev_hash, tx_digest, proposer_id, now_ms),
    )


def verify_chain(chain: list[Block]) -> bool:
    """Recompute every hash and link; True iff everything matches."""
    prev_hash = ZERO_HASH
    for i, block in enumerate(chain):
        if block.index != i or block.prev_hash != prev_hash:
            return False
        if block.tx_digest != transactions_digest(block.transactions):
            return False
        expected = block_hash(block.index, block.prev_hash, block.tx_digest,
                              block.proposer_id, block.timestamp_ms)
        if block.block_hash != expected:
            return False
        prev_hash = block.block_hash
    return True


def storage_stats(total_events: int, logged_events: int) -> float:
    """Logged fraction phi = logged / total."""
    if total_events <= 0:
        raise ValueError("total_events must be positive")
    if logged_events > total_events:
        raise ValueError("logged_events cannot exceed total_events")
    return logged_events / total_events


# ---------------------------------------------------------------------------
# Consensus


class Phase(Enum):
    IDLE = "Idle"
    PRE_PREPARED = "PrePrepared"
    PREPARED = "Prepared"
    COMMITTED = "Committed"


class FaultMode(Enum):
    HONEST = "Honest"
    CRASHED = "Crashed"
    BYZANTINE = "Byzantine"


@dataclass
class ValidatorState:
    node_id: str
    view: int = 0
    phase: Phase = Phase.IDLE
    fault_mode: FaultMode = FaultMode.HONEST
    message_log: dict = field(default_factory=dict)
    committed_digest: bytes | None = None


@dataclass(frozen=True)
class ConsensusTiming:
    t_prepare_ms: float
    t_commit_ms: float
    t_network_ms: float

    @property
    def t_consensus_ms(self) -> float:
        return max(self.t_prepare_ms, self.t_commit_ms) + self.t_network_ms


def fault_threshold(n: int) -> int:
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    # n - f matching votes: equals 2f+1 when n = 3f+1, and for other n keeps
    # quorum intersection above f so equivocators can never split honest
    # commits. It also makes commits impossible with f+1 silent nodes.
    return n - fault_threshold(n)


def _phase_latency(rng: np.random.Generator, latency_model, count: int) -> float:
    if count == 0 or latency_model is None:
        return 0.0
    base = latency_model.base_latency_ms
    jitter = latency_model.jitter_fraction
    draws = base * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=count))
    return float(draws.max())


def pbft_round(
    validators: list[ValidatorState],
    block: Block,
    rng: np.random.Generator,
    latency_model=None,
) -> tuple[bool, ConsensusTiming, int]:
    """Simulate one pre-prepare / prepare / commit exchange.

    Honest nodes vote once for the digest they were pre-prepared with and
    commit on a quorum of matching votes. Crashed nodes send nothing.
    Byzantine nodes equivocate: conflicting digests to disjoint halves of
    the validator set. Returns (quorum committed, timing, messages sent).
    """
    n = len(validators)
    if n == 0:
        raise ValueError("validator set is empty")
    quorum = quorum_size(n)
    view = validators[0].view
    proposer = validators[view % n]
    messages = 0

    for v in validators:
        v.phase = Phase.IDLE
        v.committed_digest = None
        v.message_log[(view, block.index)] = {"prepare": {}, "commit": {}}

    digest_a = block.block_hash
    digest_b = hashlib.sha256(digest_a + b"equivocation").digest()

    def split_digest(sender_idx: int, recipient_idx: int) -> bytes:
        # Equivocators partition recipients in half and tell each half a
        # different story.
        return digest_a if recipient_idx < n // 2 else digest_b

    # Pre-prepare: proposer broadcasts to the other validators.
    pre_prepared: dict[str, bytes] = {}
    if proposer.fault_mode is not FaultMode.CRASHED:
        for idx, v in enumerate(validators):
            if v is proposer:
                pre_prepared[v.node_id] = digest_a
                continue
            messages += 1
            if proposer.fault_mode is FaultMode.BYZANTINE:
                pre_prepared[v.node_id] = split_digest(view % n, idx)
            else:
                pre_prepared[v.node_id] = digest_a
    t_network = _phase_latency(rng, latency_model, max(0, messages))

    # Prepare: every non-crashed pre-prepared validator broadcasts a vote.
    prepare_votes: dict[str, dict[bytes, int]] = {v.node_id: {} for v in validators}
    prepare_msgs = 0
    for s_idx, sender in enumerate(validators):
        if sender.fault_mode is FaultMode.CRASHED or sender.node_id not in pre_prepared:
            continue
        sender.phase = Phase.PRE_PREPARED
        for r_idx, recipient in enumerate(validators):
            prepare_msgs += 1
            if sender.fault_mode is FaultMode.BYZANTINE:
                voted = split_digest(s_idx, r_idx)
            else:
                voted = pre_prepared[sender.node_id]
            tally = prepare_votes[recipient.node_id]
            tally[voted] = tally.get(voted, 0) + 1
    messages += prepare_msgs
    t_prepare = _phase_latency(rng, latency_model, prepare_msgs)

    for v in validators:
        if v.fault_mode is FaultMode.CRASHED or v.node_id not in pre_prepared:
            continue
        own = pre_prepared[v.node_id]
        v.message_log[(view, block.index)]["prepare"] = dict(prepare_votes[v.node_id])
        if prepare_votes[v.node_id].get(own, 0) >= quorum:
            v.phase = Phase.PREPARED

    # Commit: prepared validators (and equivocators) broadcast commit votes.
    commit_votes: dict[str, dict[bytes, int]] = {v.node_id: {} for v in validators}
    commit_msgs = 0
    for s_idx, sender in enumerate(validators):
        if sender.fault_mode is FaultMode.CRASHED:
            continue
        byzantine = sender.fault_mode is FaultMode.BYZANTINE
        if sender.phase is not Phase.PREPARED and not byzantine:
            continue
        for r_idx, recipient in enumerate(validators):
            commit_msgs += 1
            voted = split_digest(s_idx, r_idx) if byzantine else pre_prepared[sender.node_id]
            tally = commit_votes[recipient.node_id]
            tally[voted] = tally.get(voted, 0) + 1
    messages += commit_msgs
    t_commit = _phase_latency(rng, latency_model, commit_msgs)

    committed = False
    for v in validators:
        if v.fault_mode is not FaultMode.HONEST or v.phase is not Phase.PREPARED:
            continue
        own = pre_prepared[v.node_id]
        v.message_log[(view, block.index)]["commit"] = dict(commit_votes[v.node_id])
        if commit_votes[v.node_id].get(own, 0) >= quorum:
            v.phase = Phase.COMMITTED
            v.committed_digest = own
            committed = True

    timing = ConsensusTiming(t_prepare, t_commit, t_network)
    return committed, timing, messages


def run_consensus(
    validators: list[ValidatorState],
    block: Block,
    rng: np.random.Generator,
    latency_model=None,
    max_view_changes: int = 1,
) -> tuple[bool, ConsensusTiming, int]:
    """pbft_round with a single proposer-rotation retry on failure."""
    total_messages = 0
    timing = ConsensusTiming(0.0, 0.0, 0.0)
    for attempt in range(max_view_changes + 1):
        committed, timing, messages = pbft_round(validators, block, rng, latency_model)
        total_messages += messages
        if committed:
            return True, timing, total_messages
        for v in validators:
            v.view += 1
    return False, timing, total_messages


# ---------------------------------------------------------------------------
# Threat registry (native stand-in for on-chain mitigation rules)


@dataclass(frozen=True)
class MitigationDirective:
    kind: str
    region_id: str
    signature_hex: str
    severity: float


class ThreatRegistry:
    """Applies committed blocks to mitigation rules, idempotently per block."""

    def __init__(self):
        self._applied: set[bytes] = set()

    def apply(self, block: Block) -> list[MitigationDirective]:
        if block.block_hash in self._applied:
            return []
        self._applied.add(block.block_hash)
        directives = []
        for event in block.transactions:
            if threat_level_for(event.severity) is ThreatLevel.HIGH:
                directives.append(
                    MitigationDirective(
                        kind="region_alert",
                        region_id=event.signature.region_id,
                        signature_hex=event.signature.digest.hex(),
                        severity=event.severity,
                    )
                )
        return directives


def registry_apply(registry: ThreatRegistry, committed_block: Block) -> list[MitigationDirective]:
    return registry.apply(committed_block)


def export_ledger(chain: list[Block], path) -> None:
    """JSON-lines ledger dump, one block per line, hex-encoded hashes."""
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for block in chain:
            record = {
                "index": block.index,
                "prev_hash": block.prev_hash.hex(),
                "tx_digest": block.tx_digest.hex(),
                "proposer_id": block.proposer_id,
                "timestamp_ms": block.timestamp_ms,
                "block_hash": block.block_hash.hex(),
                "transactions": [
                    {
                        "signature": e.signature.digest.hex(),
                        "severity": e.severity,
                        "attack_class": e.signature.attack_class.value,
                        "vehicle_id": e.signature.vehicle_id,
                        "region_id": e.signature.region_id,
                        "cross_regional_frequency": e.cross_regional_frequency,
                        "consensus_confidence": e.consensus_confidence,
                        "observed_at_ms": e.observed_at_ms,
                    }
                    for e in block.transactions
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
