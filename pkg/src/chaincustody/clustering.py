"""Multi-input address clustering with deterministic cluster identifiers.

The multi-input heuristic unifies all input addresses of each non-coinbase
transaction: whoever signed one input controls them all. Clusters are the
connected components of those co-spend relations, plus singletons for
addresses that only ever receive.

Cluster identifiers are content-derived: SHA-256 over the byte-wise sorted
address list, joined by a single newline. Re-clustering the same ledger
state therefore reproduces identical ids, and any membership change shows
up as a new id. Mixing transactions are handled by policy: cluster them
like everything else (naive), skip detected CoinJoins before unification
(exclude), or unify but flag the affected clusters (mark).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from chaincustody._kernels import connected_components
from chaincustody._version import __version__
from chaincustody.chain import GroundTruth, Ledger, address_sort_key
from chaincustody.errors import ValidationError
from chaincustody.evidence import (
    AuditEntry,
    AuditLog,
    Clock,
    ProvenanceRecord,
    canonical_bytes,
    make_provenance,
    system_clock,
)

METHOD_ID = "mih/1"

MIH_DESCRIPTION = (
    "multi-input: all input addresses of one spending transaction are "
    "treated as controlled by the same actor; clusters are the connected "
    "components of that co-spend relation, with never-spending addresses "
    "kept as singletons. Coinbase transactions are skipped."
)


def cluster_hash(addresses) -> str:
    """Content-derived cluster id: SHA-256 over the sorted address set.

    Input must be non-empty and duplicate-free; order does not matter
    because the set is re-sorted byte-wise before hashing. The digest is
    over the UTF-8 addresses joined by a single newline, no trailing one.
    """
    addrs = list(addresses)
    if not addrs:
        raise ValidationError("cannot hash an empty address set")
    if len(set(addrs)) != len(addrs):
        raise ValidationError("duplicate addresses in cluster")
    addrs.sort(key=address_sort_key)
    return hashlib.sha256("\n".join(addrs).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CoinJoinPolicy:
    """How clustering treats transactions detected as CoinJoins.

    ``naive`` unifies everything; ``exclude`` skips detected transactions
    entirely; ``mark`` unifies them but flags every resulting cluster that
    contains one of their input addresses. Timeouts from the full
    heuristic never count as detections.
    """

    mode: str
    heuristic: str | None = None
    full_params: "FullParams | None" = None  # noqa: F821 - defined in coinjoin

    NAIVE = "naive"
    EXCLUDE = "exclude"
    MARK = "mark"

    def __post_init__(self) -> None:
        if self.mode not in (self.NAIVE, self.EXCLUDE, self.MARK):
            raise ValidationError(f"unknown policy mode {self.mode!r}")
        if self.mode == self.NAIVE:
            if self.heuristic is not None:
                raise ValidationError("naive policy takes no heuristic")
        else:
            if self.heuristic not in ("structural", "full"):
                raise ValidationError(
                    f"{self.mode} policy needs heuristic 'structural' or 'full'"
                )
            if self.heuristic == "full" and self.full_params is None:
                raise ValidationError("full heuristic needs parameters")

    @classmethod
    def naive(cls) -> "CoinJoinPolicy":
        return cls(mode=cls.NAIVE)

    @classmethod
    def exclude(cls, heuristic: str = "structural", full_params=None) -> "CoinJoinPolicy":
        return cls(mode=cls.EXCLUDE, heuristic=heuristic, full_params=full_params)

    @classmethod
    def mark(cls, heuristic: str = "structural", full_params=None) -> "CoinJoinPolicy":
        return cls(mode=cls.MARK, heuristic=heuristic, full_params=full_params)

    def params_doc(self) -> dict:
        doc: dict = {"policy": self.mode}
        if self.heuristic is not None:
            doc["heuristic"] = self.heuristic
        if self.full_params is not None:
            doc["full_params"] = self.full_params.to_doc()
        return doc


@dataclass(frozen=True)
class ClusterMeta:
    contains_coinjoin: bool = False
    erroneous: bool = False
    excluded_addresses: frozenset[str] = frozenset()

    def to_doc(self) -> dict:
        return {
            "contains_coinjoin": self.contains_coinjoin,
            "erroneous": self.erroneous,
            "excluded_addresses": sorted(self.excluded_addresses, key=address_sort_key),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ClusterMeta":
        return cls(
            contains_coinjoin=doc.get("contains_coinjoin", False),
            erroneous=doc.get("erroneous", False),
            excluded_addresses=frozenset(doc.get("excluded_addresses", [])),
        )


@dataclass(frozen=True)
class ClusterSet:
    """A partition of addresses into clusters with content-derived ids."""

    clusters: dict[str, tuple[str, ...]]
    membership: dict[str, str]
    meta: dict[str, ClusterMeta]
    context: ProvenanceRecord

    def addresses(self) -> set[str]:
        return set(self.membership.keys())


def _assemble(
    groups: list[list[str]],
    metas: list[ClusterMeta],
    context: ProvenanceRecord,
) -> ClusterSet:
    clusters: dict[str, tuple[str, ...]] = {}
    membership: dict[str, str] = {}
    meta: dict[str, ClusterMeta] = {}
    for addrs, group_meta in zip(groups, metas):
        ordered = tuple(sorted(addrs, key=address_sort_key))
        cid = cluster_hash(ordered)
        if cid in clusters:
            raise ValidationError(f"duplicate cluster content for id {cid}")
        clusters[cid] = ordered
        meta[cid] = group_meta
        for addr in ordered:
            if addr in membership:
                raise ValidationError(f"address {addr} assigned to two clusters")
            membership[addr] = cid
    ordered_ids = sorted(clusters)
    return ClusterSet(
        clusters={cid: clusters[cid] for cid in ordered_ids},
        membership=membership,
        meta={cid: meta[cid] for cid in ordered_ids},
        context=context,
    )


def cluster_multi_input(
    ledger: Ledger,
    policy: CoinJoinPolicy,
    currency_code: str = "BTC",
    tool_version: str = __version__,
    clock: Clock = system_clock,
) -> ClusterSet:
    """Cluster the ledger's addresses under the multi-input heuristic.

    The address universe is every address appearing as a transaction input
    (coinbase aside) plus, as singletons, addresses that only appear in
    outputs, so attribution tags on passive addresses still resolve.
    """
    from chaincustody import coinjoin as cj

    height, block_hash = ledger.tip()
    verdict_yes: set[str] = set()
    if policy.mode != CoinJoinPolicy.NAIVE:
        assert policy.heuristic is not None
        kind = (
            cj.HeuristicKind.STRUCTURAL
            if policy.heuristic == "structural"
            else cj.HeuristicKind.FULL
        )
        scan = cj.scan_ledger(
            ledger,
            kind,
            policy.full_params,
            currency_code=currency_code,
            tool_version=tool_version,
            clock=clock,
        )
        verdict_yes = set(scan.coinjoin_txids)

    node_of: dict[str, int] = {}

    def intern(addr: str) -> int:
        node = node_of.get(addr)
        if node is None:
            node = len(node_of)
            node_of[addr] = node
        return node

    us: list[int] = []
    vs: list[int] = []
    for tx in ledger.iter_transactions():
        if tx.is_coinbase:
            continue
        nodes = [intern(a) for a in dict.fromkeys(tx.input_addresses())]
        if policy.mode == CoinJoinPolicy.EXCLUDE and tx.txid in verdict_yes:
            continue
        first = nodes[0]
        for other in nodes[1:]:
            us.append(first)
            vs.append(other)
    for tx in ledger.iter_transactions():
        for addr in tx.output_addresses():
            intern(addr)

    n = len(node_of)
    labels = connected_components(
        n, np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64)
    )

    by_label: dict[int, list[str]] = {}
    for addr, node in node_of.items():
        by_label.setdefault(int(labels[node]), []).append(addr)
    groups = list(by_label.values())

    marked: set[int] = set()
    if policy.mode == CoinJoinPolicy.MARK and verdict_yes:
        cj_inputs = {
            addr
            for txid in verdict_yes
            for addr in ledger.transactions[txid].input_addresses()
        }
        for index, group in enumerate(groups):
            if any(a in cj_inputs for a in group):
                marked.add(index)

    metas = [
        ClusterMeta(contains_coinjoin=(i in marked)) for i in range(len(groups))
    ]
    context = make_provenance(
        currency_code=currency_code,
        block_height=height,
        block_hash=block_hash,
        method_id=METHOD_ID,
        params_doc=policy.params_doc(),
        tool_version=tool_version,
        clock=clock,
    )
    return _assemble(groups, metas, context)


def find(cluster_set: ClusterSet, address: str) -> str | None:
    """Cluster id holding ``address``, or None for unknown addresses."""
    return cluster_set.membership.get(address)


class RectifyAction(Enum):
    EXCLUDE_ADDRESS = "ExcludeAddress"
    MARK_ERRONEOUS = "MarkErroneous"
    UNMARK_ERRONEOUS = "UnmarkErroneous"


def rectify(
    cluster_set: ClusterSet,
    target: str,
    action: RectifyAction,
    reason: str,
    actor: str,
    audit_log: AuditLog,
    clock: Clock = system_clock,
) -> tuple[ClusterSet, AuditEntry]:
    """Apply a correction and record it in the audit log.

    ``target`` is a cluster id or an address; addresses resolve to their
    cluster. ExcludeAddress moves the address into its own flagged
    singleton and recomputes the source cluster's id; Mark/Unmark toggle
    the erroneous flag. The returned ClusterSet is a new value.
    """
    if not reason:
        raise ValidationError("rectification requires a non-empty reason")

    if target in cluster_set.clusters:
        target_cluster = target
        target_address = None
    elif target in cluster_set.membership:
        target_cluster = cluster_set.membership[target]
        target_address = target
    else:
        raise ValidationError(f"unknown rectification target {target!r}")

    clusters = dict(cluster_set.clusters)
    meta = dict(cluster_set.meta)
    membership = dict(cluster_set.membership)
    before_hash = target_cluster

    if action is RectifyAction.EXCLUDE_ADDRESS:
        if target_address is None:
            raise ValidationError("ExcludeAddress requires an address target")
        remaining = [a for a in clusters[target_cluster] if a != target_address]
        source_meta = meta.pop(target_cluster)
        del clusters[target_cluster]
        after_hashes = []
        if remaining:
            new_id = cluster_hash(remaining)
            clusters[new_id] = tuple(remaining)
            meta[new_id] = replace(
                source_meta,
                excluded_addresses=source_meta.excluded_addresses | {target_address},
            )
            for a in remaining:
                membership[a] = new_id
            after_hashes.append(new_id)
        singleton_id = cluster_hash([target_address])
        if singleton_id in clusters:
            raise ValidationError(
                f"address {target_address} already forms cluster {singleton_id}"
            )
        clusters[singleton_id] = (target_address,)
        meta[singleton_id] = ClusterMeta(excluded_addresses=frozenset({target_address}))
        membership[target_address] = singleton_id
        after_hashes.append(singleton_id)
    elif action in (RectifyAction.MARK_ERRONEOUS, RectifyAction.UNMARK_ERRONEOUS):
        flag = action is RectifyAction.MARK_ERRONEOUS
        meta[target_cluster] = replace(meta[target_cluster], erroneous=flag)
        after_hashes = [target_cluster]
    else:  # pragma: no cover - enum is closed
        raise ValidationError(f"unknown rectification action {action!r}")

    ordered_ids = sorted(clusters)
    new_set = ClusterSet(
        clusters={cid: clusters[cid] for cid in ordered_ids},
        membership=membership,
        meta={cid: meta[cid] for cid in ordered_ids},
        context=cluster_set.context,
    )
    entry = audit_log.append(
        actor=actor,
        action=f"rectify/{action.value}",
        target=target,
        detail={
            "reason": reason,
            "before_cluster": before_hash,
            "after_clusters": after_hashes,
        },
        clock=clock,
    )
    return new_set, entry


@dataclass(frozen=True)
class EvalMetrics:
    pairwise_precision: float
    pairwise_recall: float
    linked_fraction: float

    def to_doc(self) -> dict:
        return {
            "pairwise_precision": self.pairwise_precision,
            "pairwise_recall": self.pairwise_recall,
            "linked_fraction": self.linked_fraction,
        }


def _pairs(count: int) -> int:
    return count * (count - 1) // 2


def evaluate(cluster_set: ClusterSet, ground_truth: GroundTruth) -> EvalMetrics:
    """Score a clustering against known wallets.

    Pairwise precision and recall count unordered address pairs that are
    co-clustered and/or co-walleted (empty denominators score 1.0).
    linked_fraction is the share of achievable ground-truth links made:
    for each multi-address wallet, its largest overlap with any single
    cluster minus one, summed, over the wallet size minus one, summed.
    """
    wallet_of = ground_truth.address_wallet()
    for addr in wallet_of:
        if addr not in cluster_set.membership:
            raise ValidationError(f"ground truth references unknown address {addr!r}")

    per_cluster_known: dict[str, int] = {}
    per_cluster_wallet: dict[tuple[str, str], int] = {}
    for addr, wallet in wallet_of.items():
        cid = cluster_set.membership[addr]
        per_cluster_known[cid] = per_cluster_known.get(cid, 0) + 1
        key = (cid, wallet)
        per_cluster_wallet[key] = per_cluster_wallet.get(key, 0) + 1

    co_clustered = sum(_pairs(n) for n in per_cluster_known.values())
    matching = sum(_pairs(n) for n in per_cluster_wallet.values())
    co_walleted = sum(_pairs(len(addrs)) for addrs in ground_truth.wallets.values())

    precision = matching / co_clustered if co_clustered else 1.0
    recall = matching / co_walleted if co_walleted else 1.0

    linked_num = 0
    linked_den = 0
    for wallet_id, addrs in ground_truth.wallets.items():
        if len(addrs) < 2:
            continue
        best = max(
            per_cluster_wallet.get((cid, wallet_id), 0)
            for cid in {cluster_set.membership[a] for a in addrs}
        )
        linked_num += best - 1
        linked_den += len(addrs) - 1
    linked = linked_num / linked_den if linked_den else 1.0

    return EvalMetrics(
        pairwise_precision=precision, pairwise_recall=recall, linked_fraction=linked
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def export_clusterset(cluster_set: ClusterSet) -> bytes:
    """Canonical export; byte-identical for identical partitions and context."""
    doc = {
        "provenance": cluster_set.context.to_doc(),
        "clusters": [
            {
                "id": cid,
                "addresses": list(cluster_set.clusters[cid]),
                "meta": cluster_set.meta[cid].to_doc(),
            }
            for cid in sorted(cluster_set.clusters)
        ],
    }
    return canonical_bytes(doc) + b"\n"


def parse_clusterset(data: bytes | str) -> ClusterSet:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed cluster set document: {exc.msg}") from exc
    try:
        context = ProvenanceRecord.from_doc(doc["provenance"])
        rows = doc["clusters"]
    except KeyError as exc:
        raise ValidationError(f"cluster set document missing field {exc}") from exc
    clusters: dict[str, tuple[str, ...]] = {}
    membership: dict[str, str] = {}
    meta: dict[str, ClusterMeta] = {}
    for row in rows:
        addrs = tuple(row["addresses"])
        if list(addrs) != sorted(addrs, key=address_sort_key):
            raise ValidationError(f"cluster {row['id']} addresses are not sorted")
        cid = cluster_hash(addrs)
        if cid != row["id"]:
            raise ValidationError(
                f"cluster id {row['id']} does not match its address content"
            )
        clusters[cid] = addrs
        meta[cid] = ClusterMeta.from_doc(row.get("meta", {}))
        for addr in addrs:
            if addr in membership:
                raise ValidationError(f"address {addr} appears in two clusters")
            membership[addr] = cid
    return ClusterSet(clusters=clusters, membership=membership, meta=meta, context=context)
