"""Forensic analytics for UTXO ledgers: multi-input address clustering,
CoinJoin contamination analysis, and evidence-grade record sharing."""

from chaincustody._version import __version__
from chaincustody.chain import (
    GroundTruth,
    Ledger,
    SynthSpec,
    Transaction,
    address_transactions,
    ledger_tip,
    parse_ledger,
    serialize_ledger,
)
from chaincustody.clustering import (
    ClusterSet,
    CoinJoinPolicy,
    cluster_hash,
    cluster_multi_input,
    evaluate,
    find,
    rectify,
)
from chaincustody.coinjoin import (
    CoinJoinVerdict,
    FullParams,
    HeuristicKind,
    contamination_report,
    detect_full,
    detect_structural,
    render_report,
    scan_ledger,
)
from chaincustody.evidence import (
    AuditLog,
    ProvenanceRecord,
    append_audit,
    canonical_digest,
    sign,
    timestamp,
    verify,
    verify_audit,
)
from chaincustody.sharing import (
    AttributionTag,
    ClusterRecord,
    builtin_vocabularies,
    export_cluster,
    export_tag,
    import_cluster,
    import_tag,
    merge_shared_clusters,
)
from chaincustody.synth import generate_synthetic

__all__ = [
    "__version__",
    "GroundTruth",
    "Ledger",
    "SynthSpec",
    "Transaction",
    "address_transactions",
    "ledger_tip",
    "parse_ledger",
    "serialize_ledger",
    "ClusterSet",
    "CoinJoinPolicy",
    "cluster_hash",
    "cluster_multi_input",
    "evaluate",
    "find",
    "rectify",
    "CoinJoinVerdict",
    "FullParams",
    "HeuristicKind",
    "contamination_report",
    "detect_full",
    "detect_structural",
    "render_report",
    "scan_ledger",
    "AuditLog",
    "ProvenanceRecord",
    "append_audit",
    "canonical_digest",
    "sign",
    "timestamp",
    "verify",
    "verify_audit",
    "AttributionTag",
    "ClusterRecord",
    "builtin_vocabularies",
    "export_cluster",
    "export_tag",
    "import_cluster",
    "import_tag",
    "merge_shared_clusters",
    "generate_synthetic",
]
