"""Command-line workflows for reproducible investigations.

Every state-changing command writes its artifacts under --out with fixed
names and appends exactly one entry to the hash-chained audit log;
read-only commands (tag validate, tag export, audit verify, disclose)
append none. Artifact and audit content never embeds absolute paths, so
running the same commands on the same inputs with a pinned --clock yields
byte-identical output trees.

Exit codes: 0 success, 1 validation or verification failure, 2 bad input
or usage, 3 audit-chain integrity failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from chaincustody import clustering, coinjoin, evidence, sharing
from chaincustody._version import __version__
from chaincustody.chain import GroundTruth, Ledger, SynthSpec, parse_ledger, serialize_ledger
from chaincustody.errors import (
    ChainCustodyError,
    IntegrityError,
    LedgerError,
    ValidationError,
)
from chaincustody.synth import generate_synthetic

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_INTEGRITY = 3

LEDGER_FILE = "ledger.jsonl"
GROUND_TRUTH_FILE = "groundtruth.json"
CLUSTERS_FILE = "clusters.json"
MERGED_CLUSTERS_FILE = "clusters-merged.json"
SCAN_FILE = "scan.json"
REPORT_CSV = "contamination.csv"
REPORT_SVG = "contamination.svg"
REPORT_SUMMARY = "contamination_summary.json"
EVALUATION_FILE = "evaluation.json"
AUDIT_FILE = "audit.log"
TAGS_DIR = "tags"
RECORDS_DIR = "records"

_CMD_NS = sharing.DEFAULT_PREFIXES["tool"] + "cmd/"


@dataclass
class Session:
    out_dir: Path
    ledger_path: Path
    audit_log_path: Path
    actor: str
    currency: str
    case: str
    clock: evidence.Clock

    def audit(self, command: str, target: str, detail: dict) -> None:
        log = evidence.AuditLog(self.audit_log_path)
        payload = {"case": self.case}
        payload.update(detail)
        log.append(self.actor, _CMD_NS + command, target, payload, clock=self.clock)

    def write(self, name: str, data: bytes) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return path

    def load_ledger(self) -> Ledger:
        return parse_ledger(self.ledger_path.read_bytes())


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _stable_json(doc) -> bytes:
    return (
        json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
    ).encode("utf-8")


def _session(args: argparse.Namespace) -> Session:
    config: dict = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return config.get(key, default)

    out_dir = Path(pick(args.out, "out", "out"))
    ledger = Path(pick(args.ledger, "ledger", out_dir / LEDGER_FILE))
    audit_log = Path(pick(args.audit_log, "audit_log", out_dir / AUDIT_FILE))
    clock_value = pick(args.clock, "clock", None)
    clock = evidence.fixed_clock(clock_value) if clock_value else evidence.system_clock
    return Session(
        out_dir=out_dir,
        ledger_path=ledger,
        audit_log_path=audit_log,
        actor=pick(args.actor, "actor", "analyst"),
        currency=pick(args.currency, "currency", "BTC"),
        case=pick(args.case, "case", "default"),
        clock=clock,
    )


def _full_params(args: argparse.Namespace) -> coinjoin.FullParams:
    num, _, den = (args.percentage_fee or "0/1").partition("/")
    return coinjoin.FullParams(
        min_base_fee=args.min_base_fee,
        percentage_fee=(int(num), int(den or "1")),
        max_search_steps=args.max_steps,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(session: Session, args: argparse.Namespace) -> int:
    raw = Path(args.path).read_bytes()
    ledger = parse_ledger(raw)
    normalized = serialize_ledger(ledger)
    session.write(LEDGER_FILE, normalized)
    session.audit(
        "ingest",
        LEDGER_FILE,
        {
            "source": Path(args.path).name,
            "source_digest": _digest(raw),
            "ledger_digest": _digest(normalized),
        },
    )
    print(f"ingested {len(ledger.transactions)} transactions into {LEDGER_FILE}")
    return EXIT_OK


def cmd_synth(session: Session, args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text())
        if args.seed is not None:
            doc["seed"] = args.seed
        spec = SynthSpec.from_doc(doc)
    except (json.JSONDecodeError, ValidationError) as exc:
        print(f"error: invalid synthetic spec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ledger, ground_truth = generate_synthetic(spec)
    data = serialize_ledger(ledger)
    session.write(LEDGER_FILE, data)
    session.write(GROUND_TRUTH_FILE, evidence.canonical_bytes(ground_truth.to_doc()) + b"\n")
    session.audit(
        "synth",
        LEDGER_FILE,
        {"spec": Path(args.spec).name, "seed": spec.seed, "ledger_digest": _digest(data)},
    )
    print(f"generated {len(ledger.transactions)} transactions, digest {_digest(data)}")
    return EXIT_OK


def cmd_cluster(session: Session, args: argparse.Namespace) -> int:
    if args.policy == "naive":
        policy = clustering.CoinJoinPolicy.naive()
    else:
        params = _full_params(args) if args.heuristic == "full" else None
        maker = (
            clustering.CoinJoinPolicy.exclude
            if args.policy == "exclude"
            else clustering.CoinJoinPolicy.mark
        )
        policy = maker(heuristic=args.heuristic, full_params=params)
    ledger = session.load_ledger()
    cluster_set = clustering.cluster_multi_input(
        ledger, policy, currency_code=session.currency, clock=session.clock
    )
    data = clustering.export_clusterset(cluster_set)
    session.write(CLUSTERS_FILE, data)
    session.audit(
        "cluster",
        CLUSTERS_FILE,
        {
            "policy": policy.params_doc(),
            "n_clusters": len(cluster_set.clusters),
            "artifact_digest": _digest(data),
        },
    )
    print(f"{len(cluster_set.clusters)} clusters over {len(cluster_set.membership)} addresses")
    return EXIT_OK


def cmd_scan(session: Session, args: argparse.Namespace) -> int:
    kind = (
        coinjoin.HeuristicKind.STRUCTURAL
        if args.heuristic == "structural"
        else coinjoin.HeuristicKind.FULL
    )
    params = _full_params(args) if kind is coinjoin.HeuristicKind.FULL else None
    ledger = session.load_ledger()
    scan = coinjoin.scan_ledger(
        ledger, kind, params, currency_code=session.currency, clock=session.clock
    )
    data = coinjoin.export_scan(scan)
    session.write(SCAN_FILE, data)
    session.audit(
        "scan",
        SCAN_FILE,
        {
            "heuristic": args.heuristic,
            "n_detected": len(scan.coinjoin_txids),
            "n_timeouts": len(scan.timeouts),
            "artifact_digest": _digest(data),
        },
    )
    print(f"detected {len(scan.coinjoin_txids)} CoinJoins, {len(scan.timeouts)} timeouts")
    return EXIT_OK


def cmd_report(session: Session, args: argparse.Namespace) -> int:
    ledger = session.load_ledger()
    cluster_set = clustering.parse_clusterset((session.out_dir / CLUSTERS_FILE).read_bytes())
    scan = coinjoin.import_scan((session.out_dir / SCAN_FILE).read_bytes(), ledger)
    report = coinjoin.contamination_report(cluster_set, scan)
    csv_bytes, svg_bytes = coinjoin.render_report(report, args.top)
    session.write(REPORT_CSV, csv_bytes)
    session.write(REPORT_SVG, svg_bytes)
    session.write(REPORT_SUMMARY, _stable_json(report.summary.to_doc()))
    session.audit(
        "report",
        REPORT_CSV,
        {
            "top_n": args.top,
            "n_affected": report.summary.n_affected,
            "csv_digest": _digest(csv_bytes),
        },
    )
    print(
        f"{report.summary.n_affected} of {report.summary.n_clusters} clusters contain CoinJoin inputs"
    )
    return EXIT_OK


def cmd_evaluate(session: Session, args: argparse.Namespace) -> int:
    cluster_set = clustering.parse_clusterset(Path(args.clusters).read_bytes())
    ground_truth = GroundTruth.from_doc(json.loads(Path(args.ground_truth).read_text()))
    metrics = clustering.evaluate(cluster_set, ground_truth)
    data = _stable_json(metrics.to_doc())
    session.write(EVALUATION_FILE, data)
    session.audit(
        "evaluate",
        EVALUATION_FILE,
        {"clusters": Path(args.clusters).name, "metrics_digest": _digest(data)},
    )
    print(
        f"precision={metrics.pairwise_precision:.4f} recall={metrics.pairwise_recall:.4f} "
        f"linked={metrics.linked_fraction:.4f}"
    )
    return EXIT_OK


def _default_agent(session: Session) -> sharing.Agent:
    slug = "".join(c if c.isalnum() else "-" for c in session.actor.lower())
    return sharing.Agent(
        iri=sharing.DEFAULT_PREFIXES["tool"] + f"agent/{slug}",
        name=session.actor,
        category=sharing.DEFAULT_PREFIXES["vocab"] + "Person",
    )


def cmd_tag_add(session: Session, args: argparse.Namespace) -> int:
    context = sharing.DEFAULT_CONTEXT
    now = session.clock()
    seed = "\x1f".join([args.label, args.address, args.category, args.source_label, now])
    handle = hashlib.sha256(seed.encode("utf-8")).hexdigest()[:16]
    tool_ns = sharing.DEFAULT_PREFIXES["tool"]
    action = sharing.InvestigativeAction(
        iri=tool_ns + f"action/{handle}",
        category=context.expand(args.action_category),
        start_time=now,
        end_time=now,
        performer=_default_agent(session),
        instrument=sharing.Instrument(name="chaincustody", version=__version__),
    )
    source = sharing.SourceRef(
        iri=tool_ns + f"source/{handle}",
        label=args.source_label,
        category=context.expand(args.source_category),
        url=args.source_url,
        archive_ref=args.archive_ref,
    )
    signing_key = evidence.load_signing_key(args.sign_key) if args.sign_key else None
    tag = sharing.build_tag(
        iri=args.tag_id or tool_ns + f"tag/{handle}",
        label=args.label,
        category=context.expand(args.category),
        address=args.address,
        currency_code=session.currency,
        action=action,
        source=source,
        signing_key=signing_key,
        clock=session.clock,
    )
    data = sharing.export_tag(tag, context)
    name = f"{TAGS_DIR}/tag-{handle}.jsonld"
    session.write(name, data)
    session.audit("tag-add", name, {"tag_hash": tag.hash, "artifact_digest": _digest(data)})
    print(f"wrote {name}")
    return EXIT_OK


def _public_keys(args: argparse.Namespace) -> dict:
    keys = {}
    for path in args.pub_key or []:
        key_id, key = evidence.load_public_key(path)
        keys[key_id] = key
    return keys


def cmd_tag_export(session: Session, args: argparse.Namespace) -> int:
    tag, warnings = sharing.import_tag(
        Path(args.path).read_bytes(), sharing.builtin_vocabularies(), _public_keys(args)
    )
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    sys.stdout.write(sharing.export_tag(tag).decode("utf-8"))
    return EXIT_OK


def cmd_tag_import(session: Session, args: argparse.Namespace) -> int:
    data = Path(args.path).read_bytes()
    tag, warnings = sharing.import_tag(data, sharing.builtin_vocabularies(), _public_keys(args))
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    normalized = sharing.export_tag(tag)
    name = f"{TAGS_DIR}/imported-{tag.hash[:16]}.jsonld"
    session.write(name, normalized)
    session.audit(
        "tag-import",
        name,
        {
            "source": Path(args.path).name,
            "tag_hash": tag.hash,
            "warnings": warnings,
        },
    )
    print(f"imported tag {tag.iri} -> {name}")
    return EXIT_OK


def cmd_tag_validate(session: Session, args: argparse.Namespace) -> int:
    try:
        tag, warnings = sharing.import_tag(
            Path(args.path).read_bytes(), sharing.builtin_vocabularies(), _public_keys(args)
        )
    except ValidationError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"valid tag {tag.iri} (hash {tag.hash})")
    return EXIT_OK


def cmd_record_export(session: Session, args: argparse.Namespace) -> int:
    cluster_set = clustering.parse_clusterset(Path(args.clusters).read_bytes())
    if args.cluster_id not in cluster_set.clusters:
        raise ValidationError(f"cluster id {args.cluster_id} not in {args.clusters}")
    context = cluster_set.context
    now = session.clock()
    tool_ns = sharing.DEFAULT_PREFIXES["tool"]
    handle = args.cluster_id[:16]
    action = sharing.InvestigativeAction(
        iri=tool_ns + f"action/cluster-{handle}",
        category=sharing.DEFAULT_PREFIXES["vocab"] + "ManualEntry",
        start_time=now,
        end_time=now,
        performer=_default_agent(session),
        instrument=sharing.Instrument(name=context.method_id, version=context.tool_version),
    )
    signing_key = evidence.load_signing_key(args.sign_key) if args.sign_key else None
    record = sharing.build_cluster_record(
        iri=tool_ns + f"cluster/{handle}",
        currency_code=context.currency_code,
        block_hash=context.block_hash,
        addresses=cluster_set.clusters[args.cluster_id],
        action=action,
        tag_refs=tuple(args.tag_ref or ()),
        erroneous=cluster_set.meta[args.cluster_id].erroneous,
        signing_key=signing_key,
    )
    data = sharing.export_cluster(record)
    name = f"{RECORDS_DIR}/record-{handle}.jsonld"
    session.write(name, data)
    session.audit(
        "record-export",
        name,
        {"cluster_id": args.cluster_id, "artifact_digest": _digest(data)},
    )
    print(f"wrote {name}")
    return EXIT_OK


def cmd_record_import(session: Session, args: argparse.Namespace) -> int:
    data = Path(args.path).read_bytes()
    record, warnings = sharing.import_cluster(
        data, sharing.builtin_vocabularies(), _public_keys(args)
    )
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    normalized = sharing.export_cluster(record)
    name = f"{RECORDS_DIR}/imported-{record.cluster_hash[:16]}.jsonld"
    session.write(name, normalized)
    session.audit(
        "record-import",
        name,
        {"source": Path(args.path).name, "cluster_hash": record.cluster_hash, "warnings": warnings},
    )
    print(f"imported cluster record {record.iri} -> {name}")
    return EXIT_OK


def cmd_record_merge(session: Session, args: argparse.Namespace) -> int:
    cluster_set = clustering.parse_clusterset(Path(args.clusters).read_bytes())
    records = []
    for path in args.records:
        record, warnings = sharing.import_cluster(
            Path(path).read_bytes(), sharing.builtin_vocabularies(), _public_keys(args)
        )
        for warning in warnings:
            print(f"warning: {warning}", file=sys.stderr)
        records.append(record)
    merged = sharing.merge_shared_clusters(cluster_set, records, clock=session.clock)
    data = clustering.export_clusterset(merged)
    session.write(MERGED_CLUSTERS_FILE, data)
    session.audit(
        "record-merge",
        MERGED_CLUSTERS_FILE,
        {
            "records": sorted(r.iri for r in records),
            "n_clusters": len(merged.clusters),
            "artifact_digest": _digest(data),
        },
    )
    print(f"merged {len(records)} records -> {len(merged.clusters)} clusters")
    return EXIT_OK


def cmd_audit_verify(session: Session, args: argparse.Namespace) -> int:
    log = evidence.AuditLog(session.audit_log_path)
    bad = log.verify()
    if bad is not None:
        print(f"audit chain broken at seq {bad}", file=sys.stderr)
        return EXIT_INTEGRITY
    print(f"audit log intact ({len(log.entries)} entries)")
    return EXIT_OK


def cmd_disclose(session: Session, args: argparse.Namespace) -> int:
    lines = [
        "FUNCTION AND USAGE DISCLOSURE",
        f"tool: chaincustody {__version__}",
        "",
        "methods:",
        f"  {clustering.METHOD_ID}: {clustering.MIH_DESCRIPTION}",
        f"  {coinjoin.STRUCTURAL_METHOD_ID}: {coinjoin.STRUCTURAL_RULE}",
        f"  {coinjoin.FULL_METHOD_ID}: {coinjoin.FULL_RULE}",
        f"  default full-heuristic parameters: {coinjoin.FullParams().to_doc()}",
        "",
        "identifiers and integrity:",
        "  cluster ids: SHA-256 over the byte-wise sorted address set joined by newlines",
        "  document digests: SHA-256 over canonical JSON (sorted keys, UTF-8, no floats)",
        f"  signature schemes: {evidence.SCHEME_ED25519}",
        "  timestamp authorities: local (injected clock)",
        "",
        "vocabulary namespaces:",
    ]
    for vocab in sharing.builtin_vocabularies():
        terms = ", ".join(sorted(vocab.terms))
        lines.append(f"  {vocab.name}: {vocab.namespace} [{terms}]")
    lines.append("")
    lines.append(f"commands executed for case {session.case!r}:")
    log = evidence.AuditLog(session.audit_log_path)
    matched = 0
    for entry in log.entries:
        if entry.detail.get("case") != session.case:
            continue
        matched += 1
        lines.append(
            f"  seq {entry.seq} {entry.timestamp} {entry.actor} "
            f"{entry.action.rsplit('/', 1)[-1]} -> {entry.target}"
        )
    if matched == 0:
        lines.append("  (none recorded)")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_full_heuristic_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--min-base-fee", type=int, default=0)
    parser.add_argument("--percentage-fee", default="0/1", help="rational NUM/DEN")
    parser.add_argument("--max-steps", type=int, default=1_000_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaincustody",
        description="UTXO clustering, CoinJoin analysis, and evidence sharing",
    )
    parser.add_argument("--config", help="JSON file with default options")
    parser.add_argument("--ledger", help="ledger file (default <out>/ledger.jsonl)")
    parser.add_argument("--out", help="artifact directory (default ./out)")
    parser.add_argument("--audit-log", help="audit log path (default <out>/audit.log)")
    parser.add_argument("--actor", help="acting investigator name")
    parser.add_argument("--currency", help="currency code (default BTC)")
    parser.add_argument("--case", help="case id recorded in audit entries")
    parser.add_argument("--clock", help="fixed RFC 3339 UTC time for reproducible runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and normalize a ledger file")
    p.add_argument("path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic ledger from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="multi-input clustering")
    p.add_argument("--policy", choices=["naive", "exclude", "mark"], default="naive")
    p.add_argument("--heuristic", choices=["structural", "full"], default="structural")
    _add_full_heuristic_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("scan", help="scan the ledger for CoinJoin transactions")
    p.add_argument("--heuristic", choices=["structural", "full"], default="structural")
    _add_full_heuristic_flags(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("report", help="contamination report from clusters + scan")
    p.add_argument("--top", type=int, default=100)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("evaluate", help="score clusters against ground truth")
    p.add_argument("--clusters", required=True)
    p.add_argument("--ground-truth", required=True)
    p.set_defaults(func=cmd_evaluate)

    tag = sub.add_parser("tag", help="attribution tag operations").add_subparsers(
        dest="tag_command", required=True
    )
    p = tag.add_parser("add", help="create a tag from flags")
    p.add_argument("--label", required=True)
    p.add_argument("--category", required=True, help="tag category CURIE or IRI")
    p.add_argument("--address", required=True)
    p.add_argument("--source-label", required=True)
    p.add_argument("--source-url")
    p.add_argument("--source-category", default="vocab:Website")
    p.add_argument("--action-category", default="vocab:ManualEntry")
    p.add_argument("--archive-ref")
    p.add_argument("--sign-key")
    p.add_argument("--tag-id")
    p.set_defaults(func=cmd_tag_add)
    p = tag.add_parser("export", help="validate and print canonical bytes")
    p.add_argument("path")
    p.add_argument("--pub-key", action="append")
    p.set_defaults(func=cmd_tag_export)
    p = tag.add_parser("import", help="validate and store a foreign tag")
    p.add_argument("path")
    p.add_argument("--pub-key", action="append")
    p.set_defaults(func=cmd_tag_import)
    p = tag.add_parser("validate", help="check a tag file, exit 1 on violations")
    p.add_argument("path")
    p.add_argument("--pub-key", action="append")
    p.set_defaults(func=cmd_tag_validate)

    record = sub.add_parser("record", help="cluster record operations").add_subparsers(
        dest="record_command", required=True
    )
    p = record.add_parser("export", help="export one cluster as a shareable record")
    p.add_argument("--clusters", required=True)
    p.add_argument("--cluster-id", required=True)
    p.add_argument("--tag-ref", action="append")
    p.add_argument("--sign-key")
    p.set_defaults(func=cmd_record_export)
    p = record.add_parser("import", help="validate and store a foreign record")
    p.add_argument("path")
    p.add_argument("--pub-key", action="append")
    p.set_defaults(func=cmd_record_import)
    p = record.add_parser("merge", help="merge imported records into a clustering")
    p.add_argument("--clusters", required=True)
    p.add_argument("records", nargs="+")
    p.add_argument("--pub-key", action="append")
    p.set_defaults(func=cmd_record_merge)

    audit = sub.add_parser("audit", help="audit log operations").add_subparsers(
        dest="audit_command", required=True
    )
    p = audit.add_parser("verify", help="verify the audit hash chain")
    p.set_defaults(func=cmd_audit_verify)

    p = sub.add_parser("disclose", help="print the function and usage description")
    p.set_defaults(func=cmd_disclose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        session = _session(args)
        return args.func(session, args)
    except LedgerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ChainCustodyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
