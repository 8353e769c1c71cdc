"""Attribution-tag and cluster-record exchange as linked data.

Records travel as JSON-LD documents under a fixed profile: a known
``@context`` mapping the prefixes ``case:`` (concept terms), ``vocab:``
(category terms), and ``tool:`` (instance identifiers) to configurable
namespaces, canonical key order, no remote context fetching, and no graph
expansion. Everything needed to judge a record arrives inside it: the
acting investigator, the source it came from, the action that produced
it, an integrity hash, optional signature, and timestamp tokens.

Integrity digests are computed over a plain payload document with all
IRIs fully expanded, so two agencies using different prefix conventions
agree on every hash. Category IRIs must resolve against agreed-upon
vocabularies; unknown signature keys degrade to a warning (agencies often
exchange records before keys), while a hash mismatch is always fatal.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

import numpy as np

from chaincustody._kernels import connected_components
from chaincustody._version import __version__
from chaincustody.chain import address_sort_key, is_valid_address
from chaincustody.clustering import ClusterMeta, ClusterSet, cluster_hash
from chaincustody.errors import ValidationError
from chaincustody.evidence import (
    Clock,
    ProvenanceRecord,
    SignatureEnvelope,
    SigningKey,
    TimestampToken,
    canonical_bytes,
    canonical_digest,
    is_hex_digest,
    parse_rfc3339,
    sign as sign_payload,
    system_clock,
    timestamp as issue_timestamp,
    verify as verify_payload,
    verify_timestamp,
)

_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*:")

DEFAULT_PREFIXES = {
    "case": "http://case.example.org/core#",
    "vocab": "http://example.com/category#",
    "tool": "http://exampletool.com/",
}

MERGE_METHOD_ID = "mih+shared/1"


def is_absolute_iri(value: object) -> bool:
    return isinstance(value, str) and bool(_SCHEME_RE.match(value)) and len(value) > 2


@dataclass(frozen=True)
class SharingContext:
    """Prefix-to-namespace mapping used in exported ``@context`` blocks."""

    prefixes: dict[str, str]

    def __post_init__(self) -> None:
        for prefix, namespace in self.prefixes.items():
            if not re.fullmatch(r"[a-z][a-z0-9]*", prefix):
                raise ValidationError(f"bad context prefix {prefix!r}")
            if not is_absolute_iri(namespace):
                raise ValidationError(f"namespace for {prefix!r} must be an absolute IRI")

    def expand(self, name: str) -> str:
        prefix, sep, rest = name.partition(":")
        if sep and prefix in self.prefixes:
            return self.prefixes[prefix] + rest
        if is_absolute_iri(name):
            return name
        raise ValidationError(f"cannot expand {name!r}: unknown prefix and not absolute")

    def compact(self, iri: str) -> str:
        best = ""
        best_prefix = None
        for prefix, namespace in self.prefixes.items():
            if iri.startswith(namespace) and len(namespace) > len(best):
                best, best_prefix = namespace, prefix
        if best_prefix is None:
            return iri
        return f"{best_prefix}:{iri[len(best):]}"


DEFAULT_CONTEXT = SharingContext(prefixes=dict(DEFAULT_PREFIXES))


# ---------------------------------------------------------------------------
# Vocabularies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VocabTerm:
    iri: str
    definition: str


@dataclass(frozen=True)
class Vocabulary:
    name: str
    namespace: str
    terms: dict[str, VocabTerm]

    def __post_init__(self) -> None:
        for local, term in self.terms.items():
            if not term.iri.startswith(self.namespace):
                raise ValidationError(
                    f"term {local} IRI {term.iri} outside namespace {self.namespace}"
                )

    def iris(self) -> set[str]:
        return {term.iri for term in self.terms.values()}


_TAG_TERMS = {
    "Organization": "A company, agency, or other collective real-world actor.",
    "Individual": "A single natural person as the attributed actor.",
    "Exchange": "A service converting between currencies on behalf of customers.",
    "WalletProvider": "A service hosting wallets and keys for its users.",
    "Miner": "An entity producing blocks and collecting block rewards.",
    "Marketplace": "A venue where goods or services are traded.",
}
_AGENT_TERMS = {
    "Person": "A natural person performing or responsible for an action.",
    "Organization": "A collective body performing or responsible for an action.",
    "low": "Low assessed reliability of an agent's contributions.",
    "medium": "Medium assessed reliability of an agent's contributions.",
    "high": "High assessed reliability of an agent's contributions.",
}
_SOURCE_TERMS = {
    "Website": "A publicly reachable site on the open web.",
    "DataDump": "A bulk extract, for example from a seized device or leak.",
    "Device": "A physical device examined directly.",
    "TorHiddenService": "A service reachable only through an anonymity network.",
}
_ACTION_TERMS = {
    "ManualEntry": "Information typed in by an investigator.",
    "Crawl": "Automated retrieval by a crawler or scraper.",
}


def builtin_vocabularies(context: SharingContext = DEFAULT_CONTEXT) -> list[Vocabulary]:
    """The four shipped category vocabularies: tag, agent, source, action."""
    namespace = context.prefixes["vocab"]

    def make(name: str, terms: dict[str, str]) -> Vocabulary:
        return Vocabulary(
            name=name,
            namespace=namespace,
            terms={
                local: VocabTerm(iri=namespace + local, definition=text)
                for local, text in terms.items()
            },
        )

    return [
        make("tag", _TAG_TERMS),
        make("agent", _AGENT_TERMS),
        make("source", _SOURCE_TERMS),
        make("action", _ACTION_TERMS),
    ]


def vocabulary_registry_doc(vocabularies: list[Vocabulary]) -> dict:
    """One JSON document listing every vocabulary, fit for static hosting."""
    return {
        "vocabularies": [
            {
                "name": vocab.name,
                "namespace": vocab.namespace,
                "terms": {
                    local: {"iri": term.iri, "definition": term.definition}
                    for local, term in sorted(vocab.terms.items())
                },
            }
            for vocab in vocabularies
        ]
    }


def _vocab_by_name(vocabularies: list[Vocabulary], name: str) -> Vocabulary:
    for vocab in vocabularies:
        if vocab.name == name:
            return vocab
    raise ValidationError(f"no {name!r} vocabulary supplied")


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------


def _require_iri(value: str, what: str) -> None:
    if not is_absolute_iri(value):
        raise ValidationError(f"{what} must be an absolute IRI, got {value!r}")


@dataclass(frozen=True)
class Agent:
    iri: str
    name: str
    category: str
    reliability: str | None = None

    def __post_init__(self) -> None:
        _require_iri(self.iri, "agent iri")
        _require_iri(self.category, "agent category")
        if not self.name:
            raise ValidationError("agent name must be non-empty")
        if self.reliability is not None:
            _require_iri(self.reliability, "agent reliability")


@dataclass(frozen=True)
class SourceRef:
    iri: str
    label: str
    category: str
    url: str | None = None
    archive_ref: str | None = None

    def __post_init__(self) -> None:
        _require_iri(self.iri, "source iri")
        _require_iri(self.category, "source category")
        if not self.label:
            raise ValidationError("source label must be non-empty")


@dataclass(frozen=True)
class Instrument:
    name: str
    version: str


@dataclass(frozen=True)
class InvestigativeAction:
    iri: str
    category: str
    start_time: str
    end_time: str
    performer: Agent
    instrument: Instrument | None = None

    def __post_init__(self) -> None:
        _require_iri(self.iri, "action iri")
        _require_iri(self.category, "action category")
        if parse_rfc3339(self.start_time) > parse_rfc3339(self.end_time):
            raise ValidationError("action start_time must be <= end_time")


@dataclass(frozen=True)
class AttributionTag:
    iri: str
    label: str
    category: str
    address: str
    currency_code: str
    action: InvestigativeAction
    source: SourceRef
    hash: str
    signature: SignatureEnvelope | None = None
    timestamps: tuple[TimestampToken, ...] = ()

    def __post_init__(self) -> None:
        _require_iri(self.iri, "tag iri")
        _require_iri(self.category, "tag category")
        if not self.label:
            raise ValidationError("tag label must be non-empty")
        if not is_valid_address(self.address):
            raise ValidationError(f"tag address {self.address!r} is not a valid address")
        if not self.currency_code:
            raise ValidationError("tag currency_code must be non-empty")
        if not is_hex_digest(self.hash):
            raise ValidationError("tag hash must be 64 lowercase hex chars")


@dataclass(frozen=True)
class ClusterRecord:
    iri: str
    currency_code: str
    block_hash: str
    addresses: tuple[str, ...]
    cluster_hash: str
    tag_refs: tuple[str, ...]
    action: InvestigativeAction
    signature: SignatureEnvelope | None = None
    erroneous: bool = False

    def __post_init__(self) -> None:
        _require_iri(self.iri, "cluster record iri")
        if not self.currency_code:
            raise ValidationError("cluster record currency_code must be non-empty")
        if not is_hex_digest(self.block_hash):
            raise ValidationError("cluster record block_hash must be 64 lowercase hex chars")
        if not self.addresses:
            raise ValidationError("cluster record needs at least one address")
        ordered = sorted(self.addresses, key=address_sort_key)
        if list(self.addresses) != ordered or len(set(self.addresses)) != len(self.addresses):
            raise ValidationError("cluster record addresses must be strictly sorted")
        if self.cluster_hash != cluster_hash(self.addresses):
            raise ValidationError("cluster_hash does not match the address list")
        for ref in self.tag_refs:
            _require_iri(ref, "tag reference")


# ---------------------------------------------------------------------------
# Digest payloads (plain documents, absolute IRIs, fixed field names)
# ---------------------------------------------------------------------------


def _agent_payload(agent: Agent) -> dict:
    doc = {"category": agent.category, "iri": agent.iri, "name": agent.name}
    if agent.reliability is not None:
        doc["reliability"] = agent.reliability
    return doc


def _source_payload(source: SourceRef) -> dict:
    doc = {"category": source.category, "iri": source.iri, "label": source.label}
    if source.url is not None:
        doc["url"] = source.url
    if source.archive_ref is not None:
        doc["archive_ref"] = source.archive_ref
    return doc


def _action_payload(action: InvestigativeAction) -> dict:
    doc = {
        "category": action.category,
        "end_time": action.end_time,
        "iri": action.iri,
        "performer": _agent_payload(action.performer),
        "start_time": action.start_time,
    }
    if action.instrument is not None:
        doc["instrument"] = {
            "name": action.instrument.name,
            "version": action.instrument.version,
        }
    return doc


def tag_core_doc(tag: AttributionTag) -> dict:
    """The timestamp-token binding basis: the tag minus hash, signature,
    and the tokens themselves."""
    return {
        "action": _action_payload(tag.action),
        "address": tag.address,
        "category": tag.category,
        "currency_code": tag.currency_code,
        "iri": tag.iri,
        "label": tag.label,
        "source": _source_payload(tag.source),
    }


def tag_payload_doc(tag: AttributionTag) -> dict:
    """The hash basis: everything except hash and signature."""
    doc = tag_core_doc(tag)
    doc["timestamps"] = [token.to_doc() for token in tag.timestamps]
    return doc


def tag_signature_payload(tag: AttributionTag) -> dict:
    doc = tag_payload_doc(tag)
    doc["hash"] = tag.hash
    return doc


def cluster_record_payload(record: ClusterRecord) -> dict:
    return {
        "action": _action_payload(record.action),
        "addresses": list(record.addresses),
        "block_hash": record.block_hash,
        "cluster_hash": record.cluster_hash,
        "currency_code": record.currency_code,
        "erroneous": record.erroneous,
        "iri": record.iri,
        "tag_refs": sorted(record.tag_refs),
    }


def build_tag(
    iri: str,
    label: str,
    category: str,
    address: str,
    currency_code: str,
    action: InvestigativeAction,
    source: SourceRef,
    signing_key: SigningKey | None = None,
    timestamp_authority: str | None = "local",
    clock: Clock = system_clock,
) -> AttributionTag:
    """Assemble a tag, computing its hash, token, and optional signature."""
    tag = AttributionTag(
        iri=iri,
        label=label,
        category=category,
        address=address,
        currency_code=currency_code,
        action=action,
        source=source,
        hash="0" * 64,
    )
    if timestamp_authority is not None:
        core_digest = canonical_digest(tag_core_doc(tag))
        token = issue_timestamp(core_digest, authority=timestamp_authority, clock=clock)
        tag = replace(tag, timestamps=(token,))
    tag = replace(tag, hash=canonical_digest(tag_payload_doc(tag)))
    if signing_key is not None:
        tag = replace(tag, signature=sign_payload(tag_signature_payload(tag), signing_key))
    return tag


def build_cluster_record(
    iri: str,
    currency_code: str,
    block_hash: str,
    addresses,
    action: InvestigativeAction,
    tag_refs: tuple[str, ...] = (),
    erroneous: bool = False,
    signing_key: SigningKey | None = None,
) -> ClusterRecord:
    ordered = tuple(sorted(addresses, key=address_sort_key))
    record = ClusterRecord(
        iri=iri,
        currency_code=currency_code,
        block_hash=block_hash,
        addresses=ordered,
        cluster_hash=cluster_hash(ordered),
        tag_refs=tag_refs,
        action=action,
        erroneous=erroneous,
    )
    if signing_key is not None:
        record = replace(
            record, signature=sign_payload(cluster_record_payload(record), signing_key)
        )
    return record


# ---------------------------------------------------------------------------
# JSON-LD export
# ---------------------------------------------------------------------------


def _signature_node(envelope: SignatureEnvelope) -> dict:
    return {
        "case:keyId": envelope.key_id,
        "case:payloadDigest": envelope.payload_digest,
        "case:schemeId": envelope.scheme_id,
        "case:value": envelope.signature,
    }


def _timestamp_node(token: TimestampToken) -> dict:
    return {
        "case:authorityId": token.authority_id,
        "case:payloadDigest": token.payload_digest,
        "case:time": token.time,
        "case:tokenDigest": token.token_digest,
    }


def _agent_node(agent: Agent, ctx: SharingContext) -> dict:
    node = {
        "@id": ctx.compact(agent.iri),
        "@type": "case:Investigator",
        "case:category": ctx.compact(agent.category),
        "case:name": agent.name,
    }
    if agent.reliability is not None:
        node["case:reliability"] = ctx.compact(agent.reliability)
    return node


def _source_node(source: SourceRef, ctx: SharingContext) -> dict:
    node = {
        "@id": ctx.compact(source.iri),
        "@type": "case:Source",
        "case:category": ctx.compact(source.category),
        "case:label": source.label,
    }
    if source.url is not None:
        node["case:url"] = source.url
    if source.archive_ref is not None:
        node["case:archiveRef"] = source.archive_ref
    return node


def _action_node(action: InvestigativeAction, ctx: SharingContext) -> dict:
    node = {
        "@id": ctx.compact(action.iri),
        "@type": "case:InvestigativeAction",
        "case:category": ctx.compact(action.category),
        "case:endTime": action.end_time,
        "case:performer": _agent_node(action.performer, ctx),
        "case:startTime": action.start_time,
    }
    if action.instrument is not None:
        node["case:instrument"] = {
            "case:name": action.instrument.name,
            "case:version": action.instrument.version,
        }
    return node


def export_tag(
    tag: AttributionTag,
    context: SharingContext = DEFAULT_CONTEXT,
    vocabularies: list[Vocabulary] | None = None,
) -> bytes:
    """Serialize a tag to canonical JSON-LD bytes (deterministic)."""
    _validate_tag_semantics(
        tag, vocabularies if vocabularies is not None else builtin_vocabularies(context)
    )
    doc = {
        "@context": dict(context.prefixes),
        "@id": context.compact(tag.iri),
        "@type": "case:Tag",
        "case:address": tag.address,
        "case:category": context.compact(tag.category),
        "case:currency": tag.currency_code,
        "case:hash": tag.hash,
        "case:investigativeAction": _action_node(tag.action, context),
        "case:label": tag.label,
        "case:source": _source_node(tag.source, context),
        "case:timestamps": [_timestamp_node(t) for t in tag.timestamps],
    }
    if tag.signature is not None:
        doc["case:signature"] = _signature_node(tag.signature)
    return canonical_bytes(doc) + b"\n"


def export_cluster(
    record: ClusterRecord,
    context: SharingContext = DEFAULT_CONTEXT,
    vocabularies: list[Vocabulary] | None = None,
) -> bytes:
    _validate_record_semantics(
        record, vocabularies if vocabularies is not None else builtin_vocabularies(context)
    )
    doc = {
        "@context": dict(context.prefixes),
        "@id": context.compact(record.iri),
        "@type": "case:Cluster",
        "case:addresses": list(record.addresses),
        "case:blockHash": record.block_hash,
        "case:clusterHash": record.cluster_hash,
        "case:currency": record.currency_code,
        "case:erroneous": record.erroneous,
        "case:investigativeAction": _action_node(record.action, context),
        "case:tagRefs": [context.compact(ref) for ref in sorted(record.tag_refs)],
    }
    if record.signature is not None:
        doc["case:signature"] = _signature_node(record.signature)
    return canonical_bytes(doc) + b"\n"


# ---------------------------------------------------------------------------
# JSON-LD import
# ---------------------------------------------------------------------------


def _load_document(data: bytes | str) -> tuple[dict, SharingContext]:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ValidationError(f"document is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON document: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("document root must be an object")
    raw_context = doc.get("@context")
    if not isinstance(raw_context, dict):
        raise ValidationError("document lacks an @context object")
    return doc, SharingContext(prefixes=dict(raw_context))


def _field(node: dict, key: str, what: str):
    if key not in node:
        raise ValidationError(f"{what} is missing required field {key}")
    return node[key]


def _parse_agent(node: dict, ctx: SharingContext) -> Agent:
    return Agent(
        iri=ctx.expand(_field(node, "@id", "investigator")),
        name=_field(node, "case:name", "investigator"),
        category=ctx.expand(_field(node, "case:category", "investigator")),
        reliability=(
            ctx.expand(node["case:reliability"]) if "case:reliability" in node else None
        ),
    )


def _parse_source(node: dict, ctx: SharingContext) -> SourceRef:
    return SourceRef(
        iri=ctx.expand(_field(node, "@id", "source")),
        label=_field(node, "case:label", "source"),
        category=ctx.expand(_field(node, "case:category", "source")),
        url=node.get("case:url"),
        archive_ref=node.get("case:archiveRef"),
    )


def _parse_action(node: dict, ctx: SharingContext) -> InvestigativeAction:
    instrument = None
    if "case:instrument" in node:
        inode = node["case:instrument"]
        instrument = Instrument(
            name=_field(inode, "case:name", "instrument"),
            version=_field(inode, "case:version", "instrument"),
        )
    return InvestigativeAction(
        iri=ctx.expand(_field(node, "@id", "action")),
        category=ctx.expand(_field(node, "case:category", "action")),
        start_time=_field(node, "case:startTime", "action"),
        end_time=_field(node, "case:endTime", "action"),
        performer=_parse_agent(_field(node, "case:performer", "action"), ctx),
        instrument=instrument,
    )


def _parse_signature(node: dict) -> SignatureEnvelope:
    return SignatureEnvelope(
        scheme_id=_field(node, "case:schemeId", "signature"),
        key_id=_field(node, "case:keyId", "signature"),
        payload_digest=_field(node, "case:payloadDigest", "signature"),
        signature=_field(node, "case:value", "signature"),
    )


def _parse_timestamps(nodes, what: str) -> tuple[TimestampToken, ...]:
    tokens = []
    for node in nodes:
        token = TimestampToken(
            time=_field(node, "case:time", what),
            authority_id=_field(node, "case:authorityId", what),
            payload_digest=_field(node, "case:payloadDigest", what),
            token_digest=_field(node, "case:tokenDigest", what),
        )
        if not verify_timestamp(token):
            raise ValidationError(f"{what} timestamp token digest does not verify")
        tokens.append(token)
    return tuple(tokens)


def _check_category(iri: str, vocabulary: Vocabulary, what: str) -> None:
    if iri not in vocabulary.iris():
        raise ValidationError(
            f"unknown {what} category IRI {iri} (not in the {vocabulary.name} vocabulary)"
        )


def _validate_tag_semantics(tag: AttributionTag, vocabularies: list[Vocabulary]) -> None:
    _check_category(tag.category, _vocab_by_name(vocabularies, "tag"), "tag")
    _check_category(tag.action.category, _vocab_by_name(vocabularies, "action"), "action")
    agent_vocab = _vocab_by_name(vocabularies, "agent")
    _check_category(tag.action.performer.category, agent_vocab, "agent")
    if tag.action.performer.reliability is not None:
        _check_category(tag.action.performer.reliability, agent_vocab, "agent reliability")
    _check_category(tag.source.category, _vocab_by_name(vocabularies, "source"), "source")
    expected = canonical_digest(tag_payload_doc(tag))
    if tag.hash != expected:
        raise ValidationError(
            f"tag hash {tag.hash} does not match content digest {expected}"
        )


def _validate_record_semantics(record: ClusterRecord, vocabularies: list[Vocabulary]) -> None:
    _check_category(record.action.category, _vocab_by_name(vocabularies, "action"), "action")
    agent_vocab = _vocab_by_name(vocabularies, "agent")
    _check_category(record.action.performer.category, agent_vocab, "agent")
    if record.action.performer.reliability is not None:
        _check_category(record.action.performer.reliability, agent_vocab, "agent reliability")


def _verify_signature(
    envelope: SignatureEnvelope | None,
    payload: dict,
    public_keys: dict | None,
    warnings: list[str],
    what: str,
) -> None:
    if envelope is None:
        return
    if public_keys is None or envelope.key_id not in public_keys:
        warnings.append(
            f"{what} signature by unknown key {envelope.key_id!r} was not verified"
        )
        return
    if not verify_payload(envelope, payload, public_keys[envelope.key_id]):
        raise ValidationError(f"{what} signature does not verify under key {envelope.key_id!r}")


def import_tag(
    data: bytes | str,
    vocabularies: list[Vocabulary],
    public_keys: dict | None = None,
) -> tuple[AttributionTag, list[str]]:
    """Parse and fully validate a tag document.

    Returns the tag plus non-fatal warnings. Hash mismatches, unknown
    category IRIs, and missing fields raise ValidationError.
    """
    doc, ctx = _load_document(data)
    if doc.get("@type") != "case:Tag":
        raise ValidationError("document @type is not case:Tag")
    try:
        tag = AttributionTag(
            iri=ctx.expand(_field(doc, "@id", "tag")),
            label=_field(doc, "case:label", "tag"),
            category=ctx.expand(_field(doc, "case:category", "tag")),
            address=_field(doc, "case:address", "tag"),
            currency_code=_field(doc, "case:currency", "tag"),
            action=_parse_action(_field(doc, "case:investigativeAction", "tag"), ctx),
            source=_parse_source(_field(doc, "case:source", "tag"), ctx),
            hash=_field(doc, "case:hash", "tag"),
            signature=(
                _parse_signature(doc["case:signature"]) if "case:signature" in doc else None
            ),
            timestamps=_parse_timestamps(doc.get("case:timestamps", []), "tag"),
        )
    except (TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed tag document: {exc}") from exc

    warnings: list[str] = []
    _validate_tag_semantics(tag, vocabularies)
    core_digest = canonical_digest(tag_core_doc(tag))
    for token in tag.timestamps:
        if token.payload_digest != core_digest:
            warnings.append(
                f"timestamp token from {token.authority_id!r} binds a foreign digest"
            )
    _verify_signature(tag.signature, tag_signature_payload(tag), public_keys, warnings, "tag")
    return tag, warnings


def import_cluster(
    data: bytes | str,
    vocabularies: list[Vocabulary],
    public_keys: dict | None = None,
) -> tuple[ClusterRecord, list[str]]:
    """Parse and fully validate a cluster record document."""
    doc, ctx = _load_document(data)
    if doc.get("@type") != "case:Cluster":
        raise ValidationError("document @type is not case:Cluster")
    addresses = _field(doc, "case:addresses", "cluster record")
    if not isinstance(addresses, list) or not all(isinstance(a, str) for a in addresses):
        raise ValidationError("cluster record addresses must be a list of strings")
    declared = _field(doc, "case:clusterHash", "cluster record")
    if list(addresses) != sorted(addresses, key=address_sort_key) or len(set(addresses)) != len(addresses):
        raise ValidationError("cluster record address list is not strictly sorted")
    recomputed = cluster_hash(addresses) if addresses else None
    if recomputed != declared:
        raise ValidationError(
            f"cluster_hash {declared} does not match the address list digest {recomputed}"
        )
    try:
        record = ClusterRecord(
            iri=ctx.expand(_field(doc, "@id", "cluster record")),
            currency_code=_field(doc, "case:currency", "cluster record"),
            block_hash=_field(doc, "case:blockHash", "cluster record"),
            addresses=tuple(addresses),
            cluster_hash=declared,
            tag_refs=tuple(
                ctx.expand(ref) for ref in _field(doc, "case:tagRefs", "cluster record")
            ),
            action=_parse_action(
                _field(doc, "case:investigativeAction", "cluster record"), ctx
            ),
            signature=(
                _parse_signature(doc["case:signature"]) if "case:signature" in doc else None
            ),
            erroneous=bool(_field(doc, "case:erroneous", "cluster record")),
        )
    except (TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed cluster record document: {exc}") from exc

    warnings: list[str] = []
    _validate_record_semantics(record, vocabularies)
    _verify_signature(
        record.signature, cluster_record_payload(record), public_keys, warnings, "cluster record"
    )
    return record, warnings


# ---------------------------------------------------------------------------
# Merging shared clusters into a local clustering
# ---------------------------------------------------------------------------


def merge_shared_clusters(
    cluster_set: ClusterSet,
    records: list[ClusterRecord],
    tool_version: str = __version__,
    clock: Clock = system_clock,
) -> ClusterSet:
    """Unify a local clustering with imported cluster records.

    Non-erroneous records act as co-spend evidence: their address sets are
    unified with the local partition (unknown addresses join the universe).
    Records flagged erroneous never merge anything; they mark every local
    cluster they intersect as erroneous. Idempotent and order-insensitive.
    """
    currency = cluster_set.context.currency_code
    for record in records:
        if record.currency_code != currency:
            raise ValidationError(
                f"record {record.iri} currency {record.currency_code} does not match {currency}"
            )

    node_of: dict[str, int] = {}

    def intern(addr: str) -> int:
        node = node_of.get(addr)
        if node is None:
            node = len(node_of)
            node_of[addr] = node
        return node

    us: list[int] = []
    vs: list[int] = []
    for cid in sorted(cluster_set.clusters):
        nodes = [intern(a) for a in cluster_set.clusters[cid]]
        for other in nodes[1:]:
            us.append(nodes[0])
            vs.append(other)
    for record in sorted(records, key=lambda r: r.iri):
        if record.erroneous:
            continue
        nodes = [intern(a) for a in record.addresses]
        for other in nodes[1:]:
            us.append(nodes[0])
            vs.append(other)

    labels = connected_components(
        len(node_of), np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64)
    )
    groups: dict[int, list[str]] = {}
    for addr, node in node_of.items():
        groups.setdefault(int(labels[node]), []).append(addr)

    flagged: set[str] = set()
    for record in records:
        if record.erroneous:
            flagged |= set(record.addresses)

    group_list = []
    metas = []
    for label in sorted(groups):
        addrs = groups[label]
        contains_coinjoin = False
        erroneous = False
        excluded: frozenset[str] = frozenset()
        for addr in addrs:
            old_cid = cluster_set.membership.get(addr)
            if old_cid is None:
                continue
            old_meta = cluster_set.meta[old_cid]
            contains_coinjoin = contains_coinjoin or old_meta.contains_coinjoin
            erroneous = erroneous or old_meta.erroneous
            excluded = excluded | old_meta.excluded_addresses
        if any(a in flagged for a in addrs):
            erroneous = True
        group_list.append(addrs)
        metas.append(
            ClusterMeta(
                contains_coinjoin=contains_coinjoin,
                erroneous=erroneous,
                excluded_addresses=excluded,
            )
        )

    old = cluster_set.context
    context = ProvenanceRecord(
        currency_code=old.currency_code,
        block_hash=old.block_hash,
        block_height=old.block_height,
        method_id=MERGE_METHOD_ID,
        method_params_digest=canonical_digest(
            {
                "base_method": old.method_id,
                "base_params_digest": old.method_params_digest,
                "incorporated": sorted(r.iri for r in records),
            }
        ),
        tool_version=tool_version,
        created_at=clock(),
    )
    from chaincustody.clustering import _assemble

    return _assemble(group_list, metas, context)
