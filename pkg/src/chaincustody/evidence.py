"""Chain-of-custody primitives.

Everything evidence-grade in this toolkit hangs off four mechanisms:

* a canonical JSON form (sorted keys, no whitespace, UTF-8, integers only)
  whose SHA-256 digest is stable across platforms and implementations,
* an append-only, hash-chained audit log,
* detached ed25519 signatures over canonical payloads,
* timestamp tokens binding a payload digest to a time under a named
  authority (only the "local" authority ships; others can be registered).

Floats are banned from canonical documents on purpose: float formatting
is the classic source of cross-language digest mismatches. Quantities are
integers or strings everywhere a digest is computed.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from chaincustody.errors import IntegrityError, ValidationError

GENESIS_HASH = "0" * 64

Clock = Callable[[], str]


def system_clock() -> str:
    """Current UTC time as an RFC 3339 string with second precision."""
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def fixed_clock(timestamp: str) -> Clock:
    """A clock that always returns ``timestamp`` (must be RFC 3339 UTC)."""
    parse_rfc3339(timestamp)
    return lambda: timestamp


def parse_rfc3339(timestamp: str) -> datetime:
    try:
        return datetime.strptime(timestamp, "%Y-%m-%dT%H:%M:%SZ").replace(
            tzinfo=timezone.utc
        )
    except ValueError as exc:
        raise ValidationError(f"not an RFC 3339 UTC timestamp: {timestamp!r}") from exc


def _check_canonical(value: Any, path: str) -> None:
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return
    if isinstance(value, float):
        raise ValidationError(f"float at {path} not allowed in canonical documents")
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_canonical(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise ValidationError(f"non-string key {key!r} at {path}")
            _check_canonical(item, f"{path}.{key}")
        return
    raise ValidationError(f"unsupported type {type(value).__name__} at {path}")


def canonical_bytes(document: Any) -> bytes:
    """Serialize a document to its canonical UTF-8 form.

    Map keys are sorted byte-wise (UTF-8 order equals code point order),
    no insignificant whitespace, integers in shortest decimal form.
    Only str, int, bool, None, list, and dict values are accepted.
    """
    _check_canonical(document, "$")
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def canonical_digest(document: Any) -> str:
    """SHA-256 hex digest of the canonical serialization of ``document``."""
    return hashlib.sha256(canonical_bytes(document)).hexdigest()


def is_hex_digest(value: str) -> bool:
    return len(value) == 64 and all(c in "0123456789abcdef" for c in value)


# ---------------------------------------------------------------------------
# Provenance records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProvenanceRecord:
    """What/how/when identity of an analysis artifact.

    Records the currency, the ledger state (tip block hash and height),
    the method and a digest of its exact parameters, the tool version,
    and the creation time.
    """

    currency_code: str
    block_hash: str
    block_height: int
    method_id: str
    method_params_digest: str
    tool_version: str
    created_at: str

    def __post_init__(self) -> None:
        for name in (
            "currency_code",
            "block_hash",
            "method_id",
            "method_params_digest",
            "tool_version",
            "created_at",
        ):
            if not getattr(self, name):
                raise ValidationError(f"provenance field {name} must be non-empty")
        if not is_hex_digest(self.block_hash):
            raise ValidationError("provenance block_hash must be 64 lowercase hex chars")
        if not is_hex_digest(self.method_params_digest):
            raise ValidationError("method_params_digest must be 64 lowercase hex chars")
        parse_rfc3339(self.created_at)

    def to_doc(self) -> dict:
        return {
            "currency_code": self.currency_code,
            "block_hash": self.block_hash,
            "block_height": self.block_height,
            "method_id": self.method_id,
            "method_params_digest": self.method_params_digest,
            "tool_version": self.tool_version,
            "created_at": self.created_at,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ProvenanceRecord":
        try:
            return cls(
                currency_code=doc["currency_code"],
                block_hash=doc["block_hash"],
                block_height=doc["block_height"],
                method_id=doc["method_id"],
                method_params_digest=doc["method_params_digest"],
                tool_version=doc["tool_version"],
                created_at=doc["created_at"],
            )
        except KeyError as exc:
            raise ValidationError(f"provenance document missing field {exc}") from exc


def make_provenance(
    currency_code: str,
    block_height: int,
    block_hash: str,
    method_id: str,
    params_doc: Any,
    tool_version: str,
    clock: Clock = system_clock,
) -> ProvenanceRecord:
    """Build a provenance record, digesting the exact method parameters."""
    return ProvenanceRecord(
        currency_code=currency_code,
        block_hash=block_hash,
        block_height=block_height,
        method_id=method_id,
        method_params_digest=canonical_digest(params_doc),
        tool_version=tool_version,
        created_at=clock(),
    )


# ---------------------------------------------------------------------------
# Hash-chained audit log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    actor: str
    action: str
    target: str
    detail: dict
    timestamp: str
    prev_hash: str
    entry_hash: str

    def body_doc(self) -> dict:
        """All fields except entry_hash; this is what entry_hash covers."""
        return {
            "seq": self.seq,
            "actor": self.actor,
            "action": self.action,
            "target": self.target,
            "detail": self.detail,
            "timestamp": self.timestamp,
            "prev_hash": self.prev_hash,
        }

    def to_doc(self) -> dict:
        doc = self.body_doc()
        doc["entry_hash"] = self.entry_hash
        return doc


class AuditLog:
    """Append-only JSON-lines log with a SHA-256 hash chain.

    Each entry's hash covers all of its fields and the predecessor's hash
    (genesis entries chain from 64 zeros), so any byte flip anywhere in
    the file is detectable and localizable. A log may be purely in-memory
    (path=None) or bound to a file, in which case appends write through.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.entries: list[AuditEntry] = []
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    entry = AuditEntry(
                        seq=doc["seq"],
                        actor=doc["actor"],
                        action=doc["action"],
                        target=doc["target"],
                        detail=doc["detail"],
                        timestamp=doc["timestamp"],
                        prev_hash=doc["prev_hash"],
                        entry_hash=doc["entry_hash"],
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise IntegrityError(
                        f"audit log {self.path} line {lineno} is unreadable: {exc}"
                    ) from exc
                self.entries.append(entry)

    def verify(self) -> int | None:
        """Recompute every hash and chain link.

        Returns None when the whole chain is intact, otherwise the seq of
        the first violating entry.
        """
        prev = GENESIS_HASH
        for position, entry in enumerate(self.entries):
            ok = (
                entry.seq == position
                and entry.prev_hash == prev
                and entry.entry_hash == canonical_digest(entry.body_doc())
            )
            if not ok:
                return entry.seq if entry.seq == position else position
            prev = entry.entry_hash
        return None

    def append(
        self,
        actor: str,
        action: str,
        target: str,
        detail: dict,
        clock: Clock = system_clock,
    ) -> AuditEntry:
        """Append one entry, verifying the existing chain first."""
        bad = self.verify()
        if bad is not None:
            raise IntegrityError(f"audit log corrupted at seq {bad}; refusing to append")
        prev_hash = self.entries[-1].entry_hash if self.entries else GENESIS_HASH
        body = {
            "seq": len(self.entries),
            "actor": actor,
            "action": action,
            "target": target,
            "detail": detail,
            "timestamp": clock(),
            "prev_hash": prev_hash,
        }
        entry = AuditEntry(entry_hash=canonical_digest(body), **body)
        self.entries.append(entry)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(canonical_bytes(entry.to_doc()).decode("utf-8") + "\n")
        return entry


def append_audit(
    log: AuditLog,
    actor: str,
    action: str,
    target: str,
    detail: dict,
    clock: Clock = system_clock,
) -> AuditEntry:
    return log.append(actor, action, target, detail, clock=clock)


def verify_audit(log: AuditLog) -> int | None:
    return log.verify()


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

SCHEME_ED25519 = "ed25519"
_KNOWN_SCHEMES = {SCHEME_ED25519}


@dataclass(frozen=True)
class SignatureEnvelope:
    scheme_id: str
    key_id: str
    payload_digest: str
    signature: str  # base64

    def to_doc(self) -> dict:
        return {
            "scheme_id": self.scheme_id,
            "key_id": self.key_id,
            "payload_digest": self.payload_digest,
            "signature": self.signature,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SignatureEnvelope":
        try:
            return cls(
                scheme_id=doc["scheme_id"],
                key_id=doc["key_id"],
                payload_digest=doc["payload_digest"],
                signature=doc["signature"],
            )
        except KeyError as exc:
            raise ValidationError(f"signature envelope missing field {exc}") from exc


@dataclass(frozen=True)
class SigningKey:
    key_id: str
    private_key: ed25519.Ed25519PrivateKey = field(repr=False)

    def public_key(self) -> ed25519.Ed25519PublicKey:
        return self.private_key.public_key()

    def public_bytes_hex(self) -> str:
        raw = self.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return raw.hex()


def generate_signing_key(key_id: str) -> SigningKey:
    if not key_id:
        raise ValidationError("key_id must be non-empty")
    return SigningKey(key_id=key_id, private_key=ed25519.Ed25519PrivateKey.generate())


def save_signing_key(key: SigningKey, path: str | Path) -> None:
    pem = key.private_key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    Path(path).write_text(f"Key-Id: {key.key_id}\n" + pem.decode("ascii"))


def load_signing_key(path: str | Path) -> SigningKey:
    text = Path(path).read_text()
    header, _, pem = text.partition("\n")
    if not header.startswith("Key-Id: "):
        raise ValidationError(f"key file {path} has no Key-Id header")
    key_id = header[len("Key-Id: "):].strip()
    private_key = serialization.load_pem_private_key(pem.encode("ascii"), password=None)
    if not isinstance(private_key, ed25519.Ed25519PrivateKey):
        raise ValidationError(f"key file {path} is not an ed25519 key")
    return SigningKey(key_id=key_id, private_key=private_key)


def public_key_from_hex(value: str) -> ed25519.Ed25519PublicKey:
    return ed25519.Ed25519PublicKey.from_public_bytes(bytes.fromhex(value))


def save_public_key(key_id: str, public_key: ed25519.Ed25519PublicKey, path: str | Path) -> None:
    pem = public_key.public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    Path(path).write_text(f"Key-Id: {key_id}\n" + pem.decode("ascii"))


def load_public_key(path: str | Path) -> tuple[str, ed25519.Ed25519PublicKey]:
    text = Path(path).read_text()
    header, _, pem = text.partition("\n")
    if not header.startswith("Key-Id: "):
        raise ValidationError(f"public key file {path} has no Key-Id header")
    key_id = header[len("Key-Id: "):].strip()
    public_key = serialization.load_pem_public_key(pem.encode("ascii"))
    if not isinstance(public_key, ed25519.Ed25519PublicKey):
        raise ValidationError(f"public key file {path} is not an ed25519 key")
    return key_id, public_key


def sign(payload: Any, key: SigningKey) -> SignatureEnvelope:
    """Sign the canonical form of ``payload`` with an ed25519 key."""
    message = canonical_bytes(payload)
    raw = key.private_key.sign(message)
    return SignatureEnvelope(
        scheme_id=SCHEME_ED25519,
        key_id=key.key_id,
        payload_digest=hashlib.sha256(message).hexdigest(),
        signature=base64.b64encode(raw).decode("ascii"),
    )


def verify(
    envelope: SignatureEnvelope,
    payload: Any,
    public_key: ed25519.Ed25519PublicKey,
) -> bool:
    """True iff the envelope matches the payload and verifies under the key."""
    if envelope.scheme_id not in _KNOWN_SCHEMES:
        raise ValidationError(f"unknown signature scheme {envelope.scheme_id!r}")
    message = canonical_bytes(payload)
    if hashlib.sha256(message).hexdigest() != envelope.payload_digest:
        return False
    try:
        raw = base64.b64decode(envelope.signature.encode("ascii"), validate=True)
    except Exception:
        return False
    try:
        public_key.verify(raw, message)
        return True
    except InvalidSignature:
        return False


# ---------------------------------------------------------------------------
# Timestamp tokens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimestampToken:
    time: str
    authority_id: str
    payload_digest: str
    token_digest: str

    def to_doc(self) -> dict:
        return {
            "time": self.time,
            "authority_id": self.authority_id,
            "payload_digest": self.payload_digest,
            "token_digest": self.token_digest,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TimestampToken":
        try:
            return cls(
                time=doc["time"],
                authority_id=doc["authority_id"],
                payload_digest=doc["payload_digest"],
                token_digest=doc["token_digest"],
            )
        except KeyError as exc:
            raise ValidationError(f"timestamp token missing field {exc}") from exc


def _token_digest(time: str, authority_id: str, payload_digest: str) -> str:
    return canonical_digest(
        {"authority_id": authority_id, "payload_digest": payload_digest, "time": time}
    )


class LocalTimestampAuthority:
    """Timestamping from the injected clock; no network."""

    authority_id = "local"

    def __init__(self, clock: Clock = system_clock):
        self.clock = clock

    def issue(self, payload_digest: str) -> TimestampToken:
        time = self.clock()
        return TimestampToken(
            time=time,
            authority_id=self.authority_id,
            payload_digest=payload_digest,
            token_digest=_token_digest(time, self.authority_id, payload_digest),
        )


_AUTHORITIES: dict[str, Any] = {}


def register_authority(authority: Any) -> None:
    _AUTHORITIES[authority.authority_id] = authority


def timestamp(
    payload_digest: str,
    authority: str = "local",
    clock: Clock = system_clock,
) -> TimestampToken:
    """Issue a timestamp token binding ``payload_digest`` to a time."""
    if not is_hex_digest(payload_digest):
        raise ValidationError("payload_digest must be 64 lowercase hex chars")
    if authority == "local":
        return LocalTimestampAuthority(clock).issue(payload_digest)
    if authority in _AUTHORITIES:
        return _AUTHORITIES[authority].issue(payload_digest)
    raise ValidationError(f"timestamp authority {authority!r} unavailable")


def verify_timestamp(token: TimestampToken) -> bool:
    return token.token_digest == _token_digest(
        token.time, token.authority_id, token.payload_digest
    )
