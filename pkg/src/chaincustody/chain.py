"""UTXO ledger data model and the JSON-lines ledger format.

A ledger file is one JSON object per line, UTF-8, ``\\n`` line endings.
Each block starts with a header line followed by one line per transaction:

    {"block":{"height":H,"hash":"<64 hex>","time":T}}
    {"tx":{"txid":"<64 hex>","height":H,"in":[{"a":"addr","v":int}],"out":[{"a":"addr","v":int}]}}

Block heights are consecutive from 0. Values are integers in the smallest
currency unit; no floats appear anywhere. A transaction with zero inputs
is a coinbase; coinbase transactions are skipped by clustering and by
CoinJoin detection. Parsing rejects the whole stream on the first
violation and names the offending line.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from chaincustody.errors import LedgerError, ValidationError

HEX_DIGITS = set("0123456789abcdef")


def is_txid(value: object) -> bool:
    return (
        isinstance(value, str) and len(value) == 64 and all(c in HEX_DIGITS for c in value)
    )


def is_valid_address(value: object) -> bool:
    """Addresses are opaque non-empty tokens: printable, no whitespace."""
    if not isinstance(value, str) or not value:
        return False
    return all(ch.isprintable() and not ch.isspace() for ch in value)


def address_sort_key(address: str) -> bytes:
    """Byte-wise ordering key; all address sorting in the toolkit uses this."""
    return address.encode("utf-8")


@dataclass(frozen=True)
class TxInput:
    address: str
    value: int

    def __post_init__(self) -> None:
        if not is_valid_address(self.address):
            raise ValidationError(f"invalid input address {self.address!r}")
        if not isinstance(self.value, int) or isinstance(self.value, bool) or self.value < 1:
            raise ValidationError(f"input value must be a positive integer, got {self.value!r}")


@dataclass(frozen=True)
class TxOutput:
    address: str
    value: int

    def __post_init__(self) -> None:
        if not is_valid_address(self.address):
            raise ValidationError(f"invalid output address {self.address!r}")
        if not isinstance(self.value, int) or isinstance(self.value, bool) or self.value < 0:
            raise ValidationError(f"output value must be a non-negative integer, got {self.value!r}")


@dataclass(frozen=True)
class Transaction:
    txid: str
    block_height: int
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]

    def __post_init__(self) -> None:
        if not is_txid(self.txid):
            raise ValidationError(f"txid must be 64 lowercase hex chars, got {self.txid!r}")
        if self.block_height < 0:
            raise ValidationError("block_height must be >= 0")
        if not self.is_coinbase and self.fee < 0:
            raise ValidationError(
                f"tx {self.txid}: output total exceeds input total by {-self.fee}"
            )

    @property
    def is_coinbase(self) -> bool:
        return len(self.inputs) == 0

    @property
    def fee(self) -> int:
        return sum(i.value for i in self.inputs) - sum(o.value for o in self.outputs)

    def input_addresses(self) -> tuple[str, ...]:
        return tuple(i.address for i in self.inputs)

    def output_addresses(self) -> tuple[str, ...]:
        return tuple(o.address for o in self.outputs)


@dataclass(frozen=True)
class Block:
    height: int
    hash: str
    timestamp: int
    txids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.height < 0:
            raise ValidationError("block height must be >= 0")
        if not is_txid(self.hash):
            raise ValidationError(f"block hash must be 64 lowercase hex chars, got {self.hash!r}")


@dataclass(frozen=True)
class Ledger:
    """Immutable view of a parsed or generated chain.

    ``addr_index`` maps every address to the txids referencing it as an
    input or output, in block order, each txid at most once.
    """

    blocks: tuple[Block, ...]
    transactions: dict[str, Transaction]
    addr_index: dict[str, tuple[str, ...]]

    def tip(self) -> tuple[int, str]:
        if not self.blocks:
            raise LedgerError("empty ledger has no tip")
        top = self.blocks[-1]
        return top.height, top.hash

    def iter_transactions(self) -> Iterator[Transaction]:
        for block in self.blocks:
            for txid in block.txids:
                yield self.transactions[txid]

    def all_addresses(self) -> list[str]:
        return list(self.addr_index.keys())


def build_ledger(blocks: Iterable[tuple[Block, list[Transaction]]]) -> Ledger:
    """Assemble and validate a ledger from (block, transactions) pairs."""
    out_blocks: list[Block] = []
    transactions: dict[str, Transaction] = {}
    addr_index: dict[str, list[str]] = {}
    for block, txs in blocks:
        if block.height != len(out_blocks):
            raise LedgerError(
                f"block heights must be consecutive from 0; expected {len(out_blocks)}, got {block.height}"
            )
        txids = []
        for tx in txs:
            if tx.txid in transactions:
                raise LedgerError(f"duplicate txid {tx.txid}")
            if tx.block_height != block.height:
                raise LedgerError(
                    f"tx {tx.txid} claims height {tx.block_height} inside block {block.height}"
                )
            transactions[tx.txid] = tx
            txids.append(tx.txid)
            seen: set[str] = set()
            for addr in tx.input_addresses() + tx.output_addresses():
                if addr not in seen:
                    seen.add(addr)
                    addr_index.setdefault(addr, []).append(tx.txid)
        out_blocks.append(
            Block(height=block.height, hash=block.hash, timestamp=block.timestamp, txids=tuple(txids))
        )
    return Ledger(
        blocks=tuple(out_blocks),
        transactions=transactions,
        addr_index={a: tuple(t) for a, t in addr_index.items()},
    )


def ledger_tip(ledger: Ledger) -> tuple[int, str]:
    return ledger.tip()


def address_transactions(ledger: Ledger, address: str) -> list[str]:
    """All txids referencing the address as input or output, in block order."""
    return list(ledger.addr_index.get(address, ()))


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------


def _require(condition: bool, message: str, line: int) -> None:
    if not condition:
        raise LedgerError(message, line=line)


def _parse_io_entry(entry: object, kind: str, lineno: int) -> tuple[str, int]:
    _require(isinstance(entry, dict), f"{kind} entry must be an object", lineno)
    assert isinstance(entry, dict)
    _require(set(entry.keys()) == {"a", "v"}, f"{kind} entry must have exactly keys a, v", lineno)
    addr, value = entry["a"], entry["v"]
    _require(is_valid_address(addr), f"invalid {kind} address {addr!r}", lineno)
    _require(
        isinstance(value, int) and not isinstance(value, bool),
        f"{kind} value must be an integer",
        lineno,
    )
    return addr, value


def parse_ledger(stream: bytes | str | io.IOBase) -> Ledger:
    """Parse the JSON-lines ledger format, rejecting on first violation."""
    if isinstance(stream, bytes):
        lines = stream.decode("utf-8").split("\n")
    elif isinstance(stream, str):
        lines = stream.split("\n")
    else:
        data = stream.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        lines = data.split("\n")

    blocks: list[tuple[Block, list[Transaction]]] = []
    current: tuple[Block, list[Transaction]] | None = None
    seen_txids: set[str] = set()

    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise LedgerError(f"malformed JSON ({exc.msg})", line=lineno) from exc
        _require(isinstance(doc, dict) and len(doc) == 1, "expected a single-key object", lineno)

        if "block" in doc:
            header = doc["block"]
            _require(isinstance(header, dict), "block header must be an object", lineno)
            _require(
                set(header.keys()) == {"height", "hash", "time"},
                "block header must have exactly keys height, hash, time",
                lineno,
            )
            height, block_hash, time = header["height"], header["hash"], header["time"]
            _require(isinstance(height, int) and not isinstance(height, bool), "height must be an integer", lineno)
            _require(is_txid(block_hash), "block hash must be 64 lowercase hex chars", lineno)
            _require(isinstance(time, int) and not isinstance(time, bool), "block time must be an integer", lineno)
            expected = blocks[-1][0].height + 1 if blocks else 0
            if current is not None:
                expected = current[0].height + 1
            _require(height == expected, f"non-consecutive block height {height}, expected {expected}", lineno)
            if current is not None:
                blocks.append(current)
            current = (Block(height=height, hash=block_hash, timestamp=time, txids=()), [])

        elif "tx" in doc:
            _require(current is not None, "transaction before any block header", lineno)
            assert current is not None
            body = doc["tx"]
            _require(isinstance(body, dict), "tx body must be an object", lineno)
            _require(
                set(body.keys()) == {"txid", "height", "in", "out"},
                "tx body must have exactly keys txid, height, in, out",
                lineno,
            )
            txid, height = body["txid"], body["height"]
            _require(is_txid(txid), f"txid must be 64 lowercase hex chars, got {txid!r}", lineno)
            _require(txid not in seen_txids, f"duplicate txid {txid}", lineno)
            _require(height == current[0].height, f"tx height {height} does not match block {current[0].height}", lineno)
            _require(isinstance(body["in"], list), "tx 'in' must be a list", lineno)
            _require(isinstance(body["out"], list), "tx 'out' must be a list", lineno)
            try:
                inputs = tuple(
                    TxInput(*_parse_io_entry(e, "input", lineno)) for e in body["in"]
                )
                outputs = tuple(
                    TxOutput(*_parse_io_entry(e, "output", lineno)) for e in body["out"]
                )
                tx = Transaction(txid=txid, block_height=height, inputs=inputs, outputs=outputs)
            except ValidationError as exc:
                raise LedgerError(str(exc), line=lineno) from exc
            seen_txids.add(txid)
            current[1].append(tx)

        else:
            raise LedgerError("expected a 'block' or 'tx' object", line=lineno)

    if current is not None:
        blocks.append(current)
    return build_ledger(blocks)


def serialize_ledger(ledger: Ledger) -> bytes:
    """Canonical ledger file bytes; parse_ledger(serialize_ledger(L)) == L."""
    out = io.StringIO()
    for block in ledger.blocks:
        out.write(
            json.dumps(
                {"block": {"height": block.height, "hash": block.hash, "time": block.timestamp}},
                separators=(",", ":"),
                ensure_ascii=False,
            )
        )
        out.write("\n")
        for txid in block.txids:
            tx = ledger.transactions[txid]
            out.write(
                json.dumps(
                    {
                        "tx": {
                            "txid": tx.txid,
                            "height": tx.block_height,
                            "in": [{"a": i.address, "v": i.value} for i in tx.inputs],
                            "out": [{"a": o.address, "v": o.value} for o in tx.outputs],
                        }
                    },
                    separators=(",", ":"),
                    ensure_ascii=False,
                )
            )
            out.write("\n")
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Ground truth and synthetic-ledger specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    """Disjoint sets of addresses known to belong to one wallet each."""

    wallets: dict[str, frozenset[str]]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for wallet_id, addresses in self.wallets.items():
            overlap = seen & addresses
            if overlap:
                raise ValidationError(
                    f"wallet {wallet_id} shares addresses with another wallet: {sorted(overlap)[:3]}"
                )
            seen |= addresses

    def address_wallet(self) -> dict[str, str]:
        mapping: dict[str, str] = {}
        for wallet_id, addresses in self.wallets.items():
            for addr in addresses:
                mapping[addr] = wallet_id
        return mapping

    def to_doc(self) -> dict:
        return {
            "wallets": {
                w: sorted(addrs, key=address_sort_key)
                for w, addrs in sorted(self.wallets.items())
            }
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "GroundTruth":
        try:
            wallets = {w: frozenset(addrs) for w, addrs in doc["wallets"].items()}
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed ground truth document: {exc}") from exc
        return cls(wallets=wallets)


@dataclass(frozen=True)
class PlantedCoinJoin:
    participant_wallet_ids: tuple[str, ...]
    denomination: int

    def __post_init__(self) -> None:
        if len(self.participant_wallet_ids) < 2:
            raise ValidationError("a planted CoinJoin needs at least 2 participant wallets")
        if len(set(self.participant_wallet_ids)) != len(self.participant_wallet_ids):
            raise ValidationError("participant wallet ids must be distinct")
        if self.denomination <= 0:
            raise ValidationError("denomination must be > 0")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the deterministic synthetic ledger generator."""

    n_wallets: int
    addresses_per_wallet: tuple[int, int]
    n_payments: int
    planted_coinjoins: tuple[PlantedCoinJoin, ...] = ()
    fee_rate: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_wallets < 1:
            raise ValidationError("n_wallets must be >= 1")
        lo, hi = self.addresses_per_wallet
        if not (1 <= lo <= hi):
            raise ValidationError("addresses_per_wallet must be a range 1 <= lo <= hi")
        if self.n_payments < 0:
            raise ValidationError("n_payments must be >= 0")
        if self.fee_rate < 0:
            raise ValidationError("fee_rate must be >= 0")
        if not (0 <= self.seed < 2**64):
            raise ValidationError("seed must fit in 64 unsigned bits")
        wallet_ids = {f"w{i}" for i in range(self.n_wallets)}
        for cj in self.planted_coinjoins:
            missing = set(cj.participant_wallet_ids) - wallet_ids
            if missing:
                raise ValidationError(f"unknown participant wallet ids: {sorted(missing)}")

    @classmethod
    def from_doc(cls, doc: dict) -> "SynthSpec":
        try:
            lo, hi = doc["addresses_per_wallet"]
            coinjoins = tuple(
                PlantedCoinJoin(
                    participant_wallet_ids=tuple(c["participant_wallet_ids"]),
                    denomination=c["denomination"],
                )
                for c in doc.get("planted_coinjoins", [])
            )
            return cls(
                n_wallets=doc["n_wallets"],
                addresses_per_wallet=(lo, hi),
                n_payments=doc["n_payments"],
                planted_coinjoins=coinjoins,
                fee_rate=doc.get("fee_rate", 0),
                seed=doc.get("seed", 0),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed synthetic spec: {exc}") from exc
