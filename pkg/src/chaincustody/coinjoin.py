"""CoinJoin transaction detection and cluster contamination analysis.

Two detectors ship, mirroring the usual fast/exact split:

* the *structural* test inspects only transaction shape. With I inputs,
  O outputs, and participant count p = ceil(O / 2), it fires when I >= 2,
  O >= 3, p <= I, at least p distinct input addresses exist, and the most
  frequent output value occurs exactly p times.
* the *full* test asks whether some output value v with multiplicity
  c >= 2 admits c pairwise-disjoint, non-empty input subsets whose sums
  all land in [v, v * (1 + percentage_fee) + min_base_fee]; leftover
  inputs are unconstrained (change and fees). That subset search is
  NP-complete in general, so it runs as a depth-first search with
  memoization under a step budget; exceeding the budget yields the
  explicit verdict Timeout, which is never counted as a detection.

Contamination reporting joins scan results against a clustering of the
same ledger state and quantifies, per cluster, how many member addresses
fed detected CoinJoins.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

from chaincustody._version import __version__
from chaincustody.chain import Ledger, Transaction, address_sort_key
from chaincustody.errors import ProvenanceMismatch, ValidationError
from chaincustody.evidence import (
    Clock,
    ProvenanceRecord,
    canonical_bytes,
    make_provenance,
    system_clock,
)

if TYPE_CHECKING:  # pragma: no cover
    from chaincustody.clustering import ClusterSet

STRUCTURAL_METHOD_ID = "coinjoin-structural/1"
FULL_METHOD_ID = "coinjoin-full/1"

STRUCTURAL_RULE = (
    "structural: with I inputs, O outputs and p = ceil(O/2), fire when "
    "I >= 2, O >= 3, p <= I, distinct input addresses >= p, and the "
    "maximal output-value multiplicity equals p."
)
FULL_RULE = (
    "full: fire when some output value v with multiplicity c >= 2 admits "
    "c pairwise-disjoint non-empty input subsets whose sums each lie in "
    "[v, v*(1+percentage_fee)+min_base_fee]; leftover inputs are free; "
    "searched depth-first with memoization under max_search_steps, and "
    "an exhausted budget is reported as Timeout, never as a detection."
)


@dataclass(frozen=True)
class FullParams:
    """Fee window and step budget for the full heuristic.

    ``percentage_fee`` is an exact rational (numerator, denominator) so
    the window arithmetic stays in integers.
    """

    min_base_fee: int = 0
    percentage_fee: tuple[int, int] = (0, 1)
    max_search_steps: int = 1_000_000

    def __post_init__(self) -> None:
        num, den = self.percentage_fee
        if self.min_base_fee < 0 or num < 0 or den < 1:
            raise ValidationError("fee parameters must be non-negative (denominator >= 1)")
        if self.max_search_steps < 1:
            raise ValidationError("max_search_steps must be >= 1")

    def to_doc(self) -> dict:
        return {
            "min_base_fee": self.min_base_fee,
            "percentage_fee": [self.percentage_fee[0], self.percentage_fee[1]],
            "max_search_steps": self.max_search_steps,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "FullParams":
        num, den = doc["percentage_fee"]
        return cls(
            min_base_fee=doc["min_base_fee"],
            percentage_fee=(num, den),
            max_search_steps=doc["max_search_steps"],
        )


class CoinJoinVerdict(Enum):
    YES = "yes"
    NO = "no"
    TIMEOUT = "timeout"


class HeuristicKind(Enum):
    STRUCTURAL = "structural"
    FULL = "full"


def _require_spending(tx: Transaction) -> None:
    if tx.is_coinbase:
        raise ValidationError(f"tx {tx.txid} is coinbase; detectors need spending inputs")


def detect_structural(tx: Transaction) -> bool:
    """Shape-only CoinJoin test; deterministic and order-independent."""
    _require_spending(tx)
    n_in = len(tx.inputs)
    n_out = len(tx.outputs)
    if n_in < 2 or n_out < 3:
        return False
    participants = (n_out + 1) // 2
    if participants > n_in:
        return False
    if len(set(tx.input_addresses())) < participants:
        return False
    multiplicities = Counter(o.value for o in tx.outputs)
    return max(multiplicities.values()) == participants


class _BudgetExceeded(Exception):
    pass


class _SubsetSearch:
    """DFS over assignments of inputs to c buckets or leftover.

    Bucket sums must each end in [lo, hi] (hi expressed as the integer
    inequality sum * den <= rhs). Symmetry is broken by only ever opening
    the first empty bucket, and failed (index, sorted bucket sums) states
    are memoized. Every node visit costs one step from the shared budget.
    """

    def __init__(self, values: list[int], c: int, lo: int, rhs: int, den: int, budget: list[int]):
        self.values = sorted(values, reverse=True)
        self.c = c
        self.lo = lo
        self.rhs = rhs
        self.den = den
        self.budget = budget
        self.suffix = [0] * (len(values) + 1)
        for i in range(len(values) - 1, -1, -1):
            self.suffix[i] = self.suffix[i + 1] + self.values[i]
        self.failed: set[tuple] = set()
        self.sums = [0] * c

    def run(self) -> bool:
        if self.c > len(self.values):
            return False
        return self._rec(0, 0)

    def _rec(self, index: int, n_open: int) -> bool:
        self.budget[0] -= 1
        if self.budget[0] < 0:
            raise _BudgetExceeded
        sums = self.sums
        if index == len(self.values):
            return n_open == self.c and all(s >= self.lo for s in sums)
        deficit = sum(max(0, self.lo - sums[b]) for b in range(n_open))
        deficit += (self.c - n_open) * self.lo
        if self.suffix[index] < deficit:
            return False
        if len(self.values) - index < self.c - n_open:
            return False
        key = (index, tuple(sorted(sums)))
        if key in self.failed:
            return False
        value = self.values[index]
        tried: set[int] = set()
        limit = min(n_open + 1, self.c)
        for b in range(limit):
            current = sums[b]
            if current in tried:
                continue
            tried.add(current)
            new_sum = current + value
            if new_sum * self.den <= self.rhs:
                sums[b] = new_sum
                opened = n_open + 1 if b == n_open else n_open
                if self._rec(index + 1, opened):
                    sums[b] = current
                    return True
                sums[b] = current
        if self._rec(index + 1, n_open):
            return True
        self.failed.add(key)
        return False


def detect_full(tx: Transaction, params: FullParams) -> CoinJoinVerdict:
    """Disjoint-subset-sum CoinJoin test with an explicit Timeout verdict."""
    _require_spending(tx)
    if len(tx.inputs) < 2 or len(tx.outputs) < 3:
        return CoinJoinVerdict.NO
    input_values = [i.value for i in tx.inputs]
    multiplicities = Counter(o.value for o in tx.outputs)
    candidates = sorted(
        ((v, c) for v, c in multiplicities.items() if c >= 2),
        key=lambda vc: (-vc[1], vc[0]),
    )
    num, den = params.percentage_fee
    budget = [params.max_search_steps]
    for value, count in candidates:
        rhs = value * (den + num) + params.min_base_fee * den
        search = _SubsetSearch(input_values, count, value, rhs, den, budget)
        try:
            if search.run():
                return CoinJoinVerdict.YES
        except _BudgetExceeded:
            return CoinJoinVerdict.TIMEOUT
    return CoinJoinVerdict.NO


# ---------------------------------------------------------------------------
# Ledger scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanResult:
    """Detected CoinJoins over one ledger state.

    ``tx_inputs`` keeps the input address set of every detected
    transaction so contamination reporting does not need the ledger again.
    """

    coinjoin_txids: frozenset[str]
    coinjoin_input_addresses: frozenset[str]
    timeouts: frozenset[str]
    provenance: ProvenanceRecord
    tx_inputs: dict[str, frozenset[str]]


def scan_ledger(
    ledger: Ledger,
    kind: HeuristicKind,
    params: FullParams | None = None,
    currency_code: str = "BTC",
    tool_version: str = __version__,
    clock: Clock = system_clock,
) -> ScanResult:
    """Run a detector over every spending transaction in the ledger."""
    if kind is HeuristicKind.FULL and params is None:
        raise ValidationError("full heuristic scan requires FullParams")
    height, block_hash = ledger.tip()
    detected: set[str] = set()
    timeouts: set[str] = set()
    tx_inputs: dict[str, frozenset[str]] = {}
    for tx in ledger.iter_transactions():
        if tx.is_coinbase:
            continue
        if kind is HeuristicKind.STRUCTURAL:
            verdict = (
                CoinJoinVerdict.YES if detect_structural(tx) else CoinJoinVerdict.NO
            )
        else:
            assert params is not None
            verdict = detect_full(tx, params)
        if verdict is CoinJoinVerdict.YES:
            detected.add(tx.txid)
            tx_inputs[tx.txid] = frozenset(tx.input_addresses())
        elif verdict is CoinJoinVerdict.TIMEOUT:
            timeouts.add(tx.txid)
    method_id = (
        STRUCTURAL_METHOD_ID if kind is HeuristicKind.STRUCTURAL else FULL_METHOD_ID
    )
    params_doc = {} if params is None else params.to_doc()
    provenance = make_provenance(
        currency_code=currency_code,
        block_height=height,
        block_hash=block_hash,
        method_id=method_id,
        params_doc=params_doc,
        tool_version=tool_version,
        clock=clock,
    )
    union: set[str] = set()
    for addrs in tx_inputs.values():
        union |= addrs
    return ScanResult(
        coinjoin_txids=frozenset(detected),
        coinjoin_input_addresses=frozenset(union),
        timeouts=frozenset(timeouts),
        provenance=provenance,
        tx_inputs=tx_inputs,
    )


def export_scan(scan: ScanResult) -> bytes:
    doc = {
        "provenance": scan.provenance.to_doc(),
        "coinjoin_txids": sorted(scan.coinjoin_txids),
        "timeouts": sorted(scan.timeouts),
    }
    return canonical_bytes(doc) + b"\n"


def import_scan(data: bytes | str, ledger: Ledger) -> ScanResult:
    """Rehydrate a scan export; the ledger supplies detected input sets."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
        provenance = ProvenanceRecord.from_doc(doc["provenance"])
        txids = doc["coinjoin_txids"]
        timeouts = doc["timeouts"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scan document: {exc}") from exc
    tx_inputs: dict[str, frozenset[str]] = {}
    for txid in txids:
        tx = ledger.transactions.get(txid)
        if tx is None:
            raise ValidationError(f"scan references unknown txid {txid}")
        tx_inputs[txid] = frozenset(tx.input_addresses())
    union: set[str] = set()
    for addrs in tx_inputs.values():
        union |= addrs
    return ScanResult(
        coinjoin_txids=frozenset(txids),
        coinjoin_input_addresses=frozenset(union),
        timeouts=frozenset(timeouts),
        provenance=provenance,
        tx_inputs=tx_inputs,
    )


# ---------------------------------------------------------------------------
# Contamination reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContaminationRow:
    cluster_id: str
    n_addresses: int
    n_cj_addresses: int
    n_cj_txs: int
    ratio: float


@dataclass(frozen=True)
class ContaminationSummary:
    n_clusters: int
    n_affected: int
    affected_fraction: float
    mean_cj_addresses_affected: float
    mean_cj_txs_affected: float
    mean_cj_addresses_all: float
    mean_cj_txs_all: float

    def to_doc(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "n_affected": self.n_affected,
            "affected_fraction": self.affected_fraction,
            "mean_cj_addresses_affected": self.mean_cj_addresses_affected,
            "mean_cj_txs_affected": self.mean_cj_txs_affected,
            "mean_cj_addresses_all": self.mean_cj_addresses_all,
            "mean_cj_txs_all": self.mean_cj_txs_all,
        }


@dataclass(frozen=True)
class ContaminationReport:
    rows: tuple[ContaminationRow, ...]
    summary: ContaminationSummary


def contamination_report(cluster_set: "ClusterSet", scan: ScanResult) -> ContaminationReport:
    """Join a scan against a clustering of the same ledger state.

    Both artifacts must carry the same tip block hash; per-cluster means
    in the summary come in two readings, conditional on affected clusters
    and over all clusters.
    """
    if cluster_set.context.block_hash != scan.provenance.block_hash:
        raise ProvenanceMismatch(
            "cluster set and scan derive from different ledger states: "
            f"{cluster_set.context.block_hash} vs {scan.provenance.block_hash}"
        )
    cj_addresses = scan.coinjoin_input_addresses
    tx_count: dict[str, int] = {}
    for txid in sorted(scan.coinjoin_txids):
        touched = {
            cluster_set.membership[a]
            for a in scan.tx_inputs[txid]
            if a in cluster_set.membership
        }
        for cid in touched:
            tx_count[cid] = tx_count.get(cid, 0) + 1

    rows = []
    for cid, addrs in cluster_set.clusters.items():
        n_cj = sum(1 for a in addrs if a in cj_addresses)
        rows.append(
            ContaminationRow(
                cluster_id=cid,
                n_addresses=len(addrs),
                n_cj_addresses=n_cj,
                n_cj_txs=tx_count.get(cid, 0),
                ratio=n_cj / len(addrs),
            )
        )
    rows.sort(key=lambda r: (-r.n_addresses, r.cluster_id))

    affected = [r for r in rows if r.n_cj_addresses >= 1]
    n_clusters = len(rows)
    n_affected = len(affected)

    def mean(values: list[int]) -> float:
        return sum(values) / len(values) if values else 0.0

    summary = ContaminationSummary(
        n_clusters=n_clusters,
        n_affected=n_affected,
        affected_fraction=n_affected / n_clusters if n_clusters else 0.0,
        mean_cj_addresses_affected=mean([r.n_cj_addresses for r in affected]),
        mean_cj_txs_affected=mean([r.n_cj_txs for r in affected]),
        mean_cj_addresses_all=mean([r.n_cj_addresses for r in rows]),
        mean_cj_txs_all=mean([r.n_cj_txs for r in rows]),
    )
    return ContaminationReport(rows=tuple(rows), summary=summary)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_report(report: ContaminationReport, top_n: int) -> tuple[bytes, bytes]:
    """CSV and SVG for the top_n largest clusters by address count."""
    if top_n < 1:
        raise ValidationError("top_n must be >= 1")
    rows = report.rows[:top_n]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "cluster_id", "n_addresses", "n_cj_addresses", "n_cj_txs", "ratio"])
    for rank, row in enumerate(rows, start=1):
        writer.writerow(
            [rank, row.cluster_id, row.n_addresses, row.n_cj_addresses, row.n_cj_txs, row.ratio]
        )
    csv_bytes = buf.getvalue().encode("utf-8")

    svg_bytes = _render_svg(rows)
    return csv_bytes, svg_bytes


def _render_svg(rows) -> bytes:
    margin_left, margin_bottom, margin_top = 60.0, 30.0, 20.0
    bar_width, pair_gap = 5.0, 4.0
    plot_height = 220.0
    max_log = max(
        [math.log10(r.n_addresses) for r in rows if r.n_addresses >= 1] + [1.0]
    )
    decades = int(math.ceil(max_log)) or 1
    scale = plot_height / decades

    width = margin_left + len(rows) * (2 * bar_width + pair_gap) + 20.0
    height = margin_top + plot_height + margin_bottom
    baseline = margin_top + plot_height

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.0f}" height="{height:.0f}">',
        f'<line x1="{margin_left:.1f}" y1="{margin_top:.1f}" x2="{margin_left:.1f}" '
        f'y2="{baseline:.1f}" stroke="black"/>',
        f'<line x1="{margin_left:.1f}" y1="{baseline:.1f}" x2="{width - 10:.1f}" '
        f'y2="{baseline:.1f}" stroke="black"/>',
        f'<text x="10" y="{margin_top - 5:.1f}" font-size="10">log10 addresses</text>',
    ]
    for decade in range(decades + 1):
        y = baseline - decade * scale
        parts.append(
            f'<line x1="{margin_left - 4:.1f}" y1="{y:.1f}" x2="{margin_left:.1f}" '
            f'y2="{y:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{margin_left - 8:.1f}" y="{y + 3:.1f}" font-size="9" '
            f'text-anchor="end">{decade}</text>'
        )
    for index, row in enumerate(rows):
        x = margin_left + index * (2 * bar_width + pair_gap)
        h_total = math.log10(row.n_addresses) * scale if row.n_addresses >= 1 else 0.0
        if h_total > 0:
            parts.append(
                f'<rect x="{x:.1f}" y="{baseline - h_total:.1f}" width="{bar_width:.1f}" '
                f'height="{h_total:.1f}" fill="#9e9e9e"/>'
            )
        if row.n_cj_addresses >= 1:
            h_cj = math.log10(row.n_cj_addresses) * scale
            h_cj = max(h_cj, 1.0)  # log10(1) == 0; keep a visible sliver
            parts.append(
                f'<rect x="{x + bar_width:.1f}" y="{baseline - h_cj:.1f}" '
                f'width="{bar_width:.1f}" height="{h_cj:.1f}" fill="#4caf50"/>'
            )
    parts.append(
        f'<text x="{margin_left:.1f}" y="{height - 8:.1f}" font-size="10">'
        f"rank (1..{len(rows)})</text>"
    )
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")


def parse_report_csv(data: bytes | str) -> list[ContaminationRow]:
    """Inverse of the CSV rendering, for round-trip checks."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(data))
    rows = []
    for record in reader:
        rows.append(
            ContaminationRow(
                cluster_id=record["cluster_id"],
                n_addresses=int(record["n_addresses"]),
                n_cj_addresses=int(record["n_cj_addresses"]),
                n_cj_txs=int(record["n_cj_txs"]),
                ratio=float(record["ratio"]),
            )
        )
    return rows
