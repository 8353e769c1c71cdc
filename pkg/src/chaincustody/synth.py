"""Deterministic synthetic ledgers with ground-truth wallets.

The generator is a pure function of its spec: the same spec and seed
produce byte-identical ledger files on any platform. Randomness comes
from a self-contained xoshiro256** generator (seeded through splitmix64)
so the stream can be reproduced outside Python; see the README for the
exact draw discipline.

Shapes are constructed so the multi-input assumption holds by design:

* every ordinary payment spends from exactly one wallet and emits two
  outputs (payee + fresh change address of the spending wallet), which
  can never satisfy the structural CoinJoin rule (it needs >= 3 outputs);
* every planted CoinJoin takes one input per participant wallet and emits
  one output of the common denomination per participant plus one distinct
  change output per participant, which always satisfies the structural
  rule: for k participants there are 2k outputs, the participant count
  ceil(2k/2) = k equals both the input count and the multiplicity of the
  denomination value.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from chaincustody.chain import (
    Block,
    GroundTruth,
    Ledger,
    SynthSpec,
    Transaction,
    TxInput,
    TxOutput,
    build_ledger,
)
from chaincustody.errors import ValidationError

_MASK64 = (1 << 64) - 1

_BASE58 = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"

GENESIS_TIME = 1_600_000_000
BLOCK_INTERVAL = 600
TXS_PER_BLOCK = 10
ADDRESS_LENGTH = 30


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """Portable 64-bit PRNG (xoshiro256**), state seeded via splitmix64."""

    def __init__(self, seed: int):
        if not (0 <= seed < 2**64):
            raise ValidationError("seed must fit in 64 unsigned bits")
        state = seed
        lanes = []
        for _ in range(4):
            value, state = _splitmix64(state)
            lanes.append(value)
        self._s = lanes

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def randrange(self, n: int) -> int:
        """Uniform draw from [0, n) via rejection below 2^64 - 2^64 % n."""
        if n <= 0:
            raise ValidationError("randrange needs n >= 1")
        threshold = (2**64 // n) * n
        while True:
            value = self.next_u64()
            if value < threshold:
                return value % n

    def randint(self, lo: int, hi: int) -> int:
        return lo + self.randrange(hi - lo + 1)

    def choice(self, seq):
        return seq[self.randrange(len(seq))]


def _hex_digest(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


@dataclass
class _Wallet:
    wallet_id: str
    addresses: list[str]


class _Builder:
    """Accumulates transactions and per-address balances during generation."""

    def __init__(self, rng: Xoshiro256StarStar):
        self.rng = rng
        self.balances: dict[str, int] = {}
        self.tx_counter = 0
        self.pending: list[Transaction] = []
        self.blocks: list[tuple[Block, list[Transaction]]] = []
        self.used_addresses: set[str] = set()

    def new_address(self) -> str:
        while True:
            addr = "".join(
                _BASE58[self.rng.randrange(len(_BASE58))] for _ in range(ADDRESS_LENGTH)
            )
            if addr not in self.used_addresses:
                self.used_addresses.add(addr)
                return addr

    def next_txid(self, height: int) -> str:
        txid = _hex_digest("tx", str(height), str(self.tx_counter))
        self.tx_counter += 1
        return txid

    def add_tx(self, inputs: list[TxInput], outputs: list[TxOutput]) -> Transaction:
        height = len(self.blocks)
        tx = Transaction(
            txid=self.next_txid(height),
            block_height=height,
            inputs=tuple(inputs),
            outputs=tuple(outputs),
        )
        self.pending.append(tx)
        for i in inputs:
            self.balances[i.address] -= i.value
        for o in outputs:
            self.balances[o.address] = self.balances.get(o.address, 0) + o.value
        return tx

    def seal_block(self) -> None:
        height = len(self.blocks)
        txids = [tx.txid for tx in self.pending]
        prev = self.blocks[-1][0].hash if self.blocks else "0" * 64
        block = Block(
            height=height,
            hash=_hex_digest("block", str(height), prev, *txids),
            timestamp=GENESIS_TIME + BLOCK_INTERVAL * height,
            txids=tuple(txids),
        )
        self.blocks.append((block, self.pending))
        self.pending = []


def _funding_per_address(spec: SynthSpec) -> int:
    top = max((cj.denomination for cj in spec.planted_coinjoins), default=0)
    return max(1_000_000, 2 * top + 10 * (spec.fee_rate + 1))


def _make_wallets(spec: SynthSpec, builder: _Builder) -> list[_Wallet]:
    lo, hi = spec.addresses_per_wallet
    wallets = []
    for i in range(spec.n_wallets):
        count = builder.rng.randint(lo, hi)
        wallets.append(
            _Wallet(wallet_id=f"w{i}", addresses=[builder.new_address() for _ in range(count)])
        )
    return wallets


def _fund_wallets(spec: SynthSpec, builder: _Builder, wallets: list[_Wallet]) -> None:
    amount = _funding_per_address(spec)
    outputs = [
        TxOutput(address=addr, value=amount)
        for wallet in wallets
        for addr in wallet.addresses
    ]
    builder.add_tx([], outputs)  # coinbase
    builder.seal_block()


def _spendable(builder: _Builder, wallet: _Wallet, minimum: int) -> list[str]:
    return [a for a in wallet.addresses if builder.balances.get(a, 0) >= minimum]


def _emit_payment(spec: SynthSpec, builder: _Builder, wallets: list[_Wallet]) -> None:
    rng = builder.rng
    fee = spec.fee_rate
    candidates = [w for w in wallets if _spendable(builder, w, fee + 2)]
    if not candidates:
        raise ValidationError("generator ran out of spendable funds; lower n_payments or fees")
    payer = rng.choice(candidates)
    funded = _spendable(builder, payer, 1)
    n_in = min(rng.randint(1, 3), len(funded))
    chosen: list[str] = []
    pool = list(funded)
    for _ in range(n_in):
        addr = pool.pop(rng.randrange(len(pool)))
        chosen.append(addr)
    total_in = sum(builder.balances[a] for a in chosen)
    if total_in < fee + 2:
        chosen = [max(funded, key=lambda a: builder.balances[a])]
        total_in = builder.balances[chosen[0]]
    amount = rng.randint(1, total_in - fee - 1)
    change = total_in - fee - amount

    others = [w for w in wallets if w.wallet_id != payer.wallet_id]
    payee = rng.choice(others) if others else payer
    payee_addr = rng.choice(payee.addresses)
    change_addr = builder.new_address()
    payer.addresses.append(change_addr)

    builder.add_tx(
        [TxInput(address=a, value=builder.balances[a]) for a in chosen],
        [TxOutput(address=payee_addr, value=amount), TxOutput(address=change_addr, value=change)],
    )


def _emit_coinjoin(
    spec: SynthSpec,
    builder: _Builder,
    wallets_by_id: dict[str, _Wallet],
    participants: tuple[str, ...],
    denomination: int,
) -> None:
    rng = builder.rng
    inputs: list[TxInput] = []
    denom_outputs: list[TxOutput] = []
    change_outputs: list[TxOutput] = []
    taken_changes: set[int] = set()
    for wallet_id in participants:
        wallet = wallets_by_id[wallet_id]
        funded = _spendable(builder, wallet, denomination + 1)
        if not funded:
            raise ValidationError(
                f"wallet {wallet_id} cannot fund a CoinJoin of denomination {denomination}"
            )
        addr = rng.choice(funded)
        balance = builder.balances[addr]
        # Change values must stay distinct from the denomination and from
        # each other, otherwise the dominant output multiplicity drifts;
        # the per-participant fee absorbs the adjustment.
        fee = spec.fee_rate
        while True:
            change = balance - denomination - fee
            if change >= 1 and change != denomination and change not in taken_changes:
                break
            fee += 1
            if balance - denomination - fee < 1:
                raise ValidationError(
                    f"wallet {wallet_id} balance too tight for a distinct change output"
                )
        taken_changes.add(change)
        inputs.append(TxInput(address=addr, value=balance))
        denom_addr = builder.new_address()
        change_addr = builder.new_address()
        wallet.addresses.extend([denom_addr, change_addr])
        denom_outputs.append(TxOutput(address=denom_addr, value=denomination))
        change_outputs.append(TxOutput(address=change_addr, value=change))
    builder.add_tx(inputs, denom_outputs + change_outputs)


@dataclass(frozen=True)
class _PlantedSlot:
    participants: tuple[str, ...]
    denomination: int


def generate_synthetic(spec: SynthSpec) -> tuple[Ledger, GroundTruth]:
    """Generate a ledger and its ground truth; pure function of the spec."""
    rng = Xoshiro256StarStar(spec.seed)
    builder = _Builder(rng)
    wallets = _make_wallets(spec, builder)
    wallets_by_id = {w.wallet_id: w for w in wallets}
    _fund_wallets(spec, builder, wallets)

    n_events = spec.n_payments + len(spec.planted_coinjoins)
    cj_positions: dict[int, _PlantedSlot] = {}
    taken: set[int] = set()
    for cj in spec.planted_coinjoins:
        while True:
            pos = rng.randrange(n_events)
            if pos not in taken:
                taken.add(pos)
                cj_positions[pos] = _PlantedSlot(cj.participant_wallet_ids, cj.denomination)
                break

    in_block = 0
    for event in range(n_events):
        slot = cj_positions.get(event)
        if slot is not None:
            _emit_coinjoin(spec, builder, wallets_by_id, slot.participants, slot.denomination)
        else:
            _emit_payment(spec, builder, wallets)
        in_block += 1
        if in_block == TXS_PER_BLOCK:
            builder.seal_block()
            in_block = 0
    if in_block or not builder.blocks:
        builder.seal_block()

    ledger = build_ledger(builder.blocks)
    ground_truth = GroundTruth(
        wallets={w.wallet_id: frozenset(w.addresses) for w in wallets}
    )
    return ledger, ground_truth


def planted_coinjoin_txids(ledger: Ledger) -> list[str]:
    """Convenience for tests: txids of generated transactions with more
    than two outputs (ordinary payments always have exactly one or two)."""
    return [
        tx.txid
        for tx in ledger.iter_transactions()
        if not tx.is_coinbase and len(tx.outputs) > 2
    ]
