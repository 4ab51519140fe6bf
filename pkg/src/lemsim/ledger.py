"""Hash-chained trade ledger with a simplified proof-of-work seal.

One block per trading period. Trades are serialized canonically (sorted,
fixed-precision) so identical trade sets digest identically across
platforms; the nonce search starts at zero, making the whole chain
deterministic for a deterministic run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .market import Trade

GENESIS_HASH = "0" * 64
MAX_DIFFICULTY = 24
DEFAULT_DIFFICULTY = 8


def canonical_trade_rows(trades: Iterable[Trade]) -> list[str]:
    """Render trades as stable strings, sorted by (stage, buyer, seller).

    Prices and quantities use fixed 9-decimal rendering so the digest is
    insensitive to float repr differences but sensitive to any real change.
    """
    rows = []
    for tr in sorted(trades, key=lambda tr: (tr.stage, tr.buyer, tr.seller, tr.price, tr.quantity)):
        rows.append(
            f"{tr.period}|{tr.stage}|{tr.buyer}|{tr.seller}|"
            f"{tr.price:.9f}|{tr.quantity:.9f}|{tr.loss:.9f}|{tr.fee_total:.9f}"
        )
    return rows


def trade_digest(rows: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(rows).encode()).hexdigest()


def _block_hash(index: int, previous_hash: str, digest: str, nonce: int) -> str:
    return hashlib.sha256(f"{index}|{previous_hash}|{digest}|{nonce}".encode()).hexdigest()


def _meets_difficulty(hex_hash: str, difficulty: int) -> bool:
    if difficulty == 0:
        return True
    return int(hex_hash, 16) >> (256 - difficulty) == 0


@dataclass(frozen=True)
class Block:
    index: int
    period: int
    previous_hash: str
    trade_rows: tuple[str, ...]
    digest: str
    nonce: int
    block_hash: str


def seal_block(
    trades: Sequence[Trade],
    previous_hash: str,
    difficulty: int = DEFAULT_DIFFICULTY,
    index: int = 0,
    period: int = 0,
) -> Block:
    """Mine the lowest nonce whose block hash meets the difficulty target."""
    if not 0 <= difficulty <= MAX_DIFFICULTY:
        raise ValueError(f"seal_block: difficulty must be in [0, {MAX_DIFFICULTY}] bits")
    rows = tuple(canonical_trade_rows(trades))
    digest = trade_digest(rows)
    nonce = 0
    while True:
        block_hash = _block_hash(index, previous_hash, digest, nonce)
        if _meets_difficulty(block_hash, difficulty):
            return Block(
                index=index,
                period=period,
                previous_hash=previous_hash,
                trade_rows=rows,
                digest=digest,
                nonce=nonce,
                block_hash=block_hash,
            )
        nonce += 1


def verify_chain(blocks: Sequence[Block], difficulty: int = DEFAULT_DIFFICULTY) -> bool:
    """Check linkage, stored digests, and the difficulty target of every block."""
    previous = GENESIS_HASH
    for i, block in enumerate(blocks):
        if block.index != i or block.previous_hash != previous:
            return False
        if trade_digest(block.trade_rows) != block.digest:
            return False
        if _block_hash(block.index, block.previous_hash, block.digest, block.nonce) != block.block_hash:
            return False
        if not _meets_difficulty(block.block_hash, difficulty):
            return False
        previous = block.block_hash
    return True


def export_chain(blocks: Sequence[Block]) -> str:
    """Newline-delimited JSON records, one block per line."""
    lines = []
    for block in blocks:
        lines.append(
            json.dumps(
                {
                    "index": block.index,
                    "period": block.period,
                    "previous_hash": block.previous_hash,
                    "digest": block.digest,
                    "nonce": block.nonce,
                    "block_hash": block.block_hash,
                    "trades": list(block.trade_rows),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def import_chain(text: str) -> list[Block]:
    blocks = []
    for line in text.splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        blocks.append(
            Block(
                index=raw["index"],
                period=raw["period"],
                previous_hash=raw["previous_hash"],
                trade_rows=tuple(raw["trades"]),
                digest=raw["digest"],
                nonce=raw["nonce"],
                block_hash=raw["block_hash"],
            )
        )
    return blocks
