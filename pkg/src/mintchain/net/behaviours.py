"""Scripted mintette misbehaviour used by the simulator and audit scenarios."""

from __future__ import annotations

import enum
from typing import Optional

from ..core import AddrId, Transaction
from ..crypto import Hash
from ..encoding import encode
from ..mintette import (
    CloseEpochAction,
    Mintette,
    QueryAction,
    Vote,
    VoteStatement,
)


class Behaviour(str, enum.Enum):
    HONEST = "Honest"
    SILENT = "Silent"
    FORK_LOG = "ForkLog"
    ACCEPT_DOUBLE_SPEND = "AcceptDoubleSpend"
    STALE_VOTE = "StaleVote"


class SilentMintette(Mintette):
    """Never answers users; still hands over an (empty) log at period end."""

    silent = True


class AcceptDoubleSpendMintette(Mintette):
    """Votes for any valid spend, even of an input it already voted away."""

    def _may_vote(self, addr_id: AddrId, h: Hash) -> bool:
        return addr_id in self.utxo or addr_id in self.spent


class ForkLogMintette(Mintette):
    """Behaves honestly but publishes a rewritten log at period end.

    The first Query entry is swapped for a CloseEpoch, so every head from
    that point on differs from the heads it signed.
    """

    def end_period(self):
        blocks, log = super().end_period()
        for i, e in enumerate(log):
            if isinstance(e, QueryAction):
                log = log[:i] + [CloseEpochAction(())] + log[i + 1 :]
                break
        return blocks, log


class StaleVoteMintette(Mintette):
    """Signs votes over the head before the entry it just appended."""

    def _sign_vote(self, tx_hash: Hash, addr_id: Optional[AddrId]) -> Vote:
        seq = self.seq - 1
        head = self._previous_head
        msg = encode(VoteStatement(tx_hash, addr_id, head, seq))
        return Vote(self.pk, self.keypair.sign(msg), head, seq)

    def _append(self, entry) -> None:
        self._previous_head = self.head
        super()._append(entry)


class InsertingMintette(Mintette):
    """Slips transactions into its next lower block without any 2PC record."""

    def insert(self, tx: Transaction) -> None:
        self.txset[tx.hash] = tx


class BackdatingMintette(Mintette):
    """Appends a Query for an already committed tx to claim the vote late."""

    def backdate(self, tx: Transaction, addr_id: AddrId) -> Vote:
        self._append(QueryAction(tx, addr_id))
        return self._sign_vote(tx.hash, addr_id)


BEHAVIOURS: dict[Behaviour, type[Mintette]] = {
    Behaviour.HONEST: Mintette,
    Behaviour.SILENT: SilentMintette,
    Behaviour.FORK_LOG: ForkLogMintette,
    Behaviour.ACCEPT_DOUBLE_SPEND: AcceptDoubleSpendMintette,
    Behaviour.STALE_VOTE: StaleVoteMintette,
}


def is_silent(mintette: Mintette) -> bool:
    return getattr(mintette, "silent", False)
