"""View synchronization.

Two models bracket the pacemakers the protocol may run on:

* ``oracle``: the simulator advances every honest replica at the same tick
  (fixed slots); the leader's sync signal fires when all post-GST NEW-VIEW
  messages must have landed.
* ``timeout``: each replica advances on its own, on voting or on expiry, with
  exponential backoff over consecutive timeouts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction


class Mode(str, enum.Enum):
    ORACLE = "oracle"
    TIMEOUT = "timeout"


class AdvanceReason(str, enum.Enum):
    QC_FORMED = "qc"
    TIMEOUT = "timeout"
    SYNC = "sync"


@dataclass
class Pacemaker:
    mode: Mode = Mode.TIMEOUT
    base_timeout: int = 20
    backoff: Fraction = Fraction(2)
    current_view: int = 0
    view_entry_time: int = 0
    consecutive_timeouts: int = 0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.backoff = Fraction(self.backoff)
        if self.base_timeout <= 0:
            raise ValueError("base_timeout must be positive")
        if self.backoff < 1:
            raise ValueError("backoff must be >= 1")

    @property
    def timeout(self) -> int:
        t = self.base_timeout * self.backoff ** self.consecutive_timeouts
        return max(1, int(t))

    def advance_view(self, reason: AdvanceReason, now: int = 0) -> int:
        reason = AdvanceReason(reason)
        if reason is AdvanceReason.TIMEOUT:
            self.consecutive_timeouts += 1
        elif reason is AdvanceReason.QC_FORMED:
            self.consecutive_timeouts = 0
        self.current_view += 1
        self.view_entry_time = now
        return self.current_view

    def jump_to(self, view: int, now: int):
        """Catch up to ``view`` after evidence that the cluster moved on."""
        if view > self.current_view:
            self.current_view = view
            self.view_entry_time = now

    def should_exit(self, now: int) -> bool:
        return now - self.view_entry_time >= self.timeout

    def exit_time(self) -> int:
        return self.view_entry_time + self.timeout

    def sync_time(self) -> int:
        """When the leader may propose without a fresh QC or a full NEW-VIEW set.

        Timeout mode: half the view timeout.  Oracle mode: the simulator
        passes an explicit signal instead.
        """
        return self.view_entry_time + max(1, self.timeout // 2)
