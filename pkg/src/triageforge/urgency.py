"""The three-level ordered urgency lattice shared across modules."""

from __future__ import annotations

import enum
from functools import total_ordering


@total_ordering
class UrgencyStatus(enum.Enum):
    SELF_CARE = "self_care"
    FOLLOW_UP_PCP = "follow_up_pcp"
    URGENT_OR_EMERGENCY = "urgent_or_emergency"

    @property
    def level(self) -> int:
        return _LEVELS[self]

    def __lt__(self, other):
        if not isinstance(other, UrgencyStatus):
            return NotImplemented
        return self.level < other.level

    @property
    def display(self) -> str:
        return _DISPLAY[self]


_LEVELS = {
    UrgencyStatus.SELF_CARE: 0,
    UrgencyStatus.FOLLOW_UP_PCP: 1,
    UrgencyStatus.URGENT_OR_EMERGENCY: 2,
}

_DISPLAY = {
    UrgencyStatus.SELF_CARE: "Self-care",
    UrgencyStatus.FOLLOW_UP_PCP: "Follow up with PCP",
    UrgencyStatus.URGENT_OR_EMERGENCY: "Urgent care / emergency",
}
