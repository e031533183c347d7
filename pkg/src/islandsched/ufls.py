"""Staged underfrequency load-shedding plans."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence


@dataclass(frozen=True)
class UflsStage:
    threshold_hz: float  # frequency deviation below nominal
    delay_s: float
    shed_buses: tuple[int, ...]


@dataclass(frozen=True)
class UflsPlan:
    stages: tuple[UflsStage, ...]
    # per-bus active load share; fills in the MW shed per stage
    bus_shares: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        thresholds = [s.threshold_hz for s in self.stages]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("UFLS thresholds must be strictly increasing")
        if any(s.delay_s < 0 for s in self.stages):
            raise ValueError("UFLS delays must be nonnegative")

    @classmethod
    def default(cls, bus_shares: Mapping[int, float] | None = None,
                delay_s: float = 14.0 / 60.0) -> "UflsPlan":
        """Two stages: 1.0 Hz sheds buses 9-11, 1.2 Hz sheds buses 12-14."""
        return cls(
            stages=(
                UflsStage(1.0, delay_s, (9, 10, 11)),
                UflsStage(1.2, delay_s, (12, 13, 14)),
            ),
            bus_shares=dict(bus_shares or {}),
        )

    def shed_fractions(self) -> list[float]:
        """Fraction of the total load dropped by each stage."""
        if not self.bus_shares:
            raise ValueError("UFLS plan has no bus load shares")
        return [sum(self.bus_shares.get(b, 0.0) for b in s.shed_buses)
                for s in self.stages]

    def shed_mw(self, load_mw: float) -> list[float]:
        return [f * load_mw for f in self.shed_fractions()]


def stage_order_ok(trigger_times: Sequence[float | None]) -> bool:
    """True when no stage fired before a lower-threshold stage."""
    seen_gap = False
    last = -float("inf")
    for t in trigger_times:
        if t is None:
            seen_gap = True
            continue
        if seen_gap or t < last:
            return False
        last = t
    return True
