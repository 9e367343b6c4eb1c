"""Seeded deterministic random source.

SplitMix64 (Steele, Lea & Flood's mixing constants): a 64-bit counter-based
generator small enough to specify exactly, so identical seeds always yield
identical draw sequences on any platform. The engine confines draws to two
sites (shock success, non-shockable ROSC), each pulling exactly one value per
opportunity.
"""

from __future__ import annotations

from dataclasses import dataclass

_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass
class Prng:
    state: int

    @classmethod
    def from_seed(cls, seed: int) -> "Prng":
        return cls(state=seed & _MASK)

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def u01(self) -> float:
        # 53 high bits -> uniform double in [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))
