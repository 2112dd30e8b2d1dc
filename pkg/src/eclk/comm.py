"""Per-node uplink bit accounting for the simulated broadcast.

Each iteration a node sends its compressed message, one bit for its share of
the reference-update coin, and, when the reference point was refreshed, its
uncompressed local gradient at the new reference point.
"""
from dataclasses import dataclass, field

import numpy as np

from .compressors import FLOAT_BITS

P_GRID = (3.0, 1.0, 1.0 / 3.0, 1.0 / 9.0)


@dataclass
class CommLedger:
    d: int
    per_iter_bits: list = field(default_factory=list)
    cumulative: int = 0

    @property
    def delta1(self):
        return FLOAT_BITS * self.d

    def charge(self, compressed_bits, refreshed, flag_bits=1):
        """Record one iteration; returns the bits it cost."""
        cost = int(compressed_bits) + int(flag_bits) + (self.delta1 if refreshed else 0)
        self.per_iter_bits.append(cost)
        self.cumulative += cost
        return cost

    def cumulative_series(self):
        return np.cumsum(self.per_iter_bits, dtype=np.int64)


def charge(ledger, k, compressed_bits, u_flag):
    """Charge iteration ``k``. The first iteration always pays for the reference gradient."""
    if k != len(ledger.per_iter_bits):
        raise ValueError(f"ledger holds {len(ledger.per_iter_bits)} iterations, cannot charge k={k}")
    ledger.charge(compressed_bits, bool(u_flag) or k == 0)
    return ledger


def expected_cost_bound(r, p, k, d):
    """Upper bound on the expected per-node bits of ``k`` iterations after the first.

    ``k = 0`` gives the cost of the opening iteration, which always sends the
    reference gradient.
    """
    delta1 = FLOAT_BITS * d
    return delta1 * r + 1 + delta1 + (delta1 * r + 1 + p * delta1) * k


def optimal_p(r):
    """Reference-update probability matched to the compression ratio."""
    if not 0 < r <= 1:
        raise ValueError(f"compression ratio must lie in (0, 1], got {r}")
    return r


def p_grid(r, factors=P_GRID):
    return [min(t * r, 1.0) for t in factors]
