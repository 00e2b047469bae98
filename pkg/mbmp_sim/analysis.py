# mbmp_sim/analysis.py
"""Control-overhead ratio of 2-hop flooding versus one enlarged-power broadcast.

Counts are receptions of admission requests. For a requester with m nodes in
transmission range, flooding costs m + m² receptions and an enlarged broadcast
reaching 2R costs 4m, so a uniform field gives (1 + m) / 4.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from mbmp_sim.errors import InvalidArgumentError, UndefinedRatioError

logger = logging.getLogger(__name__)


# =====================================================
# 🗺️ DENSITY FIELDS
# =====================================================
@dataclass(frozen=True)
class DensityField:
    """Node density (nodes/m²) per grid cell of area ``cell_area``."""

    values: np.ndarray
    cell_area: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise InvalidArgumentError("a density field needs at least one cell")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidArgumentError("densities must be finite and >= 0")
        if self.cell_area <= 0:
            raise InvalidArgumentError("cell_area must be > 0")
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, rho, arena):
        return cls(np.array([rho], dtype=float), arena.area)

    @classmethod
    def grid(cls, values, cell_area):
        return cls(np.asarray(values, dtype=float), cell_area)

    @classmethod
    def empirical(cls, topology, r, cell_area=None):
        """Smoothed density: nodes within ``r`` of each cell centre over πr²."""
        if r <= 0:
            raise InvalidArgumentError("r must be > 0")
        cell_area = (r / 10.0) ** 2 if cell_area is None else cell_area
        side = math.sqrt(cell_area)
        arena = topology.arena
        nx = max(1, int(math.ceil(arena.width / side)))
        ny = max(1, int(math.ceil(arena.height / side)))
        xs = (np.arange(nx) + 0.5) * arena.width / nx
        ys = (np.arange(ny) + 0.5) * arena.height / ny
        cx, cy = np.meshgrid(xs, ys, indexing="ij")
        centres = np.column_stack([cx.ravel(), cy.ravel()])
        pts = topology.positions
        if len(pts) == 0:
            counts = np.zeros(len(centres))
        else:
            d = np.hypot(centres[:, None, 0] - pts[None, :, 0], centres[:, None, 1] - pts[None, :, 1])
            counts = (d <= r).sum(axis=1)
        return cls(counts / (math.pi * r * r), arena.area / (nx * ny))

    @property
    def total_nodes(self):
        return float(self.values.sum() * self.cell_area)

    @property
    def area(self):
        return self.cell_area * self.values.size


# =====================================================
# 📐 ANALYTIC RATIO
# =====================================================
def theta_analytic(field, r, request_rate=1.0):
    if r <= 0 or request_rate <= 0:
        raise InvalidArgumentError("r and request_rate must be > 0")
    rho = field.values
    m = math.pi * r * r * rho
    requests = request_rate * rho * field.cell_area
    den = float(np.sum(4.0 * m * requests))
    if den == 0.0:
        raise UndefinedRatioError("overhead ratio undefined for zero total density")
    return float(np.sum((m + m * m) * requests)) / den


def theta_lower_bound(node_count, arena_area, r):
    if arena_area <= 0:
        raise InvalidArgumentError("arena_area must be > 0")
    return 0.25 + math.pi * r * r * node_count / (4.0 * arena_area)


# =====================================================
# 🎲 MONTE CARLO
# =====================================================
@dataclass(frozen=True)
class OverheadSample:
    multi_hop_receptions: int
    power_receptions: int


@dataclass(frozen=True)
class MonteCarloResult:
    ratio: float
    stderr: float
    trials: int
    excluded: int
    samples: tuple


def _counts(points, requester, r):
    """Reception counts for one requester given every other node's position."""
    d0 = np.hypot(points[:, 0] - requester[0], points[:, 1] - requester[1])
    neighbors = points[d0 <= r]
    power = int(np.count_nonzero(d0 <= 2 * r))
    k = len(neighbors)
    if k == 0:
        return OverheadSample(0, 0)
    dn = np.hypot(neighbors[:, None, 0] - points[None, :, 0],
                  neighbors[:, None, 1] - points[None, :, 1])
    # each neighbour's rebroadcast reaches every other node within r of it
    relayed = int(np.count_nonzero(dn <= r)) - k
    return OverheadSample(k + relayed, power)


def _sample_disk(rng, rho, radius):
    n = rng.poisson(rho * math.pi * radius * radius)
    rad = radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    ang = rng.uniform(0.0, 2 * math.pi, size=n)
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def theta_monte_carlo(source, r, trials, rng, bootstrap=200):
    """Estimate the ratio from ``trials`` admission requests.

    ``source`` is a Topology (random requester each trial) or a DensityField
    (requester cell drawn in proportion to its request volume, neighbours a
    fresh Poisson sample at that cell's density).
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    if r <= 0:
        raise InvalidArgumentError("r must be > 0")
    samples = []
    if isinstance(source, DensityField):
        weights = source.values
        if weights.sum() == 0:
            raise UndefinedRatioError("overhead ratio undefined for zero total density")
        cells = rng.choice(len(weights), size=trials, p=weights / weights.sum())
        for cell in cells:
            pts = _sample_disk(rng, weights[cell], 2 * r)
            samples.append(_counts(pts, (0.0, 0.0), r))
    else:
        n = len(source)
        if n == 0:
            raise InvalidArgumentError("topology has no nodes")
        pos = source.positions
        for node in rng.integers(0, n, size=trials):
            others = np.delete(pos, node, axis=0)
            samples.append(_counts(others, pos[node], r))

    kept = [s for s in samples if s.multi_hop_receptions > 0]
    if not kept:
        raise UndefinedRatioError("every requester was isolated")
    multi = np.array([s.multi_hop_receptions for s in kept], dtype=float)
    power = np.array([s.power_receptions for s in kept], dtype=float)
    ratio = float(multi.sum() / power.sum())

    boots = []
    for _ in range(bootstrap):
        idx = rng.integers(0, len(kept), size=len(kept))
        boots.append(multi[idx].sum() / power[idx].sum())
    stderr = float(np.std(boots, ddof=1)) if bootstrap > 1 else 0.0
    logger.debug("monte carlo: ratio=%.4f stderr=%.4f kept=%d/%d", ratio, stderr, len(kept), trials)
    return MonteCarloResult(ratio, stderr, trials, trials - len(kept), tuple(samples))
