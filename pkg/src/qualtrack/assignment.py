"""Center-distance costs and gated bipartite matching.

Gating is expressed as a boolean mask of admissible pairs. Inadmissible
pairs are forbidden edges, never large sentinel costs, so the optimum is
exact: among matchings over admissible pairs, the solver returns one with
the most pairs and, among those, the lowest total cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .types import Detection


@dataclass
class CostMatrix:
    values: np.ndarray
    gate_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("cost values must be a 2D matrix")
        self.gate_mask = np.asarray(self.gate_mask, dtype=bool)
        if self.gate_mask.shape != self.values.shape:
            raise ValueError("gate_mask shape does not match cost values")
        if not np.all(np.isfinite(self.values[self.gate_mask])):
            raise ValueError("non-finite cost on an admissible pair")

    @classmethod
    def dense(cls, values) -> "CostMatrix":
        v = np.asarray(values, dtype=float)
        if v.size == 0 and v.ndim != 2:
            v = np.zeros((0, 0))
        return cls(v, np.ones(v.shape, dtype=bool))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass
class AssignmentResult:
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: List[int] = field(default_factory=list)
    unmatched_detections: List[int] = field(default_factory=list)

    def total_cost(self, cost: CostMatrix) -> float:
        return float(sum(cost.values[i, j] for i, j in self.pairs))


def _finish(pairs, n_rows, n_cols) -> AssignmentResult:
    pairs = sorted(pairs)
    used_r = {i for i, _ in pairs}
    used_c = {j for _, j in pairs}
    return AssignmentResult(
        pairs,
        [i for i in range(n_rows) if i not in used_r],
        [j for j in range(n_cols) if j not in used_c],
    )


def build_cost(
    predicted_centers: Sequence,
    detections: Sequence[Detection],
    class_gated: bool = True,
    gate_radius_m: Union[float, Mapping[int, float]] = 2.0,
    track_classes: Optional[Sequence[int]] = None,
) -> CostMatrix:
    """L2 distances between predicted track centers and detection centers.

    ``gate_radius_m`` is either a single radius or a per-class mapping
    (keyed by the detection's class id). Class gating needs
    ``track_classes``.
    """
    p = np.asarray(predicted_centers, dtype=float).reshape(-1, 2)
    d = np.asarray([det.center for det in detections], dtype=float).reshape(-1, 2)
    values = np.sqrt(((p[:, None, :] - d[None, :, :]) ** 2).sum(axis=-1))
    if isinstance(gate_radius_m, Mapping):
        radii = np.asarray(
            [gate_radius_m.get(det.class_id, gate_radius_m.get(-1, 2.0)) for det in detections],
            dtype=float,
        )
    else:
        radii = np.full(len(detections), float(gate_radius_m))
    mask = values <= radii[None, :]
    if class_gated:
        if track_classes is None:
            raise ValueError("class_gated matching needs track_classes")
        tc = np.asarray(track_classes).reshape(-1, 1)
        dc = np.asarray([det.class_id for det in detections]).reshape(1, -1)
        mask &= tc == dc
    return CostMatrix(values, mask)


def _solve_square(c: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (``inf`` = forbidden).

    Shortest augmenting path with row/column potentials. Returns
    ``col_of_row``. A perfect matching over finite entries must exist.
    """
    n = c.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j] = row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=int)
    a = np.full((n + 1, n + 1), INF)
    a[1:, 1:] = c
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, INF)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            if not np.isfinite(delta):
                raise RuntimeError("no perfect matching over admissible entries")
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


def _components(mask: np.ndarray):
    """Connected components of the admissible bipartite graph."""
    n_rows, n_cols = mask.shape
    row_seen = np.zeros(n_rows, dtype=bool)
    for start in range(n_rows):
        if row_seen[start] or not mask[start].any():
            continue
        rows, cols = {start}, set()
        row_seen[start] = True
        frontier = [start]
        while frontier:
            new_cols = set(np.flatnonzero(mask[frontier].any(axis=0))) - cols
            cols |= new_cols
            if not new_cols:
                break
            nr = set(np.flatnonzero(mask[:, sorted(new_cols)].any(axis=1))) - rows
            for r in nr:
                row_seen[r] = True
            rows |= nr
            frontier = sorted(nr)
        yield sorted(rows), sorted(int(c) for c in cols)


def _solve_component(values: np.ndarray, mask: np.ndarray):
    """Max-cardinality, then min-cost matching on one component.

    Each real row/column gets a dummy partner costing ``big``; ``big``
    exceeds any achievable difference in real cost, so fewer unmatched
    nodes always wins.
    """
    a, b = values.shape
    if a == 1 and b == 1:
        return [(0, 0)]
    admissible = values[mask]
    big = 2.0 * float(np.abs(admissible).sum()) + 1.0
    k = a + b
    aug = np.full((k, k), np.inf)
    aug[:a, :b] = np.where(mask, values, np.inf)
    aug[:a, b:] = big
    aug[a:, :b] = big
    aug[a:, b:] = 0.0
    col_of_row = _solve_square(aug)
    return [(i, int(col_of_row[i])) for i in range(a) if col_of_row[i] < b]


def hungarian(cost: CostMatrix) -> AssignmentResult:
    """Optimal assignment over admissible pairs (rectangular allowed)."""
    n_rows, n_cols = cost.values.shape
    pairs = []
    for rows, cols in _components(cost.gate_mask):
        sub_v = cost.values[np.ix_(rows, cols)]
        sub_m = cost.gate_mask[np.ix_(rows, cols)]
        for i, j in _solve_component(sub_v, sub_m):
            pairs.append((rows[i], cols[j]))
    return _finish(pairs, n_rows, n_cols)


def greedy_match(cost: CostMatrix) -> AssignmentResult:
    """Repeatedly take the smallest admissible entry; ties by row then column."""
    n_rows, n_cols = cost.values.shape
    ii, jj = np.nonzero(cost.gate_mask)
    vals = cost.values[ii, jj]
    order = np.lexsort((jj, ii, vals))
    used_r, used_c, pairs = set(), set(), []
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        pairs.append((i, j))
    return _finish(pairs, n_rows, n_cols)
