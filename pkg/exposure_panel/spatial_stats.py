#!/usr/bin/env python3
"""
Spatial Stats
Spatial weights (queen/rook contiguity, k-nearest, lattices, edge lists),
global Moran's I and local indicators of spatial association with conditional
permutation inference.
"""

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse, stats
from scipy.spatial.distance import cdist

from .exceptions import SpatialError

logger = logging.getLogger(__name__)

SCHEMES = ('queen', 'rook', 'knn')
DEFAULT_ISLAND_K = 6
DEFAULT_PERMUTATIONS = 999
CATEGORIES = ('HH', 'LH', 'LL', 'HL')
NOT_SIGNIFICANT = 'not-significant'
ISOLATED = 'isolated'

Ring = List[Tuple[float, float]]


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """
    Sparse neighbor weights over ordered units

    `binary` keeps the unstandardized adjacency; `matrix` holds the weights in
    use (row-standardized unless row_standardized is False).
    """

    units: Tuple[str, ...]
    binary: sparse.csr_matrix
    matrix: sparse.csr_matrix
    scheme: str
    row_standardized: bool = True
    isolated: Tuple[str, ...] = ()
    fallback_units: Tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def s0(self) -> float:
        return float(self.matrix.sum())

    @property
    def cardinalities(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def index(self, unit: str) -> int:
        try:
            return self.units.index(unit)
        except ValueError:
            raise SpatialError(f"Unknown spatial unit: {unit}")

    def neighbors(self, unit: str) -> List[Tuple[str, float]]:
        i = self.index(unit)
        start, end = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return [(self.units[j], float(w)) for j, w in zip(self.matrix.indices[start:end], self.matrix.data[start:end])]

    def to_frame(self) -> pd.DataFrame:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return pd.DataFrame({
            'unit_id': [self.units[i] for i in coo.row[order]],
            'neighbor_id': [self.units[j] for j in coo.col[order]],
            'weight': coo.data[order],
        })


def _assemble(units: Sequence[str], adjacency: Mapping[int, Iterable[int]], scheme: str,
              standardize: bool = True, fallback: Sequence[int] = ()) -> SpatialWeights:
    n = len(units)
    rows, cols = [], []
    for i in range(n):
        for j in sorted(set(adjacency.get(i, ()))):
            if j == i:
                continue
            rows.append(i)
            cols.append(j)
    binary = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    binary.sort_indices()
    counts = np.diff(binary.indptr)
    isolated = tuple(units[i] for i in np.flatnonzero(counts == 0))
    if standardize:
        scale = np.divide(1.0, counts, out=np.zeros(n), where=counts > 0)
        matrix = sparse.diags(scale) @ binary
        matrix = sparse.csr_matrix(matrix)
        matrix.sort_indices()
    else:
        matrix = binary.copy()
    if isolated:
        logger.warning(f"{len(isolated)} isolated spatial units: {list(isolated)[:10]}")
    return SpatialWeights(tuple(units), binary, matrix, scheme, standardize, isolated,
                          tuple(units[i] for i in fallback))


def _check_units(units: Sequence[str]) -> None:
    if len(units) < 2:
        raise SpatialError(f"Spatial weights need at least 2 units, got {len(units)}")
    if len(set(units)) != len(units):
        raise SpatialError('Spatial unit ids are not unique')


def contiguity_neighbors(polygons: Sequence[Ring], scheme: str = 'queen') -> Dict[int, set]:
    """Neighbors from shared boundary vertices (queen) or shared edges (rook)"""
    owners: Dict[tuple, set] = defaultdict(set)
    for index, ring in enumerate(polygons):
        vertices = [tuple(map(float, point)) for point in ring]
        if len(vertices) > 1 and vertices[0] == vertices[-1]:
            vertices = vertices[:-1]
        if len(vertices) < 3:
            raise SpatialError(f"Polygon {index} has fewer than 3 distinct vertices")
        if scheme == 'queen':
            keys = set(vertices)
        else:
            closed = vertices + vertices[:1]
            keys = {tuple(sorted((closed[k], closed[k + 1]))) for k in range(len(vertices))}
        for key in keys:
            owners[key].add(index)
    neighbors: Dict[int, set] = defaultdict(set)
    for shared in owners.values():
        if len(shared) > 1:
            for unit in shared:
                neighbors[unit] |= shared - {unit}
    return neighbors


def knn_neighbors(centroids: np.ndarray, k: int, subset: Optional[Sequence[int]] = None,
                  units: Optional[Sequence[str]] = None) -> Dict[int, List[int]]:
    """k nearest units by centroid distance; ties broken by unit id (position when ids are absent)"""
    centroids = np.asarray(centroids, dtype=float)
    n = len(centroids)
    if units is None:
        tie_rank = np.arange(n)
    else:
        if len(units) != n:
            raise SpatialError(f"{len(units)} unit ids for {n} centroids")
        tie_rank = np.argsort(np.argsort(np.asarray(units, dtype=str), kind='stable'), kind='stable')
    if not 1 <= k < n:
        raise SpatialError(f"k must be in 1..{n - 1}, got {k}")
    if len(np.unique(centroids, axis=0)) != n:
        raise SpatialError('Centroids must be distinct for k-nearest weights')
    rows = range(n) if subset is None else subset
    distances = cdist(centroids[list(rows)], centroids)
    result = {}
    for position, i in enumerate(rows):
        d = distances[position].copy()
        d[i] = np.inf
        order = np.lexsort((tie_rank, d))
        result[i] = [int(j) for j in order[:k]]
    return result


def polygon_centroids(polygons: Sequence[Ring]) -> np.ndarray:
    """Vertex-mean centroid of each ring (closing vertex counted once)"""
    centroids = []
    for ring in polygons:
        points = np.asarray(ring, dtype=float)
        if len(points) > 1 and np.array_equal(points[0], points[-1]):
            points = points[:-1]
        centroids.append(points.mean(axis=0))
    return np.vstack(centroids)


def build_weights(units: Sequence[str], polygons: Optional[Sequence[Ring]] = None,
                  centroids: Optional[np.ndarray] = None, scheme: str = 'queen', k: int = 6,
                  island_k: int = DEFAULT_ISLAND_K, standardize: bool = True) -> SpatialWeights:
    """
    Build row-standardized spatial weights

    Args:
        units: Ordered unit ids
        polygons: One ring of (x, y) vertices per unit (contiguity schemes)
        centroids: n x 2 coordinates (knn, or island fallback)
        scheme: 'queen', 'rook' or 'knn'
        k: Neighbors per unit for knn
        island_k: Under contiguity, give isolated units their island_k nearest
            neighbors (capped at n - 1); 0 leaves them isolated

    Raises:
        SpatialError: invalid geometry or parameters
    """
    units = [str(unit) for unit in units]
    _check_units(units)
    if scheme not in SCHEMES:
        raise SpatialError(f"Unknown weights scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == 'knn':
        if centroids is None:
            if polygons is None:
                raise SpatialError('k-nearest weights need centroids or polygons')
            centroids = polygon_centroids(polygons)
        if len(centroids) != len(units):
            raise SpatialError(f"{len(centroids)} centroids for {len(units)} units")
        return _assemble(units, knn_neighbors(centroids, k, units=units), 'knn', standardize)

    if polygons is None or len(polygons) != len(units):
        raise SpatialError(f"Contiguity weights need one polygon per unit ({len(units)} units)")
    adjacency = contiguity_neighbors(polygons, scheme)
    islands = [i for i in range(len(units)) if not adjacency.get(i)]
    fallback: List[int] = []
    if island_k < 0:
        raise SpatialError(f"island_k must be >= 0, got {island_k}")
    if islands and island_k:
        island_k = min(island_k, len(units) - 1)
        coordinates = centroids if centroids is not None else polygon_centroids(polygons)
        for i, neighbors in knn_neighbors(coordinates, island_k, islands, units).items():
            adjacency[i] = set(neighbors)
            fallback.append(i)
        logger.info(f"{len(fallback)} island units given {island_k}-nearest neighbors")
    return _assemble(units, adjacency, scheme, standardize, fallback)


def lattice_weights(rows: int, cols: int, scheme: str = 'rook', standardize: bool = True) -> SpatialWeights:
    """Weights on a rows x cols grid; units 'r<row>c<col>' in row-major order"""
    if scheme not in ('rook', 'queen'):
        raise SpatialError(f"Lattice weights support rook or queen, got {scheme!r}")
    units = [f"r{r}c{c}" for r in range(rows) for c in range(cols)]
    _check_units(units)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if scheme == 'queen':
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    adjacency = {}
    for r in range(rows):
        for c in range(cols):
            adjacency[r * cols + c] = {
                (r + dr) * cols + (c + dc) for dr, dc in steps
                if 0 <= r + dr < rows and 0 <= c + dc < cols
            }
    return _assemble(units, adjacency, f"lattice-{scheme}", standardize)


def weights_from_edges(edges: Iterable[Tuple[str, str]], units: Optional[Sequence[str]] = None,
                       standardize: bool = True) -> SpatialWeights:
    """Symmetric contiguity weights from an undirected edge list"""
    edges = [(str(a), str(b)) for a, b in edges]
    if units is None:
        units = sorted({unit for edge in edges for unit in edge})
    units = [str(unit) for unit in units]
    _check_units(units)
    position = {unit: i for i, unit in enumerate(units)}
    adjacency: Dict[int, set] = defaultdict(set)
    for a, b in edges:
        if a == b:
            raise SpatialError(f"Self-neighbor edge for unit {a}")
        if a not in position or b not in position:
            raise SpatialError(f"Edge ({a}, {b}) references an unknown unit")
        adjacency[position[a]].add(position[b])
        adjacency[position[b]].add(position[a])
    return _assemble(units, adjacency, 'edges', standardize)


def read_edge_list(path: str) -> List[Tuple[str, str]]:
    """adjacency CSV: unit_id,neighbor_id"""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    if not {'unit_id', 'neighbor_id'} <= set(frame.columns):
        raise SpatialError(f"edge list {path} needs columns unit_id,neighbor_id")
    return list(zip(frame['unit_id'].str.strip(), frame['neighbor_id'].str.strip()))


def read_polygons(path: str) -> Tuple[List[str], List[Ring]]:
    """
    Polygon CSV: unit_id,ring

    ring lists the vertices as "x y" pairs separated by semicolons, e.g.
    "0 0;1 0;1 1;0 1". The closing vertex may be repeated.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    if not {'unit_id', 'ring'} <= set(frame.columns):
        raise SpatialError(f"polygon file {path} needs columns unit_id,ring")
    units, rings = [], []
    for unit, raw in zip(frame['unit_id'], frame['ring']):
        try:
            ring = [tuple(float(v) for v in pair.split()) for pair in raw.split(';') if pair.strip()]
        except ValueError:
            raise SpatialError(f"Malformed ring for unit {unit}")
        if any(len(point) != 2 for point in ring):
            raise SpatialError(f"Ring for unit {unit} must list x y pairs")
        units.append(unit.strip())
        rings.append(ring)
    return units, rings


def _values(values, weights: SpatialWeights) -> np.ndarray:
    if isinstance(values, Mapping):
        missing = [unit for unit in weights.units if unit not in values]
        if missing:
            raise SpatialError(f"No value for units {missing[:10]}")
        values = [values[unit] for unit in weights.units]
    z = np.asarray(values, dtype=float)
    if z.shape != (weights.n,):
        raise SpatialError(f"{z.size} values for {weights.n} units")
    if not np.all(np.isfinite(z)):
        raise SpatialError('Spatial statistics need finite values for every unit')
    if np.ptp(z) == 0:
        raise SpatialError('Spatial statistics are undefined for a constant field')
    return z


@dataclass(frozen=True)
class MoranResult:
    I: float
    expected: float
    p_value: float
    z_sim: float
    n_permutations: int
    seed: int

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def moran_statistic(values: np.ndarray, weights: SpatialWeights) -> float:
    z = values - values.mean()
    return float((weights.n / weights.s0) * (z @ (weights.matrix @ z)) / (z @ z))


def _folded_p(simulated: np.ndarray, observed: float) -> float:
    above = int(np.sum(simulated >= observed))
    below = int(np.sum(simulated <= observed))
    return (min(above, below) + 1) / (len(simulated) + 1)


def global_moran(values, weights: SpatialWeights, permutations: int = DEFAULT_PERMUTATIONS,
                 seed: int = 0) -> MoranResult:
    """
    I = (n/S0) z'Wz / z'z on mean-centered values with a folded
    permutation p-value (min tail count + 1)/(B + 1)
    """
    x = _values(values, weights)
    if weights.s0 <= 0:
        raise SpatialError('Weights have no neighbor links')
    observed = moran_statistic(x, weights)
    expected = -1.0 / (weights.n - 1)
    if permutations <= 0:
        return MoranResult(observed, expected, math.nan, math.nan, 0, seed)
    z = x - x.mean()
    rng = np.random.default_rng(seed)
    shuffled = rng.permuted(np.tile(z, (permutations, 1)), axis=1)
    lagged = (weights.matrix @ shuffled.T).T
    simulated = (weights.n / weights.s0) * np.einsum('ij,ij->i', shuffled, lagged) / (z @ z)
    sd = simulated.std(ddof=1)
    z_sim = (observed - simulated.mean()) / sd if sd > 0 else math.nan
    return MoranResult(observed, expected, _folded_p(simulated, observed), float(z_sim), permutations, seed)


@dataclass(frozen=True, eq=False)
class LisaResult:
    units: Tuple[str, ...]
    local_i: np.ndarray
    pseudo_p: np.ndarray
    categories: Tuple[str, ...]
    quadrants: Tuple[str, ...]
    global_i: float
    n_permutations: int
    alpha: float
    seed: int
    fdr: bool = False
    adjusted_p: Optional[np.ndarray] = None

    def to_frame(self) -> pd.DataFrame:
        """unit_id, local_i, pseudo_p, category"""
        return pd.DataFrame({
            'unit_id': list(self.units), 'local_i': self.local_i,
            'pseudo_p': self.pseudo_p, 'category': list(self.categories),
        })

    def counts(self) -> Dict[str, int]:
        labels = (*CATEGORIES, NOT_SIGNIFICANT, ISOLATED)
        return {label: sum(1 for c in self.categories if c == label) for label in labels}


def _standardized(values: np.ndarray) -> np.ndarray:
    return (values - values.mean()) / values.std(ddof=1)


def local_moran(values, weights: SpatialWeights) -> Tuple[np.ndarray, np.ndarray]:
    """(local I_i = zhat_i * sum_j w_ij zhat_j, spatial lag) with zhat using the n-1 SD"""
    zhat = _standardized(_values(values, weights))
    lag = weights.matrix @ zhat
    return zhat * lag, lag


def quadrant(zhat: float, lag: float) -> str:
    if zhat > 0:
        return 'HH' if lag > 0 else 'HL'
    return 'LH' if lag > 0 else 'LL'


def _conditional_p(i: int, zhat: np.ndarray, weights: SpatialWeights, observed: float,
                   permutations: int, seed: int) -> float:
    start, end = weights.matrix.indptr[i], weights.matrix.indptr[i + 1]
    w = weights.matrix.data[start:end]
    k = len(w)
    others = np.delete(zhat, i)
    rng = np.random.default_rng([seed, i])
    if k >= len(others):
        picks = np.tile(np.arange(len(others)), (permutations, 1))
        for row in picks:
            rng.shuffle(row)
        picks = picks[:, :k]
    else:
        keys = rng.random((permutations, len(others)))
        picks = np.argpartition(keys, k, axis=1)[:, :k]
    simulated = zhat[i] * (others[picks] @ w)
    return _folded_p(simulated, observed)


def lisa(values, weights: SpatialWeights, permutations: int = DEFAULT_PERMUTATIONS, alpha: float = 0.05,
         seed: int = 0, threads: int = 1, fdr: bool = False) -> LisaResult:
    """
    Local Moran's I with conditional permutation significance

    For unit i the other n-1 values are shuffled and |N(i)| of them placed on
    its neighbors; unit i draws from numpy.random.default_rng([seed, i]).
    pseudo_p = (min(#sim >= I_i, #sim <= I_i) + 1)/(B + 1). Categories are the
    (zhat_i, lag) quadrant when pseudo_p <= alpha (Benjamini-Hochberg adjusted
    with fdr=True); isolated units are not tested.
    """
    if permutations < 1:
        raise SpatialError(f"LISA needs at least one permutation, got {permutations}")
    if not 0 < alpha < 1:
        raise SpatialError(f"alpha must be in (0, 1), got {alpha}")
    x = _values(values, weights)
    zhat = _standardized(x)
    lag = weights.matrix @ zhat
    local_i = zhat * lag
    cardinalities = weights.cardinalities
    tested = [i for i in range(weights.n) if cardinalities[i] > 0]

    def run(i: int) -> float:
        return _conditional_p(i, zhat, weights, local_i[i], permutations, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            tested_p = list(executor.map(run, tested))
    else:
        tested_p = [run(i) for i in tested]
    pseudo_p = np.full(weights.n, np.nan)
    pseudo_p[tested] = tested_p

    decision_p = pseudo_p
    adjusted = None
    if fdr and tested:
        adjusted = np.full(weights.n, np.nan)
        adjusted[tested] = stats.false_discovery_control(np.asarray(tested_p))
        decision_p = adjusted

    quadrants, categories = [], []
    for i in range(weights.n):
        q = quadrant(zhat[i], lag[i])
        quadrants.append(q)
        if cardinalities[i] == 0:
            categories.append(ISOLATED)
        elif decision_p[i] <= alpha:
            categories.append(q)
        else:
            categories.append(NOT_SIGNIFICANT)

    global_i = moran_statistic(x, weights) if weights.s0 > 0 else math.nan
    result = LisaResult(weights.units, local_i, pseudo_p, tuple(categories), tuple(quadrants), global_i,
                        permutations, alpha, seed, fdr, adjusted)
    logger.info(f"LISA over {weights.n} units: {result.counts()}")
    return result


def local_sum_identity(result: LisaResult, weights: SpatialWeights) -> float:
    """sum_i local I_i implied by the global statistic: I * S0 * (n-1) / n"""
    return result.global_i * weights.s0 * (weights.n - 1) / weights.n
