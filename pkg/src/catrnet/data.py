"""Observation tables, interaction networks, spillovers, and subsampling.

Networks are stored compressed-row style (indptr/indices/weights) with
row-normalized positive weights.  All containers are immutable once built and
safe to share across workers.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyDataError,
    InvalidParameterError,
    IsolatedUnitError,
    ParseError,
    SchemaError,
)

IDENTITY = "identity"
SUM_SCALE = "sum_scale"

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Outcome, treatment, covariates (intercept first), and instruments."""

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    ids: tuple

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        z = np.ascontiguousarray(self.z, dtype=np.float64)
        n = y.shape[0]
        if n == 0:
            raise EmptyDataError("dataset has no rows")
        if t.shape[0] != n or x.shape[0] != n or z.shape[0] != n:
            raise InvalidParameterError("dataset columns have mismatched lengths")
        for name, arr in (("y", y), ("t", t), ("x", x), ("z", z)):
            if not np.isfinite(arr).all():
                raise ParseError(f"non-finite values in {name}")
        if x.ndim != 2 or z.ndim != 2:
            raise InvalidParameterError("x and z must be 2-d")
        if not np.all(x[:, 0] == 1.0):
            raise InvalidParameterError("column 0 of x must be the intercept")
        for name, arr in (("y", y), ("t", t), ("x", x), ("z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def dx(self):
        return self.x.shape[1]

    @property
    def dz(self):
        return self.z.shape[1]


@dataclass(frozen=True)
class Network:
    """Directed peer lists with row-normalized positive weights.

    ``indices[indptr[i]:indptr[i+1]]`` are i's peers, aligned with
    ``weights``.  ``m_transform`` selects how the weighted peer-treatment
    average enters the spillover: identity, or scaling by the peer count.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    m_transform: str = IDENTITY

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.m_transform not in (IDENTITY, SUM_SCALE):
            raise InvalidParameterError(f"unknown m_transform {self.m_transform!r}")
        n = indptr.shape[0] - 1
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            if hi > lo:
                peers = indices[lo:hi]
                w = weights[lo:hi]
                if np.any(peers == i):
                    raise InvalidParameterError(f"unit {i} has a self-loop")
                if np.any(w <= 0.0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
                    raise InvalidParameterError(
                        f"weights of unit {i} must be positive and sum to 1"
                    )
        for name, arr in (("indptr", indptr), ("indices", indices), ("weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.indptr.shape[0] - 1

    @property
    def degrees(self):
        return np.diff(self.indptr)

    def peers(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def peer_weights(self, i):
        return self.weights[self.indptr[i] : self.indptr[i + 1]]


@dataclass(frozen=True)
class SubsampleSpec:
    """Units selected for estimation: common peer count, equal weights."""

    indices: np.ndarray
    group_size: int
    weight_rule: str = "equal"
    empty_warning: bool = field(default=False, compare=False)

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def n(self):
        return self.indices.shape[0]


def load_dataset(path, schema):
    """Read a CSV into a Dataset using a column-name schema.

    ``schema`` maps roles to column names: ``y`` and ``t`` to single names,
    ``x`` and ``z`` to lists.  An all-ones intercept column is prepended
    unless the first x column already is one.
    """
    for role in ("y", "t", "x", "z"):
        if role not in schema:
            raise SchemaError(f"schema is missing the {role!r} entry")
    x_cols = list(schema["x"])
    z_cols = list(schema["z"])
    wanted = [schema["y"], schema["t"], *x_cols, *z_cols]

    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise SchemaError(f"data file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"columns {missing} not found in {path}")
        pos = {c: header.index(c) for c in wanted}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            parsed = []
            for col in wanted:
                cell = row[pos[col]] if pos[col] < len(row) else ""
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: cannot parse {cell!r} at row {lineno}, column {col!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise EmptyDataError(f"{path} contains a header but no data rows")

    table = np.asarray(rows, dtype=np.float64)
    y = table[:, 0]
    t = table[:, 1]
    x = table[:, 2 : 2 + len(x_cols)]
    z = table[:, 2 + len(x_cols) :]
    if x.shape[1] == 0 or not np.all(x[:, 0] == 1.0):
        x = np.column_stack([np.ones(table.shape[0]), x])
    ids = tuple(str(i) for i in range(table.shape[0]))
    return Dataset(y=y, t=t, x=x, z=z, ids=ids)


def build_ring_network(n, k):
    """Ring of ``n`` units, each tied to k/2 predecessors and k/2 successors."""
    if k <= 0 or k % 2 != 0:
        raise InvalidParameterError(f"ring degree k must be a positive even count, got {k}")
    if k >= n:
        raise InvalidParameterError(f"ring degree k={k} must be smaller than n={n}")
    half = k // 2
    offsets = np.concatenate([np.arange(-half, 0), np.arange(1, half + 1)])
    indices = ((np.arange(n)[:, None] + offsets[None, :]) % n).ravel()
    indptr = np.arange(n + 1, dtype=np.int64) * k
    weights = np.full(n * k, 1.0 / k)
    return Network(indptr=indptr, indices=indices, weights=weights)


def build_knn_network(coords, k, restrict_to=None):
    """Connect each unit to its k nearest peers by Euclidean distance.

    Distance ties break toward the lower unit index.  When ``restrict_to``
    (a per-unit list of admissible peers, e.g. a boundary-sharing relation)
    is given, the k-nearest set is intersected with it; realized peers get
    equal weights.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if k < 1 or k >= n:
        raise InvalidParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    if not np.isfinite(coords).all():
        raise InvalidParameterError("coordinates must be finite")
    allowed = None
    if restrict_to is not None:
        allowed = [set(map(int, peers)) for peers in restrict_to]

    indptr = np.zeros(n + 1, dtype=np.int64)
    all_peers = []
    for i in range(n):
        d = np.linalg.norm(coords - coords[i], axis=1)
        d[i] = np.inf
        # stable argsort on (distance, index) makes the tie-break total
        order = np.argsort(d, kind="stable")
        nearest = order[:k]
        if allowed is not None:
            nearest = [j for j in nearest if int(j) in allowed[i]]
        peers = np.sort(np.asarray(nearest, dtype=np.int64))
        all_peers.append(peers)
        indptr[i + 1] = indptr[i] + peers.size
    indices = np.concatenate(all_peers) if all_peers else np.empty(0, dtype=np.int64)
    weights = np.concatenate(
        [np.full(p.size, 1.0 / p.size) if p.size else np.empty(0) for p in all_peers]
    )
    return Network(indptr=indptr, indices=indices, weights=weights)


def load_edgelist_network(path, n, m_transform=IDENTITY):
    """Build a Network from a (src,dst[,weight]) CSV over units 0..n-1.

    Missing weights mean equal weighting per source; explicit weights are
    normalized to sum to one within each source row.
    """
    by_src = {}
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise SchemaError(f"edge-list file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataError(f"{path} is empty")
        has_weight = len(header) >= 3
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                src = int(row[0])
                dst = int(row[1])
                w = float(row[2]) if has_weight and len(row) > 2 and row[2].strip() else None
            except ValueError:
                raise ParseError(f"{path}: bad edge at row {lineno}: {row!r}") from None
            if not (0 <= src < n and 0 <= dst < n):
                raise ParseError(f"{path}: edge ({src},{dst}) outside 0..{n - 1}")
            by_src.setdefault(src, []).append((dst, w))

    indptr = np.zeros(n + 1, dtype=np.int64)
    indices = []
    weights = []
    for i in range(n):
        edges = sorted(by_src.get(i, []))
        indptr[i + 1] = indptr[i] + len(edges)
        if not edges:
            continue
        dsts = [d for d, _ in edges]
        ws = np.asarray([1.0 if w is None else w for _, w in edges], dtype=np.float64)
        total = ws.sum()
        if total <= 0:
            raise ParseError(f"{path}: non-positive total weight for unit {i}")
        indices.extend(dsts)
        weights.extend(ws / total)
    return Network(
        indptr=indptr,
        indices=np.asarray(indices, dtype=np.int64),
        weights=np.asarray(weights, dtype=np.float64),
        m_transform=m_transform,
    )


def peer_average(net, values, units=None):
    """Weighted average of ``values`` over each unit's peers (no transform).

    Raises for isolated units: downstream stages assume every used unit has
    at least one peer.
    """
    values = np.asarray(values, dtype=np.float64)
    if units is None:
        units = np.arange(net.n)
    units = np.asarray(units, dtype=np.int64)
    degrees = net.degrees
    if np.any(degrees[units] == 0):
        bad = units[degrees[units] == 0][0]
        raise IsolatedUnitError(f"unit {bad} has no peers; spillover undefined")
    # segment sums over the CSR layout; empty segments masked afterwards
    if net.indices.size:
        contrib = net.weights * values[net.indices]
        starts = np.minimum(net.indptr[:-1], net.indices.size - 1)
        sums = np.where(degrees > 0, np.add.reduceat(contrib, starts), 0.0)
    else:
        sums = np.zeros(net.n)
    return sums[units]


def spillover(net, t, units=None):
    """Peer-treatment exposure: the weighted average, transformed by m_i."""
    if units is None:
        units = np.arange(net.n)
    units = np.asarray(units, dtype=np.int64)
    avg = peer_average(net, t, units)
    if net.m_transform == SUM_SCALE:
        avg = avg * net.degrees[units]
    return avg


def homogeneous_subsample(net, group_size):
    """Units whose peer count equals ``group_size`` with equal weights."""
    if group_size < 1:
        raise InvalidParameterError(f"group_size must be >= 1, got {group_size}")
    degrees = net.degrees
    if net.weights.size:
        target = np.repeat(np.where(degrees > 0, 1.0 / np.maximum(degrees, 1), 0.0), degrees)
        dev = np.abs(net.weights - target)
        starts = np.minimum(net.indptr[:-1], net.weights.size - 1)
        max_dev = np.where(degrees > 0, np.maximum.reduceat(dev, starts), np.inf)
    else:
        max_dev = np.full(net.n, np.inf)
    idx = np.flatnonzero((degrees == group_size) & (max_dev <= WEIGHT_TOL)).astype(np.int64)
    empty = idx.size == 0
    if empty:
        warnings.warn(
            f"no units with peer count {group_size}; downstream stages will reject n=0",
            stacklevel=2,
        )
    return SubsampleSpec(indices=idx, group_size=group_size, empty_warning=empty)
