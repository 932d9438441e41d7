"""Undirected attributed graphs: container, file formats, SBM generator.

Conventions used across the package:

* In memory, node ids are 0-based; labels are integers in {1..C}.
* On disk (canonical JSON, edge-list CSV), node ids are 1-based.
* The adjacency is a scipy CSR matrix with float64 ones, symmetric, zero
  diagonal, each undirected edge stored in both triangles.
* Graphs are immutable: every array is marked read-only after
  construction, and edits (LCC extraction, edge toggles) return new
  objects.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphFormatError(ValueError):
    """Raised when an input file or graph construction violates the format."""


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class Graph:
    num_nodes: int
    num_classes: int
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    splits: Splits
    meta: dict = field(default_factory=dict)

    @property
    def num_features(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class SbmParams:
    num_nodes: int = 200
    num_blocks: int = 4
    p_in: float = 0.15
    p_out: float = 0.01
    num_features: int = 16
    feature_signal: float = 0.5
    seed: int = 0


def _freeze(arr):
    arr.flags.writeable = False
    return arr


def _build_graph(num_nodes, num_classes, edges, features, labels, splits, meta):
    """Assemble and validate a Graph from 0-based parts.

    ``edges`` is an iterable of (u, w) pairs with u < w, already deduplicated.
    """
    edges = sorted(edges)
    if edges:
        eu = np.fromiter((e[0] for e in edges), dtype=np.int64, count=len(edges))
        ew = np.fromiter((e[1] for e in edges), dtype=np.int64, count=len(edges))
        rows = np.concatenate([eu, ew])
        cols = np.concatenate([ew, eu])
        data = np.ones(rows.shape[0], dtype=np.float64)
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
        data = np.empty(0, dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))
    adj.sort_indices()
    for part in (adj.data, adj.indices, adj.indptr):
        part.flags.writeable = False

    g = Graph(
        num_nodes=num_nodes,
        num_classes=num_classes,
        adjacency=adj,
        features=_freeze(np.ascontiguousarray(features, dtype=np.float64)),
        labels=_freeze(np.asarray(labels, dtype=np.int64)),
        splits=Splits(*(_freeze(np.sort(np.asarray(s, dtype=np.int64))) for s in splits)),
        meta=dict(meta),
    )
    validate_graph(g)
    return g


def validate_graph(g):
    """Check the container invariants; raise GraphFormatError on violation."""
    n = g.num_nodes
    if n <= 0:
        raise GraphFormatError("graph must have at least one node")
    if g.adjacency.shape != (n, n):
        raise GraphFormatError("adjacency shape does not match num_nodes")
    if g.adjacency.diagonal().any():
        raise GraphFormatError("self-loops are not allowed")
    diff = g.adjacency - g.adjacency.T
    if diff.nnz and np.abs(diff.data).max() > 0:
        raise GraphFormatError("adjacency must be symmetric")
    if g.adjacency.nnz and not np.all(g.adjacency.data == 1.0):
        raise GraphFormatError("adjacency entries must be 0/1")
    if g.features.shape[0] != n:
        raise GraphFormatError("feature matrix must have one row per node")
    if not np.all(np.isfinite(g.features)):
        raise GraphFormatError("features must be finite")
    if g.labels.shape != (n,):
        raise GraphFormatError("labels must have one entry per node")
    if g.num_classes < 1 or g.labels.min() < 1 or g.labels.max() > g.num_classes:
        raise GraphFormatError("labels must lie in {1..num_classes}")
    seen = np.zeros(n, dtype=bool)
    for name in ("train", "validation", "test"):
        part = getattr(g.splits, name)
        if part.size == 0:
            continue
        if part.min() < 0 or part.max() >= n:
            raise GraphFormatError(f"{name} split contains out-of-range node ids")
        if np.unique(part).size != part.size:
            raise GraphFormatError(f"{name} split contains duplicate node ids")
        if seen[part].any():
            raise GraphFormatError("splits must be pairwise disjoint")
        seen[part] = True
    return g


def degree(g, v):
    """Number of neighbors of v."""
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range")
    ptr = g.adjacency.indptr
    return int(ptr[v + 1] - ptr[v])


def edge_pairs(g):
    """Sorted list of undirected edges as 0-based (u, w) pairs with u < w."""
    coo = g.adjacency.tocoo()
    mask = coo.row < coo.col
    return sorted(zip(coo.row[mask].tolist(), coo.col[mask].tolist()))


def jaccard_similarity(g, u, w):
    """Jaccard similarity of the binary feature supports of nodes u and w.

    Two all-zero rows count as identical (similarity 1.0).
    """
    xu = g.features[u]
    xw = g.features[w]
    for row in (xu, xw):
        if not np.all((row == 0.0) | (row == 1.0)):
            raise ValueError("jaccard similarity requires binary features")
    inter = float(np.minimum(xu, xw).sum())
    union = float(np.maximum(xu, xw).sum())
    if union == 0.0:
        return 1.0
    return inter / union


def largest_connected_component(g):
    """Induced subgraph on the largest component.

    Ties between equal-sized components go to the one containing the
    smallest node id.  Node ids are compacted preserving order, and splits
    are filtered and remapped.
    """
    ncomp, comp = connected_components(g.adjacency, directed=False)
    sizes = np.bincount(comp, minlength=ncomp)
    best = sizes.max()
    # first node whose component has maximal size determines the winner
    winner = comp[int(np.argmax(sizes[comp] == best))]
    keep = np.flatnonzero(comp == winner)
    remap = -np.ones(g.num_nodes, dtype=np.int64)
    remap[keep] = np.arange(keep.size)

    sub = g.adjacency[keep][:, keep].tocoo()
    mask = sub.row < sub.col
    edges = zip(sub.row[mask].tolist(), sub.col[mask].tolist())
    splits = []
    for name in ("train", "validation", "test"):
        part = getattr(g.splits, name)
        part = part[comp[part] == winner] if part.size else part
        splits.append(remap[part])
    return _build_graph(
        num_nodes=keep.size,
        num_classes=g.num_classes,
        edges=edges,
        features=g.features[keep],
        labels=g.labels[keep],
        splits=splits,
        meta=g.meta,
    )


def toggle_edges(g, pairs):
    """Return a copy of g with the given undirected (u, w) edges toggled."""
    current = set(edge_pairs(g))
    for u, w in pairs:
        if u == w:
            raise GraphFormatError("cannot toggle a self-loop")
        if not (0 <= u < g.num_nodes and 0 <= w < g.num_nodes):
            raise GraphFormatError("edge endpoint out of range")
        key = (min(u, w), max(u, w))
        if key in current:
            current.remove(key)
        else:
            current.add(key)
    splits = (g.splits.train, g.splits.validation, g.splits.test)
    return _build_graph(g.num_nodes, g.num_classes, current, g.features, g.labels, splits, g.meta)


# ---------------------------------------------------------------------------
# stochastic block model

def generate_sbm(params):
    """Sample an SBM graph with block-correlated binary features.

    Nodes are assigned to ``num_blocks`` near-equal blocks (the remainder
    goes to the first blocks); the label of a node is its block id + 1.
    Each block draws a sign pattern in {-1, +1}^D, and node features are
    1[signal * pattern + uniform(-1, 1) > 0].  Splits reserve 20% of the
    nodes for labels, half train and half validation, rest test.

    All randomness flows through one seeded generator in a fixed order
    (edges, then feature patterns, then noise, then splits), so equal
    params give byte-identical graphs.
    """
    p = params
    if p.num_nodes < 1 or p.num_blocks < 1 or p.num_blocks > p.num_nodes:
        raise ValueError("need 1 <= num_blocks <= num_nodes")
    for prob in (p.p_in, p.p_out):
        if not 0.0 <= prob <= 1.0:
            raise ValueError("edge probabilities must lie in [0, 1]")
    if p.num_features < 1:
        raise ValueError("need at least one feature")

    rng = np.random.default_rng(p.seed)
    n, b = p.num_nodes, p.num_blocks
    sizes = np.full(b, n // b, dtype=np.int64)
    sizes[: n % b] += 1
    block = np.repeat(np.arange(b), sizes)

    probs = np.where(block[:, None] == block[None, :], p.p_in, p.p_out)
    iu = np.triu_indices(n, k=1)
    hit = rng.random(iu[0].size) < probs[iu]
    edges = zip(iu[0][hit].tolist(), iu[1][hit].tolist())

    patterns = rng.choice((-1.0, 1.0), size=(b, p.num_features))
    noise = rng.uniform(-1.0, 1.0, size=(n, p.num_features))
    feats = (p.feature_signal * patterns[block] + noise > 0.0).astype(np.float64)

    perm = rng.permutation(n)
    n_labeled = int(round(0.2 * n))
    n_train = n_labeled // 2
    splits = (perm[:n_train], perm[n_train:n_labeled], perm[n_labeled:])

    meta = {
        "generator": "sbm",
        "params": {
            "num_nodes": n,
            "num_blocks": b,
            "p_in": p.p_in,
            "p_out": p.p_out,
            "num_features": p.num_features,
            "feature_signal": p.feature_signal,
            "seed": p.seed,
        },
    }
    return _build_graph(n, b, edges, feats, block + 1, splits, meta)


# ---------------------------------------------------------------------------
# file formats

def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_graph(g, path):
    """Write canonical JSON (1-based ids, sorted edges)."""
    doc = {
        "num_nodes": g.num_nodes,
        "num_classes": g.num_classes,
        "edges": [[u + 1, w + 1] for u, w in edge_pairs(g)],
        "features": [[float(x) for x in row] for row in g.features],
        "labels": [int(l) for l in g.labels],
        "splits": {
            "train": [int(i) + 1 for i in g.splits.train],
            "validation": [int(i) + 1 for i in g.splits.validation],
            "test": [int(i) + 1 for i in g.splits.test],
        },
        "meta": g.meta,
    }
    _atomic_write_text(path, json.dumps(doc, sort_keys=True) + "\n")


def _normalize_edges(raw_pairs, num_nodes):
    """Dedup 1-based directed pairs into 0-based (u, w) with u < w.

    Flags mixed direction conventions: if some edges appear in both
    orientations and others in only one, the source probably intended a
    directed graph, which this toolkit silently symmetrizes.
    """
    undirected = {}
    for a, b in raw_pairs:
        if not (1 <= a <= num_nodes and 1 <= b <= num_nodes):
            raise GraphFormatError(f"edge ({a}, {b}) references a node outside 1..{num_nodes}")
        if a == b:
            raise GraphFormatError(f"self-loop on node {a} is not allowed")
        key = (min(a, b) - 1, max(a, b) - 1)
        undirected.setdefault(key, set()).add((a, b))
    both = sum(1 for dirs in undirected.values() if len(dirs) == 2)
    mixed = 0 < both < len(undirected)
    return set(undirected), mixed


def _load_canonical_json(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise GraphFormatError(f"{path}: not valid JSON ({e})") from e
    try:
        n = int(doc["num_nodes"])
        c = int(doc["num_classes"])
        raw_edges = doc["edges"]
        feats = np.asarray(doc["features"], dtype=np.float64)
        labels = doc["labels"]
        sp_doc = doc.get("splits", {})
    except (KeyError, TypeError, ValueError) as e:
        raise GraphFormatError(f"{path}: missing or malformed field ({e})") from e
    edges, mixed = _normalize_edges([(int(a), int(b)) for a, b in raw_edges], n)
    splits = []
    for name in ("train", "validation", "test"):
        ids = sp_doc.get(name, [])
        splits.append([int(i) - 1 for i in ids])
    meta = dict(doc.get("meta", {}))
    if mixed:
        meta["mixed_edge_directions"] = True
    if feats.ndim != 2:
        raise GraphFormatError(f"{path}: features must be a list of rows")
    return _build_graph(n, c, edges, feats, labels, splits, meta)


def _read_pair_lines(path):
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'u,w'")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError as e:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id") from e
    return pairs


def _edge_list_companions(path):
    if os.path.isdir(path):
        return (
            os.path.join(path, "edges.csv"),
            os.path.join(path, "features.csv"),
            os.path.join(path, "labels.csv"),
        )
    base = path
    for suffix in (".edges.csv", ".csv"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
            break
    return path, base + ".features.csv", base + ".labels.csv"


def _load_edge_list(path, identity_features):
    epath, fpath, lpath = _edge_list_companions(path)
    if not os.path.exists(epath):
        raise GraphFormatError(f"{epath}: edge file not found")
    if not os.path.exists(lpath):
        raise GraphFormatError(f"{lpath}: label file not found")
    labels = []
    with open(lpath) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as e:
                raise GraphFormatError(f"{lpath}:{lineno}: non-integer label") from e
    n = len(labels)
    if n == 0:
        raise GraphFormatError(f"{lpath}: no labels")
    if identity_features or not os.path.exists(fpath):
        feats = np.eye(n, dtype=np.float64)
    else:
        feats = np.loadtxt(fpath, delimiter=",", ndmin=2, dtype=np.float64)
        if feats.shape[0] != n:
            raise GraphFormatError(f"{fpath}: {feats.shape[0]} feature rows for {n} labels")
    edges, mixed = _normalize_edges(_read_pair_lines(epath), n)
    meta = {"source": "edge-list"}
    if mixed:
        meta["mixed_edge_directions"] = True
    # no split information in this format: everything is test
    splits = ([], [], list(range(n)))
    return _build_graph(n, max(labels), edges, feats, labels, splits, meta)


def load_graph(path, fmt="canonical-json", identity_features=False):
    """Load a graph from disk.

    fmt "canonical-json" reads the format written by save_graph.  fmt
    "edge-list" reads a CSV triple: an edge file of 1-based 'u,w' lines
    plus sibling features.csv / labels.csv files (``path`` may be the
    edge file or a directory containing all three).  Missing feature
    files, or identity_features=True, substitute one-hot identity rows.
    """
    path = os.fspath(path)
    if fmt == "canonical-json":
        g = _load_canonical_json(path)
        if identity_features:
            splits = (g.splits.train, g.splits.validation, g.splits.test)
            return _build_graph(
                g.num_nodes, g.num_classes, edge_pairs(g),
                np.eye(g.num_nodes), g.labels, splits, g.meta,
            )
        return g
    if fmt == "edge-list":
        return _load_edge_list(path, identity_features)
    raise ValueError(f"unknown graph format {fmt!r}")
