"""Binary network loading and geometry helpers.

Networks are undirected simple graphs held as dense symmetric 0/1 adjacency
matrices with a zero diagonal.
"""

from collections import deque

import numpy as np

_FORMATS = ("adjacency-csv", "edge-list-csv")


def validate_adjacency(adj):
    """Check adjacency constraints, returning the matrix as float64."""
    adj = np.asarray(adj, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency matrix must be square, got shape %s" % (adj.shape,))
    if not np.all((adj == 0.0) | (adj == 1.0)):
        raise ValueError("adjacency entries must be 0 or 1")
    if np.any(np.diag(adj) != 0.0):
        raise ValueError("adjacency diagonal must be zero (no self-loops)")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency matrix must be symmetric")
    return adj


def load_network(path, format="adjacency-csv", n_nodes=None):
    """Load one network from disk.

    Parameters
    ----------
    path : str or Path
    format : {"adjacency-csv", "edge-list-csv"}
        adjacency-csv is a dense p x p 0/1 matrix with no header.
        edge-list-csv has one "k,l" pair per line, 1-indexed; ``n_nodes``
        is required because isolated nodes carry no rows.
    n_nodes : int, optional

    Returns
    -------
    adj : (p, p) float64 ndarray
    """
    if format not in _FORMATS:
        raise ValueError("unknown network format %r (expected one of %s)" % (format, list(_FORMATS)))
    if format == "adjacency-csv":
        adj = np.loadtxt(path, delimiter=",", ndmin=2)
        return validate_adjacency(adj)
    if n_nodes is None:
        raise ValueError("edge-list-csv needs n_nodes (isolated nodes have no rows)")
    p = int(n_nodes)
    if p < 1:
        raise ValueError("n_nodes must be positive")
    pairs = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    adj = np.zeros((p, p))
    if pairs.size:
        if pairs.shape[1] != 2:
            raise ValueError("edge list rows must be 'k,l' pairs")
        k, l = pairs[:, 0], pairs[:, 1]
        if np.any(k < 1) or np.any(l < 1) or np.any(k > p) or np.any(l > p):
            raise ValueError("edge endpoints must be in 1..n_nodes")
        if np.any(k == l):
            raise ValueError("self-loops are not allowed")
        adj[k - 1, l - 1] = 1.0
        adj[l - 1, k - 1] = 1.0
    return adj


def edge_vector(adj):
    """Strict upper triangle of ``adj`` flattened row by row (pairs k < l)."""
    adj = np.asarray(adj, dtype=np.float64)
    iu = np.triu_indices(adj.shape[0], k=1)
    return adj[iu]


def edge_vector_to_adjacency(vec, p):
    """Inverse of :func:`edge_vector` for a p-node network."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (p * (p - 1) // 2,):
        raise ValueError("edge vector has wrong length for p=%d" % p)
    adj = np.zeros((p, p))
    iu = np.triu_indices(p, k=1)
    adj[iu] = vec
    return adj + adj.T


def shortest_path_distances(adj):
    """Hop distance matrix by BFS from every node.

    Disconnected pairs get distance p, which exceeds every realizable hop
    count and keeps the matrix finite for downstream embedding.
    """
    adj = validate_adjacency(adj)
    p = adj.shape[0]
    neighbors = [np.flatnonzero(adj[k]) for k in range(p)]
    dist = np.full((p, p), float(p))
    for start in range(p):
        dist[start, start] = 0.0
        seen = np.zeros(p, dtype=bool)
        seen[start] = True
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for nxt in neighbors[node]:
                if not seen[nxt]:
                    seen[nxt] = True
                    dist[start, nxt] = dist[start, node] + 1.0
                    queue.append(nxt)
    return dist


def classical_mds(dist, d):
    """Classical (Torgerson) multidimensional scaling.

    Double-centers the squared distance matrix, takes the top ``d``
    eigenpairs, and scales eigenvectors by root eigenvalues. Negative
    eigenvalues are clamped to zero, so non-Euclidean directions and any
    dimensions past the rank of the centered Gram matrix come out as zero
    columns.

    Parameters
    ----------
    dist : (p, p) array_like
        Symmetric nonnegative distances.
    d : int
        Output dimension, at most p.

    Returns
    -------
    coords : (p, d) ndarray
        Centered configuration (columns have zero mean).
    """
    dist = np.asarray(dist, dtype=np.float64)
    p = dist.shape[0]
    if dist.ndim != 2 or dist.shape != (p, p):
        raise ValueError("distance matrix must be square")
    if not (1 <= d <= p):
        raise ValueError("need 1 <= d <= p, got d=%d for p=%d" % (d, p))
    centerer = np.eye(p) - np.full((p, p), 1.0 / p)
    gram = -0.5 * centerer @ (dist**2) @ centerer
    gram = 0.5 * (gram + gram.T)
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:d]
    lam = np.clip(evals[order], 0.0, None)
    return evecs[:, order] * np.sqrt(lam)
