"""Cross-view retrieval evaluation: hashing, projection, rank metrics.

Documents are bags of tokens turned into fixed-width sparse rows by
signed feature hashing, which preserves inner products in expectation.
Held-out rows are projected through the learned factors and scored by
how well each row's true counterpart in another view ranks among all
candidates by Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from hashlib import blake2b

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .linalg import SparseView, spmm_right


@dataclass(frozen=True)
class HashSpec:
    """Signed-hash configuration: 2**bits slots, seeded hash family.

    The token hash is pinned to BLAKE2b keyed by the seed: the first
    eight digest bytes pick the slot, the ninth picks the sign.  Hashed
    corpora are therefore reproducible byte for byte across runs.
    """

    bits: int = 19
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.bits <= 30:
            raise ValueError("bits must be in [1, 30]")

    @property
    def slots(self) -> int:
        return 1 << self.bits


def _token_slot_sign(token: str, spec: HashSpec) -> tuple[int, float]:
    key = (spec.seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = blake2b(token.encode("utf-8"), digest_size=9, key=key).digest()
    slot = int.from_bytes(digest[:8], "little") & (spec.slots - 1)
    sign = 1.0 if digest[8] & 1 else -1.0
    return slot, sign


def hash_featurize(tokens, spec: HashSpec) -> sp.csr_matrix:
    """Hash one token sequence into a signed 1 x 2**bits sparse row.

    Each occurrence adds +/-1 at its slot, so hashing a concatenation of
    two sequences equals the sum of their hashed rows exactly, and the
    expected inner product of two hashed rows equals the bag-of-words
    inner product.  An empty sequence gives the zero row.
    """
    accum: dict[int, float] = {}
    memo: dict[str, tuple[int, float]] = {}
    for tok in tokens:
        hit = memo.get(tok)
        if hit is None:
            hit = memo[tok] = _token_slot_sign(tok, spec)
        slot, sign = hit
        accum[slot] = accum.get(slot, 0.0) + sign
    if not accum:
        return sp.csr_matrix((1, spec.slots), dtype=np.float64)
    cols = np.fromiter(accum.keys(), dtype=np.int64, count=len(accum))
    vals = np.fromiter(accum.values(), dtype=np.float64, count=len(accum))
    order = np.argsort(cols)
    mat = sp.csr_matrix((vals[order], cols[order], np.array([0, len(cols)])),
                        shape=(1, spec.slots))
    return mat


def hash_corpus(documents, spec: HashSpec) -> SparseView:
    """Hash a sequence of token lists into one view, one row per document."""
    rows = [hash_featurize(doc, spec) for doc in documents]
    if not rows:
        raise ValueError("empty corpus")
    return SparseView(sp.vstack(rows).tocsr())


def split_rows(n_rows: int, seed: int,
               fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)):
    """Seeded shuffle split into train/test/validation index arrays.

    The validation slice is returned but typically unused.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    perm = np.random.default_rng(seed).permutation(n_rows)
    n_train = int(round(fractions[0] * n_rows))
    n_test = int(round(fractions[1] * n_rows))
    return (np.sort(perm[:n_train]),
            np.sort(perm[n_train:n_train + n_test]),
            np.sort(perm[n_train + n_test:]))


def project(view: SparseView, factor) -> np.ndarray:
    """Map held-out rows into the shared latent space: X_hat @ Q."""
    return spmm_right(view, factor)


def cross_distances(proj_a, proj_b) -> np.ndarray:
    """All Euclidean distances between two projected row sets."""
    proj_a = np.asarray(proj_a, dtype=np.float64)
    proj_b = np.asarray(proj_b, dtype=np.float64)
    if proj_a.shape[1] != proj_b.shape[1]:
        raise ValueError("projections have different widths")
    return cdist(proj_a, proj_b)


def _match_ranks(distances: np.ndarray) -> np.ndarray:
    # 1-based rank of each diagonal entry in its row; the true match is
    # placed before equal-distance competitors
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square and row-aligned")
    diag = np.diag(d)
    return 1 + (d < diag[:, None]).sum(axis=1)


def aroc(distances, query: int) -> float:
    """Rank-based retrieval accuracy for one query row, in percent.

    100 when the true match is nearest, 0 when it ranks last; linear in
    the rank in between.  Requires at least two candidates.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.shape[0] < 2:
        raise ValueError("need at least two rows for a rank percentage")
    rank = _match_ranks(d)[query]
    return float((1.0 - (rank - 1) / (d.shape[0] - 1)) * 100.0)


def nn_freq(distances) -> float:
    """Percent of query rows whose true match ranks first."""
    ranks = _match_ranks(distances)
    return float(100.0 * np.mean(ranks == 1))


@dataclass(frozen=True)
class PairScore:
    query_view: int
    gallery_view: int
    aroc: float
    nn_freq: float


@dataclass(frozen=True)
class RetrievalResult:
    """Scores for every ordered view pair plus per-view and global means."""

    pairs: list[PairScore]
    per_view_aroc: dict[int, float] = field(repr=False)
    per_view_nn_freq: dict[int, float] = field(repr=False)
    mean_aroc: float = 0.0
    mean_nn_freq: float = 0.0


def evaluate_pairs(test_views, factors) -> RetrievalResult:
    """Score cross-view retrieval for every ordered pair of views.

    All test views must list the same entities in the same row order.
    For each pair (i, j) the rows of view i query the gallery of view j;
    the pair's AROC is the mean over queries.
    """
    views = list(test_views)
    if len(views) < 2:
        raise ValueError("need at least two views")
    n_rows = views[0].shape[0]
    if any(v.shape[0] != n_rows for v in views):
        raise ValueError("test views disagree on row count")
    if n_rows < 2:
        raise ValueError("need at least two aligned rows")
    projections = [project(v, q) for v, q in zip(views, factors)]

    pairs = []
    for i in range(len(views)):
        for j in range(len(views)):
            if i == j:
                continue
            d = cross_distances(projections[i], projections[j])
            ranks = _match_ranks(d)
            pair_aroc = float(np.mean(
                (1.0 - (ranks - 1) / (n_rows - 1)) * 100.0))
            pairs.append(PairScore(i, j, pair_aroc,
                                   float(100.0 * np.mean(ranks == 1))))

    per_aroc = {}
    per_nn = {}
    for i in range(len(views)):
        mine = [p for p in pairs if p.query_view == i]
        per_aroc[i] = float(np.mean([p.aroc for p in mine]))
        per_nn[i] = float(np.mean([p.nn_freq for p in mine]))
    return RetrievalResult(
        pairs=pairs,
        per_view_aroc=per_aroc,
        per_view_nn_freq=per_nn,
        mean_aroc=float(np.mean([p.aroc for p in pairs])),
        mean_nn_freq=float(np.mean([p.nn_freq for p in pairs])))
