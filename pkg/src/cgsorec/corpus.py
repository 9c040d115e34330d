"""Dataset ingestion, splitting, popularity grouping, and condition matrices.

Everything here is sparse (scipy CSR, float64) and pure: loaders build
matrices, the split is a per-user seeded partition, and the condition
builders are small algebraic combinations of the loaded matrices.  No
function mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, DimensionError, ParseError


@dataclass(frozen=True)
class InteractionMatrix:
    """User-item matrix in CSR form; raw data is binary, derived data real."""

    matrix: sp.csr_matrix

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def user_items(self, user: int) -> np.ndarray:
        """Item ids the user interacted with, ascending."""
        m = self.matrix
        return np.sort(m.indices[m.indptr[user] : m.indptr[user + 1]])


@dataclass(frozen=True)
class SocialMatrix:
    """User-user matrix in CSR form.

    raw_edges is the number of distinct directed edges read from disk
    (after self-loop drop), kept for dataset statistics; it is None for
    derived matrices.
    """

    matrix: sp.csr_matrix
    raw_edges: int | None = None

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


@dataclass(frozen=True)
class SplitBundle:
    train: InteractionMatrix
    valid: InteractionMatrix
    test: InteractionMatrix
    seed: int
    debiased_test: InteractionMatrix | None = None


@dataclass(frozen=True)
class ItemGroups:
    """Hot/tail partition of the item catalog by training popularity."""

    hot: np.ndarray
    tail: np.ndarray
    hot_fraction: float
    n_items: int

    @property
    def hot_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_items, dtype=bool)
        mask[self.hot] = True
        return mask


def _binary_csr(users, items, shape) -> sp.csr_matrix:
    """CSR with value 1 at each distinct (user, item); duplicates collapse."""
    data = np.ones(len(users), dtype=np.float64)
    m = sp.coo_matrix((data, (users, items)), shape=shape).tocsr()
    m.sum_duplicates()
    m.data[:] = 1.0
    m.eliminate_zeros()
    return m


def _parse_id(token: str, lineno: int, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ParseError(f"line {lineno}: {what} {token!r} is not an integer") from None
    if value < 0:
        raise ParseError(f"line {lineno}: negative {what} {value}")
    return value


def load_interactions(
    path, n_users: int | None = None, n_items: int | None = None
) -> InteractionMatrix:
    """Read `user<TAB>item[<TAB>rating]` lines into a binary matrix.

    Positive ratings (or absent ones) count as an interaction; zero or
    negative ratings are dropped.  Dimensions default to max id + 1 and
    may be overridden; ids beyond declared dims raise DimensionError.
    """
    users: list[int] = []
    items: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ParseError(
                    f"line {lineno}: expected 2 or 3 tab-separated fields, got {len(parts)}"
                )
            u = _parse_id(parts[0], lineno, "user id")
            i = _parse_id(parts[1], lineno, "item id")
            if len(parts) == 3:
                try:
                    rating = float(parts[2])
                except ValueError:
                    raise ParseError(
                        f"line {lineno}: rating {parts[2]!r} is not a number"
                    ) from None
                if rating <= 0:
                    continue
            users.append(u)
            items.append(i)
    if not users and (n_users is None or n_items is None):
        raise DataError(f"{path}: no interactions and no declared dimensions")
    max_u = max(users, default=-1)
    max_i = max(items, default=-1)
    if n_users is None:
        n_users = max_u + 1
    elif max_u >= n_users:
        raise DimensionError(f"user id {max_u} exceeds declared n_users={n_users}")
    if n_items is None:
        n_items = max_i + 1
    elif max_i >= n_items:
        raise DimensionError(f"item id {max_i} exceeds declared n_items={n_items}")
    return InteractionMatrix(_binary_csr(users, items, (n_users, n_items)))


def load_social(
    path, n_users: int | None = None, symmetrize: bool = True
) -> SocialMatrix:
    """Read `user<TAB>user` lines; drop self-loops; symmetrize by default."""
    src: list[int] = []
    dst: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(
                    f"line {lineno}: expected 2 tab-separated fields, got {len(parts)}"
                )
            a = _parse_id(parts[0], lineno, "user id")
            b = _parse_id(parts[1], lineno, "user id")
            if a == b:
                continue
            src.append(a)
            dst.append(b)
    if not src and n_users is None:
        raise DataError(f"{path}: no edges and no declared dimension")
    max_u = max(max(src, default=-1), max(dst, default=-1))
    if n_users is None:
        n_users = max_u + 1
    elif max_u >= n_users:
        raise DimensionError(f"user id {max_u} exceeds declared n_users={n_users}")
    raw = _binary_csr(src, dst, (n_users, n_users))
    raw_edges = raw.nnz
    if symmetrize:
        sym = raw.maximum(raw.T).tocsr()
    else:
        sym = raw
    return SocialMatrix(sym, raw_edges=raw_edges)


def split(R: InteractionMatrix, ratios, seed: int) -> SplitBundle:
    """Per-user seeded partition into train/valid/test.

    ratios = (train, valid, test) fractions summing to 1.  Users with
    fewer than 3 interactions keep everything in train; otherwise valid
    and test each get max(1, floor(k * ratio)) items from a per-user
    permutation, so the split of any one user is independent of all
    others for a fixed seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be 3 non-negatives summing to 1, got {ratios}")
    _, r_valid, r_test = ratios
    tr_u: list[int] = []
    tr_i: list[int] = []
    va_u: list[int] = []
    va_i: list[int] = []
    te_u: list[int] = []
    te_i: list[int] = []
    for u in range(R.n_users):
        items = R.user_items(u)
        k = len(items)
        if k == 0:
            continue
        if k < 3 or (r_valid == 0 and r_test == 0):
            tr_u.extend([u] * k)
            tr_i.extend(items)
            continue
        n_test = max(1, math.floor(k * r_test)) if r_test > 0 else 0
        n_valid = max(1, math.floor(k * r_valid)) if r_valid > 0 else 0
        perm = np.random.default_rng([seed, u]).permutation(items)
        te_part = perm[:n_test]
        va_part = perm[n_test : n_test + n_valid]
        tr_part = perm[n_test + n_valid :]
        te_u.extend([u] * len(te_part))
        te_i.extend(te_part)
        va_u.extend([u] * len(va_part))
        va_i.extend(va_part)
        tr_u.extend([u] * len(tr_part))
        tr_i.extend(tr_part)
    shape = (R.n_users, R.n_items)
    return SplitBundle(
        train=InteractionMatrix(_binary_csr(tr_u, tr_i, shape)),
        valid=InteractionMatrix(_binary_csr(va_u, va_i, shape)),
        test=InteractionMatrix(_binary_csr(te_u, te_i, shape)),
        seed=seed,
    )


def auto_cap(counts: np.ndarray, survival: float = 0.3) -> int:
    """Largest per-item cap keeping at least `survival` of the test items."""
    counts = counts[counts > 0]
    if len(counts) == 0:
        raise DataError("test split is empty")
    need = survival * len(counts)
    for c in range(int(counts.max()), 0, -1):
        if np.count_nonzero(counts >= c) >= need:
            return c
    return 1


def build_debiased_test(
    test: InteractionMatrix, cap: int | str = "auto", seed: int = 0
) -> InteractionMatrix:
    """Resample the test split to an equal per-item interaction count.

    Items with at least `cap` test interactions keep exactly `cap` of
    them, sampled uniformly without replacement; the rest are dropped.
    cap="auto" picks the largest value retaining >= 30% of test items.
    """
    m = test.matrix.tocsc()
    counts = np.diff(m.indptr)
    if cap == "auto":
        cap = auto_cap(counts)
    cap = int(cap)
    if cap < 1:
        raise ConfigError(f"cap must be >= 1, got {cap}")
    keep_items = np.flatnonzero(counts >= cap)
    if len(keep_items) == 0:
        raise DataError(f"no item has {cap} test interactions; debiased test empty")
    rng = np.random.default_rng([seed, 0xDEB1A5])
    users: list[int] = []
    items: list[int] = []
    for item in keep_items:
        col_users = m.indices[m.indptr[item] : m.indptr[item + 1]]
        pick = rng.choice(len(col_users), size=cap, replace=False)
        users.extend(col_users[pick])
        items.extend([item] * cap)
    return InteractionMatrix(
        _binary_csr(users, items, (test.n_users, test.n_items))
    )


def partition_items(train: InteractionMatrix, hot_fraction: float) -> ItemGroups:
    """Top ceil(fraction * n) items by train count are hot, rest tail.

    Ties in count break toward the lower item id.
    """
    if not 0.0 < hot_fraction < 1.0:
        raise ConfigError(f"hot_fraction must be in (0, 1), got {hot_fraction}")
    n = train.n_items
    counts = np.asarray(train.matrix.sum(axis=0)).ravel()
    order = np.lexsort((np.arange(n), -counts))
    n_hot = math.ceil(hot_fraction * n)
    hot = np.sort(order[:n_hot])
    tail = np.sort(order[n_hot:])
    return ItemGroups(hot=hot, tail=tail, hot_fraction=hot_fraction, n_items=n)


def longtail_submatrix(R: InteractionMatrix, groups: ItemGroups) -> InteractionMatrix:
    """R with hot-item columns zeroed; shape unchanged."""
    if groups.n_items != R.n_items:
        raise ConfigError(
            f"groups cover {groups.n_items} items, matrix has {R.n_items}"
        )
    keep = sp.diags((~groups.hot_mask).astype(np.float64))
    out = (R.matrix @ keep).tocsr()
    out.eliminate_zeros()
    return InteractionMatrix(out)


def copurchase(R_l: InteractionMatrix) -> SocialMatrix:
    """User-user co-interaction counts over long-tail items, diagonal kept."""
    m = (R_l.matrix @ R_l.matrix.T).tocsr()
    m.eliminate_zeros()
    return SocialMatrix(m)


def social_condition(S: SocialMatrix, Scpl: SocialMatrix, delta: float) -> SocialMatrix:
    """Blend co-interaction structure into the social graph: delta*Scpl + S."""
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta}")
    if S.n_users != Scpl.n_users:
        raise ConfigError(f"dims differ: {S.n_users} vs {Scpl.n_users}")
    m = (delta * Scpl.matrix + S.matrix).tocsr()
    m.eliminate_zeros()
    return SocialMatrix(m)


def social_preference(S: SocialMatrix, R: InteractionMatrix) -> InteractionMatrix:
    """Per-user neighbor interaction counts: (S @ R)_ij = neighbors of i on j."""
    if S.n_users != R.n_users:
        raise ConfigError(f"dims differ: {S.n_users} vs {R.n_users}")
    m = (S.matrix @ R.matrix).tocsr()
    m.eliminate_zeros()
    return InteractionMatrix(m)


def invert_preference(Rs: InteractionMatrix) -> InteractionMatrix:
    """Elementwise reciprocal on nonzeros (zeros stay zero).

    Turns neighbor-popularity counts into weights that favor items few
    neighbors touched.
    """
    m = Rs.matrix.copy()
    if np.any(m.data < 0):
        raise ConfigError("negative preference value; cannot invert")
    m.eliminate_zeros()
    m.data = 1.0 / m.data
    return InteractionMatrix(m)


def item_condition(R: InteractionMatrix, Rs: InteractionMatrix, lam: float) -> InteractionMatrix:
    """Interaction rows re-weighted toward rarity: lam * invert(Rs) + R."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if (R.n_users, R.n_items) != (Rs.n_users, Rs.n_items):
        raise ConfigError("interaction and preference matrices differ in shape")
    inv = invert_preference(Rs)
    m = (lam * inv.matrix + R.matrix).tocsr()
    m.eliminate_zeros()
    return InteractionMatrix(m)
