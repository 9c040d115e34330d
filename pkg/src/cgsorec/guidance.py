"""Condition-guided reverse diffusion and the joint two-model inference.

Layout of a run: the social model denoises each user's neighbor row
under a co-interaction condition, the denoised rows are re-binarized
(degree-preserving), the rebuilt graph produces an inverted-popularity
item condition, and the item model denoises interaction rows under it.
Guidance mixes the model mean toward the mean evaluated at the clean
condition vector at every step; a second, unconditional chain run on the
corrupted condition vector is blended into the final output.

Determinism: every noise draw comes from a stream keyed by
(seed XOR user_id, stage), so results are independent of batching and
of which chains are skipped; rows are processed in fixed 512-row chunks
so BLAS sees identical shapes regardless of worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import (
    InteractionMatrix,
    ItemGroups,
    SocialMatrix,
    copurchase,
    item_condition,
    longtail_submatrix,
    social_condition,
    social_preference,
)
from .denoiser import DenoiserParams, predict_x0
from .errors import ConfigError, ShapeError
from .schedule import NoiseSchedule, model_mean, posterior_coeffs, q_sample
from .trainer import Checkpoint

# Independent noise streams per user; values are arbitrary but frozen,
# since checkpoints and reports produced under them must replay exactly.
STAGE_SOCIAL = 0
STAGE_SOCIAL_COND = 1
STAGE_ITEM = 2
STAGE_ITEM_COND = 3
STAGE_VALID = 4

CHUNK = 512


@dataclass(frozen=True)
class GuidanceConfig:
    """Inference-time knobs; training never sees any of these.

    eta/gamma steer the per-step mean of the social/item chains toward
    the condition vector; w_s/w_r blend in the chain run on the corrupted
    condition; delta scales the co-interaction graph inside the social
    condition; lam scales the inverted social preference inside the item
    condition.  T_inf=None runs the full schedule.
    """

    eta: float = 0.0
    gamma: float = 0.0
    w_s: float = 0.0
    w_r: float = 0.0
    delta: float = 0.0
    lam: float = 0.0
    T_inf: int | None = None
    stochastic: bool = False
    social_keep: int | None = None

    def __post_init__(self):
        for name in ("eta", "gamma", "w_s", "w_r"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.delta < 0 or self.lam < 0:
            raise ConfigError("delta and lam must be >= 0")
        if self.T_inf is not None and self.T_inf < 1:
            raise ConfigError(f"T_inf must be >= 1, got {self.T_inf}")
        if self.social_keep is not None and self.social_keep < 0:
            raise ConfigError(f"social_keep must be >= 0, got {self.social_keep}")


def resolve_T_inf(cfg: GuidanceConfig, sched: NoiseSchedule) -> int:
    if cfg.T_inf is None:
        return sched.T
    if cfg.T_inf > sched.T:
        raise ConfigError(f"T_inf={cfg.T_inf} exceeds schedule length {sched.T}")
    return cfg.T_inf


def n_workers() -> int:
    """Worker count for chunk fan-out, capped by CGSOREC_THREADS (default 1)."""
    raw = os.environ.get("CGSOREC_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"CGSOREC_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def guided_mean(
    params: DenoiserParams,
    x_t: np.ndarray,
    cond: np.ndarray | None,
    t: int,
    mix: float,
    sched: NoiseSchedule,
) -> np.ndarray:
    """One reverse-step mean, steered toward the clean condition vector.

    Returns (1-mix) * mean(x_t) + mix * mean(cond), where each branch is
    the posterior mean with the denoiser's clean-vector prediction
    plugged in.  The condition branch is evaluated at the clean cond at
    every step.  Works on single vectors or (B, width) batches.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    mean = model_mean(x_t, predict_x0(params, x_t, t), t, sched)
    if cond is None or mix == 0.0:
        return mean
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape != x_t.shape:
        raise ShapeError(f"cond shape {cond.shape} != x shape {x_t.shape}")
    cond_mean = model_mean(cond, predict_x0(params, cond, t), t, sched)
    return (1.0 - mix) * mean + mix * cond_mean


def reverse_chain(
    params: DenoiserParams,
    x_start: np.ndarray,
    cond: np.ndarray | None,
    mix: float,
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Run the reverse process from a vector corrupted at T_inf down to 0.

    Deterministic (mean-only) unless cfg.stochastic, which adds the
    posterior-variance noise at every step above 1 using `rng`.
    """
    T_inf = resolve_T_inf(cfg, sched)
    if cfg.stochastic and rng is None:
        raise ConfigError("stochastic chain needs an rng")
    x = np.asarray(x_start, dtype=np.float64)
    for t in range(T_inf, 0, -1):
        x = guided_mean(params, x, cond, t, mix, sched)
        if cfg.stochastic and t > 1:
            _, _, sigma2 = posterior_coeffs(sched, t)
            x = x + np.sqrt(sigma2) * rng.standard_normal(x.shape)
    return x


def _user_eps(seed: int, stage: int, users: np.ndarray, width: int) -> np.ndarray:
    """Corruption noise for a block of users, one stream per (user, stage)."""
    eps = np.empty((len(users), width), dtype=np.float64)
    for j, u in enumerate(users):
        eps[j] = np.random.default_rng([seed ^ int(u), stage]).standard_normal(width)
    return eps


def _chunk_ranges(n_rows: int):
    return [(s, min(s + CHUNK, n_rows)) for s in range(0, n_rows, CHUNK)]


def _run_chunks(fn, n_rows: int) -> np.ndarray:
    """Apply fn(start, stop) -> block over fixed chunks; assemble in order."""
    ranges = _chunk_ranges(n_rows)
    workers = n_workers()
    if workers == 1 or len(ranges) == 1:
        blocks = [fn(s, e) for s, e in ranges]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda r: fn(*r), ranges))
    return np.concatenate(blocks, axis=0)


def _dense_rows(matrix, start: int, stop: int) -> np.ndarray:
    if sp.issparse(matrix):
        return np.asarray(matrix[start:stop].todense(), dtype=np.float64)
    return np.asarray(matrix[start:stop], dtype=np.float64)


def _chain_rows(
    params: DenoiserParams,
    sched: NoiseSchedule,
    rows,
    cond,
    mix: float,
    cfg: GuidanceConfig,
    seed: int,
    stage: int,
) -> np.ndarray:
    """Chunked reverse chains over clean `rows` (corrupted here), with an
    optional clean condition matrix guiding every step."""
    T_inf = resolve_T_inf(cfg, sched)
    n_rows = rows.shape[0]
    width = rows.shape[1]

    def job(start: int, stop: int) -> np.ndarray:
        users = np.arange(start, stop)
        x0 = _dense_rows(rows, start, stop)
        eps = _user_eps(seed, stage, users, width)
        x = q_sample(x0, T_inf, eps, sched) if T_inf > 0 else x0
        c = _dense_rows(cond, start, stop) if cond is not None else None
        rng = (
            np.random.default_rng([seed, stage, start, 0xD1CE])
            if cfg.stochastic
            else None
        )
        for t in range(T_inf, 0, -1):
            x = guided_mean(params, x, c, t, mix, sched)
            if cfg.stochastic and t > 1:
                _, _, sigma2 = posterior_coeffs(sched, t)
                x = x + np.sqrt(sigma2) * rng.standard_normal(x.shape)
        return x

    return _run_chunks(job, n_rows)


def unconditional_scores(
    params: DenoiserParams,
    sched: NoiseSchedule,
    rows,
    T_inf: int | None = None,
    seed: int = 0,
    stage: int = STAGE_ITEM,
) -> np.ndarray:
    """Plain diffusion denoising of every row; the no-guidance baseline."""
    cfg = GuidanceConfig(T_inf=T_inf)
    return _chain_rows(params, sched, rows, None, 0.0, cfg, seed, stage)


def denoise_social(
    ckpt: Checkpoint,
    s_i: np.ndarray,
    s_prime_i: np.ndarray,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Denoise one user's neighbor row under its condition row.

    Draws corruption noise for s_i first, then (only if w_s > 0) for
    s_prime_i, runs the guided chain on the former and an unconditional
    chain on the latter, and blends them with w_s.
    """
    s_i = np.asarray(s_i, dtype=np.float64)
    s_prime_i = np.asarray(s_prime_i, dtype=np.float64)
    if s_i.shape != s_prime_i.shape:
        raise ShapeError(f"row shapes differ: {s_i.shape} vs {s_prime_i.shape}")
    sched = ckpt.sched
    T_inf = resolve_T_inf(cfg, sched)
    x_a = q_sample(s_i, T_inf, rng.standard_normal(s_i.shape), sched)
    out_a = reverse_chain(ckpt.params, x_a, s_prime_i, cfg.eta, sched, cfg, rng)
    if cfg.w_s == 0.0:
        return out_a
    x_b = q_sample(s_prime_i, T_inf, rng.standard_normal(s_i.shape), sched)
    out_b = reverse_chain(ckpt.params, x_b, None, 0.0, sched, cfg, rng)
    return (1.0 - cfg.w_s) * out_a + cfg.w_s * out_b


def recommend(
    ckpt: Checkpoint,
    x_i: np.ndarray,
    x_prime_i: np.ndarray,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Score all items for one user: the item-side mirror of denoise_social."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_prime_i = np.asarray(x_prime_i, dtype=np.float64)
    if x_i.shape != x_prime_i.shape:
        raise ShapeError(f"row shapes differ: {x_i.shape} vs {x_prime_i.shape}")
    sched = ckpt.sched
    T_inf = resolve_T_inf(cfg, sched)
    x_a = q_sample(x_i, T_inf, rng.standard_normal(x_i.shape), sched)
    out_a = reverse_chain(ckpt.params, x_a, x_prime_i, cfg.gamma, sched, cfg, rng)
    if cfg.w_r == 0.0:
        return out_a
    x_b = q_sample(x_prime_i, T_inf, rng.standard_normal(x_i.shape), sched)
    out_b = reverse_chain(ckpt.params, x_b, None, 0.0, sched, cfg, rng)
    return (1.0 - cfg.w_r) * out_a + cfg.w_r * out_b


def binarize_social(s_bar: np.ndarray, keep: int, self_id: int) -> np.ndarray:
    """Ids of the `keep` highest-scoring users, self excluded.

    Ties break toward the lower user id; returned ascending.
    """
    if keep < 0:
        raise ConfigError(f"keep must be >= 0, got {keep}")
    m = len(s_bar)
    if keep == 0:
        return np.empty(0, dtype=np.int64)
    scores = np.asarray(s_bar, dtype=np.float64).copy()
    scores[self_id] = -np.inf
    order = np.lexsort((np.arange(m), -scores))
    return np.sort(order[: min(keep, m - 1)])


def _rebinarized_graph(
    S: SocialMatrix, s_bar: np.ndarray, keep_override: int | None
) -> SocialMatrix:
    """Turn denoised score rows back into a 0/1 graph, degree-preserving."""
    degrees = np.diff(S.matrix.indptr)
    indices: list[np.ndarray] = []
    indptr = np.zeros(S.n_users + 1, dtype=np.int64)
    for u in range(S.n_users):
        keep = int(degrees[u]) if keep_override is None else keep_override
        neigh = binarize_social(s_bar[u], keep, u)
        indices.append(neigh)
        indptr[u + 1] = indptr[u] + len(neigh)
    idx = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
    data = np.ones(len(idx), dtype=np.float64)
    return SocialMatrix(
        sp.csr_matrix((data, idx, indptr), shape=(S.n_users, S.n_users))
    )


def social_phase(
    ckpt: Checkpoint,
    S: SocialMatrix,
    S_prime: SocialMatrix,
    cfg: GuidanceConfig,
    seed: int,
) -> np.ndarray:
    """Denoised social score rows for all users (blended chains A/B)."""
    out_a = _chain_rows(
        ckpt.params, ckpt.sched, S.matrix, S_prime.matrix if cfg.eta > 0 else None,
        cfg.eta, cfg, seed, STAGE_SOCIAL,
    )
    if cfg.w_s == 0.0:
        return out_a
    out_b = _chain_rows(
        ckpt.params, ckpt.sched, S_prime.matrix, None, 0.0, cfg, seed,
        STAGE_SOCIAL_COND,
    )
    return (1.0 - cfg.w_s) * out_a + cfg.w_s * out_b


def item_phase(
    ckpt: Checkpoint,
    R: InteractionMatrix,
    R_prime: InteractionMatrix,
    cfg: GuidanceConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Both item-side chains, unmixed, so callers can sweep w_r for free."""
    out_a = _chain_rows(
        ckpt.params, ckpt.sched, R.matrix, R_prime.matrix if cfg.gamma > 0 else None,
        cfg.gamma, cfg, seed, STAGE_ITEM,
    )
    out_b = None
    if cfg.w_r > 0.0:
        out_b = _chain_rows(
            ckpt.params, ckpt.sched, R_prime.matrix, None, 0.0, cfg, seed,
            STAGE_ITEM_COND,
        )
    return out_a, out_b


def build_social_condition(
    S: SocialMatrix, R: InteractionMatrix, groups: ItemGroups, delta: float
) -> SocialMatrix:
    """Condition graph: co-interactions over long-tail items blended into S."""
    if delta == 0.0:
        return S
    scpl = copurchase(longtail_submatrix(R, groups))
    return social_condition(S, scpl, delta)


def build_item_condition(
    S_bar: SocialMatrix, R: InteractionMatrix, lam: float
) -> InteractionMatrix:
    """Condition rows: inverted neighbor-popularity counts blended into R."""
    if lam == 0.0:
        return R
    r_social = social_preference(S_bar, R)
    return item_condition(R, r_social, lam)


def joint_chains(
    ckpt_social: Checkpoint | None,
    ckpt_item: Checkpoint,
    S: SocialMatrix | None,
    R: InteractionMatrix,
    groups: ItemGroups,
    cfg: GuidanceConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Everything up to the final w_r blend: runs the social side, builds
    the item condition, and returns the two item chains unmixed.

    Lets a sweep over w_r reuse one pair of chains instead of rerunning
    the whole pipeline per value.
    """
    if S is not None and S.n_users != R.n_users:
        raise ConfigError(f"social users {S.n_users} != interaction users {R.n_users}")
    if cfg.lam > 0:
        if ckpt_social is None or S is None:
            raise ConfigError(
                "lam > 0 builds the item condition from the denoised social "
                "graph; a social model checkpoint and a social matrix are required"
            )
        s_prime = build_social_condition(S, R, groups, cfg.delta)
        s_bar = social_phase(ckpt_social, S, s_prime, cfg, seed)
        S_bar = _rebinarized_graph(S, s_bar, cfg.social_keep)
        r_prime = build_item_condition(S_bar, R, cfg.lam)
    else:
        # lam = 0 zeroes the social term of the item condition, so the
        # denoised graph cannot influence the output; skip the social
        # chains entirely (bitwise-identical result, large time save).
        r_prime = R
    return item_phase(ckpt_item, R, r_prime, cfg, seed)


def joint_inference(
    ckpt_social: Checkpoint | None,
    ckpt_item: Checkpoint,
    S: SocialMatrix | None,
    R: InteractionMatrix,
    groups: ItemGroups,
    cfg: GuidanceConfig,
    seed: int,
) -> np.ndarray:
    """Full pipeline: social denoising -> graph rebuild -> guided item scores.

    Returns an (n_users, n_items) dense score matrix.  With every
    coefficient zero this reduces bitwise to unconditional_scores on R.
    The social side (checkpoint and graph) is only consulted when
    lam > 0; it may be None otherwise.
    """
    out_a, out_b = joint_chains(ckpt_social, ckpt_item, S, R, groups, cfg, seed)
    if out_b is None:
        return out_a
    return (1.0 - cfg.w_r) * out_a + cfg.w_r * out_b
