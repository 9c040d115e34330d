"""End-to-end orchestration shared by the CLI commands and the test rig.

Holds the glue with no math of its own: loading data per config,
materializing/reloading the split manifest, the social-edge holdout used
to early-stop the social model, the two training entry points, joint
scoring, and the list-file format.
"""

from __future__ import annotations

import json
import os

import numpy as np
import scipy.sparse as sp

from .config import ExperimentConfig
from .corpus import (
    InteractionMatrix,
    SocialMatrix,
    SplitBundle,
    build_debiased_test,
    load_interactions,
    load_social,
    partition_items,
    split,
)
from .errors import DataError, IntegrityError
from .evaluation import RankedList, evaluate_lists, topk_lists
from .guidance import joint_inference
from .trainer import Checkpoint, train_model

MANIFEST_NAME = "splits.json"


def load_dataset(cfg: ExperimentConfig) -> tuple[InteractionMatrix, SocialMatrix | None]:
    cfg.require_files()
    ds = cfg.dataset
    R = load_interactions(
        ds["interactions"], n_users=ds["n_users"], n_items=ds["n_items"]
    )
    S = None
    if ds["social"] is not None:
        S = load_social(
            ds["social"], n_users=R.n_users, symmetrize=bool(ds["symmetrize_social"])
        )
    return R, S


def make_bundle(cfg: ExperimentConfig, R: InteractionMatrix) -> SplitBundle:
    """Split + debiased test, all seeds derived from the root seed."""
    bundle = split(R, cfg.ratios, cfg.seed_for("split"))
    debiased = build_debiased_test(
        bundle.test, cap=cfg.debiased_cap, seed=cfg.seed_for("debiased-test")
    )
    return SplitBundle(
        train=bundle.train,
        valid=bundle.valid,
        test=bundle.test,
        seed=bundle.seed,
        debiased_test=debiased,
    )


def _pairs(m: InteractionMatrix) -> list[list[int]]:
    coo = m.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return [[int(coo.row[i]), int(coo.col[i])] for i in order]


def _from_pairs(pairs, shape) -> InteractionMatrix:
    if pairs:
        arr = np.asarray(pairs, dtype=np.int64)
        u, i = arr[:, 0], arr[:, 1]
    else:
        u = i = np.empty(0, dtype=np.int64)
    m = sp.coo_matrix((np.ones(len(u)), (u, i)), shape=shape).tocsr()
    return InteractionMatrix(m)


def manifest_dict(cfg: ExperimentConfig, bundle: SplitBundle) -> dict:
    cap_counts = np.diff(bundle.debiased_test.matrix.tocsc().indptr)
    resolved_cap = int(cap_counts.max()) if bundle.debiased_test.nnz else 0
    return {
        "seed": bundle.seed,
        "ratios": list(cfg.ratios),
        "n_users": bundle.train.n_users,
        "n_items": bundle.train.n_items,
        "debiased_cap": resolved_cap,
        "train": _pairs(bundle.train),
        "valid": _pairs(bundle.valid),
        "test": _pairs(bundle.test),
        "debiased_test": _pairs(bundle.debiased_test),
    }


def write_manifest(cfg: ExperimentConfig, bundle: SplitBundle) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_dict(cfg, bundle), fh, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path) -> SplitBundle:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        shape = (int(d["n_users"]), int(d["n_items"]))
        return SplitBundle(
            train=_from_pairs(d["train"], shape),
            valid=_from_pairs(d["valid"], shape),
            test=_from_pairs(d["test"], shape),
            seed=int(d["seed"]),
            debiased_test=_from_pairs(d["debiased_test"], shape),
        )
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        raise IntegrityError(f"bad split manifest {path!r}: {err}") from err


def ensure_bundle(cfg: ExperimentConfig, R: InteractionMatrix) -> SplitBundle:
    """Reuse the persisted manifest when present, else split afresh."""
    path = os.path.join(cfg.output_dir, MANIFEST_NAME)
    if os.path.exists(path):
        bundle = load_manifest(path)
        if (bundle.train.n_users, bundle.train.n_items) != (R.n_users, R.n_items):
            raise IntegrityError(
                f"manifest {path!r} was built for "
                f"{bundle.train.n_users}x{bundle.train.n_items}, data is "
                f"{R.n_users}x{R.n_items}"
            )
        return bundle
    return make_bundle(cfg, R)


def social_holdout(
    S: SocialMatrix, fraction: float, seed: int
) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """Hold out a per-user fraction of neighbor entries for validation.

    Returns (train_rows, held_rows, rank_mask); the mask is the train
    rows plus the diagonal, since a user must never rank itself.
    """
    m = S.matrix
    keep_rows = []
    held_rows = []
    for u in range(S.n_users):
        neigh = m.indices[m.indptr[u] : m.indptr[u + 1]]
        if fraction <= 0.0 or len(neigh) < 2:
            keep_rows.append(neigh)
            held_rows.append(np.empty(0, dtype=neigh.dtype))
            continue
        n_held = max(1, int(np.floor(len(neigh) * fraction)))
        rng = np.random.default_rng([seed, u])
        held = rng.choice(neigh, size=n_held, replace=False)
        keep_rows.append(np.setdiff1d(neigh, held))
        held_rows.append(np.sort(held))

    def rows_to_csr(rows):
        indptr = np.zeros(S.n_users + 1, dtype=np.int64)
        for u, r in enumerate(rows):
            indptr[u + 1] = indptr[u] + len(r)
        idx = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        return sp.csr_matrix(
            (np.ones(len(idx)), idx, indptr), shape=(S.n_users, S.n_users)
        )

    train = rows_to_csr(keep_rows)
    held = rows_to_csr(held_rows)
    mask = (train + sp.identity(S.n_users, format="csr")).tocsr()
    return train, held, mask


def train_item_model(
    cfg: ExperimentConfig,
    bundle: SplitBundle,
    init=None,
    start_epoch: int = 1,
    best_metric_init: float = -np.inf,
    history=None,
    log=None,
) -> Checkpoint:
    return train_model(
        "CGD",
        bundle.train.matrix,
        cfg.train_config("cgd"),
        cfg.schedule("cgd"),
        hidden_dims=cfg.hidden_dims("cgd"),
        time_embed_dim=cfg.time_embed_dim("cgd"),
        valid_target=bundle.valid.matrix,
        valid_mask=bundle.train.matrix,
        init=init,
        start_epoch=start_epoch,
        best_metric_init=best_metric_init,
        history=history,
        log=log,
    )


def train_social_model(
    cfg: ExperimentConfig,
    S: SocialMatrix,
    init=None,
    start_epoch: int = 1,
    best_metric_init: float = -np.inf,
    history=None,
    log=None,
) -> Checkpoint:
    frac = cfg.csd_valid_fraction
    if frac > 0:
        train_rows, held, mask = social_holdout(
            S, frac, cfg.seed_for("csd-holdout")
        )
        if held.nnz == 0:
            train_rows, held, mask = S.matrix, None, None
    else:
        train_rows, held, mask = S.matrix, None, None
    return train_model(
        "CSD",
        train_rows,
        cfg.train_config("csd"),
        cfg.schedule("csd"),
        hidden_dims=cfg.hidden_dims("csd"),
        time_embed_dim=cfg.time_embed_dim("csd"),
        valid_target=held,
        valid_mask=mask,
        init=init,
        start_epoch=start_epoch,
        best_metric_init=best_metric_init,
        history=history,
        log=log,
    )


def joint_scores(
    cfg: ExperimentConfig,
    ckpt_social: Checkpoint | None,
    ckpt_item: Checkpoint,
    S: SocialMatrix | None,
    bundle: SplitBundle,
) -> np.ndarray:
    g = cfg.guidance()
    seed = cfg.seed_for("inference")
    groups = partition_items(bundle.train, cfg.hot_fraction)
    return joint_inference(ckpt_social, ckpt_item, S, bundle.train, groups, g, seed)


def eval_report(cfg: ExperimentConfig, lists, bundle: SplitBundle):
    target = bundle.debiased_test if cfg.eval_split == "debiased" else bundle.test
    groups = partition_items(bundle.train, cfg.hot_fraction)
    return evaluate_lists(
        lists,
        target,
        bundle.train,
        groups,
        cfg.eval_ks,
        config_echo=cfg.raw,
        per_user_recall=cfg.recall_per_user,
    )


def score_lists(cfg: ExperimentConfig, scores: np.ndarray, bundle: SplitBundle, top_k: int):
    return topk_lists(scores, top_k, mask=bundle.train)


def write_lists(lists, path) -> None:
    """`user<TAB>item<TAB>score` lines, each user's block in rank order."""
    with open(path, "w", encoding="utf-8") as fh:
        for rl in lists:
            for item, score in zip(rl.items, rl.scores):
                fh.write(f"{int(rl.user)}\t{int(item)}\t{float(score)!r}\n")


def read_lists(path) -> list[RankedList]:
    by_user: dict[int, tuple[list[int], list[float]]] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot read lists file {path!r}: {err}") from err
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                u, item, score = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as err:
                raise DataError(f"{path}:{lineno}: {err}") from err
            by_user.setdefault(u, ([], []))
            by_user[u][0].append(item)
            by_user[u][1].append(score)
    return [
        RankedList(user=u, items=np.asarray(items), scores=np.asarray(scores))
        for u, (items, scores) in sorted(by_user.items())
    ]
