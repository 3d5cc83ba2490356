"""Episode sampling, κ-NN classification, and pooled-accuracy evaluation.

An episode is one open-set trial: n classes drawn from an evaluation subset,
a support set (k video instances per class, or one label embedding per class
for the cross-modal task), and up to m query instances per class. Queries
are classified by κ-NN over unit embeddings with κ = k, and accuracy is
pooled across episodes (total correct / total queries).

Evaluation subsets: All (every test class), HoV (held-out verb only), HoN
(held-out noun only); classes held out on both sides appear in All only.
Per-episode generators are derived from (seed, subset index, episode index),
so episodes are independent of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Instance
from .errors import ConfigError, MethodError, SamplingError
from .model import METHOD_JE, METHOD_VE, METHOD_WE, EmbeddingModel
from .splits import CATEGORY_HON, CATEGORY_HOV, SplitResult

TASK_FSG = "FSG"
TASK_CMFSG = "CM-FSG"
TASKS = (TASK_FSG, TASK_CMFSG)

SUPPORT_VIDEO = "video"
SUPPORT_LABEL_RAW = "label_raw"
SUPPORT_LABEL_PROJECTED = "label_projected"

_SUBSET_ORDER = ("All", "HoV", "HoN")
_RESAMPLE_LIMIT = 100


@dataclass
class Episode:
    """support items are Instances (FSG) or label-embedding vectors (CM-FSG),
    each tagged with its class; queries are always (Instance, true class)."""

    task: str
    classes: list[int]
    support: list[tuple[object, int]]
    queries: list[tuple[Instance, int]]


def sample_training_batch(
    dataset: Dataset,
    train_classes: list[int],
    rng: np.random.Generator,
    n: int = 12,
    k_max: int = 8,
    min_total: int = 36,
) -> dict[int, list[Instance]]:
    """n distinct classes with up to k_max instances each, at least min_total
    instances in total; whole draws failing the total are resampled."""
    pool = sorted(train_classes)
    if len(pool) < n:
        raise ConfigError(f"batch sampling: need {n} classes, have {len(pool)}")
    for _ in range(_RESAMPLE_LIMIT):
        picked = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
        batch: dict[int, list[Instance]] = {}
        total = 0
        for cid in picked:
            avail = dataset.instances_by_class[cid]
            take = min(k_max, len(avail))
            idx = rng.choice(len(avail), size=take, replace=False)
            batch[cid] = [avail[i] for i in idx]
            total += take
        if total >= min_total:
            return batch
    raise SamplingError(
        f"batch sampling: {_RESAMPLE_LIMIT} draws below {min_total} total instances"
    )


def eligible_episode_classes(
    dataset: Dataset, classes: set[int], task: str, k: int
) -> list[int]:
    """Classes with enough instances for one episode: k supports plus at
    least one query (FSG), or at least one query (CM-FSG)."""
    need = k + 1 if task == TASK_FSG else 1
    return [
        cid
        for cid in sorted(classes)
        if len(dataset.instances_by_class.get(cid, [])) >= need
    ]


def sample_episode(
    dataset: Dataset,
    eval_classes: set[int],
    task: str,
    rng: np.random.Generator,
    n: int,
    k: int,
    m: int,
) -> Episode:
    """Draw one episode. FSG supports and queries are disjoint instances of
    the same class; the cross-modal task supports each class with its single
    label embedding (k must be 1)."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    if n < 1 or k < 1 or m < 1:
        raise ConfigError("episode: n, k, m must be positive")
    if task == TASK_CMFSG and k != 1:
        raise MethodError("cross-modal episodes provide one label per class; k must be 1")
    eligible = eligible_episode_classes(dataset, eval_classes, task, k)
    if len(eligible) < n:
        raise SamplingError(
            f"episode: need {n} eligible classes, have {len(eligible)}"
        )
    picked = [eligible[i] for i in rng.choice(len(eligible), size=n, replace=False)]
    support: list[tuple[object, int]] = []
    queries: list[tuple[Instance, int]] = []
    for cid in picked:
        avail = dataset.instances_by_class[cid]
        if task == TASK_FSG:
            n_query = min(m, len(avail) - k)
            idx = rng.choice(len(avail), size=k + n_query, replace=False)
            for i in idx[:k]:
                support.append((avail[i], cid))
            for i in idx[k:]:
                queries.append((avail[i], cid))
        else:
            support.append((dataset.label_embeddings[cid], cid))
            n_query = min(m, len(avail))
            idx = rng.choice(len(avail), size=n_query, replace=False)
            for i in idx:
                queries.append((avail[i], cid))
    return Episode(task=task, classes=picked, support=support, queries=queries)


def knn_classify(
    support_embeddings: np.ndarray,
    support_classes: np.ndarray,
    query_embedding: np.ndarray,
    kappa: int,
) -> int:
    """Predict the majority class of the kappa most similar support items.

    Deterministic and order-free: neighbor ties broken by smaller class_id,
    vote ties by larger summed similarity then smaller class_id.
    """
    support_embeddings = np.asarray(support_embeddings, dtype=np.float64)
    support_classes = np.asarray(support_classes, dtype=np.int64)
    if support_embeddings.ndim != 2 or support_embeddings.shape[0] == 0:
        raise ConfigError("knn: support must be a nonempty 2-D array")
    if not (1 <= kappa <= support_embeddings.shape[0]):
        raise ConfigError(
            f"knn: kappa {kappa} out of range 1..{support_embeddings.shape[0]}"
        )
    sims = support_embeddings @ np.asarray(query_embedding, dtype=np.float64)
    order = np.lexsort((support_classes, -sims))
    top = order[:kappa]
    votes: dict[int, int] = {}
    sum_sim: dict[int, float] = {}
    for i in top:
        cid = int(support_classes[i])
        votes[cid] = votes.get(cid, 0) + 1
        sum_sim[cid] = sum_sim.get(cid, 0.0) + float(sims[i])
    return max(votes, key=lambda cid: (votes[cid], sum_sim[cid], -cid))


@dataclass
class SubsetResult:
    episodes: int = 0
    queries: int = 0
    correct: int = 0
    skipped: bool = False

    @property
    def accuracy(self) -> float:
        if self.queries == 0:
            raise ConfigError("accuracy undefined without queries")
        return self.correct / self.queries


@dataclass
class EvalReport:
    task: str
    n: int
    k: int
    m: int
    n_episodes: int
    seed: int
    support_mode: str
    subsets: dict[str, SubsetResult] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def support_mode_for(model: EmbeddingModel, task: str) -> str:
    """How support items are embedded: video encoder for FSG; for the
    cross-modal task, raw label embeddings (WE trains into that space) or
    the label projector (JE). VE has no label path at all."""
    if task == TASK_FSG:
        return SUPPORT_VIDEO
    if task == TASK_CMFSG:
        if model.method == METHOD_WE:
            return SUPPORT_LABEL_RAW
        if model.method == METHOD_JE:
            return SUPPORT_LABEL_PROJECTED
        if model.method == METHOD_VE:
            raise MethodError("VE has no label-embedding path; cannot run CM-FSG")
    raise ConfigError(f"unknown task {task!r}")


def _episode_subsets(split: SplitResult) -> list[tuple[str, set[int]]]:
    return [
        ("All", set(split.test)),
        ("HoV", split.classes_in_category(split.test, CATEGORY_HOV)),
        ("HoN", split.classes_in_category(split.test, CATEGORY_HON)),
    ]


def evaluate(
    model: EmbeddingModel,
    dataset: Dataset,
    split: SplitResult,
    task: str,
    n: int,
    k: int,
    m: int,
    n_episodes: int,
    seed: int,
) -> EvalReport:
    """Pooled κ-NN accuracy (κ = k) over n_episodes per subset.

    Episode classes and queries are drawn from the subset alone; subsets with
    too few eligible classes are skipped with a warning instead of failing
    the whole run. Deterministic in seed.
    """
    support_mode = support_mode_for(model, task)
    if n_episodes < 1:
        raise ConfigError("evaluate: n_episodes must be positive")
    report = EvalReport(
        task=task,
        n=n,
        k=k,
        m=m,
        n_episodes=n_episodes,
        seed=seed,
        support_mode=support_mode,
    )
    for subset_idx, (name, classes) in enumerate(_episode_subsets(split)):
        eligible = eligible_episode_classes(dataset, classes, task, k)
        if len(eligible) < n:
            report.subsets[name] = SubsetResult(skipped=True)
            report.warnings.append(
                f"subset {name}: {len(eligible)} eligible classes < n={n}; skipped"
            )
            continue
        result = SubsetResult()
        for episode_idx in range(n_episodes):
            rng = np.random.default_rng([seed, subset_idx, episode_idx])
            episode = sample_episode(dataset, classes, task, rng, n, k, m)
            sup_emb, sup_ids = _embed_support(model, dataset, episode, support_mode)
            query_frames = np.stack([inst.features for inst, _ in episode.queries])
            query_emb, _ = model.embed_video_batch(query_frames)
            result.episodes += 1
            for qi, (_, true_cid) in enumerate(episode.queries):
                pred = knn_classify(sup_emb, sup_ids, query_emb[qi], kappa=k)
                result.queries += 1
                result.correct += int(pred == true_cid)
        report.subsets[name] = result
    return report


def _embed_support(
    model: EmbeddingModel, dataset: Dataset, episode: Episode, support_mode: str
) -> tuple[np.ndarray, np.ndarray]:
    ids = np.array([cid for _, cid in episode.support], dtype=np.int64)
    if support_mode == SUPPORT_VIDEO:
        frames = np.stack([item.features for item, _ in episode.support])
        emb, _ = model.embed_video_batch(frames)
        return emb, ids
    vectors = np.stack([np.asarray(item, dtype=np.float64) for item, _ in episode.support])
    if support_mode == SUPPORT_LABEL_RAW:
        return vectors, ids
    emb, _ = model.embed_label_batch(vectors)
    return emb, ids


_EVAL_HEADER = "task,subset,n,k,m,episodes,queries,correct,accuracy,seed"


def write_eval_report(path: str, report: EvalReport) -> None:
    """One CSV row per non-skipped subset; skipped subsets appear only in
    the warnings, which are written as comment lines."""
    lines = [_EVAL_HEADER]
    for warning in report.warnings:
        lines.append(f"# {warning}")
    for name in _SUBSET_ORDER:
        res = report.subsets.get(name)
        if res is None or res.skipped:
            continue
        lines.append(
            f"{report.task},{name},{report.n},{report.k},{report.m},"
            f"{res.episodes},{res.queries},{res.correct},{res.accuracy!r},{report.seed}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
