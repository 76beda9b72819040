"""Shape-based clustering of road segments through triplet-trained image embeddings."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .neuralnet import AdamState, Sequential, TrainConfig, build_embedder, optimizer_step
from .neuralnet.losses import batch_triplet_loss
from .raster import grid_images
from .seeding import named_rng
from .series import DayGrid

log = logging.getLogger(__name__)

EMBEDDING_TOL = 1e-6


class TrainingDiverged(RuntimeError):
    pass


class TripletIndex(NamedTuple):
    """Anchor and positive are two days of one segment; the negative comes from another."""

    anchor_segment: int
    anchor_day: int
    positive_day: int
    negative_segment: int
    negative_day: int


def _check_grids(day_counts):
    if len(day_counts) < 2:
        raise ValueError("triplets need at least two segments")
    if min(day_counts) < 2:
        raise ValueError("every segment needs at least two usable days")


def sample_triplet_array(day_counts, n: int, rng: np.random.Generator, batch_size: int = 12,
                         segments_per_batch: int = 6, images_per_segment: int = 9) -> np.ndarray:
    """(n, 5) integer array of triplets, drawn batch by batch.

    Each batch first picks ``segments_per_batch`` segments and up to
    ``images_per_segment`` distinct days from each, then draws ``batch_size``
    triplets from that pool.
    """
    day_counts = np.asarray(day_counts, dtype=np.int64)
    _check_grids(day_counts)
    if n < 1:
        raise ValueError("n must be >= 1")
    n_seg = len(day_counts)
    s_b = min(segments_per_batch, n_seg)
    out = np.empty((n, 5), dtype=np.int64)
    done = 0
    while done < n:
        m = min(batch_size, n - done)
        segs = rng.permutation(n_seg)[:s_b]
        pools = [rng.permutation(day_counts[s])[:images_per_segment] for s in segs]
        sizes = np.array([len(p) for p in pools])
        a_pos = rng.integers(s_b, size=m)
        n_pos = (a_pos + 1 + rng.integers(s_b - 1, size=m)) % s_b
        i_idx = (rng.random(m) * sizes[a_pos]).astype(np.int64)
        j_idx = (i_idx + 1 + (rng.random(m) * (sizes[a_pos] - 1)).astype(np.int64)) % sizes[a_pos]
        k_idx = (rng.random(m) * sizes[n_pos]).astype(np.int64)
        for t in range(m):
            a, b = a_pos[t], n_pos[t]
            out[done + t] = (segs[a], pools[a][i_idx[t]], pools[a][j_idx[t]],
                             segs[b], pools[b][k_idx[t]])
        done += m
    return out


def generate_triplets(grids: list[DayGrid], n: int, rng: np.random.Generator,
                      **batching) -> list[TripletIndex]:
    counts = [g.n_days for g in grids]
    return [TripletIndex(*map(int, row)) for row in sample_triplet_array(counts, n, rng, **batching)]


@dataclass
class EmbedderHistory:
    initial_loss: float
    epoch_loss: list[float] = field(default_factory=list)


def _embed_images(model: Sequential, images: np.ndarray, chunk: int = 128) -> np.ndarray:
    out = []
    for start in range(0, len(images), chunk):
        x = images[start:start + chunk].astype(np.float64)[..., None] / 255.0
        out.append(model.forward(x))
    return np.concatenate(out, axis=0)


def _triplet_batch_loss(model, images, triplets, margin, train: bool):
    keys = np.concatenate([triplets[:, [0, 1]], triplets[:, [0, 2]], triplets[:, [3, 4]]])
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    x = np.stack([images[s][d] for s, d in uniq]).astype(np.float64)[..., None] / 255.0
    m = len(triplets)
    idx = np.column_stack([inverse[:m], inverse[m:2 * m], inverse[2 * m:]])
    emb = model.forward(x)
    loss, grad = batch_triplet_loss(emb, idx, margin)
    if train:
        model.backward(grad)
    return loss


def train_embedder(images: list[np.ndarray], config: TrainConfig, batches_per_epoch: int = 50,
                   segments_per_batch: int = 6, images_per_segment: int = 9,
                   model: Sequential | None = None, embedding_dim: int = 32,
                   rng: np.random.Generator | None = None) -> tuple[Sequential, EmbedderHistory]:
    """Minimise the mean hinged triplet loss over freshly sampled triplets.

    ``images[r]`` is a (days, R, R) uint8 stack for segment r. Triplets and the
    initial weights come from ``rng`` (default: seeded from ``config.seed``).
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    resolution = images[0].shape[-1]
    if model is None:
        model = build_embedder(resolution, embedding_dim).init_params(rng)
    counts = [len(im) for im in images]
    batching = dict(batch_size=config.batch_size, segments_per_batch=segments_per_batch,
                    images_per_segment=images_per_segment)
    probe = sample_triplet_array(counts, 10 * config.batch_size, rng, **batching)
    history = EmbedderHistory(_triplet_batch_loss(model, images, probe, config.margin, False))
    state = AdamState()
    params = model.params()
    strikes = 0
    for epoch in range(config.epochs):
        losses = []
        for _ in range(batches_per_epoch):
            triplets = sample_triplet_array(counts, config.batch_size, rng, **batching)
            losses.append(_triplet_batch_loss(model, images, triplets, config.margin, True))
            optimizer_step(params, model.grads(), state, config)
        mean = float(np.mean(losses))
        history.epoch_loss.append(mean)
        log.info("embedder epoch %d loss %.5f", epoch + 1, mean)
        if history.initial_loss > 0 and mean > 10 * history.initial_loss:
            strikes += 1
            if strikes >= 3:
                raise TrainingDiverged(f"triplet loss {mean:.4g} exceeded 10x the initial loss")
        else:
            strikes = 0
    return model, history


def segment_representation(model: Sequential, images) -> np.ndarray:
    """Unit-length mean of a segment's per-day embeddings.

    ``images`` is either a (days, R, R) raster stack or a :class:`DayGrid`.
    """
    if isinstance(images, DayGrid):
        images = grid_images(images.rows, model.input_shape[0])
    if len(images) == 0:
        raise ValueError("segment has no days")
    mean = _embed_images(model, images).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise ValueError("mean embedding is zero and cannot be normalised")
    return mean / norm


# -- clustering ---------------------------------------------------------------

@dataclass
class Clustering:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    silhouette: float = float("nan")
    segment_ids: list[str] | None = None
    n_iter: int = 0

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def assignments(self) -> dict[str, int]:
        ids = self.segment_ids or [str(i) for i in range(len(self.labels))]
        return {s: int(g) for s, g in zip(ids, self.labels)}

    def members(self, group: int) -> list[str]:
        return [s for s, g in self.assignments.items() if g == group]


def _sq_dists(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    """Lloyd iterations from ``centers``; returns labels, centers, inertia trace, iterations.

    An emptied cluster is reseeded with the point lying farthest from its own
    centroid (taken from a cluster that keeps at least one other member).
    """
    centers = centers.copy()
    k = len(centers)
    labels = None
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(points, centers)
        new = d2.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        for empty in np.nonzero(counts == 0)[0]:
            own = d2[np.arange(len(points)), new]
            movable = counts[new] > 1
            if not movable.any():
                break
            far = int(np.argmax(np.where(movable, own, -1.0)))
            counts[new[far]] -= 1
            new[far] = empty
            counts[empty] = 1
            centers[empty] = points[far]
        for c in range(k):
            if counts[c]:
                centers[c] = points[new == c].mean(axis=0)
        trace.append(float(((points - centers[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            labels = new
            break
        labels = new
    return labels, centers, trace, it


def kmeans(points, k: int, rng: np.random.Generator, n_init: int = 10,
           max_iter: int = 300, segment_ids=None) -> Clustering:
    """Best-of-``n_init`` k-means++ / Lloyd clustering by inertia."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"K={k} must lie in 1..{n}")
    best = None
    for _ in range(n_init):
        labels, centers, trace, it = lloyd(points, kmeans_plus_plus(points, k, rng), max_iter)
        if best is None or trace[-1] < best.inertia:
            best = Clustering(labels, centers, trace[-1], segment_ids=segment_ids, n_iter=it)
    if k >= 2:
        best.silhouette = silhouette(points, best.labels)
    return best


def silhouette(points, labels) -> float:
    """Mean silhouette with Euclidean distance; singleton members score 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    groups = np.unique(labels)
    if len(groups) < 2:
        raise ValueError("silhouette needs at least two clusters")
    dist = np.sqrt(np.maximum(_sq_dists(points, points), 0.0))
    scores = np.zeros(len(points))
    sizes = {g: int(np.sum(labels == g)) for g in groups}
    mean_to = np.column_stack([dist[:, labels == g].mean(axis=1) for g in groups])
    for i, g in enumerate(labels):
        if sizes[g] == 1:
            continue
        gi = int(np.searchsorted(groups, g))
        a = dist[i, labels == g].sum() / (sizes[g] - 1)
        b = np.min(np.delete(mean_to[i], gi))
        top = max(a, b)
        scores[i] = 0.0 if top == 0 else (b - a) / top
    return float(scores.mean())


def select_k(points, k_range, rng: np.random.Generator, n_init: int = 10,
             max_iter: int = 300) -> tuple[int, dict[int, float]]:
    """K with the highest silhouette over ``k_range`` (ties go to the smaller K)."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 2 or ks[-1] > n - 1:
        raise ValueError(f"k_range must lie within [2, {n - 1}]")
    scores = {}
    best_k, best_s = None, -np.inf
    for k in ks:
        s = kmeans(points, k, rng, n_init, max_iter).silhouette
        scores[k] = s
        if s > best_s:
            best_k, best_s = k, s
    return best_k, scores


def rand_index(a, b) -> float:
    """Fraction of point pairs on which two labelings agree."""
    a = np.asarray(a)
    b = np.asarray(b)
    iu = np.triu_indices(len(a), 1)
    same_a = (a[:, None] == a[None, :])[iu]
    same_b = (b[:, None] == b[None, :])[iu]
    return float(np.mean(same_a == same_b))


# -- orchestration -------------------------------------------------------------

@dataclass
class DeepClusterConfig:
    resolution: int = 64
    embedding_dim: int = 32
    margin: float = 0.2
    learning_rate: float = 1e-3
    epochs: int = 4
    batches_per_epoch: int = 50
    batch_size: int = 12
    segments_per_batch: int = 6
    images_per_segment: int = 9
    k_min: int = 2
    k_max: int = 8
    k: int | None = None
    n_init: int = 10
    max_iter: int = 300
    seed: int = 0

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, margin=self.margin, seed=self.seed)


@dataclass
class ClusterResult:
    clustering: Clustering
    embeddings: np.ndarray
    segment_ids: list[str]
    history: EmbedderHistory
    silhouettes: dict[int, float]
    model: Sequential


def cluster_network(grids: list[DayGrid], config: DeepClusterConfig | None = None,
                    rngs: dict | None = None) -> ClusterResult:
    """Rasterize days, train the embedder, average per segment, pick K, run k-means."""
    config = config or DeepClusterConfig()
    if len(grids) < 3:
        raise ValueError("clustering needs at least three segments")
    if rngs is None:
        rngs = {"embedder": named_rng(config.seed, "embedder"),
                "kmeans": named_rng(config.seed, "kmeans")}
    images = [grid_images(g.rows, config.resolution) for g in grids]
    model, history = train_embedder(
        images, config.train_config(), config.batches_per_epoch, config.segments_per_batch,
        config.images_per_segment, embedding_dim=config.embedding_dim, rng=rngs["embedder"])
    emb = np.stack([segment_representation(model, im) for im in images])
    ids = [g.segment_id for g in grids]
    n = len(grids)
    if config.k is not None:
        k = config.k
        scores = {}
    else:
        k_hi = min(config.k_max, n - 1)
        k, scores = select_k(emb, range(config.k_min, k_hi + 1), rngs["kmeans"],
                             config.n_init, config.max_iter)
    clustering = kmeans(emb, k, rngs["kmeans"], config.n_init, config.max_iter, segment_ids=ids)
    if k >= 2:
        scores.setdefault(k, clustering.silhouette)
    return ClusterResult(clustering, emb, ids, history, scores, model)
