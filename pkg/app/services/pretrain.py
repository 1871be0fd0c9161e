"""
Pretext training of the field grid.

Every sample runs: neighborhood lookups -> field embedding of the sampled
rows -> task head -> loss, and the hand-written backward pass returns
gradients for the head and (unless frozen) the grid. Gradients are averaged
over a mini-batch in a fixed order and applied with Adam, so a run is a
deterministic function of (dataset, config, initial grid).

Randomness is keyed, never shared: split, per-epoch shuffle, per-sample row
choice and evaluation rows each draw from their own seeded generator.
"""

import logging
import time
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from models.field import FieldGrid, InterpTape
from models.geometry import PointCloud
from models.training import (
    EpochRecord,
    HeadTape,
    MLPParams,
    PretextConfig,
    TrainingSample,
    TrainReport,
)
from services.errors import InvalidArgumentError, InvalidStateError
from services.field_grid import embed_tape, grad_embed_batch, prepare_cloud
from services.geometry import adaptive_k, subsample_cloud
from services.heads import (
    classifier_params,
    classify_head_forward,
    decoder_params,
    head_backward,
    normal_head_forward,
    normal_head_params,
    recon_decoder_forward,
)
from services.losses import (
    loss_normal_with_grad,
    loss_reconstruction_with_grad,
    nll_with_grad,
)
from services.optim import adam_init, adam_step, lr_at

logger = logging.getLogger(__name__)

METRIC_NAMES = {
    "reconstruction": "chamfer",
    "normal_estimation": "mean_cosine",
    "supervised": "accuracy",
}


class SampleTapes(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: InterpTape
    head: HeadTape
    version: int


class SampleForward(BaseModel):
    """Result of one forward: loss, task metric, head output and d loss / d output."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    loss: float
    metric: float
    output: np.ndarray
    upstream: np.ndarray
    tapes: SampleTapes


class Gradients(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    head: dict[str, np.ndarray]
    grid: Optional[np.ndarray] = None

    def named(self) -> dict[str, np.ndarray]:
        out = dict(self.head)
        if self.grid is not None:
            out["grid"] = self.grid
        return out


def as_training_samples(dataset: Iterable) -> list[TrainingSample]:
    """
    Accepts TrainingSample / SyntheticShape-like objects (cloud + label) or
    (cloud, normals, label) tuples, where normals and label may be None.
    """
    samples = []
    for item in dataset:
        if isinstance(item, TrainingSample):
            samples.append(item)
        elif isinstance(item, tuple):
            if len(item) != 3:
                raise InvalidArgumentError("dataset tuples must be (cloud, normals, label)")
            cloud, normals, label = item
            if normals is not None:
                cloud = PointCloud.of(cloud.points, normals)
            samples.append(TrainingSample(cloud=cloud, label=label))
        elif hasattr(item, "cloud"):
            samples.append(TrainingSample(cloud=item.cloud, label=getattr(item, "label", None)))
        else:
            raise InvalidArgumentError(f"unsupported dataset item: {type(item).__name__}")
    return samples


def _check_supervision(samples: list[TrainingSample], task: str) -> None:
    if not samples:
        raise InvalidArgumentError("dataset is empty")
    for i, s in enumerate(samples):
        if len(s.cloud) < 2:
            raise InvalidArgumentError(f"sample {i} has fewer than 2 points")
        if task == "normal_estimation" and s.cloud.normals is None:
            raise InvalidArgumentError(f"sample {i} has no normals for normal estimation")
        if task == "supervised" and s.label is None:
            raise InvalidArgumentError(f"sample {i} has no label for supervised pretraining")


def infer_n_classes(samples: list[TrainingSample], cfg: PretextConfig) -> Optional[int]:
    if cfg.task != "supervised":
        return None
    top = max(int(s.label) for s in samples) + 1
    n_classes = cfg.n_classes or top
    if n_classes < top or n_classes < 2:
        raise InvalidArgumentError(f"n_classes={n_classes} does not cover labels up to {top - 1}")
    return n_classes


def make_head(
    cfg: PretextConfig, channels: int, n_classes: Optional[int] = None, seed: int = 0
) -> MLPParams:
    if cfg.task == "reconstruction":
        return decoder_params(channels, cfg.n_out, seed)
    if cfg.task == "normal_estimation":
        return normal_head_params(channels, seed)
    if n_classes is None:
        raise InvalidArgumentError("supervised head needs n_classes")
    return classifier_params(channels, n_classes, seed)


def neighborhood_k(cloud: PointCloud, cfg: PretextConfig) -> int:
    k = adaptive_k(len(cloud)) if cfg.k is None else cfg.k
    if k > len(cloud):
        raise InvalidArgumentError(f"k={k} exceeds the {len(cloud)} points of a sample")
    return k


def sample_rows(n_points: int, cfg: PretextConfig, rng: np.random.Generator) -> np.ndarray:
    """Rows whose embeddings feed the head: all for normals, N_s random otherwise."""
    if cfg.task == "normal_estimation":
        return np.arange(n_points)
    if cfg.n_s > n_points:
        raise InvalidArgumentError(f"n_s={cfg.n_s} exceeds the {n_points} points of a sample")
    return rng.choice(n_points, size=cfg.n_s, replace=False)


def forward_sample(
    grid: FieldGrid,
    head: MLPParams,
    sample: TrainingSample,
    cfg: PretextConfig,
    rows: Optional[np.ndarray] = None,
    version: int = 0,
    grid_tape: Optional[InterpTape] = None,
) -> SampleForward:
    """Embed the chosen rows, run the task head and evaluate the task loss."""
    cloud = sample.cloud
    rows = np.arange(len(cloud)) if rows is None else np.asarray(rows, dtype=np.int64)
    if grid_tape is None:
        k = neighborhood_k(cloud, cfg)
        grid_tape = prepare_cloud(cloud, k, grid.resolution, grid.channels, rows=rows)
    emb, gtape = embed_tape(grid, grid_tape, version)
    features = np.concatenate([emb, cloud.points[rows]], axis=1)

    if cfg.task == "reconstruction":
        output, htape = recon_decoder_forward(head, features, version)
        loss, upstream = loss_reconstruction_with_grad(output, cloud.points)
        metric = loss
    elif cfg.task == "normal_estimation":
        output, htape = normal_head_forward(head, features, version)
        gt = cloud.normals[rows]
        loss, upstream = loss_normal_with_grad(output, gt, cfg.sign_invariant_normals)
        cos = (output * gt).sum(axis=1)
        metric = float(np.mean(np.abs(cos) if cfg.sign_invariant_normals else cos))
    else:
        if sample.label is None:
            raise InvalidArgumentError("supervised forward needs a label")
        output, htape = classify_head_forward(head, features, version=version)
        loss, upstream = nll_with_grad(output, int(sample.label))
        metric = float(int(np.argmax(output)) == int(sample.label))

    return SampleForward(
        loss=loss,
        metric=metric,
        output=output,
        upstream=upstream,
        tapes=SampleTapes(grid=gtape, head=htape, version=version),
    )


def backward_pass(
    head: MLPParams,
    tapes: SampleTapes,
    upstream: np.ndarray,
    train_grid: bool = True,
    version: Optional[int] = None,
) -> Gradients:
    """
    Gradients of the loss behind `upstream` (d loss / d head output) for every
    head parameter and, when training the grid, for the grid values.

    The head's input gradient is split at the concatenation: the first C
    columns go through the embedding max-pool into the grid, the coordinate
    columns are dropped.
    """
    if version is not None and tapes.version != version:
        raise InvalidStateError(
            f"tapes were recorded at parameter version {tapes.version}, current is {version}"
        )
    if tapes.grid.version != tapes.version or tapes.head.version != tapes.version:
        raise InvalidStateError("grid and head tapes come from different forwards")
    head_grads, dfeat = head_backward(head, tapes.head, upstream)
    c = tapes.grid.channels
    if dfeat.shape != (tapes.grid.n_neighborhoods, c + 3):
        raise InvalidStateError("head tape does not match the embedding tape")
    grid_grad = grad_embed_batch(tapes.grid, dfeat[:, :c]) if train_grid else None
    return Gradients(head=head_grads, grid=grid_grad)


def _eval_rows(cloud: PointCloud, cfg: PretextConfig, key: int) -> np.ndarray:
    return sample_rows(len(cloud), cfg, np.random.default_rng([cfg.seed, 5, key]))


def evaluate(
    grid: FieldGrid,
    head: MLPParams,
    samples: list[TrainingSample],
    cfg: PretextConfig,
    cache: Optional[dict[int, InterpTape]] = None,
) -> tuple[float, float]:
    """
    Mean loss and mean task metric over `samples`. Row choice for sample i
    depends only on (seed, i), so repeated evaluations see the same rows.
    """
    if not samples:
        raise InvalidArgumentError("nothing to evaluate")
    losses, metrics = [], []
    for i, sample in enumerate(samples):
        rows = _eval_rows(sample.cloud, cfg, i)
        tape = None
        if cache is not None:
            tape = cache.get(i)
            if tape is None:
                k = neighborhood_k(sample.cloud, cfg)
                tape = prepare_cloud(sample.cloud, k, grid.resolution, grid.channels, rows=rows)
                cache[i] = tape
        fwd = forward_sample(grid, head, sample, cfg, rows=rows, grid_tape=tape)
        losses.append(fwd.loss)
        metrics.append(fwd.metric)
    return float(np.mean(losses)), float(np.mean(metrics))


def reconstruct(
    grid: FieldGrid, head: MLPParams, cloud: PointCloud, cfg: PretextConfig, seed: int = 0
) -> PointCloud:
    """Decode one shape from N_s randomly chosen embedding rows."""
    if cfg.task != "reconstruction":
        raise InvalidArgumentError("reconstruct needs a reconstruction config")
    rows = sample_rows(len(cloud), cfg, np.random.default_rng(seed))
    sample = TrainingSample(cloud=cloud)
    fwd = forward_sample(grid, head, sample, cfg, rows=rows)
    return PointCloud.of(fwd.output)


class PretextTrainer:
    """Holds the mutable training state: grid copy, head, Adam moments, version."""

    def __init__(
        self,
        samples: list[TrainingSample],
        cfg: PretextConfig,
        grid: FieldGrid,
        head: Optional[MLPParams] = None,
    ):
        _check_supervision(samples, cfg.task)
        if cfg.n_points is not None:
            samples = [
                TrainingSample(
                    cloud=subsample_cloud(s.cloud, cfg.n_points, cfg.seed + i), label=s.label
                )
                for i, s in enumerate(samples)
            ]
        self.cfg = cfg
        self.samples = samples
        self.initial_grid = grid
        self.n_classes = infer_n_classes(samples, cfg)
        self.train_grid = cfg.weight_mode == "train_grid"

        n = len(samples)
        order = np.random.default_rng([cfg.seed, 1]).permutation(n)
        n_eval = min(int(round(n * cfg.eval_fraction)), n - 1)
        if n_eval > 0:
            self.eval_idx, self.train_idx = np.sort(order[:n_eval]), np.sort(order[n_eval:])
        else:
            self.eval_idx = self.train_idx = np.arange(n)
        self.eval_samples = [samples[i] for i in self.eval_idx]

        if head is None:
            head = make_head(cfg, grid.channels, self.n_classes, seed=cfg.seed + 1)
        else:
            head = head.copy()
        if head.in_features != grid.channels + 3:
            raise InvalidArgumentError(
                f"head expects {head.in_features} features, grid gives {grid.channels + 3}"
            )
        self.head = head

        self.values = np.array(grid.values)
        # Shares self.values, so optimizer updates are visible without copies.
        self.grid = FieldGrid.model_construct(values=self.values)
        self.params = self.head.named()
        if self.train_grid:
            self.params["grid"] = self.values
        self.state = adam_init(self.params)
        self.version = 0
        self._train_tapes: dict[int, InterpTape] = {}
        self._eval_tapes: dict[int, InterpTape] = {}

    def _grid_tape(self, index: int, rows: np.ndarray) -> Optional[InterpTape]:
        # Only the normal task embeds fixed rows; other tasks resample each step.
        if self.cfg.task != "normal_estimation":
            return None
        tape = self._train_tapes.get(index)
        if tape is None:
            cloud = self.samples[index].cloud
            k = neighborhood_k(cloud, self.cfg)
            tape = prepare_cloud(cloud, k, self.grid.resolution, self.grid.channels, rows=rows)
            self._train_tapes[index] = tape
        return tape

    def evaluate(self) -> tuple[float, float]:
        cache = self._eval_tapes if self.cfg.task == "normal_estimation" else None
        return evaluate(self.grid, self.head, self.eval_samples, self.cfg, cache=cache)

    def step(self, batch: np.ndarray, epoch: int, lr: float) -> list[float]:
        """Forward/backward every sample in the batch, then one Adam update."""
        acc: dict[str, np.ndarray] = {}
        losses = []
        for i in batch:
            i = int(i)
            sample = self.samples[i]
            rng = np.random.default_rng([self.cfg.seed, 4, epoch, i])
            rows = sample_rows(len(sample.cloud), self.cfg, rng)
            fwd = forward_sample(
                self.grid,
                self.head,
                sample,
                self.cfg,
                rows=rows,
                version=self.version,
                grid_tape=self._grid_tape(i, rows),
            )
            grads = backward_pass(
                self.head, fwd.tapes, fwd.upstream, self.train_grid, version=self.version
            )
            for name, g in grads.named().items():
                if name in acc:
                    acc[name] += g
                else:
                    acc[name] = g.copy()
            losses.append(fwd.loss)
        for g in acc.values():
            g /= len(batch)
        adam_step(self.state, self.params, acc, lr)
        self.version += 1
        return losses

    def run(self) -> tuple[FieldGrid, MLPParams, TrainReport]:
        cfg = self.cfg
        started = time.perf_counter()
        initial_eval, metric = self.evaluate()
        logger.info(
            f"Pretraining {cfg.task}: {len(self.train_idx)} train / {len(self.eval_idx)} eval "
            f"shapes, R={self.grid.resolution}, C={self.grid.channels}, "
            f"initial eval loss {initial_eval:.6f}"
        )
        records = []
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            order = np.random.default_rng([cfg.seed, 3, epoch]).permutation(self.train_idx)
            losses = []
            for start in range(0, order.shape[0], cfg.batch_size):
                losses.extend(self.step(order[start : start + cfg.batch_size], epoch, lr))
            eval_loss, metric = self.evaluate()
            train_loss = float(np.mean(losses))
            records.append(
                EpochRecord(epoch=epoch, lr=lr, train_loss=train_loss, eval_loss=eval_loss)
            )
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: lr={lr:.2e} train={train_loss:.6f} "
                f"eval={eval_loss:.6f}"
            )

        grid = FieldGrid.of(self.values) if self.train_grid else self.initial_grid
        report = TrainReport(
            task=cfg.task,
            epochs=records,
            initial_eval_loss=initial_eval,
            final_eval_metric=metric,
            metric_name=METRIC_NAMES[cfg.task],
            wall_clock_seconds=time.perf_counter() - started,
            config=cfg,
            seed=cfg.seed,
            eval_indices=[int(i) for i in self.eval_idx],
        )
        logger.info(
            f"Finished {cfg.task} in {report.wall_clock_seconds:.1f}s, "
            f"{report.metric_name}={metric:.4f}"
        )
        return grid, self.head, report


def train_pretext(
    dataset: Iterable,
    cfg: PretextConfig,
    grid: FieldGrid,
    head: Optional[MLPParams] = None,
) -> tuple[FieldGrid, MLPParams, TrainReport]:
    """
    Pretrain `grid` on one pretext task. With weight_mode=freeze_grid the
    returned grid is the input grid and only the head learns.
    """
    trainer = PretextTrainer(as_training_samples(dataset), cfg, grid, head)
    return trainer.run()
