"""Two-phase training loop: pixel-loss warmup, then adversarial training.

Phase 1 trains the generator on L1 alone.  Phase 2 alternates, per
iteration on the same batch, one discriminator step (on the HR batch
and a detached SR batch) and one generator step on a fresh forward with
the weighted composite objective.  Batches are derived from (seed, step)
alone, so prefetching, stopping, and resuming never change the data a
given step sees.
"""

from __future__ import annotations

import csv
import json
import math
import queue
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint, save_generator
from .dataset import AugmentSpec, DatasetManifest, ImageCache, sample_patch_batch
from .errors import DataError, TrainingDiverged
from .images import load_image
from .losses import LossWeights, d_loss, g_loss, psnr
from .models import Discriminator, FeatureNetwork, Generator, super_resolve
from .optim import AdamState, adam_step
from .resample import upsample_bicubic
from .rng import derive_rng

PHASE_SRCNN = "srcnn"
PHASE_GAN = "gan"

CSV_FIELDS = (
    "step", "epoch", "phase", "l1", "feature", "adv", "g_total",
    "d_loss", "p_hr_mean", "p_sr_mean", "train_psnr", "val_psnr",
)


@dataclass
class TrainSchedule:
    srcnn_epochs: int = 100
    gan_epochs: int = 150
    iterations_per_epoch: int = 1000
    batch_size: int = 16
    hr_crop: int = 192
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    augment: AugmentSpec | None = None
    validate_split: str = "valid"
    moving_average_window: int = 1000
    prefetch_depth: int = 4
    divergence_threshold: float = 100.0
    divergence_patience: int = 100

    def validate(self) -> None:
        if self.srcnn_epochs < 0 or self.gan_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.srcnn_epochs + self.gan_epochs < 1:
            raise ValueError("schedule contains no epochs")
        if min(self.iterations_per_epoch, self.batch_size, self.hr_crop) < 1:
            raise ValueError("iterations, batch size and crop must be positive")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be positive")
        if self.moving_average_window < 1:
            raise ValueError("moving average window must be >= 1")
        if self.prefetch_depth < 0:
            raise ValueError("prefetch depth must be >= 0")
        if self.divergence_patience < 1:
            raise ValueError("divergence patience must be >= 1")
        if self.augment is not None:
            self.augment.validate()

    @property
    def total_epochs(self) -> int:
        return self.srcnn_epochs + self.gan_epochs

    @property
    def gan_start_step(self) -> int:
        return self.srcnn_epochs * self.iterations_per_epoch

    def phase_of_epoch(self, epoch: int) -> str:
        return PHASE_SRCNN if epoch < self.srcnn_epochs else PHASE_GAN


def moving_average(series, window: int):
    """Trailing mean over the last min(window, elapsed) points."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    values = np.asarray(series, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    out = np.empty(len(values), dtype=np.float64)
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out.tolist()


class MetricLog:
    """Per-iteration training records with strictly increasing steps."""

    def __init__(self, window: int = 1000):
        self.window = window
        self.rows: list = []

    def add(self, **row) -> None:
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError(
                f"step {row['step']} is not after step {self.rows[-1]['step']}"
            )
        self.rows.append(row)

    def column(self, key: str):
        return [row.get(key, math.nan) for row in self.rows]

    def smoothed(self, key: str):
        return moving_average(self.column(key), self.window)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class ValidationResult:
    psnr_mean: float
    psnr_variance: float
    baseline_mean: float
    baseline_variance: float
    per_image: list


@dataclass
class TrainResult:
    log: MetricLog
    summary: dict
    checkpoint_paths: list


def validate(generator: Generator, manifest: DatasetManifest, split: str) -> ValidationResult:
    """Full-size inference over one split, one image at a time.

    Outputs are clamped to [-1, 1] (the representable pixel range)
    before scoring, for both the network and the bicubic baseline.
    Variances are population variances.  A perfect reconstruction scores
    +inf, which deliberately poisons the mean as a sentinel.
    """
    entries = manifest.for_split(split)
    if not entries:
        raise DataError(f"split '{split}' has no entries to validate on")
    scale = manifest.scale
    per_image = []
    for entry in entries:
        lr = load_image(manifest.lr_file(entry))
        hr = load_image(manifest.hr_file(entry))
        sr = np.clip(super_resolve(generator, lr.pixels), -1.0, 1.0)
        base = np.clip(upsample_bicubic(lr.pixels, scale), -1.0, 1.0)
        per_image.append({
            "id": entry.id,
            "rock_class": entry.rock_class,
            "psnr": psnr(sr, hr.pixels),
            "psnr_bicubic": psnr(base, hr.pixels),
        })
    scores = np.array([r["psnr"] for r in per_image])
    baselines = np.array([r["psnr_bicubic"] for r in per_image])
    return ValidationResult(
        psnr_mean=float(scores.mean()),
        psnr_variance=float(scores.var(ddof=0)),
        baseline_mean=float(baselines.mean()),
        baseline_variance=float(baselines.var(ddof=0)),
        per_image=per_image,
    )


# -- batch pipeline ----------------------------------------------------------


def _make_batch(manifest, schedule: TrainSchedule, step: int, cache):
    rng = derive_rng(schedule.seed, "batch", step)
    return sample_patch_batch(
        manifest, "train", schedule.batch_size, schedule.hr_crop, rng,
        augment=schedule.augment, cache=cache,
    )


class _StreamFailure:
    def __init__(self, exc):
        self.exc = exc


_DONE = object()


@contextmanager
def _batch_stream(manifest, schedule: TrainSchedule, first: int, last: int, cache):
    """Yield (step, batch) for steps [first, last).

    With prefetch_depth > 0 a producer thread runs ahead, bounded by the
    queue size.  Batch content depends only on the step number, so the
    prefetcher cannot change results, only timing.
    """
    if schedule.prefetch_depth == 0:
        def sync():
            for step in range(first, last):
                yield step, _make_batch(manifest, schedule, step, cache)
        yield sync()
        return

    q: queue.Queue = queue.Queue(maxsize=schedule.prefetch_depth)
    stop = threading.Event()

    def put(item) -> bool:
        while not stop.is_set():
            try:
                q.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce():
        try:
            for step in range(first, last):
                if not put((step, _make_batch(manifest, schedule, step, cache))):
                    return
            put(_DONE)
        except BaseException as exc:  # surfaced on the consumer side
            put(_StreamFailure(exc))

    worker = threading.Thread(target=produce, name="batch-prefetch", daemon=True)
    worker.start()

    def drain():
        while True:
            item = q.get()
            if item is _DONE:
                return
            if isinstance(item, _StreamFailure):
                raise item.exc
            yield item

    try:
        yield drain()
    finally:
        stop.set()
        while True:
            try:
                q.get_nowait()
            except queue.Empty:
                break
        worker.join(timeout=10)


# -- training state bundle ---------------------------------------------------

_STATE_KIND = "train-state"


def _schedule_as_config(schedule: TrainSchedule) -> dict:
    blob = asdict(schedule)
    return blob


def save_train_state(path, schedule, epoch: int, generator, opt_g,
                     discriminator=None, opt_d=None) -> None:
    config = {
        "kind": _STATE_KIND,
        "epochs_completed": epoch,
        "schedule": _schedule_as_config(schedule),
        "generator": asdict(generator.config),
        "discriminator": asdict(discriminator.config) if discriminator else None,
        "opt_g": opt_g.state_dict()["hyper"],
        "opt_d": opt_d.state_dict()["hyper"] if opt_d else None,
    }
    tensors = {}
    for name, arr in generator.state_dict().items():
        tensors["gen/" + name] = arr
    for name, arr in opt_g.state_dict()["tensors"].items():
        tensors["opt_g/" + name] = arr
    if discriminator is not None:
        for name, arr in discriminator.state_dict().items():
            tensors["disc/" + name] = arr
    if opt_d is not None:
        for name, arr in opt_d.state_dict()["tensors"].items():
            tensors["opt_d/" + name] = arr
    save_checkpoint(path, config, tensors)


def _split_prefix(tensors: dict, prefix: str) -> dict:
    plen = len(prefix)
    return {k[plen:]: v for k, v in tensors.items() if k.startswith(prefix)}


def load_train_state(path, schedule, generator, discriminator=None):
    """Restore weights and optimizer moments; returns (epoch, opt_g, opt_d).

    The stored schedule and network configs must match the current ones:
    resuming under different settings would silently train a different
    model, so it is an error instead.
    """
    config, tensors = load_checkpoint(path)
    if config.get("kind") != _STATE_KIND:
        raise ValueError(f"{path} is not a training-state file")
    stored = config["schedule"]
    current = json.loads(json.dumps(_schedule_as_config(schedule)))  # match JSON types
    if stored != current:
        raise ValueError("stored schedule differs from the requested one; "
                         "resume with identical settings or start fresh")
    if config["generator"] != json.loads(json.dumps(asdict(generator.config))):
        raise ValueError("stored generator config differs from the supplied network")
    generator.load_state_dict(_split_prefix(tensors, "gen/"))
    opt_g = AdamState.from_state_dict({
        "hyper": config["opt_g"], "tensors": _split_prefix(tensors, "opt_g/"),
    })
    opt_d = None
    if discriminator is not None:
        if config["discriminator"] != json.loads(json.dumps(asdict(discriminator.config))):
            raise ValueError("stored discriminator config differs from the supplied network")
        discriminator.load_state_dict(_split_prefix(tensors, "disc/"))
        if config["opt_d"] is not None:
            opt_d = AdamState.from_state_dict({
                "hyper": config["opt_d"], "tensors": _split_prefix(tensors, "opt_d/"),
            })
    return int(config["epochs_completed"]), opt_g, opt_d


# -- the loop ----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _srcnn_step(generator, batch, opt_g):
    hr = Tensor(batch.hr)
    with Tape() as tape:
        sr = generator(Tensor(batch.lr))
        total, parts = g_loss(sr, hr, LossWeights(alpha=0.0, beta=0.0))
    tape.backward(total)
    adam_step(generator.parameters(), opt_g)
    return {
        "l1": parts["l1"], "feature": math.nan, "adv": math.nan,
        "g_total": parts["total"], "d_loss": math.nan,
        "p_hr_mean": math.nan, "p_sr_mean": math.nan,
        "train_psnr": psnr(sr.data, batch.hr),
    }


def _gan_step(generator, discriminator, feature_net, weights, batch, opt_g, opt_d):
    hr = Tensor(batch.hr)
    use_d = weights.beta > 0 and discriminator is not None
    use_f = weights.alpha > 0 and feature_net is not None

    d_value = math.nan
    p_hr_mean = math.nan
    p_sr_mean = math.nan
    if use_d:
        sr_detached = generator(Tensor(batch.lr))  # no tape: no generator grads
        with Tape() as tape_d:
            p_hr = discriminator(hr, training=True)
            p_sr = discriminator(Tensor(sr_detached.data), training=True)
            loss_d = d_loss(p_hr, p_sr)
        tape_d.backward(loss_d)
        adam_step(discriminator.parameters(), opt_d)
        d_value = float(loss_d.data)
        p_hr_mean = float(p_hr.data.mean())
        p_sr_mean = float(p_sr.data.mean())

    phi_hr = None
    if use_f:
        phi_hr = feature_net(hr).detach()  # constant target, no tape needed

    if use_d:
        discriminator.set_trainable(False)
    try:
        with Tape() as tape_g:
            sr = generator(Tensor(batch.lr))
            phi_sr = feature_net(sr) if use_f else None
            p_sr_g = discriminator(sr, training=False) if use_d else None
            total, parts = g_loss(sr, hr, weights, phi_sr, phi_hr, p_sr_g)
        tape_g.backward(total)
        adam_step(generator.parameters(), opt_g)
    finally:
        if use_d:
            discriminator.set_trainable(True)
    return {
        "l1": parts["l1"], "feature": parts["feature"] if use_f else math.nan,
        "adv": parts["adversarial"] if use_d else math.nan,
        "g_total": parts["total"], "d_loss": d_value,
        "p_hr_mean": p_hr_mean, "p_sr_mean": p_sr_mean,
        "train_psnr": psnr(sr.data, batch.hr),
    }


def train(
    schedule: TrainSchedule,
    manifest: DatasetManifest,
    generator: Generator,
    out_dir,
    discriminator: Discriminator | None = None,
    feature_net: FeatureNetwork | None = None,
    resume: bool = False,
    resume_from=None,
    stop_after_epochs: int | None = None,
) -> TrainResult:
    """Run the schedule, writing metrics.csv, per-epoch generator
    checkpoints, a resumable state file, and summary.json under out_dir.

    stop_after_epochs caps how many epochs THIS call runs (the schedule
    itself is unchanged); a later call with resume=True picks up where
    the state file left off, reproducing the uninterrupted run.
    resume_from names an explicit state file to restore (default:
    out_dir/state.msr); new state is always written to out_dir.

    Raises TrainingDiverged (with the last good state file, if any) when
    a loss goes non-finite or the discriminator loss stays above the
    divergence threshold for the configured patience.
    """
    schedule.validate()
    if not manifest.for_split("train"):
        raise DataError("manifest has no train split")
    weights = schedule.loss_weights
    gan_active = schedule.gan_epochs > 0
    if gan_active and weights.beta > 0 and discriminator is None:
        raise ValueError("adversarial weight is positive but no discriminator was given")
    if gan_active and weights.alpha > 0 and feature_net is None:
        raise ValueError("feature weight is positive but no feature network was given")
    if feature_net is not None and any(p.requires_grad for p in feature_net.parameters()):
        raise ValueError("feature network must be frozen")
    if discriminator is not None and discriminator.config.input_size != schedule.hr_crop:
        raise ValueError(
            f"discriminator is bound to {discriminator.config.input_size}px inputs "
            f"but hr_crop is {schedule.hr_crop}"
        )

    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    state_path = out_dir / "state.msr"
    csv_path = out_dir / "metrics.csv"

    start_epoch = 0
    opt_g = AdamState(lr=schedule.lr_generator)
    opt_d = AdamState(lr=schedule.lr_discriminator) if discriminator else None
    if resume:
        source = Path(resume_from) if resume_from is not None else state_path
        if not source.exists():
            raise DataError(f"no state file to resume from at {source}")
        start_epoch, opt_g, restored_d = load_train_state(
            source, schedule, generator, discriminator)
        if restored_d is not None:
            opt_d = restored_d
        if start_epoch >= schedule.total_epochs:
            raise ValueError(f"nothing to resume: {start_epoch} epochs already done")

    end_epoch = schedule.total_epochs
    if stop_after_epochs is not None:
        if stop_after_epochs < 1:
            raise ValueError("stop_after_epochs must be >= 1")
        end_epoch = min(end_epoch, start_epoch + stop_after_epochs)

    log = MetricLog(window=schedule.moving_average_window)
    cache = ImageCache(capacity=64)
    iters = schedule.iterations_per_epoch
    last_good = source if resume else None
    checkpoint_paths: list = []
    best_val = -math.inf
    best_epoch = None
    high_d_streak = 0
    t0 = time.monotonic()

    append = resume and csv_path.exists() and csv_path.stat().st_size > 0
    with open(csv_path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(CSV_FIELDS)
        for epoch in range(start_epoch, end_epoch):
            phase = schedule.phase_of_epoch(epoch)
            first = epoch * iters
            with _batch_stream(manifest, schedule, first, first + iters, cache) as stream:
                for step, batch in stream:
                    try:
                        if phase == PHASE_SRCNN:
                            row = _srcnn_step(generator, batch, opt_g)
                        else:
                            row = _gan_step(generator, discriminator, feature_net,
                                            weights, batch, opt_g, opt_d)
                    except FloatingPointError as exc:
                        raise TrainingDiverged(
                            f"non-finite gradient at step {step}: {exc}",
                            last_checkpoint=last_good) from exc
                    row.update(step=step, epoch=epoch, phase=phase, val_psnr=math.nan)
                    checked = [row["g_total"]]
                    if not math.isnan(row["d_loss"]):
                        checked.append(row["d_loss"])
                    if not all(math.isfinite(v) for v in checked):
                        raise TrainingDiverged(
                            f"non-finite loss at step {step}: "
                            f"g_total={row['g_total']}, d_loss={row['d_loss']}",
                            last_checkpoint=last_good)
                    if row["d_loss"] > schedule.divergence_threshold:
                        high_d_streak += 1
                        if high_d_streak >= schedule.divergence_patience:
                            raise TrainingDiverged(
                                f"d_loss above {schedule.divergence_threshold} for "
                                f"{high_d_streak} consecutive iterations",
                                last_checkpoint=last_good)
                    else:
                        high_d_streak = 0
                    is_last = step == first + iters - 1
                    if not is_last:
                        log.add(**row)
                        writer.writerow(_fmt(row[k]) for k in CSV_FIELDS)

            # epoch end: validate (if the split exists), then checkpoint
            if manifest.for_split(schedule.validate_split):
                result = validate(generator, manifest, schedule.validate_split)
                row["val_psnr"] = result.psnr_mean
                if result.psnr_mean > best_val:
                    best_val = result.psnr_mean
                    best_epoch = epoch
            log.add(**row)
            writer.writerow(_fmt(row[k]) for k in CSV_FIELDS)
            fh.flush()

            gen_path = ckpt_dir / f"gen_epoch{epoch + 1:04d}.msr"
            save_generator(gen_path, generator)
            checkpoint_paths.append(gen_path)
            save_train_state(state_path, schedule, epoch + 1, generator, opt_g,
                             discriminator, opt_d)
            last_good = state_path

    summary = {
        "epochs_completed": end_epoch,
        "srcnn_steps": [0, schedule.gan_start_step],
        "gan_steps": [schedule.gan_start_step, schedule.total_epochs * iters],
        "best_val_psnr": None if best_epoch is None else best_val,
        "best_epoch": best_epoch,
        "checkpoints": [str(p.relative_to(out_dir)) for p in checkpoint_paths],
        "state_file": str(state_path.relative_to(out_dir)),
        "wall_seconds": round(time.monotonic() - t0, 3),
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return TrainResult(log=log, summary=summary, checkpoint_paths=checkpoint_paths)
