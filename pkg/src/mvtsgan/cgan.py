"""Conditional GAN for fixed-length multivariate time series.

The generator maps per-timestep latent noise plus a one-hot class condition
through an LSTM and a shared per-timestep affine head with tanh output, so
synthetic sequences live in the same [-1, 1] space as scaled real data.  The
discriminator reads the sequence concatenated with the same condition, and
scores it from the final LSTM hidden state through a single logistic unit.

Training alternates one discriminator step (SGD) with one generator step
(Adam) per batch.  Both losses are plain binary cross-entropy, minimized by
both networks against their respective targets, so an undecided
discriminator (p = 0.5 everywhere) sits at d_loss = 2*ln 2 and
g_loss = ln 2.  Latent entries are i.i.d. standard normal.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import ClassLabel, Dataset, MvtsSample, one_hot

logger = logging.getLogger(__name__)

N_CLASSES = 2
CHECKPOINT_PREFIX = "ckpt_epoch_"
TRAIN_LOG_NAME = "train_log.csv"
DIAGNOSTIC_NAME = "train_diagnostic.json"

CONDITIONING_MODES = ("both", "flare_only")


class ConfigError(Exception):
    """A training configuration value is out of range or inconsistent."""


class TrainingError(Exception):
    """Training aborted (e.g. non-finite loss)."""


class SynthesisError(Exception):
    """A checkpoint could not be used to generate samples."""


@dataclass
class TrainConfig:
    """Knobs for one training run; defaults follow the reference setup.

    ``conditioning`` picks the labels attached to synthetic batches during
    training: ``both`` draws them uniformly from the two classes, while
    ``flare_only`` pins them to FLARE (for minority-only training sets).
    """

    batch_size: int = 32
    epochs: int = 300
    checkpoint_every: int = 5
    lr: float = 0.1
    hidden: int = 100
    latent_dim: int = 3
    seed: int = 0
    conditioning: str = "both"

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.hidden < 1 or self.latent_dim < 1:
            raise ConfigError("hidden and latent_dim must be >= 1")
        if self.conditioning not in CONDITIONING_MODES:
            raise ConfigError(
                f"conditioning must be one of {CONDITIONING_MODES}, got {self.conditioning!r}"
            )


@dataclass
class TrainResult:
    """Where a finished run left its artifacts."""

    checkpoint_paths: list[Path]
    log_path: Path
    epochs_run: int
    final_d_loss: float
    final_g_loss: float


class Generator:
    """latent [B x T x L] + condition [B x T x 2] -> series [B x T x P] in (-1, 1)."""

    def __init__(self, n_channels: int, hidden: int, latent_dim: int,
                 rng: np.random.Generator):
        self.n_channels = n_channels
        self.latent_dim = latent_dim
        self.lstm = ad.LstmLayer(latent_dim + N_CLASSES, hidden, rng, name="generator.lstm")
        self.head = ad.DenseLayer(hidden, n_channels, rng, name="generator.head")

    def __call__(self, z: ad.Tensor, cond: ad.Tensor) -> ad.Tensor:
        hidden = self.lstm(ad.concat([z, cond], axis=2))
        batch, n_steps, hidden_dim = hidden.values.shape
        flat = ad.reshape(hidden, (batch * n_steps, hidden_dim))
        out = ad.tanh(self.head(flat))
        return ad.reshape(out, (batch, n_steps, self.n_channels))

    def parameters(self) -> list[ad.Tensor]:
        return self.lstm.parameters() + self.head.parameters()


class Discriminator:
    """series [B x T x P] + condition [B x T x 2] -> realness probability [B]."""

    def __init__(self, n_channels: int, hidden: int, rng: np.random.Generator):
        self.n_channels = n_channels
        self.lstm = ad.LstmLayer(n_channels + N_CLASSES, hidden, rng,
                                 name="discriminator.lstm")
        self.head = ad.DenseLayer(hidden, 1, rng, name="discriminator.head")

    def __call__(self, x: ad.Tensor, cond: ad.Tensor) -> ad.Tensor:
        hidden = self.lstm(ad.concat([x, cond], axis=2))
        last = ad.time_slice(hidden, hidden.values.shape[1] - 1)
        logits = self.head(last)
        return ad.sigmoid(ad.reshape(logits, (logits.values.shape[0],)))

    def parameters(self) -> list[ad.Tensor]:
        return self.lstm.parameters() + self.head.parameters()


def discriminator_loss(
    d: Discriminator,
    g: Generator,
    real: ad.Tensor,
    c_real: ad.Tensor,
    z: ad.Tensor,
    c_synth: ad.Tensor,
) -> ad.Tensor:
    """BCE(D(real), 1) + BCE(D(G(z)), 0); the generator is held constant.

    Backpropagating this loss populates discriminator gradients only.
    """
    with ad.no_grad():
        synth = g(z, c_synth)
    d_real = d(real, c_real)
    d_synth = d(ad.Tensor(synth.values), c_synth)
    ones = ad.Tensor(np.ones_like(d_real.values))
    zeros = ad.Tensor(np.zeros_like(d_synth.values))
    return ad.bce_loss(d_real, ones) + ad.bce_loss(d_synth, zeros)


def generator_loss(d: Discriminator, g: Generator, z: ad.Tensor,
                   c: ad.Tensor) -> ad.Tensor:
    """BCE(D(G(z)), 1): gradients flow through D into G.

    The caller must step only the generator's optimizer afterwards; the
    discriminator picks up gradients here but is not meant to move.
    """
    return ad.bce_loss(d(g(z, c), c), ad.Tensor(np.ones(z.values.shape[0])))


def conditions_for(labels: list[ClassLabel], n_timesteps: int) -> np.ndarray:
    """Stack per-sample one-hot condition planes into [B x T x 2]."""
    return np.stack([one_hot(lab, n_timesteps).one_hot for lab in labels], axis=0)


def checkpoint_path(out_dir: str | Path, epoch: int) -> Path:
    return Path(out_dir) / f"{CHECKPOINT_PREFIX}{epoch}"


def _dataset_arrays(dataset: Dataset) -> tuple[np.ndarray, list[ClassLabel], int]:
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    n_steps = dataset.samples[0].n_timesteps
    n_channels = len(dataset.channels)
    for s in dataset.samples:
        if s.n_timesteps != n_steps or s.n_channels != n_channels:
            raise TrainingError(
                f"sample {s.id!r} has shape {s.values.shape}, expected ({n_steps}, {n_channels})"
            )
        if np.isnan(s.values).any():
            raise TrainingError(f"sample {s.id!r} still has missing values; impute first")
    stacked = np.stack([s.values for s in dataset.samples], axis=0)
    if np.abs(stacked).max() > 1.0 + 1e-12:
        raise TrainingError("training data must be scaled to [-1, 1] first")
    return stacked, [s.label for s in dataset.samples], n_steps


def train(config: TrainConfig, dataset: Dataset, out_dir: str | Path) -> TrainResult:
    """Run the alternating GAN loop and leave checkpoints plus a loss log.

    Checkpoints land in ``out_dir`` as ``ckpt_epoch_<N>`` every
    ``checkpoint_every`` epochs (and at the final epoch).  The log is a CSV
    with one row per epoch: ``epoch,d_loss,g_loss,wall_ms``; everything but
    the wall-clock column is deterministic under ``config.seed``.  A
    non-finite loss writes a diagnostic record and raises
    :class:`TrainingError`.
    """
    config.validate()
    values, labels, n_steps = _dataset_arrays(dataset)
    n_samples = values.shape[0]
    n_channels = values.shape[2]
    if n_samples < config.batch_size:
        raise TrainingError(
            f"dataset has {n_samples} samples, fewer than batch_size={config.batch_size}"
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    gen = Generator(n_channels, config.hidden, config.latent_dim, rng)
    disc = Discriminator(n_channels, config.hidden, rng)
    opt_d = ad.Sgd(disc.parameters(), lr=config.lr)
    opt_g = ad.Adam(gen.parameters(), lr=config.lr)

    cond_cache = {lab: one_hot(lab, n_steps).one_hot for lab in ClassLabel}
    label_pool = tuple(ClassLabel)
    n_batches = n_samples // config.batch_size

    extra_base = {
        "config": asdict(config),
        "n_channels": n_channels,
        "seq_len": n_steps,
        "channels": list(dataset.channels),
    }

    def synth_conditions() -> ad.Tensor:
        if config.conditioning == "flare_only":
            drawn = [ClassLabel.FLARE] * config.batch_size
        else:
            drawn = [label_pool[i] for i in rng.integers(0, N_CLASSES, config.batch_size)]
        return ad.Tensor(np.stack([cond_cache[lab] for lab in drawn], axis=0))

    def noise() -> ad.Tensor:
        return ad.Tensor(
            rng.standard_normal((config.batch_size, n_steps, config.latent_dim))
        )

    checkpoints: list[Path] = []
    log_path = out_dir / TRAIN_LOG_NAME
    d_epoch = g_epoch = float("nan")
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("epoch,d_loss,g_loss,wall_ms\n")
        for epoch in range(1, config.epochs + 1):
            tic = time.perf_counter()
            order = rng.permutation(n_samples)
            d_total = g_total = 0.0
            for b in range(n_batches):
                idx = order[b * config.batch_size:(b + 1) * config.batch_size]
                real = ad.Tensor(values[idx])
                c_real = ad.Tensor(np.stack([cond_cache[labels[i]] for i in idx], axis=0))

                d_loss = discriminator_loss(disc, gen, real, c_real,
                                            noise(), synth_conditions())
                opt_d.zero_grad()
                ad.backward(d_loss)
                opt_d.step()

                g_loss = generator_loss(disc, gen, noise(), synth_conditions())
                opt_g.zero_grad()
                opt_d.zero_grad()
                ad.backward(g_loss)
                opt_g.step()
                opt_d.zero_grad()  # discard discriminator gradients from the G step

                d_value, g_value = d_loss.item(), g_loss.item()
                if not (np.isfinite(d_value) and np.isfinite(g_value)):
                    record = {"epoch": epoch, "batch": b, "d_loss": d_value, "g_loss": g_value}
                    (out_dir / DIAGNOSTIC_NAME).write_text(
                        json.dumps(record, indent=2) + "\n", encoding="utf-8")
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} batch {b} "
                        f"(d={d_value}, g={g_value}); see {out_dir / DIAGNOSTIC_NAME}"
                    )
                d_total += d_value
                g_total += g_value

            d_epoch = d_total / n_batches
            g_epoch = g_total / n_batches
            wall_ms = (time.perf_counter() - tic) * 1000.0
            log.write(f"{epoch},{d_epoch!r},{g_epoch!r},{wall_ms:.1f}\n")

            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                path = checkpoint_path(out_dir, epoch)
                extra = dict(extra_base, epoch=epoch, d_loss=d_epoch, g_loss=g_epoch)
                ad.save_params(path, gen.parameters() + disc.parameters(), extra=extra)
                if path not in checkpoints:
                    checkpoints.append(path)

    logger.info("trained %d epochs (%d checkpoints) into %s", config.epochs,
                len(checkpoints), out_dir)
    return TrainResult(
        checkpoint_paths=checkpoints,
        log_path=log_path,
        epochs_run=config.epochs,
        final_d_loss=d_epoch,
        final_g_loss=g_epoch,
    )


def load_generator(checkpoint: str | Path) -> tuple[Generator, dict]:
    """Rebuild a generator from a checkpoint; returns it with the extra block."""
    try:
        arrays, extra = ad.load_params(checkpoint)
    except ad.CheckpointError as exc:
        raise SynthesisError(str(exc)) from exc
    try:
        cfg = extra["config"]
        gen = Generator(extra["n_channels"], cfg["hidden"], cfg["latent_dim"],
                        np.random.default_rng(0))
    except KeyError as exc:
        raise SynthesisError(f"{checkpoint}: checkpoint extra block is missing {exc}") from exc
    try:
        ad.assign_params(gen.parameters(), arrays)
    except ad.CheckpointError as exc:
        raise SynthesisError(str(exc)) from exc
    return gen, extra


def synthesize(checkpoint: str | Path, label: ClassLabel, n: int, seed: int) -> Dataset:
    """Draw ``n`` synthetic samples of class ``label`` from a saved generator.

    Output values are in the scaled space the model was trained in (strictly
    inside (-1, 1) via the tanh head); every sample is flagged
    ``synthetic=True``.  ``n=0`` yields a valid empty dataset.
    """
    if n < 0:
        raise SynthesisError(f"n must be >= 0, got {n}")
    gen, extra = load_generator(checkpoint)
    n_steps = extra["seq_len"]
    channels = tuple(extra["channels"])
    epoch = extra.get("epoch", 0)
    if n == 0:
        return Dataset(samples=[], channels=channels)

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, n_steps, gen.latent_dim))
    cond = np.broadcast_to(one_hot(label, n_steps).one_hot, (n, n_steps, N_CLASSES)).copy()
    with ad.no_grad():
        out = gen(ad.Tensor(z), ad.Tensor(cond)).values

    samples = [
        MvtsSample(
            values=out[i],
            label=label,
            id=f"synth_{label.value.lower()}_e{epoch}_{i}",
            missing_mask=np.zeros_like(out[i], dtype=bool),
            synthetic=True,
        )
        for i in range(n)
    ]
    return Dataset(samples=samples, channels=channels)
