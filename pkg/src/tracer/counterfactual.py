"""Class-conditional autoencoder-GAN for counterfactual generation.

The generator encodes ``x`` to a latent ``z_x``, appends the one-hot target
``o(y*)`` and decodes ``x* = D([z_x; o(y*)])``. Training minimizes
``(1 - lam) * L_gan + lam * d(x*, x_nn)`` where ``x_nn`` is a stored sample
of the target class.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from tracer.data.dataset import LabeledDataset
from tracer.data.report import decode_tensor, encode_tensor, read_document, write_document
from tracer.engine.layers import (
    Conv2d, ConvTranspose2d, Dense, Flatten, LeakyReLU, ReLU, Reshape, Sigmoid,
)
from tracer.engine.losses import bce_with_logits, distance
from tracer.engine.model import TappedModel
from tracer.engine.optim import Adam
from tracer.engine.serialize import ContainerError, build_model, model_arrays, model_header, pack, unpack
from tracer.pipeline import ExplainSettings, explain_sample

log = logging.getLogger(__name__)

CFGAN_VERSION = "tracer-cfgan/1"
CONTRASTIVE_VERSION = "tracer-contrastive/1"


def one_hot(label: int, k: int) -> np.ndarray:
    if not 0 <= int(label) < k:
        raise ValueError(f"label {label} outside [0, {k})")
    out = np.zeros(k)
    out[int(label)] = 1.0
    return out


@dataclass(frozen=True)
class CfLossConfig:
    lam: float = 0.5
    metric: str = "l2"
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.metric not in ("l1", "l2"):
            raise ValueError(f"metric must be l1 or l2, got {self.metric!r}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class CfGanConfig:
    seed: int
    loss: CfLossConfig = CfLossConfig()
    rho: float = 0.10
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    latent: int = 8
    hidden: int = 16
    log_every: int = 50
    ema: float = 0.99  # generator weight averaging; 0 disables

    def __post_init__(self) -> None:
        if not 0.0 <= self.ema < 1.0:
            raise ValueError(f"ema must lie in [0, 1), got {self.ema}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.steps < 1 or self.batch_size < 1 or self.latent < 1:
            raise ValueError("steps, batch_size and latent must be positive")


class NeighborIndex:
    """Linear-scan nearest neighbour over a stored training subset."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, metric: str = "l2") -> None:
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.metric = metric
        self._flat = self.features.reshape(len(self.features), -1)

    def _dist(self, q: np.ndarray, rows: np.ndarray) -> np.ndarray:
        diff = rows - q.reshape(1, -1)
        if self.metric == "l1":
            return np.abs(diff).sum(axis=1)
        return np.sqrt((diff**2).sum(axis=1))

    def nearest(self, query: np.ndarray, label: int) -> tuple[int, np.ndarray]:
        """Index and row of the closest stored sample with ``label`` (ties: lowest index)."""
        cand = np.flatnonzero(self.labels == label)
        if cand.size == 0:
            raise LookupError(f"no stored sample of class {label}")
        d = self._dist(np.asarray(query, dtype=np.float64), self._flat[cand])
        i = int(cand[int(np.argmin(d))])
        return i, self.features[i]

    def nearest_batch(self, queries: np.ndarray, labels: Sequence[int]) -> np.ndarray:
        return np.stack([self.nearest(q, int(l))[1] for q, l in zip(queries, labels)])


@dataclass
class CfGenerator:
    encoder: TappedModel
    decoder: TappedModel
    latent: int
    classes: int
    discriminator: TappedModel | None = None
    trained: bool = False
    curve: list[dict[str, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.decoder.input_shape != (self.latent + self.classes,):
            raise ValueError(
                f"decoder consumes {self.decoder.input_shape}, expected ({self.latent + self.classes},)"
            )

    def augment(self, z: np.ndarray, targets: Sequence[int]) -> np.ndarray:
        return np.hstack([z, np.stack([one_hot(t, self.classes) for t in targets])])

    def __call__(self, x: np.ndarray, targets: Sequence[int]) -> np.ndarray:
        return self.decoder(self.augment(self.encoder(x), targets))

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f"enc.{k}": v for k, v in self.encoder.parameters().items()}
        params.update({f"dec.{k}": v for k, v in self.decoder.parameters().items()})
        return params


def build_networks(input_shape: tuple[int, ...], classes: int, latent: int, hidden: int,
                   seed: int) -> tuple[TappedModel, TappedModel, TappedModel]:
    """Encoder, decoder and discriminator for image (C,H,W) or flat inputs.

    The discriminator emits one realism score per class; ``D(x, y)`` is the
    score in column ``y``.
    """
    rng_seeds = np.random.SeedSequence(seed).generate_state(3)
    if len(input_shape) == 3:
        c, h, w = input_shape
        if h % 4 or w % 4:
            raise ValueError(f"image generator needs H and W divisible by 4, got {input_shape}")
        ch = max(hidden // 4, 4)
        h4, w4 = h // 4, w // 4
        enc = [Conv2d(c, ch, 3, padding=1), LeakyReLU(), Conv2d(ch, ch, 3, padding=1), LeakyReLU(),
               Conv2d(ch, 2 * ch, 3, stride=2, padding=1), LeakyReLU(),
               Conv2d(2 * ch, 2 * ch, 3, stride=2, padding=1), LeakyReLU(),
               Flatten(), Dense(2 * ch * h4 * w4, latent)]
        dec = [Dense(latent + classes, 2 * ch * h4 * w4), ReLU(), Reshape((2 * ch, h4, w4)),
               ConvTranspose2d(2 * ch, ch, 4, stride=2, padding=1), ReLU(),
               ConvTranspose2d(ch, ch, 4, stride=2, padding=1), ReLU(),
               Conv2d(ch, c, 3, padding=1), Sigmoid()]
        disc = [Conv2d(c, ch, 3, stride=2, padding=1), LeakyReLU(), Flatten(),
                Dense(ch * (h // 2) * (w // 2), hidden), LeakyReLU(), Dense(hidden, classes)]
    else:
        d = int(np.prod(input_shape))
        enc = ([Flatten()] if len(input_shape) > 1 else []) + [
            Dense(d, hidden), LeakyReLU(), Dense(hidden, hidden), LeakyReLU(), Dense(hidden, latent)]
        dec = [Dense(latent + classes, hidden), ReLU(), Dense(hidden, hidden), ReLU(), Dense(hidden, d), Sigmoid()]
        if len(input_shape) > 1:
            dec.append(Reshape(input_shape))
        disc = ([Flatten()] if len(input_shape) > 1 else []) + [
            Dense(d, hidden), LeakyReLU(), Dense(hidden, hidden), LeakyReLU(), Dense(hidden, classes)]
    encoder = TappedModel(enc, input_shape).init_params(int(rng_seeds[0]))
    decoder = TappedModel(dec, (latent + classes,)).init_params(int(rng_seeds[1]))
    discriminator = TappedModel(disc, input_shape).init_params(int(rng_seeds[2]))
    return encoder, decoder, discriminator


def _select(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return logits[np.arange(len(labels)), labels][:, None]


def _scatter(grad: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = grad[:, 0]
    return out


def discriminator_loss(disc: TappedModel, x: np.ndarray, labels: np.ndarray,
                       real: bool) -> tuple[float, dict[str, np.ndarray]]:
    tape = disc.tape(x)
    value, g = bce_with_logits(_select(tape.output, labels), 1.0 if real else 0.0)
    tape.backward(_scatter(g, labels, tape.output.shape[1]))
    return value, tape.grads


class CfTrainingDivergedError(RuntimeError):
    def __init__(self, message: str, checkpoint: CfGenerator | None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint


def generator_step(gen: CfGenerator, disc: TappedModel, x: np.ndarray, targets: np.ndarray,
                   neighbors: np.ndarray, loss: CfLossConfig
                   ) -> tuple[dict[str, float], dict[str, np.ndarray], np.ndarray]:
    """Generator loss terms and gradients for one batch.

    Returns (loss terms, gradients keyed like ``gen.parameters()``, x*).
    """
    enc_tape = gen.encoder.tape(x)
    z = gen.augment(enc_tape.output, targets)
    dec_tape = gen.decoder.tape(z)
    x_star = dec_tape.output
    prox, g_prox = distance(x_star, neighbors, loss.metric)
    terms = {"proximity": prox}
    grad_x = loss.lam * g_prox
    if loss.lam < 1.0:
        d_tape = disc.tape(x_star)
        targets = np.asarray(targets)
        adv, g_logit = bce_with_logits(_select(d_tape.output, targets), 1.0)
        grad_x = grad_x + (1.0 - loss.lam) * d_tape.backward(_scatter(g_logit, targets, d_tape.output.shape[1]))
        terms["adversarial"] = adv
        terms["total"] = (1.0 - loss.lam) * adv + loss.lam * prox
    else:
        terms["adversarial"] = float("nan")
        terms["total"] = prox
    grad_z = dec_tape.backward(grad_x)
    enc_tape.backward(grad_z[:, :gen.latent])
    grads = {f"enc.{k}": v for k, v in enc_tape.grads.items()}
    grads.update({f"dec.{k}": v for k, v in dec_tape.grads.items()})
    return terms, grads, x_star


def _sample_subset(dataset: LabeledDataset, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Random rho-fraction of the training set with every class represented."""
    n = len(dataset)
    size = max(int(round(rho * n)), 2 * dataset.class_count)
    idx = np.sort(rng.choice(n, size=min(size, n), replace=False))
    for c in range(dataset.class_count):
        if not np.any(dataset.labels[idx] == c):
            members = np.flatnonzero(dataset.labels == c)
            if members.size:
                idx = np.sort(np.append(idx, members[0]))
    return idx


def train_cf_gan(dataset: LabeledDataset, classifier: TappedModel | None,
                 config: CfGanConfig) -> CfGenerator:
    """Alternating discriminator/generator Adam updates on a rho-subset.

    Targets are drawn uniformly from the classes other than the source label;
    ``x_nn`` is the stored target-class sample nearest to the source ``x``.
    The classifier, when given, is only used to log target validity.
    """
    k = dataset.class_count
    if k < 2:
        raise ValueError("counterfactual training needs at least two classes")
    rng = np.random.default_rng(config.seed)
    subset = dataset.subset(_sample_subset(dataset, config.rho, rng))
    index = NeighborIndex(subset.features, subset.labels, config.loss.metric)
    enc, dec, disc = build_networks(dataset.input_shape, k, config.latent, config.hidden, config.seed)
    gen = CfGenerator(enc, dec, config.latent, k, disc)
    g_opt = Adam(gen.parameters(), lr=config.lr)
    d_opt = Adam(disc.parameters(), lr=config.lr)
    n = len(subset)
    # nearest neighbours depend only on (source, target): precompute once
    nn_cache = {(i, t): index.nearest(subset.features[i], t)[1]
                for i in range(n) for t in range(k) if t != subset.labels[i]}
    live = gen.parameters()
    averaged = {k: v.copy() for k, v in live.items()}
    checkpoint = copy.deepcopy(gen)
    for step in range(config.steps):
        src = rng.integers(0, n, size=config.batch_size)
        x = subset.features[src]
        offsets = rng.integers(1, k, size=config.batch_size)
        targets = (subset.labels[src] + offsets) % k
        neighbors = np.stack([nn_cache[(int(i), int(t))] for i, t in zip(src, targets)])

        x_star = gen(x, targets)
        ridx = rng.integers(0, n, size=config.batch_size)
        loss_real, grads = discriminator_loss(disc, subset.features[ridx], subset.labels[ridx], True)
        loss_fake, fake_grads = discriminator_loss(disc, x_star, targets, False)
        d_opt.step({key: g + fake_grads[key] for key, g in grads.items()})

        terms, g_grads, _ = generator_step(gen, disc, x, targets, neighbors, config.loss)
        if not all(np.isfinite(v) for key, v in terms.items() if key != "adversarial" or config.loss.lam < 1):
            raise CfTrainingDivergedError(f"non-finite generator loss at step {step}", checkpoint)
        g_opt.step(g_grads)
        for key, value in live.items():
            averaged[key] *= config.ema
            averaged[key] += (1.0 - config.ema) * value

        if step % config.log_every == 0 or step == config.steps - 1:
            entry = {"step": float(step), "proximity": terms["proximity"], "total": terms["total"],
                     "adversarial": terms["adversarial"], "discriminator": loss_real + loss_fake}
            if classifier is not None:
                entry["validity"] = float((classifier.predict(x_star) == targets).mean())
            gen.curve.append(entry)
            checkpoint = copy.deepcopy(gen)
    if config.ema > 0:
        for key, value in live.items():
            value[...] = averaged[key]
    gen.trained = True
    return gen


def generate(gen: CfGenerator, x: np.ndarray, target: int, count: int = 1, sigma: float = 0.0,
             seed: int = 0) -> np.ndarray:
    """``count`` counterfactuals decoded from ``z_x + delta``, ``delta ~ N(0, sigma^2)``."""
    if not gen.trained:
        raise RuntimeError("generator has not been trained")
    if count < 1:
        raise ValueError("count must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    z = gen.encoder(x[None])
    rng = np.random.default_rng(seed)
    delta = rng.normal(0.0, sigma, size=(count, gen.latent)) if sigma > 0 else np.zeros((count, gen.latent))
    return gen.decoder(gen.augment(z + delta, [target] * count))


# --- persistence -----------------------------------------------------------

def save_generator(gen: CfGenerator, path: str | Path, extra: dict[str, Any] | None = None) -> None:
    header: dict[str, Any] = {
        "version": CFGAN_VERSION,
        "latent": gen.latent,
        "classes": gen.classes,
        "trained": gen.trained,
        "encoder": model_header(gen.encoder),
        "decoder": model_header(gen.decoder),
    }
    arrays = model_arrays(gen.encoder) + model_arrays(gen.decoder)
    if gen.discriminator is not None:
        header["discriminator"] = model_header(gen.discriminator)
        arrays += model_arrays(gen.discriminator)
    if extra:
        header["extra"] = extra
    Path(path).write_bytes(pack(header, arrays))


def load_generator(path: str | Path) -> CfGenerator:
    header, blob = unpack(Path(path).read_bytes())
    if header.get("version") != CFGAN_VERSION:
        raise ContainerError(f"expected version {CFGAN_VERSION}, found {header.get('version')!r}")
    enc, used = build_model(header["encoder"], blob)
    blob = blob[used:]
    dec, used = build_model(header["decoder"], blob)
    blob = blob[used:]
    disc = None
    if "discriminator" in header:
        disc, used = build_model(header["discriminator"], blob)
        blob = blob[used:]
    if len(blob):
        raise ContainerError(f"{len(blob)} trailing bytes after parameters")
    return CfGenerator(enc, dec, header["latent"], header["classes"], disc, header["trained"])


# --- contrastive analysis --------------------------------------------------

@dataclass
class ContrastiveReport:
    desired: int
    original_prediction: int
    counterfactual_prediction: int
    effective: bool
    structurally_equal: bool
    difference: np.ndarray
    original: dict[str, Any]
    counterfactual: dict[str, Any]

    @property
    def flags(self) -> list[str]:
        return [] if self.effective else ["ineffective counterfactual"]

    def to_payload(self) -> dict[str, Any]:
        return {
            "desired": self.desired,
            "original_prediction": self.original_prediction,
            "counterfactual_prediction": self.counterfactual_prediction,
            "effective": self.effective,
            "structurally_equal": self.structurally_equal,
            "flags": self.flags,
            "difference": encode_tensor(self.difference),
            "original": self.original,
            "counterfactual": self.counterfactual,
        }

    @classmethod
    def from_payload(cls, p: dict[str, Any]) -> "ContrastiveReport":
        return cls(p["desired"], p["original_prediction"], p["counterfactual_prediction"],
                   p["effective"], p["structurally_equal"], decode_tensor(p["difference"]),
                   p["original"], p["counterfactual"])

    def save(self, path: str | Path) -> None:
        write_document(path, CONTRASTIVE_VERSION, self.to_payload())

    @classmethod
    def load(cls, path: str | Path) -> "ContrastiveReport":
        return cls.from_payload(read_document(path, CONTRASTIVE_VERSION))


def _side(expl) -> dict[str, Any]:
    return {
        "predicted": expl.predicted,
        "attribution": encode_tensor(expl.attribution.aggregate_map()),
        "node_effects": {f"G{g + 1}": encode_tensor(expl.attribution.node_map(g))
                         for g in expl.attribution.node_ids},
        "ace": expl.attribution.ace_by_node(),
        "graph": expl.graph.to_dict(),
    }


def contrastive_report(classifier: TappedModel, x: np.ndarray, x_star: np.ndarray, desired: int,
                       settings: ExplainSettings, baseline: float | np.ndarray,
                       feature_names: Sequence[str] | None = None) -> ContrastiveReport:
    """Side-by-side causal analysis of a misclassified input and its counterfactual."""
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64).reshape(x.shape)
    plain = ExplainSettings(settings.plan, settings.epsilon, settings.kernel, settings.seed,
                            settings.top_features, find_mask=False)
    a = explain_sample(classifier, x, plain, baseline, feature_names)
    b = explain_sample(classifier, x_star, plain, baseline, feature_names)
    return ContrastiveReport(
        desired=int(desired),
        original_prediction=a.predicted,
        counterfactual_prediction=b.predicted,
        effective=b.predicted == int(desired),
        structurally_equal=a.graph.same_structure(b.graph),
        difference=x_star - x,
        original=_side(a),
        counterfactual=_side(b),
    )
