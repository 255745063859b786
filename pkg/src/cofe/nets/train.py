"""Training procedures: GAN, encoder inversion, predictors, AE fallback.

All loops are seeded and single-threaded; rerunning with the same corpus and
config reproduces identical weights bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import engine as eg
from ..errors import NonFiniteError, TrainingDiverged, ValidationError
from ..util import rel_rmse
from .models import TASK_AF, Discriminator, Encoder, Generator, Predictor, set_params


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 40
    early_stop_patience: int = 5
    seed: int = 0
    latent_dim: int = 32
    noise_prior: str = "standard_normal"  # z ~ N(0, I_d)
    adam_beta1: float = 0.9
    gan_equilibrium_band: tuple = (0.45, 0.75)
    # reconstruction losses compare average-pooled pyramids as well as raw
    # samples: coarse scales supply the long-range gradient that aligns beats
    recon_scales: tuple = (1, 5, 25, 125)
    lr_final: float = None  # linear decay target; None keeps lr constant
    # fraction of encoder-training batches drawn from the generator prior
    # (x = G(z), z ~ N(0, I)) instead of the corpus: the encoder must invert
    # the generator on its own samples, and those are free to synthesize
    encoder_sample_mix: float = 0.5

    def epoch_lr(self, epoch):
        if self.lr_final is None or self.max_epochs <= 1:
            return self.lr
        frac = epoch / (self.max_epochs - 1)
        return self.lr + (self.lr_final - self.lr) * frac

    def validate(self):
        for name in ("lr", "batch_size", "max_epochs", "early_stop_patience",
                     "latent_dim"):
            if getattr(self, name) <= 0:
                raise ValidationError(name, "must be positive")


@dataclass
class History:
    epochs: list = field(default_factory=list)
    stopped_early: bool = False
    metadata: dict = field(default_factory=dict)


def _epoch_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if idx.size >= 2:  # batchnorm needs more than one row
            yield idx


def _collect_grads(tensors):
    grads = {}
    for name, t in tensors.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        t.grad = None
    return grads


def _apply(tensors, new_values):
    for name, t in tensors.items():
        t.data = new_values[name]


def _snapshot(model):
    return {k: v.copy() for k, v in model.state().items()}


def eval_chunked(fn, x, chunk=256):
    outs = [fn(x[i:i + chunk]) for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=0)


def freeze(model):
    for t in model.trainable().values():
        t.requires_grad = False
    return model


def unfreeze(model):
    for t in model.trainable().values():
        t.requires_grad = True
    return model


def _signals(corpus, split):
    _, x = corpus.signals(split)
    return x[:, None, :]  # (N, 1, L)


def make_recon_loss(scales):
    """Sum of MSEs between non-overlapping average-pool pyramids."""
    kernels = {}
    for k in scales:
        if k > 1:
            kernels[k] = eg.Tensor(np.full((1, 1, k), 1.0 / k, dtype=np.float32))

    def loss(pred, target):
        total = None
        for k in scales:
            if k == 1:
                term = eg.mse(pred, target)
            else:
                term = eg.mse(eg.conv1d(pred, kernels[k], stride=k),
                              eg.conv1d(target, kernels[k], stride=k))
            total = term if total is None else eg.add(total, term)
        return total

    return loss


# -- predictors ----------------------------------------------------------------

def train_predictor(corpus, task, config):
    """Train the task predictor; returns (model, history with test metric)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    model = Predictor(task, rng=rng)
    x_train = _signals(corpus, "train")
    x_val = _signals(corpus, "val")
    x_test = _signals(corpus, "test")
    y_train = corpus.labels(task, "train")
    y_val = corpus.labels(task, "val")
    y_test = corpus.labels(task, "test")
    if len(y_train) == 0:
        raise ValidationError("corpus", f"no labels for task {task}")

    tensors = model.trainable()
    opt = eg.AdamState()
    history = History(metadata={"task": task})
    best_val, best_state, bad = np.inf, _snapshot(model), 0

    def batch_loss(idx, training):
        xb = eg.Tensor(x_train[idx])
        out = model.forward(xb, training=training)
        if task == TASK_AF:
            return eg.cross_entropy(out, y_train[idx])
        pred = eg.sigmoid(out)
        return eg.mse(pred, eg.Tensor(y_train[idx][:, None]))

    def val_loss():
        if task == TASK_AF:
            logits = eval_chunked(
                lambda xb: model.forward(eg.Tensor(xb)).data, x_val)
            z = logits - logits.max(axis=1, keepdims=True)
            lse = np.log(np.exp(z).sum(axis=1))
            return float(np.mean(lse - z[np.arange(len(y_val)), y_val]))
        preds = eval_chunked(
            lambda xb: model.predict(eg.Tensor(xb)).data, x_val)[:, 0]
        return float(np.mean((preds - y_val) ** 2))

    try:
        for epoch in range(config.max_epochs):
            total, count = 0.0, 0
            lr = config.epoch_lr(epoch)
            for idx in _epoch_batches(len(x_train), config.batch_size, rng):
                loss = batch_loss(idx, training=True)
                eg.backward(loss)
                grads = _collect_grads(tensors)
                _apply(tensors, eg.adam_step(
                    {k: t.data for k, t in tensors.items()}, grads, opt,
                    lr=lr, beta1=config.adam_beta1))
                total += loss.item() * len(idx)
                count += len(idx)
            vloss = val_loss()
            history.epochs.append({"train_loss": total / max(count, 1),
                                   "val_loss": vloss})
            if vloss < best_val - 1e-6:
                best_val, best_state, bad = vloss, _snapshot(model), 0
            else:
                bad += 1
                if bad >= config.early_stop_patience:
                    history.stopped_early = True
                    break
    except NonFiniteError as exc:
        raise TrainingDiverged(f"predictor training diverged: {exc}",
                               last_good=best_state) from exc

    model.load(best_state)
    if task == TASK_AF:
        probs = eval_chunked(lambda xb: model.predict(eg.Tensor(xb)).data, x_test)
        metric = float(np.mean(np.argmax(probs, axis=1) == y_test))
        history.metadata["test_accuracy"] = metric
    else:
        preds = eval_chunked(lambda xb: model.predict(eg.Tensor(xb)).data,
                             x_test)[:, 0]
        metric = float(np.mean(np.abs(preds - y_test)))
        history.metadata["test_mae"] = metric
    return model, history


# -- encoder (generator frozen) -------------------------------------------------

def train_encoder(corpus, generator, config, init_encoder=None):
    """Minimize reconstruction error x -> G(E(x)) with G fixed.

    Besides corpus batches, a configurable fraction of batches are generator
    samples x = G(z), z from the latent prior: the encoder has to invert the
    generator on its own manifold, and those pairs cost nothing to make.
    Early stopping tracks a blend of corpus-validation and prior-sample
    reconstruction error. Returns (encoder, history); `init_encoder`
    warm-starts from an existing encoder (used by the autoencoder fallback).
    """
    config.validate()
    rng = np.random.default_rng(config.seed + 1)
    encoder = init_encoder if init_encoder is not None else Encoder(
        latent_dim=generator.latent_dim, n_leads=generator.n_leads, rng=rng)
    freeze(generator)
    unfreeze(encoder)
    x_train = _signals(corpus, "train")
    x_val = _signals(corpus, "val")
    d = generator.latent_dim
    probe_z = np.random.default_rng(config.seed + 7) \
        .standard_normal((128, d)).astype(np.float32)
    x_probe = eval_chunked(lambda zb: generator(eg.Tensor(zb)).data, probe_z,
                           chunk=64)

    tensors = encoder.trainable()
    opt = eg.AdamState()
    history = History(metadata={"objective": "reconstruction"})
    best_val, best_state, bad = np.inf, _snapshot(encoder), 0
    recon_loss = make_recon_loss(config.recon_scales)

    def reconstruct(xb):
        latents = encoder(eg.Tensor(xb)) if not isinstance(xb, eg.Tensor) \
            else encoder(xb)
        return generator(latents)

    def val_metrics():
        recon = eval_chunked(lambda xb: reconstruct(xb).data, x_val, chunk=128)
        corpus_rel = float(np.mean(rel_rmse(recon, x_val)))
        recon_p = eval_chunked(lambda xb: reconstruct(xb).data, x_probe,
                               chunk=128)
        prior_rel = float(np.mean(rel_rmse(recon_p, x_probe)))
        return corpus_rel, prior_rel

    mix = min(max(config.encoder_sample_mix, 0.0), 1.0)
    try:
        for epoch in range(config.max_epochs):
            total, count = 0.0, 0
            lr = config.epoch_lr(epoch)
            for idx in _epoch_batches(len(x_train), config.batch_size, rng):
                if rng.random() < mix:
                    z = rng.standard_normal((len(idx), d)).astype(np.float32)
                    xb = eg.Tensor(generator(eg.Tensor(z)).data)
                else:
                    xb = eg.Tensor(x_train[idx])
                loss = recon_loss(reconstruct(xb), xb)
                eg.backward(loss)
                grads = _collect_grads(tensors)
                _apply(tensors, eg.adam_step(
                    {k: t.data for k, t in tensors.items()}, grads, opt,
                    lr=lr, beta1=config.adam_beta1))
                total += loss.item() * len(idx)
                count += len(idx)
            corpus_rel, prior_rel = val_metrics()
            score = (1 - mix) * corpus_rel + mix * prior_rel
            history.epochs.append({"train_loss": total / max(count, 1),
                                   "val_rel_rmse": corpus_rel,
                                   "prior_rel_rmse": prior_rel})
            if score < best_val - 1e-6:
                best_val, best_state, bad = score, _snapshot(encoder), 0
            else:
                bad += 1
                if bad >= config.early_stop_patience:
                    history.stopped_early = True
                    break
    except NonFiniteError as exc:
        raise TrainingDiverged(f"encoder training diverged: {exc}",
                               last_good=best_state) from exc
    finally:
        unfreeze(generator)

    encoder.load(best_state)
    corpus_rel, prior_rel = val_metrics()
    history.metadata["val_rel_rmse"] = corpus_rel
    history.metadata["prior_rel_rmse"] = prior_rel
    return encoder, history


# -- GAN -------------------------------------------------------------------------

def train_gan(corpus, config):
    """Alternating 1:1 non-saturating GAN training.

    Early-stops once validation discriminator accuracy stays inside the
    equilibrium band for `early_stop_patience` consecutive epochs. On NaN,
    raises TrainingDiverged carrying the last epoch-end checkpoint.
    """
    config.validate()
    rng = np.random.default_rng(config.seed + 2)
    generator = Generator(latent_dim=config.latent_dim, rng=rng)
    discriminator = Discriminator(rng=rng)
    x_train = _signals(corpus, "train")
    x_val = _signals(corpus, "val")
    if len(x_train) < 500:
        raise ValidationError("corpus", "GAN training expects >= 500 training "
                                        f"records, got {len(x_train)}")

    g_tensors = generator.trainable()
    d_tensors = discriminator.trainable()
    g_opt, d_opt = eg.AdamState(), eg.AdamState()
    history = History(metadata={"objective": "gan_non_saturating"})
    lo, hi = config.gan_equilibrium_band
    last_good = {"generator": _snapshot(generator),
                 "discriminator": _snapshot(discriminator)}
    in_band = 0

    def d_accuracy():
        z = rng.standard_normal((len(x_val), config.latent_dim)).astype(np.float32)
        fake = eval_chunked(lambda zb: generator(eg.Tensor(zb)).data, z, chunk=128)
        real_logit = eval_chunked(
            lambda xb: discriminator(eg.Tensor(xb)).data, x_val, chunk=128)
        fake_logit = eval_chunked(
            lambda xb: discriminator(eg.Tensor(xb)).data, fake, chunk=128)
        return float((np.mean(real_logit > 0) + np.mean(fake_logit <= 0)) / 2)

    try:
        for epoch in range(config.max_epochs):
            d_total, g_total, count = 0.0, 0.0, 0
            for idx in _epoch_batches(len(x_train), config.batch_size, rng):
                xb = eg.Tensor(x_train[idx])
                z = rng.standard_normal((len(idx), config.latent_dim)) \
                    .astype(np.float32)
                freeze(generator)  # fake batch for D: no graph through G
                fake = generator(eg.Tensor(z))
                unfreeze(generator)

                d_real = discriminator(xb)
                d_fake = discriminator(fake)
                d_loss = eg.add(eg.mean(eg.softplus(eg.neg(d_real))),
                                eg.mean(eg.softplus(d_fake)))
                eg.backward(d_loss)
                _apply(d_tensors, eg.adam_step(
                    {k: t.data for k, t in d_tensors.items()},
                    _collect_grads(d_tensors), d_opt, lr=config.lr, beta1=0.5))

                z = rng.standard_normal((len(idx), config.latent_dim)) \
                    .astype(np.float32)
                g_loss = eg.mean(eg.softplus(eg.neg(
                    discriminator(generator(eg.Tensor(z))))))
                eg.backward(g_loss)
                g_grads = _collect_grads(g_tensors)
                _collect_grads(d_tensors)  # discard D grads from the G pass
                _apply(g_tensors, eg.adam_step(
                    {k: t.data for k, t in g_tensors.items()}, g_grads, g_opt,
                    lr=config.lr, beta1=0.5))

                d_total += d_loss.item() * len(idx)
                g_total += g_loss.item() * len(idx)
                count += len(idx)

            acc = d_accuracy()
            history.epochs.append({"d_loss": d_total / count,
                                   "g_loss": g_total / count,
                                   "val_d_accuracy": acc})
            last_good = {"generator": _snapshot(generator),
                         "discriminator": _snapshot(discriminator)}
            in_band = in_band + 1 if lo <= acc <= hi else 0
            if in_band >= config.early_stop_patience:
                history.stopped_early = True
                break
    except NonFiniteError as exc:
        raise TrainingDiverged(f"GAN training diverged: {exc}",
                               last_good=last_good) from exc

    return generator, discriminator, history


# -- autoencoder fallback ---------------------------------------------------------

def train_autoencoder(corpus, config):
    """Joint encoder/decoder reconstruction training (the documented fallback
    when GAN training does not yield an invertible generator).

    After training, train-split latents are whitened by folding an exact
    affine reparameterization into the encoder output and generator input
    layers, so latent draws from N(0, I) land on the learned manifold.
    """
    config.validate()
    rng = np.random.default_rng(config.seed + 3)
    generator = Generator(latent_dim=config.latent_dim, rng=rng)
    encoder = Encoder(latent_dim=config.latent_dim, rng=rng)
    x_train = _signals(corpus, "train")
    x_val = _signals(corpus, "val")

    tensors = {f"g.{k}": t for k, t in generator.trainable().items()}
    tensors.update({f"e.{k}": t for k, t in encoder.trainable().items()})
    opt = eg.AdamState()
    history = History(metadata={"objective": "autoencoder_reconstruction"})
    best = (np.inf, _snapshot(generator), _snapshot(encoder))
    bad = 0
    recon_loss = make_recon_loss(config.recon_scales)

    def val_rel_rmse():
        recon = eval_chunked(
            lambda xb: generator(encoder(eg.Tensor(xb))).data, x_val, chunk=128)
        return float(np.mean(rel_rmse(recon, x_val)))

    try:
        for epoch in range(config.max_epochs):
            total, count = 0.0, 0
            lr = config.epoch_lr(epoch)
            for idx in _epoch_batches(len(x_train), config.batch_size, rng):
                xb = eg.Tensor(x_train[idx])
                loss = recon_loss(generator(encoder(xb)), xb)
                eg.backward(loss)
                grads = _collect_grads(tensors)
                _apply(tensors, eg.adam_step(
                    {k: t.data for k, t in tensors.items()}, grads, opt,
                    lr=lr, beta1=config.adam_beta1))
                total += loss.item() * len(idx)
                count += len(idx)
            vrel = val_rel_rmse()
            history.epochs.append({"train_mse": total / max(count, 1),
                                   "val_rel_rmse": vrel})
            if vrel < best[0] - 1e-6:
                best, bad = (vrel, _snapshot(generator), _snapshot(encoder)), 0
            else:
                bad += 1
                if bad >= config.early_stop_patience:
                    history.stopped_early = True
                    break
    except NonFiniteError as exc:
        raise TrainingDiverged(f"autoencoder training diverged: {exc}",
                               last_good={"generator": best[1],
                                          "encoder": best[2]}) from exc

    generator.load(best[1])
    encoder.load(best[2])
    whiten_latents(generator, encoder, x_train)
    history.metadata["val_rel_rmse"] = best[0]
    return generator, encoder, history


def whiten_latents(generator, encoder, x_train):
    """Exact reparameterization making train latents zero-mean, identity-cov.

    E'(x) = (E(x) - mu) @ Sigma^-1/2 and G'(w) = G(w @ Sigma^1/2 + mu), folded
    into the encoder's last and generator's first dense layers; the composed
    map G(E(x)) is unchanged bit for bit in exact arithmetic.
    """
    latents = eval_chunked(lambda xb: encoder(eg.Tensor(xb)).data, x_train,
                           chunk=256).astype(np.float64)
    mu = latents.mean(axis=0)
    cov = np.cov(latents, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 1e-8, None)
    sqrt_cov = (vecs * np.sqrt(vals)) @ vecs.T
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T

    w2, b2 = encoder.fc2.w.data.astype(np.float64), encoder.fc2.b.data.astype(np.float64)
    encoder.fc2.w.data = (w2 @ inv_sqrt).astype(np.float32)
    encoder.fc2.b.data = ((b2 - mu) @ inv_sqrt).astype(np.float32)

    v, c = generator.fc.w.data.astype(np.float64), generator.fc.b.data.astype(np.float64)
    generator.fc.w.data = (sqrt_cov @ v).astype(np.float32)
    generator.fc.b.data = (mu @ v + c).astype(np.float32)


def inversion_quality(generator, encoder, n=100, seed=1234):
    """Median relative RMSE of G(E(G(w))) against G(w), w ~ N(0, I)."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, generator.latent_dim)).astype(np.float32)
    x = eval_chunked(lambda zb: generator(eg.Tensor(zb)).data, z, chunk=64)
    w = eval_chunked(lambda xb: encoder(eg.Tensor(xb)).data, x, chunk=64)
    x2 = eval_chunked(lambda wb: generator(eg.Tensor(wb)).data, w, chunk=64)
    errors = rel_rmse(x2, x)
    return float(np.median(errors)), errors
