"""End-to-end training pipeline: generator (GAN with documented autoencoder
fallback), encoder, task predictors, persisted task bundles."""

from __future__ import annotations

import os

import numpy as np

from ..errors import TrainingDiverged
from .checkpoint import (
    G_SOURCE_AUTOENCODER,
    G_SOURCE_GAN,
    LoadedBundle,
    bundle_from_parts,
    save_checkpoint,
)
from .models import TASKS
from .train import (
    TrainConfig,
    inversion_quality,
    train_autoencoder,
    train_encoder,
    train_gan,
    train_predictor,
)

INVERSION_GATE = 0.15


def train_generator_encoder(corpus, config, g_mode="auto", log=None):
    """Produce (generator, encoder, g_source, info).

    g_mode: 'gan' trains adversarially only; 'ae' goes straight to the
    autoencoder fallback; 'auto' tries the GAN and falls back when the
    trained encoder cannot invert generator samples at the 0.15 gate.
    """
    say = log or (lambda msg: None)
    info = {}
    if g_mode in ("gan", "auto"):
        try:
            say("training generator adversarially")
            generator, discriminator, gan_hist = train_gan(corpus, config)
            say("training encoder against frozen generator")
            encoder, enc_hist = train_encoder(corpus, generator, config)
            median, _ = inversion_quality(generator, encoder,
                                          seed=config.seed + 11)
            info.update(gan_history=gan_hist, encoder_history=enc_hist,
                        inversion_median=median, discriminator=discriminator)
            say(f"gan-path inversion median rel RMSE: {median:.4f}")
            if median <= INVERSION_GATE or g_mode == "gan":
                return generator, encoder, G_SOURCE_GAN, info
            say("inversion gate failed; falling back to autoencoder decoder")
        except TrainingDiverged as exc:
            if g_mode == "gan":
                raise
            say(f"gan path diverged ({exc}); falling back to autoencoder")

    generator, warm_encoder, ae_hist = train_autoencoder(corpus, config)
    encoder, enc_hist = train_encoder(corpus, generator, config,
                                      init_encoder=warm_encoder)
    median, _ = inversion_quality(generator, encoder, seed=config.seed + 11)
    say(f"autoencoder-path inversion median rel RMSE: {median:.4f}")
    info.update(ae_history=ae_hist, encoder_history=enc_hist,
                inversion_median=median)
    info.pop("discriminator", None)
    return generator, encoder, G_SOURCE_AUTOENCODER, info


def train_bundles(corpus, config=None, tasks=TASKS, g_mode="auto",
                  out_dir=None, log=None):
    """Train everything and return {task: LoadedBundle}; optionally persist
    one checkpoint per task under out_dir as <task>.cofe."""
    say = log or (lambda msg: None)
    config = config or TrainConfig()
    generator, encoder, g_source, info = train_generator_encoder(
        corpus, config, g_mode=g_mode, log=log)

    bundles = {}
    for task in tasks:
        say(f"training predictor: {task}")
        predictor, hist = train_predictor(corpus, task, config)
        metric_name = "test_accuracy" if "accuracy" in str(hist.metadata) \
            else "test_mae"
        say(f"  {task}: {hist.metadata}")
        extra = {"inversion_median": info.get("inversion_median", np.nan)}
        if "test_accuracy" in hist.metadata:
            extra["test_accuracy"] = hist.metadata["test_accuracy"]
        if "test_mae" in hist.metadata:
            extra["test_mae"] = hist.metadata["test_mae"]
        bundle = bundle_from_parts(
            generator, encoder, predictor, task, g_source,
            discriminator=info.get("discriminator"), extra_meta=extra)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            path = os.path.join(out_dir, f"{task}.cofe")
            save_checkpoint(bundle, path)
            bundles[task] = LoadedBundle.from_path(path)
            say(f"  saved {path}")
        else:
            loaded = LoadedBundle(bundle)
            bundles[task] = loaded
    return bundles
