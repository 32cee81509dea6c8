"""
Conditional-GAN refinement of coarse reconstructions.

Losses, in the usual binary cross-entropy patch form:

    disc = BCE(D(target | coarse), 1) + BCE(D(G(coarse) | coarse), 0)
    gen  = BCE(D(G(coarse) | coarse), 1) + lambda * L1(G(coarse), target)

The discriminator sees a detached G(coarse), and each optimizer only owns
its own network's parameters.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DatasetError, DimensionError
from app.core.rng import RngStreams
from app.engine import ops
from app.engine.losses import bce_loss, l1_loss
from app.engine.optim import Adam
from app.engine.tensor import DEFAULT_DTYPE, Tensor, no_grad
from app.models.config import PipelineConfig
from app.models.data import RefinePair
from app.networks import cgan as cgan_net
from app.networks.cgan import CganModel
from app.networks.layers import check_frame_size
from app.services.training import EpochLosses, TrainingSession, load_model_state, train_until
from app.storage.checkpoint import load_checkpoint

logger = logging.getLogger(__name__)

MODEL_KIND = cgan_net.MODEL_KIND


@dataclass
class GanLosses:
    gen: Tensor
    gen_adv: Tensor
    gen_l1: Tensor
    disc: Tensor


def _frame_tensor(frame: np.ndarray, dtype) -> Tensor:
    return Tensor((frame if frame.ndim == 4 else frame[None]).astype(dtype), dtype=dtype)


def refine(model: CganModel, coarse: np.ndarray) -> np.ndarray:
    """G(coarse) for one (3, H, W) frame."""
    x = _frame_tensor(coarse, model.param_dtype())
    check_frame_size("refine", x, model.frame_size)
    with no_grad():
        return model.generator(x).data[0]


def discriminator_loss(model: CganModel, coarse: Tensor, target: Tensor, fake: Tensor) -> Tensor:
    real_scores = model.discriminator(target, coarse)
    fake_scores = model.discriminator(fake.detach(), coarse)
    return ops.add(bce_loss(real_scores, 1.0), bce_loss(fake_scores, 0.0))


def generator_loss(model: CganModel, coarse: Tensor, target: Tensor, fake: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    adversarial = bce_loss(model.discriminator(fake, coarse), 1.0)
    l1 = l1_loss(fake, target)
    return ops.add(adversarial, ops.scale(l1, model.lambda_l1)), adversarial, l1


def gan_losses(model: CganModel, pair: RefinePair, fake: Optional[Tensor] = None) -> GanLosses:
    """
    Both objectives for one pair. `fake` replaces G(coarse) when given, which
    lets callers score a known output such as the target itself.
    """
    dtype = model.param_dtype()
    coarse = _frame_tensor(pair.coarse, dtype)
    target = _frame_tensor(pair.target, dtype)
    check_frame_size("gan_losses", coarse, model.frame_size)
    if fake is None:
        fake = model.generator(coarse)
    elif fake.shape != coarse.shape:
        raise DimensionError("gan_losses", "fake", coarse.shape, fake.shape)
    gen, adversarial, l1 = generator_loss(model, coarse, target, fake)
    return GanLosses(gen=gen, gen_adv=adversarial, gen_l1=l1, disc=discriminator_loss(model, coarse, target, fake))


def cgan_architecture(config: PipelineConfig) -> Dict[str, Any]:
    section = config.cgan
    return {
        "frame_size": config.run.frame_size,
        "unet_depth": section.unet_depth,
        "unet_base": section.unet_base,
        "disc_layers": section.disc_layers,
        "disc_base": section.disc_base,
        "lambda_l1": section.lambda_l1,
    }


def build_cgan(architecture: Dict[str, Any], rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> CganModel:
    return CganModel(
        architecture["frame_size"], rng,
        unet_depth=architecture["unet_depth"], unet_base=architecture["unet_base"],
        disc_layers=architecture["disc_layers"], disc_base=architecture["disc_base"],
        lambda_l1=architecture["lambda_l1"], dtype=dtype,
    )


def cgan_session(model: CganModel, architecture: Dict[str, Any], streams: RngStreams, learning_rate: float,
                 beta1: float) -> TrainingSession:
    return TrainingSession(
        kind=MODEL_KIND,
        model=model,
        optimizers={
            "generator": Adam(model.generator.named_parameters("generator."), learning_rate=learning_rate, beta1=beta1),
            "discriminator": Adam(model.discriminator.named_parameters("discriminator."),
                                  learning_rate=learning_rate, beta1=beta1),
        },
        rng=streams.stream(f"train/{MODEL_KIND}/shuffle"),
        architecture=architecture,
    )


def cgan_epoch(session: TrainingSession, pairs: Sequence[RefinePair]) -> EpochLosses:
    """Batch size 1: for every pair, one discriminator step then one generator step."""
    model: CganModel = session.model
    dtype = model.param_dtype()
    g_opt, d_opt = session.optimizers["generator"], session.optimizers["discriminator"]
    totals = {"gen_adv": 0.0, "gen_l1": 0.0, "disc": 0.0}
    for index in session.rng.permutation(len(pairs)):
        pair = pairs[int(index)]
        coarse = _frame_tensor(pair.coarse, dtype)
        target = _frame_tensor(pair.target, dtype)

        d_opt.zero_grad()
        with no_grad():
            fake = model.generator(coarse)
        disc = discriminator_loss(model, coarse, target, fake)
        disc.backward()
        d_opt.step()

        g_opt.zero_grad()
        gen, adversarial, l1 = generator_loss(model, coarse, target, model.generator(coarse))
        gen.backward()
        g_opt.step()
        d_opt.zero_grad()

        totals["disc"] += disc.item()
        totals["gen_adv"] += adversarial.item()
        totals["gen_l1"] += l1.item()
    return {key: value / len(pairs) for key, value in totals.items()}


def session_boundaries(epochs: int, sessions: int) -> List[int]:
    """Epoch count at the end of each session, e.g. 3000 in 3 sessions -> [1000, 2000, 3000]."""
    return [round(epochs * (k + 1) / sessions) for k in range(sessions)]


def train_cgan(session: TrainingSession, pairs: Sequence[RefinePair], epochs: int, sessions: int = 1,
               checkpoint_path: Optional[Path] = None, log_every: int = 10) -> List[EpochLosses]:
    """
    Train to `epochs` total, split into `sessions`. When a checkpoint path is
    given, each session ends by saving it and the next one starts from the
    saved file.
    """
    if not pairs:
        raise DatasetError("cGAN training needs at least one refinement pair")
    for boundary in session_boundaries(epochs, max(1, sessions)):
        if boundary <= session.epoch:
            continue
        train_until(session, boundary, lambda s: cgan_epoch(s, pairs), log_every, primary="gen_l1")
        if checkpoint_path is not None:
            session.save(checkpoint_path)
            if boundary < epochs:
                session.restore(load_checkpoint(checkpoint_path, expected_kind=MODEL_KIND))
                logger.info("cGAN session ended at epoch %d; resuming from %s", boundary, checkpoint_path)
    return session.trace


class RefinerService:
    def __init__(self, config: PipelineConfig, streams: Optional[RngStreams] = None):
        self.config = config
        self.streams = streams or RngStreams(config.run.seed)

    def new_session(self, init_stream: str = f"init/{MODEL_KIND}") -> TrainingSession:
        architecture = cgan_architecture(self.config)
        model = build_cgan(architecture, self.streams.stream(init_stream))
        section = self.config.cgan
        return cgan_session(model, architecture, self.streams, section.learning_rate, section.beta1)

    def train(self, pairs: Sequence[RefinePair], checkpoint_path: Optional[Path] = None,
              resume: Optional[Path] = None, init_stream: str = f"init/{MODEL_KIND}") -> Tuple[TrainingSession, List[EpochLosses]]:
        section = self.config.cgan
        if len(pairs) > section.max_pairs:
            logger.info("Using the first %d of %d refinement pairs", section.max_pairs, len(pairs))
            pairs = list(pairs)[:section.max_pairs]
        session = self.new_session(init_stream)
        if resume is not None:
            session.restore(load_model_state(resume, MODEL_KIND))
        trace = train_cgan(session, pairs, section.epochs, section.sessions, checkpoint_path, self.config.run.log_every)
        return session, trace

    @staticmethod
    def load(path: Union[str, Path]) -> CganModel:
        checkpoint = load_model_state(path, MODEL_KIND)
        model = build_cgan(checkpoint.extra["architecture"], np.random.default_rng(0))
        model.load_state_dict(checkpoint.parameters)
        return model
