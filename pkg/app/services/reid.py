from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DatasetError
from app.core.rng import RngStreams
from app.engine.losses import contrastive_loss
from app.engine.optim import Adam
from app.engine.tensor import DEFAULT_DTYPE, Tensor, no_grad
from app.models.config import PipelineConfig
from app.models.data import ContrastivePair, RankingResult
from app.networks import siamese as siamese_net
from app.networks.layers import check_frame_size
from app.networks.siamese import SiameseModel
from app.services.training import TrainingSession, load_model_state, stack, supervised_epoch, train_until, warn_single_class

logger = logging.getLogger(__name__)

MODEL_KIND = siamese_net.MODEL_KIND

EMBED_CHUNK = 64

GalleryItem = Tuple[np.ndarray, int]


def _frames_tensor(frames: Sequence[np.ndarray], dtype) -> Tensor:
    return Tensor(np.stack(frames).astype(dtype), dtype=dtype)


def embed_batch(model: SiameseModel, frames: Sequence[np.ndarray]) -> np.ndarray:
    """(N, d) embeddings, computed in fixed-size chunks."""
    dtype = model.param_dtype()
    out = []
    with no_grad():
        for start in range(0, len(frames), EMBED_CHUNK):
            x = _frames_tensor(frames[start:start + EMBED_CHUNK], dtype)
            check_frame_size("embed", x, model.frame_size)
            out.append(model.embed(x).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.embedding_dim), dtype=dtype)


def embed(model: SiameseModel, frame: np.ndarray) -> np.ndarray:
    return embed_batch(model, [frame])[0]


def head_scores(model: SiameseModel, query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """D_w of one query embedding against each row of a gallery embedding matrix."""
    dtype = model.param_dtype()
    q = Tensor(np.broadcast_to(query, gallery.shape).astype(dtype), dtype=dtype)
    with no_grad():
        return model.head(q, Tensor(gallery.astype(dtype), dtype=dtype)).data.astype(np.float64)


def score_pair(model: SiameseModel, frame_a: np.ndarray, frame_b: np.ndarray) -> float:
    embeddings = embed_batch(model, [frame_a, frame_b])
    return float(head_scores(model, embeddings[0], embeddings[1:2])[0])


def order_by_score(scores: np.ndarray) -> np.ndarray:
    """Descending order; equal scores keep gallery order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def ranking_from_scores(query_id: str, query_identity: int, scores: np.ndarray, identities: Sequence[int],
                        gallery_ids: Optional[Sequence[str]] = None) -> RankingResult:
    if len(scores) == 0:
        raise DatasetError("cannot rank against an empty gallery")
    ids = list(gallery_ids) if gallery_ids is not None else [str(i) for i in range(len(scores))]
    order = order_by_score(scores)
    return RankingResult(
        query_id=query_id,
        gallery_ids=[ids[i] for i in order],
        scores=[float(scores[i]) for i in order],
        relevant=[int(identities[i] == query_identity) for i in order],
    )


def rank_gallery(model: SiameseModel, query: np.ndarray, query_identity: int, gallery: Sequence[GalleryItem],
                 query_id: str = "query", gallery_ids: Optional[Sequence[str]] = None,
                 gallery_embeddings: Optional[np.ndarray] = None) -> RankingResult:
    """Gallery sorted by descending D_w against the query; relevant where identities match."""
    if not gallery:
        raise DatasetError("cannot rank against an empty gallery")
    if gallery_embeddings is None:
        gallery_embeddings = embed_batch(model, [frame for frame, _ in gallery])
    scores = head_scores(model, embed(model, query), gallery_embeddings)
    return ranking_from_scores(query_id, query_identity, scores, [i for _, i in gallery], gallery_ids)


def rank_track(model: SiameseModel, query_frames: Sequence[np.ndarray], query_identity: int,
               gallery: Sequence[GalleryItem], query_id: str = "track",
               gallery_ids: Optional[Sequence[str]] = None,
               gallery_embeddings: Optional[np.ndarray] = None) -> RankingResult:
    """Like rank_gallery, scoring each gallery entry by its mean D_w over every frame of the query track."""
    if not gallery:
        raise DatasetError("cannot rank against an empty gallery")
    if not query_frames:
        raise DatasetError("query track has no frames")
    if gallery_embeddings is None:
        gallery_embeddings = embed_batch(model, [frame for frame, _ in gallery])
    query_embeddings = embed_batch(model, list(query_frames))
    scores = np.mean([head_scores(model, q, gallery_embeddings) for q in query_embeddings], axis=0)
    return ranking_from_scores(query_id, query_identity, scores, [i for _, i in gallery], gallery_ids)


def siamese_architecture(config: PipelineConfig) -> Dict[str, Any]:
    section = config.siamese
    return {
        "frame_size": config.run.frame_size,
        "widths": list(section.widths),
        "embedding_dim": section.embedding_dim,
        "head_hidden": section.head_hidden,
        "margin": section.margin,
    }


def build_siamese(architecture: Dict[str, Any], rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> SiameseModel:
    return SiameseModel(architecture["widths"], architecture["frame_size"], rng,
                        embedding_dim=architecture["embedding_dim"], head_hidden=architecture["head_hidden"],
                        margin=architecture["margin"], dtype=dtype)


def siamese_session(model: SiameseModel, architecture: Dict[str, Any], streams: RngStreams,
                    learning_rate: float) -> TrainingSession:
    return TrainingSession(
        kind=MODEL_KIND,
        model=model,
        optimizers={"adam": Adam(model.named_parameters(), learning_rate=learning_rate)},
        rng=streams.stream(f"train/{MODEL_KIND}/shuffle"),
        architecture=architecture,
    )


def train_siamese(session: TrainingSession, pairs: Sequence[ContrastivePair], epochs: int, batch_size: int,
                  log_every: int = 10) -> List[float]:
    """Minimise the mean contrastive loss of D_w over the pairs."""
    if not pairs:
        raise DatasetError("Siamese training needs at least one pair")
    warn_single_class(MODEL_KIND, (p.label for p in pairs))
    model: SiameseModel = session.model
    dtype = model.param_dtype()
    first = [p.frame_a for p in pairs]
    second = [p.frame_b for p in pairs]
    labels = np.array([p.label for p in pairs], dtype=np.float64)

    def loss_fn(index: np.ndarray) -> Tensor:
        d_w = model(stack(first, index, dtype), stack(second, index, dtype))
        return contrastive_loss(d_w, labels[index], model.margin)

    trace = train_until(session, epochs, lambda s: supervised_epoch(s, len(pairs), batch_size, loss_fn), log_every)
    return [row["loss"] for row in trace]


class ReidService:
    def __init__(self, config: PipelineConfig, streams: Optional[RngStreams] = None):
        self.config = config
        self.streams = streams or RngStreams(config.run.seed)

    def new_session(self) -> TrainingSession:
        architecture = siamese_architecture(self.config)
        model = build_siamese(architecture, self.streams.stream(f"init/{MODEL_KIND}"))
        return siamese_session(model, architecture, self.streams, self.config.siamese.learning_rate)

    def train(self, pairs: Sequence[ContrastivePair], resume: Optional[Path] = None) -> Tuple[TrainingSession, List[float]]:
        session = self.new_session()
        if resume is not None:
            session.restore(load_model_state(resume, MODEL_KIND))
        section = self.config.siamese
        losses = train_siamese(session, pairs, section.epochs, section.batch_size, self.config.run.log_every)
        return session, losses

    @staticmethod
    def load(path: Union[str, Path]) -> SiameseModel:
        checkpoint = load_model_state(path, MODEL_KIND)
        model = build_siamese(checkpoint.extra["architecture"], np.random.default_rng(0))
        model.load_state_dict(checkpoint.parameters)
        return model
