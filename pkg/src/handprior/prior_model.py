"""Contact-point / hand-pose prior: image encoder with a bottleneck embedding
and a transformer decoder predicting binned contact coordinates and hand pose
tokens, trained with summed cross-entropy losses."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .extraction import HandPose
from .geometry import Point2D
from .tokenizer import NUM_CODEBOOKS, CODEBOOK_SIZE


class OutOfRange(ValueError):
    pass


class ModeMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass
class PriorModelConfig:
    embedding_dim: int = 128          # paper scale uses 768
    image_size: int = 128
    bins_x: int = 100
    bins_y: int = 100
    decoder_layers: int = 2
    decoder_heads: int = 4
    lambda_hand: float = 1.0
    hand_head_mode: str = "tokens"    # tokens | regression | off
    contact_head: bool = True
    encoder_kind: str = "conv"        # conv | transformer
    pooling: str = "class_token"      # class_token | mean_pool (transformer only)
    num_codebooks: int = NUM_CODEBOOKS
    codebook_size: int = CODEBOOK_SIZE
    learning_rate: float = 5e-5
    batch_size: int = 32
    iterations: int = 3000
    checkpoint_every: int = 1000
    freeze_encoder: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.bins_x < 2 or self.bins_y < 2:
            raise ValueError("bins must be >= 2")
        if self.hand_head_mode not in ("tokens", "regression", "off"):
            raise ValueError(f"unknown hand head mode {self.hand_head_mode}")
        if not self.contact_head and self.hand_head_mode == "off":
            raise ValueError("at least one prediction head must be enabled")


@dataclass
class PredictionSample:
    image: np.ndarray                      # (H, W, 3) uint8
    contact_points: tuple[Point2D, Point2D]  # thumb, index
    hand_tokens: Optional[list[int]] = None
    raw_hand_pose: Optional[HandPose] = None


@dataclass
class DecoderOutput:
    """contact_logits: (2, Bx + By); hand_token_logits: (N, C);
    hand_regression: (63,). Unused heads are None."""

    contact_logits: Optional[torch.Tensor] = None
    hand_token_logits: Optional[torch.Tensor] = None
    hand_regression: Optional[torch.Tensor] = None


def bin_coordinate(x: float, extent: float, bins: int) -> int:
    """floor(x / extent * B), clamped so x == extent maps to the last bin."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if x < 0 or x > extent:
        raise OutOfRange(f"coordinate {x} outside [0, {extent}]")
    return min(int(math.floor(x / extent * bins)), bins - 1)


def unbin_coordinate(b: int, extent: float, bins: int) -> float:
    """Bin center: (b + 0.5) / B * extent."""
    if not 0 <= b < bins:
        raise OutOfRange(f"bin {b} outside [0, {bins})")
    return (b + 0.5) / bins * extent


def _ce(logits: torch.Tensor, target: int) -> torch.Tensor:
    return F.cross_entropy(logits[None, :], torch.tensor([target]))


def contact_loss(output: DecoderOutput, targets: tuple[Point2D, Point2D],
                 image_size: tuple[float, float],
                 bins_x: int = 100, bins_y: int = 100) -> torch.Tensor:
    """Sum over the two contact points of x-bin and y-bin cross-entropies."""
    if output.contact_logits is None:
        raise ModeMismatch("contact head disabled")
    w, h = image_size
    total = 0.0
    for i, pt in enumerate(targets):
        bx = bin_coordinate(pt.x, w, bins_x)
        by = bin_coordinate(pt.y, h, bins_y)
        logits = output.contact_logits[i]
        total = total + _ce(logits[:bins_x], bx) + _ce(logits[bins_x:], by)
    return total


def hand_loss_tokens(output: DecoderOutput, tokens) -> torch.Tensor:
    """Sum over codebook heads of token cross-entropies."""
    if output.hand_token_logits is None:
        raise ModeMismatch("token head not active")
    total = 0.0
    for n, t in enumerate(tokens):
        total = total + _ce(output.hand_token_logits[n], int(t))
    return total


def hand_loss_regression(output: DecoderOutput, target: HandPose) -> torch.Tensor:
    """MSE over the 63 pose coordinates."""
    if output.hand_regression is None:
        raise ModeMismatch("regression head not active")
    tgt = torch.as_tensor(target.flat(), dtype=output.hand_regression.dtype)
    return F.mse_loss(output.hand_regression, tgt)


def total_loss(sample: PredictionSample, output: DecoderOutput,
               config: PriorModelConfig) -> torch.Tensor:
    """Contact term plus lambda_hand times the hand term; disabled heads
    contribute exactly zero."""
    h, w = sample.image.shape[:2]
    loss = torch.zeros(())
    if config.contact_head:
        loss = loss + contact_loss(output, sample.contact_points, (w, h),
                                   config.bins_x, config.bins_y)
    if config.hand_head_mode == "tokens":
        loss = loss + config.lambda_hand * hand_loss_tokens(output, sample.hand_tokens)
    elif config.hand_head_mode == "regression":
        loss = loss + config.lambda_hand * hand_loss_regression(output, sample.raw_hand_pose)
    return loss


class ConvEncoder(nn.Module):
    def __init__(self, embedding_dim: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.proj = nn.Linear(64 * 16, embedding_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.features(images))
        return self.proj(x.flatten(1))


class PatchTransformerEncoder(nn.Module):
    """Small patch-embedding transformer; paper-scale ViT weights are out of
    scope, so depth/width stay desk sized."""

    def __init__(self, embedding_dim: int, image_size: int, patch: int = 16,
                 layers: int = 4, heads: int = 4, pooling: str = "class_token"):
        super().__init__()
        self.pooling = pooling
        n_patches = (image_size // patch) ** 2
        self.patchify = nn.Conv2d(3, embedding_dim, patch, stride=patch)
        self.cls = nn.Parameter(torch.zeros(1, 1, embedding_dim))
        self.pos = nn.Parameter(torch.randn(1, n_patches + 1, embedding_dim) * 0.02)
        layer = nn.TransformerEncoderLayer(
            embedding_dim, heads, dim_feedforward=4 * embedding_dim,
            batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, layers,
                                             enable_nested_tensor=False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.patchify(images).flatten(2).transpose(1, 2)
        cls = self.cls.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos
        x = self.encoder(x)
        if self.pooling == "class_token":
            return x[:, 0]
        return x[:, 1:].mean(dim=1)


class PriorDecoder(nn.Module):
    """Transformer decoder over learned queries attending only to the single
    bottleneck embedding token."""

    def __init__(self, config: PriorModelConfig):
        super().__init__()
        d = config.embedding_dim
        self.config = config
        # queries: thumb, index, one per token head, one pose-regression slot
        self.n_contact = 2
        self.n_tokens = config.num_codebooks
        n_queries = self.n_contact + self.n_tokens + 1
        self.queries = nn.Parameter(torch.randn(1, n_queries, d) * 0.02)
        layer = nn.TransformerDecoderLayer(
            d, config.decoder_heads, dim_feedforward=4 * d,
            batch_first=True, norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(layer, config.decoder_layers)
        self.contact_head = nn.Linear(d, config.bins_x + config.bins_y)
        self.token_head = nn.Linear(d, config.codebook_size)
        self.regression_head = nn.Linear(d, 63)

    def forward(self, embedding: torch.Tensor):
        memory = embedding[:, None, :]
        q = self.queries.expand(embedding.shape[0], -1, -1)
        out = self.decoder(q, memory)
        contact = self.contact_head(out[:, : self.n_contact])
        tokens = self.token_head(out[:, self.n_contact : self.n_contact + self.n_tokens])
        regression = self.regression_head(out[:, -1])
        return contact, tokens, regression


class PriorModel(nn.Module):
    def __init__(self, config: PriorModelConfig):
        super().__init__()
        self.config = config
        if config.encoder_kind == "conv":
            self.encoder = ConvEncoder(config.embedding_dim)
        elif config.encoder_kind == "transformer":
            self.encoder = PatchTransformerEncoder(
                config.embedding_dim, config.image_size, pooling=config.pooling
            )
        else:
            raise ValueError(f"unknown encoder kind {config.encoder_kind}")
        self.decoder = PriorDecoder(config)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeMismatch(f"expected (b, 3, H, W) images, got {tuple(images.shape)}")
        if images.shape[2] != self.config.image_size or images.shape[3] != self.config.image_size:
            raise ShapeMismatch(
                f"expected {self.config.image_size}px input, got {tuple(images.shape[2:])}"
            )
        return self.encoder(images)

    def decode(self, embedding: torch.Tensor) -> list[DecoderOutput]:
        if embedding.ndim != 2 or embedding.shape[1] != self.config.embedding_dim:
            raise ShapeMismatch(f"expected (b, {self.config.embedding_dim}) embedding")
        contact, tokens, regression = self.decoder(embedding)
        outs = []
        for i in range(embedding.shape[0]):
            outs.append(DecoderOutput(
                contact_logits=contact[i] if self.config.contact_head else None,
                hand_token_logits=tokens[i] if self.config.hand_head_mode == "tokens" else None,
                hand_regression=regression[i] if self.config.hand_head_mode == "regression" else None,
            ))
        return outs

    def decode_batch(self, embedding: torch.Tensor):
        return self.decoder(embedding)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.array(image, dtype=np.float32)).permute(2, 0, 1) / 255.0


@torch.no_grad()
def predict_contacts_and_pose(model: PriorModel, image: np.ndarray,
                              tokenizer_model=None):
    """Argmax-bin contact points (bin centers, image pixels) plus the
    predicted hand pose tokens; the pose itself is reconstructed when a
    tokenizer is supplied."""
    from . import tokenizer as tok

    model.eval()
    cfg = model.config
    emb = model.encode(image_to_tensor(image)[None])
    out = model.decode(emb)[0]
    h, w = image.shape[:2]
    points = []
    if out.contact_logits is not None:
        for i in range(2):
            logits = out.contact_logits[i]
            bx = int(logits[: cfg.bins_x].argmax())
            by = int(logits[cfg.bins_x :].argmax())
            points.append(Point2D(unbin_coordinate(bx, w, cfg.bins_x),
                                  unbin_coordinate(by, h, cfg.bins_y)))
    tokens, pose = None, None
    if out.hand_token_logits is not None:
        tokens = [int(t) for t in out.hand_token_logits.argmax(dim=-1)]
        if tokenizer_model is not None:
            pose = tok.detokenize(tokenizer_model, tokens)
    elif out.hand_regression is not None:
        pose = HandPose(out.hand_regression.numpy().reshape(21, 3))
    return tuple(points) if points else None, tokens, pose


@dataclass
class TrainLogEntry:
    step: int
    loss_contact: float
    loss_hand: float
    loss_total: float

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "L_ct": self.loss_contact,
                           "L_hand": self.loss_hand, "L_total": self.loss_total})


@dataclass
class PriorTrainResult:
    model: PriorModel
    log: list[TrainLogEntry] = field(default_factory=list)


def _batched_loss(model: PriorModel, images, targets_x, targets_y,
                  tokens, poses):
    cfg = model.config
    emb = model.encode(images)
    contact, tok_logits, regression = model.decode_batch(emb)
    zero = torch.zeros(())
    l_ct, l_hand = zero, zero
    if cfg.contact_head:
        l_ct = 0.0
        for i in range(2):
            l_ct = l_ct + F.cross_entropy(contact[:, i, : cfg.bins_x], targets_x[:, i])
            l_ct = l_ct + F.cross_entropy(contact[:, i, cfg.bins_x :], targets_y[:, i])
    if cfg.hand_head_mode == "tokens":
        l_hand = 0.0
        for n in range(cfg.num_codebooks):
            l_hand = l_hand + F.cross_entropy(tok_logits[:, n], tokens[:, n])
    elif cfg.hand_head_mode == "regression":
        l_hand = F.mse_loss(regression, poses)
    total = l_ct + cfg.lambda_hand * l_hand
    as_float = lambda v: float(v.detach()) if torch.is_tensor(v) else float(v)
    return total, as_float(l_ct), as_float(l_hand)


def prepare_training_tensors(samples: list[PredictionSample], config: PriorModelConfig):
    images = torch.stack([image_to_tensor(s.image) for s in samples])
    tx = torch.zeros(len(samples), 2, dtype=torch.long)
    ty = torch.zeros(len(samples), 2, dtype=torch.long)
    for j, s in enumerate(samples):
        h, w = s.image.shape[:2]
        for i, pt in enumerate(s.contact_points):
            tx[j, i] = bin_coordinate(pt.x, w, config.bins_x)
            ty[j, i] = bin_coordinate(pt.y, h, config.bins_y)
    tokens = None
    if config.hand_head_mode == "tokens":
        tokens = torch.as_tensor([s.hand_tokens for s in samples], dtype=torch.long)
    poses = None
    if config.hand_head_mode == "regression":
        poses = torch.stack([
            torch.as_tensor(s.raw_hand_pose.flat(), dtype=torch.float32) for s in samples
        ])
    return images, tx, ty, tokens, poses


def train_prior(samples: list[PredictionSample], config: PriorModelConfig,
                checkpoint_dir=None, model: Optional[PriorModel] = None,
                start_step: int = 0) -> PriorTrainResult:
    """AdamW training over prediction samples; deterministic given the seed.

    Pass `model`/`start_step` to resume from a checkpoint."""
    if len(samples) == 0:
        raise EmptyDataset("no training samples")
    torch.manual_seed(config.seed)
    images, tx, ty, tokens, poses = prepare_training_tensors(samples, config)
    if model is None:
        model = PriorModel(config)
    if config.freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed + start_step)
    log = []
    n = len(samples)
    for step in range(start_step + 1, config.iterations + 1):
        idx = torch.as_tensor(rng.integers(0, n, size=min(config.batch_size, n)))
        loss, l_ct, l_hand = _batched_loss(
            model, images[idx], tx[idx], ty[idx],
            tokens[idx] if tokens is not None else None,
            poses[idx] if poses is not None else None,
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append(TrainLogEntry(step, l_ct, l_hand, float(loss.detach())))
        if checkpoint_dir is not None and step % config.checkpoint_every == 0:
            save_prior(model, f"{checkpoint_dir}/prior_step{step:06d}.pt", step)
    return PriorTrainResult(model=model, log=log)


def save_prior(model: PriorModel, path, step: int = 0) -> None:
    torch.save({"config": vars(model.config), "state": model.state_dict(),
                "step": step}, path)


def load_prior(path):
    ckpt = torch.load(path, weights_only=False)
    model = PriorModel(PriorModelConfig(**ckpt["config"]))
    model.load_state_dict(ckpt["state"])
    return model, ckpt.get("step", 0)


def write_train_log(log: list[TrainLogEntry], path) -> None:
    with open(path, "w") as f:
        for e in log:
            f.write(e.to_json() + "\n")
