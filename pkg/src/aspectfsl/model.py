"""Backbones and the deep-set traversal module (DSTM).

The DSTM turns a support set into a channel-softmax mask: a
permutation-equivariant stage enriches each support embedding with the
mean of its neighbors' embeddings, a permutation-invariant stage pools
the enriched set and maps it to the mask, and a reshaper aligns query
and support features with the mask's dimensions. Masked, flattened
feature maps are the embeddings that distances are measured on.

With dstm="none" the model degrades to the baseline: raw flattened
backbone features for query and support alike.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

CHECKPOINT_FORMAT = "aspectfsl-checkpoint-v1"

BACKBONES = ("shallow", "vgg_small", "resnet_small")
DSTM_KINDS = ("none", "single_layer", "residual_block")
SET_POOLS = ("mean", "max")


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "shallow"
    dstm: str = "single_layer"
    dstm_channels: int = 64
    mask_channels: int = 64
    mask_size: int | None = None  # None: min(14, backbone spatial size)
    image_size: int = 112
    set_pool: str = "mean"  # permutation-invariant union

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.dstm not in DSTM_KINDS:
            raise ValueError(f"unknown dstm kind {self.dstm!r}")
        if self.set_pool not in SET_POOLS:
            raise ValueError(f"unknown set pool {self.set_pool!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class ConvBlock(nn.Module):
    """conv3x3 + batch norm + ReLU."""

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.skip(x))


def _make_backbone(kind: str) -> tuple[nn.Module, int, int]:
    """Backbone module plus its (channels, spatial) output for 112px input."""
    if kind == "shallow":
        net = nn.Sequential(
            nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        return net, 64, 28
    if kind == "vgg_small":
        layers, cin = [], 3
        for cout in (64, 128, 256):
            layers += [ConvBlock(cin, cout), ConvBlock(cout, cout), nn.MaxPool2d(2)]
            cin = cout
        return nn.Sequential(*layers), 256, 14
    if kind == "resnet_small":
        net = nn.Sequential(
            nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            ResidualBlock(64, 64),
            ResidualBlock(64, 128, stride=2),
            ResidualBlock(128, 256, stride=2),
        )
        return net, 256, 7
    raise ValueError(f"unknown backbone {kind!r}")


def _make_block(kind: str, cin: int, cout: int) -> nn.Module:
    if kind == "single_layer":
        return ConvBlock(cin, cout)
    if kind == "residual_block":
        return ResidualBlock(cin, cout)
    raise ValueError(f"unknown dstm block kind {kind!r}")


class DeepSetTraversal(nn.Module):
    """Support set -> channel-softmax mask, via deep-set stages.

    All tensors are batch-first: support features are (B, N, C, H, W).
    """

    def __init__(self, feat_channels: int, config: ModelConfig, mask_size: int):
        super().__init__()
        d = config.dstm_channels
        self.neighbor_embed = _make_block(config.dstm, feat_channels, d)  # f_phi
        self.enrich = _make_block(config.dstm, feat_channels + d, d)  # f_theta
        self.mask_head = _make_block(config.dstm, d, config.mask_channels)  # f_lambda
        self.resize = nn.AdaptiveAvgPool2d(mask_size)
        self.set_pool = config.set_pool

    def _pool_set(self, x: torch.Tensor, dim: int) -> torch.Tensor:
        if self.set_pool == "mean":
            return x.mean(dim)
        return x.amax(dim)

    def neighbor_union(self, support_feats: torch.Tensor, i: int) -> torch.Tensor:
        """Pooled neighbor embeddings for element i (neighbors = all j != i)."""
        b, n = support_feats.shape[:2]
        if n < 2:
            raise ValueError("neighbor_union needs a support set of >= 2 elements")
        phis = self._embed_neighbors(support_feats)
        neighbors = torch.cat([phis[:, :i], phis[:, i + 1 :]], dim=1)
        return self._pool_set(neighbors, 1)

    def _embed_neighbors(self, support_feats: torch.Tensor) -> torch.Tensor:
        b, n = support_feats.shape[:2]
        flat = self.neighbor_embed(support_feats.flatten(0, 1))
        return flat.view(b, n, *flat.shape[1:])

    def equivariant_step(self, support_feats: torch.Tensor) -> torch.Tensor:
        """Enrich each element with its neighborhood: h_i for all i.

        Permuting the support permutes the outputs identically.
        """
        b, n = support_feats.shape[:2]
        if n < 2:
            raise ValueError("equivariant_step needs a support set of >= 2 elements")
        phis = self._embed_neighbors(support_feats)
        if self.set_pool == "mean":
            pooled = (phis.sum(1, keepdim=True) - phis) / (n - 1)
        else:
            pooled = torch.stack(
                [
                    self._pool_set(torch.cat([phis[:, :i], phis[:, i + 1 :]], dim=1), 1)
                    for i in range(n)
                ],
                dim=1,
            )
        enriched = self.enrich(torch.cat([support_feats, pooled], dim=2).flatten(0, 1))
        return enriched.view(b, n, *enriched.shape[1:])

    def invariant_pool(self, h: torch.Tensor) -> torch.Tensor:
        """Order-destroying pool over h_i, then the mask head and channel softmax.

        The spatial resize to the mask size happens between the head and
        the softmax so mask channels still sum to one everywhere.
        """
        pooled = self._pool_set(h, 1)
        out = self.resize(self.mask_head(pooled))
        return torch.softmax(out, dim=1)

    def forward(self, support_feats: torch.Tensor) -> torch.Tensor:
        return self.invariant_pool(self.equivariant_step(support_feats))


class AspectEmbedder(nn.Module):
    """Backbone + optional DSTM; maps an episode to comparable embeddings."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone, feat_channels, feat_size = _make_backbone(config.backbone)
        self.feat_channels = feat_channels
        self.feat_size = feat_size
        if config.dstm == "none":
            self.dstm = None
            self.reshaper = None
            self.mask_size = None
            self.embedding_dim = feat_channels * feat_size * feat_size
        else:
            self.mask_size = config.mask_size or min(14, feat_size)
            self.dstm = DeepSetTraversal(feat_channels, config, self.mask_size)
            self.reshaper = nn.Conv2d(feat_channels, config.mask_channels, 1)
            self.embedding_dim = config.mask_channels * self.mask_size**2

    def embed_backbone(self, images: torch.Tensor) -> torch.Tensor:
        """Feature maps for a batch of images; validates the input shape."""
        s = self.config.image_size
        if images.dim() != 4 or images.shape[1:] != (3, s, s):
            raise ValueError(
                f"expected images of shape (B, 3, {s}, {s}), got {tuple(images.shape)}"
            )
        return self.backbone(images)

    def _reshape(self, feats: torch.Tensor) -> torch.Tensor:
        return self.dstm.resize(self.reshaper(feats))

    def compute_mask(self, support: torch.Tensor) -> torch.Tensor:
        """Mask M from support images (B, N, 3, H, W)."""
        if self.dstm is None:
            raise ValueError("baseline model (dstm='none') has no mask")
        b, n = support.shape[:2]
        feats = self.embed_backbone(support.flatten(0, 1))
        feats = feats.view(b, n, *feats.shape[1:])
        return self.dstm(feats)

    def forward(
        self, query: torch.Tensor, support: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(query_vec (B, D), support_vecs (B, N, D)) for a batch of episodes.

        One mask per episode multiplies both the reshaped query and every
        reshaped support element before flattening.
        """
        b, n = support.shape[:2]
        fq = self.embed_backbone(query)
        fs = self.embed_backbone(support.flatten(0, 1))
        if self.dstm is None:
            return fq.flatten(1), fs.view(b, n, -1)
        fs_set = fs.view(b, n, *fs.shape[1:])
        mask = self.dstm(fs_set)
        masked_q = mask * self._reshape(fq)
        masked_s = mask.unsqueeze(1) * self._reshape(fs).view(
            b, n, *mask.shape[1:]
        )
        return masked_q.flatten(1), masked_s.flatten(2)


def apply_mask(mask: torch.Tensor, reshaped: torch.Tensor) -> torch.Tensor:
    """Elementwise product of a mask and an already-reshaped feature map."""
    if mask.shape[-3:] != reshaped.shape[-3:]:
        raise ValueError(
            f"mask dims {tuple(mask.shape[-3:])} != feature dims "
            f"{tuple(reshaped.shape[-3:])}; reshaper config mismatch"
        )
    return mask * reshaped


def images_to_tensor(images: np.ndarray | list, dtype=torch.float32) -> torch.Tensor:
    """HWC unit-interval image array(s) -> torch CHW tensor(s)."""
    arr = np.asarray(images, dtype=np.float32)
    t = torch.from_numpy(arr).to(dtype)
    return t.movedim(-1, -3)


def embed_episode(
    model: AspectEmbedder,
    query_image: np.ndarray,
    support_images: np.ndarray | list,
) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode embeddings for one episode, numpy in / numpy out."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            q = images_to_tensor(query_image).unsqueeze(0)
            s = images_to_tensor(support_images).unsqueeze(0)
            param = next(model.parameters())
            qv, sv = model(q.to(param.dtype), s.to(param.dtype))
        return qv[0].numpy(), sv[0].numpy()
    finally:
        model.train(was_training)


def save_checkpoint(path: str | Path, model: AspectEmbedder, extra: dict | None = None) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "model_config": model.config.to_dict(),
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[AspectEmbedder, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unexpected checkpoint format {payload.get('format')!r}")
    model = AspectEmbedder(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    return model, payload["extra"]


def shape_table(config: ModelConfig, support_size: int = 4) -> list[dict]:
    """Trace tensor shapes through every pipeline stage of a config."""
    model = AspectEmbedder(config)
    model.eval()
    s = config.image_size
    q = torch.zeros(1, 3, s, s)
    sup = torch.zeros(1, support_size, 3, s, s)
    rows = [("input image", (3, s, s))]
    with torch.no_grad():
        fq = model.embed_backbone(q)
        rows.append(("backbone features", tuple(fq.shape[1:])))
        if model.dstm is not None:
            fs = model.embed_backbone(sup.flatten(0, 1)).view(
                1, support_size, model.feat_channels, model.feat_size, model.feat_size
            )
            pooled = model.dstm.neighbor_union(fs, 0)
            rows.append(("neighbor union", tuple(pooled.shape[1:])))
            h = model.dstm.equivariant_step(fs)
            rows.append(("equivariant h_i", tuple(h.shape[2:])))
            mask = model.dstm.invariant_pool(h)
            rows.append(("mask", tuple(mask.shape[1:])))
            rows.append(("reshaped features", tuple(model._reshape(fq).shape[1:])))
        qv, _ = model(q, sup)
        rows.append(("embedding", (qv.shape[1],)))
    return [{"stage": name, "shape": list(shape)} for name, shape in rows]
