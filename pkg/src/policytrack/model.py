"""Grid-action tracking network.

A compact ViT-style encoder jointly attends over template tokens, search
tokens, and a small set of temporal tokens. Temporal tokens produced at each
layer are carried to the *same* layer of the next frame (layer-aligned
propagation); a `deep_to_shallow` variant instead injects only the deepest
layer's tokens at the first layer. Three convolutional heads read the search
feature map: a cell logit map (the policy), a per-cell box regressor, and a
pooled scalar value.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, asdict, field, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

MAGIC = b"PTCK0001"
PROPAGATION_MODES = ("aligned", "deep_to_shallow")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    patch_size: int = 8
    template_size: int = 32
    search_size: int = 64
    num_temporal: int = 4
    head_depth: int = 3
    mlp_ratio: float = 2.0
    propagation: str = "aligned"

    def __post_init__(self):
        if self.propagation not in PROPAGATION_MODES:
            raise ValueError(f"propagation must be one of {PROPAGATION_MODES}")
        if self.template_size % self.patch_size or self.search_size % self.patch_size:
            raise ValueError("template/search sizes must be multiples of patch_size")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")

    @property
    def grid_size(self) -> int:
        return self.search_size // self.patch_size

    @property
    def num_template_tokens(self) -> int:
        return (self.template_size // self.patch_size) ** 2

    @property
    def num_search_tokens(self) -> int:
        return self.grid_size**2


@dataclass
class TemporalState:
    """Per-layer temporal tokens carried between frames: (B, L, N_t, C)."""

    tokens: torch.Tensor

    def detach(self) -> "TemporalState":
        return TemporalState(self.tokens.detach())


@dataclass
class FrameOutput:
    logits: torch.Tensor  # (B, H, W) cell scores
    boxes: torch.Tensor  # (B, H, W, 4) normalized corner boxes in the search window
    value: torch.Tensor  # (B,) reward estimate
    features: torch.Tensor  # (B, C, H, W) search feature map feeding the heads
    carried_counts: list = field(default_factory=list)  # tokens carried past each layer

    def log_policy(self) -> torch.Tensor:
        b, h, w = self.logits.shape
        return F.log_softmax(self.logits.reshape(b, h * w), dim=-1)


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) / self.head_dim**0.5
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def _conv_head(dim, out_channels, depth):
    groups = 8 if dim % 8 == 0 else 1
    layers = []
    for _ in range(depth - 1):
        layers += [
            nn.Conv2d(dim, dim, 3, padding=1),
            nn.GroupNorm(groups, dim),
            nn.ReLU(inplace=True),
        ]
    final = nn.Conv2d(dim, out_channels, 3, padding=1)
    nn.init.zeros_(final.weight)
    nn.init.zeros_(final.bias)
    layers.append(final)
    return nn.Sequential(*layers)


class PolicyTrackNet(nn.Module):
    """Encoder + heads; see the module docstring for the token flow."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.embed_dim
        self.patch_embed = nn.Conv2d(3, c, cfg.patch_size, stride=cfg.patch_size)
        self.blocks = nn.ModuleList(
            Block(c, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        self.pos_template = nn.Parameter(torch.zeros(1, cfg.num_template_tokens, c))
        self.pos_search = nn.Parameter(torch.zeros(1, cfg.num_search_tokens, c))
        self.pos_temporal_cur = nn.Parameter(torch.zeros(1, cfg.num_temporal, c))
        self.pos_temporal_prev = nn.Parameter(torch.zeros(1, cfg.num_temporal, c))
        self.temporal_cur_init = nn.Parameter(torch.zeros(1, cfg.num_temporal, c))
        self.temporal_prev_init = nn.Parameter(torch.zeros(1, cfg.depth, cfg.num_temporal, c))
        for p in (self.pos_template, self.pos_search, self.pos_temporal_cur,
                  self.pos_temporal_prev, self.temporal_cur_init, self.temporal_prev_init):
            nn.init.trunc_normal_(p, std=0.02)
        self.logit_head = _conv_head(c, 1, cfg.head_depth)
        self.box_head = _conv_head(c, 4, cfg.head_depth)
        self.value_head = nn.Sequential(nn.Linear(c, c), nn.ReLU(inplace=True), nn.Linear(c, 1))

    def initial_state(self, batch_size: int) -> TemporalState:
        return TemporalState(self.temporal_prev_init.expand(batch_size, -1, -1, -1))

    def _tokens(self, images, pos):
        x = self.patch_embed(images)
        return x.flatten(2).transpose(1, 2) + pos

    def forward_frame(self, template, search, state: TemporalState | None = None):
        """Process one frame; returns (FrameOutput, next TemporalState)."""
        b = template.shape[0]
        if state is None:
            state = self.initial_state(b)
        z = self._tokens(template, self.pos_template)
        x = self._tokens(search, self.pos_search)
        cur = self.temporal_cur_init.expand(b, -1, -1) + self.pos_temporal_cur
        nz, nx, nt = z.shape[1], x.shape[1], cur.shape[1]

        carried_counts = []
        layer_tokens = []
        deep = self.cfg.propagation == "deep_to_shallow"
        for layer, block in enumerate(self.blocks):
            if deep:
                prev = state.tokens[:, -1] if layer == 0 else None
            else:
                prev = state.tokens[:, layer]
            if prev is None:
                out = block(torch.cat([z, x, cur], dim=1))
            else:
                out = block(torch.cat([z, x, cur, prev + self.pos_temporal_prev], dim=1))
            # transformed previous-frame tokens are dropped here; only the
            # template/search/current groups carry forward within the frame
            z, x, cur = out[:, :nz], out[:, nz : nz + nx], out[:, nz + nx : nz + nx + nt]
            carried_counts.append(nz + nx + nt)
            layer_tokens.append(cur)

        g = self.cfg.grid_size
        fmap = x.transpose(1, 2).reshape(b, self.cfg.embed_dim, g, g)
        out = self.heads(fmap)
        out.carried_counts = carried_counts
        return out, TemporalState(torch.stack(layer_tokens, dim=1))

    def heads(self, fmap: torch.Tensor) -> FrameOutput:
        """Apply the logit/box/value heads to a search feature map."""
        logits = self.logit_head(fmap).squeeze(1)
        boxes = self.decode_boxes(self.box_head(fmap))
        value = self.value_head(fmap.mean(dim=(2, 3))).squeeze(-1)
        return FrameOutput(logits, boxes, value, fmap)

    def decode_boxes(self, raw: torch.Tensor) -> torch.Tensor:
        """(B, 4, H, W) raw maps -> (B, H, W, 4) normalized corner boxes.

        Cell centers get a +/- one-cell offset via 2*sigmoid-1; width and
        height are sigmoids of the raw channels; corners are clamped to [0, 1].
        """
        b, _, h, w = raw.shape
        dx, dy, rw, rh = raw.unbind(1)
        jj = (torch.arange(w, dtype=raw.dtype, device=raw.device) + 0.5) / w
        ii = (torch.arange(h, dtype=raw.dtype, device=raw.device) + 0.5) / h
        cx = jj.view(1, 1, w) + (2 * torch.sigmoid(dx) - 1) / w
        cy = ii.view(1, h, 1) + (2 * torch.sigmoid(dy) - 1) / h
        bw = torch.sigmoid(rw)
        bh = torch.sigmoid(rh)
        boxes = torch.stack(
            [cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=-1
        )
        return boxes.clamp(0.0, 1.0)

    def rl_parameters(self):
        """Parameters trained in the reward stage: logit and value heads."""
        return list(self.logit_head.parameters()) + list(self.value_head.parameters())

    def freeze_for_rl(self):
        """Freeze encoder, embeddings, and box head; keep logit/value heads live."""
        trainable = {id(p) for p in self.rl_parameters()}
        for p in self.parameters():
            p.requires_grad_(id(p) in trainable)


def create_model(cfg: ModelConfig, seed: int = 0) -> PolicyTrackNet:
    """Build a model with seeded parameter init (reproducible bit-for-bit)."""
    torch.manual_seed(seed)
    return PolicyTrackNet(cfg)


# ---------------------------------------------------------------------------
# checkpoint format: magic, text manifest of the config, then named float32
# tensors as (name_len, name, ndim, dims..., raw little-endian data)


def save_checkpoint(model: PolicyTrackNet, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    manifest = "".join(f"{k}={v}\n" for k, v in sorted(asdict(model.cfg).items()))
    manifest += "---\n"
    buf.write(struct.pack("<I", len(manifest.encode())))
    buf.write(manifest.encode())
    state = model.state_dict()
    for name in sorted(state):
        tensor = state[name].detach().to(torch.float32).contiguous()
        data = tensor.numpy().astype("<f4", copy=False).tobytes()
        enc = name.encode()
        buf.write(struct.pack("<I", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<I", tensor.ndim))
        buf.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        buf.write(data)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _parse_manifest(text: str) -> ModelConfig:
    kwargs = {}
    types = {f.name: f.type for f in fields(ModelConfig)}
    for line in text.splitlines():
        if line == "---" or not line.strip():
            continue
        key, _, value = line.partition("=")
        if key not in types:
            raise ValueError(f"unknown checkpoint config key {key!r}")
        kwargs[key] = value if key == "propagation" else (
            float(value) if key == "mlp_ratio" else int(value)
        )
    return ModelConfig(**kwargs)


def load_checkpoint(path) -> PolicyTrackNet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    cfg = _parse_manifest(data[pos : pos + mlen].decode())
    pos += mlen
    state = {}
    import numpy as np

    while pos < len(data):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = 1
        for d in dims:
            count *= d
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        state[name] = torch.from_numpy(arr.copy())
    model = PolicyTrackNet(cfg)
    model.load_state_dict(state)
    return model
