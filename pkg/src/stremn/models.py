"""Desk-scale encoders, skip-free decoder and the recurrent step for both tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import KeyValue, KeyValueProjector, concat_memory_kv, memory_read, project_kv
from .errors import ConfigError, ContractError, DimensionError, StateError
from .memory import (
    LEARNED,
    FusionModule,
    MemoryBank,
    UpdateDecision,
    UpdateKeyProjector,
    baseline_policy_update,
    canonical_policy,
    update_memory,
)
from .nn import Conv2d, ConvBlock, Module
from .tensor import Tensor, get_dtype, ops


@dataclass
class EncoderConfig:
    in_channels: int
    blocks: int = 3
    width: int = 32
    downsample: int = 8

    def __post_init__(self):
        s = self.downsample
        if s < 1 or s & (s - 1):
            raise ConfigError(f"downsample factor must be a power of 2, got {s}")
        if self.blocks < self.n_down:
            raise ConfigError(f"{self.blocks} blocks cannot downsample by {s}")

    @property
    def n_down(self) -> int:
        return int(math.log2(self.downsample))


@dataclass
class ModelConfig:
    task: str = "vos"
    image_size: int = 64
    width: int = 32
    enc_blocks: int | None = None
    dec_blocks: int | None = None
    downsample: int = 8
    k_slots: int | None = None
    key_dim: int | None = None
    value_dim: int | None = None
    update_key_dim: int | None = None
    policy: str = LEARNED
    tau: float = 1.0
    score_source: str = "memory"
    share_encoder_layers: bool = False
    scale_logits: bool = False
    fusion: bool = False

    def __post_init__(self):
        if self.task not in ("vos", "pred"):
            raise ConfigError(f"task must be 'vos' or 'pred', got {self.task!r}")
        if self.enc_blocks is None:
            self.enc_blocks = 3 if self.task == "vos" else 6
        if self.k_slots is None:
            self.k_slots = 6 if self.task == "vos" else 5
        if self.dec_blocks is None:
            self.dec_blocks = int(math.log2(self.downsample)) if self.task == "vos" else self.enc_blocks
        self.policy = canonical_policy(self.policy)
        if self.policy == LEARNED and self.k_slots < 3:
            raise ConfigError(f"learned policy needs k_slots >= 3, got {self.k_slots}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.score_source not in ("memory", "query"):
            raise ConfigError(f"score_source must be 'memory' or 'query', got {self.score_source!r}")
        if self.image_size % self.downsample:
            raise ConfigError(f"image size {self.image_size} not divisible by downsample {self.downsample}")
        if self.dec_blocks < int(math.log2(self.downsample)):
            raise ConfigError("decoder needs at least log2(downsample) blocks")

    @property
    def channels(self) -> int:
        return self.width

    @property
    def dk(self) -> int:
        return self.key_dim or max(1, self.width // 8)

    @property
    def dv(self) -> int:
        return self.value_dim or max(1, self.width // 2)


class Encoder(Module):
    """Stack of conv blocks; the first log2(s) blocks halve the resolution."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        widths = [max(8, cfg.width >> (cfg.n_down - 1 - i)) if i < cfg.n_down else cfg.width for i in range(cfg.blocks)]
        widths[-1] = cfg.width
        chans = [cfg.in_channels, *widths]
        self.blocks = [ConvBlock(chans[i], chans[i + 1], rng, downsample=i < cfg.n_down) for i in range(cfg.blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 3 or x.shape[0] != cfg.in_channels:
            raise DimensionError(f"encoder expects {cfg.in_channels}×H×W input, got {x.shape}")
        if x.shape[1] % cfg.downsample or x.shape[2] % cfg.downsample:
            raise ConfigError(f"input {x.shape[1]}×{x.shape[2]} not divisible by downsample {cfg.downsample}")
        for block in self.blocks:
            x = block(x)
        return x


class Decoder(Module):
    """Upsampling conv decoder fed only by the memory readout (no skips)."""

    def __init__(self, in_channels: int, width: int, n_up: int, blocks: int, out_channels: int, rng: np.random.Generator):
        self.n_up = n_up
        self.stem = Conv2d(in_channels, width, 3, rng)
        self.extra = [ConvBlock(width, width, rng, downsample=False) for _ in range(blocks - n_up)]
        widths = [max(8, width >> (i + 1)) for i in range(n_up)]
        chans = [width, *widths]
        self.up = [ConvBlock(chans[i], chans[i + 1], rng, downsample=False) for i in range(n_up)]
        self.head = Conv2d(chans[-1], out_channels, 3, rng)
        self.in_channels = in_channels

    def __call__(self, readout: Tensor) -> Tensor:
        if readout.ndim != 3 or readout.shape[0] != self.in_channels:
            raise DimensionError(f"decoder expects {self.in_channels} input channels, got {readout.shape}")
        x = ops.leaky_relu(self.stem(readout))
        for block in self.extra:
            x = block(x)
        for block in self.up:
            x = block(ops.upsample2x(x))
        return self.head(x)


@dataclass
class ModelState:
    """Recurrent state for one sequence (and one object for VOS)."""

    bank: MemoryBank
    t: int
    gumbel_rng: np.random.Generator
    policy_rng: np.random.Generator
    history: list = field(default_factory=list)
    last_prediction: Tensor | None = None
    rollout: list[tuple[int, list[int]]] = field(default_factory=list)
    decisions: list[UpdateDecision] = field(default_factory=list)
    peak_slots: int = 0
    _kv_cache: dict = field(default_factory=dict, repr=False)


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    g, p = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(g), np.random.default_rng(p)


class _MemoryModel(Module):
    cfg: ModelConfig

    def _build_memory(self, rng: np.random.Generator, seed: int):
        cfg = self.cfg
        c = cfg.channels
        self.kv_query = KeyValueProjector(c, cfg.dk, cfg.dv, rng)
        self.kv_memory = KeyValueProjector(c, cfg.dk, cfg.dv, rng)
        self.update_proj = UpdateKeyProjector(c, cfg.update_key_dim, rng)
        # own stream: switching fusion on leaves every other initial weight unchanged
        fusion_rng = np.random.default_rng([seed, 0xF05])
        self.fusion = FusionModule(c, fusion_rng, enabled=True) if cfg.fusion else None
        self.use_fusion = cfg.fusion

    def named_parameters(self, prefix: str = ""):
        seen, out = set(), []
        for name, p in super().named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                out.append((name, p))
        return out

    def _memory_kv(self, state: ModelState) -> KeyValue:
        cache = state._kv_cache
        live = {}
        kvs = []
        for slot in state.bank.slots:
            key = id(slot.template)
            hit = cache.get(key)
            if hit is None or hit[0] is not slot.template:
                hit = (slot.template, project_kv(slot.template, self.kv_memory, "memory"))
            live[key] = hit
            kvs.append(hit[1])
        state._kv_cache = live
        return concat_memory_kv(kvs)

    def read(self, state: ModelState, query: Tensor) -> Tensor:
        if not state.bank.slots:
            raise StateError("model state is not initialized (empty memory)")
        state.rollout.append((state.t, state.bank.frame_indices))
        kvq = project_kv(query, self.kv_query, "query")
        return memory_read(kvq, self._memory_kv(state), scale=self.cfg.scale_logits)

    def update(self, state: ModelState, x_new: Tensor, frame_index: int, mode: str, score_template: Tensor | None = None):
        cfg = self.cfg
        if cfg.policy == LEARNED:
            fusion = self.fusion if (self.use_fusion and self.fusion is not None) else None
            bank, decision = update_memory(
                state.bank,
                x_new,
                frame_index,
                self.update_proj,
                cfg.tau,
                mode,
                state.gumbel_rng,
                score_template=score_template,
                fusion=fusion,
            )
            if decision is not None:
                state.decisions.append(decision)
        else:
            bank = baseline_policy_update(state.bank, x_new, frame_index, cfg.policy, state.policy_rng)
        state.bank = bank
        state.peak_slots = max(state.peak_slots, len(bank))


class VOSModel(_MemoryModel):
    """Single-object segmentation model: query encoder, mask-aware memory encoder."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        if cfg.task != "vos":
            raise ConfigError("VOSModel needs task='vos'")
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.query_encoder = Encoder(EncoderConfig(3, cfg.enc_blocks, cfg.width, cfg.downsample), rng)
        self.memory_encoder = Encoder(EncoderConfig(4, cfg.enc_blocks, cfg.width, cfg.downsample), rng)
        if cfg.share_encoder_layers:
            self.memory_encoder.blocks[1:] = self.query_encoder.blocks[1:]
        self._build_memory(rng, seed)
        n_up = int(math.log2(cfg.downsample))
        self.decoder = Decoder(2 * cfg.dv, cfg.width, n_up, cfg.dec_blocks, 2, rng)

    def encode_query(self, frame) -> Tensor:
        return self.query_encoder(_as_image(frame, 3))

    def encode_memory(self, frame, mask) -> Tensor:
        frame = _as_image(frame, 3)
        mask = _as_image(mask, 1)
        if mask.shape[1:] != frame.shape[1:]:
            raise DimensionError(f"mask {mask.shape[1:]} and frame {frame.shape[1:]} sizes differ")
        return self.memory_encoder(ops.concat([frame, mask], axis=0))

    def decode(self, readout: Tensor) -> Tensor:
        return self.decoder(readout)

    def init_state(self, frame, mask, seed: int = 0) -> ModelState:
        """Seed the memory with the first frame and its ground-truth mask (pinned)."""
        g, p = _rngs(seed)
        bank = MemoryBank(self.cfg.k_slots, self.cfg.policy)
        state = ModelState(bank=bank, t=1, gumbel_rng=g, policy_rng=p)
        x0 = self.encode_memory(frame, mask)
        self.update(state, x0, 0, "eval")
        state.last_prediction = _as_image(mask, 1)
        return state

    def step(self, state: ModelState, frame, mode: str = "eval", mask_override=None) -> tuple[Tensor, ModelState]:
        """Segment ``frame`` (index ``state.t``) and write it into memory.

        Returns 2×H×W logits. ``mask_override`` replaces the predicted
        foreground map fed to the memory encoder.
        """
        if state is None or not state.bank.slots:
            raise StateError("call init_state before step")
        frame = _as_image(frame, 3)
        q = self.encode_query(frame)
        readout = self.read(state, q)
        logits = self.decode(readout)
        if mask_override is not None:
            fg = _as_image(mask_override, 1)
        else:
            fg = ops.reshape(ops.index(ops.softmax(logits, axis=0), 1), (1, *logits.shape[1:]))
        x_m = self.encode_memory(frame, fg)
        score = q if self.cfg.score_source == "query" else None
        self.update(state, x_m, state.t, mode, score_template=score)
        state.last_prediction = fg
        state.t += 1
        return logits, state


class PredictionModel(_MemoryModel):
    """Next-frame predictor reading memory with a shared 3-frame clip encoder."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        if cfg.task != "pred":
            raise ConfigError("PredictionModel needs task='pred'")
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(EncoderConfig(9, cfg.enc_blocks, cfg.width, cfg.downsample), rng)
        self._build_memory(rng, seed)
        n_up = int(math.log2(cfg.downsample))
        self.decoder = Decoder(2 * cfg.dv, cfg.width, n_up, cfg.dec_blocks, 3, rng)

    def encode_clip(self, frames) -> Tensor:
        frames = list(frames)
        if len(frames) != 3:
            raise ContractError(f"encode_clip needs exactly 3 frames, got {len(frames)}")
        imgs = [_as_image(f, 3) for f in frames]
        if len({im.shape for im in imgs}) != 1:
            raise DimensionError("clip frames must share dimensions")
        return self.encoder(ops.concat(imgs, axis=0))

    def decode(self, readout: Tensor) -> Tensor:
        return ops.sigmoid(self.decoder(readout))

    def init_state(self, frames, seed: int = 0) -> ModelState:
        """Seed memory with the encoding of the first three frames (pinned)."""
        frames = [_as_image(f, 3) for f in frames]
        if len(frames) != 3:
            raise ContractError(f"prediction state starts from exactly 3 frames, got {len(frames)}")
        g, p = _rngs(seed)
        bank = MemoryBank(self.cfg.k_slots, self.cfg.policy)
        state = ModelState(bank=bank, t=3, gumbel_rng=g, policy_rng=p, history=frames[:3])
        self.update(state, self.encode_clip(frames[:3]), 2, "eval")
        return state

    def step(self, state: ModelState, observed=None, mode: str = "eval") -> tuple[Tensor, ModelState]:
        """Predict frame ``state.t`` from the last three frames.

        ``observed`` (the true frame t) is appended to the history when given;
        otherwise the prediction is fed back.
        """
        if state is None or not state.bank.slots:
            raise StateError("call init_state before step")
        x = self.encode_clip(state.history[-3:])
        readout = self.read(state, x)
        pred = self.decode(readout)
        self.update(state, x, state.t - 1, mode)
        nxt = _as_image(observed, 3) if observed is not None else pred
        state.history = [*state.history[-2:], nxt]
        state.last_prediction = pred
        state.t += 1
        return pred, state


def _as_image(x, channels: int) -> Tensor:
    if not isinstance(x, Tensor):
        arr = np.asarray(x)
        if arr.ndim == 2:
            arr = arr[None]
        x = Tensor(arr.astype(get_dtype()))
    elif x.ndim == 2:
        x = ops.reshape(x, (1, *x.shape))
    if x.ndim != 3 or x.shape[0] != channels:
        raise DimensionError(f"expected a {channels}×H×W image, got shape {x.shape}")
    return x


def build_model(cfg: ModelConfig, seed: int = 0) -> VOSModel | PredictionModel:
    return VOSModel(cfg, seed) if cfg.task == "vos" else PredictionModel(cfg, seed)
