"""Trainable encoders and their checkpoint format.

The video encoder maps a stack of frame features to a unit vector: shared
per-frame affine + tanh, mean over frames, affine projection, L2 normalize.
The temporal mean makes the embedding invariant to frame order. The label
projector (joint method only) is a single affine + L2 normalize from the
frozen label-embedding space into the video embedding space.

Methods:
  VE  video-only; no label path.
  WE  video mapped straight into the label space (embed_dim == label_dim,
      no projector); label supports are used raw.
  JE  both modalities mapped into a shared space via the projector.

Backward passes accumulate into each ParamBlock's gradient buffers; callers
zero/step via the optimizer. Checkpoints round-trip bit-exactly (OSM1,
float64 little-endian).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, MethodError
from .numcore import ParamBlock

METHOD_VE = "VE"
METHOD_WE = "WE"
METHOD_JE = "JE"
METHODS = (METHOD_VE, METHOD_WE, METHOD_JE)

_MAGIC = b"OSM1"
_METHOD_TAGS = {METHOD_VE: 0, METHOD_WE: 1, METHOD_JE: 2}
_TAG_METHODS = {tag: m for m, tag in _METHOD_TAGS.items()}


@dataclass(frozen=True)
class ModelConfig:
    method: str
    input_dim: int
    hidden_dim: int = 64
    embed_dim: int = 32
    label_dim: int = 32

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if min(self.input_dim, self.hidden_dim, self.embed_dim, self.label_dim) < 1:
            raise ConfigError("model dims must be positive")
        if self.method == METHOD_WE and self.embed_dim != self.label_dim:
            raise ConfigError(
                f"WE embeds directly into the label space: embed_dim "
                f"{self.embed_dim} must equal label_dim {self.label_dim}"
            )


@dataclass
class VideoForwardCache:
    """Intermediates of embed_video_batch needed for the backward pass."""

    flat_frames: np.ndarray
    activations: np.ndarray
    pooled: np.ndarray
    pre_norm: np.ndarray
    norms: np.ndarray
    outputs: np.ndarray
    n_frames: int


@dataclass
class LabelForwardCache:
    inputs: np.ndarray
    pre_norm: np.ndarray
    norms: np.ndarray
    outputs: np.ndarray


class EmbeddingModel:
    """Parameter container plus forward/backward for both encoders."""

    def __init__(
        self,
        config: ModelConfig,
        frame_layer: ParamBlock,
        out_layer: ParamBlock,
        label_projector: ParamBlock | None,
    ):
        config.validate()
        if frame_layer.weights.shape != (config.input_dim, config.hidden_dim):
            raise DimensionError("frame_layer shape mismatch")
        if out_layer.weights.shape != (config.hidden_dim, config.embed_dim):
            raise DimensionError("out_layer shape mismatch")
        if config.method == METHOD_JE:
            if label_projector is None:
                raise ConfigError("JE model requires a label projector")
            if label_projector.weights.shape != (config.label_dim, config.embed_dim):
                raise DimensionError("label_projector shape mismatch")
        elif label_projector is not None:
            raise ConfigError(f"{config.method} model must not carry a label projector")
        self.config = config
        self.frame_layer = frame_layer
        self.out_layer = out_layer
        self.label_projector = label_projector

    @property
    def method(self) -> str:
        return self.config.method

    def blocks(self) -> list[ParamBlock]:
        out = [self.frame_layer, self.out_layer]
        if self.label_projector is not None:
            out.append(self.label_projector)
        return out

    def zero_grad(self) -> None:
        for block in self.blocks():
            block.zero_grad()

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            config=self.config,
            frame_layer=self.frame_layer.copy(),
            out_layer=self.out_layer.copy(),
            label_projector=(
                None if self.label_projector is None else self.label_projector.copy()
            ),
        )

    # --- video path ---

    def embed_video_batch(
        self, frames: np.ndarray
    ) -> tuple[np.ndarray, VideoForwardCache]:
        """(B, F, input_dim) -> (B, embed_dim) unit rows plus backward cache."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 3:
            raise DimensionError("embed_video_batch: expected (B, F, D) input")
        b, f, d_in = frames.shape
        if d_in != self.config.input_dim:
            raise DimensionError(
                f"embed_video_batch: input dim {d_in} != {self.config.input_dim}"
            )
        flat = frames.reshape(b * f, d_in)
        act = np.tanh(flat @ self.frame_layer.weights + self.frame_layer.bias)
        pooled = act.reshape(b, f, self.config.hidden_dim).mean(axis=1)
        pre = pooled @ self.out_layer.weights + self.out_layer.bias
        norms = np.linalg.norm(pre, axis=1)
        if np.any(norms < 1e-12):
            raise DimensionError("embed_video_batch: zero-norm pre-normalization output")
        out = pre / norms[:, None]
        cache = VideoForwardCache(
            flat_frames=flat,
            activations=act,
            pooled=pooled,
            pre_norm=pre,
            norms=norms,
            outputs=out,
            n_frames=f,
        )
        return out, cache

    def backward_video_batch(self, cache: VideoForwardCache, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients for a prior embed_video_batch call."""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != cache.outputs.shape:
            raise DimensionError("backward_video_batch: grad shape mismatch")
        out, norms = cache.outputs, cache.norms
        inner = (out * grad_out).sum(axis=1, keepdims=True)
        g_pre = (grad_out - out * inner) / norms[:, None]
        self.out_layer.grad_weights += cache.pooled.T @ g_pre
        self.out_layer.grad_bias += g_pre.sum(axis=0)
        g_pooled = g_pre @ self.out_layer.weights.T
        f = cache.n_frames
        g_act = np.repeat(g_pooled / f, f, axis=0)
        g_affine = g_act * (1.0 - cache.activations**2)
        self.frame_layer.grad_weights += cache.flat_frames.T @ g_affine
        self.frame_layer.grad_bias += g_affine.sum(axis=0)

    def embed_instances(self, instances) -> tuple[np.ndarray, VideoForwardCache]:
        """Stack instances' frame features and embed them as one batch."""
        if not instances:
            raise DimensionError("embed_instances: empty list")
        frames = np.stack([inst.features for inst in instances])
        return self.embed_video_batch(frames)

    def embed_video(self, instance) -> np.ndarray:
        out, _ = self.embed_video_batch(instance.features[None, :, :])
        return out[0]

    # --- label path ---

    def embed_label_batch(
        self, label_embeddings: np.ndarray
    ) -> tuple[np.ndarray, LabelForwardCache]:
        """(C, label_dim) -> (C, embed_dim) unit rows through the projector."""
        if self.method != METHOD_JE:
            raise MethodError(f"{self.method} model has no label projector")
        x = np.asarray(label_embeddings, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.label_dim:
            raise DimensionError(
                f"embed_label_batch: expected (C, {self.config.label_dim}) input"
            )
        pre = x @ self.label_projector.weights + self.label_projector.bias
        norms = np.linalg.norm(pre, axis=1)
        if np.any(norms < 1e-12):
            raise DimensionError("embed_label_batch: zero-norm pre-normalization output")
        out = pre / norms[:, None]
        return out, LabelForwardCache(inputs=x, pre_norm=pre, norms=norms, outputs=out)

    def backward_label_batch(self, cache: LabelForwardCache, grad_out: np.ndarray) -> None:
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != cache.outputs.shape:
            raise DimensionError("backward_label_batch: grad shape mismatch")
        out, norms = cache.outputs, cache.norms
        inner = (out * grad_out).sum(axis=1, keepdims=True)
        g_pre = (grad_out - out * inner) / norms[:, None]
        self.label_projector.grad_weights += cache.inputs.T @ g_pre
        self.label_projector.grad_bias += g_pre.sum(axis=0)

    def embed_label(self, label_embedding: np.ndarray) -> np.ndarray:
        out, _ = self.embed_label_batch(np.asarray(label_embedding)[None, :])
        return out[0]


def init_model(config: ModelConfig, seed: int) -> EmbeddingModel:
    """Normal init scaled by 1/sqrt(fan_in), deterministic per seed.

    Block draw order is fixed (frame layer, output layer, projector) so the
    same seed gives bit-identical parameters.
    """
    config.validate()
    rng = np.random.default_rng(seed)

    def block(name: str, fan_in: int, fan_out: int) -> ParamBlock:
        scale = 1.0 / np.sqrt(fan_in)
        return ParamBlock(
            name=name,
            weights=rng.standard_normal((fan_in, fan_out)) * scale,
            bias=rng.standard_normal(fan_out) * scale,
        )

    frame_layer = block("frame_layer", config.input_dim, config.hidden_dim)
    out_layer = block("out_layer", config.hidden_dim, config.embed_dim)
    label_projector = None
    if config.method == METHOD_JE:
        label_projector = block("label_projector", config.label_dim, config.embed_dim)
    return EmbeddingModel(config, frame_layer, out_layer, label_projector)


# --- checkpoint IO ---


def save_checkpoint(path: str, model: EmbeddingModel) -> None:
    """OSM1: header (magic, version, method tag, dims, block count), then
    each block as name, shape, float64 little-endian weights and bias."""
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIII",
                1,
                _METHOD_TAGS[cfg.method],
                cfg.input_dim,
                cfg.hidden_dim,
                cfg.embed_dim,
                cfg.label_dim,
            )
        )
        blocks = model.blocks()
        fh.write(struct.pack("<I", len(blocks)))
        for blk in blocks:
            name = blk.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            rows, cols = blk.weights.shape
            fh.write(struct.pack("<II", rows, cols))
            fh.write(blk.weights.astype("<f8").tobytes(order="C"))
            fh.write(struct.pack("<I", blk.bias.shape[0]))
            fh.write(blk.bias.astype("<f8").tobytes(order="C"))


def load_checkpoint(path: str) -> EmbeddingModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 32:
        raise FormatError(f"{path}: truncated header")
    version, tag, d_in, d_h, d_e, d_b = struct.unpack("<IIIIII", blob[4:28])
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    if tag not in _TAG_METHODS:
        raise FormatError(f"{path}: unknown method tag {tag}")
    (n_blocks,) = struct.unpack("<I", blob[28:32])
    off = 32

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {off}, need {n} more")
        chunk = blob[off : off + n]
        off += n
        return chunk

    named: dict[str, ParamBlock] = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        rows, cols = struct.unpack("<II", take(8))
        weights = np.frombuffer(take(rows * cols * 8), dtype="<f8").reshape(rows, cols)
        (bias_len,) = struct.unpack("<I", take(4))
        bias = np.frombuffer(take(bias_len * 8), dtype="<f8")
        named[name] = ParamBlock(name=name, weights=weights.copy(), bias=bias.copy())
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    expected = {"frame_layer", "out_layer"}
    if _TAG_METHODS[tag] == METHOD_JE:
        expected.add("label_projector")
    if set(named) != expected:
        raise FormatError(f"{path}: blocks {sorted(named)} != expected {sorted(expected)}")
    config = ModelConfig(
        method=_TAG_METHODS[tag],
        input_dim=d_in,
        hidden_dim=d_h,
        embed_dim=d_e,
        label_dim=d_b,
    )
    return EmbeddingModel(
        config=config,
        frame_layer=named["frame_layer"],
        out_layer=named["out_layer"],
        label_projector=named.get("label_projector"),
    )
