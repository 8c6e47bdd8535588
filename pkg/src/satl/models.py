"""Network definitions: VGG-style encoder, classifier head, VAE decoder.

The encoder is shared structure between the two models, which is what makes
the transplant work: `build_vae_from_encoder` copies a trained classifier's
encoder into a fresh VAE, and `compose_adapted` puts an adapted VAE encoder
back under the original classifier head. An architecture fingerprint guards
both moves.

Checkpoint files are a small self-describing binary format (see
`save_checkpoint`) chosen so that save -> load -> save is byte-idempotent.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import tensor as T
from .engine.prng import Prng
from .engine.tensor import Tensor
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    FingerprintError,
)

DEFAULT_STAGES = ((2, 16), (2, 32), (2, 64))
DEFAULT_LATENT_CHANNELS = 32

CHECKPOINT_MAGIC = b"SATL"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    """Stack of conv stages; each stage is (conv count, output channels),
    3x3 kernels with padding 1, followed by a 2x2 maxpool."""

    input_shape: tuple = (3, 64, 64)
    stages: tuple = DEFAULT_STAGES

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(
            self, "stages", tuple((int(n), int(ch)) for n, ch in self.stages)
        )
        c, h, w = self.input_shape
        if c < 1 or h < 1 or w < 1:
            raise ConfigError(f"input_shape must be positive, got {self.input_shape}")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        for n, ch in self.stages:
            if n < 1 or ch < 1:
                raise ConfigError(f"bad stage {(n, ch)}: counts and channels must be >= 1")
        div = 2 ** len(self.stages)
        if h % div or w % div:
            raise ConfigError(
                f"spatial dims {h}x{w} not divisible by 2^{len(self.stages)} = {div}"
            )

    @property
    def feature_shape(self) -> tuple:
        """(channels, height, width) of the encoder output."""
        c, h, w = self.input_shape
        div = 2 ** len(self.stages)
        return (self.stages[-1][1], h // div, w // div)

    @property
    def flat_features(self) -> int:
        c, h, w = self.feature_shape
        return c * h * w

    def canonical(self) -> str:
        c, h, w = self.input_shape
        stages = ",".join(f"{n}x{ch}" for n, ch in self.stages)
        return f"in={c}x{h}x{w};stages={stages}"


def fingerprint(config: EncoderConfig) -> int:
    """Stable 64-bit hash of the encoder architecture."""
    digest = hashlib.blake2b(config.canonical().encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _he_conv(prng: Prng, out_ch: int, in_ch: int, k: int, dtype) -> Tensor:
    std = np.sqrt(2.0 / (in_ch * k * k))
    data = (prng.normal((out_ch, in_ch, k, k)) * std).astype(dtype)
    return Tensor(data, requires_grad=True, dtype=dtype)


def _he_dense(prng: Prng, d_in: int, d_out: int, dtype) -> Tensor:
    std = np.sqrt(2.0 / d_in)
    data = (prng.normal((d_in, d_out)) * std).astype(dtype)
    return Tensor(data, requires_grad=True, dtype=dtype)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, dtype=dtype)


def _encoder_plan(config: EncoderConfig) -> list:
    """[(param name stem, in_ch, out_ch), ...] in forward order."""
    plan = []
    in_ch = config.input_shape[0]
    for si, (n, ch) in enumerate(config.stages):
        for ci in range(n):
            plan.append((f"enc.s{si}.c{ci}", in_ch, ch))
            in_ch = ch
    return plan


def _decoder_plan(config: EncoderConfig, latent_channels: int) -> list:
    """[(name stem, in_ch, out_ch, activation), ...]; mirrors the encoder.

    Each decoder stage upsamples then runs the stage's convs; the last conv
    of a stage steps down to the next-shallower stage's width, and the final
    conv overall maps to the input channels with a sigmoid.
    """
    plan = []
    rev = list(reversed(config.stages))
    in_ch = latent_channels
    for j, (n, ch) in enumerate(rev):
        target = rev[j + 1][1] if j + 1 < len(rev) else config.input_shape[0]
        last_stage = j == len(rev) - 1
        for ci in range(n):
            is_last_conv = ci == n - 1
            out_ch = target if is_last_conv else ch
            act = "sigmoid" if (last_stage and is_last_conv) else "relu"
            plan.append((f"dec.s{j}.c{ci}", in_ch, out_ch, act))
            in_ch = out_ch
    return plan


def encoder_param_names(config: EncoderConfig) -> list:
    names = []
    for stem, _, _ in _encoder_plan(config):
        names.extend((f"{stem}.weight", f"{stem}.bias"))
    return names


def _encode(params: dict, config: EncoderConfig, x: Tensor) -> Tensor:
    if x.ndim != 4 or tuple(x.shape[1:]) != config.input_shape:
        raise DimensionError(
            f"batch shape {x.shape} does not match input {config.input_shape}"
        )
    h = x
    i = 0
    plan = _encoder_plan(config)
    for si, (n, _) in enumerate(config.stages):
        for _ in range(n):
            stem = plan[i][0]
            h = T.relu(T.conv2d(h, params[f"{stem}.weight"], params[f"{stem}.bias"], padding=1))
            i += 1
        h = T.maxpool2(h)
    return h


class ClassifierModel:
    """Encoder plus a single dense head producing 2 logits."""

    kind = "classifier"

    def __init__(self, config: EncoderConfig, params: dict):
        self.config = config
        self.params = params

    def forward(self, batch: Tensor) -> Tensor:
        feats = _encode(self.params, self.config, batch)
        flat = T.reshape(feats, (batch.shape[0], self.config.flat_features))
        return T.dense(flat, self.params["head.weight"], self.params["head.bias"])

    @property
    def fingerprint(self) -> int:
        return fingerprint(self.config)

    def head_param_names(self) -> list:
        return ["head.weight", "head.bias"]

    def encoder_param_names(self) -> list:
        return encoder_param_names(self.config)


class VaeModel:
    """Encoder, 1x1-conv mu/logvar heads over a spatial latent map, and a
    mirrored upsample+conv decoder ending in a sigmoid."""

    kind = "vae"

    def __init__(self, config: EncoderConfig, latent_channels: int, params: dict):
        self.config = config
        self.latent_channels = latent_channels
        self.params = params

    def forward(
        self,
        batch: Tensor,
        mode: str = "eval",
        prng: Optional[Prng] = None,
        eps: Optional[np.ndarray] = None,
    ) -> "tuple[Tensor, Tensor, Tensor, Tensor]":
        """Returns (reconstruction, mu, logvar, z).

        Train mode samples z = mu + exp(logvar/2) * eps with eps from `prng`
        (or from the explicit `eps` array); eval mode uses z = mu.
        """
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
        feats = _encode(self.params, self.config, batch)
        mu = T.conv2d(feats, self.params["mu.weight"], self.params["mu.bias"])
        logvar = T.conv2d(feats, self.params["logvar.weight"], self.params["logvar.bias"])
        logvar = T.clip(logvar, -10.0, 10.0)  # keeps exp() well-behaved

        if mode == "train":
            if eps is None:
                if prng is None:
                    raise ContractError("train mode needs a prng (or explicit eps)")
                eps = prng.normal(mu.shape)
            eps_t = Tensor(np.asarray(eps), requires_grad=False, dtype=mu.dtype)
            if eps_t.shape != mu.shape:
                raise DimensionError(f"eps shape {eps_t.shape} != latent shape {mu.shape}")
            std = T.exp(T.scale(logvar, 0.5))
            z = T.add(mu, T.mul(std, eps_t))
        else:
            z = mu

        h = z
        for stem, _, _, act in _decoder_plan(self.config, self.latent_channels):
            if stem.endswith(".c0"):
                h = T.upsample2(h)
            h = T.conv2d(h, self.params[f"{stem}.weight"], self.params[f"{stem}.bias"], padding=1)
            h = T.sigmoid(h) if act == "sigmoid" else T.relu(h)
        return h, mu, logvar, z

    @property
    def fingerprint(self) -> int:
        return fingerprint(self.config)

    def encoder_param_names(self) -> list:
        return encoder_param_names(self.config)

    def other_param_names(self) -> list:
        enc = set(self.encoder_param_names())
        return [k for k in self.params if k not in enc]


def build_classifier(config: EncoderConfig, prng: Prng, dtype=np.float32) -> ClassifierModel:
    """He-initialized conv/dense weights from the prng stream, zero biases."""
    params: dict = {}
    for stem, in_ch, out_ch in _encoder_plan(config):
        params[f"{stem}.weight"] = _he_conv(prng, out_ch, in_ch, 3, dtype)
        params[f"{stem}.bias"] = _zeros((out_ch,), dtype)
    params["head.weight"] = _he_dense(prng, config.flat_features, 2, dtype)
    params["head.bias"] = _zeros((2,), dtype)
    return ClassifierModel(config, params)


def build_vae_from_encoder(
    source: ClassifierModel,
    prng: Prng,
    latent_channels: int = DEFAULT_LATENT_CHANNELS,
) -> VaeModel:
    """VAE whose encoder starts as a copy (not an alias) of the source
    classifier's encoder; latent heads and decoder are freshly initialized."""
    if latent_channels < 1:
        raise ConfigError("latent_channels must be >= 1")
    config = source.config
    dtype = source.params["head.weight"].dtype
    params: dict = {}
    for name in encoder_param_names(config):
        params[name] = Tensor(source.params[name].data.copy(), requires_grad=True)
    feat_ch = config.feature_shape[0]
    params["mu.weight"] = _he_conv(prng, latent_channels, feat_ch, 1, dtype)
    params["mu.bias"] = _zeros((latent_channels,), dtype)
    params["logvar.weight"] = _he_conv(prng, latent_channels, feat_ch, 1, dtype)
    params["logvar.bias"] = _zeros((latent_channels,), dtype)
    for stem, in_ch, out_ch, _ in _decoder_plan(config, latent_channels):
        params[f"{stem}.weight"] = _he_conv(prng, out_ch, in_ch, 3, dtype)
        params[f"{stem}.bias"] = _zeros((out_ch,), dtype)
    return VaeModel(config, latent_channels, params)


def compose_adapted(source: ClassifierModel, adapted: VaeModel) -> ClassifierModel:
    """Adapted encoder under the untouched source head (the transplant)."""
    if source.fingerprint != adapted.fingerprint:
        raise FingerprintError(
            f"encoder fingerprints differ: source {source.fingerprint:#x} "
            f"vs adapted {adapted.fingerprint:#x}"
        )
    params: dict = {}
    for name in encoder_param_names(source.config):
        params[name] = Tensor(adapted.params[name].data.copy(), requires_grad=True)
    for name in ("head.weight", "head.bias"):
        params[name] = Tensor(source.params[name].data.copy(), requires_grad=True)
    return ClassifierModel(source.config, params)


def params_hash(params: dict, names=None) -> str:
    """Order-independent content hash of (a subset of) named parameters."""
    h = hashlib.blake2b(digest_size=16)
    for name in sorted(names if names is not None else params):
        h.update(name.encode())
        h.update(params[name].data.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoint persistence
#
# layout (all integers little-endian):
#   magic "SATL" | u32 version | u64 encoder fingerprint | u32 block count
#   per block: u32 name length | name utf-8 | u32 rank | u32 dims... | f32 payload
#   u32 metadata length | metadata json utf-8


def _metadata(model, extra: Optional[dict]) -> dict:
    meta = {
        "kind": model.kind,
        "input_shape": list(model.config.input_shape),
        "stages": [list(s) for s in model.config.stages],
        "epoch": 0,
        "best_val_accuracy": None,
        "seed": None,
    }
    if model.kind == "vae":
        meta["latent_channels"] = model.latent_channels
    if extra:
        unknown = set(extra) - {"epoch", "best_val_accuracy", "seed"}
        if unknown:
            raise ContractError(f"unknown checkpoint metadata keys: {sorted(unknown)}")
        meta.update(extra)
    return meta


def save_checkpoint(model, path, metadata: Optional[dict] = None) -> None:
    """Write the model to `path`; float32 models only (the on-disk payload
    format is f32)."""
    for name, p in model.params.items():
        if p.dtype != np.float32:
            raise ContractError(f"checkpoints store float32; param {name} is {p.dtype}")
    meta_bytes = json.dumps(_metadata(model, metadata), sort_keys=True, separators=(",", ":")).encode()
    names = sorted(model.params)
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<Q", model.fingerprint)
    out += struct.pack("<I", len(names))
    for name in names:
        nb = name.encode()
        arr = model.params[name].data
        out += struct.pack("<I", len(nb))
        out += nb
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4", copy=False).tobytes()
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated (wanted {n} bytes at {self.pos})")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path):
    """Read a checkpoint back into a ClassifierModel or VaeModel.

    Verifies magic, version, and that the stored fingerprint matches the
    architecture described by the metadata.
    """
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from None
    r = _Reader(buf, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    stored_fp = r.u64()
    blocks = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        if rank > 8:
            raise CheckpointError(f"{path}: implausible rank {rank} for block {name!r}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * count)
        blocks[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    meta = json.loads(r.take(r.u32()).decode())
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")

    config = EncoderConfig(tuple(meta["input_shape"]), tuple(tuple(s) for s in meta["stages"]))
    if fingerprint(config) != stored_fp:
        raise FingerprintError(
            f"{path}: stored fingerprint {stored_fp:#x} does not match "
            f"architecture {config.canonical()!r}"
        )
    params = {k: Tensor(v, requires_grad=True) for k, v in blocks.items()}
    kind = meta.get("kind")
    if kind == "classifier":
        model = ClassifierModel(config, params)
    elif kind == "vae":
        model = VaeModel(config, int(meta["latent_channels"]), params)
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")

    expected = set(encoder_param_names(config))
    if kind == "classifier":
        expected |= {"head.weight", "head.bias"}
    else:
        expected |= {"mu.weight", "mu.bias", "logvar.weight", "logvar.bias"}
        expected |= {
            f"{stem}.{leaf}"
            for stem, _, _, _ in _decoder_plan(config, model.latent_channels)
            for leaf in ("weight", "bias")
        }
    if set(blocks) != expected:
        missing = sorted(expected - set(blocks))
        extra = sorted(set(blocks) - expected)
        raise CheckpointError(f"{path}: parameter blocks mismatch (missing {missing}, extra {extra})")
    model.meta = meta
    return model
