"""Encoder, projection head and classifier head.

The baseline network is ``classify(encode(x))``; contrastive pre-training
optimizes ``project(encode(x))`` and then trains the classifier head on top
of a frozen encoder.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    BatchNormState,
    ShapeError,
    Tensor,
    batch_norm,
    conv2d,
    dense,
    flatten,
    l2_normalize,
    max_pool2d,
    relu,
    swap_batch_channel,
)
from .labels import NUM_CLASSES

log = logging.getLogger(__name__)

N_BLOCKS = 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 192
    block_channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    kernel_size: int = 3
    fc_hidden: int = 128
    num_classes: int = NUM_CLASSES
    projection_hidden: int = 64
    projection_dim: int = 32
    normalize_projection: bool = True

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        if len(self.block_channels) != N_BLOCKS:
            raise ConfigError(f"need exactly {N_BLOCKS} block channel counts, got {len(self.block_channels)}")
        if any(c < 1 for c in self.block_channels):
            raise ConfigError("channel counts must be positive")
        if self.input_size < 2**N_BLOCKS or self.input_size % 2**N_BLOCKS:
            raise ConfigError(f"input_size {self.input_size} is not a positive multiple of {2**N_BLOCKS}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.num_classes != NUM_CLASSES:
            raise ConfigError(f"num_classes is fixed at {NUM_CLASSES}")
        for name in ("fc_hidden", "projection_hidden", "projection_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def feature_dim(self) -> int:
        side = self.input_size // 2**N_BLOCKS
        return self.block_channels[-1] * side * side

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        return d


class _Part:
    """Named parameter tensors plus (for the encoder) batch-norm state."""

    prefix = ""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        self.frozen = False

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every tensor needed to restore this part, keyed by checkpoint name."""
        out = {k: p.data for k, p in self.params.items()}
        for k, st in self.bn.items():
            out[f"{k}.running_mean"] = st.running_mean
            out[f"{k}.running_var"] = st.running_var
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, target in self.state_arrays().items():
            if name not in arrays:
                raise KeyError(f"missing tensor {name!r}")
            src = arrays[name]
            if src.shape != target.shape:
                raise ShapeError(f"tensor {name!r}: checkpoint shape {src.shape} != model shape {target.shape}")
            target[...] = src

    def copy_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class EncoderModel(_Part):
    prefix = "encoder"


class ProjectionModel(_Part):
    prefix = "projection"


class ClassifierModel(_Part):
    prefix = "classifier"


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(n: int, dtype) -> Tensor:
    return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


def _ones(n: int, dtype) -> Tensor:
    return Tensor(np.ones(n, dtype=dtype), requires_grad=True)


def _add_dense(part: _Part, name: str, rng, d_in: int, d_out: int, dtype) -> None:
    part.params[f"{name}.weight"] = _he_uniform(rng, (d_in, d_out), d_in, dtype)
    part.params[f"{name}.bias"] = _zeros(d_out, dtype)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32, bn_momentum: float = 0.9, bn_eps: float = 1e-5):
    """Create ``(encoder, projection, classifier)`` with seeded initialization.

    Each part draws from its own stream, so e.g. the classifier's weights do
    not depend on the encoder's size.
    """
    streams = np.random.SeedSequence([seed, 0x30DE1]).spawn(3)
    k = config.kernel_size

    enc = EncoderModel(config)
    rng = np.random.default_rng(streams[0])
    c_in = 1
    for b, c_out in enumerate(config.block_channels):
        for j in range(2):
            base = f"encoder.block{b}.conv{j}"
            fan_in = c_in * k * k
            enc.params[f"{base}.weight"] = _he_uniform(rng, (c_out, c_in, k, k), fan_in, dtype)
            enc.params[f"{base}.bias"] = _zeros(c_out, dtype)
            bnn = f"encoder.block{b}.bn{j}"
            enc.params[f"{bnn}.gamma"] = _ones(c_out, dtype)
            enc.params[f"{bnn}.beta"] = _zeros(c_out, dtype)
            enc.bn[bnn] = BatchNormState.create(c_out, dtype, bn_momentum, bn_eps)
            c_in = c_out

    proj = ProjectionModel(config)
    rng = np.random.default_rng(streams[1])
    _add_dense(proj, "projection.fc0", rng, config.feature_dim, config.projection_hidden, dtype)
    _add_dense(proj, "projection.fc1", rng, config.projection_hidden, config.projection_dim, dtype)

    cls = ClassifierModel(config)
    rng = np.random.default_rng(streams[2])
    _add_dense(cls, "classifier.fc0", rng, config.feature_dim, config.fc_hidden, dtype)
    _add_dense(cls, "classifier.fc1", rng, config.fc_hidden, config.num_classes, dtype)

    log.debug(
        "built model: encoder %d, projection %d, classifier %d parameters",
        enc.num_parameters(), proj.num_parameters(), cls.num_parameters(),
    )
    return enc, proj, cls


def _as_input(batch, dtype) -> Tensor:
    if isinstance(batch, Tensor):
        return batch
    return Tensor(np.asarray(batch, dtype=dtype))


def encode(enc: EncoderModel, batch, mode: str = "train") -> Tensor:
    """``[B, 1, S, S]`` images to ``[B, feature_dim]`` features.

    A frozen encoder always runs its batch norms in eval mode.
    """
    cfg = enc.config
    dtype = next(iter(enc.params.values())).dtype
    x = _as_input(batch, dtype)
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
        raise ShapeError(f"encoder expects [B, 1, {cfg.input_size}, {cfg.input_size}], got {x.shape}")
    if enc.frozen:
        mode = "eval"
    p = enc.params
    x = swap_batch_channel(x)  # run channel-major, see conv2d
    for b in range(N_BLOCKS):
        for j in range(2):
            conv = f"encoder.block{b}.conv{j}"
            bnn = f"encoder.block{b}.bn{j}"
            x = conv2d(x, p[f"{conv}.weight"], p[f"{conv}.bias"], stride=1, padding="same", layout="CNHW")
            x = batch_norm(x, p[f"{bnn}.gamma"], p[f"{bnn}.beta"], enc.bn[bnn], mode=mode, layout="CNHW")
            x = relu(x)
        x = max_pool2d(x)
    return flatten(swap_batch_channel(x))


def _check_features(part: _Part, features: Tensor) -> None:
    d = part.config.feature_dim
    if features.ndim != 2 or features.shape[1] != d:
        raise ShapeError(f"expected features of shape [B, {d}], got {features.shape}")


def project(proj: ProjectionModel, features: Tensor) -> Tensor:
    _check_features(proj, features)
    p = proj.params
    h = relu(dense(features, p["projection.fc0.weight"], p["projection.fc0.bias"]))
    out = dense(h, p["projection.fc1.weight"], p["projection.fc1.bias"])
    if proj.config.normalize_projection:
        out = l2_normalize(out, 1e-12)
    return out


def classify(cls: ClassifierModel, features: Tensor) -> Tensor:
    """Raw logits; softmax belongs to the loss or the evaluator."""
    _check_features(cls, features)
    p = cls.params
    h = relu(dense(features, p["classifier.fc0.weight"], p["classifier.fc0.bias"]))
    return dense(h, p["classifier.fc1.weight"], p["classifier.fc1.bias"])


def set_frozen(enc: EncoderModel, frozen: bool) -> None:
    """Frozen encoders are skipped by the optimizer and run batch norm in eval mode."""
    enc.frozen = bool(frozen)
    for t in enc.params.values():
        t.requires_grad = not enc.frozen
        if enc.frozen:
            t.grad = None
