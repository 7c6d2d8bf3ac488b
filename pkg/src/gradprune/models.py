"""A tiny transformer encoder classifier, small enough to train in seconds.

Parameter naming is load-bearing: pruning policies and checkpoints address
parameters by these names, so the scheme is fixed and tested. Names partition
into three groups:

    embedding.*   token and position tables
    encoder.*     per-layer attention / norm / feed-forward parameters
    head.*        final norm and classifier

Only encoder weight *matrices* (names starting with ``encoder.`` and ending
in ``.weight``) are eligible for pruning; biases, norms, embeddings, and the
head stay dense.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import Checkpoint
from .tensor import (
    Tape,
    Tensor,
    embedding,
    gelu,
    layer_norm,
    matmul,
    softmax,
)


@dataclass(frozen=True)
class TinyEncoderConfig:
    vocab_size: int = 64
    max_sequence_length: int = 32
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    num_classes: int = 4
    init_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for field in ("vocab_size", "max_sequence_length", "hidden_dim",
                      "num_layers", "num_heads", "ffn_dim", "num_classes"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1, got {getattr(self, field)}")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} must be divisible by "
                f"num_heads {self.num_heads}"
            )
        if self.init_scale <= 0.0:
            raise ValueError(f"init_scale must be > 0, got {self.init_scale}")

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: TinyEncoderConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and its shape, in canonical (construction) order."""
    d = config.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embedding.token.weight": (config.vocab_size, d),
        "embedding.position.weight": (config.max_sequence_length, d),
    }
    for i in range(config.num_layers):
        pre = f"encoder.layer{i}."
        shapes[pre + "norm1.gain"] = (d,)
        shapes[pre + "norm1.bias"] = (d,)
        for proj in ("query", "key", "value", "output"):
            shapes[pre + f"attention.{proj}.weight"] = (d, d)
            shapes[pre + f"attention.{proj}.bias"] = (d,)
        shapes[pre + "norm2.gain"] = (d,)
        shapes[pre + "norm2.bias"] = (d,)
        shapes[pre + "ffn.expand.weight"] = (d, config.ffn_dim)
        shapes[pre + "ffn.expand.bias"] = (config.ffn_dim,)
        shapes[pre + "ffn.reduce.weight"] = (config.ffn_dim, d)
        shapes[pre + "ffn.reduce.bias"] = (d,)
    shapes["head.norm.gain"] = (d,)
    shapes["head.norm.bias"] = (d,)
    shapes["head.classifier.weight"] = (d, config.num_classes)
    shapes["head.classifier.bias"] = (config.num_classes,)
    return shapes


def parameter_group(name: str) -> str:
    """Which of the three top-level groups a parameter belongs to."""
    group = name.split(".", 1)[0]
    if group not in ("embedding", "encoder", "head"):
        raise ValueError(f"unrecognized parameter name {name!r}")
    return group


def prunable_parameter_names(names) -> list[str]:
    """Encoder weight matrices, in the given order; everything else is dense."""
    return [n for n in names if n.startswith("encoder.") and n.endswith(".weight")]


def init_parameters(config: TinyEncoderConfig) -> dict[str, Tensor]:
    """Fresh parameters: N(0, init_scale) weights, unit gains, zero biases.

    Draws happen in canonical name order from a PCG64 stream seeded with
    config.seed, so the same config always yields the same bytes.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, config.init_scale, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


class TinyEncoder:
    """Pre-norm transformer encoder with mean pooling and a linear classifier."""

    def __init__(self, config: TinyEncoderConfig, params: dict[str, Tensor]):
        expected = parameter_shapes(config)
        if set(params.keys()) != set(expected.keys()):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(
                f"parameter names do not match config (missing {sorted(missing)}, "
                f"unexpected {sorted(extra)})"
            )
        for name, shape in expected.items():
            if params[name].data.shape != shape:
                raise ValueError(
                    f"parameter {name} has shape {params[name].data.shape}, "
                    f"expected {shape}"
                )
        self.config = config
        # canonical order regardless of the caller's dict order (checkpoints,
        # for instance, store tensors sorted by name)
        self.params = {name: params[name] for name in expected}

    @classmethod
    def build(cls, config: TinyEncoderConfig) -> "TinyEncoder":
        return cls(config, init_parameters(config))

    def parameter_names(self) -> list[str]:
        return list(self.params.keys())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _linear(self, x: Tensor, name: str) -> Tensor:
        w = self.params[name + ".weight"]
        b = self.params[name + ".bias"]
        lead = x.shape[:-1]
        flat = x.reshape((int(np.prod(lead)), x.shape[-1]))
        y = matmul(flat, w) + b
        return y.reshape(lead + (w.shape[1],))

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return layer_norm(x) * self.params[name + ".gain"] + self.params[name + ".bias"]

    def forward(self, tokens: np.ndarray) -> Tensor:
        """tokens [batch, seq] of ids -> logits [batch, num_classes]."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be [batch, seq], got shape {tokens.shape}")
        batch, seq = tokens.shape
        if seq > self.config.max_sequence_length:
            raise ValueError(
                f"sequence length {seq} exceeds maximum "
                f"{self.config.max_sequence_length}"
            )
        cfg = self.config
        head_dim = cfg.hidden_dim // cfg.num_heads
        scale = 1.0 / math.sqrt(head_dim)

        x = embedding(self.params["embedding.token.weight"], tokens)
        pos = embedding(self.params["embedding.position.weight"], np.arange(seq))
        x = x + pos

        for i in range(cfg.num_layers):
            pre = f"encoder.layer{i}."
            h = self._norm(x, pre + "norm1")
            q = self._linear(h, pre + "attention.query")
            k = self._linear(h, pre + "attention.key")
            v = self._linear(h, pre + "attention.value")
            # [batch, seq, hidden] -> [batch, heads, seq, head_dim]
            split = (batch, seq, cfg.num_heads, head_dim)
            q = q.reshape(split).transpose((0, 2, 1, 3))
            k = k.reshape(split).transpose((0, 2, 1, 3))
            v = v.reshape(split).transpose((0, 2, 1, 3))
            scores = matmul(q, k.transpose((0, 1, 3, 2))) * scale
            attn = softmax(scores)
            ctx = matmul(attn, v)
            ctx = ctx.transpose((0, 2, 1, 3)).reshape((batch, seq, cfg.hidden_dim))
            x = x + self._linear(ctx, pre + "attention.output")

            h = self._norm(x, pre + "norm2")
            h = gelu(self._linear(h, pre + "ffn.expand"))
            x = x + self._linear(h, pre + "ffn.reduce")

        h = self._norm(x, "head.norm")
        pooled = h.mean(axis=1)
        flatb = self.params["head.classifier.bias"]
        logits = matmul(pooled, self.params["head.classifier.weight"]) + flatb
        return logits

    def to_checkpoint(self, masks: dict[str, np.ndarray] | None = None,
                      metadata: dict | None = None) -> Checkpoint:
        arrays = {n: p.data.copy() for n, p in self.params.items()}
        return Checkpoint(
            config=self.config.to_dict(),
            params=arrays,
            masks=None if masks is None else {n: m.copy() for n, m in masks.items()},
            metadata=dict(metadata or {}),
        )


def encoder_from_checkpoint(ckpt: Checkpoint, requires_grad: bool = True) -> TinyEncoder:
    config = TinyEncoderConfig(**ckpt.config)
    params = {
        name: Tensor(arr.copy(), requires_grad=requires_grad)
        for name, arr in ckpt.params.items()
    }
    return TinyEncoder(config, params)


def evaluate(model: TinyEncoder, tokens: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    """Plain accuracy, computed off-tape in batches."""
    tokens = np.asarray(tokens)
    labels = np.asarray(labels)
    if tokens.shape[0] != labels.shape[0]:
        raise ValueError(
            f"tokens and labels disagree: {tokens.shape[0]} vs {labels.shape[0]} rows"
        )
    correct = 0
    for start in range(0, tokens.shape[0], batch_size):
        chunk = tokens[start:start + batch_size]
        logits = model.forward(chunk)
        pred = logits.data.argmax(axis=-1)
        correct += int((pred == labels[start:start + batch_size]).sum())
    return correct / tokens.shape[0]


def train_teacher(data, config: TinyEncoderConfig | None = None, *,
                  epochs: int = 5, lr: float = 1e-3, batch_size: int = 32,
                  seed: int = 0) -> Checkpoint:
    """Train a dense teacher with plain cross-entropy and a constant lr.

    Returns a checkpoint whose metadata records the final validation
    accuracy. Divergence (a non-finite loss) raises immediately rather than
    letting garbage propagate into downstream runs.
    """
    from .distillation import cross_entropy  # local import, avoids a cycle
    from .optim import Adam
    from .tasks import iterate_batches

    if config is None:
        config = TinyEncoderConfig(num_classes=data.task.num_classes, seed=seed)
    if config.num_classes != data.task.num_classes:
        raise ValueError(
            f"model num_classes {config.num_classes} does not match task "
            f"num_classes {data.task.num_classes}"
        )
    model = TinyEncoder.build(config)
    opt = Adam(model.params, weight_decay=0.0)
    rng = np.random.Generator(np.random.PCG64(seed))
    step = 0
    for _ in range(epochs):
        for idx in iterate_batches(rng, data.train.tokens.shape[0], batch_size):
            with Tape() as tape:
                logits = model.forward(data.train.tokens[idx])
                loss = cross_entropy(logits, data.train.labels[idx])
            if not np.isfinite(loss.data):
                raise RuntimeError(f"teacher training diverged at step {step}")
            tape.backward(loss)
            opt.step(lr)
            step += 1
    val_accuracy = evaluate(model, data.val.tokens, data.val.labels)
    return model.to_checkpoint(metadata={
        "role": "teacher",
        "epochs": epochs,
        "lr": lr,
        "batch_size": batch_size,
        "seed": seed,
        "steps": step,
        "val_accuracy": val_accuracy,
    })
