"""Meta-learning model: a trainable encoder maps a 4-frame video to a kernel
and threshold, which feed a parameter-free soft rollout of the first frame.

The encoder is a small CNN (stride-2 conv stack, global average pooling, two
dense heads); the rollout stage reuses the encoder outputs and has no weights
of its own, so the total parameter count equals the encoder's.  The kernel
head's bias is initialized to a centered unit-sum gaussian so the very first
rollouts already behave like an average front evolution instead of a dead
all-zero dynamics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .autodiff import Node, Tape
from .datagen import VideoSample, make_rng
from .dynamics import HARD, DynParams, Video, rollout
from .kernels import Kernel, gaussian
from .mbonet import TrainConfig, TrainingDiverged
from .optim import make_optimizer

CHECKPOINT_FORMAT = 1
INPUT_FRAMES = 4


@dataclass
class MetaEncoder:
    """Conv stack (stride-2, relu) + global average pool + dense heads for
    the k*k kernel values and the (sigmoid-squashed) threshold."""

    kernel_size: int
    channels: tuple[int, int, int] = (16, 32, 32)
    weights: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def initialize(cls, kernel_size: int, seed: int = 0,
                   channels: tuple[int, int, int] = (16, 32, 32)) -> "MetaEncoder":
        """Uniform fan-in init; the kernel head's bias starts as a flattened
        unit-sum gaussian (sigma = k/6) and the threshold head's bias at 0."""
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        rng = make_rng(seed, 0xE0)
        enc = cls(kernel_size=kernel_size, channels=tuple(channels))
        w = enc.weights
        cin = INPUT_FRAMES
        for i, cout in enumerate(enc.channels, start=1):
            bound = 1.0 / np.sqrt(cin * 9)
            w[f"conv{i}_w"] = rng.uniform(-bound, bound, size=(cout, cin, 3, 3))
            w[f"conv{i}_b"] = rng.uniform(-bound, bound, size=(cout,))
            cin = cout
        feat = enc.channels[-1]
        bound = 1.0 / np.sqrt(feat)
        k2 = kernel_size * kernel_size
        w["head_k_w"] = rng.uniform(-bound, bound, size=(k2, feat))
        w["head_k_b"] = gaussian(kernel_size, sigma_x=kernel_size / 6.0).grid.reshape(-1).copy()
        w["head_a_w"] = rng.uniform(-bound, bound, size=(1, feat))
        w["head_a_b"] = np.zeros(1)
        return enc

    def parameter_count(self) -> int:
        return sum(v.size for v in self.weights.values())


@dataclass
class MetaModel:
    """Encoder plus the frozen-rollout hyperparameters."""

    encoder: MetaEncoder
    steepness: float = 100.0
    layers: int = 3

    def parameter_count(self) -> int:
        # the rollout stage is parameter-free by construction
        return self.encoder.parameter_count()


def _encoder_graph(tape: Tape, weights: dict[str, Node], frames: np.ndarray, k: int):
    """Batched encoder forward: frames (N,4,H,W) -> kernels (N,k,k), a (N,).

    The kernel head is a centered dense layer: the input-dependent part is
    projected to zero sum before the shared bias is added, so every emitted
    kernel carries the same (learnable) total mass.  Rescaling a kernel and
    threshold together leaves the rollout unchanged, and pinning the mass
    per video closes that loophole; thresholds must then explain threshold
    differences.
    """
    x = tape.leaf(frames)
    n_layers = sum(1 for name in weights if name.startswith("conv") and name.endswith("_w"))
    for i in range(1, n_layers + 1):
        x = tape.relu(tape.conv_layer(x, weights[f"conv{i}_w"], weights[f"conv{i}_b"], stride=2))
    feat = tape.global_average_pool(x)
    zero = tape.leaf(np.zeros(k * k))
    dev = tape.center(tape.dense(feat, weights["head_k_w"], zero))
    kflat = tape.add_bias(dev, weights["head_k_b"])
    kmat = tape.reshape(kflat, (frames.shape[0], k, k))
    a_raw = tape.dense(feat, weights["head_a_w"], weights["head_a_b"])
    a = tape.sigmoid(tape.reshape(a_raw, (frames.shape[0],)))
    return kmat, a


def _rollout_graph(tape: Tape, frame0: np.ndarray, kmat: Node, a: Node,
                   steepness: float, layers: int, targets=None):
    """Soft rollout with per-sample kernels/thresholds; optionally accumulates
    the frame-wise mean-squared-error loss."""
    x = tape.leaf(frame0)
    preds, loss = [], None
    for i in range(layers):
        x = tape.sigmoid_threshold(tape.conv2d_same(x, kmat), a, steepness)
        preds.append(x)
        if targets is not None:
            term = tape.mse_loss(x, targets[i])
            loss = term if loss is None else tape.add(loss, term)
    return preds, loss


def _stack_inputs(samples, layers):
    shape = samples[0].noisy.shape
    for i, s in enumerate(samples):
        if s.noisy.shape[0] < layers + 1:
            raise ValueError(f"sample {i} has {s.noisy.shape[0]} frames, need {layers + 1}")
        if s.noisy.shape[1:] != shape[1:]:
            raise ValueError(f"sample {i} frame shape {s.noisy.shape[1:]} != {shape[1:]}")
    frames = np.stack([s.noisy[:INPUT_FRAMES] for s in samples])
    targets = [np.stack([s.noisy[i + 1] for s in samples]) for i in range(layers)]
    return frames, targets


def _weight_nodes(tape: Tape, weights: dict[str, np.ndarray]) -> dict[str, Node]:
    return {name: tape.leaf(value, param=True, name=name) for name, value in weights.items()}


def encode(model: MetaModel, frames: Video) -> tuple[np.ndarray, float]:
    """Map one video's first four frames to (raw kernel grid, threshold)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < INPUT_FRAMES:
        raise ValueError(f"encode needs >= {INPUT_FRAMES} frames, got {frames.shape}")
    tape = Tape()
    nodes = _weight_nodes(tape, model.encoder.weights)
    kmat, a = _encoder_graph(tape, nodes, frames[None, :INPUT_FRAMES], model.encoder.kernel_size)
    return np.array(kmat.value[0]), float(a.value[0])


def forward_train(model: MetaModel, sample: VideoSample) -> Video:
    """Soft predictions for frames 2..L+1 of one sample."""
    frames, _ = _stack_inputs([sample], model.layers)
    tape = Tape()
    nodes = _weight_nodes(tape, model.encoder.weights)
    kmat, a = _encoder_graph(tape, nodes, frames, model.encoder.kernel_size)
    preds, _ = _rollout_graph(tape, frames[:, 0], kmat, a, model.steepness, model.layers)
    return np.stack([p.value[0] for p in preds])


def loss(model: MetaModel, samples) -> float:
    """Mean over videos of per-pixel squared error summed over frames 2..L+1."""
    frames, targets = _stack_inputs(samples, model.layers)
    tape = Tape()
    nodes = _weight_nodes(tape, model.encoder.weights)
    kmat, a = _encoder_graph(tape, nodes, frames, model.encoder.kernel_size)
    _, loss_node = _rollout_graph(tape, frames[:, 0], kmat, a, model.steepness,
                                  model.layers, targets)
    return float(loss_node.value)


@dataclass
class MetaTrainResult:
    model: MetaModel
    history: list[float]


def train(samples, config: TrainConfig, channels: tuple[int, int, int] = (16, 32, 32),
          model: MetaModel | None = None) -> MetaTrainResult:
    """Fit the encoder across videos spanning many kernel/threshold combos."""
    if not samples:
        raise ValueError("no training samples")
    if model is None:
        encoder = MetaEncoder.initialize(config.kernel_size, seed=config.seed, channels=channels)
        model = MetaModel(encoder=encoder, steepness=config.steepness, layers=config.layers)
    frames, targets = _stack_inputs(samples, model.layers)
    n = frames.shape[0]
    weights = model.encoder.weights
    # three speeds: the threshold head races (it must explain threshold
    # differences), the shared kernel-mass carrier (the kernel head's bias)
    # crawls so the overall scale stays anchored near its unit-sum start,
    # and the rest learns shape at the normal rate
    groups = {
        "head_a": ({k: v for k, v in weights.items() if k.startswith("head_a")},
                   config.threshold_lr),
        "head_k_bias": ({"head_k_b": weights["head_k_b"]}, config.lr),
        "stack": ({k: v for k, v in weights.items()
                   if k.startswith("conv") or k == "head_k_w"}, config.encoder_lr),
    }
    optimizers = {
        name: make_optimizer(config.optimizer, params, lr)
        for name, (params, lr) in groups.items()
    }
    order_rng = make_rng(config.seed, 0xE1)
    history = []

    batch = config.batch_size if config.batch_size > 0 else n
    for epoch in range(config.epochs):
        order = order_rng.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            tape = Tape()
            nodes = _weight_nodes(tape, weights)
            kmat, a = _encoder_graph(tape, nodes, frames[idx], model.encoder.kernel_size)
            _, loss_node = _rollout_graph(tape, frames[idx, 0], kmat, a,
                                          model.steepness, model.layers,
                                          [t[idx] for t in targets])
            value = float(loss_node.value)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, value)
            grads = tape.backward(loss_node)
            named = {name: grads[node] for name, node in nodes.items()}
            for group_name, (params, _) in groups.items():
                # optional warm-up: hold the shared kernel mass at its
                # unit-sum start while thresholds and features settle
                if group_name == "head_k_bias" and epoch < config.warmup_epochs:
                    continue
                optimizers[group_name].step({k: named[k] for k in params})
            epoch_loss += value * len(idx)
        history.append(epoch_loss / n)
    return MetaTrainResult(model=model, history=history)


def predict(model: MetaModel, frames: Video, n_steps: int) -> tuple[Kernel, float, Video]:
    """Encode once, then hard rollout from the first frame; returns the
    inferred dynamics parameters alongside the frames."""
    kernel_grid, a = encode(model, frames)
    params = DynParams(Kernel(kernel_grid, normalized=False), a, model.steepness)
    video = rollout(np.asarray(frames, dtype=np.float64)[0], params, n_steps, mode=HARD)
    return Kernel(kernel_grid, normalized=False), a, video


def save_checkpoint(model: MetaModel, directory) -> Path:
    """JSON manifest (architecture + tensor index) plus one little-endian
    float64 payload holding every weight in manifest order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(model.encoder.weights)
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "kind": "meta",
        "kernel_size": model.encoder.kernel_size,
        "channels": list(model.encoder.channels),
        "s": float(model.steepness),
        "layers": int(model.layers),
        "tensors": [
            {"name": n, "shape": list(model.encoder.weights[n].shape)} for n in names
        ],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    payload = b"".join(
        np.ascontiguousarray(model.encoder.weights[n], dtype="<f8").tobytes() for n in names
    )
    (directory / "weights.bin").write_bytes(payload)
    return directory


def load_checkpoint(directory) -> MetaModel:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(
            f"checkpoint format {manifest.get('format_version')} unsupported "
            f"(expected {CHECKPOINT_FORMAT})"
        )
    if manifest.get("kind") != "meta":
        raise ValueError(f"not a meta checkpoint: kind={manifest.get('kind')!r}")
    raw = np.frombuffer((directory / "weights.bin").read_bytes(), dtype="<f8")
    weights, offset = {}, 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        weights[entry["name"]] = raw[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != raw.size:
        raise ValueError(f"weight payload has {raw.size} values, expected {offset}")
    encoder = MetaEncoder(kernel_size=manifest["kernel_size"],
                          channels=tuple(manifest["channels"]), weights=weights)
    return MetaModel(encoder=encoder, steepness=manifest["s"], layers=manifest["layers"])
