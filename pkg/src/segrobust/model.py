"""Small fully-convolutional segmentation network with explicit
backpropagation, plus the trainer: momentum SGD, decoupled weight decay,
poly learning-rate schedule, and scale/crop augmentation.

The network keeps the input resolution (3x3 same-padding convs, no
downsampling): 3 -> 16 -> 32 -> 32 -> C_out by default, ReLU between
layers, linear final layer. The body and the final classifier layer use
separate learning rates.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError, UsageError
from .heads import BACKGROUND, HeadKind, LogitMap, batch_loss
from .numerics import (_conv2d_cols, as_tensor, bilinear_resize, conv2d_backward,
                       nearest_resize, relu, relu_backward)
from .rng import keyed_rng

CHECKPOINT_VERSION = "segrobust-checkpoint-v1"
DEFAULT_HIDDEN = (16, 32, 32)


@dataclass(frozen=True)
class TrainConfig:
    head: HeadKind = HeadKind.SOFTMAX
    num_classes: int = 4
    base_lr: float = 0.01
    classifier_lr: float = 0.1
    weight_decay: float = 5e-5
    momentum: float = 0.9
    batch_size: int = 8
    total_iters: int = 3000
    crop_size: int = 64
    scale_range: tuple = (0.75, 1.25)
    poly_power: float = 0.9
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= 1 <= hi):
            raise UsageError(f"scale_range must satisfy 0 < lo <= 1 <= hi, got {self.scale_range}")
        if self.crop_size < 16:
            raise UsageError("crop_size must be >= 16")
        if self.total_iters < 0:
            raise UsageError("total_iters must be >= 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")


@dataclass
class SegNet:
    kernels: list
    biases: list
    head: HeadKind
    num_classes: int

    @property
    def num_layers(self) -> int:
        return len(self.kernels)

    def out_channels(self) -> int:
        return self.kernels[-1].shape[3]

    def parameters(self):
        """Flat list of parameter arrays, kernels then bias per layer."""
        out = []
        for k, b in zip(self.kernels, self.biases):
            out.extend((k, b))
        return out

    def copy(self) -> "SegNet":
        return SegNet([k.copy() for k in self.kernels],
                      [b.copy() for b in self.biases],
                      self.head, self.num_classes)


def init_segnet(head: HeadKind, num_classes: int, seed: int,
                hidden: tuple = DEFAULT_HIDDEN) -> SegNet:
    """He fan-in initialization from a seeded stream; all biases zero."""
    plan = [3, *hidden, head.num_channels(num_classes)]
    kernels, biases = [], []
    for i in range(len(plan) - 1):
        cin, cout = plan[i], plan[i + 1]
        rng = keyed_rng(seed, "init", i)
        std = np.sqrt(2.0 / (9 * cin))
        kernels.append(rng.standard_normal((3, 3, cin, cout)) * std)
        biases.append(np.zeros(cout))
    return SegNet(kernels, biases, head, num_classes)


def forward(net: SegNet, image: np.ndarray) -> np.ndarray:
    """Logit map (H,W,C) for an (H,W,3) image in [0,1]."""
    h, _ = _forward_cached(net, image)
    return h


def _forward_cached(net: SegNet, image: np.ndarray):
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[2] != net.kernels[0].shape[2]:
        raise UsageError(f"input must be (H,W,{net.kernels[0].shape[2]}), got {image.shape}")
    cache = []
    h = image
    last = net.num_layers - 1
    for i, (k, b) in enumerate(zip(net.kernels, net.biases)):
        z, cols = _conv2d_cols(h, k, b)
        cache.append((h, cols, z))
        h = z if i == last else relu(z)
    return h, cache


def logit_map(net: SegNet, image: np.ndarray) -> LogitMap:
    return LogitMap(forward(net, image), net.head, net.num_classes)


def backward(net: SegNet, image: np.ndarray, labels: np.ndarray):
    """Loss and exact parameter gradients for one image.

    Returns (loss, grad_kernels, grad_biases, logits).
    """
    logits, cache = _forward_cached(net, image)
    loss, grad = batch_loss(LogitMap(logits, net.head, net.num_classes), labels)
    gks = [None] * net.num_layers
    gbs = [None] * net.num_layers
    for i in range(net.num_layers - 1, -1, -1):
        inp, cols, z = cache[i]
        if i != net.num_layers - 1:
            grad = relu_backward(grad, z)
        grad, gks[i], gbs[i] = conv2d_backward(grad, inp, net.kernels[i], cols=cols)
    return loss, gks, gbs, logits


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """base_lr * (1 - iter/total)^power; strictly decreasing for power > 0."""
    if iteration < 0 or iteration > cfg.total_iters:
        raise UsageError(f"iteration {iteration} outside [0, {cfg.total_iters}]")
    if cfg.total_iters == 0:
        return cfg.base_lr
    return cfg.base_lr * (1.0 - iteration / cfg.total_iters) ** cfg.poly_power


def augment(image: np.ndarray, label: np.ndarray, cfg: TrainConfig,
            rng: np.random.Generator):
    """Shared random rescale (bilinear image / nearest label) then a shared
    random crop to crop_size^2, padding with background when short."""
    image, label = as_tensor(image), np.asarray(label)
    if image.shape[:2] != label.shape:
        raise UsageError(f"image {image.shape[:2]} and label {label.shape} differ")
    scale = rng.uniform(*cfg.scale_range)
    h = max(1, int(round(image.shape[0] * scale)))
    w = max(1, int(round(image.shape[1] * scale)))
    image = bilinear_resize(image, h, w)
    label = nearest_resize(label, h, w)
    c = cfg.crop_size
    if h < c or w < c:
        image = np.pad(image, ((0, max(0, c - h)), (0, max(0, c - w)), (0, 0)))
        label = np.pad(label, ((0, max(0, c - h)), (0, max(0, c - w))),
                       constant_values=BACKGROUND)
        h, w = image.shape[:2]
    y0 = int(rng.integers(0, h - c + 1))
    x0 = int(rng.integers(0, w - c + 1))
    return image[y0:y0 + c, x0:x0 + c], label[y0:y0 + c, x0:x0 + c]


@dataclass
class Checkpoint:
    net: SegNet
    config: TrainConfig
    iteration: int
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))


def train(cfg: TrainConfig, dataset) -> Checkpoint:
    """Momentum SGD over random augmented batches, deterministic in cfg.seed.

    The classifier (final layer) trains at classifier_lr, the body at
    base_lr, both following the poly schedule. Weight decay is decoupled
    and applied to kernels only.
    """
    if not dataset:
        raise UsageError("dataset must be non-empty")
    net = init_segnet(cfg.head, cfg.num_classes, cfg.seed, cfg.hidden)
    vel_k = [np.zeros_like(k) for k in net.kernels]
    vel_b = [np.zeros_like(b) for b in net.biases]
    history = np.zeros(cfg.total_iters)
    last = net.num_layers - 1
    for it in range(cfg.total_iters):
        picker = keyed_rng(cfg.seed, "batch", it)
        idx = picker.integers(0, len(dataset), size=cfg.batch_size)
        sum_gk = [np.zeros_like(k) for k in net.kernels]
        sum_gb = [np.zeros_like(b) for b in net.biases]
        loss_sum = 0.0
        for slot, j in enumerate(idx):
            s = dataset[int(j)]
            img, lab = augment(s.image, s.label, cfg, keyed_rng(cfg.seed, "aug", it, slot))
            loss, gks, gbs, _ = backward(net, img, lab)
            loss_sum += loss
            for i in range(net.num_layers):
                sum_gk[i] += gks[i]
                sum_gb[i] += gbs[i]
        mean_loss = loss_sum / cfg.batch_size
        if not np.isfinite(mean_loss):
            raise NumericalError(f"training diverged at iteration {it}: loss={mean_loss}")
        history[it] = mean_loss
        decay = poly_lr(it, cfg) / cfg.base_lr
        for i in range(net.num_layers):
            lr = (cfg.classifier_lr if i == last else cfg.base_lr) * decay
            gk = sum_gk[i] / cfg.batch_size
            gb = sum_gb[i] / cfg.batch_size
            vel_k[i] = cfg.momentum * vel_k[i] + gk
            vel_b[i] = cfg.momentum * vel_b[i] + gb
            net.kernels[i] -= lr * (vel_k[i] + cfg.weight_decay * net.kernels[i])
            net.biases[i] -= lr * vel_b[i]
    return Checkpoint(net, cfg, cfg.total_iters, history)


# ---------------------------------------------------------------------------
# Checkpoint serialization (npz: raw float64 arrays + a JSON meta record)


def _config_to_json(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["head"] = cfg.head.value
    d["scale_range"] = list(cfg.scale_range)
    d["hidden"] = list(cfg.hidden)
    return d


def _config_from_json(d: dict) -> TrainConfig:
    d = dict(d)
    d["head"] = HeadKind(d["head"])
    d["scale_range"] = tuple(d["scale_range"])
    d["hidden"] = tuple(d["hidden"])
    return TrainConfig(**d)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays = {}
    for i, (k, b) in enumerate(zip(ckpt.net.kernels, ckpt.net.biases)):
        arrays[f"kernel_{i}"] = k
        arrays[f"bias_{i}"] = b
    meta = {
        "version": CHECKPOINT_VERSION,
        "num_layers": ckpt.net.num_layers,
        "iteration": ckpt.iteration,
        "config": _config_to_json(ckpt.config),
    }
    np.savez(path, loss_history=ckpt.loss_history,
             meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            version = meta.get("version")
            cfg = _config_from_json(meta["config"])
            kernels = [z[f"kernel_{i}"] for i in range(meta["num_layers"])]
            biases = [z[f"bias_{i}"] for i in range(meta["num_layers"])]
            history = z["loss_history"]
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed checkpoint ({e})") from None
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version!r}")
    net = SegNet(kernels, biases, cfg.head, cfg.num_classes)
    return Checkpoint(net, cfg, meta["iteration"], history)
