"""Per-pixel classification heads for semantic segmentation.

Four heads share one convention: class 0 is background. The softmax
baseline and the plain sigmoid head carry one logit channel per class.
The implicit-background heads (IBE and its sigmoid variant SCrIBE)
carry k-1 foreground channels only; channel c stores class c+1, and the
background logit is constructed as -logsumexp of the foreground
channels, so background is detected exactly when every foreground
response is negative.

Each loss returns the scalar loss together with d(loss)/d(logits), the
descent gradient. All gradients are verified against central finite
differences in the test suite.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UsageError
from .numerics import as_tensor, logsumexp, sigmoid, softmax

BACKGROUND = 0


class HeadKind(Enum):
    SOFTMAX = "softmax"
    IBE = "ibe"
    SIGMOID = "sigmoid"
    SCRIBE = "scribe"

    @property
    def foreground_only(self) -> bool:
        """True for heads whose logit maps omit the background channel."""
        return self in (HeadKind.IBE, HeadKind.SCRIBE)

    def num_channels(self, num_classes: int) -> int:
        return num_classes - 1 if self.foreground_only else num_classes


@dataclass(frozen=True)
class LogitMap:
    """An (H,W,C) response map plus the head that produced it."""

    logits: np.ndarray
    head: HeadKind
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "logits", as_tensor(self.logits))
        if self.num_classes < 2:
            raise UsageError("need at least 2 classes (background + 1)")
        if self.logits.ndim != 3:
            raise UsageError(f"logits must be (H,W,C), got shape {self.logits.shape}")
        want = self.head.num_channels(self.num_classes)
        if self.logits.shape[2] != want:
            raise UsageError(
                f"{self.head.value} head with k={self.num_classes} needs "
                f"{want} channels, got {self.logits.shape[2]}")

    @property
    def height(self) -> int:
        return self.logits.shape[0]

    @property
    def width(self) -> int:
        return self.logits.shape[1]


@dataclass(frozen=True)
class AugmentedLogits:
    """Foreground channels with the constructed background appended last."""

    values: np.ndarray
    num_classes: int


def augment_foreground(fg: np.ndarray) -> np.ndarray:
    """Append the -logsumexp background channel to (..., k-1) foreground
    logits, giving (..., k)."""
    fg = as_tensor(fg)
    bg = -logsumexp(fg, axis=-1)
    return np.concatenate([fg, np.expand_dims(bg, -1)], axis=-1)


def ibe_augment(fg: LogitMap) -> AugmentedLogits:
    if not fg.head.foreground_only:
        raise UsageError(f"ibe_augment needs an IBE/SCrIBE map, got {fg.head.value}")
    return AugmentedLogits(augment_foreground(fg.logits), fg.num_classes)


def class_logits(m: LogitMap) -> np.ndarray:
    """(H,W,k) map whose channel index equals the class index.

    For foreground-only heads the constructed background logit becomes
    channel 0; other heads pass through unchanged.
    """
    if not m.head.foreground_only:
        return m.logits
    fg = m.logits
    bg = -logsumexp(fg, axis=-1)
    return np.concatenate([np.expand_dims(bg, -1), fg], axis=-1)


def _augmented_index(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Label -> channel index in the augmented (fg..., bg) layout."""
    return np.where(labels == BACKGROUND, num_classes - 1, labels - 1)


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise UsageError(f"labels must lie in [0, {num_classes}), "
                         f"got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def _loss_grad_batch(head: HeadKind, logits: np.ndarray, labels: np.ndarray,
                     num_classes: int):
    """Per-row losses and gradients for (N,C) logits and (N,) labels."""
    n = logits.shape[0]
    rows = np.arange(n)
    if head is HeadKind.SOFTMAX:
        p = softmax(logits, axis=-1)
        loss = logsumexp(logits, axis=-1) - logits[rows, labels]
        grad = p.copy()
        grad[rows, labels] -= 1.0
        return np.atleast_1d(loss), grad

    if head is HeadKind.SIGMOID:
        picked = logits[rows, labels]
        loss = np.logaddexp(0.0, -picked)
        grad = np.zeros_like(logits)
        grad[rows, labels] = sigmoid(picked) - 1.0
        return loss, grad

    if head is HeadKind.IBE:
        u = augment_foreground(logits)
        idx = _augmented_index(labels, num_classes)
        p = softmax(u, axis=-1)
        loss = np.atleast_1d(logsumexp(u, axis=-1) - u[rows, idx])
        # total derivative through the constructed background channel:
        # d u_bg / d fg_n = -softmax(fg)_n
        du = p.copy()
        du[rows, idx] -= 1.0
        s = softmax(logits, axis=-1)
        grad = du[:, :-1] - du[:, -1:] * s
        return loss, grad

    if head is HeadKind.SCRIBE:
        lse = np.atleast_1d(logsumexp(logits, axis=-1))
        is_bg = labels == BACKGROUND
        fg_idx = np.where(is_bg, 0, labels - 1)
        picked = logits[rows, fg_idx]
        loss = np.where(is_bg,
                        np.logaddexp(0.0, lse),      # -log sigmoid(-lse)
                        np.logaddexp(0.0, -picked))  # -log sigmoid(v_label)
        grad = np.zeros_like(logits)
        # background label: d log(1+S) / d v_n = exp(v_n) / (1+S)
        if np.any(is_bg):
            log1p_s = np.logaddexp(0.0, lse[is_bg])
            grad[is_bg] = np.exp(logits[is_bg] - log1p_s[:, None])
        fg_rows = rows[~is_bg]
        grad[fg_rows, fg_idx[~is_bg]] = sigmoid(picked[~is_bg]) - 1.0
        return loss, grad

    raise UsageError(f"unknown head {head!r}")


def _pixel_loss(head: HeadKind, v, label: int, num_classes: int):
    v = as_tensor(v)
    if v.ndim != 1:
        raise UsageError("per-pixel loss expects a 1-D logit vector")
    if not np.all(np.isfinite(v)):
        raise UsageError("logits must be finite")
    labels = _check_labels(np.array([label]), num_classes)
    loss, grad = _loss_grad_batch(head, v[None, :], labels, num_classes)
    return float(loss[0]), grad[0]


def loss_softmax(v, label: int):
    """Softmax cross entropy on a k-vector; grad = softmax(v) - onehot."""
    v = as_tensor(v)
    return _pixel_loss(HeadKind.SOFTMAX, v, label, num_classes=v.shape[-1])


def loss_sigmoid(v, label: int):
    """Positive-only sigmoid cross entropy: -log sigmoid(v[label]); the
    gradient is zero on every non-label component."""
    v = as_tensor(v)
    return _pixel_loss(HeadKind.SIGMOID, v, label, num_classes=v.shape[-1])


def loss_ibe(fg, label: int):
    """Softmax cross entropy over the background-augmented logits.

    For a background label the loss is log(S^2+1) with S the sum of
    foreground exponentials, and each component's gradient is
    2 S exp(v_n) / (S^2+1).
    """
    fg = as_tensor(fg)
    return _pixel_loss(HeadKind.IBE, fg, label, num_classes=fg.shape[-1] + 1)


def loss_scribe(fg, label: int):
    """Sigmoid cross entropy with the implicit background term.

    Foreground labels touch exactly one component; a background label
    costs log(1+S) and pushes every foreground component down by
    exp(v_n)/(1+S).
    """
    fg = as_tensor(fg)
    return _pixel_loss(HeadKind.SCRIBE, fg, label, num_classes=fg.shape[-1] + 1)


def batch_loss(m: LogitMap, labels: np.ndarray):
    """Mean per-pixel loss over an (H,W) map and its gradient, scaled by
    1/(H*W), with the same shape as the logits."""
    labels = _check_labels(labels, m.num_classes)
    if labels.shape != (m.height, m.width):
        raise UsageError(f"labels shape {labels.shape} does not match "
                         f"logits {(m.height, m.width)}")
    flat = m.logits.reshape(-1, m.logits.shape[2])
    losses, grads = _loss_grad_batch(m.head, flat, labels.reshape(-1), m.num_classes)
    n = flat.shape[0]
    return float(losses.mean()), (grads / n).reshape(m.logits.shape)


def predict(m: LogitMap) -> np.ndarray:
    """Per-pixel argmax decision; ties go to the lowest class index."""
    return np.argmax(class_logits(m), axis=-1).astype(np.int64)


def sigmoid_threshold_predict(m: LogitMap, threshold: float = 0.5) -> np.ndarray:
    """Diagnostic decision rule for the sigmoid-family heads: the highest
    foreground logit whose sigmoid clears `threshold`, else background."""
    if m.head not in (HeadKind.SCRIBE, HeadKind.SIGMOID):
        raise UsageError("threshold rule applies to sigmoid-family heads only")
    cls = class_logits(m)
    fg = cls[..., 1:]
    best = np.argmax(fg, axis=-1) + 1
    passed = sigmoid(np.max(fg, axis=-1)) > threshold
    return np.where(passed, best, BACKGROUND).astype(np.int64)
