"""Structure diagnostics of the learned per-pixel responses: class-
conditioned autocorrelation matrices, explained-variance curves of the
response covariance, and an effective-dimensionality summary.

Response rows are ordered by class index for every head: implicit-
background heads contribute their augmented k-vector with the
constructed background logit at component 0, so component c always
corresponds to class c and the diagnostics are comparable across heads.
"""

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .heads import LogitMap, class_logits
from .model import SegNet, forward


def gather_responses(net: SegNet, samples, class_filter: int | None = None) -> np.ndarray:
    """(N,k) matrix of per-pixel class-ordered responses, keeping only
    pixels predicted as `class_filter` (all pixels when None). Traversal
    order is the sample order, then row-major pixels."""
    rows = []
    for s in samples:
        cls = class_logits(LogitMap(forward(net, s.image), net.head, net.num_classes))
        flat = cls.reshape(-1, net.num_classes)
        if class_filter is None:
            rows.append(flat)
        else:
            pred = np.argmax(flat, axis=-1)
            rows.append(flat[pred == class_filter])
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, net.num_classes))


def autocorrelation(responses: np.ndarray):
    """Uncentered column-normalized Gram matrix of the response rows.

    Returns (R, zero_columns): R is symmetric with unit diagonal and
    entries in [-1,1]; any zero-norm column is flagged and its entries
    reported as 0.
    """
    V = np.asarray(responses, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] < 2:
        raise UsageError("autocorrelation needs at least 2 response rows")
    gram = V.T @ V
    norms = np.sqrt(np.diag(gram))
    zero_cols = norms == 0.0
    denom = np.outer(norms, norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = np.where(denom > 0, gram / np.where(denom > 0, denom, 1.0), 0.0)
    R[zero_cols, :] = 0.0
    R[:, zero_cols] = 0.0
    return np.clip(R, -1.0, 1.0), zero_cols


def off_diagonal_mean(R: np.ndarray, component: int) -> float:
    """Mean |R[component, other]| over the other components."""
    k = R.shape[0]
    others = [j for j in range(k) if j != component]
    return float(np.mean(np.abs(R[component, others])))


@dataclass
class EVCurve:
    eigenvalues: np.ndarray   # descending, non-negative
    accumulated: np.ndarray   # running normalized partial sums, ends at 1


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotation.

    Returns (eigenvalues descending, eigenvectors as columns). Sweeps
    stop when the off-diagonal norm falls below tol relative to the
    matrix scale.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"need a square matrix, got {A.shape}")
    if not np.allclose(A, A.T, atol=1e-10):
        raise UsageError("matrix is not symmetric")
    n = A.shape[0]
    M = (A + A.T) / 2.0
    V = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(M)))
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(M, -1) ** 2) * 2.0)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(M[p, q]) <= 1e-300:
                    continue
                theta = (M[q, q] - M[p, p]) / (2.0 * M[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.array([[c, -s], [s, c]])
                M[[p, q], :] = rot.T @ M[[p, q], :]
                M[:, [p, q]] = M[:, [p, q]] @ rot
                V[:, [p, q]] = V[:, [p, q]] @ rot
    eig = np.diag(M).copy()
    order = np.argsort(eig)[::-1]
    return eig[order], V[:, order]


def explained_variance(responses: np.ndarray) -> EVCurve:
    """Eigenvalue spectrum of the mean-centered sample covariance plus
    the accumulated explained-variance curve."""
    V = np.asarray(responses, dtype=np.float64)
    k = V.shape[1] if V.ndim == 2 else 0
    if V.ndim != 2 or V.shape[0] < k + 1:
        raise UsageError(f"explained_variance needs more than k={k} rows")
    X = V - V.mean(axis=0, keepdims=True)
    cov = X.T @ X / (V.shape[0] - 1)
    eig, _ = jacobi_eigh(cov)
    eig = np.maximum(eig, 0.0)  # rank-deficient data: clamp rounding noise
    total = eig.sum()
    accumulated = np.cumsum(eig) / total if total > 0 else np.ones(k)
    return EVCurve(eig, accumulated)


def effective_dim(curve: EVCurve, threshold: float) -> int:
    """Smallest component count whose accumulated EV reaches threshold."""
    if not 0.0 < threshold < 1.0:
        raise UsageError(f"threshold must lie in (0,1), got {threshold}")
    reached = np.nonzero(curve.accumulated >= threshold - 1e-12)[0]
    return int(reached[0]) + 1 if reached.size else len(curve.accumulated)


# ---------------------------------------------------------------------------
# Rendering


def render_matrix_csv(M: np.ndarray) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in M) + "\n"


def parse_matrix_csv(text: str) -> np.ndarray:
    rows = [[float(v) for v in ln.split(",")] for ln in text.splitlines() if ln.strip()]
    return np.array(rows)


def render_ev_csv(curve: EVCurve) -> str:
    lines = ["component,eigenvalue,accumulated"]
    for i, (e, a) in enumerate(zip(curve.eigenvalues, curve.accumulated), 1):
        lines.append(f"{i},{float(e)!r},{float(a)!r}")
    return "\n".join(lines) + "\n"


def render_heatmap_svg(M: np.ndarray, cell: int = 36, labels=None) -> str:
    """Diverging heatmap of a small matrix: blue -1, white 0, red +1."""
    k = M.shape[0]
    pad = 40
    size = pad + k * cell + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for i in range(k):
        for j in range(k):
            v = float(np.clip(M[i, j], -1.0, 1.0))
            if v >= 0:
                r, g, b = 255, int(255 * (1 - v)), int(255 * (1 - v))
            else:
                r, g, b = int(255 * (1 + v)), int(255 * (1 + v)), 255
            parts.append(f'<rect x="{pad + j*cell}" y="{pad + i*cell}" width="{cell}" '
                         f'height="{cell}" fill="rgb({r},{g},{b})" stroke="#999"/>')
    names = labels or [str(i) for i in range(k)]
    for i, name in enumerate(names):
        parts.append(f'<text x="{pad + i*cell + cell//2}" y="{pad - 6}" font-size="11" '
                     f'text-anchor="middle">{name}</text>')
        parts.append(f'<text x="{pad - 6}" y="{pad + i*cell + cell//2 + 4}" font-size="11" '
                     f'text-anchor="end">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_ev_svg(curves: dict, width: int = 560, height: int = 400) -> str:
    """Accumulated-EV line plot; `curves` maps label -> EVCurve."""
    pal = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    left, right, top, bottom = 55, 15, 30, 45
    pw, ph = width - left - right, height - top - bottom
    kmax = max(len(c.accumulated) for c in curves.values())
    sx = lambda i: left + pw * (i / kmax)
    sy = lambda v: top + ph * (1.0 - v)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{left}" y="18" font-size="13">accumulated explained variance</text>']
    for frac in (0.25, 0.5, 0.75, 0.95, 1.0):
        y = sy(frac)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{width-right}" y2="{y:.1f}" '
                     f'stroke="#ddd"/>')
        parts.append(f'<text x="{left-8}" y="{y+4:.1f}" font-size="11" '
                     f'text-anchor="end">{frac:.2f}</text>')
    for i, (label, curve) in enumerate(curves.items()):
        pts = " ".join(f"{sx(j + 1):.1f},{sy(float(a)):.1f}"
                       for j, a in enumerate(curve.accumulated))
        color = pal[i % len(pal)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left+6+i*110}" y="{height-12}" font-size="12" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
