"""Hot 8-neighbourhood kernels in two flavours: numba loops and numpy slicing.

The public entry points (``affinity_weights``, ``refine_passes``,
``texture_vectors``, ``btm_value_grad``) dispatch on ``_accel.USE_NUMBA``;
the ``*_numba`` / ``*_numpy`` variants stay importable for tests and the
benchmark. All weight tables are ``(H, W, 8)`` with neighbour order
N, NE, E, SE, S, SW, W, NW and exact zeros where a neighbour is missing.
"""

import numpy as np

from . import _accel
from ._accel import njit

OFFSETS = np.array(
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)],
    dtype=np.int64,
)
OFFSET_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
TEXTURE_EPS = 1e-8


def neighbor_valid(height: int, width: int) -> np.ndarray:
    """``(H, W, 8)`` boolean table of which neighbours exist."""
    rows = np.arange(height)[:, None, None]
    cols = np.arange(width)[None, :, None]
    r = rows + OFFSETS[:, 0]
    c = cols + OFFSETS[:, 1]
    return (r >= 0) & (r < height) & (c >= 0) & (c < width)


def _shifted(field: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """``out[r, c] = field[r + dr, c + dc]`` with edge padding outside."""
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (field.ndim - 2)
    padded = np.pad(field, pad, mode="edge")
    h, w = field.shape[:2]
    return padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]


# --- affinity ----------------------------------------------------------------


def affinity_numpy(img, omega1, omega2, omega3, sigma_f, sigma_p):
    h, w = img.shape[:2]
    valid = neighbor_valid(h, w)
    feat = np.empty((h, w, 8))
    for k, (dr, dc) in enumerate(OFFSETS):
        diff = img - _shifted(img, dr, dc)
        feat[:, :, k] = np.sqrt((diff * diff).sum(axis=2))
    pos = np.hypot(OFFSETS[:, 0], OFFSETS[:, 1]).astype(np.float64)

    def softmax(logits):
        logits = np.where(valid, logits, -np.inf)
        logits = logits - logits.max(axis=2, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=2, keepdims=True)

    sf = softmax(-feat / (omega1 * sigma_f))
    sp = softmax(np.broadcast_to(-pos / (omega2 * sigma_p), (h, w, 8)))
    return (sf + omega3 * sp) / (1.0 + omega3)


@njit
def affinity_numba(img, omega1, omega2, omega3, sigma_f, sigma_p):
    h, w, ch = img.shape
    out = np.zeros((h, w, 8))
    df = np.empty(8)
    dp = np.empty(8)
    ok = np.empty(8, dtype=np.bool_)
    for r in range(h):
        for c in range(w):
            fmax = -np.inf
            pmax = -np.inf
            for k in range(8):
                rr = r + OFFSETS[k, 0]
                cc = c + OFFSETS[k, 1]
                ok[k] = rr >= 0 and rr < h and cc >= 0 and cc < w
                if not ok[k]:
                    continue
                acc = 0.0
                for q in range(ch):
                    d = img[r, c, q] - img[rr, cc, q]
                    acc += d * d
                df[k] = -np.sqrt(acc) / (omega1 * sigma_f)
                dp[k] = -np.sqrt(float(OFFSETS[k, 0] ** 2 + OFFSETS[k, 1] ** 2)) / (
                    omega2 * sigma_p
                )
                fmax = max(fmax, df[k])
                pmax = max(pmax, dp[k])
            fsum = 0.0
            psum = 0.0
            for k in range(8):
                if ok[k]:
                    df[k] = np.exp(df[k] - fmax)
                    dp[k] = np.exp(dp[k] - pmax)
                    fsum += df[k]
                    psum += dp[k]
            for k in range(8):
                if ok[k]:
                    out[r, c, k] = (df[k] / fsum + omega3 * (dp[k] / psum)) / (1.0 + omega3)
    return out


def affinity_weights(img, omega1, omega2, omega3, sigma_f, sigma_p):
    img = np.ascontiguousarray(img, dtype=np.float64)
    fn = affinity_numba if _accel.USE_NUMBA else affinity_numpy
    return fn(img, float(omega1), float(omega2), float(omega3), float(sigma_f), float(sigma_p))


# --- refinement --------------------------------------------------------------


def refine_numpy(s, weights, iterations):
    cur = s
    for _ in range(iterations):
        # s_i + sum_j w_ij (s_j - s_i): constant maps stay bit-exact
        acc = np.zeros_like(cur)
        for k, (dr, dc) in enumerate(OFFSETS):
            acc += weights[:, :, k] * (_shifted(cur, dr, dc) - cur)
        cur = np.clip(cur + acc, 0.0, 1.0)
    return cur


@njit
def refine_numba(s, weights, iterations):
    h, w = s.shape
    cur = s.copy()
    nxt = np.empty_like(cur)
    for _ in range(iterations):
        for r in range(h):
            for c in range(w):
                centre = cur[r, c]
                acc = 0.0
                for k in range(8):
                    rr = r + OFFSETS[k, 0]
                    cc = c + OFFSETS[k, 1]
                    if rr >= 0 and rr < h and cc >= 0 and cc < w:
                        acc += weights[r, c, k] * (cur[rr, cc] - centre)
                v = centre + acc
                nxt[r, c] = min(max(v, 0.0), 1.0)
        cur, nxt = nxt, cur
    return cur


def refine_passes(s, weights, iterations):
    s = np.ascontiguousarray(s, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    fn = refine_numba if _accel.USE_NUMBA else refine_numpy
    return fn(s, weights, int(iterations))


# --- texture / boundary-aware texture matching -------------------------------


def texture_numpy(field):
    h, w = field.shape
    valid = neighbor_valid(h, w)
    u = np.empty((h, w, 8))
    for k, (dr, dc) in enumerate(OFFSETS):
        u[:, :, k] = field - _shifted(field, dr, dc)
    u = np.where(valid, u, 0.0)
    norm = np.sqrt((u * u).sum(axis=2))
    big = norm > TEXTURE_EPS
    t = np.where(big[:, :, None], u / np.where(big, norm, 1.0)[:, :, None], 0.0)
    return t, norm


@njit
def texture_numba(field):
    h, w = field.shape
    t = np.zeros((h, w, 8))
    norm = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for k in range(8):
                rr = r + OFFSETS[k, 0]
                cc = c + OFFSETS[k, 1]
                if rr >= 0 and rr < h and cc >= 0 and cc < w:
                    d = field[r, c] - field[rr, cc]
                    t[r, c, k] = d
                    acc += d * d
            nrm = np.sqrt(acc)
            norm[r, c] = nrm
            if nrm > TEXTURE_EPS:
                for k in range(8):
                    t[r, c, k] /= nrm
            else:
                for k in range(8):
                    t[r, c, k] = 0.0
    return t, norm


def texture_vectors(field):
    field = np.ascontiguousarray(field, dtype=np.float64)
    fn = texture_numba if _accel.USE_NUMBA else texture_numpy
    return fn(field)


def btm_numpy(s, tex_img, boundary):
    h, w = s.shape
    count = int(boundary.sum())
    grad = np.zeros((h, w))
    if count == 0:
        return 0.0, grad
    ts, norm = texture_numpy(s)
    active = boundary & (norm > TEXTURE_EPS)
    dots = (ts * tex_img).sum(axis=2)
    value = float(np.where(active, dots, 0.0).sum()) / count
    # d<T, a>/du = (a - T <T, a>) / |u|
    g = (tex_img - ts * dots[:, :, None]) / np.where(active, norm, 1.0)[:, :, None]
    g = np.where(active[:, :, None], g, 0.0) / count
    g = np.where(neighbor_valid(h, w), g, 0.0)
    grad += g.sum(axis=2)
    for k, (dr, dc) in enumerate(OFFSETS):
        # u_ik = s_i - s_{i+off}: push -g onto the neighbour
        src = g[max(0, -dr) : h - max(0, dr), max(0, -dc) : w - max(0, dc), k]
        grad[max(0, dr) : h - max(0, -dr), max(0, dc) : w - max(0, -dc)] -= src
    return value, grad


@njit
def btm_numba(s, tex_img, boundary):
    h, w = s.shape
    grad = np.zeros((h, w))
    count = 0
    for r in range(h):
        for c in range(w):
            if boundary[r, c]:
                count += 1
    if count == 0:
        return 0.0, grad
    ts, norm = texture_numba(s)
    total = 0.0
    for r in range(h):
        for c in range(w):
            if not boundary[r, c] or norm[r, c] <= TEXTURE_EPS:
                continue
            dot = 0.0
            for k in range(8):
                dot += ts[r, c, k] * tex_img[r, c, k]
            total += dot
            scale = 1.0 / (norm[r, c] * count)
            for k in range(8):
                rr = r + OFFSETS[k, 0]
                cc = c + OFFSETS[k, 1]
                if rr >= 0 and rr < h and cc >= 0 and cc < w:
                    gk = (tex_img[r, c, k] - ts[r, c, k] * dot) * scale
                    grad[r, c] += gk
                    grad[rr, cc] -= gk
    return total / count, grad


def btm_value_grad(s, tex_img, boundary):
    s = np.ascontiguousarray(s, dtype=np.float64)
    tex_img = np.ascontiguousarray(tex_img, dtype=np.float64)
    boundary = np.ascontiguousarray(boundary, dtype=np.bool_)
    fn = btm_numba if _accel.USE_NUMBA else btm_numpy
    value, grad = fn(s, tex_img, boundary)
    return float(value), grad
