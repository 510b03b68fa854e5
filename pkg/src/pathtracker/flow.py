"""TV-L1 optical flow and the flow-channel video encoding.

The solver is the duality-based TV-L1 scheme: coarse-to-fine over an image
pyramid, several warps per level, and within each warp a fixed number of
alternations between the pointwise thresholding step on the linearised
data term and a Chambolle-style dual update of the total-variation term.
A warp that raises the true (unlinearised) energy is rolled back and ends
that level, so the recorded finest-level energies never increase.

Images are 2-D float arrays; flow ``(u, v)`` maps pixel ``(x, y)`` in the
first frame to ``(x + u, y + v)`` in the second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import _accel
from .errors import ConfigError
from .scene import VideoSample

FLOW_CLAMP = 20.0
GRAD_EPS = 1e-10


@dataclass(frozen=True)
class TvL1Params:
    lam: float = 0.15
    theta: float = 0.3
    tau: float = 0.25
    warps: int = 5
    inner_iters: int = 30
    pyramid_scale: float = 0.5
    pyramid_levels: int = 3
    stop_epsilon: float = 0.01
    # lam weighs residuals measured in 8-bit grey levels; images are held in
    # [0, 1], so the solver uses lam * intensity_scale
    intensity_scale: float = 255.0

    def __post_init__(self):
        for name in ("lam", "theta", "tau", "warps", "inner_iters", "pyramid_scale", "pyramid_levels", "stop_epsilon",
                     "intensity_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.pyramid_scale >= 1:
            raise ConfigError("pyramid_scale must be < 1")
        # Chambolle's projection converges for tau <= 1/8; up to 1/4 is stable
        # in practice and is the conventional default
        if self.tau > 0.25:
            raise ConfigError("tau must be <= 0.25 for a stable dual update")

    @property
    def data_weight(self):
        return self.lam * self.intensity_scale

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class FlowField:
    u: np.ndarray
    v: np.ndarray
    energies: list = field(default_factory=list)  # finest level, one per warp

    @property
    def magnitude(self):
        return np.hypot(self.u, self.v)


# -- bilinear sampling ---------------------------------------------------------

def _sample_loop(img, xs, ys):
    h, w = img.shape
    out = np.empty(xs.shape)
    for r in range(xs.shape[0]):
        for c in range(xs.shape[1]):
            x = min(max(xs[r, c], 0.0), w - 1.0)
            y = min(max(ys[r, c], 0.0), h - 1.0)
            x0 = int(math.floor(x))
            y0 = int(math.floor(y))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            fx = x - x0
            fy = y - y0
            out[r, c] = ((1.0 - fx) * (1.0 - fy) * img[y0, x0] + fx * (1.0 - fy) * img[y0, x1]
                         + (1.0 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])
    return out


def _sample_numpy(img, xs, ys):
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    return ((1.0 - fx) * (1.0 - fy) * img[y0, x0] + fx * (1.0 - fy) * img[y0, x1]
            + (1.0 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])


_sample_numba = _accel.njit(_sample_loop)


def sample_bilinear(img, xs, ys):
    img = np.ascontiguousarray(img, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if _accel.use_numba():
        return _sample_numba(img, xs, ys)
    return _sample_numpy(img, xs, ys)


def warp_image(img, flow: FlowField) -> np.ndarray:
    """Sample ``img`` at ``(x + u, y + v)``; out-of-range lookups clamp to the edge."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != flow.u.shape or img.shape != flow.v.shape:
        raise ValueError(f"image {img.shape} and flow {flow.u.shape} differ in size")
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return sample_bilinear(img, xs + flow.u, ys + flow.v)


# -- finite differences --------------------------------------------------------

def centered_gradient(img):
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    return gx, gy


def forward_gradient(f):
    fx = np.zeros_like(f)
    fy = np.zeros_like(f)
    fx[:, :-1] = f[:, 1:] - f[:, :-1]
    fy[:-1, :] = f[1:, :] - f[:-1, :]
    return fx, fy


def divergence(p1, p2):
    """Negative adjoint of :func:`forward_gradient`."""
    d = np.zeros_like(p1)
    d[:, 0] = p1[:, 0]
    d[:, 1:-1] = p1[:, 1:-1] - p1[:, :-2]
    d[:, -1] = -p1[:, -2]
    e = np.zeros_like(p2)
    e[0, :] = p2[0, :]
    e[1:-1, :] = p2[1:-1, :] - p2[:-2, :]
    e[-1, :] = -p2[-2, :]
    return d + e


# -- one warp of the primal-dual iteration ------------------------------------

def _warp_iters_loop(u1, u2, p11, p12, p21, p22, ix, iy, rho_c, lam, theta, tau, iters, eps2):
    h, w = u1.shape
    l_t = lam * theta
    taut = tau / theta
    g = ix * ix + iy * iy
    div1 = np.empty((h, w))
    div2 = np.empty((h, w))
    n_done = 0
    for it in range(iters):
        # divergence of the dual fields
        for r in range(h):
            for c in range(w):
                if c == 0:
                    a = p11[r, c]
                    b = p21[r, c]
                elif c == w - 1:
                    a = -p11[r, c - 1]
                    b = -p21[r, c - 1]
                else:
                    a = p11[r, c] - p11[r, c - 1]
                    b = p21[r, c] - p21[r, c - 1]
                if r == 0:
                    a2 = p12[r, c]
                    b2 = p22[r, c]
                elif r == h - 1:
                    a2 = -p12[r - 1, c]
                    b2 = -p22[r - 1, c]
                else:
                    a2 = p12[r, c] - p12[r - 1, c]
                    b2 = p22[r, c] - p22[r - 1, c]
                div1[r, c] = a + a2
                div2[r, c] = b + b2
        err = 0.0
        for r in range(h):
            for c in range(w):
                rho = rho_c[r, c] + ix[r, c] * u1[r, c] + iy[r, c] * u2[r, c]
                gg = g[r, c]
                if rho < -l_t * gg:
                    d1 = l_t * ix[r, c]
                    d2 = l_t * iy[r, c]
                elif rho > l_t * gg:
                    d1 = -l_t * ix[r, c]
                    d2 = -l_t * iy[r, c]
                elif gg > 1e-10:
                    d1 = -rho * ix[r, c] / gg
                    d2 = -rho * iy[r, c] / gg
                else:
                    d1 = 0.0
                    d2 = 0.0
                n1 = u1[r, c] + d1 + theta * div1[r, c]
                n2 = u2[r, c] + d2 + theta * div2[r, c]
                err += (n1 - u1[r, c]) * (n1 - u1[r, c]) + (n2 - u2[r, c]) * (n2 - u2[r, c])
                u1[r, c] = n1
                u2[r, c] = n2
        for r in range(h):
            for c in range(w):
                if c < w - 1:
                    u1x = u1[r, c + 1] - u1[r, c]
                    u2x = u2[r, c + 1] - u2[r, c]
                else:
                    u1x = 0.0
                    u2x = 0.0
                if r < h - 1:
                    u1y = u1[r + 1, c] - u1[r, c]
                    u2y = u2[r + 1, c] - u2[r, c]
                else:
                    u1y = 0.0
                    u2y = 0.0
                ng1 = 1.0 + taut * math.sqrt(u1x * u1x + u1y * u1y)
                ng2 = 1.0 + taut * math.sqrt(u2x * u2x + u2y * u2y)
                p11[r, c] = (p11[r, c] + taut * u1x) / ng1
                p12[r, c] = (p12[r, c] + taut * u1y) / ng1
                p21[r, c] = (p21[r, c] + taut * u2x) / ng2
                p22[r, c] = (p22[r, c] + taut * u2y) / ng2
        n_done = it + 1
        if err / (h * w) <= eps2:
            break
    return n_done


def _warp_iters_numpy(u1, u2, p11, p12, p21, p22, ix, iy, rho_c, lam, theta, tau, iters, eps2):
    h, w = u1.shape
    l_t = lam * theta
    taut = tau / theta
    g = ix * ix + iy * iy
    safe_g = np.where(g > GRAD_EPS, g, 1.0)
    n_done = 0
    for it in range(iters):
        div1 = divergence(p11, p12)
        div2 = divergence(p21, p22)
        rho = rho_c + ix * u1 + iy * u2
        low = rho < -l_t * g
        high = rho > l_t * g
        mid = ~low & ~high & (g > GRAD_EPS)
        d1 = np.where(low, l_t * ix, np.where(high, -l_t * ix, np.where(mid, -rho * ix / safe_g, 0.0)))
        d2 = np.where(low, l_t * iy, np.where(high, -l_t * iy, np.where(mid, -rho * iy / safe_g, 0.0)))
        n1 = u1 + d1 + theta * div1
        n2 = u2 + d2 + theta * div2
        err = float(np.sum((n1 - u1) * (n1 - u1) + (n2 - u2) * (n2 - u2)))
        u1[...] = n1
        u2[...] = n2
        u1x, u1y = forward_gradient(u1)
        u2x, u2y = forward_gradient(u2)
        ng1 = 1.0 + taut * np.sqrt(u1x * u1x + u1y * u1y)
        ng2 = 1.0 + taut * np.sqrt(u2x * u2x + u2y * u2y)
        p11[...] = (p11 + taut * u1x) / ng1
        p12[...] = (p12 + taut * u1y) / ng1
        p21[...] = (p21 + taut * u2x) / ng2
        p22[...] = (p22 + taut * u2y) / ng2
        n_done = it + 1
        if err / (h * w) <= eps2:
            break
    return n_done


_warp_iters_numba = _accel.njit(_warp_iters_loop)


# -- pyramid -------------------------------------------------------------------

def _gaussian_blur(img, sigma):
    if sigma <= 0:
        return img
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    out = img
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(i, i + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


def _resize(img, shape):
    """Bilinear resample onto ``shape`` with pixel centres aligned."""
    h, w = img.shape
    nh, nw = shape
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return sample_bilinear(img, xx, yy)


def pyramid_shapes(shape, params: TvL1Params):
    shapes = [tuple(shape)]
    for _ in range(1, params.pyramid_levels):
        h, w = shapes[-1]
        nh = int(round(h * params.pyramid_scale))
        nw = int(round(w * params.pyramid_scale))
        if min(nh, nw) < 4:
            break
        shapes.append((nh, nw))
    return shapes


def build_pyramid(img, params: TvL1Params):
    shapes = pyramid_shapes(img.shape, params)
    sigma = 0.6 * math.sqrt(1.0 / params.pyramid_scale ** 2 - 1.0)
    levels = [img]
    for shp in shapes[1:]:
        levels.append(_resize(_gaussian_blur(levels[-1], sigma), shp))
    return levels


def tvl1_energy(i0, i1, u1, u2, lam):
    """Mean per-pixel TV-L1 energy of a flow under the full (unlinearised) data term."""
    h, w = i0.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    resid = sample_bilinear(i1, xs + u1, ys + u2) - i0
    u1x, u1y = forward_gradient(u1)
    u2x, u2y = forward_gradient(u2)
    tv = np.sqrt(u1x ** 2 + u1y ** 2) + np.sqrt(u2x ** 2 + u2y ** 2)
    return float(np.mean(tv + lam * np.abs(resid)))


# -- solver --------------------------------------------------------------------

def _as_unit(img):
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


BACKTRACK_STEPS = (0.5, 0.25, 0.125)


def _backtrack(i0, i1, u1_old, u2_old, u1_new, u2_new, energy, lam):
    for t in BACKTRACK_STEPS:
        c1 = u1_old + t * (u1_new - u1_old)
        c2 = u2_old + t * (u2_new - u2_old)
        e = tvl1_energy(i0, i1, c1, c2, lam)
        if e <= energy:
            return c1, c2, e
    return u1_new, u2_new, None


def tv_l1(prev, next, params: TvL1Params | None = None) -> FlowField:
    """Dense flow from ``prev`` to ``next``. 8-bit inputs are scaled to [0, 1]."""
    params = params or TvL1Params()
    i0 = _as_unit(prev)
    i1 = _as_unit(next)
    if i0.shape != i1.shape or i0.ndim != 2:
        raise ValueError(f"frames must be equal-sized 2-D arrays, got {i0.shape} and {i1.shape}")
    pyr0 = build_pyramid(i0, params)
    pyr1 = build_pyramid(i1, params)
    kernel = _warp_iters_numba if _accel.use_numba() else _warp_iters_numpy
    eps2 = params.stop_epsilon ** 2

    u1 = np.zeros(pyr0[-1].shape)
    u2 = np.zeros(pyr0[-1].shape)
    energies = []
    for level in range(len(pyr0) - 1, -1, -1):
        a, b = pyr0[level], pyr1[level]
        h, w = a.shape
        if u1.shape != a.shape:
            sy = h / u1.shape[0]
            sx = w / u1.shape[1]
            u1 = _resize(u1, a.shape) * sx
            u2 = _resize(u2, a.shape) * sy
        p11, p12, p21, p22 = (np.zeros((h, w)) for _ in range(4))
        bx, by = centered_gradient(b)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        energy = tvl1_energy(a, b, u1, u2, params.data_weight)
        for _ in range(params.warps):
            wx = xs + u1
            wy = ys + u2
            i1w = sample_bilinear(b, wx, wy)
            ix = sample_bilinear(bx, wx, wy)
            iy = sample_bilinear(by, wx, wy)
            rho_c = i1w - ix * u1 - iy * u2 - a
            state = [x.copy() for x in (u1, u2, p11, p12, p21, p22)]
            kernel(u1, u2, p11, p12, p21, p22, ix, iy, rho_c,
                   params.data_weight, params.theta, params.tau, params.inner_iters, eps2)
            trial = tvl1_energy(a, b, u1, u2, params.data_weight)
            if trial > energy:
                # the linearised step overshot: backtrack toward the previous
                # flow, and if no fraction helps stop warping this level
                u1, u2, trial = _backtrack(a, b, state[0], state[1], u1, u2, energy, params.data_weight)
                if trial is None:
                    u1, u2, p11, p12, p21, p22 = state
                    if level == 0:
                        energies.extend([energy] * (params.warps - len(energies)))
                    break
            energy = trial
            if level == 0:
                energies.append(energy)
    return FlowField(u1, u2, energies)


# -- dataset encoding ----------------------------------------------------------

def quantize_flow(f):
    f = np.clip(np.asarray(f, dtype=np.float64), -FLOW_CLAMP, FLOW_CLAMP)
    return np.rint((f + FLOW_CLAMP) * (255.0 / (2 * FLOW_CLAMP))).astype(np.uint8)


def dequantize_flow(q):
    return np.asarray(q, dtype=np.float64) * (2 * FLOW_CLAMP / 255.0) - FLOW_CLAMP


def encode_frames(frames: np.ndarray, params: TvL1Params | None = None) -> np.ndarray:
    """Map a ``(T, H, W, 3)`` video to flow layout: quantised u, quantised v, raw dots."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or len(frames) < 2:
        raise ValueError("flow encoding needs a (T, H, W, C) video with at least two frames")
    dots = frames[..., 1]
    out = np.empty(frames.shape[:3] + (3,), dtype=np.uint8)
    for t in range(1, len(frames)):
        fl = tv_l1(dots[t - 1], dots[t], params)
        out[t, ..., 0] = quantize_flow(fl.u)
        out[t, ..., 1] = quantize_flow(fl.v)
    out[0, ..., :2] = out[1, ..., :2]
    out[..., 2] = dots
    return out


def encode_flow_video(sample: VideoSample, params: TvL1Params | None = None) -> VideoSample:
    """Return a copy of ``sample`` whose frames carry the flow encoding (layout ``"flow"``)."""
    if sample.layout == "flow":
        raise ValueError("sample is already flow-encoded")
    return VideoSample(encode_frames(sample.frames, params), sample.label, sample.target,
                       list(sample.distractors), sample.start, sample.finish, sample.finisher_index,
                       sample.sample_seed, "flow", sample.speed, sample.resamples)
