"""Two-stage detection head over pooled BEV features.

Stage 1 scores and refines yaw-free anchors; stage 2 refines kept
proposals with the four-corner location code and the (cos, sin)
orientation code, each regression head paired with a log-variance head.
Both stages are one-hidden-layer MLPs with hand-derived backprop so the
whole objective is finite-difference checkable. Training runs the
two-phase schedule: a plain phase with log-variance heads silent,
then the attenuated multi-loss.

Candidate featurization pools the grid cells under a candidate's
axis-aligned footprint into a fixed pool_blocks x pool_blocks layout of
per-slice max/mean heights and density mean/max, plus the candidate's
own dimensions. No absolute position enters the vector, so features are
invariant to whole-cell translations of candidate and points together;
distance enters only through point sparsity.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .bevraster import BevGrid, RangeSpec, rasterize
from .boxgeom import Box3D, ScoredBox, aa_envelope, nms_indices
from .codec import (FRH_LOC_DIM, FRH_ORIENT_DIM, RPN_DIM, AssignLabel, assign,
                    decode_frh, decode_rpn, encode_frh, encode_rpn)
from .errors import DivergenceError, OutOfGrid, ShapeError
from .losses import (HeadOutputs, HeadTargets, LossBreakdown, attenuated_term,
                     cross_entropy, multi_loss, smooth_l1)

FEAT_GEOM = 4  # candidate l, w, h, cz


def feature_length(num_slices: int, pool_blocks: int) -> int:
    return pool_blocks * pool_blocks * (2 * num_slices + 2) + FEAT_GEOM


def _pool_stats(heights: np.ndarray, density: np.ndarray, pool_blocks: int,
                z_min: float) -> np.ndarray:
    """Pooled block stats over the trailing (R, C[, S]) axes.

    Accepts leading batch axes; empty sub-blocks (window smaller than the
    block layout) report the height sentinel and zero density.
    """
    n_rows, n_cols, n_slices = heights.shape[-3], heights.shape[-2], heights.shape[-1]
    lead = heights.shape[:-3]
    row_chunks = np.array_split(np.arange(n_rows), pool_blocks)
    col_chunks = np.array_split(np.arange(n_cols), pool_blocks)
    pieces = []
    for rc in row_chunks:
        for cc in col_chunks:
            if len(rc) == 0 or len(cc) == 0:
                pieces.append(np.full(lead + (n_slices,), z_min))
                pieces.append(np.full(lead + (n_slices,), z_min))
                pieces.append(np.zeros(lead + (2,)))
                continue
            hs = heights[..., rc[0]:rc[-1] + 1, cc[0]:cc[-1] + 1, :]
            ds = density[..., rc[0]:rc[-1] + 1, cc[0]:cc[-1] + 1]
            pieces.append(hs.max(axis=(-3, -2)))
            pieces.append(hs.mean(axis=(-3, -2)))
            pieces.append(np.stack([ds.mean(axis=(-2, -1)), ds.max(axis=(-2, -1))],
                                   axis=-1))
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in pieces], axis=-1)


def _window_bounds(spec: RangeSpec, env: Box3D):
    """Index ranges of cells whose centers fall under an envelope."""
    x0, x1 = env.cx - 0.5 * env.l, env.cx + 0.5 * env.l
    y0, y1 = env.cy - 0.5 * env.w, env.cy + 0.5 * env.w
    if x1 < spec.x_min or x0 > spec.x_max or y1 < spec.y_min or y0 > spec.y_max:
        raise OutOfGrid(f"candidate footprint [{x0:.2f},{x1:.2f}]x[{y0:.2f},{y1:.2f}] "
                        "misses the grid")
    res = spec.xy_resolution
    r0 = int(math.ceil((x0 - spec.x_min) / res - 0.5))
    r1 = int(math.floor((x1 - spec.x_min) / res - 0.5))
    c0 = int(math.ceil((y0 - spec.y_min) / res - 0.5))
    c1 = int(math.floor((y1 - spec.y_min) / res - 0.5))
    return (max(r0, 0), min(r1, spec.n_rows - 1),
            max(c0, 0), min(c1, spec.n_cols - 1))


def featurize(grid: BevGrid, candidate: Box3D, pool_blocks: int = 3) -> np.ndarray:
    """Fixed-length pooled feature vector for one candidate box."""
    spec = grid.spec
    r0, r1, c0, c1 = _window_bounds(spec, aa_envelope(candidate))
    n = feature_length(spec.num_slices, pool_blocks)
    if r0 > r1 or c0 > c1:
        return np.zeros(n)
    pooled = _pool_stats(grid.heights[r0:r1 + 1, c0:c1 + 1, :],
                         grid.density[r0:r1 + 1, c0:c1 + 1], pool_blocks, spec.z_min)
    geom = np.array([candidate.l, candidate.w, candidate.h, candidate.cz])
    return np.concatenate([pooled, geom])


@dataclass(frozen=True)
class AnchorLayout:
    """Anchor lattice description: k dim clusters x 2 orientation bins."""

    shapes: tuple          # ((l, w, h), ...) from dimension clustering
    stride: int = 4        # cells between anchor centers
    z_center: float = 0.8  # anchor center height

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not self.shapes:
            raise ValueError("layout needs at least one anchor shape")


@dataclass
class AnchorSet:
    """Materialized lattice: parallel arrays over all anchors.

    Extents are already swapped for the 90-degree bin, so every anchor is
    a yaw-free box. Order is shape-major, then orientation bin, then
    row-major lattice position.
    """

    spec: RangeSpec
    layout: AnchorLayout
    rows: np.ndarray
    cols: np.ndarray
    shape_idx: np.ndarray
    bin90: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    l: np.ndarray
    w: np.ndarray
    h: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def box(self, i: int) -> Box3D:
        return Box3D(float(self.cx[i]), float(self.cy[i]), self.layout.z_center,
                     float(self.l[i]), float(self.w[i]), float(self.h[i]), 0.0)


def build_anchor_set(layout: AnchorLayout, spec: RangeSpec) -> AnchorSet:
    lat_rows = np.arange(layout.stride // 2, spec.n_rows, layout.stride)
    lat_cols = np.arange(layout.stride // 2, spec.n_cols, layout.stride)
    rr = np.repeat(lat_rows, len(lat_cols))
    cc = np.tile(lat_cols, len(lat_rows))
    rows, cols, sidx, b90, ll, ww, hh = [], [], [], [], [], [], []
    for s, (sl, sw, sh) in enumerate(layout.shapes):
        for swap in (False, True):
            rows.append(rr)
            cols.append(cc)
            sidx.append(np.full(len(rr), s, dtype=np.int64))
            b90.append(np.full(len(rr), swap))
            ll.append(np.full(len(rr), sw if swap else sl))
            ww.append(np.full(len(rr), sl if swap else sw))
            hh.append(np.full(len(rr), sh))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return AnchorSet(
        spec=spec, layout=layout, rows=rows, cols=cols,
        shape_idx=np.concatenate(sidx), bin90=np.concatenate(b90),
        cx=spec.x_min + (rows + 0.5) * spec.xy_resolution,
        cy=spec.y_min + (cols + 0.5) * spec.xy_resolution,
        l=np.concatenate(ll), w=np.concatenate(ww), h=np.concatenate(hh))


def anchor_features(grid: BevGrid, aset: AnchorSet, pool_blocks: int = 3) -> np.ndarray:
    """Feature matrix over a whole anchor set.

    Anchors whose window fits inside the grid go through a batched
    gather; the few near the border fall back to the single-candidate
    path, which clips. Both paths pool identically.
    """
    spec = grid.spec
    res = spec.xy_resolution
    feat = np.empty((len(aset), feature_length(spec.num_slices, pool_blocks)))
    for s in range(len(aset.layout.shapes)):
        for swap in (False, True):
            sel = np.where((aset.shape_idx == s) & (aset.bin90 == swap))[0]
            if len(sel) == 0:
                continue
            l_eff = float(aset.l[sel[0]])
            w_eff = float(aset.w[sel[0]])
            h_eff = float(aset.h[sel[0]])
            fr = int(math.floor(l_eff / (2.0 * res)))
            fc = int(math.floor(w_eff / (2.0 * res)))
            rows = aset.rows[sel]
            cols = aset.cols[sel]
            inside = ((rows - fr >= 0) & (rows + fr < spec.n_rows)
                      & (cols - fc >= 0) & (cols + fc < spec.n_cols))
            inner = sel[inside]
            if len(inner):
                r_idx = rows[inside][:, None] + np.arange(-fr, fr + 1)[None, :]
                c_idx = cols[inside][:, None] + np.arange(-fc, fc + 1)[None, :]
                hwin = grid.heights[r_idx[:, :, None], c_idx[:, None, :], :]
                dwin = grid.density[r_idx[:, :, None], c_idx[:, None, :]]
                pooled = _pool_stats(hwin, dwin, pool_blocks, spec.z_min)
                geom = np.tile([l_eff, w_eff, h_eff, aset.layout.z_center],
                               (len(inner), 1))
                feat[inner] = np.concatenate([pooled, geom], axis=1)
            for i in sel[~inside]:
                feat[i] = featurize(grid, aset.box(int(i)), pool_blocks)
    return feat


# ---------------------------------------------------------------------------
# parameters

@dataclass
class Stage1Params:
    w1: np.ndarray
    b1: np.ndarray
    w_cls: np.ndarray
    b_cls: np.ndarray
    w_reg: np.ndarray
    b_reg: np.ndarray
    w_lv: np.ndarray
    b_lv: np.ndarray


@dataclass
class Stage2Params:
    w1: np.ndarray
    b1: np.ndarray
    w_cls: np.ndarray
    b_cls: np.ndarray
    w_loc: np.ndarray
    b_loc: np.ndarray
    w_loc_lv: np.ndarray
    b_loc_lv: np.ndarray
    w_orient: np.ndarray
    b_orient: np.ndarray
    w_orient_lv: np.ndarray
    b_orient_lv: np.ndarray


@dataclass
class ModelParams:
    stage1: Stage1Params
    stage2: Stage2Params
    anchor_shapes: np.ndarray  # (k, 3)
    meta: dict                 # stride, z_center, pool_blocks

    def layout(self) -> AnchorLayout:
        return AnchorLayout(shapes=tuple(tuple(float(v) for v in row)
                                         for row in self.anchor_shapes),
                            stride=int(round(self.meta["stride"])),
                            z_center=float(self.meta["z_center"]))

    @property
    def pool_blocks(self) -> int:
        return int(round(self.meta["pool_blocks"]))


META_KEYS = ("stride", "z_center", "pool_blocks")


def named_arrays(params: ModelParams) -> list:
    """Stable (name, array) listing used by the optimizer and the blob."""
    out = []
    for stage_name, stage in (("stage1", params.stage1), ("stage2", params.stage2)):
        for f in fields(stage):
            out.append((f"{stage_name}.{f.name}", getattr(stage, f.name)))
    out.append(("anchor_shapes", params.anchor_shapes))
    out.append(("meta.layout", np.array([params.meta[k] for k in META_KEYS])))
    return out


def init_params(cfg: "TrainConfig", feat_len: int, layout: AnchorLayout) -> ModelParams:
    """He-scaled hidden and head weights; log-variance heads start at zero."""
    rng = np.random.default_rng([cfg.seed, 0])

    def dense(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) * math.sqrt(2.0 / n_in)

    h1, h2 = cfg.hidden1, cfg.hidden2
    stage1 = Stage1Params(
        w1=dense(feat_len, h1), b1=np.zeros(h1),
        w_cls=dense(h1, 2), b_cls=np.zeros(2),
        w_reg=dense(h1, RPN_DIM), b_reg=np.zeros(RPN_DIM),
        w_lv=np.zeros((h1, RPN_DIM)), b_lv=np.zeros(RPN_DIM))
    stage2 = Stage2Params(
        w1=dense(feat_len, h2), b1=np.zeros(h2),
        w_cls=dense(h2, 2), b_cls=np.zeros(2),
        w_loc=dense(h2, FRH_LOC_DIM), b_loc=np.zeros(FRH_LOC_DIM),
        w_loc_lv=np.zeros((h2, FRH_LOC_DIM)), b_loc_lv=np.zeros(FRH_LOC_DIM),
        w_orient=dense(h2, FRH_ORIENT_DIM), b_orient=np.zeros(FRH_ORIENT_DIM),
        w_orient_lv=np.zeros((h2, FRH_ORIENT_DIM)), b_orient_lv=np.zeros(FRH_ORIENT_DIM))
    meta = {"stride": float(layout.stride), "z_center": float(layout.z_center),
            "pool_blocks": float(cfg.pool_blocks)}
    return ModelParams(stage1=stage1, stage2=stage2,
                       anchor_shapes=np.array(layout.shapes, dtype=np.float64),
                       meta=meta)


PARAMS_MAGIC = b"LDET"
PARAMS_VERSION = 1


def save_params(params: ModelParams, path) -> None:
    """Little-endian float32 blob with a shape-table header."""
    items = named_arrays(params)
    head = [struct.pack("<4sII", PARAMS_MAGIC, PARAMS_VERSION, len(items))]
    body = []
    for name, arr in items:
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype=np.float64)
        head.append(struct.pack("<I", len(raw)) + raw)
        head.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        body.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(head) + b"".join(body))


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, count = struct.unpack_from("<4sII", blob, 0)
    if magic != PARAMS_MAGIC or version != PARAMS_VERSION:
        raise ValueError(f"not a parameters blob: {path}")
    off = 12
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        table.append((name, shape))
    arrays = {}
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=n,
                                     offset=off).astype(np.float64).reshape(shape)
        off += 4 * n
    stage1 = Stage1Params(**{f.name: arrays[f"stage1.{f.name}"]
                             for f in fields(Stage1Params)})
    stage2 = Stage2Params(**{f.name: arrays[f"stage2.{f.name}"]
                             for f in fields(Stage2Params)})
    meta_arr = arrays["meta.layout"]
    meta = {k: float(meta_arr[i]) for i, k in enumerate(META_KEYS)}
    return ModelParams(stage1=stage1, stage2=stage2,
                       anchor_shapes=arrays["anchor_shapes"], meta=meta)


# ---------------------------------------------------------------------------
# forward / backward

def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-scale dropout mask: zeros with probability rate, else 1/keep."""
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _require_2d(x: np.ndarray, width: int, what: str) -> None:
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} must be (N, {width}), got {x.shape}")


# Log-variance heads are clipped to this band.  Unbounded negative outputs
# let e^{-s} blow past 1e3 on well-fit samples, which destabilises training.
LV_CLIP = 4.0


def _clip_lv(raw: np.ndarray):
    """Returns (clipped values, interior mask for the backward pass)."""
    inside = (np.abs(raw) < LV_CLIP).astype(raw.dtype)
    return np.clip(raw, -LV_CLIP, LV_CLIP), inside


def stage1_forward(p: Stage1Params, x: np.ndarray, mask: Optional[np.ndarray] = None):
    """Returns (logits, reg, log_var, cache)."""
    _require_2d(x, p.w1.shape[0], "stage-1 features")
    pre = x @ p.w1 + p.b1
    hid = np.maximum(pre, 0.0)
    if mask is not None:
        hid = hid * mask
    lv, lv_in = _clip_lv(hid @ p.w_lv + p.b_lv)
    return (hid @ p.w_cls + p.b_cls, hid @ p.w_reg + p.b_reg,
            lv, (x, pre, hid, mask, lv_in))


def stage1_backward(p: Stage1Params, cache, d_logits, d_reg, d_lv) -> Stage1Params:
    x, pre, hid, mask, lv_in = cache
    d_lv = d_lv * lv_in
    d_hid = d_logits @ p.w_cls.T + d_reg @ p.w_reg.T + d_lv @ p.w_lv.T
    grads = Stage1Params(
        w1=None, b1=None,
        w_cls=hid.T @ d_logits, b_cls=d_logits.sum(axis=0),
        w_reg=hid.T @ d_reg, b_reg=d_reg.sum(axis=0),
        w_lv=hid.T @ d_lv, b_lv=d_lv.sum(axis=0))
    if mask is not None:
        d_hid = d_hid * mask
    d_pre = d_hid * (pre > 0.0)
    grads.w1 = x.T @ d_pre
    grads.b1 = d_pre.sum(axis=0)
    return grads


def stage2_forward(p: Stage2Params, x: np.ndarray, mask: Optional[np.ndarray] = None):
    """Returns (logits, loc, loc_log_var, orient, orient_log_var, cache)."""
    _require_2d(x, p.w1.shape[0], "stage-2 features")
    pre = x @ p.w1 + p.b1
    hid = np.maximum(pre, 0.0)
    if mask is not None:
        hid = hid * mask
    loc_lv, loc_in = _clip_lv(hid @ p.w_loc_lv + p.b_loc_lv)
    or_lv, or_in = _clip_lv(hid @ p.w_orient_lv + p.b_orient_lv)
    return (hid @ p.w_cls + p.b_cls,
            hid @ p.w_loc + p.b_loc, loc_lv,
            hid @ p.w_orient + p.b_orient, or_lv,
            (x, pre, hid, mask, loc_in, or_in))


def stage2_backward(p: Stage2Params, cache, d_logits, d_loc, d_loc_lv,
                    d_orient, d_orient_lv) -> Stage2Params:
    x, pre, hid, mask, loc_in, or_in = cache
    d_loc_lv = d_loc_lv * loc_in
    d_orient_lv = d_orient_lv * or_in
    d_hid = (d_logits @ p.w_cls.T + d_loc @ p.w_loc.T + d_loc_lv @ p.w_loc_lv.T
             + d_orient @ p.w_orient.T + d_orient_lv @ p.w_orient_lv.T)
    grads = Stage2Params(
        w1=None, b1=None,
        w_cls=hid.T @ d_logits, b_cls=d_logits.sum(axis=0),
        w_loc=hid.T @ d_loc, b_loc=d_loc.sum(axis=0),
        w_loc_lv=hid.T @ d_loc_lv, b_loc_lv=d_loc_lv.sum(axis=0),
        w_orient=hid.T @ d_orient, b_orient=d_orient.sum(axis=0),
        w_orient_lv=hid.T @ d_orient_lv, b_orient_lv=d_orient_lv.sum(axis=0))
    if mask is not None:
        d_hid = d_hid * mask
    d_pre = d_hid * (pre > 0.0)
    grads.w1 = x.T @ d_pre
    grads.b1 = d_pre.sum(axis=0)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# training configuration and optimizer

LIKELIHOOD_CHOICES = ("gaussian", "laplace")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    decay_factor: float = 0.8
    decay_every: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout_rate: float = 0.5
    weight_decay: float = 5e-4
    phase1_steps: int = 2000
    phase2_steps: int = 6000
    seed: int = 0
    hidden1: int = 64
    hidden2: int = 128
    pool_blocks: int = 3
    form: str = "gaussian"
    pos_cap: int = 32
    neg_per_scene: int = 32
    roi_jitter: int = 3
    roi_negatives: int = 12
    rpn_noise_scale: float = 1.0
    loc_noise_scale: float = 1.0
    orient_noise_scale: float = 1.0
    outlier_prob: float = 0.15
    outlier_scale: float = 3.0
    loc_bias: float = 0.0
    orient_snap: float = 2.0

    def __post_init__(self) -> None:
        for name in ("learning_rate", "decay_factor", "beta1", "beta2", "eps"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be >= 0")
        if self.phase1_steps < 0 or self.phase2_steps < 0 or self.decay_every < 1:
            raise ValueError("step counts must be nonnegative with decay_every >= 1")
        if self.form not in LIKELIHOOD_CHOICES:
            raise ValueError(f"form must be one of {LIKELIHOOD_CHOICES}, got {self.form!r}")
        if min(self.hidden1, self.hidden2, self.pool_blocks) < 1:
            raise ValueError("hidden sizes and pool_blocks must be >= 1")
        if self.loc_bias < 0.0 or self.orient_snap < 0.0:
            raise ValueError("noise bias terms must be >= 0")


def lr_schedule(cfg: TrainConfig, step: int) -> float:
    """Staircase exponential decay: rate * factor^(step // every)."""
    return cfg.learning_rate * cfg.decay_factor ** (step // cfg.decay_every)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: ModelParams) -> AdamState:
    trained = [(n, a) for n, a in named_arrays(params) if n.startswith("stage")]
    return AdamState(m={n: np.zeros_like(a) for n, a in trained},
                     v={n: np.zeros_like(a) for n, a in trained})


def adam_step(params: ModelParams, grads1: Stage1Params, grads2: Stage2Params,
              state: AdamState, cfg: TrainConfig, step: int) -> None:
    """One Adam update with decoupled weight decay on weight matrices only."""
    lr = lr_schedule(cfg, step)
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for stage_name, stage, grads in (("stage1", params.stage1, grads1),
                                     ("stage2", params.stage2, grads2)):
        for f in fields(stage):
            name = f"{stage_name}.{f.name}"
            theta = getattr(stage, f.name)
            g = getattr(grads, f.name)
            m = state.m[name]
            v = state.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            if f.name.startswith("w"):
                theta -= lr * cfg.weight_decay * theta


# ---------------------------------------------------------------------------
# batches

@dataclass
class StepBatch:
    x1: np.ndarray        # (N, F)
    rpn_cls: np.ndarray   # (N,) in {1, 0, -1}
    rpn_reg: np.ndarray   # (N, 6)
    x2: np.ndarray        # (M, F)
    frh_cls: np.ndarray   # (M,)
    frh_loc: np.ndarray   # (M, 10)
    frh_orient: np.ndarray  # (M, 2)


def run_batch(params: ModelParams, batch: StepBatch, cfg: TrainConfig, step: int,
              attenuate: bool, train_mode: bool = True):
    """Loss and parameter gradients for one step.

    Dropout masks are regenerated from (seed, step, stage), so repeated
    calls at the same step see identical masks.
    """
    mask1 = mask2 = None
    if train_mode and cfg.dropout_rate > 0.0:
        mask1 = dropout_mask(np.random.default_rng([cfg.seed, 1, step, 1]),
                             (len(batch.x1), cfg.hidden1), cfg.dropout_rate)
        mask2 = dropout_mask(np.random.default_rng([cfg.seed, 1, step, 2]),
                             (len(batch.x2), cfg.hidden2), cfg.dropout_rate)
    logits1, reg1, lv1, cache1 = stage1_forward(params.stage1, batch.x1, mask1)
    logits2, loc2, loc_lv2, or2, or_lv2, cache2 = stage2_forward(
        params.stage2, batch.x2, mask2)
    outputs = HeadOutputs(rpn_logits=logits1, rpn_reg=reg1, rpn_log_var=lv1,
                          frh_logits=logits2, frh_loc=loc2, frh_loc_log_var=loc_lv2,
                          frh_orient=or2, frh_orient_log_var=or_lv2)
    targets = HeadTargets(rpn_reg=batch.rpn_reg, rpn_cls=batch.rpn_cls,
                          frh_loc=batch.frh_loc, frh_orient=batch.frh_orient,
                          frh_cls=batch.frh_cls)
    breakdown, g = multi_loss(outputs, targets, form=cfg.form, attenuate=attenuate)
    grads1 = stage1_backward(params.stage1, cache1, g.rpn_logits, g.rpn_reg,
                             g.rpn_log_var)
    grads2 = stage2_backward(params.stage2, cache2, g.frh_logits, g.frh_loc,
                             g.frh_loc_log_var, g.frh_orient, g.frh_orient_log_var)
    return breakdown, grads1, grads2


# ---------------------------------------------------------------------------
# training pools

@dataclass
class ScenePack:
    """Precomputed per-scene candidate pool with clean targets."""

    x1: np.ndarray
    rpn_cls: np.ndarray
    rpn_reg: np.ndarray
    rpn_sigma: np.ndarray
    x2: np.ndarray
    frh_cls: np.ndarray
    frh_loc: np.ndarray
    frh_orient: np.ndarray
    frh_sigma: np.ndarray


@dataclass
class TrainingSet:
    packs: list
    feat_len: int


def _label_array(assignments) -> np.ndarray:
    out = np.empty(len(assignments), dtype=np.int64)
    for i, a in enumerate(assignments):
        if a.label is AssignLabel.POSITIVE:
            out[i] = 1
        elif a.label is AssignLabel.NEGATIVE:
            out[i] = 0
        else:
            out[i] = -1
    return out


def build_training_set(scenes, layout: AnchorLayout, spec: RangeSpec,
                       cfg: TrainConfig, rpn_pos: float = 0.5, rpn_neg: float = 0.3,
                       frh_pos: float = 0.65, frh_neg: float = 0.55) -> TrainingSet:
    """Rasterize scenes and freeze per-scene candidate pools.

    Stage 1 pools every anchor matching a truth envelope (capped, with
    the best anchor per truth force-included) plus sampled background
    anchors. Stage 2 pools each truth's exact envelope and jittered
    copies plus near-miss and random negatives, labeled by the stricter
    second-stage thresholds; positive rows encode the true rotated box.
    """
    aset = build_anchor_set(layout, spec)
    anchor_x1 = aset.cx - 0.5 * aset.l
    anchor_x2 = aset.cx + 0.5 * aset.l
    anchor_y1 = aset.cy - 0.5 * aset.w
    anchor_y2 = aset.cy + 0.5 * aset.w
    anchor_area = aset.l * aset.w
    packs = []
    for scene_idx, scene in enumerate(scenes):
        rng = np.random.default_rng([cfg.seed, 2, scene_idx])
        grid = rasterize(scene.cloud, spec)
        envs = [aa_envelope(g.box) for g in scene.gts]
        sigmas = np.array([n.sigma_label for n in scene.noise]) if scene.noise \
            else np.zeros(0)

        # stage 1: anchor pool against truth envelopes
        if envs:
            iou = np.zeros((len(aset), len(envs)))
            for j, e in enumerate(envs):
                gx1, gx2 = e.cx - 0.5 * e.l, e.cx + 0.5 * e.l
                gy1, gy2 = e.cy - 0.5 * e.w, e.cy + 0.5 * e.w
                ix = np.clip(np.minimum(anchor_x2, gx2) - np.maximum(anchor_x1, gx1),
                             0.0, None)
                iy = np.clip(np.minimum(anchor_y2, gy2) - np.maximum(anchor_y1, gy1),
                             0.0, None)
                inter = ix * iy
                iou[:, j] = inter / (anchor_area + e.l * e.w - inter)
            best_gt = iou.argmax(axis=1)
            best_iou = iou[np.arange(len(aset)), best_gt]
        else:
            best_gt = np.zeros(len(aset), dtype=np.int64)
            best_iou = np.zeros(len(aset))

        pos = [int(i) for i in np.argsort(-best_iou, kind="stable")
               if best_iou[i] >= rpn_pos][:cfg.pos_cap]
        forced = set(pos)
        for j in range(len(envs)):
            a = int(iou[:, j].argmax())
            if iou[a, j] > 0.0 and a not in forced:
                forced.add(a)
                pos.append(a)
        neg_pool = np.where(best_iou < rpn_neg)[0]
        n_neg = min(cfg.neg_per_scene, len(neg_pool))
        neg = sorted(int(i) for i in rng.choice(neg_pool, size=n_neg, replace=False))
        sel = pos + neg
        x1 = np.stack([featurize(grid, aset.box(i), cfg.pool_blocks) for i in sel]) \
            if sel else np.zeros((0, feature_length(spec.num_slices, cfg.pool_blocks)))
        rpn_cls = np.array([1] * len(pos) + [0] * len(neg), dtype=np.int64)
        rpn_reg = np.zeros((len(sel), RPN_DIM))
        rpn_sigma = np.zeros(len(sel))
        for row, a in enumerate(pos):
            j = int(best_gt[a]) if best_iou[a] > 0.0 else int(np.argmax(iou[a]))
            rpn_reg[row] = encode_rpn(aset.box(a), envs[j])
            rpn_sigma[row] = sigmas[j]

        # stage 2: truth-anchored ROIs plus negatives
        cands = []
        for e in envs:
            cands.append(e)
            for _ in range(cfg.roi_jitter):
                dx, dy = rng.normal(0.0, 0.4, 2)
                sx, sy = np.exp(rng.normal(0.0, 0.08, 2))
                cands.append(Box3D(e.cx + dx, e.cy + dy, e.cz,
                                   max(0.5, e.l * sx), max(0.5, e.w * sy), e.h, 0.0))
        for k in range(cfg.roi_negatives):
            if envs and k % 2 == 0:
                e = envs[int(rng.integers(len(envs)))]
                dx, dy = rng.uniform(2.0, 5.0, 2) * rng.choice([-1.0, 1.0], 2)
                cx = float(np.clip(e.cx + dx, spec.x_min + 2.0, spec.x_max - 2.0))
                cy = float(np.clip(e.cy + dy, spec.y_min + 2.0, spec.y_max - 2.0))
                cands.append(Box3D(cx, cy, e.cz, e.l, e.w, e.h, 0.0))
            else:
                cands.append(Box3D(rng.uniform(spec.x_min + 3, spec.x_max - 3),
                                   rng.uniform(spec.y_min + 3, spec.y_max - 3),
                                   0.8, 4.2, 1.8, 1.6, 0.0))
        assignments = assign(cands, envs, frh_pos, frh_neg)
        frh_cls = _label_array(assignments)
        frh_loc = np.zeros((len(cands), FRH_LOC_DIM))
        frh_orient = np.zeros((len(cands), FRH_ORIENT_DIM))
        frh_sigma = np.zeros(len(cands))
        for i, a in enumerate(assignments):
            if a.label is AssignLabel.POSITIVE:
                t_v, r_v = encode_frh(cands[i], scene.gts[a.matched_gt_index].box)
                frh_loc[i] = t_v
                frh_orient[i] = r_v
                frh_sigma[i] = sigmas[a.matched_gt_index]
        x2 = np.stack([featurize(grid, c, cfg.pool_blocks) for c in cands]) \
            if cands else np.zeros((0, feature_length(spec.num_slices, cfg.pool_blocks)))
        packs.append(ScenePack(x1=x1, rpn_cls=rpn_cls, rpn_reg=rpn_reg,
                               rpn_sigma=rpn_sigma, x2=x2, frh_cls=frh_cls,
                               frh_loc=frh_loc, frh_orient=frh_orient,
                               frh_sigma=frh_sigma))
    return TrainingSet(packs=packs,
                       feat_len=feature_length(spec.num_slices, cfg.pool_blocks))


_BASE_ANGLES = np.array([-math.pi, -0.5 * math.pi, 0.0, 0.5 * math.pi, math.pi])


def _snap_orientation(r_v: np.ndarray, amount: np.ndarray) -> np.ndarray:
    """Rotate (cos, sin) targets toward the nearest base angle.

    Mimics annotators aligning sparse boxes with the axes; each row
    moves by at most its own amount (radians).
    """
    theta = np.arctan2(r_v[:, 1], r_v[:, 0])
    nearest = _BASE_ANGLES[np.argmin(np.abs(theta[:, None] - _BASE_ANGLES[None, :]),
                                     axis=1)]
    delta = nearest - theta
    snapped = theta + np.sign(delta) * np.minimum(np.abs(delta), amount)
    return np.stack([np.cos(snapped), np.sin(snapped)], axis=1)


def apply_label_noise(pack: ScenePack, cfg: TrainConfig, scene_idx: int) -> StepBatch:
    """Corrupt stored targets once, like annotation error on a dataset.

    Three effects, all scaled by the object's sigma: a systematic pull
    of box extent toward the sensor (annotators trace the visible near
    side and guess the far side short), a snap of orientation toward the
    nearest base angle, and a Gaussian scatter with an outlier mixture.
    The draws are fixed per scene, so a biased label stays biased across
    every visit and cannot be averaged away; negatives carry zero sigma
    and pass through.
    """
    rng = np.random.default_rng([cfg.seed, 3, scene_idx])
    sig1 = pack.rpn_sigma * cfg.rpn_noise_scale
    eps1 = rng.standard_normal(pack.rpn_reg.shape)
    out1 = np.where(rng.random(len(pack.rpn_reg)) < cfg.outlier_prob,
                    cfg.outlier_scale, 1.0)
    rpn_reg = pack.rpn_reg + (sig1 * out1)[:, None] * eps1
    rpn_reg[:, 0] -= cfg.loc_bias * sig1
    sig2 = pack.frh_sigma * cfg.loc_noise_scale
    eps_loc = rng.standard_normal(pack.frh_loc.shape)
    eps_or = rng.standard_normal(pack.frh_orient.shape)
    out2 = np.where(rng.random(len(pack.frh_loc)) < cfg.outlier_prob,
                    cfg.outlier_scale, 1.0)
    frh_loc = pack.frh_loc + (sig2 * out2)[:, None] * eps_loc
    frh_loc[:, :4] -= (cfg.loc_bias * sig2)[:, None]
    sig_or = pack.frh_sigma * cfg.orient_noise_scale
    snapped = _snap_orientation(pack.frh_orient, cfg.orient_snap * sig_or)
    frh_orient = np.where((sig_or > 0.0)[:, None], snapped, pack.frh_orient)
    frh_orient += (sig_or * out2)[:, None] * eps_or
    return StepBatch(x1=pack.x1, rpn_cls=pack.rpn_cls, rpn_reg=rpn_reg,
                     x2=pack.x2, frh_cls=pack.frh_cls, frh_loc=frh_loc,
                     frh_orient=frh_orient)


@dataclass
class LogRow:
    step: int
    lr: float
    rpn_reg: float
    rpn_cls: float
    frh_loc: float
    frh_cls: float
    frh_orient: float
    total: float


def train(training_set: TrainingSet, cfg: TrainConfig, layout: AnchorLayout):
    """Two-phase training loop; returns (params, per-step log).

    Phase one optimizes the plain objective, leaving the zero-initialized
    log-variance heads untouched; phase two enables attenuation. Scenes
    are visited round-robin; everything is reproducible from the seed.
    """
    if not training_set.packs:
        raise ValueError("training set must be nonempty")
    params = init_params(cfg, training_set.feat_len, layout)
    state = init_adam(params)
    batches = [apply_label_noise(p, cfg, i)
               for i, p in enumerate(training_set.packs)]
    log = []
    for step in range(cfg.phase1_steps + cfg.phase2_steps):
        batch = batches[step % len(batches)]
        attenuate = step >= cfg.phase1_steps
        breakdown, g1, g2 = run_batch(params, batch, cfg, step, attenuate)
        if not math.isfinite(breakdown.total):
            raise DivergenceError(f"non-finite loss at step {step}")
        adam_step(params, g1, g2, state, cfg, step)
        log.append(LogRow(step, lr_schedule(cfg, step), breakdown.rpn_reg,
                          breakdown.rpn_cls, breakdown.frh_loc, breakdown.frh_cls,
                          breakdown.frh_orient, breakdown.total))
    return params, log


LOG_FIELDS = ("step", "lr", "rpn_reg", "rpn_cls", "frh_loc", "frh_cls",
              "frh_orient", "total")


def save_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in log:
            writer.writerow([row.step, repr(row.lr), repr(row.rpn_reg),
                             repr(row.rpn_cls), repr(row.frh_loc), repr(row.frh_cls),
                             repr(row.frh_orient), repr(row.total)])


# ---------------------------------------------------------------------------
# inference

@dataclass(frozen=True)
class InferConfig:
    pre_nms_top: int = 512
    nms_threshold: float = 0.8
    proposal_count: int = 64
    final_nms_threshold: float = 0.3
    score_min: float = 0.05


@dataclass
class Detection:
    box: Box3D
    score: float
    rpn_log_var: np.ndarray
    loc_log_var: np.ndarray
    orient_log_var: np.ndarray
    frame_id: str = ""


def infer(params: ModelParams, grid: BevGrid, icfg: InferConfig = InferConfig(),
          frame_id: str = "", anchor_feats: Optional[np.ndarray] = None) -> list:
    """Score anchors, keep proposals through NMS, refine with stage 2.

    Deterministic: no dropout at inference, stable orderings throughout.
    anchor_feats, when given, must be anchor_features() for this grid and
    the model's layout; it skips the dominant recomputation when several
    parameter sets are scored on one grid.
    """
    layout = params.layout()
    pool_blocks = params.pool_blocks
    aset = build_anchor_set(layout, grid.spec)
    x = anchor_feats if anchor_feats is not None else anchor_features(
        grid, aset, pool_blocks)
    logits, reg, lv, _ = stage1_forward(params.stage1, x)
    scores = softmax(logits)[:, 1]
    order = np.argsort(-scores, kind="stable")[:icfg.pre_nms_top]
    proposals = []
    kept_anchor = []
    for i in order:
        box = decode_rpn(aset.box(int(i)), reg[i])
        proposals.append(ScoredBox(box=box, score=float(scores[i])))
        kept_anchor.append(int(i))
    keep = nms_indices(proposals, icfg.nms_threshold, icfg.proposal_count)
    rois = []
    roi_lv = []
    feats = []
    for k in keep:
        roi = proposals[k].box
        try:
            f = featurize(grid, roi, pool_blocks)
        except OutOfGrid:
            continue
        rois.append(roi)
        roi_lv.append(lv[kept_anchor[k]])
        feats.append(f)
    if not rois:
        return []
    x2 = np.stack(feats)
    logits2, loc, loc_lv, orient, orient_lv, _ = stage2_forward(params.stage2, x2)
    scores2 = softmax(logits2)[:, 1]
    dets = []
    for i, roi in enumerate(rois):
        if scores2[i] < icfg.score_min:
            continue
        box = decode_frh(roi, loc[i], orient[i])
        dets.append(Detection(box=box, score=float(scores2[i]),
                              rpn_log_var=np.array(roi_lv[i]),
                              loc_log_var=np.array(loc_lv[i]),
                              orient_log_var=np.array(orient_lv[i]),
                              frame_id=frame_id))
    if not dets:
        return []
    envelopes = [ScoredBox(box=aa_envelope(d.box), score=d.score) for d in dets]
    final = nms_indices(envelopes, icfg.final_nms_threshold, len(envelopes))
    return [dets[i] for i in final]


def detect_scenes(params: ModelParams, scenes, spec: RangeSpec,
                  icfg: InferConfig = InferConfig(), grids=None,
                  feats=None) -> list:
    """Run inference over scenes; cached grids/anchor features skip rework."""
    out = []
    for i, scene in enumerate(scenes):
        grid = grids[i] if grids is not None else rasterize(scene.cloud, spec)
        af = feats[i] if feats is not None else None
        out.append(infer(params, grid, icfg, frame_id=scene.cloud.frame_id,
                         anchor_feats=af))
    return out


DET_FIELDS = (["cx", "cy", "cz", "l", "w", "h", "yaw", "score"]
              + [f"rpn_lv_{i}" for i in range(RPN_DIM)]
              + [f"loc_lv_{i}" for i in range(FRH_LOC_DIM)]
              + [f"orient_lv_{i}" for i in range(FRH_ORIENT_DIM)])


def save_detections(dets, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DET_FIELDS)
        for d in dets:
            b = d.box
            row = [repr(float(v)) for v in (b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw,
                                            d.score)]
            row += [repr(float(v)) for v in d.rpn_log_var]
            row += [repr(float(v)) for v in d.loc_log_var]
            row += [repr(float(v)) for v in d.orient_log_var]
            writer.writerow(row)


def load_detections(path, frame_id: str = "") -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DET_FIELDS:
            raise ValueError(f"unexpected detections header in {path}")
        dets = []
        for row in reader:
            vals = [float(v) for v in row]
            dets.append(Detection(
                box=Box3D(*vals[:7]), score=vals[7],
                rpn_log_var=np.array(vals[8:8 + RPN_DIM]),
                loc_log_var=np.array(vals[8 + RPN_DIM:8 + RPN_DIM + FRH_LOC_DIM]),
                orient_log_var=np.array(vals[8 + RPN_DIM + FRH_LOC_DIM:]),
                frame_id=frame_id))
    return dets


# ---------------------------------------------------------------------------
# finite-difference verification

def _rel_ok(analytic: float, numeric: float, rtol: float) -> bool:
    return abs(analytic - numeric) <= rtol * max(1.0, abs(analytic), abs(numeric))


def _central(fn, x: float, h: float = 1e-6):
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def _check_losses(seed: int, rtol: float) -> list:
    rng = np.random.default_rng([seed, 10])
    bad = []
    for _ in range(20):
        r = float(rng.normal(0.0, 2.0))
        if abs(abs(r) - 1.0) < 1e-3:
            continue
        _, d = smooth_l1(r)
        if not _rel_ok(d, _central(lambda t: smooth_l1(t)[0], r), rtol):
            bad.append(f"smooth_l1 derivative at r={r!r}")
    logits = rng.normal(0.0, 2.0, 5)
    label = int(rng.integers(5))
    _, grad = cross_entropy(logits, label)
    for i in range(5):
        def f(t, i=i):
            z = logits.copy()
            z[i] = t
            return cross_entropy(z, label)[0]
        if not _rel_ok(grad[i], _central(f, logits[i]), rtol):
            bad.append(f"cross_entropy gradient component {i}")
    for form in ("gaussian", "laplace"):
        L = float(abs(rng.normal(1.0, 0.5))) + 0.05
        s = float(rng.normal(0.0, 1.0))
        _, d_res, d_s = attenuated_term(L, s, form)
        if not _rel_ok(d_res, _central(lambda t: attenuated_term(t, s, form)[0], L), rtol):
            bad.append(f"attenuated_term residual partial ({form})")
        if not _rel_ok(d_s, _central(lambda t: attenuated_term(L, t, form)[0], s), rtol):
            bad.append(f"attenuated_term log-variance partial ({form})")
    return bad


def _random_outputs_targets(rng, n=7, m=6):
    def labels(k):
        lab = rng.integers(-1, 2, size=k)
        lab[0] = 1
        return lab
    outputs = HeadOutputs(
        rpn_logits=rng.normal(0, 1.5, (n, 2)), rpn_reg=rng.normal(0, 1.2, (n, RPN_DIM)),
        rpn_log_var=rng.normal(0, 0.8, (n, RPN_DIM)),
        frh_logits=rng.normal(0, 1.5, (m, 2)),
        frh_loc=rng.normal(0, 1.2, (m, FRH_LOC_DIM)),
        frh_loc_log_var=rng.normal(0, 0.8, (m, FRH_LOC_DIM)),
        frh_orient=rng.normal(0, 1.2, (m, FRH_ORIENT_DIM)),
        frh_orient_log_var=rng.normal(0, 0.8, (m, FRH_ORIENT_DIM)))
    targets = HeadTargets(
        rpn_reg=rng.normal(0, 1.0, (n, RPN_DIM)) + 0.001, rpn_cls=labels(n),
        frh_loc=rng.normal(0, 1.0, (m, FRH_LOC_DIM)) + 0.001,
        frh_orient=rng.normal(0, 1.0, (m, FRH_ORIENT_DIM)) + 0.001,
        frh_cls=labels(m))
    return outputs, targets


def _check_multi_loss(seed: int, rtol: float) -> list:
    rng = np.random.default_rng([seed, 11])
    form = LIKELIHOOD_CHOICES[seed % 2]
    outputs, targets = _random_outputs_targets(rng)
    _, grads = multi_loss(outputs, targets, form=form)
    bad = []
    for f in fields(HeadOutputs):
        arr = getattr(outputs, f.name)
        g = getattr(grads, f.name)
        for idx in np.ndindex(arr.shape):
            def fn(t, f=f, idx=idx):
                before = arr[idx]
                arr[idx] = t
                val = multi_loss(outputs, targets, form=form)[0].total
                arr[idx] = before
                return val
            if not _rel_ok(g[idx], _central(fn, float(arr[idx])), rtol):
                bad.append(f"multi_loss gradient {f.name}{list(idx)} ({form})")
    return bad


def _gradcheck_cfg(seed: int) -> TrainConfig:
    return TrainConfig(seed=seed, hidden1=8, hidden2=9, dropout_rate=0.5,
                       pool_blocks=1)


def _random_step_batch(rng, feat_len: int, n=6, m=5) -> StepBatch:
    def labels(k):
        lab = rng.integers(-1, 2, size=k)
        lab[0] = 1
        return lab
    return StepBatch(
        x1=rng.normal(0, 1.0, (n, feat_len)), rpn_cls=labels(n),
        rpn_reg=rng.normal(0, 0.8, (n, RPN_DIM)) + 0.001,
        x2=rng.normal(0, 1.0, (m, feat_len)), frh_cls=labels(m),
        frh_loc=rng.normal(0, 0.8, (m, FRH_LOC_DIM)) + 0.001,
        frh_orient=rng.normal(0, 0.8, (m, FRH_ORIENT_DIM)) + 0.001)


def _check_end_to_end(seed: int, rtol: float, train_mode: bool) -> list:
    feat_len = 15
    cfg = _gradcheck_cfg(seed)
    rng = np.random.default_rng([seed, 12])
    layout = AnchorLayout(shapes=((4.0, 1.8, 1.5),))
    params = init_params(cfg, feat_len, layout)
    for _, arr in named_arrays(params):
        if arr.ndim:
            arr += rng.normal(0, 0.05, arr.shape)
    batch = _random_step_batch(rng, feat_len)
    step = 3
    _, g1, g2 = run_batch(params, batch, cfg, step, attenuate=True,
                          train_mode=train_mode)
    bad = []
    for stage, grads in ((params.stage1, g1), (params.stage2, g2)):
        for f in fields(stage):
            arr = getattr(stage, f.name)
            g = getattr(grads, f.name)
            for idx in np.ndindex(arr.shape):
                def fn(t, arr=arr, idx=idx):
                    before = arr[idx]
                    arr[idx] = t
                    val = run_batch(params, batch, cfg, step, attenuate=True,
                                    train_mode=train_mode)[0].total
                    arr[idx] = before
                    return val
                if not _rel_ok(g[idx], _central(fn, float(arr[idx])), rtol):
                    bad.append(f"end-to-end gradient {f.name}{list(idx)} "
                               f"(train_mode={train_mode})")
    return bad


def gradcheck(seeds: int = 20, rtol: float = 1e-4):
    """Finite-difference verification of every analytic gradient.

    Returns (ok, report lines). Covers the base losses, the attenuated
    term in both forms, the assembled multi-loss, and the end-to-end
    model through dropout (masks are replayed, so the loss is a fixed
    differentiable function during differencing).
    """
    failures = []
    for seed in range(seeds):
        failures += [f"seed {seed}: {msg}" for msg in _check_losses(seed, rtol)]
        failures += [f"seed {seed}: {msg}" for msg in _check_multi_loss(seed, rtol)]
    for seed in range(min(seeds, 6)):
        failures += [f"seed {seed}: {msg}"
                     for msg in _check_end_to_end(seed, rtol, train_mode=True)]
    failures += [f"seed 0: {msg}" for msg in _check_end_to_end(0, rtol, train_mode=False)]
    report = [f"checked {seeds} seeds at rtol {rtol:g}"]
    if failures:
        report += failures
        return False, report
    report.append("all analytic gradients match central finite differences")
    return True, report
