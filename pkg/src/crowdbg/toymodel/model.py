"""A small two-headed fully convolutional counter.

The network is deliberately tiny so that end-to-end training runs in
seconds and gradients can be checked against finite differences:

    trunk:         3x3 conv, 1 -> 8 channels, ReLU
    density head:  three 3x3 convs, 8 -> 8 -> 8 -> 1 (ReLU between, linear out)
    mask head:     same shape, producing per-pixel logits

All convolutions use zero padding so every activation keeps the input's
height and width; inputs must be at least 7x7 so the receptive field fits.
When suppression is enabled the emitted density is the intermediate
density multiplied elementwise by the sigmoid of the mask logits; when
disabled the model is a plain density regressor and the mask head is
inert (zero loss, zero gradient, untouched by training).

Forward, backward, and the SGD loop are plain numpy. The backward pass is
hand-rolled (padded input windows are shared between the forward product
and the weight gradient), which keeps the whole parameter vector small
enough to verify with central finite differences in the tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import FileFormatError, GridShapeError, NumericError, ParameterError
from ..grids import BinaryMask, DensityMap
from ..losses import DensityLossKind, LossConfig, LossOutput, combined_loss, density_loss, sigmoid

CHANNELS = 8
MIN_INPUT_SIDE = 7

# Canonical tensor order, used for initialization draws and file layout.
PARAM_NAMES = (
    "trunk_w", "trunk_b",
    "reg1_w", "reg1_b",
    "reg2_w", "reg2_b",
    "reg3_w", "reg3_b",
    "seg1_w", "seg1_b",
    "seg2_w", "seg2_b",
    "seg3_w", "seg3_b",
)

_SHAPES = {
    "trunk_w": (CHANNELS, 1, 3, 3), "trunk_b": (CHANNELS,),
    "reg1_w": (CHANNELS, CHANNELS, 3, 3), "reg1_b": (CHANNELS,),
    "reg2_w": (CHANNELS, CHANNELS, 3, 3), "reg2_b": (CHANNELS,),
    "reg3_w": (1, CHANNELS, 3, 3), "reg3_b": (1,),
    "seg1_w": (CHANNELS, CHANNELS, 3, 3), "seg1_b": (CHANNELS,),
    "seg2_w": (CHANNELS, CHANNELS, 3, 3), "seg2_b": (CHANNELS,),
    "seg3_w": (1, CHANNELS, 3, 3), "seg3_b": (1,),
}


@dataclass(frozen=True)
class ToyModelParams:
    trunk_w: np.ndarray
    trunk_b: np.ndarray
    reg1_w: np.ndarray
    reg1_b: np.ndarray
    reg2_w: np.ndarray
    reg2_b: np.ndarray
    reg3_w: np.ndarray
    reg3_b: np.ndarray
    seg1_w: np.ndarray
    seg1_b: np.ndarray
    seg2_w: np.ndarray
    seg2_b: np.ndarray
    seg3_w: np.ndarray
    seg3_b: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != _SHAPES[name]:
                raise GridShapeError(f"{name}: expected shape {_SHAPES[name]}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise NumericError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    def items(self):
        for name in PARAM_NAMES:
            yield name, getattr(self, name)


def init_params(seed: int) -> ToyModelParams:
    """He-style random weights, zero biases, drawn in canonical tensor order."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name in PARAM_NAMES:
        shape = _SHAPES[name]
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return ToyModelParams(**tensors)


def _conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-size 3x3 convolution; returns output and the padded windows."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (C_in, H, W, 3, 3)
    y = np.einsum("ijkuv,oiuv->ojk", win, w, optimize=True) + b[:, None, None]
    return y, win


def _conv3_backward(g: np.ndarray, win: np.ndarray, w: np.ndarray):
    """Gradients of a 3x3 same convolution given the output gradient g."""
    grad_b = g.sum(axis=(1, 2))
    grad_w = np.einsum("ojk,ijkuv->oiuv", g, win, optimize=True)
    gp = np.pad(g, ((0, 0), (1, 1), (1, 1)))
    gwin = sliding_window_view(gp, (3, 3), axis=(1, 2))  # (C_out, H, W, 3, 3)
    grad_x = np.einsum("ojkuv,oiuv->ijk", gwin, w[:, :, ::-1, ::-1], optimize=True)
    return grad_x, grad_w, grad_b


def _as_input(image) -> np.ndarray:
    x = np.ascontiguousarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise GridShapeError(f"model input must be a 2-D grid, got shape {x.shape}")
    if x.shape[0] < MIN_INPUT_SIDE or x.shape[1] < MIN_INPUT_SIDE:
        raise GridShapeError(
            f"model input must be at least {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}, got {x.shape}"
        )
    if not np.isfinite(x).all():
        raise NumericError("model input contains non-finite values")
    return x[None, :, :]


@dataclass(frozen=True)
class ForwardResult:
    """Raw model outputs for one image, each of shape (H, W).

    mask_logits is None when suppression is disabled; density_out is then
    exactly density_int.
    """

    density_int: np.ndarray
    mask_logits: Optional[np.ndarray]
    density_out: np.ndarray


class _Trace:
    """Activations kept alive for the backward pass."""

    __slots__ = ("x", "t_pre", "t", "win_t", "win_r1", "r1_pre", "r1", "win_r2",
                 "r2_pre", "r2", "win_r3", "d_int", "win_s1", "s1_pre", "s1",
                 "win_s2", "s2_pre", "s2", "win_s3", "logits")


def _forward_trace(params: ToyModelParams, image, with_bs: bool) -> _Trace:
    tr = _Trace()
    tr.x = _as_input(image)
    tr.t_pre, tr.win_t = _conv3(tr.x, params.trunk_w, params.trunk_b)
    tr.t = np.maximum(tr.t_pre, 0.0)

    tr.r1_pre, tr.win_r1 = _conv3(tr.t, params.reg1_w, params.reg1_b)
    tr.r1 = np.maximum(tr.r1_pre, 0.0)
    tr.r2_pre, tr.win_r2 = _conv3(tr.r1, params.reg2_w, params.reg2_b)
    tr.r2 = np.maximum(tr.r2_pre, 0.0)
    d_int, tr.win_r3 = _conv3(tr.r2, params.reg3_w, params.reg3_b)
    tr.d_int = d_int[0]

    if with_bs:
        tr.s1_pre, tr.win_s1 = _conv3(tr.t, params.seg1_w, params.seg1_b)
        tr.s1 = np.maximum(tr.s1_pre, 0.0)
        tr.s2_pre, tr.win_s2 = _conv3(tr.s1, params.seg2_w, params.seg2_b)
        tr.s2 = np.maximum(tr.s2_pre, 0.0)
        logits, tr.win_s3 = _conv3(tr.s2, params.seg3_w, params.seg3_b)
        tr.logits = logits[0]
    else:
        tr.logits = None
    return tr


def forward(params: ToyModelParams, image, with_bs: bool = True) -> ForwardResult:
    """Run the model on a 2-D input grid (at least 7x7)."""
    tr = _forward_trace(params, image, with_bs)
    if with_bs:
        d_out = tr.d_int * sigmoid(tr.logits)
    else:
        d_out = tr.d_int
    return ForwardResult(density_int=tr.d_int, mask_logits=tr.logits, density_out=d_out)


def predict_density(params: ToyModelParams, image, with_bs: bool = True) -> DensityMap:
    return DensityMap(forward(params, image, with_bs).density_out)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the toy trainer.

    alpha_train sets the head-disk dilation used to build the mask target
    (narrower than the evaluation dilation). lambda_ weights the mask loss
    inside the combined objective.
    """

    with_bs: bool = True
    lambda_: float = 1e-4
    learning_rate: float = 1e-3
    epochs: int = 30
    seed: int = 0
    alpha_train: float = 1.0
    density_loss_kind: DensityLossKind = DensityLossKind.ABSOLUTE
    probability_clamp: float = 1e-7

    def __post_init__(self):
        if self.epochs < 1 or int(self.epochs) != self.epochs:
            raise ParameterError(f"epochs must be a positive integer, got {self.epochs}")
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.alpha_train <= 0:
            raise ParameterError(f"alpha_train must be > 0, got {self.alpha_train}")
        self.loss_config()  # validates lambda_ and probability_clamp

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lambda_=self.lambda_,
            density_loss_kind=self.density_loss_kind,
            probability_clamp=self.probability_clamp,
        )


def sample_gradients(
    params: ToyModelParams,
    image,
    gt_density: DensityMap,
    gt_mask: BinaryMask,
    loss_cfg: LossConfig = LossConfig(),
    with_bs: bool = True,
) -> tuple[LossOutput, dict[str, np.ndarray]]:
    """Loss on one (image, density, mask) triple plus per-tensor gradients.

    With suppression disabled the mask head contributes neither loss nor
    gradient, so its tensors receive exact zeros.
    """
    tr = _forward_trace(params, image, with_bs)
    if (tr.d_int.shape != (gt_density.height, gt_density.width)
            or tr.d_int.shape != (gt_mask.height, gt_mask.width)):
        raise GridShapeError(
            f"model output {tr.d_int.shape} vs targets "
            f"{(gt_density.height, gt_density.width)} / {(gt_mask.height, gt_mask.width)}"
        )

    grads = {name: np.zeros(_SHAPES[name]) for name in PARAM_NAMES}
    if with_bs:
        out = combined_loss(DensityMap(tr.d_int), tr.logits, gt_density, gt_mask, loss_cfg)
    else:
        dens, g_dens = density_loss(DensityMap(tr.d_int), gt_density, loss_cfg.density_loss_kind)
        out = LossOutput(
            total=dens,
            density_term=dens,
            bce_term=0.0,
            grad_wrt_density_int=g_dens,
            grad_wrt_mask_logits=np.zeros_like(g_dens),
        )

    # Density head, walked back from the output conv.
    g = out.grad_wrt_density_int[None, :, :]
    g, grads["reg3_w"], grads["reg3_b"] = _conv3_backward(g, tr.win_r3, params.reg3_w)
    g *= tr.r2_pre > 0.0
    g, grads["reg2_w"], grads["reg2_b"] = _conv3_backward(g, tr.win_r2, params.reg2_w)
    g *= tr.r1_pre > 0.0
    g_trunk, grads["reg1_w"], grads["reg1_b"] = _conv3_backward(g, tr.win_r1, params.reg1_w)

    if with_bs:
        g = out.grad_wrt_mask_logits[None, :, :]
        g, grads["seg3_w"], grads["seg3_b"] = _conv3_backward(g, tr.win_s3, params.seg3_w)
        g *= tr.s2_pre > 0.0
        g, grads["seg2_w"], grads["seg2_b"] = _conv3_backward(g, tr.win_s2, params.seg2_w)
        g *= tr.s1_pre > 0.0
        g_seg, grads["seg1_w"], grads["seg1_b"] = _conv3_backward(g, tr.win_s1, params.seg1_w)
        g_trunk = g_trunk + g_seg

    g_trunk = g_trunk * (tr.t_pre > 0.0)
    _, grads["trunk_w"], grads["trunk_b"] = _conv3_backward(g_trunk, tr.win_t, params.trunk_w)
    return out, grads


def loss_and_gradients(params: ToyModelParams, scene, cfg: TrainConfig = TrainConfig()):
    """sample_gradients for a scene object, mask built at cfg.alpha_train."""
    gt_mask = scene.gt_mask(cfg.alpha_train)
    return sample_gradients(
        params, scene.image, scene.gt_density, gt_mask, cfg.loss_config(), cfg.with_bs
    )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_total: float
    mean_density_term: float
    mean_bce_term: float


def _sgd_step(params: ToyModelParams, grads: dict, lr: float) -> ToyModelParams:
    return ToyModelParams(**{name: arr - lr * grads[name] for name, arr in params.items()})


def train(
    params: ToyModelParams,
    scenes: Sequence,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[ToyModelParams, list[EpochStats]]:
    """Plain per-sample SGD with a seeded per-epoch shuffle.

    Fully deterministic for a given (params, scenes, cfg). Raises
    NumericError (with .epoch set) as soon as a loss, gradient, or updated
    parameter stops being finite; a zero learning rate leaves the
    parameters bit-identical.
    """
    if not scenes:
        raise ParameterError("no training scenes given")
    loss_cfg = cfg.loss_config()
    triples = [(s.image, s.gt_density, s.gt_mask(cfg.alpha_train)) for s in scenes]
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(triples))
        total_acc = dens_acc = bce_acc = 0.0
        for idx in order:
            image, gt_density, gt_mask = triples[idx]
            try:
                # Overflow in a diverging run is detected below and turned
                # into NumericError; the numpy warnings would only add noise.
                with np.errstate(over="ignore", invalid="ignore"):
                    out, grads = sample_gradients(
                        params, image, gt_density, gt_mask, loss_cfg, cfg.with_bs
                    )
                finite = np.isfinite(out.total) and all(
                    np.isfinite(g).all() for g in grads.values()
                )
                if not finite:
                    raise NumericError("non-finite loss or gradient")
                params = _sgd_step(params, grads, cfg.learning_rate)
            except NumericError as exc:
                wrapped = NumericError(f"training diverged at epoch {epoch}: {exc}")
                wrapped.epoch = epoch
                raise wrapped from exc
            total_acc += out.total
            dens_acc += out.density_term
            bce_acc += out.bce_term
        n = len(triples)
        trace.append(EpochStats(epoch, total_acc / n, dens_acc / n, bce_acc / n))
    return params, trace


# --- parameter file format -------------------------------------------------
#
# Little-endian layout:
#   magic "TFCN" | u16 version=1 | u32 tensor_count
#   then per tensor, in PARAM_NAMES order:
#     4 x u32 dims (1-D biases stored as (n, 1, 1, 1)) | float64 payload, C order

MODEL_MAGIC = b"TFCN"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHI")
_DIMS = struct.Struct("<IIII")


def _stored_shape(name: str) -> tuple[int, int, int, int]:
    shape = _SHAPES[name]
    return shape if len(shape) == 4 else (shape[0], 1, 1, 1)


def save_params(params: ToyModelParams, path) -> None:
    chunks = [_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(PARAM_NAMES))]
    for name, arr in params.items():
        chunks.append(_DIMS.pack(*_stored_shape(name)))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_params(path) -> ToyModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _MODEL_HEADER.size:
        raise FileFormatError("truncated model header", len(data))
    magic, version, count = _MODEL_HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", 0)
    if version != MODEL_VERSION:
        raise FileFormatError(f"unsupported model version {version}", 4)
    if count != len(PARAM_NAMES):
        raise FileFormatError(f"expected {len(PARAM_NAMES)} tensors, header says {count}", 6)
    offset = _MODEL_HEADER.size
    tensors = {}
    for name in PARAM_NAMES:
        if len(data) < offset + _DIMS.size:
            raise FileFormatError(f"truncated dims for tensor {name}", len(data))
        dims = _DIMS.unpack_from(data, offset)
        if dims != _stored_shape(name):
            raise FileFormatError(
                f"tensor {name}: expected dims {_stored_shape(name)}, got {dims}", offset
            )
        offset += _DIMS.size
        n = int(np.prod(dims))
        payload = n * 8
        if len(data) < offset + payload:
            raise FileFormatError(f"truncated payload for tensor {name}", len(data))
        arr = np.frombuffer(data[offset:offset + payload], dtype="<f8").reshape(dims)
        offset += payload
        tensors[name] = arr.reshape(_SHAPES[name]).astype(np.float64)
    if offset != len(data):
        raise FileFormatError(f"{len(data) - offset} trailing bytes after last tensor", offset)
    return ToyModelParams(**tensors)
