"""Tiny convolutional classifiers with exact analytic gradients.

Two model kinds are supported: a 5-class patch classifier and a binary
whole-image classifier that reuses the patch trunk, passes its features
through a residual convolution block, and freezes the early trunk
tensors so only the final block and the new head are trained.

Everything is plain numpy in float64. Parameters live in a flat
``ParamVector`` whose layout (name, shape, offset) is derived from the
``ModelSpec``; that flat form is what the federated algorithms average.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

PATCH_CLASSIFIER = "patch_classifier"
WHOLE_IMAGE_CLASSIFIER = "whole_image_classifier"

LayoutEntry = tuple[str, tuple[int, ...], int]

FHW_MAGIC = "FHW1"


class LayoutMismatchError(ValueError):
    """Raised when parameter layouts of two vectors disagree."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: conv trunk, optional residual block, FC head."""

    kind: str
    conv_blocks: tuple[tuple[int, int, int], ...] = ((8, 3, 2), (16, 3, 2))
    hidden: tuple[int, ...] = ()
    n_outputs: int = 5
    frozen_prefix: int = 0
    in_channels: int = 1

    def __post_init__(self):
        if self.kind not in (PATCH_CLASSIFIER, WHOLE_IMAGE_CLASSIFIER):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == PATCH_CLASSIFIER and self.n_outputs != 5:
            raise ValueError("patch classifier must have 5 outputs")
        if self.kind == WHOLE_IMAGE_CLASSIFIER and self.n_outputs != 1:
            raise ValueError("whole-image classifier must have 1 output")
        if self.frozen_prefix >= len(layout_for(self)):
            raise ValueError("frozen_prefix must leave at least one trainable tensor")

    @property
    def has_residual(self) -> bool:
        return self.kind == WHOLE_IMAGE_CLASSIFIER


def tensor_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Named tensor shapes in storage order: trunk, residual block, head."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    c_in = spec.in_channels
    for i, (c_out, k, _pool) in enumerate(spec.conv_blocks, start=1):
        shapes.append((f"conv{i}_w", (c_out, c_in, k, k)))
        shapes.append((f"conv{i}_b", (c_out,)))
        c_in = c_out
    if spec.has_residual:
        shapes.append(("res_w", (c_in, c_in, 3, 3)))
        shapes.append(("res_b", (c_in,)))
    feat = c_in
    for j, h in enumerate(spec.hidden, start=1):
        shapes.append((f"fc{j}_w", (h, feat)))
        shapes.append((f"fc{j}_b", (h,)))
        feat = h
    shapes.append(("out_w", (spec.n_outputs, feat)))
    shapes.append(("out_b", (spec.n_outputs,)))
    return shapes


def layout_for(spec: ModelSpec) -> tuple[LayoutEntry, ...]:
    entries = []
    offset = 0
    for name, shape in tensor_shapes(spec):
        entries.append((name, shape, offset))
        offset += int(np.prod(shape))
    return tuple(entries)


@dataclass
class ParamVector:
    """Flat float64 parameter storage plus a (name, shape, offset) layout."""

    values: np.ndarray
    layout: tuple[LayoutEntry, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        total = sum(int(np.prod(shape)) for _, shape, _ in self.layout)
        if self.values.ndim != 1 or self.values.size != total:
            raise LayoutMismatchError(
                f"flat array of size {self.values.size} does not match layout total {total}"
            )

    def view(self, name: str) -> np.ndarray:
        """Writable reshaped view of one named tensor."""
        for tname, shape, offset in self.layout:
            if tname == name:
                size = int(np.prod(shape))
                return self.values[offset : offset + size].reshape(shape)
        raise KeyError(name)

    def names(self) -> list[str]:
        return [name for name, _, _ in self.layout]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)


def check_same_layout(*vectors: ParamVector) -> None:
    first = vectors[0].layout
    for v in vectors[1:]:
        if v.layout != first:
            raise LayoutMismatchError("parameter vectors have different layouts")


def frozen_slice(spec: ModelSpec) -> slice:
    """Flat index range covered by the frozen leading tensors."""
    layout = layout_for(spec)
    if spec.frozen_prefix == 0:
        return slice(0, 0)
    name, shape, offset = layout[spec.frozen_prefix - 1]
    return slice(0, offset + int(np.prod(shape)))


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Fan-in-scaled uniform weights, zero biases; deterministic per (spec, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x6E6E6574]))
    layout = layout_for(spec)
    values = np.zeros(sum(int(np.prod(s)) for _, s, _ in layout))
    params = ParamVector(values, layout)
    for name, shape, _ in layout:
        if name.endswith("_b"):
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = float(np.sqrt(1.0 / fan_in))
        params.view(name)[...] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass
class Batch:
    """A batch of inputs (N, H, W) and integer labels (N,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 3 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a nonempty (N, H, W) array")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must align with inputs")


# ---------------------------------------------------------------------------
# layer primitives (stride 1, zero same-padding convolutions; max pooling)
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    # rows ordered as (c, ki, kj); columns as (n, y, x) so the matrix feeds
    # the conv GEMM without a second copy
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * h * w)
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, x_shape: tuple[int, ...], k: int) -> np.ndarray:
    n, c, h, w = x_shape
    p = k // 2
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    dtiles = dcols.reshape(c, k, k, n, h, w)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + w] += dtiles[:, i, j].transpose(1, 0, 2, 3)
    return dxp[:, :, p : p + h, p : p + w]


def _conv_forward(x, w, b):
    n, _, h, wd = x.shape
    c_out = w.shape[0]
    k = w.shape[2]
    cols = _im2col(x, k)
    flat = w.reshape(c_out, -1) @ cols  # one big GEMM
    out = flat.reshape(c_out, n, h, wd).transpose(1, 0, 2, 3) + b[None, :, None, None]
    return out, cols


def _conv_backward(dout, cols, x_shape, w):
    n, c_out, h, wd = dout.shape
    k = w.shape[2]
    dm = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(c_out, n * h * wd)
    dw = (dm @ cols.T).reshape(w.shape)
    db = dm.sum(axis=1)
    dcols = w.reshape(c_out, -1).T @ dm
    dx = _col2im(dcols, x_shape, k)
    return dx, dw, db


def _pool_forward(x, p):
    if p == 1:
        return x, None
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ValueError(f"spatial size {h}x{w} not divisible by pool {p}")
    out = x[:, :, ::p, ::p]
    for i in range(p):
        for j in range(p):
            if i or j:
                out = np.maximum(out, x[:, :, i::p, j::p])
    return out, (x, out)


def _pool_backward(dout, cache, p):
    if p == 1:
        return dout
    x, out = cache
    dx = np.zeros_like(x)
    taken = np.zeros(out.shape, dtype=bool)
    # route each window's gradient to its first maximum in row-major order
    for i in range(p):
        for j in range(p):
            hit = (x[:, :, i::p, j::p] == out) & ~taken
            dx[:, :, i::p, j::p] = np.where(hit, dout, 0.0)
            taken |= hit
    return dx


# ---------------------------------------------------------------------------
# forward / loss / gradient
# ---------------------------------------------------------------------------


def _forward_with_cache(spec: ModelSpec, params: ParamVector, inputs: np.ndarray):
    if params.layout != layout_for(spec):
        raise LayoutMismatchError("params layout does not match spec")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("inputs must be (N, H, W)")
    a = x[:, None, :, :]
    cache = {"conv": [], "res": None, "fc": []}
    for i, (_c_out, _k, pool) in enumerate(spec.conv_blocks, start=1):
        w = params.view(f"conv{i}_w")
        b = params.view(f"conv{i}_b")
        z, cols = _conv_forward(a, w, b)
        r = np.maximum(z, 0.0)
        out, pcache = _pool_forward(r, pool)
        cache["conv"].append((a.shape, cols, z, pcache))
        a = out
    if spec.has_residual:
        w = params.view("res_w")
        b = params.view("res_b")
        z, cols = _conv_forward(a, w, b)
        s = a + z
        out = np.maximum(s, 0.0)
        cache["res"] = (a.shape, cols, s)
        a = out
    feat = a.mean(axis=(2, 3))
    cache["gap_shape"] = a.shape
    h = feat
    for j in range(1, len(spec.hidden) + 1):
        w = params.view(f"fc{j}_w")
        b = params.view(f"fc{j}_b")
        z = h @ w.T + b
        cache["fc"].append((h, z))
        h = np.maximum(z, 0.0)
    logits = h @ params.view("out_w").T + params.view("out_b")
    cache["head_in"] = h
    return logits, cache


def forward(spec: ModelSpec, params: ParamVector, batch: Batch) -> np.ndarray:
    """Logits of shape (N, n_outputs)."""
    logits, _ = _forward_with_cache(spec, params, batch.inputs)
    return logits


def predict_proba(spec: ModelSpec, params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    """Class probabilities: softmax rows for patch, sigmoid column for image."""
    logits, _ = _forward_with_cache(spec, params, inputs)
    return logits_to_proba(spec, logits)


def logits_to_proba(spec: ModelSpec, logits: np.ndarray) -> np.ndarray:
    if spec.kind == PATCH_CLASSIFIER:
        return _softmax(logits)
    return _sigmoid(logits)


def _softmax(z):
    zs = z - z.max(axis=1, keepdims=True)
    e = np.exp(zs)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _loss_and_dlogits(spec: ModelSpec, logits: np.ndarray, labels: np.ndarray):
    n = logits.shape[0]
    if spec.kind == PATCH_CLASSIFIER:
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ValueError("labels outside class range")
        zs = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(zs).sum(axis=1))
        loss = float(np.mean(logz - zs[np.arange(n), labels]))
        probs = _softmax(logits)
        dlog = probs
        dlog[np.arange(n), labels] -= 1.0
        return loss, dlog / n
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("binary labels must be 0/1")
    z = logits[:, 0]
    y = labels.astype(np.float64)
    # log(1 + exp(z)) - y*z, computed stably
    loss = float(np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))))
    dz = (_sigmoid(z) - y) / n
    return loss, dz[:, None]


def loss_and_grad(spec: ModelSpec, params: ParamVector, batch: Batch):
    """Mean cross-entropy loss and its exact gradient as a ParamVector.

    Gradient entries belonging to the ``frozen_prefix`` leading tensors
    are identically zero.
    """
    logits, cache = _forward_with_cache(spec, params, batch.inputs)
    loss, dlogits = _loss_and_dlogits(spec, logits, batch.labels)

    grads: dict[str, np.ndarray] = {}
    h = cache["head_in"]
    grads["out_w"] = dlogits.T @ h
    grads["out_b"] = dlogits.sum(axis=0)
    dh = dlogits @ params.view("out_w")
    for j in range(len(spec.hidden), 0, -1):
        hin, z = cache["fc"][j - 1]
        dz = dh * (z > 0.0)
        grads[f"fc{j}_w"] = dz.T @ hin
        grads[f"fc{j}_b"] = dz.sum(axis=0)
        dh = dz @ params.view(f"fc{j}_w")
    n, c, hh, ww = cache["gap_shape"]
    da = np.broadcast_to(dh[:, :, None, None], (n, c, hh, ww)) / (hh * ww)
    da = np.ascontiguousarray(da)
    if spec.has_residual:
        a_shape, cols, s = cache["res"]
        ds = da * (s > 0.0)
        dx, dw, db = _conv_backward(ds, cols, a_shape, params.view("res_w"))
        grads["res_w"] = dw
        grads["res_b"] = db
        da = ds + dx
    for i in range(len(spec.conv_blocks), 0, -1):
        a_shape, cols, z, pcache = cache["conv"][i - 1]
        pool = spec.conv_blocks[i - 1][2]
        dr = _pool_backward(da, pcache, pool)
        dz = dr * (z > 0.0)
        dx, dw, db = _conv_backward(dz, cols, a_shape, params.view(f"conv{i}_w"))
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
        da = dx

    grad = params.zeros_like()
    for name, _, _ in params.layout:
        grad.view(name)[...] = grads[name]
    grad.values[frozen_slice(spec)] = 0.0
    return loss, grad


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    """Plain gradient step ``params - lr * grad``."""
    check_same_layout(params, grad)
    return ParamVector(params.values - lr * grad.values, params.layout)


def derive_image_model(
    patch_spec: ModelSpec,
    patch_params: ParamVector,
    seed: int,
    hidden: tuple[int, ...] = (16,),
) -> tuple[ModelSpec, ParamVector]:
    """Build the binary whole-image model from a trained patch classifier.

    The conv trunk is copied verbatim; the residual block and the new
    binary head are freshly initialized from ``seed``. All trunk tensors
    except the final conv block are frozen.
    """
    if patch_spec.kind != PATCH_CLASSIFIER:
        raise ValueError("expected a patch classifier spec")
    if patch_params.layout != layout_for(patch_spec):
        raise LayoutMismatchError("patch params do not match patch spec")
    image_spec = ModelSpec(
        kind=WHOLE_IMAGE_CLASSIFIER,
        conv_blocks=patch_spec.conv_blocks,
        hidden=hidden,
        n_outputs=1,
        frozen_prefix=2 * (len(patch_spec.conv_blocks) - 1),
        in_channels=patch_spec.in_channels,
    )
    image_params = init_params(image_spec, seed)
    for i in range(1, len(patch_spec.conv_blocks) + 1):
        image_params.view(f"conv{i}_w")[...] = patch_params.view(f"conv{i}_w")
        image_params.view(f"conv{i}_b")[...] = patch_params.view(f"conv{i}_b")
    return image_spec, image_params


def default_patch_spec() -> ModelSpec:
    return ModelSpec(kind=PATCH_CLASSIFIER)


def default_image_spec(hidden: tuple[int, ...] = (16,)) -> ModelSpec:
    return ModelSpec(kind=WHOLE_IMAGE_CLASSIFIER, hidden=hidden, n_outputs=1)


# ---------------------------------------------------------------------------
# checkpoint format: plain-text layout manifest + little-endian float32 blob
# ---------------------------------------------------------------------------


def save_params(params: ParamVector, path) -> None:
    header = io.StringIO()
    header.write(f"{FHW_MAGIC}\n{len(params.layout)}\n")
    for name, shape, offset in params.layout:
        dims = ",".join(str(d) for d in shape)
        header.write(f"{name} {dims} {offset}\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        fh.write(b"---\n")
        fh.write(params.values.astype("<f4").tobytes())


def load_params(path) -> ParamVector:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, body = blob.partition(b"---\n")
    lines = head.decode("ascii").splitlines()
    if not lines or lines[0] != FHW_MAGIC:
        raise ValueError(f"{path}: not a {FHW_MAGIC} checkpoint")
    count = int(lines[1])
    layout = []
    for line in lines[2 : 2 + count]:
        name, dims, offset = line.split()
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        layout.append((name, shape, int(offset)))
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return ParamVector(values, tuple(layout))
