"""Small per-pixel convolutional network with hand-written backpropagation.

Every layer is a 3x3 convolution (stride 1, zero "same" padding) followed by
ReLU, except the last.  Inputs are channels-last batches ``(B, H, W, C)``;
a single ``(H, W, C)`` map is accepted and treated as a batch of one.

The input channels of a layer may be split into groups; each group is
contracted separately and the partial results are summed in group order.
Widening a network with zero-weight channels therefore adds exact zeros and
leaves its output bit-identical.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import _kernels
from .core import DimensionError, LossHyperParams, append_coordinates
from .loss import LossBreakdown, discriminative_loss, discriminative_loss_grad, semantic_loss

logger = logging.getLogger(__name__)

class StaleCacheError(RuntimeError):
    """A forward cache was used after the network changed."""


class ScheduleExhaustedError(ValueError):
    """The learning-rate schedule has no iterations left."""


class TrainingError(FloatingPointError):
    def __init__(self, iteration: int, value):
        super().__init__(f"non-finite loss {value} at iteration {iteration}")
        self.iteration = iteration


class ModelFormatError(ValueError):
    pass


@dataclass
class ConvLayer:
    weight: np.ndarray          # (out, in, 3, 3)
    bias: np.ndarray            # (out,)
    relu: bool
    groups: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.groups:
            self.groups = (self.weight.shape[1],)
        if sum(self.groups) != self.weight.shape[1]:
            raise DimensionError(f"groups {self.groups} do not sum to {self.weight.shape[1]}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class Network:
    layers: list[ConvLayer]
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise DimensionError(f"layer widths {a.out_channels} -> {b.in_channels}")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order (weight, bias per layer)."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> "Network":
        return Network([ConvLayer(l.weight.copy(), l.bias.copy(), l.relu, l.groups)
                        for l in self.layers])

    def astype(self, dtype) -> "Network":
        return Network([ConvLayer(l.weight.astype(dtype), l.bias.astype(dtype), l.relu,
                                  l.groups) for l in self.layers])

    def touch(self) -> None:
        self.version += 1

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


def init_network(channels: Sequence[int], rng: np.random.Generator,
                 dtype=np.float64) -> Network:
    """Glorot-uniform 3x3 stack ``channels[0] -> ... -> channels[-1]``, zero biases."""
    layers = []
    n = len(channels) - 1
    for i in range(n):
        cin, cout = channels[i], channels[i + 1]
        layers.append(_init_layer(cin, cout, i < n - 1, rng, dtype))
    return Network(layers)


def _init_layer(cin, cout, relu, rng, dtype):
    s = np.sqrt(6.0 / (9 * cin + 9 * cout))
    w = rng.uniform(-s, s, size=(cout, cin, 3, 3)).astype(dtype)
    return ConvLayer(w, np.zeros(cout, dtype=dtype), relu)


def _batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise DimensionError(f"expected (B, H, W, C) input, got shape {x.shape}")
    return x, False


def _im2col(x):
    """``(B, H, W, 9, C)`` patches; tap ``3 * dy + dx`` is the second-to-last axis."""
    return _kernels.im2col3(np.ascontiguousarray(x))


def _flat_weight(weight):
    """``(out, in, 3, 3)`` -> ``(out, 9 * in)`` matching the patch layout."""
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def _conv(layer, x):
    b, h, w, c = x.shape
    cols = _im2col(x)
    out = None
    lo = 0
    for size in layer.groups:
        part = cols[..., lo:lo + size].reshape(-1, 9 * size)
        z = part @ _flat_weight(layer.weight[:, lo:lo + size]).T
        out = z if out is None else out + z
        lo += size
    out += layer.bias
    return out.reshape(b, h, w, -1), cols


def forward(net: Network, x: np.ndarray):
    """Run the stack; returns ``(output, cache)``.

    Output has the input's spatial size and ``net.out_channels`` channels.
    """
    xb, single = _batch(x)
    if xb.shape[-1] != net.in_channels:
        raise DimensionError(f"input has {xb.shape[-1]} channels, network expects "
                             f"{net.in_channels}")
    cols, pre = [], []
    a = xb
    for layer in net.layers:
        z, c = _conv(layer, a)
        cols.append(c)
        pre.append(z)
        a = np.maximum(z, 0) if layer.relu else z
    cache = {"net": id(net), "version": net.version, "cols": cols, "pre": pre,
             "single": single}
    return (a[0] if single else a), cache


def backward(net: Network, cache, grad_out: np.ndarray, input_grad: bool = True):
    """Gradients in ``net.params()`` order and for the network input.

    With ``input_grad=False`` the input gradient is skipped and ``None``
    returned in its place.
    """
    if cache["net"] != id(net) or cache["version"] != net.version:
        raise StaleCacheError("cache does not belong to the current network state")
    g = grad_out[None] if cache["single"] else grad_out
    grads: list[np.ndarray] = []
    n = len(net.layers)
    for i in range(n - 1, -1, -1):
        layer, cols, z = net.layers[i], cache["cols"][i], cache["pre"][i]
        if layer.relu:
            g = g * (z > 0)
        b, h, w, cout = g.shape
        cin = layer.in_channels
        gf = g.reshape(-1, cout)
        dw = (gf.T @ cols.reshape(-1, 9 * cin)).reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
        grads = [np.ascontiguousarray(dw, dtype=layer.weight.dtype),
                 gf.sum(axis=0).astype(layer.bias.dtype)] + grads
        if i == 0 and not input_grad:
            return grads, None
        dcols = (gf @ _flat_weight(layer.weight)).reshape(b, h, w, 9, cin)
        g = _kernels.col2im3(dcols)
    return grads, (g[0] if cache["single"] else g)


def extend_input_channels(net: Network, extra: int) -> Network:
    """Copy of ``net`` whose first layer takes ``extra`` more, zero-weighted inputs."""
    if extra < 1:
        raise ValueError(f"extra must be at least 1, got {extra}")
    out = net.copy()
    first = out.layers[0]
    add = np.zeros((first.out_channels, extra, 3, 3), dtype=first.weight.dtype)
    out.layers[0] = ConvLayer(np.concatenate([first.weight, add], axis=1), first.bias,
                              first.relu, first.groups + (extra,))
    return out


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdadeltaState:
    base_lr: float = 0.003
    rho: float = 0.95
    eps: float = 1e-6
    power: float = 0.9
    max_iter: int = 1000
    sq_grad: list[np.ndarray] = field(default_factory=list)
    sq_update: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")

    def learning_rate(self, iteration: int) -> float:
        """Polynomial decay ``base_lr * (1 - iteration / max_iter) ** power``."""
        return self.base_lr * (1.0 - iteration / self.max_iter) ** self.power


def adadelta_step(state: AdadeltaState, params: list[np.ndarray],
                  grads: list[np.ndarray], iteration: int) -> float:
    """Update ``params`` in place and return the learning rate used.

    The running update average tracks the unscaled step, the learning rate
    only multiplies the applied update.
    """
    if iteration >= state.max_iter:
        raise ScheduleExhaustedError(f"iteration {iteration} >= max_iter {state.max_iter}")
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    if not state.sq_grad:
        state.sq_grad = [np.zeros_like(p) for p in params]
        state.sq_update = [np.zeros_like(p) for p in params]
    lr = state.learning_rate(iteration)
    rho, eps = state.rho, state.eps
    for p, g, eg, ed in zip(params, grads, state.sq_grad, state.sq_update):
        if p.shape != g.shape:
            raise DimensionError(f"param {p.shape} vs grad {g.shape}")
        eg *= rho
        eg += (1 - rho) * g * g
        step = np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
        ed *= rho
        ed += (1 - rho) * step * step
        p -= (lr * step).astype(p.dtype)
    return lr


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    iters: int = 500
    lr: float = 0.003
    rho: float = 0.95
    eps: float = 1e-6
    power: float = 0.9
    batch_size: int = 4
    seed: int = 0
    hidden: tuple[int, ...] = (16, 16)
    embed_dim: int = 12
    num_classes: int = 2
    stage: int = 1
    reinit_layers: int = 1
    dtype: str = "float32"
    loss: LossHyperParams = field(default_factory=lambda: LossHyperParams(scale_weights=(1.0,)))


@dataclass
class TrainLog:
    iteration: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    loss: list = field(default_factory=list)  # float (semantic) or LossBreakdown

    def __len__(self):
        return len(self.iteration)

    def final(self) -> float:
        v = self.loss[-1]
        return v.l_inst if isinstance(v, LossBreakdown) else v


def branch_inputs(images: np.ndarray, coords: bool) -> np.ndarray:
    """Stack of network inputs, RGB optionally followed by coordinate channels."""
    if coords:
        return np.stack([append_coordinates(im) for im in images])
    return np.asarray(images)


def semantic_batch_loss(net: Network, x: np.ndarray, sem: np.ndarray):
    out, cache = forward(net, x)
    loss, g = semantic_loss(out.astype(np.float64).reshape(-1, 1, out.shape[-1]),
                            sem.reshape(-1, 1))
    return loss, g.reshape(out.shape), cache


def instance_batch_loss(net: Network, x: np.ndarray, inst: np.ndarray, p: LossHyperParams):
    """Instance loss averaged over the images of a batch."""
    out, cache = forward(net, x)
    out64 = out.astype(np.float64)
    b = len(out64)
    terms = np.zeros(4)
    grad = np.empty_like(out64)
    for i in range(b):
        br, _ = discriminative_loss(out64[i], inst[i], p)
        terms += (br.l_var, br.l_dist, br.l_reg, br.l_inst)
        grad[i] = discriminative_loss_grad(out64[i], inst[i], p)
    terms /= b
    return LossBreakdown(*map(float, terms)), grad / b, cache


def _first_stage_init(init: Network, cfg: TrainConfig, rng) -> Network:
    """Reuse ``init`` (e.g. semantic weights), re-drawing the last layers."""
    net = init.copy()
    n = len(net.layers)
    k = min(cfg.reinit_layers, n)
    for i in range(n - k, n):
        old = net.layers[i]
        cout = cfg.embed_dim if i == n - 1 else old.out_channels
        net.layers[i] = _init_layer(old.in_channels, cout, old.relu, rng, net.dtype)
        if i + 1 < n and net.layers[i + 1].in_channels != cout:
            raise DimensionError("re-initialized layer changes an inner width")
    if net.in_channels != 3:
        raise DimensionError("stage 1 expects an RGB network")
    return Network(net.layers)


def train(branch: str, dataset, cfg: TrainConfig, init: Network | None = None):
    """Mini-batch Adadelta training of the semantic or instance branch.

    Args:
        branch: ``"semantic"`` or ``"instance"``.
        dataset: sequence of scenes (objects with ``image``, ``sem``, ``inst``).
        cfg: training settings; ``cfg.stage`` selects the instance stage.
        init: for the instance branch, stage 1 optionally starts from these
            (semantic) weights with the last ``cfg.reinit_layers`` re-drawn;
            stage 2 requires the stage-1 network and widens it with the two
            coordinate channels.

    Returns:
        ``(network, log)``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if branch not in ("semantic", "instance"):
        raise ValueError(f"unknown branch {branch!r}")
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    coords = branch == "instance" and cfg.stage == 2
    if branch == "semantic":
        net = init.astype(dtype) if init is not None else init_network(
            (3, *cfg.hidden, cfg.num_classes), rng, dtype)
    elif cfg.stage == 1:
        net = (_first_stage_init(init.astype(dtype), cfg, rng) if init is not None
               else init_network((3, *cfg.hidden, cfg.embed_dim), rng, dtype))
    elif cfg.stage == 2:
        if init is None:
            raise ValueError("stage 2 needs the stage-1 network")
        net = init.astype(dtype)
        if net.in_channels == 3:
            net = extend_input_channels(net, 2)
    else:
        raise ValueError(f"unknown stage {cfg.stage}")

    images = branch_inputs(np.stack([s.image for s in dataset]), coords).astype(dtype)
    sems = np.stack([s.sem for s in dataset])
    insts = np.stack([s.inst for s in dataset])
    state = AdadeltaState(cfg.lr, cfg.rho, cfg.eps, cfg.power, cfg.iters)
    log = TrainLog()
    n = len(dataset)
    bs = min(cfg.batch_size, n)
    perm = rng.permutation(n)
    pos = 0
    for it in range(cfg.iters):
        if pos + bs > n:
            perm = rng.permutation(n)
            pos = 0
        idx = np.sort(perm[pos:pos + bs])
        pos += bs
        if branch == "semantic":
            value, g, cache = semantic_batch_loss(net, images[idx], sems[idx])
            scalar = value
        else:
            value, g, cache = instance_batch_loss(net, images[idx], insts[idx], cfg.loss)
            scalar = value.l_inst
        if not np.isfinite(scalar):
            raise TrainingError(it, scalar)
        grads, _ = backward(net, cache, g.astype(dtype), input_grad=False)
        lr = adadelta_step(state, net.params(), grads, it)
        net.touch()
        log.iteration.append(it)
        log.lr.append(lr)
        log.loss.append(value)
        if it % 100 == 0:
            logger.debug("%s it %d lr %.5g loss %.6g", branch, it, lr, scalar)
    return net, log


def evaluate_instance_loss(net: Network, scenes, p: LossHyperParams) -> LossBreakdown:
    """Instance loss of ``net`` on ``scenes`` (coordinates appended if the net takes them)."""
    coords = net.in_channels == 5
    x = branch_inputs(np.stack([s.image for s in scenes]), coords).astype(net.dtype)
    return instance_batch_loss(net, x, np.stack([s.inst for s in scenes]), p)[0]


def predict(net: Network, image: np.ndarray, chunk: int = 8) -> np.ndarray:
    """Forward pass for one ``(H, W, 3)`` image or a batch, coordinates added as needed."""
    x = np.asarray(image)
    single = x.ndim == 3
    xb = x[None] if single else x
    xb = branch_inputs(xb, net.in_channels == xb.shape[-1] + 2).astype(net.dtype)
    out = np.concatenate([forward(net, xb[i:i + chunk])[0] for i in range(0, len(xb), chunk)])
    return out[0] if single else out


# -- model file --------------------------------------------------------------

MAGIC = b"PNET"
FORMAT_VERSION = 1


def write_model(net: Network, f: BinaryIO) -> None:
    """Serialize to the little-endian model format.

    Layout: ``PNET``, u16 version, u16 layer count; per layer u16 out, u16 in,
    u8 relu, u8 group count, u16 per group; then every layer's weight
    ``(out, in, 3, 3)`` and bias as float32, in layer order.
    """
    f.write(MAGIC)
    f.write(struct.pack("<HH", FORMAT_VERSION, len(net.layers)))
    for l in net.layers:
        f.write(struct.pack("<HHBB", l.out_channels, l.in_channels, int(l.relu),
                            len(l.groups)))
        f.write(struct.pack(f"<{len(l.groups)}H", *l.groups))
    for p in net.params():
        f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def read_model(f: BinaryIO) -> Network:
    def take(n):
        b = f.read(n)
        if len(b) != n:
            raise ModelFormatError("truncated model file")
        return b

    if take(4) != MAGIC:
        raise ModelFormatError("bad magic, not a model file")
    version, n_layers = struct.unpack("<HH", take(4))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    shapes = []
    for _ in range(n_layers):
        cout, cin, relu, ng = struct.unpack("<HHBB", take(6))
        groups = struct.unpack(f"<{ng}H", take(2 * ng))
        shapes.append((cout, cin, bool(relu), tuple(groups)))
    layers = []
    for cout, cin, relu, groups in shapes:
        w = np.frombuffer(take(4 * cout * cin * 9), dtype="<f4").reshape(cout, cin, 3, 3)
        b = np.frombuffer(take(4 * cout), dtype="<f4")
        layers.append(ConvLayer(w.astype(np.float32), b.astype(np.float32), relu, groups))
    if f.read(1):
        raise ModelFormatError("trailing bytes after model parameters")
    return Network(layers)


def save_model(net: Network, path) -> None:
    with open(path, "wb") as f:
        write_model(net, f)


def load_model(path) -> Network:
    with open(path, "rb") as f:
        try:
            return read_model(f)
        except ModelFormatError as e:
            raise ModelFormatError(f"{path}: {e}") from None
