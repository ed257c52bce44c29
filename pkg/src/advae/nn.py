"""MLP building blocks, the Adam optimizer, and the checkpoint file format."""
import contextlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import AdvaeError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "softplus")


class LinearLayer:
    def __init__(self, weight, bias):
        weight = weight if isinstance(weight, ad.Tensor) else ad.Tensor(weight, requires_grad=True)
        bias = bias if isinstance(bias, ad.Tensor) else ad.Tensor(bias, requires_grad=True)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError("inconsistent layer parameters", weight.shape, bias.shape)
        weight.requires_grad = True
        bias.requires_grad = True
        self.weight = weight
        self.bias = bias

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class Mlp:
    """Chain of affine layers with ``activation`` between them."""

    def __init__(self, layers, activation="relu", output_activation=None):
        if not layers:
            raise ShapeError("an Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ShapeError("adjacent layer widths do not chain",
                                 prev.weight.shape, nxt.weight.shape)
        for act in (activation, output_activation):
            if act is not None and act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.layers = list(layers)
        self.activation = activation
        self.output_activation = output_activation

    @property
    def dims(self):
        return [self.layers[0].in_features] + [layer.out_features for layer in self.layers]

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}layers.{i}.weight", layer.weight
            yield f"{prefix}layers.{i}.bias", layer.bias

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def __call__(self, x):
        return forward(self, x)


def init_mlp(dims, activation="relu", seed=0, output_activation=None, rng=None):
    """Weights ~ N(0, 1/fan_in), zero biases; deterministic given ``seed``."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) != d or d <= 0 for d in dims):
        raise ShapeError(f"invalid layer widths {dims}")
    rng = np.random.default_rng(seed) if rng is None else rng
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append(LinearLayer(w, np.zeros(fan_out)))
    return Mlp(layers, activation, output_activation)


def _activate(name, h):
    return h if name is None else ad.elementwise(name, h)


def forward(m, x):
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != m.layers[0].in_features:
        raise ShapeError("input width does not match first layer",
                         x.shape, m.layers[0].weight.shape)
    h = x
    last = len(m.layers) - 1
    for i, layer in enumerate(m.layers):
        h = layer(h)
        h = _activate(m.activation if i < last else m.output_activation, h)
    return h


@contextlib.contextmanager
def frozen(params):
    """Stop gradients from reaching ``params`` inside the block."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def zero_grad(params):
    for p in params:
        p.grad = None


def grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


class Adam:
    """Bias-corrected Adam over a list of named parameters.

    Updates are all-or-nothing: a missing or non-finite gradient raises before
    any parameter is touched.
    """

    def __init__(self, named_params, lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    @property
    def params(self):
        return [p for _, p in self.named_params]

    def zero_grad(self):
        zero_grad(self.params)

    def step(self):
        adam_step(self, self.named_params, [p.grad for _, p in self.named_params])


def adam_step(state, named_params, grads):
    for (name, p), g in zip(named_params, grads):
        if g is None:
            raise AdvaeError(f"missing gradient for parameter {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", param=name)
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    for (name, p), g, m, v in zip(named_params, grads, state.m, state.v):
        kernels.adam_update(p.data.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                            m.reshape(-1), v.reshape(-1), state.lr, state.beta1, state.beta2,
                            state.eps, bc1, bc2)


# ---------------------------------------------------------------------------
# checkpoint format
#
#   8 bytes  magic b"ADVAECKP"
#   4 bytes  little-endian uint32 format version
#   8 bytes  little-endian uint64 manifest length in bytes
#   manifest UTF-8 JSON: {"step", "meta", "sections": [{"name", ..., "params":
#            [{"name", "shape", "offset"}]}]}
#   payload  little-endian float64 arrays, concatenated in manifest order;
#            "offset" counts float64 elements from the payload start.

MAGIC = b"ADVAECKP"
FORMAT_VERSION = 1


@dataclass
class Section:
    name: str
    info: dict
    arrays: list  # [(param name, ndarray)]


def write_checkpoint(path, sections, step=0, meta=None):
    manifest = {"step": int(step), "meta": meta or {}, "sections": []}
    payload = []
    offset = 0
    for sec in sections:
        entries = []
        for pname, arr in sec.arrays:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": pname, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
            payload.append(arr.reshape(-1))
        manifest["sections"].append({"name": sec.name, **sec.info, "params": entries})
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in payload:
            fh.write(arr.tobytes())


def read_checkpoint(path):
    """Return ``(manifest, sections)`` where sections map name -> Section."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise AdvaeError(f"{path} is not a checkpoint file")
        version, length = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise AdvaeError(f"unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(length).decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    sections = {}
    for sec in manifest["sections"]:
        arrays = []
        for entry in sec["params"]:
            size = int(np.prod(entry["shape"])) if entry["shape"] else 1
            chunk = payload[entry["offset"]:entry["offset"] + size]
            if chunk.size != size:
                raise AdvaeError(f"truncated checkpoint: {sec['name']}/{entry['name']}")
            arrays.append((entry["name"], chunk.astype(np.float64).reshape(entry["shape"])))
        info = {k: v for k, v in sec.items() if k not in ("name", "params")}
        sections[sec["name"]] = Section(sec["name"], info, arrays)
    return manifest, sections


def mlp_section(name, m, **extra):
    info = {"dims": m.dims, "activation": m.activation,
            "output_activation": m.output_activation, **extra}
    return Section(name, info, [(n, p.data) for n, p in m.named_parameters()])


def mlp_from_section(sec):
    arrays = dict(sec.arrays)
    dims = sec.info["dims"]
    layers = [LinearLayer(arrays[f"layers.{i}.weight"].copy(), arrays[f"layers.{i}.bias"].copy())
              for i in range(len(dims) - 1)]
    m = Mlp(layers, sec.info["activation"], sec.info.get("output_activation"))
    if m.dims != dims:
        raise ShapeError("checkpoint dims disagree with stored arrays", m.dims, dims)
    return m


def adam_section(name, opt):
    arrays = []
    for (pname, _), m, v in zip(opt.named_params, opt.m, opt.v):
        arrays.append((f"{pname}.m", m))
        arrays.append((f"{pname}.v", v))
    info = {"kind": "adam", "step_count": opt.step_count, "lr": opt.lr,
            "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}
    return Section(name, info, arrays)


def load_adam_section(opt, sec):
    arrays = dict(sec.arrays)
    for i, (pname, _) in enumerate(opt.named_params):
        opt.m[i][...] = arrays[f"{pname}.m"]
        opt.v[i][...] = arrays[f"{pname}.v"]
    opt.step_count = int(sec.info["step_count"])
