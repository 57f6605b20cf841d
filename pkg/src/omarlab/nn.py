"""Small dense MLPs in float64 numpy: forward, exact backprop, Adam, Polyak updates.

Parameters of a network live in one flat float64 vector; per-layer weight and
bias arrays are views into it, so optimizers and target updates work on the
flat vector while the forward/backward passes use the layer views.

Checkpoint layout (all integers little-endian)::

    magic        8 bytes   b"OMARMLP1"
    n_dims       uint32    number of layer widths (input, hidden..., output)
    dims         n_dims x uint64
    hidden_act   uint8     0 = relu
    output_act   uint8     0 = identity, 1 = tanh
    n_params     uint64
    params       n_params x float64 (little-endian), layer by layer, W then b,
                 each W stored row-major with shape (fan_in, fan_out)
    total_len    uint64    byte length of everything before this field
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"OMARMLP1"
_HIDDEN_CODES = {"relu": 0}
_OUTPUT_CODES = {"identity": 0, "tanh": 1}


class ContractError(ValueError):
    """Raised when an operation is called with inputs that violate its contract."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ContractError("input_dim and output_dim must be >= 1")
        if len(self.hidden_dims) < 1 or min(self.hidden_dims) < 1:
            raise ContractError("need at least one hidden layer, all widths >= 1")
        if self.hidden_activation not in _HIDDEN_CODES:
            raise ContractError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_CODES:
            raise ContractError(f"unknown output activation {self.output_activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return [(d[k], d[k + 1]) for k in range(len(d) - 1)]

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


class MlpParams:
    """Weights and biases of one MLP, backed by a single flat vector."""

    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.n_params)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ContractError(f"flat vector has shape {flat.shape}, expected ({spec.n_params},)")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        off = 0
        for fan_in, fan_out in spec.layer_shapes:
            self.weights.append(flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            self.biases.append(flat[off:off + fan_out])
            off += fan_out

    def copy(self) -> MlpParams:
        return MlpParams(self.spec, self.flat.copy())

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"MlpParams({self.spec}, n={self.flat.size})"


# gradients share the parameter layout
Gradients = MlpParams


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Uniform fan-in initialization, limit 1/sqrt(fan_in), for weights and biases."""
    params = MlpParams(spec)
    for w, b in zip(params.weights, params.biases):
        lim = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-lim, lim, size=w.shape)
        b[...] = rng.uniform(-lim, lim, size=b.shape)
    return params


def _check_input(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.input_dim:
        raise ContractError(f"input shape {x.shape} incompatible with input_dim={spec.input_dim}")
    return x


def forward_cache(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass that also returns the layer inputs needed by backprop.

    ``x`` has shape (batch, input_dim). The cache holds the input to every
    layer; the returned output is the post-activation network output.
    """
    acts = [x]
    h = x
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w
        z += b
        if k < n - 1:
            np.maximum(z, 0.0, out=z)
            acts.append(z)
        h = z
    if params.spec.output_activation == "tanh":
        h = np.tanh(h)
    return h, acts


def backward_cache(params: MlpParams, acts: list[np.ndarray], out: np.ndarray,
                   dout: np.ndarray, need_input_grad: bool = True,
                   need_param_grads: bool = True) -> tuple[Gradients | None, np.ndarray | None]:
    """Reverse pass for a cached forward. Gradients are of sum(out * dout)."""
    grads = MlpParams(params.spec) if need_param_grads else None
    dz = dout * (1.0 - out * out) if params.spec.output_activation == "tanh" else dout
    for k in range(len(params.weights) - 1, -1, -1):
        h = acts[k]
        if need_param_grads:
            np.matmul(h.T, dz, out=grads.weights[k])
            grads.biases[k][...] = dz.sum(axis=0)
        if k == 0 and not need_input_grad:
            return grads, None
        dh = dz @ params.weights[k].T
        if k > 0:
            dh *= h > 0.0
        dz = dh
    return grads, dz


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, input_dim) matrix."""
    x = _check_input(params.spec, x)
    out, _ = forward_cache(params, np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


def mlp_backward(params: MlpParams, x, output_grad) -> tuple[Gradients, np.ndarray]:
    """Exact gradients of ``output . output_grad`` w.r.t. parameters and input.

    For batched input the parameter gradient is summed over the batch and the
    input gradient is returned per row.
    """
    x = _check_input(params.spec, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != x.shape[:-1] + (params.spec.output_dim,):
        raise ContractError(f"output_grad shape {g.shape} does not match output of input {x.shape}")
    x2, g2 = np.atleast_2d(x), np.atleast_2d(g)
    out, acts = forward_cache(params, x2)
    grads, dx = backward_cache(params, acts, out, g2)
    return grads, (dx[0] if x.ndim == 1 else dx)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), **kw)

    def copy(self) -> AdamState:
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(params: MlpParams, grads: Gradients | np.ndarray, state: AdamState,
              lr: float) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam step, applied in place; returns (params, state)."""
    g = grads.flat if isinstance(grads, MlpParams) else np.asarray(grads, dtype=np.float64)
    if g.shape != params.flat.shape or state.m.shape != g.shape:
        raise ContractError("gradient / moment shapes do not match parameters")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient, Adam update rejected")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params.flat -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def soft_update(target: MlpParams, online: MlpParams, rho: float) -> MlpParams:
    """Polyak averaging in place: target <- rho * online + (1 - rho) * target."""
    if not 0.0 <= rho <= 1.0:
        raise ContractError(f"rho must lie in [0, 1], got {rho}")
    if target.spec != online.spec:
        raise ContractError("target and online networks have different specs")
    target.flat *= 1.0 - rho
    target.flat += rho * online.flat
    return target


def encode_params(params: MlpParams) -> bytes:
    spec = params.spec
    dims = spec.dims
    body = bytearray(CHECKPOINT_MAGIC)
    body += struct.pack("<I", len(dims))
    body += struct.pack(f"<{len(dims)}Q", *dims)
    body += struct.pack("<BB", _HIDDEN_CODES[spec.hidden_activation], _OUTPUT_CODES[spec.output_activation])
    body += struct.pack("<Q", spec.n_params)
    body += params.flat.astype("<f8").tobytes()
    body += struct.pack("<Q", len(body))
    return bytes(body)


def decode_params(data: bytes) -> MlpParams:
    if len(data) < 8 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not an MLP checkpoint")
    try:
        off = 8
        (n_dims,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{n_dims}Q", data, off)
        off += 8 * n_dims
        hid, outc = struct.unpack_from("<BB", data, off)
        off += 2
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint header: {exc}") from None
    hidden = {v: k for k, v in _HIDDEN_CODES.items()}.get(hid)
    output = {v: k for k, v in _OUTPUT_CODES.items()}.get(outc)
    if hidden is None or output is None or n_dims < 3:
        raise CheckpointError("corrupt checkpoint header")
    spec = MlpSpec(dims[0], tuple(dims[1:-1]), dims[-1], hidden, output)
    if n != spec.n_params:
        raise CheckpointError("parameter count does not match dimensions")
    end = off + 8 * n
    if len(data) != end + 8:
        raise CheckpointError(f"checkpoint length {len(data)} != expected {end + 8} (truncated?)")
    (total,) = struct.unpack_from("<Q", data, end)
    if total != end:
        raise CheckpointError("checkpoint footer length mismatch")
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    return MlpParams(spec, flat)


def save_params(params: MlpParams, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_params(params))


def load_params(path) -> MlpParams:
    with open(path, "rb") as f:
        return decode_params(f.read())
