"""Small numpy networks with hand-written backward passes.

Everything works on batches: inputs are ``(B, D)`` (a single ``(D,)`` vector is
promoted) and recurrent sequences are ``(T, B, D)``.  Parameters live in plain
``dict[str, ndarray]`` so the optimizer and the checkpoint code can treat every
model the same way.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1

HEADS = ("softmax_logits", "scalar", "linear", "features")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    # keep log-probs finite even for very peaked logits
    return np.maximum(p, 1e-300)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _dact(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(z.dtype)


@dataclass
class Tape:
    x: np.ndarray
    zs: list
    acts: list
    out: np.ndarray
    squeeze: bool


class Mlp:
    """Feed-forward network ``layer_dims[0] -> ... -> layer_dims[-1]``.

    ``head`` decides what happens after the last affine layer: ``softmax_logits``
    (probabilities), ``scalar`` (a single value, last dim dropped), ``linear``
    (raw outputs) or ``features`` (hidden activation applied, for trunks).
    """

    def __init__(self, layer_dims, head="softmax_logits", activation="tanh",
                 rng: np.random.Generator | None = None, params=None, out_scale=None):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        if activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = [int(d) for d in layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if head == "scalar" and self.layer_dims[-1] != 1:
            raise ValueError("scalar head needs output dimension 1")
        self.head = head
        self.activation = activation
        self.n_layers = len(self.layer_dims) - 1
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            self._check_shapes()
        else:
            self.params = self._init(rng or np.random.default_rng(0), out_scale)

    def _init(self, rng, out_scale):
        params = {}
        for k, (din, dout) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            gain = 1.0
            if k == self.n_layers - 1 and self.head != "features":
                gain = out_scale if out_scale is not None else (0.01 if self.head == "softmax_logits" else 1.0)
            params[f"W{k}"] = rng.normal(0.0, gain / np.sqrt(din), size=(din, dout))
            params[f"b{k}"] = np.zeros(dout)
        return params

    def _check_shapes(self):
        for k, (din, dout) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            if self.params[f"W{k}"].shape != (din, dout) or self.params[f"b{k}"].shape != (dout,):
                raise ValueError(f"layer {k} parameters do not match dims {din}->{dout}")

    def shapes(self) -> dict:
        return {k: v.shape for k, v in self.params.items()}

    def copy(self) -> "Mlp":
        return Mlp(self.layer_dims, self.head, self.activation, params=self.params)

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"input has {x.shape[-1]} features, expected {self.layer_dims[0]}")
        zs, acts = [], []
        a = x
        for k in range(self.n_layers):
            z = a @ self.params[f"W{k}"] + self.params[f"b{k}"]
            zs.append(z)
            if k < self.n_layers - 1 or self.head == "features":
                a = _act(self.activation, z)
            else:
                a = z
            acts.append(a)
        if self.head == "softmax_logits":
            out = softmax(a)
        elif self.head == "scalar":
            out = a[:, 0]
        else:
            out = a
        tape = Tape(x, zs, acts, out, squeeze)
        return (out[0] if squeeze else out), tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape: Tape, upstream, wrt_logits: bool = False):
        """Return ``(grads, dx)`` for an upstream gradient on the output.

        For the softmax head ``upstream`` is d/d(probabilities) unless
        ``wrt_logits`` is set, in which case it is d/d(logits) directly.
        """
        g = np.asarray(upstream, dtype=np.float64)
        if tape.squeeze:
            g = g[None, ...] if self.head != "scalar" else np.atleast_1d(g)
        if self.head == "scalar":
            g = g.reshape(-1, 1)
        elif self.head == "softmax_logits" and not wrt_logits:
            p = tape.out
            g = p * (g - (g * p).sum(axis=-1, keepdims=True))
        expected = tape.zs[-1].shape
        if g.shape != expected:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {expected}")
        grads = {}
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1 or self.head == "features":
                g = g * _dact(self.activation, tape.zs[k], tape.acts[k])
            a_prev = tape.x if k == 0 else tape.acts[k - 1]
            grads[f"W{k}"] = a_prev.T @ g
            grads[f"b{k}"] = g.sum(axis=0)
            g = g @ self.params[f"W{k}"].T
        dx = g[0] if tape.squeeze else g
        return grads, dx

    def meta(self) -> dict:
        return {"kind": "mlp", "layer_dims": self.layer_dims, "head": self.head,
                "activation": self.activation}


# ---------------------------------------------------------------------------
# gated recurrent cell


@dataclass
class SeqTape:
    xs: np.ndarray
    hs: np.ndarray  # (T+1, B, H) including h0
    cs: np.ndarray
    gates: np.ndarray  # (T, B, 4H) post-nonlinearity i, f, g, o
    tanh_c: np.ndarray


class LSTMCell:
    """Standard LSTM cell (gate order input, forget, cell, output)."""

    def __init__(self, input_dim, hidden_dim, rng: np.random.Generator | None = None, params=None):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        H = self.hidden_dim
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            if (self.params["Wx"].shape != (self.input_dim, 4 * H)
                    or self.params["Wh"].shape != (H, 4 * H) or self.params["b"].shape != (4 * H,)):
                raise ValueError("LSTM parameter shapes do not match dimensions")
        else:
            rng = rng or np.random.default_rng(0)
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
            self.params = {
                "Wx": rng.normal(0.0, 1.0 / np.sqrt(self.input_dim), size=(self.input_dim, 4 * H)),
                "Wh": rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, 4 * H)),
                "b": b,
            }

    def zero_state(self, batch: int):
        return np.zeros((batch, self.hidden_dim)), np.zeros((batch, self.hidden_dim))

    def _gates(self, x, h):
        H = self.hidden_dim
        z = x @ self.params["Wx"] + h @ self.params["Wh"] + self.params["b"]
        out = np.empty_like(z)
        out[:, :2 * H] = 1.0 / (1.0 + np.exp(-z[:, :2 * H]))
        out[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        out[:, 3 * H:] = 1.0 / (1.0 + np.exp(-z[:, 3 * H:]))
        return out

    def step(self, x, state):
        h, c = state
        H = self.hidden_dim
        g = self._gates(x, h)
        c_new = g[:, H:2 * H] * c + g[:, :H] * g[:, 2 * H:3 * H]
        h_new = g[:, 3 * H:] * np.tanh(c_new)
        return h_new, c_new

    def forward_seq(self, xs, h0, c0):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[-1] != self.input_dim:
            raise ValueError(f"input has {xs.shape[-1]} features, expected {self.input_dim}")
        T, B, _ = xs.shape
        H = self.hidden_dim
        hs = np.empty((T + 1, B, H))
        cs = np.empty((T + 1, B, H))
        gates = np.empty((T, B, 4 * H))
        tanh_c = np.empty((T, B, H))
        hs[0], cs[0] = h0, c0
        for t in range(T):
            g = self._gates(xs[t], hs[t])
            gates[t] = g
            cs[t + 1] = g[:, H:2 * H] * cs[t] + g[:, :H] * g[:, 2 * H:3 * H]
            tanh_c[t] = np.tanh(cs[t + 1])
            hs[t + 1] = g[:, 3 * H:] * tanh_c[t]
        return hs[1:], SeqTape(xs, hs, cs, gates, tanh_c)

    def backward_seq(self, tape: SeqTape, dhs, dh_last=None, dc_last=None):
        """Backpropagate through the stored sequence.

        Returns ``(grads, dxs, (dh0, dc0))``.
        """
        T, B, _ = tape.xs.shape
        H = self.hidden_dim
        if dhs.shape != (T, B, H):
            raise ValueError(f"dhs shape {dhs.shape} != {(T, B, H)}")
        Wx, Wh = self.params["Wx"], self.params["Wh"]
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dxs = np.empty_like(tape.xs)
        dh = np.zeros((B, H)) if dh_last is None else dh_last.copy()
        dc = np.zeros((B, H)) if dc_last is None else dc_last.copy()
        for t in reversed(range(T)):
            g = tape.gates[t]
            i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            dh = dh + dhs[t]
            do = dh * tape.tanh_c[t]
            dc = dc + dh * o * (1.0 - tape.tanh_c[t] ** 2)
            di = dc * gg
            dg = dc * i
            df = dc * tape.cs[t]
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - gg * gg),
                do * o * (1.0 - o),
            ], axis=1)
            grads["Wx"] += tape.xs[t].T @ dz
            grads["Wh"] += tape.hs[t].T @ dz
            grads["b"] += dz.sum(axis=0)
            dxs[t] = dz @ Wx.T
            dh = dz @ Wh.T
            dc = dc * f
        return grads, dxs, (dh, dc)

    def meta(self) -> dict:
        return {"kind": "lstm", "input_dim": self.input_dim, "hidden_dim": self.hidden_dim}


class RecurrentNet:
    """LSTM followed by an output head; ``recurrent_step`` is the one-step API."""

    def __init__(self, input_dim, hidden_dim, n_out, head="softmax_logits", rng=None,
                 cell: LSTMCell | None = None, out: Mlp | None = None):
        rng = rng or np.random.default_rng(0)
        self.cell = cell or LSTMCell(input_dim, hidden_dim, rng)
        self.out = out or Mlp([hidden_dim, n_out], head=head, rng=rng)

    @property
    def params(self) -> dict:
        p = {f"cell.{k}": v for k, v in self.cell.params.items()}
        p.update({f"out.{k}": v for k, v in self.out.params.items()})
        return p

    def set_params(self, flat: dict):
        for k, v in flat.items():
            owner, name = k.split(".", 1)
            getattr(self, owner).params[name] = v

    def forward_seq(self, xs, h0=None, c0=None):
        T, B, _ = np.shape(xs)
        if h0 is None:
            h0, c0 = self.cell.zero_state(B)
        hs, stape = self.cell.forward_seq(xs, h0, c0)
        y, otape = self.out.forward(hs.reshape(T * B, -1))
        y = y.reshape((T, B) + y.shape[1:])
        return y, (stape, otape)

    def backward_seq(self, tapes, dy, wrt_logits=False):
        stape, otape = tapes
        T, B = dy.shape[:2]
        go, dh = self.out.backward(otape, dy.reshape((T * B,) + dy.shape[2:]), wrt_logits=wrt_logits)
        gc, dxs, h0grads = self.cell.backward_seq(stape, dh.reshape(T, B, -1))
        grads = {f"cell.{k}": v for k, v in gc.items()}
        grads.update({f"out.{k}": v for k, v in go.items()})
        return grads, dxs, h0grads


def recurrent_step(net: RecurrentNet, x, hidden=None):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != net.cell.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, expected {net.cell.input_dim}")
    if hidden is None:
        hidden = net.cell.zero_state(x.shape[0])
    h, c = hidden
    h, c = np.atleast_2d(h), np.atleast_2d(c)
    if h.shape != (x.shape[0], net.cell.hidden_dim):
        raise ValueError("hidden state shape mismatch")
    h, c = net.cell.step(x, (h, c))
    y = net.out(h)
    if squeeze:
        return y[0], (h[0], c[0])
    return y, (h, c)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class Adam:
    """Adaptive-moment optimizer over a ``dict`` of parameters.

    An all-zero gradient is a no-op: moments are not decayed and the step count
    does not advance, so a batch that carries no signal leaves parameters
    bit-identical.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = None
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def step(self, params: dict, grads: dict) -> dict:
        for k, g in grads.items():
            if k not in params or params[k].shape != g.shape:
                raise ValueError(f"gradient {k} does not match parameters")
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.isfinite(g).sum())
                raise FloatingPointError(f"non-finite gradient in {k!r} ({bad} entries)")
        if all(not np.any(g) for g in grads.values()):
            return params
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.max_grad_norm:
                grads = {k: g * (self.max_grad_norm / norm) for k, g in grads.items()}
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        return params


def optim_step(params: dict, grads: dict, opt: Adam) -> dict:
    return opt.step(params, grads)


# ---------------------------------------------------------------------------
# checkpoint container: one .npz with a format header and a JSON meta blob


def tensors_to_bytes(tensors: dict, meta: dict | None = None) -> bytes:
    payload = {}
    for name, arr in tensors.items():
        if name.startswith("__"):
            raise ValueError(f"reserved tensor name {name!r}")
        payload[name] = np.ascontiguousarray(arr, dtype=np.float64)
    payload["__format_version__"] = np.array([FORMAT_VERSION], dtype=np.int64)
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    payload["__meta__"] = np.frombuffer(blob, dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    return buf.getvalue()


def tensors_from_bytes(data: bytes) -> tuple[dict, dict]:
    with np.load(io.BytesIO(data), allow_pickle=False) as z:
        version = int(z["__format_version__"][0])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        meta = json.loads(bytes(z["__meta__"]).decode())
        tensors = {k: z[k].copy() for k in z.files if not k.startswith("__")}
    return tensors, meta


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(tensors_to_bytes(tensors, meta))


def load_tensors(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        return tensors_from_bytes(fh.read())


def prefixed(prefix: str, params: dict) -> dict:
    return {f"{prefix}/{k}": v for k, v in params.items()}


def unprefixed(prefix: str, tensors: dict) -> dict:
    head = prefix + "/"
    return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}
