"""Six sequence architectures mapping a (seq_len, d_in) window to a d_out step.

Weights use the row-vector convention: a layer computes ``x @ W + b`` with
``W`` of shape (fan_in, fan_out). Every architecture predicts from the
representation of the final window step through a linear head.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import HeadsDivisibility, ShapeMismatch

Parameters = dict[str, Tensor]


class ModelKind(str, enum.Enum):
    RNN = "rnn"
    GRU = "gru"
    LSTM = "lstm"
    BILSTM = "bilstm"
    TRANSFORMER = "transformer"
    TCN = "tcn"

    @property
    def label(self) -> str:
        return {"rnn": "RNN", "gru": "GRU", "lstm": "LSTM", "bilstm": "BiLSTM",
                "transformer": "Transformer", "tcn": "TCN"}[self.value]


ALL_KINDS = tuple(ModelKind)
CAUSAL_KINDS = (ModelKind.RNN, ModelKind.GRU, ModelKind.LSTM, ModelKind.TCN)


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    d_in: int
    d_out: int
    hidden: int = 32
    layers: int = 1
    dropout: float = 0.0
    heads: int = 2  # transformer only
    kernel_size: int = 2  # tcn only, k + 1 taps
    ff_hidden: Optional[int] = None  # transformer feed-forward width, default 2 * hidden
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if min(self.d_in, self.d_out, self.hidden, self.layers) < 1:
            raise ValueError("d_in, d_out, hidden and layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.kind is ModelKind.TRANSFORMER and (self.heads < 1 or self.hidden % self.heads):
            raise HeadsDivisibility(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def ffn_width(self) -> int:
        return self.ff_hidden or 2 * self.hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


# parameter layout -----------------------------------------------------------------

def _recurrent_layout(prefix: str, d_in: int, n: int, gates: str) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for g in gates:
        out.append((f"{prefix}.W_x{g}", (d_in, n)))
    for g in gates:
        out.append((f"{prefix}.W_h{g}", (n, n)))
    for g in gates:
        out.append((f"{prefix}.b_{g}", (n,)))
    return out


def parameter_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list; the order fixes the initialisation stream."""
    n, k = spec.hidden, spec.kind
    layout: list[tuple[str, tuple[int, ...]]] = []
    if k is ModelKind.RNN:
        for l in range(spec.layers):
            d = spec.d_in if l == 0 else n
            layout += [(f"rnn.{l}.W_input", (d, n)), (f"rnn.{l}.W_feedback", (n, n)), (f"rnn.{l}.b", (n,))]
        feat = n
    elif k is ModelKind.GRU:
        for l in range(spec.layers):
            layout += _recurrent_layout(f"gru.{l}", spec.d_in if l == 0 else n, n, "rzh")
        feat = n
    elif k is ModelKind.LSTM:
        for l in range(spec.layers):
            layout += _recurrent_layout(f"lstm.{l}", spec.d_in if l == 0 else n, n, "ifoc")
        feat = n
    elif k is ModelKind.BILSTM:
        for l in range(spec.layers):
            d = spec.d_in if l == 0 else 2 * n
            layout += _recurrent_layout(f"bilstm.{l}.fwd", d, n, "ifoc")
            layout += _recurrent_layout(f"bilstm.{l}.bwd", d, n, "ifoc")
        feat = 2 * n
    elif k is ModelKind.TRANSFORMER:
        f = spec.ffn_width
        layout += [("embed.W", (spec.d_in, n)), ("embed.b", (n,))]
        for l in range(spec.layers):
            p = f"enc.{l}"
            layout += [
                (f"{p}.W_Q", (n, n)), (f"{p}.W_K", (n, n)), (f"{p}.W_V", (n, n)), (f"{p}.W_O", (n, n)),
                (f"{p}.ln1.gain", (n,)), (f"{p}.ln1.bias", (n,)),
                (f"{p}.ffn.W1", (n, f)), (f"{p}.ffn.b1", (f,)),
                (f"{p}.ffn.W2", (f, n)), (f"{p}.ffn.b2", (n,)),
                (f"{p}.ln2.gain", (n,)), (f"{p}.ln2.bias", (n,)),
            ]
        feat = n
    elif k is ModelKind.TCN:
        K = spec.kernel_size
        for l in range(spec.layers):
            d = spec.d_in if l == 0 else n
            p = f"tcn.{l}"
            layout += [(f"{p}.conv1.W", (K, d, n)), (f"{p}.conv1.b", (n,)),
                       (f"{p}.conv2.W", (K, n, n)), (f"{p}.conv2.b", (n,))]
            if d != n:
                layout += [(f"{p}.skip.W", (d, n)), (f"{p}.skip.b", (n,))]
        feat = n
    else:  # pragma: no cover
        raise ValueError(k)
    layout += [("head.W_output", (feat, spec.d_out)), ("head.b_output", (spec.d_out,))]
    return layout


def _fan_in(shape: tuple[int, ...]) -> int:
    return shape[0] if len(shape) == 2 else shape[0] * shape[1]


def init_parameters(spec: ModelSpec) -> Parameters:
    """Uniform ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(spec.rng_seed)
    params: Parameters = {}
    for name, shape in parameter_layout(spec):
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(shape))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = ad.parameter(data)
    return params


def parameter_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(s)) for _, s in parameter_layout(spec))


# building blocks ------------------------------------------------------------------

def _input_projection(params: Parameters, prefix: str, x: Tensor, gates: str) -> list[Tensor]:
    """``x @ W_x* + b_*`` for every gate at once, split back per gate; each (B, T, n)."""
    W = ad.concat([params[f"{prefix}.W_x{g}"] for g in gates], axis=1)
    b = ad.concat([params[f"{prefix}.b_{g}"] for g in gates], axis=0)
    proj = x @ W + b
    n = params[f"{prefix}.b_{gates[0]}"].shape[0]
    return [proj[:, :, i * n:(i + 1) * n] for i in range(len(gates))]


def _zeros_state(batch: int, n: int) -> Tensor:
    return Tensor(np.zeros((batch, n)))


def rnn_layer(params: Parameters, prefix: str, x: Tensor, activation=ad.tanh) -> list[Tensor]:
    W_in, W_fb, b = params[f"{prefix}.W_input"], params[f"{prefix}.W_feedback"], params[f"{prefix}.b"]
    xp = x @ W_in + b
    h = _zeros_state(x.shape[0], b.shape[0])
    hs = []
    for t in range(x.shape[1]):
        h = activation(h @ W_fb + xp[:, t])
        hs.append(h)
    return hs


def gru_layer(params: Parameters, prefix: str, x: Tensor) -> list[Tensor]:
    xr, xz, xh = _input_projection(params, prefix, x, "rzh")
    W_hr, W_hz, W_hh = (params[f"{prefix}.W_h{g}"] for g in "rzh")
    W_rz = ad.concat([W_hr, W_hz], axis=1)
    n = W_hr.shape[0]
    h = _zeros_state(x.shape[0], n)
    hs = []
    for t in range(x.shape[1]):
        rz = h @ W_rz
        r = ad.sigmoid(xr[:, t] + rz[:, :n])
        z = ad.sigmoid(xz[:, t] + rz[:, n:])
        cand = ad.tanh(xh[:, t] + (r * h) @ W_hh)
        h = h + z * (cand - h)  # (1 - z) * h + z * cand
        hs.append(h)
    return hs


def lstm_layer(params: Parameters, prefix: str, x: Tensor, reverse: bool = False,
               return_cells: bool = False):
    xi, xf, xo, xc = _input_projection(params, prefix, x, "ifoc")
    W_h = ad.concat([params[f"{prefix}.W_h{g}"] for g in "ifoc"], axis=1)
    n = W_h.shape[0]
    h = _zeros_state(x.shape[0], n)
    c = _zeros_state(x.shape[0], n)
    steps = range(x.shape[1] - 1, -1, -1) if reverse else range(x.shape[1])
    hs: list[Optional[Tensor]] = [None] * x.shape[1]
    cs: list[Optional[Tensor]] = [None] * x.shape[1]
    for t in steps:
        g = h @ W_h
        i = ad.sigmoid(xi[:, t] + g[:, :n])
        f = ad.sigmoid(xf[:, t] + g[:, n:2 * n])
        o = ad.sigmoid(xo[:, t] + g[:, 2 * n:3 * n])
        cand = ad.tanh(xc[:, t] + g[:, 3 * n:])
        c = f * c + i * cand
        h = o * ad.tanh(c)
        hs[t], cs[t] = h, c
    return (hs, cs) if return_cells else hs


def attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """Scaled dot-product attention over the second-to-last axis."""
    d_k = q.shape[-1]
    scores = (q @ ad.transpose(k, _swap_last(k.ndim))) * (1.0 / math.sqrt(d_k))
    w = ad.softmax(scores, axis=-1)
    out = w @ v
    return (out, w) if return_weights else out


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(params: Parameters, prefix: str, x: Tensor, heads: int,
                         return_weights: bool = False):
    B, T, n = x.shape
    if n % heads:
        raise HeadsDivisibility(f"embedding {n} not divisible by {heads} heads")
    dh = n // heads

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, T, heads, dh)), (0, 2, 1, 3))

    q = split(x @ params[f"{prefix}.W_Q"])
    k = split(x @ params[f"{prefix}.W_K"])
    v = split(x @ params[f"{prefix}.W_V"])
    out, w = attention(q, k, v, return_weights=True)
    merged = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, T, n))
    y = merged @ params[f"{prefix}.W_O"]
    return (y, w) if return_weights else y


def positional_encoding(T: int, n: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(n)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / n)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def tcn_block(params: Parameters, prefix: str, x: Tensor, dilation: int,
              dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
    y = ad.relu(ad.conv1d_causal(x, params[f"{prefix}.conv1.W"], dilation) + params[f"{prefix}.conv1.b"])
    y = ad.dropout(y, dropout, training, rng)
    y = ad.relu(ad.conv1d_causal(y, params[f"{prefix}.conv2.W"], dilation) + params[f"{prefix}.conv2.b"])
    y = ad.dropout(y, dropout, training, rng)
    if f"{prefix}.skip.W" in params:
        skip = x @ params[f"{prefix}.skip.W"] + params[f"{prefix}.skip.b"]
    else:
        skip = x
    return y + skip


def tcn_receptive_field(kernel_size: int, layers: int) -> int:
    """Steps seen by the last output: two convs of dilation ``2**l`` per block."""
    return 1 + 2 * (kernel_size - 1) * sum(2**l for l in range(layers))


# encoders -------------------------------------------------------------------------

def _check_input(spec: ModelSpec, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 2:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[2] != spec.d_in:
        raise ShapeMismatch(f"expected window (batch, seq_len, {spec.d_in}), got {x.shape}")
    return x


def _stacked(layer_fn, spec: ModelSpec, params: Parameters, prefix: str, x: Tensor,
             training: bool, rng) -> list[Tensor]:
    seq = x
    hs: list[Tensor] = []
    for l in range(spec.layers):
        if l:
            seq = ad.dropout(ad.stack(hs, axis=1), spec.dropout, training, rng)
        hs = layer_fn(params, f"{prefix}.{l}", seq)
    return hs


def encode(spec: ModelSpec, params: Parameters, x, training: bool = False, rng=None,
           all_steps: bool = False) -> Tensor:
    """Feature of the last step (B, F), or of every step (B, T, F) when ``all_steps``."""
    x = _check_input(spec, x)
    kind = spec.kind
    if kind in (ModelKind.RNN, ModelKind.GRU, ModelKind.LSTM):
        layer_fn = {ModelKind.RNN: rnn_layer, ModelKind.GRU: gru_layer, ModelKind.LSTM: lstm_layer}[kind]
        hs = _stacked(layer_fn, spec, params, kind.value, x, training, rng)
        return ad.stack(hs, axis=1) if all_steps else hs[-1]
    if kind is ModelKind.BILSTM:
        seq = x
        fwd = bwd = None
        for l in range(spec.layers):
            if l:
                seq = ad.dropout(ad.concat([ad.stack(fwd, axis=1), ad.stack(bwd, axis=1)], axis=-1),
                                 spec.dropout, training, rng)
            fwd = lstm_layer(params, f"bilstm.{l}.fwd", seq)
            bwd = lstm_layer(params, f"bilstm.{l}.bwd", seq, reverse=True)
        if all_steps:
            return ad.concat([ad.stack(fwd, axis=1), ad.stack(bwd, axis=1)], axis=-1)
        return ad.concat([fwd[-1], bwd[0]], axis=-1)
    if kind is ModelKind.TRANSFORMER:
        T = x.shape[1]
        h = x @ params["embed.W"] + params["embed.b"] + positional_encoding(T, spec.hidden)
        for l in range(spec.layers):
            p = f"enc.{l}"
            a = multi_head_attention(params, p, h, spec.heads)
            h = ad.layer_norm(h + ad.dropout(a, spec.dropout, training, rng),
                              params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
            f = ad.relu(h @ params[f"{p}.ffn.W1"] + params[f"{p}.ffn.b1"]) @ params[f"{p}.ffn.W2"] + params[f"{p}.ffn.b2"]
            h = ad.layer_norm(h + ad.dropout(f, spec.dropout, training, rng),
                              params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
        return h if all_steps else h[:, -1]
    if kind is ModelKind.TCN:
        h = x
        for l in range(spec.layers):
            h = tcn_block(params, f"tcn.{l}", h, 2**l, spec.dropout, training, rng)
        return h if all_steps else h[:, -1]
    raise ValueError(kind)  # pragma: no cover


def head(params: Parameters, feature: Tensor) -> Tensor:
    return feature @ params["head.W_output"] + params["head.b_output"]


def forward(spec: ModelSpec, params: Parameters, x, training: bool = False, rng=None) -> Tensor:
    """One-step-ahead prediction (B, d_out) for a batch of windows."""
    return head(params, encode(spec, params, x, training, rng))


def forward_sequence(spec: ModelSpec, params: Parameters, x, training: bool = False, rng=None) -> Tensor:
    """Head applied at every window step, (B, T, d_out)."""
    return head(params, encode(spec, params, x, training, rng, all_steps=True))


def rnn_forward(params, window, spec):
    return forward(spec.with_(kind=ModelKind.RNN), params, window)


def gru_forward(params, window, spec):
    return forward(spec.with_(kind=ModelKind.GRU), params, window)


def lstm_forward(params, window, spec):
    return forward(spec.with_(kind=ModelKind.LSTM), params, window)


def bilstm_forward(params, window, spec):
    return forward(spec.with_(kind=ModelKind.BILSTM), params, window)


def transformer_forward(params, window, spec):
    return forward(spec.with_(kind=ModelKind.TRANSFORMER), params, window)


def tcn_forward(params, window, spec):
    return forward(spec.with_(kind=ModelKind.TCN), params, window)


def predict(spec: ModelSpec, params: Parameters, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode predictions as a plain array."""
    outs = [forward(spec, params, inputs[i:i + batch_size]).data for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, spec.d_out))


def rollout(spec: ModelSpec, params: Parameters, history: np.ndarray, steps: int) -> np.ndarray:
    """Autoregressive multi-step prediction seeded with the last ``seq_len`` rows."""
    window = np.array(history, dtype=np.float64)
    out = np.empty((steps, spec.d_out))
    for s in range(steps):
        nxt = forward(spec, params, window[None]).data[0]
        out[s] = nxt
        window = np.concatenate([window[1:], nxt[None]])
    return out


# checkpoints ------------------------------------------------------------------------

_MAGIC = b"TSNT"


def save_parameters(params: Parameters, path: str | Path) -> None:
    """Flat named-tensor file: name, shape, little-endian float64 data per entry."""
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_parameters(path: str | Path) -> Parameters:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    (count,), pos = struct.unpack_from("<I", buf, 4), 8
    params: Parameters = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        params[name] = ad.parameter(data)
    return params
