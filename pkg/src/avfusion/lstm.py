"""Peephole LSTM stacks: forward, exact backward through time, checkpoints.

Cell update per layer (peepholes are diagonal, elementwise over the cell):

    i_t = sigmoid(W_xi x_t + W_hi h_{t-1} + w_ci * c_{t-1} + b_i)
    f_t = sigmoid(W_xf x_t + W_hf h_{t-1} + w_cf * c_{t-1} + b_f)
    c_t = f_t * c_{t-1} + i_t * tanh(W_xc x_t + W_hc h_{t-1} + b_c)
    o_t = sigmoid(W_xo x_t + W_ho h_{t-1} + w_co * c_{t-1} + b_o)
    h_t = o_t * tanh(c_t)

All three gates observe the previous cell state, so the backward recursion
carries exactly one (dh, dc) pair per layer. Sequences are processed as
(T, B, dim) batches; a 2-D input is treated as a single sequence. Dropout
(inverted scaling) is applied to layer inputs only, never on the recurrent
path, and only in train mode.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, DimensionError
from .numeric import RngState, sigmoid, xavier_init

CHECKPOINT_MAGIC = b"FSEQ1"


@dataclass
class LstmLayerParams:
    """Weights of one peephole LSTM layer (gate order: i, f, c, o)."""

    input_dim: int
    hidden_dim: int
    w_xi: np.ndarray
    w_xf: np.ndarray
    w_xc: np.ndarray
    w_xo: np.ndarray
    w_hi: np.ndarray
    w_hf: np.ndarray
    w_hc: np.ndarray
    w_ho: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray


@dataclass
class LstmState:
    """Per-layer (h, c) pairs; index l holds layer l's state."""

    h: list[np.ndarray]
    c: list[np.ndarray]


@dataclass
class LstmStack:
    """Layered LSTM with a scalar linear output head."""

    layers: list[LstmLayerParams]
    out_w: np.ndarray
    out_b: np.ndarray  # shape (1,)
    dropout_rate: float = 0.0
    input_dropout: float = 0.0

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(layer.hidden_dim for layer in self.layers)


@dataclass
class _LayerTape:
    x: np.ndarray  # (T, B, D) input the layer consumed (post-dropout)
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray  # candidate tanh output
    c: np.ndarray
    tc: np.ndarray  # tanh(c), cached for backward
    h: np.ndarray
    h0: np.ndarray
    c0: np.ndarray
    drop_mask: np.ndarray | None  # mask that produced x from the raw layer input


@dataclass
class BpttTape:
    """Intermediates of one stack_forward call, consumed by stack_backward."""

    layers: list[_LayerTape]
    hidden_dims: tuple[int, ...]
    input_dim: int
    steps: int
    batch: int
    single: bool  # caller passed an unbatched (T, D) sequence
    final_state: LstmState = field(repr=False, default=None)


def _layer_param_names() -> list[str]:
    return [
        "w_xi", "w_xf", "w_xc", "w_xo",
        "w_hi", "w_hf", "w_hc", "w_ho",
        "w_ci", "w_cf", "w_co",
        "b_i", "b_f", "b_c", "b_o",
    ]


def param_blocks(stack: LstmStack, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """Named references to every trainable array, in checkpoint order."""
    blocks = []
    for idx, layer in enumerate(stack.layers):
        for name in _layer_param_names():
            blocks.append((f"{prefix}layer{idx}.{name}", getattr(layer, name)))
    blocks.append((f"{prefix}out_w", stack.out_w))
    blocks.append((f"{prefix}out_b", stack.out_b))
    return blocks


def init_layer(input_dim: int, hidden_dim: int, rng: RngState) -> LstmLayerParams:
    """Xavier-uniform weight matrices; peepholes and biases start at zero."""
    h, d = hidden_dim, input_dim
    return LstmLayerParams(
        input_dim=d,
        hidden_dim=h,
        w_xi=xavier_init(h, d, rng), w_xf=xavier_init(h, d, rng),
        w_xc=xavier_init(h, d, rng), w_xo=xavier_init(h, d, rng),
        w_hi=xavier_init(h, h, rng), w_hf=xavier_init(h, h, rng),
        w_hc=xavier_init(h, h, rng), w_ho=xavier_init(h, h, rng),
        w_ci=np.zeros(h), w_cf=np.zeros(h), w_co=np.zeros(h),
        b_i=np.zeros(h), b_f=np.zeros(h), b_c=np.zeros(h), b_o=np.zeros(h),
    )


def init_stack(
    input_dim: int,
    hidden_dims: tuple[int, ...] | list[int],
    rng: RngState,
    dropout_rate: float = 0.0,
    input_dropout: float = 0.0,
) -> LstmStack:
    if not hidden_dims:
        raise DimensionError("stack needs at least one layer")
    layers = []
    prev = input_dim
    for h in hidden_dims:
        layers.append(init_layer(prev, int(h), rng))
        prev = int(h)
    out_w = xavier_init(1, prev, rng)[0]
    return LstmStack(
        layers=layers,
        out_w=out_w,
        out_b=np.zeros(1),
        dropout_rate=float(dropout_rate),
        input_dropout=float(input_dropout),
    )


def zeros_like_stack(stack: LstmStack) -> LstmStack:
    """Gradient holder with the same shapes as ``stack``."""
    layers = []
    for lp in stack.layers:
        kwargs = {name: np.zeros_like(getattr(lp, name)) for name in _layer_param_names()}
        layers.append(LstmLayerParams(input_dim=lp.input_dim, hidden_dim=lp.hidden_dim, **kwargs))
    return LstmStack(
        layers=layers,
        out_w=np.zeros_like(stack.out_w),
        out_b=np.zeros_like(stack.out_b),
        dropout_rate=stack.dropout_rate,
        input_dropout=stack.input_dropout,
    )


def zero_state(stack: LstmStack, batch: int = 1) -> LstmState:
    return LstmState(
        h=[np.zeros((batch, h)) for h in stack.hidden_dims],
        c=[np.zeros((batch, h)) for h in stack.hidden_dims],
    )


def lstm_step(
    params: LstmLayerParams, h_prev: np.ndarray, c_prev: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict]:
    """One cell update on a (B, dim) batch; returns (h, c, intermediates)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    if x.shape[1] != params.input_dim:
        raise DimensionError(
            f"input dim {x.shape[1]} does not match layer input_dim {params.input_dim}"
        )
    if h_prev.shape[1] != params.hidden_dim or c_prev.shape[1] != params.hidden_dim:
        raise DimensionError(
            f"state dims {h_prev.shape[1]}/{c_prev.shape[1]} do not match "
            f"hidden_dim {params.hidden_dim}"
        )
    i = sigmoid(x @ params.w_xi.T + h_prev @ params.w_hi.T + c_prev * params.w_ci + params.b_i)
    f = sigmoid(x @ params.w_xf.T + h_prev @ params.w_hf.T + c_prev * params.w_cf + params.b_f)
    g = np.tanh(x @ params.w_xc.T + h_prev @ params.w_hc.T + params.b_c)
    c = f * c_prev + i * g
    o = sigmoid(x @ params.w_xo.T + h_prev @ params.w_ho.T + c_prev * params.w_co + params.b_o)
    tc = np.tanh(c)
    h = o * tc
    return h, c, {"i": i, "f": f, "o": o, "g": g, "c": c, "tc": tc}


def _promote(seq: np.ndarray) -> tuple[np.ndarray, bool]:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 2:
        return seq[:, None, :], True
    if seq.ndim == 3:
        return seq, False
    raise DimensionError(f"sequence must be (T, dim) or (T, B, dim), got shape {seq.shape}")


def stack_forward(
    stack: LstmStack,
    seq: np.ndarray,
    mode: str = "infer",
    rng: RngState | None = None,
    state: LstmState | None = None,
) -> tuple[np.ndarray, np.ndarray, BpttTape]:
    """Run the stack over a sequence from the given (default zero) state.

    Returns (predictions, last-layer hidden sequence, tape). Predictions are
    (T,) for a 2-D input and (T, B) for a batched one.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    xs, single = _promote(seq)
    t_steps, batch, in_dim = xs.shape
    if t_steps == 0:
        raise DimensionError("empty sequence")
    if in_dim != stack.input_dim:
        raise DimensionError(f"input dim {in_dim} does not match stack input_dim {stack.input_dim}")
    if mode == "train" and rng is None and (stack.dropout_rate > 0 or stack.input_dropout > 0):
        raise ValueError("train mode with dropout needs an rng")
    if state is None:
        state = zero_state(stack, batch)

    layer_tapes: list[_LayerTape] = []
    new_h, new_c = [], []
    layer_in = xs
    for l_idx, lp in enumerate(stack.layers):
        rate = stack.input_dropout if l_idx == 0 else stack.dropout_rate
        mask = None
        if mode == "train" and rate > 0.0:
            keep = (rng.random(layer_in.shape) >= rate).astype(np.float64)
            mask = keep / (1.0 - rate)
            layer_in = layer_in * mask

        h_prev = np.asarray(state.h[l_idx], dtype=np.float64)
        c_prev = np.asarray(state.c[l_idx], dtype=np.float64)
        if h_prev.ndim == 1:
            h_prev, c_prev = h_prev[None, :], c_prev[None, :]
        hdim = lp.hidden_dim
        # Input projections for the whole sequence in one matmul per gate.
        flat = layer_in.reshape(t_steps * batch, -1)
        xp_i = (flat @ lp.w_xi.T).reshape(t_steps, batch, hdim) + lp.b_i
        xp_f = (flat @ lp.w_xf.T).reshape(t_steps, batch, hdim) + lp.b_f
        xp_c = (flat @ lp.w_xc.T).reshape(t_steps, batch, hdim) + lp.b_c
        xp_o = (flat @ lp.w_xo.T).reshape(t_steps, batch, hdim) + lp.b_o

        arr = lambda: np.empty((t_steps, batch, hdim))
        i_s, f_s, o_s, g_s, c_s, tc_s, h_s = arr(), arr(), arr(), arr(), arr(), arr(), arr()
        h0, c0 = h_prev, c_prev
        for t in range(t_steps):
            i = sigmoid(xp_i[t] + h_prev @ lp.w_hi.T + c_prev * lp.w_ci)
            f = sigmoid(xp_f[t] + h_prev @ lp.w_hf.T + c_prev * lp.w_cf)
            g = np.tanh(xp_c[t] + h_prev @ lp.w_hc.T)
            o = sigmoid(xp_o[t] + h_prev @ lp.w_ho.T + c_prev * lp.w_co)
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            i_s[t], f_s[t], o_s[t], g_s[t] = i, f, o, g
            c_s[t], tc_s[t], h_s[t] = c, tc, h
            h_prev, c_prev = h, c

        layer_tapes.append(
            _LayerTape(x=layer_in, i=i_s, f=f_s, o=o_s, g=g_s, c=c_s, tc=tc_s, h=h_s,
                       h0=h0, c0=c0, drop_mask=mask)
        )
        new_h.append(h_prev)
        new_c.append(c_prev)
        layer_in = h_s

    hidden_seq = layer_tapes[-1].h
    preds = hidden_seq @ stack.out_w + stack.out_b[0]
    tape = BpttTape(
        layers=layer_tapes,
        hidden_dims=stack.hidden_dims,
        input_dim=stack.input_dim,
        steps=t_steps,
        batch=batch,
        single=single,
        final_state=LstmState(h=new_h, c=new_c),
    )
    if single:
        return preds[:, 0], hidden_seq[:, 0, :], tape
    return preds, hidden_seq, tape


def stack_backward(
    stack: LstmStack,
    tape: BpttTape,
    d_predictions: np.ndarray,
    extra_d_hidden: np.ndarray | None = None,
) -> tuple[LstmStack, np.ndarray]:
    """Exact adjoint of stack_forward.

    ``d_predictions`` holds dL/dprediction per timestep; ``extra_d_hidden``
    optionally adds dL/dh for the last layer (used when the hidden sequence
    feeds a fusion gate). Returns (gradients shaped like the stack, dL/dx
    for the raw input sequence).
    """
    if tape.hidden_dims != stack.hidden_dims or tape.input_dim != stack.input_dim:
        raise DimensionError("tape does not match stack dimensions")
    d_pred = np.asarray(d_predictions, dtype=np.float64)
    if tape.single:
        if d_pred.ndim != 1:
            raise DimensionError("expected 1-D d_predictions for an unbatched tape")
        d_pred = d_pred[:, None]
    if d_pred.shape != (tape.steps, tape.batch):
        raise DimensionError(
            f"d_predictions shape {d_pred.shape} does not match tape ({tape.steps}, {tape.batch})"
        )
    if extra_d_hidden is not None:
        extra_d_hidden = np.asarray(extra_d_hidden, dtype=np.float64)
        if tape.single and extra_d_hidden.ndim == 2:
            extra_d_hidden = extra_d_hidden[:, None, :]
        if extra_d_hidden.shape != (tape.steps, tape.batch, tape.hidden_dims[-1]):
            raise DimensionError(
                f"extra_d_hidden shape {extra_d_hidden.shape} does not match tape"
            )

    grads = zeros_like_stack(stack)
    top = tape.layers[-1]
    grads.out_w[:] = np.einsum("tb,tbh->h", d_pred, top.h)
    grads.out_b[0] = d_pred.sum()

    # Gradient flowing into the top layer's hidden outputs.
    d_layer_out = d_pred[:, :, None] * stack.out_w
    if extra_d_hidden is not None:
        d_layer_out = d_layer_out + extra_d_hidden

    d_inputs = None
    for l_idx in range(len(stack.layers) - 1, -1, -1):
        lp = stack.layers[l_idx]
        lt = tape.layers[l_idx]
        gl = grads.layers[l_idx]
        t_steps, batch, hdim = lt.h.shape

        da_i = np.empty((t_steps, batch, hdim))
        da_f = np.empty((t_steps, batch, hdim))
        da_c = np.empty((t_steps, batch, hdim))
        da_o = np.empty((t_steps, batch, hdim))
        c_prev_seq = np.concatenate([lt.c0[None], lt.c[:-1]], axis=0)
        h_prev_seq = np.concatenate([lt.h0[None], lt.h[:-1]], axis=0)

        dh_next = np.zeros((batch, hdim))
        dc_next = np.zeros((batch, hdim))
        for t in range(t_steps - 1, -1, -1):
            i, f, o, g = lt.i[t], lt.f[t], lt.o[t], lt.g[t]
            tc, c_prev = lt.tc[t], c_prev_seq[t]
            dh = d_layer_out[t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dao = do * o * (1.0 - o)
            dai = dc * g * i * (1.0 - i)
            daf = dc * c_prev * f * (1.0 - f)
            dac = dc * i * (1.0 - g * g)
            da_i[t], da_f[t], da_c[t], da_o[t] = dai, daf, dac, dao
            dh_next = dai @ lp.w_hi + daf @ lp.w_hf + dac @ lp.w_hc + dao @ lp.w_ho
            dc_next = dc * f + dai * lp.w_ci + daf * lp.w_cf + dao * lp.w_co

        tb = t_steps * batch
        x_flat = lt.x.reshape(tb, -1)
        hp_flat = h_prev_seq.reshape(tb, hdim)
        for name, da in (("i", da_i), ("f", da_f), ("c", da_c), ("o", da_o)):
            da_flat = da.reshape(tb, hdim)
            getattr(gl, f"w_x{name}")[:] = da_flat.T @ x_flat
            getattr(gl, f"w_h{name}")[:] = da_flat.T @ hp_flat
            getattr(gl, f"b_{name}")[:] = da_flat.sum(axis=0)
        gl.w_ci[:] = np.einsum("tbh,tbh->h", da_i, c_prev_seq)
        gl.w_cf[:] = np.einsum("tbh,tbh->h", da_f, c_prev_seq)
        gl.w_co[:] = np.einsum("tbh,tbh->h", da_o, c_prev_seq)

        dx = (
            da_i.reshape(tb, hdim) @ lp.w_xi
            + da_f.reshape(tb, hdim) @ lp.w_xf
            + da_c.reshape(tb, hdim) @ lp.w_xc
            + da_o.reshape(tb, hdim) @ lp.w_xo
        ).reshape(t_steps, batch, lp.input_dim)
        if lt.drop_mask is not None:
            dx = dx * lt.drop_mask
        if l_idx == 0:
            d_inputs = dx
        else:
            d_layer_out = dx

    if tape.single:
        d_inputs = d_inputs[:, 0, :]
    return grads, d_inputs


def _write_array(parts: list[bytes], arr: np.ndarray) -> None:
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_stack_bytes(stack: LstmStack) -> bytes:
    parts = [struct.pack("<I", len(stack.layers))]
    for lp in stack.layers:
        parts.append(struct.pack("<II", lp.input_dim, lp.hidden_dim))
    parts.append(struct.pack("<dd", stack.dropout_rate, stack.input_dropout))
    for lp in stack.layers:
        for name in _layer_param_names():
            _write_array(parts, getattr(lp, name))
    _write_array(parts, stack.out_w)
    _write_array(parts, stack.out_b)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = buf
        self.pos = offset

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        size = 8 * count
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return arr.reshape(shape).astype(np.float64)


def load_stack_bytes(reader: _Reader) -> LstmStack:
    (n_layers,) = reader.take("<I")
    if n_layers == 0 or n_layers > 64:
        raise CheckpointError(f"implausible layer count {n_layers}")
    dims = [reader.take("<II") for _ in range(n_layers)]
    dropout_rate, input_dropout = reader.take("<dd")
    layers = []
    for d, h in dims:
        kwargs = {}
        for name in _layer_param_names():
            if name.startswith("w_x"):
                shape = (h, d)
            elif name.startswith("w_h"):
                shape = (h, h)
            else:
                shape = (h,)
            kwargs[name] = reader.array(shape)
        layers.append(LstmLayerParams(input_dim=d, hidden_dim=h, **kwargs))
    out_w = reader.array((layers[-1].hidden_dim,))
    out_b = reader.array((1,))
    return LstmStack(
        layers=layers, out_w=out_w, out_b=out_b,
        dropout_rate=dropout_rate, input_dropout=input_dropout,
    )


def save_stack(stack: LstmStack, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(save_stack_bytes(stack))


def load_stack(path) -> LstmStack:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    reader = _Reader(buf, len(CHECKPOINT_MAGIC))
    stack = load_stack_bytes(reader)
    if reader.pos != len(buf):
        raise CheckpointError(f"trailing bytes in {path}")
    return stack
