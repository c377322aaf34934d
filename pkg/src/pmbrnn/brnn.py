"""Two stacked LSTM layers and a sigmoid head with tied (variational) dropout masks.

Gate order in every weight block is [input, forget, cell, output].  Shapes:
``W`` is (4H, D), ``U`` is (4H, H), ``b`` is (4H,).

Forward and backward operate on a batch: sequences are (B, T, D) and every
mask in a :class:`MaskSet` is (B, n) with one row per sequence.  A single
sequence (T, D) with 1-D masks is accepted and treated as B = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ndmath import Rng, masks_from_uniform, sigmoid

LOSS_CLAMP = 1e-12


@dataclass(frozen=True)
class Dims:
    input_dim: int = 24
    hidden1: int = 100
    hidden2: int = 50

    def __post_init__(self):
        if min(self.input_dim, self.hidden1, self.hidden2) < 1:
            raise ValueError(f"invalid network dims {self}")


@dataclass(frozen=True)
class DropoutSpec:
    p_layer2_input: float = 0.10
    p_recurrent: float = 0.10
    p_dense_input: float = 0.20

    def __post_init__(self):
        for name in ("p_layer2_input", "p_recurrent", "p_dense_input"):
            r = getattr(self, name)
            if not 0.0 <= r < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {r}")

    @classmethod
    def off(cls) -> "DropoutSpec":
        return cls(0.0, 0.0, 0.0)

    @property
    def active(self) -> bool:
        return any((self.p_layer2_input, self.p_recurrent, self.p_dense_input))


@dataclass
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def check(self):
        h = self.hidden
        if self.W.shape[0] != 4 * h or self.U.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ValueError(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")


@dataclass
class NetworkParams:
    layer1: LstmParams
    layer2: LstmParams
    dense_w: np.ndarray  # (1, hidden2)
    dense_b: np.ndarray  # (1,)

    NAMES = ("layer1.W", "layer1.U", "layer1.b", "layer2.W", "layer2.U", "layer2.b", "dense.w", "dense.b")

    @property
    def dims(self) -> Dims:
        return Dims(self.layer1.input_dim, self.layer1.hidden, self.layer2.hidden)

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed order of ``NAMES``."""
        return [
            self.layer1.W, self.layer1.U, self.layer1.b,
            self.layer2.W, self.layer2.U, self.layer2.b,
            self.dense_w, self.dense_b,
        ]

    @classmethod
    def from_arrays(cls, arrs) -> "NetworkParams":
        a = list(arrs)
        p = cls(LstmParams(a[0], a[1], a[2]), LstmParams(a[3], a[4], a[5]), a[6], a[7])
        p.check()
        return p

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_arrays([x.copy() for x in self.arrays()])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams.from_arrays([np.zeros_like(x) for x in self.arrays()])

    def check(self):
        self.layer1.check()
        self.layer2.check()
        if self.layer2.input_dim != self.layer1.hidden:
            raise ValueError("layer2 input width must equal layer1 hidden size")
        if self.dense_w.shape != (1, self.layer2.hidden) or self.dense_b.shape != (1,):
            raise ValueError(f"inconsistent dense shapes w{self.dense_w.shape} b{self.dense_b.shape}")
        for name, a in zip(self.NAMES, self.arrays()):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in {name}")

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return all(
            x.shape == y.shape and np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays())
        )


def _glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_range(-bound, bound, (fan_out, fan_in))


def _init_lstm(rng: Rng, input_dim: int, hidden: int) -> LstmParams:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    return LstmParams(
        W=_glorot(rng, 4 * hidden, input_dim),
        U=_glorot(rng, 4 * hidden, hidden),
        b=b,
    )


def init_params(rng: Rng, dims: Dims = Dims()) -> NetworkParams:
    """Glorot-uniform weights, forget-gate bias 1, other biases 0."""
    l1 = _init_lstm(rng, dims.input_dim, dims.hidden1)
    l2 = _init_lstm(rng, dims.hidden1, dims.hidden2)
    return NetworkParams(l1, l2, _glorot(rng, 1, dims.hidden2), np.zeros(1))


@dataclass
class MaskSet:
    layer2_input: np.ndarray
    recurrent1: np.ndarray
    recurrent2: np.ndarray
    dense_input: np.ndarray

    @classmethod
    def ones(cls, dims: Dims, batch: Optional[int] = None) -> "MaskSet":
        def one(n):
            return np.ones(n) if batch is None else np.ones((batch, n))
        return cls(one(dims.hidden1), one(dims.hidden1), one(dims.hidden2), one(dims.hidden2))

    def batched(self) -> "MaskSet":
        return MaskSet(*(np.atleast_2d(m) for m in (self.layer2_input, self.recurrent1, self.recurrent2, self.dense_input)))

    def row(self, i: int) -> "MaskSet":
        b = self.batched()
        return MaskSet(b.layer2_input[i], b.recurrent1[i], b.recurrent2[i], b.dense_input[i])


def sample_masks(rng: Rng, spec: DropoutSpec, dims: Dims = Dims(), n: Optional[int] = None) -> MaskSet:
    """Draw one MaskSet, or ``n`` of them stacked along axis 0.

    Each set consumes, in order, hidden1 + hidden1 + hidden2 + hidden2 uniforms
    (layer-2 input, layer-1 recurrent, layer-2 recurrent, dense input).  A
    stacked draw of ``n`` equals ``n`` sequential single draws.
    """
    widths = (dims.hidden1, dims.hidden1, dims.hidden2, dims.hidden2)
    rates = (spec.p_layer2_input, spec.p_recurrent, spec.p_recurrent, spec.p_dense_input)
    count = 1 if n is None else n
    u = rng.uniform(count * sum(widths)).reshape(count, sum(widths))
    cols = np.cumsum((0,) + widths)
    masks = [masks_from_uniform(u[:, cols[k]:cols[k + 1]], rates[k]) for k in range(4)]
    if n is None:
        masks = [m[0] for m in masks]
    return MaskSet(*masks)


def lstm_cell(x, h_prev, c_prev, params: LstmParams, recurrent_mask):
    """One LSTM step.  Returns (h, c, record) where record holds the gate values."""
    h_tilde = h_prev * recurrent_mask
    z = x @ params.W.T + h_tilde @ params.U.T + params.b
    H = params.hidden
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, {"z": z, "i": i, "f": f, "g": g, "o": o, "tanh_c": tc, "h_tilde": h_tilde}


@dataclass
class LayerCache:
    x: np.ndarray  # (B, T, D) layer input
    h_tilde: np.ndarray  # (B, T, H) masked previous hidden state entering step t
    c_prev: np.ndarray  # (B, T, H)
    act: np.ndarray  # (B, T, 4H) gate activations [i, f, g, o]
    tanh_c: np.ndarray
    h: np.ndarray  # (B, T, H)
    c: np.ndarray
    mask: np.ndarray  # (B, H) recurrent mask

    def gate(self, k: int) -> np.ndarray:
        H = self.h.shape[2]
        return self.act[:, :, k * H:(k + 1) * H]


def _gate_affine(H: int):
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, so one tanh covers all four gates
    scale = np.full(4 * H, 0.5)
    scale[2 * H:3 * H] = 1.0
    shift = np.full(4 * H, 0.5)
    shift[2 * H:3 * H] = 0.0
    return scale, shift


@dataclass
class ForwardCache:
    layer1: LayerCache
    layer2: LayerCache
    masks: MaskSet
    dense_in: np.ndarray  # (B, hidden2) = h2_T * dense mask
    p: np.ndarray  # (B,)
    single: bool = False


def _run_layer(params: LstmParams, x: np.ndarray, mask: np.ndarray) -> LayerCache:
    B, T, _ = x.shape
    H = params.hidden
    shape = (B, T, H)
    cache = LayerCache(
        x=x, h_tilde=np.empty(shape), c_prev=np.empty(shape), act=np.empty((B, T, 4 * H)),
        tanh_c=np.empty(shape), h=np.empty(shape), c=np.empty(shape), mask=mask,
    )
    scale, shift = _gate_affine(H)
    # input projection for all steps at once, pre-scaled for the fused tanh
    xw = (x @ params.W.T + params.b) * scale
    UT = params.U.T * scale
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        ht = h * mask
        a = np.tanh(xw[:, t] + ht @ UT)
        a *= scale
        a += shift
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        cache.c_prev[:, t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.h_tilde[:, t] = ht
        cache.act[:, t] = a
        cache.tanh_c[:, t], cache.h[:, t], cache.c[:, t] = tc, h, c
    return cache


def forward(params: NetworkParams, sequence: np.ndarray, masks: Optional[MaskSet] = None):
    """Probability of failure for each sequence and the cache needed by :func:`backward`.

    ``masks=None`` means all-ones masks (no dropout).  Returns ``(p, cache)``;
    ``p`` is a float for a single (T, D) sequence, else a (B,) array.
    """
    x = np.asarray(sequence, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != params.layer1.input_dim:
        raise ValueError(f"sequence shape {np.shape(sequence)} does not match input width {params.layer1.input_dim}")
    B = x.shape[0]
    dims = params.dims
    m = MaskSet.ones(dims, B) if masks is None else masks.batched()
    if m.layer2_input.shape[0] not in (1, B):
        raise ValueError(f"{m.layer2_input.shape[0]} mask rows for batch of {B}")
    if m.layer2_input.shape[0] != B:
        m = MaskSet(*(np.repeat(a, B, axis=0) for a in (m.layer2_input, m.recurrent1, m.recurrent2, m.dense_input)))
    if (m.layer2_input.shape[1], m.recurrent1.shape[1], m.recurrent2.shape[1], m.dense_input.shape[1]) != (
        dims.hidden1, dims.hidden1, dims.hidden2, dims.hidden2
    ):
        raise ValueError("mask widths do not match network dims")

    c1 = _run_layer(params.layer1, x, m.recurrent1)
    x2 = c1.h * m.layer2_input[:, None, :]
    c2 = _run_layer(params.layer2, x2, m.recurrent2)
    dense_in = c2.h[:, -1] * m.dense_input
    a = dense_in @ params.dense_w[0] + params.dense_b[0]
    p = sigmoid(a)
    cache = ForwardCache(c1, c2, m, dense_in, p, single)
    return (float(p[0]) if single else p), cache


def bce_loss(p, y):
    p = np.clip(np.asarray(p, dtype=np.float64), LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(out) if out.ndim == 0 else out


def _layer_backward(params: LstmParams, cache: LayerCache, dh_out: np.ndarray):
    """BPTT through one layer.

    ``dh_out`` is (B, T, H): gradient of the loss w.r.t. each step's output h_t
    from the layer above.  Returns (dW, dU, db, dx) with dx shaped like the input.
    """
    B, T, H = cache.h.shape
    act = cache.act
    # d(activation)/dz for every gate at every step
    deriv = act * (1.0 - act)
    g_all = act[:, :, 2 * H:3 * H]
    deriv[:, :, 2 * H:3 * H] = 1.0 - g_all * g_all
    dz_all = np.empty((B, T, 4 * H))
    dh_rec = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    U = params.U
    for t in range(T - 1, -1, -1):
        a = act[:, t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = cache.tanh_c[:, t]
        dh = dh_out[:, t] + dh_rec
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :H] = dc * g
        dz[:, H:2 * H] = dc * cache.c_prev[:, t]
        dz[:, 2 * H:3 * H] = dc * i
        dz[:, 3 * H:] = dh * tc
        dz *= deriv[:, t]
        dc_next = dc * f
        dh_rec = (dz @ U) * cache.mask
    flat_dz = dz_all.reshape(B * T, 4 * H)
    dW = flat_dz.T @ cache.x.reshape(B * T, -1)
    dU = flat_dz.T @ cache.h_tilde.reshape(B * T, H)
    db = flat_dz.sum(axis=0)
    dx = dz_all @ params.W
    return dW, dU, db, dx


def backward(params: NetworkParams, cache: ForwardCache, y) -> NetworkParams:
    """Exact gradient of the summed BCE loss over the batch, masks held constant."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    p = cache.p
    if y.shape != p.shape:
        raise ValueError(f"{y.shape[0]} labels for a batch of {p.shape[0]}")
    if cache.layer1.x.shape[2] != params.layer1.input_dim or cache.layer2.h.shape[2] != params.layer2.hidden:
        raise ValueError("cache does not match parameter shapes")
    # d(BCE)/d(logit) = p - y; uses the unclamped p, exact away from the clamp
    da = p - y
    d_dense_w = (da @ cache.dense_in)[None, :]
    d_dense_b = np.array([da.sum()])
    d_dense_in = da[:, None] * params.dense_w[0][None, :]
    B, T, H2 = cache.layer2.h.shape
    dh2 = np.zeros((B, T, H2))
    dh2[:, -1] = d_dense_in * cache.masks.dense_input
    dW2, dU2, db2, dx2 = _layer_backward(params.layer2, cache.layer2, dh2)
    dh1 = dx2 * cache.masks.layer2_input[:, None, :]
    dW1, dU1, db1, _ = _layer_backward(params.layer1, cache.layer1, dh1)
    return NetworkParams(LstmParams(dW1, dU1, db1), LstmParams(dW2, dU2, db2), d_dense_w, d_dense_b)


def loss_of(params: NetworkParams, sequence, y, masks: Optional[MaskSet] = None) -> float:
    p, _ = forward(params, sequence, masks)
    return float(np.sum(bce_loss(p, y)))


def grad_check(params: NetworkParams, sample, epsilon: float = 1e-5, masks: Optional[MaskSet] = None) -> float:
    """Max relative error between backprop and central finite differences.

    ``sample`` is ``(sequence, label)``.  Every scalar parameter is perturbed.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    seq, y = sample
    _, cache = forward(params, seq, masks)
    analytic = backward(params, cache, y)
    work = params.copy()
    worst = 0.0
    for arr, g in zip(work.arrays(), analytic.arrays()):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            lp = loss_of(work, seq, y, masks)
            flat[k] = orig - epsilon
            lm = loss_of(work, seq, y, masks)
            flat[k] = orig
            numeric = (lp - lm) / (2.0 * epsilon)
            err = abs(gflat[k] - numeric) / max(abs(gflat[k]) + abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
