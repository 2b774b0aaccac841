"""Neural layer forward definitions: feed-forward, highway, GRU, CGRU with
attention, layer normalization, inverted dropout and embedding lookup.

Every function takes the recording :class:`Graph` first and returns graph
tensors, so the same code path serves training (unrolled, masked) and
decoding (sequential, single step).  Parameter containers are plain
dataclasses of named :class:`Parameter` objects; creation helpers live next
to the layer that consumes them, dl4mt style.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import initializers
from .errors import ShapeError
from .rng import RngState
from .tensor import Graph, Parameter, Tensor

LAYER_NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class GruParams:
    """Separate input/hidden matrices per gate, dl4mt convention."""
    W: Parameter
    W_r: Parameter
    W_z: Parameter
    U: Parameter
    U_r: Parameter
    U_z: Parameter
    b: Parameter
    b_r: Parameter
    b_z: Parameter
    # layer-norm gains/biases over the stacked [r|z|candidate] pre-activations,
    # one pair for the input block and one for the hidden block
    ln_x_g: Parameter | None = None
    ln_x_b: Parameter | None = None
    ln_h_g: Parameter | None = None
    ln_h_b: Parameter | None = None

    @property
    def hid(self):
        return self.U.value.shape[0]

    def parameters(self):
        for p in (self.W, self.W_r, self.W_z, self.U, self.U_r, self.U_z,
                  self.b, self.b_r, self.b_z,
                  self.ln_x_g, self.ln_x_b, self.ln_h_g, self.ln_h_b):
            if p is not None:
                yield p


@dataclass
class AttentionParams:
    W_att: Parameter   # decoder state -> attention space
    U_att: Parameter   # encoder states -> attention space
    v_att: Parameter
    b_att: Parameter

    def parameters(self):
        yield from (self.W_att, self.U_att, self.v_att, self.b_att)


@dataclass
class DropoutSpec:
    rate: float
    mode: str = "train"            # train | test
    rng: RngState | None = None

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1), got %r" % self.rate)
        if self.mode not in ("train", "test"):
            raise ValueError("dropout mode must be train or test")


def make_gru_params(prefix: str, in_dim: int, hid_dim: int, rng: RngState,
                    weight_init="xavier", recurrent_init="orthogonal",
                    layer_norm=False, dtype=np.float64) -> GruParams:
    def w(name, shape, method):
        return Parameter(prefix + "." + name, initializers.init_weight(method, shape, rng.child("user", _name_key(prefix + "." + name)), dtype))

    def b(name, shape, value=0.0):
        t = initializers.zeros(shape, dtype) if value == 0.0 else initializers.ones(shape, dtype)
        return Parameter(prefix + "." + name, t)

    rec = recurrent_init
    p = GruParams(
        W=w("W", (in_dim, hid_dim), weight_init),
        W_r=w("W_r", (in_dim, hid_dim), weight_init),
        W_z=w("W_z", (in_dim, hid_dim), weight_init),
        U=w("U", (hid_dim, hid_dim), rec),
        U_r=w("U_r", (hid_dim, hid_dim), rec),
        U_z=w("U_z", (hid_dim, hid_dim), rec),
        b=b("b", (hid_dim,)),
        b_r=b("b_r", (hid_dim,)),
        b_z=b("b_z", (hid_dim,)),
    )
    if layer_norm:
        p.ln_x_g = b("ln_x.g", (3 * hid_dim,), value=1.0)
        p.ln_x_b = b("ln_x.b", (3 * hid_dim,))
        p.ln_h_g = b("ln_h.g", (3 * hid_dim,), value=1.0)
        p.ln_h_b = b("ln_h.b", (3 * hid_dim,))
    return p


def make_attention_params(prefix: str, dec_dim: int, ctx_dim: int, att_dim: int,
                          rng: RngState, weight_init="xavier", dtype=np.float64) -> AttentionParams:
    def w(name, shape):
        return Parameter(prefix + "." + name, initializers.init_weight(weight_init, shape, rng.child("user", _name_key(prefix + "." + name)), dtype))

    return AttentionParams(
        W_att=w("W", (dec_dim, att_dim)),
        U_att=w("U", (ctx_dim, att_dim)),
        v_att=Parameter(prefix + ".v", initializers.init_weight(weight_init, (att_dim, 1), rng.child("user", _name_key(prefix + ".v")), dtype)),
        b_att=Parameter(prefix + ".b", initializers.zeros((att_dim,), dtype)),
    )


def _name_key(name: str) -> int:
    # stable 63-bit stream id per parameter name
    h = 1469598103934665603
    for ch in name.encode():
        h = ((h ^ ch) * 1099511628211) & 0x7FFFFFFFFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# layers


def ff(g: Graph, x, W, b, activation="linear"):
    """y = act(x W + b), activation in {linear, tanh}."""
    y = g.bias_add(g.matmul(x, W), b)
    if activation == "tanh":
        return g.tanh(y)
    if activation == "linear":
        return y
    raise ValueError("unknown activation %r" % activation)


def highway(g: Graph, x, W_h, b_h, W_t, b_t):
    """t = sigmoid(x W_t + b_t); y = t * tanh(x W_h + b_h) + (1 - t) * x."""
    for name, W in (("W_h", W_h), ("W_t", W_t)):
        shape = _value(W).shape
        if shape[0] != shape[1]:
            raise ShapeError("highway", shape, detail="%s must be square" % name)
    t = g.sigmoid(g.bias_add(g.matmul(x, W_t), b_t))
    h = g.tanh(g.bias_add(g.matmul(x, W_h), b_h))
    one = g.constant(np.ones((), dtype=_value(x).dtype))
    return g.add(g.mul(t, h), g.mul(g.sub(one, t), x))


def _value(x):
    return x.value.data if isinstance(x, Parameter) else x.data


def _input_block(g, x_t, p: GruParams):
    """Stacked [r|z|candidate] input pre-activations, layer-normed if enabled."""
    xp = g.concat(g.matmul(x_t, p.W_r), g.matmul(x_t, p.W_z), g.matmul(x_t, p.W))
    if p.ln_x_g is not None:
        xp = layer_norm(g, xp, p.ln_x_g, p.ln_x_b)
    return xp


def _gru_core(g, xp, h_prev, p: GruParams):
    """One GRU transition given the prepared input block.

    r = sigm(x W_r + h U_r + b_r); z = sigm(x W_z + h U_z + b_z);
    cand = tanh(x W + r * (h U) + b); h = z * h_prev + (1 - z) * cand.
    """
    hid = p.hid
    hp = g.concat(g.matmul(h_prev, p.U_r), g.matmul(h_prev, p.U_z), g.matmul(h_prev, p.U))
    if p.ln_h_g is not None:
        hp = layer_norm(g, hp, p.ln_h_g, p.ln_h_b)
    xr, xz, xc = (g.slice_axis(xp, -1, i * hid, (i + 1) * hid) for i in range(3))
    hr, hz, hc = (g.slice_axis(hp, -1, i * hid, (i + 1) * hid) for i in range(3))
    r = g.sigmoid(g.bias_add(g.add(xr, hr), p.b_r))
    z = g.sigmoid(g.bias_add(g.add(xz, hz), p.b_z))
    cand = g.tanh(g.bias_add(g.add(xc, g.mul(r, hc)), p.b))
    one = g.constant(np.ones((), dtype=_value(h_prev).dtype))
    return g.add(g.mul(z, h_prev), g.mul(g.sub(one, z), cand))


def _apply_step_mask(g, h_new, h_prev, mask_t):
    m = np.asarray(mask_t, dtype=_value(h_prev).dtype)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("gru_step: mask entries must be 0 or 1, got %r" % (np.unique(m),))
    batch, hid = _value(h_prev).shape
    if m.shape != (batch,):
        raise ShapeError("gru_step", m.shape, (batch,), detail="one mask entry per batch row")
    me = np.repeat(m[:, None], hid, axis=1)
    keep = g.mul(h_new, Tensor(me))
    carry = g.mul(h_prev, Tensor(1.0 - me))
    return g.add(keep, carry)


def gru_step(g: Graph, x_t, h_prev, p: GruParams, mask_t=None):
    """Single masked GRU step; masked rows carry h_prev through unchanged."""
    h_new = _gru_core(g, _input_block(g, x_t, p), h_prev, p)
    if mask_t is None:
        return h_new
    return _apply_step_mask(g, h_new, h_prev, mask_t)


def gru_sequence(g: Graph, x_seq, mask, p: GruParams, reverse=False):
    """Run a GRU over [batch, time, in_dim]; returns [batch, time, hid].

    Input projections are computed for the whole sequence at once; the
    per-step transition is the same `_gru_core` used by `gru_step`.
    """
    batch, length, _ = _value(x_seq).shape
    hid = p.hid
    xp_all = _input_block(g, x_seq, p)
    h = g.constant(np.zeros((batch, hid), dtype=_value(x_seq).dtype))
    order = range(length - 1, -1, -1) if reverse else range(length)
    out: list = [None] * length
    for t in order:
        xp_t = g.reshape(g.slice_axis(xp_all, 1, t, t + 1), (batch, 3 * hid))
        h_new = _gru_core(g, xp_t, h, p)
        h = _apply_step_mask(g, h_new, h, mask[:, t])
        out[t] = h
    return stack_time(g, out, batch, length, hid)


def stack_time(g: Graph, steps, batch, length, dim):
    """Assemble per-step [batch, dim] tensors into [batch, time, dim]."""
    return g.reshape(g.concat(*steps), (batch, length, dim))


def attention(g: Graph, dec_state, enc_states, enc_mask, p: AttentionParams):
    """Soft attention over encoder states.

    score_j = v . tanh(W dec_state + U h_j + b); masked positions score -inf
    so their weight is exactly zero; context is the alpha-weighted sum.
    Returns (alpha [batch, src_len], context [batch, ctx_dim]).
    """
    enc = _value(enc_states)
    batch, src_len, ctx_dim = enc.shape
    m = np.asarray(enc_mask, dtype=enc.dtype)
    if m.shape != (batch, src_len):
        raise ShapeError("attention", m.shape, (batch, src_len))
    if np.any(m.sum(axis=1) == 0):
        raise ValueError("attention: a sample has no valid source position")
    ds = g.matmul(dec_state, p.W_att)
    pe = g.matmul(enc_states, p.U_att)
    e = g.tanh(g.bias_add(g.add(g.expand_time(ds, src_len), pe), p.b_att))
    scores = g.reshape(g.matmul(e, p.v_att), (batch, src_len))
    alpha = g.softmax(g.masked_fill(scores, m, -np.inf))
    context = g.reshape(g.matmul(g.reshape(alpha, (batch, 1, src_len)), enc_states),
                        (batch, ctx_dim))
    return alpha, context


@dataclass
class CgruParams:
    """Conditional GRU: feedback GRU, attention, context GRU."""
    gru1: GruParams
    att: AttentionParams
    gru2: GruParams

    def parameters(self):
        yield from self.gru1.parameters()
        yield from self.att.parameters()
        yield from self.gru2.parameters()


def cgru_step(g: Graph, y_emb_prev, s_prev, enc_states, enc_mask, p: CgruParams,
              mask_t=None):
    """One decoder step: GRU over the fed-back embedding, attention from the
    intermediate state, then a second GRU over the attention context."""
    s_tilde = gru_step(g, y_emb_prev, s_prev, p.gru1, mask_t)
    alpha, context = attention(g, s_tilde, enc_states, enc_mask, p.att)
    s_t = gru_step(g, context, s_tilde, p.gru2, mask_t)
    return s_t, context, alpha


def layer_norm(g: Graph, a, gain, bias):
    """gain * (a - mean) / sqrt(var + eps) + bias over the feature dimension."""
    return g.bias_add(g.scale(g.normalize(a, eps=LAYER_NORM_EPS), gain), bias)


def dropout(g: Graph, x, spec: DropoutSpec):
    """Inverted dropout: scales kept units by 1/(1-p) at training time so the
    test-time layer is exactly the identity."""
    if spec.mode == "test" or spec.rate == 0.0:
        return x
    if spec.rng is None:
        raise ValueError("dropout in train mode needs an RngState")
    keep = 1.0 - spec.rate
    mask = spec.rng.bernoulli(keep, _value(x).shape) / keep
    return g.mul(x, Tensor(mask.astype(_value(x).dtype)))


def embed(g: Graph, token_ids, E):
    """Look up embedding rows; ids out of range raise IndexError."""
    return g.rows(E, np.asarray(token_ids))
