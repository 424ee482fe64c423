"""From-scratch GRU encoder-decoder with additive attention.

Float64 numpy throughout, exact analytic gradients via reverse
accumulation, Adam with bias correction. The encoder consumes the embedded
goal-area entity sequence; the decoder starts from the encoder output
concatenated with the masked raw features and the object embedding, and at
every step attends over the encoder states, feeds the previous word's
embedding plus the context vector through a GRU cell, and projects to
vocabulary logits.

Gate convention (pinned, matched by the tests' independent oracle):

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    hc = tanh(Wh x + Uh (r*h) + bh)
    h' = (1 - z) * h + z * hc
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION
from .errors import SchemaError, UsageError
from .features import MaskedInput

PAD, SOS, EOS = 0, 1, 2


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-safe for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


@dataclass
class GruParams:
    """Update/reset/candidate weights: 6 matrices, 3 bias vectors."""

    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_h: np.ndarray
    u_h: np.ndarray
    b_h: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[1]


@dataclass(frozen=True)
class ModelDims:
    n_entities: int
    n_objects: int
    vocab_size: int
    entity_embed: int = 20
    encoder_hidden: int = 20
    n_raw: int = 12
    object_embed: int = 17
    word_embed: int = 16
    attention_dim: int = 20
    attend_to_init: bool = False

    @property
    def decoder_hidden(self) -> int:
        return self.encoder_hidden + self.n_raw + self.object_embed

    @property
    def decoder_input(self) -> int:
        return self.word_embed + self.encoder_hidden


@dataclass
class ModelParams:
    dims: ModelDims
    entity_embed: np.ndarray
    object_embed: np.ndarray
    word_embed: np.ndarray
    encoder: GruParams
    decoder: GruParams
    attn_q: np.ndarray
    attn_k: np.ndarray
    attn_v: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    attn_k0: np.ndarray | None = None
    attn_v0: np.ndarray | None = None


def _gru_names(prefix: str, p: GruParams):
    for gate in ("z", "r", "h"):
        yield f"{prefix}.w_{gate}", getattr(p, f"w_{gate}")
        yield f"{prefix}.u_{gate}", getattr(p, f"u_{gate}")
        yield f"{prefix}.b_{gate}", getattr(p, f"b_{gate}")


def named_params(p: ModelParams) -> list[tuple[str, np.ndarray]]:
    out = [
        ("entity_embed", p.entity_embed),
        ("object_embed", p.object_embed),
        ("word_embed", p.word_embed),
    ]
    out.extend(_gru_names("enc", p.encoder))
    out.extend(_gru_names("dec", p.decoder))
    out.extend([("attn.q", p.attn_q), ("attn.k", p.attn_k), ("attn.v", p.attn_v)])
    if p.attn_k0 is not None:
        out.extend([("attn.k0", p.attn_k0), ("attn.v0", p.attn_v0)])
    out.extend([("out.w", p.out_w), ("out.b", p.out_b)])
    return out


def param_shapes(dims: ModelDims) -> list[tuple[str, tuple[int, ...]]]:
    e, s, a = dims.encoder_hidden, dims.decoder_hidden, dims.attention_dim
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("entity_embed", (dims.n_entities, dims.entity_embed)),
        ("object_embed", (dims.n_objects, dims.object_embed)),
        ("word_embed", (dims.vocab_size, dims.word_embed)),
    ]
    for gate in ("z", "r", "h"):
        shapes += [
            (f"enc.w_{gate}", (e, dims.entity_embed)),
            (f"enc.u_{gate}", (e, e)),
            (f"enc.b_{gate}", (e,)),
        ]
    for gate in ("z", "r", "h"):
        shapes += [
            (f"dec.w_{gate}", (s, dims.decoder_input)),
            (f"dec.u_{gate}", (s, s)),
            (f"dec.b_{gate}", (s,)),
        ]
    shapes += [("attn.q", (a, s)), ("attn.k", (a, e)), ("attn.v", (a,))]
    if dims.attend_to_init:
        shapes += [("attn.k0", (a, s)), ("attn.v0", (e, s))]
    shapes += [("out.w", (dims.vocab_size, s)), ("out.b", (dims.vocab_size,))]
    return shapes


def init_params(dims: ModelDims, seed: int | np.random.SeedSequence, scale: float = 0.08) -> ModelParams:
    """Uniform(-scale, scale) weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(dims):
        if name.endswith(("b_z", "b_r", "b_h", "out.b")):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-scale, scale, size=shape)
    return params_from_tensors(dims, tensors)


def params_from_tensors(dims: ModelDims, tensors: dict[str, np.ndarray]) -> ModelParams:
    def gru(prefix: str) -> GruParams:
        return GruParams(**{
            f"{kind}_{gate}": tensors[f"{prefix}.{kind}_{gate}"]
            for gate in ("z", "r", "h")
            for kind in ("w", "u", "b")
        })

    return ModelParams(
        dims=dims,
        entity_embed=tensors["entity_embed"],
        object_embed=tensors["object_embed"],
        word_embed=tensors["word_embed"],
        encoder=gru("enc"),
        decoder=gru("dec"),
        attn_q=tensors["attn.q"],
        attn_k=tensors["attn.k"],
        attn_v=tensors["attn.v"],
        attn_k0=tensors.get("attn.k0"),
        attn_v0=tensors.get("attn.v0"),
        out_w=tensors["out.w"],
        out_b=tensors["out.b"],
    )


def copy_params(p: ModelParams) -> ModelParams:
    return params_from_tensors(p.dims, {name: a.copy() for name, a in named_params(p)})


def check_finite(p: ModelParams) -> None:
    for name, a in named_params(p):
        if not np.isfinite(a).all():
            raise FloatingPointError(f"non-finite values in parameter {name}")


# ---------------------------------------------------------------------------
# reference (unfused) single-step operations


def gru_cell(x: np.ndarray, h_prev: np.ndarray, p: GruParams) -> np.ndarray:
    if x.shape != (p.input_dim,) or h_prev.shape != (p.hidden_dim,):
        raise ValueError(
            f"gru_cell shape mismatch: x{x.shape}, h{h_prev.shape}, "
            f"expected ({p.input_dim},), ({p.hidden_dim},)"
        )
    z = sigmoid(p.w_z @ x + p.u_z @ h_prev + p.b_z)
    r = sigmoid(p.w_r @ x + p.u_r @ h_prev + p.b_r)
    hc = np.tanh(p.w_h @ x + p.u_h @ (r * h_prev) + p.b_h)
    return (1.0 - z) * h_prev + z * hc


def encode(xs: np.ndarray, p: GruParams) -> tuple[np.ndarray, np.ndarray]:
    """Run the encoder over an embedded sequence (len >= 1); h_0 = 0."""
    if len(xs) < 1:
        raise UsageError("encoder input must have at least one element")
    h = np.zeros(p.hidden_dim)
    states = np.empty((len(xs), p.hidden_dim))
    for i, x in enumerate(xs):
        h = gru_cell(x, h, p)
        states[i] = h
    return states, h


def init_decoder_state(
    h_final: np.ndarray, n_values: np.ndarray, n_mask: np.ndarray, o_embed: np.ndarray
) -> np.ndarray:
    """s_0 = [encoder block ; masked raw block ; object block]."""
    return np.concatenate([h_final, n_values * n_mask, o_embed])


def attend(
    s_prev: np.ndarray, enc_states: np.ndarray, p: ModelParams, s0: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Additive attention: e_j = v . tanh(Wq s_prev + Wk h_j); c = sum_j a_j h_j.

    With the attend_to_init variant an extra key/value derived from s0 joins
    the encoder states.
    """
    q = p.attn_q @ s_prev
    scores = np.tanh(q + enc_states @ p.attn_k.T) @ p.attn_v
    values = enc_states
    if p.attn_k0 is not None:
        if s0 is None:
            raise UsageError("attend_to_init model requires s0")
        extra = np.tanh(q + p.attn_k0 @ s0) @ p.attn_v
        scores = np.append(scores, extra)
        values = np.vstack([enc_states, p.attn_v0 @ s0])
    alpha = softmax(scores)
    return alpha @ values, alpha


def decode_step(
    s_prev: np.ndarray,
    y_prev: int,
    enc_states: np.ndarray,
    p: ModelParams,
    s0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One teacher-forced or generation step; returns (s, vocabulary logits)."""
    if not 0 <= y_prev < p.dims.vocab_size:
        raise UsageError(f"token id {y_prev} outside vocabulary")
    c, _ = attend(s_prev, enc_states, p, s0)
    x_in = np.concatenate([p.word_embed[y_prev], c])
    s = gru_cell(x_in, s_prev, p.decoder)
    return s, p.out_w @ s + p.out_b


# ---------------------------------------------------------------------------
# fused training path
#
# The training loop runs the same math with the three gate projections
# stacked into single matrices ([z; r; h] row blocks), packed once per batch.


@dataclass
class _PackedGru:
    w: np.ndarray     # (3H, D)
    u_zr: np.ndarray  # (2H, H)
    u_h: np.ndarray   # (H, H)
    b: np.ndarray     # (3H,)
    hidden: int


def _pack_gru(p: GruParams) -> _PackedGru:
    return _PackedGru(
        w=np.concatenate([p.w_z, p.w_r, p.w_h]),
        u_zr=np.concatenate([p.u_z, p.u_r]),
        u_h=p.u_h,
        b=np.concatenate([p.b_z, p.b_r, p.b_h]),
        hidden=p.hidden_dim,
    )


@dataclass
class PackedModel:
    """Per-batch fused view of the parameters (read-only during the batch)."""

    p: ModelParams
    enc: _PackedGru
    dec: _PackedGru


def pack(p: ModelParams) -> PackedModel:
    return PackedModel(p=p, enc=_pack_gru(p.encoder), dec=_pack_gru(p.decoder))


def _gru_seq_forward(packed: _PackedGru, xs: np.ndarray, h0: np.ndarray):
    """Forward a whole sequence; returns (H, caches) with per-step gate values."""
    n = len(xs)
    hid = packed.hidden
    wx = xs @ packed.w.T + packed.b  # (n, 3H)
    H = np.empty((n, hid))
    Z = np.empty((n, hid))
    R = np.empty((n, hid))
    HC = np.empty((n, hid))
    h = h0
    for i in range(n):
        zr = 0.5 * (1.0 + np.tanh(0.5 * (wx[i, : 2 * hid] + packed.u_zr @ h)))
        z = zr[:hid]
        r = zr[hid:]
        hc = np.tanh(wx[i, 2 * hid :] + packed.u_h @ (r * h))
        h = (1.0 - z) * h + z * hc
        Z[i], R[i], HC[i], H[i] = z, r, hc, h
    return H, (Z, R, HC)


@dataclass
class ForwardCache:
    inputs: MaskedInput
    targets: np.ndarray
    y_in: np.ndarray
    enc_X: np.ndarray
    enc_H: np.ndarray
    enc_gates: tuple
    s0: np.ndarray
    K: np.ndarray
    dec_S: np.ndarray       # (m, S) decoder states, s_k
    dec_gates: tuple
    dec_X: np.ndarray       # (m, decoder_input)
    alphas: np.ndarray      # (m, n [+1])
    T: np.ndarray           # (m, n, A) pre-score tanh activations
    probs: np.ndarray       # (m, V)
    n_pos: int
    loss: float
    k0_vec: np.ndarray | None = None
    v0_val: np.ndarray | None = None


def forward_loss(
    inputs: MaskedInput,
    targets: np.ndarray,
    p: ModelParams,
    packed: PackedModel | None = None,
) -> tuple[float, ForwardCache]:
    """Teacher-forced mean cross-entropy over non-pad target positions.

    Targets must end with <eos>; the decoder is fed <sos> followed by the
    ground-truth prefix.
    """
    if packed is None:
        packed = pack(p)
    dims = p.dims
    if targets[-1] != EOS:
        raise UsageError("target sequence must end with <eos>")

    enc_X = p.entity_embed[inputs.x_ids]
    enc_H, enc_gates = _gru_seq_forward(packed.enc, enc_X, np.zeros(dims.encoder_hidden))
    h_final = enc_H[-1]
    s0 = np.concatenate([h_final, inputs.n_values * inputs.n_mask, p.object_embed[inputs.o_id]])
    K = enc_H @ p.attn_k.T  # (n, A)
    k0_vec = p.attn_k0 @ s0 if p.attn_k0 is not None else None
    v0_val = p.attn_v0 @ s0 if p.attn_v0 is not None else None

    m = len(targets)
    y_in = np.concatenate([[SOS], targets[:-1]]).astype(np.int64)
    wy = p.word_embed[y_in] @ packed.dec.w[:, : dims.word_embed].T + packed.dec.b  # (m, 3S)
    w_ctx = packed.dec.w[:, dims.word_embed :]
    keys = K if k0_vec is None else np.vstack([K, k0_vec])

    n_keys = len(keys)
    hid = dims.decoder_hidden
    dec_S = np.empty((m, hid))
    Z = np.empty((m, hid))
    R = np.empty((m, hid))
    HC = np.empty((m, hid))
    dec_X = np.empty((m, dims.decoder_input))
    dec_X[:, : dims.word_embed] = p.word_embed[y_in]
    alphas = np.empty((m, n_keys))
    T = np.empty((m, n_keys, dims.attention_dim))

    s = s0
    for k in range(m):
        t_k = np.tanh(p.attn_q @ s + keys)
        alpha = softmax(t_k @ p.attn_v)
        if k0_vec is None:
            c = alpha @ enc_H
        else:
            c = alpha[:-1] @ enc_H + alpha[-1] * v0_val
        dec_X[k, dims.word_embed :] = c

        a = wy[k] + w_ctx @ c
        zr = 0.5 * (1.0 + np.tanh(0.5 * (a[: 2 * hid] + packed.dec.u_zr @ s)))
        z = zr[:hid]
        r = zr[hid:]
        hc = np.tanh(a[2 * hid :] + packed.dec.u_h @ (r * s))
        s_new = (1.0 - z) * s + z * hc

        alphas[k], T[k] = alpha, t_k
        Z[k], R[k], HC[k], dec_S[k] = z, r, hc, s_new
        s = s_new

    logits = dec_S @ p.out_w.T + p.out_b  # (m, V)
    mx = logits.max(axis=1)
    exps = np.exp(logits - mx[:, None])
    se = exps.sum(axis=1)
    probs = exps / se[:, None]
    valid = targets != PAD
    n_pos = int(valid.sum())
    losses = mx + np.log(se) - logits[np.arange(m), targets]
    loss = losses[valid].sum() / max(n_pos, 1)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    cache = ForwardCache(
        inputs=inputs,
        targets=np.asarray(targets, dtype=np.int64),
        y_in=y_in,
        enc_X=enc_X,
        enc_H=enc_H,
        enc_gates=enc_gates,
        s0=s0,
        K=K,
        dec_S=dec_S,
        dec_gates=(Z, R, HC),
        dec_X=dec_X,
        alphas=alphas,
        T=T,
        probs=probs,
        n_pos=max(n_pos, 1),
        loss=float(loss),
        k0_vec=k0_vec,
        v0_val=v0_val,
    )
    return float(loss), cache


def zero_grads(p: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(a) for name, a in named_params(p)}


def backward(
    cache: ForwardCache,
    p: ModelParams,
    packed: PackedModel | None = None,
    grads: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of the cached loss for every parameter.

    Accumulates into `grads` when given (fixed reduction order across a
    batch keeps results bit-reproducible). Also returns the gradient with
    respect to the raw-feature input block; masked slots are exactly 0.
    """
    if packed is None:
        packed = pack(p)
    if grads is None:
        grads = zero_grads(p)
    dims = p.dims
    hid = dims.decoder_hidden
    e = dims.encoder_hidden
    variant = cache.k0_vec is not None
    n_enc = len(cache.enc_H)
    m = len(cache.targets)
    Z, R, HC = cache.dec_gates

    # output layer, batched over steps
    dlogits = cache.probs.copy()
    valid = cache.targets != PAD
    dlogits[np.arange(m), cache.targets] -= 1.0
    dlogits[~valid] = 0.0
    dlogits /= cache.n_pos
    grads["out.w"] += dlogits.T @ cache.dec_S
    grads["out.b"] += dlogits.sum(axis=0)
    ds_out = dlogits @ p.out_w  # (m, S)

    s_prev_rows = np.empty((m, hid))
    s_prev_rows[0] = cache.s0
    if m > 1:
        s_prev_rows[1:] = cache.dec_S[:-1]

    # reverse pass: the recurrent chain runs per step, with gate-local values
    # stashed into arrays so the weight gradients batch into single matmuls
    da_all_rows = np.empty((m, 3 * hid))
    rs_rows = R * s_prev_rows
    dx_rows = np.empty((m, dims.decoder_input))
    dc_rows = np.empty((m, e))
    de_rows = np.empty((m, cache.alphas.shape[1]))
    sum_da_rows = np.empty((m, dims.attention_dim))
    da_enc_sum = np.zeros((n_enc, dims.attention_dim))
    da_ex_sum = np.zeros(dims.attention_dim)
    dv0_sum = np.zeros(e)

    u_zr_t = packed.dec.u_zr.T
    u_h_t = packed.dec.u_h.T
    w_t = packed.dec.w.T
    q_t = p.attn_q.T

    ds_carry = np.zeros(hid)
    for k in range(m - 1, -1, -1):
        s_prev = s_prev_rows[k]
        ds = ds_out[k] + ds_carry
        z, r, hc = Z[k], R[k], HC[k]

        dz = ds * (hc - s_prev)
        dhc = ds * z
        ds_prev = ds * (1.0 - z)
        da_h = dhc * (1.0 - hc * hc)
        drh = u_h_t @ da_h
        ds_prev += drh * r
        da_r = drh * s_prev * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        da_all = da_all_rows[k]
        da_all[:hid] = da_z
        da_all[hid : 2 * hid] = da_r
        da_all[2 * hid :] = da_h
        ds_prev += u_zr_t @ da_all[: 2 * hid]
        dx = w_t @ da_all
        dx_rows[k] = dx
        dc = dx[dims.word_embed :]
        dc_rows[k] = dc

        alpha = cache.alphas[k]
        t_k = cache.T[k]
        if variant:
            dalpha = np.empty(len(alpha))
            dalpha[:-1] = cache.enc_H @ dc
            dalpha[-1] = cache.v0_val @ dc
            dv0_sum += alpha[-1] * dc
        else:
            dalpha = cache.enc_H @ dc
        de = alpha * (dalpha - alpha @ dalpha)
        de_rows[k] = de
        da = (de[:, None] * p.attn_v[None, :]) * (1.0 - t_k * t_k)
        sum_da = da.sum(axis=0)
        sum_da_rows[k] = sum_da
        ds_prev += q_t @ sum_da
        if variant:
            da_enc_sum += da[:-1]
            da_ex_sum += da[-1]
        else:
            da_enc_sum += da
        ds_carry = ds_prev

    # batched parameter gradients for the decoder side
    grads["attn.v"] += np.einsum("kna,kn->a", cache.T, de_rows)
    grads["attn.q"] += sum_da_rows.T @ s_prev_rows
    grads["attn.k"] += da_enc_sum.T @ cache.enc_H
    gH = cache.alphas[:, :n_enc].T @ dc_rows + da_enc_sum @ p.attn_k
    ds0_attn = np.zeros(hid)
    if variant:
        grads["attn.k0"] += np.outer(da_ex_sum, cache.s0)
        grads["attn.v0"] += np.outer(dv0_sum, cache.s0)
        ds0_attn = p.attn_k0.T @ da_ex_sum + p.attn_v0.T @ dv0_sum
    np.add.at(grads["word_embed"], cache.y_in, dx_rows[:, : dims.word_embed])
    grads["dec.w_z"] += da_all_rows[:, :hid].T @ cache.dec_X
    grads["dec.w_r"] += da_all_rows[:, hid : 2 * hid].T @ cache.dec_X
    grads["dec.w_h"] += da_all_rows[:, 2 * hid :].T @ cache.dec_X
    grads["dec.u_z"] += da_all_rows[:, :hid].T @ s_prev_rows
    grads["dec.u_r"] += da_all_rows[:, hid : 2 * hid].T @ s_prev_rows
    grads["dec.u_h"] += da_all_rows[:, 2 * hid :].T @ rs_rows
    db = da_all_rows.sum(axis=0)
    grads["dec.b_z"] += db[:hid]
    grads["dec.b_r"] += db[hid : 2 * hid]
    grads["dec.b_h"] += db[2 * hid :]

    ds0 = ds_carry + ds0_attn
    dn_input = ds0[e : e + dims.n_raw] * cache.inputs.n_mask
    grads["object_embed"][cache.inputs.o_id] += ds0[e + dims.n_raw :]
    gH[-1] += ds0[:e]

    # encoder reverse pass, same pattern
    Ze, Re, HCe = cache.enc_gates
    h_prev_rows = np.empty((n_enc, e))
    h_prev_rows[0] = 0.0
    if n_enc > 1:
        h_prev_rows[1:] = cache.enc_H[:-1]
    enc_da_rows = np.empty((n_enc, 3 * e))
    enc_rs = Re * h_prev_rows
    eu_zr_t = packed.enc.u_zr.T
    eu_h_t = packed.enc.u_h.T
    dh = np.zeros(e)
    for i in range(n_enc - 1, -1, -1):
        h_prev = h_prev_rows[i]
        dh = dh + gH[i]
        z, r, hc = Ze[i], Re[i], HCe[i]
        dz = dh * (hc - h_prev)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)
        da_h = dhc * (1.0 - hc * hc)
        drh = eu_h_t @ da_h
        dh_prev += drh * r
        da_all = enc_da_rows[i]
        da_all[:e] = dz * z * (1.0 - z)
        da_all[e : 2 * e] = drh * h_prev * r * (1.0 - r)
        da_all[2 * e :] = da_h
        dh_prev += eu_zr_t @ da_all[: 2 * e]
        dh = dh_prev

    np.add.at(grads["entity_embed"], cache.inputs.x_ids, enc_da_rows @ packed.enc.w)
    grads["enc.w_z"] += enc_da_rows[:, :e].T @ cache.enc_X
    grads["enc.w_r"] += enc_da_rows[:, e : 2 * e].T @ cache.enc_X
    grads["enc.w_h"] += enc_da_rows[:, 2 * e :].T @ cache.enc_X
    grads["enc.u_z"] += enc_da_rows[:, :e].T @ h_prev_rows
    grads["enc.u_r"] += enc_da_rows[:, e : 2 * e].T @ h_prev_rows
    grads["enc.u_h"] += enc_da_rows[:, 2 * e :].T @ enc_rs
    db = enc_da_rows.sum(axis=0)
    grads["enc.b_z"] += db[:e]
    grads["enc.b_r"] += db[e : 2 * e]
    grads["enc.b_h"] += db[2 * e :]
    return grads, dn_input


def greedy_decode(
    inputs: MaskedInput,
    p: ModelParams,
    vocab_tokens: tuple[str, ...],
    max_len: int = 24,
    packed: PackedModel | None = None,
) -> str:
    """Argmax decoding until <eos> or max_len; returns the detokenized phrase."""
    if packed is None:
        packed = pack(p)
    dims = p.dims
    enc_X = p.entity_embed[inputs.x_ids]
    enc_H, _ = _gru_seq_forward(packed.enc, enc_X, np.zeros(dims.encoder_hidden))
    s0 = np.concatenate(
        [enc_H[-1], inputs.n_values * inputs.n_mask, p.object_embed[inputs.o_id]]
    )
    s = s0
    y = SOS
    words: list[str] = []
    for _ in range(max_len):
        s, logits = decode_step(s, y, enc_H, p, s0)
        y = int(np.argmax(logits))
        if y == EOS:
            break
        words.append(vocab_tokens[y])
    return " ".join(words)


class Adam:
    """Standard Adam with bias correction; updates parameters in place."""

    def __init__(
        self,
        params: ModelParams,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(a) for name, a in named_params(params)}
        self.v = {name: np.zeros_like(a) for name, a in named_params(params)}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, a in named_params(params):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.isfinite(a).all():
                raise FloatingPointError(f"non-finite values in parameter {name}")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path: str | Path,
    p: ModelParams,
    vocab_tokens: tuple[str, ...],
    scaler_mean: np.ndarray,
    scaler_std: np.ndarray,
    extra: dict,
    config_digest: str = "",
) -> None:
    dims = p.dims
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest,
        "vocab": list(vocab_tokens),
        "config": {
            "n_entities": dims.n_entities,
            "n_objects": dims.n_objects,
            "vocab_size": dims.vocab_size,
            "entity_embed": dims.entity_embed,
            "encoder_hidden": dims.encoder_hidden,
            "n_raw": dims.n_raw,
            "object_embed": dims.object_embed,
            "word_embed": dims.word_embed,
            "attention_dim": dims.attention_dim,
            "attend_to_init": dims.attend_to_init,
            **extra,
        },
        "tensors": [
            {"name": name, "shape": list(a.shape), "data": a.ravel().tolist()}
            for name, a in named_params(p)
        ]
        + [
            {"name": "feature_mean", "shape": list(scaler_mean.shape), "data": scaler_mean.tolist()},
            {"name": "feature_std", "shape": list(scaler_std.shape), "data": scaler_std.tolist()},
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))


def load_checkpoint(path: str | Path):
    """Returns (params, vocab_tokens, scaler_mean, scaler_std, header_config)."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema_version {payload.get('schema_version')}")
    cfg = payload["config"]
    dims = ModelDims(
        n_entities=cfg["n_entities"],
        n_objects=cfg["n_objects"],
        vocab_size=cfg["vocab_size"],
        entity_embed=cfg["entity_embed"],
        encoder_hidden=cfg["encoder_hidden"],
        n_raw=cfg["n_raw"],
        object_embed=cfg["object_embed"],
        word_embed=cfg["word_embed"],
        attention_dim=cfg["attention_dim"],
        attend_to_init=cfg["attend_to_init"],
    )
    expected = dict(param_shapes(dims))
    expected["feature_mean"] = (dims.n_raw,)
    expected["feature_std"] = (dims.n_raw,)
    tensors: dict[str, np.ndarray] = {}
    for rec in payload["tensors"]:
        shape = tuple(rec["shape"])
        if rec["name"] not in expected:
            raise SchemaError(f"{path}: unexpected tensor '{rec['name']}'")
        if shape != expected[rec["name"]]:
            raise SchemaError(
                f"{path}: tensor '{rec['name']}' has shape {shape}, expected {expected[rec['name']]}"
            )
        tensors[rec["name"]] = np.asarray(rec["data"], dtype=np.float64).reshape(shape)
    missing = set(expected) - set(tensors)
    if missing:
        raise SchemaError(f"{path}: missing tensor(s) {sorted(missing)}")
    params = params_from_tensors(dims, tensors)
    return params, tuple(payload["vocab"]), tensors["feature_mean"], tensors["feature_std"], cfg
