"""Pre-LN transformer decoder with tanh-gated cross-attention, in numpy.

Every block runs causal self-attention, then cross-attention from the token
stream onto audio hidden states (scaled by ``tanh(gate)``), then a GELU
feed-forward layer. Parameters live in a flat ``name -> array`` dict; names
containing ``.xattn.`` form the trainable group, everything else is the
frozen base language model.

Forward caches what :func:`backward` needs; gradients are exact reverse-mode
derivatives of :func:`loss` (float64 throughout).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable

import numpy as np

LN_EPS = 1e-5
NEG_INF = -np.inf
_GELU_C = math.sqrt(2.0 / math.pi)

Params = dict[str, np.ndarray]


class DecoderError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    n_layers: int = 2
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    max_len: int = 128
    enc_dim: int = 64
    gate_init: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise DecoderError("d_model must be divisible by n_heads")
        for name in ("vocab_size", "n_layers", "d_model", "n_heads", "d_ff", "max_len", "enc_dim"):
            if getattr(self, name) < 1:
                raise DecoderError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def is_xattn(name: str) -> bool:
    return ".xattn." in name


def freeze_mask(params: Params) -> dict[str, bool]:
    """True marks a trainable tensor (cross-attention weights and gates)."""
    return {k: is_xattn(k) for k in params}


def param_shapes(cfg: DecoderConfig) -> dict[str, tuple[int, ...]]:
    D, F, V, E = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.enc_dim
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, D), "pos_emb": (cfg.max_len, D)}
    for l in range(cfg.n_layers):
        p = f"blocks.{l}."
        shapes.update({
            p + "ln1.g": (D,), p + "ln1.b": (D,),
            p + "attn.wq": (D, D), p + "attn.wk": (D, D), p + "attn.wv": (D, D), p + "attn.wo": (D, D),
            p + "xattn.wq": (D, D), p + "xattn.wk": (E, D), p + "xattn.wv": (E, D), p + "xattn.wo": (D, D),
            p + "xattn.gate": (1,),
            p + "ln2.g": (D,), p + "ln2.b": (D,),
            p + "ffn.w1": (D, F), p + "ffn.b1": (F,), p + "ffn.w2": (F, D), p + "ffn.b2": (D,),
        })
    shapes.update({"ln_f.g": (D,), "ln_f.b": (D,), "w_out": (D, V)})
    return shapes


def init_params(cfg: DecoderConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("tok_emb", "pos_emb"):
            params[name] = rng.normal(0.0, 0.1, shape)
        elif leaf == "g":
            params[name] = np.ones(shape)
        elif leaf in ("b", "b1", "b2"):
            params[name] = np.zeros(shape)
        elif leaf == "gate":
            params[name] = np.full(shape, float(cfg.gate_init))
        else:
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return params


def count_params(params: Params, predicate: Callable[[str], bool] = lambda _: True) -> int:
    return sum(v.size for k, v in params.items() if predicate(k))


def trainable_fraction(params: Params, encoder_params: int = 0) -> float:
    """Cross-attention scalars over all scalars (decoder plus ``encoder_params``)."""
    total = count_params(params) + encoder_params
    return count_params(params, is_xattn) / total


# ---------------------------------------------------------------- primitives

def _layer_norm(x, g=None, b=None):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    y = xhat if g is None else xhat * g + b
    return y, (xhat, inv)


def _layer_norm_back(dy, cache, g=None):
    xhat, inv = cache
    dxhat = dy if g is None else dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    if g is None:
        return dx, None, None
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axes), dy.sum(axes)


def _gelu(x):
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax(s, axis=-1):
    m = s.max(axis, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis, keepdims=True)


def _split_heads(x, h):
    B, T, D = x.shape
    return x.reshape(B, T, h, D // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def _attention(xq, xkv, wq, wk, wv, wo, mask, h):
    """Multi-head attention; ``mask`` broadcasts to (B, h, Tq, Tk), True = visible."""
    q = _split_heads(xq @ wq, h)
    k = _split_heads(xkv @ wk, h)
    v = _split_heads(xkv @ wv, h)
    scale = 1.0 / math.sqrt(q.shape[-1])
    s = np.where(mask, (q @ k.transpose(0, 1, 3, 2)) * scale, NEG_INF)
    p = softmax(s)
    o = _merge_heads(p @ v)
    return o @ wo, (xq, xkv, q, k, v, p, o, scale)


def _attention_back(dout, cache, wq, wk, wv, wo, h, need_w):
    xq, xkv, q, k, v, p, o, scale = cache
    grads = {}
    if need_w:
        grads["wo"] = _flat(o).T @ _flat(dout)
    do = _split_heads(dout @ wo.T, h)
    dp = do @ v.transpose(0, 1, 3, 2)
    dv = p.transpose(0, 1, 3, 2) @ do
    ds = p * (dp - (dp * p).sum(-1, keepdims=True)) * scale
    dq = _merge_heads(ds @ k)
    dk = _merge_heads(ds.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)
    if need_w:
        grads["wq"] = _flat(xq).T @ _flat(dq)
        grads["wk"] = _flat(xkv).T @ _flat(dk)
        grads["wv"] = _flat(xkv).T @ _flat(dv)
    dxq = dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    return dxq, dxkv, grads


def _flat(x):
    return x.reshape(-1, x.shape[-1])


# ------------------------------------------------------------------- network

def _check_inputs(tokens, hidden, hidden_mask, cfg):
    if tokens.ndim != 2:
        raise DecoderError("tokens must have shape (batch, length)")
    if tokens.shape[1] > cfg.max_len:
        raise DecoderError(f"sequence length {tokens.shape[1]} exceeds max_len {cfg.max_len}")
    if tokens.shape[1] == 0:
        raise DecoderError("empty token sequence")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise DecoderError("token id out of range")
    if hidden is not None:
        if hidden.ndim != 3 or hidden.shape[0] != tokens.shape[0]:
            raise DecoderError("hidden states must have shape (batch, rows, enc_dim)")
        if hidden.shape[2] != cfg.enc_dim:
            raise DecoderError(f"hidden dim {hidden.shape[2]} does not match enc_dim {cfg.enc_dim}")
        if hidden_mask is not None and not hidden_mask.any(axis=1).all():
            raise DecoderError("every example needs at least one hidden row")


def forward(params: Params, cfg: DecoderConfig, tokens, hidden=None, hidden_mask=None,
            use_xattn: bool = True, keep_cache: bool = False):
    """Logits of shape (batch, length, vocab).

    ``tokens`` is (B, T) ints; ``hidden`` is (B, N, enc_dim) with optional
    boolean ``hidden_mask`` (B, N) marking real rows. With ``use_xattn=False``
    the cross-attention sublayers are skipped entirely (the base LM).
    """
    tokens = np.asarray(tokens)
    if use_xattn and hidden is None:
        raise DecoderError("hidden states required when cross-attention is enabled")
    _check_inputs(tokens, hidden if use_xattn else None, hidden_mask, cfg)
    B, T = tokens.shape
    h = cfg.n_heads
    causal = np.tril(np.ones((T, T), dtype=bool))[None, None]
    if use_xattn:
        hidden = np.asarray(hidden, dtype=np.float64)
        if hidden_mask is None:
            hidden_mask = np.ones(hidden.shape[:2], dtype=bool)
        kmask = np.asarray(hidden_mask, dtype=bool)[:, None, None, :]
    x = params["tok_emb"][tokens] + params["pos_emb"][:T]
    blocks = []
    for l in range(cfg.n_layers):
        p = f"blocks.{l}."
        c: dict = {}
        a, c["ln1"] = _layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        sa, c["attn"] = _attention(a, a, params[p + "attn.wq"], params[p + "attn.wk"],
                                   params[p + "attn.wv"], params[p + "attn.wo"], causal, h)
        x = x + sa
        if use_xattn:
            qn, c["lnx"] = _layer_norm(x)
            xa, c["xattn"] = _attention(qn, hidden, params[p + "xattn.wq"], params[p + "xattn.wk"],
                                        params[p + "xattn.wv"], params[p + "xattn.wo"], kmask, h)
            gate = np.tanh(params[p + "xattn.gate"][0])
            c["xa"], c["tanh_gate"] = xa, gate
            x = x + gate * xa
        f, c["ln2"] = _layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        pre = f @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        act, t = _gelu(pre)
        x = x + act @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        c["ffn"] = (f, pre, act, t)
        blocks.append(c)
    xf, lnf = _layer_norm(x, params["ln_f.g"], params["ln_f.b"])
    logits = xf @ params["w_out"]
    if not keep_cache:
        return logits
    cache = {"tokens": tokens, "blocks": blocks, "ln_f": lnf, "xf": xf,
             "use_xattn": use_xattn, "hidden": hidden}
    return logits, cache


def per_example_loss(logits, targets, loss_mask) -> np.ndarray:
    """Mean natural-log cross-entropy over masked positions, one value per example."""
    targets = np.asarray(targets)
    m = np.asarray(loss_mask, dtype=np.float64)
    counts = m.sum(axis=1)
    if (counts == 0).any():
        raise DecoderError("loss mask selects no positions for some example")
    z = logits - logits.max(-1, keepdims=True)
    logz = np.log(np.exp(z).sum(-1))
    nll = logz - np.take_along_axis(z, targets[..., None], -1)[..., 0]
    return (nll * m).sum(axis=1) / counts


def loss(logits, targets, loss_mask) -> float:
    """Batch loss: mean over examples of each example's mean token loss."""
    return float(per_example_loss(logits, targets, loss_mask).mean())


def loss_grad(logits, targets, loss_mask):
    m = np.asarray(loss_mask, dtype=np.float64)
    B = m.shape[0]
    w = m / (m.sum(axis=1, keepdims=True) * B)
    d = softmax(logits)
    np.add.at(d, (np.arange(B)[:, None], np.arange(m.shape[1])[None, :], np.asarray(targets)), -1.0)
    return d * w[..., None]


def backward(params: Params, cfg: DecoderConfig, cache, dlogits,
             wanted: Callable[[str], bool] = is_xattn) -> dict[str, np.ndarray]:
    """Reverse-mode gradients for every parameter name accepted by ``wanted``."""
    grads: dict[str, np.ndarray] = {}
    h = cfg.n_heads
    want_base = any(wanted(k) for k in params if not is_xattn(k))
    if wanted("w_out"):
        grads["w_out"] = _flat(cache["xf"]).T @ _flat(dlogits)
    dxf = dlogits @ params["w_out"].T
    dx, dg, db = _layer_norm_back(dxf, cache["ln_f"], params["ln_f.g"])
    if wanted("ln_f.g"):
        grads["ln_f.g"], grads["ln_f.b"] = dg, db
    lowest_xattn = 0
    if not want_base:
        # Below the lowest trainable block nothing is needed.
        lowest_xattn = min((int(k.split(".")[1]) for k in params if is_xattn(k) and wanted(k)),
                           default=cfg.n_layers)
    for l in reversed(range(cfg.n_layers)):
        if l < lowest_xattn:
            break
        p = f"blocks.{l}."
        c = cache["blocks"][l]
        f, pre, act, t = c["ffn"]
        if wanted(p + "ffn.w2"):
            grads[p + "ffn.w2"] = _flat(act).T @ _flat(dx)
            grads[p + "ffn.b2"] = _flat(dx).sum(0)
        dpre = _gelu_back(dx @ params[p + "ffn.w2"].T, pre, t)
        if wanted(p + "ffn.w1"):
            grads[p + "ffn.w1"] = _flat(f).T @ _flat(dpre)
            grads[p + "ffn.b1"] = _flat(dpre).sum(0)
        df = dpre @ params[p + "ffn.w1"].T
        dln, dg, db = _layer_norm_back(df, c["ln2"], params[p + "ln2.g"])
        if wanted(p + "ln2.g"):
            grads[p + "ln2.g"], grads[p + "ln2.b"] = dg, db
        dx = dx + dln
        if cache["use_xattn"]:
            gate = c["tanh_gate"]
            if wanted(p + "xattn.gate"):
                grads[p + "xattn.gate"] = np.array([(dx * c["xa"]).sum() * (1.0 - gate * gate)])
            dqn, _, g = _attention_back(
                gate * dx, c["xattn"], params[p + "xattn.wq"], params[p + "xattn.wk"],
                params[p + "xattn.wv"], params[p + "xattn.wo"], h, wanted(p + "xattn.wq"))
            for key, val in g.items():
                grads[p + "xattn." + key] = val
            dx = dx + _layer_norm_back(dqn, c["lnx"])[0]
        dq, dkv, g = _attention_back(
            dx, c["attn"], params[p + "attn.wq"], params[p + "attn.wk"],
            params[p + "attn.wv"], params[p + "attn.wo"], h, wanted(p + "attn.wq"))
        for key, val in g.items():
            grads[p + "attn." + key] = val
        dln, dg, db = _layer_norm_back(dq + dkv, c["ln1"], params[p + "ln1.g"])
        if wanted(p + "ln1.g"):
            grads[p + "ln1.g"], grads[p + "ln1.b"] = dg, db
        dx = dx + dln
    if want_base:
        tokens = cache["tokens"]
        if wanted("pos_emb"):
            gp = np.zeros_like(params["pos_emb"])
            gp[:tokens.shape[1]] = dx.sum(0)
            grads["pos_emb"] = gp
        if wanted("tok_emb"):
            gt = np.zeros_like(params["tok_emb"])
            np.add.at(gt, tokens, dx)
            grads["tok_emb"] = gt
    return {k: v for k, v in grads.items() if wanted(k)}


def loss_and_grads(params: Params, cfg: DecoderConfig, tokens, targets, loss_mask,
                   hidden=None, hidden_mask=None, use_xattn: bool = True,
                   wanted: Callable[[str], bool] = is_xattn):
    logits, cache = forward(params, cfg, tokens, hidden, hidden_mask, use_xattn, keep_cache=True)
    value = loss(logits, targets, loss_mask)
    grads = backward(params, cfg, cache, loss_grad(logits, targets, loss_mask), wanted)
    return value, grads


def grad(params: Params, cfg: DecoderConfig, tokens, targets, loss_mask,
         hidden, hidden_mask=None) -> dict[str, np.ndarray]:
    """Gradients for every parameter under the freeze mask: base entries are zero."""
    _, g = loss_and_grads(params, cfg, tokens, targets, loss_mask, hidden, hidden_mask)
    return {k: g[k] if is_xattn(k) else np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def names(params: Params, trainable: bool) -> Iterable[str]:
    return [k for k in params if is_xattn(k) == trainable]
