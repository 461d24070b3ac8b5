"""Network architectures: MLP, causal decoder-only attention stack, GRU.

All forwards are functional: they take a dict of named leaves (from
ParamSet.as_tensors()) or a ParamSet (inference) plus the input, and
return a Tensor. Architecture hyper-parameters live in small configs so
desk-scale tests and full-size runs share one code path.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .params import ParamSet

log = logging.getLogger(__name__)

_ACTS = {
    "tanh": lambda t: t.tanh(),
    "relu": lambda t: t.relu(),
    "sigmoid": lambda t: t.sigmoid(),
    "linear": lambda t: t,
}


def _leaves(params):
    if isinstance(params, ParamSet):
        return params.as_tensors()
    return params


def _linear_init(rng, n_in, n_out, scale=None):
    if scale is None:
        scale = np.sqrt(2.0 / n_in)
    return rng.normal(0.0, scale, size=(n_in, n_out)).astype(np.float32)


# ---------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------

def init_mlp(sizes, rng, prefix="mlp", out_scale=0.01):
    """Build MLP parameters for layer widths `sizes` (input first)."""
    ps = ParamSet()
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        ps.add("%s.w%d" % (prefix, i),
               _linear_init(rng, sizes[i], sizes[i + 1],
                            scale=out_scale if last else None))
        ps.add("%s.b%d" % (prefix, i), np.zeros(sizes[i + 1], np.float32))
    return ps


def mlp_n_layers(params, prefix="mlp"):
    n = 0
    while "%s.w%d" % (prefix, n) in params:
        n += 1
    return n


def forward_mlp(params, x, prefix="mlp", activation="tanh"):
    """Forward through the MLP; hidden activation on all but the last layer."""
    leaves = _leaves(params)
    act = _ACTS[activation]
    h = x if isinstance(x, Tensor) else Tensor(x)
    n_in = leaves["%s.w0" % prefix].shape[0]
    if h.shape[-1] != n_in:
        raise ValueError("input width %d does not match first layer width %d"
                         % (h.shape[-1], n_in))
    i = 0
    while "%s.w%d" % (prefix, i) in leaves:
        h = h @ leaves["%s.w%d" % (prefix, i)] + leaves["%s.b%d" % (prefix, i)]
        if "%s.w%d" % (prefix, i + 1) in leaves:
            h = act(h)
        i += 1
    return h


# ---------------------------------------------------------------------
# Causal decoder-only attention stack
# ---------------------------------------------------------------------

@dataclass
class TransformerConfig:
    in_width: int
    out_width: int
    n_layers: int = 2
    hidden: int = 64
    intermediate: int = 128
    n_heads: int = 4
    window: int = 32


def init_transformer(cfg, rng, prefix="tf"):
    ps = ParamSet()
    add = ps.add
    h = cfg.hidden
    add(prefix + ".embed.w", _linear_init(rng, cfg.in_width, h))
    add(prefix + ".embed.b", np.zeros(h, np.float32))
    add(prefix + ".pos",
        (0.02 * rng.standard_normal((cfg.window, h))).astype(np.float32))
    for i in range(cfg.n_layers):
        p = "%s.l%d." % (prefix, i)
        for nm in ("wq", "wk", "wv", "wo"):
            add(p + nm, _linear_init(rng, h, h, scale=np.sqrt(1.0 / h)))
            add(p + nm.replace("w", "b"), np.zeros(h, np.float32))
        add(p + "ln1.g", np.ones(h, np.float32))
        add(p + "ln1.b", np.zeros(h, np.float32))
        add(p + "ln2.g", np.ones(h, np.float32))
        add(p + "ln2.b", np.zeros(h, np.float32))
        add(p + "mlp.w0", _linear_init(rng, h, cfg.intermediate))
        add(p + "mlp.b0", np.zeros(cfg.intermediate, np.float32))
        add(p + "mlp.w1",
            _linear_init(rng, cfg.intermediate, h, scale=np.sqrt(1.0 / h)))
        add(p + "mlp.b1", np.zeros(h, np.float32))
    add(prefix + ".lnf.g", np.ones(h, np.float32))
    add(prefix + ".lnf.b", np.zeros(h, np.float32))
    add(prefix + ".head.w", _linear_init(rng, h, cfg.out_width, scale=0.01))
    add(prefix + ".head.b", np.zeros(cfg.out_width, np.float32))
    return ps


def _clip_window(seq, window):
    """Apply the sliding-window truncation policy (keep latest tokens)."""
    T = seq.shape[-2]
    if T > window:
        log.warning("token sequence length %d exceeds window %d; "
                    "truncating to the most recent %d steps", T, window,
                    window)
        seq = seq[..., -window:, :]
    return seq


def forward_causal_attention(params, seq, cfg, prefix="tf"):
    """Per-step outputs of the attention stack.

    `seq` is (T, in_width) or (B, T, in_width). Output at step t depends
    only on steps <= t. Sequences longer than the window are truncated to
    the most recent `cfg.window` steps (reported via logging).
    """
    leaves = _leaves(params)
    x = np.asarray(seq, np.float32)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    x = _clip_window(x, cfg.window)
    B, T, _ = x.shape
    H, nh = cfg.hidden, cfg.n_heads
    dh = H // nh
    g = lambda n: leaves[prefix + "." + n]

    h = Tensor(x) @ g("embed.w") + g("embed.b")
    h = h + g("pos")[:T]
    causal_mask = Tensor(np.triu(np.full((T, T), -1e9, np.float32), k=1))
    for i in range(cfg.n_layers):
        p = "l%d." % i
        hn = h.layer_norm(g(p + "ln1.g"), g(p + "ln1.b"))
        q = (hn @ g(p + "wq") + g(p + "bq")).reshape(B, T, nh, dh).swapaxes(1, 2)
        k = (hn @ g(p + "wk") + g(p + "bk")).reshape(B, T, nh, dh).swapaxes(1, 2)
        v = (hn @ g(p + "wv") + g(p + "bv")).reshape(B, T, nh, dh).swapaxes(1, 2)
        scores = q @ k.swapaxes(-1, -2) * (1.0 / np.sqrt(dh)) + causal_mask
        att = scores.softmax(axis=-1) @ v
        att = att.swapaxes(1, 2).reshape(B, T, H)
        h = h + (att @ g(p + "wo") + g(p + "bo"))
        hn = h.layer_norm(g(p + "ln2.g"), g(p + "ln2.b"))
        ff = (hn @ g(p + "mlp.w0") + g(p + "mlp.b0")).relu()
        h = h + (ff @ g(p + "mlp.w1") + g(p + "mlp.b1"))
    h = h.layer_norm(g("lnf.g"), g("lnf.b"))
    out = h @ g("head.w") + g("head.b")
    return out[0] if squeeze else out


# ---------------------------------------------------------------------
# Gated recurrent baseline
# ---------------------------------------------------------------------

@dataclass
class RecurrentConfig:
    in_width: int
    out_width: int
    hidden: int = 64
    window: int = 32  # truncation policy shared with the attention stack


def init_recurrent(cfg, rng, prefix="rnn"):
    ps = ParamSet()
    h, w = cfg.hidden, cfg.in_width
    for gate in ("z", "r", "h"):
        ps.add("%s.w%s" % (prefix, gate), _linear_init(rng, w, h))
        ps.add("%s.u%s" % (prefix, gate),
               _linear_init(rng, h, h, scale=np.sqrt(1.0 / h)))
        ps.add("%s.b%s" % (prefix, gate), np.zeros(h, np.float32))
    ps.add(prefix + ".head.w", _linear_init(rng, h, cfg.out_width, scale=0.01))
    ps.add(prefix + ".head.b", np.zeros(cfg.out_width, np.float32))
    return ps


def forward_recurrent(params, seq, cfg, prefix="rnn", h0=None):
    """Per-step outputs of the GRU baseline over (T, W) or (B, T, W)."""
    from .autodiff import stack

    leaves = _leaves(params)
    x = np.asarray(seq, np.float32)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    x = _clip_window(x, cfg.window)
    B, T, _ = x.shape
    g = lambda n: leaves[prefix + "." + n]
    if g("uz").shape[0] != cfg.hidden:
        raise ValueError("hidden width mismatch")
    h = Tensor(np.zeros((B, cfg.hidden), np.float32)) if h0 is None else h0
    outs = []
    for t in range(T):
        xt = Tensor(x[:, t])
        z = (xt @ g("wz") + h @ g("uz") + g("bz")).sigmoid()
        r = (xt @ g("wr") + h @ g("ur") + g("br")).sigmoid()
        cand = (xt @ g("wh") + (r * h) @ g("uh") + g("bh")).tanh()
        h = (1.0 - z) * h + z * cand
        outs.append(h @ g("head.w") + g("head.b"))
    out = stack(outs, axis=1)
    return out[0] if squeeze else out
