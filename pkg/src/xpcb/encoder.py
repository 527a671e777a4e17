"""Mini transformer encoder with a hand-written backward pass.

Parameters live in a flat ``dict[str, ndarray]``; the layout is

    tok_emb [V, D]         pos_emb [P, D]
    layers.{i}.wq/wk/wv/wo [D, D]
    layers.{i}.ln1_g/ln1_b [D]
    layers.{i}.w1 [D, F]   layers.{i}.b1 [F]
    layers.{i}.w2 [F, D]   layers.{i}.b2 [D]
    layers.{i}.ln2_g/ln2_b [D]

Hidden state 0 is the embedding sum, state ``i + 1`` is the output of layer ``i``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import TokenBatch
from .errors import ArtifactMismatch, DataError, NumericalError

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_positions: int = 512
    dropout_rate: float = 0.1
    pooling: str = "first_token"
    init_std: float = 0.02

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise DataError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.pooling not in ("first_token", "mean"):
            raise DataError(f"unknown pooling {self.pooling!r}")
        if min(self.vocab_size, self.d_model, self.n_layers, self.d_ff, self.max_positions) < 1:
            raise DataError("encoder dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    d, f = cfg.d_model, cfg.d_ff

    def glorot(n_in, n_out):
        lim = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-lim, lim, size=(n_in, n_out)).astype(dtype)

    p = {
        "tok_emb": (rng.standard_normal((cfg.vocab_size, d)) * cfg.init_std).astype(dtype),
        "pos_emb": (rng.standard_normal((cfg.max_positions, d)) * cfg.init_std).astype(dtype),
    }
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = glorot(d, d)
        p[pre + "ln1_g"] = np.ones(d, dtype)
        p[pre + "ln1_b"] = np.zeros(d, dtype)
        p[pre + "w1"] = glorot(d, f)
        p[pre + "b1"] = np.zeros(f, dtype)
        p[pre + "w2"] = glorot(f, d)
        p[pre + "b2"] = np.zeros(d, dtype)
        p[pre + "ln2_g"] = np.ones(d, dtype)
        p[pre + "ln2_b"] = np.zeros(d, dtype)
    return p


def expected_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {"tok_emb": (cfg.vocab_size, d), "pos_emb": (cfg.max_positions, d)}
    per_layer = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "ln1_g": (d,), "ln1_b": (d,), "w1": (d, f), "b1": (f,),
        "w2": (f, d), "b2": (d,), "ln2_g": (d,), "ln2_b": (d,),
    }
    for i in range(cfg.n_layers):
        shapes.update({f"layers.{i}.{k}": v for k, v in per_layer.items()})
    return shapes


def layer_of(name: str) -> int:
    """Layer index owning a parameter; embeddings count as -1."""
    return int(name.split(".")[1]) if name.startswith("layers.") else -1


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_back(dy, g, cache):
    xhat, inv = cache
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dg, db


def _dropout_mask(rng, shape, rate, dtype):
    if rng is None or rate <= 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def _matmul_grad_w(x, dy):
    """Sum over leading axes of x^T dy."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


class HiddenStates(list):
    """Per-layer activations ``[batch, seq, d_model]``; index 0 is the embedding output."""


@dataclass
class ForwardCache:
    ids: np.ndarray
    mask: np.ndarray
    states: HiddenStates
    layers: list = field(default_factory=list)
    emb_drop: np.ndarray | None = None


class TransformerEncoder:
    """Post-norm transformer encoder over a flat parameter dict."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_encoder_params(cfg, np.random.default_rng(seed))
        self.check_shapes()

    # -- bookkeeping -------------------------------------------------------

    def check_shapes(self) -> None:
        ref = expected_shapes(self.cfg)
        if set(ref) != set(self.params):
            missing = sorted(set(ref) ^ set(self.params))
            raise ArtifactMismatch(f"encoder parameter names do not match config: {missing[:5]}")
        for k, shape in ref.items():
            if self.params[k].shape != shape:
                raise ArtifactMismatch(f"{k}: shape {self.params[k].shape} != expected {shape}")

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def copy(self) -> "TransformerEncoder":
        return TransformerEncoder(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "TransformerEncoder":
        return TransformerEncoder(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    def param_names(self) -> list[str]:
        return list(self.params)

    # -- forward -----------------------------------------------------------

    def forward(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        upto: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> ForwardCache:
        """Run the stack up to hidden state ``upto`` (default: all layers).

        Dropout is active only when ``rng`` is given.
        """
        cfg, p = self.cfg, self.params
        upto = cfg.n_layers if upto is None else upto
        if not 0 <= upto <= cfg.n_layers:
            raise DataError(f"layer {upto} outside [0, {cfg.n_layers}]")
        ids = np.asarray(ids)
        mask = np.asarray(mask)
        b, t = ids.shape
        if t > cfg.max_positions:
            raise DataError(f"sequence length {t} exceeds max_positions {cfg.max_positions}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise DataError(f"token id outside [0, {cfg.vocab_size})")
        dt = self.dtype
        rate = cfg.dropout_rate

        x = p["tok_emb"][ids] + p["pos_emb"][:t]
        emb_drop = _dropout_mask(rng, x.shape, rate, dt)
        if emb_drop is not None:
            x = x * emb_drop
        states = HiddenStates([x])
        cache = ForwardCache(ids, mask, states, emb_drop=emb_drop)

        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        scale = dt.type(1.0 / np.sqrt(dh))
        add_mask = np.where(mask.astype(bool), dt.type(0.0), dt.type(-np.inf))[:, None, None, :]

        for i in range(upto):
            pre = f"layers.{i}."

            def heads(z):
                return z.reshape(b, t, h, dh).transpose(0, 2, 1, 3)

            q = heads(x @ p[pre + "wq"])
            k = heads(x @ p[pre + "wk"])
            v = heads(x @ p[pre + "wv"])
            s = (q @ k.transpose(0, 1, 3, 2)) * scale + add_mask
            s = s - s.max(axis=-1, keepdims=True)
            a = np.exp(s)
            a /= a.sum(axis=-1, keepdims=True)
            ctx = (a @ v).transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
            o = ctx @ p[pre + "wo"]
            drop1 = _dropout_mask(rng, o.shape, rate, dt)
            if drop1 is not None:
                o = o * drop1
            h1, ln1 = _layernorm(x + o, p[pre + "ln1_g"], p[pre + "ln1_b"])
            u = h1 @ p[pre + "w1"] + p[pre + "b1"]
            z = np.maximum(u, 0)
            f = z @ p[pre + "w2"] + p[pre + "b2"]
            drop2 = _dropout_mask(rng, f.shape, rate, dt)
            if drop2 is not None:
                f = f * drop2
            out, ln2 = _layernorm(h1 + f, p[pre + "ln2_g"], p[pre + "ln2_b"])
            if not np.isfinite(out).all():
                raise NumericalError(f"non-finite activations in encoder layer {i}")
            cache.layers.append((x, q, k, v, a, ctx, drop1, h1, ln1, u, z, drop2, ln2))
            states.append(out)
            x = out
        return cache

    def encode(self, batch: TokenBatch, upto: int | None = None) -> HiddenStates:
        """Deterministic (dropout-free) hidden states for a batch."""
        return self.forward(batch.ids, batch.mask, upto=upto).states

    # -- backward ----------------------------------------------------------

    def backward(
        self,
        cache: ForwardCache,
        state_grads: dict[int, np.ndarray],
        frozen: Sequence[str] = (),
    ) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its gradients w.r.t. hidden states.

        Parameters listed in ``frozen`` get no gradient; the pass stops early
        once every remaining parameter below is frozen.
        """
        cfg, p = self.cfg, self.params
        frozen = set(frozen)
        grads: dict[str, np.ndarray] = {}
        top = max(state_grads)
        b, t = cache.ids.shape
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        scale = self.dtype.type(1.0 / np.sqrt(dh))
        # lowest layer index that still has a trainable parameter
        live = [layer_of(n) for n in p if n not in frozen]
        floor = min(live) if live else cfg.n_layers

        dx = np.array(state_grads[top], dtype=self.dtype, copy=True)
        for i in range(top - 1, -1, -1):
            if i < floor:
                break
            pre = f"layers.{i}."
            x, q, k, v, a, ctx, drop1, h1, ln1, u, z, drop2, ln2 = cache.layers[i]

            dr2, dg, db = _layernorm_back(dx, p[pre + "ln2_g"], ln2)
            grads[pre + "ln2_g"], grads[pre + "ln2_b"] = dg, db
            df = dr2 if drop2 is None else dr2 * drop2
            grads[pre + "w2"] = _matmul_grad_w(z, df)
            grads[pre + "b2"] = df.reshape(-1, df.shape[-1]).sum(axis=0)
            du = (df @ p[pre + "w2"].T) * (u > 0)
            grads[pre + "w1"] = _matmul_grad_w(h1, du)
            grads[pre + "b1"] = du.reshape(-1, du.shape[-1]).sum(axis=0)
            dh1 = dr2 + du @ p[pre + "w1"].T

            dr1, dg, db = _layernorm_back(dh1, p[pre + "ln1_g"], ln1)
            grads[pre + "ln1_g"], grads[pre + "ln1_b"] = dg, db
            do = dr1 if drop1 is None else dr1 * drop1
            grads[pre + "wo"] = _matmul_grad_w(ctx, do)
            dctx = (do @ p[pre + "wo"].T).reshape(b, t, h, dh).transpose(0, 2, 1, 3)
            da = dctx @ v.transpose(0, 1, 3, 2)
            dv = a.transpose(0, 1, 3, 2) @ dctx
            ds = a * (da - np.sum(da * a, axis=-1, keepdims=True)) * scale
            dq = ds @ k
            dk = ds.transpose(0, 1, 3, 2) @ q

            def merge(z4):
                return z4.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)

            dq, dk, dv = merge(dq), merge(dk), merge(dv)
            grads[pre + "wq"] = _matmul_grad_w(x, dq)
            grads[pre + "wk"] = _matmul_grad_w(x, dk)
            grads[pre + "wv"] = _matmul_grad_w(x, dv)
            dx = dr1 + dq @ p[pre + "wq"].T + dk @ p[pre + "wk"].T + dv @ p[pre + "wv"].T
            if i in state_grads:
                dx = dx + state_grads[i]
        if floor <= -1:
            if cache.emb_drop is not None:
                dx = dx * cache.emb_drop
            if "tok_emb" not in frozen:
                grads["tok_emb"] = kernels.embedding_grad(cache.ids, dx, cfg.vocab_size)
            if "pos_emb" not in frozen:
                gpos = np.zeros_like(p["pos_emb"])
                gpos[:t] = dx.sum(axis=0)
                grads["pos_emb"] = gpos
        for name in frozen:
            grads.pop(name, None)
        return grads


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def pool(states: Sequence[np.ndarray], layer: int, mask: np.ndarray, strategy: str = "first_token") -> np.ndarray:
    x = states[layer]
    if strategy == "first_token":
        return x[:, 0, :]
    if strategy == "mean":
        m = mask.astype(x.dtype)[:, :, None]
        return (x * m).sum(axis=1) / np.maximum(m.sum(axis=1), 1)
    raise DataError(f"unknown pooling {strategy!r}")


def pool_backward(dpooled: np.ndarray, shape: tuple, mask: np.ndarray, strategy: str = "first_token") -> np.ndarray:
    out = np.zeros(shape, dtype=dpooled.dtype)
    if strategy == "first_token":
        out[:, 0, :] = dpooled
    else:
        m = mask.astype(dpooled.dtype)[:, :, None]
        out[:] = dpooled[:, None, :] * m / np.maximum(m.sum(axis=1, keepdims=True), 1)
    return out


def pooled_features(
    encoder: TransformerEncoder, data, layer: int, batch_size: int = 256
) -> np.ndarray:
    """Pooled layer features for every row of an :class:`~xpcb.corpus.EncodedCorpus`, in order."""
    out = []
    for batch in data.batches(batch_size):
        batch = batch.trimmed()
        states = encoder.forward(batch.ids, batch.mask, upto=layer).states
        out.append(pool(states, layer, batch.mask, encoder.cfg.pooling))
    if not out:
        return np.zeros((0, encoder.cfg.d_model), dtype=encoder.dtype)
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# source -> target initialisation
# ---------------------------------------------------------------------------


def init_target_from_source(
    source: TransformerEncoder, mode: str = "full", k: int = 0, target_cfg: EncoderConfig | None = None
) -> tuple[TransformerEncoder, frozenset[str]]:
    """Deep-copy the source encoder; ``mode="partial"`` freezes embeddings and the bottom ``k`` layers."""
    if target_cfg is not None and target_cfg != source.cfg:
        raise ArtifactMismatch("source and target encoder configurations differ")
    target = source.copy()
    if mode == "full":
        return target, frozenset()
    if mode != "partial":
        raise DataError(f"unknown sharing mode {mode!r}")
    if not 0 <= k <= source.cfg.n_layers:
        raise DataError(f"partial sharing depth {k} outside [0, {source.cfg.n_layers}]")
    frozen = frozenset(n for n in target.params if layer_of(n) < k)
    return target, frozen


def deepcopy_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return copy.deepcopy(params)
