"""Differentiable decoder backbones with hand-written reverse-mode gradients.

The network sees ``[|y|, bipolar syndrome]`` plus an embedded scalar noise
condition and emits one logit per code bit.  Two heads are supported:

``codeword``
    logit of ``P(x0_i = 1)``.  The core output is read as a flip logit
    relative to the hard decision of ``y`` and multiplied by ``sign(y_i)``, so
    predictions are equivariant under the transmitted codeword.
``noise``
    raw logit of ``P(bit i of y was flipped)`` (multiplicative noise).
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .channel import as_generator, demodulate_hard
from .codes import ParityCheckMatrix, hard_syndrome

PARAMS_VERSION = "eccfm-params/1"
BACKBONE_KINDS = ("mlp", "tiny_cross_attention")
OUTPUT_KINDS = ("codeword", "noise")


class ModelError(ValueError):
    pass


# --- small differentiable pieces --------------------------------------------

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * sigmoid(x)


def dsilu(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def silu_with_grad(x):
    """``(silu(x), dsilu(x))`` sharing one sigmoid evaluation."""
    s = sigmoid(x)
    return x * s, s * (1.0 + x * (1.0 - s))


@lru_cache(maxsize=None)
def condition_frequencies(embed_dim: int) -> np.ndarray:
    w = np.geomspace(0.5, 64.0, embed_dim // 2)
    w.setflags(write=False)
    return w


def sinusoidal_features(e, embed_dim: int) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)[..., None]
    w = condition_frequencies(embed_dim)
    return np.concatenate([np.sin(w * e), np.cos(w * e)], axis=-1)


def sinusoidal_features_grad(e, embed_dim: int) -> np.ndarray:
    """Elementwise d(features)/de, same shape as the features."""
    e = np.asarray(e, dtype=np.float64)[..., None]
    w = condition_frequencies(embed_dim)
    return np.concatenate([w * np.cos(w * e), -w * np.sin(w * e)], axis=-1)


# --- data types ---------------------------------------------------------------

@dataclass(frozen=True)
class DecoderInput:
    magnitude: np.ndarray  # (B, n)  |y|
    syndrome_bipolar: np.ndarray  # (B, m) in {-1, +1}
    condition: np.ndarray  # (B,)
    sign: np.ndarray  # (B, n) in {-1, +1}, sign(y) with sign(0) = +1

    @property
    def batch(self) -> int:
        return self.magnitude.shape[0]

    def __len__(self):
        return self.batch


def preprocess(y, H: ParityCheckMatrix, condition=0.0) -> DecoderInput:
    """Split ``y`` into magnitude and bipolar hard syndrome; attach the condition."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[-1] != H.n:
        raise ModelError(f"expected {H.n} samples per word, got shape {y.shape}")
    hard = demodulate_hard(y)
    syn = 1.0 - 2.0 * hard_syndrome(hard, H)
    cond = np.broadcast_to(np.asarray(condition, dtype=np.float64), y.shape[:1]).copy()
    return DecoderInput(np.abs(y), syn, cond, 1.0 - 2.0 * hard)


@dataclass(frozen=True)
class BackboneConfig:
    n: int
    m: int
    kind: str = "mlp"
    depth: int = 3
    width: int = 64
    embed_dim: int = 16
    output: str = "codeword"

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ModelError(f"unknown backbone kind {self.kind!r}")
        if self.output not in OUTPUT_KINDS:
            raise ModelError(f"unknown output kind {self.output!r}")
        if self.depth < 1 or self.width < 1:
            raise ModelError("depth and width must be at least 1")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ModelError("embed_dim must be an even number >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


@dataclass(frozen=True)
class ParamLayout:
    entries: tuple[tuple[str, tuple[int, ...]], ...]

    @cached_property
    def slices(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        """name -> (offset, size, shape) into the flat vector."""
        out, off = {}, 0
        for name, shape in self.entries:
            size = math.prod(shape)
            out[name] = (off, off + size, shape)
            off += size
        return out

    @cached_property
    def size(self) -> int:
        return sum(math.prod(s) for _, s in self.entries)

    def fan_in(self, name: str) -> int:
        shape = dict(self.entries)[name]
        return shape[0] if len(shape) == 2 else 1


@dataclass
class ModelParams:
    values: np.ndarray
    layout: ParamLayout
    version: str = PARAMS_VERSION
    _offsets: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise ModelError(f"parameter vector has {self.values.size} entries, layout needs {self.layout.size}")
        self._offsets = self.layout.slices

    def __getitem__(self, name: str) -> np.ndarray:
        lo, hi, shape = self._offsets[name]
        return self.values[lo:hi].reshape(shape)

    @property
    def count(self) -> int:
        return self.values.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.layout, self.version)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(values, self.layout, self.version)


class Backbone:
    """Pure-function network: all state lives in :class:`ModelParams`."""

    def __init__(self, config: BackboneConfig, H: ParityCheckMatrix):
        if (config.n, config.m) != (H.n, H.m):
            raise ModelError(f"backbone built for ({config.n}, {config.m}) but H is ({H.n}, {H.m})")
        self.config = config
        self.H = H
        self.layout = ParamLayout(tuple(self._entries()))
        # attention mask: bit i may only attend to checks j with H[j, i] = 1
        self._mask_bias = np.where(H.rows.T.astype(bool), 0.0, -1e30)

    # layout -----------------------------------------------------------------
    def _entries(self):
        c = self.config
        n, m, W, E = c.n, c.m, c.width, c.embed_dim
        yield "embed.w1", (E, E)
        yield "embed.b1", (E,)
        yield "embed.w2", (E, E)
        yield "embed.b2", (E,)
        if c.kind == "mlp":
            yield "in.w", (n + m + E, W)
            yield "in.b", (W,)
            for i in range(c.depth):
                yield f"block{i}.w1", (W, W)
                yield f"block{i}.b1", (W,)
                yield f"block{i}.w2", (W, W)
                yield f"block{i}.b2", (W,)
            yield "out.w", (W, n)
            yield "out.b", (n,)
        else:
            yield "mag.u", (W,)
            yield "mag.pos", (n, W)
            yield "syn.u", (W,)
            yield "syn.pos", (m, W)
            yield "cond.w", (E, W)
            yield "cond.b", (W,)
            for i in range(c.depth):
                for nm in ("wq", "wk", "wv", "wo", "w1", "w2"):
                    yield f"layer{i}.{nm}", (W, W)
                yield f"layer{i}.b1", (W,)
                yield f"layer{i}.b2", (W,)
            yield "out.w", (W,)
            yield "out.b", (n,)

    @property
    def param_count(self) -> int:
        return self.layout.size

    def init(self, rng) -> ModelParams:
        """Weights uniform in ``+-1/sqrt(fan_in)``; biases zero.

        Token tables (``*.pos``) use the token width as fan-in and the scalar
        token projections (``*.u``) have fan-in 1.
        """
        gen = as_generator(rng)
        p = ModelParams(np.zeros(self.layout.size), self.layout)
        W = self.config.width
        for name, shape in self.layout.entries:
            if name.split(".")[-1].startswith("b"):
                continue
            if name.endswith(".pos"):
                fan_in = W
            elif name.endswith(".u"):
                fan_in = 1
            else:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            p[name][...] = gen.uniform(-bound, bound, size=shape)
        return p

    def zeros(self) -> ModelParams:
        return ModelParams(np.zeros(self.layout.size), self.layout)

    def _check(self, params: ModelParams, inp: DecoderInput) -> None:
        if params.layout != self.layout:
            raise ModelError("parameter layout does not match this backbone")
        if not np.all(np.isfinite(params.values)):
            raise ModelError("non-finite parameters")
        for a in (inp.magnitude, inp.syndrome_bipolar, inp.condition):
            if not np.all(np.isfinite(a)):
                raise ModelError("non-finite decoder input")
        if inp.magnitude.shape[-1] != self.config.n or inp.syndrome_bipolar.shape[-1] != self.config.m:
            raise ModelError("decoder input does not match code dimensions")

    # condition embedding ----------------------------------------------------
    def embed_condition(self, params: ModelParams, e):
        """Sinusoidal features of ``e`` followed by a 2-layer learned map."""
        e = np.asarray(e, dtype=np.float64)
        if np.any(e < 0):
            raise ModelError("condition must be non-negative")
        return self._embed_fwd(params, e)[0]

    def _embed_fwd(self, params, e):
        phi = sinusoidal_features(e, self.config.embed_dim)
        a1 = phi @ params["embed.w1"] + params["embed.b1"]
        h1, dh1 = silu_with_grad(a1)
        c = h1 @ params["embed.w2"] + params["embed.b2"]
        return c, (e, phi, h1, dh1)

    def _embed_bwd(self, params, cache, dc, grads):
        e, phi, h1, dh1 = cache
        grads["embed.w2"] += h1.T @ dc
        grads["embed.b2"] += dc.sum(0)
        da1 = (dc @ params["embed.w2"].T) * dh1
        grads["embed.w1"] += phi.T @ da1
        grads["embed.b1"] += da1.sum(0)
        dphi = da1 @ params["embed.w1"].T
        return (dphi * sinusoidal_features_grad(e, self.config.embed_dim)).sum(-1)

    def embed_condition_vjp(self, params: ModelParams, e, cot) -> np.ndarray:
        """``d<embed(e), cot>/de`` for each entry of ``e``."""
        e = np.atleast_1d(np.asarray(e, dtype=np.float64))
        _, cache = self._embed_fwd(params, e)
        grads = _GradBuffer(self.layout)
        return self._embed_bwd(params, cache, np.atleast_2d(cot), grads)

    # forward / backward ------------------------------------------------------
    def forward(self, params: ModelParams, inp: DecoderInput, *, return_cache: bool = False):
        self._check(params, inp)
        c, ecache = self._embed_fwd(params, inp.condition)
        if self.config.kind == "mlp":
            core, ccache = self._mlp_fwd(params, inp, c)
        else:
            core, ccache = self._xattn_fwd(params, inp, c)
        logits = core * inp.sign if self.config.output == "codeword" else core
        if return_cache:
            return logits, (ecache, c, ccache)
        return logits

    def backward(self, params: ModelParams, inp: DecoderInput, cotangent, *, cache=None,
                 wrt_input: bool = False):
        """Gradient of ``<logits, cotangent>`` w.r.t. the flat parameters.

        With ``wrt_input`` also returns a dict of input gradients
        (``magnitude``, ``syndrome_bipolar``, ``condition``).
        """
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != inp.magnitude.shape:
            raise ModelError(f"cotangent shape {cot.shape} != output shape {inp.magnitude.shape}")
        if cache is None:
            _, cache = self.forward(params, inp, return_cache=True)
        ecache, c, ccache = cache
        dcore = cot * inp.sign if self.config.output == "codeword" else cot
        grads = _GradBuffer(self.layout)
        if self.config.kind == "mlp":
            dmag, dsyn, dc = self._mlp_bwd(params, inp, c, ccache, dcore, grads)
        else:
            dmag, dsyn, dc = self._xattn_bwd(params, inp, c, ccache, dcore, grads)
        de = self._embed_bwd(params, ecache, dc, grads)
        if wrt_input:
            return grads.values, {"magnitude": dmag, "syndrome_bipolar": dsyn, "condition": de}
        return grads.values

    # MLP -----------------------------------------------------------------------
    def _mlp_fwd(self, params, inp, c):
        z = np.concatenate([inp.magnitude, inp.syndrome_bipolar, c], axis=-1)
        h = z @ params["in.w"] + params["in.b"]
        hs, acts = [h], []
        for i in range(self.config.depth):
            u, du = silu_with_grad(h @ params[f"block{i}.w1"] + params[f"block{i}.b1"])
            h = h + u @ params[f"block{i}.w2"] + params[f"block{i}.b2"]
            acts.append((u, du))
            hs.append(h)
        u_out, du_out = silu_with_grad(h)
        core = u_out @ params["out.w"] + params["out.b"]
        return core, (z, hs, acts, u_out, du_out)

    def _mlp_bwd(self, params, inp, c, cache, dcore, g):
        z, hs, acts, u_out, du_out = cache
        g["out.w"] += u_out.T @ dcore
        g["out.b"] += dcore.sum(0)
        dh = (dcore @ params["out.w"].T) * du_out
        for i in reversed(range(self.config.depth)):
            u, du = acts[i]
            g[f"block{i}.w2"] += u.T @ dh
            g[f"block{i}.b2"] += dh.sum(0)
            da = (dh @ params[f"block{i}.w2"].T) * du
            g[f"block{i}.w1"] += hs[i].T @ da
            g[f"block{i}.b1"] += da.sum(0)
            dh = dh + da @ params[f"block{i}.w1"].T
        g["in.w"] += z.T @ dh
        g["in.b"] += dh.sum(0)
        dz = dh @ params["in.w"].T
        n, m = self.config.n, self.config.m
        return dz[:, :n], dz[:, n:n + m], dz[:, n + m:]

    # cross-attention -----------------------------------------------------------
    def _xattn_fwd(self, params, inp, c):
        W = self.config.width
        scale = 1.0 / np.sqrt(W)
        cp = c @ params["cond.w"] + params["cond.b"]
        T = inp.magnitude[..., None] * params["mag.u"] + params["mag.pos"] + cp[:, None, :]
        S = inp.syndrome_bipolar[..., None] * params["syn.u"] + params["syn.pos"]
        layers = []
        for i in range(self.config.depth):
            p = lambda nm: params[f"layer{i}.{nm}"]  # noqa: E731
            Q, K, V = T @ p("wq"), S @ p("wk"), S @ p("wv")
            scores = Q @ K.transpose(0, 2, 1) * scale + self._mask_bias
            scores -= scores.max(-1, keepdims=True)
            A = np.exp(scores)
            A /= A.sum(-1, keepdims=True)
            ctx = A @ V
            T_mid = T + ctx @ p("wo")
            a = T_mid @ p("w1") + p("b1")
            T_out = T_mid + silu(a) @ p("w2") + p("b2")
            layers.append((T, Q, K, V, A, ctx, T_mid, a))
            T = T_out
        core = silu(T) @ params["out.w"] + params["out.b"]
        return core, (cp, S, layers, T)

    def _xattn_bwd(self, params, inp, c, cache, dcore, g):
        cp, S, layers, T = cache
        scale = 1.0 / np.sqrt(self.config.width)
        g["out.w"] += np.einsum("bnw,bn->w", silu(T), dcore)
        g["out.b"] += dcore.sum(0)
        dT = dcore[..., None] * params["out.w"] * dsilu(T)
        dS = np.zeros_like(S)
        for i in reversed(range(self.config.depth)):
            p = lambda nm: params[f"layer{i}.{nm}"]  # noqa: E731
            T_in, Q, K, V, A, ctx, T_mid, a = layers[i]
            # feed-forward residual
            u = silu(a)
            g[f"layer{i}.w2"] += np.einsum("bnv,bnw->vw", u, dT)
            g[f"layer{i}.b2"] += dT.sum((0, 1))
            da = (dT @ p("w2").T) * dsilu(a)
            g[f"layer{i}.w1"] += np.einsum("bnv,bnw->vw", T_mid, da)
            g[f"layer{i}.b1"] += da.sum((0, 1))
            dT = dT + da @ p("w1").T
            # attention residual
            g[f"layer{i}.wo"] += np.einsum("bnv,bnw->vw", ctx, dT)
            dctx = dT @ p("wo").T
            dA = dctx @ V.transpose(0, 2, 1)
            dV = A.transpose(0, 2, 1) @ dctx
            dscores = A * (dA - (dA * A).sum(-1, keepdims=True)) * scale
            dQ = dscores @ K
            dK = dscores.transpose(0, 2, 1) @ Q
            g[f"layer{i}.wq"] += np.einsum("bnv,bnw->vw", T_in, dQ)
            g[f"layer{i}.wk"] += np.einsum("bmv,bmw->vw", S, dK)
            g[f"layer{i}.wv"] += np.einsum("bmv,bmw->vw", S, dV)
            dT = dT + dQ @ p("wq").T
            dS += dK @ p("wk").T + dV @ p("wv").T
        g["mag.u"] += np.einsum("bnw,bn->w", dT, inp.magnitude)
        g["mag.pos"] += dT.sum(0)
        dcp = dT.sum(1)
        g["cond.w"] += c.T @ dcp
        g["cond.b"] += dcp.sum(0)
        dc = dcp @ params["cond.w"].T
        g["syn.u"] += np.einsum("bmw,bm->w", dS, inp.syndrome_bipolar)
        g["syn.pos"] += dS.sum(0)
        dmag = dT @ params["mag.u"]
        dsyn = dS @ params["syn.u"]
        return dmag, dsyn, dc


class _GradBuffer:
    def __init__(self, layout: ParamLayout):
        self.values = np.zeros(layout.size)
        self._p = ModelParams(self.values, layout)

    def __getitem__(self, name):
        return self._p[name]

    def __setitem__(self, name, value):
        self._p[name][...] = value


# --- persistence ----------------------------------------------------------------

def params_to_bytes(config: BackboneConfig, params: ModelParams, extra_arrays: dict | None = None,
                    meta: dict | None = None) -> bytes:
    """Serialise to an ``.npz`` payload with little-endian float64 arrays."""
    header = {"version": params.version, "backbone": asdict(config), "meta": meta or {}}
    arrays = {"params": params.values.astype("<f8")}
    for k, v in (extra_arrays or {}).items():
        arrays[k] = np.asarray(v).astype("<f8")
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    return buf.getvalue()


def params_from_bytes(data: bytes, H: ParityCheckMatrix):
    """Inverse of :func:`params_to_bytes`: ``(backbone, params, header, arrays)``."""
    with np.load(io.BytesIO(data)) as z:
        header = json.loads(bytes(z["header"]).decode())
        arrays = {k: z[k].astype(np.float64) for k in z.files if k != "header"}
    if header.get("version") != PARAMS_VERSION:
        raise ModelError(f"unsupported checkpoint version {header.get('version')!r}")
    net = Backbone(BackboneConfig.from_dict(header["backbone"]), H)
    params = ModelParams(arrays.pop("params"), net.layout, header["version"])
    return net, params, header, arrays


class NeuralModel:
    """A backbone bound to parameters, as consumed by the decoders."""

    def __init__(self, net: Backbone, params: ModelParams, condition_kind: str = "soft"):
        if condition_kind not in ("soft", "hard"):
            raise ModelError(f"unknown condition kind {condition_kind!r}")
        self.net = net
        self.params = params
        self.condition_kind = condition_kind

    @property
    def H(self) -> ParityCheckMatrix:
        return self.net.H

    @property
    def output(self) -> str:
        return self.net.config.output

    def predict_proba(self, y, condition) -> np.ndarray:
        """Sigmoid of the network logits for a ``(B, n)`` batch of received words."""
        inp = preprocess(y, self.net.H, condition)
        return sigmoid(self.net.forward(self.params, inp))
