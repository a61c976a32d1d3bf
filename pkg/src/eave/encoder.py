"""Heavy and light transformer encoders joined by sparse-layer interaction.

The heavy encoder runs the context and the attribute separately (so its
per-layer activations can be cached). The light encoder runs over the
concatenated ``context + attribute`` ids and, in every layer, fuses the
activation of one mapped heavy layer at a configurable location.

All forward functions accept a leading batch axis or none.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .config import (
    EaveConfig,
    EncoderConfig,
    FusionLocation,
    FusionMethod,
    LayerMapping,
    MappingScheme,
    MlpInputMode,
)
from .tensor import (
    Tensor,
    concat,
    dropout,
    embedding,
    gelu,
    rms_norm,
    softmax_rows,
)

INIT_STD = 0.02
CHECKPOINT_MAGIC = b"EAVECKPT"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    """Heavy representations were produced by a different model."""


class MissingLayerError(KeyError):
    pass


# -- parameters ------------------------------------------------------------

def _trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) > 2.0
        if not bad.any():
            break
        x[bad] = rng.standard_normal(int(bad.sum()))
    return (x * std).astype(np.float32)


def _param(data, name: str) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)


class Module:
    """Parameter container; walks attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def to(self, dtype) -> "Module":
        """Cast every parameter in place (float64 is the gradient-check shadow mode)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class AttentionParams(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, prefix: str = ""):
        self.heads = heads
        self.wq = _param(_trunc_normal(rng, (d_model, d_model)), prefix + "wq")
        self.wk = _param(_trunc_normal(rng, (d_model, d_model)), prefix + "wk")
        self.wv = _param(_trunc_normal(rng, (d_model, d_model)), prefix + "wv")
        self.wo = _param(_trunc_normal(rng, (d_model, d_model)), prefix + "wo")


class MlpParams(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, prefix: str = ""):
        self.w1 = _param(_trunc_normal(rng, (d_model, d_ff)), prefix + "w1")
        self.b1 = _param(np.zeros(d_ff), prefix + "b1")
        self.w2 = _param(_trunc_normal(rng, (d_ff, d_model)), prefix + "w2")
        self.b2 = _param(np.zeros(d_model), prefix + "b2")


class LayerParams(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, prefix: str = ""):
        self.attn_norm = _param(np.ones(cfg.hidden), prefix + "attn_norm")
        self.attn = AttentionParams(cfg.hidden, cfg.heads, rng, prefix + "attn.")
        self.mlp_norm = _param(np.ones(cfg.hidden), prefix + "mlp_norm")
        self.mlp = MlpParams(cfg.hidden, cfg.ffn_hidden, rng, prefix + "mlp.")


class EncoderParams(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "",
                 final_norm: bool = False):
        self.tok_emb = _param(_trunc_normal(rng, (cfg.vocab_size, cfg.hidden)), prefix + "tok_emb")
        self.pos_emb = _param(_trunc_normal(rng, (cfg.max_len, cfg.hidden)), prefix + "pos_emb")
        self.layers = [LayerParams(cfg, rng, f"{prefix}layers.{i}.") for i in range(cfg.num_layers)]
        if final_norm:
            self.final_norm = _param(np.ones(cfg.hidden), prefix + "final_norm")


class FusionParams(Module):
    """Per light layer: adaptor, optional learned alpha, optional cross-attention."""

    def __init__(self, config: EaveConfig, rng: np.random.Generator, prefix: str = ""):
        d_h, d_l = config.heavy.hidden, config.light.hidden
        self.adaptor = _param(_trunc_normal(rng, (d_h, d_l)), prefix + "adaptor")
        if config.fusion_method is FusionMethod.LEARNED_ALPHA:
            self.learned_alpha = _param(np.zeros(()), prefix + "learned_alpha")
        if config.fusion_method is FusionMethod.CROSS_ATTENTION:
            self.cross_attn = AttentionParams(d_l, config.light.heads, rng, prefix + "cross_attn.")


class HeadParams(Module):
    def __init__(self, d_model: int, rng: np.random.Generator, n_tags: int = 3):
        self.weight = _param(_trunc_normal(rng, (d_model, n_tags)), "head.weight")
        self.bias = _param(np.zeros(n_tags), "head.bias")


# -- core layer math -------------------------------------------------------

def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, s, d = x.shape
    x = x.reshape(*lead, s, heads, d // heads)
    return x.swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = x.swapaxes(-2, -3)
    *lead, s, h, hd = x.shape
    return x.reshape(*lead, s, h * hd)


def attention(query_src: Tensor, kv_src: Tensor, params: AttentionParams, key_mask) -> Tensor:
    """Multi-head scaled dot-product attention with a key padding mask."""
    key_mask = np.asarray(key_mask, dtype=bool)
    if not key_mask.any(axis=-1).all():
        raise ValueError("attention mask has no valid key positions")
    h = params.heads
    head_dim = query_src.shape[-1] // h
    q = _split_heads(query_src @ params.wq, h)
    k = _split_heads(kv_src @ params.wk, h)
    v = _split_heads(kv_src @ params.wv, h)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(head_dim))
    # [.., S_k] -> [.., 1(head), 1(query), S_k]
    probs = softmax_rows(scores, key_mask[..., None, None, :])
    return _merge_heads(probs @ v) @ params.wo


def self_attention(x: Tensor, params: AttentionParams, mask) -> Tensor:
    """Self-attention over an already-normalized input."""
    return attention(x, x, params, mask)


def mlp(x: Tensor, params: MlpParams) -> Tensor:
    return gelu(x @ params.w1 + params.b1) @ params.w2 + params.b2


Hook = Callable[[Tensor], Tensor]


def _layer(x: Tensor, layer: LayerParams, mask, location: FusionLocation, hook: Hook,
           eq2_mlp_input: bool, p_drop: float = 0.0, rng=None) -> Tensor:
    """One pre-norm layer with a single hook at ``location``.

    With ``eq2_mlp_input`` and the hook after attention, the MLP reads the
    normalized attention output instead of the residual sum.
    """
    loc = FusionLocation
    h = rms_norm(x, layer.attn_norm)
    if location is loc.BEFORE_ATTN:
        h = hook(h)
    attn_out = dropout(self_attention(h, layer.attn, mask), p_drop, rng)
    fused = hook(attn_out) if location is loc.AFTER_ATTN else attn_out
    y = fused + x
    if location is loc.AFTER_ATTN_SKIP:
        y = hook(y)
    mlp_src = attn_out if (eq2_mlp_input and location is loc.AFTER_ATTN) else y
    n = rms_norm(mlp_src, layer.mlp_norm)
    if location is loc.BEFORE_MLP:
        n = hook(n)
    xp = dropout(mlp(n, layer.mlp), p_drop, rng)
    if location is loc.AFTER_MLP:
        xp = hook(xp)
    out = xp + y
    if location is loc.AFTER_MLP_SKIP:
        out = hook(out)
    return out


def heavy_layer_forward(x_prev: Tensor, layer: LayerParams, mask,
                        location: FusionLocation = FusionLocation.AFTER_ATTN,
                        p_drop: float = 0.0, rng=None) -> tuple[Tensor, Tensor]:
    """Run one heavy layer; return ``(x_next, tensor extracted at location)``."""
    captured: list[Tensor] = []

    def record(t: Tensor) -> Tensor:
        captured.append(t)
        return t

    x_next = _layer(x_prev, layer, mask, FusionLocation(location), record,
                    eq2_mlp_input=False, p_drop=p_drop, rng=rng)
    return x_next, captured[0]


def light_layer_forward(x_prev: Tensor, layer: LayerParams, fuse: Hook | None,
                        location: FusionLocation, mlp_input_mode: MlpInputMode, mask,
                        p_drop: float = 0.0, rng=None) -> Tensor:
    """One light layer; ``fuse=None`` gives the plain (heavy-free) layer."""
    hook = fuse if fuse is not None else (lambda t: t)
    return _layer(x_prev, layer, mask, FusionLocation(location), hook,
                  eq2_mlp_input=MlpInputMode(mlp_input_mode) is MlpInputMode.PRE_FUSION,
                  p_drop=p_drop, rng=rng)


# -- layer mapping ---------------------------------------------------------

def layer_mapping(l_heavy: int, l_light: int, scheme) -> list[int]:
    """Heavy layer index feeding each light layer."""
    m = LayerMapping.parse(scheme)
    if m.scheme is MappingScheme.EVEN_OFFSET:
        if l_heavy % l_light:
            raise ValueError(
                f"even mapping needs L_heavy divisible by L_light (got {l_heavy} and {l_light})"
            )
        stride = l_heavy // l_light
        if not 0 <= m.offset < stride:
            raise ValueError(f"even mapping offset {m.offset} must be < stride {stride}")
        return [m.offset + i * stride for i in range(l_light)]
    if m.scheme is MappingScheme.LAST_LAYER_ONLY:
        return [l_heavy - 1] * l_light
    if l_light > l_heavy:
        raise ValueError(f"{m.scheme.value} needs L_light <= L_heavy (got {l_light} > {l_heavy})")
    if m.scheme is MappingScheme.LAST_K:
        return list(range(l_heavy - l_light, l_heavy))
    return list(range(l_light))


# -- fusion functions ------------------------------------------------------

def _project_heavy(heavy_c: Tensor, heavy_a: Tensor, adaptor: Tensor, seq_len: int) -> Tensor:
    joined = concat([heavy_c, heavy_a], axis=-2)
    if joined.shape[-2] != seq_len:
        raise ValueError(
            f"heavy sequence misaligned with light input: {heavy_c.shape[-2]} + "
            f"{heavy_a.shape[-2]} rows vs {seq_len} light tokens"
        )
    return joined @ adaptor


def fuse_linear(y_light: Tensor, heavy_c: Tensor, heavy_a: Tensor, adaptor: Tensor,
                alpha) -> Tensor:
    """``(1 - alpha) * y_light + alpha * concat(heavy_c, heavy_a) @ adaptor``."""
    projected = _project_heavy(heavy_c, heavy_a, adaptor, y_light.shape[-2])
    if isinstance(alpha, Tensor):
        return (1.0 - alpha) * y_light + alpha * projected
    return y_light * (1.0 - alpha) + projected * alpha


def fuse_learned_alpha(y_light: Tensor, heavy_c: Tensor, heavy_a: Tensor, adaptor: Tensor,
                       alpha: Tensor) -> Tensor:
    return fuse_linear(y_light, heavy_c, heavy_a, adaptor, alpha)


def fuse_cross_attention(y_light: Tensor, heavy_c: Tensor, heavy_a: Tensor, adaptor: Tensor,
                         cross_params: AttentionParams, heavy_mask) -> Tensor:
    """Light states attend to the projected heavy states, plus a skip connection."""
    projected = _project_heavy(heavy_c, heavy_a, adaptor, y_light.shape[-2])
    return attention(y_light, projected, cross_params, heavy_mask) + y_light


# -- cached heavy representations -----------------------------------------

class RepKind:
    CONTEXT = "context"
    ATTRIBUTE = "attribute"


@dataclass
class HeavyReps:
    """Heavy activations of one token sequence at the mapped layers."""

    kind: str
    fingerprint: int
    per_layer: dict[int, np.ndarray]
    seq_len: int
    mask: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for idx, arr in self.per_layer.items():
            if arr.ndim != 2 or arr.shape[0] != self.seq_len:
                raise ValueError(f"layer {idx} tensor has shape {arr.shape}, expected ({self.seq_len}, d)")
        if self.mask is None:
            any_layer = next(iter(self.per_layer.values()), None)
            self.mask = (np.ones(self.seq_len, dtype=bool) if any_layer is None
                         else np.abs(any_layer).sum(axis=-1) > 0)

    def layer(self, index: int) -> np.ndarray:
        if index not in self.per_layer:
            raise MissingLayerError(f"heavy layer {index} is not stored in these reps")
        return self.per_layer[index]

    def content_digest(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for idx in sorted(self.per_layer):
            h.update(struct.pack("<I", idx))
            h.update(np.ascontiguousarray(self.per_layer[idx], dtype="<f4").tobytes())
        return h.hexdigest()


def _hash64(chunks) -> int:
    h = hashlib.blake2b(digest_size=8)
    for chunk in chunks:
        h.update(chunk)
    return int.from_bytes(h.digest(), "little")


# -- the model -------------------------------------------------------------

class EaveModel(Module):
    """Parameters and forward passes for the full heavy/light architecture."""

    def __init__(self, config: EaveConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self._config = config
        self._mapping = layer_mapping(config.heavy.num_layers, config.light.num_layers,
                                      config.layer_mapping)
        self.heavy = EncoderParams(config.heavy, rng, "heavy.")
        self.light = EncoderParams(config.light, rng, "light.", final_norm=True)
        self.fusion = [FusionParams(config, rng, f"fusion.{i}.")
                       for i in range(config.light.num_layers)]
        self.head = HeadParams(config.light.hidden, rng)
        self._heavy_forwards = {RepKind.CONTEXT: 0, RepKind.ATTRIBUTE: 0}
        self._rng: np.random.Generator | None = None
        self._p_drop = 0.0

    @property
    def config(self) -> EaveConfig:
        return self._config

    @property
    def mapping(self) -> list[int]:
        return list(self._mapping)

    @property
    def heavy_forward_counts(self) -> dict[str, int]:
        """Heavy encoder invocations so far, per input kind."""
        return dict(self._heavy_forwards)

    def reset_counters(self) -> None:
        self._heavy_forwards = {RepKind.CONTEXT: 0, RepKind.ATTRIBUTE: 0}

    def train_mode(self, p_drop: float, rng: np.random.Generator | None) -> None:
        self._p_drop, self._rng = p_drop, rng

    def eval_mode(self) -> None:
        self._p_drop, self._rng = 0.0, None

    def heavy_named_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n.startswith("heavy.")]

    def light_named_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("heavy.")]

    def fingerprint(self) -> int:
        """64-bit id over the heavy side: config, mapping, location, weights."""
        cfg = self._config
        meta = json.dumps(
            {
                "heavy": cfg.heavy.to_dict(),
                "layer_mapping": cfg.layer_mapping.to_dict(),
                "fusion_location": cfg.fusion_location.value,
            },
            sort_keys=True,
        ).encode()
        chunks = [meta]
        for name, p in self.heavy_named_parameters():
            chunks.append(name.encode())
            chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        return _hash64(chunks)

    # -- encoders ----------------------------------------------------------
    def _embed(self, enc: EncoderParams, ids: np.ndarray) -> Tensor:
        s = ids.shape[-1]
        return dropout(embedding(enc.tok_emb, ids) + enc.pos_emb[:s], self._p_drop, self._rng)

    def heavy_states(self, ids, mask, kind: str = RepKind.CONTEXT) -> dict[int, Tensor]:
        """Run every heavy layer; return extracted tensors at the mapped layers.

        Padding rows of the extracted tensors are zero.
        """
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        wanted = set(self._mapping)
        x = self._embed(self.heavy, ids)
        keep = Tensor(mask[..., None].astype(x.dtype))
        out: dict[int, Tensor] = {}
        for i, layer in enumerate(self.heavy.layers):
            if i > max(wanted):
                break
            x, extracted = heavy_layer_forward(x, layer, mask, self._config.fusion_location,
                                               self._p_drop, self._rng)
            if i in wanted:
                out[i] = extracted * keep
        self._heavy_forwards[kind] += 1
        return out

    def _fuse_fn(self, layer_idx: int, heavy_c: Tensor, heavy_a: Tensor, heavy_mask) -> Hook:
        cfg = self._config
        fp = self.fusion[layer_idx]
        if cfg.fusion_method is FusionMethod.FIXED_ALPHA:
            return lambda y: fuse_linear(y, heavy_c, heavy_a, fp.adaptor, cfg.alpha)
        if cfg.fusion_method is FusionMethod.LEARNED_ALPHA:
            return lambda y: fuse_learned_alpha(y, heavy_c, heavy_a, fp.adaptor, fp.learned_alpha)
        return lambda y: fuse_cross_attention(y, heavy_c, heavy_a, fp.adaptor, fp.cross_attn,
                                              heavy_mask)

    def light_states(self, ctx_ids, attr_ids, ctx_mask, attr_mask,
                     heavy_c: dict[int, Tensor] | None,
                     heavy_a: dict[int, Tensor] | None) -> Tensor:
        """Light encoder over ``context + attribute``; ``heavy_c=None`` disables fusion."""
        cfg = self._config
        ids = np.concatenate([np.asarray(ctx_ids), np.asarray(attr_ids)], axis=-1)
        mask = np.concatenate([np.asarray(ctx_mask, bool), np.asarray(attr_mask, bool)], axis=-1)
        x = self._embed(self.light, ids)
        for l, layer in enumerate(self.light.layers):
            fuse = None
            if heavy_c is not None:
                src = self._mapping[l]
                if src not in heavy_c or src not in heavy_a:
                    raise MissingLayerError(f"heavy layer {src} is missing for light layer {l}")
                fuse = self._fuse_fn(l, heavy_c[src], heavy_a[src], mask)
            x = light_layer_forward(x, layer, fuse, cfg.fusion_location, cfg.mlp_input_mode,
                                    mask, self._p_drop, self._rng)
        return rms_norm(x, self.light.final_norm)

    def logits(self, ctx_ids, attr_ids, ctx_mask, attr_mask, use_heavy: bool = True) -> Tensor:
        """End-to-end tag logits ``[.., S_c, 3]`` with a fresh heavy pass."""
        heavy_c = heavy_a = None
        if use_heavy:
            heavy_c = self.heavy_states(ctx_ids, ctx_mask)
            heavy_a = self.heavy_states(attr_ids, attr_mask, RepKind.ATTRIBUTE)
        states = self.light_states(ctx_ids, attr_ids, ctx_mask, attr_mask, heavy_c, heavy_a)
        from .tagging import tag_logits

        return tag_logits(states, self.head, self._config.context_len)

    def logits_from_reps(self, ctx_ids, attr_ids, reps_c: HeavyReps, reps_a: HeavyReps) -> Tensor:
        """Tag logits for one example from (possibly cached) heavy reps."""
        states = light_encode(ctx_ids, attr_ids, reps_c, reps_a, self)
        from .tagging import tag_logits

        return tag_logits(states, self.head, self._config.context_len)


def heavy_encode(tokens, kind: str, model: EaveModel, fingerprint: int | None = None) -> HeavyReps:
    """Encode one padded token sequence with the heavy encoder."""
    cfg = model.config
    expected = cfg.context_len if kind == RepKind.CONTEXT else cfg.attribute_len
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.shape[0] != expected:
        raise ValueError(f"{kind} tokens must be padded to length {expected}, got {tokens.shape}")
    mask = tokens != 0
    if not mask.any():
        raise ValueError(f"{kind} sequence has no non-pad tokens")
    states = model.heavy_states(tokens, mask, kind)
    per_layer = {i: t.data.astype(np.float32, copy=True) for i, t in states.items()}
    fp = model.fingerprint() if fingerprint is None else fingerprint
    return HeavyReps(kind=kind, fingerprint=fp, per_layer=per_layer, seq_len=expected, mask=mask)


def light_encode(context_tokens, attribute_tokens, reps_c: HeavyReps, reps_a: HeavyReps,
                 model: EaveModel, fingerprint: int | None = None) -> Tensor:
    """Light encoder over one example, fused with cached heavy reps."""
    fp = model.fingerprint() if fingerprint is None else fingerprint
    for reps in (reps_c, reps_a):
        if reps.fingerprint != fp:
            raise StaleCacheError(
                f"{reps.kind} reps fingerprint {reps.fingerprint:016x} != model {fp:016x}"
            )
    ctx = np.asarray(context_tokens, dtype=np.int64)
    attr = np.asarray(attribute_tokens, dtype=np.int64)
    cfg = model.config
    if ctx.shape[-1] != cfg.context_len or attr.shape[-1] != cfg.attribute_len:
        raise ValueError("context/attribute tokens do not match the configured lengths")
    dtype = model.light.tok_emb.dtype
    heavy_c = {i: Tensor(reps_c.layer(i).astype(dtype)) for i in set(model.mapping)}
    heavy_a = {i: Tensor(reps_a.layer(i).astype(dtype)) for i in set(model.mapping)}
    return model.light_states(ctx, attr, ctx != 0, attr != 0, heavy_c, heavy_a)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: EaveModel, path, extra: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON metadata, named float32 tensors."""
    meta = {"config": model.config.to_dict()}
    if extra:
        meta.update(extra)
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    params = list(model.named_parameters())
    buf.write(struct.pack("<I", len(params)))
    for name, p in params:
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[EaveModel, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an EAVE checkpoint (bad magic)")
    pos = 8
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta = json.loads(raw[pos:pos + mlen])
    pos += mlen
    model = EaveModel(EaveConfig.from_dict(meta["config"]))
    params = dict(model.named_parameters())
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        if name not in params or params[name].shape != tuple(shape):
            raise ValueError(f"{path}: unexpected parameter {name} {shape}")
        params[name].data = data.astype(np.float32)
    return model, meta
