"""Pointer-generator encoder-decoder, implemented directly on numpy.

Architecture: source embeddings -> bidirectional LSTM encoder -> affine
bridge to the decoder's initial state -> LSTM decoder with input feeding and
additive global attention -> a generation softmax over the target vocabulary
mixed with a copy distribution over source positions through a learned gate:

    P(w) = p_gen * P_generate(w) + (1 - p_gen) * sum_{i: surface(i)=w} attn_i

The mixture lives in a per-sample extended id space (target vocabulary plus
temporary copy indices), so the decoder can emit source tokens the generator
cannot.  Gradients are hand-derived and checked against central finite
differences in the test suite.

Training runs in single precision; gradient checks use double.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..storage import atomic_write_bytes

CHECKPOINT_MAGIC = b"RVFXCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    source_vocab_size: int
    target_vocab_size: int
    embed_dim: int = 256
    encoder_hidden: int = 128  # per direction
    decoder_hidden: int = 256  # must be 2 * encoder_hidden (bridge compatibility)
    max_source_len: int = 600
    max_target_len: int = 100
    coverage_enabled: bool = False
    coverage_weight: float = 1.0
    dropout: float = 0.0
    seed: int = 0
    precision: str = "single"

    def __post_init__(self):
        for name in (
            "source_vocab_size",
            "target_vocab_size",
            "embed_dim",
            "encoder_hidden",
            "decoder_hidden",
            "max_source_len",
            "max_target_len",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.decoder_hidden != 2 * self.encoder_hidden:
            raise ValueError("decoder_hidden must equal 2 * encoder_hidden")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def to_dict(self) -> dict:
        return {
            "source_vocab_size": self.source_vocab_size,
            "target_vocab_size": self.target_vocab_size,
            "embed_dim": self.embed_dim,
            "encoder_hidden": self.encoder_hidden,
            "decoder_hidden": self.decoder_hidden,
            "max_source_len": self.max_source_len,
            "max_target_len": self.max_target_len,
            "coverage_enabled": self.coverage_enabled,
            "coverage_weight": self.coverage_weight,
            "dropout": self.dropout,
            "seed": self.seed,
            "precision": self.precision,
        }


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def init_parameters(config: ModelConfig) -> Dict[str, np.ndarray]:
    """Uniform [-0.1, 0.1] weights, zero biases, seeded."""
    rng = np.random.default_rng(config.seed)
    E = config.embed_dim
    H = config.encoder_hidden
    D = config.decoder_hidden
    A = D
    Vs = config.source_vocab_size
    Vt = config.target_vocab_size
    dt = config.dtype

    def uni(*shape):
        return rng.uniform(-0.1, 0.1, size=shape).astype(dt)

    def zeros(*shape):
        return np.zeros(shape, dtype=dt)

    params = {
        "src_embed": uni(Vs, E),
        "tgt_embed": uni(Vt, E),
        "enc_fwd_Wx": uni(E, 4 * H),
        "enc_fwd_Wh": uni(H, 4 * H),
        "enc_fwd_b": zeros(4 * H),
        "enc_bwd_Wx": uni(E, 4 * H),
        "enc_bwd_Wh": uni(H, 4 * H),
        "enc_bwd_b": zeros(4 * H),
        "bridge_h_W": uni(2 * H, D),
        "bridge_h_b": zeros(D),
        "bridge_c_W": uni(2 * H, D),
        "bridge_c_b": zeros(D),
        "dec_Wx": uni(E + D, 4 * D),
        "dec_Wh": uni(D, 4 * D),
        "dec_b": zeros(4 * D),
        "attn_Wq": uni(D, A),
        "attn_Wk": uni(2 * H, A),
        "attn_b": zeros(A),
        "attn_v": uni(A),
        "out_W": uni(D + 2 * H, D),
        "out_b": zeros(D),
        "gen_W": uni(D, Vt),
        "gen_b": zeros(Vt),
        "copy_w": uni(D),
        "copy_b": zeros(1),
    }
    if config.coverage_enabled:
        params["cov_w"] = uni(A)
    return params


@dataclass
class Batch:
    src: np.ndarray  # (B,S) int source-vocab ids
    src_mask: np.ndarray  # (B,S) 1.0 at real positions
    src_ext: np.ndarray  # (B,S) extended ids (target vocab or copy index)
    ext_size: int  # copy indices in this batch: [Vt, Vt+ext_size)
    tgt_in: np.ndarray  # (B,T) decoder inputs (START + shifted gold, UNK-clipped)
    tgt_out: np.ndarray  # (B,T) gold extended ids, END-terminated
    tgt_mask: np.ndarray  # (B,T)

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(
    samples: Sequence,
    pad_id: int,
    unk_id: int,
    start_id: int,
    end_id: int,
    target_vocab_size: int,
    dtype=np.float32,
) -> Batch:
    """Pad EncodedSamples to a rectangular batch."""
    if not samples:
        raise ValueError("empty batch")
    B = len(samples)
    S = max(1, max(len(s.src_ids) for s in samples))
    T = max(1, max(len(s.tgt_ext_ids) + 1 for s in samples))
    src = np.full((B, S), pad_id, dtype=np.int64)
    src_mask = np.zeros((B, S), dtype=dtype)
    src_ext = np.full((B, S), pad_id, dtype=np.int64)
    tgt_in = np.full((B, T), pad_id, dtype=np.int64)
    tgt_out = np.full((B, T), pad_id, dtype=np.int64)
    tgt_mask = np.zeros((B, T), dtype=dtype)
    ext_size = 0
    for b, s in enumerate(samples):
        n = len(s.src_ids)
        src[b, :n] = s.src_ids
        src_mask[b, :n] = 1.0
        src_ext[b, :n] = s.src_ext_ids
        ext_size = max(ext_size, len(s.ext_surfaces))
        gold = list(s.tgt_ext_ids) + [end_id]
        m = len(gold)
        tgt_out[b, :m] = gold
        ins = [start_id] + [g if g < target_vocab_size else unk_id for g in s.tgt_ext_ids]
        tgt_in[b, : len(ins)] = ins
        tgt_mask[b, :m] = 1.0
    return Batch(src, src_mask, src_ext, ext_size, tgt_in, tgt_out, tgt_mask)


@dataclass
class EncoderOutput:
    enc_h: np.ndarray  # (B,S,2H)
    keys: np.ndarray  # (B,S,A) projected attention keys
    src_mask: np.ndarray  # (B,S)
    src_ext: np.ndarray  # (B,S)
    ext_size: int
    dec_h0: np.ndarray  # (B,D)
    dec_c0: np.ndarray  # (B,D)
    cache: Optional[dict] = None


@dataclass
class DecoderState:
    h: np.ndarray  # (B,D)
    c: np.ndarray  # (B,D)
    feed: np.ndarray  # (B,D) previous attentional vector
    cov: Optional[np.ndarray]  # (B,S) attention history, coverage mode only

    def select(self, rows: Sequence[int]) -> "DecoderState":
        idx = np.asarray(rows, dtype=np.int64)
        return DecoderState(
            self.h[idx].copy(),
            self.c[idx].copy(),
            self.feed[idx].copy(),
            None if self.cov is None else self.cov[idx].copy(),
        )


class PointerGenerator:
    def __init__(self, config: ModelConfig, params: Optional[Dict[str, np.ndarray]] = None):
        self.config = config
        self.params = params if params is not None else init_parameters(config)

    # -- helpers -----------------------------------------------------------

    def _lstm_dir(self, X, mask, prefix):
        """Run one encoder direction; X already ordered in processing order."""
        P = self.params
        B, S, _ = X.shape
        H = self.config.encoder_hidden
        XW = X.reshape(B * S, -1) @ P[f"{prefix}_Wx"]
        XW = XW.reshape(B, S, 4 * H)
        h = np.zeros((B, H), dtype=X.dtype)
        c = np.zeros((B, H), dtype=X.dtype)
        states = np.empty((S, B, H), dtype=X.dtype)
        cache = {"i": [], "f": [], "g": [], "o": [], "tc": [], "c_prev": [], "h_prev": []}
        Wh = P[f"{prefix}_Wh"]
        b = P[f"{prefix}_b"]
        for t in range(S):
            z = XW[:, t] + h @ Wh + b
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = _sigmoid(z[:, 3 * H :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            m = mask[:, t][:, None]
            cache["i"].append(i)
            cache["f"].append(f)
            cache["g"].append(g)
            cache["o"].append(o)
            cache["tc"].append(tc)
            cache["c_prev"].append(c)
            cache["h_prev"].append(h)
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            states[t] = h
        return states, h, c, cache

    def _lstm_dir_backward(self, dstates, dh_final, dc_final, X, mask, prefix, cache):
        """Mirror of _lstm_dir; returns (dX, grads dict)."""
        P = self.params
        B, S, _ = X.shape
        H = self.config.encoder_hidden
        Wh = P[f"{prefix}_Wh"]
        dh = dh_final.copy()
        dc = dc_final.copy()
        DZ = np.empty((S, B, 4 * H), dtype=X.dtype)
        for t in range(S - 1, -1, -1):
            m = mask[:, t][:, None]
            dh_t = dh + dstates[t]
            dh_new = m * dh_t
            dh_prev = (1.0 - m) * dh_t
            dc_new = m * dc
            dc_prev_mask = (1.0 - m) * dc
            i = cache["i"][t]
            f = cache["f"][t]
            g = cache["g"][t]
            o = cache["o"][t]
            tc = cache["tc"][t]
            c_prev = cache["c_prev"][t]
            do = dh_new * tc
            dci = dc_new + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dci * g * i * (1.0 - i),
                    dci * c_prev * f * (1.0 - f),
                    dci * i * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            DZ[t] = dz
            dh = dh_prev + dz @ Wh.T
            dc = dc_prev_mask + dci * f
        DZ_flat = DZ.transpose(1, 0, 2).reshape(B * S, 4 * H)
        X_flat = X.reshape(B * S, -1)
        Hprev = np.stack(cache["h_prev"], axis=0).transpose(1, 0, 2).reshape(B * S, H)
        grads = {
            f"{prefix}_Wx": X_flat.T @ DZ_flat,
            f"{prefix}_Wh": Hprev.T @ DZ_flat,
            f"{prefix}_b": DZ_flat.sum(axis=0),
        }
        dX = (DZ_flat @ P[f"{prefix}_Wx"].T).reshape(B, S, -1)
        return dX, grads

    # -- encoder -----------------------------------------------------------

    def encode(
        self,
        src: np.ndarray,
        src_mask: np.ndarray,
        src_ext: np.ndarray,
        ext_size: int,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
        keep_cache: bool = False,
    ) -> EncoderOutput:
        cfg = self.config
        P = self.params
        src = np.asarray(src, dtype=np.int64)
        if src.ndim != 2:
            raise ValueError("src must be (batch, length)")
        if src.shape[1] > cfg.max_source_len:
            raise ValueError(f"source length {src.shape[1]} exceeds {cfg.max_source_len}")
        if src.min() < 0 or src.max() >= cfg.source_vocab_size:
            raise ValueError("source id out of range")
        B, S = src.shape
        dt = cfg.dtype
        src_mask = np.asarray(src_mask, dtype=dt)

        X = P["src_embed"][src]
        drop_mask = None
        if train and cfg.dropout > 0.0:
            if rng is None:
                raise ValueError("training mode needs an rng for dropout")
            keep = 1.0 - cfg.dropout
            drop_mask = (rng.random(X.shape) < keep).astype(dt) / keep
            X = X * drop_mask

        fwd_states, hf, cf, fwd_cache = self._lstm_dir(X, src_mask, "enc_fwd")
        Xr = X[:, ::-1]
        mr = src_mask[:, ::-1]
        bwd_states_r, hb, cb, bwd_cache = self._lstm_dir(Xr, mr, "enc_bwd")
        bwd_states = bwd_states_r[::-1]
        enc_h = np.concatenate(
            [fwd_states.transpose(1, 0, 2), bwd_states.transpose(1, 0, 2)], axis=2
        )  # (B,S,2H)

        cat_h = np.concatenate([hf, hb], axis=1)
        cat_c = np.concatenate([cf, cb], axis=1)
        dec_h0 = np.tanh(cat_h @ P["bridge_h_W"] + P["bridge_h_b"])
        dec_c0 = np.tanh(cat_c @ P["bridge_c_W"] + P["bridge_c_b"])
        keys = (enc_h.reshape(B * S, -1) @ P["attn_Wk"]).reshape(B, S, -1)

        cache = None
        if keep_cache:
            cache = {
                "X": X,
                "drop_mask": drop_mask,
                "src": src,
                "fwd_cache": fwd_cache,
                "bwd_cache": bwd_cache,
                "cat_h": cat_h,
                "cat_c": cat_c,
                "dec_h0": dec_h0,
                "dec_c0": dec_c0,
            }
        return EncoderOutput(
            enc_h=enc_h,
            keys=keys,
            src_mask=src_mask,
            src_ext=np.asarray(src_ext, dtype=np.int64),
            ext_size=ext_size,
            dec_h0=dec_h0,
            dec_c0=dec_c0,
            cache=cache,
        )

    def encode_batch(self, batch: Batch, train: bool = False, rng=None, keep_cache=False):
        return self.encode(
            batch.src, batch.src_mask, batch.src_ext, batch.ext_size, train, rng, keep_cache
        )

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        B, S, _ = enc.enc_h.shape
        dt = self.config.dtype
        cov = np.zeros((B, S), dtype=dt) if self.config.coverage_enabled else None
        return DecoderState(
            h=enc.dec_h0.copy(),
            c=enc.dec_c0.copy(),
            feed=np.zeros((B, self.config.decoder_hidden), dtype=dt),
            cov=cov,
        )

    # -- one decode step (shared by inference and the training loop) --------

    def _step_core(self, state: DecoderState, emb, feed_used, enc: EncoderOutput):
        """All forward math of one decoder step; returns tensors + locals."""
        P = self.params
        cfg = self.config
        D = cfg.decoder_hidden
        x = np.concatenate([emb, feed_used], axis=1)
        z = x @ P["dec_Wx"] + state.h @ P["dec_Wh"] + P["dec_b"]
        i = _sigmoid(z[:, :D])
        f = _sigmoid(z[:, D : 2 * D])
        g = np.tanh(z[:, 2 * D : 3 * D])
        o = _sigmoid(z[:, 3 * D :])
        c = f * state.c + i * g
        tc = np.tanh(c)
        s = o * tc

        q = s @ P["attn_Wq"]
        upre = q[:, None, :] + enc.keys + P["attn_b"]
        if cfg.coverage_enabled:
            upre = upre + state.cov[:, :, None] * P["cov_w"][None, None, :]
        u = np.tanh(upre)
        e = u @ P["attn_v"]
        e = e + (enc.src_mask - 1.0) * 1e9
        a = _softmax(e, axis=1)
        ctx = np.einsum("bs,bsh->bh", a, enc.enc_h)
        cat = np.concatenate([s, ctx], axis=1)
        ho = np.tanh(cat @ P["out_W"] + P["out_b"])
        logits = ho @ P["gen_W"] + P["gen_b"]
        p_vocab = _softmax(logits, axis=1)
        p_gen = _sigmoid(ho @ P["copy_w"] + P["copy_b"][0])
        return {
            "i": i,
            "f": f,
            "g": g,
            "o": o,
            "tc": tc,
            "c": c,
            "s": s,
            "u": u,
            "a": a,
            "ctx": ctx,
            "cat": cat,
            "ho": ho,
            "p_vocab": p_vocab,
            "p_gen": p_gen,
        }

    def decode_step(
        self, state: DecoderState, prev_ids: np.ndarray, enc: EncoderOutput
    ) -> Tuple[np.ndarray, np.ndarray, DecoderState]:
        """One inference step.

        Returns (extended distribution (B, Vt+ext_size), attention weights
        (B, S), next state).  ``prev_ids`` may be extended ids; copy indices
        are embedded as UNK.
        """
        cfg = self.config
        Vt = cfg.target_vocab_size
        prev = np.asarray(prev_ids, dtype=np.int64)
        prev_clipped = np.where(prev < Vt, prev, 1)  # UNK embedding for copies
        emb = self.params["tgt_embed"][prev_clipped]
        t = self._step_core(state, emb, state.feed, enc)
        B = prev.shape[0]
        dist = np.zeros((B, Vt + enc.ext_size), dtype=cfg.dtype)
        dist[:, :Vt] = t["p_gen"][:, None] * t["p_vocab"]
        copy_w = (1.0 - t["p_gen"])[:, None] * t["a"]
        np.add.at(dist, (np.arange(B)[:, None], enc.src_ext), copy_w)
        new_cov = None
        if cfg.coverage_enabled:
            new_cov = state.cov + t["a"]
        new_state = DecoderState(h=t["s"], c=t["c"], feed=t["ho"], cov=new_cov)
        return dist, t["a"], new_state

    # -- teacher-forced loss and gradients -----------------------------------

    def forward_loss(
        self, batch: Batch, train: bool = False, rng: Optional[np.random.Generator] = None
    ) -> Tuple[float, dict]:
        cfg = self.config
        P = self.params
        if batch.size == 0:
            raise ValueError("empty batch")
        dt = cfg.dtype
        enc = self.encode_batch(batch, train=train, rng=rng, keep_cache=True)
        B, T = batch.tgt_in.shape
        S = batch.src.shape[1]
        Vt = cfg.target_vocab_size
        lam = cfg.coverage_weight

        emb = P["tgt_embed"][batch.tgt_in]
        demb_mask = None
        feed_masks = None
        if train and cfg.dropout > 0.0:
            keep = 1.0 - cfg.dropout
            demb_mask = (rng.random(emb.shape) < keep).astype(dt) / keep
            emb = emb * demb_mask
            feed_masks = (
                rng.random((T, B, cfg.decoder_hidden)) < keep
            ).astype(dt) / keep

        state = self.initial_state(enc)
        steps = []
        Z = float(batch.tgt_mask.sum())
        nll_sum = 0.0
        cov_sum = 0.0
        rows = np.arange(B)
        for t in range(T):
            feed_used = state.feed if feed_masks is None else state.feed * feed_masks[t]
            loc = self._step_core(state, emb[:, t], feed_used, enc)
            gold = batch.tgt_out[:, t]
            m = batch.tgt_mask[:, t]
            in_vocab = gold < Vt
            gen_gold = np.where(in_vocab, loc["p_vocab"][rows, np.minimum(gold, Vt - 1)], 0.0)
            match = (enc.src_ext == gold[:, None]).astype(dt)
            copy_gold = (loc["a"] * match).sum(axis=1)
            p_gold = loc["p_gen"] * gen_gold + (1.0 - loc["p_gen"]) * copy_gold
            p_safe = np.where(m > 0, p_gold, 1.0)
            with np.errstate(divide="ignore"):  # p=0 -> inf loss signals divergence
                nll_sum += float(-(np.log(p_safe) * m).sum())
            cov_prev = state.cov
            if cfg.coverage_enabled:
                cov_sum += float((np.minimum(loc["a"], cov_prev).sum(axis=1) * m).sum())
                new_cov = cov_prev + loc["a"] * m[:, None]
            else:
                new_cov = None
            steps.append(
                {
                    "loc": loc,
                    "gold": gold,
                    "m": m,
                    "in_vocab": in_vocab,
                    "gen_gold": gen_gold,
                    "match": match,
                    "copy_gold": copy_gold,
                    "p_gold": p_safe,
                    "h_prev": state.h,
                    "c_prev": state.c,
                    "feed_used": feed_used,
                    "cov_prev": cov_prev,
                }
            )
            state = DecoderState(h=loc["s"], c=loc["c"], feed=loc["ho"], cov=new_cov)
        if Z == 0:
            loss = 0.0
        else:
            loss = nll_sum / Z + (lam * cov_sum / Z if cfg.coverage_enabled else 0.0)
        cache = {
            "enc": enc,
            "steps": steps,
            "emb": emb,
            "demb_mask": demb_mask,
            "feed_masks": feed_masks,
            "batch": batch,
            "Z": Z,
        }
        return loss, cache

    def loss(self, batch: Batch) -> float:
        value, _ = self.forward_loss(batch, train=False)
        return value

    def backward(self, cache: dict) -> Dict[str, np.ndarray]:
        cfg = self.config
        P = self.params
        batch: Batch = cache["batch"]
        enc: EncoderOutput = cache["enc"]
        steps = cache["steps"]
        Z = cache["Z"]
        grads = {k: np.zeros_like(v) for k, v in P.items()}
        B, T = batch.tgt_in.shape
        S = batch.src.shape[1]
        D = cfg.decoder_hidden
        E = cfg.embed_dim
        Vt = cfg.target_vocab_size
        dt = cfg.dtype
        rows = np.arange(B)
        if Z == 0:
            return grads
        lam = cfg.coverage_weight

        denc_h = np.zeros_like(enc.enc_h)
        dK = np.zeros_like(enc.keys)
        ds_carry = np.zeros((B, D), dtype=dt)
        dc_carry = np.zeros((B, D), dtype=dt)
        dfeed_carry = np.zeros((B, D), dtype=dt)
        dcov_carry = np.zeros((B, S), dtype=dt) if cfg.coverage_enabled else None
        DZ = np.empty((T, B, 4 * D), dtype=dt)

        for t in range(T - 1, -1, -1):
            st = steps[t]
            loc = st["loc"]
            m = st["m"]
            a = loc["a"]
            p_gen = loc["p_gen"]
            p_vocab = loc["p_vocab"]
            ho = loc["ho"]
            u = loc["u"]
            s = loc["s"]
            # mixture NLL
            v_b = np.where(m > 0, -m / (Z * st["p_gold"]), 0.0)
            dpg = v_b * (st["gen_gold"] - st["copy_gold"])
            dgen_gold = v_b * p_gen
            dcopy_gold = v_b * (1.0 - p_gen)
            # generator softmax (sparse upstream at the gold column)
            dot = dgen_gold * st["gen_gold"]
            dlogits = -p_vocab * dot[:, None]
            iv = st["in_vocab"]
            gold_cols = np.minimum(st["gold"], Vt - 1)
            dlogits[rows[iv], gold_cols[iv]] += (
                p_vocab[rows[iv], gold_cols[iv]] * dgen_gold[iv]
            )
            # attention receives the copy share plus coverage paths
            da = dcopy_gold[:, None] * st["match"]
            if cfg.coverage_enabled:
                cov_prev = st["cov_prev"]
                da += dcov_carry * m[:, None]  # cov_{t+1} = cov_t + m * a_t
                sel_a = (a < cov_prev).astype(dt)
                scale = (lam / Z) * m
                da += scale[:, None] * sel_a
                dcov_total = dcov_carry + scale[:, None] * (1.0 - sel_a)
            # p_gen gate
            dpg_pre = dpg * p_gen * (1.0 - p_gen)
            dho = dlogits @ P["gen_W"].T + dpg_pre[:, None] * P["copy_w"][None, :]
            dho += dfeed_carry
            grads["gen_W"] += ho.T @ dlogits
            grads["gen_b"] += dlogits.sum(axis=0)
            grads["copy_w"] += (ho * dpg_pre[:, None]).sum(axis=0)
            grads["copy_b"][0] += dpg_pre.sum()
            # attentional output layer
            dcat_pre = dho * (1.0 - ho * ho)
            grads["out_W"] += loc["cat"].T @ dcat_pre
            grads["out_b"] += dcat_pre.sum(axis=0)
            dcat = dcat_pre @ P["out_W"].T
            ds = dcat[:, :D].copy()
            dctx = dcat[:, D:]
            da += np.einsum("bh,bsh->bs", dctx, enc.enc_h)
            denc_h += a[:, :, None] * dctx[:, None, :]
            # attention softmax and scorer
            de = a * (da - (da * a).sum(axis=1, keepdims=True))
            grads["attn_v"] += np.einsum("bs,bsk->k", de, u)
            du = de[:, :, None] * P["attn_v"][None, None, :]
            dupre = du * (1.0 - u * u)
            dq = dupre.sum(axis=1)
            dK += dupre
            grads["attn_b"] += dupre.sum(axis=(0, 1))
            if cfg.coverage_enabled:
                dcov_total += np.einsum("bsk,k->bs", dupre, P["cov_w"])
                grads["cov_w"] += np.einsum("bsk,bs->k", dupre, st["cov_prev"])
                dcov_carry = dcov_total
            grads["attn_Wq"] += s.T @ dq
            ds += dq @ P["attn_Wq"].T
            ds += ds_carry
            # decoder LSTM cell
            i, f, g, o, tc = loc["i"], loc["f"], loc["g"], loc["o"], loc["tc"]
            do = ds * tc
            dci = dc_carry + ds * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dci * g * i * (1.0 - i),
                    dci * st["c_prev"] * f * (1.0 - f),
                    dci * i * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            DZ[t] = dz
            dx = dz @ P["dec_Wx"].T
            dfeed_carry = dx[:, E:]
            if cache["feed_masks"] is not None:
                dfeed_carry = dfeed_carry * cache["feed_masks"][t]
            ds_carry = dz @ P["dec_Wh"].T
            dc_carry = dci * f

        # decoder weight grads from the stacked per-step pieces
        DZ_flat = DZ.transpose(1, 0, 2).reshape(B * T, 4 * D)
        emb_flat = cache["emb"].reshape(B * T, E)
        feed_used = np.stack([st["feed_used"] for st in steps], axis=0)
        feed_flat = feed_used.transpose(1, 0, 2).reshape(B * T, D)
        x_flat = np.concatenate([emb_flat, feed_flat], axis=1)
        grads["dec_Wx"] += x_flat.T @ DZ_flat
        hprev_flat = (
            np.stack([st["h_prev"] for st in steps], axis=0).transpose(1, 0, 2).reshape(B * T, D)
        )
        grads["dec_Wh"] += hprev_flat.T @ DZ_flat
        grads["dec_b"] += DZ_flat.sum(axis=0)
        demb = (DZ_flat @ P["dec_Wx"][:E].T).reshape(B, T, E)
        if cache["demb_mask"] is not None:
            demb = demb * cache["demb_mask"]
        np.add.at(grads["tgt_embed"], batch.tgt_in, demb)

        # bridge
        ecache = enc.cache
        ddec_h0 = ds_carry
        ddec_c0 = dc_carry
        # the first step's feed is all zeros, so dfeed_carry stops here
        dpre_h = ddec_h0 * (1.0 - ecache["dec_h0"] ** 2)
        grads["bridge_h_W"] += ecache["cat_h"].T @ dpre_h
        grads["bridge_h_b"] += dpre_h.sum(axis=0)
        dcat_h = dpre_h @ P["bridge_h_W"].T
        dpre_c = ddec_c0 * (1.0 - ecache["dec_c0"] ** 2)
        grads["bridge_c_W"] += ecache["cat_c"].T @ dpre_c
        grads["bridge_c_b"] += dpre_c.sum(axis=0)
        dcat_c = dpre_c @ P["bridge_c_W"].T
        H = cfg.encoder_hidden
        dhf_final, dhb_final = dcat_h[:, :H], dcat_h[:, H:]
        dcf_final, dcb_final = dcat_c[:, :H], dcat_c[:, H:]

        # attention keys projection
        BS = B * S
        dK_flat = dK.reshape(BS, -1)
        grads["attn_Wk"] += enc.enc_h.reshape(BS, -1).T @ dK_flat
        denc_h += (dK_flat @ P["attn_Wk"].T).reshape(B, S, -1)

        # split into directions and run encoder BPTT
        X = ecache["X"]
        src_mask = enc.src_mask
        dfwd = denc_h[:, :, :H].transpose(1, 0, 2)  # (S,B,H)
        dbwd = denc_h[:, :, H:].transpose(1, 0, 2)
        dX_f, g_f = self._lstm_dir_backward(
            dfwd, dhf_final, dcf_final, X, src_mask, "enc_fwd", ecache["fwd_cache"]
        )
        dbwd_r = dbwd[::-1]
        dX_b_r, g_b = self._lstm_dir_backward(
            dbwd_r, dhb_final, dcb_final, X[:, ::-1], src_mask[:, ::-1], "enc_bwd",
            ecache["bwd_cache"],
        )
        dX = dX_f + dX_b_r[:, ::-1]
        for k, v in g_f.items():
            grads[k] += v
        for k, v in g_b.items():
            grads[k] += v
        if ecache["drop_mask"] is not None:
            dX = dX * ecache["drop_mask"]
        np.add.at(grads["src_embed"], ecache["src"], dX)
        return grads

    def loss_and_grads(self, batch: Batch, train: bool = False, rng=None):
        value, cache = self.forward_loss(batch, train=train, rng=rng)
        return value, self.backward(cache)


# ---------------------------------------------------------------------------
# Checkpoint container: fixed-layout binary, no timestamps, so identical
# parameters serialize to identical bytes.


def save_checkpoint(path: Path, model: PointerGenerator) -> None:
    names = sorted(model.params)
    arrays = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(model.params[name])
        arrays.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
                "offset": offset,
                "nbytes": arr.nbytes,
            }
        )
        offset += arr.nbytes
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "arrays": arrays,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for name in names:
        blob += np.ascontiguousarray(model.params[name]).tobytes()
    atomic_write_bytes(Path(path), bytes(blob))


def load_checkpoint(path: Path) -> PointerGenerator:
    data = Path(path).read_bytes()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {header.get('version')}")
    pos += hlen
    config = ModelConfig(**header["config"])
    params = {}
    for spec in header["arrays"]:
        raw = data[pos + spec["offset"] : pos + spec["offset"] + spec["nbytes"]]
        params[spec["name"]] = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(
            spec["shape"]
        ).copy()
    return PointerGenerator(config, params)
