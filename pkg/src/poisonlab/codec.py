"""Auto-encoder that compresses a behaviour trace into a 5-d latent vector.

The encoder sees the whole trace as a numeric vector. The decoder gets the
latent vector plus a normalized ``(row, col)`` state position and predicts
the action taken in that state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridworld import N_ACTIONS, GridSpec, GridWorld
from .nn import Adam, Mlp
from .victim import NO_ACTION, BehaviorTrace, VictimParams, train_and_trace

LATENT_DIM = 5
HIDDEN = (36, 36)
# symbol code per action index, last entry is the no-action symbol
SYMBOL_CODES = np.array([0.2, 0.4, 0.6, 0.8, 0.0])


def trace_to_vector(trace: BehaviorTrace) -> np.ndarray:
    return SYMBOL_CODES[trace.symbols]  # index -1 picks the no-action code


def state_features(spec: GridSpec) -> np.ndarray:
    """Normalized ``(row, col)`` for every cell, shape ``M x 2``."""
    rows, cols = np.divmod(np.arange(spec.n_cells), spec.width)
    r = rows / max(spec.height - 1, 1)
    c = cols / max(spec.width - 1, 1)
    return np.stack([r, c], axis=1).astype(np.float64)


@dataclass
class Codec:
    encoder: Mlp
    decoder: Mlp
    spec: GridSpec

    @classmethod
    def create(cls, spec: GridSpec, rng: np.random.Generator) -> "Codec":
        m = spec.n_cells
        enc = Mlp([m, *HIDDEN, LATENT_DIM], ["relu", "relu", "identity"], rng)
        dec = Mlp([LATENT_DIM + 2, *HIDDEN, N_ACTIONS], ["relu", "relu", "softmax"], rng)
        return cls(enc, dec, spec)

    @property
    def grid_m(self) -> int:
        return self.encoder.dims[0]

    def encode(self, trace: BehaviorTrace) -> np.ndarray:
        if len(trace) != self.grid_m:
            raise ValueError(f"trace has {len(trace)} states, codec expects {self.grid_m}")
        return self.encoder.forward(trace_to_vector(trace))

    def decode(self, phi, state: int) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (LATENT_DIM,):
            raise ValueError("latent vector must have 5 components")
        feat = state_features(self.spec)[state]
        return self.decoder.forward(np.concatenate([phi, feat]))

    def reconstruct(self, trace: BehaviorTrace) -> np.ndarray:
        """Argmax action per state (all states, visited or not)."""
        phi = self.encode(trace)
        feats = state_features(self.spec)
        x = np.hstack([np.repeat(phi[None, :], self.grid_m, axis=0), feats])
        return np.argmax(self.decoder.forward(x), axis=1)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.encoder.save(d / "encoder.w")
        self.decoder.save(d / "decoder.w")
        s = self.spec
        meta = {"latent_dim": LATENT_DIM, "grid_m": self.grid_m,
                "width": s.width, "height": s.height}
        (d / "codec.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, directory, spec: GridSpec | None = None) -> "Codec":
        d = Path(directory)
        meta = json.loads((d / "codec.json").read_text())
        if meta["latent_dim"] != LATENT_DIM:
            raise ValueError("unsupported latent dimension")
        if spec is None:
            spec = GridSpec(width=meta["width"], height=meta["height"])
        if spec.n_cells != meta["grid_m"]:
            raise ValueError("codec grid size does not match the grid spec")
        return cls(Mlp.load(d / "encoder.w"), Mlp.load(d / "decoder.w"), spec)


def reconstruction_accuracy(codec: Codec, traces) -> float:
    """Exact-match rate of argmax reconstruction over visited states only."""
    hits = total = 0
    for tr in traces:
        mask = tr.visited
        if not mask.any():
            continue
        pred = codec.reconstruct(tr)
        hits += int(np.sum(pred[mask] == tr.symbols[mask]))
        total += int(mask.sum())
    if total == 0:
        raise ValueError("no visited states to score")
    return hits / total


def _batch_loss_and_grads(codec: Codec, symbols: np.ndarray, feats: np.ndarray):
    """Mean cross-entropy over visited states of a batch of traces, with gradients."""
    x = SYMBOL_CODES[symbols]
    phi, enc_cache = codec.encoder.forward_cache(x)
    tr_idx, st_idx = np.nonzero(symbols != NO_ACTION)
    n = len(tr_idx)
    if n == 0:
        return 0.0, None, None
    dec_in = np.hstack([phi[tr_idx], feats[st_idx]])
    probs, dec_cache = codec.decoder.forward_cache(dec_in)
    labels = symbols[tr_idx, st_idx]
    p_true = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(p_true, 1e-300))))
    upstream = np.zeros_like(probs)
    upstream[np.arange(n), labels] = -1.0 / (np.maximum(p_true, 1e-300) * n)
    dec_grads, dec_in_grad = codec.decoder.backward(dec_cache, upstream)
    phi_grad = np.zeros_like(phi)
    np.add.at(phi_grad, tr_idx, dec_in_grad[:, :LATENT_DIM])
    enc_grads, _ = codec.encoder.backward(enc_cache, phi_grad)
    return loss, enc_grads, dec_grads


def corpus_loss(codec: Codec, traces) -> float:
    symbols = np.stack([t.symbols for t in traces])
    loss, _, _ = _batch_loss_and_grads(codec, symbols, state_features(codec.spec))
    return loss


def pretrain(codec: Codec, corpus, epochs: int = 30, lr: float = 1e-3,
             rng: np.random.Generator | None = None, batch_size: int = 64,
             log=None):
    """Fit the codec on ``corpus`` with minibatch Adam; returns ``(codec, losses)``.

    ``losses[e]`` is the full-corpus loss after epoch ``e``; ``losses[0]`` is
    taken before any update.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    rng = rng if rng is not None else np.random.default_rng(0)
    symbols = np.stack([t.symbols for t in corpus])
    if symbols.shape[1] != codec.grid_m:
        raise ValueError("corpus traces do not match the codec grid size")
    feats = state_features(codec.spec)
    enc_opt, dec_opt = Adam(lr=lr), Adam(lr=lr)
    losses = [_batch_loss_and_grads(codec, symbols, feats)[0]]
    for epoch in range(epochs):
        order = rng.permutation(len(corpus))
        for lo in range(0, len(order), batch_size):
            batch = symbols[order[lo:lo + batch_size]]
            _, enc_g, dec_g = _batch_loss_and_grads(codec, batch, feats)
            if enc_g is None:
                continue
            enc_opt.step(codec.encoder, enc_g)
            dec_opt.step(codec.decoder, dec_g)
        losses.append(_batch_loss_and_grads(codec, symbols, feats)[0])
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {losses[-1]:.4f}")
    return codec, losses


def random_traces(spec: GridSpec, n: int, rng: np.random.Generator) -> list[BehaviorTrace]:
    """Uniform over the five symbols in every state."""
    sym = rng.integers(NO_ACTION, N_ACTIONS, size=(n, spec.n_cells))
    return [BehaviorTrace(row) for row in sym]


def victim_traces(spec: GridSpec, n: int, rng: np.random.Generator,
                  params: VictimParams | None = None, max_pretrain: int = 500):
    """Traces of victims with random experience in random-altitude worlds.

    Each victim trains for a uniform number of episodes in ``[0, max_pretrain]``
    and then one observation bout provides the trace.
    """
    params = params or VictimParams()
    out = []
    for _ in range(n):
        world = GridWorld(spec, rng.uniform(spec.h_lo, spec.h_hi, size=spec.n_cells))
        q = np.zeros((spec.n_cells, N_ACTIONS))
        warm = int(rng.integers(0, max_pretrain + 1))
        if warm:
            train_and_trace(world, q, params, rng, n_episodes=warm)
        _, trace, _ = train_and_trace(world, q, params, rng)
        out.append(trace)
    return out


def build_corpus(spec: GridSpec, rng: np.random.Generator, n_victim: int = 5000,
                 n_random: int = 1000, params: VictimParams | None = None):
    return victim_traces(spec, n_victim, rng, params) + random_traces(spec, n_random, rng)
