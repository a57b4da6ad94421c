"""The stroke-forecasting network.

Dual-channel stroke embeddings feed a causal transformer encoder that is run
twice with different attention masks: once over the whole rally (rally
context) and once restricted to strokes hit by the query position's player
(player context). A position-aware sigmoid gate fuses the two contexts, and
two heads emit a shot-type distribution and a bivariate Gaussian over the
normalized landing point.

Embedding modes:
  modified  shot channel = type embedding + player-id embedding,
            area channel = landing projection + player-location projection,
            no nonlinearity on the area channel.
  baseline  player-id embedding added to both channels, no player-location
            term, ReLU on the landing projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .court import CourtSpec, Player, Rally, ShotType, ShotTypeVocab, Stroke, normalize_coord
from .seeding import TAG_INIT, rng_from_key

UNKNOWN_PLAYER = 0  # reserved row of the player embedding table

CHECKPOINT_MAGIC = b"RCKPT1\n"

AREA_PARAM_COUNT = 5  # mu_x, mu_y, log_sigma_x, log_sigma_y, rho_raw


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 16
    n_heads: int = 2
    n_layers: int = 1
    ffn_dim: int | None = None  # defaults to 4 * embed_dim
    dropout_rate: float = 0.2
    vocab_size: int = 10
    n_players: int = 2  # real players; the table has one extra unknown row
    embedding_mode: str = "modified"
    tau: int = 4

    def __post_init__(self) -> None:
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.embedding_mode not in ("baseline", "modified"):
            raise ValueError(f"unknown embedding_mode: {self.embedding_mode!r}")
        if self.vocab_size < 1 or self.n_players < 1 or self.n_layers < 1 or self.tau < 1:
            raise ValueError("vocab_size, n_players, n_layers, and tau must be positive")

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.embed_dim


class ModelParams:
    """Named learnable arrays; iteration order is fixed by construction order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.copy()) for k, v in self.tensors.items()})

    def set_all(self, value: float) -> None:
        for t in self.tensors.values():
            t.data[:] = value


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, v = config.embed_dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "type_emb": (v, d),
        "area_w": (2, d),
        "area_b": (d,),
        "player_emb": (config.n_players + 1, d),
        "loc_w": (2, d),
        "loc_b": (d,),
    }
    for i in range(config.n_layers):
        p = f"enc{i}_"
        shapes.update(
            {
                # no q/k/v biases: a key bias cancels inside the row softmax
                # (its gradient is structurally zero), and the value bias is
                # redundant with the output bias
                p + "wq": (d, d),
                p + "wk": (d, d),
                p + "wv": (d, d),
                p + "wo": (d, d), p + "bo": (d,),
                p + "ln1_g": (d,), p + "ln1_b": (d,),
                p + "ffn_w1": (d, config.ffn_width), p + "ffn_b1": (config.ffn_width,),
                p + "ffn_w2": (config.ffn_width, d), p + "ffn_b2": (d,),
                p + "ln2_g": (d,), p + "ln2_b": (d,),
            }
        )
    shapes.update(
        {
            "gate_w": (3 * d, d),
            "gate_b": (d,),
            "type_head_w": (d, v),
            "type_head_b": (v,),
            "area_head_w": (d, AREA_PARAM_COUNT),
            "area_head_b": (AREA_PARAM_COUNT,),
        }
    )
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    rng = rng_from_key(seed, TAG_INIT)
    tensors: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(("ln1_g", "ln2_g")):
            data = np.ones(shape)
        elif name.endswith("_b") or name.endswith(("bo", "b1", "b2")):
            data = np.zeros(shape)
        elif name in ("type_emb", "player_emb"):
            data = rng.normal(0.0, 0.1, size=shape)
        else:
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        tensors[name] = Tensor(data)
    return ModelParams(tensors)


def build_player_index(rallies: Sequence[Rally]) -> dict[str, int]:
    """Dataset-global player ids; row 0 stays reserved for unseen players."""
    names = sorted({name for r in rallies for name in (r.player_a, r.player_b)})
    return {name: i + 1 for i, name in enumerate(names)}


def sinusoidal_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d)
    enc = np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))
    return enc


@dataclass
class PredictionStep:
    """Model output for one future stroke.

    type_probs is a simplex over the vocabulary; the landing distribution is
    a bivariate Gaussian in normalized court units. nodes keeps the live
    graph tensors when the step was produced for training.
    """

    type_probs: np.ndarray
    mu: np.ndarray  # (2,)
    sigma: np.ndarray  # (2,), positive
    rho: float  # in (-1, 1)
    nodes: dict[str, Tensor] | None = None

    @property
    def area_gauss(self) -> tuple[float, float, float, float, float]:
        return (float(self.mu[0]), float(self.mu[1]), float(self.sigma[0]), float(self.sigma[1]), self.rho)


def embed_strokes(
    strokes: Sequence[Stroke],
    player_ids: Sequence[int],
    params: ModelParams,
    config: ModelConfig,
    court: CourtSpec,
) -> tuple[Tensor, Tensor]:
    """Per-stroke shot and area channels, positional encoding included."""
    if not strokes:
        raise ValueError("embed_strokes needs at least one stroke")
    n = len(strokes)
    ids = np.asarray(player_ids, dtype=np.int64)
    if ids.shape != (n,):
        raise ValueError("player_ids must align with strokes")
    if ids.max() > config.n_players or ids.min() < 0:
        raise ValueError("player id outside the embedding table")

    type_ids = np.array([s.shot_type for s in strokes], dtype=np.int64)
    if type_ids.max() >= config.vocab_size:
        raise ValueError("shot type id outside the vocabulary")
    landings = np.array([normalize_coord(s.landing, court) for s in strokes])
    locations = np.array([normalize_coord(s.player_location, court) for s in strokes])

    type_e = ad.embedding_lookup(params["type_emb"], type_ids)
    player_e = ad.embedding_lookup(params["player_emb"], ids)
    area_proj = ad.add(ad.matmul(Tensor(landings), params["area_w"]), params["area_b"])

    if config.embedding_mode == "modified":
        loc_proj = ad.add(ad.matmul(Tensor(locations), params["loc_w"]), params["loc_b"])
        shot_channel = ad.add(type_e, player_e)
        area_channel = ad.add(area_proj, loc_proj)
    else:
        shot_channel = ad.add(type_e, player_e)
        area_channel = ad.add(ad.relu(area_proj), player_e)

    pe = Tensor(sinusoidal_encoding(n, config.embed_dim))
    return ad.add(shot_channel, pe), ad.add(area_channel, pe)


def _attention(x: Tensor, allowed: np.ndarray, params: ModelParams, layer: int, config: ModelConfig) -> Tensor:
    p = f"enc{layer}_"
    n, d = x.shape
    q = ad.matmul(x, params[p + "wq"])
    k = ad.matmul(x, params[p + "wk"])
    v = ad.matmul(x, params[p + "wv"])
    dh = d // config.n_heads
    blocked = ~allowed
    heads = []
    for h in range(config.n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(dh))
        scores = ad.masked_fill(scores, blocked)
        heads.append(ad.matmul(ad.softmax(scores, axis=-1), vh))
    merged = ad.concat(heads, axis=1)
    return ad.add(ad.matmul(merged, params[p + "wo"]), params[p + "bo"])


def _encoder_stack(
    x: Tensor,
    allowed: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    rng: np.random.Generator | None,
) -> Tensor:
    for i in range(config.n_layers):
        p = f"enc{i}_"
        att = ad.dropout(_attention(x, allowed, params, i, config), config.dropout_rate, rng)
        x = ad.layer_norm(ad.add(x, att), params[p + "ln1_g"], params[p + "ln1_b"])
        hidden = ad.relu(ad.add(ad.matmul(x, params[p + "ffn_w1"]), params[p + "ffn_b1"]))
        ff = ad.add(ad.matmul(hidden, params[p + "ffn_w2"]), params[p + "ffn_b2"])
        ff = ad.dropout(ff, config.dropout_rate, rng)
        x = ad.layer_norm(ad.add(x, ff), params[p + "ln2_g"], params[p + "ln2_b"])
    return x


def encode_contexts(
    x: Tensor,
    players: Sequence[Player],
    params: ModelParams,
    config: ModelConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Causal rally context and player-restricted context for each position.

    The same encoder weights are applied under two masks, so a length-1
    sequence yields identical contexts.
    """
    n = x.shape[0]
    if len(players) != n:
        raise ValueError("players must align with the sequence")
    causal = np.tril(np.ones((n, n), dtype=bool))
    same = np.array([[pi is pj for pj in players] for pi in players], dtype=bool)
    rally_ctx = _encoder_stack(x, causal, params, config, rng)
    player_ctx = _encoder_stack(x, causal & same, params, config, rng)
    return rally_ctx, player_ctx


def fuse_contexts(rally_ctx: Tensor, player_ctx: Tensor, pos_enc: Tensor, params: ModelParams) -> Tensor:
    """Position-aware gate: fused = g * rally + (1 - g) * player."""
    gate_in = ad.concat([rally_ctx, player_ctx, pos_enc], axis=1)
    g = ad.sigmoid(ad.add(ad.matmul(gate_in, params["gate_w"]), params["gate_b"]))
    one_minus = ad.sub(Tensor(np.ones(g.shape)), g)
    return ad.add(ad.mul(g, rally_ctx), ad.mul(one_minus, player_ctx))


# keep sigma strictly positive and |rho| strictly below 1 even when the raw
# head outputs saturate exp/tanh in float64
LOG_SIGMA_RANGE = 300.0
RHO_CAP = 1.0 - 1e-12


def prediction_heads(fused: Tensor, params: ModelParams) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Rowwise (type_probs, mu, log_sigma, rho) for a (n, d) fused tensor."""
    logits = ad.add(ad.matmul(fused, params["type_head_w"]), params["type_head_b"])
    probs = ad.softmax(logits, axis=-1)
    area = ad.add(ad.matmul(fused, params["area_head_w"]), params["area_head_b"])
    mu = area[:, 0:2]
    log_sigma = ad.clip(area[:, 2:4], -LOG_SIGMA_RANGE, LOG_SIGMA_RANGE)
    rho = ad.scale(ad.tanh(area[:, 4]), RHO_CAP)
    return probs, mu, log_sigma, rho


def _step_from_rows(probs: Tensor, mu: Tensor, log_sigma: Tensor, rho: Tensor, row: int, keep_nodes: bool) -> PredictionStep:
    p_row, mu_row, ls_row, rho_row = probs[row], mu[row], log_sigma[row], rho[row]
    step = PredictionStep(
        type_probs=p_row.data.copy(),
        mu=mu_row.data.copy(),
        sigma=np.exp(ls_row.data),
        rho=float(rho_row.data),
    )
    if keep_nodes:
        step.nodes = {"probs": p_row, "mu": mu_row, "log_sigma": ls_row, "rho": rho_row}
    return step


def predict_step(fused: Tensor | np.ndarray, params: ModelParams) -> PredictionStep:
    """Run the heads on a single fused vector."""
    data = fused.data if isinstance(fused, Tensor) else np.asarray(fused, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(1, -1)
    probs, mu, log_sigma, rho = prediction_heads(Tensor(data), params)
    return _step_from_rows(probs, mu, log_sigma, rho, 0, keep_nodes=False)


@dataclass
class Forecaster:
    """A trained (or freshly initialized) model plus everything needed to run it."""

    params: ModelParams
    config: ModelConfig
    court: CourtSpec
    vocab: ShotTypeVocab
    player_index: dict[str, int] = field(default_factory=dict)

    def player_id(self, name: str) -> int:
        return self.player_index.get(name, UNKNOWN_PLAYER)

    def stroke_player_ids(self, rally_names: tuple[str, str], players: Sequence[Player]) -> list[int]:
        a, b = rally_names
        return [self.player_id(a if p is Player.A else b) for p in players]

    def forward_positions(
        self,
        strokes: Sequence[Stroke],
        rally_names: tuple[str, str],
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Next-stroke head outputs at every position of the given history."""
        players = [s.player for s in strokes]
        ids = self.stroke_player_ids(rally_names, players)
        shot_ch, area_ch = embed_strokes(strokes, ids, self.params, self.config, self.court)
        x = ad.scale(ad.add(shot_ch, area_ch), 0.5)
        drop_rng = rng if training else None
        rally_ctx, player_ctx = encode_contexts(x, players, self.params, self.config, drop_rng)
        pe = Tensor(sinusoidal_encoding(len(strokes), self.config.embed_dim))
        fused = fuse_contexts(rally_ctx, player_ctx, pe, self.params)
        return prediction_heads(fused, self.params)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self)

    @classmethod
    def load(cls, path: str | Path) -> "Forecaster":
        return load_checkpoint(path)


def forward_teacher_forced(
    model: Forecaster,
    rally: Rally,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> list[PredictionStep]:
    """One PredictionStep per stroke tau+1 .. |rally|, conditioned on truth."""
    tau = model.config.tau
    if len(rally) < tau + 1:
        raise ValueError(f"rally {rally.rally_id} has {len(rally)} strokes, needs at least {tau + 1}")
    history = rally.strokes[:-1]
    probs, mu, log_sigma, rho = model.forward_positions(
        history, (rally.player_a, rally.player_b), training=training, rng=rng
    )
    steps = []
    for target_round in range(tau + 1, len(rally) + 1):
        row = target_round - 2  # position of the stroke preceding the target
        steps.append(_step_from_rows(probs, mu, log_sigma, rho, row, keep_nodes=training))
    return steps


# ---------------------------------------------------------------------------
# checkpoint container: magic, u64 header length, JSON header, raw float64
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, model: Forecaster) -> None:
    names = model.params.names()
    header = {
        "config": asdict(model.config),
        "court": asdict(model.court),
        "vocab": [[e.type_id, e.name, e.is_serve] for e in model.vocab.entries],
        "player_index": model.player_index,
        "arrays": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Forecaster:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"not a checkpoint file: {path}")
    off = len(CHECKPOINT_MAGIC)
    hlen = int.from_bytes(raw[off : off + 8], "little")
    off += 8
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    config = ModelConfig(**header["config"])
    court = CourtSpec(**header["court"])
    vocab = ShotTypeVocab(tuple(ShotType(int(i), n, bool(s)) for i, n, s in header["vocab"]))
    tensors: dict[str, Tensor] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw[off : off + 8 * count], dtype="<f8").reshape(shape).copy()
        off += 8 * count
        tensors[entry["name"]] = Tensor(arr)
    return Forecaster(
        params=ModelParams(tensors),
        config=config,
        court=court,
        vocab=vocab,
        player_index={k: int(v) for k, v in header["player_index"].items()},
    )
