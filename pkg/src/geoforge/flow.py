"""Rectified-flow Euler sampling with classifier-free guidance, plus a small
CPU-trainable velocity model over latent grids.

Time runs from t=0 at the (interpolated) start to t=1 at data. The toy model
is deliberately tiny: a per-position affine map over latent channels plus a
low-rank spatial field driven by the condition vector, each with a linear
time modulation. Gradients are analytic; the optimizer is Adam.
"""

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyCorpus,
    EmptyGrid,
    FormatError,
    NonFiniteState,
    ShapeMismatch,
)
from .latent import (
    LambdaParams,
    LatentGrid,
    NormStats,
    PriorChoice,
    compute_stats,
    cosine_interpolate,
    decode_surrogate,
    denormalize_latent,
    encode_surrogate,
    noise_like,
    normalize_latent,
    sample_lambda,
    sample_training_prior,
)
from .voxel import VoxelGrid, lod_prior

log = logging.getLogger(__name__)

GFTM_MAGIC = b"GFTM"
GFTM_VERSION = 1

COND_DROP_PROB = 0.1


@dataclass(frozen=True)
class FlowConfig:
    steps: int = 50
    cfg_scale: float = 7.5
    lam: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")


def euler_integrate(f, x0, steps):
    """Uniform-step Euler integration of dx/dt = f(x, t) from t=0 to t=1.

    Accumulates in float64 regardless of the input dtype.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    dt = 1.0 / steps
    for k in range(steps):
        t = k / steps
        v = np.asarray(f(x, t), dtype=np.float64)
        if v.shape != x.shape:
            raise ShapeMismatch(f"velocity shape {v.shape} != state shape {x.shape}")
        x += dt * v
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"non-finite state after step {k} (t={t:.3f})")
    return x


def euler_sample(model, start: LatentGrid, cond, config: FlowConfig) -> LatentGrid:
    """Integrate the model's velocity field from `start`, with CFG when a
    condition is present and cfg_scale != 1."""

    def f(x, t):
        state = LatentGrid(x.astype(np.float32))
        if cond is None:
            return model.evaluate(state, t, None).values
        if config.cfg_scale == 1.0:
            return model.evaluate(state, t, cond).values
        v_u = model.evaluate(state, t, None).values.astype(np.float64)
        v_c = model.evaluate(state, t, cond).values.astype(np.float64)
        return v_u + config.cfg_scale * (v_c - v_u)

    final = euler_integrate(f, start.values, config.steps)
    return LatentGrid(final.astype(np.float32))


class ToyVelocityModel:
    """v(x, t, cond) = x W + t x Wt + b + t bt + F cond + t Ft cond.

    x is the flattened latent (P positions, c channels); F and Ft map the
    cond vector to a full spatial field. cond=None means the unconditional
    branch (all cond terms off), which is also how condition dropout trains.
    """

    PARAM_ORDER = ("W", "Wt", "b", "bt", "F", "Ft")

    def __init__(self, d, c, cond_dim, params=None, stats=None, meta=None):
        self.d = d
        self.c = c
        self.cond_dim = cond_dim
        p = d ** 3
        shapes = {
            "W": (c, c), "Wt": (c, c), "b": (c,), "bt": (c,),
            "F": (cond_dim, p * c), "Ft": (cond_dim, p * c),
        }
        self.shapes = shapes
        if params is None:
            params = {k: np.zeros(s, dtype=np.float64) for k, s in shapes.items()}
        self.params = params
        self.stats = stats
        self.meta = meta or {}

    def _velocity_raw(self, x, t, cond):
        """x: (B, P, c); t: (B,); cond: (B, k) or None."""
        B, P, c = x.shape
        pr = self.params
        v = x @ pr["W"] + t[:, None, None] * (x @ pr["Wt"])
        v += pr["b"] + t[:, None, None] * pr["bt"]
        if cond is not None:
            v += (cond @ pr["F"]).reshape(B, P, c)
            v += t[:, None, None] * (cond @ pr["Ft"]).reshape(B, P, c)
        return v

    def evaluate(self, state: LatentGrid, t: float, cond) -> LatentGrid:
        if state.d != self.d or state.c != self.c:
            raise ShapeMismatch(
                f"state ({state.d}, {state.c}) does not match model ({self.d}, {self.c})"
            )
        x = state.values.astype(np.float64).reshape(1, -1, self.c)
        cond_arr = None
        if cond is not None:
            cond_arr = np.asarray(cond, dtype=np.float64).reshape(1, -1)
            if cond_arr.shape[1] != self.cond_dim:
                raise ShapeMismatch(
                    f"cond length {cond_arr.shape[1]} != model cond_dim {self.cond_dim}"
                )
        v = self._velocity_raw(x, np.array([t], dtype=np.float64), cond_arr)
        return LatentGrid(v.reshape(state.values.shape).astype(np.float32))

    def loss_and_grads(self, x, t, cond, target):
        """Mean-squared velocity error and analytic parameter gradients.

        cond rows that are all zero act as dropped (unconditional) samples;
        the cond-field gradients for them vanish automatically.
        """
        B, P, c = x.shape
        pred = self._velocity_raw(x, t, cond)
        diff = pred - target
        loss = float(np.mean(diff ** 2))
        g = (2.0 / diff.size) * diff
        tw = t[:, None, None]
        grads = {
            "W": np.einsum("bpc,bpe->ce", x, g),
            "Wt": np.einsum("bpc,bpe->ce", x * tw, g),
            "b": g.sum(axis=(0, 1)),
            "bt": (g * tw).sum(axis=(0, 1)),
            "F": cond.T @ g.reshape(B, P * c),
            "Ft": (cond * t[:, None]).T @ g.reshape(B, P * c),
        }
        return loss, grads

    def flat_params(self):
        return np.concatenate([self.params[k].ravel() for k in self.PARAM_ORDER])

    def set_flat_params(self, flat):
        i = 0
        for k in self.PARAM_ORDER:
            size = int(np.prod(self.shapes[k]))
            self.params[k] = flat[i:i + size].reshape(self.shapes[k]).astype(np.float64)
            i += size
        if i != len(flat):
            raise FormatError(f"parameter vector length {len(flat)} != expected {i}")


class _Adam:
    def __init__(self, keys, shapes, lr=1e-2, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros(shapes[k]) for k in keys}
        self.v = {k: np.zeros(shapes[k]) for k in keys}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1 ** self.t)
            vhat = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-2
    lambda_params: LambdaParams = field(default_factory=LambdaParams)
    d: int = 16
    c: int = 8


def train_toy(corpus, epochs: int, seed: int, config: TrainConfig = None) -> ToyVelocityModel:
    """Flow-matching training of the toy model on (grid, cond) pairs.

    Per step: pick a prior level (or pure noise) uniformly, draw the
    interpolation weight from the logit-normal sampler, build the start
    x0, set x1 to the normalized data latent, draw t uniform, and regress
    the velocity toward (x1 - x0) at x_t = (1-t) x0 + t x1. Conditions are
    dropped with probability 0.1 so CFG works at inference.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("train_toy needs a non-empty corpus")
    config = config or TrainConfig()
    config = replace(config, epochs=epochs)
    d, c = config.d, config.c
    cond_dim = len(np.asarray(corpus[0][1]).ravel())

    # cache latents: data latent + one latent per prior level per shape
    gt_latents = [encode_surrogate(g, d, c) for g, _ in corpus]
    stats = compute_stats(gt_latents)
    z1_all = np.stack([normalize_latent(z, stats).values.reshape(-1, c) for z in gt_latents])
    prior_latents = np.empty((len(corpus), 3), dtype=object)
    for i, (g, _) in enumerate(corpus):
        for choice in (PriorChoice.LOD0, PriorChoice.LOD1, PriorChoice.LOD2):
            prior = lod_prior(g, choice.lod)
            z = normalize_latent(encode_surrogate(prior, d, c), stats)
            prior_latents[i, choice.value] = z
    conds = np.stack([np.asarray(cv, dtype=np.float64).ravel() for _, cv in corpus])

    model = ToyVelocityModel(d, c, cond_dim, stats=stats)
    opt = _Adam(model.PARAM_ORDER, model.shapes, lr=config.lr)
    master = np.random.Generator(np.random.Philox(seed))

    first_loss = None
    last_loss = None
    epoch_losses = []
    P = d ** 3
    for epoch in range(config.epochs):
        order = master.permutation(len(corpus))
        batch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            B = len(batch)
            step_seeds = master.integers(1, 2 ** 62, size=(B, 2))
            ts = master.uniform(0.0, 1.0, size=B)
            drops = master.random(B) < COND_DROP_PROB

            x0 = np.empty((B, P, c))
            x1 = np.empty((B, P, c))
            cond = conds[batch].copy()
            cond[drops] = 0.0
            for j, i in enumerate(batch):
                choice = sample_training_prior(corpus[i][0], int(step_seeds[j, 0]))
                lam = sample_lambda(config.lambda_params, int(step_seeds[j, 0]) + 1)
                if choice is PriorChoice.NOISE:
                    start = noise_like(gt_latents[i], int(step_seeds[j, 1]))
                else:
                    start = cosine_interpolate(
                        prior_latents[i, choice.value], lam, int(step_seeds[j, 1])
                    )
                x0[j] = start.values.reshape(P, c)
                x1[j] = z1_all[i]

            xt = (1 - ts)[:, None, None] * x0 + ts[:, None, None] * x1
            target = x1 - x0
            loss, grads = model.loss_and_grads(xt, ts, cond, target)
            opt.step(model.params, grads)
            if first_loss is None:
                first_loss = loss
            last_loss = loss
            batch_losses.append(loss)
        epoch_losses.append(float(np.mean(batch_losses)))
        log.debug("epoch %d/%d mean loss %.5f", epoch + 1, config.epochs, epoch_losses[-1])

    model.meta = {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "seed": seed,
        "corpus_size": len(corpus),
        "first_loss": first_loss,
        "final_loss": last_loss,
        "epoch_losses": epoch_losses,
    }
    log.info("train_toy: loss %.5f -> %.5f over %d epochs", first_loss, last_loss, config.epochs)
    return model


def generate(model: ToyVelocityModel, prior, cond, config: FlowConfig,
             stats: NormStats = None, n: int = None) -> VoxelGrid:
    """Full geometry round trip: encode, normalize, interpolate, sample,
    denormalize, decode. `prior=None` starts from pure noise."""
    stats = stats if stats is not None else model.stats
    if stats is None:
        raise EmptyCorpus("no normalization stats available; train or load a model first")
    d, c = model.d, model.c
    if n is None:
        n = d * 4
    template = LatentGrid(np.zeros((d, d, d, c), dtype=np.float32))
    if prior is None or config.lam == 1.0:
        start = noise_like(template, config.seed)
    else:
        if prior.is_empty:
            raise EmptyGrid("prior grid is empty; pass prior=None for pure-noise mode")
        z = encode_surrogate(prior, d, c)
        z_norm = normalize_latent(z, stats)
        start = cosine_interpolate(z_norm, config.lam, config.seed)
    final = euler_sample(model, start, cond, config)
    return decode_surrogate(denormalize_latent(final, stats), n)


def model_to_bytes(model: ToyVelocityModel):
    """GFTM binary: magic | u32 version | u64 param_count | float32 params."""
    flat = model.flat_params().astype("<f4")
    header = GFTM_MAGIC + struct.pack("<IQ", GFTM_VERSION, len(flat))
    return header + flat.tobytes()


def model_sidecar(model: ToyVelocityModel) -> str:
    doc = {
        "d": model.d,
        "c": model.c,
        "cond_dim": model.cond_dim,
        "meta": model.meta,
    }
    if model.stats is not None:
        doc["stats"] = {"mean": model.stats.mean.tolist(), "std": model.stats.std.tolist()}
    return json.dumps(doc, indent=2, sort_keys=True)


def write_gftm(model: ToyVelocityModel, path):
    p = Path(path)
    p.write_bytes(model_to_bytes(model))
    p.with_suffix(p.suffix + ".json").write_text(model_sidecar(model))


def read_gftm(path) -> ToyVelocityModel:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"GFTM: no such file {p}")
    sidecar = p.with_suffix(p.suffix + ".json")
    if not sidecar.exists():
        raise FormatError(f"GFTM: missing sidecar {sidecar}")
    doc = json.loads(sidecar.read_text())
    data = p.read_bytes()
    if len(data) < 16 or data[:4] != GFTM_MAGIC:
        raise FormatError("GFTM: bad magic or truncated header")
    version, count = struct.unpack("<IQ", data[4:16])
    if version != GFTM_VERSION:
        raise FormatError(f"GFTM: unsupported version {version}")
    payload = data[16:]
    if len(payload) != count * 4:
        raise FormatError(f"GFTM: expected {count * 4} payload bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    stats = None
    if "stats" in doc:
        stats = NormStats(mean=np.array(doc["stats"]["mean"]), std=np.array(doc["stats"]["std"]))
    model = ToyVelocityModel(doc["d"], doc["c"], doc["cond_dim"], stats=stats, meta=doc.get("meta", {}))
    model.set_flat_params(flat)
    return model
