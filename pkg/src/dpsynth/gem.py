"""Generator-network synthesizer over relaxed one-hot outputs.

The generator is a small fully connected network: Gaussian noise in, one
logit per one-hot column out, each attribute block squashed by its own
softmax. A fixed batch of noise vectors is drawn once per run, so the
synthetic distribution is the uniform mixture of B product distributions.

Training at each round minimizes the mean absolute (or squared) residual
against measured answers whose current residual exceeds a moving threshold
gamma; gamma tracks an exponential moving average (beta 0.5) of the
per-round sampled max error. After half the rounds an exponential moving
average of the weights (beta 0.9) starts accumulating and is used as the
final model.

Gradients are computed by a purpose-built reverse pass (matrix calculus by
hand, no autograd dependency); adam-style moment estimates drive the steps.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import DataError, Dataset, Domain
from .loop import Synthesizer
from .privacy import MeasurementLedger
from .queries import QuerySet, product_answers, product_answers_grad


@dataclass
class GemConfig:
    hidden: tuple[int, ...] = (64, 128)
    z_dim: int = 16
    batch: int = 100
    lr: float = 1e-4
    t_max: int = 100
    loss: str = "l1"  # "l1" or "l2"
    resample_z: bool = False  # draw fresh noise every training step
    ema_beta: float = 0.9
    gamma_beta: float = 0.5

    def __post_init__(self):
        if self.loss not in ("l1", "l2"):
            raise DataError("loss must be 'l1' or 'l2'")
        if self.z_dim < 1 or self.batch < 1 or self.t_max < 0:
            raise DataError("z_dim and batch must be >= 1, t_max >= 0")
        if not (0.0 < self.ema_beta < 1.0) or not (0.0 < self.gamma_beta < 1.0):
            raise DataError("ema betas must lie in (0, 1)")


# parameters are a list of (W, b) per layer; hidden layers use a rectifier,
# the last layer feeds the per-attribute softmax blocks
Params = list[tuple[np.ndarray, np.ndarray]]


def init_params(rng: np.random.Generator, z_dim: int, hidden: tuple[int, ...], out_width: int) -> Params:
    dims = [z_dim, *hidden, out_width]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out)
        layers.append((W, b))
    return layers


def block_softmax(logits: np.ndarray, domain: Domain) -> np.ndarray:
    P = np.empty_like(logits)
    for a in range(domain.num_attrs):
        off, sz = domain.offset(a), domain.sizes[a]
        block = logits[:, off : off + sz]
        block = block - block.max(axis=1, keepdims=True)
        e = np.exp(block)
        P[:, off : off + sz] = e / e.sum(axis=1, keepdims=True)
    return P


def forward(params: Params, Z: np.ndarray, domain: Domain):
    """Returns (P, cache); P rows are concatenated attribute distributions."""
    acts = [np.asarray(Z, dtype=np.float64)]
    pres = []
    A = acts[0]
    for W, b in params[:-1]:
        pre = A @ W + b
        pres.append(pre)
        A = np.maximum(pre, 0.0)
        acts.append(A)
    W, b = params[-1]
    logits = A @ W + b
    P = block_softmax(logits, domain)
    return P, (acts, pres, P)


def backward(params: Params, cache, dP: np.ndarray, domain: Domain) -> Params:
    """Gradient of a scalar loss w.r.t. every parameter, given dLoss/dP."""
    acts, pres, P = cache
    # softmax blocks: dlogit = p * (g - <g, p>) within each block
    gl = np.empty_like(P)
    for a in range(domain.num_attrs):
        off, sz = domain.offset(a), domain.sizes[a]
        s = P[:, off : off + sz]
        g = dP[:, off : off + sz]
        gl[:, off : off + sz] = s * (g - (g * s).sum(axis=1, keepdims=True))
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params)  # type: ignore
    dA = gl
    for li in range(len(params) - 1, -1, -1):
        W, _ = params[li]
        A_prev = acts[li]
        grads[li] = (A_prev.T @ dA, dA.sum(axis=0))
        if li > 0:
            dA = (dA @ W.T) * (pres[li - 1] > 0.0)
    return grads


def gem_loss(
    params: Params,
    Z: np.ndarray,
    domain: Domain,
    idx: np.ndarray,
    targets: np.ndarray,
    gamma: float = 0.0,
    kind: str = "l1",
):
    """Residual loss over the active set {j : |c_j| >= gamma}.

    Returns (loss, residuals c = targets - answers). Raises if gamma leaves
    no active entry.
    """
    P, _ = forward(params, Z, domain)
    ans = product_answers(P, idx)
    c = np.asarray(targets, dtype=np.float64) - ans
    active = np.abs(c) >= gamma
    if not active.any():
        raise DataError("no residual at or above gamma; nothing to fit")
    if kind == "l1":
        loss = float(np.abs(c[active]).mean())
    elif kind == "l2":
        loss = float((c[active] ** 2).mean())
    else:
        raise DataError("loss must be 'l1' or 'l2'")
    return loss, c


def gem_gradient(
    params: Params,
    Z: np.ndarray,
    domain: Domain,
    idx: np.ndarray,
    targets: np.ndarray,
    gamma: float = 0.0,
    kind: str = "l1",
):
    """Loss, parameter gradients, and residuals in one reverse pass."""
    P, cache = forward(params, Z, domain)
    ans = product_answers(P, idx)
    c = np.asarray(targets, dtype=np.float64) - ans
    active = np.abs(c) >= gamma
    if not active.any():
        raise DataError("no residual at or above gamma; nothing to fit")
    n_act = int(active.sum())
    if kind == "l1":
        loss = float(np.abs(c[active]).mean())
        coeff = -np.sign(c[active]) / n_act  # d mean|ans - t| / d ans
    elif kind == "l2":
        loss = float((c[active] ** 2).mean())
        coeff = -2.0 * c[active] / n_act
    else:
        raise DataError("loss must be 'l1' or 'l2'")
    dP = product_answers_grad(P, idx[active], coeff)
    return loss, backward(params, cache, dP, domain), c


def flatten_params(params: Params) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params])


def unflatten_params(vec: np.ndarray, like: Params) -> Params:
    out = []
    pos = 0
    for W, b in like:
        w = vec[pos : pos + W.size].reshape(W.shape)
        pos += W.size
        bb = vec[pos : pos + b.size].copy()
        pos += b.size
        out.append((w.copy(), bb))
    return out


class Adam:
    """Bias-corrected first/second moment steps."""

    def __init__(self, params: Params, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]

    def step(self, params: Params, grads: Params) -> Params:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        out = []
        for li, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
            mW, mb = self.m[li]
            vW, vb = self.v[li]
            mW = self.b1 * mW + (1 - self.b1) * gW
            mb = self.b1 * mb + (1 - self.b1) * gb
            vW = self.b2 * vW + (1 - self.b2) * gW**2
            vb = self.b2 * vb + (1 - self.b2) * gb**2
            self.m[li] = (mW, mb)
            self.v[li] = (vW, vb)
            out.append(
                (
                    W - self.lr * (mW / c1) / (np.sqrt(vW / c2) + self.eps),
                    b - self.lr * (mb / c1) / (np.sqrt(vb / c2) + self.eps),
                )
            )
        return out


def ema_update(ema: Params, current: Params, beta: float) -> Params:
    """new_ema = beta * ema + (1 - beta) * current, layerwise."""
    if len(ema) != len(current):
        raise DataError("parameter lists differ in depth")
    out = []
    for (eW, eb), (W, b) in zip(ema, current):
        if eW.shape != W.shape or eb.shape != b.shape:
            raise DataError("parameter shapes differ")
        out.append((beta * eW + (1 - beta) * W, beta * eb + (1 - beta) * b))
    return out


class GemOutput:
    """Uniform mixture of per-row product distributions."""

    def __init__(self, domain: Domain, P: np.ndarray, params: Params, config: GemConfig):
        self.domain = domain
        self.P = P
        self.params = params
        self.config = config

    def answers(self, queries: QuerySet) -> np.ndarray:
        return queries.answers_probs(self.P)

    def sample_dataset(self, count: int, rng: np.random.Generator) -> Dataset:
        if count <= 0:
            raise DataError("count must be positive")
        rows = rng.integers(0, self.P.shape[0], size=count)
        rec = np.empty((count, self.domain.num_attrs), dtype=np.int64)
        for a in range(self.domain.num_attrs):
            off, sz = self.domain.offset(a), self.domain.sizes[a]
            cdf = np.cumsum(self.P[:, off : off + sz], axis=1)
            u = rng.random(count)
            rec[:, a] = np.minimum((cdf[rows] < u[:, None]).sum(axis=1), sz - 1)
        return Dataset(self.domain, rec)

    def save_checkpoint(self, path) -> None:
        save_checkpoint(self.params, self.domain, self.config, path)


class GemSynthesizer(Synthesizer):
    def __init__(
        self,
        domain: Domain,
        queries: QuerySet,
        cfg: GemConfig,
        rng: np.random.Generator,
        total_rounds: int,
        init: Params | None = None,
        exact_targets: bool = False,
    ):
        self.domain = domain
        self.queries = queries
        self.cfg = cfg
        self.rng = rng
        self.total_rounds = int(total_rounds)
        # the early-stop threshold guards against overfitting noisy targets;
        # with exact measurements it would stall the fit, so drop it
        self.exact_targets = bool(exact_targets)
        self.z_batch = rng.standard_normal((cfg.batch, cfg.z_dim))
        if init is None:
            self.params = init_params(rng, cfg.z_dim, cfg.hidden, domain.onehot_width)
        else:
            self.params = [(W.copy(), b.copy()) for W, b in init]
        self.opt = Adam(self.params, cfg.lr)
        self.ema: Params | None = None
        self.gamma: float | None = None
        self.round = 0

    def _noise(self) -> np.ndarray:
        if self.cfg.resample_z:
            return self.rng.standard_normal((self.cfg.batch, self.cfg.z_dim))
        return self.z_batch

    def answers(self, queries: QuerySet) -> np.ndarray:
        P, _ = forward(self.params, self.z_batch, self.domain)
        return queries.answers_probs(P)

    def update(self, ledger: MeasurementLedger) -> None:
        if len(ledger) == 0:
            return
        self.round += 1
        idx = ledger.indices()
        targets = ledger.answers()
        sub = self.queries.idx[idx]
        # sampled max error of this round's fresh measurements, before fitting
        rounds = ledger.rounds()
        fresh = rounds == rounds.max()
        cur = product_answers(forward(self.params, self.z_batch, self.domain)[0], sub)
        sampled_max = float(np.abs(targets[fresh] - cur[fresh]).max())
        if self.exact_targets:
            self.gamma = 0.0
        elif self.gamma is None:
            self.gamma = sampled_max
        else:
            b = self.cfg.gamma_beta
            self.gamma = b * self.gamma + (1 - b) * sampled_max
        ema_on = self.round > self.total_rounds // 2
        for _ in range(self.cfg.t_max):
            Z = self._noise()
            _, c = gem_loss(self.params, Z, self.domain, sub, targets, 0.0, self.cfg.loss)
            if np.abs(c).max() < self.gamma:
                break
            _, grads, _ = gem_gradient(
                self.params, Z, self.domain, sub, targets, self.gamma, self.cfg.loss
            )
            self.params = self.opt.step(self.params, grads)
            if ema_on:
                if self.ema is None:
                    self.ema = [(W.copy(), b.copy()) for W, b in self.params]
                else:
                    self.ema = ema_update(self.ema, self.params, self.cfg.ema_beta)

    def finalize(self) -> GemOutput:
        params = self.ema if self.ema is not None else self.params
        P, _ = forward(params, self.z_batch, self.domain)
        return GemOutput(self.domain, P, params, self.cfg)


# -- checkpoint I/O --------------------------------------------------------

CHECKPOINT_FORMAT = "generator-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: Params, domain: Domain, cfg: GemConfig, path) -> None:
    """JSON container of layer shapes and parameters.

    Floats are serialized with shortest round-trip repr, so a save/load
    cycle reproduces the arrays bit for bit.
    """
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "z_dim": cfg.z_dim,
        "hidden": list(cfg.hidden),
        "domain": json.loads(domain.to_json()),
        "layers": [
            {"shape": list(W.shape), "w": W.ravel().tolist(), "b": b.tolist()}
            for W, b in params
        ],
    }
    with open(path, "w") as f:
        json.dump(obj, f)


def load_checkpoint(path) -> tuple[Params, Domain, int, tuple[int, ...]]:
    with open(path) as f:
        obj = json.load(f)
    if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    domain = Domain.from_json(json.dumps(obj["domain"]))
    params = []
    for layer in obj["layers"]:
        shape = tuple(layer["shape"])
        W = np.array(layer["w"], dtype=np.float64).reshape(shape)
        b = np.array(layer["b"], dtype=np.float64)
        params.append((W, b))
    return params, domain, int(obj["z_dim"]), tuple(obj["hidden"])
