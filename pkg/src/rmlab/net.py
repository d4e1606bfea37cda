"""Reward network numerics: a fixed two-layer scoring net with hand-derived
gradients, a finite-difference checker, and AdamW with warmup + cosine decay.

Everything is float64. A net scores one (image, query, answer) feature triple:

    reward = w2 . tanh(W1 [v|q|a] + b1) + b2

The pairwise loss is -log(sigmoid(reward_chosen - reward_rejected)); its
gradients with respect to every parameter are computed analytically so they
can be validated against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ScheduleExhausted

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PARAM_NAMES = ("w1", "b1", "w2", "b2")


def as_vec(x, n=None, name="vector"):
    """Coerce to a contiguous float64 1-d array; reject NaN/Inf and bad shapes."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name}: expected 1-d array, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DimensionError(f"{name}: expected length {n}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name}: contains non-finite entries")
    return arr


def as_mat(x, shape=None, name="matrix"):
    """Coerce to a contiguous float64 2-d array; reject NaN/Inf and bad shapes."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected 2-d array, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name}: contains non-finite entries")
    return arr


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bt_loss(margin):
    """-log(sigmoid(margin)), stable for any finite margin."""
    return np.logaddexp(0.0, -np.asarray(margin, dtype=np.float64))


@dataclass(frozen=True)
class NetDims:
    """Feature-block sizes of the scoring net."""

    d_v: int
    d_q: int
    d_a: int
    hidden: int = 32

    @property
    def input_dim(self) -> int:
        return self.d_v + self.d_q + self.d_a


@dataclass
class RewardNet:
    """Parameters of the two-layer scoring net.

    Two nets created from the same (dims, seed) are parameter-identical.
    """

    dims: NetDims
    seed: int
    w1: np.ndarray  # (hidden, input_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float

    @classmethod
    def init(cls, dims: NetDims, seed: int) -> "RewardNet":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

        The answer block of the first layer starts at zero: answer directions
        the training data never exercises then score exactly neutrally,
        instead of through leftover random weights. Cross-environment scores
        would otherwise be dominated by each net's arbitrary response to the
        other environments' planted directions.
        """
        rng = np.random.default_rng(seed)
        d = dims.input_dim
        lim1 = 1.0 / math.sqrt(d)
        lim2 = 1.0 / math.sqrt(dims.hidden)
        w1 = rng.uniform(-lim1, lim1, size=(dims.hidden, d))
        w1[:, dims.d_v + dims.d_q:] = 0.0
        return cls(
            dims=dims,
            seed=seed,
            w1=w1,
            b1=np.zeros(dims.hidden),
            w2=rng.uniform(-lim2, lim2, size=dims.hidden),
            b2=0.0,
        )

    @classmethod
    def zeros(cls, dims: NetDims) -> "RewardNet":
        return cls(
            dims=dims,
            seed=-1,
            w1=np.zeros((dims.hidden, dims.input_dim)),
            b1=np.zeros(dims.hidden),
            w2=np.zeros(dims.hidden),
            b2=0.0,
        )

    def copy(self) -> "RewardNet":
        return RewardNet(self.dims, self.seed, self.w1.copy(), self.b1.copy(),
                         self.w2.copy(), float(self.b2))

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def to_dict(self) -> dict:
        """Flat JSON document; float round-trip is bit-exact via repr."""
        return {
            "dims": {"d_v": self.dims.d_v, "d_q": self.dims.d_q,
                     "d_a": self.dims.d_a, "hidden": self.dims.hidden},
            "seed": self.seed,
            "w1": self.w1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": float(self.b2),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RewardNet":
        dims = NetDims(**doc["dims"])
        w1 = np.asarray(doc["w1"], dtype=np.float64).reshape(dims.hidden, dims.input_dim)
        return cls(
            dims=dims,
            seed=int(doc["seed"]),
            w1=w1,
            b1=np.asarray(doc["b1"], dtype=np.float64),
            w2=np.asarray(doc["w2"], dtype=np.float64),
            b2=float(doc["b2"]),
        )


def _check_input(net: RewardNet, v, q, a):
    d = net.dims
    return (as_vec(v, d.d_v, "v"), as_vec(q, d.d_q, "q"), as_vec(a, d.d_a, "a"))


def forward(net: RewardNet, v, q, a) -> float:
    """Score one (image, query, answer) triple."""
    v, q, a = _check_input(net, v, q, a)
    x = np.concatenate([v, q, a])
    h = np.tanh(net.w1 @ x + net.b1)
    return float(net.w2 @ h + net.b2)


def masked_forward(net: RewardNet, v, q, a) -> float:
    """Score with the vision block replaced by zeros (text-only view)."""
    v, q, a = _check_input(net, v, q, a)
    return forward(net, np.zeros_like(v), q, a)


def batch_scores(net: RewardNet, x: np.ndarray) -> np.ndarray:
    """Scores for a (n, input_dim) matrix of concatenated features."""
    h = np.tanh(x @ net.w1.T + net.b1)
    return h @ net.w2 + net.b2


def pair_inputs(sample, label: int, mask_vision: bool):
    """Concatenated chosen/rejected feature rows for one preference sample."""
    if label not in (1, -1):
        raise DimensionError(f"label must be +1 or -1, got {label}")
    v = np.zeros_like(sample.v) if mask_vision else sample.v
    chosen, rejected = (sample.a1, sample.a2) if label == 1 else (sample.a2, sample.a1)
    x_c = np.concatenate([v, sample.q, chosen])
    x_r = np.concatenate([v, sample.q, rejected])
    return x_c, x_r


def pair_loss(net: RewardNet, sample, mask_vision: bool, label: int) -> float:
    """Pairwise preference loss -log(sigmoid(margin)) for one sample."""
    x_c, x_r = pair_inputs(sample, label, mask_vision)
    margin = batch_scores(net, x_c[None, :])[0] - batch_scores(net, x_r[None, :])[0]
    return float(bt_loss(margin))


def pair_grad(net: RewardNet, sample, mask_vision: bool, label: int):
    """Loss and exact analytic gradients for one preference pair.

    Returns (loss, grads) where grads maps parameter name to an array shaped
    like that parameter. Note the b2 gradient is exactly zero: a shared
    score offset cancels in the pairwise margin.
    """
    x_c, x_r = pair_inputs(sample, label, mask_vision)
    z_c = net.w1 @ x_c + net.b1
    z_r = net.w1 @ x_r + net.b1
    h_c, h_r = np.tanh(z_c), np.tanh(z_r)
    margin = float(net.w2 @ h_c - net.w2 @ h_r)
    loss = float(bt_loss(margin))
    g = -float(sigmoid(-margin))  # dloss/dmargin

    dh_c = net.w2 * (1.0 - h_c * h_c)
    dh_r = net.w2 * (1.0 - h_r * h_r)
    grads = {
        "w1": g * (np.outer(dh_c, x_c) - np.outer(dh_r, x_r)),
        "b1": g * (dh_c - dh_r),
        "w2": g * (h_c - h_r),
        "b2": 0.0,
    }
    return loss, grads


def fd_check(net: RewardNet, sample, mask_vision: bool, label: int = 1,
             step: float = 1e-6) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    Errors are scaled by the largest gradient magnitude present so that
    near-zero entries do not blow up the ratio.
    """
    _, grads = pair_grad(net, sample, mask_vision, label)
    work = net.copy()

    def loss_at():
        return pair_loss(work, sample, mask_vision, label)

    fd = {}
    for name in PARAM_NAMES:
        param = work.params()[name]
        if name == "b2":
            work.b2 = net.b2 + step
            up = loss_at()
            work.b2 = net.b2 - step
            down = loss_at()
            work.b2 = net.b2
            fd[name] = (up - down) / (2.0 * step)
            continue
        out = np.zeros_like(param)
        flat = param.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            out.ravel()[i] = (up - down) / (2.0 * step)
        fd[name] = out

    scale = max(
        max(np.max(np.abs(np.atleast_1d(grads[n]))) for n in PARAM_NAMES),
        max(np.max(np.abs(np.atleast_1d(fd[n]))) for n in PARAM_NAMES),
        1e-8,
    )
    worst = 0.0
    for name in PARAM_NAMES:
        diff = np.max(np.abs(np.atleast_1d(grads[name]) - np.atleast_1d(fd[name])))
        worst = max(worst, float(diff) / scale)
    return worst


def schedule_lr(base_lr: float, warmup_ratio: float, total_steps: int, step: int) -> float:
    """Learning rate at 1-based step: linear warmup then cosine decay to 0."""
    warmup = warmup_ratio * total_steps
    if warmup > 0 and step <= warmup:
        return base_lr * step / warmup
    if total_steps == warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """AdamW moments plus the lr schedule for one net."""

    base_lr: float
    warmup_ratio: float
    total_steps: int
    weight_decay: float
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_net(cls, net: RewardNet, base_lr: float, warmup_ratio: float,
                total_steps: int, weight_decay: float) -> "OptimizerState":
        state = cls(base_lr, warmup_ratio, total_steps, weight_decay)
        for name, p in net.params().items():
            state.m[name] = np.zeros_like(np.atleast_1d(p) if name != "b2" else np.zeros(1))
            state.v[name] = np.zeros_like(state.m[name])
        return state

    def current_lr(self) -> float:
        return schedule_lr(self.base_lr, self.warmup_ratio, self.total_steps, self.step)


def adamw_step(state: OptimizerState, net: RewardNet, grads: dict) -> None:
    """One AdamW update with decoupled weight decay at the scheduled lr."""
    if state.step >= state.total_steps:
        raise ScheduleExhausted(
            f"optimizer already ran its {state.total_steps} scheduled steps")
    state.step += 1
    lr = schedule_lr(state.base_lr, state.warmup_ratio, state.total_steps, state.step)
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step

    for name in PARAM_NAMES:
        g = np.atleast_1d(np.asarray(grads[name], dtype=np.float64))
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        update = m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if name == "b2":
            net.b2 = net.b2 - lr * (float(update[0]) + state.weight_decay * net.b2)
        else:
            p = net.params()[name]
            p -= lr * (update.reshape(p.shape) + state.weight_decay * p)
