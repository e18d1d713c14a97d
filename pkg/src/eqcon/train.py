"""Desk-scale trainer: a small feedforward encoder predicts the mean and
scale of a Gaussian whose law is conditioned per sample on linear equality
constraints with input-dependent right-hand sides.

The synthetic task mimics a continuous stirred-tank reactor surrogate: the
inputs are a temperature and two feed flow rates, the outputs are three
product-stream flow rates tied to the inputs by two exact stoichiometric
balances. The constraint matrix is fixed; the right-hand side varies with
the input, so every example exercises the conditioning path.

Training is plain SGD with a fixed step and fully manual backpropagation, so
gradients can be audited against central finite differences. Gradients of
the expected loss reach the encoder either through the closed forms or
through a sampling-based estimator. Baselines: an unconstrained Gaussian
regressor, and the same regressor with predictions repaired by the minimal
L2 or L1 feasibility projection at evaluation time only.

The predicted scale is ``sigma = sigma_floor + softplus(raw)``: the expected
losses reward ever-smaller variance, and the floor keeps the law
non-degenerate.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit

from . import estimators as est_mod
from .constraints import new_constraint
from .errors import NonFiniteLoss, ValidationError
from .estimators import EstimatorKind, _l1_batch_core
from .gaussian import GaussianParams
from .losses import LossKind, folded_abs_mean

# CSTR-style task: outputs (product, reactant_1_out, reactant_2_out) obey
#   -y2 + y3 = -x2 + x3   (reactant consumption balance)
#   -y1 - y2 = -x2        (production balance)
CSTR_MATRIX = np.array([[0.0, -1.0, 1.0], [-1.0, -1.0, 0.0]])
CSTR_NULL_DIR = np.array([-1.0, 1.0, 1.0]) / np.sqrt(3.0)
_INPUT_CENTER = np.array([350.0, 1.5, 1.5])
_INPUT_HALFWIDTH = np.array([50.0, 0.5, 0.5])


def _cstr_rhs(x: np.ndarray) -> np.ndarray:
    return np.stack([x[:, 2] - x[:, 1], -x[:, 1]], axis=1)


@dataclass(frozen=True)
class SplitData:
    x: np.ndarray
    y: np.ndarray
    rhs: np.ndarray  # per-sample constraint right-hand sides


@dataclass(frozen=True)
class CstrTask:
    matrix_a: np.ndarray
    train: SplitData
    val: SplitData
    test: SplitData
    noise_scale: float
    seed: int

    @property
    def n_vars(self) -> int:
        return self.matrix_a.shape[1]


def make_cstr_task(
    n_train: int, n_val: int, n_test: int, noise_scale: float, seed: int
) -> CstrTask:
    """Generate the synthetic reactor task, bit-reproducible from the seed.

    Inputs are uniform on a fixed box (temperature 300..400, feed rates
    1..2); targets come from a smooth conversion-fraction map that satisfies
    both balances exactly, with optional Gaussian noise injected only along
    the constraint null space so targets stay feasible.
    """
    for name, count in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if int(count) != count or count < 1:
            raise ValidationError(f"{name} must be a positive integer, got {count!r}")
    if noise_scale < 0:
        raise ValidationError(f"noise_scale must be >= 0, got {noise_scale}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))

    def draw(count: int) -> SplitData:
        temp = rng.uniform(300.0, 400.0, count)
        feed_1 = rng.uniform(1.0, 2.0, count)
        feed_2 = rng.uniform(1.0, 2.0, count)
        x = np.stack([temp, feed_1, feed_2], axis=1)
        conversion = expit((temp - 350.0) / 25.0)
        produced = conversion * feed_1 * feed_2 / (feed_1 + feed_2)
        y = np.stack([produced, feed_1 - produced, feed_2 - produced], axis=1)
        if noise_scale > 0:
            y = y + rng.normal(0.0, noise_scale, count)[:, None] * CSTR_NULL_DIR
        return SplitData(x=x, y=y, rhs=_cstr_rhs(x))

    return CstrTask(
        matrix_a=CSTR_MATRIX.copy(),
        train=draw(int(n_train)),
        val=draw(int(n_val)),
        test=draw(int(n_test)),
        noise_scale=float(noise_scale),
        seed=int(seed),
    )


class TrainMethod(enum.Enum):
    CLOSED_FORM_L1 = "closed_form_l1"
    CLOSED_FORM_L2 = "closed_form_l2"
    ESTIMATOR = "estimator"
    UNCONSTRAINED = "unconstrained"
    PROJECT_L2 = "project_l2"
    PROJECT_L1 = "project_l1"


_CONSTRAINED_METHODS = (
    TrainMethod.CLOSED_FORM_L1,
    TrainMethod.CLOSED_FORM_L2,
    TrainMethod.ESTIMATOR,
)


@dataclass(frozen=True)
class EncoderSpec:
    """Feedforward encoder: input -> hidden... -> (mean, raw scale)."""

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    init_seed: int = 0

    def validate(self, n_inputs: int, n_outputs: int) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 3:
            raise ValidationError("encoder needs at least one hidden layer")
        if any(w < 1 for w in widths):
            raise ValidationError("layer widths must be positive")
        if widths[0] != n_inputs:
            raise ValidationError(f"first width must equal n_inputs={n_inputs}")
        if widths[-1] != n_outputs:
            raise ValidationError(
                f"last width must be 2*n_vars={n_outputs} (mean and scale heads)"
            )
        if self.activation not in ("tanh", "relu"):
            raise ValidationError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "cstr"
    method: TrainMethod = TrainMethod.CLOSED_FORM_L2
    epochs: int = 60
    learning_rate: float = 0.05
    batch_size: int = 64
    sigma_floor: float = 1e-3
    seed: int = 0
    estimator: EstimatorKind = EstimatorKind.MARGINAL_EXPECTATION
    estimator_loss: LossKind = LossKind.L2
    n_estimator_samples: int = 1

    def validate(self) -> None:
        if self.task != "cstr":
            raise ValidationError(f"unknown task {self.task!r}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.sigma_floor <= 0:
            raise ValidationError("sigma_floor must be > 0")
        for name in ("epochs", "batch_size", "n_estimator_samples"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_mse: float = float("nan")
    violation_rate: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
            "train_loss": self.train_loss,
            "test_mse": self.test_mse,
            "violation_rate": self.violation_rate,
        }


# ---------------------------------------------------------------------------
# encoder: manual forward/backward
# ---------------------------------------------------------------------------


def init_weights(spec: EncoderSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.init_seed), 1]))
    weights = []
    widths = tuple(int(w) for w in spec.layer_widths)
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_out, fan_in))
        b = np.zeros(fan_out)
        weights.append((w, b))
    return weights


def _forward(weights, activation: str, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    for w, b in weights[:-1]:
        z = h @ w.T + b
        pre.append(z)
        h = np.tanh(z) if activation == "tanh" else np.maximum(z, 0.0)
        acts.append(h)
    w, b = weights[-1]
    return h @ w.T + b, (acts, pre)


def _backward(weights, activation: str, caches, d_out: np.ndarray):
    acts, pre = caches
    grads = [None] * len(weights)
    grads[-1] = (d_out.T @ acts[-1], d_out.sum(axis=0))
    upstream = d_out @ weights[-1][0]
    for layer in range(len(weights) - 2, -1, -1):
        z = pre[layer]
        if activation == "tanh":
            local = upstream * (1.0 - np.tanh(z) ** 2)
        else:
            local = upstream * (z > 0.0)
        grads[layer] = (local.T @ acts[layer], local.sum(axis=0))
        if layer > 0:
            upstream = local @ weights[layer][0]
    return grads


def _normalize(x: np.ndarray) -> np.ndarray:
    return (x - _INPUT_CENTER) / _INPUT_HALFWIDTH


def _heads(out: np.ndarray, sigma_floor: float):
    n = out.shape[1] // 2
    mu = out[:, :n]
    raw = out[:, n:]
    sigma = sigma_floor + np.logaddexp(0.0, raw)  # softplus keeps sigma > floor
    return mu, raw, sigma


# ---------------------------------------------------------------------------
# batched conditioning for a fixed matrix, per-sample rhs and diagonal scale
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _BatchCond:
    cond_mean: np.ndarray  # (B, n)
    marg_var: np.ndarray   # (B, n)
    mean_jac: np.ndarray   # (B, n, n)
    weight: np.ndarray     # (B, n)
    s: np.ndarray          # (B, n) variances


def _condition_batch(a_mat, mu, s, rhs) -> _BatchCond:
    n = a_mat.shape[1]
    gram = np.einsum("ij,bj,kj->bik", a_mat, s, a_mat)
    shift = np.linalg.solve(gram, (rhs - mu @ a_mat.T)[..., None])[..., 0]
    weight = shift @ a_mat
    cond_mean = mu + s * weight
    gram_inv_a = np.linalg.solve(gram, np.broadcast_to(a_mat, (len(mu),) + a_mat.shape))
    quad = np.einsum("ji,bjk->bik", a_mat, gram_inv_a)
    mean_jac = np.eye(n) - s[:, :, None] * quad
    marg_var = s - s**2 * np.einsum("bii->bi", quad)
    return _BatchCond(cond_mean, np.clip(marg_var, 0.0, None), mean_jac, weight, s)


def _chain_batch(cond: _BatchCond, g_mean, g_var):
    """Adjoints wrt (cond_mean, marg_var) -> gradients wrt (mu, sigma)."""
    gm = np.einsum("bi,bij->bj", g_mean, cond.mean_jac)
    gs = gm * cond.weight + np.einsum("bi,bij->bj", g_var, cond.mean_jac**2)
    return gm, gs * 2.0 * np.sqrt(cond.s)


def _closed_form_loss(cond: _BatchCond, y, kind: LossKind):
    """Per-sample loss values plus adjoints wrt (cond_mean, marg_var)."""
    m = cond.cond_mean - y
    v = cond.marg_var
    if kind is LossKind.L2:
        return np.sum(m**2 + v, axis=1), 2.0 * m, np.ones_like(m)
    values = np.sum(folded_abs_mean(m, v), axis=1)
    safe_v = np.where(v > 0, v, 1.0)
    g_mean = np.where(v > 0, erf(m / np.sqrt(2.0 * safe_v)), 0.0)
    g_var = np.where(
        v > 0, np.exp(-(m**2) / (2.0 * safe_v)) / np.sqrt(2.0 * np.pi * safe_v), 0.0
    )
    return values, g_mean, g_var


def _sample_constrained_batch(cond: _BatchCond, rng: np.random.Generator) -> np.ndarray:
    """One exact draw per batch row; the conditioned law has rank n - a = 1
    on this task, so a single eigen-direction carries all the spread."""
    cov = np.einsum("bij,bj->bij", cond.mean_jac, cond.s)  # J Sigma
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    eigvals, eigvecs = np.linalg.eigh(cov)
    spread = np.sqrt(np.clip(eigvals[:, -1:], 0.0, None))
    direction = eigvecs[:, :, -1]
    eps = rng.standard_normal((len(cov), 1))
    return cond.cond_mean + direction * spread * eps


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def train_model_with_weights(spec: EncoderSpec, cfg: TrainConfig, data: CstrTask):
    """Train the encoder with plain SGD; returns ``(report, weights)``.

    Deterministic for fixed seeds: data order, initialization, and every
    sampling step derive from the config and spec seeds. Per-epoch train and
    validation MSE are measured on the method's own predictions; the
    violation rate counts test predictions whose constraint residual exceeds
    1e-6 in max norm.
    """
    cfg.validate()
    spec.validate(data.train.x.shape[1], 2 * data.n_vars)
    weights = init_weights(spec)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 2]))
    report = TrainReport()
    x_train = _normalize(data.train.x)
    n_train = len(x_train)
    batch = min(int(cfg.batch_size), n_train)
    for _ in range(int(cfg.epochs)):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, batch):
            idx = order[start : start + batch]
            loss = _train_step(weights, spec, cfg, data, x_train[idx], idx, rng)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"training loss is {loss}; lower the learning rate")
            epoch_loss += loss * len(idx)
        report.train_loss.append(epoch_loss / n_train)
        report.train_mse.append(_mse(weights, spec, cfg, data, data.train))
        report.val_mse.append(_mse(weights, spec, cfg, data, data.val))
    report.test_mse = _mse(weights, spec, cfg, data, data.test)
    preds = predict(weights, spec, cfg, data, data.test)
    residual = preds @ data.matrix_a.T - data.test.rhs
    report.violation_rate = float(np.mean(np.max(np.abs(residual), axis=1) > 1e-6))
    return report, weights


def train_model(spec: EncoderSpec, cfg: TrainConfig, data: CstrTask) -> TrainReport:
    """Train the encoder and return the report (see
    :func:`train_model_with_weights`)."""
    report, _ = train_model_with_weights(spec, cfg, data)
    return report


def _train_step(weights, spec, cfg, data, x_norm, idx, rng) -> float:
    y = data.train.y[idx]
    rhs = data.train.rhs[idx]
    out, caches = _forward(weights, spec.activation, x_norm)
    if not np.all(np.isfinite(out)):
        raise NonFiniteLoss("encoder outputs are not finite; lower the learning rate")
    mu, raw, sigma = _heads(out, cfg.sigma_floor)
    batch = len(x_norm)

    if cfg.method in (TrainMethod.CLOSED_FORM_L1, TrainMethod.CLOSED_FORM_L2):
        kind = LossKind.L1 if cfg.method is TrainMethod.CLOSED_FORM_L1 else LossKind.L2
        cond = _condition_batch(data.matrix_a, mu, sigma**2, rhs)
        values, g_mean, g_var = _closed_form_loss(cond, y, kind)
        d_mu, d_sigma = _chain_batch(cond, g_mean / batch, g_var / batch)
        loss = float(values.mean())
    elif cfg.method is TrainMethod.ESTIMATOR:
        cond = _condition_batch(data.matrix_a, mu, sigma**2, rhs)
        values, _, _ = _closed_form_loss(cond, y, cfg.estimator_loss)
        loss = float(values.mean())
        d_mu, d_logsig = _estimator_grads(cond, mu, sigma, y, rhs, data, cfg, rng)
        d_mu = d_mu / batch
        d_sigma = d_logsig / sigma / batch
    else:  # unconstrained Gaussian objective (projection baselines train alike)
        m = mu - y
        loss = float(np.mean(np.sum(m**2 + sigma**2, axis=1)))
        d_mu = 2.0 * m / batch
        d_sigma = 2.0 * sigma / batch

    if not np.isfinite(loss):
        raise NonFiniteLoss(f"training loss is {loss}; lower the learning rate")
    d_raw = d_sigma * expit(raw)  # softplus'
    d_out = np.concatenate([d_mu, d_raw], axis=1)
    grads = _backward(weights, spec.activation, caches, d_out)
    for layer, (gw, gb) in enumerate(grads):
        w, b = weights[layer]
        weights[layer] = (w - cfg.learning_rate * gw, b - cfg.learning_rate * gb)
    return loss


def _estimator_grads(cond, mu, sigma, y, rhs, data, cfg: TrainConfig, rng):
    """Per-sample estimator gradients wrt (mu, log sigma).

    The marginal-expectation design is batch-vectorized; the remaining
    designs fall back to one estimator call per sample.
    """
    if cfg.estimator is EstimatorKind.MARGINAL_EXPECTATION:
        acc_mu = np.zeros_like(cond.cond_mean)
        acc_ls = np.zeros_like(cond.cond_mean)
        for _ in range(int(cfg.n_estimator_samples)):
            z = _sample_constrained_batch(cond, rng)
            if cfg.estimator_loss is LossKind.L2:
                c = 2.0 * (z - y)
            else:
                c = np.sign(z - y)
            gm, gls = _chain_batch(cond, c, np.zeros_like(c))
            acc_mu += gm
            acc_ls += gls
        return acc_mu / cfg.n_estimator_samples, acc_ls / cfg.n_estimator_samples
    d_mu = np.zeros_like(mu)
    d_ls = np.zeros_like(mu)
    for row in range(len(mu)):
        cs_row = new_constraint(data.matrix_a, rhs[row])
        params_row = GaussianParams.diagonal(mu[row], sigma[row] ** 2)
        estimate = est_mod.estimate_grad(
            cfg.estimator,
            params_row,
            cs_row,
            y[row],
            cfg.estimator_loss,
            rng,
            cfg.n_estimator_samples,
        )
        d_mu[row] = estimate.grad_mean
        d_ls[row] = estimate.grad_scale
    return d_mu, d_ls


def predict(weights, spec: EncoderSpec, cfg: TrainConfig, data: CstrTask, split: SplitData) -> np.ndarray:
    """Method-dependent point predictions for a data split."""
    out, _ = _forward(weights, spec.activation, _normalize(split.x))
    mu, _, sigma = _heads(out, cfg.sigma_floor)
    if cfg.method in _CONSTRAINED_METHODS:
        cond = _condition_batch(data.matrix_a, mu, sigma**2, split.rhs)
        return cond.cond_mean
    if cfg.method is TrainMethod.UNCONSTRAINED:
        return mu
    a_mat = data.matrix_a
    residual = split.rhs - mu @ a_mat.T
    if cfg.method is TrainMethod.PROJECT_L2:
        correction = np.linalg.solve(a_mat @ a_mat.T, residual.T).T @ a_mat
        return mu + correction
    projected, _, _ = _l1_batch_core(a_mat, mu, residual)
    return projected


def predict_scales(weights, spec: EncoderSpec, cfg: TrainConfig, split: SplitData) -> np.ndarray:
    """Predicted sigma values (always >= sigma_floor by construction)."""
    out, _ = _forward(weights, spec.activation, _normalize(split.x))
    return _heads(out, cfg.sigma_floor)[2]


def _mse(weights, spec, cfg, data, split: SplitData) -> float:
    preds = predict(weights, spec, cfg, data, split)
    return float(np.mean((preds - split.y) ** 2))


# ---------------------------------------------------------------------------
# gradient audit
# ---------------------------------------------------------------------------


def _pack(weights) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in weights])


def _unpack(flat: np.ndarray, template):
    weights = []
    pos = 0
    for w, b in template:
        nw = w.size
        weights.append(
            (flat[pos : pos + nw].reshape(w.shape), flat[pos + nw : pos + nw + b.size])
        )
        pos += nw + b.size
    return weights


def finite_diff_check(
    spec: EncoderSpec, cfg: TrainConfig, data: CstrTask, n_probes: int, step: float = 1e-5
) -> float:
    """Audit backpropagated gradients against central finite differences.

    Evaluates the full-train-split closed-form objective at ``n_probes``
    randomly chosen weight coordinates and returns the worst relative error.
    Only the deterministic closed-form methods can be audited this way.
    """
    cfg.validate()
    if cfg.method not in (TrainMethod.CLOSED_FORM_L1, TrainMethod.CLOSED_FORM_L2):
        raise ValidationError("finite_diff_check applies to closed-form methods")
    if n_probes < 1:
        raise ValidationError(f"n_probes must be >= 1, got {n_probes}")
    spec.validate(data.train.x.shape[1], 2 * data.n_vars)
    weights = init_weights(spec)
    kind = LossKind.L1 if cfg.method is TrainMethod.CLOSED_FORM_L1 else LossKind.L2
    x_norm = _normalize(data.train.x)
    y = data.train.y
    rhs = data.train.rhs

    def objective(weight_list) -> float:
        out, _ = _forward(weight_list, spec.activation, x_norm)
        mu, _, sigma = _heads(out, cfg.sigma_floor)
        cond = _condition_batch(data.matrix_a, mu, sigma**2, rhs)
        values, _, _ = _closed_form_loss(cond, y, kind)
        return float(values.mean())

    out, caches = _forward(weights, spec.activation, x_norm)
    mu, raw, sigma = _heads(out, cfg.sigma_floor)
    cond = _condition_batch(data.matrix_a, mu, sigma**2, rhs)
    _, g_mean, g_var = _closed_form_loss(cond, y, kind)
    batch = len(x_norm)
    d_mu, d_sigma = _chain_batch(cond, g_mean / batch, g_var / batch)
    d_out = np.concatenate([d_mu, d_sigma * expit(raw)], axis=1)
    analytic = _pack(_backward(weights, spec.activation, caches, d_out))

    flat = _pack(weights)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 3]))
    probes = rng.choice(flat.size, size=min(int(n_probes), flat.size), replace=False)
    worst = 0.0
    for j in probes:
        h = step * (1.0 + abs(float(flat[j])))
        plus = flat.copy()
        plus[j] += h
        minus = flat.copy()
        minus[j] -= h
        numeric = (objective(_unpack(plus, weights)) - objective(_unpack(minus, weights))) / (2.0 * h)
        denom = max(abs(numeric), abs(float(analytic[j])), 1e-10)
        worst = max(worst, abs(float(analytic[j]) - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def report_json(report: TrainReport, cfg: TrainConfig, spec: EncoderSpec) -> dict:
    return {
        "config": {
            "task": cfg.task,
            "method": cfg.method.value,
            "estimator": cfg.estimator.value,
            "estimator_loss": cfg.estimator_loss.value,
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "sigma_floor": cfg.sigma_floor,
            "seed": cfg.seed,
            "encoder": {
                "layer_widths": list(spec.layer_widths),
                "activation": spec.activation,
                "init_seed": spec.init_seed,
            },
        },
        "report": report.to_dict(),
    }


def write_train_json(path, report: TrainReport, cfg: TrainConfig, spec: EncoderSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_json(report, cfg, spec), fh, indent=2)
        fh.write("\n")
