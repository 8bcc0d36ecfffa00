"""Meta-encoder: an MLP that emits one m x k linear map per input row.

The encoder output for row x is W(x); its latent code is
``z = sp_alpha(W(x))^T x``, i.e. ``z_r = sum_j W_jr x_j`` over the entries
that survive top-alpha sparsification of each column.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diffcore as dc
from . import geometry as geo

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    k: int = 4
    alpha: int | None = None  # None means no sparsity (alpha = m)
    lambda_y: float = 1.0
    lambda_st: float = 1.0
    lambda_so: float = 0.0
    lambda_co: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 300
    early_stopping_patience: int = 20
    pretrain_epochs: int = 10
    ramp_epochs: int = 10
    finetune_epochs: int = 100
    val_fraction: float = 0.1
    seed: int = 0
    stability_mode: str = "jacobian"
    perturbation_step: float = 1e-3
    hidden: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("lambda_y", "lambda_st", "lambda_so", "lambda_co"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.stability_mode not in ("jacobian", "perturbation"):
            raise ValueError(f"unknown stability mode {self.stability_mode!r}")
        if self.k < 1:
            raise ValueError("k must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = None if self.hidden is None else list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        if d.get("hidden") is not None:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def default_hidden(m: int) -> tuple[int, int]:
    return (max(4 * m, 32), max(2 * m, 16))


class MetaEncoder:
    """Three fully connected layers, tanh between them, output reshaped to m x k."""

    def __init__(self, m: int, k: int, alpha: int | None = None, hidden=None, seed: int = 0):
        alpha = m if alpha is None else int(alpha)
        if not 1 <= alpha <= m:
            raise dc.ContractError(f"alpha must lie in [1, {m}], got {alpha}")
        self.m, self.k, self.alpha, self.seed = int(m), int(k), alpha, seed
        h1, h2 = default_hidden(m) if hidden is None else hidden
        self.layer_dims = [self.m, int(h1), int(h2), self.m * self.k]
        rng = np.random.default_rng(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        self.config: TrainingConfig | None = None

    # -- numpy inference ----------------------------------------------
    def transforms(self, X) -> np.ndarray:
        """Dense transforms W(x) for each row, shape (n, m, k)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.m:
            raise dc.DimensionError(f"expected {self.m} features, got {X.shape[1]}")
        A1, b1, A2, b2, A3, b3 = self.params
        h = np.tanh(X @ A1 + b1)
        h = np.tanh(h @ A2 + b2)
        return (h @ A3 + b3).reshape(-1, self.m, self.k)

    def sparse_transforms(self, X, alpha: int | None = None) -> np.ndarray:
        return sparsify_topk(self.transforms(X), self.alpha if alpha is None else alpha)

    def encode(self, X, alpha: int | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        W = self.sparse_transforms(X, alpha)
        return np.einsum("nmk,nm->nk", W, X)

    # -- graph construction -------------------------------------------
    def graph(self, X: dc.Tensor, params: list[dc.Tensor]) -> dc.Tensor:
        A1, b1, A2, b2, A3, b3 = params
        h = dc.tanh(X @ A1 + b1)
        h = dc.tanh(h @ A2 + b2)
        out = h @ A3 + b3
        return dc.reshape(out, (X.shape[0], self.m, self.k))

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "m": self.m,
            "k": self.k,
            "alpha": self.alpha,
            "layer_dims": list(self.layer_dims),
            "weights": [p.ravel().tolist() for p in self.params],
            "training_config": None if self.config is None else self.config.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetaEncoder":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format_version')!r}")
        dims = d["layer_dims"]
        model = cls(d["m"], d["k"], d["alpha"], hidden=dims[1:3], seed=d["seed"])
        shapes = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        model.params = [np.array(w, dtype=np.float64).reshape(s) for w, s in zip(d["weights"], shapes)]
        if d.get("training_config") is not None:
            model.config = TrainingConfig.from_dict(d["training_config"])
        return model


# ----------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------
def forward_transform(model: MetaEncoder, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.m,):
        raise dc.DimensionError(f"expected a vector of length {model.m}")
    return model.transforms(x[None, :])[0]


def topk_mask(W: np.ndarray, alpha: int) -> np.ndarray:
    """1.0 where an entry is among the alpha largest |w| of its column.

    Works on (m, k) or (n, m, k); ties keep the lower feature index.
    """
    W = np.asarray(W, dtype=np.float64)
    m = W.shape[-2]
    if not 1 <= alpha <= m:
        raise dc.ContractError(f"alpha must lie in [1, {m}], got {alpha}")
    if alpha == m:
        return np.ones_like(W)
    order = np.argsort(-np.abs(W), axis=-2, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(m).reshape((m, 1)), axis=-2)
    return (ranks < alpha).astype(np.float64)


def sparsify_topk(W, alpha: int):
    """Keep the alpha largest-magnitude entries of each column.

    Accepts arrays or tensors; for tensors the mask is a constant, so the
    gradient passes straight through the surviving entries.
    """
    if isinstance(W, dc.Tensor):
        return W * topk_mask(W.data, alpha)
    W = np.asarray(W, dtype=np.float64)
    return W * topk_mask(W, alpha)


def encode(model: MetaEncoder, x, alpha: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.m,):
        raise dc.DimensionError(f"expected a vector of length {model.m}")
    return model.encode(x[None, :], alpha)[0]


@dataclass
class EncodedBatch:
    X: np.ndarray
    Y: np.ndarray
    W: dc.Tensor  # sparsified transforms (n, m, k)
    Z: dc.Tensor  # latents (n, k)
    X_t: dc.Tensor = field(repr=False, default=None)
    mask: np.ndarray = field(repr=False, default=None)


def _apply(Wsp: dc.Tensor, X: dc.Tensor) -> dc.Tensor:
    n, m = X.shape
    return dc.tsum(Wsp * dc.reshape(X, (n, m, 1)), axis=1)


def encode_batch(model: MetaEncoder, params, X, Y, alpha: int, track_input: bool = False) -> EncodedBatch:
    X = np.asarray(X, dtype=np.float64)
    X_t = dc.Tensor(X, requires_grad=track_input)
    W = model.graph(X_t, params)
    mask = topk_mask(W.data, alpha)
    Wsp = W * mask
    return EncodedBatch(X, np.asarray(Y, dtype=np.float64), Wsp, _apply(Wsp, X_t), X_t, mask)


def _kl_parts(batch: EncodedBatch, schema: geo.FeatureSchema):
    n = batch.X.shape[0]
    if n < 2:
        raise dc.ContractError("KL losses need a batch of at least two rows")
    P_X = geo.neighbor_distribution(geo.pairwise_input_distance(batch.X, schema))
    P_Y = geo.neighbor_distribution(geo.pairwise_cosine(batch.Y))
    P_Z = geo.neighbor_distribution_t(geo.pairwise_cosine_t(batch.Z))
    P_W = geo.neighbor_distribution_t(geo.pairwise_transform_t(batch.W))
    lx = dc.mean(geo.kl_rows_t(P_X, P_Z) + geo.kl_rows_t(P_Z, P_W))
    ly = dc.mean(geo.kl_rows_t(P_Y, P_Z))
    return lx, ly


def loss_kl(batch: EncodedBatch, schema: geo.FeatureSchema) -> tuple[float, float]:
    lx, ly = _kl_parts(batch, schema)
    return lx.item(), ly.item()


def soft_orthogonality_t(Wsp: dc.Tensor) -> dc.Tensor:
    k = Wsp.shape[-1]
    gram = dc.swapaxes(Wsp) @ Wsp
    return dc.mean(dc.tsum(dc.square(gram - np.eye(k)), axis=(1, 2)))


def loss_soft_orthogonality(W_batch, alpha: int) -> float:
    """Mean squared Frobenius distance of each column Gram matrix from I_k."""
    W = np.asarray(W_batch, dtype=np.float64)
    if W.ndim == 2:
        W = W[None]
    if W.shape[0] == 0:
        raise dc.ContractError("empty batch")
    Wsp = sparsify_topk(W, alpha)
    gram = np.transpose(Wsp, (0, 2, 1)) @ Wsp
    return float(np.mean(np.sum((gram - np.eye(W.shape[2])) ** 2, axis=(1, 2))))


def collinearity_t(Z: dc.Tensor) -> dc.Tensor:
    n, k = Z.shape
    Zc = Z - dc.mean(Z, axis=0, keepdims=True)
    var = dc.mean(dc.square(Zc), axis=0, keepdims=True)
    Zs = Zc / dc.sqrt(dc.clamp_min(var, 1e-16))  # std floor 1e-8
    C = (Zs.T @ Zs) * (1.0 / n)
    return dc.tsum(dc.square(C - np.eye(k)))


def loss_collinearity(Z_batch) -> float:
    """||C(Z) - I||_F^2 with population Pearson correlations."""
    Z = np.asarray(Z_batch, dtype=np.float64)
    if Z.shape[0] < 2:
        raise dc.ContractError("need at least two rows")
    return collinearity_t(dc.Tensor(Z)).item()


def _stability_jacobian(model, params, batch: EncodedBatch) -> dc.Tensor:
    if batch.X_t is None or not batch.X_t.requires_grad:
        raise dc.ContractError("jacobian stability needs a batch encoded with track_input=True")
    J = []
    for r in range(model.k):
        (g,) = dc.grad(dc.tsum(batch.Z[:, r]), [batch.X_t], create_graph=True)
        J.append(g)
    J = dc.stack(J, axis=2)  # (n, m, k), J[i, j, r] = dz_ir / dx_ij
    D = J - batch.W
    return dc.mean(dc.tsum(dc.square(D), axis=(1, 2)))


def _stability_perturbation(model, params, batch: EncodedBatch, step: float, rng) -> dc.Tensor:
    # one random orthonormal frame per batch: summing ||D q||^2 over a full
    # frame recovers ||D||_F^2 up to O(step)
    n, m = batch.X.shape
    Q, R = np.linalg.qr(rng.standard_normal((m, m)))
    Q = Q * np.sign(np.diag(R))
    deltas = step * Q.T  # row q is the q-th direction
    Xp = (batch.X[:, None, :] + deltas[None, :, :]).reshape(n * m, m)
    Wp = model.graph(dc.Tensor(Xp), params)
    mask = np.repeat(batch.mask, m, axis=0)
    Wp_sp = Wp * mask
    W_rep = dc.reshape(dc.stack([batch.W] * m, axis=1), (n * m, m, model.k))
    res = dc.tsum((Wp_sp - W_rep) * Xp[:, :, None], axis=1)  # (n*m, k)
    per_row = dc.tsum(dc.reshape(dc.square(res), (n, m * model.k)), axis=1)
    return dc.mean(per_row) * (1.0 / step**2)


def stability_t(model, params, batch: EncodedBatch, mode: str, step: float = 1e-3, rng=None) -> dc.Tensor:
    if mode == "jacobian":
        return _stability_jacobian(model, params, batch)
    if mode == "perturbation":
        rng = np.random.default_rng(0) if rng is None else rng
        return _stability_perturbation(model, params, batch, step, rng)
    raise ValueError(f"unknown stability mode {mode!r}")


def loss_stability(model: MetaEncoder, X, mode: str = "jacobian", alpha: int | None = None,
                   step: float = 1e-3, rng=None) -> float:
    """Mean ||J(x) - sp(W(x))||_F^2 over the rows of ``X``."""
    alpha = model.alpha if alpha is None else alpha
    params = [dc.Tensor(p) for p in model.params]
    batch = encode_batch(model, params, X, np.zeros((len(X), 1)), alpha, track_input=(mode == "jacobian"))
    return stability_t(model, params, batch, mode, step, rng).item()


def total_loss(batch: EncodedBatch, model: MetaEncoder, params, config: TrainingConfig,
               schema: geo.FeatureSchema, rng=None) -> tuple[dc.Tensor, dict]:
    """Weighted objective for one mini-batch, plus its components as floats."""
    lx, ly = _kl_parts(batch, schema)
    parts = {"kl_x": lx, "kl_y": ly}
    loss = lx
    if config.lambda_y:
        loss = loss + config.lambda_y * ly
    if config.lambda_st:
        parts["st"] = stability_t(model, params, batch, config.stability_mode, config.perturbation_step, rng)
        loss = loss + config.lambda_st * parts["st"]
    if config.lambda_so:
        parts["so"] = soft_orthogonality_t(batch.W)
        loss = loss + config.lambda_so * parts["so"]
    if config.lambda_co:
        parts["co"] = collinearity_t(batch.Z)
        loss = loss + config.lambda_co * parts["co"]
    return loss, {key: v.item() for key, v in parts.items()}


def batch_objective(model: MetaEncoder, params_np, X, Y, config: TrainingConfig, schema, alpha: int,
                    rng=None, with_grad: bool = True):
    """Loss value (and parameter gradients) of the full objective on one batch."""
    params = [dc.Tensor(p, requires_grad=with_grad) for p in params_np]
    track = config.lambda_st > 0 and config.stability_mode == "jacobian"
    batch = encode_batch(model, params, X, Y, alpha, track_input=track)
    loss, parts = total_loss(batch, model, params, config, schema, rng)
    if not with_grad:
        return loss.item(), None, parts
    grads = dc.backward(loss, params)
    return loss.item(), [grads[p] for p in params], parts


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------
def alpha_schedule(m: int, alpha: int, config: TrainingConfig) -> list[int]:
    """Effective sparsity per epoch for the pretrain and ramp phases."""
    sched = [m] * config.pretrain_epochs
    R = config.ramp_epochs
    for e in range(1, R + 1):
        sched.append(int(round(m - (m - alpha) * e / R)))
    return sched


def _batches(idx: np.ndarray, size: int):
    for s in range(0, len(idx), size):
        b = idx[s : s + size]
        if len(b) >= 2:
            yield b


def _mean_loss(model, params, X, Y, config, schema, alpha, rng) -> float:
    tot, cnt = 0.0, 0
    for b in _batches(np.arange(len(X)), config.batch_size):
        val, _, _ = batch_objective(model, params, X[b], Y[b], config, schema, alpha, rng, with_grad=False)
        tot += val * len(b)
        cnt += len(b)
    return tot / max(cnt, 1)


def train(X, Y, config: TrainingConfig, schema: geo.FeatureSchema, history: list | None = None) -> MetaEncoder:
    """Fit a meta-encoder with pretrain -> sparsity ramp -> finetune.

    ``Y`` holds the black-box probability rows aligned with ``X``.
    Returns the weights with the lowest validation loss seen during the
    finetune phase.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise dc.ContractError("empty dataset")
    if len(Y) != len(X):
        raise dc.ContractError("black-box outputs are not row-aligned with the dataset")
    if Y.ndim == 1:
        Y = Y[:, None]
    n, m = X.shape
    if schema.m != m:
        raise dc.DimensionError("schema does not match the data width")
    alpha = m if config.alpha is None else int(config.alpha)
    model = MetaEncoder(m, config.k, alpha, hidden=config.hidden, seed=config.seed)
    model.config = config
    rng = np.random.default_rng([config.seed, 1])

    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    if n_val < 2 or n - n_val < 2:
        n_val = 0
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    params = [p.copy() for p in model.params]
    state = dc.AdamState.zeros_like(params)
    schedule = alpha_schedule(m, alpha, config)
    best, best_params, stale = np.inf, [p.copy() for p in params], 0

    for epoch in range(config.max_epochs):
        finetune = epoch >= len(schedule)
        if finetune and epoch - len(schedule) >= config.finetune_epochs:
            break
        a_eff = alpha if finetune else schedule[epoch]
        order = tr_idx[rng.permutation(len(tr_idx))]
        tot, cnt = 0.0, 0
        for b in _batches(order, config.batch_size):
            val, grads, _ = batch_objective(model, params, X[b], Y[b], config, schema, a_eff, rng)
            params, state = dc.adam_step(params, grads, state, lr=config.learning_rate)
            tot += val * len(b)
            cnt += len(b)
        train_loss = tot / max(cnt, 1)
        rec = {"epoch": epoch, "alpha": a_eff, "train_loss": train_loss}
        if finetune:
            if n_val:
                score = _mean_loss(model, params, X[val_idx], Y[val_idx], config, schema, alpha,
                                   np.random.default_rng([config.seed, 2]))
                rec["val_loss"] = score
            else:
                score = train_loss
            if score < best:
                best, best_params, stale = score, [p.copy() for p in params], 0
            else:
                stale += 1
                if stale >= config.early_stopping_patience:
                    if history is not None:
                        history.append(rec)
                    break
        if history is not None:
            history.append(rec)
        log.debug("epoch %d alpha %d loss %.6f", epoch, a_eff, train_loss)

    if not np.isfinite(best):
        best_params = params
    model.params = best_params
    return model
