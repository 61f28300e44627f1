"""Linear encoder/decoder co-design against a frozen task matrix.

The loss being minimized, for encoder A (Z-by-n), decoder B (n-by-Z) and a
fixed task matrix K (m-by-n), is the batch mean of

    ||K x - K B A x||^2  +  lam * ||x - B A x||^2

The rank-revealing closed form (:func:`solve_theorem1`) achieves zero task
loss at bottleneck Z = rank(K); :func:`descend_linear` reaches the same
optimum by plain gradient descent on the analytic gradients.
"""

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .errors import Diverged, ShapeMismatch
from .linalg import as_matrix, svd_compact

DIVERGENCE_CEILING = 1e12


@dataclass(frozen=True)
class LinearCodesign:
    """Encoder/decoder pair (a, b) around a frozen task matrix k."""

    a: np.ndarray      # z_dim x n
    b: np.ndarray      # n x z_dim
    k: np.ndarray      # m x n, never mutated
    z_dim: int
    lam: float = 0.0

    def __post_init__(self):
        n = self.k.shape[1]
        if self.a.shape != (self.z_dim, n):
            raise ShapeMismatch(f"encoder shape {self.a.shape}, expected {(self.z_dim, n)}")
        if self.b.shape != (n, self.z_dim):
            raise ShapeMismatch(f"decoder shape {self.b.shape}, expected {(n, self.z_dim)}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    task_loss: float
    recon_loss: float
    weighted: float


def _check_batch(xs, n):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[None, :]
    if xs.ndim != 2 or xs.shape[1] != n:
        raise ShapeMismatch(f"batch shape {xs.shape}, expected (*, {n})")
    if xs.shape[0] == 0:
        raise ShapeMismatch("batch is empty")
    return xs


def eval_linear_loss(model: LinearCodesign, xs) -> LossReport:
    """Mean task / reconstruction / weighted loss of *model* over batch *xs*."""
    xs = _check_batch(xs, model.k.shape[1])
    xhat = (xs @ model.a.T) @ model.b.T
    task_res = xs @ model.k.T - xhat @ model.k.T
    recon_res = xs - xhat
    task = float(np.mean(np.sum(task_res * task_res, axis=1)))
    recon = float(np.mean(np.sum(recon_res * recon_res, axis=1)))
    return LossReport(task_loss=task, recon_loss=recon, weighted=task + model.lam * recon)


def solve_theorem1(k, z_dim: int) -> LinearCodesign:
    """Closed-form co-design from the compact SVD of *k*.

    For z_dim >= rank(k) the encoder is the top right-singular rows (padded
    with zero rows up to z_dim) and the decoder its transpose, giving zero
    task loss for every input.  For z_dim < rank(k) the top-z_dim truncation
    is returned; its task loss is strictly positive on generic inputs.
    """
    k = as_matrix(k, "k")
    if z_dim < 1:
        raise ValueError("z_dim must be >= 1")
    res = svd_compact(k)
    n = k.shape[1]
    keep = min(z_dim, res.rank)
    a = np.zeros((z_dim, n))
    a[:keep] = res.vt[:keep]
    return LinearCodesign(a=a, b=a.T.copy(), k=k, z_dim=z_dim, lam=0.0)


def linear_gradients(model: LinearCodesign, xs):
    """Batch-mean analytic gradients of the weighted loss w.r.t. (a, b).

    Per sample, with task residual r_t = Kx - KBAx and recon residual
    r_r = x - BAx:

        grad_a = -2 B'K' r_t x' - 2 lam B' r_r x'
        grad_b = -2 K' r_t (Ax)' - 2 lam r_r (Ax)'
    """
    xs = _check_batch(xs, model.k.shape[1])
    a, b, k, lam = model.a, model.b, model.k, model.lam
    x = xs.T                      # n x N
    z = a @ x                     # Z x N
    xhat = b @ z                  # n x N
    task_res = k @ x - k @ xhat   # m x N
    recon_res = x - xhat          # n x N
    n_samples = xs.shape[0]

    kt_rt = k.T @ task_res
    grad_a = (-2.0 * (b.T @ kt_rt) @ x.T - 2.0 * lam * (b.T @ recon_res) @ x.T) / n_samples
    grad_b = (-2.0 * kt_rt @ z.T - 2.0 * lam * recon_res @ z.T) / n_samples
    return grad_a, grad_b


def init_linear_codesign(k, z_dim: int, lam: float, seed: int) -> LinearCodesign:
    """Small symmetric random start, entries i.i.d. uniform in [-0.1, 0.1]."""
    k = as_matrix(k, "k")
    n = k.shape[1]
    rng = np.random.default_rng([seed, 0])
    a = rng.uniform(-0.1, 0.1, size=(z_dim, n))
    b = rng.uniform(-0.1, 0.1, size=(n, z_dim))
    return LinearCodesign(a=a, b=b, k=k, z_dim=z_dim, lam=lam)


def descend_linear(k, z_dim: int, lam: float, cfg: TrainConfig,
                   task_aware: bool = True):
    """Gradient descent on the weighted loss with seeded Gaussian inputs.

    Inputs are i.i.d. standard Gaussian, resampled each step unless
    ``cfg.resample`` is False (then one fixed batch is drawn up front).
    Each trace entry reports the loss of the pre-update model on that
    step's batch.  With ``task_aware=False`` the updates follow the pure
    reconstruction gradient (the task term still appears in the trace, it
    just never drives a step).
    """
    model = init_linear_codesign(k, z_dim, lam, cfg.seed)
    if not task_aware:
        # Recon-only baseline: descend on the loss with the task term muted.
        grad_model = LinearCodesign(a=model.a, b=model.b,
                                    k=np.zeros_like(model.k),
                                    z_dim=z_dim, lam=1.0)
    rng = np.random.default_rng([cfg.seed, 1])
    n = model.k.shape[1]
    fixed_batch = None
    if not cfg.resample:
        fixed_batch = rng.standard_normal((cfg.batch_size, n))

    trace = []
    a, b = model.a, model.b
    for _ in range(cfg.steps):
        xs = fixed_batch if fixed_batch is not None else rng.standard_normal((cfg.batch_size, n))
        current = LinearCodesign(a=a, b=b, k=model.k, z_dim=z_dim, lam=lam)
        report = eval_linear_loss(current, xs)
        if not np.isfinite(report.weighted) or report.weighted > DIVERGENCE_CEILING:
            raise Diverged(f"weighted loss {report.weighted} at step {len(trace)}")
        trace.append(report)
        if task_aware:
            ga, gb = linear_gradients(current, xs)
        else:
            ga, gb = linear_gradients(
                LinearCodesign(a=a, b=b, k=grad_model.k, z_dim=z_dim, lam=1.0), xs)
        a = a - cfg.learning_rate * ga
        b = b - cfg.learning_rate * gb

    final = LinearCodesign(a=a, b=b, k=model.k, z_dim=z_dim, lam=lam)
    return final, trace
