"""Co-design training schemes around a pre-trained task network.

Schemes:
  tasknet           encoder/decoder trained on task loss + lam * recon loss
  fully_task_aware  tasknet with lam pinned to 0
  task_agnostic     encoder/decoder trained on reconstruction only; the
                    frozen task module just consumes the decoded input
  end_to_end        same wiring, task parameters also update

Targets default to the pre-trained task module's own outputs on clean
inputs (its predicted class for classification, its raw output vector for
regression), so the objective is "make the task module behave as if it saw
the original input".  Dataset-label supervision is available via config.
Accuracy, where reported, is always measured against dataset labels.
"""

from dataclasses import dataclass, replace

import json
import os

import numpy as np

from .config import SCHEMES, TrainConfig
from .datagen import CLASSIFICATION, LabeledDataset
from .errors import ConfigError, Diverged
from .nn import (
    MEAN_SQUARED_ERROR,
    SOFTMAX_CROSS_ENTROPY,
    Mlp,
    apply_grads,
    backward_from,
    clip_grads,
    forward,
    freeze,
    init_mlp,
    load_mlp,
    loss_and_grad,
    param_count,
    save_mlp,
    split_at,
)

DIVERGENCE_CEILING = 1e12
KL_WEIGHT = 1e-3

METRICS_HEADER = ("scheme,z_dim,lambda,step,task_loss,recon_loss,"
                  "weighted_loss,accuracy,compression_ratio")


@dataclass(frozen=True)
class CodesignModel:
    encoder: Mlp
    decoder: Mlp
    task: Mlp
    z_dim: int
    lam: float
    split_index: int = 0     # 0 = whole task module runs server-side
    vae: bool = False


@dataclass(frozen=True)
class MetricsRow:
    scheme: str
    z_dim: int
    lam: float
    step: int
    task_loss: float
    recon_loss: float
    weighted_loss: float
    accuracy: float | None
    compression_ratio: float


def predict(net: Mlp, x):
    out, _ = forward(net, x)
    return out


def _split_parts(model: CodesignModel):
    if model.split_index:
        return split_at(model.task, model.split_index)
    return None, model.task


def robot_encode(model: CodesignModel, x):
    """Robot-side computation: optional head layers, then the encoder."""
    head, _ = _split_parts(model)
    features = predict(head, x) if head is not None else np.asarray(x, dtype=np.float64)
    z = predict(model.encoder, features)
    if model.vae:
        z = z[:, :model.z_dim]
    return z

def server_predict(model: CodesignModel, z):
    """Server-side computation: decoder, then the remaining task layers."""
    _, tail = _split_parts(model)
    return predict(tail, predict(model.decoder, z))


def pipeline_predict(model: CodesignModel, x):
    return server_predict(model, robot_encode(model, x))


def robot_share(model: CodesignModel) -> float:
    """Fraction of all parameters that live on the robot side."""
    enc_p, dec_p = param_count(model.encoder), param_count(model.decoder)
    head, tail = _split_parts(model)
    head_p = param_count(head) if head is not None else 0
    tail_p = param_count(tail)
    return (head_p + enc_p) / (head_p + tail_p + enc_p + dec_p)


def _loss_kind(data: LabeledDataset):
    return SOFTMAX_CROSS_ENTROPY if data.task_kind == CLASSIFICATION else MEAN_SQUARED_ERROR


def _policy_targets(task_net, data, inputs, labels, cfg):
    """Targets per the self-supervision policy (or dataset labels on request)."""
    if cfg.use_dataset_labels:
        return labels
    clean = predict(task_net, inputs)
    if data.task_kind == CLASSIFICATION:
        return np.argmax(clean, axis=1)
    return clean


def _build_autoencoder(feature_dim, cfg):
    z_out = 2 * cfg.z_dim if cfg.vae else cfg.z_dim
    if cfg.hidden > 0:
        enc = init_mlp([feature_dim, cfg.hidden, z_out], ["tanh", "identity"],
                       seed=[cfg.seed, 0])
        dec = init_mlp([cfg.z_dim, cfg.hidden, feature_dim], ["tanh", "identity"],
                       seed=[cfg.seed, 1])
    else:
        enc = init_mlp([feature_dim, z_out], ["identity"], seed=[cfg.seed, 0])
        dec = init_mlp([cfg.z_dim, feature_dim], ["identity"], seed=[cfg.seed, 1])
    return enc, dec


def _encode_eval(enc, x, z_dim, vae):
    z = predict(enc, x)
    return z[:, :z_dim] if vae else z


def _eval_row(enc, dec, serving, scheme, cfg, features, targets, labels,
              kind, step, raw_dim):
    z = _encode_eval(enc, features, cfg.z_dim, cfg.vae)
    xhat = predict(dec, z)
    yhat = predict(serving, xhat)
    if scheme == "task_agnostic" and not cfg.log_task_loss:
        task_loss = float("nan")
    else:
        task_loss, _ = loss_and_grad(kind, yhat, targets)
    recon_res = xhat - features
    recon_loss = float(np.sum(recon_res * recon_res) / features.shape[0])
    accuracy = None
    if labels is not None:
        accuracy = float(np.mean(np.argmax(yhat, axis=1) == labels))
    return MetricsRow(
        scheme=scheme, z_dim=cfg.z_dim, lam=cfg.lam, step=step,
        task_loss=task_loss, recon_loss=recon_loss,
        weighted_loss=task_loss + cfg.lam * recon_loss,
        accuracy=accuracy, compression_ratio=raw_dim / cfg.z_dim)


def _run_codesign(task_net: Mlp, data: LabeledDataset, cfg: TrainConfig,
                  split_index=0):
    scheme = cfg.scheme
    if cfg.vae and scheme != "task_agnostic":
        raise ConfigError("the VAE flag applies to the task_agnostic scheme only")
    if split_index and scheme == "end_to_end":
        raise ConfigError("split computation keeps the task module frozen")

    if split_index:
        head, tail = split_at(task_net, split_index)
        feat_train = predict(head, data.train_inputs)
        feat_test = predict(head, data.test_inputs)
    else:
        head, tail = None, task_net
        feat_train, feat_test = data.train_inputs, data.test_inputs

    kind = _loss_kind(data)
    targets_train = _policy_targets(task_net, data, data.train_inputs,
                                    data.train_targets, cfg)
    targets_test = _policy_targets(task_net, data, data.test_inputs,
                                   data.test_targets, cfg)
    labels_test = data.test_targets if data.task_kind == CLASSIFICATION else None

    enc, dec = _build_autoencoder(feat_train.shape[1], cfg)
    serving = freeze(tail, scheme != "end_to_end")

    rng = np.random.default_rng([cfg.seed, 2])
    n_train = feat_train.shape[0]
    trace = []

    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n_train, cfg.batch_size)
        x = feat_train[idx]
        tgt = targets_train[idx]

        z_raw, tape_e = forward(enc, x)
        if cfg.vae:
            mu, logvar = z_raw[:, :cfg.z_dim], z_raw[:, cfg.z_dim:]
            eps = rng.standard_normal(mu.shape)
            z = mu + np.exp(0.5 * logvar) * eps
        else:
            z = z_raw
        xhat, tape_d = forward(dec, z)
        yhat, tape_t = forward(serving, xhat)

        recon_res = xhat - x
        recon_loss = float(np.sum(recon_res * recon_res) / x.shape[0])
        d_recon = 2.0 * recon_res / x.shape[0]

        task_grads = None
        if scheme == "task_agnostic":
            driving = recon_loss
            task_loss, _ = loss_and_grad(kind, yhat, tgt)
            d_xhat = d_recon
            if cfg.vae:
                kl = 0.5 * float(np.sum(mu * mu + np.exp(logvar) - logvar - 1.0)
                                 / x.shape[0])
                driving = recon_loss + KL_WEIGHT * kl
        else:
            task_loss, d_yhat = loss_and_grad(kind, yhat, tgt)
            d_xhat_task, task_grads = backward_from(serving, tape_t, d_yhat)
            d_xhat = d_xhat_task + cfg.lam * d_recon
            driving = task_loss + cfg.lam * recon_loss

        if not np.isfinite(driving) or driving > DIVERGENCE_CEILING:
            raise Diverged(f"loss {driving} at step {step} "
                           f"(scheme={scheme}, z={cfg.z_dim}, lambda={cfg.lam})")

        d_z, dec_grads = backward_from(dec, tape_d, d_xhat)
        if cfg.vae:
            d_mu = d_z + KL_WEIGHT * mu / x.shape[0]
            d_logvar = (d_z * eps * 0.5 * np.exp(0.5 * logvar)
                        + KL_WEIGHT * 0.5 * (np.exp(logvar) - 1.0) / x.shape[0])
            d_z_raw = np.concatenate([d_mu, d_logvar], axis=1)
        else:
            d_z_raw = d_z
        _, enc_grads = backward_from(enc, tape_e, d_z_raw)

        trained = enc_grads + dec_grads
        if scheme == "end_to_end":
            trained = trained + task_grads
        trained = clip_grads(trained, cfg.clip_norm)
        n_e, n_d = len(enc_grads), len(dec_grads)
        enc = apply_grads(enc, trained[:n_e], cfg.learning_rate)
        dec = apply_grads(dec, trained[n_e:n_e + n_d], cfg.learning_rate)
        if scheme == "end_to_end":
            serving = apply_grads(serving, trained[n_e + n_d:], cfg.learning_rate)

        if step % cfg.eval_every == 0 or step == cfg.steps:
            trace.append(_eval_row(enc, dec, serving, scheme, cfg, feat_test,
                                   targets_test, labels_test, kind, step, data.n))

    if split_index:
        # Reassemble the task module so the model carries head and tail.
        full_task = Mlp(layers=head.layers + serving.layers,
                        frozen=tuple([True] * len(head.layers) + [True] * len(serving.layers)))
    else:
        full_task = serving

    model = CodesignModel(encoder=enc, decoder=dec, task=full_task,
                          z_dim=cfg.z_dim, lam=cfg.lam,
                          split_index=split_index, vae=cfg.vae)
    return model, trace


def train_codesign(task_net: Mlp, data: LabeledDataset, cfg: TrainConfig):
    """Run the configured scheme; returns (model, metrics trace)."""
    return _run_codesign(task_net, data, cfg)


def train_task_agnostic(task_net: Mlp, data: LabeledDataset, cfg: TrainConfig):
    """Reconstruction-only baseline; task loss is logged, never backpropagated."""
    return _run_codesign(task_net, data, replace(cfg, scheme="task_agnostic", lam=0.0))


def train_split_codesign(task_net: Mlp, block_index: int, data: LabeledDataset,
                         cfg: TrainConfig):
    """Compress the feature map after *block_index* instead of the raw input."""
    return _run_codesign(task_net, data, cfg, split_index=block_index)


def eval_uncompressed(task_net: Mlp, data: LabeledDataset,
                      use_dataset_labels=False) -> MetricsRow:
    """Task metrics on raw test inputs, no bottleneck: the reference row."""
    cfg = TrainConfig(z_dim=data.n, use_dataset_labels=use_dataset_labels)
    kind = _loss_kind(data)
    targets = _policy_targets(task_net, data, data.test_inputs,
                              data.test_targets, cfg)
    yhat = predict(task_net, data.test_inputs)
    task_loss, _ = loss_and_grad(kind, yhat, targets)
    accuracy = None
    if data.task_kind == CLASSIFICATION:
        accuracy = float(np.mean(np.argmax(yhat, axis=1) == data.test_targets))
    return MetricsRow(scheme="uncompressed", z_dim=data.n, lam=0.0, step=0,
                      task_loss=task_loss, recon_loss=0.0, weighted_loss=task_loss,
                      accuracy=accuracy, compression_ratio=1.0)


def sweep_bottleneck(task_net: Mlp, data: LabeledDataset, z_grid, lambda_grid,
                     base_cfg: TrainConfig, schemes=SCHEMES, split_index=0):
    """Train every (scheme, Z, lambda) cell from identical seeds.

    Returns (rows, failures, models): rows start with the uncompressed
    baseline and then follow cells ordered by (scheme, Z, lambda); a
    diverged cell is recorded in *failures* instead of aborting the sweep.
    Schemes that ignore lambda (task_agnostic, fully_task_aware) run one
    cell per Z.
    """
    if not z_grid or not lambda_grid:
        raise ConfigError("z and lambda grids must be nonempty")
    cells = []
    for scheme in sorted(set(schemes)):
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}")
        lams = sorted(set(lambda_grid)) if scheme in ("tasknet", "end_to_end") else [0.0]
        for z in sorted(set(z_grid)):
            for lam in lams:
                cells.append((scheme, int(z), float(lam)))
    cells.sort()

    rows = [eval_uncompressed(task_net, data,
                              use_dataset_labels=base_cfg.use_dataset_labels)]
    failures = []
    models = {}
    for scheme, z, lam in cells:
        cfg = replace(base_cfg, scheme=scheme, z_dim=z, lam=lam)
        try:
            model, trace = _run_codesign(task_net, data, cfg, split_index=split_index)
        except Diverged as exc:
            failures.append({"scheme": scheme, "z_dim": z, "lambda": lam,
                             "error": str(exc)})
            continue
        rows.extend(trace)
        models[(scheme, z, lam)] = model
    return rows, failures, models


def summarize_dominance(rows, tolerance_points=2.0):
    """Smallest Z per scheme reaching within *tolerance_points* of baseline accuracy.

    The compression-advantage factor is task_agnostic's smallest Z divided
    by the task-aware smallest Z (tasknet if swept, else fully_task_aware).
    Grid-restricted: no interpolation between swept Z values.
    """
    baseline = next((r for r in rows if r.scheme == "uncompressed"), None)
    if baseline is None or baseline.accuracy is None:
        raise ValueError("rows lack an uncompressed baseline with accuracy")
    floor = baseline.accuracy - tolerance_points / 100.0

    final = {}
    for r in rows:
        if r.scheme == "uncompressed":
            continue
        key = (r.scheme, r.z_dim, r.lam)
        if key not in final or r.step > final[key].step:
            final[key] = r

    smallest = {}
    for (scheme, z, _lam), row in final.items():
        if row.accuracy is not None and row.accuracy >= floor:
            if scheme not in smallest or z < smallest[scheme]:
                smallest[scheme] = z
    for scheme in {k[0] for k in final}:
        smallest.setdefault(scheme, None)

    reference = "tasknet" if smallest.get("tasknet") is not None else "fully_task_aware"
    advantage = None
    if smallest.get(reference) and smallest.get("task_agnostic"):
        advantage = smallest["task_agnostic"] / smallest[reference]
    return {
        "baseline_accuracy": baseline.accuracy,
        "tolerance_points": tolerance_points,
        "smallest_z": smallest,
        "task_aware_reference": reference,
        "compression_advantage": advantage,
    }


def pretrain_task(data: LabeledDataset, hidden=64, steps=1500,
                  learning_rate=0.05, batch_size=64, seed=0, clip_norm=10.0) -> Mlp:
    """Supervised pre-training of the task module on dataset labels."""
    kind = _loss_kind(data)
    if data.task_kind == CLASSIFICATION:
        out_dim = data.num_classes
    else:
        out_dim = data.targets.shape[1] if data.targets.ndim == 2 else 1
    net = init_mlp([data.n, hidden, hidden, out_dim],
                   ["tanh", "tanh", "identity"], seed=[seed, 10])
    rng = np.random.default_rng([seed, 11])
    x_train, t_train = data.train_inputs, data.train_targets
    for _ in range(steps):
        idx = rng.integers(0, x_train.shape[0], batch_size)
        out, tape = forward(net, x_train[idx])
        loss, d_out = loss_and_grad(kind, out, t_train[idx])
        if not np.isfinite(loss) or loss > DIVERGENCE_CEILING:
            raise Diverged(f"pretraining loss {loss}")
        _, grads = backward_from(net, tape, d_out)
        net = apply_grads(net, clip_grads(grads, clip_norm), learning_rate)
    return net


def accuracy_of(net: Mlp, inputs, labels) -> float:
    return float(np.mean(np.argmax(predict(net, inputs), axis=1) == labels))


# ---------------------------------------------------------------------------
# Metrics CSV and model bundles
# ---------------------------------------------------------------------------

def format_metric(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(rows, path):
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join([
            r.scheme, str(r.z_dim), format_metric(float(r.lam)), str(r.step),
            format_metric(float(r.task_loss)), format_metric(float(r.recon_loss)),
            format_metric(float(r.weighted_loss)), format_metric(r.accuracy),
            format_metric(float(r.compression_ratio)),
        ]))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def read_metrics_csv(path):
    from .errors import MissingColumn
    with open(path, "r", newline="") as f:
        content = f.read()
    lines = [ln for ln in content.splitlines() if ln]
    if not lines:
        raise MissingColumn("scheme")
    header = lines[0].split(",")
    required = METRICS_HEADER.split(",")
    for col in required:
        if col not in header:
            raise MissingColumn(col)
    idx = {name: header.index(name) for name in required}
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        acc = parts[idx["accuracy"]]
        rows.append(MetricsRow(
            scheme=parts[idx["scheme"]],
            z_dim=int(parts[idx["z_dim"]]),
            lam=float(parts[idx["lambda"]]),
            step=int(parts[idx["step"]]),
            task_loss=float(parts[idx["task_loss"]]),
            recon_loss=float(parts[idx["recon_loss"]]),
            weighted_loss=float(parts[idx["weighted_loss"]]),
            accuracy=float(acc) if acc else None,
            compression_ratio=float(parts[idx["compression_ratio"]]),
        ))
    return rows


def save_codesign(model: CodesignModel, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    save_mlp(model.encoder, os.path.join(dirpath, "encoder.tnet"))
    save_mlp(model.decoder, os.path.join(dirpath, "decoder.tnet"))
    save_mlp(model.task, os.path.join(dirpath, "task.tnet"))
    meta = {"z_dim": model.z_dim, "lambda": model.lam,
            "split_index": model.split_index, "vae": model.vae}
    with open(os.path.join(dirpath, "model.json"), "w") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")


def load_codesign(dirpath) -> CodesignModel:
    with open(os.path.join(dirpath, "model.json")) as f:
        meta = json.load(f)
    return CodesignModel(
        encoder=load_mlp(os.path.join(dirpath, "encoder.tnet")),
        decoder=load_mlp(os.path.join(dirpath, "decoder.tnet")),
        task=load_mlp(os.path.join(dirpath, "task.tnet")),
        z_dim=int(meta["z_dim"]), lam=float(meta["lambda"]),
        split_index=int(meta["split_index"]), vae=bool(meta["vae"]))
