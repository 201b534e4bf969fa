"""Training loop: plain-CE warm-up, then masked multi-objective epochs that also
update the two noise-rate parameters."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Value, backward
from .benchmark import OOD, TaggedDataset
from .metrics import accuracy, ece_from_probs
from .model import AeonModel, ModelConfig, init_params, model_from_dict, model_to_dict
from .noise_estimation import NoiseRateEstimator
from .objective import LossConfig, batch_loss, plain_ce_loss

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Non-finite loss or gradient during training."""


@dataclass
class TrainConfig:
    batch_size: int = 128
    warmup_epochs: int = 10
    epochs: int = 100
    lr: float = 0.1
    gamma_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-5
    cosine: bool = True
    seed: int = 0
    T_id: float = 10.0
    T_ood: float = 10.0
    gamma_init: float | None = None
    method: str = "aeon"
    ckpt_every: int = 0
    grad_clip: float | None = 5.0
    gamma_clip: float | None = 1.0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if self.lr <= 0 or self.gamma_lr < 0:
            raise ValueError("lr must be positive and gamma_lr non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.method not in ("aeon", "ce"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["hidden"] = list(d["model"]["hidden"])
        return d


@dataclass
class OptimizerState:
    velocity: list[np.ndarray]
    step: int = 0


def init_optimizer(params: list[Value]) -> OptimizerState:
    return OptimizerState([np.zeros_like(p.data) for p in params])


def sgd_step(params: list[Value], grads: list, state: OptimizerState, lr: float,
             momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """In-place SGD with momentum: v <- m v + (g + wd p); p <- p - lr v."""
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ValueError("params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        g = np.zeros_like(p.data) if g is None else g
        if g.shape != p.data.shape:
            raise ValueError("gradient shape does not match its parameter")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    for k, (p, g) in enumerate(zip(params, grads)):
        g = 0.0 if g is None else g
        v = momentum * state.velocity[k] + (g + weight_decay * p.data)
        state.velocity[k] = v
        p.data = p.data - lr * v
    state.step += 1


def clip_grad_norm(grads: list, max_norm: float | None) -> list:
    """Rescale a gradient list so its global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    total = math.sqrt(sum(float((g * g).sum()) for g in grads if g is not None))
    if not math.isfinite(total):
        raise NumericError("non-finite gradient")
    if total <= max_norm:
        return grads
    k = max_norm / total
    return [None if g is None else g * k for g in grads]


def cosine_lr(epoch: int, total_main_epochs: int, lr_max: float) -> float:
    if not 0 <= epoch < total_main_epochs:
        raise ValueError("epoch outside [0, total_main_epochs)")
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * epoch / total_main_epochs))


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    loss_total: float
    loss_sup: float = 0.0
    loss_unsup: float = 0.0
    loss_ood_margin: float = 0.0
    loss_id_margin: float = 0.0
    loss_cont: float = 0.0
    eta_id: float = float("nan")
    eta_ood: float = float("nan")
    tau_id: float = float("nan")
    tau_ood: float = float("nan")
    mean_w_id: float = float("nan")
    mean_w_ood: float = float("nan")
    test_acc: float | None = None
    test_ece: float | None = None
    # ground-truth diagnostics (need provenance tags)
    w_ood_on_ood: float | None = None
    w_ood_on_id: float | None = None

    def to_json(self) -> str:
        return json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v)
                           for k, v in asdict(self).items()})


class Trainer:
    """Owns the model, both estimators and the optimizer state of one run."""

    def __init__(self, config: TrainConfig, data: TaggedDataset, test: TaggedDataset | None = None):
        self.config = config
        self.data = data
        self.test = test
        mcfg = config.model
        if mcfg.input_dim != data.dim or mcfg.num_classes != data.num_classes:
            mcfg = ModelConfig(**{**asdict(mcfg), "input_dim": data.dim, "num_classes": data.num_classes})
            config.model = mcfg
        self.model = init_params(mcfg, seed=config.seed)
        g_id, g_ood = self._gamma_init()
        self.est_id = NoiseRateEstimator(g_id, config.T_id)
        self.est_ood = NoiseRateEstimator(g_ood, config.T_ood)
        self.theta_opt = init_optimizer(self.model.params)
        self.gamma_opt = init_optimizer(self.gammas)
        self.history: list[EpochRecord] = []
        self.epoch = 0

    def _gamma_init(self) -> tuple[float, float]:
        if self.config.gamma_init is not None:
            return float(self.config.gamma_init), float(self.config.gamma_init)
        rng = np.random.default_rng([self.config.seed, 5])
        a, b = rng.uniform(-1.0, 1.0, size=2)
        return float(a), float(b)

    @property
    def gammas(self) -> list[Value]:
        return [self.est_id.gamma, self.est_ood.gamma]

    # -- batching ----------------------------------------------------------
    def batches(self, epoch: int):
        """Batch index arrays; a pure function of (seed, epoch)."""
        order = np.random.default_rng([self.config.seed, epoch, 7]).permutation(len(self.data))
        bs = self.config.batch_size
        return [order[i:i + bs] for i in range(0, len(order), bs)]

    def lr_at(self, epoch: int) -> float:
        cfg = self.config
        n_main = cfg.epochs - cfg.warmup_epochs
        if epoch < cfg.warmup_epochs or not cfg.cosine or n_main <= 0:
            return cfg.lr
        return cosine_lr(epoch - cfg.warmup_epochs, n_main, cfg.lr)

    # -- epochs ------------------------------------------------------------
    def warmup_epoch(self, epoch: int | None = None, phase: str = "warmup") -> EpochRecord:
        """Plain cross-entropy on the noisy labels; estimators untouched."""
        epoch = self.epoch if epoch is None else epoch
        lr = self.lr_at(epoch)
        X, Y = self.data.features, self.data.noisy_labels
        losses = []
        for idx in self.batches(epoch):
            loss = plain_ce_loss(self.model, X[idx], Y[idx])
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss in epoch {epoch}")
            grads = backward(loss)
            g_theta = clip_grad_norm([grads.get(p) for p in self.model.params], self.config.grad_clip)
            sgd_step(self.model.params, g_theta, self.theta_opt, lr,
                     self.config.momentum, self.config.weight_decay)
            losses.append(float(loss.data) * len(idx))
        rec = EpochRecord(epoch=epoch, phase=phase, lr=lr, loss_total=sum(losses) / len(self.data),
                          loss_sup=sum(losses) / len(self.data),
                          eta_id=self.est_id.rate, eta_ood=self.est_ood.rate)
        return self._finish(rec)

    def train_epoch(self, epoch: int | None = None) -> EpochRecord:
        epoch = self.epoch if epoch is None else epoch
        cfg = self.config
        lr = self.lr_at(epoch)
        # gamma follows the same schedule shape as theta
        glr = cfg.gamma_lr * lr / cfg.lr
        X, Y = self.data.features, self.data.noisy_labels
        sums = dict.fromkeys(("total", "sup", "unsup", "oodm", "idm", "cont", "wid", "wood", "tid", "tood"), 0.0)
        w_ood_all = np.empty(len(self.data))
        n_seen = 0
        batches = self.batches(epoch)
        for b, idx in enumerate(batches):
            seed = np.random.default_rng([cfg.seed, epoch, b, 11])
            br = batch_loss(self.model, X[idx], Y[idx], self.est_id, self.est_ood, cfg.loss, seed)
            if not np.isfinite(br.total.data):
                raise NumericError(f"non-finite loss in epoch {epoch}, batch {b}")
            grads = backward(br.total)
            g_theta = clip_grad_norm([grads.get(p) for p in self.model.params], cfg.grad_clip)
            sgd_step(self.model.params, g_theta, self.theta_opt, lr,
                     cfg.momentum, cfg.weight_decay)
            g_gamma = [np.clip(grads.get(g, np.zeros(())), -cfg.gamma_clip, cfg.gamma_clip)
                       if cfg.gamma_clip is not None else grads.get(g) for g in self.gammas]
            sgd_step(self.gammas, g_gamma, self.gamma_opt, glr, cfg.momentum, 0.0)
            n = len(idx)
            n_seen += n
            for k, v in (("total", float(br.total.data)), ("sup", br.supervised), ("unsup", br.unsupervised),
                         ("oodm", br.ood_margin), ("idm", br.id_margin),
                         ("cont", br.contrastive_sup + br.contrastive_uns), ("wid", br.mean_w_id),
                         ("wood", br.mean_w_ood), ("tid", br.tau_id), ("tood", br.tau_ood)):
                sums[k] += v * n
            w_ood_all[idx] = br.w_ood
        m = {k: v / n_seen for k, v in sums.items()}
        rec = EpochRecord(epoch=epoch, phase="main", lr=lr, loss_total=m["total"], loss_sup=m["sup"],
                          loss_unsup=m["unsup"], loss_ood_margin=m["oodm"], loss_id_margin=m["idm"],
                          loss_cont=m["cont"], eta_id=self.est_id.rate, eta_ood=self.est_ood.rate,
                          tau_id=m["tid"], tau_ood=m["tood"], mean_w_id=m["wid"], mean_w_ood=m["wood"])
        is_ood = self.data.tags == OOD
        if is_ood.any() and (~is_ood).any():
            rec.w_ood_on_ood = float(w_ood_all[is_ood].mean())
            rec.w_ood_on_id = float(w_ood_all[~is_ood].mean())
        return self._finish(rec)

    def _finish(self, rec: EpochRecord) -> EpochRecord:
        if self.test is not None:
            probs = self.model.predict_proba(self.test.features)
            rec.test_acc = accuracy(probs, self.test.true_labels)
            rec.test_ece = ece_from_probs(probs, self.test.true_labels)
        self.history.append(rec)
        return rec

    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        if self.epoch < cfg.warmup_epochs:
            rec = self.warmup_epoch(self.epoch)
        elif cfg.method == "ce":
            rec = self.warmup_epoch(self.epoch, phase="main")
        else:
            rec = self.train_epoch(self.epoch)
        self.epoch += 1
        return rec

    # -- checkpoints -------------------------------------------------------
    def state_dict(self) -> dict:
        return {
            "model": model_to_dict(self.model),
            "estimators": {"gamma_id": float(self.est_id.gamma.data), "gamma_ood": float(self.est_ood.gamma.data),
                           "T_id": self.est_id.T, "T_ood": self.est_ood.T},
            "epoch": self.epoch,
        }

    def save(self, ckpt_dir) -> None:
        save_checkpoint(self.state_dict(), ckpt_dir, self.config)


def save_checkpoint(state: dict, ckpt_dir, config: TrainConfig | None = None) -> None:
    d = Path(ckpt_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "model.json").write_text(json.dumps(state["model"]))
    (d / "estimators.json").write_text(json.dumps(state["estimators"], indent=2))
    if config is not None:
        (d / "train_config.json").write_text(json.dumps(config.to_dict(), indent=2, default=str))


def load_checkpoint(ckpt_dir):
    """Returns ``(model, est_id, est_ood, train_config_dict_or_None)``."""
    d = Path(ckpt_dir)
    model = model_from_dict(json.loads((d / "model.json").read_text()))
    e = json.loads((d / "estimators.json").read_text())
    cfg_path = d / "train_config.json"
    cfg = json.loads(cfg_path.read_text()) if cfg_path.exists() else None
    return (model, NoiseRateEstimator(e["gamma_id"], e["T_id"]), NoiseRateEstimator(e["gamma_ood"], e["T_ood"]), cfg)


@dataclass
class FitResult:
    model: AeonModel
    est_id: NoiseRateEstimator
    est_ood: NoiseRateEstimator
    history: list[EpochRecord]
    gamma_history: list[tuple[float, float]]


def fit(config: TrainConfig, data: TaggedDataset, test: TaggedDataset | None = None,
        log_path=None, ckpt_dir=None, progress: bool = False) -> FitResult:
    """Warm-up then main epochs; deterministic given the config seed.

    Writes one JSON line per epoch to ``log_path`` and checkpoints every
    ``ckpt_every`` epochs plus at the end. On a non-finite loss the last good
    state is written to ``ckpt_dir`` and :class:`NumericError` is re-raised.
    """
    tr = Trainer(config, data, test)
    gamma_hist = []
    fh = open(log_path, "w") if log_path else None
    last_good = tr.state_dict()
    try:
        for _ in range(config.epochs):
            try:
                rec = tr.run_epoch()
            except NumericError:
                if ckpt_dir:
                    save_checkpoint(last_good, ckpt_dir, config)
                raise
            last_good = tr.state_dict()
            gamma_hist.append((float(tr.est_id.gamma.data), float(tr.est_ood.gamma.data)))
            if fh:
                fh.write(rec.to_json() + "\n")
                fh.flush()
            if progress:
                log.info("epoch %d %s loss=%.4f acc=%s eta=(%.3f, %.3f)", rec.epoch, rec.phase, rec.loss_total,
                         rec.test_acc, rec.eta_id, rec.eta_ood)
            if ckpt_dir and config.ckpt_every and tr.epoch % config.ckpt_every == 0:
                tr.save(ckpt_dir)
    finally:
        if fh:
            fh.close()
    if ckpt_dir:
        tr.save(ckpt_dir)
    return FitResult(tr.model, tr.est_id, tr.est_ood, tr.history, gamma_hist)
