"""Optimization loop, losses, evaluation, and the experiment matrix.

One trainer serves the three supervision kinds:

* csi: predicted channel (mean over ray directions) against the recorded
  complex H, mean squared complex error per subcarrier.
* rssi: predicted received power in dB against the recorded value, squared
  dB error.
* spectrum: per-direction power, max-normalized, against the recorded
  direction-power matrix, mean per-cell squared error.

Channel targets are divided by one global scale (the RMS magnitude of the
training labels) so the networks work near unit magnitude; the scale is
stored in the checkpoint and multiplied back at prediction time.  SNR and
the dB-space metrics are unaffected by this choice.

Training samples ray distances stratified per step; evaluation always uses
midpoint sampling so metrics are deterministic.  Records sharing a ray
origin share one attenuation forward per step, which is what makes the
fixed-receiver synthetic task cheap.

Every logged eval number comes from the metrics module.  Divergence (a
non-finite loss or activation) aborts with the last good parameters saved.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .aptnet import count_parameters
from .core import RSSI_FLOOR_DB
from .dataio import Checkpoint, ChannelRecord, save_checkpoint
from .errors import ConfigError, DataIoError, DomainError, NumericalError
from .fields import FieldConfig, FieldPair, make_fields
from .metrics import (
    MetricReport,
    report_median_rmse,
    report_snr,
    report_ssim,
)
from .raytrace import DirectionGrid, RayBatch, build_ray_batch, render_rays
from .scene import SceneConfig

TASKS = ("rssi", "csi", "spectrum")
BACKBONES = ("apt", "mlp")

# metric per task and whether larger values are better
TASK_METRICS = {
    "rssi": ("median_rmse_db", False),
    "csi": ("snr_db", True),
    "spectrum": ("ssim", True),
}


@dataclass
class TrainConfig:
    scene: SceneConfig
    task: str = "csi"
    backbone: str = "apt"
    depth: int = 2
    learning_rate: float = 5e-4
    batch_rays: int = 1024
    epochs: int = 50
    seed: int = 0
    swap_tx_rx: bool = False
    base_channels: int = 16
    spp_levels: tuple = (4, 2, 1)
    use_attention_gates: bool = True
    feature_dim: int = 16
    position_frequencies: int = 10
    direction_frequencies: int = 4
    mlp_hidden_dims: list[int] | None = None
    sample_mode: str = "stratified"
    lr_schedule: str = "cosine"
    eval_every_epochs: int = 1
    patience: int = 10

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.backbone == "apt" and self.depth not in (1, 2, 3):
            raise ConfigError(f"apt depth must be 1, 2 or 3, got {self.depth}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_rays < 1:
            raise ConfigError("batch_rays must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.sample_mode not in ("uniform", "midpoint", "stratified"):
            raise ConfigError(f"unknown sample_mode {self.sample_mode!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.eval_every_epochs < 1 or self.patience < 1:
            raise ConfigError("eval_every_epochs and patience must be >= 1")

    def field_config(self) -> FieldConfig:
        return FieldConfig(
            backbone=self.backbone,
            depth=self.depth,
            base_channels=self.base_channels,
            spp_levels=list(self.spp_levels),
            use_attention_gates=self.use_attention_gates,
            feature_dim=self.feature_dim,
            position_frequencies=self.position_frequencies,
            direction_frequencies=self.direction_frequencies,
            num_subcarriers=self.scene.num_subcarriers,
            mlp_hidden_dims=self.mlp_hidden_dims,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "task": self.task,
            "backbone": self.backbone,
            "depth": self.depth,
            "learning_rate": self.learning_rate,
            "batch_rays": self.batch_rays,
            "epochs": self.epochs,
            "seed": self.seed,
            "swap_tx_rx": self.swap_tx_rx,
            "base_channels": self.base_channels,
            "spp_levels": list(self.spp_levels),
            "use_attention_gates": self.use_attention_gates,
            "feature_dim": self.feature_dim,
            "position_frequencies": self.position_frequencies,
            "direction_frequencies": self.direction_frequencies,
            "mlp_hidden_dims": self.mlp_hidden_dims,
            "sample_mode": self.sample_mode,
            "lr_schedule": self.lr_schedule,
            "eval_every_epochs": self.eval_every_epochs,
            "patience": self.patience,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["scene"] = SceneConfig.from_dict(d["scene"])
        if d.get("spp_levels") is not None:
            d["spp_levels"] = tuple(d["spp_levels"])
        return cls(**d)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[tuple[int, float, float]]
    metric_name: str
    best_metric: float
    target_scale: float
    train_seconds: float
    stopped_early: bool = False


def loss_terms(pred: torch.Tensor, target: torch.Tensor, task: str) -> torch.Tensor:
    """Batched differentiable loss; both tensors carry matching shapes."""
    if task not in TASKS:
        raise DomainError(f"unknown task {task!r}")
    if pred.shape != target.shape:
        raise DomainError(f"prediction shape {tuple(pred.shape)} != target {tuple(target.shape)}")
    if task == "csi":
        return torch.mean(torch.abs(pred - target) ** 2)
    return torch.mean((pred - target) ** 2)


def step_objective(pred: torch.Tensor, target: torch.Tensor, task: str) -> torch.Tensor:
    """Optimization objective for one batch.

    The csi task adds magnitude supervision to the complex error: early in
    training the per-record phases are still unresolved, and under a pure
    complex MSE the best reachable point is then the all-zero prediction,
    which the exponential amplitude head cannot recover from (its gradients
    scale with the amplitude itself).  Anchoring |H| keeps amplitudes, and
    with them the phase gradients, alive.  Reported metrics and the public
    per-record `loss` stay plain complex MSE.
    """
    base = loss_terms(pred, target, task)
    if task == "csi":
        base = base + torch.mean((torch.abs(pred) - torch.abs(target)) ** 2)
    return base


def loss(prediction, record: ChannelRecord, task: str) -> float:
    """Single-record training loss against the record's label for `task`."""
    if task == "csi":
        if record.h is None:
            raise DomainError("record has no channel label for the csi task")
        pred = torch.as_tensor(np.asarray(prediction, dtype=np.complex128)).reshape(-1)
        target = torch.from_numpy(record.h.values)
        if pred.shape != target.shape:
            raise DomainError(f"prediction has {pred.numel()} subcarriers, record has {target.numel()}")
    elif task == "rssi":
        if record.rssi_db is None:
            raise DomainError("record has no rssi label for the rssi task")
        pred = torch.as_tensor(np.asarray(prediction, dtype=np.float64)).reshape(-1)
        if pred.numel() != 1:
            raise DomainError(f"rssi prediction must be a scalar, got {pred.numel()} values")
        target = torch.tensor([record.rssi_db], dtype=torch.float64)
    else:
        if record.spectrum is None:
            raise DomainError("record has no spectrum label for the spectrum task")
        pred = torch.as_tensor(np.asarray(prediction, dtype=np.float64))
        target = torch.from_numpy(record.spectrum)
        if pred.shape != target.shape:
            raise DomainError(
                f"prediction shape {tuple(pred.shape)} != spectrum shape {tuple(target.shape)}"
            )
    return float(loss_terms(pred, target, task))


def _require_labels(records: Sequence[ChannelRecord], task: str, what: str) -> None:
    if not records:
        raise DomainError(f"{what} set is empty")
    for i, r in enumerate(records):
        missing = (
            (task == "csi" and r.h is None)
            or (task == "rssi" and r.rssi_db is None)
            or (task == "spectrum" and r.spectrum is None)
        )
        if missing:
            raise DomainError(f"{what} record {i} lacks the {task} label")


def target_scale_for(records: Sequence[ChannelRecord], task: str) -> float:
    """Global magnitude scale of the training labels (1.0 for spectra)."""
    if task == "csi":
        rms = math.sqrt(
            float(np.mean([np.mean(np.abs(r.h.values) ** 2) for r in records]))
        )
        return rms if rms > 0 else 1.0
    if task == "rssi":
        mean_db = float(np.mean([r.rssi_db for r in records]))
        return 10.0 ** (max(mean_db, RSSI_FLOOR_DB) / 20.0)
    return 1.0


def _origin(record: ChannelRecord, swap: bool) -> np.ndarray:
    return record.tx_position if swap else record.rx_position


def _emitter(record: ChannelRecord, swap: bool) -> np.ndarray:
    return record.rx_position if swap else record.tx_position


def _group_by_origin(records: Sequence[ChannelRecord], idxs: Sequence[int], swap: bool):
    groups: dict[bytes, list[int]] = {}
    for i in idxs:
        groups.setdefault(_origin(records[i], swap).tobytes(), []).append(i)
    return list(groups.values())


def _predict_batch(
    fields: FieldPair,
    records: Sequence[ChannelRecord],
    idxs: Sequence[int],
    grid: DirectionGrid,
    scene: SceneConfig,
    task: str,
    scale: float,
    swap: bool,
    mode: str,
    rng: np.random.Generator | None,
) -> torch.Tensor:
    """Render predictions for the given records, ordered like idxs.

    csi rows are the scaled complex channel (K,); rssi rows the predicted
    dB power; spectrum rows the normalized per-direction power (grid,).
    """
    out: list[torch.Tensor | None] = [None] * len(idxs)
    slot = {record_i: pos for pos, record_i in enumerate(idxs)}
    for members in _group_by_origin(records, idxs, swap):
        origin = _origin(records[members[0]], swap)
        emitters = np.stack([_emitter(records[i], swap) for i in members])
        batch = build_ray_batch(origin, grid, scene.n_samples, scene.ray_length, mode, rng)
        per_dir = render_rays(batch, emitters, fields)  # (B, grid, K)
        if task == "csi":
            pred = per_dir.mean(dim=1) * scale
        elif task == "rssi":
            c = per_dir.mean(dim=(1, 2))
            power = (c.real**2 + c.imag**2) * scale**2
            pred = 10.0 * torch.log10(torch.clamp(power, min=1e-30))
        else:
            power = (per_dir.abs() ** 2).mean(dim=-1)
            peak = torch.clamp(power.max(dim=1, keepdim=True).values, min=1e-30)
            pred = power / peak
        for row, i in enumerate(members):
            out[slot[i]] = pred[row]
    return torch.stack([t for t in out if t is not None])


def _targets(records: Sequence[ChannelRecord], task: str, scale: float, grid: DirectionGrid) -> torch.Tensor:
    if task == "csi":
        return torch.from_numpy(np.stack([r.h.values for r in records]) / scale)
    if task == "rssi":
        return torch.tensor([r.rssi_db for r in records], dtype=torch.float64)
    shape = (grid.elevation_bins, grid.azimuth_bins)
    for i, r in enumerate(records):
        if r.spectrum.shape != shape:
            raise DomainError(
                f"record {i} spectrum shape {r.spectrum.shape} != scene grid {shape}"
            )
    return torch.from_numpy(np.stack([r.spectrum.reshape(-1) for r in records]))


def evaluate(
    fields: FieldPair,
    records: Sequence[ChannelRecord],
    scene: SceneConfig,
    task: str,
    scale: float,
    swap_tx_rx: bool = False,
) -> list[MetricReport]:
    """Deterministic (midpoint-sampled) metric reports for a record set.

    rssi reports group by the rx tag when every record carries one, so the
    median runs over gateways; otherwise every record is its own group.
    """
    _require_labels(records, task, "eval")
    grid = DirectionGrid.from_scene(scene)
    idxs = list(range(len(records)))
    fields.eval()
    with torch.no_grad():
        pred = _predict_batch(
            fields, records, idxs, grid, scene, task, scale, swap_tx_rx, "midpoint", None
        ).numpy()
    fields.train()
    if task == "csi":
        return [report_snr(list(pred), [r.h.values for r in records])]
    if task == "rssi":
        groups = None
        if all("rx" in r.tags for r in records):
            groups = [r.tags["rx"] for r in records]
        return [report_median_rmse(pred, np.array([r.rssi_db for r in records]), groups)]
    shape = (grid.elevation_bins, grid.azimuth_bins)
    window = min(7, min(shape))
    if window % 2 == 0:
        window -= 1
    return [
        report_ssim(
            [p.reshape(shape) for p in pred], [r.spectrum for r in records], window=window
        )
    ]


def _model_arrays(fields: FieldPair) -> dict[str, np.ndarray]:
    return {f"model.{k}": v.detach().cpu().numpy().copy() for k, v in fields.state_dict().items()}


def _optimizer_arrays(opt: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    state = opt.state_dict()["state"]
    for idx, entry in state.items():
        for key, value in entry.items():
            arrays[f"optim.{idx}.{key}"] = (
                value.detach().cpu().numpy().copy()
                if isinstance(value, torch.Tensor)
                else np.asarray(value)
            )
    return arrays


def _load_optimizer_arrays(opt: torch.optim.Optimizer, arrays: dict[str, np.ndarray]) -> None:
    state: dict[int, dict] = {}
    for name, value in arrays.items():
        if not name.startswith("optim."):
            continue
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = torch.from_numpy(np.asarray(value))
    if not state:
        return
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def build_checkpoint(
    fields: FieldPair,
    opt: torch.optim.Optimizer | None,
    cfg: TrainConfig,
    epoch: int,
    extra: dict | None = None,
) -> Checkpoint:
    arrays = _model_arrays(fields)
    if opt is not None:
        arrays.update(_optimizer_arrays(opt))
    return Checkpoint(
        arrays=arrays,
        config={"train": cfg.to_dict()},
        seed=cfg.seed,
        epoch=epoch,
        extra=extra or {},
    )


def fields_from_checkpoint(ckpt: Checkpoint) -> tuple[FieldPair, TrainConfig]:
    """Rebuild the field pair with bitwise-identical parameters."""
    if "train" not in ckpt.config:
        raise DataIoError("checkpoint carries no train config echo")
    cfg = TrainConfig.from_dict(ckpt.config["train"])
    fields = make_fields(cfg.scene, cfg.field_config())
    state = {
        k[len("model."):]: torch.from_numpy(np.asarray(v))
        for k, v in ckpt.arrays.items()
        if k.startswith("model.")
    }
    fields.load_state_dict(state)
    return fields, cfg


def _is_better(value: float, best: float | None, larger_better: bool) -> bool:
    if best is None:
        return True
    return value > best if larger_better else value < best


def train(
    cfg: TrainConfig,
    train_set: Sequence[ChannelRecord],
    eval_set: Sequence[ChannelRecord],
    out_dir: Path | str | None = None,
    resume_from: Checkpoint | None = None,
) -> TrainResult:
    """Optimize the fields on train_set, tracking the eval metric.

    Keeps the best-metric parameters (and matching optimizer state) as the
    returned checkpoint; writes `checkpoint-best` and `history.csv` into
    out_dir when given.  Aborts with NumericalError on a non-finite loss or
    activation after saving `checkpoint-last-good`.
    """
    _require_labels(train_set, cfg.task, "train")
    _require_labels(eval_set, cfg.task, "eval")
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    start = time.monotonic()

    scene = cfg.scene
    grid = DirectionGrid.from_scene(scene)
    metric_name, larger_better = TASK_METRICS[cfg.task]
    scale = target_scale_for(train_set, cfg.task)

    if resume_from is not None:
        fields, resumed_cfg = fields_from_checkpoint(resume_from)
        if resumed_cfg.field_config().to_dict() != cfg.field_config().to_dict():
            raise ConfigError("resume checkpoint was trained with a different field config")
        scale = float(resume_from.extra.get("target_scale", scale))
        start_epoch = resume_from.epoch + 1
    else:
        fields = make_fields(scene, cfg.field_config())
        start_epoch = 0
    fields.train()

    opt = torch.optim.Adam(fields.parameters(), lr=cfg.learning_rate)
    if resume_from is not None:
        _load_optimizer_arrays(opt, resume_from.arrays)

    targets = _targets(train_set, cfg.task, scale, grid)
    records_per_step = max(1, cfg.batch_rays // len(grid))
    steps_per_epoch = max(1, math.ceil(len(train_set) / records_per_step))
    total_steps = cfg.epochs * steps_per_epoch

    out_path = Path(out_dir) if out_dir is not None else None
    history: list[tuple[int, float, float]] = []
    best_metric: float | None = None
    best_ckpt: Checkpoint | None = None
    evals_since_best = 0
    stopped_early = False
    global_step = start_epoch * steps_per_epoch
    losses_since_eval: list[float] = []

    def json_safe(value: float | None) -> float | str | None:
        # checkpoint manifests are strict JSON; +inf (a legal SNR) is not
        if value is None or math.isfinite(value):
            return value
        return repr(value)

    def snapshot(epoch: int) -> Checkpoint:
        return build_checkpoint(
            fields,
            opt,
            cfg,
            epoch,
            extra={
                "target_scale": scale,
                "metric_name": metric_name,
                "best_metric": json_safe(best_metric),
                "global_step": global_step,
            },
        )

    def abort(epoch: int, message: str) -> None:
        good = best_ckpt if best_ckpt is not None else snapshot(epoch)
        detail = ""
        if out_path is not None:
            save_checkpoint(good, out_path / "checkpoint-last-good")
            _history_csv(history, out_path / "history.csv")
            detail = f"; last good checkpoint at {out_path / 'checkpoint-last-good.npz'}"
        raise NumericalError(f"training diverged at step {global_step}: {message}{detail}")

    for epoch in range(start_epoch, cfg.epochs):
        perm = np.random.default_rng([cfg.seed, 11, epoch]).permutation(len(train_set))
        for step in range(steps_per_epoch):
            idxs = perm[step * records_per_step : (step + 1) * records_per_step]
            if idxs.size == 0:
                continue
            rng = np.random.default_rng([cfg.seed, 13, epoch, step])
            if cfg.lr_schedule == "cosine":
                frac = global_step / max(total_steps - 1, 1)
                lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))
                for g in opt.param_groups:
                    g["lr"] = lr
            try:
                pred = _predict_batch(
                    fields, train_set, [int(i) for i in idxs], grid, scene,
                    cfg.task, 1.0 if cfg.task == "csi" else scale,
                    cfg.swap_tx_rx, cfg.sample_mode, rng,
                )
                step_loss = step_objective(pred, targets[idxs], cfg.task)
            except NumericalError as e:
                abort(epoch, str(e))
            if not torch.isfinite(step_loss):
                abort(epoch, f"loss = {float(step_loss.detach())}")
            opt.zero_grad()
            step_loss.backward()
            # The exponential amplitude head turns overshoot into overflow:
            # its gradient scales with the amplitude itself, so one hot step
            # can run away.  A norm ceiling keeps steps bounded.
            torch.nn.utils.clip_grad_norm_(list(fields.parameters()), max_norm=10.0)
            opt.step()
            losses_since_eval.append(float(step_loss.detach()))
            global_step += 1

        if (epoch - start_epoch) % cfg.eval_every_epochs == 0 or epoch == cfg.epochs - 1:
            try:
                reports = evaluate(fields, eval_set, scene, cfg.task, scale, cfg.swap_tx_rx)
            except NumericalError as e:
                abort(epoch, str(e))
            value = reports[0].value
            mean_loss = float(np.mean(losses_since_eval)) if losses_since_eval else math.nan
            losses_since_eval = []
            history.append((global_step, mean_loss, value))
            if _is_better(value, best_metric, larger_better):
                best_metric = value
                best_ckpt = snapshot(epoch)
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= cfg.patience:
                    stopped_early = True
                    break

    if best_ckpt is None:  # no eval ran; keep the final state
        best_metric = math.nan
        best_ckpt = snapshot(cfg.epochs - 1)
    best_ckpt.extra["best_metric"] = json_safe(best_metric)

    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        save_checkpoint(best_ckpt, out_path / "checkpoint-best")
        _history_csv(history, out_path / "history.csv")

    return TrainResult(
        checkpoint=best_ckpt,
        history=history,
        metric_name=metric_name,
        best_metric=float(best_metric),
        target_scale=scale,
        train_seconds=time.monotonic() - start,
        stopped_early=stopped_early,
    )


def _history_csv(history: list[tuple[int, float, float]], path: Path) -> None:
    lines = ["step,train_loss,eval_metric"]
    lines += [f"{s},{repr(l)},{repr(m)}" for s, l, m in history]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def predict_records(
    fields: FieldPair,
    records: Sequence[ChannelRecord],
    scene: SceneConfig,
    task: str,
    scale: float,
    swap_tx_rx: bool = False,
) -> list[np.ndarray]:
    """Per-record predictions in label units (midpoint sampling).

    csi: complex (K,); rssi: scalar dB; spectrum: (elevation, azimuth).
    """
    grid = DirectionGrid.from_scene(scene)
    fields.eval()
    with torch.no_grad():
        pred = _predict_batch(
            fields, records, list(range(len(records))), grid, scene, task, scale,
            swap_tx_rx, "midpoint", None,
        ).numpy()
    fields.train()
    if task == "spectrum":
        return [p.reshape(grid.elevation_bins, grid.azimuth_bins) for p in pred]
    return list(pred)


def experiment_matrix(
    base_cfg: TrainConfig,
    train_set: Sequence[ChannelRecord],
    eval_set: Sequence[ChannelRecord],
    depths: Sequence[int] = (1, 2, 3),
    backbones: Sequence[str] = BACKBONES,
    out_path: Path | str | None = None,
) -> list[dict]:
    """Train every depth x backbone variant and tabulate the eval metric.

    Rows mirror the structure-comparison tables: one row per variant with
    its parameter count and final metric.  No ordering is implied; which
    depth wins is task- and data-dependent.
    """
    rows = []
    for backbone in backbones:
        for depth in depths:
            cfg = replace(base_cfg, backbone=backbone, depth=depth)
            result = train(cfg, train_set, eval_set)
            fields, _ = fields_from_checkpoint(result.checkpoint)
            rows.append(
                {
                    "backbone": backbone,
                    "depth": depth,
                    "parameters": count_parameters(fields.attenuation)
                    + count_parameters(fields.radiance),
                    "metric": result.metric_name,
                    "value": result.best_metric,
                    "train_seconds": round(result.train_seconds, 3),
                }
            )
    if out_path is not None:
        path = Path(out_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["backbone,depth,parameters,metric,value,train_seconds"]
        lines += [
            f"{r['backbone']},{r['depth']},{r['parameters']},{r['metric']},"
            f"{repr(float(r['value']))},{r['train_seconds']}"
            for r in rows
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
