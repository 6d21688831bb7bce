"""End-to-end training: wiring, ablation switches, schedules and outputs.

Each step encodes a paired batch, splits both domains with the (dynamic or
fixed) mask, rearranges, runs the task network on all four recombinations,
backpropagates the weighted loss, applies one Nesterov step and then
refreshes the memory-bank rows of the target samples in the batch. Every
random draw is keyed by (seed, purpose, counter), so training is bitwise
reproducible and checkpoints resume exactly without serialized generator
state.

Outputs per run: losses.csv (one row per step), metrics.csv (one row per
run/epoch/metric), checkpoint.bin and summary.txt.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NesterovSGD, NumericError, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SOURCE,
    TARGET,
    Dataset,
    DomainBatch,
    ShiftSpec,
    SynthSpec,
    load_idx,
    make_batches,
    synth_two_domain,
)
from .evaluation import (
    classification_accuracy,
    embed_dataset,
    eval_labels,
    openset_accuracy,
    retrieval_metrics,
)
from .losses import (
    CSV_FIELDS,
    LossBreakdown,
    LossConfig,
    l_agree,
    l_neighbor,
    l_task,
    total_loss,
)
from .membank import MemoryBank
from .model import EncoderConfig, Network, build_network, disentangle
from .rearrange import build_rearranged_batch
from .util import RNG_PARAMS, RNG_STEP, ConfigError, seeded_rng

OPEN_SET = "open_set"
CLOSE_SET = "close_set"

METRICS_HEADER = "run_id,epoch,metric,value"


@dataclass
class IdxPaths:
    """External IDX-format corpora standing in for the synthetic generator."""

    source_images: str
    source_labels: str
    target_images: str
    target_labels: str | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    d_emb: int = 32
    n_classes: int = 10
    w: float = 1e-4
    eta: float = 0.01
    tau: float = 0.05
    lambda1: float = 0.8
    lambda2: float = 1.0
    k: int = 6
    batch_size: int = 32
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    mode: str = CLOSE_SET
    disable_l_task: bool = False
    disable_l_neighbor: bool = False
    disable_l_agree: bool = False
    fixed_mask_ratio: float | None = None
    require_derangement: bool = False
    openset_threshold: float = 0.3
    grad_clip: float | None = 5.0
    warmup_epochs: int = 5
    weight_decay: float = 5e-4
    mask_decay: float | None = None
    aux_delay_epochs: int = 0
    aux_ramp_epochs: int = 0
    eval_every: int = 1
    data: SynthSpec = field(default_factory=SynthSpec)
    idx: IdxPaths | None = None
    run_id: str = "run"
    out_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        LossConfig(w=self.w, lambda1=self.lambda1, lambda2=self.lambda2, tau=self.tau, k=self.k).validate()
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.d_emb < 1:
            raise ConfigError(f"d_emb must be >= 1, got {self.d_emb}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.mode not in (OPEN_SET, CLOSE_SET):
            raise ConfigError(f"mode must be {OPEN_SET} or {CLOSE_SET}, got {self.mode!r}")
        if self.fixed_mask_ratio is not None and not 0.0 < self.fixed_mask_ratio <= 1.0:
            raise ConfigError(
                f"fixed_mask_ratio must lie in (0, 1]; an all-zero mask would starve "
                f"the task network (got {self.fixed_mask_ratio})"
            )
        if not 0.0 <= self.openset_threshold < 1.0:
            raise ConfigError(f"openset_threshold must lie in [0, 1), got {self.openset_threshold}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive (or unset), got {self.grad_clip}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.mask_decay is not None and self.mask_decay < 0:
            raise ConfigError(f"mask_decay must be >= 0 (or unset), got {self.mask_decay}")
        if self.aux_delay_epochs < 0:
            raise ConfigError(f"aux_delay_epochs must be >= 0, got {self.aux_delay_epochs}")
        if self.aux_ramp_epochs < 0:
            raise ConfigError(f"aux_ramp_epochs must be >= 0, got {self.aux_ramp_epochs}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        try:
            self.encoder.validate()
            if self.idx is None:
                self.data.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.idx is None and self.n_classes != self.data.n_classes:
            raise ConfigError(
                f"n_classes {self.n_classes} does not match the dataset spec "
                f"({self.data.n_classes})"
            )
        return self


def schedule_lr(base_lr: float, epoch: int, total_epochs: int, warmup_epochs: int = 0) -> float:
    """Base rate with a linear warmup over the first `warmup_epochs` epochs
    and a x0.1 decay at 60% and again at 80% of the epochs.

    The warmup matters: the neighborhood term takes -log of near-zero
    affinity mass against a freshly random memory bank, and its early
    gradients are large enough to permanently kill the task network's relu
    units at the full rate.
    """
    lr = base_lr
    if warmup_epochs > 0 and epoch < warmup_epochs:
        lr *= (epoch + 1) / warmup_epochs
    if total_epochs > 0:
        if epoch >= int(np.ceil(0.6 * total_epochs)):
            lr *= 0.1
        if epoch >= int(np.ceil(0.8 * total_epochs)):
            lr *= 0.1
    return lr


def schedule_aux(epoch: int, delay_epochs: int, ramp_epochs: int) -> float:
    """Weight in [0, 1] applied to both bank-driven auxiliary losses.

    Zero for the first `delay_epochs` epochs, then a linear ramp to 1 over
    `ramp_epochs` epochs (a ramp of zero switches straight to full weight).
    The delay lets the classifier shape the encoder while the memory bank —
    which is updated from the very first step — absorbs real embeddings.
    Against a still-random bank the -log of near-zero affinity mass yields
    gradients orders of magnitude larger than the classification term's,
    and they point nowhere useful: the clipped update direction becomes
    noise, stalling source accuracy and scrambling the target geometry.
    """
    if epoch < delay_epochs:
        return 0.0
    if ramp_epochs <= 0:
        return 1.0
    return min(1.0, (epoch - delay_epochs + 1) / ramp_epochs)


def apply_fixed_mask(ratio: float, d_h: int) -> np.ndarray:
    """Constant binary mask: the first floor(ratio * d_h) channels are
    task-relevant. A ratio that rounds to zero channels is rejected — an
    all-zero mask would starve the task network of input.
    """
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"fixed mask ratio must lie in (0, 1], got {ratio}")
    n_on = int(np.floor(ratio * d_h))
    if n_on < 1:
        raise ConfigError(f"ratio {ratio} selects zero of {d_h} channels")
    pattern = np.zeros(d_h)
    pattern[:n_on] = 1.0
    return pattern


@dataclass
class TrainState:
    network: Network
    bank: MemoryBank
    optimizer: NesterovSGD
    param_names: list[str]
    epoch: int = 0
    step: int = 0


def init_state(cfg: ExperimentConfig, n_target: int) -> TrainState:
    network = build_network(
        cfg.encoder, cfg.d_emb, cfg.n_classes, seeded_rng(cfg.seed, RNG_PARAMS)
    )
    bank = MemoryBank(n_target, cfg.d_emb, eta=cfg.eta, tau=cfg.tau, seed=cfg.seed)
    trainable = network.named_params(include_mask_net=cfg.fixed_mask_ratio is None)
    # Decay applies to every parameter, biases included, with the mask net
    # optionally decayed at its own (stronger) rate: every loss term pushes
    # the gates toward all-ones — the classification terms because spare
    # channels add noise to labelled rows, the agreement term because dead
    # spares trivially agree — so the only force that can hold the gates in
    # a live band, and produce the downward drift from their ~0.73 start,
    # is decay pulling the gate weights back toward a neutral sigmoid.
    mask_rate = cfg.weight_decay if cfg.mask_decay is None else cfg.mask_decay
    rates = [
        mask_rate if name.startswith("mask_net.") else cfg.weight_decay
        for name in trainable
    ]
    # weight_decay=1.0 so each decay_mask entry acts as that parameter's
    # absolute decay rate
    optimizer = NesterovSGD(
        list(trainable.values()),
        lr=cfg.lr,
        momentum=cfg.momentum,
        weight_decay=1.0,
        decay_mask=rates,
    )
    return TrainState(
        network=network, bank=bank, optimizer=optimizer, param_names=list(trainable.keys())
    )


def _zero() -> Tensor:
    return Tensor(np.zeros(1))


def _clip_gradients(params, max_norm: float) -> None:
    """Rescale all gradients together so their global L2 norm is at most
    max_norm. The summed target losses produce very large gradients while
    the bank geometry is still random; clipping keeps those early steps
    from destroying the embedding layer."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor


def _masks(state: TrainState, cfg: ExperimentConfig, h_S: Tensor, h_T: Tensor) -> tuple[Tensor, Tensor]:
    if cfg.fixed_mask_ratio is not None:
        pattern = apply_fixed_mask(cfg.fixed_mask_ratio, cfg.encoder.d_h)
        return (
            Tensor(np.tile(pattern, (h_S.shape[0], 1))),
            Tensor(np.tile(pattern, (h_T.shape[0], 1))),
        )
    return state.network.mask_net.forward(h_S), state.network.mask_net.forward(h_T)


def _neighbor_sets(state: TrainState, cfg: ExperimentConfig, target_indices: np.ndarray) -> list[list[int]]:
    bank = state.bank
    if cfg.mode == CLOSE_SET:
        head = state.network.task_net.params
        scores = bank.anchors @ head["head.w"].data + head["head.b"].data
        predicted = scores.argmax(axis=1)
        return [bank.topk_neighbors_closeset(int(i), cfg.k, predicted) for i in target_indices]
    return [bank.topk_neighbors_openset(int(i), cfg.k) for i in target_indices]


def train_step(state: TrainState, batch: DomainBatch, cfg: ExperimentConfig) -> LossBreakdown:
    """One optimization step; returns the scalar loss breakdown."""
    net = state.network
    rng = seeded_rng(cfg.seed, RNG_STEP, state.step)

    h_S = net.encoder.forward(batch.x_S)
    h_T = net.encoder.forward(batch.x_T)
    mask_S, mask_T = _masks(state, cfg, h_S, h_T)
    pair_S = disentangle(h_S, mask_S)
    pair_T = disentangle(h_T, mask_T)
    reb = build_rearranged_batch(
        pair_S, batch.y_S, pair_T, batch.target_indices, rng, cfg.require_derangement
    )
    _, logits_ss = net.task_net.forward(reb.r_ss)
    _, logits_st = net.task_net.forward(reb.r_st)
    emb_ts, _ = net.task_net.forward(reb.r_ts)
    emb_tt, _ = net.task_net.forward(reb.r_tt)

    aux_w = schedule_aux(state.epoch, cfg.aux_delay_epochs, cfg.aux_ramp_epochs)
    if cfg.disable_l_task:
        task_term = _zero()
    else:
        task_term = l_task(logits_ss, logits_st, batch.y_S, mask_S, cfg.w)
    if cfg.disable_l_neighbor or cfg.lambda1 == 0 or aux_w == 0.0:
        neighbor_term = _zero()
    else:
        neighbor_term = l_neighbor(emb_tt, state.bank, _neighbor_sets(state, cfg, batch.target_indices))
    if cfg.disable_l_agree or cfg.lambda2 == 0 or aux_w == 0.0:
        agree_term = _zero()
    else:
        agree_term = l_agree(
            emb_ts, emb_tt, batch.target_indices, state.bank, mask_T, cfg.w
        )
    total = total_loss(task_term, neighbor_term, agree_term, aux_w * cfg.lambda1, aux_w * cfg.lambda2)

    for p in net.named_params(include_mask_net=True).values():
        p.grad = None
    total.backward()
    if cfg.grad_clip is not None:
        _clip_gradients(state.optimizer.params, cfg.grad_clip)
    state.optimizer.step()

    # bank rows move toward the embeddings computed by this step's forward
    # pass (pre-update weights), after the optimizer has stepped
    for row, i in enumerate(batch.target_indices):
        state.bank.update_row(int(i), emb_tt.data[row])

    state.step += 1
    return LossBreakdown(
        l_task=task_term.item(),
        l_agree=agree_term.item(),
        l_neighbor=neighbor_term.item(),
        mask_l1_S=float(np.abs(mask_S.data).sum() / mask_S.shape[0]),
        mask_l1_T=float(np.abs(mask_T.data).sum() / mask_T.shape[0]),
        total=total.item(),
        mean_mask_S=float(mask_S.data.mean()),
        mean_mask_T=float(mask_T.data.mean()),
    )


def load_datasets(cfg: ExperimentConfig):
    """(train_source, train_target, eval_source, eval_target)."""
    if cfg.idx is not None:
        train_s = load_idx(cfg.idx.source_images, cfg.idx.source_labels, SOURCE)
        train_t = load_idx(cfg.idx.target_images, cfg.idx.target_labels, TARGET)
        return train_s, train_t, train_s, train_t
    train_s, train_t = synth_two_domain(cfg.data, cfg.seed, split=0)
    eval_s, eval_t = synth_two_domain(cfg.data, cfg.seed, split=1)
    return train_s, train_t, eval_s, eval_t


def evaluate(
    network: Network,
    cfg: ExperimentConfig,
    eval_s: Dataset,
    eval_t: Dataset,
    train_t: Dataset | None = None,
) -> dict[str, float]:
    """Per-epoch metrics on the held-out splits.

    Close-set runs report classification accuracy on both domains. Open-set
    runs additionally report cross-domain retrieval (target queries against
    the source gallery when the label spaces are shared, otherwise against
    the target training set) plus thresholded OS / OS*. Runs trained with a
    constant mask evaluate through the same constant mask.
    """
    pattern = None
    if cfg.fixed_mask_ratio is not None:
        pattern = apply_fixed_mask(cfg.fixed_mask_ratio, cfg.encoder.d_h)
    emb_s, logit_s = embed_dataset(network, eval_s, fixed_mask=pattern)
    emb_t, logit_t = embed_dataset(network, eval_t, fixed_mask=pattern)
    y_s = eval_s.labels
    metrics = {"acc_source": classification_accuracy(logit_s, y_s)}

    y_t = None
    try:
        y_t = eval_labels(eval_t)
    except ValueError:
        pass
    if y_t is None:
        return metrics

    shared = y_t.max() < cfg.n_classes
    if shared:
        metrics["acc_target"] = classification_accuracy(logit_t, y_t)
    if cfg.mode == OPEN_SET:
        if shared:
            gallery_emb, gallery_ids = emb_s, y_s
        else:
            if train_t is None:
                raise ValueError("disjoint open-set retrieval needs the target training set as gallery")
            gallery_emb, _ = embed_dataset(network, train_t, fixed_mask=pattern)
            gallery_ids = eval_labels(train_t)
        retrieval = retrieval_metrics(emb_t, y_t, gallery_emb, gallery_ids)
        for k, v in retrieval.rank_k.items():
            metrics[f"rank_{k}"] = v
        metrics["mAP"] = retrieval.mAP
        capped = np.minimum(y_t, cfg.n_classes)
        if (capped < cfg.n_classes).any():
            open_set = openset_accuracy(logit_t, capped, cfg.openset_threshold)
            metrics["os"] = open_set.os
            metrics["os_star"] = open_set.os_star
        # with every truth unknown the macro averages are vacuous; only
        # retrieval is reported
    return metrics


def run_experiment(cfg: ExperimentConfig, resume_from=None) -> dict:
    """Train per the config and write losses.csv, metrics.csv, checkpoint.bin
    and summary.txt into cfg.out_dir. Returns the collected metrics."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_s, train_t, eval_s, eval_t = load_datasets(cfg)
    if cfg.idx is not None and train_s.labels.max() >= cfg.n_classes:
        raise ConfigError(
            f"IDX labels reach {int(train_s.labels.max())} but n_classes is {cfg.n_classes}"
        )
    for name, ds in (("source", train_s), ("target", train_t)):
        if np.prod(ds.image_shape) != np.prod(cfg.encoder.input_shape) or (
            cfg.encoder.kind == "conv" and ds.image_shape != tuple(cfg.encoder.input_shape)
        ):
            raise ConfigError(
                f"{name} images have shape {ds.image_shape} but the encoder "
                f"expects {tuple(cfg.encoder.input_shape)}"
            )
    state = init_state(cfg, n_target=len(train_t))
    if resume_from is not None:
        _restore(state, cfg, resume_from)

    loss_rows: list[str] = []
    metric_rows: list[str] = []
    all_metrics: dict[int, dict[str, float]] = {}
    last_breakdown: LossBreakdown | None = None

    def record_eval(epoch_label: int) -> None:
        metrics = evaluate(state.network, cfg, eval_s, eval_t, train_t)
        all_metrics[epoch_label] = metrics
        for name, value in metrics.items():
            metric_rows.append(f"{cfg.run_id},{epoch_label},{name},{value!r}")

    try:
        if cfg.epochs == 0 and state.epoch == 0:
            record_eval(0)
        for epoch in range(state.epoch, cfg.epochs):
            state.epoch = epoch
            state.optimizer.lr = schedule_lr(cfg.lr, epoch, cfg.epochs, cfg.warmup_epochs)
            for batch in make_batches(train_s, train_t, cfg.batch_size, cfg.seed, epoch):
                step_index = state.step
                last_breakdown = train_step(state, batch, cfg)
                loss_rows.append(last_breakdown.csv_row(step_index))
            state.epoch = epoch + 1
            if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
                record_eval(epoch + 1)
    except NumericError as exc:
        _write_outputs(out, cfg, loss_rows, metric_rows, state, last_breakdown, error=str(exc))
        raise
    _write_outputs(out, cfg, loss_rows, metric_rows, state, last_breakdown)
    return {
        "out_dir": str(out),
        "metrics": all_metrics,
        "final_metrics": all_metrics[max(all_metrics)] if all_metrics else {},
        "losses_csv": str(out / "losses.csv"),
        "metrics_csv": str(out / "metrics.csv"),
        "checkpoint": str(out / "checkpoint.bin"),
    }


def _write_outputs(out: Path, cfg, loss_rows, metric_rows, state, last_breakdown, error=None) -> None:
    (out / "losses.csv").write_text("\n".join([",".join(CSV_FIELDS)] + loss_rows) + "\n")
    (out / "metrics.csv").write_text("\n".join([METRICS_HEADER] + metric_rows) + "\n")
    save_state(out / "checkpoint.bin", state, cfg)
    lines = [f"run_id = {cfg.run_id}", f"seed = {cfg.seed}", f"epochs_completed = {state.epoch}", f"steps = {state.step}"]
    if error is not None:
        lines.append(f"aborted = {error}")
        if last_breakdown is not None:
            lines.append(f"last_breakdown = {last_breakdown}")
    for row in metric_rows:
        _, epoch, name, value = row.split(",", 3)
        lines.append(f"epoch {epoch} {name} = {value}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def save_state(path, state: TrainState, cfg: ExperimentConfig) -> None:
    entries: dict[str, np.ndarray | float] = {}
    for name, p in state.network.named_params(include_mask_net=True).items():
        entries[f"param.{name}"] = p.data
    for name, v in zip(state.param_names, state.optimizer.velocity):
        entries[f"vel.{name}"] = v
    entries["membank.A"] = state.bank.anchors
    entries["membank.eta"] = state.bank.eta
    entries["membank.tau"] = state.bank.tau
    entries["meta.epoch"] = float(state.epoch)
    entries["meta.step"] = float(state.step)
    entries["meta.seed"] = float(cfg.seed)
    save_checkpoint(path, entries)


def _restore(state: TrainState, cfg: ExperimentConfig, path) -> None:
    entries = load_checkpoint(path)
    params = state.network.named_params(include_mask_net=True)
    for name, p in params.items():
        key = f"param.{name}"
        if key not in entries:
            raise ConfigError(f"checkpoint missing parameter {name}")
        if entries[key].shape != p.data.shape:
            raise ConfigError(
                f"checkpoint parameter {name} has shape {entries[key].shape}, expected {p.data.shape}"
            )
        p.data[...] = entries[key]
    for i, name in enumerate(state.param_names):
        key = f"vel.{name}"
        if key in entries:
            state.optimizer.velocity[i][...] = entries[key]
    bank_rows = entries["membank.A"]
    if bank_rows.shape != state.bank.anchors.shape:
        raise ConfigError(
            f"checkpoint bank has shape {bank_rows.shape}, expected {state.bank.anchors.shape}"
        )
    state.bank.anchors[...] = bank_rows
    state.bank.eta = float(entries["membank.eta"])
    state.bank.tau = float(entries["membank.tau"])
    state.epoch = int(entries["meta.epoch"])
    state.step = int(entries["meta.step"])


def load_network_from_checkpoint(cfg: ExperimentConfig, path) -> Network:
    """Rebuild a network with the config's shapes and the checkpoint's weights."""
    network = build_network(cfg.encoder, cfg.d_emb, cfg.n_classes, seeded_rng(cfg.seed, RNG_PARAMS))
    entries = load_checkpoint(path)
    for name, p in network.named_params(include_mask_net=True).items():
        key = f"param.{name}"
        if key not in entries:
            raise ConfigError(f"checkpoint missing parameter {name}")
        if entries[key].shape != p.data.shape:
            raise ConfigError(
                f"checkpoint parameter {name} has shape {entries[key].shape}, expected {p.data.shape}"
            )
        p.data[...] = entries[key]
    return network


# ---------------------------------------------------------------------------
# config files: INI sections [model] [losses] [data] [schedule] [run]

_CONFIG_KEYS = {
    "model": {"encoder_kind", "channels", "hidden", "d_h", "d_emb"},
    "losses": {"w", "lambda1", "lambda2", "tau", "k"},
    "data": {
        "n_classes",
        "per_class",
        "eval_per_class",
        "image_size",
        "image_channels",
        "background",
        "foreground",
        "jitter_std",
        "distractors",
        "polarity_flip",
        "noise_std",
        "intensity_invert",
        "channel_permute",
        "translation",
        "open_set_disjoint",
        "source_images",
        "source_labels",
        "target_images",
        "target_labels",
    },
    "schedule": {
        "epochs",
        "batch_size",
        "lr",
        "momentum",
        "grad_clip",
        "warmup_epochs",
        "weight_decay",
        "mask_decay",
        "aux_delay_epochs",
        "aux_ramp_epochs",
        "eval_every",
    },
    "run": {
        "seed",
        "mode",
        "out_dir",
        "run_id",
        "openset_threshold",
        "require_derangement",
        "disable_l_task",
        "disable_l_neighbor",
        "disable_l_agree",
        "fixed_mask_ratio",
        "eta",
    },
}


def _int_tuple(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def load_config(path) -> ExperimentConfig:
    """Parse an experiment config file into an ExperimentConfig."""
    return config_from_parser(read_config_file(path), path)


def read_config_file(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cp


def config_from_parser(cp: configparser.ConfigParser, path="<config>") -> ExperimentConfig:
    for section in cp.sections():
        if section not in _CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in cp[section]:
            if key not in _CONFIG_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")

    cfg = ExperimentConfig()
    try:
        if cp.has_section("model"):
            m = cp["model"]
            cfg.encoder = EncoderConfig(
                kind=m.get("encoder_kind", cfg.encoder.kind),
                channels=_int_tuple(m.get("channels", "8,16")),
                hidden=_int_tuple(m.get("hidden", "64")),
                d_h=m.getint("d_h", cfg.encoder.d_h),
            )
            cfg.d_emb = m.getint("d_emb", cfg.d_emb)
        if cp.has_section("losses"):
            s = cp["losses"]
            cfg.w = s.getfloat("w", cfg.w)
            cfg.lambda1 = s.getfloat("lambda1", cfg.lambda1)
            cfg.lambda2 = s.getfloat("lambda2", cfg.lambda2)
            cfg.tau = s.getfloat("tau", cfg.tau)
            cfg.k = s.getint("k", cfg.k)
        if cp.has_section("data"):
            d = cp["data"]
            shift = ShiftSpec(
                noise_std=d.getfloat("noise_std", cfg.data.shift.noise_std),
                intensity_invert=d.getboolean("intensity_invert", cfg.data.shift.intensity_invert),
                channel_permute=d.getboolean("channel_permute", cfg.data.shift.channel_permute),
                translation=d.getint("translation", cfg.data.shift.translation),
            )
            eval_pc = d.get("eval_per_class", "").strip()
            cfg.data = SynthSpec(
                n_classes=d.getint("n_classes", cfg.data.n_classes),
                per_class=d.getint("per_class", cfg.data.per_class),
                eval_per_class=int(eval_pc) if eval_pc else cfg.data.eval_per_class,
                image_size=d.getint("image_size", cfg.data.image_size),
                channels=d.getint("image_channels", cfg.data.channels),
                background=d.getfloat("background", cfg.data.background),
                foreground=d.getfloat("foreground", cfg.data.foreground),
                jitter_std=d.getfloat("jitter_std", cfg.data.jitter_std),
                distractors=d.getint("distractors", cfg.data.distractors),
                polarity_flip=d.getfloat("polarity_flip", cfg.data.polarity_flip),
                shift=shift,
                open_set_disjoint=d.getboolean("open_set_disjoint", cfg.data.open_set_disjoint),
            )
            cfg.n_classes = cfg.data.n_classes
            cfg.encoder.input_shape = (
                cfg.data.channels,
                cfg.data.image_size,
                cfg.data.image_size,
            )
            if any(key in d for key in ("source_images", "source_labels", "target_images")):
                for key in ("source_images", "source_labels", "target_images"):
                    if key not in d:
                        raise ConfigError(f"{path}: IDX data needs {key}")
                cfg.idx = IdxPaths(
                    source_images=d["source_images"],
                    source_labels=d["source_labels"],
                    target_images=d["target_images"],
                    target_labels=d.get("target_labels") or None,
                )
        if cp.has_section("schedule"):
            s = cp["schedule"]
            cfg.epochs = s.getint("epochs", cfg.epochs)
            cfg.batch_size = s.getint("batch_size", cfg.batch_size)
            cfg.lr = s.getfloat("lr", cfg.lr)
            cfg.momentum = s.getfloat("momentum", cfg.momentum)
            clip = s.get("grad_clip", "").strip()
            if clip:
                cfg.grad_clip = None if clip.lower() == "none" else float(clip)
            cfg.warmup_epochs = s.getint("warmup_epochs", cfg.warmup_epochs)
            cfg.weight_decay = s.getfloat("weight_decay", cfg.weight_decay)
            decay = s.get("mask_decay", "").strip()
            if decay:
                cfg.mask_decay = None if decay.lower() == "none" else float(decay)
            cfg.aux_delay_epochs = s.getint("aux_delay_epochs", cfg.aux_delay_epochs)
            cfg.aux_ramp_epochs = s.getint("aux_ramp_epochs", cfg.aux_ramp_epochs)
            cfg.eval_every = s.getint("eval_every", cfg.eval_every)
        if cp.has_section("run"):
            r = cp["run"]
            cfg.seed = r.getint("seed", cfg.seed)
            cfg.mode = r.get("mode", cfg.mode)
            cfg.out_dir = r.get("out_dir", cfg.out_dir)
            cfg.run_id = r.get("run_id", cfg.run_id)
            cfg.openset_threshold = r.getfloat("openset_threshold", cfg.openset_threshold)
            cfg.require_derangement = r.getboolean("require_derangement", cfg.require_derangement)
            cfg.disable_l_task = r.getboolean("disable_l_task", cfg.disable_l_task)
            cfg.disable_l_neighbor = r.getboolean("disable_l_neighbor", cfg.disable_l_neighbor)
            cfg.disable_l_agree = r.getboolean("disable_l_agree", cfg.disable_l_agree)
            cfg.eta = r.getfloat("eta", cfg.eta)
            if r.get("fixed_mask_ratio", "").strip():
                cfg.fixed_mask_ratio = r.getfloat("fixed_mask_ratio")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg.validate()
