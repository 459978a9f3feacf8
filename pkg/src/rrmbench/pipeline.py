"""Two-stage predictor for the multi-user single-cell OFDM case and the
semi-online serving harness.

Model A maps the full gain matrix to per-(user, subcarrier) scores decoded
into a subcarrier assignment; Model B maps the assigned users' gains to
per-subcarrier powers.  The semi-online harness keeps a predictor serving
from an immutable weight snapshot while a trainer relabels, retrains, and
atomically pushes fresh snapshots; an offline ablation mode blanks the
predictor during retraining instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envgen, nn, optim
from .optim import NetworkConfig, SystemModel


def assignment_decode(scores: np.ndarray) -> np.ndarray:
    """Per-subcarrier argmax over user scores (U, N) -> (N,); ties go to the
    lowest user index, so the unique-user invariant always holds."""
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise ValueError(f"scores must be (U, N), got {scores.shape}")
    return np.argmax(scores, axis=0)


# ---------------------------------------------------------------------------
# feature builders


def sm1_features(samples) -> np.ndarray:
    g2 = np.stack([np.abs(s.gains.gains[0, 0]) ** 2 for s in samples])
    return g2


def sm1_labels(samples) -> np.ndarray:
    return np.stack([s.label_power[0, 0] for s in samples])


def sm2a_gain_matrix(sample) -> np.ndarray:
    return np.abs(sample.gains.gains[0]) ** 2  # (U, N)


def pipeline_training_arrays(samples):
    """(gains_a, onehot_a, gains_b, powers_b) from greedy+waterfill labels."""
    xa, ya, xb, yb = [], [], [], []
    for s in samples:
        if not s.label_ok or s.label_assignment is None:
            continue
        g2 = sm2a_gain_matrix(s)
        u_count, n_count = g2.shape
        onehot = np.zeros((u_count, n_count))
        onehot[s.label_assignment, np.arange(n_count)] = 1.0
        xa.append(g2.reshape(-1))
        ya.append(onehot.reshape(-1))
        xb.append(g2[s.label_assignment, np.arange(n_count)])
        yb.append(s.label_power[0].sum(axis=0))
    return (np.stack(xa), np.stack(ya), np.stack(xb), np.stack(yb))


# ---------------------------------------------------------------------------
# trained pipeline


@dataclass
class PipelineSpec:
    num_users: int
    num_subcarriers: int
    model_a: nn.ModelSpec = None
    model_b: nn.ModelSpec = None

    def __post_init__(self):
        if self.model_a is None:
            self.model_a = nn.preset_model("model-a", 1, self.num_users,
                                           self.num_subcarriers)
        if self.model_b is None:
            self.model_b = nn.preset_model("model-b", 1, self.num_users,
                                           self.num_subcarriers)


@dataclass
class TrainedPipeline:
    spec: PipelineSpec
    cfg: NetworkConfig
    weights_a: list
    weights_b: list
    norm_a: nn.GainNormalizer
    norm_b: nn.GainNormalizer
    history_a: list = field(default_factory=list)
    history_b: list = field(default_factory=list)


def train_pipeline(samples, cfg: NetworkConfig, train_cfg: nn.TrainConfig,
                   val_fraction: float = 0.2, beta: float = 1.0) -> TrainedPipeline:
    """Fit Model A (scores, binary cross-entropy) and Model B (powers, MSE
    plus budget penalty) on greedy+waterfill-labeled single-cell data."""
    xa, ya, xb, yb = pipeline_training_arrays(samples)
    n_val = max(1, int(len(xa) * val_fraction))
    spec = PipelineSpec(cfg.num_users, cfg.num_subcarriers)

    norm_a = nn.GainNormalizer().fit(xa[n_val:])
    norm_b = nn.GainNormalizer().fit(xb[n_val:])
    xa_n, xb_n = norm_a.transform(xa), norm_b.transform(xb)

    fit_a = nn.fit(spec.model_a, (xa_n[n_val:], ya[n_val:]), (xa_n[:n_val], ya[:n_val]),
                   train_cfg, nn.BceLoss())
    loss_b = nn.PowerViolationLoss(beta=beta, p_max=cfg.p_max)
    fit_b = nn.fit(spec.model_b, (xb_n[n_val:], yb[n_val:]), (xb_n[:n_val], yb[:n_val]),
                   train_cfg, loss_b)
    return TrainedPipeline(spec=spec, cfg=cfg, weights_a=fit_a.weights,
                           weights_b=fit_b.weights, norm_a=norm_a, norm_b=norm_b,
                           history_a=fit_a.history, history_b=fit_b.history)


def pipeline_predict(trained: TrainedPipeline, gains: np.ndarray):
    """gains (U, N) -> (assignment (N,), power map (U, N)); the power vector
    is projected onto the budget before being scattered to assigned users."""
    g2 = np.abs(np.asarray(gains)) ** 2
    u_count, n_count = g2.shape
    if (u_count, n_count) != (trained.spec.num_users, trained.spec.num_subcarriers):
        raise ValueError(f"expected ({trained.spec.num_users}, "
                         f"{trained.spec.num_subcarriers}) gains, got {g2.shape}")
    scores = nn.forward(trained.spec.model_a, trained.weights_a,
                        trained.norm_a.transform(g2.reshape(1, -1)))
    assign = assignment_decode(scores.reshape(u_count, n_count))
    chosen = g2[assign, np.arange(n_count)]
    raw = nn.forward(trained.spec.model_b, trained.weights_b,
                     trained.norm_b.transform(chosen.reshape(1, -1)))
    p_n = nn.project_feasible(raw, trained.cfg.p_max)[0]
    power = np.zeros((u_count, n_count))
    power[assign, np.arange(n_count)] = p_n
    return assign, power


def pipeline_rate(trained: TrainedPipeline, sample) -> float:
    _, power = pipeline_predict(trained, sample.gains.gains[0])
    s = optim.sinr(SystemModel.SM2A, np.abs(sample.gains.gains[0]), power, trained.cfg)
    return optim.sum_rate(SystemModel.SM2A, s, trained.cfg)


# ---------------------------------------------------------------------------
# semi-online serving


@dataclass
class SemiOnlineConfig:
    update_period: int = 1000      # ticks one retraining occupies before its push
    retrain_trigger: float = 0.85  # fraction of the trailing plateau
    window: int = 1000             # moving-average window
    buffer_size: int = 2000        # most recent samples used for retraining
    min_history: int = 200         # samples before the trigger may fire

    def __post_init__(self):
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if not 0 < self.retrain_trigger < 1:
            raise ValueError("retrain_trigger must lie in (0, 1)")


class Sm1Server:
    """Serving wrapper for the single-user OFDM model: predicts powers from
    an immutable snapshot and can retrain a fresh snapshot from buffered
    samples relabeled with water-filling."""

    def __init__(self, cfg: NetworkConfig, train_cfg: nn.TrainConfig,
                 spec: nn.ModelSpec | None = None, beta: float = 1.0,
                 norm_kind: str = "db_standard"):
        self.cfg = cfg
        self.train_cfg = train_cfg
        self.spec = spec or nn.preset_model("sm1-desk", 1, 1, cfg.num_subcarriers)
        self.beta = beta
        self.norm_kind = norm_kind
        self.snapshot = None  # (weights, normalizer)
        self.snapshot_id = -1

    def push(self, snapshot):
        self.snapshot = snapshot
        self.snapshot_id += 1

    def fit_snapshot(self, samples):
        """Train from scratch on (re)labeled samples; returns the snapshot."""
        labeled = [s for s in samples if s.labeled and s.label_ok]
        x = sm1_features(labeled)
        y = sm1_labels(labeled)
        n_val = max(1, len(x) // 5)
        norm = nn.GainNormalizer(kind=self.norm_kind).fit(x[n_val:])
        xn = norm.transform(x)
        loss = nn.PowerViolationLoss(beta=self.beta, p_max=self.cfg.p_max)
        result = nn.fit(self.spec, (xn[n_val:], y[n_val:]), (xn[:n_val], y[:n_val]),
                        self.train_cfg, loss)
        return (result.weights, norm)

    def predict_rate(self, sample) -> float:
        weights, norm = self.snapshot
        g2 = np.abs(sample.gains.gains[0, 0]) ** 2
        raw = nn.forward(self.spec, weights, norm.transform(g2.reshape(1, -1)))
        p = nn.project_feasible(raw, self.cfg.p_max)[0]
        s = optim.sinr(SystemModel.SM1, np.sqrt(g2), p, self.cfg)
        return optim.sum_rate(SystemModel.SM1, s, self.cfg)

    def reference_rate(self, sample) -> float:
        g2 = np.abs(sample.gains.gains[0, 0]) ** 2
        p = optim.waterfill(g2, self.cfg.p_max, self.cfg.sigma2, kappa=self.cfg.kappa)
        s = optim.sinr(SystemModel.SM1, np.sqrt(g2), p, self.cfg)
        return optim.sum_rate(SystemModel.SM1, s, self.cfg)

    def label(self, sample):
        envgen.label_dataset([sample], "waterfill", self.cfg)
        return sample


def semi_online_run(stream, server, cfg: SemiOnlineConfig, offline_mode: bool = False):
    """Deterministic interleaved simulation of the predictor/trainer pair.

    Every tick serves one sample and advances the trainer by one tick; a
    retraining occupies ``update_period`` ticks and ends with an atomic
    snapshot push.  In offline mode the predictor is down while retraining
    (relative sum rate recorded as zero); in semi-online mode it keeps
    serving the previous snapshot.  Returns trace rows
    (t, r_hat, r_bar, mode, snapshot_id).
    """
    from collections import deque

    trace = []
    window = deque(maxlen=cfg.window)
    buffer = deque(maxlen=cfg.buffer_size)
    retrain_progress = None  # None = idle, else ticks remaining
    plateau = None
    for t, sample in enumerate(stream):
        retraining = retrain_progress is not None
        if offline_mode and retraining:
            r_hat = 0.0
            mode = "retraining"
        else:
            rate = server.predict_rate(sample)
            ref = server.reference_rate(sample)
            r_hat = 100.0 * rate / ref if ref > 0 else 0.0
            mode = "serving"
        window.append(r_hat)
        r_bar = float(np.mean(window))
        trace.append({"t": t, "r_hat": r_hat, "r_bar": r_bar, "mode": mode,
                      "snapshot_id": server.snapshot_id})

        server.label(sample)
        buffer.append(sample)
        if retraining:
            retrain_progress -= 1
            if retrain_progress <= 0:
                # train on the buffer as it stands now, so the samples that
                # arrived during the cycle (the freshest ones) are included
                server.push(server.fit_snapshot(list(buffer)))
                retrain_progress = None
                plateau = None  # re-establish after the push
        else:
            if plateau is None and len(window) >= cfg.min_history:
                plateau = r_bar
            if plateau is not None:
                plateau = max(plateau, r_bar)
                if r_bar < cfg.retrain_trigger * plateau and len(buffer) >= cfg.min_history:
                    retrain_progress = cfg.update_period
    return trace
