"""Metrics and experiment drivers.

Every driver regenerates its data from seeds, runs the relevant allocators
and learners at desk scale, and writes schema-documented CSV files under
``results/<experiment-id>/<run-id>/`` together with a run-metadata document.
Metric columns are deterministic per seed; timing columns are not.

Desk-scale defaults depart from the headline figures of the reference
tables in two documented ways: the SM1 experiments use a noise level at
which water-filling is selective (so allocation quality is measurable), and
dataset sizes are thousands rather than 100K.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import channel, dqn, envgen, nn, optim, pipeline
from .optim import NetworkConfig, SystemModel
from .seeding import stream

EXPERIMENT_IDS = (
    "cs1-subcarriers", "cs1-trainsize", "cs1-layers", "cs1-nonstat",
    "ageing", "semi-online", "cs2-nonstat", "cs2b-users", "dqn-curves",
    "cs3-time", "cs3-rate", "cs3-cdf",
)

# noise level giving a selective water-filling solution at desk scale; the
# reference microwatt figure leaves the relative sum rate insensitive to the
# allocation (see README)
SM1_SIGMA2 = 1.0
SM1_NORM = "linear_mean"
K1_PAIR = (2, 20)  # two-path stationary regime used for the k = 1 subset
STATIONARY_PAIR = (6, 20)


# ---------------------------------------------------------------------------
# metrics


def relative_sum_rate(predicted_rate: float, reference_rate: float) -> float:
    """Predicted rate as a percentage of the reference rate."""
    if reference_rate <= 0:
        raise ValueError("reference rate must be positive")
    return 100.0 * predicted_rate / reference_rate


def moving_avg(series, window: int) -> np.ndarray:
    """Mean of the last ``window`` values; shorter prefixes average what is
    available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    series = np.asarray(series, dtype=float)
    out = np.empty_like(series)
    csum = np.cumsum(series)
    for t in range(len(series)):
        lo = max(0, t - window + 1)
        total = csum[t] - (csum[lo - 1] if lo > 0 else 0.0)
        out[t] = total / (t - lo + 1)
    return out


def time_phase(workload) -> tuple:
    """(result, wall seconds) for a callable, on the monotonic clock."""
    t0 = time.perf_counter()
    result = workload()
    return result, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# shared single-cell training harness


def sm1_config(num_subcarriers: int = 16, sigma2: float = SM1_SIGMA2) -> NetworkConfig:
    return NetworkConfig(num_bs=1, num_users=1, num_subcarriers=num_subcarriers,
                         sigma2=sigma2)


def sm1_universe(num_subcarriers: int) -> envgen.PairUniverse:
    # path count cannot exceed the subcarrier count (DFT length)
    return envgen.build_universe(min(32, num_subcarriers), 128)


@dataclass
class Sm1Model:
    spec: nn.ModelSpec
    weights: list
    norm: nn.GainNormalizer
    history: list
    train_seconds: float


def train_sm1(train_samples, val_samples, cfg: NetworkConfig, preset: str = "sm1-desk",
              hidden_layers: int | None = None, beta: float = 1.0, epochs: int = 40,
              seed: int = 0, norm_kind: str = SM1_NORM) -> Sm1Model:
    x_tr, y_tr = pipeline.sm1_features(train_samples), pipeline.sm1_labels(train_samples)
    x_va, y_va = pipeline.sm1_features(val_samples), pipeline.sm1_labels(val_samples)
    norm = nn.GainNormalizer(kind=norm_kind).fit(x_tr)
    spec = nn.preset_model(preset, 1, 1, cfg.num_subcarriers, hidden_layers=hidden_layers)
    tc = nn.TrainConfig(max_epochs=epochs, patience=epochs, seed=seed)
    loss = nn.PowerViolationLoss(beta=beta, p_max=cfg.p_max)
    result = nn.fit(spec, (norm.transform(x_tr), y_tr), (norm.transform(x_va), y_va),
                    tc, loss)
    return Sm1Model(spec=spec, weights=result.weights, norm=norm,
                    history=result.history, train_seconds=result.train_seconds)


def eval_sm1(model: Sm1Model, samples, cfg: NetworkConfig):
    """Mean relative sum rate vs water-filling, plus prediction timing and
    the pre-projection totals used by the violation studies."""
    x = pipeline.sm1_features(samples)
    xn = model.norm.transform(x)
    raw, t3_per_sample = nn.predict_batch(model.spec, model.weights, xn)
    totals_raw = raw.sum(axis=1)
    projected = nn.project_feasible(raw, cfg.p_max)
    rel = np.empty(len(samples))
    for i, s in enumerate(samples):
        g2 = x[i]
        rate = optim.sum_rate(
            SystemModel.SM1, optim.sinr(SystemModel.SM1, np.sqrt(g2), projected[i], cfg), cfg)
        p_ref = optim.waterfill(g2, cfg.p_max, cfg.sigma2, kappa=cfg.kappa)
        ref = optim.sum_rate(
            SystemModel.SM1, optim.sinr(SystemModel.SM1, np.sqrt(g2), p_ref, cfg), cfg)
        rel[i] = relative_sum_rate(rate, ref)
    return {"r_bar": float(rel.mean()), "rel": rel, "t3_per_sample": t3_per_sample,
            "totals_raw": totals_raw}


def make_sm1_dataset(cfg: NetworkConfig, subset: envgen.NonStationaritySpec,
                     count: int, seed: int):
    env = envgen.EnvConfig(network=cfg)
    samples = envgen.generate_samples(env, subset, count, seed)
    t1 = envgen.label_dataset(samples, "waterfill", cfg)
    return samples, t1


# ---------------------------------------------------------------------------
# multi-cell (conv model) harness


def sm3_features(samples, norm: nn.GainNormalizer | None):
    """(batch, B, U, N+1) inputs: normalized squared gains plus the
    connectivity column; also returns (gain_sq, alpha) loss targets."""
    g2 = np.stack([np.abs(s.gains.gains) ** 2 for s in samples])
    alpha = np.stack([
        optim.equal_share_load(s.adjacency, s.gains.gains.shape[2]) for s in samples])
    if norm is None:
        norm = nn.GainNormalizer(kind="db_standard").fit(g2)
    feats = norm.transform(g2).reshape(g2.shape)
    x = np.concatenate([feats, np.stack([s.adjacency for s in samples])[:, :, :, None]],
                       axis=3)
    return x, g2, alpha, norm


@dataclass
class Sm3Model:
    spec: nn.ModelSpec
    weights: list
    norm: nn.GainNormalizer
    power_scale: float
    history: list
    train_seconds: float


def train_sm3_unsupervised(train_samples, val_samples, cfg: NetworkConfig,
                           beta: float = 1.0, epochs: int = 60, seed: int = 0,
                           power_scale: float | None = None) -> Sm3Model:
    B, U, N = cfg.num_bs, cfg.num_users, cfg.num_subcarriers
    x_tr, g2_tr, al_tr, norm = sm3_features(train_samples, None)
    x_va, g2_va, al_va, _ = sm3_features(val_samples, norm)
    served = max(1, int(al_tr[0].astype(bool).sum() / B))
    if power_scale is None:
        power_scale = 2.0 * cfg.p_max / served
    spec = nn.preset_model("sm3-conv", B, U, N)
    loss = nn.SumRateBudgetLoss(beta=beta, p_max=cfg.p_max, sigma2=cfg.sigma2,
                                dims=(B, U, N), power_scale=power_scale)
    tc = nn.TrainConfig(max_epochs=epochs, patience=epochs, seed=seed)
    result = nn.fit(spec, (x_tr, (g2_tr, al_tr)), (x_va, (g2_va, al_va)), tc, loss)
    return Sm3Model(spec=spec, weights=result.weights, norm=norm,
                    power_scale=power_scale, history=result.history,
                    train_seconds=result.train_seconds)


def sm3_model_powers(model: Sm3Model, samples, cfg: NetworkConfig, project: bool = True):
    """Per-sample (B, U, N) power tensors; pre-projection totals are kept by
    passing project=False."""
    B, U, N = cfg.num_bs, cfg.num_users, cfg.num_subcarriers
    x, _, alpha, _ = sm3_features(samples, model.norm)
    raw, t3 = nn.predict_batch(model.spec, model.weights, x)
    mask = (alpha > 0)
    powers = raw.reshape(-1, B, U, N) * model.power_scale * mask
    if project:
        flat = nn.project_feasible(powers.reshape(len(samples), -1), cfg.p_max,
                                   num_groups=B)
        powers = flat.reshape(-1, B, U, N)
    return powers, t3


def sm3_rates(powers, samples, cfg: NetworkConfig) -> np.ndarray:
    out = np.empty(len(samples))
    for i, s in enumerate(samples):
        alpha = optim.equal_share_load(s.adjacency, cfg.num_subcarriers)
        out[i] = optim.rate_for_power(SystemModel.SM3, s.gains.gains, powers[i], cfg,
                                      alpha=alpha)
    return out


def sm3_env(num_bs=2, num_users=4, num_subcarriers=8, p_max=50.0) -> envgen.EnvConfig:
    cfg = NetworkConfig(num_bs=num_bs, num_users=num_users,
                        num_subcarriers=num_subcarriers, p_max=p_max)
    return envgen.EnvConfig(network=cfg, path_loss="normalized")


# ---------------------------------------------------------------------------
# single-carrier DQN harness


def sc_gain_stream(num_links: int, seed: int):
    """Per-episode (B, B) single-path fading matrices."""
    def gains_for(episode):
        rng = stream(seed, episode)
        params = channel.FadingParams(num_paths=1, num_waves=16, block_len=1)
        g = np.empty((num_links, num_links), dtype=complex)
        for b in range(num_links):
            for u in range(num_links):
                g[b, u] = channel.gen_path_gains(params, 0, rng).taps[0]
        return g
    return gains_for


def sc_baseline_rates(gains, cfg: NetworkConfig, seed: int):
    """Final-allocation network rates for the fixed policies on one episode's
    gains: random uniform per BS, full power, and the WMMSE reference."""
    rng = np.random.default_rng(seed)
    h = np.abs(gains)
    p_rand = rng.uniform(0.0, cfg.p_max, size=cfg.num_bs)
    p_max = np.full(cfg.num_bs, cfg.p_max)
    p_wmmse = optim.wmmse(h, cfg).p
    def rate(p):
        return optim.rate_for_power(SystemModel.SM2B, h, p, cfg)
    return {"random": rate(p_rand), "maxpower": rate(p_max), "wmmse": rate(p_wmmse)}


def random_policy_episode(env, rng) -> float:
    """Mean per-step reward of uniformly random actions on the current gains."""
    state = env.reset()
    total, count, done = 0.0, 0, False
    while not done:
        _, reward, done, _ = env.step(int(rng.integers(env.actions)))
        total += reward
        count += 1
    return total / count


# ---------------------------------------------------------------------------
# CSV output


def write_csv(path: Path, rows: list[dict], columns: list[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})


def run_dir(out_root, experiment_id: str, run_id: str) -> Path:
    return Path(out_root) / experiment_id / run_id


class ExperimentError(ValueError):
    pass


def run_experiment(experiment_id: str, seed: int = 0, out_root="results",
                   run_id: str | None = None, **overrides) -> dict:
    """Run one named experiment; returns {"dir": Path, "files": [...]}."""
    if experiment_id not in EXPERIMENT_IDS:
        raise ExperimentError(
            f"unknown experiment {experiment_id!r}; choose from {EXPERIMENT_IDS}")
    run_id = run_id or f"seed{seed}"
    out = run_dir(out_root, experiment_id, run_id)
    driver = _DRIVERS[experiment_id]
    t0 = time.perf_counter()
    files = driver(out, seed, overrides)
    from . import __version__

    meta = {
        "experiment": experiment_id,
        "seed": seed,
        "run_id": run_id,
        "overrides": {k: _jsonable(v) for k, v in overrides.items()},
        "elapsed_seconds": time.perf_counter() - t0,
        "files": [f.name for f in files],
        "versions": {"rrmbench": __version__, "numpy": np.__version__},
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2))
    return {"dir": out, "files": files}


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return list(v)
    return v


# ---------------------------------------------------------------------------
# drivers: single-user OFDM case study


def _cs1_dataset(n_sub, k, seed, train_size, val_size=500, test_size=1000,
                 k1_pair=K1_PAIR):
    cfg = sm1_config(n_sub)
    universe = sm1_universe(n_sub)
    if k == 1:
        subset = envgen.NonStationaritySpec(k=1, pairs=(k1_pair,), seed=seed)
    else:
        subset = envgen.sample_subset(universe, k, seed=seed)
    total = train_size + val_size + test_size
    samples, t1 = make_sm1_dataset(cfg, subset, total, seed)
    train, val, test = envgen.split(samples, (train_size, val_size, test_size))
    return cfg, universe, subset, train, val, test, t1


def drive_cs1_subcarriers(out: Path, seed: int, o: dict) -> list[Path]:
    sweep = o.get("sweep", (16, 32, 64))
    seeds = o.get("seeds", 3)
    train_size = o.get("train_size", 5000)
    epochs = o.get("epochs", 30)
    rows = []
    for n_sub in sweep:
        r_bars, t2s, t3s = [], [], []
        for s in range(seeds):
            cfg, _, _, train, val, test, _ = _cs1_dataset(
                n_sub, k=10, seed=seed + s, train_size=train_size)
            model = train_sm1(train, val, cfg, epochs=epochs, seed=seed + s)
            ev = eval_sm1(model, test, cfg)
            r_bars.append(ev["r_bar"])
            t2s.append(model.train_seconds)
            t3s.append(ev["t3_per_sample"])
        rows.append({"n_subcarriers": n_sub, "r_bar": np.mean(r_bars),
                     "r_bar_std": np.std(r_bars), "train_seconds": np.mean(t2s),
                     "predict_per_sample_s": np.mean(t3s)})
    path = out / "subcarriers.csv"
    write_csv(path, rows, ["n_subcarriers", "r_bar", "r_bar_std", "train_seconds",
                           "predict_per_sample_s"])
    return [path]


def drive_cs1_trainsize(out: Path, seed: int, o: dict) -> list[Path]:
    sizes = o.get("sweep", (1000, 2000, 5000))
    epochs = o.get("epochs", 30)
    rows = []
    for size in sizes:
        cfg, _, _, train, val, test, t1 = _cs1_dataset(
            o.get("n_subcarriers", 16), k=10, seed=seed, train_size=size)
        model = train_sm1(train, val, cfg, epochs=epochs, seed=seed)
        ev, t3 = time_phase(lambda: eval_sm1(model, test, cfg))
        rows.append({
            "train_size": size, "t1_s": t1, "t2_s": model.train_seconds, "t3_s": t3,
            "t1_per_sample_s": t1 / (size + 1500),
            "t3_per_sample_s": ev["t3_per_sample"], "r_bar": ev["r_bar"]})
    path = out / "trainsize.csv"
    write_csv(path, rows, ["train_size", "t1_s", "t2_s", "t3_s", "t1_per_sample_s",
                           "t3_per_sample_s", "r_bar"])
    return [path]


def drive_cs1_layers(out: Path, seed: int, o: dict) -> list[Path]:
    layer_sweep = o.get("sweep", (1, 3, 5, 7))
    epochs = o.get("epochs", 30)
    cfg, _, _, train, val, test, _ = _cs1_dataset(
        o.get("n_subcarriers", 16), k=10, seed=seed,
        train_size=o.get("train_size", 5000))
    rows = []
    for layers in layer_sweep:
        model = train_sm1(train, val, cfg, preset="sm1-desk", hidden_layers=layers,
                          epochs=epochs, seed=seed)
        ev = eval_sm1(model, test, cfg)
        rows.append({"hidden_layers": layers, "t2_s": model.train_seconds,
                     "t3_per_sample_s": ev["t3_per_sample"], "r_bar": ev["r_bar"]})
    path = out / "layers.csv"
    write_csv(path, rows, ["hidden_layers", "t2_s", "t3_per_sample_s", "r_bar"])
    return [path]


def drive_cs1_nonstat(out: Path, seed: int, o: dict) -> list[Path]:
    ks = o.get("sweep", (1, 10, 100))
    epochs = o.get("epochs", 30)
    n_sub = o.get("n_subcarriers", 16)
    train_size = o.get("train_size", 5000)
    preset = o.get("preset", "sm1-desk")
    rows = []
    violation_rows = []
    for k in ks:
        cfg, universe, subset, train, val, test, _ = _cs1_dataset(
            n_sub, k=k, seed=seed, train_size=train_size)
        model = train_sm1(train, val, cfg, preset=preset, epochs=epochs, seed=seed)
        seen = eval_sm1(model, test, cfg)
        env = envgen.EnvConfig(network=cfg)
        unseen_samples = envgen.generate_samples(
            env, envgen.full_subset(universe), len(test), seed + 1)
        envgen.label_dataset(unseen_samples, "waterfill", cfg)
        unseen = eval_sm1(model, unseen_samples, cfg)
        rows.append({"k": k, "r_bar_seen": seen["r_bar"],
                     "r_bar_unseen": unseen["r_bar"]})
        if k == ks[min(1, len(ks) - 1)]:
            # budget-penalty illustration data from a beta = 0 ablation pair
            plain = train_sm1(train, val, cfg, preset=preset, beta=0.0,
                              epochs=epochs, seed=seed)
            mse_tot = eval_sm1(plain, test, cfg)["totals_raw"]
            custom_tot = seen["totals_raw"]
            for i in range(len(test)):
                violation_rows.append({
                    "sample": i, "total_power_mse": mse_tot[i],
                    "total_power_custom": custom_tot[i], "p_max": cfg.p_max})
    path = out / "nonstat.csv"
    write_csv(path, rows, ["k", "r_bar_seen", "r_bar_unseen"])
    vpath = out / "violation.csv"
    write_csv(vpath, violation_rows,
              ["sample", "total_power_mse", "total_power_custom", "p_max"])
    return [path, vpath]


# ---------------------------------------------------------------------------
# drivers: ageing and semi-online serving


def _ageing_setup(seed: int, o: dict):
    n_sub = o.get("n_subcarriers", 32)
    cfg = sm1_config(n_sub)
    env = envgen.EnvConfig(network=cfg)
    pair = STATIONARY_PAIR if n_sub >= STATIONARY_PAIR[0] else (2, 20)
    stationary = envgen.NonStationaritySpec(k=1, pairs=(pair,), seed=seed)
    shifted = envgen.sample_subset(sm1_universe(n_sub),
                                   o.get("k_shift", 128), seed=seed + 1)
    pre = envgen.generate_samples(env, stationary, o.get("pretrain_size", 3000), seed)
    envgen.label_dataset(pre, "waterfill", cfg)
    tc = nn.TrainConfig(max_epochs=o.get("epochs", 30),
                        patience=o.get("epochs", 30), seed=seed)
    server = pipeline.Sm1Server(cfg, tc, norm_kind=SM1_NORM)
    snapshot = server.fit_snapshot(pre)
    stat_stream = envgen.generate_samples(env, stationary,
                                          o.get("stationary_ticks", 600), seed + 2)
    shift_stream = envgen.generate_samples(env, shifted,
                                           o.get("shifted_ticks", 3000), seed + 3)
    so_cfg = pipeline.SemiOnlineConfig(
        update_period=o.get("update_period", 500),
        retrain_trigger=o.get("retrain_trigger", 0.85),
        window=o.get("window", 250), buffer_size=o.get("buffer_size", 1000),
        min_history=o.get("min_history", 200))
    return cfg, tc, server, snapshot, stat_stream + shift_stream, so_cfg


def _trace_rows(trace):
    return [{"t": r["t"], "r_hat": r["r_hat"], "r_bar": r["r_bar"], "mode": r["mode"],
             "snapshot_id": r["snapshot_id"]} for r in trace]


def drive_ageing(out: Path, seed: int, o: dict) -> list[Path]:
    cfg, tc, server, snapshot, stream_samples, so_cfg = _ageing_setup(seed, o)
    files = []
    for name, offline, trigger in (("frozen", False, False), ("offline", True, True)):
        sv = pipeline.Sm1Server(cfg, tc, norm_kind=SM1_NORM)
        sv.push(snapshot)
        run_cfg = so_cfg if trigger else pipeline.SemiOnlineConfig(
            update_period=so_cfg.update_period, retrain_trigger=1e-9,
            window=so_cfg.window, buffer_size=so_cfg.buffer_size,
            min_history=so_cfg.min_history)
        trace = pipeline.semi_online_run(stream_samples, sv, run_cfg,
                                         offline_mode=offline)
        path = out / f"trace_{name}.csv"
        write_csv(path, _trace_rows(trace), ["t", "r_hat", "r_bar", "mode",
                                             "snapshot_id"])
        files.append(path)
    return files


def drive_semi_online(out: Path, seed: int, o: dict) -> list[Path]:
    cfg, tc, server, snapshot, stream_samples, so_cfg = _ageing_setup(seed, o)
    server.push(snapshot)
    trace = pipeline.semi_online_run(stream_samples, server, so_cfg, offline_mode=False)
    path = out / "trace_semi.csv"
    write_csv(path, _trace_rows(trace), ["t", "r_hat", "r_bar", "mode", "snapshot_id"])
    return [path]


# ---------------------------------------------------------------------------
# drivers: multi-user pipeline and single-carrier comparisons


def drive_cs2_nonstat(out: Path, seed: int, o: dict) -> list[Path]:
    ks = o.get("sweep", (1, 10, 100))
    num_users = o.get("num_users", 4)
    n_sub = o.get("n_subcarriers", 16)
    train_size = o.get("train_size", 3000)
    cfg = NetworkConfig(num_bs=1, num_users=num_users, num_subcarriers=n_sub,
                        sigma2=SM1_SIGMA2)
    env = envgen.EnvConfig(network=cfg)
    universe = sm1_universe(n_sub)
    rows = []
    for k in ks:
        if k == 1:
            subset = envgen.NonStationaritySpec(k=1, pairs=(K1_PAIR,), seed=seed)
        else:
            subset = envgen.sample_subset(universe, k, seed=seed)
        samples = envgen.generate_samples(env, subset, train_size + 600, seed)
        envgen.label_dataset(samples, "greedy+waterfill", cfg)
        train, test = samples[:train_size], samples[train_size:]
        tc = nn.TrainConfig(max_epochs=o.get("epochs", 30),
                            patience=o.get("epochs", 30), seed=seed)
        trained = pipeline.train_pipeline(train, cfg, tc)
        unseen_samples = envgen.generate_samples(env, envgen.full_subset(universe),
                                                 len(test), seed + 1)
        envgen.label_dataset(unseen_samples, "greedy+waterfill", cfg)

        def mean_rel(batch):
            vals = []
            for s in batch:
                if not s.label_ok:
                    continue
                rate = pipeline.pipeline_rate(trained, s)
                ref = optim.rate_for_power(
                    SystemModel.SM2A, np.abs(s.gains.gains[0]), s.label_power[0], cfg)
                vals.append(relative_sum_rate(rate, ref))
            return float(np.mean(vals))

        rows.append({"k": k, "r_bar_seen": mean_rel(test),
                     "r_bar_unseen": mean_rel(unseen_samples)})
    path = out / "cs2_nonstat.csv"
    write_csv(path, rows, ["k", "r_bar_seen", "r_bar_unseen"])
    return [path]


def drive_cs2b_users(out: Path, seed: int, o: dict) -> list[Path]:
    """Prediction-time sweep: WMMSE vs a supervised net vs a DQN rollout."""
    sweep = o.get("sweep", (5, 10, 20))
    n_timing = o.get("timing_samples", 20)
    rows = []
    for users in sweep:
        cfg = NetworkConfig(num_bs=users, num_users=users, num_subcarriers=1)
        gains_for = sc_gain_stream(users, seed)
        mats = [np.abs(gains_for(e)) for e in range(n_timing)]

        _, t_wmmse = time_phase(lambda: [optim.wmmse(h, cfg) for h in mats])

        spec = nn.preset_model("sm2b", 1, users, 1)
        weights = nn.init_weights(spec, np.random.default_rng(seed))
        feats = np.stack([(h ** 2).reshape(-1) for h in mats])
        _, t_nn = time_phase(lambda: nn.forward(spec, weights, feats))

        env = dqn.SingleCarrierEnv(cfg, actions=o.get("actions", 10))
        est = dqn.QEstimator(env.state_dim, env.actions, seed=seed)
        _, t_dqn = time_phase(
            lambda: [dqn.predict_allocation(env, est, h) for h in mats])

        rows.append({"num_users": users,
                     "wmmse_per_sample_s": t_wmmse / n_timing,
                     "nn_per_sample_s": t_nn / n_timing,
                     "dqn_per_sample_s": t_dqn / n_timing})
    path = out / "pred_time.csv"
    write_csv(path, rows, ["num_users", "wmmse_per_sample_s", "nn_per_sample_s",
                           "dqn_per_sample_s"])
    return [path]


def drive_dqn_curves(out: Path, seed: int, o: dict) -> list[Path]:
    users = o.get("num_users", 3)
    episodes = o.get("episodes", 2000)
    eval_episodes = o.get("eval_episodes", 200)
    cfg = NetworkConfig(num_bs=users, num_users=users, num_subcarriers=1)
    dqn_cfg = dqn.DqnConfig(
        actions=o.get("actions", 10), seed=seed,
        warmup_episodes=o.get("warmup_episodes", 20),
        epsilon=dqn.EpsilonSchedule(anneal_episodes=o.get("anneal", 1000)))
    env = dqn.SingleCarrierEnv(cfg, actions=dqn_cfg.actions,
                               steps_per_episode=o.get("steps_per_episode"))
    gains_for = sc_gain_stream(users, seed)
    estimator, logs, _ = dqn.run_online(env, gains_for, episodes, dqn_cfg)

    rows = []
    rng = np.random.default_rng(seed + 1)
    for log in logs:
        base = sc_baseline_rates(gains_for(log.episode), cfg, seed + log.episode)
        rows.append({
            "episode": log.episode, "phase": log.phase, "epsilon": log.epsilon,
            "total_reward": log.total_reward, "mean_reward": log.mean_reward,
            "final_reward": log.final_reward, "random_rate": base["random"],
            "maxpower_rate": base["maxpower"], "wmmse_rate": base["wmmse"]})
    train_path = out / "train_curve.csv"
    write_csv(train_path, rows, ["episode", "phase", "epsilon", "total_reward",
                                 "mean_reward", "final_reward", "random_rate",
                                 "maxpower_rate", "wmmse_rate"])

    eval_rows = []
    for e in range(eval_episodes):
        gains = gains_for(episodes + e)
        powers, final = dqn.predict_allocation(env, estimator, gains)
        base = sc_baseline_rates(gains, cfg, seed + episodes + e)
        eval_rows.append({
            "episode": e, "dqn_rate": final, "random_rate": base["random"],
            "maxpower_rate": base["maxpower"], "wmmse_rate": base["wmmse"]})
    eval_path = out / "converged_eval.csv"
    write_csv(eval_path, eval_rows, ["episode", "dqn_rate", "random_rate",
                                     "maxpower_rate", "wmmse_rate"])
    return [train_path, eval_path]


# ---------------------------------------------------------------------------
# drivers: high-complexity multi-cell case


def drive_cs3_time(out: Path, seed: int, o: dict) -> list[Path]:
    sweep = o.get("sweep", (4, 8, 16))
    num_bs = o.get("num_bs", 3)
    num_users = o.get("num_users", 20)
    n_samples = o.get("samples", 8)
    rows = []
    for n_sub in sweep:
        env = sm3_env(num_bs=num_bs, num_users=num_users, num_subcarriers=n_sub)
        subset = envgen.sample_subset(envgen.build_universe(min(32, n_sub), 128),
                                      4, seed=seed)
        samples = envgen.generate_samples(env, subset, n_samples, seed)
        cfg = env.network
        times = []
        for s in samples:
            alpha = optim.equal_share_load(s.adjacency, n_sub)
            _, dt = time_phase(lambda: optim.iterative_sm3(s.gains.gains, alpha, cfg))
            times.append(dt)
        spec = nn.preset_model("sm3-conv", num_bs, num_users, n_sub)
        weights = nn.init_weights(spec, np.random.default_rng(seed))
        x, _, _, _ = sm3_features(samples, None)
        _, t_nn = time_phase(lambda: nn.forward(spec, weights, x))
        rows.append({"n_subcarriers": n_sub,
                     "solver_per_sample_s": float(np.median(times)),
                     "nn_per_sample_s": t_nn / len(samples)})
    path = out / "cs3_time.csv"
    write_csv(path, rows, ["n_subcarriers", "solver_per_sample_s", "nn_per_sample_s"])
    return [path]


def _cs3_models_and_samples(seed: int, o: dict):
    n_sub = o.get("n_subcarriers", 8)
    env = sm3_env(num_subcarriers=n_sub)
    cfg = env.network
    subset = envgen.sample_subset(envgen.build_universe(min(32, n_sub), 128), 8,
                                  seed=seed)
    train = envgen.generate_samples(env, subset, o.get("train_size", 1200), seed)
    val = envgen.generate_samples(env, subset, 200, seed + 1)
    evalset = envgen.generate_samples(env, subset, o.get("eval_size", 200), seed + 2)
    # the rate term's equilibrium sits slightly above the budget; beta = 2
    # keeps pre-projection violations rare without costing rate
    model = train_sm3_unsupervised(train, val, cfg, beta=o.get("beta", 2.0),
                                   epochs=o.get("epochs", 50), seed=seed)
    ablation = train_sm3_unsupervised(train, val, cfg, beta=0.0,
                                      epochs=o.get("epochs", 50), seed=seed)
    return env, cfg, evalset, model, ablation


def _cs3_baseline_powers(samples, cfg, seed):
    mask = [np.repeat((s.adjacency > 0)[:, :, None], cfg.num_subcarriers, axis=2)
            for s in samples]
    rand = [optim.random_alloc(cfg, seed=seed + i, mask=mask[i])
            for i in range(len(samples))]
    wf = [optim.percell_waterfill(s.gains.gains, mask[i], cfg)
          for i, s in enumerate(samples)]
    return rand, wf


def drive_cs3_rate(out: Path, seed: int, o: dict) -> list[Path]:
    env, cfg, evalset, model, _ = _cs3_models_and_samples(seed, o)
    n_solver = o.get("solver_samples", 30)
    powers, _ = sm3_model_powers(model, evalset, cfg)
    model_rates = sm3_rates(powers, evalset, cfg)
    rand_p, wf_p = _cs3_baseline_powers(evalset, cfg, seed)
    rand_rates = sm3_rates(rand_p, evalset, cfg)
    wf_rates = sm3_rates(wf_p, evalset, cfg)
    solver_rates = []
    for s in evalset[:n_solver]:
        alpha = optim.equal_share_load(s.adjacency, cfg.num_subcarriers)
        res = optim.iterative_sm3(s.gains.gains, alpha, cfg)
        solver_rates.append(optim.rate_for_power(
            SystemModel.SM3, s.gains.gains, res.p, cfg, alpha=alpha))
    rows = [{
        "method": "proposed", "mean_rate": float(model_rates.mean())}, {
        "method": "random", "mean_rate": float(rand_rates.mean())}, {
        "method": "waterfill", "mean_rate": float(wf_rates.mean())}, {
        "method": "iterative", "mean_rate": float(np.mean(solver_rates))}]
    path = out / "cs3_rate.csv"
    write_csv(path, rows, ["method", "mean_rate"])
    return [path]


def drive_cs3_cdf(out: Path, seed: int, o: dict) -> list[Path]:
    env, cfg, evalset, model, ablation = _cs3_models_and_samples(seed, o)
    rate_rows, power_rows = [], []

    def add_model(name, m, project):
        powers, _ = sm3_model_powers(m, evalset, cfg, project=project)
        rates = sm3_rates(np.maximum(powers, 0.0) if not project else powers,
                          evalset, cfg)
        for i in range(len(evalset)):
            rate_rows.append({"method": name, "sample": i, "sum_rate": rates[i]})
            for b in range(cfg.num_bs):
                power_rows.append({"method": name, "sample": i, "bs": b,
                                   "total_power": float(powers[i, b].sum()),
                                   "p_max": cfg.p_max})

    # pre-projection totals show how often each loss violates the budget
    add_model("proposed", model, project=False)
    add_model("unregularized", ablation, project=False)
    rand_p, wf_p = _cs3_baseline_powers(evalset, cfg, seed)
    for name, plist in (("random", rand_p), ("waterfill", wf_p)):
        rates = sm3_rates(plist, evalset, cfg)
        for i in range(len(evalset)):
            rate_rows.append({"method": name, "sample": i, "sum_rate": rates[i]})
            for b in range(cfg.num_bs):
                power_rows.append({"method": name, "sample": i, "bs": b,
                                   "total_power": float(plist[i][b].sum()),
                                   "p_max": cfg.p_max})
    rpath = out / "cdf_rates.csv"
    write_csv(rpath, rate_rows, ["method", "sample", "sum_rate"])
    ppath = out / "cdf_power.csv"
    write_csv(ppath, power_rows, ["method", "sample", "bs", "total_power", "p_max"])
    return [rpath, ppath]


_DRIVERS = {
    "cs1-subcarriers": drive_cs1_subcarriers,
    "cs1-trainsize": drive_cs1_trainsize,
    "cs1-layers": drive_cs1_layers,
    "cs1-nonstat": drive_cs1_nonstat,
    "ageing": drive_ageing,
    "semi-online": drive_semi_online,
    "cs2-nonstat": drive_cs2_nonstat,
    "cs2b-users": drive_cs2b_users,
    "dqn-curves": drive_dqn_curves,
    "cs3-time": drive_cs3_time,
    "cs3-rate": drive_cs3_rate,
    "cs3-cdf": drive_cs3_cdf,
}
