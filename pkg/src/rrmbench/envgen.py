"""Dataset generation for the non-stationary fading benchmark.

An environment is a universe of (path count, wave count) pairs; the
non-stationarity factor k picks a k-pair subset.  Every sample draws a pair,
synthesizes a gain tensor through the channel module, and can be labeled by
a reference allocator.  Datasets persist as a manifest document plus one
JSON record per sample, reproducible byte-for-byte from (seed, spec).
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import channel, optim
from .optim import NetworkConfig
from .seeding import stream

FORMAT_VERSION = 1
LABELERS = ("waterfill", "greedy+waterfill", "wmmse", "iterative-sm3", "random", "maxpower")


@dataclass(frozen=True)
class PairUniverse:
    l_max: int
    m_max: int

    def __post_init__(self):
        if self.l_max < 1 or self.m_max < 1:
            raise ValueError("universe bounds must be positive")

    @property
    def cardinality(self) -> int:
        return self.l_max * self.m_max

    def pairs(self) -> list[tuple[int, int]]:
        return [(l, m) for l in range(1, self.l_max + 1) for m in range(1, self.m_max + 1)]

    def pair_at(self, flat_index: int) -> tuple[int, int]:
        l, m = divmod(int(flat_index), self.m_max)
        return l + 1, m + 1


def build_universe(l_max: int, m_max: int) -> PairUniverse:
    return PairUniverse(l_max=l_max, m_max=m_max)


@dataclass(frozen=True)
class NonStationaritySpec:
    k: int
    pairs: tuple[tuple[int, int], ...]
    seed: int

    def __post_init__(self):
        if self.k != len(self.pairs):
            raise ValueError("k must equal the number of pairs")
        if len(set(self.pairs)) != self.k:
            raise ValueError("subset pairs must be distinct")


def sample_subset(universe: PairUniverse, k: int, seed: int) -> NonStationaritySpec:
    """k distinct pairs drawn uniformly without replacement."""
    if not 1 <= k <= universe.cardinality:
        raise ValueError(f"k must lie in [1, {universe.cardinality}], got {k}")
    rng = stream(seed, 0)
    chosen = rng.choice(universe.cardinality, size=k, replace=False)
    pairs = tuple(universe.pair_at(i) for i in chosen)
    return NonStationaritySpec(k=k, pairs=pairs, seed=seed)


def full_subset(universe: PairUniverse) -> NonStationaritySpec:
    return NonStationaritySpec(k=universe.cardinality, pairs=tuple(universe.pairs()), seed=0)


@dataclass(frozen=True)
class EnvConfig:
    """Channel and geometry knobs shared by every sample of a dataset."""

    network: NetworkConfig
    decay_rho_db: float = 0.2
    doppler_fd: float = 40.0
    symbol_period: float = 1e-8
    path_loss: str = "none"  # none | normalized | absolute
    cell_radius: float = 1.0
    geometry_mode: str = "per_sample"  # per_sample | fixed

    def fading_params(self, pair: tuple[int, int]) -> channel.FadingParams:
        return channel.FadingParams(
            num_paths=pair[0], num_waves=pair[1], decay_rho_db=self.decay_rho_db,
            doppler_fd=self.doppler_fd, symbol_period=self.symbol_period,
            block_len=self.network.num_subcarriers)


@dataclass
class Sample:
    index: int
    time_index: int
    pair: tuple[int, int]
    gains: channel.GainTensor
    adjacency: np.ndarray  # (B, U) 0/1 serving map
    label_power: np.ndarray | None = None
    label_assignment: np.ndarray | None = None
    labeler_id: str | None = None
    label_ok: bool = True

    @property
    def labeled(self) -> bool:
        return self.label_power is not None


def _geometry_for(env: EnvConfig, seed: int, index: int) -> channel.Geometry:
    cfg = env.network
    if env.geometry_mode == "fixed":
        rng = stream(seed, 0, 1)
    elif env.geometry_mode == "per_sample":
        rng = stream(seed, index, 1)
    else:
        raise ValueError(f"unknown geometry mode {env.geometry_mode!r}")
    return channel.random_geometry(cfg.num_bs, cfg.num_users, env.cell_radius, rng)


def generate_sample(env: EnvConfig, spec: NonStationaritySpec, seed: int,
                    index: int) -> Sample:
    """Sample ``index`` is a pure function of (seed, index)."""
    rng = stream(seed, index, 0)
    pair = spec.pairs[int(rng.integers(len(spec.pairs)))]
    geometry = _geometry_for(env, seed, index)
    link_seed = int(rng.integers(2 ** 63))
    gains = channel.build_gain_tensor(
        geometry, env.fading_params(pair), env.network.num_subcarriers,
        t=0, seed=link_seed, path_loss=env.path_loss)
    gains = channel.GainTensor(gains=gains.gains, time_index=index)
    return Sample(index=index, time_index=index, pair=pair, gains=gains,
                  adjacency=geometry.adjacency())


def generate_samples(env: EnvConfig, spec: NonStationaritySpec, count: int,
                     seed: int) -> list[Sample]:
    return [generate_sample(env, spec, seed, i) for i in range(count)]


# ---------------------------------------------------------------------------
# labeling


class LabelerMismatch(ValueError):
    """Raised when a labeler cannot apply to the dataset's tensor layout."""


def _label_one(sample: Sample, labeler_id: str, cfg: NetworkConfig):
    g = sample.gains.gains
    B, U, N = g.shape
    if labeler_id == "waterfill":
        if B != 1 or U != 1:
            raise LabelerMismatch("waterfill labels single-user single-cell data")
        g2 = np.abs(g.reshape(-1)) ** 2
        p = np.zeros((B, U, N))
        p[0, 0] = optim.waterfill(g2, cfg.p_max, cfg.sigma2, kappa=cfg.kappa)
        return p, None
    if labeler_id == "greedy+waterfill":
        if B != 1:
            raise LabelerMismatch("greedy+waterfill labels single-cell data")
        g2 = np.abs(g[0]) ** 2  # (U, N)
        assign = optim.greedy_subcarrier_alloc(g2)
        chosen = g2[assign, np.arange(N)]
        p_n = optim.waterfill(chosen, cfg.p_max, cfg.sigma2, kappa=1.0)
        p = np.zeros((B, U, N))
        p[0, assign, np.arange(N)] = p_n
        return p, assign
    if labeler_id == "wmmse":
        if B != U or N != 1:
            raise LabelerMismatch("wmmse labels square single-carrier data")
        res = optim.wmmse(g[:, :, 0], cfg)
        p = np.zeros((B, U, N))
        p[np.arange(B), np.arange(B), 0] = res.p
        return p, None
    if labeler_id == "iterative-sm3":
        alpha = optim.equal_share_load(sample.adjacency, N)
        res = optim.iterative_sm3(g, alpha, cfg)
        return res.p, None
    if labeler_id == "random":
        mask = np.repeat((sample.adjacency > 0)[:, :, None], N, axis=2)
        return optim.random_alloc(cfg, seed=sample.index, mask=mask), None
    if labeler_id == "maxpower":
        mask = np.repeat((sample.adjacency > 0)[:, :, None], N, axis=2)
        return optim.maxpower_alloc(cfg, mask=mask), None
    raise ValueError(f"unknown labeler {labeler_id!r}")


def _label_task(args):
    sample, labeler_id, cfg = args
    try:
        power, assign = _label_one(sample, labeler_id, cfg)
        return power, assign, True
    except LabelerMismatch:
        raise
    except (ValueError, FloatingPointError, ArithmeticError):
        return None, None, False


def label_feasible(power: np.ndarray, p_max: float, rel_tol: float = 1e-6) -> bool:
    return bool(np.all(power >= 0)
                and np.all(power.sum(axis=(1, 2)) <= p_max * (1 + rel_tol)))


def label_dataset(samples: list[Sample], labeler_id: str, cfg: NetworkConfig,
                  jobs: int = 1) -> float:
    """Attach labels in place; failed samples are flagged, never dropped.
    Returns the labeling wall time in seconds (the t1 phase)."""
    if labeler_id not in LABELERS:
        raise ValueError(f"unknown labeler {labeler_id!r}; choose from {LABELERS}")
    t0 = time.perf_counter()
    tasks = [(s, labeler_id, cfg) for s in samples]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_label_task, tasks, chunksize=16))
    else:
        results = [_label_task(t) for t in tasks]
    for sample, (power, assign, ok) in zip(samples, results):
        sample.labeler_id = labeler_id
        if ok and power is not None and label_feasible(power, cfg.p_max):
            sample.label_power = power
            sample.label_assignment = assign
            sample.label_ok = True
        else:
            sample.label_power = None
            sample.label_assignment = None
            sample.label_ok = False
    return time.perf_counter() - t0


# ---------------------------------------------------------------------------
# split and persistence


@dataclass
class DatasetManifest:
    counts: tuple[int, int, int]  # train, val, test
    network: dict
    env: dict
    universe: dict
    subset: dict
    labeler_id: str | None
    master_seed: int
    total: int
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        payload = asdict(self)
        payload["counts"] = list(self.counts)
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        data = json.loads(text)
        data["counts"] = tuple(data["counts"])
        return DatasetManifest(**data)


def make_manifest(env: EnvConfig, universe: PairUniverse, spec: NonStationaritySpec,
                  counts, labeler_id, master_seed, total) -> DatasetManifest:
    return DatasetManifest(
        counts=tuple(counts),
        network=asdict(env.network),
        env={k: v for k, v in asdict(env).items() if k != "network"},
        universe={"l_max": universe.l_max, "m_max": universe.m_max},
        subset={"k": spec.k, "seed": spec.seed, "pairs": [list(p) for p in spec.pairs]},
        labeler_id=labeler_id, master_seed=master_seed, total=total)


def manifest_hash(manifest: DatasetManifest) -> str:
    return hashlib.sha256(manifest.to_json().encode()).hexdigest()


def split(samples: list[Sample], counts) -> tuple[list, list, list]:
    """Contiguous prefix split in generation order."""
    n_train, n_val, n_test = counts
    if n_train + n_val + n_test > len(samples):
        raise ValueError(
            f"split {counts} exceeds the {len(samples)} available samples")
    train = samples[:n_train]
    val = samples[n_train: n_train + n_val]
    test = samples[n_train + n_val: n_train + n_val + n_test]
    return train, val, test


def default_split_counts(total: int) -> tuple[int, int, int]:
    """The 20/20/60 split of the reference pipeline, scaled to ``total``."""
    n_train = int(round(total * 0.2))
    n_val = int(round(total * 0.2))
    return n_train, n_val, total - n_train - n_val


def _sample_record(sample: Sample) -> str:
    g = sample.gains.gains
    rec = {
        "i": sample.index,
        "t": sample.time_index,
        "pair": list(sample.pair),
        "shape": list(g.shape),
        "re": g.real.reshape(-1).tolist(),
        "im": g.imag.reshape(-1).tolist(),
        "adj": sample.adjacency.astype(int).reshape(-1).tolist(),
        "ok": sample.label_ok,
    }
    if sample.label_power is not None:
        rec["label_p"] = sample.label_power.reshape(-1).tolist()
    if sample.label_assignment is not None:
        rec["label_a"] = np.asarray(sample.label_assignment).astype(int).tolist()
    return json.dumps(rec)


def _parse_record(line: str, lineno: int) -> Sample:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"samples file line {lineno}: {exc}") from exc
    shape = tuple(rec["shape"])
    gains = (np.array(rec["re"]) + 1j * np.array(rec["im"])).reshape(shape)
    adjacency = np.array(rec["adj"], dtype=float).reshape(shape[0], shape[1])
    sample = Sample(
        index=rec["i"], time_index=rec["t"], pair=tuple(rec["pair"]),
        gains=channel.GainTensor(gains=gains, time_index=rec["t"]),
        adjacency=adjacency, label_ok=rec["ok"])
    if "label_p" in rec:
        sample.label_power = np.array(rec["label_p"]).reshape(shape)
    if "label_a" in rec:
        sample.label_assignment = np.array(rec["label_a"], dtype=int)
    return sample


def save_dataset(directory, samples: list[Sample], manifest: DatasetManifest):
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(manifest.to_json())
    with open(directory / "samples.ndjson", "w") as fh:
        for sample in samples:
            fh.write(_sample_record(sample) + "\n")


def load_dataset(directory):
    from pathlib import Path

    directory = Path(directory)
    manifest = DatasetManifest.from_json((directory / "manifest.json").read_text())
    samples = []
    with open(directory / "samples.ndjson") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                sample = _parse_record(line, lineno)
                sample.labeler_id = manifest.labeler_id
                samples.append(sample)
    return samples, manifest
