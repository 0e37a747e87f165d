"""Round-by-round federated learning with an optional attacker.

A round: sample clients, benign clients train locally from the current global
model, malicious clients submit crafted models, the server aggregates, the new
global model is evaluated.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as tags
from .aggregators import AggregationInput, AggregatorKind, aggregate
from .baselines import lie_attack, min_max_attack, min_sum_attack
from .controller import (ControllerFault, SlidingState, ThetaMode, apply_control, calibrate_C,
                         saturate_to_proxies,
                         compute_error, control_law, estimate_jacobian, estimate_theta,
                         simplified_control_law, update_sliding_surface)
from .data import Dataset, dirichlet_partition, gen_synthetic, iid_partition, load_mnist
from .errors import ConfigError, InvalidInput
from .model import MlpModel, evaluate_accuracy, local_train
from .reference import ReferenceLibrary
from .rng import RngStream

log = logging.getLogger(__name__)

ATTACKS = ("none", "fedsa", "lie", "min_max", "min_sum")


@dataclass
class DatasetSpec:
    name: str = "synthetic"
    # synthetic blobs
    n_classes: int = 2
    n_features: int = 10
    n_samples: int = 2000
    n_test: int = 1000
    separation: float = 4.0
    # mnist
    train_subset: int = 10000
    root: str | None = None


@dataclass
class AggregatorSpec:
    kind: str = "fed_avg"
    assumed_malicious: int | None = None
    norm_bound_tau: float = 1.0
    cc_radius_tau: float = 10.0
    cc_iters: int = 3
    mkrum_c: int | None = None
    bulyan_strict: bool = False
    dnc_subsample_dim: int = 1000
    dnc_filter_frac: float = 1.0
    dnc_iters: int = 1
    fltrust_root_size: int = 100


@dataclass
class ControllerSpec:
    k: float = 0.5
    control_gain: float | None = None
    gain_scale: float = 0.01
    C1: float = 0.0
    dt: float = 1.0
    jacobian_mode: str = "analytic-fedavg"
    theta_mode: str = "proxy"
    eps_jac: float = 1e-6
    surface_rule: str = "left"
    boundary_layer: float | None = None
    jitter: float = 0.0
    saturation_radius: float | None = None
    reference_accuracy: float | None = None


@dataclass
class AttackSpec:
    kind: str = "none"
    lie_z: float | None = None
    perturb_mode: str = "unit-mean"
    fedsa: ControllerSpec = field(default_factory=ControllerSpec)


@dataclass
class SimConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    hidden: list[int] = field(default_factory=list)
    partition: str = "iid"
    alpha: float = 0.5
    n_clients: int = 50
    n_malicious: int = 5
    sampling_rate: float = 1.0
    rounds: int = 100
    lr: float = 0.1
    batch_size: int = 5
    local_epochs: int = 3
    init_scale: float = 0.05
    agr: AggregatorSpec = field(default_factory=AggregatorSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    target_accuracy: float = 90.0
    retarget: list[list[float]] = field(default_factory=list)
    seed: int = 0
    threads: int = 1
    # from this round on benign clients resubmit their previous model
    benign_static_after: int | None = None

    def validate(self) -> None:
        if not 0 <= self.n_malicious < self.n_clients:
            raise ConfigError("need 0 <= n_malicious < n_clients")
        if not 0 < self.sampling_rate <= 1 or self.sampling_rate * self.n_clients < 1:
            raise ConfigError("sampling_rate must lie in (0, 1] and select at least one client")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.partition not in ("iid", "dirichlet"):
            raise ConfigError(f"unknown partition {self.partition!r}")
        if self.attack.kind not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack.kind!r}")
        try:
            AggregatorKind(self.agr.kind)
        except ValueError as exc:
            raise ConfigError(f"unknown aggregator {self.agr.kind!r}") from exc
        if self.dataset.name not in ("synthetic", "mnist"):
            raise ConfigError(f"unknown dataset {self.dataset.name!r}")
        if not 0 < self.target_accuracy <= 100:
            raise ConfigError("target_accuracy is a percentage in (0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoundRecord:
    round: int
    global_accuracy: float
    delta: float
    err_norm: float
    surface_norm: float
    selected_malicious: int
    selected_total: int
    wallclock_ms: float
    malicious_sampled: int = 0

    CSV_COLUMNS = ("round", "global_accuracy", "delta", "err_norm", "surface_norm",
                   "selected_malicious", "selected_total", "wallclock_ms")


@dataclass
class ExperimentResult:
    records: list[RoundRecord]
    final_delta: float
    final_accuracy: float
    theta_vs: dict[str, float]
    config: dict
    seed: int
    target_accuracy: float
    reference_accuracy: float | None = None
    detection_rate: float | None = None


# -- metrics -----------------------------------------------------------------

def metric_delta(a_t: float, a_0: float) -> float:
    """Signed percentage gap between achieved and targeted accuracy."""
    if a_0 == 0:
        raise InvalidInput("target accuracy must be non-zero")
    return (a_t - a_0) / a_0 * 100.0


def metric_theta(delta_other: float, delta_fedsa: float) -> float:
    if delta_fedsa == 0:
        return math.inf
    return abs(delta_other) / abs(delta_fedsa)


def detection_rate(records) -> float | None:
    """Fraction of rounds in which at least one malicious model survived a
    selection-based aggregator; ``None`` if the aggregator does not select."""
    rows = [r for r in records if r.selected_malicious >= 0]
    if not rows:
        return None
    return sum(r.selected_malicious >= 1 for r in rows) / len(rows)


def sample_clients(n: int, rate: float, rng) -> np.ndarray:
    if not 0 < rate <= 1:
        raise InvalidInput("sampling rate must lie in (0, 1]")
    size = min(n, max(1, math.ceil(rate * n - 1e-9)))
    if size == n:
        return np.arange(n)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return np.sort(gen.choice(n, size=size, replace=False))


# -- attacker ----------------------------------------------------------------

class FedSAAttacker:
    """Owns the controller state for one experiment and crafts the malicious
    submissions each round the attacker is sampled."""

    def __init__(self, state: SlidingState, w_ref: np.ndarray, omniscient_allowed: bool = True,
                 saturation_radius: float | None = None):
        self.state = state
        self.saturation_radius = saturation_radius
        self.w_ref = np.asarray(w_ref, dtype=np.float64)
        self.omniscient_allowed = omniscient_allowed
        self.proxy_prev: np.ndarray | None = None
        self.last_err_norm = math.nan
        self.last_surface_norm = math.nan

    def equilibrium(self) -> np.ndarray:
        """Model the controller is steering toward: ``w_ref + C/k``."""
        st = self.state
        return self.w_ref + st.offset(self.w_ref.size) / st.k

    def skip(self) -> None:
        # finite-difference history spans a round without actuation; drop it
        self.state.prev_prev_malicious = None
        self.state.prev_theta = None

    def step(self, w_t: np.ndarray, n_sampled: int, n_mal: int, *, benign_now=None, benign_prev=None,
             proxy_now=None, rng=None) -> list[np.ndarray]:
        st = self.state
        e = compute_error(self.w_ref, w_t)
        self.last_err_norm = float(np.linalg.norm(e))
        if st.prev_malicious is None:
            s = update_sliding_surface(st, e)
            self.last_surface_norm = float(np.linalg.norm(s))
            st.prev_malicious = np.array(w_t, dtype=np.float64)
            st.prev_aggregate = np.array(w_t, dtype=np.float64)
            self.proxy_prev = None if proxy_now is None else np.asarray(proxy_now)
            return [st.prev_malicious.copy() for _ in range(n_mal)]
        s = update_sliding_surface(st, e)
        self.last_surface_norm = float(np.linalg.norm(s))
        d = estimate_jacobian(st, w_t, n_sampled, n_mal)
        theta = estimate_theta(st, d, benign_now=benign_now, benign_prev=benign_prev,
                               proxy_now=proxy_now, proxy_prev=self.proxy_prev,
                               n_benign=n_sampled - n_mal, omniscient_allowed=self.omniscient_allowed)
        jac = n_mal * d
        if st.theta_mode is ThetaMode.SIMPLIFIED:
            u = simplified_control_law(st, s, jac)
        else:
            u = control_law(st, e, s, jac, theta)
        st.prev_aggregate = np.array(w_t, dtype=np.float64)
        st.prev_theta = theta
        if proxy_now is not None:
            self.proxy_prev = np.asarray(proxy_now)
        subs = apply_control(st, u, n_mal, rng)
        if self.saturation_radius is not None and proxy_now is not None and len(proxy_now) >= 2:
            w = saturate_to_proxies(st, proxy_now, self.saturation_radius)
            subs = [w + (x - subs[0]) for x in subs] if st.jitter > 0 else [w.copy() for _ in subs]
        return subs


# -- simulation --------------------------------------------------------------

def load_data(cfg: SimConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.name == "mnist":
        return load_mnist(ds.root, ds.train_subset)
    base = RngStream(cfg.seed, (tags.DATA,))
    train = gen_synthetic(ds.n_classes, ds.n_features, ds.n_samples, ds.separation, base.child(0))
    test = gen_synthetic(ds.n_classes, ds.n_features, ds.n_test, ds.separation, base.child(1))
    return train, test


class Simulation:
    """Mutable state of one FL run. ``run_round`` advances it by one round."""

    def __init__(self, cfg: SimConfig, train: Dataset | None = None, test: Dataset | None = None,
                 reference: ReferenceLibrary | None = None, init: np.ndarray | None = None):
        cfg.validate()
        self.cfg = cfg
        if train is None or test is None:
            train, test = load_data(cfg)
        self.train, self.test = train, test
        self.layer_dims = (train.n_features, *cfg.hidden, train.n_classes)
        prng = RngStream(cfg.seed, (tags.PARTITION,))
        if cfg.partition == "iid":
            part = iid_partition(train, cfg.n_clients, prng)
        else:
            part = dirichlet_partition(train, cfg.n_clients, cfg.alpha, prng)
        self.partition = part
        self.shards = [train.subset(a) for a in part.assignments]
        self.malicious = set(range(cfg.n_malicious))
        if init is None:
            init = MlpModel.uniform(self.layer_dims, RngStream(cfg.seed, (tags.INIT,)), cfg.init_scale).params
        self.global_model = MlpModel(self.layer_dims, np.array(init, dtype=np.float64))
        self.prev_global = self.global_model.params.copy()
        self.round = 0
        self.last_submissions: dict[int, np.ndarray] = {}
        self.server_shard = None
        if AggregatorKind(cfg.agr.kind) is AggregatorKind.FLTRUST:
            srng = RngStream(cfg.seed, (tags.SERVER,)).generator()
            idx = srng.choice(len(train), size=min(cfg.agr.fltrust_root_size, len(train)), replace=False)
            self.server_shard = train.subset(np.sort(idx))
        self.target = cfg.target_accuracy
        self.retarget = {int(r): float(a) for r, a in cfg.retarget}
        self.reference = reference
        self.reference_accuracy = None
        self.attacker: FedSAAttacker | None = None
        if cfg.attack.kind == "fedsa" and cfg.n_malicious > 0:
            self._init_attacker()

    # attacker setup
    def _init_attacker(self) -> None:
        spec = self.cfg.attack.fedsa
        if self.reference is None:
            raise ConfigError("FedSA needs a reference library")
        ref_acc = spec.reference_accuracy if spec.reference_accuracy is not None else self.target
        w_ref, acc = self.reference.nearest(ref_acc / 100.0)
        self.reference_accuracy = acc
        gain = spec.control_gain
        if gain is None:
            gain = spec.gain_scale * float(np.abs(w_ref).max())
        state = SlidingState(k=spec.k, control_gain=gain, C1=spec.C1, dt=spec.dt,
                             jacobian_mode=spec.jacobian_mode, theta_mode=spec.theta_mode,
                             eps_jac=spec.eps_jac, surface_rule=spec.surface_rule,
                             boundary_layer=spec.boundary_layer, jitter=spec.jitter)
        state.C = calibrate_C(self.reference, w_ref, self.target / 100.0, spec.k)
        self.attacker = FedSAAttacker(state, w_ref, saturation_radius=spec.saturation_radius)

    def set_target(self, target_pct: float) -> None:
        self.target = target_pct
        if self.attacker is not None:
            st = self.attacker.state
            st.set_objective(calibrate_C(self.reference, self.attacker.w_ref, target_pct / 100.0, st.k))

    def _train(self, client: int, rnd: int) -> np.ndarray:
        c = self.cfg
        return local_train(self.global_model, self.shards[client], c.local_epochs, c.batch_size, c.lr,
                           RngStream(c.seed, (client, rnd))).params

    def _train_many(self, clients: list[int], rnd: int) -> dict[int, np.ndarray]:
        if self.cfg.threads > 1 and len(clients) > 1:
            with ThreadPoolExecutor(self.cfg.threads) as pool:
                models = list(pool.map(lambda i: self._train(i, rnd), clients))
        else:
            models = [self._train(i, rnd) for i in clients]
        return dict(zip(clients, models))

    def run_round(self) -> RoundRecord:
        c = self.cfg
        t = self.round
        t0 = time.perf_counter()
        if t in self.retarget:
            self.set_target(self.retarget[t])
        w_t = self.global_model.params
        sampled = [int(i) for i in sample_clients(c.n_clients, c.sampling_rate,
                                                   RngStream(c.seed, (tags.SAMPLING, t)))]
        benign = [i for i in sampled if i not in self.malicious]
        mal = [i for i in sampled if i in self.malicious]
        kind = c.attack.kind
        honest_mal = kind in ("none", "lie", "min_max", "min_sum") or (
            kind == "fedsa" and self.attacker is not None and (
                self.attacker.state.theta_mode is ThetaMode.PROXY or self.attacker.saturation_radius is not None))
        static = c.benign_static_after is not None and t >= c.benign_static_after
        frozen = [i for i in benign if static and i in self.last_submissions]
        fresh = [i for i in benign if i not in frozen]
        models = self._train_many(fresh + (mal if honest_mal else []), t)
        models.update({i: self.last_submissions[i] for i in frozen})
        subs = {i: models[i] for i in benign}
        err_norm = surface_norm = math.nan
        if mal:
            if kind == "none":
                subs.update({i: models[i] for i in mal})
            elif kind == "fedsa":
                subs.update(self._fedsa_submissions(w_t, sampled, benign, mal, models, t))
                err_norm, surface_norm = self.attacker.last_err_norm, self.attacker.last_surface_norm
            else:
                proxies = np.stack([models[i] for i in mal])
                if len(mal) < 2:
                    crafted = proxies[0]
                elif kind == "lie":
                    crafted = lie_attack(proxies, len(sampled), len(mal), reference=w_t, z=c.attack.lie_z)
                elif kind == "min_max":
                    crafted = min_max_attack(proxies, c.attack.perturb_mode, reference=w_t)
                else:
                    crafted = min_sum_attack(proxies, c.attack.perturb_mode, reference=w_t)
                subs.update({i: crafted.copy() for i in mal})
        elif self.attacker is not None:
            self.attacker.skip()

        order = sorted(subs)
        X = np.stack([subs[i] for i in order])
        outcome = aggregate(c.agr.kind, self._agg_input(X, w_t, t))
        sel_mal, sel_total = -1, -1
        if outcome.selected_indices is not None:
            chosen = [order[j] for j in outcome.selected_indices]
            sel_total = len(chosen)
            sel_mal = sum(i in self.malicious for i in chosen)

        self.last_submissions = subs
        self.prev_global = w_t.copy()
        self.global_model = self.global_model.with_params(outcome.aggregate)
        self.round += 1
        acc = evaluate_accuracy(self.global_model, self.test)
        return RoundRecord(round=t, global_accuracy=acc, delta=metric_delta(acc * 100.0, self.target),
                           err_norm=err_norm, surface_norm=surface_norm, selected_malicious=sel_mal,
                           selected_total=sel_total, wallclock_ms=(time.perf_counter() - t0) * 1e3,
                           malicious_sampled=len(mal))

    def _fedsa_submissions(self, w_t, sampled, benign, mal, models, t):
        att = self.attacker
        benign_now = np.stack([models[i] for i in benign]) if benign else None
        benign_prev = None
        if benign:
            # a client absent last round is assumed to move with the global model
            drift = w_t - self.prev_global
            benign_prev = np.stack([self.last_submissions[i] if i in self.last_submissions
                                    else models[i] - drift for i in benign])
        proxy_now = np.stack([models[i] for i in mal]) if mal[0] in models else None
        try:
            crafted = att.step(w_t, len(sampled), len(mal), benign_now=benign_now, benign_prev=benign_prev,
                               proxy_now=proxy_now, rng=RngStream(self.cfg.seed, (tags.JITTER, t)))
        except ControllerFault as exc:
            raise ControllerFault(str(exc), round_index=t) from exc
        return dict(zip(mal, crafted))

    def _agg_input(self, X: np.ndarray, w_t: np.ndarray, t: int) -> AggregationInput:
        a = self.cfg.agr
        m_hat = self.cfg.n_malicious if a.assumed_malicious is None else a.assumed_malicious
        root = None
        if self.server_shard is not None:
            root = local_train(self.global_model, self.server_shard, self.cfg.local_epochs,
                               self.cfg.batch_size, self.cfg.lr, RngStream(self.cfg.seed, (tags.SERVER, t))).params - w_t
        return AggregationInput(
            client_models=X, assumed_malicious_m=m_hat, global_model=w_t,
            norm_bound_tau=a.norm_bound_tau, cc_radius_tau=a.cc_radius_tau, cc_iters=a.cc_iters,
            cc_center=w_t, server_root_update=root, mkrum_c=a.mkrum_c, bulyan_strict=a.bulyan_strict,
            dnc_subsample_dim=a.dnc_subsample_dim, dnc_filter_frac=a.dnc_filter_frac, dnc_iters=a.dnc_iters,
            rng=RngStream(self.cfg.seed, (tags.AGGREGATOR, t)))


def run_round(sim: Simulation) -> RoundRecord:
    return sim.run_round()


# -- reference library -------------------------------------------------------

_REFERENCE_CACHE: dict = {}


def _shadow_key(cfg: SimConfig) -> tuple:
    d = cfg.to_dict()
    keep = ("dataset", "hidden", "partition", "alpha", "n_clients", "rounds", "lr",
            "batch_size", "local_epochs", "init_scale", "seed")
    return tuple(repr(d[k]) for k in keep)


def build_reference_library(cfg: SimConfig, train: Dataset, test: Dataset, init: np.ndarray) -> ReferenceLibrary:
    """Honest FedAvg shadow run (same partition and initial model, seed + 1).

    A checkpoint is kept every time accuracy reaches a new whole percentage
    point, plus the initial model.
    """
    key = _shadow_key(cfg)
    if key in _REFERENCE_CACHE:
        return _REFERENCE_CACHE[key]
    shadow = SimConfig(**{**cfg.__dict__})
    shadow.agr = AggregatorSpec(kind="fed_avg")
    shadow.attack = AttackSpec(kind="none")
    shadow.n_malicious = 0
    shadow.sampling_rate = 1.0
    shadow.retarget = []
    shadow.benign_static_after = None
    sim = Simulation(shadow, train, test, init=init)
    # partition from the experiment seed, training randomness from seed + 1
    sim.cfg = SimConfig(**{**shadow.__dict__, "seed": cfg.seed + 1})
    lib = ReferenceLibrary()
    acc0 = evaluate_accuracy(sim.global_model, test)
    lib.add(sim.global_model.params, acc0)
    level = math.floor(acc0 * 100 + 1e-9)
    for _ in range(cfg.rounds):
        rec = sim.run_round()
        new_level = math.floor(rec.global_accuracy * 100 + 1e-9)
        if new_level > level:
            lib.add(sim.global_model.params, rec.global_accuracy)
            level = new_level
    _REFERENCE_CACHE[key] = lib
    return lib


def run_experiment(cfg: SimConfig, reference: ReferenceLibrary | None = None,
                   data: tuple[Dataset, Dataset] | None = None) -> ExperimentResult:
    cfg.validate()
    train, test = data if data is not None else load_data(cfg)
    layer_dims = (train.n_features, *cfg.hidden, train.n_classes)
    init = MlpModel.uniform(layer_dims, RngStream(cfg.seed, (tags.INIT,)), cfg.init_scale).params
    if cfg.attack.kind == "fedsa" and cfg.n_malicious > 0 and reference is None:
        reference = build_reference_library(cfg, train, test, init)
    sim = Simulation(cfg, train, test, reference=reference, init=init)
    records = [sim.run_round() for _ in range(cfg.rounds)]
    last = records[-1]
    return ExperimentResult(records=records, final_delta=last.delta, final_accuracy=last.global_accuracy,
                            theta_vs={}, config=cfg.to_dict(), seed=cfg.seed, target_accuracy=sim.target,
                            reference_accuracy=sim.reference_accuracy, detection_rate=detection_rate(records))
