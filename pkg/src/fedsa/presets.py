"""Named configurations used by the scripts and the acceptance suite."""
from __future__ import annotations

from .sim import AggregatorSpec, AttackSpec, ControllerSpec, DatasetSpec, SimConfig


def mnist_desk(agr: str = "fed_avg", attack: str = "none", target: float = 90.0, seed: int = 0,
               **controller) -> SimConfig:
    """784-32-10 classifier, 50 IID clients of which 5 malicious, 100 rounds.

    The reference model for FedSA is the shadow-run checkpoint nearest the
    target unless ``reference_accuracy`` is given.
    """
    return SimConfig(
        dataset=DatasetSpec(name="mnist", train_subset=10000),
        hidden=[32], n_clients=50, n_malicious=5, rounds=100,
        lr=0.1, batch_size=5, local_epochs=3,
        agr=AggregatorSpec(kind=agr), attack=AttackSpec(kind=attack, fedsa=ControllerSpec(**controller)),
        target_accuracy=target, seed=seed)


def synthetic_control(k: float = 0.5, control_gain: float = 1e-3, C1: float = 0.005, rounds: int = 100,
                      seed: int = 0, **controller) -> SimConfig:
    """Closed-loop check on a linear 4-class blob task under FedAvg.

    20 clients (2 malicious). Benign clients train once and then resubmit the
    same model, the attacker sees them (omniscient), and the analytic FedAvg
    derivative is exact, so the surface obeys the discrete reaching law. The
    reference model is the ~80% checkpoint, the target ~70%.
    """
    spec = dict(k=k, control_gain=control_gain, C1=C1, theta_mode="omniscient",
                jacobian_mode="analytic-fedavg", surface_rule="left", reference_accuracy=80.0)
    spec.update(controller)
    return SimConfig(
        dataset=DatasetSpec(name="synthetic", n_classes=4, n_features=10, n_samples=2000, n_test=1000,
                            separation=3.0),
        hidden=[], n_clients=20, n_malicious=2, rounds=rounds,
        lr=0.003, batch_size=10, local_epochs=1, benign_static_after=1,
        agr=AggregatorSpec(kind="fed_avg"), attack=AttackSpec(kind="fedsa", fedsa=ControllerSpec(**spec)),
        target_accuracy=70.0, seed=seed)
