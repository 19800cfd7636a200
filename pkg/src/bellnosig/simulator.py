"""Seeded Monte Carlo generation of coincidence data.

Each trial samples a setting tuple, samples the latent outcomes from the
model's conditional distribution, then independently thins each party's
detection.  Only trials in which every party detects are coincidences.

Random streams: ``SeedSequence(seed).spawn(1 + n_parties)``; child 0 draws
settings and outcomes, child ``1 + i`` draws party ``i``'s detections.
Replications in :func:`calibrate` use ``SeedSequence(seed).spawn(replications)``
and feed each child to the per-run rule above.
"""

from __future__ import annotations

import enum
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .qmodel import EXP4_ALICE_DEG, EXP4_BOB_DEG, CorrelationModel
from .tables import CountTable, PartyLayout

_PROB_TOL = 1e-12


class ModelKind(enum.Enum):
    QUANTUM = "quantum"
    LHV = "lhv"
    SIGNALING = "signaling"


def _as_prob_table(p, shape: tuple[int, ...], what: str) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{what}: expected shape {shape}, got {arr.shape}")
    if np.any(arr < -_PROB_TOL) or np.any(arr > 1 + _PROB_TOL) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: probabilities must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


@dataclass(frozen=True)
class SimulationConfig:
    """A generative model of a Bell test.

    ``conditional`` is p(outcomes | settings) as an array of shape
    ``(n_settings...) + (n_outcomes...)``; build it with :func:`quantum_model`,
    :func:`lhv_model` or pass an explicit table (the signaling case).
    ``efficiency[i]`` is party ``i``'s detection probability, shaped
    ``(n_settings...) + (n_outcomes_i,)`` so that it may depend on the full
    setting tuple and the party's own latent outcome.
    """

    layout: PartyLayout
    conditional: np.ndarray
    efficiency: tuple[np.ndarray, ...]
    setting_distribution: np.ndarray
    trials: int
    seed: int | np.random.SeedSequence = 0
    kind: ModelKind = ModelKind.SIGNALING

    def __post_init__(self):
        layout = self.layout
        n = len(layout)
        s_shape = tuple(len(p.settings) for p in layout.parties)
        cond = _as_prob_table(self.conditional, layout.shape, "conditional")
        sums = cond.reshape(int(np.prod(s_shape)), -1).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError(f"conditional distribution must sum to 1 per setting, got {sums}")
        if len(self.efficiency) != n:
            raise ValueError(f"need one efficiency table per party ({n})")
        eff = tuple(
            _as_prob_table(e, s_shape + (len(p.outcomes),), f"efficiency of {p.name}")
            for e, p in zip(self.efficiency, layout.parties)
        )
        q = _as_prob_table(self.setting_distribution, s_shape, "setting_distribution")
        if abs(q.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"setting distribution sums to {q.sum()!r}, not 1")
        if int(self.trials) != self.trials or self.trials < 0:
            raise ValueError(f"trials must be a nonnegative integer, got {self.trials}")
        for name, value in (("conditional", cond), ("setting_distribution", q)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        for e in eff:
            e.setflags(write=False)
        object.__setattr__(self, "efficiency", eff)
        object.__setattr__(self, "trials", int(self.trials))

    def with_seed(self, seed) -> "SimulationConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SimulationOutput:
    coincidences: CountTable
    singles: tuple[int, ...]
    partial: int
    lost: int
    trials: int
    events: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.coincidences.total + self.partial + self.lost != self.trials:
            raise AssertionError("coincidences + partial + lost must equal trials")

    def iter_events(self) -> Iterator[tuple[tuple[str, ...], tuple[str, ...]]]:
        """Coincidence events in trial order, as label tuples (needs ``keep_events``)."""
        if self.events is None:
            raise ValueError("simulate(..., keep_events=True) is required for the event stream")
        layout = self.coincidences.layout
        s_idx, o_idx = self.events
        for s_row, o_row in zip(s_idx, o_idx):
            yield (
                tuple(p.settings[k] for p, k in zip(layout.parties, s_row)),
                tuple(p.outcomes[k] for p, k in zip(layout.parties, o_row)),
            )


def _streams(seed) -> Callable[[int], np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))

    def make(n_parties: int):
        return [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(1 + n_parties)]

    return make


def simulate(config: SimulationConfig, keep_events: bool = False) -> SimulationOutput:
    """Run one simulated experiment; bit-identical for identical configs."""
    layout = config.layout
    n = len(layout)
    s_shape = tuple(len(p.settings) for p in layout.parties)
    o_shape = tuple(len(p.outcomes) for p in layout.parties)
    rngs = _streams(config.seed)(n)
    T = config.trials

    # joint (settings, outcomes) cell probabilities, flattened in C order
    joint = (config.setting_distribution.reshape(s_shape + (1,) * n) * config.conditional).ravel()
    joint = joint / joint.sum()
    cells = rngs[0].choice(joint.size, size=T, p=joint) if T else np.zeros(0, dtype=np.int64)
    idx = np.unravel_index(cells, layout.shape)
    s_idx = np.stack(idx[:n], axis=1) if T else np.zeros((0, n), dtype=np.int64)
    o_idx = np.stack(idx[n:], axis=1) if T else np.zeros((0, n), dtype=np.int64)

    detected = np.ones((T, n), dtype=bool)
    for i in range(n):
        eta = config.efficiency[i][tuple(idx[:n]) + (idx[n + i],)] if T else np.zeros(0)
        detected[:, i] = rngs[1 + i].random(T) < eta

    all_det = detected.all(axis=1)
    n_det = detected.sum(axis=1)
    counts = np.bincount(cells[all_det], minlength=joint.size).reshape(layout.shape)
    table = CountTable(layout, counts)
    singles = tuple(int(v) for v in detected.sum(axis=0))
    partial = int(np.count_nonzero((n_det > 0) & ~all_det))
    lost = int(np.count_nonzero(n_det == 0))
    events = (s_idx[all_det], o_idx[all_det]) if keep_events else None
    return SimulationOutput(table, singles, partial, lost, T, events)


# model builders -------------------------------------------------------------


def uniform_settings(layout: PartyLayout) -> np.ndarray:
    s_shape = tuple(len(p.settings) for p in layout.parties)
    return np.full(s_shape, 1.0 / int(np.prod(s_shape)))


def quantum_model(model: CorrelationModel) -> np.ndarray:
    """p(A, B | X, Y) of a singlet-correlation model; outcome "0" is +1."""
    return model.probabilities()


def lhv_model(strategies: Mapping[tuple[tuple[int, ...], tuple[int, ...]], float]) -> np.ndarray:
    """p(A, B | X, Y) of a mixture of deterministic local strategies.

    Keys are ``(alice_outcomes_per_setting, bob_outcomes_per_setting)`` with
    outcomes as indices, values the mixture weights.
    """
    keys = list(strategies)
    if not keys:
        raise ValueError("need at least one strategy")
    nx, ny = len(keys[0][0]), len(keys[0][1])
    p = np.zeros((nx, ny, 2, 2))
    total = 0.0
    for (a, b), w in strategies.items():
        if len(a) != nx or len(b) != ny or w < 0:
            raise ValueError(f"bad strategy {(a, b)} with weight {w}")
        for x, y in itertools.product(range(nx), range(ny)):
            p[x, y, a[x], b[y]] += w
        total += w
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"strategy weights sum to {total}, not 1")
    return p


def constant_efficiency(layout: PartyLayout, eta: Sequence[float] | float) -> tuple[np.ndarray, ...]:
    """Detection probability independent of settings and outcomes."""
    etas = [float(eta)] * len(layout) if np.isscalar(eta) else [float(e) for e in eta]
    s_shape = tuple(len(p.settings) for p in layout.parties)
    return tuple(np.full(s_shape + (len(p.outcomes),), e) for p, e in zip(layout.parties, etas))


def setting_local_efficiency(layout: PartyLayout, per_party: Sequence[Sequence[float]]) -> tuple[np.ndarray, ...]:
    """eta_i depending only on party i's own setting: ``per_party[i][setting_index]``."""
    s_shape = tuple(len(p.settings) for p in layout.parties)
    out = []
    for i, (p, etas) in enumerate(zip(layout.parties, per_party)):
        etas = np.asarray(etas, dtype=float)
        if etas.shape != (len(p.settings),):
            raise ValueError(f"party {p.name}: need one efficiency per setting")
        shape = [1] * len(layout) + [1]
        shape[i] = len(p.settings)
        out.append(np.broadcast_to(etas.reshape(shape), s_shape + (len(p.outcomes),)).copy())
    return tuple(out)


def setting_outcome_efficiency(layout: PartyLayout, per_party: Sequence[Sequence[Sequence[float]]]) -> tuple[np.ndarray, ...]:
    """eta_i(own setting, own outcome): ``per_party[i][setting_index][outcome_index]``."""
    s_shape = tuple(len(p.settings) for p in layout.parties)
    out = []
    for i, (p, etas) in enumerate(zip(layout.parties, per_party)):
        etas = np.asarray(etas, dtype=float)
        if etas.shape != (len(p.settings), len(p.outcomes)):
            raise ValueError(f"party {p.name}: need a settings x outcomes efficiency table")
        shape = [1] * len(layout) + [len(p.outcomes)]
        shape[i] = len(p.settings)
        out.append(np.broadcast_to(etas.reshape(shape), s_shape + (len(p.outcomes),)).copy())
    return tuple(out)


def remote_skew(
    efficiency: tuple[np.ndarray, ...],
    party: int,
    remote_party: int,
    remote_setting: int,
    outcome: int,
    factor: float,
) -> tuple[np.ndarray, ...]:
    """Copy of ``efficiency`` where party's detection of ``outcome`` is scaled by ``factor``
    whenever ``remote_party`` chose ``remote_setting``: a planted signaling channel."""
    out = [e.copy() for e in efficiency]
    index = [slice(None)] * (out[party].ndim - 1) + [outcome]
    index[remote_party] = remote_setting
    out[party][tuple(index)] = np.clip(out[party][tuple(index)] * factor, 0.0, 1.0)
    return tuple(out)


def exp4_quantum_config(
    trials: int,
    seed: int = 0,
    eta: float | Sequence[float] = 1.0,
    visibility: float = 1.0,
) -> SimulationConfig:
    """Ideal singlet at the CHSH polarization angles of experiment 4, uniform settings."""
    layout = PartyLayout.binary()
    model = CorrelationModel.from_polarizations(EXP4_ALICE_DEG, EXP4_BOB_DEG, visibility)
    return SimulationConfig(
        layout,
        quantum_model(model),
        constant_efficiency(layout, eta),
        uniform_settings(layout),
        trials,
        seed,
        ModelKind.QUANTUM,
    )


def factorized_null_config(trials: int, seed: int = 0) -> SimulationConfig:
    """Null for the two-party battery: singlet outcomes, setting-dependent losses only."""
    cfg = exp4_quantum_config(trials, seed)
    eff = setting_local_efficiency(cfg.layout, [(0.8, 0.7), (0.75, 0.85)])
    return replace(cfg, efficiency=eff)


def signaling_alternative_config(trials: int, seed: int = 0, skew: float = 0.05) -> SimulationConfig:
    """Factorized null plus Bob detecting outcome 0 more often when Alice chose 1."""
    cfg = factorized_null_config(trials, seed)
    eff = remote_skew(cfg.efficiency, party=1, remote_party=0, remote_setting=1, outcome=0, factor=1.0 + skew)
    return replace(cfg, efficiency=eff, kind=ModelKind.SIGNALING)


def empirical_correlations(table: CountTable) -> np.ndarray:
    """E[x, y] = (N_agree - N_disagree) / N per setting pair of a binary two-party table."""
    arr = table.array.astype(float)
    agree = arr[:, :, 0, 0] + arr[:, :, 1, 1]
    disagree = arr[:, :, 0, 1] + arr[:, :, 1, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        return (agree - disagree) / (agree + disagree)


def chsh_sigma(table: CountTable) -> float:
    """Standard error of a CHSH sum, propagated from binomial errors on each correlation."""
    arr = table.array.astype(float)
    n = arr.sum(axis=(2, 3))
    E = empirical_correlations(table)
    return float(np.sqrt(np.sum((1.0 - E**2) / n)))


# calibration ----------------------------------------------------------------


def _one_replication(args):
    config, battery, alpha = args
    report = battery(simulate(config).coincidences)
    return {e.key: (e.result is not None and e.result.p_raw < alpha) for e in report}, {
        e.key: (e.result.p_corrected if e.result is not None else 1.0) for e in report
    }


def calibrate(
    config: SimulationConfig,
    battery: Callable[[CountTable], "object"],
    alpha: float,
    replications: int,
    workers: int = 1,
    corrected: bool = False,
) -> dict[str, float]:
    """Fraction of replications in which each battery test rejects at ``alpha``.

    By default a test rejects when its raw p-value is below ``alpha``; with
    ``corrected`` the Bonferroni-corrected p-value is used.  Replication
    seeds are spawned from ``config.seed``, so the result is deterministic
    regardless of ``workers``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if replications < 1:
        raise ValueError("need at least one replication")
    base = config.seed if isinstance(config.seed, np.random.SeedSequence) else np.random.SeedSequence(int(config.seed))
    jobs = [(config.with_seed(child), battery, alpha) for child in base.spawn(replications)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_one_replication, jobs, chunksize=max(1, replications // (4 * workers))))
    else:
        outcomes = [_one_replication(j) for j in jobs]
    hits: dict[str, int] = {}
    for raw, corr in outcomes:
        for key in raw:
            flag = corr[key] < alpha if corrected else raw[key]
            hits[key] = hits.get(key, 0) + int(flag)
    return {k: v / replications for k, v in sorted(hits.items())}


def _min_corrected(args):
    config, battery = args
    return battery(simulate(config).coincidences).min_p_corrected()


def detection_rate(
    config: SimulationConfig,
    battery: Callable[[CountTable], "object"],
    alpha: float,
    replications: int,
    workers: int = 1,
) -> float:
    """Fraction of replications in which some test's corrected p-value falls below ``alpha``."""
    if replications < 1:
        raise ValueError("need at least one replication")
    base = config.seed if isinstance(config.seed, np.random.SeedSequence) else np.random.SeedSequence(int(config.seed))
    jobs = [(config.with_seed(child), battery) for child in base.spawn(replications)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            mins = list(pool.map(_min_corrected, jobs))
    else:
        mins = [_min_corrected(j) for j in jobs]
    return sum(m < alpha for m in mins) / replications


__all__ = [
    "ModelKind",
    "SimulationConfig",
    "SimulationOutput",
    "calibrate",
    "chsh_sigma",
    "constant_efficiency",
    "detection_rate",
    "empirical_correlations",
    "exp4_quantum_config",
    "factorized_null_config",
    "lhv_model",
    "quantum_model",
    "remote_skew",
    "setting_local_efficiency",
    "setting_outcome_efficiency",
    "signaling_alternative_config",
    "simulate",
    "uniform_settings",
]
