"""Time-evolution drivers built on Trotter gate schedules.

Real time, imaginary time (ground-state search) and adiabatic ramps all reduce
to applying the layers of a :class:`~tebd.hamiltonian.GateSchedule` step after
step; they differ in how the schedule is chosen and what is tracked.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .hamiltonian import (
    GateSchedule,
    LocalHamiltonian,
    TimeAxis,
    interpolate,
    make_schedule,
)
from .mps import (
    NO_TRUNCATION,
    MpsError,
    TruncationPolicy,
    VidalMps,
    apply_single_site_gate,
    apply_two_site_gate,
    chi_profile,
    inner_product,
    norm_squared,
    normalize,
)

logger = logging.getLogger(__name__)

Sampler = Callable[[float, VidalMps], object]

DEFAULT_TAU_LADDER = (0.1, 0.01, 0.001)


class EvolutionError(RuntimeError):
    pass


class NumericalAbort(EvolutionError):
    """A non-finite tensor entry appeared; ``last_good`` is the state before the bad step."""

    def __init__(self, message: str, last_good: VidalMps, report: EvolutionReport):
        super().__init__(message)
        self.last_good = last_good
        self.report = report


@dataclass
class EvolutionReport:
    """Diagnostics sampled at whole-step boundaries."""

    times: list[float] = field(default_factory=list)
    cumulative_discarded_weight: list[float] = field(default_factory=list)
    chi_profiles: list[list[int]] = field(default_factory=list)
    samples: dict[str, list] = field(default_factory=dict)
    step_seconds: list[float] = field(default_factory=list)
    steps: int = 0
    discarded_weight: float = 0.0
    # imaginary-time extras
    energies: list[float] = field(default_factory=list)
    probe_infidelities: list[float] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    converged: bool = True

    def record(self, t: float, state: VidalMps, samplers: Mapping[str, Sampler] | None):
        self.times.append(t)
        self.cumulative_discarded_weight.append(self.discarded_weight)
        self.chi_profiles.append(chi_profile(state)[0])
        for name, fn in (samplers or {}).items():
            self.samples.setdefault(name, []).append(fn(t, state))

    @property
    def max_chi(self) -> int:
        return max((max(p) for p in self.chi_profiles), default=1)


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Stop an imaginary-time stage once ``1 - |<psi_tau|psi_{tau+tau'}>|^2 < overlap_tol``.

    ``tau'`` is ``probe_interval`` if given, otherwise ``probe_steps`` steps of
    the current stage.
    """

    overlap_tol: float = 1e-10
    probe_interval: float | None = None
    probe_steps: int = 10
    max_steps: int = 200_000

    def __post_init__(self):
        if not self.overlap_tol > 0:
            raise ValueError("overlap_tol must be positive")
        if self.probe_interval is not None and not self.probe_interval > 0:
            raise ValueError("probe_interval must be positive")
        if self.probe_steps < 1:
            raise ValueError("probe_steps must be >= 1")

    def steps_per_probe(self, delta_tau: float) -> int:
        if self.probe_interval is None:
            return self.probe_steps
        return max(1, round(self.probe_interval / delta_tau))


def step_count(total_time: float, delta: float) -> int:
    if not delta > 0:
        raise EvolutionError(f"delta must be positive, got {delta}")
    if total_time < 0:
        raise EvolutionError(f"total time must be non-negative, got {total_time}")
    ratio = total_time / delta
    steps = round(ratio)
    if abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise EvolutionError(f"T/delta = {ratio} is not an integer number of steps")
    return int(steps)


def apply_layer(state: VidalMps, layer, policy: TruncationPolicy) -> tuple[VidalMps, float]:
    discarded = 0.0
    for gate in layer:
        if len(gate.sites) == 2:
            state, w = apply_two_site_gate(state, gate.sites[1], gate.matrix, policy)
            discarded += w
        else:
            state = apply_single_site_gate(state, gate.sites[0], gate.matrix, allow_nonunitary=True)
    return state, discarded


def trotter_step(state: VidalMps, schedule: GateSchedule, policy: TruncationPolicy = NO_TRUNCATION) -> tuple[VidalMps, float]:
    """One full application of ``schedule``; returns the state and discarded weight."""
    total = 0.0
    for layer in schedule.layers:
        state, w = apply_layer(state, layer, policy)
        total += w
    return state, total


def _block_layers(schedule: GateSchedule, full_f, steps: int, merge: bool):
    """Layers for ``steps`` consecutive steps, fusing adjacent F half-steps if asked."""
    if not (merge and schedule.order == 2 and steps > 1):
        for _ in range(steps):
            yield from schedule.layers
        return
    half_f, g, _ = schedule.layers
    yield half_f
    for _ in range(steps - 1):
        yield g
        yield full_f
    yield g
    yield half_f


def evolve_real(
    state: VidalMps,
    h: LocalHamiltonian,
    total_time: float,
    delta: float,
    order: int = 2,
    policy: TruncationPolicy = NO_TRUNCATION,
    samplers: Mapping[str, Sampler] | None = None,
    sample_every: int = 1,
    *,
    merge_half_steps: bool = False,
    start_step: int = 0,
    step_callback: Callable[[int, float, VidalMps], None] | None = None,
) -> tuple[VidalMps, EvolutionReport]:
    """Evolve ``state`` by ``exp(-iHT)`` in ``T/delta`` Trotter steps.

    ``samplers`` map a name to ``fn(t, state)``; they run at the start and
    after every ``sample_every`` steps (and after the final step). With
    ``merge_half_steps`` the second-order F half-steps between samples are
    fused, which changes nothing but the gate count. ``start_step`` offsets
    the step index, so a run continued from a checkpoint samples at the same
    times ``step * delta`` as an uninterrupted one.
    """
    steps = step_count(total_time, delta)
    if sample_every < 1:
        raise EvolutionError("sample_every must be >= 1")
    schedule = make_schedule(h, delta, order, TimeAxis.REAL)
    full_f = make_schedule(h, delta, 1, TimeAxis.REAL).layers[0] if merge_half_steps and order == 2 else None
    report = EvolutionReport()
    report.record(start_step * delta, state, samplers)
    done = 0
    while done < steps:
        block = min(sample_every, steps - done)
        if merge_half_steps:
            tic = time.perf_counter()
            last_good = state
            for layer in _block_layers(schedule, full_f, block, True):
                state, w = apply_layer(state, layer, policy)
                report.discarded_weight += w
            _guard(state, last_good, report)
            per_step = (time.perf_counter() - tic) / block
            report.step_seconds.extend([per_step] * block)
            done += block
            report.steps = done
            if step_callback is not None:
                step_callback(start_step + done, (start_step + done) * delta, state)
        else:
            for _ in range(block):
                tic = time.perf_counter()
                last_good = state
                state, w = trotter_step(state, schedule, policy)
                report.discarded_weight += w
                _guard(state, last_good, report)
                report.step_seconds.append(time.perf_counter() - tic)
                done += 1
                report.steps = done
                if step_callback is not None:
                    step_callback(start_step + done, (start_step + done) * delta, state)
        report.record((start_step + done) * delta, state, samplers)
    return state, report


def _guard(state: VidalMps, last_good: VidalMps, report: EvolutionReport):
    if not state.is_finite():
        raise NumericalAbort(f"non-finite tensor entries after step {report.steps + 1}", last_good, report)


def evolve_imaginary(
    state: VidalMps,
    h: LocalHamiltonian,
    delta_tau_schedule: Sequence[float] = DEFAULT_TAU_LADDER,
    order: int = 2,
    policy: TruncationPolicy = NO_TRUNCATION,
    criterion: ConvergenceCriterion = ConvergenceCriterion(),
    samplers: Mapping[str, Sampler] | None = None,
) -> tuple[VidalMps, EvolutionReport]:
    """Project onto the ground state with ``exp(-H tau)``, renormalizing every step.

    Each ``delta_tau`` stage runs until ``criterion`` fires or its step budget
    is spent; ``report.converged`` is False if any stage ran out. The initial
    state must overlap the ground state, which cannot be checked here.
    """
    from .observables import energy

    taus = list(delta_tau_schedule)
    if not taus:
        raise EvolutionError("empty delta_tau schedule")
    if any(not t > 0 for t in taus):
        raise EvolutionError("delta_tau values must be positive")
    if any(b > a for a, b in zip(taus, taus[1:])):
        raise EvolutionError("delta_tau schedule must be non-increasing")
    state = normalize(state)
    report = EvolutionReport()
    tau = 0.0
    report.record(tau, state, samplers)
    report.energies.append(energy(state, h))
    for dtau in taus:
        schedule = make_schedule(h, dtau, order, TimeAxis.IMAGINARY)
        per_probe = criterion.steps_per_probe(dtau)
        stage_steps = 0
        converged = False
        tic = time.perf_counter()
        while stage_steps < criterion.max_steps:
            previous = state
            for _ in range(per_probe):
                state, w = trotter_step(state, schedule, policy)
                state = normalize(state)
                report.discarded_weight += w
                _guard(state, previous, report)
            stage_steps += per_probe
            report.steps += per_probe
            tau += per_probe * dtau
            infidelity = 1.0 - abs(inner_product(previous, state)) ** 2
            report.probe_infidelities.append(infidelity)
            report.energies.append(energy(state, h))
            report.record(tau, state, samplers)
            if infidelity < criterion.overlap_tol:
                converged = True
                break
        report.stages.append(
            {"delta_tau": dtau, "steps": stage_steps, "converged": converged, "seconds": time.perf_counter() - tic}
        )
        logger.info("imaginary stage dtau=%g: %d steps, converged=%s, E=%.12f", dtau, stage_steps, converged, report.energies[-1])
        report.converged = report.converged and converged
    return state, report


def evolve_adiabatic(
    state: VidalMps,
    h_start: LocalHamiltonian,
    h_end: LocalHamiltonian,
    ramp_time: float,
    delta: float,
    order: int = 2,
    policy: TruncationPolicy = NO_TRUNCATION,
    samplers: Mapping[str, Sampler] | None = None,
    sample_every: int = 1,
) -> tuple[VidalMps, EvolutionReport]:
    """Real-time evolution under ``H(s) = (1-s) h_start + s h_end`` with ``s = t/T``.

    ``H`` is held constant within each step at the step midpoint. The caller
    is responsible for ``state`` being the ground state of ``h_start``.
    """
    steps = step_count(ramp_time, delta)
    report = EvolutionReport()
    report.record(0.0, state, samplers)
    same = h_start is h_end
    fixed = make_schedule(h_start, delta, order, TimeAxis.REAL) if same else None
    for k in range(steps):
        tic = time.perf_counter()
        schedule = fixed or make_schedule(interpolate(h_start, h_end, (k + 0.5) / steps), delta, order, TimeAxis.REAL)
        last_good = state
        state, w = trotter_step(state, schedule, policy)
        report.discarded_weight += w
        _guard(state, last_good, report)
        report.step_seconds.append(time.perf_counter() - tic)
        report.steps = k + 1
        if (k + 1) % sample_every == 0 or k + 1 == steps:
            report.record((k + 1) * delta, state, samplers)
    return state, report


def apply_local_operators(state: VidalMps, q: Sequence[tuple]) -> tuple[VidalMps, float]:
    """Apply ``q`` without renormalizing; returns the state and its norm.

    Entries are ``(site, d x d matrix)`` or ``((site, site+1), d^2 x d^2 matrix)``.
    """
    for sites, op in q:
        if isinstance(sites, (tuple, list)):
            if len(sites) == 1:
                state = apply_single_site_gate(state, sites[0], op, allow_nonunitary=True)
                continue
            if len(sites) != 2 or sites[1] != sites[0] + 1:
                raise MpsError(f"two-site operators need adjacent sites, got {sites}")
            state, _ = apply_two_site_gate(state, sites[1], op, TruncationPolicy(renormalize=False))
        else:
            state = apply_single_site_gate(state, int(sites), op, allow_nonunitary=True)
    return state, math.sqrt(max(norm_squared(state), 0.0))


def apply_local_excitation(state: VidalMps, q: Sequence[tuple], *, tol: float = 1e-12) -> VidalMps:
    """``Q|psi>`` normalized, for a product ``Q`` of few-site operators.

    Raises
    ------
    MpsError
        If ``Q`` annihilates the state.
    """
    out, norm = apply_local_operators(state, q)
    if norm <= tol:
        raise MpsError("the excitation annihilates the state (zero norm)")
    return normalize(out)


__all__ = [
    "ConvergenceCriterion",
    "DEFAULT_TAU_LADDER",
    "EvolutionError",
    "EvolutionReport",
    "NumericalAbort",
    "apply_layer",
    "apply_local_excitation",
    "apply_local_operators",
    "evolve_adiabatic",
    "evolve_imaginary",
    "evolve_real",
    "step_count",
    "trotter_step",
]
