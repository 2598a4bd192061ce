"""Physical outputs computed from MPS states and evolution reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evolution import EvolutionReport, apply_local_operators, evolve_real
from .hamiltonian import LocalHamiltonian
from .mps import (
    NO_TRUNCATION,
    MpsError,
    TruncationPolicy,
    VidalMps,
    expect_bond,
    expect_local,
    inner_product,
    normalize,
)


class ObservableError(ValueError):
    pass


def energy(state: VidalMps, h: LocalHamiltonian) -> float:
    """``<H>`` as the sum of local and bond expectation values (normalized state)."""
    if (state.n, state.d) != (h.n, h.d):
        raise ObservableError("state and Hamiltonian shapes differ")
    total = 0.0
    for s, k1 in enumerate(h.k1):
        total += expect_local(state, s, k1).real
    for bond in range(1, h.n):
        total += expect_bond(state, bond, h.k2[bond - 1]).real
    return total


def entanglement_entropy(state: VidalMps, bond: int) -> float:
    p = state.lambdas[bond] ** 2
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


@dataclass
class CorrelatorSeries:
    """``values[ix, it] = <O^dag_{x,t} O_{0,0}>`` for offsets ``positions[ix]`` from ``source``."""

    positions: np.ndarray
    times: np.ndarray
    values: np.ndarray
    ground_energy: float
    source: int = 0


def dynamic_correlator(
    gs: VidalMps,
    h: LocalHamiltonian,
    op,
    x_list,
    t_list,
    delta: float,
    order: int = 2,
    policy: TruncationPolicy = NO_TRUNCATION,
    source: int | None = None,
) -> CorrelatorSeries:
    """Time-dependent correlator of a single-site operator in the state ``gs``.

    Evaluates ``exp(i E t) <gs| O^dag_{source+x} exp(-iHt) O_source |gs>``
    with ``E = <gs|H|gs>``, so ``O = 1`` gives exactly 1 whenever ``gs`` is an
    eigenstate. Norms of ``O|gs>`` are carried explicitly, not normalized
    away. ``source`` defaults to the chain centre ``n // 2``.

    Raises
    ------
    ObservableError
        If ``O`` annihilates ``gs`` at the source site, or a time in
        ``t_list`` is not a whole number of steps.
    """
    n = gs.n
    source = n // 2 if source is None else source
    op = np.asarray(op, dtype=np.complex128)
    positions = np.asarray(list(x_list), dtype=int)
    times = np.asarray(list(t_list), dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ObservableError("times must be non-negative and sorted")
    sites = source + positions
    if np.any(sites < 0) or np.any(sites >= n):
        raise ObservableError(f"offsets {positions.tolist()} leave the chain from source {source}")

    e_gr = energy(gs, h)
    phi, phi_norm = apply_local_operators(gs, [(source, op)])
    if phi_norm <= 1e-12:
        raise ObservableError("the operator annihilates the ground state at the source site")
    phi = normalize(phi)

    bras = []
    for site in sites:
        bra, bra_norm = apply_local_operators(gs, [(int(site), op)])
        bras.append((normalize(bra), bra_norm) if bra_norm > 1e-12 else (None, 0.0))

    values = np.zeros((positions.size, times.size), dtype=np.complex128)
    t_now = 0.0
    for it, t in enumerate(times):
        if t > t_now:
            try:
                phi, _ = evolve_real(phi, h, t - t_now, delta, order, policy)
            except Exception as exc:
                raise ObservableError(f"cannot evolve to t={t}: {exc}") from exc
            t_now = t
        phase = np.exp(1j * e_gr * t) * phi_norm
        for ix, (bra, bra_norm) in enumerate(bras):
            if bra is not None:
                values[ix, it] = phase * bra_norm * inner_product(bra, phi)
    return CorrelatorSeries(positions, times, values, e_gr, source)


@dataclass
class StructureFactor:
    """``S(k, w)`` on the grid ``k x omega`` (both sorted ascending)."""

    k: np.ndarray
    omega: np.ndarray
    values: np.ndarray
    window: np.ndarray
    x0: float
    t0: float
    dx: float
    dt: float

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def abs(self) -> np.ndarray:
        return np.abs(self.values)


def _uniform_step(grid: np.ndarray, name: str) -> float:
    if grid.size < 1:
        raise ObservableError(f"empty {name} grid")
    if grid.size == 1:
        return 1.0
    steps = np.diff(grid)
    step = steps[0]
    if step <= 0 or np.max(np.abs(steps - step)) > 1e-9 * abs(step):
        raise ObservableError(f"{name} grid is not uniform")
    return float(step)


def time_window(n_times: int, kind: str | None) -> np.ndarray:
    """Taper over the time axis: ``None`` or ``"hann"`` (half Hann, 1 at t=0)."""
    if kind in (None, "none"):
        return np.ones(n_times)
    if kind == "hann":
        return 0.5 * (1.0 + np.cos(np.pi * np.arange(n_times) / n_times))
    raise ObservableError(f"unknown window {kind!r}")


def structure_factor(series: CorrelatorSeries, window: str | None = None) -> StructureFactor:
    """``S(k, w) = sum_{x,t} w(t) C(x, t) exp(-i k x + i w t)`` on the DFT grid."""
    x = np.asarray(series.positions, dtype=float)
    t = np.asarray(series.times, dtype=float)
    dx = _uniform_step(x, "position")
    dt = _uniform_step(t, "time")
    taper = time_window(t.size, window)
    grid = np.asarray(series.values) * taper[None, :]
    k = 2 * np.pi * np.fft.fftfreq(x.size, d=dx)
    omega = 2 * np.pi * np.fft.fftfreq(t.size, d=dt)
    vals = np.fft.fft(grid, axis=0) * np.exp(-1j * k * x[0])[:, None]
    vals = np.fft.ifft(vals, axis=1) * t.size * np.exp(1j * omega * t[0])[None, :]
    ko = np.argsort(k)
    wo = np.argsort(omega)
    return StructureFactor(k[ko], omega[wo], vals[np.ix_(ko, wo)], taper, x[0], t[0], dx, dt)


def inverse_structure_factor(sf: StructureFactor) -> np.ndarray:
    """Recover the tapered correlator grid from :func:`structure_factor` output."""
    nx, nt = sf.values.shape
    k = 2 * np.pi * np.fft.fftfreq(nx, d=sf.dx)
    omega = 2 * np.pi * np.fft.fftfreq(nt, d=sf.dt)
    vals = np.empty_like(sf.values)
    vals[np.ix_(np.argsort(k), np.argsort(omega))] = sf.values
    vals = np.fft.fft(vals * np.exp(-1j * omega * sf.t0)[None, :], axis=1) / nt
    return np.fft.ifft(vals * np.exp(1j * k * sf.x0)[:, None], axis=0)


@dataclass
class SpectrumTrajectory:
    """Squared Schmidt coefficients ``p_alpha`` at one bond, padded with zeros."""

    bond: int
    times: np.ndarray
    spectra: np.ndarray


def spectrum_key(bond: int) -> str:
    return f"spectrum[{bond}]"


def spectrum_sampler(bond: int):
    """Sampler for :func:`~tebd.evolution.evolve_real` recording ``lambda_alpha^2`` at ``bond``."""

    def sample(t: float, state: VidalMps) -> np.ndarray:
        if not 1 <= bond <= state.n - 1:
            raise MpsError(f"bond {bond} out of range 1..{state.n - 1}")
        return state.lambdas[bond] ** 2

    return sample


def spectrum_trajectory(report: EvolutionReport, bond: int) -> SpectrumTrajectory:
    key = spectrum_key(bond)
    if key not in report.samples:
        raise ObservableError(f"no spectrum recorded for bond {bond}; attach spectrum_sampler({bond})")
    rows = report.samples[key]
    width = max(len(r) for r in rows)
    spectra = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        spectra[i, : len(r)] = r
    return SpectrumTrajectory(bond, np.asarray(report.times[: len(rows)]), spectra)
