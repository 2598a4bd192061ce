"""Time-evolving block decimation for one-dimensional spin chains."""

from .hamiltonian import (
    LocalHamiltonian,
    TimeAxis,
    even_odd_split,
    heisenberg_ferromagnet,
    interpolate,
    make_schedule,
    transverse_ising,
)
from .mps import (
    TruncationPolicy,
    VidalMps,
    amplitude,
    apply_single_site_gate,
    apply_two_site_gate,
    basis_state,
    chi_profile,
    expect_bond,
    expect_local,
    from_product_state,
    inner_product,
    normalize,
    schmidt_spectrum,
)
from .evolution import (
    ConvergenceCriterion,
    EvolutionReport,
    apply_local_excitation,
    evolve_adiabatic,
    evolve_imaginary,
    evolve_real,
)
from .observables import dynamic_correlator, energy, spectrum_trajectory, structure_factor

__version__ = "0.1.0"
