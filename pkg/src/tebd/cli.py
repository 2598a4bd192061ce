"""Command-line driver.

Usage::

    tebd ground     --config run.yaml --out DIR
    tebd quench     --config run.yaml --out DIR [--oracle two-magnon] [--resume CKPT]
    tebd correlator --config run.yaml --out DIR [--oracle dense]
    tebd scaling    --config run.yaml --out DIR

Configuration files are YAML. Every key is validated before any computation
starts and unknown keys are rejected. The flags ``--config``, ``--out``,
``--oracle``, ``--resume`` and ``--threads`` may also be given through the
environment as ``TEBD_CONFIG``, ``TEBD_OUT``, ``TEBD_ORACLE``, ``TEBD_RESUME``
and ``TEBD_THREADS``; an explicit flag wins over the environment.

Each run writes its CSV files (header row, numbers with 17 significant
digits) and a ``manifest.json`` with the resolved configuration, timestamps,
per-stage wall-clock and SHA-256 checksums of every output file. The
manifest is written even when the run fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from contextlib import contextmanager, nullcontext
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .evolution import ConvergenceCriterion, EvolutionError, NumericalAbort, apply_local_excitation, evolve_imaginary, evolve_real
from .hamiltonian import (
    IDENTITY2,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    HamiltonianError,
    LocalHamiltonian,
    from_spec,
    parse_matrix,
)
from .mps import (
    MpsError,
    TruncationPolicy,
    VidalMps,
    amplitude,
    basis_state,
    chi_profile,
    expect_local,
    from_product_state,
    load_snapshot,
    norm_squared,
    random_mps,
    save_snapshot,
)
from .observables import (
    CorrelatorSeries,
    ObservableError,
    dynamic_correlator,
    energy,
    structure_factor,
)
from .oracle import (
    DenseEvolver,
    DenseState,
    OracleError,
    TwoMagnonPropagator,
    TwoMagnonState,
    dense_from_mps,
    dense_ground_state,
    dense_hamiltonian,
    fidelity_error,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_NUMERICAL = 4
EXIT_RUNTIME = 5

ENV_PREFIX = "TEBD_"
ORACLES = ("none", "dense", "two-magnon")
COMMANDS = ("ground", "quench", "correlator", "scaling")

NAMED_OPERATORS = {
    "identity": IDENTITY2,
    "sigma_x": SIGMA_X,
    "sigma_y": SIGMA_Y,
    "sigma_z": SIGMA_Z,
    "sigma_plus": SIGMA_PLUS,
    "sigma_minus": SIGMA_MINUS,
}


class ConfigError(ValueError):
    pass


class RunFailed(RuntimeError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- configuration -------------------------------------------------------------

DEFAULTS = {
    "ground": {"delta_tau": [0.1, 0.01, 0.001], "order": 2, "overlap_tol": 1e-10, "probe_steps": 10, "probe_interval": None, "max_steps": 200_000},
    "evolution": {"T": None, "delta": None, "order": 2, "merge_half_steps": False},
    "truncation": {"chi_max": None, "weight_tol": 0.0},
    "sampling": {"every": 1, "bonds": [], "observables": []},
    "checkpoint": {"every": 0},
    "correlator": {"operator": "sigma_minus", "x": None, "t": None, "source": None, "window": None, "delta": None, "order": 2, "input": None},
    "scaling": {"n": None, "chi": None, "delta": [0.01], "steps": 10, "repeats": 1},
}
TOP_KEYS = {"n", "seed", "oracle", "hamiltonian", "initial"} | set(DEFAULTS)
INITIAL_KINDS = ("config", "theta", "vector", "random", "snapshot")
OBSERVABLES = ("energy", "sz_total", "norm")


def _fail(msg: str):
    raise ConfigError(msg)


def _section(cfg: dict, name: str) -> dict:
    raw = cfg.get(name) or {}
    if not isinstance(raw, dict):
        _fail(f"'{name}' must be a mapping")
    unknown = set(raw) - set(DEFAULTS[name])
    if unknown:
        _fail(f"unknown keys in '{name}': {sorted(unknown)}")
    out = copy.deepcopy(DEFAULTS[name])
    out.update(raw)
    return out


def _int(value, name: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        _fail(f"'{name}' must be an integer, got {value!r}")
    if lo is not None and value < lo:
        _fail(f"'{name}' must be >= {lo}, got {value}")
    return int(value)


def _float(value, name: str, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        _fail(f"'{name}' must be a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        _fail(f"'{name}' must be finite")
    if positive and not value > 0:
        _fail(f"'{name}' must be positive, got {value}")
    if nonneg and value < 0:
        _fail(f"'{name}' must be non-negative, got {value}")
    return value


def _order(value, name: str) -> int:
    value = _int(value, name)
    if value not in (1, 2):
        _fail(f"'{name}' must be 1 or 2, got {value}")
    return value


def _grid(spec, name: str, integer: bool) -> list:
    """A list, or ``{start, stop, step}`` with ``stop`` inclusive."""
    if isinstance(spec, list):
        if not spec:
            _fail(f"'{name}' is empty")
        return [_int(v, name) if integer else _float(v, name) for v in spec]
    if not isinstance(spec, dict):
        _fail(f"'{name}' must be a list or a {{start, stop, step}} mapping")
    unknown = set(spec) - {"start", "stop", "step"}
    if unknown or "stop" not in spec:
        _fail(f"'{name}' needs 'stop' and accepts only start/stop/step")
    if integer:
        start, stop, step = (_int(spec.get(k, d), f"{name}.{k}") for k, d in (("start", 0), ("stop", 0), ("step", 1)))
        if step < 1 or stop < start:
            _fail(f"'{name}' is an empty range")
        return list(range(start, stop + 1, step))
    start = _float(spec.get("start", 0.0), f"{name}.start", nonneg=True)
    stop = _float(spec["stop"], f"{name}.stop", nonneg=True)
    step = _float(spec.get("step", 1.0), f"{name}.step", positive=True)
    count = int(round((stop - start) / step))
    if count < 0 or abs(start + count * step - stop) > 1e-9 * max(1.0, stop):
        _fail(f"'{name}': (stop - start) must be a whole number of steps")
    return [start + k * step for k in range(count + 1)]


def _operator(spec, name: str) -> np.ndarray:
    if isinstance(spec, str):
        if spec not in NAMED_OPERATORS:
            _fail(f"'{name}': unknown operator {spec!r}; known: {sorted(NAMED_OPERATORS)}")
        return NAMED_OPERATORS[spec]
    try:
        op = parse_matrix(spec)
    except (HamiltonianError, ValueError, TypeError) as exc:
        _fail(f"'{name}': {exc}")
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        _fail(f"'{name}' must be a square matrix")
    return op


def validate_config(raw: dict, command: str) -> dict:
    """Check ``raw`` for ``command`` and return it with defaults filled in."""
    if not isinstance(raw, dict):
        _fail("configuration must be a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        _fail(f"unknown top-level keys: {sorted(unknown)}")
    cfg: dict = {"seed": _int(raw.get("seed", 0), "seed", 0)}
    oracle = raw.get("oracle", "none")
    if oracle not in ORACLES:
        _fail(f"'oracle' must be one of {ORACLES}, got {oracle!r}")
    cfg["oracle"] = oracle
    for name in DEFAULTS:
        cfg[name] = _section(raw, name)
    cfg["ground_requested"] = "ground" in raw

    if command == "scaling":
        sc = cfg["scaling"]
        for key in ("n", "chi"):
            if sc[key] is None:
                _fail(f"'scaling.{key}' is required")
            sc[key] = [_int(v, f"scaling.{key}", 2 if key == "n" else 1) for v in _as_list(sc[key])]
        sc["delta"] = [_float(v, "scaling.delta", positive=True) for v in _as_list(sc["delta"])]
        sc["steps"] = _int(sc["steps"], "scaling.steps", 1)
        sc["repeats"] = _int(sc["repeats"], "scaling.repeats", 1)
        cfg["hamiltonian"] = raw.get("hamiltonian", {"model": "transverse_ising", "g": 1.0, "J": 1.0})
        for n in sc["n"]:
            _hamiltonian(cfg["hamiltonian"], n)
        _truncation(cfg)
        return cfg

    correlator_input = command == "correlator" and cfg["correlator"]["input"] is not None
    if correlator_input:
        cfg["n"] = raw.get("n")
    else:
        cfg["n"] = _int(raw.get("n"), "n", 2) if "n" in raw else _fail("'n' is required")
        if "hamiltonian" not in raw:
            _fail("'hamiltonian' is required")
        cfg["hamiltonian"] = raw["hamiltonian"]
        h = _hamiltonian(cfg["hamiltonian"], cfg["n"])
        cfg["initial"] = _initial(raw.get("initial"), cfg["n"], h.d)
    _truncation(cfg)

    g = cfg["ground"]
    taus = g["delta_tau"]
    if not isinstance(taus, list) or not taus:
        _fail("'ground.delta_tau' must be a non-empty list")
    g["delta_tau"] = [_float(t, "ground.delta_tau", positive=True) for t in taus]
    if any(b > a for a, b in zip(g["delta_tau"], g["delta_tau"][1:])):
        _fail("'ground.delta_tau' must be non-increasing")
    g["order"] = _order(g["order"], "ground.order")
    g["overlap_tol"] = _float(g["overlap_tol"], "ground.overlap_tol", positive=True)
    g["probe_steps"] = _int(g["probe_steps"], "ground.probe_steps", 1)
    if g["probe_interval"] is not None:
        g["probe_interval"] = _float(g["probe_interval"], "ground.probe_interval", positive=True)
    g["max_steps"] = _int(g["max_steps"], "ground.max_steps", 1)

    if command == "quench":
        ev = cfg["evolution"]
        for key in ("T", "delta"):
            if ev[key] is None:
                _fail(f"'evolution.{key}' is required")
        ev["T"] = _float(ev["T"], "evolution.T", nonneg=True)
        ev["delta"] = _float(ev["delta"], "evolution.delta", positive=True)
        ev["order"] = _order(ev["order"], "evolution.order")
        if not isinstance(ev["merge_half_steps"], bool):
            _fail("'evolution.merge_half_steps' must be true or false")
        ratio = ev["T"] / ev["delta"]
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            _fail("'evolution.T' must be a whole number of 'evolution.delta' steps")
        sm = cfg["sampling"]
        sm["every"] = _int(sm["every"], "sampling.every", 1)
        sm["bonds"] = [_int(b, "sampling.bonds", 1) for b in _as_list(sm["bonds"])]
        if any(b > cfg["n"] - 1 for b in sm["bonds"]):
            _fail(f"'sampling.bonds' must lie in 1..{cfg['n'] - 1}")
        sm["observables"] = list(_as_list(sm["observables"]))
        bad = set(sm["observables"]) - set(OBSERVABLES)
        if bad:
            _fail(f"unknown observables {sorted(bad)}; known: {OBSERVABLES}")
        every = _int(cfg["checkpoint"]["every"], "checkpoint.every", 0)
        if every and every % sm["every"]:
            _fail("'checkpoint.every' must be a multiple of 'sampling.every'")
        cfg["checkpoint"]["every"] = every

    if command == "correlator":
        co = cfg["correlator"]
        if co["window"] not in (None, "none", "hann"):
            _fail("'correlator.window' must be none or hann")
        if correlator_input:
            co["input"] = str(co["input"])
        else:
            if co["x"] is None or co["t"] is None:
                _fail("'correlator.x' and 'correlator.t' are required")
            co["x"] = _grid(co["x"], "correlator.x", integer=True)
            co["t"] = _grid(co["t"], "correlator.t", integer=False)
            if any(b < a for a, b in zip(co["t"], co["t"][1:])) or co["t"][0] < 0:
                _fail("'correlator.t' must be non-negative and increasing")
            if co["delta"] is None:
                _fail("'correlator.delta' is required")
            co["delta"] = _float(co["delta"], "correlator.delta", positive=True)
            co["order"] = _order(co["order"], "correlator.order")
            _operator(co["operator"], "correlator.operator")
            n = cfg["n"]
            source = n // 2 if co["source"] is None else _int(co["source"], "correlator.source", 0)
            if source >= n or any(not 0 <= source + x < n for x in co["x"]):
                _fail("'correlator.x' offsets leave the chain")
            co["source"] = source
            for t in co["t"]:
                r = t / co["delta"]
                if abs(r - round(r)) > 1e-9 * max(1.0, r):
                    _fail(f"correlator time {t} is not a whole number of steps of {co['delta']}")
    return cfg


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _hamiltonian(spec, n: int) -> LocalHamiltonian:
    if not isinstance(spec, dict):
        _fail("'hamiltonian' must be a mapping")
    try:
        return from_spec(spec, n)
    except (HamiltonianError, KeyError, TypeError, ValueError, IndexError) as exc:
        _fail(f"'hamiltonian': {exc}")


def _truncation(cfg: dict):
    tr = cfg["truncation"]
    if tr["chi_max"] is not None:
        tr["chi_max"] = _int(tr["chi_max"], "truncation.chi_max", 1)
    tr["weight_tol"] = _float(tr["weight_tol"], "truncation.weight_tol", nonneg=True)
    if tr["weight_tol"] >= 1:
        _fail("'truncation.weight_tol' must be < 1")


def _initial(raw, n: int, d: int) -> dict:
    raw = raw or {"config": [0] * n}
    if not isinstance(raw, dict):
        _fail("'initial' must be a mapping")
    unknown = set(raw) - set(INITIAL_KINDS) - {"excitation"}
    if unknown:
        _fail(f"unknown keys in 'initial': {sorted(unknown)}")
    kinds = [k for k in INITIAL_KINDS if k in raw]
    if len(kinds) != 1:
        _fail(f"'initial' needs exactly one of {INITIAL_KINDS}")
    kind = kinds[0]
    out = {"kind": kind, "excitation": []}
    value = raw[kind]
    if kind == "config":
        config = [int(c) for c in value] if isinstance(value, str) else [_int(c, "initial.config", 0) for c in _as_list(value)]
        if len(config) != n or any(c >= d for c in config):
            _fail(f"'initial.config' must list {n} digits below {d}")
        out["config"] = config
    elif kind == "theta":
        if d != 2:
            _fail("'initial.theta' needs d = 2")
        out["theta"] = _float(value, "initial.theta")
    elif kind == "vector":
        vec = parse_matrix(value) if not isinstance(value, list) else np.asarray(value, dtype=np.complex128)
        if vec.shape != (d,) or np.linalg.norm(vec) == 0:
            _fail(f"'initial.vector' must be a non-zero vector of length {d}")
        out["vector"] = value
    elif kind == "random":
        if value is not True:
            _fail("'initial.random' must be true")
        out["random"] = True
    else:
        out["snapshot"] = str(value)
    for i, item in enumerate(_as_list(raw.get("excitation", []))):
        if not isinstance(item, dict) or set(item) != {"site", "op"}:
            _fail(f"'initial.excitation[{i}]' must be {{site, op}}")
        site = _int(item["site"], "initial.excitation.site", 0)
        if site >= n:
            _fail(f"'initial.excitation[{i}].site' out of range")
        op = _operator(item["op"], f"initial.excitation[{i}].op")
        if op.shape != (d, d):
            _fail(f"'initial.excitation[{i}].op' must be {d}x{d}")
        out["excitation"].append({"site": site, "op": item["op"]})
    return out


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return data if data is not None else {}


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


# -- output helpers ------------------------------------------------------------


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list[str], rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    _atomic_write(path, buf.getvalue().encode())


def write_json(path: Path, payload):
    _atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n").encode())


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def save_snapshot_atomic(state: VidalMps, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        save_snapshot(state, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


class Run:
    """Bookkeeping for one invocation: output directory, stage timers, manifest."""

    def __init__(self, command: str, out: Path, cfg: dict | None):
        self.command = command
        self.out = out
        self.cfg = cfg
        self.started = _now()
        self.stages: dict[str, float] = {}
        self.files: list[Path] = []
        self.notes: dict = {}

    @contextmanager
    def stage(self, name: str):
        tic = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - tic

    def path(self, name: str) -> Path:
        p = self.out / name
        if p not in self.files:
            self.files.append(p)
        return p

    def write_manifest(self, status: str, code: int, message: str = ""):
        inventory = {}
        for p in self.files:
            if p.exists():
                inventory[str(p.relative_to(self.out))] = {"sha256": _sha256(p), "bytes": p.stat().st_size}
        manifest = {
            "artifact": "tebd",
            "version": __version__,
            "command": self.command,
            "config": self.cfg,
            "config_sha256": config_digest(self.cfg) if self.cfg is not None else None,
            "started": self.started,
            "finished": _now(),
            "status": status,
            "exit_code": code,
            "message": message,
            "stages_seconds": self.stages,
            "files": inventory,
            "notes": self.notes,
        }
        write_json(self.out / "manifest.json", manifest)


# -- state preparation -----------------------------------------------------------


def _policy(cfg: dict) -> TruncationPolicy:
    tr = cfg["truncation"]
    return TruncationPolicy(chi_max=tr["chi_max"], weight_tol=tr["weight_tol"])


def initial_state(cfg: dict, d: int) -> VidalMps:
    init, n = cfg["initial"], cfg["n"]
    kind = init["kind"]
    if kind == "config":
        state = basis_state(init["config"], d)
    elif kind == "theta":
        th = init["theta"]
        state = from_product_state([np.array([np.cos(th), np.sin(th)])] * n)
    elif kind == "vector":
        value = init["vector"]
        vec = np.asarray(value, dtype=np.complex128) if isinstance(value, list) else parse_matrix(value)
        state = from_product_state([vec / np.linalg.norm(vec)] * n)
    elif kind == "random":
        rng = np.random.default_rng(cfg["seed"])
        vecs = []
        for _ in range(n):
            v = rng.normal(size=d) + 1j * rng.normal(size=d)
            vecs.append(v / np.linalg.norm(v))
        state = from_product_state(vecs)
    else:
        try:
            state = load_snapshot(init["snapshot"])
        except (OSError, MpsError) as exc:
            raise ConfigError(f"cannot load snapshot {init['snapshot']}: {exc}") from exc
        if (state.n, state.d) != (n, d):
            raise ConfigError(f"snapshot has n={state.n}, d={state.d}; config wants n={n}, d={d}")
    return state


def _relax(run: Run, cfg: dict, h: LocalHamiltonian, state: VidalMps):
    g = cfg["ground"]
    criterion = ConvergenceCriterion(g["overlap_tol"], g["probe_interval"], g["probe_steps"], g["max_steps"])
    with run.stage("imaginary_time"):
        return evolve_imaginary(state, h, g["delta_tau"], g["order"], _policy(cfg), criterion)


def _excite(cfg: dict, state: VidalMps) -> VidalMps:
    q = [(e["site"], _operator(e["op"], "initial.excitation.op")) for e in cfg["initial"]["excitation"]]
    if not q:
        return state
    try:
        return apply_local_excitation(state, q)
    except MpsError as exc:
        raise RunFailed(f"excitation rejected: {exc}", EXIT_RUNTIME) from exc


def prepare_state(run: Run, cfg: dict, h: LocalHamiltonian) -> VidalMps:
    """Initial state, relaxed in imaginary time if a ``ground`` section is present, then excited."""
    state = initial_state(cfg, h.d)
    if cfg["ground_requested"]:
        state, report = _relax(run, cfg, h, state)
        run.notes["ground_energy"] = report.energies[-1]
        if not report.converged:
            raise RunFailed("imaginary-time relaxation did not converge", EXIT_NOT_CONVERGED)
    return _excite(cfg, state)


# -- commands ----------------------------------------------------------------------


def cmd_ground(run: Run, cfg: dict, oracle: str, resume: str | None) -> int:
    if resume:
        raise ConfigError("--resume applies to quench runs only")
    h = from_spec(cfg["hamiltonian"], cfg["n"])
    state = initial_state(cfg, h.d)
    try:
        state, report = _relax(run, cfg, h, state)
    except NumericalAbort as exc:
        save_snapshot_atomic(exc.last_good, run.path("last_good.mps"))
        _write_energy_trace(run, exc.report)
        raise RunFailed(str(exc), EXIT_NUMERICAL) from exc
    save_snapshot_atomic(state, run.path("ground_state.mps"))
    _write_energy_trace(run, report)
    summary = {
        "converged": report.converged,
        "energy": report.energies[-1],
        "steps": report.steps,
        "max_chi": report.max_chi,
        "discarded_weight": report.discarded_weight,
        "stages": [{k: v for k, v in s.items() if k != "seconds"} for s in report.stages],
    }
    if oracle == "dense":
        with run.stage("oracle"):
            e0, _ = dense_ground_state(h)
        summary["dense_energy"] = e0
        summary["energy_error"] = report.energies[-1] - e0
    write_json(run.path("convergence.json"), summary)
    logger.info("ground: E=%.12f converged=%s", report.energies[-1], report.converged)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _write_energy_trace(run: Run, report):
    rows = [
        (tau, e, max(prof), w)
        for tau, e, prof, w in zip(report.times, report.energies, report.chi_profiles, report.cumulative_discarded_weight)
    ]
    write_csv(run.path("energy.csv"), ["tau", "energy", "max_chi", "discarded_weight_cum"], rows)


def _two_magnon_reference(cfg: dict, h: LocalHamiltonian, state: VidalMps):
    spec = cfg["hamiltonian"]
    if spec.get("model") != "ferromagnet" or h.d != 2:
        raise ConfigError("the two-magnon oracle needs the ferromagnet model")
    prop = TwoMagnonPropagator(cfg["n"], float(spec.get("B", 1.0)), float(spec.get("J", 1.0)))
    amps = np.array([amplitude(state, prop.basis.config(k)) for k in range(len(prop.basis))])
    weight = float(np.vdot(amps, amps).real)
    if abs(weight - norm_squared(state)) > 1e-10:
        raise ConfigError("the initial state is not inside the two-flip sector; use --oracle dense")
    start = TwoMagnonState(cfg["n"], amps)
    return lambda t: prop.evolve(start, t)


def _dense_reference(h: LocalHamiltonian, state: VidalMps):
    try:
        evolver = DenseEvolver(h)
        start = dense_from_mps(state)
    except OracleError as exc:
        raise ConfigError(f"dense oracle unavailable: {exc}") from exc
    return lambda t: evolver.evolve(start, t)


def _quench_samplers(cfg: dict, h: LocalHamiltonian, reference):
    samplers = {"max_chi": lambda t, s: chi_profile(s)[1]}
    for b in cfg["sampling"]["bonds"]:
        samplers[f"p{b}"] = lambda t, s, b=b: (s.lambdas[b] ** 2).tolist()
    obs = cfg["sampling"]["observables"]
    if "energy" in obs:
        samplers["energy"] = lambda t, s: energy(s, h)
    if "sz_total" in obs:
        samplers["sz_total"] = lambda t, s: sum(expect_local(s, k, SIGMA_Z).real for k in range(s.n))
    if "norm" in obs:
        samplers["norm"] = lambda t, s: norm_squared(s)
    if reference is not None:
        samplers["epsilon"] = lambda t, s: fidelity_error(reference(t), s)
    return samplers


def cmd_quench(run: Run, cfg: dict, oracle: str, resume: str | None) -> int:
    h = from_spec(cfg["hamiltonian"], cfg["n"])
    ev, sm = cfg["evolution"], cfg["sampling"]
    delta = ev["delta"]
    total_steps = int(round(ev["T"] / delta))
    digest = config_digest(_resume_view(cfg, oracle))

    if resume:
        state, step, cum_base, rows = _load_checkpoint(Path(resume), digest)
        run.notes["resumed_from_step"] = step
    else:
        state = prepare_state(run, cfg, h)
        step, cum_base, rows = 0, 0.0, None

    if not resume:
        save_snapshot_atomic(state, run.path("initial_state.mps"))
    reference = None
    if oracle != "none":
        origin = _load_origin(Path(resume)) if resume else state
        with run.stage("oracle"):
            if oracle == "two-magnon":
                reference = _two_magnon_reference(cfg, h, origin)
            else:
                reference = _dense_reference(h, origin)

    samplers = _quench_samplers(cfg, h, reference)
    if rows is None:
        rows = []
    every = cfg["checkpoint"]["every"] or max(total_steps, 1)
    policy = _policy(cfg)
    status = EXIT_OK
    try:
        while True:
            chunk = min(every, total_steps - step)
            with run.stage("real_time"):
                state, report = evolve_real(
                    state, h, chunk * delta, delta, ev["order"], policy, samplers, sm["every"],
                    merge_half_steps=ev["merge_half_steps"], start_step=step,
                )
            first = 1 if rows else 0
            for i in range(first, len(report.times)):
                rows.append(_sample_row(report, i, cum_base, samplers))
            cum_base += report.discarded_weight
            step += chunk
            if cfg["checkpoint"]["every"] and step < total_steps:
                _save_checkpoint(run, state, step, cum_base, rows, digest)
            if step >= total_steps:
                break
    except NumericalAbort as exc:
        save_snapshot_atomic(exc.last_good, run.path("last_good.mps"))
        status = EXIT_NUMERICAL
        run.notes["abort"] = str(exc)
    _write_quench_outputs(run, cfg, rows, reference is not None)
    if status == EXIT_OK:
        save_snapshot_atomic(state, run.path("final_state.mps"))
    else:
        raise RunFailed(run.notes["abort"], status)
    return EXIT_OK


def _resume_view(cfg: dict, oracle: str) -> dict:
    # everything that shapes the trajectory; checkpoint cadence is free to change
    view = {k: v for k, v in cfg.items() if k != "checkpoint"}
    view["oracle"] = oracle
    return view


def _sample_row(report, i: int, cum_base: float, samplers) -> dict:
    row = {"t": report.times[i], "cum": cum_base + report.cumulative_discarded_weight[i]}
    for name in samplers:
        v = report.samples[name][i]
        row[name] = [float(x) for x in v] if isinstance(v, list) else (int(v) if name == "max_chi" else float(v))
    return row


def _write_quench_outputs(run: Run, cfg: dict, rows: list[dict], with_oracle: bool):
    write_csv(run.path("chi.csv"), ["t", "max_chi", "discarded_weight_cum"], [(r["t"], r["max_chi"], r["cum"]) for r in rows])
    for b in cfg["sampling"]["bonds"]:
        spectrum = [(r["t"], a + 1, p) for r in rows for a, p in enumerate(r[f"p{b}"])]
        write_csv(run.path(f"spectrum_bond{b}.csv"), ["t", "alpha", "p_alpha"], spectrum)
    obs = [o for o in OBSERVABLES if o in cfg["sampling"]["observables"]]
    if obs:
        write_csv(run.path("observables.csv"), ["t", *obs], [(r["t"], *(r[o] for o in obs)) for r in rows])
    if with_oracle:
        write_csv(run.path("fidelity.csv"), ["t", "epsilon"], [(r["t"], r["epsilon"]) for r in rows])


def _save_checkpoint(run: Run, state: VidalMps, step: int, cum: float, rows, digest: str):
    folder = run.out / "checkpoints" / f"step_{step:08d}"
    save_snapshot_atomic(state, folder / "state.mps")
    origin = run.out / "initial_state.mps"
    write_json(
        folder / "checkpoint.json",
        {"step": step, "discarded_weight_cum": cum, "config_sha256": digest, "rows": rows, "origin": str(origin.resolve())},
    )
    logger.info("checkpoint at step %d", step)


def _load_checkpoint(folder: Path, digest: str):
    meta_path = folder / "checkpoint.json" if folder.is_dir() else folder
    folder = meta_path.parent
    try:
        meta = json.loads(meta_path.read_text())
        state = load_snapshot(folder / "state.mps")
    except (OSError, ValueError, MpsError) as exc:
        raise ConfigError(f"cannot read checkpoint {folder}: {exc}") from exc
    if meta.get("config_sha256") != digest:
        raise ConfigError("checkpoint was written for a different configuration")
    return state, int(meta["step"]), float(meta["discarded_weight_cum"]), meta["rows"]


def _load_origin(folder: Path) -> VidalMps:
    meta_path = folder / "checkpoint.json" if folder.is_dir() else folder
    origin = json.loads(meta_path.read_text())["origin"]
    try:
        return load_snapshot(origin)
    except (OSError, MpsError) as exc:
        raise ConfigError(f"oracle needs the initial state {origin}: {exc}") from exc


def read_correlator_csv(path) -> CorrelatorSeries:
    """Load a grid with columns ``x, t, re, im`` (any row order, no holes)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["x", "t", "re", "im"]:
                raise ConfigError(f"{path}: header must be x,t,re,im")
            data = [(float(r["x"]), float(r["t"]), float(r["re"]), float(r["im"])) for r in reader]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed row: {exc}") from exc
    xs = np.unique([r[0] for r in data])
    ts = np.unique([r[1] for r in data])
    values = np.full((xs.size, ts.size), np.nan, dtype=np.complex128)
    for x, t, re, im in data:
        values[np.searchsorted(xs, x), np.searchsorted(ts, t)] = re + 1j * im
    if np.isnan(values).any() or len(data) != xs.size * ts.size:
        raise ConfigError(f"{path}: grid has holes or duplicates")
    return CorrelatorSeries(xs, ts, values, 0.0)


def cmd_correlator(run: Run, cfg: dict, oracle: str, resume: str | None) -> int:
    if resume:
        raise ConfigError("--resume applies to quench runs only")
    co = cfg["correlator"]
    if co["input"] is not None:
        series = read_correlator_csv(co["input"])
    else:
        h = from_spec(cfg["hamiltonian"], cfg["n"])
        gs = prepare_state(run, cfg, h)
        op = _operator(co["operator"], "correlator.operator")
        try:
            with run.stage("correlator"):
                series = dynamic_correlator(gs, h, op, co["x"], co["t"], co["delta"], co["order"], _policy(cfg), co["source"])
        except ObservableError as exc:
            raise RunFailed(str(exc), EXIT_RUNTIME) from exc
        if oracle == "dense":
            with run.stage("oracle"):
                ref = _dense_correlator(gs, h, op, series)
            write_csv(run.path("correlator_oracle.csv"), ["x", "t", "re", "im"], _grid_rows(series.positions, series.times, ref))
            run.notes["oracle_max_abs_error"] = float(np.max(np.abs(series.values - ref)))
        elif oracle == "two-magnon":
            raise ConfigError("the correlator supports --oracle none or dense")
        run.notes["ground_energy"] = series.ground_energy
    write_csv(run.path("correlator.csv"), ["x", "t", "re", "im"], _grid_rows(series.positions, series.times, series.values))
    with run.stage("structure_factor"):
        sf = structure_factor(series, co["window"])
    rows = [(k, w, sf.values[i, j].real, abs(sf.values[i, j])) for i, k in enumerate(sf.k) for j, w in enumerate(sf.omega)]
    write_csv(run.path("structure_factor.csv"), ["k", "omega", "re", "abs"], rows)
    return EXIT_OK


def _grid_rows(xs, ts, values):
    return [(x, t, values[i, j].real, values[i, j].imag) for i, x in enumerate(xs) for j, t in enumerate(ts)]


def _dense_correlator(gs: VidalMps, h: LocalHamiltonian, op, series: CorrelatorSeries) -> np.ndarray:
    try:
        psi = dense_from_mps(gs)
        evolver = DenseEvolver(h)
    except OracleError as exc:
        raise ConfigError(f"dense oracle unavailable: {exc}") from exc
    n, d = gs.n, gs.d
    hd = dense_hamiltonian(h, sparse=True)
    e_gr = float(np.vdot(psi.amplitudes, hd @ psi.amplitudes).real)

    def on_site(site):
        full = np.kron(np.kron(np.eye(d**site), op), np.eye(d ** (n - site - 1)))
        return full @ psi.amplitudes

    phi = DenseState(n, d, on_site(series.source))
    bras = [on_site(series.source + int(x)) for x in series.positions]
    out = np.zeros(series.values.shape, dtype=np.complex128)
    for j, t in enumerate(series.times):
        phi_t = evolver.evolve(phi, t).amplitudes
        for i, bra in enumerate(bras):
            out[i, j] = np.exp(1j * e_gr * t) * np.vdot(bra, phi_t)
    return out


def cmd_scaling(run: Run, cfg: dict, oracle: str, resume: str | None) -> int:
    if resume:
        raise ConfigError("--resume applies to quench runs only")
    sc = cfg["scaling"]
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for n in sc["n"]:
        h = from_spec(cfg["hamiltonian"], n)
        for chi in sc["chi"]:
            start = random_mps(n, h.d, chi, rng)
            policy = TruncationPolicy(chi_max=chi, weight_tol=cfg["truncation"]["weight_tol"])
            for delta in sc["delta"]:
                best = np.inf
                for _ in range(sc["repeats"]):
                    tic = time.perf_counter()
                    evolve_real(start, h, sc["steps"] * delta, delta, 2, policy)
                    best = min(best, time.perf_counter() - tic)
                rows.append((n, chi, delta, sc["steps"], best))
                logger.info("scaling n=%d chi=%d delta=%g: %.4fs", n, chi, delta, best)
    write_csv(run.path("scaling.csv"), ["n", "chi", "delta", "steps", "seconds"], rows)
    return EXIT_OK


HANDLERS = {"ground": cmd_ground, "quench": cmd_quench, "correlator": cmd_correlator, "scaling": cmd_scaling}


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tebd", description="Time-evolving block decimation for 1D spin chains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ground": "imaginary-time ground state search",
        "quench": "real-time evolution with spectrum, chi and fidelity traces",
        "correlator": "dynamic correlator and structure factor",
        "scaling": "wall-clock sweep over n, chi and delta",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help=f"YAML configuration (env {ENV_PREFIX}CONFIG)")
        p.add_argument("--out", help=f"output directory (env {ENV_PREFIX}OUT)")
        p.add_argument("--oracle", choices=ORACLES, help=f"exact reference to compare against (env {ENV_PREFIX}ORACLE)")
        p.add_argument("--resume", help=f"checkpoint directory to continue from (env {ENV_PREFIX}RESUME)")
        p.add_argument("--threads", type=int, help=f"BLAS/LAPACK thread limit (env {ENV_PREFIX}THREADS)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _setting(args, name: str):
    value = getattr(args, name)
    if value is None:
        value = os.environ.get(ENV_PREFIX + name.upper())
    return value


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    config_path = _setting(args, "config")
    out_dir = _setting(args, "out")
    oracle_flag = _setting(args, "oracle")
    resume = _setting(args, "resume")
    threads = _setting(args, "threads")
    if config_path is None or out_dir is None:
        print("error: --config and --out are required", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(args.command, out, None)

    try:
        if threads is not None:
            try:
                threads = int(threads)
            except ValueError:
                raise ConfigError(f"threads must be an integer, got {threads!r}") from None
            if threads < 1:
                raise ConfigError("threads must be >= 1")
        raw = load_config(config_path)
        if oracle_flag is not None:
            if oracle_flag not in ORACLES:
                raise ConfigError(f"oracle must be one of {ORACLES}")
            raw = {**raw, "oracle": oracle_flag}
        cfg = validate_config(raw, args.command)
        run.cfg = cfg
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        run.write_manifest("invalid", EXIT_VALIDATION, str(exc))
        return EXIT_VALIDATION

    limiter = nullcontext()
    if threads is not None:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=threads)
    try:
        with limiter:
            code = HANDLERS[args.command](run, cfg, cfg["oracle"], resume)
        status = {EXIT_OK: "ok", EXIT_NOT_CONVERGED: "not_converged"}.get(code, "failed")
        run.write_manifest(status, code)
        return code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        run.write_manifest("invalid", EXIT_VALIDATION, str(exc))
        return EXIT_VALIDATION
    except RunFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = {EXIT_NOT_CONVERGED: "not_converged", EXIT_NUMERICAL: "numerical_abort"}.get(exc.code, "failed")
        run.write_manifest(status, exc.code, str(exc))
        return exc.code
    except (EvolutionError, MpsError, OracleError, ObservableError, HamiltonianError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.write_manifest("failed", EXIT_RUNTIME, str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
