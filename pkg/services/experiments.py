"""
Benchmark runners: Fock-state preparation next to an idling spectator mode and
two-mode Bell-cat generation, with sweeps and tomography export.
"""

import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import minimize_scalar

from services.dynamics import default_workers, monte_carlo_stderr, state_transfer_infidelity
from services.ecd.circuit import CompilationTarget, ECDCircuit, compile_circuit
from services.ecd.ledger import PulseSchedule
from services.ecd.schedule import ScheduleOptions, circuit_to_schedule, pulse_slopes, simulate_schedule
from services.errors import ConfigError, MissingParameterError, OptimizationError, SimulationError
from services.grape.base import TransmonControl
from services.grape.optimizer import DetuningGrid, PulseConstraints, optimize_pulse
from services.grape.selection import PulseLibrary
from services.hilbert import (
    PhaseSpaceGrid,
    QuantumState,
    bellcat_state,
    cat_normalization,
    characteristic_cut,
    characteristic_grid,
    coherent_state,
    cutoff_for,
    embed_ket,
    export_grid_csv,
    fock_state,
    ideal_characteristic_cuts,
    partial_trace,
    wigner,
)
from services.model import (
    TWO_PI,
    DecoherenceRates,
    DerivedNonlinearities,
    SystemParams,
    derive_decoherence,
    derive_nonlinearities,
    hz,
)

logger = logging.getLogger(__name__)

SCENARIOS = ('fock-spectator', 'bell-cat')
# Compilation targets; 'identity' is only compiled, never benchmarked.
TARGETS = SCENARIOS + ('identity',)
RESULT_FORMAT_VERSION = 1
DEFAULT_PHOTON_NUMBERS = {'fock-spectator': (0.0, 4.0, 9.0, 16.0), 'bell-cat': (4.0,)}
DEFAULT_CHIS_HZ = {'fock-spectator': (-300e3,), 'bell-cat': (-300e3,)}
DEFAULT_TRAJECTORIES = 500
# Spectator blocks lighter than this carry no measurable weight.
WEIGHT_FLOOR = 1e-12
SPECTATOR_SCAN = 720
REFERENCE_SLACK = 1e-6


@dataclass(frozen=True)
class CompileSettings:
    """Ideal-gate compilation settings for benchmark circuits."""
    n_blocks: int = 1
    threshold: float = 1e-3
    max_blocks: int = 12
    n_starts: int = 8
    max_iter: int = 2000
    beta_scale: float = 1.0

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "CompileSettings":
        values = {k: section[k] for k in ('n_blocks', 'threshold', 'max_blocks', 'n_starts', 'max_iter', 'beta_scale')
                  if k in section}
        return cls(**values)


@dataclass(frozen=True)
class TomographySettings:
    """
    Phase-space sampling for exported grids.

    Attributes:
        eta_max: Half-width of the characteristic-function cuts
        points: Samples along each diagonal cut
        grid_points: Samples per axis of the two-mode grids (0 disables them)
        wigner_extent: Half-width of the single-mode Wigner grid
        wigner_points: Samples per Wigner axis
    """
    eta_max: float = 5.0
    points: int = 201
    grid_points: int = 41
    wigner_extent: float = 4.0
    wigner_points: int = 81

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "TomographySettings":
        values = {k: section[k] for k in ('eta_max', 'points', 'grid_points', 'wigner_extent', 'wigner_points')
                  if k in section}
        return cls(**values)

    def axis(self, eta_max: Optional[float] = None, points: Optional[int] = None) -> np.ndarray:
        """Symmetric axis with exact end points and the origin always sampled."""
        eta_max = self.eta_max if eta_max is None else eta_max
        axis = np.linspace(-eta_max, eta_max, points or self.points)
        return axis if np.any(axis == 0.0) else np.union1d(axis, [0.0])


@dataclass(frozen=True)
class BenchmarkSpec:
    """
    One benchmark scenario and its sweep axes.

    Attributes:
        scenario: 'fock-spectator' or 'bell-cat'
        params: Device parameters (couplings are retuned per swept chi)
        intrinsic: Intrinsic decoherence rates
        photon_numbers: Swept |alpha|^2 (spectator population or cat size)
        chis: Swept dispersive shifts (rad/s)
        schemes: Ancilla pulse schemes, each a separate sweep axis value
        pulse_duration: Ancilla pulse length t_g (s)
        open_system: Simulate with decoherence
        n_traj: Monte-Carlo trajectories for open runs
        seed: Root seed for compilation and trajectories
        fock_n: Target Fock number of the spectator scenario
        cavity_dim: Cavity truncation override (chosen by the convergence guard when None)
        compile: Circuit compilation settings
        options: Schedule correction switches
        nonlinearities: Which nonlinearities the simulated device keeps
        pulse_files: Optimization reports with the QOC X_pi and X_pi/2 pulses
        detuning: Robustness grid for QOC optimization and slope extraction
        constraints: Pulse optimizer settings
        transmon_levels: Transmon truncation of the pulse model
        dt: Sample spacing (s)
        tomography: Phase-space sampling
    """
    scenario: str
    params: SystemParams
    intrinsic: DecoherenceRates = field(default_factory=DecoherenceRates)
    photon_numbers: Tuple[float, ...] = (0.0,)
    chis: Tuple[float, ...] = (hz(-300e3),)
    schemes: Tuple[str, ...] = ('qoc', 'drag')
    pulse_duration: float = 20e-9
    open_system: bool = False
    n_traj: int = DEFAULT_TRAJECTORIES
    seed: int = 0
    fock_n: int = 3
    cavity_dim: Optional[int] = None
    compile: CompileSettings = field(default_factory=CompileSettings)
    options: ScheduleOptions = field(default_factory=ScheduleOptions)
    nonlinearities: Tuple[bool, bool, bool] = (True, True, True)
    pulse_files: Tuple[str, ...] = ()
    detuning: DetuningGrid = field(default_factory=DetuningGrid.standard)
    constraints: PulseConstraints = field(default_factory=PulseConstraints)
    transmon_levels: Optional[int] = None
    dt: Optional[float] = None
    tomography: TomographySettings = field(default_factory=TomographySettings)

    def __post_init__(self):
        if self.scenario not in TARGETS:
            raise ConfigError(f"unknown scenario {self.scenario!r}, expected one of {TARGETS}")
        if not self.photon_numbers or not self.chis or not self.schemes:
            raise ConfigError("sweep axes (photon_numbers, chis_hz, schemes) must be non-empty")
        if any(n < 0 for n in self.photon_numbers):
            raise ConfigError(f"photon numbers must be non-negative, got {self.photon_numbers}")
        for scheme in self.schemes:
            if scheme not in PulseLibrary.SCHEMES:
                raise ConfigError(f"unknown pulse scheme {scheme!r}, expected one of {PulseLibrary.SCHEMES}")
        if self.open_system and self.intrinsic.is_zero:
            raise MissingParameterError("open-system runs need decoherence rates in physics.decoherence")
        if self.n_traj < 1:
            raise ConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.fock_n < 0:
            raise ConfigError(f"fock_n must be >= 0, got {self.fock_n}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "BenchmarkSpec":
        """
        Build from a validated run config (physics, pulse and scenario sections).

        Raises:
            ConfigError: If the scenario section is missing or inconsistent
        """
        scenario = config.get('scenario')
        if not scenario:
            raise ConfigError("run config has no scenario section")
        kind = scenario.get('type')
        physics = config.get('physics', {})
        pulse = config.get('pulse', {})
        try:
            params = SystemParams.from_config(physics)
        except KeyError as e:
            raise ConfigError(f"physics section is missing {e}") from e
        dt_ns = pulse.get('dt_ns')
        return cls(
            scenario=kind,
            params=params,
            intrinsic=DecoherenceRates.from_config(physics.get('decoherence', {})),
            photon_numbers=tuple(float(v) for v in scenario.get('photon_numbers', DEFAULT_PHOTON_NUMBERS.get(kind, (0.0,)))),
            chis=tuple(hz(v) for v in scenario.get('chis_hz', DEFAULT_CHIS_HZ.get(kind, (-300e3,)))),
            schemes=tuple(scenario.get('schemes', ('qoc', 'drag'))),
            pulse_duration=float(pulse.get('duration_ns', 20.0)) * 1e-9,
            open_system=bool(scenario.get('open_system', False)),
            n_traj=int(scenario.get('n_traj', DEFAULT_TRAJECTORIES)),
            seed=int(config.get('seed', 0)),
            fock_n=int(scenario.get('fock_n', 3)),
            cavity_dim=scenario.get('cavity_dim'),
            compile=CompileSettings.from_config(scenario.get('compile', {})),
            options=ScheduleOptions.from_config(scenario.get('corrections', {})),
            nonlinearities=tuple(bool(scenario.get('nonlinearities', {}).get(k, True))
                                 for k in ('self_kerr', 'cross_kerr', 'second_order')),
            pulse_files=tuple(str(p) for p in pulse.get('files', ())),
            detuning=DetuningGrid.from_config(pulse.get('detuning', {})),
            constraints=PulseConstraints.from_config(pulse.get('constraints', {}), fast=bool(config.get('fast'))),
            transmon_levels=pulse.get('transmon_levels'),
            dt=dt_ns * 1e-9 if dt_ns else None,
            tomography=TomographySettings.from_config(scenario.get('tomography', {})),
        )

    def control(self) -> TransmonControl:
        return TransmonControl(self.params.K_q, levels=self.transmon_levels, dt=self.dt)

    def device(self, chi: float) -> Tuple[SystemParams, DerivedNonlinearities]:
        """Device tuned to chi on both modes, with the configured nonlinearities."""
        params = self.params.with_chi(chi)
        return params, derive_nonlinearities(params).restricted(*self.nonlinearities)

    def points(self) -> List[Tuple[str, float, float]]:
        """Sweep points (scheme, chi, photon number) in index order."""
        return list(itertools.product(self.schemes, self.chis, self.photon_numbers))


@dataclass
class BenchmarkResult:
    """
    Outcome of one benchmark point.

    Attributes:
        index: Position in the sweep
        scenario: Scenario name
        scheme: Ancilla pulse scheme
        photon_number: |alpha|^2 of the point
        chi: Dispersive shift (rad/s)
        open_system: Whether decoherence was simulated
        infidelity: Pulse-level state-transfer infidelity (nan on failure)
        reference_infidelity: Ideal-gate infidelity of the compiled circuit
        metrics: Scenario-specific figures (target-mode fidelity, spectator angle, ...)
        metadata: Deterministic run facts (dims, blocks, steps, duration)
        state: Reduced cavity state kept for tomography
        tomography: Phase-space grids computed with the run
        error: Failure message of a point that did not complete
        error_kind: 'optimization' or 'simulation' for failed points
    """
    index: int
    scenario: str
    scheme: str
    photon_number: float
    chi: float
    open_system: bool
    infidelity: float = float('nan')
    reference_infidelity: float = float('nan')
    metrics: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    state: Optional[QuantumState] = None
    tomography: Dict[str, PhaseSpaceGrid] = field(default_factory=dict)
    error: Optional[str] = None
    error_kind: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_row(self) -> Dict[str, Any]:
        row = {
            'index': self.index,
            'scenario': self.scenario,
            'scheme': self.scheme,
            'system': 'open' if self.open_system else 'closed',
            'photon_number': self.photon_number,
            'chi_hz': self.chi / TWO_PI,
            'infidelity': self.infidelity,
            'reference_infidelity': self.reference_infidelity,
            'n_blocks': self.metadata.get('n_blocks'),
            'duration_s': self.metadata.get('duration_s'),
            'status': 'ok' if self.ok else 'failed',
            'error': self.error or '',
        }
        row.update({k: v for k, v in sorted(self.metrics.items())})
        return row


def library_for(spec: BenchmarkSpec, scheme: str, workers: Optional[int] = None) -> PulseLibrary:
    """
    X_pi and X_pi/2 pulses of one scheme.

    QOC pulses come from the configured report files, or are optimized at the
    configured duration when no files are given.
    """
    control = spec.control()
    if scheme == 'drag':
        return PulseLibrary.drag(control, spec.pulse_duration)
    if spec.pulse_files:
        return PulseLibrary.from_files(spec.pulse_files)
    reports = [optimize_pulse(theta, spec.pulse_duration, spec.detuning, control, spec.constraints, workers=workers)
               for theta in (np.pi, np.pi / 2)]
    return PulseLibrary.from_reports(*reports)


def schedule_options(spec: BenchmarkSpec, library: PulseLibrary) -> ScheduleOptions:
    """
    Correction switches for one library with the pulse slopes filled in.

    The robust-linear correction is dropped for libraries whose pulses are not
    robust over the detuning grid.
    """
    options = spec.options
    if not options.robust_linear:
        return options
    slopes = options.slopes or pulse_slopes(library, spec.control(), spec.detuning)
    if any(v is None for v in slopes.values()):
        logger.info("%s pulses are not robust; robust-linear correction skipped", library.scheme)
        return replace(options, robust_linear=False, slopes=slopes)
    return replace(options, slopes=slopes)


def fock_cutoff(spec: BenchmarkSpec) -> int:
    return spec.cavity_dim or max(cutoff_for(np.sqrt(spec.fock_n)), spec.fock_n + 4)


def compile_target(spec: BenchmarkSpec, photon_number: float) -> CompilationTarget:
    """
    Ideal-gate state-transfer task of a scenario, ancilla in |g>.

    fock-spectator: |0> -> |n> on cavity 1 alone (cavity 2 dimension 1);
    bell-cat: |0,0> -> N(|alpha,alpha> + |-alpha,-alpha>);
    identity: |0,0> -> |0,0>.
    """
    if spec.scenario == 'fock-spectator':
        d_1 = fock_cutoff(spec)
        initial = QuantumState.ket(embed_ket([1.0, 0.0], fock_state(0, d_1), [1.0]), (2, d_1, 1))
        goal = QuantumState.ket(embed_ket([1.0, 0.0], fock_state(spec.fock_n, d_1), [1.0]), (2, d_1, 1))
        return CompilationTarget(initial, goal, active_modes=(0,))
    alpha = float(np.sqrt(photon_number))
    d = spec.cavity_dim or cutoff_for(alpha)
    vacuum = fock_state(0, d)
    initial = QuantumState.ket(embed_ket([1.0, 0.0], vacuum, vacuum), (2, d, d))
    if spec.scenario == 'identity':
        return CompilationTarget(initial, initial)
    goal = QuantumState.ket(np.kron([1.0, 0.0], bellcat_state(alpha, (d, d)).data), (2, d, d))
    return CompilationTarget(initial, goal)


def compile_schedule(spec: BenchmarkSpec, photon_number: float, chi: float, library: PulseLibrary,
                     options: Optional[ScheduleOptions] = None,
                     workers: Optional[int] = None) -> Tuple[ECDCircuit, PulseSchedule]:
    """
    Compile a scenario's circuit and turn it into a corrected pulse schedule.

    Raises:
        CompilationError: If no circuit reaches the threshold
        SynthesisError: If a fragment cannot be synthesized
    """
    _, nl = spec.device(chi)
    circuit = _compile(spec, compile_target(spec, photon_number), workers)
    schedule = circuit_to_schedule(circuit, library, nl, spec.control(), options or schedule_options(spec, library))
    return circuit, schedule


def _compile(spec: BenchmarkSpec, target: CompilationTarget, workers: Optional[int]) -> ECDCircuit:
    settings = spec.compile
    return compile_circuit(target, n_blocks=settings.n_blocks, seed=spec.seed, threshold=settings.threshold,
                           max_blocks=settings.max_blocks, n_starts=settings.n_starts, max_iter=settings.max_iter,
                           beta_scale=settings.beta_scale, workers=workers)


def _rates(spec: BenchmarkSpec, params: SystemParams) -> Optional[DecoherenceRates]:
    return derive_decoherence(params, spec.intrinsic) if spec.open_system else None


def _block_seed(seed: int, m: int) -> int:
    return int(np.random.SeedSequence([seed, m]).generate_state(1)[0])


def _spectator_block(schedule: PulseSchedule, nl: DerivedNonlinearities, dims: Tuple[int, int, int], m: int,
                     target: np.ndarray, rates: Optional[DecoherenceRates], n_traj: int, seed: int,
                     workers: int) -> Tuple[complex, np.ndarray]:
    d_q, d_1, _ = dims
    psi0 = QuantumState.ket(embed_ket(fock_state(0, d_q), fock_state(0, d_1), [1.0]), (d_q, d_1, 1))
    run = simulate_schedule(schedule, nl, psi0, dims, rates=rates, fixed_photons={2: m},
                            n_traj=n_traj, seed=seed, workers=workers)
    state = run.logical
    if state.kind == 'ket':
        overlap = complex(np.vdot(target, state.data))
    else:
        overlap = complex(np.real(np.vdot(target, state.data @ target)))
    reduced = partial_trace(state, 1)
    return overlap, reduced.data


def spectator_overlap(weights: np.ndarray, amplitudes: np.ndarray, photons: np.ndarray) -> Tuple[float, float]:
    """
    Best full-state overlap over a deterministic spectator rotation.

    F(theta) = |sum_m w_m exp(i theta m) <target|psi_m>|^2, maximized by a scan over
    theta followed by a bounded refinement.

    Returns:
        (maximum overlap, rotation angle)
    """
    terms = np.asarray(weights) * np.asarray(amplitudes)
    photons = np.asarray(photons, dtype=float)

    def overlap(theta: float) -> float:
        return float(abs(np.sum(terms * np.exp(1j * theta * photons))) ** 2)

    thetas = np.linspace(-np.pi, np.pi, SPECTATOR_SCAN, endpoint=False)
    values = np.abs(np.exp(1j * np.outer(thetas, photons)) @ terms) ** 2
    k = int(np.argmax(values))
    step = thetas[1] - thetas[0]
    refined = minimize_scalar(lambda t: -overlap(t), bounds=(thetas[k] - step, thetas[k] + step),
                              method='bounded', options={'xatol': 1e-12})
    if -refined.fun > values[k]:
        return min(1.0, float(-refined.fun)), float(refined.x)
    return min(1.0, float(values[k])), float(thetas[k])


def run_fock_spectator(spec: BenchmarkSpec, photon_number: Optional[float] = None, chi: Optional[float] = None,
                       scheme: Optional[str] = None, library: Optional[PulseLibrary] = None,
                       options: Optional[ScheduleOptions] = None, workers: Optional[int] = None,
                       index: int = 0, mc_seed: Optional[int] = None) -> BenchmarkResult:
    """
    Prepare |n> in cavity 1 while cavity 2 idles in |alpha>.

    The circuit is compiled for |0>|g> -> |n>|g> on cavity 1 alone. The spectator is
    simulated block by block at fixed photon number m, each block weighted by the
    coherent-state population |c_m|^2. Closed runs grade the full-state overlap
    including the spectator, maximized over a deterministic spectator rotation; open
    runs grade the population-weighted target fidelity of each block.

    Args:
        spec: Benchmark scenario
        photon_number: Spectator |alpha|^2 (first sweep value when None)
        chi: Dispersive shift (first sweep value when None)
        scheme: Pulse scheme (first sweep value when None)
        library: Pulses to use (built from the spec when None)
        options: Schedule switches (derived from the library when None)
        workers: Parallel workers
        index: Sweep index recorded in the result
        mc_seed: Trajectory seed override (the spec seed when None)

    Returns:
        BenchmarkResult with the target-mode Wigner grid

    Raises:
        CompilationError: If the target transfer cannot be compiled
    """
    photon_number = spec.photon_numbers[0] if photon_number is None else photon_number
    chi = spec.chis[0] if chi is None else chi
    scheme = scheme or spec.schemes[0]
    workers = workers or default_workers()
    library = library or library_for(spec, scheme, workers)
    options = options or schedule_options(spec, library)
    params, nl = spec.device(chi)
    n = spec.fock_n
    alpha = float(np.sqrt(photon_number))

    d_1 = fock_cutoff(spec)
    d_2 = cutoff_for(alpha)
    d_q = params.d_q
    circuit, schedule = compile_schedule(spec, photon_number, chi, library, options, workers)

    weights = np.abs(coherent_state(alpha, d_2).data) ** 2
    photons = np.flatnonzero(weights > WEIGHT_FLOOR)
    target = embed_ket(fock_state(0, d_q), fock_state(n, d_1), [1.0])
    rates = _rates(spec, params)
    seed = spec.seed if mc_seed is None else mc_seed
    dims = (d_q, d_1, d_2)
    logger.info("fock-spectator n=%d |alpha|^2=%.2f chi/2pi=%.1f kHz %s: %d spectator blocks",
                n, photon_number, chi / TWO_PI * 1e-3, scheme, len(photons))

    if rates is None:
        n_jobs = max(1, min(workers, len(photons)))
        blocks = Parallel(n_jobs=n_jobs)(
            delayed(_spectator_block)(schedule, nl, dims, int(m), target, None, 1, seed, 1) for m in photons
        )
    else:
        blocks = [_spectator_block(schedule, nl, dims, int(m), target, rates, spec.n_traj, _block_seed(seed, int(m)),
                                   workers) for m in photons]
    overlaps = np.array([b[0] for b in blocks])
    w = weights[photons]
    reduced = QuantumState.dm(sum(wm * b[1] for wm, b in zip(w, blocks)), (d_1,))

    metrics: Dict[str, float] = {}
    if rates is None:
        fidelity, angle = spectator_overlap(w, overlaps, photons)
        metrics['spectator_angle'] = angle
    else:
        fidelity = float(np.clip(np.sum(w * np.real(overlaps)), 0.0, 1.0))
    metrics['target_mode_fidelity'] = float(np.real(reduced.data[n, n]))

    axis = np.linspace(-spec.tomography.wigner_extent, spec.tomography.wigner_extent, spec.tomography.wigner_points)
    result = BenchmarkResult(
        index=index, scenario='fock-spectator', scheme=scheme, photon_number=photon_number, chi=chi,
        open_system=spec.open_system,
        infidelity=float(np.clip(1.0 - fidelity, 0.0, 1.0)),
        reference_infidelity=float(circuit.infidelity),
        metrics=metrics,
        metadata={'dims': list(dims), 'fock_n': n, 'n_blocks': circuit.n_blocks, 'n_steps': schedule.n_steps,
                  'duration_s': schedule.duration, 'spectator_blocks': int(len(photons))},
        state=reduced,
        tomography={'wigner': wigner(reduced, PhaseSpaceGrid.from_axes(axis, axis))},
    )
    _check_reference(result)
    return result


def bellcat_reference_cuts(alpha: float, etas: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Diagonal cuts of the exactly normalized Bell-cat (real alpha)."""
    real_cut, imag_cut = ideal_characteristic_cuts(alpha, etas)
    scale = 2.0 * cat_normalization(alpha) ** 2
    return scale * real_cut, scale * imag_cut


def run_bellcat(spec: BenchmarkSpec, photon_number: Optional[float] = None, chi: Optional[float] = None,
                scheme: Optional[str] = None, library: Optional[PulseLibrary] = None,
                options: Optional[ScheduleOptions] = None, workers: Optional[int] = None,
                index: int = 0, mc_seed: Optional[int] = None) -> BenchmarkResult:
    """
    Generate N(|alpha,alpha> + |-alpha,-alpha>)|g> from vacuum.

    Closed runs propagate state vectors; open runs average n_traj trajectories under
    the dressed decoherence rates. Alpha = 0 targets |0,0> exactly. Open results carry an upper
    bound on the Monte-Carlo standard error of the infidelity in metrics['infidelity_stderr'].

    Args:
        spec: Benchmark scenario
        photon_number: |alpha|^2 of the cat (first sweep value when None)
        chi: Dispersive shift of both modes (first sweep value when None)
        scheme: Pulse scheme (first sweep value when None)
        library: Pulses to use (built from the spec when None)
        options: Schedule switches (derived from the library when None)
        workers: Parallel workers
        index: Sweep index recorded in the result
        mc_seed: Trajectory seed override (the spec seed when None)

    Returns:
        BenchmarkResult with real and imaginary characteristic-function cuts

    Raises:
        CompilationError: If the target transfer cannot be compiled
    """
    photon_number = spec.photon_numbers[0] if photon_number is None else photon_number
    chi = spec.chis[0] if chi is None else chi
    scheme = scheme or spec.schemes[0]
    workers = workers or default_workers()
    library = library or library_for(spec, scheme, workers)
    options = options or schedule_options(spec, library)
    params, nl = spec.device(chi)
    alpha = float(np.sqrt(photon_number))

    d = spec.cavity_dim or cutoff_for(alpha)
    d_q = params.d_q
    cat = bellcat_state(alpha, (d, d)).data
    vacuum = fock_state(0, d)
    circuit, schedule = compile_schedule(spec, photon_number, chi, library, options, workers)

    dims = (d_q, d, d)
    psi0 = QuantumState.ket(embed_ket(fock_state(0, d_q), vacuum, vacuum), dims)
    target = np.kron(fock_state(0, d_q), cat)
    logger.info("bell-cat |alpha|^2=%.2f chi/2pi=%.1f kHz %s %s: %d blocks, %.2f us",
                photon_number, chi / TWO_PI * 1e-3, scheme, 'open' if spec.open_system else 'closed',
                circuit.n_blocks, schedule.duration * 1e6)
    run = simulate_schedule(schedule, nl, psi0, dims, rates=_rates(spec, params), n_traj=spec.n_traj,
                            seed=spec.seed if mc_seed is None else mc_seed, workers=workers)
    reduced = partial_trace(run.logical, (1, 2))
    etas = spec.tomography.axis()
    infidelity = state_transfer_infidelity(run.logical, target)
    metrics = {'infidelity_stderr': monte_carlo_stderr(infidelity, spec.n_traj)} if spec.open_system else {}

    result = BenchmarkResult(
        index=index, scenario='bell-cat', scheme=scheme, photon_number=photon_number, chi=chi,
        open_system=spec.open_system,
        infidelity=infidelity,
        reference_infidelity=float(circuit.infidelity),
        metrics=metrics,
        metadata={'dims': list(dims), 'n_blocks': circuit.n_blocks, 'n_steps': schedule.n_steps,
                  'duration_s': schedule.duration, 'n_traj': spec.n_traj if spec.open_system else 1},
        state=reduced,
        tomography={
            'real_cut': characteristic_cut(reduced, etas),
            'imag_cut': characteristic_cut(reduced, etas, imaginary=True),
        },
    )
    _check_reference(result)
    return result


RUNNERS = {'fock-spectator': run_fock_spectator, 'bell-cat': run_bellcat}


def _check_reference(result: BenchmarkResult) -> None:
    if result.infidelity + REFERENCE_SLACK < result.reference_infidelity:
        logger.warning("point %d: pulse-level infidelity %.3e below the circuit reference %.3e",
                       result.index, result.infidelity, result.reference_infidelity)


def _failed(spec: BenchmarkSpec, index: int, point: Tuple[str, float, float], error: Exception,
            kind: str) -> BenchmarkResult:
    scheme, chi, photon_number = point
    return BenchmarkResult(index=index, scenario=spec.scenario, scheme=scheme, photon_number=photon_number,
                           chi=chi, open_system=spec.open_system, error=str(error), error_kind=kind,
                           metadata={'error_type': type(error).__name__})


def _run_point(spec: BenchmarkSpec, index: int, point: Tuple[str, float, float], library: PulseLibrary,
               options: ScheduleOptions, workers: int) -> BenchmarkResult:
    scheme, chi, photon_number = point
    runner = RUNNERS[spec.scenario]
    start = time.perf_counter()
    for attempt in range(2):
        try:
            result = runner(spec, photon_number, chi, scheme, library, options, workers, index,
                            mc_seed=spec.seed + attempt)
            logger.info("point %d done in %.1f s: infidelity %.3e", index, time.perf_counter() - start,
                        result.infidelity)
            return result
        except SimulationError as e:
            if attempt == 0:
                logger.warning("point %d simulation failed (%s); retrying with a new trajectory seed", index, e)
                continue
            logger.error("point %d failed after retry: %s", index, e)
            return _failed(spec, index, point, e, 'simulation')
        except OptimizationError as e:
            logger.error("point %d failed: %s", index, e)
            return _failed(spec, index, point, e, 'optimization')


def sweep(spec: BenchmarkSpec, workers: Optional[int] = None,
          libraries: Optional[Mapping[str, PulseLibrary]] = None) -> List[BenchmarkResult]:
    """
    Run the scenario over every (scheme, chi, |alpha|^2) point.

    Points run as independent joblib jobs and are returned in sweep-index order.
    The worker budget is split between concurrent points and the parallelism inside
    each point. A point that fails is recorded and the sweep continues; simulation
    failures are retried once with a new trajectory seed.

    Args:
        spec: Benchmark scenario
        workers: Total worker budget (BOSONIC_CTRL_WORKERS or the CPU count when None)
        libraries: Prebuilt pulse libraries per scheme

    Returns:
        One BenchmarkResult per point
    """
    if spec.scenario not in RUNNERS:
        raise ConfigError(f"scenario {spec.scenario!r} cannot be benchmarked, expected one of {SCENARIOS}")
    budget = workers or default_workers()
    libraries = dict(libraries or {})
    for scheme in spec.schemes:
        if scheme not in libraries:
            libraries[scheme] = library_for(spec, scheme, budget)
    options = {scheme: schedule_options(spec, libraries[scheme]) for scheme in spec.schemes}

    points = spec.points()
    n_jobs = max(1, min(budget, len(points)))
    inner = max(1, budget // n_jobs)
    logger.info("sweep of %d %s points on %d jobs x %d workers", len(points), spec.scenario, n_jobs, inner)
    return Parallel(n_jobs=n_jobs)(
        delayed(_run_point)(spec, i, point, libraries[point[0]], options[point[0]], inner)
        for i, point in enumerate(points)
    )


def sweep_frame(results: Sequence[BenchmarkResult]) -> pd.DataFrame:
    """One row per sweep point in index order."""
    return pd.DataFrame([r.to_row() for r in sorted(results, key=lambda r: r.index)])


def state_frame(state: QuantumState) -> pd.DataFrame:
    data = state.to_density().data
    rows, cols = np.indices(data.shape)
    return pd.DataFrame({'row': rows.ravel(), 'col': cols.ravel(),
                         're': np.real(data).ravel(), 'im': np.imag(data).ravel()})


def save_state(state: QuantumState, path: Union[str, Path]) -> Path:
    """Write a density matrix as (row, col, re, im) CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state_frame(state).to_csv(path, index=False, float_format='%.17g')
    return path


def load_state(path: Union[str, Path], dims: Sequence[int]) -> QuantumState:
    frame = pd.read_csv(path, float_precision='round_trip')
    dim = int(np.prod(dims))
    data = np.zeros((dim, dim), dtype=complex)
    data[frame['row'].to_numpy(), frame['col'].to_numpy()] = frame['re'].to_numpy() + 1j * frame['im'].to_numpy()
    return QuantumState.dm(data, tuple(dims))


def _cut_frame(cut: PhaseSpaceGrid, ideal: Optional[np.ndarray]) -> pd.DataFrame:
    eta = cut.eta1 / (1j if np.any(np.imag(cut.eta1)) else 1.0)
    frame = pd.DataFrame({'eta': np.real(eta), 're_value': np.real(cut.values), 'im_value': np.imag(cut.values)})
    if ideal is not None:
        frame['ideal'] = ideal
    return frame


def export_tomography(state: QuantumState, directory: Union[str, Path],
                      settings: Optional[TomographySettings] = None,
                      alpha: Optional[float] = None) -> Dict[str, Path]:
    """
    Write phase-space data of a reduced cavity state.

    Two-mode states give the real and imaginary diagonal cuts of the joint
    characteristic function (with the exact Bell-cat curves when alpha is given)
    and, unless disabled, the two-mode grids over real and imaginary arguments.
    Single-mode states give the Wigner grid.

    Args:
        state: Cavity state with the ancilla traced out
        directory: Output directory
        settings: Sampling (defaults when None)
        alpha: Cat amplitude for the ideal overlay columns

    Returns:
        Mapping of artifact name to written path

    Raises:
        SimulationError: If C(0, 0) differs from 1 by more than 1e-6
    """
    settings = settings or TomographySettings()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}

    if len(state.dims) == 1:
        axis = np.linspace(-settings.wigner_extent, settings.wigner_extent, settings.wigner_points)
        grid = wigner(state, PhaseSpaceGrid.from_axes(axis, axis))
        written['wigner'] = export_grid_csv(grid, directory / 'wigner.csv')
        return written

    etas = settings.axis()
    real_cut = characteristic_cut(state, etas)
    imag_cut = characteristic_cut(state, etas, imaginary=True)
    origin = complex(real_cut.values[np.flatnonzero(etas == 0.0)[0]])
    if abs(origin - 1.0) > 1e-6:
        raise SimulationError(f"characteristic function at the origin is {origin:.8f}, expected 1")
    ideal_real, ideal_imag = bellcat_reference_cuts(alpha, etas) if alpha is not None else (None, None)
    for name, cut, ideal in (('real_cut', real_cut, ideal_real), ('imag_cut', imag_cut, ideal_imag)):
        path = directory / f'{name}.csv'
        _cut_frame(cut, ideal).to_csv(path, index=False, float_format='%.17g')
        written[name] = path

    if settings.grid_points:
        axis = settings.axis(points=settings.grid_points)
        for name, scale in (('real_grid', 1.0), ('imag_grid', 1j)):
            grid = characteristic_grid(state, PhaseSpaceGrid.two_mode(axis * scale, axis * scale))
            written[name] = export_grid_csv(grid, directory / f'{name}.csv')
    logger.info("tomography written to %s (%d files)", directory, len(written))
    return written


def spurious_phase_study(spec: BenchmarkSpec, scheme: str = 'qoc', photon_number: Optional[float] = None,
                         library: Optional[PulseLibrary] = None, workers: Optional[int] = None) -> pd.DataFrame:
    """
    Closed Bell-cat infidelity per chi as the cavity nonlinearities are switched on.

    reference: chi only. k12: plus cross-Kerr. k12_k: plus self-Kerr. uncorrected:
    plus the second-order shift chi', i.e. every nonlinearity. None of these carry
    spurious-phase events. corrected: every nonlinearity with the events.

    Returns:
        DataFrame with chi_hz, reference, k12, k12_k, uncorrected, corrected
    """
    workers = workers or default_workers()
    library = library or library_for(spec, scheme, workers)
    base = replace(spec, scenario='bell-cat', open_system=False)
    options = schedule_options(base, library)
    plain = replace(options, spurious=False)
    # nonlinearities are (self-Kerr, cross-Kerr, chi')
    variants = {
        'reference': (replace(base, nonlinearities=(False, False, False)), plain),
        'k12': (replace(base, nonlinearities=(False, True, False)), plain),
        'k12_k': (replace(base, nonlinearities=(True, True, False)), plain),
        'uncorrected': (replace(base, nonlinearities=(True, True, True)), plain),
        'corrected': (replace(base, nonlinearities=(True, True, True)), replace(options, spurious=True)),
    }
    rows = []
    for chi in spec.chis:
        row = {'chi_hz': chi / TWO_PI}
        for name, (variant, opts) in variants.items():
            row[name] = run_bellcat(variant, photon_number, chi, scheme, library, opts, workers).infidelity
        rows.append(row)
    return pd.DataFrame(rows)


__all__ = [
    'BenchmarkSpec', 'BenchmarkResult', 'CompileSettings', 'TomographySettings', 'SCENARIOS',
    'TARGETS', 'library_for', 'schedule_options', 'fock_cutoff', 'compile_target', 'compile_schedule',
    'run_fock_spectator', 'run_bellcat', 'spectator_overlap',
    'bellcat_reference_cuts', 'sweep', 'sweep_frame', 'save_state', 'load_state', 'export_tomography',
    'spurious_phase_study',
]
