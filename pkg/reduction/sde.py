"""
Euler–Maruyama integration of the energy-based reduction SDE

    d|ψ⟩ = [-iĤ - ⅛σ²(Ĥ - H_t)²]|ψ⟩dt + ½σ(Ĥ - H_t)|ψ⟩dW_t

and of its commuting multi-observable generalization. The state is
renormalized after every step; the pre-normalization norm error is kept as a
diagnostic.

Ensembles are integrated in fixed batches of trajectory indices, each row of
a batch drawing its Wiener increments from its own substream, so results do
not depend on the number of workers.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .conf import Tolerances, get_section, resolve_tolerances
from .exceptions import ConfigurationError, InputValidationError, NumericBlowupError
from .hilbert import (
    DensityMatrix,
    SpectralDecomposition,
    StateVector,
    batch_level_probabilities,
    commutator_norm,
    density_from_mixture,
    moments,
)
from .stats import EnsembleSeries

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    """
    Parameters of one simulation.

    ``dt`` and ``horizon`` default to multiples of the reduction time
    τ_R = 1/(σ²V₀) (``dt_tau`` and ``horizon_tau``). The absolute
    ``horizon`` override exists for runs where τ_R is undefined, e.g. σ = 0.
    """
    sigma: float = 1.0
    dt: Optional[float] = None
    horizon_tau: float = 20.0
    collapse_threshold: float = 1e-12
    record_stride: int = 100
    seed: int = 42
    dt_tau: float = 1e-3
    record_states: bool = False
    detect_collapse: bool = True
    horizon: Optional[float] = None
    monitored_levels: Optional[Tuple[int, ...]] = None

    @classmethod
    def from_settings(cls, **overrides) -> 'SimConfig':
        section = get_section('simulation')
        section.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        config = cls(**{k: v for k, v in section.items() if k in known})
        if config.monitored_levels is not None:
            config = replace(config, monitored_levels=tuple(int(n) for n in config.monitored_levels))
        return config.validate()

    def validate(self) -> 'SimConfig':
        if not self.sigma >= 0:
            raise ConfigurationError(f"sigma must be non-negative, got {self.sigma}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.dt_tau > 0:
            raise ConfigurationError(f"dt_tau must be positive, got {self.dt_tau}")
        if self.horizon is None and not self.horizon_tau >= 1:
            raise ConfigurationError(f"horizon_tau must be at least 1, got {self.horizon_tau}")
        if self.horizon is not None and not self.horizon >= 0:
            raise ConfigurationError(f"horizon must be non-negative, got {self.horizon}")
        if not self.collapse_threshold > 0:
            raise ConfigurationError("collapse_threshold must be positive")
        if int(self.record_stride) < 1:
            raise ConfigurationError("record_stride must be a positive integer")
        rng.validate_seed(self.seed)
        return self

    def resolve_timing(self, tau_r: Optional[float]) -> Tuple[float, float]:
        """
        Return (dt, horizon) in absolute time units.

        An undefined τ_R (σ = 0 or V₀ = 0) falls back to a unit time-scale.
        """
        reference = tau_r
        if reference is None or not math.isfinite(reference):
            if self.dt is None or self.horizon is None:
                logger.warning("Reduction time is undefined; using a unit time-scale for defaults")
            reference = 1.0
        dt = self.dt if self.dt is not None else self.dt_tau * reference
        horizon = self.horizon if self.horizon is not None else self.horizon_tau * reference
        if tau_r is not None and math.isfinite(tau_r) and dt > 0.01 * tau_r:
            logger.warning(f"dt = {dt:.3g} exceeds 0.01·τ_R = {0.01 * tau_r:.3g}")
        return float(dt), float(horizon)


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Either a pure state (one member of weight 1) or a finite mixture."""
    members: Tuple[StateVector, ...]
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        weights.setflags(write=False)
        object.__setattr__(self, 'members', tuple(self.members))
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def pure(cls, state: StateVector) -> 'InitialCondition':
        return cls((state,), np.ones(1))

    @classmethod
    def mixture(cls, pairs: Sequence[Tuple[float, StateVector]]) -> 'InitialCondition':
        weights, states = zip(*pairs)
        return cls(tuple(states), np.asarray(weights, dtype=float))

    @property
    def is_pure(self) -> bool:
        return len(self.members) == 1

    @property
    def dimension(self) -> int:
        return self.members[0].dimension

    def validate(self, tol: Optional[Tolerances] = None) -> 'InitialCondition':
        tol = resolve_tolerances(tol)
        if not self.members or len(self.members) != self.weights.size:
            raise InputValidationError("Initial condition needs one weight per member state")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > tol.tol_num:
            raise InputValidationError(f"Mixture weights must be non-negative and sum to 1, got {self.weights}")
        for state in self.members:
            if state.dimension != self.dimension:
                raise InputValidationError("All mixture members must share one dimension")
            state.validate_normalized(tol)
        return self

    def density(self) -> DensityMatrix:
        return density_from_mixture(self.weights, self.members)


def sample_initial(init: InitialCondition, stream: np.random.Generator) -> StateVector:
    """Pure conditions return their state; mixtures pick member i with probability weight_i."""
    if init.is_pure:
        return init.members[0]
    index = int(stream.choice(len(init.members), p=init.weights))
    return init.members[index]


def reduction_time(init: InitialCondition, dec: SpectralDecomposition, sigma: float,
                   tol: Optional[Tolerances] = None) -> Optional[float]:
    """τ_R = 1/(σ²V₀) with V₀ the weight-averaged initial variance; None if undefined."""
    v0 = sum(w * moments(s, dec, tol=tol).V for w, s in zip(init.weights, init.members))
    if sigma <= 0 or v0 <= 0:
        return None
    return 1.0 / (sigma * sigma * v0)


@dataclass(frozen=True, eq=False)
class ReductionChannels:
    """
    The Hamiltonian driving the unitary part and the observables driving
    reduction, each with its own coupling σ_α.
    """
    hamiltonian: np.ndarray
    operators: Tuple[np.ndarray, ...]
    sigmas: Tuple[float, ...]
    ranges: Tuple[float, ...]
    hamiltonian_only: bool = False

    @property
    def n_channels(self) -> int:
        return len(self.operators)

    @property
    def sigma_squared(self) -> float:
        return float(sum(s * s for s in self.sigmas))

    @classmethod
    def single(cls, dec: SpectralDecomposition, sigma: float) -> 'ReductionChannels':
        matrix = dec.matrix
        return cls(matrix, (matrix,), (float(sigma),), (dec.spectral_range,), hamiltonian_only=True)

    @classmethod
    def commuting(cls, decs: Sequence[SpectralDecomposition], sigmas: Sequence[float],
                  hamiltonian: Optional[SpectralDecomposition] = None,
                  tol: Optional[Tolerances] = None) -> 'ReductionChannels':
        """
        Build a multi-channel family, checking that all observables commute
        with each other and with the Hamiltonian.

        Raises:
            ConfigurationError: On a commutator above tol_herm or mismatched inputs
        """
        tol = resolve_tolerances(tol)
        decs = list(decs)
        if not decs or len(decs) != len(sigmas):
            raise ConfigurationError("Need one coupling per reduction observable")
        hamiltonian = hamiltonian if hamiltonian is not None else decs[0]
        operators = [d.matrix for d in decs]
        everything = [hamiltonian.matrix] + operators
        for a in range(len(everything)):
            for b in range(a + 1, len(everything)):
                norm = commutator_norm(everything[a], everything[b])
                if norm > tol.tol_herm:
                    raise ConfigurationError(f"Observables {a} and {b} do not commute (‖[A,B]‖ = {norm:.3e})")
        if any(s < 0 for s in sigmas):
            raise ConfigurationError("Couplings must be non-negative")
        return cls(hamiltonian.matrix, tuple(operators), tuple(float(s) for s in sigmas),
                   tuple(d.spectral_range for d in decs))


def _increment(psis: np.ndarray, channels: ReductionChannels, dt: float,
               dws: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One Euler–Maruyama step for a (B, N) stack of states and (B, r) increments."""
    drift = -1j * (psis @ channels.hamiltonian.T)
    diffusion = np.zeros_like(psis)
    for alpha, (operator, sigma) in enumerate(zip(channels.operators, channels.sigmas)):
        f_psi = psis @ operator.T
        mean = np.einsum('bi,bi->b', psis.conj(), f_psi).real
        centred = f_psi - mean[:, None] * psis
        centred_sq = centred @ operator.T - mean[:, None] * centred
        drift = drift - 0.125 * sigma * sigma * centred_sq
        diffusion = diffusion + 0.5 * sigma * centred * dws[:, alpha, None]
    stepped = psis + drift * dt + diffusion
    norms = np.linalg.norm(stepped, axis=1)
    return stepped / norms[:, None], np.abs(norms - 1.0)


def em_step_multi(state: StateVector, decs: Sequence[SpectralDecomposition], sigmas: Sequence[float],
                  dt: float, dWs: Sequence[float], hamiltonian: Optional[SpectralDecomposition] = None,
                  step: int = 0, tol: Optional[Tolerances] = None) -> Tuple[StateVector, float]:
    """
    One step of the commuting r-channel reduction equation.

    Returns:
        (renormalized state, |‖ψ + dψ‖ - 1|)
    """
    channels = ReductionChannels.commuting(decs, sigmas, hamiltonian, tol)
    return _step_channels(state, channels, dt, dWs, step, tol)


def em_step(state: StateVector, dec: SpectralDecomposition, sigma: float, dt: float, dW: float,
            step: int = 0, tol: Optional[Tolerances] = None) -> Tuple[StateVector, float]:
    """
    One Euler–Maruyama step of the reduction SDE followed by renormalization.

    Returns:
        (renormalized state, |‖ψ + dψ‖ - 1|)

    Raises:
        NumericBlowupError: If the stepped amplitudes are not finite
    """
    channels = ReductionChannels.commuting([dec], [sigma], tol=tol)
    return _step_channels(state, channels, dt, [dW], step, tol)


def _step_channels(state, channels, dt, dws, step, tol):
    state.validate_normalized(tol)
    dws = np.asarray(dws, dtype=float).reshape(1, -1)
    if dws.shape[1] != channels.n_channels:
        raise InputValidationError(f"Expected {channels.n_channels} Wiener increments, got {dws.shape[1]}")
    if not np.all(np.isfinite(dws)):
        raise InputValidationError("Wiener increments must be finite")
    stepped, norm_error = _increment(state.amplitudes[None, :], channels, dt, dws)
    if not np.all(np.isfinite(stepped)):
        raise NumericBlowupError("Non-finite amplitudes after Euler–Maruyama step", step)
    return StateVector(stepped[0]), float(norm_error[0])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One instrumented realization of the reduction process."""
    times: np.ndarray
    H: np.ndarray
    V: np.ndarray
    beta: np.ndarray
    level_probs: np.ndarray
    complement_expect: np.ndarray
    monitored_levels: Tuple[int, ...]
    noise: np.ndarray
    norm_drift: np.ndarray
    norm_err: np.ndarray
    terminal_level: Optional[int]
    terminal_time: Optional[float]
    initial_state: StateVector
    final_state: StateVector
    states: Optional[np.ndarray] = None
    sup_abs_dH: float = 0.0
    sup_V: float = 0.0


@dataclass(frozen=True, eq=False)
class _BatchSpec:
    start: int
    stop: int
    seed: int
    family: int
    init: InitialCondition
    dec: SpectralDecomposition
    channels: ReductionChannels
    dt: float
    n_steps: int
    stride: int
    threshold: float
    detect_collapse: bool
    monitored_levels: Tuple[int, ...]
    record_states: bool
    record_noise: bool
    noise_chunk: int
    tol: Tolerances


def _observe(psis: np.ndarray, dec: SpectralDecomposition):
    probs = batch_level_probabilities(psis, dec)
    energy = probs @ dec.eigenvalues
    centred = dec.eigenvalues[None, :] - energy[:, None]
    variance = np.maximum(np.sum(probs * centred ** 2, axis=1), 0.0)
    skewness = np.sum(probs * centred ** 3, axis=1)
    return probs, energy, variance, skewness


def _channel_variances(psis: np.ndarray, channels: ReductionChannels) -> np.ndarray:
    result = []
    for operator in channels.operators:
        f_psi = psis @ operator.T
        mean = np.einsum('bi,bi->b', psis.conj(), f_psi).real
        result.append(np.linalg.norm(f_psi - mean[:, None] * psis, axis=1) ** 2)
    return np.stack(result, axis=1)


def _collapsed(variance, psis, spec: _BatchSpec) -> np.ndarray:
    scale = spec.dec.spectral_range ** 2
    done = (variance < spec.threshold * scale) | (variance <= 0.0)
    if not spec.channels.hamiltonian_only:
        channel_var = _channel_variances(psis, spec.channels)
        limits = spec.threshold * np.square(spec.channels.ranges)
        done &= np.all((channel_var < limits[None, :]) | (channel_var <= 0.0), axis=1)
    return done


def _complement(probs, psis, luders, levels):
    if not levels:
        return np.zeros((psis.shape[0], 0))
    overlaps = np.einsum('bki,bi->bk', luders.conj(), psis)
    return probs[:, list(levels)] - np.abs(overlaps) ** 2


def _integrate_batch(spec: _BatchSpec) -> Dict[str, np.ndarray]:
    dec, channels, dt = spec.dec, spec.channels, spec.dt
    size = spec.stop - spec.start
    n_records = spec.n_steps // spec.stride + 1
    streams = [rng.make_streams(spec.seed, i, spec.family) for i in range(spec.start, spec.stop)]
    psi0 = np.stack([sample_initial(spec.init, s.initial).amplitudes for s in streams])
    psis = psi0.copy()
    levels = spec.monitored_levels

    luders = np.zeros((size, len(levels), dec.dimension), dtype=complex)
    probs0 = batch_level_probabilities(psi0, dec)
    for k, level in enumerate(levels):
        projected = psi0 @ dec.projectors[level].T
        usable = probs0[:, level] > spec.tol.tol_prob
        luders[usable, k] = projected[usable] / np.linalg.norm(projected[usable], axis=1)[:, None]

    probs, energy, variance, skewness = _observe(psis, dec)
    h0 = energy.copy()
    rec = {
        'H': np.empty((size, n_records)),
        'V': np.empty((size, n_records)),
        'beta': np.empty((size, n_records)),
        'P': np.empty((size, n_records, dec.n_levels)),
        'Pi': np.empty((size, n_records, len(levels))),
        'Z': np.empty((size, n_records)),
        'norm_err': np.empty((size, n_records)),
    }
    if spec.record_states:
        rec['states'] = np.empty((size, n_records, dec.dimension), dtype=complex)

    z_acc = np.zeros(size)
    norm_last = np.zeros(size)
    norm_max = np.zeros(size)
    sup_dh2 = np.zeros(size)
    sup_v = variance.copy()
    pi_leak = np.zeros(size)
    qv_sxy = np.zeros(size)
    qv_sxx = np.zeros(size)
    terminal_levels = np.full(size, -1, dtype=int)
    terminal_times = np.full(size, np.nan)
    noise = np.zeros((size, spec.n_steps, channels.n_channels)) if spec.record_noise else None
    drift = np.zeros((size, spec.n_steps)) if spec.record_noise else None

    def record(r):
        rec['H'][:, r] = energy
        rec['V'][:, r] = variance
        rec['beta'][:, r] = skewness
        rec['P'][:, r] = probs
        complement = _complement(probs, psis, luders, levels)
        rec['Pi'][:, r] = complement
        if complement.size:
            np.maximum(pi_leak, np.max(np.abs(complement), axis=1), out=pi_leak)
        rec['Z'][:, r] = z_acc
        rec['norm_err'][:, r] = norm_last
        if spec.record_states:
            rec['states'][:, r] = psis

    active = np.ones(size, dtype=bool)
    if spec.detect_collapse:
        done = _collapsed(variance, psis, spec)
        terminal_levels[done] = np.argmax(probs[done], axis=1)
        terminal_times[done] = 0.0
        active &= ~done
    record(0)

    buffer = np.zeros((size, spec.noise_chunk, channels.n_channels))
    sqrt_dt = math.sqrt(dt)
    last_record = 0
    sigma2 = channels.sigma_squared
    for step in range(1, spec.n_steps + 1):
        if not active.any():
            break
        slot = (step - 1) % spec.noise_chunk
        if slot == 0:
            for row in np.flatnonzero(active):
                buffer[row] = streams[row].noise.standard_normal((spec.noise_chunk, channels.n_channels)) * sqrt_dt
        rows = np.flatnonzero(active)
        dws = buffer[rows, slot]
        stepped, norm_error = _increment(psis[rows], channels, dt, dws)
        if not np.all(np.isfinite(stepped)):
            raise NumericBlowupError("Non-finite amplitudes during ensemble integration", step)
        new_probs, new_energy, new_variance, new_skewness = _observe(stepped, dec)

        old_variance = variance[rows]
        weight = old_variance ** 2 * dt
        qv_sxy[rows] += (new_energy - energy[rows]) ** 2 * weight
        qv_sxx[rows] += weight ** 2
        z_acc[rows] += 0.5 * sigma2 * (old_variance ** 2 + new_variance ** 2) * dt

        psis[rows] = stepped
        probs[rows] = new_probs
        energy[rows] = new_energy
        variance[rows] = new_variance
        skewness[rows] = new_skewness
        norm_last[rows] = norm_error
        np.maximum(norm_max, norm_last, out=norm_max)
        np.maximum(sup_dh2, (energy - h0) ** 2, out=sup_dh2)
        np.maximum(sup_v, variance, out=sup_v)
        if noise is not None:
            noise[rows, step - 1] = dws
            drift[rows, step - 1] = norm_error

        if spec.detect_collapse:
            done_local = _collapsed(new_variance, stepped, spec)
            done = rows[done_local]
            terminal_levels[done] = np.argmax(new_probs[done_local], axis=1)
            terminal_times[done] = step * dt
            active[done] = False

        if step % spec.stride == 0:
            last_record = step // spec.stride
            record(last_record)

    for r in range(last_record + 1, n_records):
        norm_last[:] = 0.0
        record(r)

    result = dict(rec)
    result.update({
        'initial_states': psi0,
        'terminal_states': psis,
        'terminal_levels': terminal_levels,
        'terminal_times': terminal_times,
        'sup_dH2': sup_dh2,
        'sup_V': sup_v,
        'qv_sxy': qv_sxy,
        'qv_sxx': qv_sxx,
        'norm_err_max': norm_max,
        'pi_leak_max': pi_leak,
    })
    if noise is not None:
        result['noise'] = noise
        result['norm_drift'] = drift
    return result


def _default_monitored(dec: SpectralDecomposition, config: SimConfig) -> Tuple[int, ...]:
    if config.monitored_levels is not None:
        for level in config.monitored_levels:
            if not 0 <= level < dec.n_levels:
                raise ConfigurationError(f"Monitored level {level} out of range")
        return tuple(config.monitored_levels)
    return dec.degenerate_levels


def _prepare(config: SimConfig, init: InitialCondition, dec: SpectralDecomposition,
             channels: Optional[ReductionChannels], tol: Tolerances):
    config.validate()
    init.validate(tol)
    if init.dimension != dec.dimension:
        raise InputValidationError("Initial state and observable dimensions differ")
    if channels is None:
        channels = ReductionChannels.single(dec, config.sigma)
    tau_r = reduction_time(init, dec, math.sqrt(channels.sigma_squared), tol)
    dt, horizon = config.resolve_timing(tau_r)
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    return channels, dt, n_steps, _default_monitored(dec, config)


def _batch_spec(config, init, dec, channels, dt, n_steps, monitored, start, stop, family,
                record_noise, noise_chunk, tol) -> _BatchSpec:
    return _BatchSpec(
        start=start, stop=stop, seed=config.seed, family=family, init=init, dec=dec,
        channels=channels, dt=dt, n_steps=n_steps, stride=int(config.record_stride),
        threshold=config.collapse_threshold, detect_collapse=config.detect_collapse,
        monitored_levels=monitored, record_states=config.record_states,
        record_noise=record_noise, noise_chunk=int(noise_chunk), tol=tol,
    )


def simulate(config: SimConfig, init: InitialCondition, dec: SpectralDecomposition,
             trajectory_index: int = 0, channels: Optional[ReductionChannels] = None,
             tol: Optional[Tolerances] = None) -> Trajectory:
    """
    Integrate one trajectory until the horizon or until V_t drops below
    ``collapse_threshold``·spectral_range².

    The Wiener increments come from the substream of ``trajectory_index``
    under the master seed ``config.seed``.
    """
    tol = resolve_tolerances(tol)
    channels, dt, n_steps, monitored = _prepare(config, init, dec, channels, tol)
    spec = _batch_spec(config, init, dec, channels, dt, n_steps, monitored,
                       trajectory_index, trajectory_index + 1, rng.FAMILY_SDE, True,
                       get_section('ensemble')['noise_chunk'], tol)
    out = _integrate_batch(spec)
    level = int(out['terminal_levels'][0])
    times = np.arange(out['H'].shape[1]) * spec.stride * dt
    if level >= 0:
        # keep the grid up to the first record holding the terminal values
        keep = times <= out['terminal_times'][0] + (spec.stride - 0.5) * dt
        steps = int(round(out['terminal_times'][0] / dt))
    else:
        keep = np.ones(times.size, dtype=bool)
        steps = n_steps
    logger.debug(f"Trajectory {trajectory_index} finished after {steps} steps, terminal level {level}")
    return Trajectory(
        times=times[keep],
        H=out['H'][0, keep],
        V=out['V'][0, keep],
        beta=out['beta'][0, keep],
        level_probs=out['P'][0, keep],
        complement_expect=out['Pi'][0, keep],
        monitored_levels=monitored,
        noise=out['noise'][0, :steps, 0] if channels.n_channels == 1 else out['noise'][0, :steps],
        norm_drift=out['norm_drift'][0, :steps],
        norm_err=out['norm_err'][0, keep],
        terminal_level=level if level >= 0 else None,
        terminal_time=float(out['terminal_times'][0]) if level >= 0 else None,
        initial_state=StateVector(out['initial_states'][0]),
        final_state=StateVector(out['terminal_states'][0]),
        states=out['states'][0, keep] if config.record_states else None,
        sup_abs_dH=float(math.sqrt(out['sup_dH2'][0])),
        sup_V=float(out['sup_V'][0]),
    )


def _run_batches(specs: List[_BatchSpec], workers: int) -> List[Dict[str, np.ndarray]]:
    if workers <= 1 or len(specs) <= 1:
        return [_integrate_batch(spec) for spec in specs]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        # map preserves submission order, so assembly is ordered by trajectory index
        return list(executor.map(_integrate_batch, specs))


def simulate_ensemble(config: SimConfig, init: InitialCondition, dec: SpectralDecomposition,
                      n_trajectories: int, workers: Optional[int] = None, batch_size: Optional[int] = None,
                      channels: Optional[ReductionChannels] = None, family: int = rng.FAMILY_SDE,
                      tol: Optional[Tolerances] = None) -> EnsembleSeries:
    """
    Integrate ``n_trajectories`` independent trajectories on a common grid.

    Trajectory i always uses substream i and always lands in the same batch,
    so the output is identical for any worker count. After collapse a
    trajectory's recorded values stay frozen at their terminal values.
    """
    tol = resolve_tolerances(tol)
    if n_trajectories < 1:
        raise ConfigurationError("n_trajectories must be at least 1")
    ensemble = get_section('ensemble')
    workers = int(workers if workers is not None else ensemble['workers'])
    batch_size = int(batch_size if batch_size is not None else ensemble['batch_size'])
    channels, dt, n_steps, monitored = _prepare(config, init, dec, channels, tol)
    specs = [
        _batch_spec(config, init, dec, channels, dt, n_steps, monitored, start,
                    min(start + batch_size, n_trajectories), family, False, ensemble['noise_chunk'], tol)
        for start in range(0, n_trajectories, batch_size)
    ]
    logger.info(f"Integrating {n_trajectories} trajectories in {len(specs)} batches, "
                f"{n_steps} steps of dt = {dt:.4g}, workers = {workers}")
    outputs = _run_batches(specs, workers)

    def stacked(key):
        return np.concatenate([out[key] for out in outputs], axis=0)

    n_records = n_steps // int(config.record_stride) + 1
    series = EnsembleSeries(
        times=np.arange(n_records) * int(config.record_stride) * dt,
        eigenvalues=dec.eigenvalues,
        sigma=math.sqrt(channels.sigma_squared),
        dt=dt,
        H=stacked('H'), V=stacked('V'), beta=stacked('beta'), P=stacked('P'), Pi=stacked('Pi'),
        Z=stacked('Z'), norm_err=stacked('norm_err'),
        monitored_levels=monitored,
        terminal_levels=stacked('terminal_levels'),
        terminal_times=stacked('terminal_times'),
        sup_dH2=stacked('sup_dH2'), sup_V=stacked('sup_V'),
        qv_sxy=stacked('qv_sxy'), qv_sxx=stacked('qv_sxx'),
        initial_states=stacked('initial_states'),
        terminal_states=stacked('terminal_states'),
        states=stacked('states') if config.record_states else None,
        norm_err_max=stacked('norm_err_max'),
        pi_leak_max=stacked('pi_leak_max'),
    )
    n_open = int(np.count_nonzero(series.terminal_levels < 0))
    if n_open:
        logger.warning(f"{n_open} of {n_trajectories} trajectories did not collapse before the horizon")
    logger.info(f"Ensemble finished: {n_trajectories - n_open} collapsed")
    return series


def strong_order_check(config: SimConfig, init: InitialCondition, dec: SpectralDecomposition,
                       n_paths: int, t_end: Optional[float] = None, dt: Optional[float] = None,
                       refine: int = 16, tol: Optional[Tolerances] = None) -> Dict[str, float]:
    """
    Empirical strong convergence of the endpoint energy H_T.

    Each path is integrated at dt, dt/2 and dt/refine from the same Brownian
    path, coarse increments being sums of the finest ones. The error measure
    is the mean-square endpoint deviation from the finest run, which for a
    strong order ½ scheme halves when dt halves.

    Returns:
        dict with 'mse_coarse', 'mse_fine' and their 'ratio'
    """
    tol = resolve_tolerances(tol)
    if refine < 2 or refine % 2:
        raise ConfigurationError("refine must be an even integer ≥ 2")
    channels = ReductionChannels.single(dec, config.sigma)
    tau_r = reduction_time(init, dec, config.sigma, tol)
    base_dt, _ = config.resolve_timing(tau_r)
    dt = dt if dt is not None else base_dt
    t_end = t_end if t_end is not None else (tau_r if tau_r is not None else 1.0)
    n_coarse = int(math.ceil(t_end / dt - 1e-9))
    n_fine = n_coarse * refine

    streams = [rng.make_streams(config.seed, i, rng.FAMILY_ORDER_CHECK) for i in range(n_paths)]
    psi0 = np.stack([sample_initial(init, s.initial).amplitudes for s in streams])
    finest = np.stack([s.noise.standard_normal(n_fine) for s in streams]) * math.sqrt(dt / refine)

    def endpoint(factor):
        increments = finest.reshape(n_paths, -1, factor).sum(axis=2)
        psis = psi0.copy()
        step_dt = dt * factor / refine
        for k in range(increments.shape[1]):
            psis, _ = _increment(psis, channels, step_dt, increments[:, k, None])
        return _observe(psis, dec)[1]

    reference = endpoint(1)
    coarse = endpoint(refine)
    fine = endpoint(refine // 2)
    mse_coarse = float(np.mean((coarse - reference) ** 2))
    mse_fine = float(np.mean((fine - reference) ** 2))
    ratio = mse_coarse / mse_fine if mse_fine > 0 else float('inf')
    logger.info(f"Strong order check: MSE {mse_coarse:.3e} -> {mse_fine:.3e}, ratio {ratio:.3f}")
    return {'mse_coarse': mse_coarse, 'mse_fine': mse_fine, 'ratio': ratio, 'dt': dt, 't_end': t_end}
