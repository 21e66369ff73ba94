"""
Closed-form machinery of the reduction process under a change of measure.

Under the measure Q with density Λ*_t the process W*_t = W_t + σ∫H_s ds is a
Brownian motion and the whole state is a function of (W*_t, t):

    P_nt = π_n exp(σE_nW* - ½σ²E_n²t) / Λ*_t,   Λ*_t = Σ_n π_n exp(σE_nW* - ½σ²E_n²t)

All exponential sums are evaluated in log space (shift by the largest
exponent), so the ratios stay finite when σE_nW* reaches hundreds.

Q computations are restricted to finite horizons.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import logsumexp, softmax

from . import rng
from .conf import Tolerances, get_section, resolve_tolerances
from .exceptions import ConfigurationError, InputValidationError, NumericBlowupError, NumericError
from .hilbert import (
    DensityMatrix,
    HermitianObservable,
    SpectralDecomposition,
    StateVector,
    level_probabilities,
)
from .sde import InitialCondition, sample_initial

logger = logging.getLogger(__name__)


def _probability_vector(pi, eigenvalues, tol: Tolerances):
    pi = np.asarray(pi, dtype=float)
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if pi.shape[-1] != eigenvalues.size:
        raise InputValidationError(f"pi has {pi.shape[-1]} entries for {eigenvalues.size} eigenvalues")
    if np.any(~np.isfinite(pi)) or np.any(pi < -tol.tol_prob):
        raise InputValidationError("pi must be a vector of non-negative probabilities")
    totals = pi.sum(axis=-1)
    if np.any(np.abs(totals - 1.0) > tol.tol_norm):
        raise InputValidationError(f"pi must sum to 1, got {totals}")
    return np.clip(pi, 0.0, None), eigenvalues


def _log_weights(pi, eigenvalues, sigma, wstar, t):
    """a_n = log π_n + σE_nW* - ½σ²E_n²t, broadcast over leading axes of wstar and t."""
    with np.errstate(divide='ignore'):
        log_pi = np.log(pi)
    wstar = np.asarray(wstar, dtype=float)[..., None]
    t = np.asarray(t, dtype=float)[..., None]
    return log_pi + sigma * eigenvalues * wstar - 0.5 * sigma ** 2 * eigenvalues ** 2 * t


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def projector_martingale_closed_form(pi, eigenvalues, sigma: float, wstar, t,
                                     tol: Optional[Tolerances] = None) -> np.ndarray:
    """P_nt as a function of (W*, t); the last axis runs over levels."""
    pi, eigenvalues = _probability_vector(pi, eigenvalues, resolve_tolerances(tol))
    return softmax(_log_weights(pi, eigenvalues, sigma, wstar, t), axis=-1)


def h_of_wstar(pi, eigenvalues, sigma: float, wstar, t, tol: Optional[Tolerances] = None):
    """
    The energy process H_t = Σ_n E_n P_nt as a function of (W*_t, t).

    Accepts scalar or array ``wstar``/``t``; the result lies in [E_-, E_+].
    """
    tol = resolve_tolerances(tol)
    if np.any(np.asarray(t) < 0):
        raise InputValidationError("t must be non-negative")
    pi, eigenvalues = _probability_vector(pi, eigenvalues, tol)
    weights = softmax(_log_weights(pi, eigenvalues, sigma, wstar, t), axis=-1)
    energy = np.clip(weights @ eigenvalues, eigenvalues.min(), eigenvalues.max())
    return _scalar(energy)


def lambda_star_of_wstar(pi, eigenvalues, sigma: float, wstar, t, log: bool = False,
                         tol: Optional[Tolerances] = None):
    """
    Λ*_t = Σ_n π_n exp(σE_nW* - ½σ²E_n²t), the density dP/dQ on paths up to t.

    With ``log=True`` returns log Λ*_t, which never overflows.
    """
    tol = resolve_tolerances(tol)
    if np.any(np.asarray(t) < 0):
        raise InputValidationError("t must be non-negative")
    pi, eigenvalues = _probability_vector(pi, eigenvalues, tol)
    value = logsumexp(_log_weights(pi, eigenvalues, sigma, wstar, t), axis=-1)
    return _scalar(value if log else np.exp(value))


def state_closed_form(psi0: StateVector, dec: SpectralDecomposition, sigma: float, wstar: float, t: float,
                      tol: Optional[Tolerances] = None) -> StateVector:
    """
    |ψ_t⟩ = e^{-iĤt} exp(½σĤW* - ¼σ²Ĥ²t)|ψ₀⟩ / √Λ*_t.

    Levels with π_n = 0 get a zero factor, so their (vanishing) components
    are never multiplied by an overflowing exponential.
    """
    tol = resolve_tolerances(tol)
    if t < 0:
        raise InputValidationError("t must be non-negative")
    pi = level_probabilities(psi0, dec, tol)
    energies = dec.eigenvalues
    exponent = sigma * energies * wstar - 0.5 * sigma ** 2 * energies ** 2 * t
    with np.errstate(divide='ignore'):
        log_lambda = logsumexp(np.log(pi) + exponent)
    factor = np.zeros(dec.n_levels, dtype=complex)
    support = pi > 0
    factor[support] = np.exp(-1j * energies[support] * t + 0.5 * (exponent[support] - log_lambda))
    coefficients = dec.basis.conj().T @ psi0.amplitudes
    per_basis = np.repeat(factor, dec.multiplicities)
    return StateVector(dec.basis @ (per_basis * coefficients))


def lambda_physical_path(H, dW, sigma: float, dt: float) -> np.ndarray:
    """
    Λ_t = exp(-σ∫H dW - ½σ²∫H² ds) accumulated with Itô sums.

    Args:
        H: Energy at the step boundaries, length n + 1
        dW: Physical Wiener increments, length n

    Returns:
        Λ at the n + 1 step boundaries, starting at 1
    """
    H = np.asarray(H, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if H.size != dW.size + 1:
        raise InputValidationError("H must have one more entry than dW")
    increments = -sigma * H[:-1] * dW - 0.5 * sigma ** 2 * H[:-1] ** 2 * dt
    return np.exp(np.concatenate([[0.0], np.cumsum(increments)]))


def reconstruct_wstar(H, dW, sigma: float, dt: float) -> np.ndarray:
    """W*_t = W_t + σ∫H ds with the integral by the trapezoidal rule."""
    H = np.asarray(H, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if H.size != dW.size + 1:
        raise InputValidationError("H must have one more entry than dW")
    brownian = np.concatenate([[0.0], np.cumsum(dW)])
    return brownian + sigma * cumulative_trapezoid(H, dx=dt, initial=0.0)


@dataclass(frozen=True, eq=False)
class GirsanovSample:
    """
    One path of the scalar W* process under the physical measure.

    ``log_lambda_star`` is stored rather than Λ*_t itself, which grows like a
    geometric Brownian motion under P.
    """
    times: np.ndarray
    wstar: np.ndarray
    log_lambda_star: np.ndarray
    H: np.ndarray
    V: np.ndarray
    noise: np.ndarray
    log_lambda_physical: np.ndarray
    terminal_level: Optional[int] = None
    terminal_time: Optional[float] = None

    @property
    def lambda_star(self) -> np.ndarray:
        return np.exp(self.log_lambda_star)

    @property
    def weight(self) -> float:
        """Λ*_t at the last recorded time."""
        return float(np.exp(self.log_lambda_star[-1]))


def _wstar_paths(pi, eigenvalues, sigma, dt, n_steps, stride, threshold, generators,
                 noise_chunk, detect_collapse, record_noise):
    """Vectorized Euler scheme for dW* = σH(W*, t)dt + dW, one generator per row."""
    size = pi.shape[0]
    n_records = n_steps // stride + 1
    with np.errstate(divide='ignore'):
        log_pi = np.log(pi)
    e2 = eigenvalues ** 2
    scale = (eigenvalues.max() - eigenvalues.min()) ** 2

    def observe(w, log_p, t):
        a = log_p + sigma * eigenvalues * w[:, None] - 0.5 * sigma ** 2 * e2 * t
        probs = softmax(a, axis=1)
        energy = probs @ eigenvalues
        variance = np.maximum(probs @ e2 - energy ** 2, 0.0)
        return probs, energy, variance, logsumexp(a, axis=1)

    wstar = np.zeros(size)
    log_phys = np.zeros(size)
    probs, energy, variance, log_star = observe(wstar, log_pi, 0.0)
    rec = {key: np.empty((size, n_records)) for key in ('wstar', 'H', 'V', 'log_lambda_star', 'log_lambda')}
    noise = np.zeros((size, n_steps)) if record_noise else None
    terminal_levels = np.full(size, -1, dtype=int)
    terminal_times = np.full(size, np.nan)

    def record(r):
        rec['wstar'][:, r] = wstar
        rec['H'][:, r] = energy
        rec['V'][:, r] = variance
        rec['log_lambda_star'][:, r] = log_star
        rec['log_lambda'][:, r] = log_phys

    active = np.ones(size, dtype=bool)
    if detect_collapse:
        done = (variance < threshold * scale) | (variance <= 0.0)
        terminal_levels[done] = np.argmax(probs[done], axis=1)
        terminal_times[done] = 0.0
        active &= ~done
    record(0)

    buffer = np.zeros((size, noise_chunk))
    sqrt_dt = math.sqrt(dt)
    last_record = 0
    for step in range(1, n_steps + 1):
        if not active.any():
            break
        slot = (step - 1) % noise_chunk
        if slot == 0:
            for row in np.flatnonzero(active):
                buffer[row] = generators[row].standard_normal(noise_chunk) * sqrt_dt
        rows = np.flatnonzero(active)
        dw = buffer[rows, slot]
        h = energy[rows]
        log_phys[rows] += -sigma * h * dw - 0.5 * sigma ** 2 * h ** 2 * dt
        wstar[rows] += sigma * h * dt + dw
        if not np.all(np.isfinite(wstar[rows])):
            raise NumericBlowupError("Non-finite W* during scalar integration", step)
        new = observe(wstar[rows], log_pi[rows], step * dt)
        probs[rows], energy[rows], variance[rows], log_star[rows] = new
        if noise is not None:
            noise[rows, step - 1] = dw
        if detect_collapse:
            done_local = (new[2] < threshold * scale) | (new[2] <= 0.0)
            done = rows[done_local]
            terminal_levels[done] = np.argmax(new[0][done_local], axis=1)
            terminal_times[done] = step * dt
            active[done] = False
        if step % stride == 0:
            last_record = step // stride
            record(last_record)
    for r in range(last_record + 1, n_records):
        record(r)

    result = dict(rec)
    result.update({'terminal_levels': terminal_levels, 'terminal_times': terminal_times})
    if noise is not None:
        result['noise'] = noise
    return result


def simulate_wstar_physical(pi, eigenvalues, sigma: float, dt: float, horizon: float,
                            stream: np.random.Generator, record_stride: int = 1,
                            collapse_threshold: Optional[float] = None, detect_collapse: bool = True,
                            tol: Optional[Tolerances] = None) -> GirsanovSample:
    """
    Integrate the single scalar SDE dW* = σH(W*, t)dt + dW under P.

    H_t and Λ*_t are recomputed in closed form from (W*_t, t) at every step,
    so the law of H_t is that of the full Hilbert-space equation.
    """
    tol = resolve_tolerances(tol)
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if horizon < 0:
        raise ConfigurationError(f"horizon must be non-negative, got {horizon}")
    pi, eigenvalues = _probability_vector(pi, eigenvalues, tol)
    threshold = collapse_threshold if collapse_threshold is not None else get_section('simulation')['collapse_threshold']
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    stride = int(record_stride)
    out = _wstar_paths(pi[None, :], eigenvalues, sigma, dt, n_steps, stride, threshold, [stream],
                       get_section('ensemble')['noise_chunk'], detect_collapse, True)
    times = np.arange(n_steps // stride + 1) * stride * dt
    level = int(out['terminal_levels'][0])
    if level >= 0:
        terminal_time = float(out['terminal_times'][0])
        keep = times <= terminal_time + (stride - 0.5) * dt
        steps = int(round(terminal_time / dt))
    else:
        terminal_time = None
        keep = np.ones(times.size, dtype=bool)
        steps = n_steps
    return GirsanovSample(
        times=times[keep],
        wstar=out['wstar'][0, keep],
        log_lambda_star=out['log_lambda_star'][0, keep],
        H=out['H'][0, keep],
        V=out['V'][0, keep],
        noise=out['noise'][0, :steps],
        log_lambda_physical=out['log_lambda'][0, keep],
        terminal_level=level if level >= 0 else None,
        terminal_time=terminal_time,
    )


@dataclass(frozen=True, eq=False)
class WstarEnsemble:
    """Scalar-SDE ensemble on a common grid, frozen after collapse like the full ensemble."""
    times: np.ndarray
    eigenvalues: np.ndarray
    sigma: float
    wstar: np.ndarray
    H: np.ndarray
    V: np.ndarray
    log_lambda_star: np.ndarray
    log_lambda_physical: np.ndarray
    pi: np.ndarray
    terminal_levels: np.ndarray
    terminal_times: np.ndarray

    @property
    def n_trajectories(self) -> int:
        return self.H.shape[0]


def _wstar_batch(args):
    pi, eigenvalues, sigma, dt, n_steps, stride, threshold, seed, start, stop, chunk = args
    generators = [rng.make_streams(seed, i, rng.FAMILY_GIRSANOV_PHYSICAL).noise for i in range(start, stop)]
    return _wstar_paths(pi, eigenvalues, sigma, dt, n_steps, stride, threshold,
                        generators, chunk, True, False)


def simulate_wstar_ensemble(init: InitialCondition, dec: SpectralDecomposition, sigma: float, dt: float,
                            horizon: float, n_trajectories: int, seed: int, record_stride: int = 100,
                            collapse_threshold: Optional[float] = None, workers: Optional[int] = None,
                            batch_size: Optional[int] = None, tol: Optional[Tolerances] = None) -> WstarEnsemble:
    """
    Ensemble version of ``simulate_wstar_physical``.

    Mixtures are handled by sampling |Ψ₀⟩ per trajectory first, since the
    closed form conditions on a pure initial state. Batching follows
    ``sde.simulate_ensemble`` so worker count never changes the output.
    """
    from concurrent.futures import ProcessPoolExecutor

    tol = resolve_tolerances(tol)
    init.validate(tol)
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    ensemble = get_section('ensemble')
    workers = int(workers if workers is not None else ensemble['workers'])
    batch_size = int(batch_size if batch_size is not None else ensemble['batch_size'])
    threshold = collapse_threshold if collapse_threshold is not None else get_section('simulation')['collapse_threshold']
    pi = np.stack([
        level_probabilities(sample_initial(init, rng.make_streams(seed, i, rng.FAMILY_GIRSANOV_PHYSICAL).initial),
                            dec, tol)
        for i in range(n_trajectories)
    ])
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    stride = int(record_stride)
    jobs = [(pi[start:start + batch_size], dec.eigenvalues, sigma, dt, n_steps, stride, threshold, seed, start,
             min(start + batch_size, n_trajectories), ensemble['noise_chunk'])
            for start in range(0, n_trajectories, batch_size)]
    logger.info(f"Integrating {n_trajectories} scalar W* paths, {n_steps} steps of dt = {dt:.4g}")
    if workers <= 1 or len(jobs) <= 1:
        outputs = [_wstar_batch(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            outputs = list(executor.map(_wstar_batch, jobs))

    def stacked(key):
        return np.concatenate([out[key] for out in outputs], axis=0)

    result = WstarEnsemble(
        times=np.arange(n_steps // stride + 1) * stride * dt,
        eigenvalues=dec.eigenvalues, sigma=float(sigma),
        wstar=stacked('wstar'), H=stacked('H'), V=stacked('V'),
        log_lambda_star=stacked('log_lambda_star'), log_lambda_physical=stacked('log_lambda'),
        pi=pi, terminal_levels=stacked('terminal_levels'), terminal_times=stacked('terminal_times'),
    )
    n_open = int(np.count_nonzero(result.terminal_levels < 0))
    if n_open:
        logger.warning(f"{n_open} of {n_trajectories} scalar paths did not collapse before the horizon")
    return result


@dataclass(frozen=True, eq=False)
class QSample:
    """Single-time draws W*_t ~ N(0, t) under Q with their densities Λ*_t."""
    t: float
    wstar: np.ndarray
    H: np.ndarray
    log_weight: np.ndarray

    @property
    def weight(self) -> np.ndarray:
        return np.exp(self.log_weight)


def sample_q_terminal(pi, eigenvalues, sigma: float, t: float, n: int, stream: np.random.Generator,
                      tol: Optional[Tolerances] = None) -> QSample:
    """
    Sample W*_t directly from N(0, t).

    Valid only for functionals of (W*_t, t) at one time; path functionals
    such as suprema need ``simulate_wstar_physical``.
    """
    if t < 0:
        raise InputValidationError("t must be non-negative")
    wstar = stream.standard_normal(int(n)) * math.sqrt(t)
    energy = h_of_wstar(pi, eigenvalues, sigma, wstar, t, tol)
    log_weight = lambda_star_of_wstar(pi, eigenvalues, sigma, wstar, t, log=True, tol=tol)
    return QSample(float(t), wstar, np.asarray(energy), np.asarray(log_weight))


def ensemble_average_observable(G: HermitianObservable, rho0: DensityMatrix, dec: SpectralDecomposition,
                                sigma: float, t: float, tol: Optional[Tolerances] = None) -> float:
    """
    E[⟨ψ_t|Ĝ|ψ_t⟩] = Σ_mn Ḡ_mn exp(i(E_m-E_n)t - ⅛σ²(E_m-E_n)²t), Ḡ_mn = Tr Ĝ(P̂_nρ̂₀P̂_m).

    Returns the real part. For Hermitian Ĝ the imaginary part vanishes up to
    rounding.

    Raises:
        NumericError: If the imaginary part exceeds tol_num
    """
    tol = resolve_tolerances(tol)
    rho0.validate(tol)
    G.validate(tol)
    if t < 0:
        raise InputValidationError("t must be non-negative")
    if G.dimension != dec.dimension or rho0.dimension != dec.dimension:
        raise InputValidationError("Observable, density and decomposition dimensions differ")
    blocks = np.einsum('nij,jk,mkl->nmil', dec.projectors, rho0.matrix, dec.projectors)
    g_bar = np.einsum('ji,nmij->nm', G.matrix, blocks)
    energies = dec.eigenvalues
    gaps = energies[None, :] - energies[:, None]
    damping = np.exp(1j * gaps * t - 0.125 * sigma ** 2 * gaps ** 2 * t)
    average = complex(np.sum(g_bar * damping))
    if abs(average.imag) > tol.tol_num:
        raise NumericError(f"Ensemble average has imaginary part {average.imag:.3e} above tol_num")
    return average.real


@dataclass(frozen=True)
class WeightedEstimate:
    mean: float
    standard_error: float
    effective_sample_size: float
    n_samples: int
    warning: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            'mean': self.mean,
            'standard_error': self.standard_error,
            'effective_sample_size': self.effective_sample_size,
            'n_samples': self.n_samples,
            'warning': self.warning,
        }


def weighted_expectation(values: Sequence[float], weights: Sequence[float], log_weights: bool = False,
                         ess_warning: Optional[float] = None) -> WeightedEstimate:
    """
    Self-normalized importance estimate Σw_ix_i / Σw_i.

    The standard error is the delta-method one, √Σ(w̃_i²(x_i - mean)²) with
    normalized weights w̃. A degeneracy warning is attached when the effective
    sample size (Σw)²/Σw² falls below ``ess_warning``.

    Args:
        values: x_i drawn under Q
        weights: Λ*_t for each draw, or log Λ*_t with ``log_weights``
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.shape != w.shape or x.size == 0:
        raise InputValidationError("values and weights must be non-empty and of equal length")
    if log_weights:
        w = np.exp(w - np.max(w))
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InputValidationError("weights must be finite and positive")
    total = np.sum(w)
    mean = float(np.sum(w * x) / total)
    normalized = w / total
    standard_error = float(math.sqrt(np.sum(normalized ** 2 * (x - mean) ** 2)))
    ess = float(total ** 2 / np.sum(w * w))
    threshold = float(ess_warning if ess_warning is not None else get_section('girsanov')['ess_warning'])
    warning = None
    if ess < threshold:
        warning = f"effective sample size {ess:.1f} below {threshold:g}"
        logger.warning(f"Importance weights degenerate: {warning}")
    return WeightedEstimate(mean, standard_error, ess, int(x.size), warning)


def q_time_grid(pi, eigenvalues, sigma: float, times: Sequence[float], n: int, seed: int,
                tol: Optional[Tolerances] = None) -> List[Dict[str, object]]:
    """
    Importance-weighted estimates of E[H_t], E^Q[Λ*_t] and E[V_t] at each time.

    Each time point draws from its own Q substream.
    """
    tol = resolve_tolerances(tol)
    pi, eigenvalues = _probability_vector(pi, eigenvalues, tol)
    rows = []
    for index, t in enumerate(times):
        sample = sample_q_terminal(pi, eigenvalues, sigma, t, n, rng.stream(seed, index, rng.FAMILY_GIRSANOV_Q), tol)
        probs = projector_martingale_closed_form(pi, eigenvalues, sigma, sample.wstar, t, tol)
        variance = np.maximum(probs @ eigenvalues ** 2 - sample.H ** 2, 0.0)
        weight = sample.weight
        rows.append({
            't': float(t),
            'H': weighted_expectation(sample.H, sample.log_weight, log_weights=True).to_dict(),
            'V': weighted_expectation(variance, sample.log_weight, log_weights=True).to_dict(),
            'lambda_star_mean': float(np.mean(weight)),
            'lambda_star_se': float(np.std(weight, ddof=1) / math.sqrt(weight.size)) if weight.size > 1 else 0.0,
        })
    return rows
