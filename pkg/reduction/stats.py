"""
Statistical verification of the laws of energy-based state reduction.

Every check returns a ``CheckResult`` whose verdict can be recomputed from
its (statistic, target, tolerance) triple alone. Checks made of several
sub-checks report their worst sub-check at top level and list all of them in
``detail['subchecks']``. Tolerances are ``n_sigma`` standard errors plus the
absolute floor ``tol_num``.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps
from scipy.integrate import cumulative_trapezoid

from .conf import Tolerances, get_section, resolve_tolerances
from .exceptions import InputValidationError
from .hilbert import (
    DensityMatrix,
    SpectralDecomposition,
    StateVector,
    level_probabilities,
    luders_map,
    luders_state,
)
from .io import to_jsonable

logger = logging.getLogger(__name__)

EQUALITY = 'equality'
UPPER_BOUND = 'upper_bound'
NOT_APPLICABLE = 'not_applicable'


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class CheckResult:
    """
    Outcome of one verification.

    For equality checks ``passed`` is |statistic - target| ≤ tolerance; for
    upper-bound checks ``target`` is the bound (allowance included) and
    ``passed`` is statistic ≤ target, with ``tolerance`` the allowance part.
    """
    name: str
    statistic: float
    target: float
    tolerance: float
    n_samples: int
    passed: bool
    kind: str = EQUALITY
    p_value: Optional[float] = None
    detail: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def equality(cls, name, statistic, target, tolerance, n_samples, p_value=None, detail=None):
        statistic, target, tolerance = float(statistic), float(target), float(tolerance)
        return cls(name, statistic, target, tolerance, int(n_samples),
                   bool(abs(statistic - target) <= tolerance), EQUALITY, p_value, detail or {})

    @classmethod
    def upper_bound(cls, name, statistic, bound, allowance, n_samples, p_value=None, detail=None):
        statistic, bound, allowance = float(statistic), float(bound), float(allowance)
        return cls(name, statistic, bound, allowance, int(n_samples),
                   bool(statistic <= bound), UPPER_BOUND, p_value, detail or {})

    @classmethod
    def not_applicable(cls, name, reason):
        return cls(name, float('nan'), float('nan'), 0.0, 0, True, NOT_APPLICABLE, None, {'reason': reason})

    def recompute(self) -> bool:
        if self.kind == NOT_APPLICABLE:
            return True
        if self.kind == UPPER_BOUND:
            return self.statistic <= self.target
        return abs(self.statistic - self.target) <= self.tolerance

    @property
    def margin(self) -> float:
        """Deviation in units of the tolerance; the check passes iff margin ≤ 1."""
        if self.kind == NOT_APPLICABLE:
            return -math.inf
        if self.kind == UPPER_BOUND:
            excess = self.statistic - self.target + self.tolerance
        else:
            excess = abs(self.statistic - self.target)
        if math.isnan(excess):
            return math.inf
        if self.tolerance > 0:
            return excess / self.tolerance
        return 0.0 if self.passed else math.inf

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'kind': self.kind,
            'statistic': _finite_or_none(self.statistic),
            'target': _finite_or_none(self.target),
            'tolerance': _finite_or_none(self.tolerance),
            'n_samples': self.n_samples,
            'passed': self.passed,
            'p_value': _finite_or_none(self.p_value),
            'detail': to_jsonable(self.detail),
        }

    @classmethod
    def composite(cls, name: str, subchecks: Sequence['CheckResult'], detail=None) -> 'CheckResult':
        """Summarize sub-checks by the worst applicable one."""
        subchecks = list(subchecks)
        detail = dict(detail or {})
        detail['subchecks'] = [c.to_dict() for c in subchecks]
        applicable = [c for c in subchecks if c.kind != NOT_APPLICABLE]
        if not applicable:
            return replace(cls.not_applicable(name, 'no applicable sub-check'), detail=detail)
        # rounding keeps exact ties on the first sub-check
        worst = max(applicable, key=lambda c: round(c.margin, 9) if math.isfinite(c.margin) else c.margin)
        detail['worst'] = worst.name
        return replace(worst, name=name, detail={**worst.detail, **detail},
                       n_samples=max(c.n_samples for c in applicable))




@dataclass(frozen=True, eq=False)
class EnsembleSeries:
    """
    Scalar series of an ensemble on a common time grid.

    Arrays are indexed [trajectory, time(, level)]. ``terminal_levels`` is -1
    for trajectories that did not collapse. Suprema, the quadratic-variation
    sums and Z_t = σ²∫V²du are accumulated over every integrator step.
    """
    times: np.ndarray
    eigenvalues: np.ndarray
    sigma: float
    dt: float
    H: np.ndarray
    V: np.ndarray
    beta: np.ndarray
    P: np.ndarray
    Pi: np.ndarray
    Z: np.ndarray
    norm_err: np.ndarray
    monitored_levels: Tuple[int, ...]
    terminal_levels: np.ndarray
    terminal_times: np.ndarray
    sup_dH2: np.ndarray
    sup_V: np.ndarray
    qv_sxy: np.ndarray
    qv_sxx: np.ndarray
    initial_states: np.ndarray
    terminal_states: np.ndarray
    states: Optional[np.ndarray] = None
    norm_err_max: Optional[np.ndarray] = None
    pi_leak_max: Optional[np.ndarray] = None

    @property
    def n_trajectories(self) -> int:
        return self.H.shape[0]

    @property
    def H0(self) -> np.ndarray:
        return self.H[:, 0]

    @property
    def V0(self) -> np.ndarray:
        return self.V[:, 0]

    @property
    def terminated(self) -> np.ndarray:
        return self.terminal_levels >= 0

    @property
    def terminal_energies(self) -> np.ndarray:
        energies = np.full(self.n_trajectories, np.nan)
        done = self.terminated
        energies[done] = self.eigenvalues[self.terminal_levels[done]]
        return energies

    def require_terminated(self):
        open_rows = np.flatnonzero(~self.terminated)
        if open_rows.size:
            shown = ', '.join(str(i) for i in open_rows[:20])
            more = f" and {open_rows.size - 20} more" if open_rows.size > 20 else ''
            raise InputValidationError(f"Unterminated trajectories: {shown}{more}")

    def require_size(self, minimum: int = 100):
        if self.n_trajectories < minimum:
            raise InputValidationError(f"Need at least {minimum} trajectories, got {self.n_trajectories}")

    def time_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


def _settings(n_sigma, tol):
    """Point and time-series sigma multipliers; an explicit n_sigma sets both."""
    verification = get_section('verification')
    if n_sigma is not None:
        point = series = float(n_sigma)
    else:
        point = float(verification['n_sigma'])
        series = float(verification['series_n_sigma'])
    return point, series, resolve_tolerances(tol), verification


def _mean_se(x: np.ndarray, axis: int = 0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    mean = np.mean(x, axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, np.std(x, axis=axis, ddof=1) / math.sqrt(n)


def _series_check(name, times, statistic, target, tolerance, n, kind=EQUALITY, detail=None):
    """Collapse a per-time family of checks into its worst time point."""
    statistic, target, tolerance = (np.broadcast_to(np.asarray(a, dtype=float), np.shape(times))
                                    for a in (statistic, target, tolerance))
    if kind == UPPER_BOUND:
        excess = statistic - target + tolerance
    else:
        excess = np.abs(statistic - target)
    with np.errstate(divide='ignore', invalid='ignore'):
        margin = np.where(tolerance > 0, excess / tolerance, np.where(excess <= 0, 0.0, np.inf))
    margin = np.where(np.isnan(margin), np.inf, margin)
    worst = int(np.argmax(margin))
    info = {'t': float(times[worst]), 'n_times': int(np.size(times))}
    info.update(detail or {})
    build = CheckResult.upper_bound if kind == UPPER_BOUND else CheckResult.equality
    return build(name, statistic[worst], target[worst], tolerance[worst], n, detail=info)


def check_born_frequencies(terminals, expected_pi, n_sigma: Optional[float] = None,
                           tol: Optional[Tolerances] = None, name: str = 'born_frequencies') -> CheckResult:
    """
    Terminal-level frequencies against the Born probabilities π_n.

    Each level is z-tested with an n_sigma binomial tolerance, and the
    chi-square test over levels with π_n > 0 must reach p ≥ chi2_p_min.

    Raises:
        InputValidationError: Fewer than 100 terminals or unterminated entries
    """
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    terminals = np.asarray(terminals, dtype=int)
    pi = np.asarray(expected_pi, dtype=float)
    n = terminals.size
    if n < 100:
        raise InputValidationError(f"Need at least 100 terminal levels, got {n}")
    open_rows = np.flatnonzero(terminals < 0)
    if open_rows.size:
        raise InputValidationError(f"Unterminated trajectories: {', '.join(map(str, open_rows[:20]))}")
    if np.any(terminals >= pi.size):
        raise InputValidationError("Terminal level index exceeds the number of levels")

    counts = np.bincount(terminals, minlength=pi.size)
    freq = counts / n
    subchecks = []
    for k in range(pi.size):
        sd = math.sqrt(max(pi[k] * (1.0 - pi[k]), 0.0) / n)
        subchecks.append(CheckResult.equality(f"level_{k}", freq[k], pi[k], n_sigma * sd + tol.tol_num, n))

    support = pi > tol.tol_prob
    expected = n * pi[support]
    if np.any(counts[~support] > 0):
        chi2, dof, p_value = math.inf, int(support.sum()) - 1, 0.0
    else:
        dof = int(support.sum()) - 1
        chi2 = float(np.sum((counts[support] - expected) ** 2 / expected)) if dof > 0 else 0.0
        p_value = float(sps.chi2.sf(chi2, dof)) if dof > 0 else 1.0
    p_min = float(verification['chi2_p_min'])
    # statistic p_min/p: the aggregate test passes iff p ≥ p_min
    ratio = p_min / p_value if p_value > 0 else math.inf
    subchecks.append(CheckResult.upper_bound('chi_square', ratio, 1.0, 1.0, n, p_value=p_value,
                                             detail={'chi_square': chi2, 'dof': dof}))
    result = CheckResult.composite(name, subchecks, {
        'frequencies': freq, 'expected': pi, 'counts': counts,
        'chi_square': chi2, 'dof': dof, 'chi2_p_min': p_min,
    })
    logger.info(f"{name}: frequencies {np.round(freq, 4).tolist()} vs {np.round(pi, 4).tolist()}, "
                f"chi-square p = {p_value:.3g}")
    return replace(result, p_value=p_value)


def check_energy_martingale(series: EnsembleSeries, n_sigma: Optional[float] = None,
                            tol: Optional[Tolerances] = None) -> CheckResult:
    """
    Weak energy conservation: constant ensemble mean of H_t, terminal mean
    equal to H₀, and increments uncorrelated with the current level.
    """
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    series.require_size()
    n = series.n_trajectories
    h0 = series.H0
    _, drift_se = _mean_se(series.H - h0[:, None])
    subchecks = [_series_check(
        'mean_constancy', series.times, np.mean(series.H, axis=0), np.mean(h0),
        series_sigma * drift_se + tol.tol_num, n,
    )]

    if series.sigma > 0:
        series.require_terminated()
        terminal = series.terminal_energies
        _, se = _mean_se(terminal - h0)
        subchecks.append(CheckResult.equality(
            'terminal_mean', np.mean(terminal), np.mean(h0), n_sigma * se + tol.tol_num, n))
    else:
        subchecks.append(CheckResult.not_applicable('terminal_mean', 'sigma = 0: no reduction takes place'))

    correlations = []
    for j in range(series.times.size - 1):
        level = series.H[:, j]
        increment = series.H[:, j + 1] - level
        if np.count_nonzero(increment) < verification['min_bin']:
            continue
        scale = np.std(level) * np.std(increment)
        if scale <= tol.tol_num ** 2:
            continue
        product, product_se = _mean_se((level - level.mean()) * increment)
        correlations.append((j, product / scale, product_se / scale))
    if correlations:
        j, r, se = max(correlations, key=lambda item: abs(item[1]) / (item[2] or 1.0))
        subchecks.append(CheckResult.equality(
            'increment_orthogonality', r, 0.0, series_sigma * se + tol.tol_num, n,
            detail={'t': float(series.times[j]), 'n_times': len(correlations)}))
    else:
        subchecks.append(CheckResult.not_applicable('increment_orthogonality', 'no fluctuating increments'))
    return CheckResult.composite('energy_martingale', subchecks)


def _per_path(value, n) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (n,))


def _jackknife_variance_se(x: np.ndarray) -> float:
    n = x.size
    if n < 3:
        return 0.0
    total, squares = np.sum(x), np.sum(x * x)
    leave_one_out = (squares - x * x - (total - x) ** 2 / (n - 1)) / (n - 2)
    return float(math.sqrt((n - 1) / n * np.sum((leave_one_out - leave_one_out.mean()) ** 2)))


def check_variance_laws(series: EnsembleSeries, V0=None, sigma: Optional[float] = None,
                        n_sigma: Optional[float] = None, tol: Optional[Tolerances] = None) -> CheckResult:
    """
    Four laws of the variance process: supermartingale decrease of V̄_t,
    the bound V̄_t ≤ V₀/(1+σ²V₀t), E[(H_t-H₀)²] = V₀ - V̄_t and a terminal
    energy variance equal to V₀.
    """
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    series.require_size()
    n = series.n_trajectories
    v0 = _per_path(series.V0 if V0 is None else V0, n)
    sigma = series.sigma if sigma is None else float(sigma)
    times = series.times

    steps = np.diff(series.V, axis=1)
    step_mean, step_se = _mean_se(steps)
    allowance = series_sigma * step_se + tol.tol_num
    subchecks = [_series_check('supermartingale', times[1:], step_mean, allowance, allowance, n, UPPER_BOUND)]

    v_mean, v_se = _mean_se(series.V)
    decay = np.mean(v0[:, None] / (1.0 + sigma ** 2 * v0[:, None] * times[None, :]), axis=0)
    allowance = series_sigma * v_se + tol.tol_num
    subchecks.append(_series_check('decay_bound', times, v_mean, decay + allowance, allowance, n, UPPER_BOUND))

    spread = (series.H - series.H0[:, None]) ** 2
    _, balance_se = _mean_se(spread + series.V - v0[:, None])
    subchecks.append(_series_check(
        'fluctuation_balance', times, np.mean(spread, axis=0), np.mean(v0[:, None] - series.V, axis=0),
        series_sigma * balance_se + tol.tol_num, n))

    if sigma > 0:
        series.require_terminated()
        terminal = series.terminal_energies
        target = float(np.mean(v0) + np.var(series.H0))
        subchecks.append(CheckResult.equality(
            'terminal_variance', np.var(terminal, ddof=1), target,
            n_sigma * _jackknife_variance_se(terminal) + tol.tol_num, n))
    else:
        subchecks.append(CheckResult.not_applicable('terminal_variance', 'sigma = 0: no reduction takes place'))
    return CheckResult.composite('variance_laws', subchecks)


def check_doob_bounds(series: EnsembleSeries, V0=None, lambdas: Optional[Sequence[float]] = None,
                      n_sigma: Optional[float] = None, tol: Optional[Tolerances] = None) -> CheckResult:
    """
    Doob maximal inequalities: E[sup(H_t-H₀)²] ≤ 4V₀ and, for each λ,
    Prob[sup(H_t-H₀)² > λ²V₀] ≤ 1/λ² and Prob[sup V_t > λ²V₀] ≤ 1/λ².
    """
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    series.require_size()
    lambdas = list(lambdas if lambdas is not None else verification['lambdas'])
    n = series.n_trajectories
    v0 = _per_path(series.V0 if V0 is None else V0, n)

    sup_mean, sup_se = _mean_se(series.sup_dH2)
    relative = sup_se / sup_mean if sup_mean > 0 else 0.0
    limit = 4.0 * float(np.mean(v0))
    allowance = limit * n_sigma * relative + tol.tol_num
    subchecks = [CheckResult.upper_bound('l2_maximal', sup_mean, limit + allowance, allowance, n)]

    for lam in lambdas:
        p_bound = min(1.0, 1.0 / lam ** 2)
        allowance = n_sigma * math.sqrt(p_bound * (1.0 - p_bound) / n) + tol.tol_num
        threshold = lam ** 2 * v0
        exceed_h = float(np.mean(series.sup_dH2 > threshold))
        exceed_v = float(np.mean(series.sup_V > threshold))
        subchecks.append(CheckResult.upper_bound(
            f"energy_exceedance_{lam:g}", exceed_h, p_bound + allowance, allowance, n, detail={'lambda': lam}))
        subchecks.append(CheckResult.upper_bound(
            f"variance_exceedance_{lam:g}", exceed_v, p_bound + allowance, allowance, n, detail={'lambda': lam}))
    return CheckResult.composite('doob_bounds', subchecks)


def _default_time_index(series: EnsembleSeries) -> int:
    v0 = float(np.mean(series.V0))
    if series.sigma > 0 and v0 > 0:
        return series.time_index(1.0 / (series.sigma ** 2 * v0))
    return series.times.size // 2


def check_conditional_variance(series: EnsembleSeries, t_index: Optional[int] = None,
                               n_bins: Optional[int] = None, min_bin: Optional[int] = None,
                               n_sigma: Optional[float] = None, tol: Optional[Tolerances] = None) -> CheckResult:
    """
    V_t as the conditional variance of the terminal energy: E[V_t] equals
    E[(H_∞-H_t)²] at every t, and the equality also holds within deciles of
    H_t at one fixed time (default: the grid point nearest τ_R).
    """
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    series.require_size()
    series.require_terminated()
    n = series.n_trajectories
    n_bins = int(n_bins if n_bins is not None else verification['n_bins'])
    min_bin = int(min_bin if min_bin is not None else verification['min_bin'])
    terminal = series.terminal_energies[:, None]
    remaining = (terminal - series.H) ** 2
    _, se = _mean_se(remaining - series.V)
    subchecks = [_series_check('unconditional', series.times, np.mean(remaining, axis=0),
                               np.mean(series.V, axis=0), series_sigma * se + tol.tol_num, n)]

    j = _default_time_index(series) if t_index is None else int(t_index)
    level = series.H[:, j]
    edges = np.quantile(level, np.linspace(0.0, 1.0, n_bins + 1))
    labels = np.searchsorted(edges[1:-1], level, side='right')
    skipped = []
    for b in range(n_bins):
        rows = labels == b
        count = int(rows.sum())
        if count < min_bin:
            skipped.append({'bin': b, 'count': count})
            continue
        x = remaining[rows, j]
        v = series.V[rows, j]
        _, bin_se = _mean_se(x - v)
        subchecks.append(CheckResult.equality(
            f"bin_{b}", np.mean(x), np.mean(v), n_sigma * bin_se + tol.tol_num, count,
            detail={'t': float(series.times[j]), 'h_low': float(edges[b]), 'h_high': float(edges[b + 1])}))
    if skipped:
        logger.warning(f"Conditional variance check skipped {len(skipped)} bins with fewer than {min_bin} samples")
    return CheckResult.composite('conditional_variance', subchecks, {'skipped_bins': skipped})


def _require_pure(series: EnsembleSeries, psi0: StateVector, tol: Tolerances):
    overlaps = np.abs(series.initial_states @ psi0.amplitudes.conj()) ** 2
    if np.any(overlaps < 1.0 - tol.tol_num):
        raise InputValidationError("Confinement check requires every trajectory to start from psi0")


def check_luders_confinement(series: EnsembleSeries, dec: SpectralDecomposition, psi0: StateVector,
                             fid_tol: Optional[float] = None, n_sigma: Optional[float] = None,
                             tol: Optional[Tolerances] = None) -> CheckResult:
    """
    Confinement to the Lüders span for a pure initial state: ensemble mean of
    Π_{nt} consistent with zero, terminal fidelity with the Lüders state, and
    the Doob–Meyer decomposition V_t + Z_t of zero drift.
    """
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    series.require_size()
    _require_pure(series, psi0, tol)
    fid_tol = float(fid_tol if fid_tol is not None else verification['fid_tol'])
    n = series.n_trajectories
    pi0 = level_probabilities(psi0, dec, tol)
    levels = [lv for lv in dec.degenerate_levels if pi0[lv] > tol.tol_prob]

    subchecks = []
    if not levels:
        subchecks.append(CheckResult.not_applicable('complement_mean', 'no degenerate level is populated'))
        subchecks.append(CheckResult.not_applicable('terminal_fidelity', 'no degenerate level is populated'))
    for level in levels:
        if level not in series.monitored_levels:
            raise InputValidationError(f"Level {level} was not monitored during integration")
        column = series.monitored_levels.index(level)
        mean, se = _mean_se(series.Pi[:, :, column])
        allowance = series_sigma * se + tol.tol_num
        subchecks.append(_series_check(f"complement_mean_{level}", series.times, mean, allowance, allowance,
                                       n, UPPER_BOUND, {'level': level}))
        rows = series.terminal_levels == level
        if not rows.any():
            subchecks.append(CheckResult.not_applicable(f"terminal_fidelity_{level}", 'no trajectory ended here'))
            continue
        target = luders_state(psi0, dec, level, tol).amplitudes
        fidelities = np.abs(series.terminal_states[rows] @ target.conj()) ** 2
        subchecks.append(CheckResult.upper_bound(
            f"terminal_fidelity_{level}", 1.0 - float(np.min(fidelities)), fid_tol, fid_tol, int(rows.sum()),
            detail={'level': level, 'min_fidelity': float(np.min(fidelities))}))

    compensated = series.V + series.Z
    _, se = _mean_se(compensated - series.V0[:, None])
    subchecks.append(_series_check('doob_meyer', series.times, np.mean(compensated, axis=0),
                                   np.mean(series.V0), series_sigma * se + tol.tol_num, n))
    detail = {}
    if series.pi_leak_max is not None:
        detail['pathwise_complement_max'] = float(np.max(series.pi_leak_max))
    return CheckResult.composite('luders_confinement', subchecks, detail)


def evaluate_mixed_state_luders(series: EnsembleSeries, rho0: DensityMatrix, dec: SpectralDecomposition,
                                min_bin: Optional[int] = None, n_sigma: Optional[float] = None,
                                tol: Optional[Tolerances] = None) -> CheckResult:
    """
    Terminal densities of a mixed-state ensemble against Σ P̂_nρ̂₀P̂_n, the
    conditional Lüders densities, and outcome frequencies Tr(P̂_nρ̂₀).
    """
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    min_bin = int(min_bin if min_bin is not None else verification['min_bin'])
    series.require_terminated()
    n = series.n_trajectories
    finals = series.terminal_states
    outer = np.einsum('bi,bj->bij', finals, finals.conj())

    target = luders_map(rho0, dec, tol=tol).matrix
    distance = float(np.max(np.abs(outer.mean(axis=0) - target)))
    bound = 4.0 / math.sqrt(n)
    subchecks = [CheckResult.upper_bound('terminal_density', distance, bound, bound, n)]

    weights = np.einsum('nij,ji->n', dec.projectors, rho0.matrix).real
    skipped = []
    for level in range(dec.n_levels):
        rows = series.terminal_levels == level
        count = int(rows.sum())
        if weights[level] <= tol.tol_prob and count == 0:
            continue
        if count < min_bin:
            skipped.append({'level': level, 'count': count})
            continue
        conditional = luders_map(rho0, dec, level, tol).matrix
        distance = float(np.max(np.abs(outer[rows].mean(axis=0) - conditional)))
        bound = 4.0 / math.sqrt(count)
        subchecks.append(CheckResult.upper_bound(f"conditional_density_{level}", distance, bound, bound, count))
    if skipped:
        logger.warning(f"Mixed-state check skipped conditional densities for {skipped}")

    subchecks.append(check_born_frequencies(series.terminal_levels, weights, n_sigma, tol, 'outcome_frequencies'))
    return CheckResult.composite('mixed_state_luders', subchecks, {'skipped_outcomes': skipped})


def check_mixed_state_luders(mixture, dec: SpectralDecomposition, sigma: float, n_traj: int,
                             config=None, workers: Optional[int] = None,
                             tol: Optional[Tolerances] = None) -> CheckResult:
    """
    Run the mixed-initial-state pipeline: sample |Ψ₀⟩ from the mixture,
    evolve to collapse and compare terminal densities with the Lüders rule.
    """
    from . import rng
    from .sde import SimConfig, simulate_ensemble

    config = config if config is not None else SimConfig.from_settings(sigma=sigma)
    config = replace(config, sigma=float(sigma))
    series = simulate_ensemble(config, mixture, dec, n_traj, workers=workers,
                               family=rng.FAMILY_MIXTURE_CHECK, tol=tol)
    return evaluate_mixed_state_luders(series, mixture.density(), dec, tol=tol)


def check_projection_martingales(series: EnsembleSeries, n_sigma: Optional[float] = None,
                                 tol: Optional[Tolerances] = None) -> CheckResult:
    """Each P_{nt} is a martingale, so its ensemble mean stays at P_{n0}."""
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    series.require_size()
    n = series.n_trajectories
    subchecks = []
    for level in range(series.P.shape[2]):
        values = series.P[:, :, level]
        _, se = _mean_se(values - values[:, :1])
        subchecks.append(_series_check(f"level_{level}", series.times, np.mean(values, axis=0),
                                       np.mean(values[:, 0]), series_sigma * se + tol.tol_num, n))
    return CheckResult.composite('projection_martingales', subchecks)


def check_terminal_moments(series: EnsembleSeries, orders: Sequence[int] = (1, 2, 3, 4),
                           n_sigma: Optional[float] = None, tol: Optional[Tolerances] = None) -> CheckResult:
    """The terminal energy has moments Σπ_nE_n^k, since every H^(k)_t is a martingale."""
    n_sigma, series_sigma, tol, verification = _settings(n_sigma, tol)
    series.require_size()
    series.require_terminated()
    n = series.n_trajectories
    terminal = series.terminal_energies
    subchecks = []
    for k in orders:
        initial = series.P[:, 0, :] @ series.eigenvalues ** k
        _, se = _mean_se(terminal ** k - initial)
        subchecks.append(CheckResult.equality(
            f"moment_{k}", np.mean(terminal ** k), np.mean(initial), n_sigma * se + tol.tol_num, n))
    return CheckResult.composite('terminal_moments', subchecks)


def check_increment_variance(series: EnsembleSeries, sigma: Optional[float] = None,
                             rel_tol: Optional[float] = None) -> CheckResult:
    """Regression slope of (ΔH)² on V_t²Δ over all integrator steps equals σ²."""
    verification = get_section('verification')
    rel_tol = float(rel_tol if rel_tol is not None else verification['increment_rel_tol'])
    sigma = series.sigma if sigma is None else float(sigma)
    denominator = float(np.sum(series.qv_sxx))
    if denominator <= 0:
        return CheckResult.not_applicable('increment_variance', 'no fluctuating steps')
    slope = float(np.sum(series.qv_sxy)) / denominator
    return CheckResult.equality('increment_variance', slope, sigma ** 2, rel_tol * sigma ** 2,
                                series.n_trajectories)


def ks_two_sample(a, b, name: str = 'ks_two_sample', alpha: Optional[float] = None) -> CheckResult:
    """Two-sample Kolmogorov–Smirnov statistic against its asymptotic critical value."""
    alpha = float(alpha if alpha is not None else get_section('verification')['ks_alpha'])
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    result = sps.ks_2samp(a, b)
    n, m = a.size, b.size
    critical = math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n + m) / (n * m))
    return CheckResult.upper_bound(name, result.statistic, critical, critical, min(n, m),
                                   p_value=float(result.pvalue), detail={'alpha': alpha, 'n_a': n, 'n_b': m})


def variance_diagnostics(series: EnsembleSeries, V0=None, sigma: Optional[float] = None) -> Dict[str, List]:
    """
    η̂_t = Var[V_t]/V̄_t² and ξ̂_t = ∫η̂ ds, with the decay law they imply.

    These are exact identities only for an infinite ensemble, so no verdict
    is attached.
    """
    sigma = series.sigma if sigma is None else float(sigma)
    v0 = float(np.mean(series.V0 if V0 is None else V0))
    v_mean = np.mean(series.V, axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        eta = np.where(v_mean > 0, np.var(series.V, axis=0) / v_mean ** 2, np.nan)
        localisation = np.where(v_mean > 0, 1.0 / v_mean, np.nan)
    xi = cumulative_trapezoid(np.nan_to_num(eta), series.times, initial=0.0)
    implied = v0 / (1.0 + sigma ** 2 * v0 * (series.times + xi))
    return to_jsonable({
        'times': series.times,
        'mean_V': v_mean,
        'eta': eta,
        'xi': xi,
        'implied_mean_V': implied,
        'localisation': localisation,
    })


def family_wise_error(n_checks: int, n_sigma: Optional[float] = None) -> float:
    """Chance that at least one of n independent two-sided n_sigma tests fails under the null."""
    n_sigma = float(n_sigma if n_sigma is not None else get_section('verification')['n_sigma'])
    single = 2.0 * float(sps.norm.sf(n_sigma))
    return 1.0 - (1.0 - single) ** n_checks


def report_table(checks: Sequence[CheckResult]) -> str:
    """Human-readable table of check results."""
    lines = [f"{'check':<28} {'statistic':>14} {'target':>14} {'tolerance':>12} {'n':>7}  verdict"]
    for check in checks:
        if check.kind == NOT_APPLICABLE:
            lines.append(f"{check.name:<28} {'-':>14} {'-':>14} {'-':>12} {'-':>7}  n/a")
            continue
        relation = '<=' if check.kind == UPPER_BOUND else '=='
        verdict = 'PASS' if check.passed else 'FAIL'
        lines.append(f"{check.name:<28} {check.statistic:>14.6g} {relation} {check.target:>11.6g} "
                     f"{check.tolerance:>12.3g} {check.n_samples:>7}  {verdict}")
    return '\n'.join(lines)
