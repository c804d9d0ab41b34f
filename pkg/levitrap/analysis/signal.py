"""
Detection and spectral analysis.

Turns simulated motion into detector voltages, estimates one-sided power
spectral densities with Welch's method and fits resonance lineshapes.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.ndimage import uniform_filter1d
from scipy.optimize import curve_fit
from scipy.signal import get_window, welch

from ..core.constants import AXES, CONSTANTS
from ..core.exceptions import FitError, ModeNotFoundError, MultiplePeaksError, SegmentTooLongError, ValidationError
from ..core.models import DetectionConfig
from ..physics.dynamics import SimTrajectory

logger = logging.getLogger(__name__)

LINESHAPES = ("lorentzian", "thermal")
MIN_FIT_POINTS = 8
# two-peak model must cut the weighted residual at least this much
MULTI_PEAK_RESIDUAL_RATIO = 0.5
MULTI_PEAK_MIN_AREA_RATIO = 0.1
HANN_ENBW_BINS = 1.5


@dataclass(frozen=True)
class VoltageTrace:
    """Sampled detector signal of one channel."""
    sample_rate: float  # Hz
    samples: np.ndarray  # V
    axis: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("trace.samples", self.axis, "samples must be finite")

    @property
    def variance(self) -> float:
        return float(np.var(self.samples))

    def to_frame(self) -> pd.DataFrame:
        t = np.arange(self.samples.size) / self.sample_rate
        return pd.DataFrame({"time_s": t, "voltage_v": self.samples})


@dataclass(frozen=True)
class Psd:
    """One-sided power spectral density in V^2/Hz."""
    frequencies: np.ndarray  # Hz, ascending
    values: np.ndarray  # V^2/Hz
    resolution_bandwidth: float  # Hz, ENBW of the segment window
    n_averages: int

    @property
    def bin_width(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def total_power(self) -> float:
        """Sum of values times bin width, the Parseval counterpart of the variance."""
        return float(np.sum(self.values) * self.bin_width)

    def band(self, window: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = window
        mask = (self.frequencies >= lo) & (self.frequencies <= hi)
        return self.frequencies[mask], self.values[mask]

    def peak_frequency(self, window: Tuple[float, float]) -> float:
        f, s = self.band(window)
        if f.size == 0:
            raise ModeNotFoundError(window)
        return float(f[np.argmax(s)])

    def level_db(self, frequency: float) -> float:
        """PSD value at the bin nearest ``frequency`` in dB re 1 V^2/Hz."""
        k = int(np.argmin(np.abs(self.frequencies - frequency)))
        return 10.0 * math.log10(self.values[k])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"frequency_hz": self.frequencies, "psd_v2_per_hz": self.values})


@dataclass(frozen=True)
class LorentzianFit:
    """Fitted resonance. Frequencies and linewidth in Hz, area in V^2."""
    center_frequency: float
    linewidth: float  # FWHM, gamma / 2 pi
    area: float
    offset: float  # V^2/Hz
    center_frequency_error: float
    linewidth_error: float
    area_error: float
    offset_error: float
    numeric_area: float  # trapezoid integral of (S - offset) over the window
    model: str
    window: Tuple[float, float]

    @property
    def damping_rate(self) -> float:
        """Energy damping rate in 1/s."""
        return 2.0 * math.pi * self.linewidth

    @property
    def peak_height(self) -> float:
        return 2.0 * self.area / (math.pi * self.linewidth)


def transduce(
    traj: SimTrajectory, det: DetectionConfig, rng_seed: int = 0
) -> Dict[str, VoltageTrace]:
    """
    Detector voltages V_i = sum_j G_ij u_j + beta2 (sum_j G_ij u_j)^2 + n_i.

    The noise n_i is white with one-sided PSD ``det.noise_floor`` and drawn
    from its own stream so detection never perturbs the motion record.
    """
    signal = det.gain_matrix() @ traj.positions
    if det.quadratic_coefficient:
        signal = signal + det.quadratic_coefficient * signal**2
    if det.noise_floor > 0:
        rng = np.random.default_rng(rng_seed)
        sigma = math.sqrt(det.noise_floor * traj.sample_rate / 2.0)
        signal = signal + sigma * rng.standard_normal(signal.shape)
    return {axis: VoltageTrace(traj.sample_rate, signal[i], axis) for i, axis in enumerate(AXES)}


def default_segment_length(n_samples: int) -> int:
    """Largest power of two giving at least eight non-overlapping segments."""
    return max(16, 1 << int(math.floor(math.log2(max(n_samples // 8, 1)))))


def resolving_segment_length(n_samples: int, sample_rate: float, linewidth: float) -> int:
    """
    Power-of-two Hann segment whose resolution bandwidth is at most a tenth of ``linewidth`` (Hz).

    Capped so that at least four segments fit in the record.
    """
    if not linewidth > 0:
        raise ValidationError("linewidth", linewidth, "linewidth > 0")
    wanted = 10.0 * HANN_ENBW_BINS * sample_rate / linewidth
    length = 1 << int(math.ceil(math.log2(max(wanted, 16.0))))
    cap = max(n_samples // 4, 16)
    while length > cap:
        length >>= 1
    if length < wanted:
        logger.debug(f"Record too short to resolve a {linewidth:.3g} Hz line, using {length}-sample segments")
    return min(length, n_samples)


def welch_psd(
    trace: VoltageTrace,
    segment_length: Optional[int] = None,
    overlap: float = 0.5,
    window: str = "hann",
) -> Psd:
    """
    Welch estimate of the one-sided PSD.

    Raises:
        SegmentTooLongError: segment_length exceeds the trace
    """
    n = trace.samples.size
    nperseg = default_segment_length(n) if segment_length is None else int(segment_length)
    if nperseg > n:
        raise SegmentTooLongError(nperseg, n)
    if not 0 <= overlap < 1:
        raise ValidationError("overlap", overlap, "0 <= overlap < 1")
    noverlap = int(overlap * nperseg)
    f, pxx = welch(
        trace.samples,
        fs=trace.sample_rate,
        window=window,
        nperseg=nperseg,
        noverlap=noverlap,
        detrend="constant",
        return_onesided=True,
        scaling="density",
    )
    w = get_window(window, nperseg)
    enbw = trace.sample_rate * float(np.sum(w**2)) / float(np.sum(w)) ** 2
    n_avg = 1 + (n - nperseg) // (nperseg - noverlap)
    return Psd(frequencies=f, values=pxx, resolution_bandwidth=enbw, n_averages=n_avg)


def _lorentzian(x, x0, width, area, offset):
    half = width / 2.0
    return offset + (area / math.pi) * half / ((x - x0) ** 2 + half**2)


def _double_lorentzian(x, x1, w1, a1, x2, w2, a2, offset):
    return _lorentzian(x, x1, w1, a1, offset) + _lorentzian(x, x2, w2, a2, 0.0)


def _thermal_profile(f0: float):
    def model(x, x0, width, area, offset):
        f = x + f0
        fr = x0 + f0
        return offset + area * (2.0 * width * fr**2 / math.pi) / ((fr**2 - f**2) ** 2 + (width * f) ** 2)

    return model


@dataclass
class _Guess:
    center: float
    width: float
    area: float
    offset: float


def _initial_guess(x: np.ndarray, y: np.ndarray) -> _Guess:
    """Peak of the 3-bin smoothed spectrum, its half-maximum width and the integrated excess power."""
    smooth = uniform_filter1d(y, size=3, mode="nearest")
    k = int(np.argmax(smooth))
    offset = float(np.percentile(smooth, 10))
    height = max(float(smooth[k]) - offset, 1e-300)
    dx = float(x[1] - x[0])
    left = k
    while left > 0 and smooth[left - 1] - offset >= height / 2.0:
        left -= 1
    right = k
    while right < x.size - 1 and smooth[right + 1] - offset >= height / 2.0:
        right += 1
    width = max((right - left + 1) * dx, dx)
    area = float(trapezoid(y - offset, x))
    if not area > 0:
        area = height * math.pi * width / 2.0
    return _Guess(center=float(x[k]), width=width, area=area, offset=max(offset, 0.0))


def _fit(model, x, y, p0, bounds, sigma=None):
    p0 = np.clip(np.asarray(p0, dtype=float), bounds[0], bounds[1])
    try:
        popt, pcov = curve_fit(
            model, x, y, p0=p0, sigma=sigma, bounds=bounds, method="trf",
            ftol=1e-10, xtol=1e-10, gtol=1e-10, x_scale="jac", max_nfev=5000,
        )
    except (RuntimeError, ValueError) as exc:
        raise FitError(str(exc)) from exc
    return popt, pcov


def _log_fit(model, x, y, p0, bounds):
    """Fit log(model) to log(y) over positive bins; an averaged periodogram has constant relative scatter."""
    keep = y > 0

    def log_model(xs, *p):
        return np.log(np.maximum(model(xs, *p), 1e-300))

    return _fit(log_model, x[keep], np.log(y[keep]), p0, bounds)[0]


def _refine(model, x, y, p0, bounds):
    """Log-space fit followed by a linear fit weighted by the first model."""
    popt = _log_fit(model, x, y, p0, bounds)
    weights = np.maximum(model(x, *popt), 1e-12 * np.max(y))
    lo, hi = bounds
    linear = (list(lo[:3]) + [-np.inf], list(hi[:3]) + [np.inf])
    return _fit(model, x, y, popt, linear, sigma=weights)


def _wrss(y, model_values, weights):
    return float(np.sum(((y - model_values) / weights) ** 2))


def _check_single_peak(x, y, popt, weights, span, dx) -> None:
    """Raise if a second resonance explains the residual much better."""
    single = _lorentzian(x, *popt)
    wrss1 = _wrss(y, single, weights)
    if wrss1 <= 1e-20 * float(np.sum((y / weights) ** 2)):
        return
    residual = y - single
    k2 = int(np.argmax(residual))
    p0 = [popt[0], popt[1], popt[2], x[k2], max(popt[1], dx), max(residual[k2], 0.0) * math.pi * popt[1] / 2.0 + 1e-12, popt[3]]
    lo = [x[0], dx, 0.0, x[0], dx, 0.0, -np.inf]
    hi = [x[-1], span, np.inf, x[-1], span, np.inf, np.inf]
    try:
        p2, _ = _fit(_double_lorentzian, x, y, p0, (lo, hi), sigma=weights)
    except FitError:
        return
    wrss2 = _wrss(y, _double_lorentzian(x, *p2), weights)
    x1, w1, a1, x2, w2, a2 = p2[:6]
    separated = abs(x1 - x2) > (w1 + w2)
    comparable = min(a1, a2) >= MULTI_PEAK_MIN_AREA_RATIO * max(a1, a2)
    if wrss2 < MULTI_PEAK_RESIDUAL_RATIO * wrss1 and separated and comparable:
        primary, second = (x1, x2) if a1 >= a2 else (x2, x1)
        raise MultiplePeaksError(primary, second)


def fit_lorentzian(
    psd: Psd,
    window: Tuple[float, float],
    model: str = "lorentzian",
    check_multiple: bool = True,
) -> LorentzianFit:
    """
    Weighted least-squares fit of a single resonance inside ``window``.

    ``lorentzian`` fits offset + (A/pi)(w/2)/((f-f0)^2 + (w/2)^2);
    ``thermal`` fits the damped-oscillator profile
    offset + A (2 w f0^2/pi) / ((f0^2 - f^2)^2 + w^2 f^2).
    Both are normalised so A is the integrated peak power. The first pass
    fits in log space from a half-maximum and area seed, the second is a
    linear fit with per-bin weights proportional to the first model,
    matching the relative scatter of an averaged periodogram. The linewidth
    is bounded by one bin and the window. A failed thermal fit falls back
    to the Lorentzian with a warning and ``model`` set accordingly.

    Raises:
        ModeNotFoundError: too few points in the window
        MultiplePeaksError: a second resonance sits in the window
        FitError: the optimiser fails or returns a non-physical lineshape
    """
    if model not in LINESHAPES:
        raise ValidationError("model", model, f"one of {', '.join(LINESHAPES)}")
    f, s = psd.band(window)
    if f.size < MIN_FIT_POINTS or not np.any(s > 0):
        raise ModeNotFoundError(window)

    scale = float(np.max(s))
    y = s / scale
    f_ref = float(f[np.argmax(s)])
    x = f - f_ref
    dx = float(x[1] - x[0])
    span = float(x[-1] - x[0])
    guess = _initial_guess(x, y)

    p0 = [guess.center, guess.width, guess.area, guess.offset]
    # linewidth between one bin and the window
    bounds = ([x[0], dx, 0.0, 0.0], [x[-1], span, np.inf, np.inf])
    popt, pcov = _refine(_lorentzian, x, y, p0, bounds)
    weights = np.maximum(_lorentzian(x, *popt), 1e-12 * np.max(y))
    if check_multiple:
        _check_single_peak(x, y, popt, weights, span, dx)

    if model == "thermal":
        profile = _thermal_profile(f_ref)
        try:
            thermal, thermal_cov = _refine(profile, x, y, popt, bounds)
        except FitError as exc:
            logger.warning(f"Thermal profile fit failed near {f_ref:.6g} Hz, keeping the Lorentzian: {exc}")
            model = "lorentzian"
        else:
            popt, pcov = thermal, thermal_cov

    errors = np.sqrt(np.clip(np.diag(pcov), 0.0, None))
    center, width, area, offset = popt
    if not (width > 0 and area > 0):
        raise FitError(f"non-physical lineshape, linewidth={width:g}, area={area:g}")

    numeric = float(trapezoid(s - offset * scale, f))
    fit = LorentzianFit(
        center_frequency=f_ref + center,
        linewidth=width,
        area=area * scale,
        offset=offset * scale,
        center_frequency_error=errors[0],
        linewidth_error=errors[1],
        area_error=errors[2] * scale,
        offset_error=errors[3] * scale,
        numeric_area=numeric,
        model=model,
        window=(float(window[0]), float(window[1])),
    )
    logger.debug(
        f"Fitted {model} at {fit.center_frequency:.6g} Hz, linewidth {fit.linewidth:.4g} Hz, area {fit.area:.4g} V^2"
    )
    return fit


def calibrate_conversion(measured_variance: float, temperature: float, mass: float, omega: float) -> float:
    """Equipartition conversion S = sqrt(k_B T / (m omega^2 <V^2>)) in m/V."""
    for name, value in (
        ("measured_variance", measured_variance),
        ("temperature", temperature),
        ("mass", mass),
        ("omega", omega),
    ):
        if not value > 0:
            raise ValidationError(name, value, f"{name} > 0")
    return math.sqrt(CONSTANTS.k_B * temperature / (mass * omega**2 * measured_variance))


def thermal_peak_height(conversion: float, temperature: float, mass: float, omega: float, gamma: float) -> float:
    """
    Peak of the thermal detector PSD (V^2/Hz).

    conversion in V/m, gamma the energy damping rate in 1/s.
    """
    area = conversion**2 * CONSTANTS.k_B * temperature / (mass * omega**2)
    linewidth = gamma / (2.0 * math.pi)
    return 2.0 * area / (math.pi * linewidth)


def noise_floor_for_snr(peak_height: float, snr_db: float) -> float:
    """White floor sitting ``snr_db`` below a PSD peak."""
    return peak_height * 10.0 ** (-snr_db / 10.0)


def demodulate_amplitude(samples: np.ndarray, sample_rate: float, frequency: float) -> float:
    """Lock-in amplitude of the component at ``frequency`` Hz."""
    t = np.arange(samples.size) / sample_rate
    z = np.mean(samples * np.exp(-2j * math.pi * frequency * t))
    return float(2.0 * abs(z))
