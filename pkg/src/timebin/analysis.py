"""Coincidence analysis: delay histograms, peaks, CAR, fringe fits, visibility."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np
from scipy import optimize, stats

DEFAULT_ACCIDENTAL_OFFSETS_PS = (-3500.0, -2500.0, 2500.0, 3500.0)


# --- delay histogram ---------------------------------------------------------

@dataclass
class DelayHistogram:
    bin_width: float  # ps
    delays: np.ndarray  # bin centers, ps, symmetric around 0
    counts: np.ndarray
    total_pairs: int

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.delays - self.bin_width / 2, self.delays[-1] + self.bin_width / 2)

    def to_csv(self) -> str:
        rows = ["delay_ps,count"]
        rows.extend(f"{d:.6g},{int(c)}" for d, c in zip(self.delays, self.counts))
        return "\n".join(rows) + "\n"


@nb.njit(cache=True)
def _pair_delays(a, b, max_ticks, half_bins, scale):
    counts = np.zeros(2 * half_bins + 1, dtype=np.int64)
    lo = 0
    nb_ = b.shape[0]
    for i in range(a.shape[0]):
        ta = a[i]
        while lo < nb_ and b[lo] < ta - max_ticks:
            lo += 1
        j = lo
        while j < nb_ and b[j] <= ta + max_ticks:
            d = (b[j] - ta) * scale
            if d >= 0:
                k = int(math.floor(d + 0.5))
            else:
                k = -int(math.floor(-d + 0.5))
            if -half_bins <= k <= half_bins:
                counts[k + half_bins] += 1
            j += 1
    return counts


def _check_sorted(x, name):
    if x.size > 1 and np.any(np.diff(x) < 0):
        raise ValueError(f"{name} must be sorted")


def build_delay_histogram(tags_a, tags_b, bin_width: float, max_delay: float, *,
                          tick_ps: float = 1.0) -> DelayHistogram:
    """Histogram of t_b - t_a over every pair with |t_b - t_a| <= max_delay.

    All pairs inside the range are counted (no one-to-one matching). Bins are
    centered on 0 and assignment rounds half away from zero, so swapping the
    two streams mirrors the histogram exactly.
    """
    if not (bin_width > 0 and max_delay > 0):
        raise ValueError("bin_width and max_delay must be > 0")
    a = np.ascontiguousarray(tags_a, dtype=np.int64)
    b = np.ascontiguousarray(tags_b, dtype=np.int64)
    _check_sorted(a, "tags_a")
    _check_sorted(b, "tags_b")
    half = int(math.ceil(max_delay / bin_width))
    max_ticks = int(math.floor(max_delay / tick_ps))
    counts = _pair_delays(a, b, max_ticks, half, tick_ps / bin_width)
    delays = np.arange(-half, half + 1) * bin_width
    return DelayHistogram(float(bin_width), delays, counts, int(counts.sum()))


def window_counts(hist: DelayHistogram, center: float, window: float) -> int:
    """Counts in bins whose centers lie in [center - window/2, center + window/2)."""
    sel = (hist.delays >= center - window / 2) & (hist.delays < center + window / 2)
    return int(hist.counts[sel].sum())


def half_max_width(x, y) -> float:
    """FWHM of the highest peak of y(x), linear interpolation at half maximum.

    A peak confined to a single bin yields one bin width (the x spacing).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0 or y.max() <= 0:
        return float("nan")
    k = int(np.argmax(y))
    half = y[k] / 2.0
    step = x[1] - x[0] if x.size > 1 else 1.0

    i = k
    while i > 0 and y[i - 1] > half:
        i -= 1
    if i == 0:
        left = x[0] - step / 2
    else:
        left = x[i - 1] + (half - y[i - 1]) * (x[i] - x[i - 1]) / (y[i] - y[i - 1])
    j = k
    while j < y.size - 1 and y[j + 1] > half:
        j += 1
    if j == y.size - 1:
        right = x[-1] + step / 2
    else:
        right = x[j] + (y[j] - half) * (x[j + 1] - x[j]) / (y[j] - y[j + 1])
    return float(right - left)


@dataclass
class PeakMetrics:
    found: bool
    position: float = float("nan")
    area_in_window: int = 0
    fwhm: float = float("nan")


def peak_metrics(hist: DelayHistogram, center_guess: float, search_radius: float,
                 window: float = 400.0) -> PeakMetrics:
    """Centroid, windowed area and FWHM of the peak near ``center_guess``."""
    if hist.counts.size == 0:
        raise ValueError("empty histogram")
    sel = np.abs(hist.delays - center_guess) <= search_radius
    c = hist.counts[sel]
    if c.sum() == 0:
        return PeakMetrics(found=False)
    d = hist.delays[sel]
    position = float(np.sum(d * c) / c.sum())
    area = window_counts(hist, position, window)
    return PeakMetrics(True, position, area, half_max_width(d, c))


# --- CAR ---------------------------------------------------------------------

@dataclass
class CarResult:
    window: float
    peak_counts: int
    accidental_counts: list
    mean_accidentals: float
    car: float
    car_err: float
    lower_bound: float  # meaningful when no accidentals were seen

    @property
    def infinite(self) -> bool:
        return math.isinf(self.car)


def compute_car(hist: DelayHistogram, window: float, peak_delay: float = 0.0,
                accidental_offsets=DEFAULT_ACCIDENTAL_OFFSETS_PS) -> CarResult:
    """Peak-window counts over the mean of equal windows at ``accidental_offsets``."""
    peak = window_counts(hist, peak_delay, window)
    acc = [window_counts(hist, peak_delay + off, window) for off in accidental_offsets]
    n = len(acc)
    mean_acc = float(np.mean(acc)) if n else 0.0
    if mean_acc > 0:
        car = peak / mean_acc
        err = car * math.sqrt((1.0 / peak if peak else 0.0) + 1.0 / sum(acc))
        return CarResult(window, peak, acc, mean_acc, car, err, car)
    # ~95% upper limit of a zero-count Poisson mean is 3, spread over n windows
    lower = peak / (3.0 / max(n, 1))
    return CarResult(window, peak, acc, 0.0, math.inf, math.inf, lower)


# --- fringe fitting ----------------------------------------------------------

@dataclass
class FringeFit:
    ok: bool
    amplitude: float = float("nan")
    offset: float = float("nan")
    phase: float = float("nan")
    frequency: float = float("nan")
    visibility: float = float("nan")
    amplitude_err: float = float("nan")
    offset_err: float = float("nan")
    phase_err: float = float("nan")
    frequency_err: float = 0.0
    visibility_err: float = float("nan")
    chi2: float = float("nan")
    dof: int = 0
    message: str = ""
    frequency_fixed: bool = True

    def model(self, x):
        return self.offset + self.amplitude * np.cos(self.frequency * np.asarray(x) + self.phase)

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in asdict(self).items()}


def _cos_model(x, offset, amplitude, freq, phase):
    return offset + amplitude * np.cos(freq * x + phase)


def _linear_fit(x, y, w, freq):
    # y = o + a cos(fx) + b sin(fx), weighted linear least squares
    M = np.column_stack([np.ones_like(x), np.cos(freq * x), np.sin(freq * x)])
    Mw = M * w[:, None]
    coef, *_ = np.linalg.lstsq(Mw, y * w, rcond=None)
    return coef, M


def _guess_frequency(x, y, w):
    span = x[-1] - x[0]
    dx = np.min(np.diff(x))
    freqs = np.linspace(0.5 * 2 * np.pi / span, np.pi / dx, 2000)
    best, best_f = np.inf, freqs[0]
    for f in freqs:
        coef, M = _linear_fit(x, y, w, f)
        r = np.sum(((M @ coef - y) * w) ** 2)
        if r < best:
            best, best_f = r, f
    return best_f


def fit_cosine(x, y, sigma_y=None, fixed_frequency: float | None = None, *,
               max_nfev: int = 2000) -> FringeFit:
    """Least-squares fit of y = offset + amplitude * cos(frequency * x + phase).

    With ``fixed_frequency`` the problem is linear and solved exactly.
    Otherwise the frequency is seeded from a grid scan and refined by
    ``scipy.optimize.least_squares``. Uncertainties come from the covariance;
    without ``sigma_y`` it is scaled by the reduced chi-square.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 5 or x.size != y.size:
        return FringeFit(False, message="need at least 5 points with matching x and y")
    dx = np.diff(x)
    if not (np.all(dx > 0) or np.all(dx < 0)):
        return FringeFit(False, message="x must be strictly monotone")
    if np.all(dx < 0):
        x, y = x[::-1], y[::-1]
        sigma_y = None if sigma_y is None else np.asarray(sigma_y, dtype=float)[::-1]
    absolute = sigma_y is not None
    sig = np.asarray(sigma_y, dtype=float) if absolute else np.ones_like(y)
    if np.any(sig <= 0):
        return FringeFit(False, message="sigma_y must be > 0")
    w = 1.0 / sig

    freq = fixed_frequency if fixed_frequency is not None else _guess_frequency(x, y, w)
    coef, _ = _linear_fit(x, y, w, freq)
    offset0, a, b = coef
    amp0 = math.hypot(a, b)
    phase0 = math.atan2(-b, a)

    if fixed_frequency is not None:
        params = np.array([offset0, amp0, phase0])

        def resid(p):
            return (_cos_model(x, p[0], p[1], freq, p[2]) - y) * w
    else:
        params = np.array([offset0, amp0, phase0, freq])

        def resid(p):
            return (_cos_model(x, p[0], p[1], p[3], p[2]) - y) * w

    if fixed_frequency is None or amp0 > 0:
        try:
            res = optimize.least_squares(resid, params, method="lm", max_nfev=max_nfev,
                                         xtol=1e-14, ftol=1e-14, gtol=1e-14)
        except ValueError as exc:
            return FringeFit(False, message=str(exc), frequency_fixed=fixed_frequency is not None)
        if not res.success:
            return FringeFit(False, message=f"no convergence: {res.message}",
                             frequency_fixed=fixed_frequency is not None)
        params, J = res.x, res.jac
    else:
        J = np.column_stack([np.ones_like(x), np.cos(freq * x + phase0), np.zeros_like(x)]) * w[:, None]

    r = resid(params)
    chi2 = float(r @ r)
    dof = x.size - params.size
    try:
        cov = np.linalg.pinv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((params.size, params.size), np.nan)
    if not absolute and dof > 0:
        cov = cov * chi2 / dof
    err = np.sqrt(np.clip(np.diag(cov), 0, None))

    offset, amp, phase = params[0], params[1], params[2]
    freq_fit = params[3] if params.size == 4 else freq
    if amp < 0:
        amp, phase = -amp, phase + math.pi
    phase = (phase + math.pi) % (2 * math.pi) - math.pi
    ok = offset > 0
    vis = amp / offset if offset != 0 else float("nan")
    # d(A/O) = dA/O - A dO/O^2
    gvec = np.array([-amp / offset**2, 1.0 / offset]) if offset != 0 else np.array([np.nan, np.nan])
    vis_err = float(math.sqrt(max(gvec @ cov[:2, :2] @ gvec, 0.0))) if ok else float("nan")
    msg = "" if ok else "offset <= 0"
    if ok and vis > 1:
        msg = "visibility > 1"
        ok = False
    return FringeFit(ok, float(amp), float(offset), float(phase), float(freq_fit), float(vis),
                     float(err[1]), float(err[0]), float(err[2]),
                     float(err[3]) if params.size == 4 else 0.0, vis_err, chi2, dof, msg,
                     fixed_frequency is not None)


def visibility_corrected(c_max: float, c_min: float, accidentals_per_window: float = 0.0) -> float:
    """(c_max - c_min) / (c_max + c_min - 2A); A = 0 gives the raw visibility."""
    if not c_max >= c_min >= 0:
        raise ValueError("need c_max >= c_min >= 0")
    denom = c_max + c_min - 2.0 * accidentals_per_window
    if denom <= 0:
        raise ValueError("undefined visibility: c_max + c_min - 2A <= 0")
    return (c_max - c_min) / denom


# --- rates -------------------------------------------------------------------

@dataclass
class RateReport:
    duration_s: float
    singles_Hz: dict = field(default_factory=dict)
    singles_err_Hz: dict = field(default_factory=dict)
    coincidences_Hz: float = 0.0
    coincidences_err_Hz: float = 0.0
    accidentals_Hz: float = 0.0
    accidentals_err_Hz: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["singles_Hz"] = {str(k): v for k, v in self.singles_Hz.items()}
        d["singles_err_Hz"] = {str(k): v for k, v in self.singles_err_Hz.items()}
        return d


def rate_report(streams: dict, duration_s: float, *, pair=None, window_ps: float = 400.0,
                accidental_offsets=DEFAULT_ACCIDENTAL_OFFSETS_PS, tick_ps: float = 1.0,
                bin_width_ps: float = 10.0) -> RateReport:
    """Singles, center-window coincidences and accidentals, all in Hz.

    ``streams`` maps channel -> sorted ticks. ``pair`` selects the two
    channels used for coincidences (default: the two lowest channel ids).
    Errors are Poisson.
    """
    if not duration_s > 0:
        raise ValueError("duration_s must be > 0")
    rep = RateReport(duration_s)
    for ch, t in streams.items():
        n = len(t)
        rep.singles_Hz[ch] = n / duration_s
        rep.singles_err_Hz[ch] = math.sqrt(n) / duration_s
    chans = sorted(streams)
    if pair is None and len(chans) >= 2:
        pair = (chans[0], chans[1])
    if pair is None:
        return rep
    a, b = streams[pair[0]], streams[pair[1]]
    if len(a) == 0 or len(b) == 0:
        return rep
    reach = window_ps / 2 + max((abs(o) for o in accidental_offsets), default=0.0) + bin_width_ps
    hist = build_delay_histogram(a, b, bin_width_ps, reach, tick_ps=tick_ps)
    car = compute_car(hist, window_ps, 0.0, accidental_offsets)
    rep.coincidences_Hz = car.peak_counts / duration_s
    rep.coincidences_err_Hz = math.sqrt(car.peak_counts) / duration_s
    rep.accidentals_Hz = car.mean_accidentals / duration_s
    nacc = max(len(car.accidental_counts), 1)
    rep.accidentals_err_Hz = math.sqrt(sum(car.accidental_counts)) / nacc / duration_s
    return rep


# --- fringe sweep ------------------------------------------------------------

@dataclass
class FringeAnalysis:
    fit: FringeFit
    raw_visibility: float
    corrected_visibility: float
    mean_accidentals: float
    side_mean: float
    side_chi2: float
    side_p_value: float

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "fit"}
        d["fit"] = self.fit.to_dict()
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def side_constancy(side_minus, side_plus) -> tuple[float, float, float]:
    """Chi-square test of the averaged side-peak areas against a constant.

    Returns (mean, chi2, p-value). The variance of the mean of two Poisson
    counts is (n1 + n2) / 4.
    """
    s1 = np.asarray(side_minus, dtype=float)
    s2 = np.asarray(side_plus, dtype=float)
    avg = (s1 + s2) / 2.0
    var = np.maximum((s1 + s2) / 4.0, 0.25)
    w = 1.0 / var
    mean = float(np.sum(w * avg) / np.sum(w))
    chi2 = float(np.sum((avg - mean) ** 2 * w))
    return mean, chi2, float(stats.chi2.sf(chi2, avg.size - 1))


def analyze_fringe(x, center, side_minus, side_plus, accidentals, *,
                   fixed_frequency: float | None = None) -> FringeAnalysis:
    """Fit center-window counts across a phase sweep; raw and corrected visibility.

    ``accidentals`` holds the mean accidental counts per window at each point;
    their overall mean is subtracted from both fringe extrema for the
    corrected value.
    """
    center = np.asarray(center, dtype=float)
    sig = np.sqrt(np.maximum(center, 1.0))
    fit = fit_cosine(x, center, sig, fixed_frequency)
    A = float(np.mean(accidentals)) if len(accidentals) else 0.0
    raw = corr = float("nan")
    if fit.ok:
        c_max = fit.offset + fit.amplitude
        c_min = max(fit.offset - fit.amplitude, 0.0)
        raw = visibility_corrected(c_max, c_min, 0.0)
        try:
            corr = visibility_corrected(c_max, c_min, A)
        except ValueError:
            corr = float("nan")
    mean, chi2, p = side_constancy(side_minus, side_plus)
    return FringeAnalysis(fit, raw, corr, A, mean, chi2, p)
