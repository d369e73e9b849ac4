"""
Closed-form fading statistics for M aggregated Rayleigh channels.

Everything here is a pure function of (M, sigma2, sigma_n2, sigma_phi2):

- the small-argument density for a sum of M i.i.d. Rayleigh amplitudes,
- the mean, second moment and coefficient of variation of the
  differential-phase SNR built from two such amplitudes,
- the SNR gain K (exact double-factorial form and its Stirling form),
- the phase-noise density produced by additive I/Q noise.

Conventions
-----------
sigma2      per-quadrature field variance of one channel, <A^2> = 2*sigma2
sigma_n2    per-quadrature noise variance of one channel
sigma_phi2  variance of the acoustic (differential phase) signal

After aggregating M channels the noise variance is M*sigma_n2 and

    SNR_phi = sigma_phi2 / (M*sigma_n2 * (1/A1^2 + 1/A2^2))

Density normalisation
---------------------
The Rayleigh-sum density is often quoted with the exponent -x^2/(M b).
That form integrates to 2**-M. We use -x^2/(2 M b), which integrates to one
and is the Rayleigh density at M = 1.  With this choice A^2 is Gamma
distributed (shape M, scale 2 M b), which is what makes the closed forms for
the mean and C_V exact rather than approximate; the quadrature routines below
check that numerically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

# exact integer arithmetic below this M, log-space above
_EXACT_LIMIT = 20


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class FadingParams:
    M: int
    sigma2: float = 1.0
    sigma_n2: float = 1.0
    sigma_phi2: float = 1.0

    def __post_init__(self):
        _check_M(self.M)
        for name in ("sigma2", "sigma_n2", "sigma_phi2"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def snr_intensity(self) -> float:
        return self.sigma2 / self.sigma_n2


@dataclass(frozen=True)
class AnalyticRow:
    M: int
    b: float
    mean_snr_phi: float
    gain_K: float
    gain_K_stirling: float
    cv: float
    mean_snr_phi_quadrature: float | None = None


def _check_M(M) -> int:
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)) or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    return int(M)


def double_factorial(m: int) -> int:
    """m!! for odd m >= 1, as an exact integer."""
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)):
        raise ValueError(f"double_factorial needs an integer, got {m!r}")
    m = int(m)
    if m < 1 or m % 2 == 0:
        raise ValueError(f"double_factorial is defined here for odd m >= 1, got {m}")
    return math.prod(range(m, 0, -2))


def log_odd_double_factorial(M: int) -> float:
    """ln((2M-1)!!); exact below M=20, via lgamma above."""
    M = _check_M(M)
    if M <= _EXACT_LIMIT:
        return math.log(double_factorial(2 * M - 1))
    # (2M-1)!! = (2M)! / (2^M M!)
    return math.lgamma(2 * M + 1) - math.lgamma(M + 1) - M * math.log(2.0)


def _root_dfact(M: int) -> float:
    """[(2M-1)!!]^(1/M)"""
    return math.exp(log_odd_double_factorial(M) / M)


def scale_b(M: int, sigma2: float) -> float:
    """Scale parameter b = sigma2/M * [(2M-1)!!]^(1/M)."""
    M = _check_M(M)
    return sigma2 / M * _root_dfact(M)


def rayleigh_sum_pdf(x, M: int, sigma2: float):
    """Small-argument density of the sum of M i.i.d. Rayleigh amplitudes.

    ``x`` may be a scalar or an array of nonnegative amplitudes.
    """
    M = _check_M(M)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("rayleigh_sum_pdf is defined for x >= 0")
    b = scale_b(M, sigma2)
    theta = 2.0 * M * b
    # log of 1 / (2^(M-1) b^M (M-1)! M^M), rewritten for the 2Mb exponent
    log_norm = math.log(2.0) - special.gammaln(M) - M * math.log(theta)
    with np.errstate(divide="ignore"):
        logpdf = log_norm + (2 * M - 1) * np.log(x) - x * x / theta
    out = np.exp(logpdf)
    return float(out) if out.ndim == 0 else out


def rayleigh_sum_pdf_as_printed(x, M: int, sigma2: float):
    """The density with the exponent -x^2/(M b); total mass 2**-M.

    Kept only so the normalisation difference can be checked.
    """
    M = _check_M(M)
    x = np.asarray(x, dtype=float)
    b = scale_b(M, sigma2)
    log_norm = -((M - 1) * math.log(2.0) + M * math.log(b) + special.gammaln(M) + M * math.log(M))
    with np.errstate(divide="ignore"):
        logpdf = log_norm + (2 * M - 1) * np.log(x) - x * x / (M * b)
    out = np.exp(logpdf)
    return float(out) if out.ndim == 0 else out


def amplitude_upper_limit(M: int, sigma2: float) -> float:
    """Integration cutoff 12*sqrt(2 M sigma2); the mass beyond is < 1e-12."""
    return 12.0 * math.sqrt(2.0 * M * sigma2)


def rayleigh_sum_cdf(x, M: int, sigma2: float):
    """CDF of :func:`rayleigh_sum_pdf`.

    Under the normalized density A^2 is Gamma(M) with scale 2 M b, so the CDF
    is a regularized lower incomplete gamma function.
    """
    M = _check_M(M)
    x = np.asarray(x, dtype=float)
    theta = 2.0 * M * scale_b(M, sigma2)
    out = special.gammainc(M, np.square(np.maximum(x, 0.0)) / theta)
    return float(out) if out.ndim == 0 else out


def mean_snr_phi_closed(p: FadingParams) -> float:
    """Mean SNR_phi = 2M[(2M-1)!!]^(1/M)/(2M+1) * sigma2*sigma_phi2/sigma_n2."""
    M = p.M
    return 2.0 * M * _root_dfact(M) / (2 * M + 1) * p.sigma2 * p.sigma_phi2 / p.sigma_n2


def gain_K(M: int) -> tuple[float, float]:
    """SNR_phi gain K relative to one channel: (exact, Stirling approximation)."""
    M = _check_M(M)
    exact = math.sqrt(3.0 * M * _root_dfact(M) / (2 * M + 1))
    stirling = math.sqrt(6.0 * M * M / ((2 * M + 1) * math.e))
    return exact, stirling


def coefficient_of_variation(M: int) -> float:
    M = _check_M(M)
    return math.sqrt((2 * M * M + 5 * M + 1) / (4 * M**3 + 6 * M * M))


def _snr_moment_quadrature(p: FadingParams, power: int, epsrel: float = 1e-7) -> float:
    M = p.M
    upper = amplitude_upper_limit(M, p.sigma2)
    scale = p.sigma_phi2 / (M * p.sigma_n2)
    # the harmonic term is bounded by min(a1, a2)^2, so the integrand is smooth
    mode = math.sqrt(max((2 * M - 1) * M * scale_b(M, p.sigma2), 1e-300))

    def inner(a2, a1):
        h = (a1 * a1 * a2 * a2) / (a1 * a1 + a2 * a2) if a1 > 0 or a2 > 0 else 0.0
        return (scale * h) ** power * rayleigh_sum_pdf(a2, M, p.sigma2)

    def outer(a1):
        val, _ = integrate.quad(inner, 0.0, upper, args=(a1,), epsrel=epsrel, epsabs=0.0,
                                points=[mode], limit=200)
        return val * rayleigh_sum_pdf(a1, M, p.sigma2)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, abserr = integrate.quad(outer, 0.0, upper, epsrel=epsrel, epsabs=0.0,
                                           points=[mode], limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"SNR_phi moment {power} did not converge: {exc}", float("nan")) from exc
    if not math.isfinite(value) or abserr > 1e3 * epsrel * abs(value):
        raise QuadratureError(f"SNR_phi moment {power} did not converge", abserr)
    return value


def mean_snr_phi_quadrature(p: FadingParams) -> float:
    """Mean SNR_phi by 2-D adaptive quadrature over the two gauge amplitudes."""
    return _snr_moment_quadrature(p, 1)


def snr_phi_second_moment_quadrature(p: FadingParams) -> float:
    return _snr_moment_quadrature(p, 2)


def cv_from_quadrature(p: FadingParams) -> float:
    m1 = mean_snr_phi_quadrature(p)
    m2 = snr_phi_second_moment_quadrature(p)
    return math.sqrt(max(m2 - m1 * m1, 0.0)) / m1


def phase_noise_pdf(delta, delta2: float):
    """Gaussian phase-noise density, variance delta2.

    Accurate when delta2 << 1 (roughly delta <= 0.1); for strong noise the
    true density broadens towards uniform on (-pi, pi] and this underestimates
    the tails.
    """
    if not delta2 > 0:
        raise ValueError("delta2 must be positive")
    delta = np.asarray(delta, dtype=float)
    out = np.exp(-delta * delta / (2.0 * delta2)) / math.sqrt(2.0 * math.pi * delta2)
    return float(out) if out.ndim == 0 else out


def phase_noise_pdf_middle(delta, delta2: float):
    """Pre-approximation form exp(-sin^2 D / 2 d^2) cos D / (d sqrt(2 pi)).

    Only defined on |D| < pi/2 (zero outside), where the change of variables
    is one-to-one.
    """
    if not delta2 > 0:
        raise ValueError("delta2 must be positive")
    delta = np.asarray(delta, dtype=float)
    s = np.sin(delta)
    out = np.exp(-s * s / (2.0 * delta2)) * np.cos(delta) / math.sqrt(2.0 * math.pi * delta2)
    out = np.where(np.abs(delta) < math.pi / 2, out, 0.0)
    return float(out) if out.ndim == 0 else out


def analytic_curves(M_max: int, params: FadingParams | None = None,
                    with_quadrature: bool = False) -> list[AnalyticRow]:
    """Per-M table of b, mean SNR_phi, K (exact, Stirling) and C_V for M = 1..M_max."""
    M_max = _check_M(M_max)
    base = params or FadingParams(M=1)
    rows = []
    for M in range(1, M_max + 1):
        p = FadingParams(M, base.sigma2, base.sigma_n2, base.sigma_phi2)
        k_exact, k_stir = gain_K(M)
        rows.append(AnalyticRow(
            M=M,
            b=scale_b(M, p.sigma2),
            mean_snr_phi=mean_snr_phi_closed(p),
            gain_K=k_exact,
            gain_K_stirling=k_stir,
            cv=coefficient_of_variation(M),
            mean_snr_phi_quadrature=mean_snr_phi_quadrature(p) if with_quadrature else None,
        ))
    return rows
