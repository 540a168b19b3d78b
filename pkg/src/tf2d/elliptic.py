"""Complete elliptic integral K and the angular Coulomb kernel.

K(k) is evaluated by the arithmetic-geometric mean,
K = pi / (2 AGM(1, sqrt(1 - k^2))), which converges quadratically and gives
full double precision for every modulus away from k = 1.

The azimuthal average of the 3D Coulomb kernel over a circle reduces to K:

    integral_0^{2pi} dtheta / sqrt(r^2 + s^2 - 2 r s cos(theta))
        = 4/(r+s) * K(2*sqrt(r*s)/(r+s)),

which diverges logarithmically on the diagonal r = s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import accel
from .errors import DomainError, SingularityError

# Empirically frozen constant for the near-diagonal envelope
# kernel(r, s) * max(r, s) <= C * (1 + |ln(1 - min/max)|); the supremum of the
# ratio is 2*pi, attained in the min/max -> 0 limit.
KERNEL_LOG_BOUND_CONST = 6.30

_DIAG_REL_TOL = 1e-12


@dataclass(frozen=True)
class EllipticModulus:
    """Modulus k of K(k), restricted to [0, 1)."""

    k: float

    def __post_init__(self):
        if not (0.0 <= self.k < 1.0) or not math.isfinite(self.k):
            raise DomainError(f"elliptic modulus must lie in [0, 1), got {self.k!r}")


def ellint_K(k):
    """K(k) for modulus k in [0, 1); accepts floats, arrays or EllipticModulus."""
    if isinstance(k, EllipticModulus):
        k = k.k
    arr = np.asarray(k, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr >= 1.0):
        raise DomainError("modulus must satisfy 0 <= k < 1")
    # complementary modulus; (1-k)(1+k) avoids cancellation near k = 1
    kprime = np.sqrt((1.0 - arr) * (1.0 + arr))
    return accel.ellint_k_from_kprime(kprime)


def half_integral_closed_form(k: float) -> float:
    """Closed form of integral_0^1 dt / sqrt((1 - t)(1 - k t)) for 0 < k < 1.

    Equals ln((1 + sqrt(k)) / (1 - sqrt(k))) / sqrt(k); tends to 2 as k -> 0.
    """
    k = float(k)
    if not (0.0 < k < 1.0):
        raise DomainError(f"argument must lie in (0, 1), got {k!r}")
    rk = math.sqrt(k)
    return math.log((1.0 + rk) / (1.0 - rk)) / rk


def angular_kernel(r: float, s: float) -> float:
    """Azimuthal Coulomb kernel 4/(r+s) * K(2 sqrt(rs)/(r+s)) for r != s.

    Radii must be positive.  Calls with |r - s| below 1e-12 * max(r, s) are
    rejected: the kernel diverges logarithmically there, and near-diagonal
    integration is handled by singularity subtraction in the coulomb module.
    """
    r = float(r)
    s = float(s)
    if not (r > 0.0 and s > 0.0) or not (math.isfinite(r) and math.isfinite(s)):
        raise DomainError(f"radii must be positive, got {r!r}, {s!r}")
    if abs(r - s) < _DIAG_REL_TOL * max(r, s):
        raise SingularityError(f"angular kernel evaluated on the diagonal r = s = {r!r}")
    tot = r + s
    kprime = abs(r - s) / tot
    return 4.0 / tot * accel.ellint_k_from_kprime(kprime)
