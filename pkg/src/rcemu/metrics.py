"""Quantitative evaluation: PDPs, delay spread, tap detection/matching.

Everything here works on plain delay/power arrays so the same code
scores synthetic responses, sounder estimates and end-to-end synthesis
runs. Power delay profiles are normalized to a 0 dB peak and zero-power
bins are reported at the -120 dB sentinel so the dB arrays stay finite
and CSV-safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import ComplexSignal
from .errors import ConfigError, NumericalError

__all__ = [
    "PdpEstimate",
    "ResidualMetrics",
    "TapMatch",
    "TapMatchReport",
    "compute_pdp",
    "rms_delay_spread",
    "detect_taps",
    "match_taps",
    "residual_metrics_from_cascade",
    "export_pdp_csv",
]

PDP_FLOOR_DB = -120.0


@dataclass
class PdpEstimate:
    """Delay-binned average power profile, peak-normalized in dB."""

    delays: np.ndarray          # seconds, uniform grid
    power_db: np.ndarray        # relative to the 0 dB peak bin
    n_realizations: int

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.power_db = np.asarray(self.power_db, dtype=float)
        if self.delays.shape != self.power_db.shape:
            raise ConfigError("delays and power_db must have equal shapes")


@dataclass
class ResidualMetrics:
    """Summary of what is left after a cancellation cascade."""

    peak_to_residual_db: float
    residual_rms_delay_spread: float
    residual_pdp: PdpEstimate | None


@dataclass
class TapMatch:
    target_delay: float
    detected_delay: float | None
    delay_error: float | None
    target_power_db: float
    detected_power_db: float | None
    power_error_db: float | None


@dataclass
class TapMatchReport:
    """Per-tap matching of a detected profile against a target model."""

    matches: list[TapMatch] = field(default_factory=list)
    missed_taps: list[float] = field(default_factory=list)        # delays [s]
    spurious_taps: list[tuple[float, float]] = field(default_factory=list)

    @property
    def all_matched(self) -> bool:
        return not self.missed_taps

    def max_abs_power_error_db(self) -> float:
        errs = [abs(m.power_error_db) for m in self.matches if m.power_error_db is not None]
        return max(errs) if errs else 0.0

    def max_abs_delay_error(self) -> float:
        errs = [abs(m.delay_error) for m in self.matches if m.delay_error is not None]
        return max(errs) if errs else 0.0

    def to_text(self) -> str:
        lines = ["target_ns  detected_ns  ddelay_ns  target_db  detected_db  derr_db"]
        for m in self.matches:
            if m.detected_delay is None:
                lines.append(f"{m.target_delay * 1e9:9.1f}     (missed)")
            else:
                lines.append(
                    f"{m.target_delay * 1e9:9.1f}  {m.detected_delay * 1e9:11.1f}"
                    f"  {m.delay_error * 1e9:9.2f}  {m.target_power_db:9.2f}"
                    f"  {m.detected_power_db:11.2f}  {m.power_error_db:7.2f}"
                )
        if self.spurious_taps:
            lines.append("spurious: " + ", ".join(
                f"{d * 1e9:.1f} ns @ {p:.1f} dB" for d, p in self.spurious_taps))
        if self.missed_taps:
            lines.append("missed: " + ", ".join(f"{d * 1e9:.1f} ns" for d in self.missed_taps))
        return "\n".join(lines)


def compute_pdp(cirs: list[ComplexSignal]) -> PdpEstimate:
    """Average |h|^2 over realizations, peak-normalized, in dB."""
    if not cirs:
        raise ConfigError("need at least one realization")
    n = len(cirs[0])
    rate = cirs[0].sample_rate
    for c in cirs[1:]:
        if len(c) != n or c.sample_rate != rate:
            raise ConfigError("all realizations must share length and sample rate")
    acc = np.zeros(n)
    for c in cirs:
        acc += np.abs(c.samples) ** 2
    acc /= len(cirs)
    peak = acc.max()
    if peak == 0:
        raise NumericalError("all-zero profile")
    with np.errstate(divide="ignore"):
        power_db = 10.0 * np.log10(acc / peak)
    power_db = np.maximum(power_db, PDP_FLOOR_DB)
    return PdpEstimate(delays=np.arange(n) / rate, power_db=power_db,
                       n_realizations=len(cirs))


def rms_delay_spread(pdp: PdpEstimate, floor_db: float = -30.0) -> float:
    """Power-weighted standard deviation of delay over bins above the floor."""
    keep = pdp.power_db > floor_db
    if not np.any(keep):
        raise NumericalError(f"no bins above {floor_db} dB")
    w = 10.0 ** (pdp.power_db[keep] / 10.0)
    tau = pdp.delays[keep]
    w = w / w.sum()
    mean = np.sum(w * tau)
    var = np.sum(w * tau * tau) - mean * mean
    return float(np.sqrt(max(var, 0.0)))


def detect_taps(pdp: PdpEstimate, min_prominence_db: float = 6.0,
                floor_db: float = -30.0,
                neighborhood: int = 10) -> list[tuple[float, float]]:
    """Detect discrete taps in a sparse delay profile.

    A bin is a tap when it lies above ``floor_db`` and stands at least
    ``min_prominence_db`` above the median power of its +-``neighborhood``
    bins, which acts as the local noise floor. This catches runs of taps
    in adjacent bins (where no bin is a strict local maximum) while
    reporting nothing on a flat noise floor or a smooth decay profile.
    Taps denser than half the neighborhood window raise the local floor
    and can mask each other; widen ``neighborhood`` for such models.

    Returns (delay, power_db) pairs sorted by delay.
    """
    if min_prominence_db <= 0:
        raise ConfigError("min_prominence_db must be > 0")
    if neighborhood < 1:
        raise ConfigError("neighborhood must be >= 1")
    p = pdp.power_db
    n = len(p)
    out = []
    for k in range(n):
        if p[k] <= floor_db:
            continue
        lo, hi = max(0, k - neighborhood), min(n, k + neighborhood + 1)
        local_floor = np.median(np.concatenate([p[lo:k], p[k + 1:hi]]))
        if p[k] - local_floor >= min_prominence_db:
            out.append((float(pdp.delays[k]), float(p[k])))
    return out


def _target_pairs(target) -> list[tuple[float, float]]:
    # accept a TapModel-like object (with .taps of entries carrying
    # .delay/.power_db) or a plain list of (delay_s, power_db) pairs
    taps = getattr(target, "taps", target)
    pairs = []
    for t in taps:
        if hasattr(t, "delay"):
            pairs.append((float(t.delay), float(t.power_db)))
        else:
            d, p = t
            pairs.append((float(d), float(p)))
    return pairs


def match_taps(detected: list[tuple[float, float]], target,
               delay_tol: float) -> TapMatchReport:
    """Greedy nearest-delay matching of detections against a target model.

    Both sides are first normalized to their own strongest tap, so the
    power errors compare relative profiles. Unmatched targets are missed,
    unmatched detections spurious.
    """
    if delay_tol <= 0:
        raise ConfigError("delay_tol must be > 0")
    tgt = _target_pairs(target)
    if not tgt:
        raise ConfigError("empty target model")
    tmax = max(p for _, p in tgt)
    tgt = [(d, p - tmax) for d, p in tgt]
    det = list(detected)
    if det:
        dmax = max(p for _, p in det)
        det = [(d, p - dmax) for d, p in det]

    used = [False] * len(det)
    report = TapMatchReport()
    for td, tp in sorted(tgt):
        best, best_err = None, None
        for i, (dd, dp) in enumerate(det):
            if used[i]:
                continue
            err = abs(dd - td)
            if err <= delay_tol and (best is None or err < best_err):
                best, best_err = i, err
        if best is None:
            report.missed_taps.append(td)
            report.matches.append(TapMatch(td, None, None, tp, None, None))
        else:
            used[best] = True
            dd, dp = det[best]
            report.matches.append(TapMatch(td, dd, dd - td, tp, dp, dp - tp))
    report.spurious_taps = [det[i] for i in range(len(det)) if not used[i]]
    return report


def residual_metrics_from_cascade(cascade: ComplexSignal,
                                  guard_bins: int = 0) -> ResidualMetrics:
    """Score a cancellation cascade.

    The strongest bin is the peak; every bin further than ``guard_bins``
    from it (circular distance) counts as residual. A residual-free
    cascade reports an infinite ratio and no residual profile.
    """
    p = np.abs(cascade.samples) ** 2
    n = len(p)
    kpk = int(np.argmax(p))
    offs = (np.arange(n) - kpk) % n
    dist = np.minimum(offs, n - offs)
    resid_mask = dist > guard_bins
    resid_energy = float(p[resid_mask].sum())
    if resid_energy == 0.0:
        return ResidualMetrics(peak_to_residual_db=float("inf"),
                               residual_rms_delay_spread=0.0,
                               residual_pdp=None)
    ratio = 10.0 * np.log10(p[kpk] / resid_energy)
    resid = np.where(resid_mask, p, 0.0)
    with np.errstate(divide="ignore"):
        rdb = 10.0 * np.log10(resid / resid.max())
    rdb = np.maximum(rdb, PDP_FLOOR_DB)
    rpdp = PdpEstimate(delays=np.arange(n) / cascade.sample_rate,
                       power_db=rdb, n_realizations=1)
    try:
        spread = rms_delay_spread(rpdp)
    except NumericalError:
        spread = 0.0
    return ResidualMetrics(peak_to_residual_db=float(ratio),
                           residual_rms_delay_spread=spread,
                           residual_pdp=rpdp)


def export_pdp_csv(pdp: PdpEstimate, path: str) -> None:
    """Write ``delay_ns, power_db`` rows with 6 significant digits."""
    with open(path, "w") as f:
        f.write("delay_ns,power_db\n")
        for d, p in zip(pdp.delays, pdp.power_db):
            f.write(f"{d * 1e9:.6g},{p:.6g}\n")
