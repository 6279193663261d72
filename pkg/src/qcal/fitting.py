"""Levenberg-Marquardt least squares and the model fits used by the protocols.

Every model-specific fit rescales its abscissa to order unity before calling
:func:`least_squares`, so the solver never sees raw Hz or seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from qcal.errors import (
    DegenerateClouds,
    DimensionMismatch,
    FitDiverged,
    NoDecay,
    NoFeature,
    NoOscillation,
    PreconditionError,
)

EPS = np.finfo(float).eps
MAD_SCALE = 1.4826


@dataclass
class FitResult:
    model: str
    params: dict[str, tuple[float, float]]
    rss: float
    converged: bool
    iterations: int
    derived: dict[str, tuple[float, float]] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        if name in self.params:
            return self.params[name][0]
        return self.derived[name][0]

    def error(self, name: str) -> float:
        if name in self.params:
            return self.params[name][1]
        return self.derived[name][1]

    @property
    def values(self) -> dict[str, float]:
        return {k: v for k, (v, _) in self.params.items()}

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {k: {"value": float(v), "error": float(e)} for k, (v, e) in self.params.items()},
            "derived": {k: {"value": float(v), "error": float(e)} for k, (v, e) in self.derived.items()},
            "rss": float(self.rss),
            "converged": self.converged,
            "iterations": self.iterations,
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        return cls(
            model=d["model"],
            params={k: (v["value"], v["error"]) for k, v in d["params"].items()},
            derived={k: (v["value"], v["error"]) for k, v in d.get("derived", {}).items()},
            rss=d["rss"],
            converged=d["converged"],
            iterations=d["iterations"],
            diagnostics=list(d.get("diagnostics", [])),
        )


def forward_jacobian(fun, x, p, lower=None, upper=None):
    """Forward-difference Jacobian of ``fun(x, *p)`` with respect to ``p``."""
    f0 = fun(x, *p)
    jac = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = math.sqrt(EPS) * max(abs(p[j]), 1.0)
        if upper is not None and p[j] + h > upper[j]:
            h = -h
        q = p.copy()
        q[j] += h
        jac[:, j] = (fun(x, *q) - f0) / h
    return jac


def central_jacobian(fun, x, p):
    jac = np.empty((np.size(x), p.size))
    for j in range(p.size):
        h = EPS ** (1 / 3) * max(abs(p[j]), 1.0)
        qp, qm = p.copy(), p.copy()
        qp[j] += h
        qm[j] -= h
        jac[:, j] = (fun(x, *qp) - fun(x, *qm)) / (2 * h)
    return jac


def least_squares(
    model: Callable,
    x,
    y,
    init: Mapping[str, float],
    bounds: Mapping[str, tuple[float, float]] | None = None,
    *,
    name: str = "custom",
    max_iterations: int = 200,
    xtol: float = 1e-8,
) -> FitResult:
    """Damped Gauss-Newton fit of ``model(x, *params)`` to ``y``.

    The damping follows the Levenberg-Marquardt schedule: lambda starts at
    1e-3, is multiplied by 10 after a rejected step and divided by 10 after an
    accepted one. Each trial step counts as one iteration. Convergence is a
    relative parameter change below ``xtol``. Uncertainties come from the
    linearised covariance ``s^2 (J^T J)^-1`` with ``s^2 = RSS / (n - k)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"x has {x.size} points but y has {y.size}")
    names = list(init)
    k = len(names)
    if y.size < k:
        raise DimensionMismatch(f"{y.size} points cannot determine {k} parameters")
    p = np.array([float(init[n]) for n in names])
    lower = np.full(k, -np.inf)
    upper = np.full(k, np.inf)
    for i, n in enumerate(names):
        if bounds and n in bounds:
            lower[i], upper[i] = bounds[n]
    if np.any(p < lower) or np.any(p > upper):
        raise ValueError("initial parameters outside bounds")

    def residual(q):
        return y - model(x, *q)

    r = residual(p)
    cost = float(r @ r)
    lam = 1e-3
    iterations = 0
    converged = False
    message = ""
    jac = forward_jacobian(model, x, p, lower, upper)
    while iterations < max_iterations:
        if cost == 0.0:
            converged = True
            break
        a = jac.T @ jac
        g = jac.T @ r
        d = np.diag(a).copy()
        d[d <= 0] = max(float(d.max(initial=0.0)) * 1e-12, 1e-300)
        iterations += 1
        try:
            step = np.linalg.solve(a + lam * np.diag(d), g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        p_new = np.clip(p + step, lower, upper)
        r_new = residual(p_new)
        cost_new = float(r_new @ r_new)
        if np.isfinite(cost_new) and cost_new < cost:
            change = np.linalg.norm(p_new - p)
            p, r, cost = p_new, r_new, cost_new
            lam = max(lam / 10, 1e-12)
            if change <= xtol * (np.linalg.norm(p) + xtol):
                converged = True
                break
            jac = forward_jacobian(model, x, p, lower, upper)
        else:
            lam *= 10
            if lam > 1e12:
                # no descent direction left at working precision
                converged = True
                message = "stationary point reached"
                break

    n = y.size
    a = jac.T @ jac
    errors = np.full(k, np.inf)
    diagnostics = [message] if message else []
    try:
        if np.linalg.cond(a) > 1e15:
            raise np.linalg.LinAlgError
        cov = np.linalg.inv(a)
        if n > k:
            cov *= cost / (n - k)
            errors = np.sqrt(np.abs(np.diag(cov)))
        else:
            errors = np.where(cost == 0.0, 0.0, np.inf) * np.ones(k)
    except np.linalg.LinAlgError:
        converged = False
        diagnostics.append("singular Jacobian")
    if not converged and iterations >= max_iterations:
        diagnostics.append("maximum iterations reached")
    return FitResult(
        model=name,
        params={nm: (float(v), float(e)) for nm, v, e in zip(names, p, errors)},
        rss=cost,
        converged=converged,
        iterations=iterations,
        diagnostics=diagnostics,
    )


def robust_noise(y) -> float:
    """Point-to-point noise level from the MAD of first differences."""
    y = np.asarray(y, dtype=float)
    if y.size < 3:
        return 0.0
    diff = np.diff(y)
    return MAD_SCALE * float(np.median(np.abs(diff - np.median(diff)))) / math.sqrt(2)


def _check_xy(x, y, minimum):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"x has {x.size} points but y has {y.size}")
    if x.size < minimum:
        raise PreconditionError(f"need at least {minimum} points, got {x.size}")
    order = np.argsort(x, kind="stable")
    return x[order], y[order]


# ---------------------------------------------------------------- Lorentzian

def lorentzian(x, center, fwhm, amplitude, offset):
    half = fwhm / 2
    return offset + amplitude * half**2 / ((x - center) ** 2 + half**2)


def fit_lorentzian(x, y, peak_sign: str = "dip") -> FitResult:
    """Fit a Lorentzian dip or peak; ``amplitude`` is negative for a dip."""
    if peak_sign not in ("dip", "peak"):
        raise ValueError("peak_sign must be 'dip' or 'peak'")
    x, y = _check_xy(x, y, 8)
    x0 = 0.5 * (x[0] + x[-1])
    span = x[-1] - x[0]
    if span <= 0:
        raise PreconditionError("sweep has zero span")
    xs = (x - x0) / span

    offset = float(np.median(y))
    smooth = np.convolve(y, np.ones(3) / 3, mode="same")
    smooth[0], smooth[-1] = y[0], y[-1]
    dev = smooth - offset if peak_sign == "peak" else offset - smooth
    depth = float(dev.max())
    noise = robust_noise(y)
    if depth <= 3 * noise:
        raise NoFeature(f"extremum depth {depth:.3g} below 3x noise floor {noise:.3g}")
    i_ext = int(np.argmax(dev))
    above = np.nonzero(dev > depth / 2)[0]
    step = float(np.min(np.diff(xs)))
    width = max(float(xs[above].max() - xs[above].min()), step)
    sign = 1.0 if peak_sign == "peak" else -1.0
    init = {"center": xs[i_ext], "fwhm": width, "amplitude": sign * depth, "offset": offset}
    bounds = {"fwhm": (step * 1e-3, 10.0), "center": (-1.5, 1.5)}
    res = least_squares(lorentzian, xs, y, init, bounds, name="lorentzian")

    c, ce = res.params["center"]
    w, we = res.params["fwhm"]
    if not (-0.5 <= c <= 0.5):
        raise NoFeature("fitted center lies outside the sweep window")
    if not (-0.5 <= c - abs(w) / 2 and c + abs(w) / 2 <= 0.5):
        raise NoFeature("feature extends past the sweep edge")
    if we > abs(w):
        raise NoFeature("feature width not resolved")
    if res.params["amplitude"][0] * sign <= 0:
        raise NoFeature("fitted feature has the wrong sign")
    res.params["center"] = (x0 + c * span, ce * span)
    res.params["fwhm"] = (abs(w) * span, we * span)
    return res


# --------------------------------------------------------------- oscillation

def oscillation(x, frequency, phase, amplitude, offset):
    return amplitude * np.cos(2 * np.pi * frequency * x + phase) + offset


def damped_oscillation(x, frequency, phase, amplitude, offset, decay_time):
    return amplitude * np.cos(2 * np.pi * frequency * x + phase) * np.exp(-x / decay_time) + offset


def _linear_seed(xs, y, freq, envelope):
    basis = np.column_stack(
        [np.cos(2 * np.pi * freq * xs) * envelope, np.sin(2 * np.pi * freq * xs) * envelope, np.ones_like(xs)]
    )
    (a, b, c), *_ = np.linalg.lstsq(basis, y, rcond=None)
    # a cos + b sin = A cos(theta + phi) with A cos(phi) = a, A sin(phi) = -b
    return math.hypot(a, b), math.atan2(-b, a), float(c)


def fit_oscillation(x, y, damped: bool = False) -> FitResult:
    """Fit ``A cos(2 pi f x + phi) [exp(-x/tau)] + B``.

    The frequency is seeded from the zero-padded DFT peak of the
    mean-subtracted data; amplitude, phase and offset are then seeded by a
    linear least-squares projection at that frequency.
    """
    x, y = _check_xy(x, y, 10)
    span = x[-1] - x[0]
    if span <= 0:
        raise PreconditionError("sweep has zero span")
    xs = x / span
    dx = float(np.median(np.diff(xs)))
    centred = y - y.mean()
    spectrum = np.abs(np.fft.rfft(centred))[1:]
    peak = float(spectrum.max(initial=0.0))
    floor = float(np.median(spectrum)) if spectrum.size else 0.0
    if peak <= 3 * floor or peak == 0.0:
        raise NoOscillation(f"spectral peak {peak:.3g} below 3x noise floor {floor:.3g}")
    npad = 16 * x.size
    padded = np.abs(np.fft.rfft(centred, n=npad))
    kpk = 1 + int(np.argmax(padded[1:]))
    freq0 = kpk / (npad * dx)

    tau0 = 0.5
    envelope = np.exp(-(xs - xs[0]) / tau0) if damped else np.ones_like(xs)
    amp0, phi0, off0 = _linear_seed(xs, y, freq0, envelope)
    if damped:
        amp0 *= math.exp(xs[0] / tau0)
        init = {"frequency": freq0, "phase": phi0, "amplitude": amp0, "offset": off0, "decay_time": tau0}
        bounds = {"frequency": (0.0, np.inf), "decay_time": (1e-6, 1e6)}
        model, name = damped_oscillation, "damped_oscillation"
    else:
        init = {"frequency": freq0, "phase": phi0, "amplitude": amp0, "offset": off0}
        bounds = {"frequency": (0.0, np.inf)}
        model, name = oscillation, "oscillation"
    res = least_squares(model, xs, y, init, bounds, name=name)

    f, fe = res.params["frequency"]
    a, ae = res.params["amplitude"]
    phi, phie = res.params["phase"]
    if a < 0:
        a, phi = -a, phi + np.pi
    phi = (phi + np.pi) % (2 * np.pi) - np.pi
    if f < 0.5:
        raise NoOscillation(f"only {f:.2f} periods inside the sweep window")
    res.params["frequency"] = (f / span, fe / span)
    res.params["amplitude"] = (a, ae)
    res.params["phase"] = (phi, phie)
    if damped:
        t, te = res.params["decay_time"]
        res.params["decay_time"] = (t * span, te * span)
    return res


# ------------------------------------------------------------- exponential

def exp_decay(x, t_decay, amplitude, offset):
    return amplitude * np.exp(-x / t_decay) + offset


CURVATURE_F = 10.0  # roughly the 1% point of F(1, n-3) for short sweeps


def fit_exp_decay(x, y) -> FitResult:
    x, y = _check_xy(x, y, 6)
    span = x[-1] - x[0]
    if span <= 0:
        raise PreconditionError("sweep has zero span")
    xs = x / span
    shifted = y - y.min()
    keep = shifted > 0
    if keep.sum() < 2:
        raise NoDecay("data shows no decay")
    slope, intercept = np.polyfit(xs[keep], np.log(shifted[keep]), 1)
    if slope >= 0:
        raise NoDecay("data does not decrease")
    init = {"t_decay": -1.0 / slope, "amplitude": math.exp(intercept), "offset": float(y.min())}
    init["t_decay"] = min(init["t_decay"], 1e3)
    res = least_squares(exp_decay, xs, y, init, {"t_decay": (1e-6, 1e6)}, name="exp_decay")
    t, te = res.params["t_decay"]
    a, ae = res.params["amplitude"]
    if t > 100:
        raise NoDecay(f"decay time {t * span:.3g} exceeds 100x the sweep span")
    if abs(a) < 2 * ae:
        raise NoDecay("decay amplitude consistent with zero")
    # a window much shorter than the decay only shows a straight line, which
    # pins the initial slope but not the time constant
    n = len(y)
    line = np.polyval(np.polyfit(xs, y, 1), xs)
    rss_line = float(np.sum((y - line) ** 2))
    if n > 3 and res.rss > 0 and (rss_line - res.rss) * (n - 3) / res.rss < CURVATURE_F:
        raise NoDecay("no curvature resolved: decay time not identifiable")
    if t > 1:
        res.diagnostics.append("sweep spans less than one decay constant")
    res.params["t_decay"] = (t * span, te * span)
    return res


# ------------------------------------------------------------ RB decay

def rb_decay(m, A, p, B):
    return A * p**m + B


def average_gate_fidelity(p: float, dim: int = 2) -> float:
    return 1 - (1 - p) * (dim - 1) / dim


def fit_rb_decay(depths, survival, dim: int = 2) -> FitResult:
    """Fit ``A p^m + B`` and derive the average gate fidelity."""
    m, y = _check_xy(depths, survival, 1)
    if np.unique(m).size < 4:
        raise PreconditionError("need at least 4 distinct depths")
    if np.ptp(y) <= 1e-12:
        res = FitResult("rb_decay", {"A": (0.0, 0.0), "p": (1.0, 0.0), "B": (float(y.mean()), 0.0)},
                        rss=0.0, converged=True, iterations=0, diagnostics=["no decay observed"])
    else:
        # for fixed p the model is linear in (A, B): scan p for a seed
        best = None
        for p0 in 1 - np.geomspace(1e-4, 0.5, 60):
            basis = np.column_stack([p0**m, np.ones_like(m)])
            coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
            rss = float(np.sum((basis @ coef - y) ** 2))
            if best is None or rss < best[0]:
                best = (rss, p0, coef)
        _, p0, (a0, b0) = best
        res = least_squares(rb_decay, m, y, {"A": a0, "p": p0, "B": b0}, {"p": (1e-6, 1.0)}, name="rb_decay")
        if not all(np.isfinite(v) for v, _ in res.params.values()):
            raise FitDiverged("non-finite RB fit parameters")
    p, pe = res.params["p"]
    res.derived["avg_gate_fidelity"] = (average_gate_fidelity(p, dim), pe * (dim - 1) / dim)
    return res


def power_decay(m, A, p):
    return A * p**m


def fit_power_decay(depths, values) -> FitResult:
    """Fit ``A p^m`` (no offset), the model used per filtered-RB irrep."""
    m, y = _check_xy(depths, values, 1)
    if np.unique(m).size < 4:
        raise PreconditionError("need at least 4 distinct depths")
    if np.ptp(y) <= 1e-12 and y[0] != 0:
        return FitResult("power_decay", {"A": (float(y[0]), 0.0), "p": (1.0, 0.0)},
                         rss=0.0, converged=True, iterations=0, diagnostics=["no decay observed"])
    best = None
    for p0 in 1 - np.geomspace(1e-4, 0.5, 60):
        basis = p0**m
        a0 = float(basis @ y / (basis @ basis))
        rss = float(np.sum((a0 * basis - y) ** 2))
        if best is None or rss < best[0]:
            best = (rss, p0, a0)
    _, p0, a0 = best
    res = least_squares(power_decay, m, y, {"A": a0, "p": p0}, {"p": (1e-6, 1.0)}, name="power_decay")
    if not res.converged or not all(np.isfinite(v) for v, _ in res.params.values()):
        raise FitDiverged("power-law decay fit did not converge")
    return res


# ------------------------------------------------------- IQ classification

@dataclass
class Classifier:
    iq_angle: float
    threshold: float
    assignment_fidelity: float

    def rotate(self, iq):
        iq = np.asarray(iq, dtype=float)
        c, s = math.cos(self.iq_angle), math.sin(self.iq_angle)
        return iq[:, 0] * c - iq[:, 1] * s

    def predict(self, iq):
        return (self.rotate(iq) > self.threshold).astype(int)


def train_classifier(iq_ground, iq_excited, min_separation: float = 0.1) -> Classifier:
    """Rotate the IQ plane onto the inter-mean axis and pick the best threshold.

    ``min_separation`` is the smallest mean separation accepted, in units of
    the pooled per-quadrature standard deviation.
    """
    g = np.asarray(iq_ground, dtype=float).reshape(-1, 2)
    e = np.asarray(iq_excited, dtype=float).reshape(-1, 2)
    if len(g) < 100 or len(e) < 100:
        raise PreconditionError("need at least 100 shots per state")
    mu0, mu1 = g.mean(axis=0), e.mean(axis=0)
    sep = float(np.linalg.norm(mu1 - mu0))
    pooled = math.sqrt(0.5 * (g.var(axis=0).mean() + e.var(axis=0).mean()))
    if sep == 0.0 or sep < min_separation * pooled:
        raise DegenerateClouds(f"cloud separation {sep:.3g} vs pooled spread {pooled:.3g}")
    angle = -math.atan2(mu1[1] - mu0[1], mu1[0] - mu0[0])
    clf = Classifier(angle, 0.0, 0.0)
    pg, pe = clf.rotate(g), clf.rotate(e)

    values = np.concatenate([pg, pe])
    labels = np.concatenate([np.zeros(pg.size), np.ones(pe.size)])
    order = np.argsort(values, kind="stable")
    values, labels = values[order], labels[order]
    # threshold between sorted[i-1] and sorted[i]: the first i points are assigned 0
    ground_below = np.concatenate([[0], np.cumsum(labels == 0)])
    excited_below = np.concatenate([[0], np.cumsum(labels == 1)])
    p10 = 1 - ground_below / pg.size
    p01 = excited_below / pe.size
    fid = 1 - 0.5 * (p10 + p01)
    distinct = np.concatenate([[True], values[1:] > values[:-1], [True]])
    fid = np.where(distinct, fid, -np.inf)
    i = int(np.argmax(fid))
    if i == 0:
        thr = values[0] - 1.0
    elif i == values.size:
        thr = values[-1] + 1.0
    else:
        thr = 0.5 * (values[i - 1] + values[i])
    return Classifier(angle, float(thr), float(fid[i]))
