"""Parameter translation: biological units -> hardware units -> 10-bit codes.

Two stages.  First, biological model parameters are scaled into the
hardware's physical range (time by the speed-up factor, voltages by a scale
and offset, conductances and currents accordingly).  Second, physical values
become DAC codes through a per-circuit :class:`Transformation` looked up in a
:class:`CalibrationDb`, falling back to the ideal linear DAC map.
"""
from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


DAC_BITS = 10
DAC_MAX = (1 << DAC_BITS) - 1
V_MAX = 1.8
WEIGHT_MAX_CODE = 15
C_HW = 2e-12  # membrane capacitance of one neuron circuit, farad


class CalibError(Exception):
    pass


class OutOfDomain(CalibError, ValueError):
    pass


class NotInvertible(CalibError, ValueError):
    pass


class FitFailed(CalibError):
    pass


class DeviceError(CalibError):
    pass


class FormatVersionMismatch(CalibError, ValueError):
    pass


class Policy(enum.Enum):
    CLIP = "clip"
    ERROR = "error"
    IGNORE = "ignore"


Clip, Error, Ignore = Policy.CLIP, Policy.ERROR, Policy.IGNORE


# --------------------------------------------------------------------------
# unit translation


def translate_time(t_bio: float, alpha: float = 1e4, direction: str = "multiply") -> float:
    """Biological seconds to hardware seconds.

    ``multiply`` applies ``alpha * t`` as the formula is usually printed;
    ``divide`` gives ``t / alpha``, which is what an accelerated substrate
    physically needs.  The runner uses ``divide``.
    """
    if t_bio < 0:
        raise ValueError("time must be non-negative")
    if direction == "multiply":
        return alpha * t_bio
    if direction == "divide":
        return t_bio / alpha
    raise ValueError(f"unknown time direction {direction!r}")


def untranslate_time(t_hw: float, alpha: float = 1e4, direction: str = "multiply") -> float:
    if direction == "multiply":
        return t_hw / alpha
    if direction == "divide":
        return t_hw * alpha
    raise ValueError(f"unknown time direction {direction!r}")


def translate_voltage(v_bio: float, s: float = 10.0, o: float = 1.2) -> float:
    return s * v_bio + o


def untranslate_voltage(v_hw: float, s: float = 10.0, o: float = 1.2) -> float:
    return (v_hw - o) / s


@dataclass(frozen=True)
class UnitTranslation:
    alpha: float = 1e4
    s: float = 10.0
    o: float = 1.2
    time_direction: str = "divide"
    c_hw: float = C_HW

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.s == 0:
            raise ValueError("voltage scale must be non-zero")
        if self.time_direction not in ("multiply", "divide"):
            raise ValueError(f"unknown time direction {self.time_direction!r}")

    def time(self, t_bio):
        return translate_time(t_bio, self.alpha, self.time_direction)

    def time_back(self, t_hw):
        return untranslate_time(t_hw, self.alpha, self.time_direction)

    @property
    def time_factor(self) -> float:
        """Hardware seconds per biological second."""
        return self.alpha if self.time_direction == "multiply" else 1.0 / self.alpha

    def voltage(self, v_bio):
        return translate_voltage(v_bio, self.s, self.o)

    def voltage_back(self, v_hw):
        return untranslate_voltage(v_hw, self.s, self.o)

    def conductance(self, g_bio, c_bio):
        # tau = C/g must scale like time
        return g_bio * self.c_hw / c_bio / self.time_factor

    def current(self, i_bio, c_bio):
        return i_bio * self.s * self.c_hw / c_bio / self.time_factor


# --------------------------------------------------------------------------
# transformations


@dataclass(frozen=True)
class Transformation:
    """Polynomial with ascending coefficients, valid on ``domain``."""

    coefficients: tuple[float, ...]
    domain: tuple[float, float]
    kind: str = "polynomial"

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise ValueError("a transformation needs at least one coefficient")
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise ValueError(f"empty domain [{lo}, {hi}]")
        if self.kind != "polynomial":
            raise ValueError(f"unsupported transformation kind {self.kind!r}")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "domain", (lo, hi))

    def _eval(self, x: float) -> float:
        y = 0.0
        for c in reversed(self.coefficients):
            y = y * x + c
        return y

    def apply(self, x: float, policy: Policy = Clip) -> float:
        lo, hi = self.domain
        if lo <= x <= hi:
            return self._eval(x)
        if policy is Error:
            raise OutOfDomain(f"{x} outside [{lo}, {hi}]")
        if policy is Clip:
            return self._eval(min(max(x, lo), hi))
        return self._eval(x)

    __call__ = apply

    def image(self) -> tuple[float, float]:
        a, b = self._eval(self.domain[0]), self._eval(self.domain[1])
        return (a, b) if a <= b else (b, a)

    def direction(self) -> int:
        """+1 or -1 if strictly monotone on the domain (64-point check), else raise."""
        lo, hi = self.domain
        ys = [self._eval(x) for x in np.linspace(lo, hi, 64)]
        steps = np.diff(ys)
        if np.all(steps > 0):
            sign = 1
        elif np.all(steps < 0):
            sign = -1
        else:
            raise NotInvertible(f"{self} is not monotone on its domain")
        # a turning point between two samples would also break bisection
        deriv = np.polynomial.polynomial.polyder(self.coefficients)
        scale = max(abs(c) for c in deriv) if len(deriv) else 0.0
        deriv = np.polynomial.polynomial.polytrim(deriv, tol=scale * 1e-14) if scale else deriv
        if len(deriv) > 1:
            for r in np.polynomial.polynomial.polyroots(deriv):
                if abs(r.imag) < 1e-12 and lo < r.real < hi:
                    eps = 1e-9 * (hi - lo)
                    d_lo = np.polynomial.polynomial.polyval(r.real - eps, deriv)
                    d_hi = np.polynomial.polynomial.polyval(r.real + eps, deriv)
                    if d_lo * d_hi < 0:
                        raise NotInvertible(f"{self} turns around at {r.real:g}")
        return sign

    def reverse_apply(self, y: float, policy: Policy = Clip, tol: float = 1e-12) -> float:
        """Numeric inverse by bisection on the domain."""
        sign = self.direction()
        lo, hi = self.domain
        y_lo, y_hi = self.image()
        if not y_lo <= y <= y_hi:
            if policy is Error:
                raise OutOfDomain(f"{y} outside the image [{y_lo}, {y_hi}]")
            if policy is Clip:
                return lo if (y < y_lo) == (sign > 0) else hi
            return self._solve_outside(y)
        a, b = lo, hi
        width = (hi - lo) * tol
        for _ in range(200):
            mid = 0.5 * (a + b)
            if (self._eval(mid) - y) * sign < 0:
                a = mid
            else:
                b = mid
            if b - a <= width:
                break
        return 0.5 * (a + b)

    def _solve_outside(self, y):
        shifted = list(self.coefficients)
        shifted[0] -= y
        roots = [r.real for r in np.polynomial.polynomial.polyroots(shifted) if abs(r.imag) < 1e-9]
        if not roots:
            raise NotInvertible(f"no real preimage of {y}")
        lo, hi = self.domain
        return float(min(roots, key=lambda r: max(lo - r, r - hi, 0.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "coefficients": list(self.coefficients), "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, raw) -> "Transformation":
        return cls(tuple(raw["coefficients"]), tuple(raw["domain"]), raw.get("kind", "polynomial"))


def linear(gain: float, offset: float, domain) -> Transformation:
    return Transformation((offset, gain), tuple(domain))


def apply(t: Transformation, x: float, policy: Policy = Clip) -> float:
    return t.apply(x, policy)


def reverse_apply(t: Transformation, y: float, policy: Policy = Clip) -> float:
    return t.reverse_apply(y, policy)


# --------------------------------------------------------------------------
# DAC codes


def digitize(v: float, v_max: float = V_MAX) -> int:
    if not 0.0 <= v <= v_max:
        raise OutOfDomain(f"{v} V outside [0, {v_max}]")
    return int(math.floor(v / v_max * DAC_MAX + 0.5))


def undigitize(code: int, v_max: float = V_MAX) -> float:
    if not 0 <= code <= DAC_MAX:
        raise OutOfDomain(f"code {code} outside [0, {DAC_MAX}]")
    return code / DAC_MAX * v_max


def to_code(value: float) -> int:
    """Round a transformed value to a valid DAC code."""
    return int(min(max(math.floor(value + 0.5), 0), DAC_MAX))


def weight_code(w: float, w_max: float) -> int:
    """Biological weight to the 4-bit digital weight, clipping at ``w_max``."""
    if w < 0:
        raise ValueError("only excitatory (non-negative) weights are supported")
    if w_max <= 0:
        raise ValueError("w_max must be positive")
    return int(min(math.floor(w / w_max * WEIGHT_MAX_CODE + 0.5), WEIGHT_MAX_CODE))


# --------------------------------------------------------------------------
# neuron parameter table


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    quantity: str  # voltage, conductance, current, time
    hw_max: float
    degree: int


NEURON_PARAMETERS: tuple[ParameterSpec, ...] = (
    ParameterSpec("e_leak", "voltage", V_MAX, 1),
    ParameterSpec("v_exp", "voltage", V_MAX, 1),
    ParameterSpec("v_thresh", "voltage", V_MAX, 1),
    ParameterSpec("v_reset", "voltage", V_MAX, 1),
    ParameterSpec("g_leak", "conductance", 5e-6, 1),
    ParameterSpec("a", "conductance", 5e-6, 1),
    ParameterSpec("b", "current", 1e-6, 1),
    ParameterSpec("delta_t", "voltage", 0.5, 1),
    ParameterSpec("tau_w", "time", 200e-6, 2),
    ParameterSpec("tau_ref", "time", 10e-6, 2),
    ParameterSpec("tau_syn", "time", 20e-6, 2),
    ParameterSpec("i_gmax", "current", 5e-6, 1),
)
PARAMETERS = {p.name: p for p in NEURON_PARAMETERS}
PARAMETER_NAMES = tuple(p.name for p in NEURON_PARAMETERS)


def ideal(parameter: str) -> Transformation:
    """The uncalibrated DAC map: hardware value -> code, linear over the full range."""
    spec = PARAMETERS[parameter]
    return Transformation((0.0, DAC_MAX / spec.hw_max), (0.0, spec.hw_max))


def code_to_value(parameter: str, code: int) -> float:
    """Nominal hardware value of a code, ignoring circuit variation."""
    if not 0 <= code <= DAC_MAX:
        raise OutOfDomain(f"{parameter} code {code} outside [0, {DAC_MAX}]")
    return code / DAC_MAX * PARAMETERS[parameter].hw_max


# biological defaults in PyNN-style units: ms, mV, nF, nA, uS... except a in nS
BIO_DEFAULTS = {
    "cm": 0.2,          # nF
    "tau_m": 10.0,      # ms
    "v_rest": -65.0,    # mV
    "v_reset": -65.0,   # mV
    "v_thresh": -50.0,  # mV, exponential threshold V_T
    "v_spike": -40.0,   # mV, spike detection
    "delta_T": 2.0,     # mV; 0 disables the exponential term
    "a": 0.0,           # nS
    "b": 0.0,           # nA
    "tau_w": 100.0,     # ms
    "tau_refrac": 2.0,  # ms
    "tau_syn_E": 5.0,   # ms
}


def bio_to_hw(params: Mapping[str, float], units: UnitTranslation, w_max: float = 1.0) -> dict[str, float]:
    """Biological neuron parameters to hardware physical values.

    ``w_max`` (nA) is the biological synaptic current of the strongest
    4-bit weight; it sets the synaptic current scale ``i_gmax``.
    """
    p = dict(BIO_DEFAULTS)
    unknown = set(params) - set(p)
    if unknown:
        raise ValueError(f"unknown neuron parameters {sorted(unknown)}")
    p.update(params)
    c_bio = p["cm"] * 1e-9
    if c_bio <= 0 or p["tau_m"] <= 0:
        raise ValueError("cm and tau_m must be positive")
    g_bio = c_bio / (p["tau_m"] * 1e-3)
    mv = 1e-3
    return {
        "e_leak": units.voltage(p["v_rest"] * mv),
        "v_exp": units.voltage(p["v_thresh"] * mv),
        "v_thresh": units.voltage(p["v_spike"] * mv),
        "v_reset": units.voltage(p["v_reset"] * mv),
        "g_leak": units.conductance(g_bio, c_bio),
        "a": units.conductance(p["a"] * 1e-9, c_bio),
        "b": units.current(p["b"] * 1e-9, c_bio),
        "delta_t": units.s * p["delta_T"] * mv,
        "tau_w": units.time(p["tau_w"] * 1e-3),
        "tau_ref": units.time(p["tau_refrac"] * 1e-3),
        "tau_syn": units.time(p["tau_syn_E"] * 1e-3),
        "i_gmax": units.current(w_max * 1e-9, c_bio),
    }


# --------------------------------------------------------------------------
# calibration database

DB_FORMAT = "waferkit.calibration"
DB_VERSION = 1


def _key(coord) -> str:
    return f"{type(coord).__name__}:{coord.enum}"


@dataclass
class CalibrationDb:
    transformations: dict[tuple[str, str], Transformation] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def set(self, coord, parameter: str, t: Transformation) -> None:
        if parameter not in PARAMETERS:
            raise KeyError(f"unknown parameter {parameter!r}")
        self.transformations[(_key(coord), parameter)] = t

    def get(self, coord, parameter: str) -> Transformation | None:
        return self.transformations.get((_key(coord), parameter))

    def lookup(self, coord, parameter: str) -> Transformation:
        """Stored transformation, or the ideal DAC map when uncalibrated."""
        return self.get(coord, parameter) or ideal(parameter)

    def code(self, coord, parameter: str, value: float, policy: Policy = Clip) -> int:
        return to_code(self.lookup(coord, parameter).apply(value, policy))

    def __len__(self):
        return len(self.transformations)

    def to_dict(self) -> dict:
        return {
            "format": DB_FORMAT,
            "version": DB_VERSION,
            "metadata": self.metadata,
            "entries": [
                {"coord": k, "parameter": p, **t.to_dict()}
                for (k, p), t in sorted(self.transformations.items())
            ],
        }

    @classmethod
    def from_dict(cls, raw) -> "CalibrationDb":
        if raw.get("format") != DB_FORMAT or raw.get("version") != DB_VERSION:
            raise FormatVersionMismatch(f"unsupported calibration db {raw.get('format')!r} v{raw.get('version')!r}")
        db = cls(metadata=dict(raw.get("metadata", {})))
        for e in raw["entries"]:
            key = (e["coord"], e["parameter"])
            if key in db.transformations:
                raise ValueError(f"duplicate calibration entry {key}")
            db.transformations[key] = Transformation.from_dict(e)
        return db

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "CalibrationDb":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_db(path) -> CalibrationDb:
    if path is None or not os.path.exists(path):
        return CalibrationDb()
    return CalibrationDb.load(path)


# --------------------------------------------------------------------------
# fitting


def fit(values: Sequence[float], codes: Sequence[int], degree: int, domain=None,
        max_residual: float = 2.0) -> Transformation:
    """Least-squares polynomial mapping measured hardware values to codes.

    ``max_residual`` is the largest tolerated RMS residual in code units.
    """
    x = np.asarray(values, dtype=float)
    y = np.asarray(codes, dtype=float)
    if len(x) != len(y):
        raise FitFailed("values and codes differ in length")
    if len(np.unique(x)) <= degree:
        raise FitFailed(f"{len(np.unique(x))} distinct points cannot determine a degree-{degree} fit")
    if not np.all(np.isfinite(x)):
        raise FitFailed("non-finite measurement")
    coeffs = np.polynomial.polynomial.polyfit(x, y, degree)
    residual = float(np.sqrt(np.mean((np.polynomial.polynomial.polyval(x, coeffs) - y) ** 2)))
    if residual > max_residual:
        raise FitFailed(f"fit residual {residual:.3g} codes exceeds {max_residual}")
    if domain is None:
        domain = (float(x.min()), float(x.max()))
    return Transformation(tuple(float(c) for c in coeffs), tuple(domain))


def calibrate(device, coord, parameter: str, sweep: Iterable[int], db: CalibrationDb | None = None,
              degree: int | None = None, max_residual: float = 2.0) -> Transformation:
    """Sweep ``parameter`` over DAC codes on ``device``, fit and store the inverse map.

    ``device`` needs a ``measure(coord, parameter, code) -> float`` method that
    returns the observed hardware value (e.g. the threshold seen as the
    membrane peak before reset).
    """
    if parameter not in PARAMETERS:
        raise KeyError(f"unknown parameter {parameter!r}")
    codes = [int(c) for c in sweep]
    for c in codes:
        if not 0 <= c <= DAC_MAX:
            raise OutOfDomain(f"sweep code {c} outside [0, {DAC_MAX}]")
    spec = PARAMETERS[parameter]
    degree = spec.degree if degree is None else degree
    if len(set(codes)) <= degree:
        raise FitFailed(f"{len(set(codes))} sweep points cannot determine a degree-{degree} fit")
    try:
        measured = [float(device.measure(coord, parameter, c)) for c in codes]
    except CalibError:
        raise
    except Exception as err:
        raise DeviceError(f"measurement failed: {err}") from err
    t = fit(measured, codes, degree, domain=(0.0, spec.hw_max), max_residual=max_residual)
    if db is not None:
        db.set(coord, parameter, t)
    return t
