"""Adaptive exponential integrate-and-fire neurons, forward Euler, vectorized.

All quantities are hardware SI units: volts, siemens, amperes, seconds.
::

    C dV/dt = -g_L (V - E_L) + g_L D_T exp((V - V_T) / D_T) - w + I_syn + I_ext
    tau_w dw/dt = a (V - E_L) - w

A spike is emitted when ``V >= V_spike``; then ``V <- V_reset``,
``w <- w + b`` and the membrane is held at ``V_reset`` for the refractory
period.  ``I_syn`` decays with ``tau_syn`` and jumps on delivered events.
``D_T = 0`` disables the exponential term (leaky integrate-and-fire).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

V_MIN, V_MAX = 0.0, 1.8
EXP_CLAMP = 10.0


@dataclass
class AdExParameters:
    """Per-neuron parameter arrays, all of the same length."""

    e_leak: np.ndarray
    v_exp: np.ndarray  # V_T, exponential threshold
    v_thresh: np.ndarray  # spike detection threshold
    v_reset: np.ndarray
    g_leak: np.ndarray
    a: np.ndarray
    b: np.ndarray
    delta_t: np.ndarray
    tau_w: np.ndarray
    tau_ref: np.ndarray
    tau_syn: np.ndarray
    i_gmax: np.ndarray
    c_mem: float = 2e-12

    FIELDS = ("e_leak", "v_exp", "v_thresh", "v_reset", "g_leak", "a", "b", "delta_t", "tau_w", "tau_ref",
              "tau_syn", "i_gmax")

    def __post_init__(self):
        arrays = {name: np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)) for name in self.FIELDS}
        n = max(len(a) for a in arrays.values())
        for name, arr in arrays.items():
            if len(arr) not in (1, n):
                raise ValueError(f"{name} has {len(arr)} entries, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} is not finite")
            setattr(self, name, np.broadcast_to(arr, (n,)).copy())
        if self.c_mem <= 0:
            raise ValueError("membrane capacitance must be positive")

    @classmethod
    def from_rows(cls, values: np.ndarray, c_mem: float = 2e-12) -> "AdExParameters":
        """From an (n, 12) array in the canonical parameter order."""
        values = np.asarray(values, dtype=np.float64)
        return cls(*[values[:, i] for i in range(len(cls.FIELDS))], c_mem=c_mem)

    def __len__(self):
        return len(self.e_leak)


class AdExPopulation:
    def __init__(self, params: AdExParameters, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.p = params
        self.dt = dt
        n = len(params)
        self.v = params.e_leak.copy()
        np.clip(self.v, V_MIN, V_MAX, out=self.v)
        self.w = np.zeros(n)
        self.i_syn = np.zeros(n)
        self.refractory_until = np.full(n, -1, dtype=np.int64)
        self.tick = 0
        # constants of the update
        with np.errstate(divide="ignore"):
            self._syn_decay = np.where(params.tau_syn > 0, np.exp(-dt / np.where(params.tau_syn > 0, params.tau_syn, 1.0)), 0.0)
        self._ref_ticks = np.rint(params.tau_ref / dt).astype(np.int64)
        self._exp_on = params.delta_t > 0
        self._dt_over_c = dt / params.c_mem
        self._w_on = params.tau_w > 0
        self._dt_over_tw = np.where(self._w_on, dt / np.where(self._w_on, params.tau_w, 1.0), 0.0)

    def inject(self, index, amplitude) -> None:
        np.add.at(self.i_syn, index, amplitude)

    def step(self, i_ext=0.0):
        """Advance one tick; returns (indices of spiking neurons, membrane before reset)."""
        p = self.p
        v, w = self.v, self.w
        active = self.refractory_until < self.tick
        leak = p.g_leak * (p.e_leak - v)
        if self._exp_on.any():
            d = np.where(self._exp_on, p.delta_t, 1.0)
            arg = np.minimum((v - p.v_exp) / d, EXP_CLAMP)
            leak = leak + np.where(self._exp_on, p.g_leak * p.delta_t * np.exp(arg), 0.0)
        dv = (leak - w + self.i_syn + i_ext) * self._dt_over_c
        dw = (p.a * (v - p.e_leak) - w) * self._dt_over_tw
        v_new = np.where(active, v + dv, p.v_reset)
        np.clip(v_new, V_MIN, V_MAX, out=v_new)
        self.w = w + dw
        self.i_syn = self.i_syn * self._syn_decay
        spiking = np.flatnonzero(active & (v_new >= p.v_thresh))
        v_pre = v_new.copy()
        if len(spiking):
            v_new[spiking] = p.v_reset[spiking]
            self.w[spiking] += p.b[spiking]
            self.refractory_until[spiking] = self.tick + self._ref_ticks[spiking]
        self.v = v_new
        self.tick += 1
        return spiking, v_pre
