"""Multiplicative de-autocorrelation: Schulz-Snyder and Anchor-Update.

Both methods reduce the I-divergence between a measured auto-correlation
``chi`` and a model built from the current non-negative estimate ``o``:

* SS: model ``o ⋆ o``; update direction ``o * [r * o + r ⋆ o] / 2``
* AU: model ``o * K`` with ``K = o ⋆ H``; update direction ``o * [r * flip(K)]``

where ``r = chi / model`` with the denominator floored at
``epsilon * max(model)``. The direction is rescaled so the new flux
minimizes the majorizing surrogate (see ``_normalized``); at a fixed point
this is the familiar division by ``2 sum o`` or ``sum K``. The estimate lives on the shift-space grid of
``chi``; a smaller initial guess is zero padded into it, which doubles as a
support constraint since multiplicative updates never revive zeros.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import LINEAR, AutocorrVolume, PadPolicy, irfftn, rfftn, to_native
from .volume import Volume, crop_center, pad_to

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when an iteration produces non-finite values or inputs are unusable."""


@dataclass(frozen=True)
class SolverOptions:
    iterations: int = 1000
    epsilon: float = 1e-12
    # 0 records only the first and last iterate
    log_every: int = 1
    policy: PadPolicy = LINEAR

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 < self.epsilon <= 1e-6:
            raise ValueError("epsilon must lie in (0, 1e-6]")
        if self.log_every < 0:
            raise ValueError("log_every must be >= 0")


@dataclass
class SolverState:
    """Current estimate on the working grid plus the convergence trace.

    ``trace`` rows are ``(t, idiv, flux)`` where ``idiv`` is the I-divergence
    of iterate ``t`` and ``flux`` its sum.
    """

    estimate: np.ndarray
    t: int = 0
    trace: list = field(default_factory=list)
    out_dims: tuple | None = None
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def to_volume(self) -> Volume:
        v = Volume(self.estimate, self.voxel_size)
        if self.out_dims is not None and tuple(self.out_dims) != v.dims:
            v = crop_center(v, self.out_dims)
        return v


def i_divergence(measured, model) -> float:
    """Csiszar I-divergence ``sum m ln(m/p) - m + p``.

    ``0 ln(0/p)`` counts as 0; a voxel with ``m > 0`` and ``p <= 0`` makes the
    result ``inf``.
    """
    m = np.asarray(getattr(measured, "data", measured), dtype=np.float64)
    p = np.asarray(getattr(model, "data", model), dtype=np.float64)
    if m.shape != p.shape:
        raise ValueError(f"dims mismatch: {m.shape} vs {p.shape}")
    if np.any(m < 0):
        raise ValueError("measured auto-correlation must be non-negative")
    pos = m > 0
    if np.any(p[pos] <= 0):
        return math.inf
    return _idiv(m, p, pos)


def _idiv(m: np.ndarray, p: np.ndarray, pos: np.ndarray) -> float:
    mp = m[pos]
    return float(np.sum(mp * np.log(mp / p[pos])) - mp.sum() + p.sum())


def _floor(den: np.ndarray, eps: float) -> np.ndarray:
    return np.maximum(den, eps * float(den.max()))


def _normalized(a: np.ndarray, H_sum: float) -> np.ndarray:
    """Scale the unnormalized update ``a = o * back`` to the surrogate minimizer.

    Both models are quadratic in ``o`` with total mass ``(sum o)^2 sum H``;
    minimizing the Jensen surrogate gives ``sum o_next = sqrt(sum a / sum H)``.
    At a fixed point this equals dividing by ``2 sum o`` (SS) or ``sum K``
    (AU), but it also holds off equilibrium, which keeps the I-divergence
    monotone.
    """
    a = np.maximum(a, 0.0)
    return a / math.sqrt(float(a.sum()) * H_sum)


# negatives smaller than this fraction of the max are FFT round-off
ROUNDOFF = 1e-6


def _nonnegative(a: np.ndarray, what: str) -> np.ndarray:
    a = a.astype(np.float64)
    low = float(a.min())
    if low < 0:
        if -low > ROUNDOFF * float(np.abs(a).max()):
            raise SolverError(f"{what} has negative values (min {low:.3g})")
        a = np.maximum(a, 0.0)
    return a


class _Problem:
    """Precomputed arrays shared by every step of one solve."""

    def __init__(self, chi: AutocorrVolume, H: AutocorrVolume | None = None):
        if chi.layout != "native":
            chi = to_native(chi)
        self.chi = _nonnegative(chi.data, "measured auto-correlation")
        self.pos = self.chi > 0
        self.shape = self.chi.shape
        self.H_spec = None
        self.H_sum = 1.0
        if H is not None:
            if H.layout != "native":
                H = to_native(H)
            if H.dims != chi.dims:
                raise SolverError(f"H dims {H.dims} differ from chi dims {chi.dims}")
            h = _nonnegative(H.data, "H")
            if h.sum() <= 0:
                raise SolverError("H must have a positive sum")
            self.H_sum = float(h.sum())
            self.H_spec = rfftn(h)

    def ss(self, o: np.ndarray, eps: float) -> tuple[np.ndarray, float]:
        """One SS update; returns ``(o_next, idiv(o))``."""
        O = rfftn(o)
        model = _floor(irfftn(O.real**2 + O.imag**2, s=self.shape), eps)
        idiv = _idiv(self.chi, model, self.pos)
        R = rfftn(self.chi / model)
        # (r * o + r ⋆ o) / 2 share the spectrum of o: Re(R) O
        back = irfftn(R.real * O, s=self.shape)
        return _normalized(o * back, 1.0), idiv

    def au(self, o: np.ndarray, eps: float) -> tuple[np.ndarray, float]:
        """One AU update; ``K = o ⋆ H`` is rebuilt from the current ``o``."""
        O = rfftn(o)
        K_spec = np.conj(O) * self.H_spec
        model = _floor(irfftn(O * K_spec, s=self.shape), eps)
        idiv = _idiv(self.chi, model, self.pos)
        R = rfftn(self.chi / model)
        # r * flip(K) == K ⋆ r
        back = irfftn(np.conj(K_spec) * R, s=self.shape)
        return _normalized(o * back, self.H_sum), idiv

    def idiv(self, o: np.ndarray, eps: float, method: str) -> float:
        O = rfftn(o)
        spec = O.real**2 + O.imag**2
        if method == "au":
            spec = spec * self.H_spec
        model = _floor(irfftn(spec, s=self.shape), eps)
        return _idiv(self.chi, model, self.pos)


def _checked(o: np.ndarray, t: int) -> np.ndarray:
    if not np.all(np.isfinite(o)):
        raise SolverError(f"non-finite values in estimate at iteration {t}")
    return o


def _as_estimate(state: SolverState, chi: AutocorrVolume) -> np.ndarray:
    o = np.asarray(state.estimate, dtype=np.float64)
    if o.shape != chi.dims:
        raise SolverError(f"estimate dims {o.shape} differ from chi dims {chi.dims}")
    return o


def ss_step(state: SolverState, chi: AutocorrVolume, opts: SolverOptions = SolverOptions()) -> SolverState:
    """Advance a Schulz-Snyder state by one iteration (pure; returns a new state)."""
    o = _as_estimate(state, chi)
    o_next, idiv = _Problem(chi).ss(o, opts.epsilon)
    trace = list(state.trace) + [(state.t, idiv, float(o.sum()))]
    return SolverState(_checked(o_next, state.t + 1), state.t + 1, trace, state.out_dims, state.voxel_size)


def au_step(
    state: SolverState, chi: AutocorrVolume, H: AutocorrVolume, opts: SolverOptions = SolverOptions()
) -> SolverState:
    """Advance an Anchor-Update state by one iteration (pure; returns a new state)."""
    o = _as_estimate(state, chi)
    o_next, idiv = _Problem(chi, H).au(o, opts.epsilon)
    trace = list(state.trace) + [(state.t, idiv, float(o.sum()))]
    return SolverState(_checked(o_next, state.t + 1), state.t + 1, trace, state.out_dims, state.voxel_size)


def initial_state(chi: AutocorrVolume, init: Volume) -> SolverState:
    """Embed ``init`` in the shift-space grid of ``chi``."""
    if any(n > m for n, m in zip(init.dims, chi.dims)):
        raise SolverError(f"init dims {init.dims} exceed chi dims {chi.dims}")
    data = init.data.astype(np.float64)
    if np.any(data < 0):
        raise SolverError("initial estimate must be non-negative")
    if not data.sum() > 0:
        raise SolverError("initial estimate is identically zero")
    work = pad_to(init, chi.dims).data.astype(np.float64) if init.dims != chi.dims else data
    return SolverState(work, 0, [], init.dims, init.voxel_size)


def solve(
    chi: AutocorrVolume,
    init: Volume,
    method: str = "ss",
    H: AutocorrVolume | None = None,
    opts: SolverOptions = SolverOptions(),
    callback=None,
) -> SolverState:
    """Run ``opts.iterations`` SS or AU iterations from ``init``.

    With zero iterations ``init`` is returned untouched (embedded in the
    working grid). The flux settles on ``sqrt(sum chi / sum H)`` after the
    first update.

    ``callback(t, estimate)`` is invoked after every iteration when given.
    """
    method = method.lower()
    if method not in ("ss", "au"):
        raise ValueError(f"unknown method {method!r}")
    if method == "au" and H is None:
        raise SolverError("AU needs the auto-correlated PSF H")
    state = initial_state(chi, init)
    if opts.iterations == 0:
        return state

    problem = _Problem(chi, H if method == "au" else None)
    step = problem.au if method == "au" else problem.ss
    o = state.estimate
    trace = []
    every = opts.log_every
    for t in range(opts.iterations):
        o_next, idiv = step(o, opts.epsilon)
        if (every and t % every == 0) or t == 0:
            trace.append((t, idiv, float(o.sum())))
        o = _checked(o_next, t + 1)
        if callback is not None:
            callback(t + 1, o)
    T = opts.iterations
    trace.append((T, problem.idiv(o, opts.epsilon, method), float(o.sum())))
    log.debug("%s finished %d iterations, idiv %.6g", method, T, trace[-1][1])
    return SolverState(o, T, trace, state.out_dims, state.voxel_size)


def trace_is_monotone(trace, slack: float = 1e-9) -> bool:
    """True when the I-divergence never rises by more than ``slack`` (relative) per row."""
    values = [row[1] for row in trace]
    return all(b <= a + slack * abs(a) for a, b in zip(values, values[1:]))
