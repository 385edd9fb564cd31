"""Seeded random sample points that avoid declared singular sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .expr.compile import compile_exprs


class SamplerExhausted(RuntimeError):
    """Too many candidate points fell on singular sets or poles."""


@dataclass
class SamplerConfig:
    """Boxes per variable, excluded sets and the random mode.

    Parameters
    ----------
    box:
        ``name -> (low, high)`` real ranges; names missing from the box use
        ``default_box``.
    singular:
        Expressions whose zero sets are excluded: a point is rejected when
        ``|s(point)| < margin`` for any of them.
    seed:
        Seed of the generator; equal seeds give identical draws.
    complex_mode:
        Add an imaginary part drawn from ``(-imag_scale, imag_scale)``.
    """

    box: Mapping = field(default_factory=dict)
    singular: Sequence = ()
    margin: float = 0.05
    seed: int = 0
    complex_mode: bool = False
    imag_scale: float = 0.25
    default_box: tuple = (-1.5, 1.5)


class Sampler:
    """Draws rows over an ordered list of variable names."""

    def __init__(self, config: SamplerConfig, names: Sequence[str]):
        self.config = config
        self.names = tuple(names)
        self.rng = np.random.default_rng(config.seed)
        sing = [s for s in config.singular if s.free_symbols <= set(self.names)]
        self._sing = compile_exprs(sing, self.names) if sing else None

    def _candidates(self, n: int) -> np.ndarray:
        cfg = self.config
        cols = []
        for name in self.names:
            lo, hi = cfg.box.get(name, cfg.default_box)
            col = self.rng.uniform(lo, hi, size=n).astype(np.complex128)
            if cfg.complex_mode:
                col = col + 1j * self.rng.uniform(-cfg.imag_scale, cfg.imag_scale, size=n)
            cols.append(col)
        return np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=np.complex128)

    def draw(self, n: int, max_tries: int = 50) -> np.ndarray:
        """``n`` accepted points, shape ``(n, len(names))``."""
        out = []
        have = 0
        for _ in range(max_tries):
            cand = self._candidates(max(2 * (n - have), 8))
            if self._sing is not None:
                vals = kernels.evaluate_program(self._sing, cand)
                ok = np.all(np.isfinite(vals) & (np.abs(vals) > self.config.margin), axis=1)
                cand = cand[ok]
            out.append(cand)
            have += len(cand)
            if have >= n:
                return np.concatenate(out)[:n]
        raise SamplerExhausted(f"only {have} of {n} points avoided the singular sets")
