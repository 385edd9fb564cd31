"""Shared fixtures and helpers."""

from __future__ import annotations

import numpy as np
import pytest

from hamext.catalog import default_catalog
from hamext.expr import Sym, parse_expr
from hamext.phasepoly import MomentumPolynomial, PhaseSpace


def coords(*names: str) -> tuple:
    return tuple(Sym(n, "coordinate") for n in names)


def params(*names: str) -> dict:
    return {n: Sym(n, "parameter") for n in names}


def poly(text: str, space: PhaseSpace, extra: dict | None = None) -> MomentumPolynomial:
    """Parse a momentum polynomial written with ``p_<coord>`` momenta."""
    table = dict(space.symbol_table())
    table.update(extra or {})
    return MomentumPolynomial.from_expr(parse_expr(text, table), space)


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
