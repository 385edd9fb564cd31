"""The system catalog: loading, self-validation, instantiation and scans."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from hamext.catalog import (
    CatalogError, CatalogParseError, ConstraintViolation, SelfValidationError, SingularValue, UnboundParameter,
    UnknownEntry, build_extension, catalog_path, certify_config, constraint_holds, constraint_instance,
    dumps_catalog, instantiate, load_catalog, loads_catalog, plan_extension, resolve_values, scan_entry,
    subspace_similarity, ttw_recover, ttw_recovery_check,
)
from hamext.verify import extension_sampler
from hamext.expr import core, is_zero
from hamext.phasepoly import poisson


@pytest.fixture(scope="module")
def text():
    return catalog_path().read_text()


def test_shipped_catalog_contents(catalog):
    assert len(catalog.family("E2")) == 20
    assert len(catalog.family("S2")) == 9
    for key in ("osc1", "osc3", "calogero3", "wolfes3", "ttw", "ttw-shifted"):
        assert key in catalog


def test_shipped_integrals_self_validate(catalog):
    assert catalog.failures() == {}
    for entry in catalog:
        for name, r in entry.validation.get("residuals", {}).items():
            assert r <= 1e-9, (entry.id, name, r)


def test_corrupted_expression_names_entry(text):
    bad = text.replace('a3*z*zb"', 'a3*z*zb +* 2"', 1)
    assert bad != text
    with pytest.raises(CatalogParseError) as err:
        loads_catalog(bad, validate=False)
    assert "E7" in str(err.value)


def test_wrong_integral_is_rejected(text):
    bad = text.replace('J: "x*p_y - y*p_x"', 'J: "x*p_y + y*p_x"', 1)
    assert bad != text
    with pytest.raises(SelfValidationError) as err:
        loads_catalog(bad, strict=True)
    assert "J" in str(err.value)
    cat = loads_catalog(bad)
    assert list(cat.failures()) == ["E3"]
    assert list(cat.failures()["E3"]) == ["J"]


def test_format_header_required():
    with pytest.raises(CatalogError):
        loads_catalog("systems: []\n")


def test_dump_roundtrip(catalog):
    again = loads_catalog(dumps_catalog(catalog), validate=False)
    assert again.ids() == catalog.ids()
    for a in catalog:
        b = again[a.id]
        assert is_zero(core.add(a.V, core.mul(-1, b.V))), a.id
        assert set(a.integrals) == set(b.integrals)
        for name in a.integrals:
            assert a.integrals[name] == b.integrals[name]
        assert [c.name for c in a.constraints] == [c.name for c in b.constraints]
    assert dumps_catalog(again) == dumps_catalog(catalog)


def test_env_override(monkeypatch, tmp_path, text):
    p = tmp_path / "cat.yaml"
    p.write_text(text)
    monkeypatch.setenv("HAMEXT_CATALOG", str(p))
    assert catalog_path() == p
    assert load_catalog(validate=False).path == p


def test_instantiate_errors(catalog):
    with pytest.raises(UnknownEntry):
        instantiate("E99", {}, catalog)
    with pytest.raises(UnboundParameter):
        instantiate("E1", {"a1": 1}, catalog)
    # zeta = 0 makes the chart and the potential blow up everywhere
    with pytest.raises(SingularValue):
        instantiate("ttw", {"a1": 1, "a2": 1, "lam": 2, "chi": 1, "zeta": 0}, catalog)


def test_instance_integrals_commute(catalog):
    inst = instantiate("E1", {"a1": Fraction(1, 3), "a2": 2, "a3": Fraction(1, 2)}, catalog)
    for name, I in inst.integrals.items():
        assert poisson(inst.L, I).is_zero(), name


def test_resolve_values_meets_a_constraint(catalog):
    values, L0 = resolve_values(catalog["E1"], {}, 2)
    num = {k: complex(core.evaluate(core.as_expr(v), {})) for k, v in values.items()}
    assert num["a1"] == 0 and num["a2"] == 0
    assert abs(complex(core.evaluate(core.as_expr(L0), {})) - num["a3"] / 2) < 1e-12
    # a given value is kept and the next constraint is used
    values, L0 = resolve_values(catalog["E1"], {"a1": 3}, 2)
    assert values["a1"] == 3 and complex(core.evaluate(core.as_expr(values["a2"]), {})) == 0


def test_plan_extension_uses_constraint(catalog):
    inst = instantiate("E1", {"a1": 0, "a2": 0, "a3": 1}, catalog)
    plan = plan_extension(inst, 2)
    assert plan.constraint == "i"
    assert plan.spec.L0 == core.as_expr(Fraction(1, 2))
    assert set(plan.free) == {"b1", "b2"}


def test_plan_extension_rejects_incompatible_values(catalog):
    inst = instantiate("E1", {"a1": 1, "a2": 1, "a3": 1}, catalog)
    with pytest.raises(ConstraintViolation):
        plan_extension(inst, 2)
    with pytest.raises(ConstraintViolation):
        plan_extension(inst, 2, L0=Fraction(1, 2))


def test_build_extension_commutes(catalog):
    # a1 = 0 leaves the x direction harmonic, so only G = b1 x survives
    inst = instantiate("E1", {"a1": 0, "a2": 2, "a3": 1}, catalog)
    ext = build_extension(inst, 3)
    assert ext.metadata["constraint"] == "iii"
    assert ext.metadata["G_free"] == ["b1"]
    for name, I in ext.integrals:
        assert poisson(ext.H, I).is_zero(), name


@pytest.mark.parametrize("eid, cname, m", [("E2", "aniso-x", 3), ("S7", "iv", 2), ("ttw", "any-F", 2)])
def test_constraint_instance_is_seeded_and_on_constraint(catalog, eid, cname, m):
    inst, L0 = constraint_instance(eid, cname, m, seed=5)
    again, L0b = constraint_instance(catalog[eid], cname, m, seed=5)
    assert inst.values == again.values and L0 == L0b
    assert constraint_holds(catalog[eid].constraint(cname), {**inst.values, "m": m, "L0": L0})
    other, _ = constraint_instance(eid, cname, m, seed=6)
    assert other.values != inst.values


def test_extension_sampler_avoids_the_u_singularity():
    inst, L0 = constraint_instance("S1", "iii", 2, seed=1)
    ext = build_extension(inst, 2, L0=L0)
    cfg = certify_config(inst, ext, seed=1)
    X = extension_sampler(ext, cfg).draw(200)
    # curved branch: S_kappa(c u)/c = sin(2 c u)/(2 c) must stay away from zero
    c = complex(core.evaluate(core.as_expr(ext.spec.c), {}))
    assert np.min(np.abs(np.sin(2 * c * X[:, 0]) / (2 * c))) > 1e-3
    assert np.array_equal(X, extension_sampler(ext, cfg).draw(200))
    assert not np.array_equal(X, extension_sampler(ext, cfg, 1).draw(200))


@pytest.mark.parametrize("eid", ["E1", "E4", "S1", "S6"])
def test_scan_entry_rows(catalog, eid):
    rows = scan_entry(catalog[eid], 2, draws=2, bracket_samples=10)
    assert rows and all(r.passed for r in rows)
    for r in rows:
        if r.kind in ("off", "harmonic") and not r.constraint.startswith("generic ("):
            assert r.dim == 0


def test_subspace_similarity():
    A = np.array([[1.0, 0, 0], [0, 1, 0]])
    assert subspace_similarity(A, A[::-1] * 3) == pytest.approx(1.0)
    assert subspace_similarity(A[:1], np.array([[0.0, 0, 1]])) == pytest.approx(0.0)


@pytest.mark.parametrize("b1, b2, zeta", [(1.0, 0.5, 1.0), (0.3, 2.0, 0.7), (1.0, 1.0, -0.5)])
def test_ttw_recover_identity(b1, b2, zeta):
    amp, xi = ttw_recover(b1, b2, zeta)
    r = np.sqrt(complex(zeta))
    for x in (0.2, 0.5, 0.9):
        S = lambda t: np.sin(r * t) / r  # noqa: E731
        assert abs(b1 * S(x) + b2 * np.cos(r * x) - amp * S(x + xi)) < 1e-12


def test_ttw_recovery_check(catalog):
    out = ttw_recovery_check(0.8, 0.6, 1.0, 1.0, catalog=catalog)
    assert out["match"] < 1e-12
    assert out["residual"] < 1e-9
    assert out["dim"] == 2 and out["nullspace_distance"] < 1e-8
