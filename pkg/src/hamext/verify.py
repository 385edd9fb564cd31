"""Numerical verification of first integrals and extensions.

Four independent checks are provided:

* :func:`bracket_residual_max` samples ``{H, F}`` at random phase points and
  divides by the magnitude of the individual bracket terms;
* :func:`conservation_drift` integrates Hamilton's equations with an adaptive
  Dormand-Prince pair and records how far each integral wanders;
* :func:`independence_rank` computes the rank of the stacked gradients;
* :func:`certify` runs all of them (plus the Hessian and compatibility
  residuals of ``G``) on an :class:`~hamext.extension.ExtendedSystem`.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .expr import core
from .expr import normal as nf
from .expr.compile import compile_exprs
from .expr.core import Expr
from .extension import ExtendedSystem, gamma_expr
from .geometry import Chart, christoffel, metric
from .phasepoly import MomentumPolynomial, PhaseSpace, stack_programs
from .sampling import Sampler, SamplerConfig, SamplerExhausted

DEFAULT_MOMENTUM_BOX = (-1.0, 1.0)
DEFAULT_U_BOX = (0.3, 1.3)


class VerificationError(RuntimeError):
    """A verification could not be carried out."""


class IntegrationFailure(VerificationError):
    """The integrator stopped early (step underflow, step budget, overflow)."""

    def __init__(self, message: str, status: int, t_fail: float):
        super().__init__(message)
        self.status = status
        self.t_fail = t_fail


# ----------------------------------------------------------------- sampling


def phase_sampler(space: PhaseSpace, box: Mapping | None = None, singular: Sequence = (), seed: int = 0,
                  complex_mode: bool = False, momentum_box: tuple = DEFAULT_MOMENTUM_BOX,
                  margin: float = 0.05) -> Sampler:
    """Sampler over the phase variables of ``space``.

    Coordinates missing from ``box`` use ``DEFAULT_U_BOX`` (the extension
    coordinate stays away from ``u = 0``); momenta use ``momentum_box``.
    """
    full = {p: momentum_box for p in space.momentum_names}
    for c in space.coord_names:
        full[c] = DEFAULT_U_BOX
    full.update(dict(box or {}))
    cfg = SamplerConfig(box=full, singular=tuple(singular), seed=seed, complex_mode=complex_mode, margin=margin)
    return Sampler(cfg, space.phase_names)


def _param_inputs(polys: Sequence[MomentumPolynomial], params: Mapping | None) -> tuple:
    free = set()
    for P in polys:
        free |= P.free_parameters()
    params = dict(params or {})
    missing = sorted(free - params.keys())
    if missing:
        raise VerificationError(f"unbound parameters {missing}")
    names = sorted(free)
    return names, np.array([complex(params[n]) for n in names], dtype=np.complex128)


def _draw_finite(sampler: Sampler, prog, pvals: np.ndarray, n: int, max_rounds: int = 20):
    """``n`` sample rows where every output of ``prog`` is finite."""
    rows, outs = [], []
    have = 0
    for _ in range(max_rounds):
        X = sampler.draw(max(n - have, 1))
        Xp = np.concatenate([X, np.tile(pvals, (len(X), 1))], axis=1) if pvals.size else X
        vals = kernels.evaluate_program(prog, Xp)
        ok = np.all(np.isfinite(vals), axis=1)
        rows.append(X[ok])
        outs.append(vals[ok])
        have += int(ok.sum())
        if have >= n:
            return np.concatenate(rows)[:n], np.concatenate(outs)[:n]
    raise SamplerExhausted(f"only {have} of {n} points gave finite values")


# ------------------------------------------------------------------ brackets


def bracket_residuals(H: MomentumPolynomial, F: MomentumPolynomial, sampler: Sampler, N: int = 100,
                      params: Mapping | None = None) -> np.ndarray:
    """Relative ``|{H, F}|`` at ``N`` sampled points.

    Each value is ``|sum_i t_i| / sum_i |t_i|`` where the ``t_i`` are the
    products ``dH/dp_i dF/dq^i`` and ``-dH/dq^i dF/dp_i``; a point where every
    term vanishes counts as zero.
    """
    if H.space != F.space:
        raise VerificationError(f"charts differ: {H.space.id} vs {F.space.id}")
    if F == H:
        return np.zeros(N)
    names, pvals = _param_inputs([H, F], params)
    inputs = list(H.space.phase_names) + names
    prog = stack_programs([H, F], inputs, "gradient")
    _, vals = _draw_finite(sampler, prog, pvals, N)
    n = H.space.n
    gH, gF = vals[:, : 2 * n], vals[:, 2 * n:]
    terms = np.concatenate([gH[:, n:] * gF[:, :n], -gH[:, :n] * gF[:, n:]], axis=1)
    num = np.abs(terms.sum(axis=1))
    den = np.abs(terms).sum(axis=1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def bracket_residual_max(H: MomentumPolynomial, F: MomentumPolynomial, sampler: Sampler, N: int = 100,
                         params: Mapping | None = None) -> float:
    """Maximum of :func:`bracket_residuals` (``0.0`` for ``F = H``)."""
    return float(np.max(bracket_residuals(H, F, sampler, N, params)))


# --------------------------------------------------------------------- drift


@dataclass
class DriftResult:
    """Per-integral drift along one trajectory."""

    drift: dict
    t_end: float
    steps: int
    tol: float
    initial: list

    def max(self) -> float:
        return max(self.drift.values()) if self.drift else 0.0


def hamilton_program(H: MomentumPolynomial, param_names: Sequence[str]):
    """Program mapping (q, p, params) to (dH/dp, -dH/dq)."""
    n = H.space.n
    grads = H.gradient_exprs()
    exprs = [grads[n + i] for i in range(n)] + [core.mul(-1, grads[i]) for i in range(n)]
    return compile_exprs(exprs, list(H.space.phase_names) + list(param_names))


def trajectory(H: MomentumPolynomial, initial: Sequence[float], T: float, tol: float,
               params: Mapping | None = None, max_steps: int = 400_000):
    """Accepted steps ``(ts, ys)`` of the flow of ``H`` from ``initial``."""
    names, pvals = _param_inputs([H], params)
    if np.any(np.abs(pvals.imag) > 0):
        raise VerificationError("trajectories need real parameter values")
    prog = hamilton_program(H, names)
    y0 = np.asarray(initial, dtype=np.float64)
    if y0.shape != (2 * H.space.n,):
        raise VerificationError(f"initial point must have {2 * H.space.n} entries")
    ts, ys, status, t_fail = kernels.integrate_flow(prog, y0, pvals, T, tol, max_steps=max_steps)
    if status != kernels.STATUS_OK:
        why = {kernels.STATUS_UNDERFLOW: "step-size underflow", kernels.STATUS_MAXSTEPS: "step budget exhausted",
               kernels.STATUS_NONFINITE: "non-finite state"}.get(status, "failure")
        raise IntegrationFailure(f"{why} at t = {t_fail:.6g}", status, t_fail)
    return ts, ys


def conservation_drift(H: MomentumPolynomial, integrals: Mapping, initial: Sequence[float], T: float,
                       tol: float, params: Mapping | None = None) -> DriftResult:
    """Max over the trajectory of ``|I(t) - I(0)| / (1 + |I(0)|)`` for each integral."""
    ts, ys = trajectory(H, initial, T, tol, params)
    out = {}
    for name, I in integrals.items():
        if I.space != H.space:
            raise VerificationError(f"integral {name} lives on {I.space.id}, not {H.space.id}")
        inames, ipv = _param_inputs([I], params)
        prog = I.program(list(H.space.phase_names) + inames)
        X = ys.astype(np.complex128)
        if ipv.size:
            X = np.concatenate([X, np.tile(ipv, (len(X), 1))], axis=1)
        vals = kernels.evaluate_program(prog, X)[:, 0]
        out[name] = float(np.max(np.abs(vals - vals[0])) / (1.0 + abs(vals[0])))
    return DriftResult(drift=out, t_end=float(ts[-1]), steps=len(ts) - 1, tol=tol, initial=list(map(float, initial)))


# --------------------------------------------------------------- independence


def independence_rank(integrals: Sequence[MomentumPolynomial], sampler: Sampler, N: int = 50,
                      params: Mapping | None = None, rel: float = 1e-8) -> tuple:
    """Modal rank of the stacked phase gradients and the worst singular gap.

    Rows are normalised before the SVD so integrals of very different size
    weigh equally.  The gap at a point is ``s_r / max(s_{r+1}, eps s_1)``
    where ``r`` is the rank there.
    """
    polys = list(integrals)
    if len(polys) < 2:
        raise VerificationError("need at least two integrals")
    space = polys[0].space
    if any(P.space != space for P in polys):
        raise VerificationError("integrals live on different charts")
    names, pvals = _param_inputs(polys, params)
    prog = stack_programs(polys, list(space.phase_names) + names, "gradient")
    _, vals = _draw_finite(sampler, prog, pvals, N)
    d = 2 * space.n
    ranks, gaps = [], []
    eps = np.finfo(float).eps
    for row in vals:
        M = row.reshape(len(polys), d)
        norms = np.linalg.norm(M, axis=1)
        M = M[norms > 0] / norms[norms > 0, None]
        if M.shape[0] == 0:
            continue
        s = np.linalg.svd(M, compute_uv=False)
        r = int(np.sum(s > rel * s[0]))
        nxt = s[r] if r < len(s) else 0.0
        ranks.append(r)
        gaps.append(s[r - 1] / max(nxt, eps * s[0]))
    if not ranks:
        raise VerificationError("all sampled points are degenerate")
    rank = Counter(ranks).most_common(1)[0][0]
    gap = min(g for r, g in zip(ranks, gaps) if r == rank)
    return rank, float(gap)


# -------------------------------------------------------------- certification


@dataclass
class CertifyConfig:
    """Settings for :func:`certify`.

    ``box`` and ``singular`` describe where base coordinates may be sampled;
    ``params`` binds any parameter left symbolic in the integrals.
    ``redraws`` bounds how many fresh starts replace a generated one whose
    trajectory stops at a singularity; a given ``initial`` is never replaced.
    """

    seed: int = 0
    samples: int = 100
    rank_points: int = 50
    trajectories: int = 1
    redraws: int = 4
    T: float = 10.0
    tol: float = 1e-10
    bracket_tol: float = 1e-9
    residual_tol: float = 1e-9
    drift_tol: float = 1e-6
    gap_min: float = 1e6
    box: Mapping = field(default_factory=dict)
    singular: Sequence = ()
    complex_mode: bool = False
    real_domain: bool = True
    params: Mapping = field(default_factory=dict)
    momentum_box: tuple = DEFAULT_MOMENTUM_BOX
    initial: Sequence | None = None
    expected_rank: int | None = None


@dataclass
class VerificationReport:
    """Outcome of :func:`certify`; serialises with :meth:`to_json`."""

    target: str
    seed: int
    bracket: dict
    drift: dict
    rank: int | None
    expected_rank: int | None
    gap: float | None
    hessian_residual: float | None
    compatibility_residual: float | None
    verdict: str
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def base_parts(L: MomentumPolynomial) -> tuple:
    """Contravariant metric and potential read off a natural Hamiltonian."""
    n = L.space.n
    g = [[core.ZERO] * n for _ in range(n)]
    V = core.ZERO
    for idx, c in L.terms.items():
        deg = sum(idx)
        if deg == 0:
            V = c
        elif deg == 2:
            nz = [i for i, k in enumerate(idx) if k]
            if len(nz) == 1:
                g[nz[0]][nz[0]] = core.mul(2, c)
            else:
                i, j = nz
                g[i][j] = g[j][i] = c
        else:
            raise VerificationError("base Hamiltonian is not natural")
    return g, V


def kinetic_definite(H: MomentumPolynomial, sampler: Sampler, params: Mapping | None = None, N: int = 20) -> bool:
    """Whether the kinetic term of ``H`` is positive definite at sampled points.

    An indefinite kinetic term (for instance a curved extension with
    ``c < 0`` on a Riemannian base) lets generic orbits reach a singular
    locus in finite time, so long trajectories do not exist.
    """
    g, _ = base_parts(H)
    n = H.space.n
    names, pvals = _param_inputs([H], params)
    prog = compile_exprs([g[i][j] for i in range(n) for j in range(n)], list(H.space.coord_names) + names)
    X = sampler.draw(N)[:, :n]
    if pvals.size:
        X = np.concatenate([X, np.tile(pvals, (len(X), 1))], axis=1)
    vals = kernels.evaluate_program(prog, X)
    ok = np.all(np.isfinite(vals), axis=1)
    if not np.any(ok) or np.max(np.abs(vals[ok].imag)) > 1e-12 * max(1.0, np.max(np.abs(vals[ok]))):
        return False
    mats = vals[ok].real.reshape(-1, n, n)
    return bool(np.all(np.linalg.eigvalsh(mats)[:, 0] > 0))


def _sampled_terms(groups: Sequence[Sequence[Expr]], names: Sequence[str], sampler: Sampler,
                   pnames: Sequence[str], pvals: np.ndarray, N: int) -> float:
    """``max |sum t| / sum |t|`` over samples and groups of terms ``t``."""
    flat = [t for g in groups for t in g]
    if not flat:
        return 0.0
    prog = compile_exprs(flat, list(names) + list(pnames))
    _, vals = _draw_finite(sampler, prog, pvals, N)
    worst = 0.0
    k = 0
    for g in groups:
        block = vals[:, k:k + len(g)]
        k += len(g)
        num = np.abs(block.sum(axis=1))
        den = np.abs(block).sum(axis=1)
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        worst = max(worst, float(np.max(r)) if r.size else 0.0)
    return worst


def _base_sampler(ext: ExtendedSystem, config: CertifyConfig, offset: int) -> Sampler:
    return Sampler(SamplerConfig(box=config.box, singular=tuple(config.singular), seed=config.seed + offset,
                                 complex_mode=config.complex_mode), ext.L.space.coord_names)


def _hessian_check(ext: ExtendedSystem, config: CertifyConfig, pnames, pvals) -> float:
    """Relative residual of ``nabla_i nabla_j G + m c g_ij G = 0``, term by term."""
    g, _ = base_parts(ext.L)
    chart = Chart(id=ext.L.space.id, coords=ext.L.space.coords, metric_inv=tuple(tuple(r) for r in g))
    names = chart.coord_names
    n = chart.n
    Gam = christoffel(chart)
    gl = metric(chart)
    grad = [core.diff(ext.G, x) for x in names]
    mc = core.mul(ext.spec.m, ext.spec.c)
    groups = []
    for i in range(n):
        for j in range(i, n):
            t = [core.diff(grad[j], names[i])]
            t += [core.mul(-1, Gam[k][i][j], grad[k]) for k in range(n)]
            t.append(core.mul(mc, gl[i][j], ext.G))
            groups.append(t)
    return _sampled_terms(groups, names, _base_sampler(ext, config, 1), pnames, pvals, min(config.samples, 50))


def _compat_check(ext: ExtendedSystem, config: CertifyConfig, pnames, pvals) -> float:
    """Relative residual of ``grad V . grad G - 2m(cV + L0) G = 0``, term by term."""
    g, V = base_parts(ext.L)
    names = ext.L.space.coord_names
    n = len(names)
    dV = [core.diff(V, x) for x in names]
    dG = [core.diff(ext.G, x) for x in names]
    spec = ext.spec
    t = [core.mul(g[i][j], dV[i], dG[j]) for i in range(n) for j in range(n)]
    t += [core.mul(-2 * spec.m, spec.c, V, ext.G), core.mul(-2 * spec.m, spec.L0, ext.G)]
    return _sampled_terms([t], names, _base_sampler(ext, config, 2), pnames, pvals, min(config.samples, 50))


def _ext_singular(ext: ExtendedSystem, config: CertifyConfig) -> list:
    sing = list(config.singular)
    if not ext.spec.flat:
        # divided by c so that the exclusion margin does not shrink with c
        arg = core.add(core.mul(ext.spec.c, ext.u), ext.spec.u0)
        sing.append(core.mul(core.power(ext.spec.c, -1), core.s_kappa(ext.spec.kappa, arg)))
    return sing


def extension_sampler(ext: ExtendedSystem, config: CertifyConfig, offset: int = 0) -> Sampler:
    """Phase sampler of the extended system that avoids every singular locus."""
    return phase_sampler(ext.space, config.box, _ext_singular(ext, config), seed=config.seed + offset,
                         complex_mode=config.complex_mode, momentum_box=config.momentum_box)


def default_initial(ext: ExtendedSystem, config: CertifyConfig, k: int) -> np.ndarray:
    """A real starting point drawn inside the sampling box."""
    sampler = phase_sampler(ext.space, config.box, _ext_singular(ext, config), seed=config.seed + 100 + k,
                            momentum_box=(-0.5, 0.5), margin=0.2)
    return sampler.draw(1)[0].real


def certify(ext: ExtendedSystem, config: CertifyConfig | None = None, target: str | None = None) -> VerificationReport:
    """End-to-end check of an extension.

    The verdict is ``"superintegrable-certified"`` only when every individual
    check passes and the independence rank equals ``2(n+1) - 1``.  When fewer
    integrals are known than that rank, passing every check (with all
    supplied integrals independent) gives ``"extension-verified"``.  A
    trivial flat extension (``L0 = 0``) is reported as ``"trivial"`` once its
    brackets pass.  Anything else is ``"failed"``.
    """
    config = config or CertifyConfig()
    target = target or ext.metadata.get("id", ext.L.space.id)
    checks: dict = {}
    notes: list = []
    polys = [P for _, P in ext.integrals]
    pnames, pvals = _param_inputs(polys + [ext.L], config.params)
    params = dict(config.params)

    # step 1-2: G solves the Hessian and compatibility equations
    hres = _hessian_check(ext, config, pnames, pvals)
    cres = _compat_check(ext, config, pnames, pvals)
    checks["hessian"] = hres < config.residual_tol
    checks["compatibility"] = cres < config.residual_tol

    # step 3-4: every integral commutes with H
    sampler = extension_sampler(ext, config)
    bracket = {}
    for name, P in ext.integrals:
        bracket[name] = bracket_residual_max(ext.H, P, sampler, config.samples, params)
    checks["bracket"] = max(bracket.values()) < config.bracket_tol

    n = ext.L.space.n
    full = 2 * (n + 1) - 1
    expected = config.expected_rank if config.expected_rank is not None else full
    partial = len(polys) < expected or expected < full
    if len(polys) < expected:
        # not enough shipped integrals to reach maximal rank: require that
        # the available ones are independent and say so
        expected = len(polys)
    if partial:
        notes.append(f"only rank {expected} expected from the available integrals; maximal "
                     f"superintegrability (rank {full}) of the base system is not rechecked")
    rsampler = extension_sampler(ext, config, 7)
    rank, gap = independence_rank(polys, rsampler, config.rank_points, params)
    checks["rank"] = rank == expected and gap > config.gap_min

    drift: dict = {}
    real_params = all(abs(complex(v).imag) == 0 for v in pvals)
    definite = real_params and kinetic_definite(ext.H, sampler, params)
    if config.trajectories > 0 and config.real_domain and not config.complex_mode and real_params and definite:
        worst: dict = {}
        for k in range(config.trajectories):
            given = config.initial is not None and k == 0
            res = None
            for attempt in range(1 if given else 1 + config.redraws):
                # a generated start may run into a singular locus of H; that
                # says nothing about the integrals, so draw another start
                y0 = np.asarray(config.initial) if given else \
                    default_initial(ext, config, k + attempt * config.trajectories)
                try:
                    res = conservation_drift(ext.H, dict(ext.integrals), y0, config.T, config.tol, params)
                    break
                except IntegrationFailure as err:
                    notes.append(f"trajectory {k}, start {attempt}: {err}")
            if res is None:
                checks["drift"] = False
                break
            for name, v in res.drift.items():
                worst[name] = max(worst.get(name, 0.0), v)
        drift = worst
        if "drift" not in checks:
            checks["drift"] = bool(drift) and max(drift.values()) < config.drift_tol
    elif config.trajectories > 0 and real_params and config.real_domain and not config.complex_mode:
        notes.append("trajectory checks skipped: the kinetic term of H is indefinite, so orbits reach a "
                     "singularity in finite time")
    elif config.trajectories > 0:
        notes.append("trajectory checks skipped: complex-valued system")
    else:
        notes.append("trajectory checks disabled (trajectories = 0)")

    if ext.trivial:
        notes.append("flat extension with L0 = 0: H decouples into L and a free particle")
        verdict = "trivial" if checks["bracket"] else "failed"
    else:
        verdict = "failed"
        if all(checks.values()):
            verdict = "extension-verified" if partial else "superintegrable-certified"
    meta = {"samples": config.samples, "rank_points": config.rank_points, "trajectories": config.trajectories,
            "redraws": config.redraws,
            "T": config.T, "tol": config.tol, "bracket_tol": config.bracket_tol, "drift_tol": config.drift_tol,
            "params": {k: str(v) for k, v in sorted(params.items())}, "spec": ext.spec.to_json(),
            "gamma": nf.simplify(gamma_expr(ext.spec, ext.u)).key}
    return VerificationReport(target=target, seed=config.seed, bracket=bracket, drift=drift, rank=rank,
                              expected_rank=expected, gap=gap, hessian_residual=hres, compatibility_residual=cres,
                              verdict=verdict, checks=checks, notes=notes, meta=meta)

