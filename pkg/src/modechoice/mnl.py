"""Multinomial logit estimation over the displayed plan lists.

Each labelled session is one choice situation whose choice set is the
set of displayed modes. Utilities are linear in alternative-specific
constants and in plan attributes (distance, ETA, price), with either one
coefficient per mode or one coefficient shared by all modes. The
baseline mode carries no alternative-specific terms.

Estimation is Newton-Raphson with step halving on the exact Hessian.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .datamodel import CATALOG, N_MODES, NO_CLICK, TripSession
from .errors import NumericError

logger = logging.getLogger(__name__)

ALL_MODES = tuple(range(1, N_MODES + 1))
DEFAULT_BASELINE = 8
VARIABLES = {"distance": "distance_m", "time": "eta_s", "cost": "price_cent"}
_LABELS = {"distance": "Distance", "time": "Time", "cost": "Cost"}


@dataclass(frozen=True)
class Term:
    variable: str
    modes: tuple[int, ...] = ALL_MODES
    shared: bool = False

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ValueError(f"unknown utility variable {self.variable!r}")


@dataclass(frozen=True)
class UtilitySpec:
    name: str
    terms: tuple[Term, ...] = ()
    intercept_modes: tuple[int, ...] = ()
    baseline: int = DEFAULT_BASELINE

    def __post_init__(self):
        if self.baseline not in ALL_MODES:
            raise ValueError("baseline mode must lie in 1..11")
        keys = [(t.variable, t.shared) for t in self.terms]
        if len(set(keys)) != len(keys):
            raise ValueError(f"spec {self.name!r} has duplicate terms")

    def parameters(self) -> list[tuple[str, str, tuple[int, ...]]]:
        """``(parameter name, variable or 'asc', modes it applies to)``."""
        out = [(f"ASC_{CATALOG.name(m)}", "asc", (m,))
               for m in self.intercept_modes if m != self.baseline]
        for t in self.terms:
            label = _LABELS[t.variable]
            if t.shared:
                suffix = "all_mode" if set(t.modes) == set(ALL_MODES) else "+".join(map(str, t.modes))
                out.append((f"{label}_{suffix}", t.variable, tuple(t.modes)))
            else:
                out += [(f"{label}_{CATALOG.name(m)}", t.variable, (m,))
                        for m in t.modes if m != self.baseline]
        return out

    @property
    def parameter_names(self) -> list[str]:
        return [p[0] for p in self.parameters()]


def comparison_specs(baseline: int = DEFAULT_BASELINE) -> list[UtilitySpec]:
    """The eight variable sets compared when choosing the final model."""
    asc = ALL_MODES
    dist = Term("distance")
    time = Term("time")
    cost = Term("cost", shared=True)
    return [
        UtilitySpec("null", baseline=baseline),
        UtilitySpec("asc", (), asc, baseline),
        UtilitySpec("asc+time", (time,), asc, baseline),
        UtilitySpec("asc+distance", (dist,), asc, baseline),
        UtilitySpec("asc+cost", (cost,), asc, baseline),
        UtilitySpec("asc+time+cost", (time, cost), asc, baseline),
        UtilitySpec("asc+distance+cost", (dist, cost), asc, baseline),
        UtilitySpec("distance+cost", (dist, cost), (), baseline),
    ]


FINAL_SPEC_NAMES = ("asc+distance+cost", "distance+cost")


def get_spec(name: str, baseline: int = DEFAULT_BASELINE) -> UtilitySpec:
    for s in comparison_specs(baseline):
        if s.name == name:
            return s
    raise KeyError(f"unknown MNL spec {name!r}")


# --------------------------------------------------------------------------- utilities


def _plan_by_mode(session: TripSession):
    out = {}
    for p in sorted(session.plans, key=lambda p: p.display_rank):
        out.setdefault(p.mode, p)
    return out


def _attribute_row(spec: UtilitySpec, plan) -> np.ndarray:
    params = spec.parameters()
    x = np.zeros(len(params))
    for j, (_, var, modes) in enumerate(params):
        if plan.mode not in modes:
            continue
        if var == "asc":
            x[j] = 1.0
        else:
            value = getattr(plan, VARIABLES[var], None)
            if value is None:
                raise ValueError(f"plan lacks field {VARIABLES[var]!r}")
            x[j] = value
    return x


def utilities(spec: UtilitySpec, beta, session: TripSession) -> dict[int, float]:
    """Systematic utility of each displayed mode, in display order."""
    beta = np.asarray(beta, dtype=float)
    return {m: float(_attribute_row(spec, p) @ beta) for m, p in _plan_by_mode(session).items()}


def choice_probabilities(spec: UtilitySpec, beta, session: TripSession) -> dict[int, float]:
    u = utilities(spec, beta, session)
    if not u:
        raise ValueError("empty choice set")
    v = np.array(list(u.values()))
    p = np.exp(v - logsumexp(v))
    return dict(zip(u.keys(), p.tolist()))


@dataclass
class ChoiceData:
    """Long-format design: one row of ``x`` per available alternative.

    Rows of a session are contiguous and start at ``starts[i]``;
    ``chosen`` holds the row index of each session's chosen alternative.
    """

    x: np.ndarray
    group: np.ndarray
    starts: np.ndarray
    chosen: np.ndarray
    parameter_names: list[str]

    @classmethod
    def from_sessions(cls, spec: UtilitySpec, sessions: Sequence[TripSession]) -> "ChoiceData":
        labelled = [s for s in sessions if s.label != NO_CLICK]
        params = spec.parameters()
        modes, attrs, group, starts, chosen = [], [], [], [], []
        for i, s in enumerate(labelled):
            starts.append(len(modes))
            for m, p in _plan_by_mode(s).items():
                if m == s.label:
                    chosen.append(len(modes))
                modes.append(m)
                attrs.append((p.distance_m, p.eta_s, p.price_cent))
                group.append(i)
        modes = np.array(modes, dtype=np.int64)
        attrs = np.array(attrs, dtype=float).reshape(-1, 3)
        x = np.zeros((len(modes), len(params)))
        col = {"distance": 0, "time": 1, "cost": 2}
        for j, (_, var, applies) in enumerate(params):
            hit = np.isin(modes, applies)
            x[hit, j] = 1.0 if var == "asc" else attrs[hit, col[var]]
        return cls(x, np.array(group, dtype=np.int64), np.array(starts, dtype=np.int64),
                   np.array(chosen, dtype=np.int64), [p[0] for p in params])

    @property
    def n_obs(self) -> int:
        return len(self.chosen)


def log_likelihood(spec: UtilitySpec, beta, sessions, data: Optional[ChoiceData] = None,
                   derivatives: bool = True):
    """Log-likelihood of the labelled sessions, with gradient and Hessian.

    Returns ``ll`` alone when ``derivatives`` is false, otherwise
    ``(ll, gradient, hessian)``. No-click sessions are ignored.
    """
    if data is None:
        data = ChoiceData.from_sessions(spec, sessions)
    beta = np.asarray(beta, dtype=float)
    k = data.x.shape[1]
    if data.n_obs == 0:
        ll = 0.0
        return ll if not derivatives else (ll, np.zeros(k), np.zeros((k, k)))
    v = data.x @ beta if k else np.zeros(len(data.x))
    vmax = np.maximum.reduceat(v, data.starts)
    e = np.exp(v - vmax[data.group])
    denom = np.add.reduceat(e, data.starts)
    lse = vmax + np.log(denom)
    ll = float(np.sum(v[data.chosen]) - np.sum(lse))
    if not derivatives:
        return ll
    if k == 0:
        return ll, np.zeros(0), np.zeros((0, 0))
    p = e / denom[data.group]
    xbar = np.add.reduceat(p[:, None] * data.x, data.starts, axis=0)
    grad = np.sum(data.x[data.chosen], axis=0) - np.sum(xbar, axis=0)
    dev = data.x - xbar[data.group]
    hess = -((p[:, None] * dev).T @ dev)
    hess = 0.5 * (hess + hess.T)
    return ll, grad, hess


# --------------------------------------------------------------------------- fitting


@dataclass
class MnlModel:
    spec: UtilitySpec
    parameter_names: list[str]
    beta: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    ll_null: float
    iterations: int
    converged: bool
    gradient_norm: float
    n_obs: int
    ll_trace: list = field(default_factory=list)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def z_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta / self.std_errors

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * norm.sf(np.abs(self.z_values))

    def coefficient(self, name: str) -> float:
        return float(self.beta[self.parameter_names.index(name)])

    def summary_rows(self):
        return list(zip(self.parameter_names, self.beta, self.std_errors, self.z_values, self.p_values))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Variable", "Coefficient", "Std. Err.", "z", "p>|z|"])
            for name, b, se, z, p in self.summary_rows():
                w.writerow([name, f"{b:.6e}", f"{se:.6e}", f"{z:.4f}", f"{p:.4f}"])


def _collinear_terms(neg_hess, names, tol):
    d = np.sqrt(np.clip(np.diag(neg_hess), 0.0, None))
    bad = [names[j] for j in np.flatnonzero(d <= 0)]
    if bad:
        return bad
    scaled = neg_hess / np.outer(d, d)
    w, vecs = np.linalg.eigh(scaled)
    if w[0] > tol * max(w[-1], 1.0):
        return []
    v = np.abs(vecs[:, 0])
    return [names[j] for j in np.flatnonzero(v > 0.1 * v.max())]


def fit(spec: UtilitySpec, sessions, tolerance: float = 1e-6, max_iter: int = 100,
        max_halvings: int = 30) -> MnlModel:
    """Maximum-likelihood estimate by Newton-Raphson starting from zero."""
    data = ChoiceData.from_sessions(spec, sessions)
    names = data.parameter_names
    k = len(names)
    if data.n_obs == 0:
        raise NumericError("no labelled sessions to fit")
    beta = np.zeros(k)
    ll, grad, hess = log_likelihood(spec, beta, sessions, data)
    ll_null = ll
    trace = [ll]
    if k and _collinear_terms(-hess, names, 1e-12):
        raise NumericError(
            f"singular Hessian; collinear or unidentified terms: {', '.join(_collinear_terms(-hess, names, 1e-12))}"
        )
    converged = k == 0 or np.max(np.abs(grad)) <= tolerance
    it = 0
    while not converged and it < max_iter:
        it += 1
        neg = -hess
        # Jacobi scaling keeps the solve well conditioned across unit scales
        d = np.sqrt(np.diag(neg))
        try:
            step = np.linalg.solve(neg / np.outer(d, d), grad / d) / d
        except np.linalg.LinAlgError:
            raise NumericError(
                f"singular Hessian; collinear or unidentified terms: {', '.join(_collinear_terms(neg, names, 1e-12))}"
            ) from None
        # once the predicted gain drops below the rounding of the LL sum,
        # comparing LL values is noise and the full Newton step is taken
        rounding = 64 * np.finfo(float).eps * max(1.0, abs(ll))
        near_optimum = 0.5 * float(grad @ step) <= rounding
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = beta + t * step
            ll_new = log_likelihood(spec, cand, sessions, data, derivatives=False)
            if ll_new >= ll or near_optimum:
                break
            t *= 0.5
        else:
            logger.warning("%s: line search failed at iteration %d", spec.name, it)
            break
        beta = cand
        ll, grad, hess = log_likelihood(spec, beta, sessions, data)
        trace.append(ll)
        converged = np.max(np.abs(grad)) <= tolerance
    if k:
        bad = _collinear_terms(-hess, names, 1e-12)
        if bad:
            raise NumericError(f"singular Hessian; collinear or unidentified terms: {', '.join(bad)}")
        cov = np.linalg.inv(-hess)
        cov = 0.5 * (cov + cov.T)
    else:
        cov = np.zeros((0, 0))
    if not converged:
        logger.warning("%s: no convergence after %d iterations", spec.name, it)
    return MnlModel(
        spec=spec,
        parameter_names=names,
        beta=beta,
        covariance=cov,
        log_likelihood=ll,
        ll_null=ll_null,
        iterations=it,
        converged=bool(converged),
        gradient_norm=float(np.max(np.abs(grad))) if k else 0.0,
        n_obs=data.n_obs,
        ll_trace=trace,
    )


def null_log_likelihood(sessions) -> float:
    """Log-likelihood with every coefficient at zero: sum of ln(1/|choice set|)."""
    return float(-sum(np.log(len(set(s.modes))) for s in sessions if s.label != NO_CLICK))


@dataclass
class ComparisonRow:
    name: str
    n_params: int
    log_likelihood: float
    converged: bool
    failed: bool = False
    error: str = ""
    best: bool = False
    model: Optional[MnlModel] = None


def compare_models(specs: Sequence[UtilitySpec], sessions, tolerance: float = 1e-6,
                   max_iter: int = 100) -> list[ComparisonRow]:
    """Fit each spec on the same sessions; flag the highest log-likelihood.

    Null and intercepts-only rows are prepended when absent.
    """
    specs = list(specs)
    names = [s.name for s in specs]
    baseline = specs[0].baseline if specs else DEFAULT_BASELINE
    defaults = {s.name: s for s in comparison_specs(baseline)}
    prepend = [defaults[n] for n in ("null", "asc") if n not in names]
    specs = prepend + specs
    rows = []
    for spec in specs:
        try:
            m = fit(spec, sessions, tolerance=tolerance, max_iter=max_iter)
            rows.append(ComparisonRow(spec.name, len(m.beta), m.log_likelihood, m.converged, model=m))
        except (NumericError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("MNL spec %s failed: %s", spec.name, exc)
            rows.append(ComparisonRow(spec.name, len(spec.parameters()), float("nan"), False,
                                      failed=True, error=str(exc)))
    ok = [r for r in rows if not r.failed]
    if ok:
        max(ok, key=lambda r: r.log_likelihood).best = True
    return rows


def nested_pairs(specs: Sequence[UtilitySpec]) -> list[tuple[str, str]]:
    """``(subset, superset)`` spec names where one parameter set contains the other."""
    sets = [(s.name, set(s.parameter_names)) for s in specs]
    return [(a, b) for a, pa in sets for b, pb in sets if a != b and pa < pb]


def write_comparison_csv(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Variables", "n_params", "Log-Likelihood", "converged", "best"])
        for r in rows:
            ll = "failed" if r.failed else f"{r.log_likelihood:.3f}"
            w.writerow([r.name, r.n_params, ll, int(r.converged), int(r.best)])
