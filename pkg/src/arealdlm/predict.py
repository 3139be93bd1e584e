"""Posterior prediction, survey-fusion scoring, diagnostics, and the simulator.

Predictions of the latent field are assembled draw by draw from the stored
chain; the fine-scale term comes from its stored draw at observed cells and
from its prior at never-observed cells, so uncertainty at unobserved
locations carries the fine-scale variance floor.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisSystem
from .data import (
    AlignedData,
    DesignSet,
    Observation,
    ObservationSet,
    TransformSpec,
)
from .errors import ValidationError
from .linops import chol_psd
from .prior import PriorStructure
from .sampler import PosteriorChain


@dataclass(frozen=True)
class PredictionSurface:
    """Posterior mean and variance of the latent field per location."""

    locations: tuple[tuple[int, int, str], ...]
    yhat: np.ndarray
    mspe: np.ndarray
    yhat_backtransformed: np.ndarray | None
    mspe_backtransformed: np.ndarray | None
    num_draws: int
    draws: np.ndarray | None = None  # (J, n_locations) when requested


def posterior_y(
    chain: PosteriorChain,
    design_set: DesignSet,
    basis: BasisSystem,
    aligned: AlignedData,
    locations: list[tuple[int, int, str]] | None = None,
    transforms: dict[int, TransformSpec] | None = None,
    rng: np.random.Generator | None = None,
    keep_draws: bool = False,
) -> PredictionSurface:
    """Per-draw latent-field reconstruction, summarized per location.

    Each draw evaluates fixed effects plus the basis term plus the fine-scale
    term (stored at observed cells, drawn from its prior elsewhere);
    back-transformed summaries invert the declared link per draw before
    averaging.
    """
    design = design_set.design
    if locations is None:
        locations = [
            (ell, t, design_set.graph.units[u])
            for t in range(1, design.T + 1)
            for ell, u in design_set.layout[t]
        ]
    for loc in locations:
        if loc not in design_set.row_lookup:
            raise ValidationError(f"location {loc} is not a prediction location")
    if rng is None:
        rng = np.random.default_rng(chain.seed + 1)

    J = chain.num_draws
    n_loc = len(locations)
    yhat = np.zeros(n_loc)
    mspe = np.zeros(n_loc)
    want_bt = transforms is not None
    yhat_bt = np.zeros(n_loc) if want_bt else None
    mspe_bt = np.zeros(n_loc) if want_bt else None
    all_draws = np.zeros((J, n_loc)) if keep_draws else None

    by_time: dict[int, list[int]] = {}
    for i, (_, t, _) in enumerate(locations):
        by_time.setdefault(t, []).append(i)

    for t, loc_idx in sorted(by_time.items()):
        rows = np.array([design_set.row_lookup[locations[i]] for i in loc_idx])
        x_rows = design_set.matrices[t][rows]
        s_rows = basis.s[t][rows]
        t0 = t - 1
        draws_t = chain.beta[:, t0, :] @ x_rows.T + chain.eta[:, t0, :] @ s_rows.T

        # fine-scale term: stored draw where observed, prior draw elsewhere
        obs_pos = {int(pos): k for k, pos in enumerate(aligned.obs_idx[t])}
        lo, _ = chain.xi_offsets[t]
        observed_cols = []
        observed_at = []
        unobserved_at = []
        for k, row in enumerate(rows):
            if int(row) in obs_pos:
                observed_at.append(k)
                observed_cols.append(lo + obs_pos[int(row)])
            else:
                unobserved_at.append(k)
        if observed_at:
            draws_t[:, observed_at] += chain.xi[:, observed_cols]
        if unobserved_at:
            sd = np.sqrt(chain.sigma_xi2[:, t0])[:, None]
            draws_t[:, unobserved_at] += sd * rng.standard_normal((J, len(unobserved_at)))

        yhat[loc_idx] = draws_t.mean(axis=0)
        mspe[loc_idx] = draws_t.var(axis=0)
        if want_bt:
            bt = np.empty_like(draws_t)
            for k, i in enumerate(loc_idx):
                spec = transforms.get(locations[i][0], TransformSpec("identity"))
                bt[:, k] = spec.inverse(draws_t[:, k])
            yhat_bt[loc_idx] = bt.mean(axis=0)
            mspe_bt[loc_idx] = bt.var(axis=0)
        if keep_draws:
            all_draws[:, loc_idx] = draws_t

    return PredictionSurface(
        locations=tuple(locations),
        yhat=yhat,
        mspe=mspe,
        yhat_backtransformed=yhat_bt,
        mspe_backtransformed=mspe_bt,
        num_draws=J,
        draws=all_draws,
    )


def rls(
    truth_draws: np.ndarray,
    full_predictions: np.ndarray,
    survey_predictions: dict[int, np.ndarray],
    labels: list | None = None,
    survey_labels: dict[int, list] | None = None,
) -> dict[int, float]:
    """Relative leave-one-survey-out criterion per survey.

    RLS(m) = sum_j sum_cells (Y_draw - single_survey_mean_m)^2
           / sum_j sum_cells (Y_draw - full_mean)^2,
    with the draws taken from the full-data chain and both sums over the same
    cells. Values above 1 mean fusing surveys beats survey m alone.
    """
    truth_draws = np.asarray(truth_draws, dtype=float)
    full_predictions = np.asarray(full_predictions, dtype=float)
    n = truth_draws.shape[1]
    if full_predictions.shape != (n,):
        raise ValidationError("full predictions are misaligned with the truth draws")
    if survey_labels is not None and labels is not None:
        for m, lab in survey_labels.items():
            if list(lab) != list(labels):
                missing = sorted(set(labels) - set(lab))
                extra = sorted(set(lab) - set(labels))
                raise ValidationError(
                    f"survey {m} predictions are misaligned: missing={missing} extra={extra}"
                )
    denom = float(np.sum((truth_draws - full_predictions) ** 2))
    if denom == 0.0:
        raise ValidationError("degenerate criterion: full-chain residuals are all zero")
    out = {}
    for m, pred in survey_predictions.items():
        pred = np.asarray(pred, dtype=float)
        if pred.shape != (n,):
            raise ValidationError(f"survey {m} predictions are misaligned with the truth draws")
        out[m] = float(np.sum((truth_draws - pred) ** 2)) / denom
    return out


@dataclass(frozen=True)
class SyntheticTruth:
    """Forward-simulated latent fields plus the noisy observations they emit."""

    seed: int
    params: dict
    eta: np.ndarray  # (T, r)
    xi: dict[int, np.ndarray]  # per time, over all prediction rows
    y: dict[int, np.ndarray]  # latent field per time, prediction-row order
    observations: ObservationSet

    def y_at(self, design_set: DesignSet, variable: int, t: int, unit: str) -> float:
        return float(self.y[t][design_set.row_lookup[(variable, t, unit)]])


def simulate(
    design_set: DesignSet,
    basis: BasisSystem,
    prior: PriorStructure,
    true_beta: np.ndarray,
    true_sigma_k2: float,
    true_sigma_xi2: float | np.ndarray,
    v_schedule: float | dict[int, float],
    missing_mask: set[tuple[int, int, str]] | None = None,
    seed: int = 0,
) -> SyntheticTruth:
    """Draw one world from the generative model and emit its observations.

    The coefficient path uses the finalized prior covariances (so fitting the
    emitted data is fitting the exactly-matching model); measurement noise
    variance comes from ``v_schedule`` (scalar or per-variable).
    """
    design = design_set.design
    rng = np.random.default_rng(seed)
    missing_mask = missing_mask or set()
    T = design.T
    r = basis.r
    beta = np.asarray(true_beta, dtype=float)
    if beta.ndim == 1:
        beta = np.tile(beta, (T, 1))
    if beta.shape != (T, design.p):
        raise ValidationError(f"true_beta must be (p,) or (T,p), got {beta.shape}")
    sigma_xi2 = np.asarray(true_sigma_xi2, dtype=float)
    if sigma_xi2.ndim == 0:
        sigma_xi2 = np.full(T, float(sigma_xi2))
    if np.any(sigma_xi2 < 0) or true_sigma_k2 < 0:
        raise ValidationError("variances must be nonnegative")

    def v_for(variable: int) -> float:
        if isinstance(v_schedule, dict):
            return float(v_schedule[variable])
        return float(v_schedule)

    eta = np.zeros((T, r))
    eta[0] = chol_psd(true_sigma_k2 * prior.k_star[1]) @ rng.standard_normal(r)
    for t in range(2, T + 1):
        shock = rng.standard_normal(r)
        eta[t - 1] = basis.m[t] @ eta[t - 2] + chol_psd(
            true_sigma_k2 * prior.w_star[t]
        ) @ shock

    xi: dict[int, np.ndarray] = {}
    y: dict[int, np.ndarray] = {}
    observations: list[Observation] = []
    for t in range(1, T + 1):
        n_rows = design_set.N_t(t)
        xi[t] = np.sqrt(sigma_xi2[t - 1]) * rng.standard_normal(n_rows)
        y[t] = design_set.matrices[t] @ beta[t - 1] + basis.s[t] @ eta[t - 1] + xi[t]
        # one noise draw per prediction row, consumed even for masked cells,
        # so the realized world is invariant to the mask
        for pos, (ell, u) in enumerate(design_set.layout[t]):
            unit = design_set.graph.units[u]
            noise = rng.standard_normal()
            if (ell, t, unit) in missing_mask:
                continue
            v = v_for(ell)
            z = float(y[t][pos] + np.sqrt(v) * noise)
            observations.append(Observation(ell, t, unit, z, v))
    obs_set = ObservationSet(design, tuple(observations))
    return SyntheticTruth(
        seed=seed,
        params={
            "beta": beta,
            "sigma_k2": float(true_sigma_k2),
            "sigma_xi2": sigma_xi2,
            "v_schedule": v_schedule,
        },
        eta=eta,
        xi=xi,
        y=y,
        observations=obs_set,
    )


@dataclass(frozen=True)
class TraceSummary:
    selector: str
    mean: float
    sd: float
    q025: float
    q975: float
    lag1_autocorr: float
    series: np.ndarray


_SELECTOR_RE = re.compile(
    r"^(sigma_k2|sigma_xi2\[(\d+)\]|beta\[(\d+),(\d+)\]|eta\[(\d+),(\d+)\]|xi\[(\d+),(\d+)\])$"
)


def select_series(chain: PosteriorChain, selector: str) -> np.ndarray:
    """Per-draw series of one scalar parameter.

    Selectors: ``sigma_k2``, ``sigma_xi2[t]``, ``beta[t,j]``, ``eta[t,k]``,
    ``xi[t,i]`` with 1-based t and 0-based within-time indices.
    """
    m = _SELECTOR_RE.match(selector.replace(" ", ""))
    if not m:
        raise ValidationError(f"unknown parameter selector {selector!r}")
    token = m.group(1)
    try:
        if token == "sigma_k2":
            return chain.sigma_k2
        if token.startswith("sigma_xi2"):
            return chain.sigma_xi2[:, int(m.group(2)) - 1]
        if token.startswith("beta"):
            return chain.beta[:, int(m.group(3)) - 1, int(m.group(4))]
        if token.startswith("eta"):
            return chain.eta[:, int(m.group(5)) - 1, int(m.group(6))]
        lo, hi = chain.xi_offsets[int(m.group(7))]
        i = int(m.group(8))
        if i >= hi - lo:
            raise IndexError(i)
        return chain.xi[:, lo + i]
    except (IndexError, KeyError) as exc:
        raise ValidationError(f"selector {selector!r} is out of range ({exc})") from None


def trace_summary(chain: PosteriorChain, selector: str) -> TraceSummary:
    """Mean, sd, equal-tailed 95% interval, and lag-1 autocorrelation."""
    series = select_series(chain, selector)
    if series.size == 0:
        raise ValidationError("empty chain")
    mean = float(series.mean())
    sd = float(series.std(ddof=0))
    q025, q975 = (float(q) for q in np.quantile(series, [0.025, 0.975]))
    if sd == 0.0 or series.size < 2:
        lag1 = 0.0
    else:
        a = series[:-1] - mean
        b = series[1:] - mean
        lag1 = float((a @ b) / (series.size * sd * sd))
    return TraceSummary(selector, mean, sd, q025, q975, lag1, series)


def write_trace_csv(summary: TraceSummary, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", summary.selector])
        for j, value in enumerate(summary.series):
            writer.writerow([j, f"{value:.17g}"])


def write_predictions_csv(surface: PredictionSurface, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "variable",
                "time",
                "unit",
                "yhat",
                "mspe",
                "yhat_backtransformed",
                "mspe_backtransformed",
            ]
        )
        for i, (ell, t, unit) in enumerate(surface.locations):
            bt_mean = (
                f"{surface.yhat_backtransformed[i]:.17g}"
                if surface.yhat_backtransformed is not None
                else ""
            )
            bt_var = (
                f"{surface.mspe_backtransformed[i]:.17g}"
                if surface.mspe_backtransformed is not None
                else ""
            )
            writer.writerow(
                [ell, t, unit, f"{surface.yhat[i]:.17g}", f"{surface.mspe[i]:.17g}", bt_mean, bt_var]
            )
