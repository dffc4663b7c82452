"""Hyperparameter selection by k-fold cross-validation on the unbiased risk.

Because the validation criterion is the same estimator the solver
minimises (without its regulariser), the selected cell targets the
testing-distribution risk directly; no labeled-only proxy is involved.
Both the labeled and the unlabeled sets are folded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, UnlabeledDataset, kfold_indices
from .kernel import DEFAULT_SIGMA_MULTIPLIERS, KernelSpec, gram, median_heuristic
from .losses import SQUARE, canonical_loss_kind
from .risk import lac_risk_from_scores
from .solver import (
    DualModel,
    FitOptions,
    _first_order_alpha,
    _square_loss_alpha,
    fit_first_order,
    fit_square_closed_form,
)

DEFAULT_LAMBDAS = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass(frozen=True)
class HyperGrid:
    """Candidate bandwidth multipliers and regularization weights."""

    sigma_multipliers: tuple[float, ...] = DEFAULT_SIGMA_MULTIPLIERS
    lambda_candidates: tuple[float, ...] = DEFAULT_LAMBDAS
    loss_kind: str = SQUARE
    folds: int = 5

    def __post_init__(self):
        if not self.sigma_multipliers or not self.lambda_candidates:
            raise ValueError("grids must be nonempty")
        if any(m <= 0 for m in self.sigma_multipliers) or any(l <= 0 for l in self.lambda_candidates):
            raise ValueError("grid values must be positive")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        object.__setattr__(self, "sigma_multipliers", tuple(float(m) for m in self.sigma_multipliers))
        object.__setattr__(self, "lambda_candidates", tuple(float(l) for l in self.lambda_candidates))
        object.__setattr__(self, "loss_kind", canonical_loss_kind(self.loss_kind))


@dataclass(frozen=True)
class CvCell:
    sigma_multiplier: float
    sigma: float
    lam: float
    mean_risk: float
    stderr: float
    fold_risks: tuple[float, ...]


@dataclass(frozen=True)
class CvReport:
    cells: tuple[CvCell, ...]
    selected: CvCell
    folds: int
    loss_kind: str
    median_distance: float

    def to_json(self) -> str:
        payload = {
            "folds": self.folds,
            "loss": self.loss_kind,
            "median_distance": self.median_distance,
            "selected": {
                "sigma_multiplier": self.selected.sigma_multiplier,
                "sigma": self.selected.sigma,
                "lambda": self.selected.lam,
                "mean_risk": self.selected.mean_risk,
            },
            "cells": [
                {
                    "sigma_multiplier": c.sigma_multiplier,
                    "sigma": c.sigma,
                    "lambda": c.lam,
                    "mean_risk": c.mean_risk,
                    "stderr": c.stderr,
                    "fold_risks": list(c.fold_risks),
                }
                for c in self.cells
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def _select(cells: list[CvCell]) -> CvCell:
    # minimal mean risk; ties prefer the stronger regulariser, then the
    # smoother kernel
    return sorted(cells, key=lambda c: (c.mean_risk, -c.lam, -c.sigma))[0]


def cross_validate(
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    theta: float,
    grid: HyperGrid,
    seed: int,
) -> CvReport:
    """Mean validation risk (no regulariser) for every grid cell.

    The bandwidth for each cell is multiplier x median pairwise distance of
    the pooled data.  For every sigma the pooled Gram matrix is built once
    and sliced per fold.
    """
    n_l, n_u = len(labeled), len(unlabeled)
    pooled = np.vstack([labeled.X, unlabeled.X])
    median = median_heuristic(pooled)
    folds = kfold_indices(labeled, unlabeled, grid.folds, seed)
    K = labeled.num_known_classes

    cells: list[CvCell] = []
    for mult in grid.sigma_multipliers:
        sigma = mult * median
        G = gram(KernelSpec(sigma), pooled, pooled)
        fold_views = []
        for train_L, train_U, val_L, val_U in folds:
            sup = np.concatenate([train_L, n_l + train_U])
            val = np.concatenate([val_L, n_l + val_U])
            fold_views.append((
                G[np.ix_(sup, sup)],
                G[np.ix_(val, sup)],
                labeled.y[train_L],
                labeled.y[val_L],
                len(train_L), len(train_U), len(val_L),
            ))
        for lam in grid.lambda_candidates:
            risks = []
            for G_tt, G_vt, y_tr, y_val, f_nl, f_nu, n_valL in fold_views:
                try:
                    if grid.loss_kind == SQUARE:
                        alpha = _square_loss_alpha(G_tt, y_tr, K, f_nl, f_nu, theta, lam)
                    else:
                        opts = FitOptions(lam=lam, max_iterations=2000,
                                          gradient_tolerance=1e-5, seed=seed)
                        alpha, _ = _first_order_alpha(G_tt, y_tr, K, f_nl, f_nu,
                                                      theta, opts, grid.loss_kind)
                except Exception as exc:
                    raise RuntimeError(
                        f"fit failed at sigma_multiplier={mult}, lambda={lam}: {exc}"
                    ) from exc
                scores_val = G_vt @ alpha
                risks.append(lac_risk_from_scores(
                    scores_val[:n_valL], y_val, scores_val[n_valL:], theta, grid.loss_kind
                ))
            risks_arr = np.array(risks)
            stderr = float(risks_arr.std(ddof=1) / np.sqrt(len(risks_arr))) if len(risks_arr) > 1 else 0.0
            cells.append(CvCell(mult, sigma, lam, float(risks_arr.mean()), stderr, tuple(risks)))

    return CvReport(tuple(cells), _select(cells), grid.folds, grid.loss_kind, median)


def fit_with_selection(
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    theta: float,
    grid: HyperGrid,
    seed: int,
) -> tuple[DualModel, CvReport]:
    """Cross-validate, then refit on all data at the selected cell."""
    report = cross_validate(labeled, unlabeled, theta, grid, seed)
    kernel = KernelSpec(report.selected.sigma)
    lam = report.selected.lam
    if grid.loss_kind == SQUARE:
        model = fit_square_closed_form(labeled, unlabeled, kernel, theta, lam)
    else:
        model = fit_first_order(labeled, unlabeled, kernel, theta,
                                FitOptions(lam=lam, seed=seed), grid.loss_kind)
    return model, report
