"""Panel dataset container and the CSV interchange schema.

Columns: subject_id (int), period (int, contiguous from 1), lapse (0/1),
one column per outcome (nonnegative reals), then covariate columns.  A
subject's rows stop at the first lapse=1 period; subjects never lapsing
carry m rows.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import InputError

BASE_COLUMNS = ("subject_id", "period", "lapse")


@dataclass
class PanelDataset:
    df: pd.DataFrame
    outcome_cols: tuple
    covariate_cols: tuple
    m: int

    @property
    def n_subjects(self):
        return self.df["subject_id"].nunique()

    @property
    def p(self):
        return len(self.outcome_cols)

    def design_matrix(self):
        """Intercept plus the covariate columns, row per observation."""
        X = np.column_stack([np.ones(len(self.df))]
                            + [self.df[c].to_numpy(dtype=float)
                               for c in self.covariate_cols])
        return X

    def design_columns(self):
        return ("const",) + tuple(self.covariate_cols)


def validate_panel(df, outcome_cols, covariate_cols, m=None) -> PanelDataset:
    outcome_cols = tuple(outcome_cols)
    covariate_cols = tuple(covariate_cols)
    need = list(BASE_COLUMNS) + list(outcome_cols) + list(covariate_cols)
    for col in need:
        if col not in df.columns:
            raise InputError(f"panel file is missing column {col!r}")
    if len(df) == 0:
        raise InputError("panel file has no data rows")
    df = df.sort_values(["subject_id", "period"]).reset_index(drop=True)
    lap = df["lapse"].to_numpy()
    if not np.isin(lap, (0, 1)).all():
        raise InputError("lapse column must be 0/1")
    for col in outcome_cols:
        y = df[col].to_numpy(dtype=float)
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            bad = int(np.argmax((y < 0) | ~np.isfinite(y)))
            raise InputError(f"outcome {col!r} invalid at data row {bad}")
    dup = df.duplicated(["subject_id", "period"])
    if dup.any():
        row = df.loc[dup.idxmax()]
        raise InputError("duplicate (subject_id, period): "
                         f"({row['subject_id']}, {row['period']})")
    m_obs = int(df["period"].max())
    m = m_obs if m is None else int(m)
    if m < m_obs:
        raise InputError(f"periods run to {m_obs} but m={m} was requested")
    for sid, grp in df.groupby("subject_id", sort=False):
        periods = grp["period"].to_numpy()
        if periods[0] != 1 or np.any(np.diff(periods) != 1):
            raise InputError(f"subject {sid}: periods not contiguous from 1")
        lp = grp["lapse"].to_numpy()
        ones = np.flatnonzero(lp == 1)
        if ones.size > 1 or (ones.size == 1 and ones[0] != len(lp) - 1):
            raise InputError(f"subject {sid}: rows continue past lapse=1")
        if ones.size == 0 and len(lp) != m:
            raise InputError(f"subject {sid}: no lapse but only "
                             f"{len(lp)} of {m} periods present")
    return PanelDataset(df=df, outcome_cols=outcome_cols,
                        covariate_cols=covariate_cols, m=m)


def read_panel_csv(path, outcome_cols, covariate_cols, m=None) -> PanelDataset:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise InputError(f"panel file not found: {path}")
    except pd.errors.EmptyDataError:
        raise InputError(f"panel file is empty: {path}")
    return validate_panel(df, outcome_cols, covariate_cols, m=m)


def write_panel_csv(panel: PanelDataset, path):
    panel.df.to_csv(path, index=False)


def lapse_times(panel: PanelDataset):
    """Per-subject lapse time T in 1..m+1 and the subject id order."""
    grp = panel.df.groupby("subject_id", sort=True)
    sids = []
    T = []
    for sid, g in grp:
        sids.append(sid)
        lp = g["lapse"].to_numpy()
        if lp[-1] == 1:
            T.append(int(g["period"].to_numpy()[-1]))
        else:
            T.append(panel.m + 1)
    return np.asarray(sids), np.asarray(T, dtype=int)


def dropout_inputs(panel: PanelDataset, lapse_model, outcome_models):
    """Ragged arrays for the dropout stage: lapse times, renewal-probability
    atoms and marginal triples, shaped (n, m[, p]) with NaN padding."""
    sids, T = lapse_times(panel)
    n = sids.size
    m = panel.m
    p = panel.p
    atoms = np.full((n, m), np.nan)
    U = np.full((n, m, p), np.nan)
    UM = np.full((n, m, p), np.nan)
    DENS = np.full((n, m, p), np.nan)
    X = panel.design_matrix()
    pi = lapse_model.predict_mean(X)
    sid_codes = pd.factorize(panel.df["subject_id"], sort=True)[0]
    per = panel.df["period"].to_numpy(dtype=int) - 1
    atoms[sid_codes, per] = 1.0 - pi
    for j, col in enumerate(panel.outcome_cols):
        y = panel.df[col].to_numpy(dtype=float)
        F, Fm, dens = outcome_models[j].triplets(y, X)
        U[sid_codes, per, j] = F
        UM[sid_codes, per, j] = Fm
        DENS[sid_codes, per, j] = dens
    return sids, T, atoms, U, UM, DENS
