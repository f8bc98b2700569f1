"""Shared builders for small hand-made datasets."""

import numpy as np

from fleetlife.dataset import Dataset


def make_ds(time, event, X=None, names=None, install="2020-01-01", last_log=None, production=None, ids=None):
    time = np.asarray(time, dtype=float)
    n = time.size
    if X is None:
        X = np.zeros((n, 0))
    X = np.asarray(X, dtype=float)
    X = X.reshape(n, -1) if n else X.reshape(0, X.shape[-1] if X.ndim == 2 else 0)
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    install = np.broadcast_to(np.asarray(install, dtype="datetime64[D]"), (n,))
    if last_log is None:
        last_log = install + np.maximum(np.ceil(time / 8.0).astype(np.int64), 1)
    last_log = np.broadcast_to(np.asarray(last_log, dtype="datetime64[D]"), (n,))
    production = install if production is None else np.broadcast_to(np.asarray(production, dtype="datetime64[D]"), (n,))
    return Dataset(
        ids=np.array(ids if ids is not None else [f"u{i}" for i in range(n)], dtype=object),
        X=X,
        feature_names=names,
        time=time,
        event=np.asarray(event, dtype=int),
        production_date=production,
        install_date=install,
        last_log_date=last_log,
    )


def brute_force_km(time, event, t):
    """Product over distinct event times <= t of (1 - deaths / at-risk), by plain loops."""
    s = 1.0
    for u in sorted(set(tt for tt, e in zip(time, event) if e == 1)):
        if u > t:
            break
        at_risk = sum(1 for tt in time if tt >= u)
        deaths = sum(1 for tt, e in zip(time, event) if e == 1 and tt == u)
        s *= 1.0 - deaths / at_risk
    return s
