"""Uniform prediction contract and JSON serialization for fitted models."""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, ClassVar

import numpy as np

from ..curves import SurvivalCurve
from ..dataset import Dataset
from ..exceptions import DimensionError, ParameterError

FORMAT = "fleetlife-model"
FORMAT_VERSION = 1

_REGISTRY: dict[str, type["SurvivalModel"]] = {}


class SurvivalModel(ABC):
    """A fitted model predicting per-subject survival.

    Subclasses set ``kind`` and implement :meth:`survival_matrix`,
    :meth:`risk_score` and the ``_params``/``_from_params`` pair used by
    serialization. Instances are never mutated after fitting.
    """

    kind: ClassVar[str]
    columns: tuple[str, ...] = ()
    hyperparameters: dict[str, Any]
    diagnostics: dict[str, Any]

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if "kind" in cls.__dict__:
            _REGISTRY[cls.kind] = cls

    def features(self, data) -> np.ndarray:
        """Model design matrix from a :class:`Dataset` or an array."""
        if isinstance(data, Dataset):
            return data.matrix(self.columns)
        X = np.asarray(data, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != len(self.columns):
            raise DimensionError(f"{self.kind}: expected {len(self.columns)} features, got {X.shape[1]}")
        return X

    @abstractmethod
    def survival_matrix(self, data, times) -> np.ndarray:
        """S_i(t_k) for every subject i and every time in ``times``; shape (n, k)."""

    def survival_at(self, data, t) -> np.ndarray:
        """S_i(t_i): each subject's survival at its own time."""
        X = self.features(data)
        t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
        return np.array([self.survival_matrix(X[i : i + 1], t[i : i + 1])[0, 0] for i in range(X.shape[0])])

    @abstractmethod
    def risk_score(self, data) -> np.ndarray:
        """Higher score means shorter expected survival."""

    @abstractmethod
    def predict_curve(self, x) -> SurvivalCurve:
        """Survival curve of a single subject."""

    @abstractmethod
    def _params(self) -> dict: ...

    @classmethod
    @abstractmethod
    def _from_params(cls, params: dict, columns, hyperparameters, diagnostics) -> "SurvivalModel": ...

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "columns": list(self.columns),
            "hyperparameters": _plain(self.hyperparameters),
            "diagnostics": _plain(self.diagnostics),
            "params": _plain(self._params()),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def model_from_dict(doc: dict) -> SurvivalModel:
    if doc.get("format") != FORMAT:
        raise ParameterError("not a fleetlife model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ParameterError(f"unsupported model document version {doc.get('version')!r}")
    try:
        cls = _REGISTRY[doc["kind"]]
    except KeyError:
        raise ParameterError(f"unknown model kind {doc.get('kind')!r}") from None
    return cls._from_params(doc["params"], tuple(doc["columns"]), doc["hyperparameters"], doc["diagnostics"])


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_model(model: SurvivalModel, path, calibration=None) -> None:
    doc = model.to_dict()
    if calibration is not None:
        doc["calibration"] = calibration.to_dict()
    Path(path).write_text(dumps(doc), encoding="utf-8")


def load_model(path):
    """Return ``(model, calibration_map_or_None)`` from a model JSON file."""
    from ..calibration import IsotonicMap

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cal = doc.get("calibration")
    return model_from_dict(doc), (IsotonicMap.from_dict(cal) if cal else None)
