"""Model files: a numpy ``.npz`` archive with arrays plus one JSON metadata entry."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import NormalizationParams
from .nn import LstmLayer, LstmModel, MlpModel
from .svr import Kernel, SvrModel

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def _arrays(model) -> dict:
    if isinstance(model, (MlpModel, LstmModel)):
        return {k: np.asarray(v) for k, v in model.params().items()}
    if isinstance(model, SvrModel):
        return {"support_vectors": model.support_vectors, "coef": model.coef, "support": model.support}
    raise TypeError(f"cannot save {type(model).__name__}")


def save_model(path, model, norm: NormalizationParams | None = None, extra: dict | None = None) -> Path:
    """Write ``model`` (and the scaler it was trained under) to ``path``."""
    meta = {"format_version": FORMAT_VERSION, "kind": model.kind, "trained": bool(model.trained),
            "config": model.config(), "norm": norm.to_dict() if norm is not None else None,
            "extra": extra or {}}
    if isinstance(model, SvrModel):
        meta["svr"] = {"bias": float(model.bias), "n_train": model.n_train,
                       "dual_objective": float(model.dual_objective), "n_iter": model.n_iter}
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **_arrays(model))
    return path


def load_model(path):
    """Returns ``(model, norm_or_None, meta)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise ModelFileError(f"{path}: not a model archive ({exc})") from exc
    if "__meta__" not in arrays:
        raise ModelFileError(f"{path}: missing metadata entry")
    meta = json.loads(str(arrays.pop("__meta__")))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported format version {meta.get('format_version')}")
    kind, trained = meta["kind"], bool(meta["trained"])
    try:
        if kind == "mlp":
            model = MlpModel(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"], trained=trained)
        elif kind == "lstm":
            layers = []
            for k in range(meta["config"]["num_layers"]):
                s = LstmModel._suffix(k)
                layers.append(LstmLayer(arrays["U" + s], arrays["V" + s], arrays["b" + s]))
            model = LstmModel(layers, arrays["W_d"], arrays["b_d"], trained=trained)
        elif kind == "svr":
            cfg, info = meta["config"], meta["svr"]
            model = SvrModel(arrays["support_vectors"], arrays["coef"], info["bias"], Kernel(**cfg["kernel"]),
                             cfg["C"], cfg["epsilon"], support=arrays["support"], n_train=info["n_train"],
                             dual_objective=info["dual_objective"], n_iter=info["n_iter"], trained=trained)
        else:
            raise ModelFileError(f"{path}: unknown model kind {kind!r}")
    except KeyError as exc:
        raise ModelFileError(f"{path}: missing array {exc}") from exc
    norm = NormalizationParams.from_dict(meta["norm"]) if meta.get("norm") else None
    return model, norm, meta
