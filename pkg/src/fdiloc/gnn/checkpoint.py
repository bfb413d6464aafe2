"""Model checkpoints.

A checkpoint is a pair of files:

``<stem>.ckpt``
    ``magic(8) = b"FDICKPT\\0"``, ``version u32``, ``count u32``, then
    ``count`` blobs, each ``name_len u16``, UTF-8 name, ``ndim u8``,
    ``ndim`` x ``u32`` dims and the float64 little-endian values (C order).
``<stem>.json``
    Architecture descriptor plus optional training state.

Blob names: model parameters as returned by ``named_params``; graph
operators as ``op.<layer index>``; with training state also
``best.<param>``, ``live.<param>`` (weights at the last epoch, which
differ from the saved model weights once the best ones were restored),
``adam.m.<param>`` and ``adam.v.<param>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import DataError
from .layers import ArmaLayer, ChebLayer, Linear, NodeDense, ReLU
from .model import DetectorModel, Flatten
from .training import EpochRecord, TrainConfig, Trainer, TrainState

MAGIC = b"FDICKPT\0"
VERSION = 1


def write_blobs(path, blobs: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII", MAGIC, VERSION, len(blobs)))
        for name in sorted(blobs):
            arr = np.ascontiguousarray(blobs[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_blobs(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    try:
        magic, ver, count = struct.unpack_from("<8sII", buf, 0)
    except struct.error:
        raise DataError(f"{path}: truncated checkpoint") from None
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if ver != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {ver}")
    off = 16
    out = {}
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + ln].decode("utf-8")
            off += ln
            (nd,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{nd}I", buf, off)
            off += 4 * nd
            size = int(np.prod(dims)) if nd else 1
            if off + 8 * size > len(buf):
                raise struct.error("blob overruns file")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(dims).astype(np.float64)
            off += 8 * size
    except struct.error as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None
    return out


def _paths(stem):
    stem = Path(stem)
    if stem.suffix in (".ckpt", ".json"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".ckpt"), stem.with_suffix(".json")


def save_checkpoint(stem, model: DetectorModel, trainer: Trainer | None = None, extra: dict | None = None) -> Path:
    ckpt, desc_path = _paths(stem)
    blobs = dict(model.named_params())
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (ArmaLayer, ChebLayer)):
            blobs[f"op.{i}"] = layer.op
    desc = {"format_version": VERSION, "model": model.descriptor()}
    if trainer is not None:
        st = trainer.state
        desc["train_config"] = vars(trainer.config)
        desc["train_state"] = st.summary()
        desc["adam_t"] = trainer.opt.t
        for k in trainer.opt.m:
            blobs[f"adam.m.{k}"] = trainer.opt.m[k]
            blobs[f"adam.v.{k}"] = trainer.opt.v[k]
        if st.best_params is not None:
            for k, v in st.best_params.items():
                blobs[f"best.{k}"] = v
        for k, v in (trainer.live_params or model.named_params()).items():
            blobs[f"live.{k}"] = v
    if extra:
        desc.update(extra)
    write_blobs(ckpt, blobs)
    desc_path.write_text(json.dumps(desc, indent=1, sort_keys=True) + "\n")
    return ckpt


def model_from_descriptor(desc: dict, blobs: dict[str, np.ndarray]) -> DetectorModel:
    layers = []
    for i, cfg in enumerate(desc["layers"]):
        kind = cfg["kind"]
        if kind == "arma":
            layers.append(
                ArmaLayer(
                    blobs[f"op.{i}"], cfg["c_in"], cfg["c_out"], cfg["K"], cfg["T"],
                    share_weights=cfg["share_weights"], iter_activation=cfg["iter_activation"], bias=cfg.get("bias", True),
                )
            )
        elif kind == "cheb":
            layers.append(ChebLayer(blobs[f"op.{i}"], cfg["c_in"], cfg["c_out"], cfg["K"], bias=cfg.get("bias", True)))
        elif kind == "node_dense":
            layers.append(NodeDense(cfg["n"], cfg["c_in"]))
        elif kind == "linear":
            layers.append(Linear(cfg["d_in"], cfg["d_out"]))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            raise DataError(f"unknown layer kind {kind!r} in checkpoint")
    model = DetectorModel(layers, desc["n"], desc["head"], desc.get("family", ""), desc.get("meta"))
    model.set_params({k: blobs[k] for k in model.named_params()})
    return model


def load_checkpoint(stem, with_trainer: bool = False):
    """Load a model (and optionally a ready-to-resume ``Trainer``)."""
    ckpt, desc_path = _paths(stem)
    if not ckpt.exists() or not desc_path.exists():
        raise DataError(f"checkpoint {ckpt} / {desc_path} not found")
    desc = json.loads(desc_path.read_text())
    blobs = read_blobs(ckpt)
    try:
        model = model_from_descriptor(desc["model"], blobs)
    except KeyError as exc:
        raise DataError(f"checkpoint is missing {exc}") from None
    if not with_trainer:
        return model
    if "train_state" not in desc:
        raise DataError("checkpoint carries no training state")
    s = desc["train_state"]
    names = list(model.named_params())
    best = {k: blobs[f"best.{k}"] for k in names} if f"best.{names[0]}" in blobs else None
    state = TrainState(
        epoch=s["epoch"], best_loss=s["best_loss"], best_epoch=s["best_epoch"], wait=s["wait"], stopped=s["stopped"],
        history=[EpochRecord(**r) for r in s["history"]], best_params=best, rng_state=s["rng_state"],
    )
    if f"live.{names[0]}" in blobs:
        model.set_params({k: blobs[f"live.{k}"] for k in names})
    trainer = Trainer(model, TrainConfig(**desc["train_config"]), state)
    trainer.opt.load_state(
        desc["adam_t"], {k: blobs[f"adam.m.{k}"] for k in names}, {k: blobs[f"adam.v.{k}"] for k in names}
    )
    return model, trainer
