"""Binary container for denoiser backends.

Layout (all integers little-endian)::

    bytes 0..6    magic b"GLODDN1"
    bytes 7..10   uint32 N, length of the JSON header
    N bytes       UTF-8 JSON header
    ...           raw arrays, float64 little-endian, C order, in header order

The header holds ``kind`` ("mixture" or "mlp"), ``arrays`` (list of
``{"name", "shape"}``), an optional ``schedule`` block and kind-specific
metadata. Conditions are written in their JSON form.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from glod.denoiser.analytic import AnalyticMixtureDenoiser, MixtureSpec
from glod.denoiser.condition import Condition
from glod.denoiser.toy import PARAM_NAMES, ToyMLPDenoiser
from glod.errors import FormatError, InvalidArgumentError
from glod.schedule import Schedule

MAGIC = b"GLODDN1"
DTYPE = np.dtype("<f8")


def _schedule_header(s: Schedule | None, arrays: dict) -> dict | None:
    if s is None:
        return None
    arrays["schedule.alpha_bar"] = s.alpha_bar
    arrays["schedule.sigma"] = s.sigma
    return {"num_steps": s.num_steps, "step_rule": s.step_rule.value, "kind": s.kind}


def _pack(kind: str, arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    header = dict(meta, kind=kind, arrays=[{"name": k, "shape": list(np.shape(a))} for k, a in arrays.items()])
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype=DTYPE).tobytes() for a in arrays.values())
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + body


def _unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:7] != MAGIC:
        raise FormatError("not a GLODDN1 file (bad magic)")
    try:
        (n,) = struct.unpack("<I", data[7:11])
        header = json.loads(data[11 : 11 + n].decode("utf-8"))
        offset = 11 + n
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + count * DTYPE.itemsize
            if end > len(data):
                raise FormatError("truncated array data")
            arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype=DTYPE).reshape(shape).astype(np.float64)
            offset = end
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"corrupt GLODDN1 file: {e}") from None
    if offset != len(data):
        raise FormatError("trailing bytes after array data")
    return header, arrays


def _schedule_from(header, arrays) -> Schedule | None:
    sh = header.get("schedule")
    if sh is None:
        return None
    return Schedule(sh["num_steps"], arrays["schedule.alpha_bar"], arrays["schedule.sigma"], sh["step_rule"], sh["kind"])


def dumps_mixture(spec: MixtureSpec, schedule: Schedule | None = None) -> bytes:
    arrays = {"weights": spec.weights, "means": spec.means, "variances": spec.variances}
    cmap = [[c.to_json(), list(idx)] for c, idx in sorted(spec.condition_map.items())]
    return _pack("mixture", arrays, {"condition_map": cmap, "schedule": _schedule_header(schedule, arrays)})


def dumps_mlp(model: ToyMLPDenoiser) -> bytes:
    arrays = {k: model.params[k] for k in PARAM_NAMES}
    meta = {
        "vocab": [c.to_json() for c in model.vocab],
        "image_shape": list(model.image_shape),
        "data_std": model.data_std,
        "report": model.report,
        "schedule": _schedule_header(model.schedule, arrays),
    }
    return _pack("mlp", arrays, meta)


def loads(data: bytes, schedule: Schedule | None = None):
    """Decode a backend. Returns a :class:`MixtureSpec` paired with its stored
    schedule as an :class:`AnalyticMixtureDenoiser` when a schedule is known,
    else the bare spec; MLP files always return a :class:`ToyMLPDenoiser`.
    """
    header, arrays = _unpack(data)
    stored = _schedule_from(header, arrays)
    kind = header.get("kind")
    try:
        if kind == "mixture":
            cmap = {Condition.from_json(c): tuple(idx) for c, idx in header["condition_map"]}
            spec = MixtureSpec(arrays["weights"], arrays["means"], arrays["variances"], cmap)
            s = schedule or stored
            return AnalyticMixtureDenoiser(spec, s) if s is not None else spec
        if kind == "mlp":
            s = schedule or stored
            if s is None:
                raise FormatError("mlp file lacks a schedule")
            vocab = [Condition.from_json(c) for c in header["vocab"]]
            return ToyMLPDenoiser(
                {k: arrays[k] for k in PARAM_NAMES}, vocab, s, header["image_shape"], header.get("report"), header["data_std"]
            )
    except KeyError as e:
        raise FormatError(f"missing field {e}") from None
    except InvalidArgumentError as e:
        raise FormatError(str(e)) from None
    raise FormatError(f"unknown backend kind {kind!r}")


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, backend, schedule: Schedule | None = None):
    """Write a :class:`MixtureSpec`, analytic denoiser or toy MLP to ``path``."""
    if isinstance(backend, ToyMLPDenoiser):
        data = dumps_mlp(backend)
    elif isinstance(backend, AnalyticMixtureDenoiser):
        data = dumps_mixture(backend.spec, schedule or backend.schedule)
    elif isinstance(backend, MixtureSpec):
        data = dumps_mixture(backend, schedule)
    else:
        raise InvalidArgumentError(f"cannot serialize {type(backend).__name__}")
    atomic_write_bytes(path, data)


def load(path, schedule: Schedule | None = None):
    return loads(Path(path).read_bytes(), schedule)
