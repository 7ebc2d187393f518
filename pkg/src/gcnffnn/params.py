"""Flat parameter vectors with named, contiguous slices.

On disk a vector is two files: ``<stem>.bin`` holding little-endian float64
values and ``<stem>.json`` holding the layout manifest::

    {"format": "gcnffnn-params/1", "count": 2601,
     "model": {...model spec...},
     "slices": [{"name": "ffnn.0.weight", "stream": "ffnn", "layer": "0",
                 "kind": "weight", "shape": [2, 20], "start": 0, "stop": 40}, ...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["ParamSlice", "ParamLayout", "ParamVector", "save_params", "load_params"]

FORMAT = "gcnffnn-params/1"


@dataclass(frozen=True)
class ParamSlice:
    stream: str
    layer: str
    kind: str  # "weight" | "bias"
    shape: tuple
    start: int
    stop: int

    @property
    def name(self) -> str:
        return f"{self.stream}.{self.layer}.{self.kind}"

    @property
    def size(self) -> int:
        return self.stop - self.start

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "stream": self.stream,
            "layer": self.layer,
            "kind": self.kind,
            "shape": list(self.shape),
            "start": self.start,
            "stop": self.stop,
        }


class ParamLayout:
    def __init__(self, slices):
        self.slices = tuple(slices)
        self._by_name = {s.name: s for s in self.slices}
        pos = 0
        for s in self.slices:
            if s.start != pos or s.size != int(np.prod(s.shape, dtype=np.int64)):
                raise ValueError(f"slice {s.name} breaks contiguity")
            pos = s.stop
        if len(self._by_name) != len(self.slices):
            raise ValueError("duplicate slice names")
        self.size = pos

    @classmethod
    def build(cls, entries):
        """``entries``: iterable of ``(stream, layer, kind, shape)``."""
        slices, pos = [], 0
        for stream, layer, kind, shape in entries:
            n = int(np.prod(shape, dtype=np.int64))
            slices.append(ParamSlice(stream, str(layer), kind, tuple(shape), pos, pos + n))
            pos += n
        return cls(slices)

    def __len__(self):
        return self.size

    def __iter__(self):
        return iter(self.slices)

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.slices == other.slices

    def __getitem__(self, name) -> ParamSlice:
        return self._by_name[name]

    def names(self):
        return [s.name for s in self.slices]

    def view(self, theta, name):
        s = self._by_name[name]
        return theta[s.start:s.stop].reshape(s.shape)

    def slice_at(self, index: int) -> ParamSlice:
        for s in self.slices:
            if s.start <= index < s.stop:
                return s
        raise IndexError(index)

    def stream_range(self, stream: str) -> slice:
        own = [s for s in self.slices if s.stream == stream]
        if not own:
            raise KeyError(stream)
        return slice(own[0].start, own[-1].stop)

    def concat(self, *others) -> "ParamLayout":
        entries = [(s.stream, s.layer, s.kind, s.shape) for lay in (self, *others) for s in lay]
        return ParamLayout.build(entries)

    def to_json(self) -> list:
        return [s.as_dict() for s in self.slices]


@dataclass
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise ValueError(
                f"parameter vector has {self.values.size} entries, layout expects {self.layout.size}"
            )

    def __len__(self):
        return self.values.size

    def __getitem__(self, name):
        return self.layout.view(self.values, name)

    def stream(self, stream: str) -> np.ndarray:
        return self.values[self.layout.stream_range(stream)]


def save_params(stem, pv: ParamVector, model: dict | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    bin_path.write_bytes(pv.values.astype("<f8").tobytes())
    manifest = {
        "format": FORMAT,
        "count": pv.layout.size,
        "model": model or {},
        "slices": pv.layout.to_json(),
    }
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return bin_path, json_path


def load_params(stem, expected: ParamLayout | None = None, expected_model: dict | None = None) -> ParamVector:
    """Load a vector; a layout or model spec given by the caller must match the manifest."""
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"unsupported parameter format {manifest.get('format')!r}")
    layout = ParamLayout(
        ParamSlice(d["stream"], d["layer"], d["kind"], tuple(d["shape"]), d["start"], d["stop"])
        for d in manifest["slices"]
    )
    if layout.size != manifest["count"]:
        raise ValueError("manifest count disagrees with its slices")
    if expected is not None and layout != expected:
        raise ValueError("parameter layout on disk does not match the requested model")
    if expected_model is not None and manifest.get("model") != expected_model:
        raise ValueError(f"model spec mismatch: {manifest.get('model')} != {expected_model}")
    values = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8").astype(np.float64)
    return ParamVector(values, layout)
