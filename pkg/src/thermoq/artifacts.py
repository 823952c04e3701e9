"""On-disk formats: datasets, checkpoints and raw f32 rasters.

Rasters are little-endian 32-bit floats in row-major order with no header;
shapes live in the accompanying ``meta.json``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import DomainSpec, LayoutSpec, build_masks, layout_to_dict, load_layout
from .net import BNStats, NetConfig
from .optim import AdamState
from .solver import SolverConfig, extract_mp, solve_steady, source_field
from .stochastic import lhs_sample, stream

F32 = np.dtype("<f4")


def write_f32(path: str | Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=F32).tofile(path)


def read_f32(path: str | Path, shape: tuple) -> np.ndarray:
    data = np.fromfile(path, dtype=F32)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} floats, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ datasets


@dataclass
class Dataset:
    domain: DomainSpec
    layout: LayoutSpec
    fields: np.ndarray  # (N, H, W) Kelvin
    mps: np.ndarray  # (N, H, W) Kelvin, zero off-sensor
    powers: np.ndarray  # (N, n_components)
    splits: dict[str, int]
    seed: int

    @property
    def masks(self):
        return build_masks(self.domain, self.layout)

    def split(self, name: str) -> slice:
        order = ["train", "val", "test"]
        start = sum(self.splits.get(k, 0) for k in order[: order.index(name)])
        return slice(start, start + self.splits.get(name, 0))


def generate_dataset(domain: DomainSpec, layout: LayoutSpec, n: int, seed: int,
                     splits: dict[str, int] | None = None,
                     solver: SolverConfig = SolverConfig()) -> Dataset:
    """LHS component powers -> steady fields -> (noisy) MP images."""
    if n < 1:
        raise ValueError("n must be >= 1")
    splits = splits or {"train": n, "val": 0, "test": 0}
    if sum(splits.values()) != n:
        raise ValueError(f"split sizes {splits} do not sum to {n}")
    masks = build_masks(domain, layout)
    powers = lhs_sample(n, [c.dist for c in layout.components], stream(seed, "data"))
    fields = np.empty((n,) + domain.shape)
    mps = np.empty_like(fields)
    for i in range(n):
        phi = source_field(domain, layout, powers[i])
        fields[i] = solve_steady(domain, masks, phi, solver)
        mps[i] = extract_mp(fields[i], layout, stream(seed, "noise", i))
    return Dataset(domain, layout, fields, mps, powers, dict(splits), seed)


def save_dataset(ds: Dataset, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(ds.fields)
    write_json(out / "meta.json", {
        "format": "thermoq-dataset/1",
        "layout": layout_to_dict(ds.domain, ds.layout),
        "seed": ds.seed,
        "normalized": False,
        "n": n,
        "shape": list(ds.domain.shape),
        "splits": ds.splits,
        "streams": ["data", "noise"],
    })
    for i in range(n):
        write_f32(out / f"field_{i:06d}.f32", ds.fields[i])
        write_f32(out / f"mp_{i:06d}.f32", ds.mps[i])
    with open(out / "powers.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [c.id for c in ds.layout.components])
        for i, row in enumerate(ds.powers):
            w.writerow([i] + [repr(float(p)) for p in row])
    return out


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    domain, layout = load_layout(meta["layout"])
    shape = tuple(meta["shape"])
    n = int(meta["n"])
    fields = np.stack([read_f32(path / f"field_{i:06d}.f32", shape) for i in range(n)])
    mps = np.stack([read_f32(path / f"mp_{i:06d}.f32", shape) for i in range(n)])
    powers = np.zeros((n, len(layout.components)))
    pfile = path / "powers.csv"
    if pfile.exists():
        with open(pfile) as fh:
            rows = list(csv.reader(fh))[1:]
        powers = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(n, -1)
    return Dataset(domain, layout, fields, mps, powers, dict(meta["splits"]), int(meta["seed"]))


# ------------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    net: NetConfig
    params: dict[str, np.ndarray]
    adam: AdamState
    bn: BNStats
    epoch: int  # last completed epoch, 0 before training
    seed: int
    normalized: bool = True
    train_config: dict | None = None
    history: list[dict] | None = None


def _dump_arrays(folder: Path, arrays: dict[str, np.ndarray]) -> dict[str, list[int]]:
    folder.mkdir(parents=True, exist_ok=True)
    for name, arr in arrays.items():
        write_f32(folder / f"{name}.f32", arr)
    return {name: list(arr.shape) for name, arr in arrays.items()}


def _load_arrays(folder: Path, shapes: dict[str, list[int]], dtype) -> dict[str, np.ndarray]:
    return {name: read_f32(folder / f"{name}.f32", tuple(shape)).astype(dtype)
            for name, shape in shapes.items()}


def save_checkpoint(ck: Checkpoint, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "thermoq-checkpoint/1",
        "architecture": ck.net.to_dict(),
        "epoch": ck.epoch,
        "seed": ck.seed,
        "normalized": ck.normalized,
        "shapes": _dump_arrays(out / "params", ck.params),
        "adam": {"step": ck.adam.step, "beta1": ck.adam.beta1, "beta2": ck.adam.beta2,
                 "eps": ck.adam.eps,
                 "m": _dump_arrays(out / "adam_m", ck.adam.m),
                 "v": _dump_arrays(out / "adam_v", ck.adam.v)},
        "bn": {"momentum": ck.bn.momentum,
               "mean": _dump_arrays(out / "bn_mean", ck.bn.mean),
               "var": _dump_arrays(out / "bn_var", ck.bn.var)},
        "train_config": ck.train_config,
    }
    write_json(out / "meta.json", meta)
    if ck.history:
        write_history(ck.history, out / "history.csv")
    return out


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    net = NetConfig.from_dict(meta["architecture"])
    a = meta["adam"]
    adam = AdamState(beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=int(a["step"]),
                     m=_load_arrays(path / "adam_m", a["m"], net.dtype),
                     v=_load_arrays(path / "adam_v", a["v"], net.dtype))
    b = meta["bn"]
    bn = BNStats(mean=_load_arrays(path / "bn_mean", b["mean"], np.float64),
                 var=_load_arrays(path / "bn_var", b["var"], np.float64), momentum=b["momentum"])
    hist_file = path / "history.csv"
    return Checkpoint(
        net=net,
        params=_load_arrays(path / "params", meta["shapes"], net.dtype),
        adam=adam, bn=bn, epoch=int(meta["epoch"]), seed=int(meta["seed"]),
        normalized=bool(meta.get("normalized", True)),
        train_config=meta.get("train_config"),
        history=read_history(hist_file) if hist_file.exists() else None,
    )


HISTORY_COLUMNS = ("epoch", "L_tau", "L_LE", "L_BC", "L_TV", "total")


def write_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]])


def read_history(path: str | Path) -> list[dict]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(r[k]) if k == "epoch" else float(r[k])) for k in HISTORY_COLUMNS} for r in rows]


# ------------------------------------------------------------------ heatmaps


def write_heatmap(path: str | Path, field: np.ndarray) -> None:
    """8-bit binary PGM scaled min->0, max->255; the range goes to ``<path>.json``."""
    path = Path(path)
    f = np.asarray(field, dtype=np.float64)
    lo, hi = float(f.min()), float(f.max())
    span = hi - lo
    img = np.zeros(f.shape, dtype=np.uint8) if span == 0 else \
        np.rint((f - lo) / span * 255).astype(np.uint8)
    H, W = f.shape
    path.write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + img.tobytes())
    write_json(path.with_suffix(path.suffix + ".json"), {"min": lo, "max": hi, "width": W, "height": H})
