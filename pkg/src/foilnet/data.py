"""Sample assembly, preprocessing, normalization, and the on-disk dataset.

A sample couples a 3-channel input grid (mask, freestream vx, freestream
vy) with a 3-channel target grid (pressure, vel_x, vel_y). Targets are
stored preprocessed (variant A/B/C) but unnormalized; the per-channel
max-abs constants live in the manifest and are applied when loading.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (ConfigInvalid, DatasetMissing, DegenerateChannel,
                     FoilnetError, NoAirfoils, OverlappingShapes,
                     ShapeMismatch, ZeroMagnitude)
from .geometry import AirfoilShape, GridSpec, parse_uiuc, rasterize, shear
from .panel import Freestream, evaluate_field, sample_freestream, solve_panels

CHANNELS = ("mask", "in_vx", "in_vy", "pressure", "vel_x", "vel_y")
VARIANTS = ("A", "B", "C")
SPLITS = ("train", "val", "test")
_MAGIC = b"DFP1"
_HEADER = struct.Struct("<4sIIff")

# shear angles for the augmented corpus, degrees
_SHEAR_RANGE = 15.0
_MAX_DRAW_ATTEMPTS = 100


@dataclass(frozen=True)
class FlowSample:
    """One input/target pair plus the metadata needed to undo scalings."""

    input: np.ndarray   # (3, res, res) float32: mask, in_vx, in_vy
    target: np.ndarray  # (3, res, res) float32: pressure, vel_x, vel_y
    freestream: Freestream
    shape_name: str
    variant: str

    @property
    def resolution(self) -> int:
        return self.input.shape[-1]

    def planes(self) -> np.ndarray:
        """All six channels stacked (6, res, res), file order."""
        return np.concatenate([self.input, self.target], axis=0)


def encode_input(mask: np.ndarray, fs: Freestream) -> np.ndarray:
    """Mask plane plus constant freestream planes, zeroed inside the shape."""
    outside = 1.0 - mask
    planes = np.stack([mask, fs.vx * outside, fs.vy * outside])
    return np.asarray(planes, dtype=np.float32)


def preprocess_target(raw: np.ndarray, fs: Freestream, variant: str) -> np.ndarray:
    """Variant A: identity. B: divide velocity by |v_inf| and pressure by
    |v_inf|^2. C: variant B, then subtract the pressure plane's mean (taken
    over all cells) from every cell.
    """
    if variant not in VARIANTS:
        raise ConfigInvalid(f"unknown preprocessing variant {variant!r}")
    out = np.array(raw, dtype=np.float64)
    if out.shape[0] != 3:
        raise ShapeMismatch(f"target expects 3 planes, got {out.shape}")
    if variant == "A":
        return out
    mag = fs.magnitude
    if mag <= 0.0:
        raise ZeroMagnitude("cannot scale a target by a zero freestream")
    out[0] /= mag * mag
    out[1:] /= mag
    if variant == "C":
        out[0] -= out[0].mean()
    return out


def fit_normalizer(samples: list[FlowSample]) -> np.ndarray:
    """Per-channel max-abs over every sample and cell, (6,) float64."""
    if not samples:
        raise DegenerateChannel("cannot fit normalization constants to nothing")
    consts = np.zeros(6)
    for s in samples:
        consts = np.maximum(consts, np.abs(s.planes()).max(axis=(1, 2)))
    for name, c in zip(CHANNELS, consts):
        if c == 0.0:
            raise DegenerateChannel(f"channel {name} is identically zero in the training split")
    return consts


def normalize_sample(sample: FlowSample, consts: np.ndarray) -> FlowSample:
    c = np.asarray(consts, dtype=np.float32)
    return replace(sample,
                   input=sample.input / c[:3, None, None],
                   target=sample.target / c[3:, None, None])


def denormalize(target: np.ndarray, consts: np.ndarray, fs: Freestream,
                variant: str) -> np.ndarray:
    """Undo max-abs scaling, then the variant scaling (the variant-C mean
    shift is a pressure null space and is not restored)."""
    if variant not in VARIANTS:
        raise ConfigInvalid(f"unknown preprocessing variant {variant!r}")
    out = np.asarray(target, dtype=np.float64) * np.asarray(consts[3:], dtype=np.float64)[:, None, None]
    if variant != "A":
        mag = fs.magnitude
        out[0] *= mag * mag
        out[1:] *= mag
    return out


@dataclass
class SampleEntry:
    path: str        # relative to the manifest directory, forward slashes
    split: str
    shape_name: str


@dataclass
class Manifest:
    variant: str
    seed: int
    resolution: int
    entries: list[SampleEntry]
    norms: np.ndarray | None = None

    def paths(self, split: str | None = None) -> list[str]:
        return [e.path for e in self.entries if split is None or e.split == split]


def write_sample(path: Path | str, sample: FlowSample) -> None:
    planes = np.ascontiguousarray(sample.planes(), dtype="<f4")
    header = _HEADER.pack(_MAGIC, sample.resolution, 6,
                          sample.freestream.vx, sample.freestream.vy)
    Path(path).write_bytes(header + planes.tobytes())


def read_sample(path: Path | str, variant: str = "A", shape_name: str = "") -> FlowSample:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DatasetMissing(f"cannot read sample {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise ShapeMismatch(f"{path}: truncated header")
    magic, res, nch, vx, vy = _HEADER.unpack_from(blob)
    if magic != _MAGIC or nch != 6:
        raise ShapeMismatch(f"{path}: not a 6-channel DFP1 sample file")
    want = _HEADER.size + 6 * res * res * 4
    if len(blob) != want:
        raise ShapeMismatch(f"{path}: expected {want} bytes, found {len(blob)}")
    planes = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(6, res, res)
    return FlowSample(input=planes[:3].copy(), target=planes[3:].copy(),
                      freestream=Freestream(float(vx), float(vy)),
                      shape_name=shape_name, variant=variant)


def write_manifest(path: Path | str, manifest: Manifest) -> None:
    lines = ["format = foilnet-dataset 1",
             f"resolution = {manifest.resolution}",
             f"variant = {manifest.variant}",
             f"seed = {manifest.seed}"]
    if manifest.norms is not None:
        for name, c in zip(CHANNELS, manifest.norms):
            lines.append(f"norm_{name} = {float(c):.17g}")
    for e in manifest.entries:
        lines.append(f"sample {e.path} {e.split} {e.shape_name}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: Path | str) -> Manifest:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DatasetMissing(f"cannot read manifest {path}: {e}") from e
    keys: dict[str, str] = {}
    entries: list[SampleEntry] = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("sample "):
            parts = line.split(maxsplit=3)
            if len(parts) < 4 or parts[2] not in SPLITS:
                raise ConfigInvalid(f"{path}:{ln}: bad sample line {line!r}")
            entries.append(SampleEntry(parts[1], parts[2], parts[3]))
        elif "=" in line:
            k, _, v = line.partition("=")
            keys[k.strip()] = v.strip()
        else:
            raise ConfigInvalid(f"{path}:{ln}: unparseable line {line!r}")
    try:
        variant = keys["variant"]
        seed = int(keys["seed"])
        resolution = int(keys["resolution"])
    except KeyError as e:
        raise ConfigInvalid(f"{path}: missing manifest key {e}") from e
    norms = None
    if f"norm_{CHANNELS[0]}" in keys:
        norms = np.array([float(keys[f"norm_{n}"]) for n in CHANNELS])
    if variant not in VARIANTS:
        raise ConfigInvalid(f"{path}: unknown variant {variant!r}")
    return Manifest(variant=variant, seed=seed, resolution=resolution,
                    entries=entries, norms=norms)


def split(manifest: Manifest, train_shapes: list[str], test_shapes: list[str],
          val_fraction: float = 0.1) -> Manifest:
    """Assign splits by shape name; validation is a seed-deterministic
    fraction of the train-shape samples."""
    train_set, test_set = set(train_shapes), set(test_shapes)
    overlap = train_set & test_set
    if overlap:
        raise OverlappingShapes(f"shapes on both sides of the train/test wall: {sorted(overlap)}")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigInvalid(f"val_fraction {val_fraction} outside [0, 1)")
    entries = []
    trainish = []
    for e in manifest.entries:
        if e.shape_name in test_set:
            entries.append(replace(e, split="test"))
        else:
            entries.append(replace(e, split="train"))
            trainish.append(len(entries) - 1)
    n_val = int(round(val_fraction * len(trainish)))
    rng = np.random.default_rng(np.random.SeedSequence([manifest.seed & 0xFFFFFFFF, 0x5A17]))
    for i in rng.permutation(len(trainish))[:n_val]:
        entries[trainish[i]] = replace(entries[trainish[i]], split="val")
    return replace(manifest, entries=entries)


class Dataset:
    """A manifest plus all of its samples, normalized and in memory.

    inputs/targets: (N, 3, res, res) float32 in manifest order; index into
    them with the split_indices arrays.
    """

    def __init__(self, manifest_path: Path | str):
        manifest_path = Path(manifest_path)
        self.manifest = read_manifest(manifest_path)
        if self.manifest.norms is None:
            raise ConfigInvalid(f"{manifest_path}: manifest has no normalization constants")
        root = manifest_path.parent
        n = len(self.manifest.entries)
        res = self.manifest.resolution
        self.inputs = np.empty((n, 3, res, res), dtype=np.float32)
        self.targets = np.empty((n, 3, res, res), dtype=np.float32)
        self.freestreams: list[Freestream] = []
        self.names: list[str] = []
        for i, e in enumerate(self.manifest.entries):
            s = read_sample(root / e.path, self.manifest.variant, e.shape_name)
            if s.resolution != res:
                raise ShapeMismatch(f"{e.path}: resolution {s.resolution} != manifest {res}")
            s = normalize_sample(s, self.manifest.norms)
            self.inputs[i] = s.input
            self.targets[i] = s.target
            self.freestreams.append(s.freestream)
            self.names.append(e.shape_name)
        self.split_indices = {
            sp: np.array([i for i, e in enumerate(self.manifest.entries) if e.split == sp],
                         dtype=np.intp)
            for sp in SPLITS}

    @property
    def variant(self) -> str:
        return self.manifest.variant

    @property
    def norms(self) -> np.ndarray:
        return self.manifest.norms

    def arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.split_indices[split]
        return self.inputs[idx], self.targets[idx]


def load_airfoil_dir(airfoil_dir: Path | str) -> list[AirfoilShape]:
    """Parse every .dat file in a directory; unusable files are skipped."""
    shapes = []
    for p in sorted(Path(airfoil_dir).glob("*.dat")):
        try:
            shapes.append(parse_uiuc(p.read_text(errors="replace")))
        except FoilnetError:
            continue
    if not shapes:
        raise NoAirfoils(f"no parseable airfoil files in {airfoil_dir}")
    return shapes


def _draw_sample(index: int, rng: np.random.Generator, test_shapes: list[AirfoilShape],
                 train_shapes: list[AirfoilShape], variant: str, shear_mode: str,
                 grid: GridSpec, n_panels: int) -> FlowSample:
    """One sample for slot `index`; invalid draws are retried on the slot's
    own random stream so results do not depend on worker scheduling."""
    n_test = 3 * len(test_shapes)
    last: FoilnetError | None = None
    for _ in range(_MAX_DRAW_ATTEMPTS):
        if index < n_test:
            shape = test_shapes[index // 3]
        else:
            shape = train_shapes[int(rng.integers(len(train_shapes)))]
        if shear_mode == "only" or (shear_mode == "mixed" and rng.random() < 0.5):
            shape = shear(shape, float(rng.uniform(-_SHEAR_RANGE, _SHEAR_RANGE)))
        fs = sample_freestream(rng)
        try:
            mask = rasterize(shape, grid)
            solution = solve_panels(shape, fs, n_panels)
            raw = evaluate_field(solution, grid, mask)
        except FoilnetError as e:
            last = e
            continue
        target = preprocess_target(raw, fs, variant)
        return FlowSample(input=encode_input(mask, fs),
                          target=np.asarray(target, dtype=np.float32),
                          freestream=fs, shape_name=shape.name, variant=variant)
    raise NoAirfoils(f"sample slot {index}: no valid draw in "
                     f"{_MAX_DRAW_ATTEMPTS} attempts (last: {last})")


_WORKER_STATE: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER_STATE.update(state)


def _run_slot(args: tuple[int, np.random.SeedSequence]) -> tuple[int, str, str]:
    index, ss = args
    st = _WORKER_STATE
    sample = _draw_sample(index, np.random.default_rng(ss), st["test_shapes"],
                          st["train_shapes"], st["variant"], st["shear_mode"],
                          st["grid"], st["n_panels"])
    rel = f"samples/sample_{index:05d}.dfp"
    write_sample(Path(st["out_dir"]) / rel, sample)
    return index, rel, sample.shape_name


def generate_dataset(airfoil_dir: Path | str, out_dir: Path | str, count: int,
                     seed: int, variant: str = "C", shear_mode: str = "none",
                     test_shapes_path: Path | str | None = None, jobs: int = 1,
                     val_fraction: float = 0.1, n_panels: int = 120,
                     grid: GridSpec | None = None) -> Path:
    """Draw `count` samples, write them plus a manifest under out_dir.

    The first 3 draws per test shape (up to `count`) fill the test split;
    everything after comes from the remaining shapes. Returns the manifest
    path.
    """
    if variant not in VARIANTS:
        raise ConfigInvalid(f"unknown preprocessing variant {variant!r}")
    if shear_mode not in ("none", "mixed", "only"):
        raise ConfigInvalid(f"unknown shear mode {shear_mode!r}")
    if count < 1:
        raise ConfigInvalid(f"count {count} must be positive")
    grid = grid or GridSpec()
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)

    shapes = load_airfoil_dir(airfoil_dir)
    by_name = {s.name: s for s in shapes}
    test_names: list[str] = []
    if test_shapes_path is not None:
        try:
            listed = Path(test_shapes_path).read_text().splitlines()
        except OSError as e:
            raise DatasetMissing(f"cannot read test shape list: {e}") from e
        test_names = [ln.strip() for ln in listed if ln.strip()]
        missing = [n for n in test_names if n not in by_name]
        if missing:
            raise NoAirfoils(f"test shapes not in the corpus: {missing}")
    test_shapes = [by_name[n] for n in test_names]
    train_shapes = [s for s in shapes if s.name not in set(test_names)]
    if not train_shapes and count > 3 * len(test_shapes):
        raise NoAirfoils("no train shapes left after excluding the test list")

    state = {"test_shapes": test_shapes[:(count + 2) // 3],
             "train_shapes": train_shapes, "variant": variant,
             "shear_mode": shear_mode, "grid": grid, "n_panels": n_panels,
             "out_dir": str(out_dir)}
    tasks = list(enumerate(np.random.SeedSequence(seed).spawn(count)))
    results: list[tuple[str, str] | None] = [None] * count
    if jobs > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(jobs, initializer=_init_worker,
                                         initargs=(state,)) as pool:
            for index, rel, name in pool.imap_unordered(_run_slot, tasks, chunksize=4):
                results[index] = (rel, name)
    else:
        _init_worker(state)
        for task in tasks:
            index, rel, name = _run_slot(task)
            results[index] = (rel, name)

    entries = [SampleEntry(path=rel, split="train", shape_name=name)
               for rel, name in results]
    manifest = Manifest(variant=variant, seed=seed, resolution=grid.resolution,
                        entries=entries)
    manifest = split(manifest, [s.name for s in train_shapes], test_names, val_fraction)

    train_samples = [read_sample(out_dir / e.path, variant, e.shape_name)
                     for e in manifest.entries if e.split == "train"]
    # an all-test dataset (e.g. 3 draws x 30 held-out shapes) has no split
    # to fit constants on; its manifest simply carries none
    manifest.norms = fit_normalizer(train_samples) if train_samples else None
    manifest_path = out_dir / "manifest.txt"
    write_manifest(manifest_path, manifest)
    return manifest_path
