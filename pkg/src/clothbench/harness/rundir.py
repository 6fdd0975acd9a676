"""On-disk dataset layout for collected episodes.

A run directory holds everything one collection produced::

    run/
      meta.json                    index: schema version, seed, policy, episodes
      ep000/
        steps.csv                  tick, joint angles, joint velocities, command
        frames/f000000.pgm ...     one binary silhouette per step
      ep001/ ...
      latents/<ae-digest>/ep000.npy   cached encodings, keyed by encoder weights

``meta.json`` is the only file with a timestamp; every other byte is a pure
function of the data, so re-collecting with the same seed reproduces the CSVs
and frames bit for bit, and write -> read -> write is byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..simworld import MaterialParams

SCHEMA_VERSION = 1
META_NAME = "meta.json"
STEP_COLUMNS = (
    "tick",
    "theta_0", "theta_1",
    "theta_dot_0", "theta_dot_1",
    "theta_ref_0", "theta_ref_1",
    "k_ref",
)
IMAGE_SHAPE = (96, 128)


class RunDirectoryError(ValueError):
    """Malformed run directory, episode, or image file."""


# ---------------------------------------------------------------------------
# PGM image files
# ---------------------------------------------------------------------------


def pgm_bytes(image: np.ndarray) -> bytes:
    """A binary mask (values 0/1, any integer dtype) as 8-bit P5 file bytes."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise RunDirectoryError(f"expected a 2-d image, got shape {arr.shape}")
    mask = (arr > 0).astype(np.uint8) * 255
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    return header + mask.tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    """Write a binary mask as an 8-bit P5 file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pgm_bytes(image))


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 file back to a 0/1 uint8 mask."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4 and pos < len(raw):
        # skip whitespace and '#' comment lines between header tokens
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if len(fields) < 4 or fields[0] != b"P5":
        raise RunDirectoryError(f"{path}: not a binary (P5) PGM file")
    try:
        width, height, maxval = (int(f) for f in fields[1:4])
    except ValueError as err:
        raise RunDirectoryError(f"{path}: malformed PGM header") from err
    if maxval != 255:
        raise RunDirectoryError(f"{path}: expected maxval 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    if len(raw) - pos < width * height:
        raise RunDirectoryError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return (pixels.reshape(height, width) > 127).astype(np.uint8)


# ---------------------------------------------------------------------------
# Episode payload
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeData:
    """One recorded episode: per-tick observations, commands, and frames."""

    name: str
    material: MaterialParams
    policy: str
    seed: int | None
    trial_id: int
    theta: np.ndarray        # (T, 2) joint angles at each tick
    theta_dot: np.ndarray    # (T, 2) joint velocities
    theta_ref: np.ndarray    # (T, 2) commanded joint targets
    k_ref: np.ndarray        # (T,)  commanded gain factor
    frames: np.ndarray       # (T, 96, 128) uint8 silhouettes, values 0/1
    flagged: bool = False    # recording ended abnormally (e.g. client dropped)

    def __post_init__(self):
        t = self.theta.shape[0]
        shapes = {
            "theta": (self.theta.shape, (t, 2)),
            "theta_dot": (self.theta_dot.shape, (t, 2)),
            "theta_ref": (self.theta_ref.shape, (t, 2)),
            "k_ref": (self.k_ref.shape, (t,)),
            "frames": (self.frames.shape, (t, *IMAGE_SHAPE)),
        }
        for field_name, (got, want) in shapes.items():
            if got != want:
                raise RunDirectoryError(f"{field_name} has shape {got}, expected {want}")
        if t < 1:
            raise RunDirectoryError("an episode needs at least one step")

    def __len__(self) -> int:
        return self.theta.shape[0]

    @property
    def commands(self) -> np.ndarray:
        """(T, 3) command rows: both joint targets then the gain."""
        return np.column_stack([self.theta_ref, self.k_ref])


# ---------------------------------------------------------------------------
# Run directory
# ---------------------------------------------------------------------------


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunDirectory:
    """Reader/writer for one collection run rooted at ``root``."""

    def __init__(self, root):
        self.root = Path(root)
        meta_path = self.root / META_NAME
        if not meta_path.is_file():
            raise RunDirectoryError(f"{self.root} has no {META_NAME}; not a run directory")
        try:
            self.meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as err:
            raise RunDirectoryError(f"{meta_path} is not valid JSON: {err}") from err
        if "schema_version" not in self.meta:
            raise RunDirectoryError(f"{meta_path} lacks a schema_version field")
        if self.meta["schema_version"] > SCHEMA_VERSION:
            raise RunDirectoryError(
                f"{meta_path} has schema_version {self.meta['schema_version']}; "
                f"this build reads up to {SCHEMA_VERSION}")

    # -- creation -----------------------------------------------------------

    @classmethod
    def create(cls, root, *, kind: str, seed: int | None, policy: str,
               dt: float = 0.2) -> "RunDirectory":
        root = Path(root)
        if (root / META_NAME).exists():
            raise RunDirectoryError(f"{root} already holds a run")
        root.mkdir(parents=True, exist_ok=True)
        meta = {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "policy": policy,
            "seed": seed,
            "dt": dt,
            "created": _utc_now(),
            "episodes": [],
        }
        (root / META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return cls(root)

    def _write_meta(self) -> None:
        (self.root / META_NAME).write_text(
            json.dumps(self.meta, indent=2, sort_keys=True) + "\n")

    # -- episodes -------------------------------------------------------------

    def episode_names(self) -> list[str]:
        return [e["name"] for e in self.meta["episodes"]]

    def episode_meta(self, name: str) -> dict:
        for entry in self.meta["episodes"]:
            if entry["name"] == name:
                return entry
        raise RunDirectoryError(f"run has no episode named {name!r}")

    def add_episode(self, *, material: MaterialParams, policy: str,
                    seed: int | None, trial_id: int,
                    theta, theta_dot, theta_ref, k_ref, frames,
                    flagged: bool = False) -> str:
        name = f"ep{len(self.meta['episodes']):03d}"
        data = EpisodeData(
            name=name, material=material, policy=policy, seed=seed,
            trial_id=trial_id,
            theta=np.asarray(theta, dtype=np.float64),
            theta_dot=np.asarray(theta_dot, dtype=np.float64),
            theta_ref=np.asarray(theta_ref, dtype=np.float64),
            k_ref=np.asarray(k_ref, dtype=np.float64).ravel(),
            frames=np.asarray(frames, dtype=np.uint8),
            flagged=flagged,
        )
        self._write_episode_files(data)
        self.meta["episodes"].append({
            "name": name,
            "material": {"c_damp": material.c_damp, "c_mass": material.c_mass},
            "policy": policy,
            "seed": seed,
            "trial_id": trial_id,
            "steps": len(data),
            "flagged": flagged,
        })
        self._write_meta()
        return name

    def _write_episode_files(self, data: EpisodeData) -> None:
        ep_dir = self.root / data.name
        frames_dir = ep_dir / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        with open(ep_dir / "steps.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(STEP_COLUMNS)
            for i in range(len(data)):
                writer.writerow([str(i)] + [
                    repr(float(v)) for v in (
                        data.theta[i, 0], data.theta[i, 1],
                        data.theta_dot[i, 0], data.theta_dot[i, 1],
                        data.theta_ref[i, 0], data.theta_ref[i, 1],
                        data.k_ref[i],
                    )
                ])
        for i in range(len(data)):
            write_pgm(frames_dir / f"f{i:06d}.pgm", data.frames[i])

    def read_episode(self, name: str) -> EpisodeData:
        entry = self.episode_meta(name)
        ep_dir = self.root / name
        csv_path = ep_dir / "steps.csv"
        if not csv_path.is_file():
            raise RunDirectoryError(f"episode {name} has no steps.csv")
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader, []))
            if header != STEP_COLUMNS:
                raise RunDirectoryError(
                    f"episode {name} has columns {header}, expected {STEP_COLUMNS}")
            rows = [[float(cell) for cell in row] for row in reader]
        if not rows:
            raise RunDirectoryError(f"episode {name} has no steps")
        arr = np.asarray(rows, dtype=np.float64)
        ticks = arr[:, 0].astype(int)
        if not np.array_equal(ticks, np.arange(len(rows))):
            raise RunDirectoryError(f"episode {name} ticks are not contiguous from 0")
        frame_paths = sorted((ep_dir / "frames").glob("f*.pgm"))
        if len(frame_paths) != len(rows):
            raise RunDirectoryError(
                f"episode {name} has {len(frame_paths)} frames for {len(rows)} steps")
        frames = np.stack([read_pgm(p) for p in frame_paths])
        material = MaterialParams(**entry["material"])
        return EpisodeData(
            name=name, material=material, policy=entry["policy"],
            seed=entry["seed"], trial_id=entry["trial_id"],
            theta=arr[:, 1:3], theta_dot=arr[:, 3:5],
            theta_ref=arr[:, 5:7], k_ref=arr[:, 7],
            frames=frames, flagged=entry.get("flagged", False),
        )

    def rewrite_episode(self, data: EpisodeData) -> None:
        """Re-serialize an episode in place (round-trip identity check hook)."""
        self.episode_meta(data.name)  # must already exist
        self._write_episode_files(data)

    # -- derived latent cache ---------------------------------------------

    def episode_latents(self, name: str, ae) -> np.ndarray:
        """(T, 3) latent codes for an episode, cached per encoder digest."""
        from ..perception import autoencoder_digest, encode_many

        digest = autoencoder_digest(ae)[:16]
        cache = self.root / "latents" / digest / f"{name}.npy"
        steps = self.episode_meta(name)["steps"]
        if cache.is_file():
            z = np.load(cache)
            if z.shape[0] == steps:
                return z
        data = self.read_episode(name)
        z = encode_many(ae, data.frames.astype(np.float64))
        cache.parent.mkdir(parents=True, exist_ok=True)
        np.save(cache, z)
        return z

    # -- bridge to model training -------------------------------------------

    def training_episode(self, name: str, ae):
        """Episode on disk -> the training sample type (latent, angles, rates)."""
        from ..dpmpb import Episode
        from ..sensorimotor import assemble_state

        data = self.read_episode(name)
        z = self.episode_latents(name, ae)
        states = np.stack([
            assemble_state(z[i], data.theta[i], data.theta_dot[i])
            for i in range(len(data))
        ])
        return Episode.from_arrays(data.material.tag, data.trial_id,
                                   states, data.commands)

    def training_episodes(self, ae, policies=None) -> list:
        """All episodes as training samples, optionally filtered by policy."""
        return [self.training_episode(n, ae) for n in self.episode_names()
                if policies is None or self.episode_meta(n)["policy"] in policies]
