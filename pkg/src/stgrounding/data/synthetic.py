"""Procedural moving-shapes corpus for spatio-temporal grounding.

Each video shows 2-4 coloured shapes, each visible only during its own active
interval. One of them (the target) is described by a templated query; the
tube to recover is its exact pixel bounding box while it is visible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..backbones import Vocabulary
from .media import AnnotationRecord, write_annotation, write_frames

SHAPES = ("square", "circle", "triangle")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
MOTIONS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1), "still": (0, 0)}


class GenerationError(ValueError):
    pass


@dataclass
class SceneParams:
    T: int = 16
    height: int = 32
    width: int = 32
    min_size: int = 8
    max_size: int = 11
    min_actors: int = 2
    max_actors: int = 4
    min_length: int = 3
    speed: int = 1
    T_max: int = 200
    fps: float = 5.0

    def validate(self) -> None:
        if self.max_size > min(self.height, self.width) or self.min_size < 2:
            raise GenerationError(
                f"canvas {self.height}x{self.width} too small for shapes of size up to {self.max_size}"
            )
        if self.min_size > self.max_size:
            raise GenerationError("min_size exceeds max_size")
        if not 1 <= self.min_length <= self.T:
            raise GenerationError(f"min_length {self.min_length} incompatible with T={self.T}")
        if self.T_max < 2:
            raise GenerationError("T_max must be >= 2")
        if not 1 <= self.min_actors <= self.max_actors:
            raise GenerationError("actor count range is empty")


@dataclass
class Actor:
    shape: str
    color: str
    motion: str
    size: int
    t_start: int
    t_end: int
    x: int  # top-left column at t_start
    y: int  # top-left row at t_start

    def triple(self) -> tuple[str, str, str]:
        return (self.shape, self.color, self.motion)

    def origin(self, t: int, speed: int) -> tuple[int, int]:
        dx, dy = MOTIONS[self.motion]
        step = (t - self.t_start) * speed
        return self.x + dx * step, self.y + dy * step


@dataclass
class SyntheticScene:
    seed: int
    index: int
    T: int
    height: int
    width: int
    actors: list[Actor]
    target_index: int
    speed: int = 1

    @property
    def target(self) -> Actor:
        return self.actors[self.target_index]

    def query(self) -> str:
        return describe(self.target)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticScene":
        obj = dict(obj)
        obj["actors"] = [Actor(**a) for a in obj["actors"]]
        return cls(**obj)


def describe(actor: Actor) -> str:
    if actor.motion == "still":
        return f"the {actor.color} {actor.shape} standing still"
    return f"the {actor.color} {actor.shape} moving {actor.motion}"


def query_vocabulary() -> Vocabulary:
    words = ["the", "moving", "standing", "still", *COLORS, *SHAPES, *MOTIONS]
    return Vocabulary(words)


def shape_mask(shape: str, size: int) -> np.ndarray:
    i, j = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        return (i - c) ** 2 + (j - c) ** 2 <= (size / 2.0) ** 2
    if shape == "triangle":
        half = (i + 1) / size * (size / 2.0)
        return np.abs(j - c) <= half
    raise GenerationError(f"unknown shape {shape!r}")


def _sample_interval(rng, T: int, min_len: int, max_len: int) -> tuple[int, int]:
    length = int(rng.integers(min_len, max_len + 1))
    start = int(rng.integers(0, T - length + 1))
    return start, start + length - 1


def _sample_actor(rng, params: SceneParams, triple, T: int) -> Actor:
    shape, color, motion = triple
    size = int(rng.integers(params.min_size, params.max_size + 1))
    dx, dy = MOTIONS[motion]
    room_x = params.width - size
    room_y = params.height - size
    limit = T
    if dx:
        limit = min(limit, room_x // params.speed + 1)
    if dy:
        limit = min(limit, room_y // params.speed + 1)
    min_len = min(params.min_length, limit)
    t0, t1 = _sample_interval(rng, T, min_len, limit)
    travel = (t1 - t0) * params.speed
    lo_x, hi_x = (0, room_x) if not dx else ((0, room_x - travel) if dx > 0 else (travel, room_x))
    lo_y, hi_y = (0, room_y) if not dy else ((0, room_y - travel) if dy > 0 else (travel, room_y))
    x = int(rng.integers(lo_x, hi_x + 1))
    y = int(rng.integers(lo_y, hi_y + 1))
    return Actor(shape, color, motion, size, t0, t1, x, y)


def _random_triple(rng):
    return (SHAPES[rng.integers(len(SHAPES))], list(COLORS)[rng.integers(len(COLORS))],
            list(MOTIONS)[rng.integers(len(MOTIONS))])


def sample_scene(seed: int, index: int, params: SceneParams, T: int | None = None) -> SyntheticScene:
    params.validate()
    T = params.T if T is None else T
    rng = np.random.default_rng([seed, index])
    n = int(rng.integers(params.min_actors, params.max_actors + 1))
    target_triple = _random_triple(rng)
    actors = [_sample_actor(rng, params, target_triple, T)]
    while len(actors) < n:
        triple = _random_triple(rng)
        if triple == target_triple:
            continue
        actors.append(_sample_actor(rng, params, triple, T))
    # the target is drawn last so it is never occluded
    order = list(rng.permutation(n - 1) + 1) + [0]
    actors = [actors[i] for i in order]
    return SyntheticScene(seed, index, T, params.height, params.width, actors, n - 1, params.speed)


def render(scene: SyntheticScene) -> np.ndarray:
    """Pixels ``[T, 3, H, W]`` in float32; a pure function of the scene record."""
    frames = np.zeros((scene.T, 3, scene.height, scene.width), dtype=np.float32)
    for actor in scene.actors:
        mask = shape_mask(actor.shape, actor.size)
        color = np.asarray(COLORS[actor.color], dtype=np.float32)[:, None, None]
        for t in range(actor.t_start, actor.t_end + 1):
            x, y = actor.origin(t, scene.speed)
            region = frames[t, :, y:y + actor.size, x:x + actor.size]
            region[:] = np.where(mask[None], color, region)
    return frames


def actor_boxes(scene: SyntheticScene, actor: Actor) -> np.ndarray:
    """Exact pixel bounding boxes (cx, cy, w, h), normalized, over the active interval."""
    mask = shape_mask(actor.shape, actor.size)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    out = []
    for t in range(actor.t_start, actor.t_end + 1):
        x, y = actor.origin(t, scene.speed)
        x0, x1 = x + cols[0], x + cols[-1] + 1
        y0, y1 = y + rows[0], y + rows[-1] + 1
        out.append([(x0 + x1) / 2 / scene.width, (y0 + y1) / 2 / scene.height,
                    (x1 - x0) / scene.width, (y1 - y0) / scene.height])
    return np.asarray(out, dtype=np.float64)


def subsample_indices(T_raw: int, T_max: int) -> np.ndarray:
    """Evenly spaced frame indices; identity when ``T_raw <= T_max``."""
    if T_raw <= T_max:
        return np.arange(T_raw)
    return np.rint(np.linspace(0, T_raw - 1, T_max)).astype(np.int64)


def remap_interval(selected: np.ndarray, t_s: int, t_e: int) -> tuple[int, int]:
    """Nearest selected positions for the original boundaries, kept ordered."""
    new_s = int(np.argmin(np.abs(selected - t_s)))
    new_e = int(np.argmin(np.abs(selected - t_e)))
    return new_s, max(new_s, new_e)


def make_sample(seed: int, index: int, params: SceneParams,
                T_raw: int | None = None) -> tuple[np.ndarray, AnnotationRecord]:
    scene = sample_scene(seed, index, params, T_raw)
    frames = render(scene)
    target = scene.target
    boxes = actor_boxes(scene, target)
    t_s, t_e = target.t_start, target.t_end
    selected = subsample_indices(scene.T, params.T_max)
    if len(selected) < scene.T:
        frames = frames[selected]
        new_s, new_e = remap_interval(selected, t_s, t_e)
        src = np.clip(selected[new_s:new_e + 1], t_s, t_e) - t_s
        boxes = boxes[src]
        t_s, t_e = new_s, new_e
    record = AnnotationRecord(
        video_id=f"v{seed}_{index:05d}",
        T=len(frames),
        query=scene.query(),
        t_s=t_s,
        t_e=t_e,
        boxes=boxes,
        seed=seed,
        renderer={"index": index, "params": asdict(params), "scene": scene.to_json(),
                  "selected_frames": [int(i) for i in selected]},
    )
    return frames, record


@dataclass
class DatasetIndex:
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    seed: int = 0
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def split_sizes(n: int) -> tuple[int, int]:
    n_train = int(round(0.8 * n))
    return n_train, n - n_train


def generate_synthetic_dataset(out_dir, n_videos: int, seed: int,
                               params: SceneParams | None = None,
                               T_raw: int | None = None) -> DatasetIndex:
    """Write frames, annotations, vocabulary and a split index under ``out_dir``."""
    if n_videos < 1:
        raise GenerationError("n_videos must be >= 1")
    params = params or SceneParams()
    params.validate()
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    n_train, _ = split_sizes(n_videos)
    index = DatasetIndex(seed=seed, params=asdict(params))
    for i in range(n_videos):
        frames, record = make_sample(seed, i, params, T_raw)
        write_frames(out / "videos" / f"{record.video_id}.vtfr", frames)
        write_annotation(out / "annotations" / f"{record.video_id}.json", record)
        (index.train if i < n_train else index.val).append(record.video_id)
    query_vocabulary().save(out / "vocab.json")
    (out / "index.json").write_text(json.dumps(index.to_json(), indent=1) + "\n")
    return index
