"""Moving-shapes sequences with scheduled appearance switches and occlusions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError

SHAPES = ("circle", "square", "diamond")


@dataclass
class SyntheticConfig:
    canvas: int = 64
    n_objects: int = 2
    length: int = 40
    noise: float = 0.02
    # frames at which the target object switches appearance
    switch_frames: tuple[int, ...] = (15,)
    # (start, duration) intervals where a distractor covers part of the target
    occlusions: tuple[tuple[int, int], ...] = ((25, 5),)
    target: int = 1
    radius: tuple[int, int] = (7, 11)
    speed: tuple[float, float] = (1.0, 2.5)
    texture: bool = False
    randomize_schedule: bool = False

    def __post_init__(self):
        self.switch_frames = tuple(int(f) for f in self.switch_frames)
        self.occlusions = tuple((int(s), int(d)) for s, d in self.occlusions)
        self.validate()

    def validate(self) -> None:
        if self.canvas < 8 or self.length < 1 or self.n_objects < 1:
            raise ConfigError("canvas >= 8, length >= 1 and n_objects >= 1 required")
        if not 1 <= self.target <= self.n_objects:
            raise ConfigError(f"target object {self.target} outside 1..{self.n_objects}")
        for f in self.switch_frames:
            if not 0 <= f < self.length:
                raise ConfigError(f"appearance switch at frame {f} outside [0, {self.length})")
        for s, d in self.occlusions:
            if d < 1 or s < 0 or s + d > self.length:
                raise ConfigError(f"occlusion ({s}, {d}) outside [0, {self.length})")


@dataclass
class SequenceSample:
    frames: np.ndarray  # T×3×H×W float32 in [0, 1]
    masks: np.ndarray | None  # T×H×W int labels, or None
    n_objects: int
    metadata: dict = field(default_factory=dict)
    name: str = ""

    def __len__(self) -> int:
        return len(self.frames)


def _rasterize(kind: str, cy: float, cx: float, r: float, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    if kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "square":
        return (np.abs(yy - cy) <= r * 0.85) & (np.abs(xx - cx) <= r * 0.85)
    return np.abs(yy - cy) + np.abs(xx - cx) <= r * 1.2


def _new_color(rng: np.random.Generator, avoid: list[np.ndarray]) -> np.ndarray:
    for _ in range(100):
        c = rng.integers(30, 226, size=3)
        if all(np.abs(c.astype(int) - a.astype(int)).sum() > 180 for a in avoid):
            return c.astype(np.uint8)
    return rng.integers(30, 226, size=3).astype(np.uint8)


def gen_moving_shapes(config: SyntheticConfig, seed: int) -> SequenceSample:
    """Render one deterministic sequence for ``(config, seed)``.

    Frames are quantized to multiples of 1/255 so they survive PNG export
    bit-exactly. Masks hold the visible support of each object (later objects
    and occluders hide earlier ones).
    """
    config.validate()
    rng = np.random.default_rng(seed)
    size, T = config.canvas, config.length
    switches, occlusions = config.switch_frames, config.occlusions
    if config.randomize_schedule:
        switches = tuple(sorted(int(f) for f in rng.choice(np.arange(1, T), size=len(switches), replace=False)))
        occlusions = tuple(
            (int(rng.integers(1, max(2, T - d))), d) for _, d in occlusions
        )
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    background = _new_color(rng, [])
    objects = []
    palette = [background]
    for k in range(config.n_objects):
        r = float(rng.uniform(*config.radius))
        pos = rng.uniform(r + 1, size - r - 1, size=2)
        angle = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(*config.speed)
        color = _new_color(rng, palette)
        palette.append(color)
        objects.append(
            {"shape": SHAPES[k % len(SHAPES)], "r": r, "pos": pos, "vel": speed * np.array([np.sin(angle), np.cos(angle)]), "color": color}
        )
    switch_colors = {}
    for f in switches:
        c = _new_color(rng, palette)
        palette.append(c)
        switch_colors[f] = c
    occluder_color = _new_color(rng, palette)

    frames = np.empty((T, 3, size, size), dtype=np.float32)
    masks = np.zeros((T, size, size), dtype=np.int64)
    target_colors = []
    occluded_frames = {f for s, d in occlusions for f in range(s, s + d)}
    stripe = ((xx // 3) % 2).astype(bool)
    for t in range(T):
        if t in switch_colors:
            objects[config.target - 1]["color"] = switch_colors[t]
        img = np.empty((size, size, 3), dtype=np.float64)
        img[:] = background
        labels = np.zeros((size, size), dtype=np.int64)
        for k, ob in enumerate(objects, start=1):
            support = _rasterize(ob["shape"], ob["pos"][0], ob["pos"][1], ob["r"], yy, xx)
            color = ob["color"].astype(np.float64)
            img[support] = color
            if config.texture and k == config.target and t >= (min(switches) if switches else T):
                img[support & stripe] = 255 - color
            labels[support] = k
        if t in occluded_frames:
            tgt = objects[config.target - 1]
            cy, cx, r = tgt["pos"][0] + 0.5 * tgt["r"], tgt["pos"][1], tgt["r"]
            occ = (np.abs(yy - cy) <= 0.6 * r) & (np.abs(xx - cx) <= 1.2 * r)
            img[occ] = occluder_color
            labels[occ] = 0
        target_colors.append(objects[config.target - 1]["color"].copy())
        if config.noise > 0:
            img = img + rng.normal(0.0, config.noise * 255.0, size=img.shape)
        frames[t] = (np.clip(np.rint(img), 0, 255) / 255.0).transpose(2, 0, 1)
        masks[t] = labels
        for ob in objects:
            ob["pos"] = ob["pos"] + ob["vel"]
            for ax in range(2):
                lo, hi = ob["r"], size - 1 - ob["r"]
                if ob["pos"][ax] < lo:
                    ob["pos"][ax] = 2 * lo - ob["pos"][ax]
                    ob["vel"][ax] *= -1
                elif ob["pos"][ax] > hi:
                    ob["pos"][ax] = 2 * hi - ob["pos"][ax]
                    ob["vel"][ax] *= -1

    meta = {
        "seed": seed,
        "config": asdict(config),
        "switch_frames": list(switches),
        "occlusions": [list(o) for o in occlusions],
        "target_colors": [c.tolist() for c in target_colors],
    }
    return SequenceSample(frames, masks, config.n_objects, meta, name=f"synth_{seed:05d}")


def gen_dataset(config: SyntheticConfig, n: int, seed: int) -> list[SequenceSample]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    out = []
    for i, s in enumerate(seeds):
        sample = gen_moving_shapes(config, int(s))
        sample.name = f"seq{i:04d}"
        out.append(sample)
    return out
