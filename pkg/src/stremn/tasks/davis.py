"""DAVIS-style directory ingestion and export.

Layout::

    root/Frames/<video>/00000.png ...   RGB frames
    root/Masks/<video>/00000.png ...    integer label maps (first frame mandatory)
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import IngestionError
from .synthetic import SequenceSample

_NAME = re.compile(r"^(\d{5})\.png$")


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc


def _numbered(folder: Path) -> dict[int, Path]:
    out = {}
    for p in folder.iterdir():
        m = _NAME.match(p.name)
        if m:
            out[int(m.group(1))] = p
    return out


def load_davis_style(root_path) -> list[SequenceSample]:
    root = Path(root_path)
    frames_root, masks_root = root / "Frames", root / "Masks"
    if not frames_root.is_dir():
        raise IngestionError(f"{frames_root} is not a directory")
    samples = []
    for video_dir in sorted(p for p in frames_root.iterdir() if p.is_dir()):
        video = video_dir.name
        frame_files = _numbered(video_dir)
        if not frame_files:
            raise IngestionError(f"{video_dir} holds no NNNNN.png frames")
        numbers = sorted(frame_files)
        if numbers != list(range(numbers[0], numbers[0] + len(numbers))):
            gaps = sorted(set(range(numbers[0], numbers[-1] + 1)) - set(numbers))
            raise IngestionError(f"{video_dir}: non-contiguous frame numbering, missing {gaps[:5]}")
        mask_files = _numbered(masks_root / video) if (masks_root / video).is_dir() else {}
        if numbers[0] not in mask_files:
            raise IngestionError(f"{video}: missing ground-truth mask for first frame {numbers[0]:05d}")

        frames, raw_masks = [], []
        for n in numbers:
            img = _read_png(frame_files[n])
            if img.ndim == 2:
                img = np.repeat(img[..., None], 3, axis=2)
            img = img[..., :3]
            frames.append(img.transpose(2, 0, 1).astype(np.float32) / 255.0)
            if n in mask_files:
                m = _read_png(mask_files[n])
                if m.ndim == 3:
                    m = m[..., 0]
                if m.shape != img.shape[:2]:
                    raise IngestionError(f"{mask_files[n]}: mask size {m.shape} != frame size {img.shape[:2]}")
                raw_masks.append(m.astype(np.int64))
            else:
                raw_masks.append(None)

        present = [m for m in raw_masks if m is not None]
        labels = np.unique(np.concatenate([m.ravel() for m in present]))
        labels = labels[labels != 0]
        mapping = {0: 0, **{int(v): i + 1 for i, v in enumerate(labels)}}
        lut = np.zeros(int(max(mapping)) + 1, dtype=np.int64)
        for src, dst in mapping.items():
            lut[src] = dst
        masks = [lut[m] if m is not None else None for m in raw_masks]
        if all(m is not None for m in masks):
            masks = np.stack(masks)
        samples.append(
            SequenceSample(
                frames=np.stack(frames),
                masks=masks,
                n_objects=len(labels),
                metadata={"label_map": mapping, "first_frame": numbers[0], "source": str(video_dir)},
                name=video,
            )
        )
    return samples


def export_davis_style(samples: list[SequenceSample], root_path) -> None:
    root = Path(root_path)
    for s in samples:
        fdir = root / "Frames" / s.name
        mdir = root / "Masks" / s.name
        fdir.mkdir(parents=True, exist_ok=True)
        mdir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(s.frames):
            rgb = np.clip(np.rint(frame.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(rgb, mode="RGB").save(fdir / f"{t:05d}.png")
            if s.masks is not None and s.masks[t] is not None:
                Image.fromarray(np.asarray(s.masks[t], dtype=np.uint8), mode="L").save(mdir / f"{t:05d}.png")
