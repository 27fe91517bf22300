"""Dataset file format: one JSON object per line, UTF-8, LF endings.

Two record kinds:

  {"kind":"utterance_header","id":...,"label":<int>,"speaker_id":...,"n_frames":<int>}
  {"kind":"frame","utterance_id":...,"t_ms":...,"face":[H*W floats row-major],"pose":[54 floats]}

Frames follow their utterance header contiguously and in time order; the
header's frame count is validated on read, so a truncated file cannot
parse as a shorter-but-valid dataset.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .core import AddresseeClass, FaceCrop, FormatError, Frame, PoseKeypoints
from .synthgen import Utterance


def write_dataset(utterances: list[Utterance], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt in utterances:
            fh.write(json.dumps(
                {"kind": "utterance_header", "id": utt.id,
                 "label": int(utt.label), "speaker_id": utt.speaker_id,
                 "n_frames": utt.n_frames},
                separators=(",", ":")) + "\n")
            for fr in utt.frames:
                fh.write(json.dumps(
                    {"kind": "frame", "utterance_id": fr.utterance_id, "t_ms": fr.t_ms,
                     "face": fr.face.pixels.ravel().tolist(),
                     "pose": fr.pose.points.ravel().tolist()},
                    separators=(",", ":")) + "\n")


def _fail(lineno: int, msg: str):
    raise FormatError(f"line {lineno}: {msg}")


def read_dataset(path: str) -> list[Utterance]:
    """Parse a dataset file; raises FormatError with the offending line number."""
    utterances: list[Utterance] = []
    header = None
    frames: list[Frame] = []

    def close(lineno):
        nonlocal header, frames
        if header is not None:
            if not frames:
                _fail(lineno, f"utterance {header['id']} has no frames")
            if len(frames) != header["n_frames"]:
                _fail(lineno, f"utterance {header['id']} has {len(frames)} frames, "
                              f"header says {header['n_frames']}")
            utterances.append(Utterance(
                id=header["id"], label=AddresseeClass(header["label"]),
                frames=tuple(frames), speaker_id=header["speaker_id"]))
        header, frames = None, []

    with open(path, "r", encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                _fail(lineno, f"invalid JSON ({exc.msg})")
            kind = rec.get("kind")
            if kind == "utterance_header":
                close(lineno)
                try:
                    header = {"id": rec["id"], "label": int(rec["label"]),
                              "speaker_id": rec["speaker_id"],
                              "n_frames": int(rec["n_frames"])}
                    AddresseeClass(header["label"])
                except (KeyError, ValueError) as exc:
                    _fail(lineno, f"bad utterance_header: {exc}")
            elif kind == "frame":
                if header is None or rec.get("utterance_id") != header["id"]:
                    _fail(lineno, f"frame for {rec.get('utterance_id')!r} outside its utterance block")
                try:
                    face_flat = np.asarray(rec["face"], dtype=np.float64)
                    side = math.isqrt(face_flat.size)
                    if side * side != face_flat.size:
                        _fail(lineno, f"face length {face_flat.size} is not a perfect square")
                    pose_flat = np.asarray(rec["pose"], dtype=np.float64)
                    if pose_flat.size != 54:
                        _fail(lineno, f"pose length {pose_flat.size}, expected 54")
                    frames.append(Frame(
                        utterance_id=rec["utterance_id"], t_ms=int(rec["t_ms"]),
                        face=FaceCrop(face_flat.reshape(side, side)),
                        pose=PoseKeypoints(pose_flat.reshape(18, 3))))
                except FormatError:
                    raise
                except Exception as exc:
                    _fail(lineno, f"bad frame: {exc}")
            else:
                _fail(lineno, f"unknown record kind {kind!r}")
        close(lineno + 1)
    if not utterances:
        raise FormatError(f"{path}: dataset contains no utterances")
    return utterances


def resolve_dataset_path(data: str) -> Path:
    """Accept either a dataset file or a directory containing dataset.jsonl."""
    p = Path(data)
    if p.is_dir():
        candidate = p / "dataset.jsonl"
        if not candidate.exists():
            raise FileNotFoundError(f"no dataset.jsonl in directory {data}")
        return candidate
    if not p.exists():
        raise FileNotFoundError(f"dataset not found: {data}")
    return p
