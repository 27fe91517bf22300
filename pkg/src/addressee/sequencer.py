"""Windowing of per-frame streams into fixed 10-frame model inputs.

Two modes with identical results: batch (`window_utterance`) partitions a
whole utterance at once; streaming (`StreamState.push_frame` / `flush`)
emits the same sequences incrementally as frames arrive.

Windows never overlap. An utterance with 10 or more frames yields
floor(n/10) sequences and drops the remainder; a shorter one yields one
sequence padded by repeating its last frame (with timestamps continuing at
the 80 ms step), so every utterance produces at least one estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .core import FRAME_PERIOD_MS, Frame, InvalidInputError, SequencingError
from .synthgen import Utterance

SEQUENCE_LEN = 10


@dataclass(frozen=True)
class Sequence:
    """Exactly 10 consecutive frames from one utterance."""

    utterance_id: str
    index: int
    frames: tuple[Frame, ...]
    padded: bool = False

    def __post_init__(self):
        if len(self.frames) != SEQUENCE_LEN:
            raise InvalidInputError(f"sequence needs {SEQUENCE_LEN} frames, got {len(self.frames)}")
        t0 = self.frames[0].t_ms
        for k, fr in enumerate(self.frames):
            if fr.utterance_id != self.utterance_id:
                raise InvalidInputError("sequence frames must share one utterance id")
            if fr.t_ms != t0 + k * FRAME_PERIOD_MS:
                raise InvalidInputError("sequence frames must be consecutive 80 ms steps")
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def t_start_ms(self) -> int:
        return self.frames[0].t_ms

    @property
    def t_end_ms(self) -> int:
        return self.frames[-1].t_ms


def _pad_sequence(utterance_id: str, index: int, frames: list[Frame]) -> Sequence:
    last = frames[-1]
    padding = [replace(last, t_ms=last.t_ms + (k + 1) * FRAME_PERIOD_MS)
               for k in range(SEQUENCE_LEN - len(frames))]
    return Sequence(utterance_id=utterance_id, index=index,
                    frames=tuple(frames) + tuple(padding), padded=True)


def window_utterance(utt: Utterance) -> list[Sequence]:
    """Partition an utterance into its model input sequences (batch mode)."""
    n = utt.n_frames
    if n == 0:
        raise InvalidInputError("cannot window an empty utterance")
    if n < SEQUENCE_LEN:
        return [_pad_sequence(utt.id, 0, list(utt.frames))]
    return [Sequence(utterance_id=utt.id, index=i,
                     frames=utt.frames[i * SEQUENCE_LEN:(i + 1) * SEQUENCE_LEN])
            for i in range(n // SEQUENCE_LEN)]


@dataclass
class StreamState:
    """Streaming sequencer for a single tracked speaker.

    Single-owner mutable state: feed frames of the current utterance with
    `push_frame`, then `flush` at utterance end. Flush resets the state so
    the instance can be reused for the next utterance.
    """

    utterance_id: str | None = None
    buffer: list[Frame] = field(default_factory=list)
    emitted: int = 0

    def push_frame(self, frame: Frame) -> Sequence | None:
        """Buffer one frame; returns a Sequence exactly on the 10th."""
        if self.utterance_id is None:
            self.utterance_id = frame.utterance_id
        elif frame.utterance_id != self.utterance_id:
            raise SequencingError(
                f"frame from {frame.utterance_id!r} pushed while {self.utterance_id!r} is open")
        self.buffer.append(frame)
        if len(self.buffer) < SEQUENCE_LEN:
            return None
        seq = Sequence(utterance_id=self.utterance_id, index=self.emitted,
                       frames=tuple(self.buffer))
        self.buffer.clear()
        self.emitted += 1
        return seq

    def flush(self) -> Sequence | None:
        """Close the current utterance.

        Emits one padded sequence if nothing was emitted yet (so every
        utterance yields at least one estimate); otherwise drops the
        remainder, mirroring the batch rule. Resets the state either way.
        """
        seq = None
        if self.buffer and self.emitted == 0:
            seq = _pad_sequence(self.utterance_id, 0, self.buffer)
        self.utterance_id = None
        self.buffer = []
        self.emitted = 0
        return seq
