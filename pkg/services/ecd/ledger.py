"""
Pulse schedules and the virtual phase ledger.

Channel/mode indices: 0 = ancilla, 1 = cavity 1, 2 = cavity 2.

An event of phase phi on mode m stands for the unitary exp(-i phi n_m) inserted
before sample `step`. It is never applied physically: every later drive sample on
that mode is multiplied by exp(+i L_m), L_m being the running sum of event phases
(the ledger), and the state simulated this way differs from the explicit-event
state by prod_m exp(-i L_m n_m) at the end.
"""

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from services.errors import InvalidArgumentError
from services.model import TWO_PI

SCHEDULE_FORMAT_VERSION = 1
EVENT_TAGS = ('self-Kerr', 'cross-Kerr', '2nd-disp', 'robust-linear', 'virtual-z')
CHANNELS = ('ancilla', 'cavity1', 'cavity2')


@dataclass(frozen=True)
class PhaseEvent:
    """Virtual phase exp(-i phase n_mode) before sample `step`."""
    step: int
    mode: int
    phase: float
    tag: str

    def __post_init__(self):
        if self.mode not in (0, 1, 2):
            raise InvalidArgumentError(f"event mode must be 0, 1 or 2, got {self.mode}")
        if self.tag not in EVENT_TAGS:
            raise InvalidArgumentError(f"unknown event tag {self.tag!r}")
        if not np.isfinite(self.phase):
            raise InvalidArgumentError(f"event phase must be finite, got {self.phase}")

    def to_dict(self) -> Dict[str, Any]:
        return {'step': self.step, 'mode': self.mode, 'phase': self.phase, 'tag': self.tag}


@dataclass(frozen=True)
class Segment:
    """Labelled sample window [start, stop) of one channel ('gauss', 'wait', 'echo', 'x90')."""
    label: str
    start: int
    stop: int
    mode: int
    index: int = 0


@dataclass(frozen=True)
class FragmentRecord:
    """Placement of one synthesized ECD fragment inside a schedule."""
    mode: int
    start: int
    params: Any


@dataclass(frozen=True, eq=False)
class PulseSchedule:
    """
    Raw drive samples plus the time-ordered event list.

    Attributes:
        cavity: Shape (2, K) cavity drives before ledger rotation (rad/s)
        ancilla: Shape (K,) ancilla drive before ledger rotation (rad/s)
        dt: Sample spacing (s)
        events: Events sorted by step (stable for equal steps)
        segments: Pulse windows used for phase bookkeeping
        fragments: ECD fragments in order of appearance
    """
    cavity: np.ndarray
    ancilla: np.ndarray
    dt: float
    events: Tuple[PhaseEvent, ...] = ()
    segments: Tuple[Segment, ...] = ()
    fragments: Tuple[FragmentRecord, ...] = ()

    def __post_init__(self):
        cavity = np.asarray(self.cavity, dtype=complex).reshape(2, -1)
        ancilla = np.asarray(self.ancilla, dtype=complex).reshape(-1)
        if cavity.shape[1] != ancilla.shape[0]:
            raise InvalidArgumentError("cavity and ancilla channels must have the same length")
        object.__setattr__(self, 'cavity', cavity)
        object.__setattr__(self, 'ancilla', ancilla)
        object.__setattr__(self, 'events', tuple(sorted(self.events, key=lambda e: e.step)))

    @classmethod
    def empty(cls, dt: float) -> "PulseSchedule":
        return cls(np.zeros((2, 0), dtype=complex), np.zeros(0, dtype=complex), dt)

    @property
    def n_steps(self) -> int:
        return self.ancilla.shape[0]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def events_for(self, mode: int, tag: Optional[str] = None) -> List[PhaseEvent]:
        return [e for e in self.events if e.mode == mode and (tag is None or e.tag == tag)]

    def ledger(self) -> np.ndarray:
        """Running ledger L_m[k] seen by sample k, shape (3, K)."""
        increments = np.zeros((3, self.n_steps + 1))
        for e in self.events:
            increments[e.mode, min(e.step, self.n_steps)] += e.phase
        return np.cumsum(increments, axis=1)[:, :self.n_steps]

    def final_ledger(self) -> np.ndarray:
        """Phi_acc per mode after the whole schedule."""
        out = np.zeros(3)
        for e in self.events:
            out[e.mode] += e.phase
        return out

    def physical_drives(self) -> Tuple[np.ndarray, np.ndarray]:
        """(cavity, ancilla) samples with the ledger folded into their phases."""
        rot = np.exp(1j * self.ledger())
        return self.cavity * rot[1:], self.ancilla * rot[0]

    def with_events(self, events: Iterable[PhaseEvent]) -> "PulseSchedule":
        added = [e for e in events if e.phase != 0.0]
        if not added:
            return self
        return replace(self, events=self.events + tuple(added))

    def append(self, other: "PulseSchedule") -> "PulseSchedule":
        """Concatenate `other` after this schedule, shifting its steps."""
        if abs(other.dt - self.dt) > 1e-15 * max(self.dt, other.dt):
            raise InvalidArgumentError(f"cannot join schedules with dt {self.dt} and {other.dt}")
        shift = self.n_steps
        return PulseSchedule(
            cavity=np.concatenate([self.cavity, other.cavity], axis=1),
            ancilla=np.concatenate([self.ancilla, other.ancilla]),
            dt=self.dt,
            events=self.events + tuple(replace(e, step=e.step + shift) for e in other.events),
            segments=self.segments + tuple(replace(s, start=s.start + shift, stop=s.stop + shift) for s in other.segments),
            fragments=self.fragments + tuple(replace(f, start=f.start + shift) for f in other.fragments),
        )

    def to_files(self, directory: Union[str, Path]) -> List[Path]:
        """
        Write one CSV per channel (t_s, re_hz, im_hz; raw drive / 2 pi) and events.json.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        t = np.arange(self.n_steps) * self.dt
        written = []
        for name, values in zip(CHANNELS, (self.ancilla, self.cavity[0], self.cavity[1])):
            path = directory / f'{name}.csv'
            pd.DataFrame({'t_s': t, 're_hz': values.real / TWO_PI, 'im_hz': values.imag / TWO_PI}).to_csv(
                path, index=False, float_format='%.17g')
            written.append(path)
        payload = {
            'format_version': SCHEDULE_FORMAT_VERSION,
            'dt': self.dt,
            'n_steps': self.n_steps,
            'events': [e.to_dict() for e in self.events],
            'segments': [{'label': s.label, 'start': s.start, 'stop': s.stop, 'mode': s.mode, 'index': s.index}
                         for s in self.segments],
            'final_ledger': self.final_ledger().tolist(),
        }
        path = directory / 'events.json'
        path.write_text(json.dumps(payload, indent=2))
        written.append(path)
        return written

    @classmethod
    def from_files(cls, directory: Union[str, Path]) -> "PulseSchedule":
        directory = Path(directory)
        payload = json.loads((directory / 'events.json').read_text())
        if payload.get('format_version') != SCHEDULE_FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported schedule format_version {payload.get('format_version')!r}")
        channels = []
        for name in CHANNELS:
            frame = pd.read_csv(directory / f'{name}.csv', float_precision='round_trip')
            channels.append((frame['re_hz'].to_numpy() + 1j * frame['im_hz'].to_numpy()) * TWO_PI)
        return cls(
            cavity=np.vstack([channels[1], channels[2]]),
            ancilla=channels[0],
            dt=payload['dt'],
            events=tuple(PhaseEvent(**e) for e in payload['events']),
            segments=tuple(Segment(**s) for s in payload.get('segments', [])),
        )


def ancilla_pulse(envelope: np.ndarray, dt: float, label: str, index: int = 0) -> PulseSchedule:
    """Schedule holding one ancilla pulse with idle cavities."""
    samples = np.asarray(envelope, dtype=complex)
    n = len(samples)
    return PulseSchedule(np.zeros((2, n), dtype=complex), samples, dt,
                         segments=(Segment(label, 0, n, 0, index),))


def virtual_z(angle: float, step: int = 0) -> PhaseEvent:
    """Ancilla Z(angle) = exp(-i angle sigma_z / 2) as a ledger event (global phase dropped)."""
    return PhaseEvent(step=step, mode=0, phase=-angle, tag='virtual-z')


__all__ = [
    'PhaseEvent', 'Segment', 'FragmentRecord', 'PulseSchedule', 'ancilla_pulse', 'virtual_z',
    'EVENT_TAGS', 'SCHEDULE_FORMAT_VERSION',
]
