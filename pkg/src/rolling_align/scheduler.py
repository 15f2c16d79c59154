"""Dilated rolling kernel: snippet index sets and per-frame coverage."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

from .errors import InvalidSchedule

DEFAULT_SNIPPET_LEN = 3
DEFAULT_DILATIONS = (1, 10, 25)
DEFAULT_STRIDE = 1


@dataclass(frozen=True)
class SnippetSpec:
    snippet_id: int
    frame_indices: tuple[int, ...]
    dilation: int
    stride: int

    @property
    def n(self) -> int:
        return len(self.frame_indices)


@dataclass(frozen=True)
class SnippetSchedule:
    """Snippets of a video plus the inverse map from frames to snippet slots.

    ``coverage[i]`` lists ``(snippet_id, slot)`` pairs for every snippet that
    contains frame ``i``, ordered by snippet id.
    """

    n_frames: int
    snippet_len: int
    stride: int
    dilations: tuple[int, ...]
    snippets: tuple[SnippetSpec, ...]
    coverage: tuple[tuple[tuple[int, int], ...], ...]
    skipped_dilations: tuple[int, ...] = field(default=())

    @property
    def n_snippets(self) -> int:
        return len(self.snippets)

    def frame_coverage_counts(self) -> list[int]:
        return [len(c) for c in self.coverage]

    @property
    def uncovered_frames(self) -> list[int]:
        # strided schedules can skip frames between anchors
        return [i for i, c in enumerate(self.coverage) if not c]

    def require_full_coverage(self) -> None:
        holes = self.uncovered_frames
        if holes:
            raise InvalidSchedule(
                f"{len(holes)} frame(s) not covered by any snippet, e.g. {holes[:10]}"
            )

    def to_dict(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "snippet_len": self.snippet_len,
            "stride": self.stride,
            "dilations": list(self.dilations),
            "skipped_dilations": list(self.skipped_dilations),
            "n_snippets": self.n_snippets,
            "snippets": [
                {
                    "snippet_id": s.snippet_id,
                    "dilation": s.dilation,
                    "stride": s.stride,
                    "frame_indices": list(s.frame_indices),
                }
                for s in self.snippets
            ],
            "coverage": [[list(pair) for pair in c] for c in self.coverage],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "SnippetSchedule":
        snippets = tuple(
            SnippetSpec(
                int(s["snippet_id"]),
                tuple(int(i) for i in s["frame_indices"]),
                int(s["dilation"]),
                int(s["stride"]),
            )
            for s in data["snippets"]
        )
        n_frames = int(data["n_frames"])
        coverage = _coverage(snippets, n_frames)
        stored = data.get("coverage")
        if stored is not None:
            as_tuples = tuple(tuple((int(k), int(j)) for k, j in c) for c in stored)
            if as_tuples != coverage:
                raise InvalidSchedule("stored coverage does not match snippet frame indices")
        sched = cls(
            n_frames=n_frames,
            snippet_len=int(data["snippet_len"]),
            stride=int(data["stride"]),
            dilations=tuple(int(g) for g in data["dilations"]),
            snippets=snippets,
            coverage=coverage,
            skipped_dilations=tuple(int(g) for g in data.get("skipped_dilations", ())),
        )
        _validate(sched)
        return sched

    @classmethod
    def from_json(cls, text: str) -> "SnippetSchedule":
        return cls.from_dict(json.loads(text))


def _coverage(snippets: Iterable[SnippetSpec], n_frames: int):
    cov: list[list[tuple[int, int]]] = [[] for _ in range(n_frames)]
    for spec in snippets:
        for slot, i in enumerate(spec.frame_indices):
            if not 0 <= i < n_frames:
                raise InvalidSchedule(f"snippet {spec.snippet_id} references frame {i}")
            cov[i].append((spec.snippet_id, slot))
    return tuple(tuple(c) for c in cov)


def _validate(sched: SnippetSchedule) -> None:
    ids = [s.snippet_id for s in sched.snippets]
    if ids != list(range(len(ids))):
        raise InvalidSchedule("snippet ids must be dense 0..N_T-1 in order")
    for s in sched.snippets:
        idx = s.frame_indices
        if any(b - a != s.dilation for a, b in zip(idx, idx[1:])):
            raise InvalidSchedule(f"snippet {s.snippet_id} is not evenly spaced by {s.dilation}")


def _anchors(n_frames: int, n: int, g: int, h: int) -> list[int]:
    span = (n - 1) * g
    last = n_frames - 1 - span
    anchors = list(range(0, last + 1, h))
    if anchors and anchors[-1] != last:
        anchors.append(last)
    return anchors


def build_schedule(
    n_frames: int,
    n: int = DEFAULT_SNIPPET_LEN,
    dilations: Iterable[int] = DEFAULT_DILATIONS,
    stride: int = DEFAULT_STRIDE,
) -> SnippetSchedule:
    """Enumerate snippets ``{a, a+g, ..., a+(n-1)g}`` for every dilation ``g``.

    Anchors run ``0, h, 2h, ...`` while the snippet fits. If the last anchor
    leaves trailing frames uncovered, one extra snippet ending exactly on the
    last frame is appended. Dilations too long for the video are skipped and
    listed in ``skipped_dilations``.
    """
    if n_frames < 1:
        raise InvalidSchedule("video must have at least one frame")
    if n < 1:
        raise InvalidSchedule("snippet length must be >= 1")
    if stride < 1:
        raise InvalidSchedule("stride must be >= 1")
    dilations = tuple(dict.fromkeys(int(g) for g in dilations))
    if not dilations or any(g < 1 for g in dilations):
        raise InvalidSchedule(f"dilations must be positive integers, got {dilations}")

    specs: list[SnippetSpec] = []
    skipped: list[int] = []
    for g in dilations:
        if (n - 1) * g > n_frames - 1:
            skipped.append(g)
            continue
        for a in _anchors(n_frames, n, g, stride):
            idx = tuple(a + j * g for j in range(n))
            specs.append(SnippetSpec(len(specs), idx, g, stride))
    if not specs:
        raise InvalidSchedule(
            f"no snippet of length {n} with dilations {list(dilations)} fits in {n_frames} frames"
        )

    sched = SnippetSchedule(
        n_frames=n_frames,
        snippet_len=n,
        stride=stride,
        dilations=dilations,
        snippets=tuple(specs),
        coverage=_coverage(specs, n_frames),
        skipped_dilations=tuple(skipped),
    )
    _validate(sched)
    return sched


def load_schedule(path) -> SnippetSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        return SnippetSchedule.from_json(fh.read())


def save_schedule(schedule: SnippetSchedule, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schedule.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
