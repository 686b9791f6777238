"""Trajectory datasets: file ingestion, window extraction, standardization,
and a synthetic multi-branch scenario generator.

Two text formats are supported (documented in the README):

* BEV scene file: one observation per line, four whitespace-separated
  fields ``frame agent_id x y``; frame is an integer, x/y are meters.
* FPV track file: one observation per line, six whitespace-separated
  fields ``frame agent_id x y w h``; the box is in pixels, top-left
  anchored.

All loaders group observations into per-agent tracks sorted by frame.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError


@dataclass
class AgentTrack:
    """Per-agent sequence of frame indices and D-dimensional states."""

    agent_id: str
    frames: np.ndarray  # (T,) int64, strictly increasing
    states: np.ndarray  # (T, D) float64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.frames.shape[0] != self.states.shape[0]:
            raise DataError(
                f"track {self.agent_id!r}: {self.frames.shape[0]} frames but "
                f"{self.states.shape[0]} states"
            )
        if self.frames.size > 1 and not np.all(np.diff(self.frames) > 0):
            raise DataError(f"track {self.agent_id!r}: frames not strictly increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AgentTrack)
            and self.agent_id == other.agent_id
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.states, other.states)
            and self.meta == other.meta
        )


@dataclass
class Scene:
    """A recording: shared frame rate plus a list of agent tracks."""

    id: str
    dt: float
    tracks: list[AgentTrack] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise DataError(f"scene {self.id!r}: dt must be positive, got {self.dt}")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Scene)
            and self.id == other.id
            and self.dt == other.dt
            and self.tracks == other.tracks
            and self.meta == other.meta
        )


@dataclass
class TrajectoryWindow:
    """One sample: observed past, ground-truth future, and the future endpoint.

    ``origin`` is the state at the current time (last row of ``past``);
    ``goal`` always equals the last row of ``future``.  ``t`` is the frame
    index of the current time, kept for provenance.
    """

    past: np.ndarray    # (obs_len, D)
    future: np.ndarray  # (pred_len, D)
    scene_id: str = ""
    agent_id: str = ""
    t: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.past = np.asarray(self.past, dtype=np.float64)
        self.future = np.asarray(self.future, dtype=np.float64)
        if self.past.ndim != 2 or self.future.ndim != 2:
            raise DataError("past and future must be 2-D arrays")
        if self.past.shape[0] < 1 or self.future.shape[0] < 1:
            raise DataError("past and future must each contain at least one step")
        if self.past.shape[1] != self.future.shape[1]:
            raise DataError("past and future must share the state dimension")

    @property
    def origin(self) -> np.ndarray:
        return self.past[-1]

    @property
    def goal(self) -> np.ndarray:
        return self.future[-1]

    @property
    def dim(self) -> int:
        return self.past.shape[1]

    @property
    def obs_len(self) -> int:
        return self.past.shape[0]

    @property
    def pred_len(self) -> int:
        return self.future.shape[0]

    @property
    def window_id(self) -> str:
        return f"{self.scene_id}/{self.agent_id}/{self.t}"

    def replace(self, **kw) -> "TrajectoryWindow":
        return dataclasses.replace(self, **kw)


@dataclass
class Standardizer:
    """Per-dimension affine map x -> (x - shift) / scale with positive scale."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if np.any(self.scale <= 0):
            raise DataError("standardizer scale must be strictly positive")

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.shift

    def apply(self, window: TrajectoryWindow) -> TrajectoryWindow:
        return window.replace(past=self.transform(window.past),
                              future=self.transform(window.future))

    def invert(self, window: TrajectoryWindow) -> TrajectoryWindow:
        return window.replace(past=self.inverse(window.past),
                              future=self.inverse(window.future))

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["shift"]), np.array(d["scale"]))


SCALE_FLOOR = 1e-6


def fit_standardizer(windows: list[TrajectoryWindow]) -> Standardizer:
    """Per-dimension mean/std over all past and future states of the windows.

    The std is floored at 1e-6 so constant dimensions stay invertible.
    """
    if not windows:
        raise DataError("cannot fit a standardizer on an empty window list")
    pts = np.concatenate([np.concatenate([w.past, w.future], axis=0) for w in windows])
    shift = pts.mean(axis=0)
    scale = np.maximum(pts.std(axis=0), SCALE_FLOOR)
    return Standardizer(shift, scale)


def _parse_float(token: str, path: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: not a number: {token!r}") from None


def _parse_frame(token: str, path: str, lineno: int) -> int:
    value = _parse_float(token, path, lineno)
    if value != int(value):
        raise ParseError(f"{path}:{lineno}: frame index must be an integer, got {token!r}")
    return int(value)


def _group_tracks(rows: list[tuple[int, str, np.ndarray]], path: str) -> list[AgentTrack]:
    """Group (frame, agent_id, state) rows into frame-sorted tracks.

    Tracks are ordered by agent id so loading is independent of row order;
    duplicate frames within an agent are a data error.
    """
    by_agent: dict[str, list[tuple[int, np.ndarray]]] = {}
    for frame, agent_id, state in rows:
        by_agent.setdefault(agent_id, []).append((frame, state))
    tracks = []
    for agent_id in sorted(by_agent):
        items = sorted(by_agent[agent_id], key=lambda it: it[0])
        frames = np.array([f for f, _ in items], dtype=np.int64)
        if frames.size > 1 and np.any(np.diff(frames) == 0):
            dup = int(frames[np.where(np.diff(frames) == 0)[0][0]])
            raise DataError(f"{path}: agent {agent_id!r} has duplicate frame {dup}")
        states = np.stack([s for _, s in items])
        tracks.append(AgentTrack(agent_id, frames, states))
    return tracks


def load_bev_scene(path: str, dt: float, scene_id: str | None = None) -> Scene:
    """Load a bird's-eye-view scene file (``frame agent_id x y`` per line)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(tokens)}")
            frame = _parse_frame(tokens[0], path, lineno)
            xy = np.array([_parse_float(t, path, lineno) for t in tokens[2:4]])
            rows.append((frame, tokens[1], xy))
    if scene_id is None:
        scene_id = _stem(path)
    return Scene(scene_id, dt, _group_tracks(rows, path))


def save_bev_scene(scene: Scene, path: str) -> None:
    """Write a scene back to the BEV text format (exact float round-trip)."""
    with open(path, "w", encoding="utf-8") as fh:
        for track in scene.tracks:
            if track.dim != 2:
                raise DataError(f"track {track.agent_id!r} is {track.dim}-D, BEV format needs 2-D")
            for frame, state in zip(track.frames, track.states):
                fh.write(f"{int(frame)} {track.agent_id} "
                         f"{float(state[0])!r} {float(state[1])!r}\n")


def load_fpv_tracks(path: str, dt: float, scene_id: str | None = None) -> Scene:
    """Load a first-person-view track file (``frame agent_id x y w h`` per line)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 6:
                raise ParseError(
                    f"{path}:{lineno}: expected 6 fields (frame id x y w h), got {len(tokens)}"
                )
            frame = _parse_frame(tokens[0], path, lineno)
            box = np.array([_parse_float(t, path, lineno) for t in tokens[2:6]])
            if box[2] < 0 or box[3] < 0:
                raise DataError(f"{path}:{lineno}: negative box size w={box[2]} h={box[3]}")
            rows.append((frame, tokens[1], box))
    if scene_id is None:
        scene_id = _stem(path)
    return Scene(scene_id, dt, _group_tracks(rows, path))


def save_fpv_tracks(scene: Scene, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for track in scene.tracks:
            if track.dim != 4:
                raise DataError(f"track {track.agent_id!r} is {track.dim}-D, FPV format needs 4-D")
            for frame, state in zip(track.frames, track.states):
                fields = " ".join(repr(float(v)) for v in state)
                fh.write(f"{int(frame)} {track.agent_id} {fields}\n")


def _stem(path: str) -> str:
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return name.rsplit(".", 1)[0] if "." in name else name


def _contiguous_runs(frames: np.ndarray) -> list[slice]:
    """Split a frame array into runs sampled at the track's native step.

    The native step is the smallest positive frame delta in the track, so a
    track annotated every 10 frames windows normally while a missing frame
    splits the track into separate runs.
    """
    n = frames.shape[0]
    if n <= 1:
        return [slice(0, n)]
    deltas = np.diff(frames)
    step = int(deltas.min())
    runs = []
    start = 0
    for i, d in enumerate(deltas):
        if d != step:
            runs.append(slice(start, i + 1))
            start = i + 1
    runs.append(slice(start, n))
    return runs


def make_windows(scene: Scene, obs_len: int, pred_len: int,
                 stride: int = 1) -> list[TrajectoryWindow]:
    """Slide a window of obs_len+pred_len consecutive frames over every track.

    Start indices step by ``stride`` within each contiguous run; runs shorter
    than the window yield nothing.  A gap-free track of length L therefore
    yields floor((L - obs_len - pred_len) / stride) + 1 windows.
    """
    if obs_len < 1 or pred_len < 1 or stride < 1:
        raise ConfigError("obs_len, pred_len and stride must all be >= 1")
    total = obs_len + pred_len
    windows = []
    for track in scene.tracks:
        for run in _contiguous_runs(track.frames):
            frames = track.frames[run]
            states = track.states[run]
            length = frames.shape[0]
            for start in range(0, length - total + 1, stride):
                past = states[start:start + obs_len]
                future = states[start + obs_len:start + total]
                windows.append(TrajectoryWindow(
                    past=past.copy(),
                    future=future.copy(),
                    scene_id=scene.id,
                    agent_id=track.agent_id,
                    t=int(frames[start + obs_len - 1]),
                    meta=dict(track.meta),
                ))
    return windows


def _branch_directions(n_branches: int) -> np.ndarray:
    """Heading offsets (radians) for each branch.

    Three branches use the straight/left-90/right-90 layout; one branch goes
    straight; any other count spreads evenly across [-90, +90] degrees.
    """
    if n_branches == 1:
        return np.array([0.0])
    if n_branches == 3:
        return np.array([0.0, np.pi / 2, -np.pi / 2])
    return np.linspace(-np.pi / 2, np.pi / 2, n_branches)


def synth_multimodal_dataset(n_agents: int, branch_probs, noise_std: float,
                             obs_len: int, pred_len: int, seed: int,
                             speed: float = 1.2, dt: float = 0.4,
                             start_half_width: float = 10.0) -> Scene:
    """Generate a multi-modal branching scene.

    Each agent walks straight at constant speed for ``obs_len`` frames, then
    picks one branch direction with the given probabilities and walks along
    it for ``pred_len`` frames with i.i.d. Gaussian position noise added to
    the branch segment.  The chosen branch index is stored on the track's
    ``meta['branch']``, so downstream consumers can verify modality.
    Deterministic: the same arguments always produce a bit-identical scene.
    """
    probs = np.asarray(branch_probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 1:
        raise ConfigError("branch_probs must be a non-empty 1-D probability vector")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ConfigError(f"branch_probs must be nonnegative and sum to 1, got {probs.tolist()}")
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    if n_agents < 1 or obs_len < 1 or pred_len < 1:
        raise ConfigError("n_agents, obs_len and pred_len must all be >= 1")

    rng = np.random.default_rng(seed)
    offsets = _branch_directions(probs.size)
    tracks = []
    for idx in range(n_agents):
        start = rng.uniform(-start_half_width, start_half_width, size=2)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        branch = int(rng.choice(probs.size, p=probs))
        noise = rng.normal(0.0, noise_std, size=(pred_len, 2)) if noise_std > 0 else \
            np.zeros((pred_len, 2))

        fwd = np.array([np.cos(heading), np.sin(heading)])
        past = start + np.arange(obs_len)[:, None] * speed * dt * fwd
        pivot = past[-1]
        angle = heading + offsets[branch]
        branch_dir = np.array([np.cos(angle), np.sin(angle)])
        future = pivot + np.arange(1, pred_len + 1)[:, None] * speed * dt * branch_dir
        future = future + noise

        states = np.concatenate([past, future], axis=0)
        frames = np.arange(obs_len + pred_len, dtype=np.int64)
        tracks.append(AgentTrack(f"a{idx:05d}", frames, states, meta={"branch": branch}))

    meta = {
        "generator": "synth_multimodal",
        "n_agents": int(n_agents),
        "branch_probs": probs.tolist(),
        "noise_std": float(noise_std),
        "obs_len": int(obs_len),
        "pred_len": int(pred_len),
        "speed": float(speed),
        "dt": float(dt),
        "seed": int(seed),
    }
    return Scene(f"synth-{seed}", dt, tracks, meta=meta)
