"""Event-driven interaction state machine: engage, take a command, pick the hand, acquire, train, detect."""
from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .annotation import AnnotationAborted, AnnotatorConfig, AnnotatorState, Strategy, annotate_step
from .classifiers.social import HandSelection, Side, SocialModels, hand_selection, mutual_gaze, teacher_scores
from .classifiers.svm import SvmModel
from .core import Annotation, ClassRegistry, RgbdFrame
from .detection import ClassData, DetectionModel, DetectorConfig, collect_training_data, detect, train_from_data
from .perception import (
    DegenerateFeatureError,
    InsufficientKeypointsError,
    KeypointSet,
    TeacherTrack,
    TrackerConfig,
    associate_teacher,
    find_person,
    gaze_feature,
)

_COMMAND = re.compile(r"^\s*learn\s+(\S.*?)\s*$", re.IGNORECASE)
_LABEL = re.compile(r"^[a-z0-9_]+$")


class State(str, enum.Enum):
    IDLE = "Idle"
    ENGAGING = "Engaging"
    AWAIT_COMMAND = "AwaitCommand"
    LOCATE_HAND = "LocateHand"
    ACQUIRE = "Acquire"
    TRAIN = "Train"
    READY = "Ready"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class OrchestratorConfig:
    fps: float = 7.0
    engage_seconds: float = 1.5
    await_timeout: float = 10.0
    locate_timeout: float = 5.0
    hand_confidence: float = 0.6
    hand_frames: int = 3
    n_frames: int = 300
    teacher_loss_tolerance: int = 7
    train_stride: int = 3
    annotator: AnnotatorConfig = AnnotatorConfig.for_strategy(Strategy.HAND_PROXIMAL)
    detector: DetectorConfig = DetectorConfig()
    tracker: TrackerConfig = TrackerConfig()

    def __post_init__(self):
        if self.fps <= 0 or self.n_frames < 1 or self.hand_frames < 1:
            raise ValueError("fps, n_frames and hand_frames must be positive")
        if not 0.0 <= self.hand_confidence <= 1.0:
            raise ValueError("hand_confidence must lie in [0, 1]")

    @property
    def engage_frames(self) -> int:
        return math.ceil(round(self.engage_seconds * self.fps, 9))


# -- events and actions ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class FrameArrived:
    frame: RgbdFrame
    people: tuple[KeypointSet, ...] = ()
    embeddings: tuple[Optional[np.ndarray], ...] = ()

    @property
    def time(self) -> float:
        return self.frame.timestamp


@dataclass(frozen=True)
class SpeechHeard:
    utterance: str
    time: float


@dataclass(frozen=True)
class Tick:
    time: float


@dataclass(frozen=True)
class Reset:
    time: float


PipelineEvent = Union[FrameArrived, SpeechHeard, Tick, Reset]


@dataclass(frozen=True)
class Action:
    kind: str
    payload: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.payload}


# -- state -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PipelineState:
    state: State = State.IDLE
    gaze_streak: int = 0
    pending_label: Optional[str] = None
    selected_hand: Optional[Side] = None
    acquired: int = 0
    entered_at: float = 0.0
    hand_streak: int = 0
    hand_candidate: Optional[Side] = None
    track: TeacherTrack = TeacherTrack()
    teacher_missing: int = 0
    annotator: AnnotatorState = AnnotatorState()
    annotations: tuple[Annotation, ...] = ()
    training: tuple[tuple[int, dict], ...] = ()
    model: Optional[DetectionModel] = None
    last_time: float = -math.inf

    def summary(self) -> dict:
        return {
            "state": self.state.value,
            "gaze_streak": self.gaze_streak,
            "pending_label": self.pending_label,
            "selected_hand": None if self.selected_hand is None else self.selected_hand.value,
            "acquired": self.acquired,
        }


def _gaze(kp: Optional[KeypointSet]):
    if kp is None:
        return None
    try:
        return gaze_feature(kp)
    except (InsufficientKeypointsError, DegenerateFeatureError):
        return None


@dataclass(frozen=True, eq=False)
class PipelineContext:
    """Trained social models plus configuration; the perception hooks can be overridden."""

    social: SocialModels
    teacher_model: Optional[SvmModel]
    config: OrchestratorConfig = OrchestratorConfig()

    def teacher_scores(self, embeddings: Sequence[Optional[np.ndarray]]) -> list[Optional[float]]:
        return teacher_scores(self.teacher_model, embeddings)

    def looks_at_robot(self, kp: KeypointSet) -> bool:
        f = _gaze(kp)
        return f is not None and mutual_gaze(f, self.social.mutual_gaze)

    def select_hand(self, kp: KeypointSet) -> Optional[HandSelection]:
        f = _gaze(kp)
        return None if f is None else hand_selection(f, self.social.hand_selection)


def parse_command(utterance: str) -> Optional[str]:
    """``"learn <label>"`` (any case) to the lowercased label; anything else to ``None``."""
    m = _COMMAND.match(utterance)
    if m is None:
        return None
    label = m.group(1).lower()
    return label if _LABEL.match(label) else None


def _is_command_attempt(utterance: str) -> bool:
    return _COMMAND.match(utterance) is not None


def _teacher(st: PipelineState, ev: FrameArrived, ctx: PipelineContext) -> tuple[TeacherTrack, Optional[KeypointSet]]:
    emb = ev.embeddings if len(ev.embeddings) == len(ev.people) else (None,) * len(ev.people)
    scores = ctx.teacher_scores(emb)
    track = associate_teacher(st.track, ev.people, scores, ctx.config.tracker)
    return track, find_person(ev.people, track.teacher_ref) if track.active else None


def _enter(st: PipelineState, state: State, t: float, **kw) -> PipelineState:
    return replace(st, state=state, entered_at=t, **kw)


def _on_frame(st: PipelineState, ev: FrameArrived, ctx: PipelineContext) -> tuple[PipelineState, list[Action]]:
    cfg = ctx.config
    t = ev.time
    track, kp = _teacher(st, ev, ctx)
    st = replace(st, track=track)
    if st.state in (State.IDLE, State.ENGAGING):
        looking = kp is not None and ctx.looks_at_robot(kp)
        streak = st.gaze_streak + 1 if looking else 0
        if streak >= cfg.engage_frames:
            return _enter(st, State.AWAIT_COMMAND, t, gaze_streak=0), [Action("engaged", {"frames": streak})]
        return replace(st, state=State.ENGAGING if streak else State.IDLE, gaze_streak=streak), []
    if st.state is State.AWAIT_COMMAND:
        if t - st.entered_at >= cfg.await_timeout:
            return _enter(st, State.IDLE, t), [Action("timeout", {"from": State.AWAIT_COMMAND.value})]
        return st, []
    if st.state is State.LOCATE_HAND:
        return _locate_hand(st, kp, t, ctx)
    if st.state is State.ACQUIRE:
        return _acquire(st, ev, kp, ctx)
    if st.state is State.READY:
        dets = detect(st.model, ev.frame)
        return st, [Action("detections", {"frame_index": ev.frame.index, "detections": [
            {"label": d.label, "score": d.score, "box": list(d.box.as_tuple())} for d in dets
        ]})]
    return st, []


def _locate_hand(st: PipelineState, kp, t: float, ctx: PipelineContext) -> tuple[PipelineState, list[Action]]:
    cfg = ctx.config
    sel = None if kp is None else ctx.select_hand(kp)
    if sel is not None and sel.c >= cfg.hand_confidence:
        streak = st.hand_streak + 1 if sel.p == st.hand_candidate else 1
        cand = sel.p
    else:
        streak, cand = 0, None
    if streak >= cfg.hand_frames:
        nxt = _enter(st, State.ACQUIRE, t, selected_hand=cand, hand_streak=0, hand_candidate=None,
                     annotator=AnnotatorState(), annotations=(), training=(), acquired=0, teacher_missing=0)
        return nxt, [Action("hand-selected", {"hand": cand.value})]
    if t - st.entered_at >= cfg.locate_timeout:
        return _enter(st, State.AWAIT_COMMAND, t, pending_label=None, hand_streak=0, hand_candidate=None), [
            Action("timeout", {"from": State.LOCATE_HAND.value})
        ]
    return replace(st, hand_streak=streak, hand_candidate=cand), []


def _abort(st: PipelineState, t: float, reason: str) -> tuple[PipelineState, list[Action]]:
    return _enter(st, State.ABORTED, t), [Action("aborted", {"reason": reason})]


def _acquire(st: PipelineState, ev: FrameArrived, kp, ctx: PipelineContext) -> tuple[PipelineState, list[Action]]:
    cfg = ctx.config
    missing = 0 if kp is not None else st.teacher_missing + 1
    if missing > cfg.teacher_loss_tolerance:
        return _abort(st, ev.time, "teacher lost")
    try:
        ann_state, ann = annotate_step(st.annotator, ev.frame, kp, st.pending_label, cfg.annotator, st.selected_hand)
    except AnnotationAborted as exc:
        return _abort(st, ev.time, f"annotation: {exc}")
    st = replace(st, annotator=ann_state, teacher_missing=missing)
    if ann is None:
        return st, []
    training = st.training
    if st.acquired % cfg.train_stride == 0:
        data = collect_training_data([ev.frame], [ann], cfg.detector)
        training = training + ((ev.frame.index, data),)
    st = replace(st, annotations=st.annotations + (ann,), acquired=st.acquired + 1, training=training)
    actions = [Action("annotation", ann.to_json())]
    if st.acquired >= cfg.n_frames:
        st = _enter(st, State.TRAIN, ev.time)
        actions.append(Action("train-started", {"label": st.pending_label, "annotations": st.acquired}))
    return st, actions


def _merge(parts: Iterable[dict]) -> dict[str, ClassData]:
    out: dict[str, ClassData] = {}
    for d in parts:
        for label, cd in d.items():
            acc = out.setdefault(label, ClassData())
            acc.positives += cd.positives
            acc.reg_features += cd.reg_features
            acc.reg_targets += cd.reg_targets
            acc.background += cd.background
    return out


def train_pending(st: PipelineState, ctx: PipelineContext) -> DetectionModel:
    registry = ClassRegistry([st.pending_label])
    return train_from_data(_merge(d for _, d in st.training), ctx.config.detector, registry)


def step(st: PipelineState, ev: PipelineEvent, ctx: PipelineContext) -> tuple[PipelineState, list[Action]]:
    """Advance the machine by one event; events must arrive in time order."""
    t = ev.time
    if t < st.last_time:
        raise ValueError(f"event at t={t} precedes the previous event at t={st.last_time}")
    st = replace(st, last_time=t)
    if isinstance(ev, Reset):
        return PipelineState(last_time=t, entered_at=t), [Action("reset")]
    if st.state is State.ABORTED:
        return st, []
    if st.state is State.TRAIN:
        model = train_pending(st, ctx)
        return _enter(st, State.READY, t, model=model, training=()), [Action("model-ready", {"labels": model.labels})]
    if isinstance(ev, FrameArrived):
        return _on_frame(st, ev, ctx)
    if isinstance(ev, SpeechHeard):
        if st.state is not State.AWAIT_COMMAND:
            return st, []
        label = parse_command(ev.utterance)
        if label is None:
            if _is_command_attempt(ev.utterance):
                return st, [Action("ask-repeat", {"utterance": ev.utterance})]
            return st, []
        return _enter(st, State.LOCATE_HAND, t, pending_label=label, hand_streak=0, hand_candidate=None), [
            Action("command", {"label": label})
        ]
    if isinstance(ev, Tick):
        cfg = ctx.config
        if st.state is State.AWAIT_COMMAND and t - st.entered_at >= cfg.await_timeout:
            return _enter(st, State.IDLE, t), [Action("timeout", {"from": State.AWAIT_COMMAND.value})]
        if st.state is State.LOCATE_HAND and t - st.entered_at >= cfg.locate_timeout:
            return _enter(st, State.AWAIT_COMMAND, t, pending_label=None, hand_streak=0, hand_candidate=None), [
                Action("timeout", {"from": State.LOCATE_HAND.value})
            ]
        return st, []
    raise TypeError(f"unknown event {type(ev).__name__}")


# -- trace -----------------------------------------------------------------


def event_summary(ev: PipelineEvent) -> dict:
    if isinstance(ev, FrameArrived):
        return {"type": "FrameArrived", "frame_index": ev.frame.index, "people": len(ev.people)}
    if isinstance(ev, SpeechHeard):
        return {"type": "SpeechHeard", "utterance": ev.utterance}
    return {"type": type(ev).__name__}


@dataclass
class EventLog:
    """JSON-lines trace: time, state before, event, state after, actions."""

    rows: list[dict] = field(default_factory=list)

    def record(self, t: float, before: PipelineState, ev: PipelineEvent, after: PipelineState, actions: list[Action]) -> None:
        self.rows.append({
            "time": round(float(t), 9),
            "state_before": before.summary(),
            "event": event_summary(ev),
            "state_after": after.summary(),
            "actions": [a.to_json() for a in actions],
        })

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def run_events(
    events: Iterable[PipelineEvent],
    ctx: PipelineContext,
    state: Optional[PipelineState] = None,
    log: Optional[EventLog] = None,
) -> tuple[PipelineState, list[Action]]:
    st = state if state is not None else PipelineState()
    actions: list[Action] = []
    for ev in events:
        nxt, acts = step(st, ev, ctx)
        if log is not None:
            log.record(ev.time, st, ev, nxt, acts)
        actions += acts
        st = nxt
    return st, actions
