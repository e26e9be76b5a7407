"""Scenario scripts: seeded timelines of teacher behaviour, object and distractors."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import yaml

from .objects import CATALOG, DISTRACTOR_PROPS, ObjectSpec, get_object
from .people import Gaze, Hand


class ScenarioKind(str, enum.Enum):
    CONSTRAINED = "constrained"
    FROM_AFAR = "from-afar"
    WITH_DISTRACTORS = "with-distractors"


class ScriptError(ValueError):
    pass


CONSTRAINED_RANGE = (0.5, 0.8)
AFAR_RANGE = (1.6, 2.4)
WRIST_FORWARD = 0.12  # hand held in front of the chest
OBJECT_GAP = 0.10  # held object face in front of the wrist


@dataclass(frozen=True)
class NoiseParams:
    depth_sigma: float = 0.01
    keypoint_jitter_sigma: float = 1.5
    keypoint_dropout_prob: float = 0.05
    invalid_depth_prob: float = 0.02

    def __post_init__(self):
        for name in ("depth_sigma", "keypoint_jitter_sigma", "keypoint_dropout_prob", "invalid_depth_prob"):
            if getattr(self, name) < 0:
                raise ScriptError(f"{name} must be non-negative")
        if self.keypoint_dropout_prob > 1 or self.invalid_depth_prob > 1:
            raise ScriptError("probabilities must be <= 1")

    @classmethod
    def none(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Waypoint:
    t: float
    chest: tuple[float, float, float]
    wrist: Optional[tuple[float, float, float]] = None


def _interp(points: list[tuple[float, np.ndarray]], t: float) -> np.ndarray:
    times = [p[0] for p in points]
    if t <= times[0]:
        return points[0][1].copy()
    if t >= times[-1]:
        return points[-1][1].copy()
    i = int(np.searchsorted(times, t, side="right")) - 1
    t0, a = points[i]
    t1, b = points[i + 1]
    if t1 == t0:
        return b.copy()
    w = (t - t0) / (t1 - t0)
    return a + w * (b - a)


def _step_lookup(timeline, t: float):
    value = timeline[0][1]
    for t0, v in timeline:
        if t0 <= t + 1e-9:
            value = v
        else:
            break
    return value


@dataclass(frozen=True)
class TeacherScript:
    identity: str
    held_hand: Hand
    waypoints: tuple[Waypoint, ...]
    gaze_timeline: tuple[tuple[float, Gaze], ...]
    speech_events: tuple[tuple[float, str], ...] = ()

    def chest_at(self, t: float) -> np.ndarray:
        return _interp([(w.t, np.asarray(w.chest, float)) for w in self.waypoints], t)

    def wrist_at(self, t: float) -> np.ndarray:
        return _interp([(w.t, np.asarray(w.wrist, float)) for w in self.waypoints], t)

    def gaze_at(self, t: float) -> Gaze:
        return _step_lookup(self.gaze_timeline, t)


@dataclass(frozen=True)
class DistractorPerson:
    identity: str
    waypoints: tuple[Waypoint, ...]
    gaze: Gaze = Gaze.AWAY

    def chest_at(self, t: float) -> np.ndarray:
        return _interp([(w.t, np.asarray(w.chest, float)) for w in self.waypoints], t)


@dataclass(frozen=True)
class StaticDistractor:
    spec: ObjectSpec
    position: tuple[float, float, float]
    yaw_deg: float = 0.0


Distractor = Union[DistractorPerson, StaticDistractor]


def object_pose(spec: ObjectSpec, wrist: np.ndarray, hand: Hand) -> tuple[np.ndarray, np.ndarray]:
    """Centre and in-plane horizontal axis of an object gripped by its outer edge.

    The edge at the hand is the far edge, so a tilted object leans toward the
    camera on the side facing the body.
    """
    s = hand.side
    yaw = math.radians(spec.tilt_deg)
    u = np.array([s * math.cos(yaw), 0.0, math.sin(yaw)])
    centre = np.asarray(wrist, float) - np.array([0.0, 0.0, OBJECT_GAP]) - 0.5 * spec.extent[0] * u
    return centre, u


@dataclass(frozen=True)
class ScenarioScript:
    kind: ScenarioKind
    teacher: TeacherScript
    object: ObjectSpec
    distractors: tuple[Distractor, ...] = ()
    seed: int = 0
    fps: float = 7.0
    n_frames: int = 300
    noise: NoiseParams = field(default_factory=NoiseParams)
    width: int = 320
    height: int = 240

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    def time_of(self, index: int) -> float:
        return index / self.fps

    def object_centre_at(self, t: float) -> np.ndarray:
        return object_pose(self.object, self.teacher.wrist_at(t), self.teacher.held_hand)[0]

    def validate(self) -> None:
        if self.n_frames < 1 or self.fps <= 0:
            raise ScriptError("n_frames and fps must be positive")
        if self.width < 16 or self.height < 16:
            raise ScriptError("resolution too small")
        if not self.teacher.waypoints or any(w.wrist is None for w in self.teacher.waypoints):
            raise ScriptError("teacher waypoints need chest and wrist positions")
        if not self.teacher.gaze_timeline:
            raise ScriptError("empty gaze timeline")
        times = [g[0] for g in self.teacher.gaze_timeline]
        if times != sorted(times):
            raise ScriptError("gaze events must be time-ordered")
        z = [w.chest[2] for w in self.teacher.waypoints]
        if self.kind is ScenarioKind.CONSTRAINED:
            lo, hi = CONSTRAINED_RANGE
            if min(z) < lo or max(z) > hi:
                raise ScriptError(f"constrained teacher must stay within {lo}-{hi} m")
            if self.distractors:
                raise ScriptError("constrained scenario admits no distractors")
        else:
            lo, hi = AFAR_RANGE
            if min(z) < lo or max(z) > hi:
                raise ScriptError(f"{self.kind.value} teacher must stay near 2 m")
            if self.kind is ScenarioKind.FROM_AFAR and self.distractors:
                raise ScriptError("from-afar scenario admits no distractors")
            if self.kind is ScenarioKind.WITH_DISTRACTORS:
                if not self.distractors:
                    raise ScriptError("with-distractors scenario needs at least one distractor")
                if not self._some_distractor_closer():
                    raise ScriptError("no distractor ever comes closer to the camera than the held object")

    def _some_distractor_closer(self) -> bool:
        times = np.linspace(0, self.duration, 50)
        for d in self.distractors:
            for t in times:
                obj_z = self.object_centre_at(t)[2]
                dz = d.chest_at(t)[2] if isinstance(d, DistractorPerson) else d.position[2]
                if dz < obj_z:
                    return True
        return False

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        t = self.teacher
        return {
            "kind": self.kind.value,
            "object": self.object.label if self.object.label in CATALOG and CATALOG[self.object.label] == self.object else self.object.to_dict(),
            "seed": self.seed,
            "fps": self.fps,
            "n_frames": self.n_frames,
            "width": self.width,
            "height": self.height,
            "noise": {
                "depth_sigma": self.noise.depth_sigma,
                "keypoint_jitter_sigma": self.noise.keypoint_jitter_sigma,
                "keypoint_dropout_prob": self.noise.keypoint_dropout_prob,
                "invalid_depth_prob": self.noise.invalid_depth_prob,
            },
            "teacher": {
                "identity": t.identity,
                "held_hand": t.held_hand.value,
                "waypoints": [
                    {"t": w.t, "chest": list(w.chest), "wrist": list(w.wrist)} for w in t.waypoints
                ],
                "gaze": [{"t": g[0], "target": g[1].value} for g in t.gaze_timeline],
                "speech": [{"t": s[0], "text": s[1]} for s in t.speech_events],
            },
            "distractors": [_distractor_to_dict(d) for d in self.distractors],
        }


def _distractor_to_dict(d: Distractor) -> dict:
    if isinstance(d, DistractorPerson):
        return {
            "type": "person",
            "identity": d.identity,
            "gaze": d.gaze.value,
            "waypoints": [{"t": w.t, "chest": list(w.chest)} for w in d.waypoints],
        }
    return {"type": "object", "prop": d.spec.to_dict(), "position": list(d.position), "yaw_deg": d.yaw_deg}


_TOP_KEYS = {"kind", "object", "seed", "fps", "n_frames", "width", "height", "noise", "teacher", "distractors", "held_hand"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ScriptError(f"unknown keys in {where}: {sorted(extra)}")


def script_from_dict(d: dict) -> ScenarioScript:
    """Build a script from a config mapping; missing sections are generated from the seed."""
    if not isinstance(d, dict):
        raise ScriptError("scenario config must be a mapping")
    _check_keys(d, _TOP_KEYS, "scenario")
    try:
        kind = ScenarioKind(d["kind"])
        obj_field = d["object"]
    except KeyError as e:
        raise ScriptError(f"missing required key {e}") from None
    except ValueError as e:
        raise ScriptError(str(e)) from None
    obj = get_object(obj_field) if isinstance(obj_field, str) else ObjectSpec.from_dict(obj_field)
    noise_d = d.get("noise", {}) or {}
    _check_keys(noise_d, {"depth_sigma", "keypoint_jitter_sigma", "keypoint_dropout_prob", "invalid_depth_prob"}, "noise")
    noise = NoiseParams(**{k: float(v) for k, v in noise_d.items()})
    held = Hand(d["held_hand"]) if "held_hand" in d else None
    base = make_script(
        kind,
        obj.label if obj.label in CATALOG else "011_banana",
        seed=int(d.get("seed", 0)),
        n_frames=int(d.get("n_frames", 300)),
        fps=float(d.get("fps", 7.0)),
        noise=noise,
        held_hand=held,
        width=int(d.get("width", 320)),
        height=int(d.get("height", 240)),
    )
    base = replace(base, object=obj)
    if "teacher" in d:
        td = d["teacher"]
        _check_keys(td, {"identity", "held_hand", "waypoints", "gaze", "speech"}, "teacher")
        teacher = base.teacher
        if "identity" in td:
            teacher = replace(teacher, identity=str(td["identity"]))
        if "held_hand" in td:
            teacher = replace(teacher, held_hand=Hand(td["held_hand"]))
        if "waypoints" in td:
            wps = []
            for w in td["waypoints"]:
                _check_keys(w, {"t", "chest", "wrist"}, "teacher waypoint")
                wps.append(Waypoint(float(w["t"]), tuple(map(float, w["chest"])), tuple(map(float, w["wrist"]))))
            teacher = replace(teacher, waypoints=tuple(wps))
        if "gaze" in td:
            teacher = replace(teacher, gaze_timeline=tuple((float(g["t"]), Gaze(g["target"])) for g in td["gaze"]))
        if "speech" in td:
            teacher = replace(teacher, speech_events=tuple((float(s["t"]), str(s["text"])) for s in td["speech"]))
        base = replace(base, teacher=teacher)
    if "distractors" in d:
        ds: list[Distractor] = []
        for item in d["distractors"] or []:
            if item.get("type") == "person":
                _check_keys(item, {"type", "identity", "gaze", "waypoints"}, "distractor person")
                ds.append(
                    DistractorPerson(
                        str(item["identity"]),
                        tuple(Waypoint(float(w["t"]), tuple(map(float, w["chest"]))) for w in item["waypoints"]),
                        Gaze(item.get("gaze", Gaze.AWAY.value)),
                    )
                )
            elif item.get("type") == "object":
                _check_keys(item, {"type", "prop", "position", "yaw_deg"}, "distractor object")
                prop = item["prop"]
                spec = next(p for p in DISTRACTOR_PROPS if p.label == prop) if isinstance(prop, str) else ObjectSpec.from_dict(prop)
                ds.append(StaticDistractor(spec, tuple(map(float, item["position"])), float(item.get("yaw_deg", 0.0))))
            else:
                raise ScriptError(f"unknown distractor type {item.get('type')!r}")
        base = replace(base, distractors=tuple(ds))
    base.validate()
    return base


def load_script(path) -> ScenarioScript:
    with open(path) as fh:
        return script_from_dict(yaml.safe_load(fh))


def dump_script(script: ScenarioScript, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(script.to_dict(), fh, sort_keys=False)


# -- generation ------------------------------------------------------------

_KIND_SALT = {ScenarioKind.CONSTRAINED: 11, ScenarioKind.FROM_AFAR: 23, ScenarioKind.WITH_DISTRACTORS: 37}


def _generate_gaze(rng: np.random.Generator, duration: float, hand: Hand, engage_until: float) -> tuple:
    held = Gaze.AT_LEFT_HAND if hand is Hand.LEFT else Gaze.AT_RIGHT_HAND
    timeline = [(0.0, Gaze.AT_ROBOT), (engage_until, held)]
    t = engage_until + float(rng.uniform(4.0, 8.0))
    while t < duration:
        glance = Gaze.AT_ROBOT if rng.random() < 0.6 else Gaze.AWAY
        timeline.append((round(t, 3), glance))
        t += float(rng.uniform(0.5, 1.5))
        timeline.append((round(t, 3), held))
        t += float(rng.uniform(4.0, 8.0))
    return tuple(timeline)


def make_script(
    kind: Union[ScenarioKind, str],
    label: str,
    seed: int,
    n_frames: int = 300,
    fps: float = 7.0,
    noise: Optional[NoiseParams] = None,
    held_hand: Optional[Hand] = None,
    identity: str = "teacher_0",
    width: int = 320,
    height: int = 240,
    static: bool = False,
) -> ScenarioScript:
    """Seeded scenario generator; ``static`` freezes all motion."""
    kind = ScenarioKind(kind)
    obj = get_object(label)
    rng = np.random.default_rng([seed, _KIND_SALT[kind]])
    hand = held_hand if held_hand is not None else (Hand.LEFT if rng.random() < 0.5 else Hand.RIGHT)
    s = hand.side
    duration = n_frames / fps
    if kind is ScenarioKind.CONSTRAINED:
        z0 = float(rng.uniform(0.70, 0.76))
    else:
        z0 = float(rng.uniform(1.92, 2.08))
    x0 = float(rng.uniform(-0.04, 0.04))
    chest0 = np.array([x0, 0.12, z0])
    wrist0 = chest0 + np.array([s * 0.17, -0.12, -WRIST_FORWARD])
    step = 1.0
    times = np.arange(0.0, duration + step, step)
    waypoints = []
    for t in times:
        if static:
            dc, dw = np.zeros(3), np.zeros(3)
        else:
            dc = rng.uniform([-0.03, -0.01, -0.02], [0.03, 0.01, 0.02])
            dw = rng.uniform([-0.04, -0.03, -0.02], [0.04, 0.03, 0.02])
        c = chest0 + dc
        waypoints.append(Waypoint(round(float(t), 6), tuple(c.tolist()), tuple((wrist0 + dc + dw).tolist())))
    engage = min(2.0, duration)
    gaze = ((0.0, Gaze.AT_ROBOT),) if static else _generate_gaze(rng, duration, hand, engage)
    teacher = TeacherScript(identity, hand, tuple(waypoints), gaze, ((engage + 0.5, f"learn {label}"),))
    distractors: list[Distractor] = []
    if kind is ScenarioKind.WITH_DISTRACTORS:
        distractors = _generate_distractors(rng, duration, hand, static)
    script = ScenarioScript(
        kind=kind,
        teacher=teacher,
        object=obj,
        distractors=tuple(distractors),
        seed=seed,
        fps=fps,
        n_frames=n_frames,
        noise=noise if noise is not None else NoiseParams(),
        width=width,
        height=height,
    )
    script.validate()
    return script


def _generate_distractors(rng: np.random.Generator, duration: float, hand: Hand, static: bool) -> list[Distractor]:
    s = hand.side
    out: list[Distractor] = []
    z = float(rng.uniform(1.0, 1.4))
    stand_x = -s * float(rng.uniform(0.45, 0.65))
    off_x = -s * 1.3
    if static:
        out.append(DistractorPerson("distractor_0", (Waypoint(0.0, (stand_x, 0.12, z)),)))
    else:
        # a bystander already stands between camera and teacher, shifts a little, then walks off
        t_out = float(rng.uniform(0.55, 0.9)) * duration
        walk = 1.0
        wps = [
            Waypoint(0.0, (stand_x, 0.12, z)),
            Waypoint(t_out, (stand_x + s * 0.05, 0.12, z + 0.05)),
            Waypoint(t_out + walk, (off_x, 0.12, z)),
        ]
        ident = f"distractor_{int(rng.integers(8))}"
        out.append(DistractorPerson(ident, tuple(wps)))
    if static or rng.random() < 0.5:
        prop = DISTRACTOR_PROPS[int(rng.integers(len(DISTRACTOR_PROPS)))]
        pos = (-s * float(rng.uniform(0.22, 0.32)), float(rng.uniform(0.10, 0.22)), float(rng.uniform(1.0, 1.4)))
        out.append(StaticDistractor(prop, pos, float(rng.uniform(-15, 15))))
    return out
