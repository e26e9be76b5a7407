"""Z-buffer renderer for scripted scenes and the ground-truth stream."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from ..core import BoundingBox, CameraIntrinsics, MAX_VALID_DEPTH, MIN_VALID_DEPTH, RgbdFrame, box_from_mask
from ..perception import KeypointSet
from .objects import ObjectSpec
from .people import HEAD_YAW_SIGMA_DEG, FaceGeometry, Gaze, Hand, Skeleton, build_skeleton, skeleton_keypoints, simulated_face_embedding
from .scripts import DistractorPerson, ScenarioScript, StaticDistractor, object_pose

WALL_DEPTH = 3.5
SKIN = (225, 175, 145)
PANTS = (50, 55, 75)
MIN_VISIBLE_PX = 20

# label-buffer ids
BACKGROUND_ID = 0
HELD_OBJECT_ID = 1
TEACHER_ID = 2
FIRST_OTHER_ID = 10


def default_camera(width: int = 320, height: int = 240) -> CameraIntrinsics:
    return CameraIntrinsics().scaled_to(width, height) if (width, height) != (320, 240) else CameraIntrinsics()


@dataclass(frozen=True)
class GroundTruthRecord:
    frame_index: int
    true_object_box: Optional[BoundingBox]
    keypoints: tuple[KeypointSet, ...]
    teacher_ref: Optional[int]
    teacher_gaze: Gaze
    object_visible: bool
    identities: tuple[str, ...] = ()
    object_depth: float = float("nan")

    def teacher_keypoints(self) -> Optional[KeypointSet]:
        for kp in self.keypoints:
            if kp.person_ref == self.teacher_ref:
                return kp
        return None


class Canvas:
    def __init__(self, cam: CameraIntrinsics):
        self.cam = cam
        h, w = cam.height, cam.width
        self.depth = np.full((h, w), np.inf)
        self.rgb = np.zeros((h, w, 3), dtype=np.float64)
        self.label = np.zeros((h, w), dtype=np.int32)
        self.ray_x = (np.arange(w) + 0.5 - cam.cx) / cam.focal
        self.ray_y = (np.arange(h) + 0.5 - cam.cy) / cam.focal

    def _window(self, u0, u1, v0, v1):
        w, h = self.cam.width, self.cam.height
        c0 = max(int(math.floor(u0)), 0)
        c1 = min(int(math.ceil(u1)) + 1, w)
        r0 = max(int(math.floor(v0)), 0)
        r1 = min(int(math.ceil(v1)) + 1, h)
        if c0 >= c1 or r0 >= r1:
            return None
        return r0, r1, c0, c1

    def _write(self, win, inside, z, color, label_id):
        r0, r1, c0, c1 = win
        zb = self.depth[r0:r1, c0:c1]
        hit = inside & (z > 0) & (z < zb)
        if not hit.any():
            return
        zb[hit] = z[hit]
        self.label[r0:r1, c0:c1][hit] = label_id
        rgb = self.rgb[r0:r1, c0:c1]
        if callable(color):
            rgb[hit] = color(hit)
        else:
            rgb[hit] = color

    def fill(self, z: float, color_fn):
        self.depth[:] = z
        self.rgb[:] = color_fn(self)
        self.label[:] = BACKGROUND_ID

    def patch(self, centre, u_axis, half_w, half_h, shape, color, label_id, secondary=None):
        """Planar rectangle/ellipse spanned by ``u_axis`` and the vertical axis."""
        centre = np.asarray(centre, float)
        u = np.asarray(u_axis, float)
        v = np.array([0.0, 1.0, 0.0])
        n = np.cross(u, v)
        corners = [centre + a * half_w * u + b * half_h * v for a in (-1, 1) for b in (-1, 1)]
        if min(c[2] for c in corners) <= 0.05:
            return
        uv = self.cam.project(np.array(corners))
        win = self._window(uv[:, 0].min(), uv[:, 0].max(), uv[:, 1].min(), uv[:, 1].max())
        if win is None:
            return
        r0, r1, c0, c1 = win
        dx = self.ray_x[None, c0:c1]
        dy = self.ray_y[r0:r1, None]
        denom = n[0] * dx + n[1] * dy + n[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(np.abs(denom) > 1e-12, float(n @ centre) / denom, -1.0)
        px = (dx * z - centre[0])
        py = (dy * z - centre[1])
        pz = (z - centre[2])
        s = (px * u[0] + py * u[1] + pz * u[2]) / half_w
        t = (px * v[0] + py * v[1] + pz * v[2]) / half_h
        inside = (s * s + t * t <= 1.0) if shape == "ellipse" else ((np.abs(s) <= 1.0) & (np.abs(t) <= 1.0))
        z = np.broadcast_to(z, inside.shape)
        shade = 0.75 + 0.25 * abs(n[2])
        base = np.asarray(color, float) * shade
        if secondary is None:
            col = base
        else:
            sec = np.asarray(secondary, float) * shade
            band = np.broadcast_to(np.abs(t + 0.1) < 0.25, inside.shape)

            def col(hit, band=band):
                return np.where(band[hit][:, None], sec, base)

        self._write(win, inside, z, col, label_id)

    def stick(self, a, b, color, label_id, width_m=0.06, max_px=6.0, min_px=2.0):
        """Limb as a screen-space capsule with perspective-correct depth."""
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        if a[2] <= 0.05 or b[2] <= 0.05:
            return
        pa, pb = self.cam.project(np.array([a, b]))
        zmean = 0.5 * (a[2] + b[2])
        r = 0.5 * float(np.clip(self.cam.focal * width_m / zmean, min_px, max_px))
        win = self._window(min(pa[0], pb[0]) - r, max(pa[0], pb[0]) + r, min(pa[1], pb[1]) - r, max(pa[1], pb[1]) + r)
        if win is None:
            return
        r0, r1, c0, c1 = win
        xs = np.arange(c0, c1)[None, :] + 0.5
        ys = np.arange(r0, r1)[:, None] + 0.5
        d = pb - pa
        L2 = float(d @ d)
        if L2 < 1e-12:
            tau = np.zeros((r1 - r0, c1 - c0))
        else:
            tau = np.clip(((xs - pa[0]) * d[0] + (ys - pa[1]) * d[1]) / L2, 0.0, 1.0)
        dist2 = (xs - (pa[0] + tau * d[0])) ** 2 + (ys - (pa[1] + tau * d[1])) ** 2
        inside = dist2 <= r * r
        z = 1.0 / ((1 - tau) / a[2] + tau / b[2])
        self._write(win, inside, z, np.asarray(color, float), label_id)


def _wall_color(canvas: Canvas) -> np.ndarray:
    h, w = canvas.cam.height, canvas.cam.width
    g = np.linspace(0.92, 1.0, h)[:, None, None]
    base = np.array([205.0, 200.0, 190.0])
    img = np.broadcast_to(base * g, (h, w, 3)).copy()
    # large faint tiles so the wall is not perfectly flat in colour
    tiles = ((np.arange(w)[None, :] // 64 + np.arange(h)[:, None] // 64) % 2).astype(float)
    img -= 8.0 * tiles[:, :, None]
    return img


def draw_person(canvas: Canvas, sk: Skeleton, geo: FaceGeometry, label_id: int) -> None:
    c = sk.chest
    # legs, torso, arms, head: far-to-near order is irrelevant with a z-buffer
    for p in ("l", "r"):
        hip = sk.hips[p]
        canvas.patch(hip + np.array([0.0, 0.42, 0.0]), (1, 0, 0), 0.06, 0.42, "box", PANTS, label_id)
    canvas.patch(c + np.array([0.0, 0.09, 0.0]), (1, 0, 0), 0.19, 0.25, "box", geo.shirt, label_id)
    for p in ("l", "r"):
        canvas.stick(sk.shoulders[p], sk.elbows[p], geo.shirt, label_id)
        canvas.stick(sk.elbows[p], sk.wrists[p], SKIN, label_id)
    canvas.patch(sk.head + np.array([0.0, 0.0, -0.05]), (1, 0, 0), 0.08, 0.11, "ellipse", SKIN, label_id)


def draw_object(canvas: Canvas, spec: ObjectSpec, centre, u_axis, label_id: int) -> None:
    canvas.patch(centre, u_axis, spec.extent[0] / 2, spec.extent[1] / 2, spec.shape, spec.color_signature,
                 label_id, secondary=spec.secondary_color)


@dataclass
class SceneState:
    """Everything placed in the scene at one instant."""

    teacher_skeleton: Skeleton
    object_centre: np.ndarray
    object_axis: np.ndarray
    people: list  # (identity, skeleton, gaze, label_id, is_teacher)
    statics: list  # (spec, centre, axis, label_id)


def scene_at(script: ScenarioScript, t: float, object_visible: bool = True) -> SceneState:
    teacher = script.teacher
    wrist = teacher.wrist_at(t)
    sk = build_skeleton(teacher.chest_at(t), wrist, teacher.held_hand)
    centre, axis = object_pose(script.object, wrist, teacher.held_hand)
    people = [(teacher.identity, sk, teacher.gaze_at(t), TEACHER_ID, True)]
    statics = []
    for i, d in enumerate(script.distractors):
        lid = FIRST_OTHER_ID + i
        if isinstance(d, DistractorPerson):
            people.append((d.identity, build_skeleton(d.chest_at(t)), d.gaze, lid, False))
        else:
            yaw = math.radians(d.yaw_deg)
            statics.append((d.spec, np.asarray(d.position, float), np.array([math.cos(yaw), 0.0, math.sin(yaw)]), lid))
    return SceneState(sk, centre, axis, people, statics)


def render_clean(script: ScenarioScript, t: float, cam: CameraIntrinsics) -> Canvas:
    st = scene_at(script, t)
    canvas = Canvas(cam)
    canvas.fill(WALL_DEPTH, _wall_color)
    for ident, sk, _, lid, _ in st.people:
        draw_person(canvas, sk, FaceGeometry.for_identity(ident), lid)
    for spec, centre, axis, lid in st.statics:
        draw_object(canvas, spec, centre, axis, lid)
    draw_object(canvas, script.object, st.object_centre, st.object_axis, HELD_OBJECT_ID)
    return canvas


def _frame_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index, stream])


def render_frame(script: ScenarioScript, index: int, cam: Optional[CameraIntrinsics] = None) -> tuple[RgbdFrame, GroundTruthRecord]:
    cam = cam or default_camera(script.width, script.height)
    t = script.time_of(index)
    canvas = render_clean(script, t, cam)
    noise = script.noise

    depth = canvas.depth.copy()
    rng = _frame_rng(script.seed, index, 1)
    if noise.depth_sigma > 0:
        depth = depth + rng.normal(0.0, noise.depth_sigma, size=depth.shape)
    if noise.invalid_depth_prob > 0:
        depth[rng.random(depth.shape) < noise.invalid_depth_prob] = 0.0
    depth[(depth <= MIN_VALID_DEPTH) | (depth > MAX_VALID_DEPTH) | ~np.isfinite(depth)] = 0.0
    rgb = np.clip(np.rint(canvas.rgb), 0, 255).astype(np.uint8)
    frame = RgbdFrame(rgb, depth.astype(np.float32), float(t), index)

    obj_mask = canvas.label == HELD_OBJECT_ID
    visible = int(obj_mask.sum()) >= MIN_VISIBLE_PX
    box = box_from_mask(obj_mask) if visible else None

    st = scene_at(script, t)
    kp_rng = _frame_rng(script.seed, index, 2)
    people = []
    for ident, sk, gaze, lid, is_teacher in st.people:
        geo = FaceGeometry.for_identity(ident)
        yaw = float(kp_rng.normal(0.0, math.radians(HEAD_YAW_SIGMA_DEG)))
        kp = skeleton_keypoints(sk, geo, gaze, cam, kp_rng, 0, noise.keypoint_jitter_sigma,
                                noise.keypoint_dropout_prob, head_yaw=yaw)
        people.append((float(cam.project(sk.chest)[0]), ident, kp, is_teacher))
    # person refs follow left-to-right image order, as a pose estimator would list them
    people.sort(key=lambda p: p[0])
    kps, idents, teacher_ref = [], [], None
    for ref, (_, ident, kp, is_teacher) in enumerate(people):
        kps.append(KeypointSet(ref, kp.points))
        idents.append(ident)
        if is_teacher:
            teacher_ref = ref
    rec = GroundTruthRecord(
        frame_index=index,
        true_object_box=box,
        keypoints=tuple(kps),
        teacher_ref=teacher_ref,
        teacher_gaze=script.teacher.gaze_at(t),
        object_visible=visible,
        identities=tuple(idents),
        object_depth=float(st.object_centre[2]),
    )
    return frame, rec


def render_sequence(script: ScenarioScript) -> Iterator[tuple[RgbdFrame, GroundTruthRecord]]:
    script.validate()
    cam = default_camera(script.width, script.height)
    for i in range(script.n_frames):
        yield render_frame(script, i, cam)


def face_embeddings_for(script: ScenarioScript, rec: GroundTruthRecord, sigma: float = 0.02) -> list[Optional[np.ndarray]]:
    """Simulated face-network output per listed person; ``None`` when the face is not visible."""
    out = []
    for kp, ident in zip(rec.keypoints, rec.identities):
        if len(kp.face_points()) < 3:
            out.append(None)
            continue
        noise_seed = (script.seed * 1_000_003 + rec.frame_index * 101 + kp.person_ref) & 0x7FFFFFFFFFFFFFFF
        out.append(simulated_face_embedding(ident, noise_seed, sigma))
    return out
