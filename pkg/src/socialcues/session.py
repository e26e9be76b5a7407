"""Scripted interaction sessions: replay a simulated script through the state machine."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .classifiers.social import OnlineTrainerState, SocialModels, default_social_models, online_teacher_update
from .classifiers.svm import SvmModel
from .orchestrator import EventLog, FrameArrived, OrchestratorConfig, PipelineContext, PipelineEvent, PipelineState, SpeechHeard, run_events
from .simworld import ScenarioScript, face_embeddings_for, negatives_pool, render_frame, simulated_face_embedding
from .simworld.scene import default_camera

ENROLL_SIGMA = 0.02
MAX_ENROLL_BATCHES = 5


def enroll_teacher(identity: str, seed: int = 0, sigma: float = ENROLL_SIGMA) -> SvmModel:
    """Online teacher recogniser fed 300-sample batches of the teacher's face embeddings."""
    pool = negatives_pool()
    st = OnlineTrainerState(seed=seed)
    for b in range(MAX_ENROLL_BATCHES):
        batch = np.stack([simulated_face_embedding(identity, seed * 100_003 + b * 1000 + i, sigma) for i in range(300)])
        st = online_teacher_update(st, batch, pool)
        if st.done:
            break
    if st.current_model is None:
        raise RuntimeError("teacher enrollment produced no model")
    return st.current_model


def script_events(script: ScenarioScript) -> Iterator[PipelineEvent]:
    """Frames with their keypoints and face embeddings, interleaved with the script's speech."""
    cam = default_camera(script.width, script.height)
    speech = sorted(script.teacher.speech_events)
    k = 0
    for i in range(script.n_frames):
        frame, rec = render_frame(script, i, cam)
        while k < len(speech) and speech[k][0] < frame.timestamp:
            yield SpeechHeard(speech[k][1], speech[k][0])
            k += 1
        yield FrameArrived(frame, rec.keypoints, tuple(face_embeddings_for(script, rec)))
    for t, text in speech[k:]:
        yield SpeechHeard(text, t)


def default_context(script: ScenarioScript, config: Optional[OrchestratorConfig] = None, seed: int = 0,
                    social: Optional[SocialModels] = None) -> PipelineContext:
    return PipelineContext(
        social if social is not None else default_social_models(seed),
        enroll_teacher(script.teacher.identity, seed),
        config if config is not None else OrchestratorConfig(),
    )


def run_session(script: ScenarioScript, ctx: PipelineContext, log: Optional[EventLog] = None):
    return run_events(script_events(script), ctx, PipelineState(), log)
