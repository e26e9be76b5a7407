"""Deterministic synthetic RGB-D teacher/object scenes."""
from .objects import CATALOG, DISTRACTOR_PROPS, SIZE_SPLITS, ObjectSpec, SizeClass, get_object, size_class_for
from .people import (
    EMBEDDING_DIM,
    FaceGeometry,
    Gaze,
    Hand,
    IdentityBank,
    UnknownIdentityError,
    default_bank,
    negatives_pool,
    simulated_face_embedding,
)
from .scene import (
    GroundTruthRecord,
    default_camera,
    face_embeddings_for,
    render_clean,
    render_frame,
    render_sequence,
)
from .scripts import (
    DistractorPerson,
    NoiseParams,
    ScenarioKind,
    ScenarioScript,
    ScriptError,
    StaticDistractor,
    TeacherScript,
    Waypoint,
    dump_script,
    load_script,
    make_script,
    script_from_dict,
)
