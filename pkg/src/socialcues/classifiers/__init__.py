"""RBF support vector machines and the social-cue classifiers built on them."""
from .social import (
    HandSelection,
    OnlineTrainerState,
    PoolExhaustedError,
    Side,
    SocialModels,
    default_social_models,
    hand_selection,
    mutual_gaze,
    online_teacher_update,
    person_split_accuracy,
    teacher_scores,
)
from .svm import (
    FiveFoldGrid,
    RandomizedSearch,
    SingleClassError,
    SvmModel,
    calibrate,
    confidence,
    load_svm,
    model_select,
    predict,
    save_svm,
    svm_decision,
    svm_train,
)
