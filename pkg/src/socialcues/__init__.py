"""Social-cue driven teacher/learner object detection pipeline on synthetic RGB-D data."""

__version__ = "0.1.0"
