"""Object catalogue: nine hand-held objects split into three size classes."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class SizeClass(str, enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    BIG = "big"


SMALL_LIMIT = 0.10
MEDIUM_LIMIT = 0.20


def size_class_for(extent: tuple[float, float]) -> SizeClass:
    m = max(extent)
    if m < SMALL_LIMIT:
        return SizeClass.SMALL
    if m < MEDIUM_LIMIT:
        return SizeClass.MEDIUM
    return SizeClass.BIG


@dataclass(frozen=True)
class ObjectSpec:
    label: str
    size_class: SizeClass
    color_signature: tuple[int, int, int]
    extent: tuple[float, float]  # (width_m, height_m)
    secondary_color: tuple[int, int, int] = (235, 235, 235)
    shape: str = "box"  # "box" | "ellipse"
    tilt_deg: float = 0.0  # yaw about the vertical axis

    def __post_init__(self):
        if size_class_for(self.extent) != self.size_class:
            raise ValueError(f"{self.label}: extent {self.extent} inconsistent with {self.size_class.value}")
        if self.shape not in ("box", "ellipse"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if any(not 0 <= c <= 255 for c in self.color_signature + self.secondary_color):
            raise ValueError("colors must be 8-bit")

    @property
    def depth_spread(self) -> float:
        """Front-to-back extent when rendered at ``tilt_deg``."""
        return self.extent[0] * abs(math.sin(math.radians(self.tilt_deg)))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "size_class": self.size_class.value,
            "color_signature": list(self.color_signature),
            "secondary_color": list(self.secondary_color),
            "extent": list(self.extent),
            "shape": self.shape,
            "tilt_deg": self.tilt_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(
            label=d["label"],
            size_class=SizeClass(d["size_class"]),
            color_signature=tuple(d["color_signature"]),
            secondary_color=tuple(d.get("secondary_color", (235, 235, 235))),
            extent=tuple(d["extent"]),
            shape=d.get("shape", "box"),
            tilt_deg=float(d.get("tilt_deg", 0.0)),
        )


BIG_TILT_DEG = 60.0

CATALOG: dict[str, ObjectSpec] = {
    o.label: o
    for o in [
        ObjectSpec("025_mug", SizeClass.SMALL, (40, 70, 210), (0.085, 0.09), (230, 230, 230)),
        ObjectSpec("011_banana", SizeClass.SMALL, (240, 215, 50), (0.095, 0.05), (120, 90, 30), "ellipse"),
        ObjectSpec("010_potted_meat_can", SizeClass.SMALL, (30, 150, 170), (0.095, 0.065), (250, 200, 0)),
        ObjectSpec("004_sugar_box", SizeClass.MEDIUM, (250, 245, 160), (0.09, 0.175), (200, 40, 40)),
        ObjectSpec("006_mustard_bottle", SizeClass.MEDIUM, (245, 185, 10), (0.095, 0.19), (30, 60, 180), "ellipse"),
        ObjectSpec("037_scissors", SizeClass.MEDIUM, (200, 30, 160), (0.085, 0.18), (40, 40, 40), "ellipse"),
        ObjectSpec("003_cracker_box", SizeClass.BIG, (210, 30, 30), (0.21, 0.16), (250, 210, 60), tilt_deg=BIG_TILT_DEG),
        ObjectSpec("021_bleach_cleanser", SizeClass.BIG, (245, 245, 250), (0.25, 0.10), (30, 90, 200), "ellipse", BIG_TILT_DEG),
        ObjectSpec("035_power_drill", SizeClass.BIG, (45, 45, 50), (0.22, 0.17), (240, 200, 20), tilt_deg=BIG_TILT_DEG),
    ]
}

SIZE_SPLITS: dict[SizeClass, tuple[str, ...]] = {
    SizeClass.SMALL: ("025_mug", "011_banana", "010_potted_meat_can"),
    SizeClass.MEDIUM: ("004_sugar_box", "006_mustard_bottle", "037_scissors"),
    SizeClass.BIG: ("003_cracker_box", "021_bleach_cleanser", "035_power_drill"),
}

# props used as static distractors; deliberately not in the catalogue
DISTRACTOR_PROPS: tuple[ObjectSpec, ...] = (
    ObjectSpec("prop_green_box", SizeClass.MEDIUM, (60, 170, 60), (0.15, 0.12), (20, 90, 20)),
    ObjectSpec("prop_orange_jar", SizeClass.MEDIUM, (250, 130, 30), (0.10, 0.16), (250, 250, 250), "ellipse"),
    ObjectSpec("prop_purple_case", SizeClass.BIG, (110, 60, 170), (0.24, 0.14), (200, 200, 200)),
)


def get_object(label: str) -> ObjectSpec:
    try:
        return CATALOG[label]
    except KeyError:
        raise KeyError(f"unknown object {label!r}; known: {sorted(CATALOG)}") from None
