"""Object categories, ground classes and the global semantic label palette."""

from dataclasses import dataclass

from .exceptions import ConfigError


@dataclass(frozen=True)
class CategorySpec:
    code: str
    name: str
    shape: str  # "cuboid" or "ellipsoid"
    count: int  # fixed number of predicted slots per scene
    group: str  # loss-weight group: "low", "medium" or "high"


CATEGORIES = (
    CategorySpec("VC", "vegetation cuboid", "cuboid", 178, "high"),
    CategorySpec("VE", "vegetation ellipsoid", "ellipsoid", 159, "high"),
    CategorySpec("VB", "vehicle big", "cuboid", 2, "low"),
    CategorySpec("VS", "vehicle small", "cuboid", 18, "medium"),
    CategorySpec("TW", "two wheelers", "cuboid", 6, "low"),
    CategorySpec("H", "human", "cuboid", 5, "low"),
    CategorySpec("CB", "construction big", "cuboid", 16, "medium"),
    CategorySpec("CS", "construction small", "cuboid", 77, "high"),
    CategorySpec("P", "pole", "cuboid", 19, "medium"),
    CategorySpec("TC", "traffic control", "cuboid", 17, "medium"),
    CategorySpec("O", "object", "cuboid", 17, "medium"),
)
CATEGORY_BY_CODE = {c.code: c for c in CATEGORIES}
CATEGORY_CODES = tuple(c.code for c in CATEGORIES)
TOTAL_SLOTS = sum(c.count for c in CATEGORIES)
VEGETATION = ("VC", "VE")

GROUND_CLASSES = ("road", "sidewalk", "parking", "terrain", "ground")
GROUND_INDEX = {name: i for i, name in enumerate(GROUND_CLASSES)}

# Label 0 is empty; ground classes come first so that the lower id wins
# height ties when merging rasters.
EMPTY_LABEL = 0
LABELS = ("empty",) + GROUND_CLASSES + CATEGORY_CODES
LABEL_ID = {name: i for i, name in enumerate(LABELS)}
N_CLASSES = len(LABELS) - 1


def category(code):
    try:
        return CATEGORY_BY_CODE[code]
    except KeyError:
        raise ConfigError(f"unknown object category {code!r}") from None


def ground_label(cls):
    return LABEL_ID[cls]


def object_label(code):
    return LABEL_ID[code]
