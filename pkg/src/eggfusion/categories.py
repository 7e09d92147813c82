"""Fixed category table and image normalization constants."""

from __future__ import annotations

CATEGORY_NAMES: tuple[str, ...] = (
    "Ascaris lumbricoides",
    "Capillaria philippinensis",
    "Enterobius vermicularis",
    "Fasciolopsis buski",
    "Hookworm egg",
    "Hymenolepis diminuta",
    "Hymenolepis nana",
    "Opisthorchis viverrine",
    "Paragonimus spp",
    "Taenia spp. egg",
    "Trichuris trichiura",
)
NUM_CLASSES = len(CATEGORY_NAMES)

NAME_TO_ID: dict[str, int] = {name: i for i, name in enumerate(CATEGORY_NAMES)}

# Per-channel RGB statistics of ImageNet, on the [0, 1] scale.
IMAGENET_MEAN: tuple[float, float, float] = (0.485, 0.456, 0.406)
IMAGENET_STD: tuple[float, float, float] = (0.229, 0.224, 0.225)

DETECTOR_SIDE = 512
CLASSIFIER_SIDE = 600
FEATURE_DIM = 2560


def _normalize_name(name: str) -> str:
    return " ".join(name.replace("_", " ").replace(".", ". ").split()).lower().rstrip(".")


_LOOSE = {_normalize_name(n): i for i, n in enumerate(CATEGORY_NAMES)}
# Spellings used by the public challenge release.
_LOOSE.update(
    {
        "capillaria philippinensis": 1,
        "hookworm": 4,
        "opisthorchis viverrini": 7,
        "paragonimus": 8,
        "taenia": 9,
        "taenia spp": 9,
    }
)


def category_id(name: str) -> int:
    """Map a category name onto its fixed id.

    Matching ignores case, underscores and repeated whitespace. Raises
    KeyError for names outside the 11-class table.
    """
    if name in NAME_TO_ID:
        return NAME_TO_ID[name]
    key = _normalize_name(name)
    if key not in _LOOSE:
        raise KeyError(name)
    return _LOOSE[key]


def category_map() -> dict[int, str]:
    return dict(enumerate(CATEGORY_NAMES))
