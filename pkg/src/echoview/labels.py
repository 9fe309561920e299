"""The 13 (view, contrast) classes."""

from __future__ import annotations

import enum

VIEWS = ("2ch", "3ch", "4ch", "5ch", "plax", "sax", "rv", "ssn")


class ViewLabel(enum.Enum):
    """Cardiac view with its contrast flag. ``index`` is the stable class id."""

    C_2CH = ("2ch", True)
    C_3CH = ("3ch", True)
    C_4CH = ("4ch", True)
    C_PLAX = ("plax", True)
    C_SAX = ("sax", True)
    NC_5CH = ("5ch", False)
    NC_PLAX = ("plax", False)
    NC_RV = ("rv", False)
    NC_SSN = ("ssn", False)
    NC_2CH = ("2ch", False)
    NC_3CH = ("3ch", False)
    NC_4CH = ("4ch", False)
    NC_SAX = ("sax", False)

    @property
    def view(self) -> str:
        return self.value[0]

    @property
    def contrast(self) -> bool:
        return self.value[1]

    @property
    def index(self) -> int:
        return _INDEX[self]

    @property
    def short(self) -> str:
        return ("c-" if self.contrast else "") + self.view

    @classmethod
    def from_index(cls, index: int) -> "ViewLabel":
        if not 0 <= index < NUM_CLASSES:
            raise ValueError(f"class index {index} outside [0, {NUM_CLASSES})")
        return _ORDER[index]

    @classmethod
    def from_parts(cls, view: str, contrast: bool) -> "ViewLabel":
        try:
            return cls((view, bool(contrast)))
        except ValueError:
            kind = "contrast" if contrast else "non-contrast"
            raise ValueError(f"no {kind} class for view {view!r}") from None

    def __str__(self) -> str:
        return self.short


_ORDER = tuple(ViewLabel)
_INDEX = {label: i for i, label in enumerate(_ORDER)}
NUM_CLASSES = len(_ORDER)
ALL_LABELS = _ORDER


def as_index(label) -> int:
    if isinstance(label, ViewLabel):
        return label.index
    idx = int(label)
    if idx != label:
        raise ValueError(f"class index must be an integer, got {label!r}")
    return idx
