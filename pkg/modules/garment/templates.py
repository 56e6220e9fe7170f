"""Category templates as unions of grid cells.

A template is built in integer cell coordinates (i, j): cell (i, j) covers
[i, i+1] x [j, j+1] in units of the grid spacing. The body is centred on
i = 0 and y grows from hem to shoulder. "L" is always the -x side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Set, Tuple

Cell = Tuple[int, int]
Corner = Tuple[int, int]


class Category(str, Enum):
    TOP = "top"
    TROUSER = "trouser"
    DRESS = "dress"


class PartLabel(IntEnum):
    BODY = 0
    SLEEVE_L = 1
    SLEEVE_R = 2
    COLLAR = 3
    LEG_L = 4
    LEG_R = 5
    SKIRT = 6

    @property
    def display(self) -> str:
        return {
            "BODY": "Body", "SLEEVE_L": "SleeveL", "SLEEVE_R": "SleeveR",
            "COLLAR": "Collar", "LEG_L": "LegL", "LEG_R": "LegR", "SKIRT": "Skirt",
        }[self.name]


# Lower value wins when a vertex touches cells of several parts.
LABEL_PRIORITY = {
    PartLabel.COLLAR: 0,
    PartLabel.BODY: 1,
    PartLabel.SLEEVE_L: 2,
    PartLabel.SLEEVE_R: 2,
    PartLabel.LEG_L: 2,
    PartLabel.LEG_R: 2,
    PartLabel.SKIRT: 2,
}

SKELETON_ORDER: Dict[Category, List[str]] = {
    Category.TOP: [
        "collar-L", "collar-R", "shoulder-L", "shoulder-R", "cuff-L",
        "cuff-R", "armpit-L", "armpit-R", "hem-L", "hem-R",
    ],
    Category.TROUSER: [
        "waist-L", "waist-R", "waist-C", "crotch",
        "leg-L-outer", "leg-L-inner", "leg-R-inner", "leg-R-outer",
    ],
    Category.DRESS: [
        "collar-L", "collar-R", "shoulder-L", "shoulder-R",
        "waist-L", "waist-R", "hem-L", "hem-R",
    ],
}

SEAMS: Dict[Category, List[Tuple[str, str]]] = {
    Category.TOP: [
        ("collar-L", "collar-R"), ("collar-L", "shoulder-L"), ("collar-R", "shoulder-R"),
        ("shoulder-L", "cuff-L"), ("shoulder-R", "cuff-R"),
        ("cuff-L", "armpit-L"), ("cuff-R", "armpit-R"),
        ("shoulder-L", "armpit-L"), ("shoulder-R", "armpit-R"),
        ("armpit-L", "hem-L"), ("armpit-R", "hem-R"), ("hem-L", "hem-R"),
    ],
    Category.TROUSER: [
        ("waist-L", "waist-C"), ("waist-C", "waist-R"), ("waist-C", "crotch"),
        ("waist-L", "leg-L-outer"), ("leg-L-outer", "leg-L-inner"),
        ("leg-L-inner", "crotch"), ("crotch", "leg-R-inner"),
        ("leg-R-inner", "leg-R-outer"), ("leg-R-outer", "waist-R"),
    ],
    Category.DRESS: [
        ("collar-L", "collar-R"), ("collar-L", "shoulder-L"), ("collar-R", "shoulder-R"),
        ("shoulder-L", "waist-L"), ("shoulder-R", "waist-R"), ("waist-L", "waist-R"),
        ("waist-L", "hem-L"), ("waist-R", "hem-R"), ("hem-L", "hem-R"),
    ],
}


def grid_spacing(edge_length: float) -> float:
    """Cell size whose two axis edges and one diagonal average to edge_length."""
    return edge_length * 3.0 / (2.0 + math.sqrt(2.0))


def cell_count(length: float, spacing: float) -> int:
    """Number of cells spanning ``length`` (round half up)."""
    return int(math.floor(length / spacing + 0.5))


@dataclass
class Template:
    """Cells per part plus landmark corners, in cell coordinates."""
    category: Category
    regions: Dict[PartLabel, Set[Cell]] = field(default_factory=dict)
    landmarks: Dict[str, Corner] = field(default_factory=dict)

    def add(self, label: PartLabel, i0: int, i1: int, j0: int, j1: int) -> None:
        cells = self.regions.setdefault(label, set())
        for i in range(i0, i1):
            for j in range(j0, j1):
                cells.add((i, j))

    def cells(self) -> Dict[Cell, PartLabel]:
        """Cell -> winning label."""
        out: Dict[Cell, PartLabel] = {}
        for label in sorted(self.regions, key=lambda l: -LABEL_PRIORITY[l]):
            for cell in self.regions[label]:
                out[cell] = label
        return out


# =============================================================================
# CATEGORY LAYOUTS
# =============================================================================

def _upper_body(t: Template, half: int, height: int, collar_half: int, collar_depth: int,
                sleeves: Tuple[Tuple[int, int], Tuple[int, int]], base: int) -> None:
    """Body rows [base, base+height) with collar block and side sleeves."""
    top = base + height
    t.add(PartLabel.BODY, -half, half, base, top)
    t.add(PartLabel.COLLAR, -collar_half, collar_half, top - collar_depth, top)
    (len_l, wid_l), (len_r, wid_r) = sleeves
    t.add(PartLabel.SLEEVE_L, -half - len_l, -half, top - wid_l, top)
    t.add(PartLabel.SLEEVE_R, half, half + len_r, top - wid_r, top)
    t.landmarks.update({
        "collar-L": (-collar_half, top), "collar-R": (collar_half, top),
        "collar-C": (0, top),
        "shoulder-L": (-half, top), "shoulder-R": (half, top),
        "cuff-L": (-half - len_l, top - wid_l), "cuff-R": (half + len_r, top - wid_r),
        "armpit-L": (-half, top - wid_l), "armpit-R": (half, top - wid_r),
    })


def top_template(half: int, height: int, collar_half: int, collar_depth: int,
                 sleeves: Tuple[Tuple[int, int], Tuple[int, int]]) -> Template:
    t = Template(Category.TOP)
    _upper_body(t, half, height, collar_half, collar_depth, sleeves, base=0)
    t.landmarks.update({"hem-L": (-half, 0), "hem-R": (half, 0), "hem-C": (0, 0)})
    return t


def trouser_template(half: int, height: int,
                     legs: Tuple[Tuple[int, int], Tuple[int, int]]) -> Template:
    t = Template(Category.TROUSER)
    (len_l, wid_l), (len_r, wid_r) = legs
    t.add(PartLabel.BODY, -half, half, 0, height)
    t.add(PartLabel.LEG_L, -half, -half + wid_l, -len_l, 0)
    t.add(PartLabel.LEG_R, half - wid_r, half, -len_r, 0)
    t.landmarks.update({
        "waist-L": (-half, height), "waist-R": (half, height), "waist-C": (0, height),
        "crotch": (0, 0),
        "leg-L-outer": (-half, -len_l), "leg-L-inner": (-half + wid_l, -len_l),
        "leg-R-inner": (half - wid_r, -len_r), "leg-R-outer": (half, -len_r),
    })
    return t


def dress_template(half: int, height: int, collar_half: int, collar_depth: int,
                   sleeves: Tuple[Tuple[int, int], Tuple[int, int]],
                   skirt_length: int, flare: Tuple[int, int]) -> Template:
    """Bodice on rows [0, height) and a staircase skirt on rows [-skirt_length, 0)."""
    t = Template(Category.DRESS)
    _upper_body(t, half, height, collar_half, collar_depth, sleeves, base=0)
    flare_l, flare_r = flare
    for r in range(1, skirt_length + 1):
        ext_l = int(math.floor(flare_l * r / skirt_length + 0.5))
        ext_r = int(math.floor(flare_r * r / skirt_length + 0.5))
        t.add(PartLabel.SKIRT, -half - ext_l, half + ext_r, -r, -r + 1)
    hem_l = flare_l if skirt_length else 0
    hem_r = flare_r if skirt_length else 0
    t.landmarks.update({
        "waist-L": (-half, 0), "waist-R": (half, 0),
        "hem-L": (-half - hem_l, -skirt_length), "hem-R": (half + hem_r, -skirt_length),
        "hem-C": (0, -skirt_length),
    })
    return t
