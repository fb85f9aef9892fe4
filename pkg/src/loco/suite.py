"""Bundled benchmark suite: 24 layouts over 2 to 4 objects.

Covers simple relation-annotated pairs, adjacent-box cases prone to object
fusion (``fusion_*``), three-object arrangements including multi-word
phrases and off-grid boxes, and four-object grids. Shipped as JSON files
under ``suite_data/`` so the benchmark can also be pointed at any other
directory of layout documents.
"""

from __future__ import annotations

import json
from pathlib import Path

from .diffmath import ContractError
from .layout import Layout, LayoutError, layout_from_dict

__all__ = ["BUNDLED_LAYOUTS", "bundled_suite_dir", "load_suite", "write_suite"]


def _obj(phrase: str, box: list[float]) -> dict:
    return {"phrase": phrase, "box": box}


def _rel(a: int, b: int, kind: str) -> dict:
    return {"a": a, "b": b, "kind": kind}


BUNDLED_LAYOUTS: dict[str, dict] = {
    # Two objects with declared relations.
    "pair_cat_dog": {
        "prompt": "cat beside dog",
        "objects": [_obj("cat", [0.0625, 0.125, 0.4375, 0.875]),
                    _obj("dog", [0.5625, 0.125, 0.9375, 0.875])],
        "relations": [_rel(0, 1, "left"), _rel(1, 0, "right")],
    },
    "pair_bird_car": {
        "prompt": "bird above car",
        "objects": [_obj("bird", [0.25, 0.0625, 0.75, 0.4375]),
                    _obj("car", [0.25, 0.5625, 0.75, 0.9375])],
        "relations": [_rel(0, 1, "above"), _rel(1, 0, "below")],
    },
    "pair_tree_star": {
        "prompt": "tree before star",
        "objects": [_obj("tree", [0.0625, 0.25, 0.375, 0.9375]),
                    _obj("star", [0.625, 0.0625, 0.9375, 0.5])],
        "relations": [_rel(0, 1, "left"), _rel(1, 0, "above")],
    },
    "pair_moon_boat": {
        "prompt": "moon over boat",
        "objects": [_obj("moon", [0.3125, 0.0625, 0.6875, 0.375]),
                    _obj("boat", [0.25, 0.5625, 0.75, 0.9375])],
        "relations": [_rel(0, 1, "above")],
    },
    "pair_fox_owl": {
        "prompt": "fox chasing owl",
        "objects": [_obj("fox", [0.5, 0.5, 0.9375, 0.9375]),
                    _obj("owl", [0.0625, 0.0625, 0.4375, 0.4375])],
        "relations": [_rel(0, 1, "right"), _rel(0, 1, "below")],
    },
    "pair_bell_drum": {
        "prompt": "bell and drum",
        "objects": [_obj("bell", [0.125, 0.3125, 0.4375, 0.6875]),
                    _obj("drum", [0.5625, 0.25, 0.9375, 0.75])],
        "relations": [_rel(0, 1, "left")],
    },
    "pair_kite_deer": {
        "prompt": "kite floats over deer",
        "objects": [_obj("kite", [0.375, 0.0625, 0.625, 0.3125]),
                    _obj("deer", [0.25, 0.5, 0.75, 0.9375])],
        "relations": [_rel(0, 1, "above")],
    },
    "pair_crab_swan": {
        "prompt": "crab below swan",
        "objects": [_obj("crab", [0.25, 0.625, 0.75, 0.9375]),
                    _obj("swan", [0.25, 0.0625, 0.75, 0.375])],
        "relations": [_rel(0, 1, "below"), _rel(1, 0, "above")],
    },
    # Adjacent boxes: the object-fusion stress cases.
    "fusion_cup_hat": {
        "prompt": "cup hat",
        "objects": [_obj("cup", [0.125, 0.25, 0.4375, 0.75]),
                    _obj("hat", [0.5, 0.25, 0.8125, 0.75])],
    },
    "fusion_frog_fish": {
        "prompt": "frog fish",
        "objects": [_obj("frog", [0.25, 0.0625, 0.75, 0.5]),
                    _obj("fish", [0.25, 0.5625, 0.75, 0.9375])],
    },
    "fusion_ball_cup": {
        "prompt": "ball cup",
        "objects": [_obj("ball", [0.0625, 0.3125, 0.375, 0.6875]),
                    _obj("cup", [0.4375, 0.3125, 0.75, 0.6875])],
    },
    "fusion_lamp_book": {
        "prompt": "lamp book",
        "objects": [_obj("lamp", [0.125, 0.125, 0.5, 0.875]),
                    _obj("book", [0.5, 0.125, 0.875, 0.875])],
    },
    "fusion_star_boat": {
        "prompt": "star boat",
        "objects": [_obj("star", [0.3125, 0.0625, 0.6875, 0.5]),
                    _obj("boat", [0.3125, 0.5, 0.6875, 0.9375])],
    },
    "fusion_crab_shell": {
        "prompt": "crab shell",
        "objects": [_obj("crab", [0.0625, 0.375, 0.4375, 0.875]),
                    _obj("shell", [0.5, 0.375, 0.9375, 0.875])],
    },
    # Three objects.
    "triple_split": {
        "prompt": "tree with boat and star",
        "objects": [_obj("tree", [0.0625, 0.0625, 0.375, 0.9375]),
                    _obj("boat", [0.4375, 0.0625, 0.9375, 0.4375]),
                    _obj("star", [0.4375, 0.5625, 0.9375, 0.9375])],
        "relations": [_rel(0, 1, "left"), _rel(0, 2, "left"),
                      _rel(1, 2, "above")],
    },
    "triple_row": {
        "prompt": "fox owl bee",
        "objects": [_obj("fox", [0.0625, 0.3125, 0.3125, 0.6875]),
                    _obj("owl", [0.375, 0.3125, 0.625, 0.6875]),
                    _obj("bee", [0.6875, 0.3125, 0.9375, 0.6875])],
        "relations": [_rel(0, 1, "left"), _rel(1, 2, "left")],
    },
    "triple_stack": {
        "prompt": "moon kite drum",
        "objects": [_obj("moon", [0.3125, 0.0625, 0.6875, 0.3125]),
                    _obj("kite", [0.3125, 0.375, 0.6875, 0.625]),
                    _obj("drum", [0.3125, 0.6875, 0.6875, 0.9375])],
        "relations": [_rel(0, 1, "above"), _rel(1, 2, "above")],
    },
    "triple_phrases": {
        "prompt": "red cat watches blue ball near lamp",
        "objects": [_obj("red cat", [0.0625, 0.125, 0.375, 0.625]),
                    _obj("blue ball", [0.625, 0.125, 0.9375, 0.625]),
                    _obj("lamp", [0.3125, 0.6875, 0.6875, 0.9375])],
        "relations": [_rel(0, 1, "left"), _rel(2, 0, "below")],
    },
    "triple_diagonal": {
        "prompt": "bell deer swan",
        "objects": [_obj("bell", [0.0625, 0.0625, 0.3125, 0.3125]),
                    _obj("deer", [0.375, 0.375, 0.625, 0.625]),
                    _obj("swan", [0.6875, 0.6875, 0.9375, 0.9375])],
        "relations": [_rel(0, 2, "left"), _rel(0, 2, "above")],
    },
    "triple_offgrid": {
        "prompt": "ant fox shell",
        "objects": [_obj("ant", [0.1, 0.1, 0.42, 0.55]),
                    _obj("fox", [0.55, 0.08, 0.93, 0.5]),
                    _obj("shell", [0.3, 0.62, 0.72, 0.92])],
        "relations": [_rel(0, 1, "left"), _rel(2, 0, "below")],
    },
    # Four objects.
    "quad_grid": {
        "prompt": "fish lamp book cup",
        "objects": [_obj("fish", [0.0625, 0.0625, 0.4375, 0.4375]),
                    _obj("lamp", [0.5625, 0.0625, 0.9375, 0.4375]),
                    _obj("book", [0.0625, 0.5625, 0.4375, 0.9375]),
                    _obj("cup", [0.5625, 0.5625, 0.9375, 0.9375])],
        "relations": [_rel(0, 1, "left"), _rel(0, 2, "above"),
                      _rel(2, 3, "left")],
    },
    "quad_corners": {
        "prompt": "cat dog bird fox in corners",
        "objects": [_obj("cat", [0.0625, 0.0625, 0.375, 0.375]),
                    _obj("dog", [0.625, 0.0625, 0.9375, 0.375]),
                    _obj("bird", [0.0625, 0.625, 0.375, 0.9375]),
                    _obj("fox", [0.625, 0.625, 0.9375, 0.9375])],
        "relations": [_rel(0, 1, "left"), _rel(1, 3, "above")],
    },
    "quad_row": {
        "prompt": "ant bee owl crab",
        "objects": [_obj("ant", [0.0625, 0.375, 0.25, 0.625]),
                    _obj("bee", [0.3125, 0.375, 0.5, 0.625]),
                    _obj("owl", [0.5625, 0.375, 0.75, 0.625]),
                    _obj("crab", [0.8125, 0.375, 0.9375, 0.625])],
        "relations": [_rel(0, 1, "left"), _rel(1, 2, "left"),
                      _rel(2, 3, "left")],
    },
    "quad_mixed": {
        "prompt": "swan over kite near drum and bell",
        "objects": [_obj("swan", [0.0625, 0.0625, 0.5, 0.4375]),
                    _obj("kite", [0.0625, 0.5625, 0.5, 0.9375]),
                    _obj("drum", [0.5625, 0.0625, 0.9375, 0.4375]),
                    _obj("bell", [0.5625, 0.5625, 0.9375, 0.9375])],
        "relations": [_rel(0, 1, "above"), _rel(0, 2, "left")],
    },
}


def bundled_suite_dir() -> Path:
    """Directory of the layout files shipped with the package."""
    return Path(__file__).parent / "suite_data"


def write_suite(directory: Path | str) -> list[Path]:
    """Materialize the bundled layouts as JSON files in a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, doc in BUNDLED_LAYOUTS.items():
        path = directory / f"{name}.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        written.append(path)
    return written


def load_suite(directory: Path | str) -> list[tuple[str, Layout]]:
    """Parse every ``*.json`` layout in a directory, sorted by name.

    The first malformed file aborts the load with its name in the error.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ContractError(f"suite directory {directory} does not exist")
    suite = []
    for path in sorted(directory.glob("*.json")):
        try:
            suite.append((path.stem, layout_from_dict(
                json.loads(path.read_text()))))
        except (LayoutError, json.JSONDecodeError) as err:
            raise LayoutError(f"{path.name}: {err}") from None
    if not suite:
        raise ContractError(f"suite directory {directory} has no layouts")
    return suite
