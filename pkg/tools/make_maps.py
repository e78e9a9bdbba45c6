"""Regenerate the bundled PNG maps under src/simdem/data/maps.

    python tools/make_maps.py
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

OUT = Path(__file__).resolve().parents[1] / "src" / "simdem" / "data" / "maps"

PALETTE = {
    "boundary": "#000000",
    "walkable": "#00c000",
    "landmark": "#ffd700",
    "location:toilet": "#0000ff",
    "location:dining": "#ff8000",
    "location:clinic": "#ff0000",
    "location:physio": "#8000ff",
    "location:social-area": "#00ffff",
    "location:nurse-station": "#ff00ff",
}
for i in range(1, 9):
    PALETTE[f"location:home:p{i}"] = "#{:02x}{:02x}{:02x}".format(0x80, 0x40 + 8 * i, 0x10 * i)


def rgb(feature: str) -> tuple[int, int, int]:
    h = PALETTE[feature].lstrip("#")
    return int(h[0:2], 16), int(h[2:4], 16), int(h[4:6], 16)


class Canvas:
    def __init__(self, w: int, h: int):
        self.a = np.zeros((h, w, 3), dtype=np.uint8)  # all boundary

    def fill(self, x0: int, y0: int, x1: int, y1: int, feature: str) -> None:
        """Fill the inclusive rectangle."""
        self.a[y0:y1 + 1, x0:x1 + 1] = rgb(feature)

    def dot(self, x: int, y: int, feature: str) -> None:
        self.a[y, x] = rgb(feature)

    def save(self, name: str) -> None:
        OUT.mkdir(parents=True, exist_ok=True)
        Image.fromarray(self.a, "RGB").save(OUT / name)


def corridor() -> None:
    c = Canvas(24, 5)
    c.fill(1, 1, 22, 3, "walkable")
    c.fill(1, 1, 3, 3, "location:home:p1")
    c.fill(20, 1, 22, 3, "location:dining")
    c.dot(12, 2, "landmark")
    c.save("corridor.png")


def ward() -> None:
    c = Canvas(30, 20)
    c.fill(1, 8, 28, 10, "walkable")  # main hallway
    # north rooms, doors in wall row 7
    c.fill(1, 1, 6, 6, "location:home:p1")
    c.fill(8, 1, 13, 6, "location:home:p2")
    c.fill(15, 1, 21, 6, "location:clinic")
    c.fill(23, 1, 28, 6, "location:toilet")
    for x in (3, 10, 18, 25):
        c.fill(x, 7, x + 1, 7, "walkable")
    # south rooms, doors in wall row 11
    c.fill(1, 12, 12, 18, "location:dining")
    c.fill(14, 12, 19, 18, "location:physio")
    c.fill(21, 12, 24, 18, "location:social-area")
    c.fill(26, 12, 28, 18, "location:nurse-station")
    for x in (5, 16, 22, 27):
        c.fill(x, 11, x + 1, 11, "walkable")
    c.dot(14, 9, "landmark")
    c.save("ward.png")


def ward_large() -> None:
    c = Canvas(60, 40)
    # two east-west corridors joined by three north-south corridors
    c.fill(1, 9, 58, 11, "walkable")
    c.fill(1, 28, 58, 30, "walkable")
    for x in (14, 43):
        c.fill(x, 12, x + 2, 27, "walkable")
    c.fill(1, 12, 3, 27, "walkable")

    # resident rooms along the north corridor, 2-wide doors in row 8
    rooms = [(1, 7), (9, 15), (17, 23), (25, 31), (33, 39), (41, 47), (49, 58)]
    for i, (x0, x1) in enumerate(rooms):
        c.fill(x0, 1, x1, 7, f"location:home:p{i + 1}")
        d = (x0 + x1) // 2
        c.fill(d, 8, d + 1, 8, "walkable")

    # south wing: dining, physio, clinic; doors in row 31
    c.fill(1, 32, 23, 38, "location:dining")
    c.fill(25, 32, 39, 38, "location:physio")
    c.fill(41, 32, 58, 38, "location:clinic")
    for x in (6, 18, 31, 49):
        c.fill(x, 31, x + 1, 31, "walkable")

    # middle blocks
    c.fill(5, 13, 12, 18, "location:toilet")
    c.fill(4, 15, 4, 16, "walkable")
    c.fill(5, 21, 12, 26, "location:social-area")
    c.fill(4, 23, 4, 24, "walkable")
    c.fill(18, 13, 26, 19, "location:nurse-station")
    c.fill(17, 16, 17, 17, "walkable")
    c.fill(34, 21, 41, 26, "location:toilet")
    c.fill(42, 23, 42, 24, "walkable")
    c.fill(47, 13, 57, 18, "location:home:p8")
    c.fill(46, 15, 46, 16, "walkable")

    # corridor junction signs, plus pictures in the large common rooms
    for x, y in ((15, 10), (44, 10), (15, 29), (44, 29), (30, 10), (2, 20),
                 (12, 35), (32, 35), (50, 35)):
        c.dot(x, y, "landmark")
    c.save("ward_large.png")


if __name__ == "__main__":
    corridor()
    ward()
    ward_large()
    for p in sorted(OUT.glob("*.png")):
        print(p)
