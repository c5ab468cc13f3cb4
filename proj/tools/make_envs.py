#!/usr/bin/env python3
"""Writes the bundled synthetic environments into data/.

Walls are axis-aligned rectangles in meters; doors are rectangles carved back out.
"""
import os
import sys

RES = 0.05


def render(name, width_m, height_m, walls, doors, dock, zones, thickness=0.1):
    w, h = round(width_m / RES), round(height_m / RES)
    grid = [[False] * w for _ in range(h)]

    def fill(x0, y0, x1, y1, value):
        for y in range(max(0, round(y0 / RES)), min(h, round(y1 / RES))):
            for x in range(max(0, round(x0 / RES)), min(w, round(x1 / RES))):
                grid[y][x] = value

    # outer boundary
    fill(0, 0, width_m, thickness, True)
    fill(0, height_m - thickness, width_m, height_m, True)
    fill(0, 0, thickness, height_m, True)
    fill(width_m - thickness, 0, width_m, height_m, True)
    for x0, y0, x1, y1 in walls:
        fill(x0, y0, x1, y1, True)
    for x0, y0, x1, y1 in doors:
        fill(x0, y0, x1, y1, False)

    lines = [f"name: {name}", f"resolution: {RES}", f"dock: {dock[0]} {dock[1]} {dock[2]}"]
    lines += [f"feature_zone: {z[0]} {z[1]} {z[2]} {z[3]} {z[4]}" for z in zones]
    lines.append("grid:")
    for y in reversed(range(h)):  # first grid line is the top row
        lines.append("".join("#" if c else "." for c in grid[y]))
    return "\n".join(lines) + "\n"


def hwall(x0, x1, y, t=0.1):
    return (x0, y - t / 2, x1, y + t / 2)


def vwall(x, y0, y1, t=0.1):
    return (x - t / 2, y0, x + t / 2, y1)


def door_h(x, y, width=0.9):
    return (x, y - 0.1, x + width, y + 0.1)


def door_v(x, y, width=0.9):
    return (x - 0.1, y, x + 0.1, y + width)


def room():
    return render("room_5x5", 5.0, 5.0, [], [], (1.0, 1.0, 0.0), [])


def two_rooms():
    walls = [vwall(5.0, 0, 5.0)]
    doors = [door_v(5.0, 2.0)]
    return render("two_rooms", 10.0, 5.0, walls, doors, (1.0, 1.0, 0.0), [(3.0, 0.0, 5.0, 5.0, 0.2)])


def home():
    # 15 m x 10 m: living room, kitchen, hallway and three bedrooms, two loops
    walls = [
        hwall(0, 15, 5.0),        # splits north and south
        vwall(6.0, 0, 5.0),       # living | kitchen
        vwall(5.0, 5.0, 10.0),    # bedroom 1 | hallway
        vwall(10.0, 5.0, 10.0),   # bedroom 2 | bedroom 3
        vwall(11.0, 0, 5.0),      # kitchen | utility
        hwall(5.0, 10.0, 7.5),    # hallway | bedroom 2
    ]
    doors = [
        door_v(6.0, 1.5), door_v(6.0, 3.4),     # two openings between living and kitchen
        door_h(2.0, 5.0), door_h(7.0, 5.0),     # bedroom 1 and hallway from the south
        door_h(12.5, 5.0),                      # bedroom 3 from utility
        door_v(10.0, 5.7),                      # hallway to bedroom 3
        door_h(7.5, 7.5),                       # hallway to bedroom 2
        door_v(11.0, 2.0),                      # kitchen to utility
        door_v(5.0, 8.5),                       # bedroom 1 to bedroom 2 side
    ]
    zones = [(6.0, 0.0, 11.0, 5.0, 0.6), (5.0, 5.0, 10.0, 7.5, 0.1), (11.0, 0.0, 15.0, 5.0, 0.8)]
    return render("home_150", 15.0, 10.0, walls, doors, (1.5, 1.5, 0.0), zones)


def office():
    # 20 m x 10 m: central corridor with offices on both sides and an open-plan end
    walls = [hwall(0, 15.0, 4.0), hwall(0, 15.0, 6.0)]
    for x in (3.75, 7.5, 11.25, 15.0):
        walls.append(vwall(x, 0, 4.0))
        walls.append(vwall(x, 6.0, 10.0))
    doors = [(15.0 - 0.1, 4.0, 15.0 + 0.1, 6.0)]  # corridor opens onto the open-plan area
    for x in (0.0, 3.75, 7.5, 11.25):
        doors.append(door_h(x + 1.4, 4.0))
        doors.append(door_h(x + 1.4, 6.0))
    doors += [door_v(15.0, 1.0), door_v(15.0, 8.0)]  # back doors into the open plan
    zones = [(0.0, 4.0, 15.0, 6.0, 0.1), (15.0, 0.0, 20.0, 10.0, 0.7)]
    return render("office_200", 20.0, 10.0, walls, doors, (1.0, 5.0, 0.0), zones)


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data")
    os.makedirs(out, exist_ok=True)
    for fname, text in [("room_5x5.env", room()), ("two_rooms.env", two_rooms()),
                        ("home_150.env", home()), ("office_200.env", office())]:
        with open(os.path.join(out, fname), "w") as f:
            f.write(text)


if __name__ == "__main__":
    main()
