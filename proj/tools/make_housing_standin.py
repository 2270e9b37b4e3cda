#!/usr/bin/env python3
"""Writes a synthetic stand-in for the California housing table.

Same header and row count as the public dataset, with roughly matching
marginals and a nonlinear target. Used when the real file is unavailable.
"""
import argparse
import math
import random

HEADER = ["MedInc", "HouseAge", "AveRooms", "AveBedrms", "Population",
          "AveOccup", "Latitude", "Longitude", "MedHouseVal"]


def row(rng):
    inc = min(max(rng.lognormvariate(1.25, 0.45), 0.5), 15.0)
    age = float(rng.randint(1, 52))
    rooms = max(rng.gauss(5.2 + 0.25 * (inc - 3.8), 1.0), 1.0)
    beds = max(rng.gauss(1.05, 0.12), 0.5)
    pop = max(rng.lognormvariate(7.05, 0.75), 3.0)
    occ = max(rng.lognormvariate(1.0, 0.3), 0.7)
    north = rng.random() < 0.45
    lat = rng.gauss(37.8, 0.6) if north else rng.gauss(34.1, 0.5)
    lon = -122.2 + 0.9 * (37.8 - lat) + rng.gauss(0.0, 0.4)
    coast = math.exp(-abs(lon + 121.7 - 0.9 * (37.4 - lat)) / 0.6)
    y = (0.45 * inc + 0.8 * coast + 0.006 * age - 0.15 * math.log(occ)
         + 0.3 * math.tanh(rooms - 5.0) + rng.gauss(0.0, 0.35))
    y = min(max(y, 0.15), 5.00001)
    return [inc, age, rooms, beds, pop, occ, lat, lon, y]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--rows", type=int, default=20640)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w") as f:
        f.write(",".join(HEADER) + "\n")
        for _ in range(args.rows):
            f.write(",".join(f"{v:.6g}" for v in row(rng)) + "\n")


if __name__ == "__main__":
    main()
