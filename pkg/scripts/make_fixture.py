"""Regenerate the bundled synthetic fixture in src/culturepaint/data.

Three cultural periods stacked in depth across three sites, plus one rare
decoration type and one tiny site that the default filter removes.
"""

from pathlib import Path

import numpy as np

from culturepaint.io import RawSherdRecord, write_counts

OUT = Path(__file__).resolve().parents[1] / "src" / "culturepaint" / "data"

TYPES = ["t1", "t2", "t3", "t4", "t5", "t6", "t7"]
CP_FREQ = np.array([
    [0.40, 0.25, 0.15, 0.10, 0.05, 0.03, 0.02],
    [0.05, 0.10, 0.40, 0.25, 0.10, 0.05, 0.05],
    [0.03, 0.05, 0.07, 0.10, 0.15, 0.25, 0.35],
])
PRECISION = 10.0
# (site, eu, levels, depth of CP boundaries)
UNITS = [
    ("A", "1", 10, (3, 7)),
    ("A", "2", 9, (2, 6)),
    ("B", "3", 10, (4, 8)),
    ("C", "4", 10, (3, 6)),
    ("C", "5", 8, (2, 5)),
]


def main():
    rng = np.random.default_rng(20240611)
    recs = []
    for site, eu, levels, (b1, b2) in UNITS:
        for level in range(levels):
            cp = 0 if level < b1 else (1 if level < b2 else 2)
            n = int(rng.integers(320, 680))
            p = rng.dirichlet(PRECISION * CP_FREQ[cp])
            counts = rng.multinomial(n, p)
            split = rng.binomial(counts, 0.6)
            for ru, part in (("a", split), ("b", counts - split)):
                for t, c in zip(TYPES, part):
                    if c:
                        recs.append(RawSherdRecord(site, eu, ru, level, t, int(c)))
            if rng.random() < 0.5:
                recs.append(RawSherdRecord(site, eu, "a", level, "rare", int(rng.integers(1, 20))))
    for level in range(3):
        for t in TYPES[:3]:
            recs.append(RawSherdRecord("D", "6", None, level, t, int(rng.integers(2, 9))))
    write_counts(recs, OUT / "synthetic_counts.csv")

    with open(OUT / "synthetic_rcd.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("eu,depth_cm,age_bp,age_sd\n")
        fh.write("1,25,620,40\n")
        fh.write("1,85,1410,60\n")
        fh.write("3,55,980,45\n")
        fh.write("4,40,900,50\n")


if __name__ == "__main__":
    main()
