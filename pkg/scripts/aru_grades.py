"""Print receptive-field extents and the per-level grades for a volume shape.

    python scripts/aru_grades.py 288 224 96 --levels 4
"""
import argparse
import sys

from cascadereg.aru import MAX_GRADE, compute_grades, level_architectures, receptive_field_depth
from cascadereg.cascade import level_dims


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dims", type=int, nargs=3)
    ap.add_argument("--levels", type=int, default=4)
    args = ap.parse_args(argv)

    print("grade  RF (slices)")
    for g in range(1, MAX_GRADE + 1):
        print(f"{g:5d}  {receptive_field_depth(g):11d}")
    dims = level_dims(args.dims, args.levels)
    grades = compute_grades(args.levels, [d[2] for d in dims])
    print("\nlevel  dims            grade  in-channels")
    for i, (d, g, arch) in enumerate(zip(dims, grades, level_architectures(dims))):
        print(f"{i:5d}  {str(d):14s}  {g:5d}  {arch.in_channels:11d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
