"""Regenerate the bundled scenario JSON files from their builders."""

import argparse

from mindkit import fixtures


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="target directory (default: the package data dir)")
    args = ap.parse_args()
    for path in fixtures.write_all(args.out):
        print(path)


if __name__ == "__main__":
    main()
