#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) into the plain-text
inputs of `graphcal ingest`.

    python3 scripts/cora_to_text.py path/to/cora out_dir
    graphcal --out cora_bundle ingest --edges out_dir/edges.txt \
        --features out_dir/features.txt --labels out_dir/labels.txt \
        --names "$(cat out_dir/names.txt)"

Node ids are assigned in file order of cora.content; classes in sorted name order.
Citations whose endpoints are missing from cora.content are skipped and counted.
"""

import argparse
import pathlib
import sys


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", type=pathlib.Path, help="directory holding cora.content and cora.cites")
    parser.add_argument("out", type=pathlib.Path, help="output directory")
    args = parser.parse_args()

    rows = []
    for line in (args.source / "cora.content").read_text().splitlines():
        fields = line.split()
        if fields:
            rows.append((fields[0], fields[1:-1], fields[-1]))
    index = {paper: i for i, (paper, _, _) in enumerate(rows)}
    classes = sorted({label for _, _, label in rows})
    class_id = {name: k for k, name in enumerate(classes)}

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "features.txt", "w") as f:
        for _, feats, _ in rows:
            f.write(" ".join(feats) + "\n")
    with open(args.out / "labels.txt", "w") as f:
        for _, _, label in rows:
            f.write(f"{class_id[label]}\n")
    (args.out / "names.txt").write_text(",".join(classes) + "\n")

    skipped = 0
    with open(args.out / "edges.txt", "w") as f:
        for line in (args.source / "cora.cites").read_text().splitlines():
            fields = line.split()
            if len(fields) != 2:
                continue
            cited, citing = fields
            if cited not in index or citing not in index:
                skipped += 1
                continue
            f.write(f"{index[cited]} {index[citing]}\n")

    print(f"{len(rows)} nodes, {len(classes)} classes, skipped {skipped} dangling citations",
          file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
