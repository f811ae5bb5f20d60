#!/usr/bin/env python3
"""Convert the MULAN `emotions` benchmark into this repo's dense CSV pair.

The emotions dataset (593 music clips, 72 rhythm/timbre features, 6 mood
labels) ships as an ARFF file plus a label-list XML in the MULAN repository:
https://github.com/tsoumakas/mulan (data/multi-label/emotions/).

Usage:
    python scripts/prepare_emotions.py path/to/emotions.arff [--xml emotions.xml] [--out data/emotions]

Writes features.csv (N x D, no header) and labels.csv (N x K of 0/1).
"""
import argparse
import re
import xml.etree.ElementTree as ET
from pathlib import Path


def parse_arff(path):
    attrs = []
    rows = []
    in_data = False
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("%"):
            continue
        if in_data:
            rows.append(line.split(","))
            continue
        low = line.lower()
        if low.startswith("@attribute"):
            m = re.match(r"@attribute\s+'?([^\s']+)'?\s+", line, re.IGNORECASE)
            attrs.append(m.group(1))
        elif low.startswith("@data"):
            in_data = True
    return attrs, rows


def label_names_from_xml(path):
    ns = {"m": "http://mulan.sourceforge.net/labels"}
    root = ET.parse(path).getroot()
    return [el.attrib["name"] for el in root.findall("m:label", ns)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("arff", help="emotions.arff from the MULAN data folder")
    ap.add_argument("--xml", default=None, help="emotions.xml label list (default: alongside the arff)")
    ap.add_argument("--out", default="data/emotions", help="output directory")
    args = ap.parse_args()

    xml_path = args.xml or str(Path(args.arff).with_suffix(".xml"))
    labels = label_names_from_xml(xml_path)
    attrs, rows = parse_arff(args.arff)

    label_idx = [attrs.index(name) for name in labels]
    feat_idx = [i for i in range(len(attrs)) if i not in set(label_idx)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "features.csv", "w") as f:
        for r in rows:
            f.write(",".join(r[i] for i in feat_idx) + "\n")
    with open(out / "labels.csv", "w") as f:
        for r in rows:
            vals = [r[i] for i in label_idx]
            if any(v not in ("0", "1") for v in vals):
                raise SystemExit(f"non-binary label value in row: {vals}")
            f.write(",".join(vals) + "\n")
    with open(out / "feature_names.txt", "w") as f:
        f.write("\n".join(attrs[i] for i in feat_idx) + "\n")
    with open(out / "label_names.txt", "w") as f:
        f.write("\n".join(labels) + "\n")
    print(f"wrote {len(rows)} rows, {len(feat_idx)} features, {len(labels)} labels to {out}/")


if __name__ == "__main__":
    main()
