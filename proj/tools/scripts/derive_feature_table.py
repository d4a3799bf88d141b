#!/usr/bin/env python3
"""Derive data/features.csv from PanPhon's ipa_bases.csv (MIT licensed).

Usage: derive_feature_table.py path/to/ipa_bases.csv > data/features.csv
"""
import csv
import sys

NAMES = {
    "syl": "syllabic", "son": "sonorant", "cons": "consonantal", "cont": "continuant",
    "delrel": "delayed_release", "lat": "lateral", "nas": "nasal", "strid": "strident",
    "voi": "voice", "sg": "spread_glottis", "cg": "constricted_glottis", "ant": "anterior",
    "cor": "coronal", "distr": "distributed", "lab": "labial", "hi": "high", "lo": "low",
    "back": "back", "round": "round", "velaric": "velaric", "tense": "tense", "long": "long",
    "hitone": "high_tone", "hireg": "high_register",
}
TONE_LETTERS = set("˩˨˧˦˥")


def main(path):
    with open(path, encoding="utf-8") as f:
        rows = list(csv.reader(f))
    header = rows[0]
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["phoneme"] + [NAMES[h] for h in header[1:]])
    seen = {}
    for row in rows[1:]:
        if row[0] in seen or row[0] in TONE_LETTERS:
            continue
        seen[row[0]] = row
        out.writerow(row)
    # ASCII g is common in transcriptions; alias it to U+0261.
    if "g" not in seen and "ɡ" in seen:
        out.writerow(["g"] + seen["ɡ"][1:])


if __name__ == "__main__":
    main(sys.argv[1])
