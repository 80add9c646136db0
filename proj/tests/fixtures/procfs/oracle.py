#!/usr/bin/env python3
"""Regenerates expected.json for the procfs fixtures.

Independent of the C++ parser: a straightforward reading of the file
formats, used as the oracle for the golden tests. Run from this directory.
"""
import json
import os
import re

TRACKED = {"Rss": "rss_kib", "Pss": "pss_kib", "Referenced": "referenced_kib", "Swap": "swap_kib"}
BASE_PAGE_KIB = 4


def rollup(text):
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        return {"empty": True, "rss_kib": 0, "pss_kib": 0, "referenced_kib": 0,
                "swap_kib": 0, "missing_fields": []}
    if re.match(r"^[0-9a-f]+-[0-9a-f]+ ", lines[0]):
        lines = lines[1:]
    seen = {}
    for l in lines:
        m = re.fullmatch(r"(\w+):\s+(\d+)(?:\s+(\w+))?\s*", l)
        if not m:
            return {"error": "ParseError"}
        key, value, unit = m.group(1), int(m.group(2)), m.group(3)
        if key in seen or (unit is not None and unit != "kB"):
            return {"error": "ParseError"}
        if key in TRACKED and unit != "kB":
            return {"error": "ParseError"}
        seen[key] = value
    if "Rss" not in seen:
        return {"error": "ParseError"}
    out = {TRACKED[k]: seen.get(k, 0) for k in TRACKED}
    out["empty"] = False
    out["missing_fields"] = [k for k in ("Pss", "Referenced", "Swap") if k not in seen]
    return out


def numa(text):
    pages = {}
    for l in text.splitlines():
        if not l.strip():
            continue
        fields = l.split()
        if not re.fullmatch(r"[0-9a-f]+", fields[0]):
            return {"error": "ParseError"}
        kib = BASE_PAGE_KIB
        counts = []
        for f in fields[1:]:
            if f.startswith("kernelpagesize_kB="):
                kib = int(f.split("=", 1)[1])
            elif re.match(r"N[^=]*=", f):
                m = re.fullmatch(r"N(\d+)=(\d+)", f)
                if not m:
                    return {"error": "ParseError"}
                counts.append((m.group(1), int(m.group(2))))
        for node, count in counts:
            pages[node] = pages.get(node, 0) + count * (kib // BASE_PAGE_KIB)
    return {"node_pages": pages}


expected = {}
for name in sorted(os.listdir(".")):
    with open(name) as f:
        text = f.read()
    if name.endswith(".smaps_rollup"):
        expected[name] = rollup(text)
    elif name.endswith(".numa_maps"):
        expected[name] = numa(text)
with open("expected.json", "w") as f:
    json.dump(expected, f, indent=2, sort_keys=True)
    f.write("\n")
