#!/usr/bin/env python3
"""Regenerates core/src/unicode_tables.inc from the unicodedata module.

Emits three tables used by the answer normalizer:
  - kPunctSymbolRanges: code point ranges with general category P* or S*
  - kSpaceRanges: category Z* plus the ASCII control whitespace 0x09-0x0D
  - kLowerDelta: simple one-to-one lowercase mappings above ASCII
"""

import sys
import unicodedata

OUT = "core/src/unicode_tables.inc"


def category_ranges(pred):
    ranges = []
    start = None
    for cp in range(0x110000):
        if pred(cp):
            if start is None:
                start = cp
        elif start is not None:
            ranges.append((start, cp - 1))
            start = None
    if start is not None:
        ranges.append((start, 0x10FFFF))
    return ranges


def main():
    cat = lambda cp: unicodedata.category(chr(cp))
    punct = category_ranges(lambda cp: cat(cp)[0] in ("P", "S"))
    space = category_ranges(lambda cp: cat(cp)[0] == "Z" or 0x09 <= cp <= 0x0D)

    lower = []
    for cp in range(128, 0x110000):
        c = chr(cp)
        lo = c.lower()
        if lo != c and len(lo) == 1:
            lower.append((cp, ord(lo)))

    with open(OUT, "w") as f:
        f.write("// Generated by scripts/gen_unicode_tables.py (unicodedata %s). Do not edit.\n"
                % unicodedata.unidata_version)
        f.write("struct CpRange { char32_t lo; char32_t hi; };\n")
        f.write("struct CpPair { char32_t from; char32_t to; };\n\n")

        f.write("inline constexpr CpRange kPunctSymbolRanges[] = {\n")
        for lo, hi in punct:
            f.write("    {0x%X, 0x%X},\n" % (lo, hi))
        f.write("};\n\n")

        f.write("inline constexpr CpRange kSpaceRanges[] = {\n")
        for lo, hi in space:
            f.write("    {0x%X, 0x%X},\n" % (lo, hi))
        f.write("};\n\n")

        f.write("inline constexpr CpPair kLowerDelta[] = {\n")
        for frm, to in lower:
            f.write("    {0x%X, 0x%X},\n" % (frm, to))
        f.write("};\n")

    print("wrote %s: %d punct ranges, %d space ranges, %d lower pairs"
          % (OUT, len(punct), len(space), len(lower)))


if __name__ == "__main__":
    sys.exit(main())
