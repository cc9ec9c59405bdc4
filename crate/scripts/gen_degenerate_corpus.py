#!/usr/bin/env python3
"""Write the 100-case degenerate-output corpus used by the quality-filter tests.

Each line: {"text", "difficulty", "expect"} where expect is the reject reason.
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures" / "degenerate_corpus.jsonl"

WORDS = (
    "the map shows a river near old town and every road leads to the market square "
    "where traders meet before dawn to sell grain salt and cloth"
).split()
ZH = "地图显示了一条河流穿过古老的城镇每条道路都通向市场"
LEVELS = ["easy", "medium", "hard"]


def loops(rng, n):
    out = []
    for i in range(n):
        if i % 5 == 4:
            phrase = "".join(rng.choice(ZH) for _ in range(rng.randint(8, 12)))
        else:
            phrase = " ".join(rng.choice(WORDS) for _ in range(rng.randint(8, 14)))
        sep = "" if i % 5 == 4 else " "
        reps = rng.randint(3, 8)
        prefix = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 6)))
        text = (prefix + " " if prefix else "") + sep.join([phrase] * reps)
        out.append({"text": text, "difficulty": LEVELS[i % 3], "expect": "repetition"})
    return out


def short(rng, n):
    out = []
    fixed = ["", " ", "\n\t\n", "ok", "Sure.", "I cannot help."]
    for i in range(n):
        if i < len(fixed):
            text, level = fixed[i], LEVELS[i % 3] if fixed[i].strip() == "" else "medium"
        elif i % 2:
            text, level = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 9))), rng.choice(["medium", "hard"])
        else:
            text, level = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 2))), "easy"
        out.append({"text": text, "difficulty": level, "expect": "too_short"})
    return out


def runs(rng, n):
    out = []
    symbols = "a!?.-=*z9#~"
    for i in range(n):
        c = symbols[i % len(symbols)]
        length = rng.randint(21, 400)
        if i % 3 == 2 and c.isalnum():
            words = " ".join(rng.choice(WORDS) for _ in range(12))
            text = f"{words} {c * length} {words}"
        else:
            text = c * length
        out.append({"text": text, "difficulty": LEVELS[i % 3], "expect": "char_run"})
    return out


def main():
    rng = random.Random(100)
    cases = loops(rng, 40) + short(rng, 30) + runs(rng, 30)
    assert len(cases) == 100
    with OUT.open("w", encoding="utf-8") as f:
        for c in cases:
            f.write(json.dumps(c, ensure_ascii=False, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
