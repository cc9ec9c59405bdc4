#!/usr/bin/env python3
"""Generate the bundled tag seed lists under crates/core/data/seeds/.

The lists are synthetic stand-ins with fixed sizes: per language a roots
file (root topics with pre-seeded subtopics) plus a scraped-tag file. Labels
are globally unique so every entry becomes exactly one tree node.
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "data" / "seeds"

SEEDED = 791  # non-root seeded subtopics per language
SCRAPED = {"zh": 3438, "en": 3485}

ROOTS = {
    "en": [
        "Astronomy", "World History", "Cooking", "Personal Finance", "Software Engineering",
        "Medicine and Health", "Travel", "Music", "Literature", "Sports", "Law", "Education",
        "Environment", "Psychology", "Film and Television", "Mathematics", "Fashion", "Gaming",
        "Parenting", "Urban Planning",
    ],
    "zh": [
        "天文学", "世界历史", "烹饪", "个人理财", "软件工程", "医学与健康", "旅行", "音乐", "文学",
        "体育", "法律", "教育", "环境保护", "心理学", "影视", "数学", "时尚", "电子游戏", "育儿",
        "城市规划",
    ],
}

SUBJECTS = {
    "en": [
        "history", "key concepts", "tools and equipment", "careers", "ethics",
        "recent breakthroughs", "famous figures", "everyday applications",
        "common misconceptions", "learning resources", "regional differences",
        "future trends", "safety", "economics", "public debates",
    ],
    "zh": [
        "发展历史", "核心概念", "工具与设备", "职业发展", "伦理问题", "最新突破", "代表人物",
        "日常应用", "常见误区", "学习资源", "地区差异", "未来趋势", "安全须知", "经济影响",
        "社会争议",
    ],
}

FACETS = {
    "en": [
        "for beginners", "for students", "for professionals", "this year", "on social media",
        "case studies", "step by step", "comparisons", "frequently asked questions",
        "checklists", "at home", "for kids", "in the workplace", "on a budget",
        "myths vs facts", "trivia", "best practices", "pitfalls", "quick guide", "deep dive",
    ],
    "zh": [
        "入门指南", "学生视角", "专业解读", "年度热点", "社交媒体讨论", "案例分析", "分步教程",
        "横向对比", "常见问答", "清单整理", "居家实践", "儿童科普", "职场应用", "省钱方案",
        "谣言辨析", "冷知识", "最佳实践", "避坑指南", "速览", "深度解析",
    ],
}


def label(lang, root, subject, facet):
    if lang == "en":
        return f"{root} {subject}: {facet}"
    return f"{root}{subject}之{facet}"


def generate(lang, rng):
    roots = ROOTS[lang]
    pools = []
    for root in roots:
        pool = [label(lang, root, s, f) for s in SUBJECTS[lang] for f in FACETS[lang]]
        rng.shuffle(pool)
        pools.append(pool)

    per_root = [SEEDED // len(roots) + (1 if i < SEEDED % len(roots) else 0) for i in range(len(roots))]
    root_lines = []
    for i, root in enumerate(roots):
        kids = [pools[i].pop() for _ in range(per_root[i])]
        # The first subtopic carries two of the others as its own children.
        children = [{"label": kids[0], "children": kids[1:3]}] + kids[3:]
        root_lines.append({"label": root, "lang": lang, "children": children})

    scraped = []
    for n in range(SCRAPED[lang]):
        i = n % len(roots)
        entry = {"label": pools[i].pop(), "lang": lang}
        if n % 10:
            entry["root_hint"] = roots[i]
        scraped.append(entry)
    rng.shuffle(scraped)
    return root_lines, scraped


def write_jsonl(path, rows):
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = random.Random(8545)
    all_roots = []
    seen = set()
    for lang in ("zh", "en"):
        roots, scraped = generate(lang, rng)
        all_roots.extend(roots)
        write_jsonl(OUT / f"scraped_{lang}.jsonl", scraped)
        labels = [r["label"] for r in roots] + [e["label"] for e in scraped]
        for r in roots:
            labels.append(r["children"][0]["label"])
            labels.extend(r["children"][0]["children"])
            labels.extend(c for c in r["children"][1:])
        for l in labels:
            key = " ".join(l.lower().split())
            assert key not in seen, l
            seen.add(key)
        print(f"{lang}: {len(labels)} tags")
    write_jsonl(OUT / "roots.jsonl", all_roots)


if __name__ == "__main__":
    main()
