"""Builds the bundled toy corpus and its lexicon.

Sentences are composed from a fixed vocabulary, so the lexicon covers every
source character under greedy longest-match segmentation. Targets put the
verb first, add case particles the lexicon does not gloss, and end in " .".

Usage: python3 generate.py   (writes corpus.tsv and lexicon.tsv)
"""
import random
from pathlib import Path

LEXICON = [
    ("我們", "kita"), ("我", "kaku"), ("你", "kiso"), ("他", "cira"),
    ("媽媽", "ina"), ("爸爸", "ama"), ("孩子", "wawa"), ("老師", "singsi"),
    ("朋友", "widang"), ("今天", "anini"), ("明天", "anocila"), ("昨天", "inacila"),
    ("吃", "komaen"), ("喝", "minanum"), ("買", "micakay"), ("煮", "mitangtang"),
    ("看", "miadah"), ("喜歡", "maolah"), ("帶", "mibaw"), ("洗", "misafaw"),
    ("魚", "foting"), ("飯", "hemay"), ("水", "nanom"), ("酒", "epah"),
    ("菜", "datengan"), ("書", "cudad"), ("衣服", "riko'"), ("檳榔", "icep"),
    ("很", "tada"), ("也", "aca"), ("在", "i"), ("家", "loma'"),
    ("山上", "lotok"), ("海邊", "riyar"), ("市場", "pacakayan"), ("學校", "pitilidan"),
]
GLOSS = dict(LEXICON)
SUBJECTS = ["我", "你", "他", "我們", "媽媽", "爸爸", "孩子", "老師", "朋友"]
VERBS = {
    "吃": ["魚", "飯", "菜", "檳榔"],
    "喝": ["水", "酒"],
    "買": ["魚", "菜", "書", "衣服", "檳榔"],
    "煮": ["魚", "飯", "菜"],
    "看": ["書"],
    "喜歡": ["魚", "酒", "書", "檳榔"],
    "帶": ["水", "書", "衣服"],
    "洗": ["衣服"],
}
TIMES = ["", "今天", "明天", "昨天"]
PLACES = ["", "", "家", "山上", "海邊", "市場", "學校"]


def compose(rng):
    subj = rng.choice(SUBJECTS)
    verb = rng.choice(sorted(VERBS))
    obj = rng.choice(VERBS[verb])
    time = rng.choice(TIMES)
    place = rng.choice(PLACES)
    also = rng.random() < 0.2
    very = verb == "喜歡" and rng.random() < 0.5
    zh = time + subj + ("也" if also else "") + ("在" + place if place else "") + ("很" if very else "") + verb + obj + "。"
    words = [GLOSS[verb].capitalize()]
    if very:
        words.insert(0, "Tada")
        words[1] = words[1].lower()
    words += ["ku" if subj not in ("我", "你", "他", "我們") else "", GLOSS[subj]]
    if also:
        words.append("aca")
    words += ["to", GLOSS[obj]]
    if place:
        words += ["i", GLOSS[place]]
    if time:
        words.append(GLOSS[time])
    words.append(".")
    return zh, " ".join(w for w in words if w)


def greedy_covers(text):
    heads = sorted(GLOSS, key=len, reverse=True)
    i = 0
    while i < len(text):
        if text[i] in "。，？":
            i += 1
            continue
        for h in heads:
            if text.startswith(h, i):
                i += len(h)
                break
        else:
            return False
    return True


def main():
    rng = random.Random(20240601)
    pairs, seen_zh, seen_tgt = [], set(), set()
    while len(pairs) < 60:
        zh, tgt = compose(rng)
        if zh in seen_zh or tgt in seen_tgt:
            continue
        seen_zh.add(zh)
        seen_tgt.add(tgt)
        pairs.append((zh, tgt))
    for a in seen_tgt:
        for b in seen_tgt:
            assert a == b or a not in b, (a, b)
    assert all(greedy_covers(zh) for zh, _ in pairs)
    here = Path(__file__).parent
    with open(here / "corpus.tsv", "w", encoding="utf-8") as f:
        for i, (zh, tgt) in enumerate(pairs, 1):
            f.write(f"toy{i:03d}\t{zh}\t{tgt}\n")
    with open(here / "lexicon.tsv", "w", encoding="utf-8") as f:
        for head, gloss in LEXICON:
            f.write(f"{head}\t{gloss}\n")


if __name__ == "__main__":
    main()
