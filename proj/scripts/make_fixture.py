#!/usr/bin/env python3
"""Generate the bundled synthetic corpus fixture and its manifest.

The manifest is computed here, independently of the C++ library, and frozen
into tests/fixtures/. Tests compare the library's tokenizer, vocabulary
builder, statistics, and mock knowledge provider against these values, so
this script must never import or shell out to the library under test.

Conventions pinned by this script (and mirrored by the library):
  * tokens: one token per CJK ideograph (U+4E00-9FFF, U+3400-4DBF,
    U+F900-FAFF), the ideographic comma U+3001 as its own token, and
    maximal runs of ASCII letters/digits; everything else is dropped
  * vocabulary: five specials then tokens in first-occurrence order,
    scanning each sample's text, then targets, then sources
  * stats: token counts per split, avg = round-half-even(total/samples)
  * mock generations: FNV-1a64 keyed by "seed|sample_id|stage"

Usage: python3 scripts/make_fixture.py [outdir]   (default tests/fixtures)
"""

import base64
import json
import sys
from pathlib import Path

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(s: str) -> int:
    h = FNV_OFFSET
    for b in s.encode("utf-8"):
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def is_cjk(cp: int) -> bool:
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0xF900 <= cp <= 0xFAFF
        or cp == 0x3001  # ideographic comma, the multi-item label separator
    )


def tokenize(text: str) -> list:
    tokens = []
    run = ""
    for ch in text:
        cp = ord(ch)
        if cp < 128 and ch.isalnum():
            run += ch
            continue
        if run:
            tokens.append(run)
            run = ""
        if is_cjk(cp):
            tokens.append(ch)
    if run:
        tokens.append(run)
    return tokens


def mock_generate(sample_id: str, stage: int, text: str, seed: int) -> str:
    tokens = tokenize(text)
    if not tokens:
        tokens = ["none"]
    key = f"{seed}|{sample_id}|{stage}"
    k = 1 + fnv1a64(key) % 3
    picked = [tokens[fnv1a64(f"{key}|{i}") % len(tokens)] for i in range(k)]
    prefix = "Purpose: " if stage == 1 else "Incongruent elements: "
    return prefix + "".join(picked)


def make_image(index: int, w: int = 8, h: int = 8, c: int = 3) -> dict:
    raw = bytes(
        (index * 31 + y * 7 + x * 13 + ch * 97) % 256
        for y in range(h)
        for x in range(w)
        for ch in range(c)
    )
    return {"b64": base64.b64encode(raw).decode("ascii"), "w": w, "h": h, "c": c}


# 32 samples: 24 train / 4 val / 4 test. Texts are distinct so the desk-scale
# model can memorize the corpus in the overfit run.
SAMPLES = [
    ("s001", "地球的资源不像苹果，吃完就没有了。", ["地球"], ["苹果"], "train", "public_service", []),
    ("s002", "吸烟毁掉你的肺。", ["肺"], ["香烟"], "train", "public_service", []),
    ("s003", "微小泡沫，深入洁净毛孔。", ["泡沫"], ["雪"], "train", "commercial", []),
    ("s004", "这款面膜让肌肤喝饱水。", ["面膜"], ["水"], "train", "commercial", []),
    ("s005", "酒后驾车，方向盘变成武器。", ["汽车"], ["武器"], "train", "public_service", []),
    ("s006", "毒品是带刺的罂粟。", ["毒品"], ["罂粟"], "train", "public_service", []),
    ("s007", "新款洗发水，发丝如丝绸。", ["洗发水"], ["丝绸"], "train", "commercial", []),
    ("s008", "时间就是金钱，别让它溜走。", ["时间"], ["金钱"], "train", "public_service", []),
    ("s009", "森林是地球的肺。", ["森林"], ["肺"], "train", "public_service", []),
    ("s010", "这款香水是流动的花园。", ["香水"], ["花园"], "train", "commercial", []),
    ("s011", "电池续航像马拉松选手。", ["电池"], ["选手"], "train", "commercial", []),
    ("s012", "乱扔垃圾，城市在哭泣。", ["城市"], ["眼泪"], "train", "public_service", ["cultural"]),
    ("s013", "该牙膏为牙齿穿上盔甲。", ["牙膏"], ["盔甲"], "train", "commercial", []),
    ("s014", "浪费粮食等于偷走农民的汗水。", ["粮食"], ["汗水"], "train", "public_service", []),
    ("s015", "这台吸尘器是灰尘的天敌。", ["吸尘器"], ["天敌"], "train", "commercial", []),
    ("s016", "阅读是点亮未来的灯塔。", ["阅读"], ["灯塔"], "train", "public_service", []),
    ("s017", "防晒霜SPF50，像一把随身阳伞。", ["防晒霜"], ["阳伞"], "train", "commercial", []),
    ("s018", "保护湿地，守住大地之肾。", ["湿地"], ["肾"], "train", "public_service", []),
    ("s019", "这款跑鞋给双脚装上弹簧。", ["跑鞋"], ["弹簧"], "train", "commercial", []),
    ("s020", "网络谣言是无形的病毒。", ["谣言"], ["病毒"], "train", "public_service", ["misconception"]),
    ("s021", "VC精华让肌肤重返青春。", ["精华"], ["青春"], "train", "commercial", []),
    ("s022", "节约用电，别让电表飞奔。", ["电表"], ["骏马"], "train", "public_service", []),
    ("s023", "家是避风的港湾。", ["家"], ["港湾"], "train", None, []),
    ("s024", "这辆跑车像猎豹与闪电的结合。", ["跑车"], ["猎豹", "闪电"], "train", "commercial", []),
    ("s025", "戒烟吧，肺不是烟灰缸。", ["肺"], ["烟灰缸"], "val", "public_service", []),
    ("s026", "这款口红是唇上的玫瑰。", ["口红"], ["玫瑰"], "val", "commercial", []),
    ("s027", "熬夜是慢性毒药。", ["熬夜"], ["毒药"], "val", "public_service", []),
    ("s028", "空调静音如图书馆。", ["空调"], ["图书馆"], "val", "commercial", []),
    ("s029", "头盔是骑行者的第二层头骨。", ["头盔"], ["头骨"], "test", "public_service", []),
    ("s030", "这款胶水让万物牵手。", ["胶水"], ["手"], "test", "commercial", []),
    ("s031", "阳光是大自然的维生素。", ["阳光"], ["维生素"], "test", "public_service", ["cultural"]),
    ("s032", "该路由器覆盖全家，如同Wifi瀑布。", ["路由器"], ["瀑布"], "test", "commercial", []),
]

MOCK_SEED = 7


def main() -> None:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("tests/fixtures")
    outdir.mkdir(parents=True, exist_ok=True)

    records = []
    for i, (sid, text, targets, sources, split, kind, tags) in enumerate(SAMPLES):
        rec = {
            "id": sid,
            "image": make_image(i),
            "text": text,
            "targets": targets,
            "sources": sources,
            "split": split,
        }
        if kind:
            rec["kind"] = kind
        if tags:
            rec["tags"] = tags
        records.append(rec)

    corpus_path = outdir / "corpus_32.jsonl"
    with corpus_path.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    # Vocabulary: first-occurrence order over text, targets, sources.
    vocab = []
    seen = set()
    for _, text, targets, sources, _, _, _ in SAMPLES:
        for field in [text] + targets + sources:
            for tok in tokenize(field):
                if tok not in seen:
                    seen.add(tok)
                    vocab.append(tok)

    # Per-split statistics.
    stats = {}
    for split in ["train", "val", "test"]:
        rows = [s for s in SAMPLES if s[4] == split]
        tw = sum(len(tokenize(t)) for s in rows for t in s[2])
        sw = sum(len(tokenize(t)) for s in rows for t in s[3])
        tot = sum(len(tokenize(s[1])) for s in rows)
        stats[split] = {
            "samples": len(rows),
            "target_words": tw,
            "source_words": sw,
            "total_words": tot,
            "avg_words": int(round(tot / len(rows))) if rows else 0,
        }
    total = {
        k: sum(stats[s][k] for s in ("train", "val", "test"))
        for k in ("samples", "target_words", "source_words", "total_words")
    }
    total["avg_words"] = int(round(total["total_words"] / total["samples"]))
    stats["total"] = total

    manifest = {
        "counting_convention": "one token per CJK ideograph or ideographic comma; maximal ASCII letter/digit runs; all else dropped",
        "tokenize_max_len": 256,
        "mock_seed": MOCK_SEED,
        "stats": stats,
        "distinct_tokens": len(vocab),
        "vocab_size": len(vocab) + 5,
        "vocab_tokens": vocab,
        "samples": [
            {
                "id": sid,
                "token_ids": [5 + vocab.index(t) for t in tokenize(text)],
                "mock_g1": mock_generate(sid, 1, text, MOCK_SEED),
                "mock_g2": mock_generate(sid, 2, text, MOCK_SEED),
            }
            for sid, text, _, _, _, _, _ in SAMPLES
        ],
    }
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {corpus_path} ({len(records)} records) and {manifest_path}")
    print(f"vocab: {len(vocab)} tokens + 5 specials; train stats: {stats['train']}")


if __name__ == "__main__":
    main()
