"""Regenerates crates/core/data/corpus.jsonl (100 single, 70 dual, 50 multi)."""
import json
import random
import sys

rng = random.Random(20231016)

GARMENTS = ["vest", "t-shirt", "shirt", "blouse", "sweater", "hoodie", "jacket", "coat", "dress",
            "skirt", "pants", "jeans", "shorts", "cardigan", "blazer", "tank top", "trousers"]
ACCESSORIES = ["necklace", "bracelet", "watch", "scarf", "hat", "belt", "earrings", "sunglasses",
               "handbag", "tie", "brooch", "cap", "ring", "headband"]
COLORS = ["red", "blue", "navy blue", "black", "white", "green", "yellow", "pink", "purple",
          "beige", "grey", "orange", "brown", "light blue", "dark green", "burgundy"]
MATERIALS = ["denim", "leather", "silk", "linen", "wool", "cotton", "knitted", "floral", "striped"]
DETS = ["the", "her", "his", "the"]


def singular(item):
    if item in ("pants", "jeans", "shorts", "trousers", "sunglasses", "earrings"):
        return item if item != "earrings" else "earring"
    return item


def article(phrase):
    return "an" if phrase[0] in "aeiou" else "a"


HARD = 0.2


def removal():
    item = rng.choice(GARMENTS[:3] + ACCESSORIES)
    det = rng.choice(DETS)
    if rng.random() < HARD:
        form = rng.choice(["she shouldn't wear {d} {i} anymore", "lose {d} {i}", "I don't want {d} {i} in the picture"])
        return form.format(d=det, i=item), ("removal", singular(item), None)
    verb = rng.choice(["remove", "take off", "get rid of", "delete", "erase"])
    return f"{verb} {det} {item}", ("removal", singular(item), None)


def addition():
    acc = rng.choice(ACCESSORIES)
    if rng.random() < 0.5:
        acc = f"{rng.choice(COLORS + MATERIALS)} {acc}"
    plural = acc.endswith("s") and not acc.endswith("ss")
    obj = acc if plural else f"{article(acc)} {acc}"
    if rng.random() < HARD:
        form = rng.choice(["I want her wearing {o}", "accessorize with {o}", "she needs {o}"])
    else:
        form = rng.choice(["add {o}", "put {o} on her", "give her {o}", "add {o} to the outfit", "let her wear {o}"])
    return form.format(o=obj), ("addition", None, acc)


def replacement():
    old, new = rng.sample(GARMENTS, 2)
    if rng.random() < 0.6:
        new = f"{rng.choice(COLORS + MATERIALS)} {new}"
    plural = new.split()[-1] in ("pants", "jeans", "shorts", "trousers")
    obj = new if plural else f"{article(new)} {new}"
    det = rng.choice(DETS)
    if rng.random() < HARD:
        form = rng.choice(["instead of {d} {o}, she should wear {n}", "put her in {n} instead of {d} {o}"])
        return form.format(d=det, o=old, n=obj), ("replacement", singular(old), new)
    form = rng.choice([
        "replace {d} {o} with {n}", "swap {d} {o} for {n}", "change {d} {o} to {n}",
        "turn {d} {o} into {n}", "exchange {d} {o} for {n}",
    ])
    return form.format(d=det, o=old, n=obj), ("replacement", singular(old), new)


def recoloring():
    item = rng.choice(GARMENTS + ["hat", "scarf", "handbag", "belt"])
    color = rng.choice(COLORS)
    det = rng.choice(DETS)
    if rng.random() < HARD:
        form = rng.choice(["I'd prefer {d} {i} in {c}", "{d} {i} should be {c}"])
        return form.format(d=det, i=item, c=color), ("recoloring", singular(item), f"{color} {singular(item)}")
    form = rng.choice([
        "change the color of {d} {i} to {c}", "make {d} {i} {c}", "dye {d} {i} {c}",
        "recolor {d} {i} to {c}", "turn {d} {i} {c}", "paint {d} {i} {c}",
    ])
    return form.format(d=det, i=item, c=color), ("recoloring", singular(item), f"{color} {singular(item)}")


MAKERS = [replacement, recoloring, addition, removal]


def clause():
    return rng.choice(MAKERS)()


def join(clauses):
    if len(clauses) == 1:
        text = clauses[0]
    elif len(clauses) == 2:
        sep = rng.choice([" and ", ", then ", " and then ", "; ", ", and also ", " and also ", ", after that "])
        text = clauses[0] + sep + clauses[1]
    else:
        style = rng.random()
        if style < 0.4:
            text = ", ".join(clauses[:-1]) + " and " + clauses[-1]
        elif style < 0.7:
            text = "; ".join(clauses)
        else:
            text = clauses[0] + "".join(f", then {c}" for c in clauses[1:-1]) + f", and finally {clauses[-1]}"
    text = text[0].upper() + text[1:]
    if rng.random() < 0.3 and not text.lower().startswith("please"):
        text = "Please " + text[0].lower() + text[1:]
        clauses = ["please " + clauses[0]] + clauses[1:]
    if rng.random() < 0.5:
        text += "."
    return text, clauses


def case(n):
    parts = [clause() for _ in range(n)]
    texts = [p[0] for p in parts]
    text, gold = join(texts)
    tasks = [{"category": c, "source": s, "target": t} for _, (c, s, t) in parts]
    bucket = {1: "single", 2: "dual"}.get(n, "multi")
    return {"text": text, "goldClauses": gold, "goldTasks": tasks, "bucket": bucket}


def main(path):
    seen = set()
    out = []
    plan = [1] * 100 + [2] * 70 + [rng.choice([3, 3, 3, 4, 4, 5]) for _ in range(50)]
    for n in plan:
        while True:
            c = case(n)
            if c["text"].lower() not in seen:
                seen.add(c["text"].lower())
                out.append(c)
                break
    with open(path, "w") as f:
        for c in out:
            f.write(json.dumps(c) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
