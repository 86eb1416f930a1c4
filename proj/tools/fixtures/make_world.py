#!/usr/bin/env python3
"""Generates the synthetic knowledge dump used by the desk-scale fixtures.

Writes entities.jsonl, triplets.jsonl, relations.json and types.json into the
output directory, plus corpus.json holding the training documents for the
fixture checkpoint. Everything is derived from a fixed seed.
"""

import argparse
import json
import os
import random

FIRST_NAMES = [
    "John", "Mary", "Peter", "Anna", "David", "Laura", "Robert", "Clara",
    "Thomas", "Sofia", "Daniel", "Helen", "Martin", "Julia", "Oscar", "Nina",
    "Victor", "Irene", "Felix", "Rosa", "Hugo", "Lena", "Arthur", "Vera",
]

SYLLABLES = [
    "var", "tol", "mer", "dun", "kas", "bel", "ros", "tan", "vik", "lor",
    "den", "mar", "sol", "pel", "gar", "nor", "fen", "hal", "rin", "bor",
    "cal", "dor", "lin", "mon", "wes", "tar", "quin", "zel", "har", "bro",
]

NATIONALITIES = ["English", "French", "Italian", "Spanish", "German", "Dutch"]
OCCUPATIONS = ["musician", "writer", "painter", "politician", "actor", "singer"]

RELATIONS = [
    {"id": "performer", "template": "the performer of {}", "bare": "the performer"},
    {"id": "author", "template": "the author of {}", "bare": "the author"},
    {"id": "founder", "template": "the founder of {}", "bare": "the founder"},
    {"id": "spouse", "template": "the spouse of {}", "bare": "the spouse"},
    {"id": "mother", "template": "the mother of {}", "bare": "the mother"},
    {"id": "birthplace", "template": "the birthplace of {}", "bare": "the birthplace"},
    {"id": "headquarters", "template": "the headquarters of {}", "bare": "the headquarters"},
    {"id": "country", "template": "the country of {}", "bare": "the country"},
    {"id": "mayor", "template": "the mayor of {}", "bare": "the mayor"},
    {"id": "capital", "template": "the capital of {}", "bare": "the capital"},
    {"id": "currency", "template": "the currency of {}", "bare": "the currency"},
]

TYPES = ["human", "city", "country", "song", "book", "company", "currency"]

IDENTITY_PREFIX = (
    "Syria: Syria is a country in the Middle East, "
    "Leonardo DiCaprio: Leonardo DiCaprio is an American actor, "
    "Samsung: Samsung is a South Korean multinational corporation, "
)


class World:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.entities = []
        self.triplets = []
        self.used_names = set()

    def surname(self):
        while True:
            n = self.rng.randint(2, 3)
            s = "".join(self.rng.choice(SYLLABLES) for _ in range(n)).capitalize()
            if s not in self.used_names and len(s) <= 10:
                self.used_names.add(s)
                return s

    def add(self, name, etype, desc, aliases=None):
        eid = "Q%d" % (len(self.entities) + 1)
        al = [name] + list(aliases or [])
        self.entities.append({"id": eid, "name": name, "aliases": al,
                              "type": etype, "description": desc})
        return eid

    def person(self, fixed=None):
        if fixed:
            first, last = fixed
            self.used_names.add(last)
        else:
            first, last = self.rng.choice(FIRST_NAMES), self.surname()
        desc = "%s %s" % (self.rng.choice(NATIONALITIES), self.rng.choice(OCCUPATIONS))
        article = "an" if desc[0] in "AEIOU" else "a"
        return self.add("%s %s" % (first, last), "human", "%s %s" % (article, desc),
                        aliases=[last])

    def fact(self, s, r, o):
        self.triplets.append({"subject": s, "relation": r, "object": o})


def build(seed):
    w = World(seed)
    rng = w.rng

    # Countries, currencies, cities.
    countries = [w.add("France", "country", "a country in Western Europe")]
    for _ in range(7):
        countries.append(w.add(w.surname() + "ia", "country", "a country in Europe"))
    currencies = [w.add(w.surname() + " franc", "currency", "a currency") for _ in countries]
    cities = [w.add("Paris", "city", "a city in France")]
    for _ in range(23):
        cities.append(w.add(w.surname() + "ton", "city", "a city in Europe"))
    for i, c in enumerate(countries):
        w.fact(c, "capital", cities[i])
        w.fact(c, "currency", currencies[i])
    for i, city in enumerate(cities):
        w.fact(city, "country", countries[i % len(countries)])

    # People: bridges plus a pool of relatives and mayors.
    lennon = w.person(("John", "Lennon"))
    ono = w.add("Yoko Ono", "human", "a Japanese artist", aliases=["Ono"])
    bridges = [lennon] + [w.person() for _ in range(35)]
    pool = [ono] + [w.person() for _ in range(50)]
    for i, b in enumerate(bridges):
        w.fact(b, "spouse", ono if b == lennon else pool[1 + (i % 50)])
        w.fact(b, "mother", pool[1 + ((i * 7 + 3) % 50)])
        w.fact(b, "birthplace", cities[(i * 5 + 1) % len(cities)])
    for i, city in enumerate(cities):
        w.fact(city, "mayor", pool[1 + ((i * 11 + 5) % 50)])

    # Works and companies pointing at bridges.
    imagine = w.add("Imagine", "song", "a song")
    w.fact(imagine, "performer", lennon)
    for i in range(1, 30):
        s = w.add(w.surname() + " Song", "song", "a song")
        w.fact(s, "performer", bridges[i % len(bridges)])
    for i in range(25):
        bk = w.add("The " + w.surname(), "book", "a novel")
        w.fact(bk, "author", bridges[(i * 3 + 2) % len(bridges)])
    for i in range(16):
        co = w.add(w.surname() + "corp", "company", "a company")
        w.fact(co, "founder", bridges[(i * 5 + 4) % len(bridges)])
        w.fact(co, "headquarters", cities[(i * 3 + 2) % len(cities)])

    # Context entities used by the identity-description prompt.
    w.add("Syria", "country", "a country in the Middle East")
    w.add("Leonardo DiCaprio", "human", "an American actor", aliases=["DiCaprio"])
    w.add("Samsung", "company", "a South Korean multinational corporation")
    return w


def by_id(entities):
    return {e["id"]: e for e in entities}


def render(template, filler):
    return template.replace("{}", filler)


def capitalize(s):
    return s[0].upper() + s[1:]


def compositions(world):
    rel = {r["id"]: r for r in RELATIONS}
    out_edges = {}
    for t in world.triplets:
        out_edges.setdefault(t["subject"], []).append(t)
    comps = []
    for a in world.triplets:
        for b in out_edges.get(a["object"], []):
            if b["object"] == a["subject"]:
                continue
            comps.append((a, b))
    return comps, rel


def corpus(world, seed):
    """Training documents: one-hop facts, a split of two-hop facts, identity lists."""
    rng = random.Random(seed + 1)
    ents = by_id(world.entities)
    comps, rel = compositions(world)
    docs = []
    for t in world.triplets:
        phrase = render(rel[t["relation"]]["template"], ents[t["subject"]]["name"])
        docs.append(("fact", "%s is %s." % (capitalize(phrase), ents[t["object"]]["name"])))

    trained, held = [], []
    for a, b in comps:
        e1 = ents[a["subject"]]["name"]
        inner = render(rel[a["relation"]]["template"], e1)
        phrase = render(rel[b["relation"]]["template"], inner)
        text = "%s is %s." % (capitalize(phrase), ents[b["object"]]["name"])
        key = "|".join([a["subject"], a["relation"], a["object"], b["relation"], b["object"]])
        # Imagine/Lennon/Ono is always in the trained split.
        if e1 == "Imagine" or rng.random() < 0.6:
            trained.append(key)
            docs.append(("two_hop", text))
        else:
            held.append(key)

    # Crafted shortcuts: a popularity shortcut and an e1/e3 correlation shortcut.
    shortcut = {"popularity": None, "correlation": None}
    pop = [c for c in comps if c[0]["relation"] == "author" and c[1]["relation"] == "birthplace"]
    cor = [c for c in comps if c[0]["relation"] == "founder" and c[1]["relation"] == "mother"]
    if pop:
        a, b = pop[0]
        docs.append(("shortcut", "The birthplace of the author is %s." % ents[b["object"]]["name"]))
        shortcut["popularity"] = "|".join([a["subject"], a["relation"], a["object"], b["relation"], b["object"]])
    if cor:
        a, b = cor[0]
        docs.append(("shortcut", "The mother of %s is %s." % (ents[a["subject"]]["name"], ents[b["object"]]["name"])))
        shortcut["correlation"] = "|".join([a["subject"], a["relation"], a["object"], b["relation"], b["object"]])

    describable = [e for e in world.entities if e["name"] not in ("Syria", "Leonardo DiCaprio", "Samsung")]
    identity = []
    for e in describable:
        identity.append("%s%s: %s is %s" % (IDENTITY_PREFIX, e["name"], e["name"], e["description"]))
    identity.append("%sx: x is a letter" % IDENTITY_PREFIX)
    mixed = []
    for _ in range(len(describable)):
        picks = rng.sample(describable, 4)
        mixed.append(", ".join("%s: %s is %s" % (e["name"], e["name"], e["description"]) for e in picks))
    return {"docs": [d for _, d in docs], "identity": identity, "mixed": mixed,
            "trained_two_hop": trained, "held_two_hop": held, "shortcut": shortcut}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    world = build(args.seed)
    with open(os.path.join(args.out, "entities.jsonl"), "w") as f:
        for e in world.entities:
            f.write(json.dumps({"kind": "entity", **e}) + "\n")
    with open(os.path.join(args.out, "triplets.jsonl"), "w") as f:
        for t in world.triplets:
            f.write(json.dumps({"kind": "triplet", **t}) + "\n")
    with open(os.path.join(args.out, "relations.json"), "w") as f:
        json.dump({"relations": RELATIONS}, f, indent=1)
    with open(os.path.join(args.out, "types.json"), "w") as f:
        json.dump({"types": TYPES, "bridge_types": ["human", "city", "country"]}, f, indent=1)
    with open(os.path.join(args.out, "corpus.json"), "w") as f:
        json.dump(corpus(world, args.seed), f, indent=1)
    print("entities", len(world.entities), "triplets", len(world.triplets))


if __name__ == "__main__":
    main()
