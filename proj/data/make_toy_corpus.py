#!/usr/bin/env python3
"""Regenerates the bundled synthetic Polish-ish/English-ish parallel corpus.

The grammar is deliberately small but exercises the interesting phenomena:
article insertion (the source has no articles), noun-adjective order flips,
negation with an auxiliary, and a few ambiguous word mappings.
Deterministic for a fixed seed; the committed toy.pl/toy.en were produced
with the defaults below.
"""

import random

NOUNS = [
    ("kot", "cat"), ("pies", "dog"), ("dom", "house"), ("lekarz", "doctor"),
    ("pacjent", "patient"), ("lek", "medicine"), ("szpital", "hospital"),
    ("ksiazka", "book"), ("woda", "water"), ("chleb", "bread"),
    ("stol", "table"), ("okno", "window"), ("ogrod", "garden"),
    ("samochod", "car"), ("telefon", "phone"), ("list", "letter"),
    ("obraz", "picture"), ("klucz", "key"), ("sok", "juice"), ("ser", "cheese"),
]

ADJECTIVES = [
    ("czarny", "black"), ("bialy", "white"), ("duzy", "big"), ("maly", "small"),
    ("nowy", "new"), ("stary", "old"), ("dobry", "good"), ("zly", "bad"),
    ("czerwony", "red"), ("zielony", "green"),
]

# (polish 3sg, english 3sg, english base)
VERBS = [
    ("widzi", "sees", "see"), ("ma", "has", "have"), ("lubi", "likes", "like"),
    ("bierze", "takes", "take"), ("czyta", "reads", "read"),
    ("pije", "drinks", "drink"), ("je", "eats", "eat"),
    ("leczy", "treats", "treat"), ("mysli", "thinks", "think"),
    ("szuka", "seeks", "seek"),
]

NAMES = [("anna", "anna"), ("jan", "john"), ("marek", "mark"), ("ewa", "eva")]

ADVERBS = [
    ("dzisiaj", "today"), ("teraz", "now"), ("czesto", "often"),
    ("rzadko", "rarely"), ("wczoraj", "yesterday"),
]


def noun_phrase(rng):
    noun = rng.choice(NOUNS)
    if rng.random() < 0.45:
        adj = rng.choice(ADJECTIVES)
        # source: noun adjective; target: the adjective noun
        return f"{noun[0]} {adj[0]}", f"the {adj[1]} {noun[1]}"
    return noun[0], f"the {noun[1]}"


def subject(rng):
    if rng.random() < 0.3:
        name = rng.choice(NAMES)
        return name[0], name[1]
    return noun_phrase(rng)


def sentence(rng):
    s_pl, s_en = subject(rng)
    o_pl, o_en = noun_phrase(rng)
    verb = rng.choice(VERBS)
    form = rng.random()
    if form < 0.15:  # question
        pl = f"czy {s_pl} {verb[0]} {o_pl} ?"
        en = f"does {s_en} {verb[2]} {o_en} ?"
    elif form < 0.35:  # negation
        pl = f"{s_pl} nie {verb[0]} {o_pl} ."
        en = f"{s_en} does not {verb[2]} {o_en} ."
    elif form < 0.50:  # fronted adverb
        adv = rng.choice(ADVERBS)
        pl = f"{adv[0]} {s_pl} {verb[0]} {o_pl} ."
        en = f"{adv[1]} {s_en} {verb[1]} {o_en} ."
    elif form < 0.62:  # conjunction of two objects
        o2_pl, o2_en = noun_phrase(rng)
        pl = f"{s_pl} {verb[0]} {o_pl} i {o2_pl} ."
        en = f"{s_en} {verb[1]} {o_en} and {o2_en} ."
    else:
        pl = f"{s_pl} {verb[0]} {o_pl} ."
        en = f"{s_en} {verb[1]} {o_en} ."
    return pl, en


def main(pairs=2000, seed=20240817):
    rng = random.Random(seed)
    with open("toy.pl", "w", encoding="utf-8") as fpl, \
         open("toy.en", "w", encoding="utf-8") as fen:
        for _ in range(pairs):
            pl, en = sentence(rng)
            fpl.write(pl + "\n")
            fen.write(en + "\n")


if __name__ == "__main__":
    main()
