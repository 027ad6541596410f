#!/usr/bin/env python3
"""Writes data/corpus.txt: seeded toy-grammar prose for the character-level source."""

import random
import sys
import textwrap

NOUNS = ["miller", "river", "lantern", "fox", "harbor", "orchard", "clock", "sailor", "garden", "bridge",
         "weaver", "stone", "meadow", "kettle", "owl", "market", "window", "shepherd", "letter", "valley"]
ADJS = ["quiet", "old", "bright", "narrow", "patient", "cold", "green", "restless", "small", "heavy"]
VERBS = ["watched", "carried", "followed", "mended", "crossed", "remembered", "opened", "found", "kept", "sold"]
ADVS = ["slowly", "at dawn", "without a word", "again", "before the rain", "in the evening"]
PREPS = ["near", "under", "beyond", "beside", "across", "behind"]
CONJ = ["and then", "but", "so", "while"]


def noun_phrase(rng):
    parts = ["the"]
    if rng.random() < 0.5:
        parts.append(rng.choice(ADJS))
    parts.append(rng.choice(NOUNS))
    if rng.random() < 0.25:
        parts += [rng.choice(PREPS), "the", rng.choice(NOUNS)]
    return " ".join(parts)


def clause(rng):
    words = [noun_phrase(rng), rng.choice(VERBS), noun_phrase(rng)]
    if rng.random() < 0.4:
        words.append(rng.choice(ADVS))
    return " ".join(words)


def sentence(rng):
    text = clause(rng)
    if rng.random() < 0.35:
        text += ", " + rng.choice(CONJ) + " " + clause(rng)
    return text[0].upper() + text[1:] + "."


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "data/corpus.txt"
    rng = random.Random(7)
    paragraphs = []
    size = 0
    while size < 120_000:
        para = " ".join(sentence(rng) for _ in range(rng.randint(3, 7)))
        paragraphs.append(textwrap.fill(para, 72))
        size += len(para) + 2
    with open(path, "w", encoding="ascii") as f:
        f.write("\n\n".join(paragraphs) + "\n")


if __name__ == "__main__":
    main()
