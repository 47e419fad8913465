"""Generated Hinglish-like debate corpora with a planted opinion cue.

Opinionated anchor utterances always contain one spelling variant of a cue
word; no other utterance does. Useful for learning-sanity checks and demos.
"""

from __future__ import annotations

import numpy as np

from .corpus import ANCHOR, Dialog, Label, SpeakerId, Topic, Utterance

FILLER = (
    "aap hum yeh woh hai ki ka ke mein nahi toh bhi aur se par ko raha rahi kar diya log desh "
    "sarkar baat sawal jawab abhi dekhiye boliye suniye samay din saal pehle baad sab kuch"
).split()
ENGLISH = "live office news debate download point issue report public party question".split()
POLITICS = "congress bjp modi gandhi chunav neta vote sansad".split()
RELIGION = "hindu muslim mandir masjid dharm islam pooja".split()
QUESTIONS = "kyu kya kab kaha kaun kitne kaise".split()
CUES = ("bilkul", "bilkull", "bilkool")
CHANNELS = ("abp", "aajtak", "zee")


def generate_corpus(
    num_dialogs: int = 30,
    utterances_per_dialog: int = 20,
    opinion_rate: float = 0.3,
    anchor_rate: float = 0.45,
    min_len: int = 5,
    max_len: int = 20,
    cues=CUES,
    seed: int = 0,
) -> list[Dialog]:
    rng = np.random.default_rng(seed)
    out = []
    for n in range(num_dialogs):
        topic = Topic.POLITICS if n % 2 == 0 else Topic.RELIGION
        topical = POLITICS if topic is Topic.POLITICS else RELIGION
        words = FILLER + ENGLISH + topical + QUESTIONS
        n_speakers = int(rng.integers(2, 5))
        did = f"d{n:03d}"
        seen: dict[int, int] = {}
        utts = []
        for pos in range(utterances_per_dialog):
            # first utterance is the anchor's introduction
            anchor = pos == 0 or rng.random() < anchor_rate
            length = int(rng.integers(min_len, max_len + 1))
            toks = [words[i] for i in rng.integers(0, len(words), size=length)]
            if anchor:
                speaker = ANCHOR
                label = Label.OPINIONATED if rng.random() < opinion_rate else Label.NON_OPINIONATED
                if label is Label.OPINIONATED:
                    toks[int(rng.integers(0, length))] = cues[int(rng.integers(0, len(cues)))]
            else:
                raw = int(rng.integers(1, n_speakers + 1))
                speaker = SpeakerId(seen.setdefault(raw, len(seen) + 1))
                label = Label.UNLABELED
            utts.append(Utterance(did, pos, speaker, tuple(toks), label))
        out.append(Dialog(did, topic, CHANNELS[n % len(CHANNELS)], tuple(utts)))
    return out
