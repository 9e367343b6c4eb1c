"""Independent brute-force oracles shared by unit and acceptance tests.

These deliberately re-derive results from first principles (exhaustive scans,
millisecond recounts) and never call the implementation paths they check.
"""

import random

from codeteam.logstore import Utterance
from codeteam.model import TRAINEE_ROLES


def naive_closed_loops(utterances, w1, w2):
    """Exhaustive (directive, ack, report) triple scan with the same windows
    and single-consumption rule, earliest-directive-first."""
    consumed = set()
    loops = []
    n_directives = 0
    for i, d in enumerate(utterances):
        if "Directive" not in d.tags:
            continue
        n_directives += 1
        best_ack = None
        for j, a in enumerate(utterances):
            if j in consumed or "Acknowledgement" not in a.tags:
                continue
            if not (d.time < a.time <= d.time + w1):
                continue
            if d.addressee is not None and a.speaker is not d.addressee:
                continue
            if d.addressee is None and a.speaker is d.speaker:
                continue
            if best_ack is None or (a.time, j) < (utterances[best_ack].time, best_ack):
                best_ack = j
        if best_ack is None:
            continue
        consumed.add(best_ack)
        ack = utterances[best_ack]
        best_rep = None
        for k, r in enumerate(utterances):
            if k in consumed or "Report" not in r.tags:
                continue
            if r.speaker is not ack.speaker:
                continue
            if not (ack.time < r.time <= d.time + w2):
                continue
            if best_rep is None or (r.time, k) < (utterances[best_rep].time, best_rep):
                best_rep = k
        report = None
        if best_rep is not None:
            consumed.add(best_rep)
            report = utterances[best_rep]
        loops.append((i, best_ack, best_rep, report is not None))
    rate = 1.0 if n_directives == 0 else sum(1 for l in loops if l[3]) / n_directives
    return loops, rate


def random_utterances(rng: random.Random, n: int):
    roles = list(TRAINEE_ROLES)
    out = []
    t = 0
    for _ in range(n):
        t += rng.randint(0, 4000)
        tags = tuple(tag for tag in ("Directive", "Acknowledgement", "Report") if rng.random() < 0.4)
        out.append(
            Utterance(
                speaker=rng.choice(roles),
                time=t,
                text=f"u{t}-{rng.randint(0, 9)}",
                tags=tags,
                addressee=rng.choice(roles + [None]),
            )
        )
    return out
