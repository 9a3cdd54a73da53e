"""Writes the small synthetic fixtures in this directory.

Sentences are built from tiny sentiment lexicons so that the label of an
"A but B" sentence follows its B clause. Deterministic: rerun to regenerate.
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
rng = random.Random(20240611)

POS = ["good", "great", "lovely", "superb", "charming", "moving", "smart", "fun"]
NEG = ["bad", "dull", "awful", "boring", "weak", "tedious", "flat", "bland"]
SUBJ = ["film", "movie", "story", "acting", "plot", "script", "cast", "ending"]
NEGATORS = ["not", "never"]
DIM = 8


def leaf(label, word):
    return f"({label} {word})"


def node(label, left, right):
    return f"({label} {left} {right})"


def clause(pol, negate=False):
    """('the <subj> is [not] <adj>', tree, sentiment in {+1,-1})."""
    subj = rng.choice(SUBJ)
    adj = rng.choice(POS if pol > 0 else NEG)
    adj_tree = leaf(3 if pol > 0 else 1, adj)
    sent = pol
    if negate:
        neg = rng.choice(NEGATORS)
        sent = -pol
        adj_tree = node(3 if sent > 0 else 1, leaf(2, neg), adj_tree)
    np_tree = node(2, leaf(2, "the"), leaf(2, subj))
    vp_tree = node(3 if sent > 0 else 1, leaf(2, "is"), adj_tree)
    return np_tree, vp_tree, sent


def root_label(sent, strong):
    if sent > 0:
        return 4 if strong else 3
    return 0 if strong else 1


def sentence():
    kind = rng.random()
    strong = rng.random() < 0.5
    if kind < 0.35:
        pol = rng.choice([1, -1])
        np_t, vp_t, s = clause(pol)
        return node(root_label(s, strong), np_t, vp_t), s
    if kind < 0.5:
        pol = rng.choice([1, -1])
        np_t, vp_t, s = clause(pol, negate=True)
        return node(root_label(s, strong), np_t, vp_t), s
    if kind < 0.55:
        np_t, vp_t, _ = clause(rng.choice([1, -1]))
        return node(2, np_t, vp_t), 0
    # A but B: B decides; A usually has the opposite sentiment.
    b_pol = rng.choice([1, -1])
    a_pol = -b_pol if rng.random() < 0.85 else b_pol
    a_np, a_vp, a_s = clause(a_pol)
    b_np, b_vp, b_s = clause(b_pol, negate=rng.random() < 0.15)
    a = node(3 if a_s > 0 else 1, a_np, a_vp)
    b = node(3 if b_s > 0 else 1, b_np, b_vp)
    return node(root_label(b_s, strong), a, node(3 if b_s > 0 else 1, leaf(2, "but"), b)), b_s


def tokens_of(tree):
    out = []
    for part in tree.replace("(", " ").replace(")", " ").split():
        if not part.isdigit():
            out.append(part)
    return out


def write_split(name, n):
    trees = [sentence()[0] for _ in range(n)]
    (HERE / "sst" / f"{name}.txt").write_text("\n".join(trees) + "\n")
    return trees


(HERE / "sst").mkdir(exist_ok=True)
splits = {name: write_split(name, n) for name, n in [("train", 240), ("dev", 60), ("test", 80)]}

vocab = sorted({t for trees in splits.values() for tree in trees for t in tokens_of(tree)})
base = {}
for w in vocab:
    v = [rng.gauss(0.0, 0.3) for _ in range(DIM)]
    if w in POS:
        v[0] += 1.0
    elif w in NEG:
        v[0] -= 1.0
    elif w in NEGATORS:
        v[1] += 1.0
    elif w == "but":
        v[2] += 1.0
    base[w] = v
# "moving" is left out so that an OOV word is exercised.
with open(HERE / "vectors.txt", "w") as f:
    kept = [w for w in vocab if w != "moving"]
    f.write(f"{len(kept)} {DIM}\n")
    for w in kept:
        f.write(w + " " + " ".join(f"{x:.6f}" for x in base[w]) + "\n")

# Contextual vectors: static vector mixed with the sentence mean, per sentence id.
with open(HERE / "contextual.jsonl", "w") as f:
    f.write(json.dumps({"dim": DIM}) + "\n")
    for name, trees in splits.items():
        for i, tree in enumerate(trees):
            toks = tokens_of(tree)
            mean = [sum(base[t][k] for t in toks) / len(toks) for k in range(DIM)]
            rows = [[round(0.6 * base[t][k] + 0.4 * mean[k], 6) for k in range(DIM)] for t in toks]
            f.write(json.dumps({"id": f"{name}-{i}", "tokens": toks, "vectors": rows}) + "\n")

# Nine crowd ratings for the first test sentences with a definite label.
with open(HERE / "judgments.csv", "w") as f:
    f.write("sentence_id,sst2_label," + ",".join(f"score_{k}" for k in range(1, 10)) + "\n")
    written = 0
    for i, tree in enumerate(splits["test"]):
        lab = int(tree[1])
        if lab == 2:
            continue
        pos = lab >= 3
        agree = rng.choice([9, 8, 7, 6, 5, 4, 3])
        scores = [1.0 if pos else 0.0] * agree + [0.0 if pos else 1.0] * (9 - agree)
        scores = [0.5 if rng.random() < 0.15 else s for s in scores]
        rng.shuffle(scores)
        f.write(f"test-{i},{'+' if pos else '-'}," + ",".join(f"{s:g}" for s in scores) + "\n")
        written += 1
        if written == 30:
            break

(HERE / "negation_lexicon.txt").write_text("\n".join(["not", "n't", "no", "never"]) + "\n")
