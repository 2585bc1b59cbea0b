import time
import numpy as np
from accoref.corpus import SynthConfig, generate_synthetic
from accoref.embeddings import hash_embeddings
from accoref.training import TrainConfig, train

docs = generate_synthetic(SynthConfig(n_docs=100, vocab_size=50, entities_per_doc=3,
                                      mentions_per_entity=4, pronoun_rate=0.5, seed=0))
table = hash_embeddings(docs, 64, 0)

def run(tag, **kw):
    base = dict(epochs=20, gamma_rl=0.3, entropy_weight=0.4, aux_weight=4.0,
                episodes_per_doc=4)
    base.update(kw)
    cfg = TrainConfig(**base)
    t0 = time.time()
    res = train(docs, table, cfg)
    f1s = [round(h["avg_f1"], 3) for h in res.history]
    first = next((i+1 for i, v in enumerate(f1s) if v >= 0.85), None)
    print(f"{tag} wall={time.time()-t0:.0f}s final={f1s[-1]} best={max(f1s)} cross85@{first}", flush=True)
    print("   ", f1s, flush=True)

run("K=2 seed0", episodes_per_doc=2, seed=0)
run("K=4 seed1", seed=1)
run("K=4 seed2", seed=2)
run("K=4 seed1 no-detect", seed=1, detection_loss=False)
