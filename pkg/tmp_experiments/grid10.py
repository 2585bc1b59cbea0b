import time
import numpy as np
from accoref.corpus import SynthConfig, generate_synthetic
from accoref.embeddings import hash_embeddings
from accoref.training import TrainConfig, train

docs = generate_synthetic(SynthConfig(n_docs=100, vocab_size=50, entities_per_doc=3,
                                      mentions_per_entity=4, pronoun_rate=0.5, seed=0))
table = hash_embeddings(docs, 64, 0)
for g, ent in ((0.3, 0.4), (0.1, 0.4), (0.3, 0.3), (0.6, 0.4)):
    cfg = TrainConfig(epochs=20, seed=0, gamma_rl=g, entropy_weight=ent, aux_weight=4.0,
                      episodes_per_doc=4)
    t0 = time.time()
    res = train(docs, table, cfg)
    f1s = [round(h["avg_f1"], 3) for h in res.history]
    print(f"g={g} ent={ent} wall={time.time()-t0:.0f}s final={f1s[-1]} best={max(f1s)}", flush=True)
    print("   ", f1s, flush=True)
