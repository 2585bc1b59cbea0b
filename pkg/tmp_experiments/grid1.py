import json, time
import numpy as np
from accoref.corpus import SynthConfig, generate_synthetic
from accoref.embeddings import hash_embeddings
from accoref.training import TrainConfig, train

docs = generate_synthetic(SynthConfig(n_docs=100, vocab_size=50, entities_per_doc=3,
                                      mentions_per_entity=4, pronoun_rate=0.5, seed=0))
table = hash_embeddings(docs, 64, 0)
for ent, aux in ((0.5, 2.0), (0.5, 4.0), (0.3, 2.0), (0.3, 4.0)):
    cfg = TrainConfig(epochs=20, seed=0, entropy_weight=ent, aux_weight=aux)
    t0 = time.time()
    res = train(docs, table, cfg)
    f1s = [round(h["avg_f1"], 3) for h in res.history]
    print(f"ent={ent} aux={aux} wall={time.time()-t0:.0f}s final={f1s[-1]} best={max(f1s)}", flush=True)
    print("   trajectory:", f1s, flush=True)
