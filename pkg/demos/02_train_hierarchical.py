"""
Joint ASR-SER training with hierarchical co-attention
=====================================================

Acoustic features attend to the ASR hidden stream, the result attends to
the text stream, and the pooled vector feeds the emotion classifier. The
hidden stream also feeds a CTC head, and the two losses are mixed with
weight 0.2 on ASR.
"""

from dataclasses import replace

from jointser import data, training

records, features = data.synth_generate(data.SynthConfig(n_per_class=100))
held = [r for r in records if r.session_id == "Ses05"]
train_set = [r for r in records if r.session_id != "Ses05"]

cfg = training.TrainConfig(max_epochs=15)
print("config:", cfg.to_dict())

res = training.train(train_set, features, cfg, held, features)
print("\nepoch   L_ASR   L_SER   total   held-out WA")
for m in res.history:
    print(f"{m.epoch:5d}  {m.l_asr:6.3f}  {m.l_ser:6.3f}  {m.total:6.3f}   {m.heldout_wa:.3f}")

ev = training.evaluate(res.checkpoint, held, features)
print(f"\nheld-out session: WA {ev['wa']:.3f}  UA {ev['ua']:.3f}")

# %%
# With lambda = 0 the CTC head gets no gradient and stays at its
# initial values.

frozen = training.train(train_set, features, replace(cfg, lam=0.0, max_epochs=1))
init = training.new_model(cfg, train_set, features).params
same = (frozen.checkpoint.model.params["asr.W"] == init["asr.W"]).all()
print("ASR head untouched with lambda=0:", bool(same))
