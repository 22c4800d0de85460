import numpy as np
import pytest

from ragcap import corpus
from ragcap import pipeline as P
from ragcap.decoder import model as M
from ragcap.decoder import training as T
from ragcap.encoder import EncoderConfig
from ragcap.metrics import EvalPair, bleu

ENC = EncoderConfig(dim=16, seed=0, alpha=0.1)
SMALL = dict(n_layers=2, d_model=16, n_heads=2, d_ff=32, max_len=96)


def toy_setup(n=8, seed=0):
    ds = corpus.generate([corpus.CITY], corpus.GenConfig(seed=seed, samples_per_domain=n, check_hooks=False))
    recs = list(ds)
    store = P.caption_store(ds, recs, ENC, "train")
    ckpt = P.new_checkpoint(ds, SMALL, ENC, seed)
    examples = P.audio_examples(recs, store, ckpt.vocab, 4, SMALL["max_len"], refs_per_sample=2)
    return ds, recs, store, ckpt, examples


def test_defaults():
    c = T.TrainConfig()
    assert (c.lr, c.epochs, c.batch_size, c.beta1, c.beta2, c.eps) == (5e-5, 100, 32, 0.9, 0.999, 1e-8)
    with pytest.raises(ValueError):
        T.TrainConfig(lr=0.0)


def test_freeze_contract_30_epochs():
    _, _, _, ckpt, examples = toy_setup()
    init = M.copy_params(ckpt.params)
    res = T.train(ckpt.params, ckpt.config, examples, T.TrainConfig(lr=1e-3, epochs=30, batch_size=8))
    for k, v in res.params.items():
        if M.is_xattn(k):
            assert not np.array_equal(v, init[k]), k
        else:
            assert v.tobytes() == init[k].tobytes(), k
    # the input dict is left alone too
    assert all(np.array_equal(ckpt.params[k], init[k]) for k in init)
    assert len(res.losses) == 30 and res.losses[-1] < res.losses[0]


def test_training_is_deterministic():
    _, _, _, ckpt, examples = toy_setup()
    tcfg = T.TrainConfig(lr=1e-3, epochs=3, batch_size=5, seed=4)
    a = T.train(ckpt.params, ckpt.config, examples, tcfg)
    b = T.train(ckpt.params, ckpt.config, examples, tcfg)
    assert a.losses == b.losses
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    c = T.train(ckpt.params, ckpt.config, examples, T.TrainConfig(lr=1e-3, epochs=3, batch_size=5, seed=5))
    assert c.losses != a.losses


def test_pretrain_updates_only_base():
    ds, recs, store, ckpt, _ = toy_setup()
    text = P.text_examples(recs, store, ckpt.vocab, 4, SMALL["max_len"], ds.events)
    res = T.pretrain_base(ckpt.params, ckpt.config, text, T.TrainConfig(lr=1e-3, epochs=2))
    for k, v in res.params.items():
        assert np.array_equal(v, ckpt.params[k]) == M.is_xattn(k), k


def test_dev_losses_and_callback():
    _, _, _, ckpt, examples = toy_setup()
    seen = []
    res = T.train(ckpt.params, ckpt.config, examples[:10], T.TrainConfig(lr=1e-3, epochs=2),
                  dev=examples[10:], on_epoch=lambda e, l: seen.append(e))
    assert len(res.dev_losses) == 2 and seen == [1, 2]


def test_non_finite_loss_raises(monkeypatch):
    _, _, _, ckpt, examples = toy_setup()
    monkeypatch.setattr(M, "loss_and_grads", lambda *a, **k: (float("nan"), {}))
    with pytest.raises(T.NumericalError):
        T.train(ckpt.params, ckpt.config, examples, T.TrainConfig(lr=1e-3, epochs=1))


def test_sibling_exclusion_in_training_prompts():
    _, recs, _, _, examples = toy_setup()
    for ex, r in zip(examples[::2], recs):
        assert not set(ex.prompt.captions) & set(r.captions)


def test_overfit(overfit):
    res = overfit["result"]
    assert res.losses[-1] < 0.1
    assert overfit["exact"] >= 9
    smooth = T.smoothed(res.losses, 10)
    assert np.all(np.diff(smooth) < 0)


def test_overfit_eval_on_train_split(overfit):
    ckpt, recs, store = overfit["checkpoint"], overfit["records"], overfit["store"]
    gens = P.caption_records(ckpt, recs, store, k=4)
    b1 = bleu([EvalPair.from_text(g.output, r.captions) for g, r in zip(gens, recs)], 1)
    assert b1 > 0.95
