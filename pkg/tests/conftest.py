import time

import numpy as np
import pytest

from oracles import finite_difference, max_relative_error

from ragcap import corpus
from ragcap import pipeline as P
from ragcap.decoder import model as M
from ragcap.decoder import training as T
from ragcap.decoder.generation import generate
from ragcap.encoder import EncoderConfig, audio_hidden_states
from ragcap.prompting import RetrievalConfig, retrieve_and_prompt, sibling_exclusion


def tiny_case(seed, L=None, D=None, H=None, V=None, E=None, n_rows=3, batch=2, length=5,
              gate=None):
    """Random tiny decoder plus a batch, with gates opened unless ``gate`` is given."""
    rng = np.random.default_rng(seed)
    D = D or int(rng.choice([8, 16]))
    H = H or int(rng.choice([h for h in (1, 2, 4) if D % h == 0]))
    cfg = M.DecoderConfig(vocab_size=V or int(rng.integers(8, 24)), n_layers=L or int(rng.integers(1, 3)),
                          d_model=D, n_heads=H, d_ff=int(rng.choice([8, 16, 32])), max_len=8,
                          enc_dim=E or int(rng.choice([4, 8])))
    params = M.init_params(cfg, seed)
    for l in range(cfg.n_layers):
        g = rng.uniform(-1, 1) if gate is None else gate
        params[f"blocks.{l}.xattn.gate"][:] = g
    tokens = rng.integers(0, cfg.vocab_size, (batch, length))
    targets = rng.integers(0, cfg.vocab_size, (batch, length))
    mask = rng.random((batch, length)) < 0.7
    mask[:, -1] = True
    hidden = rng.normal(size=(batch, n_rows, cfg.enc_dim))
    hmask = np.ones((batch, n_rows), dtype=bool)
    hmask[0, -1] = False
    return cfg, params, (tokens, targets, mask, hidden, hmask)


def gradient_check(seed, wanted=M.is_xattn, use_xattn=True, **kw):
    """Largest relative error between backward and central differences."""
    cfg, params, (tokens, targets, mask, hidden, hmask) = tiny_case(seed, **kw)

    def f(p):
        return M.loss(M.forward(p, cfg, tokens, hidden, hmask, use_xattn), targets, mask)

    _, grads = M.loss_and_grads(params, cfg, tokens, targets, mask, hidden, hmask,
                                use_xattn=use_xattn, wanted=wanted)
    worst = 0.0
    for name in params:
        if not wanted(name):
            continue
        num = finite_difference(f, params, name)
        worst = max(worst, max_relative_error(grads[name], num))
    return worst


OVERFIT_DECODER = dict(n_layers=2, d_model=32, n_heads=4, d_ff=64, max_len=128)


def run_overfit(seed=0, epochs=300):
    """10-sample single-domain corpus; returns a dict of outcomes."""
    t0 = time.perf_counter()
    ds = corpus.generate([corpus.CITY], corpus.GenConfig(seed=seed, samples_per_domain=10,
                                                         check_hooks=False))
    recs = list(ds)
    enc = EncoderConfig(64, seed, 0.1)
    store = P.caption_store(ds, recs, enc, "train")
    ckpt = P.new_checkpoint(ds, OVERFIT_DECODER, enc, seed)
    text = P.text_examples(recs, store, ckpt.vocab, 4, 128, ds.events)
    base = T.pretrain_base(ckpt.params, ckpt.config, text,
                           T.TrainConfig(lr=3e-3, epochs=100, batch_size=32, seed=seed))
    examples = P.audio_examples(recs, store, ckpt.vocab, 4, 128, refs_per_sample=1)
    res = T.train(base.params, ckpt.config, examples,
                  T.TrainConfig(lr=1e-3, epochs=epochs, batch_size=32, seed=seed))
    outputs = []
    for r in recs:
        prompt = retrieve_and_prompt(r.sample, store, RetrievalConfig(4),
                                     sibling_exclusion(store, r.captions))
        outputs.append(generate(res.params, ckpt.config, ckpt.vocab, prompt,
                                audio_hidden_states(r.sample, enc)))
    return {
        "records": recs, "store": store, "base": base.params, "result": res,
        "checkpoint": ckpt.__class__(ckpt.config, ckpt.vocab, res.params, enc),
        "outputs": outputs,
        "exact": sum(o == r.captions[0] for o, r in zip(outputs, recs)),
        "seconds": time.perf_counter() - t0,
    }


@pytest.fixture(scope="session")
def overfit():
    return run_overfit()
