"""Shared fixtures: a small synthetic corpus for unit tests and the training
benchmark used by the slow/acceptance tests."""

import numpy as np
import pytest

from vicspeech.codebook import fit_kmeans
from vicspeech.losses import VicWeights
from vicspeech.model import EncoderConfig
from vicspeech.signal import build_corpus
from vicspeech.trainer import Corpus, TrainConfig


@pytest.fixture(scope="session")
def mini_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_corpus")
    build_corpus(out, n_utterances=6, corpus_seed=100, vocab_size=6, n_segments=6)
    return out


@pytest.fixture(scope="session")
def mini_corpus(mini_corpus_dir):
    return Corpus.load(mini_corpus_dir / "manifest.tsv")


@pytest.fixture(scope="session")
def mini_codebook(mini_corpus):
    frames = np.concatenate([mini_corpus.clean_features(i).frames
                             for i in range(len(mini_corpus))])
    return fit_kmeans(frames, k=6, max_iters=30, seed=7)


@pytest.fixture(scope="session")
def mini_encoder_config():
    return EncoderConfig(feature_dim=40, model_dim=16, n_blocks=1, mlp_hidden=32,
                         k_codewords=6, mask_start_prob=0.12, mask_span=5)


@pytest.fixture(scope="session")
def bench(tmp_path_factory):
    """The synthetic benchmark behind the slow tests: 24 train / 8 eval
    utterances, k=12 codebook, d=32 encoder, music+natural training noise,
    hinge threshold matched to this encoder's representation scale."""
    root = tmp_path_factory.mktemp("bench")
    train_manifest = build_corpus(root / "train", n_utterances=24, corpus_seed=100,
                                  vocab_size=8, n_segments=10)
    eval_manifest = build_corpus(root / "eval", n_utterances=8, corpus_seed=200,
                                 vocab_size=8, n_segments=10)
    train = Corpus.load(train_manifest)
    ev = Corpus.load(eval_manifest)
    frames = np.concatenate([train.clean_features(i).frames for i in range(len(train))])
    cb = fit_kmeans(frames, k=12, max_iters=50, seed=7)
    enc_cfg = EncoderConfig(feature_dim=40, model_dim=32, n_blocks=2, mlp_hidden=64,
                            k_codewords=12)
    base_cfg = TrainConfig(steps=400, batch_utterances=8, learning_rate=1e-3, seed=10,
                           noise_kinds=("music", "natural"), snr_range_db=(5.0, 10.0),
                           vic=VicWeights(gamma=2.0))
    return dict(root=root, train_manifest=train_manifest, eval_manifest=eval_manifest,
                train=train, ev=ev, cb=cb, enc_cfg=enc_cfg, base_cfg=base_cfg)


@pytest.fixture(scope="session")
def bench_teacher(bench):
    """The benchmark's stage-0 teacher (600 clean steps)."""
    from dataclasses import replace

    from vicspeech.trainer import pretrain_clean

    state, log = pretrain_clean(bench["train"], bench["cb"],
                                replace(bench["base_cfg"], steps=600),
                                enc_cfg=bench["enc_cfg"])
    return state, log
