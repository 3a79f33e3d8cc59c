"""Adam optimizer and the two-stage training pipeline.

Stage 0 pre-trains the encoder on clean features with masked codeword
prediction only, producing the teacher. Stage 1 starts the student from a
copy of the teacher and trains it on noise-augmented inputs: the frozen
teacher runs on clean, unmasked features; the student sees masked noisy
features; the masked-prediction loss meets the regularization terms computed
on frames sampled at shared (utterance, frame) coordinates.

Every stochastic choice (epoch order, mask, noise draw, frame sampling) is a
pure function of (config seed, purpose tag, step, slot), so runs are
bit-reproducible and disabling the regularizer leaves the masked-prediction
path untouched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import codebook as cb_mod
from .losses import LossBreakdown, VicWeights, masked_prediction_loss, sample_frames, \
    covariance, invariance, variance
from .model import EncoderConfig, EncoderState, TrainingDivergedError, apply_mask, \
    backward, forward, init_encoder, predict_codewords
from .signal import FRAME_LEN, HOP, N_FILTERS, FeatureSequence, NOISE_KINDS, Utterance, \
    extract_features, load_corpus, mix_at_snr, synth_noise

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainLog",
    "Corpus",
    "BatchItem",
    "adam_step",
    "derive_seed",
    "batch_indices",
    "make_batch",
    "pretrain_clean",
    "pretrain_noisy",
]

# purpose tags for stateless seed derivation
_TAG_EPOCH = 1
_TAG_MASK = 2
_TAG_NOISE = 3
_TAG_SAMPLE = 4


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer parts (order-sensitive)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_utterances: int = 8
    learning_rate: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    snr_range_db: tuple[float, float] = (5.0, 10.0)
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    vic: VicWeights = field(default_factory=VicWeights)
    use_inv: bool = True
    use_var: bool = True
    use_cov: bool = True
    vic_exclude_masked: bool = False
    seed: int = 1
    eval_interval: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ValueError("snr range low > high")
        for kind in self.noise_kinds:
            if kind not in NOISE_KINDS:
                raise ValueError(f"unknown noise kind {kind!r}")

    def effective_weights(self) -> VicWeights:
        """Disabled ablation flags force the matching term weight to 0."""
        return replace(
            self.vic,
            lam=self.vic.lam if self.use_inv else 0.0,
            mu=self.vic.mu if self.use_var else 0.0,
            nu=self.vic.nu if self.use_cov else 0.0,
        )

    @property
    def vic_active(self) -> bool:
        return self.use_inv or self.use_var or self.use_cov


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    st: AdamState,
    lr: float,
    b1: float = 0.9,
    b2: float = 0.98,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """Standard bias-corrected Adam update; returns new arrays."""
    if params.shape != grads.shape or params.shape != st.m.shape:
        raise ValueError("parameter/gradient/state lengths misaligned")
    if not np.isfinite(grads).all():
        raise TrainingDivergedError("non-finite gradients")
    t = st.t + 1
    m = b1 * st.m + (1.0 - b1) * grads
    v = b2 * st.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, t=t)


@dataclass
class EvalRow:
    step: int
    probe_acc_clean: float
    probe_acc_noisy: float
    mean_channel_std: float


@dataclass
class TrainLog:
    steps: list[LossBreakdown] = field(default_factory=list)
    eval_rows: list[EvalRow] = field(default_factory=list)

    def write_loss_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "l_m", "s", "v", "c", "l_vic", "l_tot"])
            for i, b in enumerate(self.steps):
                w.writerow([i] + [repr(float(x)) for x in (b.l_m, b.s, b.v, b.c, b.l_vic, b.l_tot)])

    def write_eval_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "probe_acc_clean", "probe_acc_noisy", "mean_channel_std"])
            for r in self.eval_rows:
                w.writerow([r.step] + [repr(float(x)) for x in
                                       (r.probe_acc_clean, r.probe_acc_noisy, r.mean_channel_std)])


# ----------------------------------------------------------------------
# corpus cache and batching
# ----------------------------------------------------------------------

class Corpus:
    """In-memory corpus with cached clean features."""

    def __init__(self, utterances: list[Utterance], frame_len: int = FRAME_LEN,
                 hop: int = HOP, n_filters: int = N_FILTERS):
        if not utterances:
            raise ValueError("empty corpus")
        self.utterances = utterances
        self.frame_len = frame_len
        self.hop = hop
        self.n_filters = n_filters
        self._clean: dict[int, FeatureSequence] = {}

    @classmethod
    def load(cls, manifest_path, frame_len: int = FRAME_LEN, hop: int = HOP,
             n_filters: int = N_FILTERS) -> "Corpus":
        return cls(load_corpus(manifest_path), frame_len=frame_len, hop=hop, n_filters=n_filters)

    def __len__(self) -> int:
        return len(self.utterances)

    def clean_features(self, i: int) -> FeatureSequence:
        if i not in self._clean:
            self._clean[i] = extract_features(
                self.utterances[i], frame_len=self.frame_len, hop=self.hop,
                n_filters=self.n_filters)
        return self._clean[i]


def _as_corpus(corpus) -> Corpus:
    if isinstance(corpus, Corpus):
        return corpus
    return Corpus.load(corpus)


@dataclass
class BatchItem:
    utt_index: int
    clean: FeatureSequence
    noisy: Optional[FeatureSequence] = None
    noise_kind: str = ""
    snr_db: float = float("inf")


def batch_indices(n_utterances: int, batch_utterances: int, step: int, seed: int) -> list[int]:
    """Utterance indices for one step of a shuffled-epoch schedule.

    Each epoch is an independent permutation derived from (seed, epoch); the
    batch walks the concatenated permutations, so epochs are bijections over
    the corpus.
    """
    out = []
    perms: dict[int, np.ndarray] = {}
    start = step * batch_utterances
    for j in range(batch_utterances):
        epoch, offset = divmod(start + j, n_utterances)
        if epoch not in perms:
            rng = np.random.default_rng(derive_seed(seed, _TAG_EPOCH, epoch))
            perms[epoch] = rng.permutation(n_utterances)
        out.append(int(perms[epoch][offset]))
    return out


def make_batch(
    corpus,
    batch_utterances: int,
    step: int,
    seed: int,
    noise_kinds: Optional[Sequence[str]] = None,
    snr_range_db: Optional[tuple[float, float]] = None,
) -> list[BatchItem]:
    """Assemble one batch; with `noise_kinds` given, each utterance gets a
    fresh noise draw at an SNR uniform in `snr_range_db`. Clean and noisy
    features share frame counts and labels by construction."""
    corpus = _as_corpus(corpus)
    items = []
    for j, utt_index in enumerate(batch_indices(len(corpus), batch_utterances, step, seed)):
        utt = corpus.utterances[utt_index]
        clean = corpus.clean_features(utt_index)
        item = BatchItem(utt_index=utt_index, clean=clean)
        if noise_kinds:
            rng = np.random.default_rng(derive_seed(seed, _TAG_NOISE, step, j, 0))
            item.noise_kind = str(noise_kinds[int(rng.integers(len(noise_kinds)))])
            item.snr_db = float(rng.uniform(*snr_range_db))
            noise = synth_noise(item.noise_kind, derive_seed(seed, _TAG_NOISE, step, j, 1),
                                len(utt.wave), utt.wave.sample_rate)
            mixed = mix_at_snr(utt.wave, noise, item.snr_db, item.noise_kind)
            item.noisy = extract_features(
                mixed.mixed, frame_len=corpus.frame_len, hop=corpus.hop,
                n_filters=corpus.n_filters, segments=utt.unit_labels, utterance_id=utt.id)
        items.append(item)
    return items


def _nonempty_mask(feats: FeatureSequence, enc_cfg: EncoderConfig, seed: int, step: int,
                   slot: int, mask_embedding: np.ndarray):
    for attempt in range(10000):
        masked, spec = apply_mask(feats, enc_cfg, derive_seed(seed, _TAG_MASK, step, slot, attempt),
                                  mask_embedding)
        if len(spec):
            return masked, spec
    raise TrainingDivergedError("could not draw a nonempty mask; raise mask_start_prob")


# ----------------------------------------------------------------------
# training loops
# ----------------------------------------------------------------------

def _train_loop(
    state: EncoderState,
    corpus: Corpus,
    cb: cb_mod.Codebook,
    cfg: TrainConfig,
    teacher: Optional[EncoderState],
    noisy_inputs: bool,
    eval_hook=None,
) -> tuple[EncoderState, TrainLog]:
    enc_cfg = state.config
    weights = cfg.effective_weights()
    vic_active = teacher is not None and cfg.vic_active
    adam = AdamState.zeros(state.to_vector().size)
    log = TrainLog()
    codeword_cache: dict[int, np.ndarray] = {}
    teacher_rep_cache: dict[int, np.ndarray] = {}  # teacher frozen: reps fixed per utterance

    for step in range(cfg.steps):
        items = make_batch(
            corpus, cfg.batch_utterances, step, cfg.seed,
            noise_kinds=cfg.noise_kinds if noisy_inputs else None,
            snr_range_db=cfg.snr_range_db if noisy_inputs else None)

        grad_vec = np.zeros(adam.m.size)
        per_item = []
        total_masked = 0
        for j, item in enumerate(items):
            if item.utt_index not in codeword_cache:
                codeword_cache[item.utt_index] = cb_mod.assign(cb, item.clean)
            student_in = item.noisy if noisy_inputs else item.clean
            masked, spec = _nonempty_mask(student_in, enc_cfg, cfg.seed, step, j,
                                          state.params["mask_embedding"])
            reps, cache = forward(state, masked, training=True, mask=spec)
            logits = predict_codewords(state, reps)
            per_item.append((item, spec, reps, cache, logits))
            total_masked += len(spec)

        l_m = 0.0
        teacher_reps_list = []
        student_reps_list = []
        grad_logits_list = []
        grad_reps_list = [None] * len(per_item)
        for item, spec, reps, cache, logits in per_item:
            labels = codeword_cache[item.utt_index]
            loss_j, grad_logits_j = masked_prediction_loss(logits, labels, spec)
            w_j = len(spec) / total_masked
            l_m += w_j * loss_j
            grad_logits_list.append(grad_logits_j * w_j)
            if vic_active:
                if item.utt_index not in teacher_rep_cache:
                    t_reps, _ = forward(teacher, item.clean, training=False)
                    teacher_rep_cache[item.utt_index] = t_reps
                teacher_reps_list.append(teacher_rep_cache[item.utt_index])
                student_reps_list.append(reps)

        s = v = c = 0.0
        if vic_active:
            exclude = [spec.masked_frames for (_, spec, _, _, _) in per_item] \
                if cfg.vic_exclude_masked else None
            pair = sample_frames(teacher_reps_list, student_reps_list, weights.n_sample,
                                 derive_seed(cfg.seed, _TAG_SAMPLE, step), exclude=exclude)
            grad_zp = np.zeros_like(pair.Zp)
            if cfg.use_inv:
                s, g = invariance(pair.Z, pair.Zp)
                grad_zp += weights.lam * g
            if cfg.use_var:
                v, g = variance(pair.Zp, weights.gamma, weights.epsilon)
                grad_zp += weights.mu * g
            if cfg.use_cov:
                c, g = covariance(pair.Zp)
                grad_zp += weights.nu * g
            for row, (u, t) in enumerate(pair.sources):
                if grad_reps_list[u] is None:
                    grad_reps_list[u] = np.zeros_like(student_reps_list[u])
                grad_reps_list[u][t] += weights.alpha * grad_zp[row]

        for j, (_, _, _, cache, _) in enumerate(per_item):
            grad_vec += backward(cache, grad_reps=grad_reps_list[j],
                                 grad_logits=grad_logits_list[j])

        breakdown = LossBreakdown.build(l_m, s, v, c, weights)
        if not np.isfinite(breakdown.l_tot):
            raise TrainingDivergedError(f"loss diverged at step {step}")
        log.steps.append(breakdown)

        vec, adam = adam_step(state.to_vector(), grad_vec, adam, cfg.learning_rate,
                              cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        state = EncoderState.from_vector(enc_cfg, vec)

        if cfg.eval_interval and eval_hook and (step + 1) % cfg.eval_interval == 0:
            log.eval_rows.append(eval_hook(step, state))
    return state, log


def pretrain_clean(
    corpus,
    cb: cb_mod.Codebook,
    cfg: TrainConfig,
    enc_cfg: Optional[EncoderConfig] = None,
    eval_hook=None,
) -> tuple[EncoderState, TrainLog]:
    """Stage 0: masked codeword prediction on clean features from a fresh
    initialization. Returns the teacher state and its log."""
    corpus = _as_corpus(corpus)
    if enc_cfg is None:
        enc_cfg = EncoderConfig(feature_dim=cb.feature_dim, k_codewords=cb.k)
    if enc_cfg.feature_dim != cb.feature_dim or enc_cfg.k_codewords != cb.k:
        raise ValueError("encoder config does not match codebook dimensions")
    state = init_encoder(enc_cfg, cfg.seed)
    return _train_loop(state, corpus, cb, cfg, teacher=None, noisy_inputs=False,
                       eval_hook=eval_hook)


def pretrain_noisy(
    teacher: EncoderState,
    corpus,
    cb: cb_mod.Codebook,
    cfg: TrainConfig,
    eval_hook=None,
) -> tuple[EncoderState, TrainLog]:
    """Stage 1: noise-robust pre-training of a student initialized from the
    frozen teacher.

    Per step: the teacher runs on clean, unmasked features; each utterance is
    mixed with a fresh noise draw; the student runs on masked noisy features;
    masked prediction plus the active regularization terms backprop into the
    student only. With all ablation flags off, the teacher forward and frame
    sampling are skipped entirely and the loop reduces to the masked-
    prediction-only trainer on noisy inputs.
    """
    corpus = _as_corpus(corpus)
    if teacher.config.feature_dim != cb.feature_dim or teacher.config.k_codewords != cb.k:
        raise ValueError("teacher config does not match codebook dimensions")
    student = teacher.copy()
    return _train_loop(student, corpus, cb, cfg,
                       teacher=teacher if cfg.vic_active else None,
                       noisy_inputs=True, eval_hook=eval_hook)
