"""Representation statistics, the linear probe, the ablation table, and the
gradient-check suite.

Evaluation noise draws use seed tags disjoint from the training stream, so
eval excerpts never repeat training noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import codebook as cb_mod
from .losses import VicWeights, covariance, invariance, masked_prediction_loss, \
    sample_frames, variance
from .model import EncoderConfig, EncoderState, MaskSpec, forward, init_encoder, \
    param_layout, predict_codewords, backward
from .numerics import GradCheckReport, Matrix, as_matrix, grad_check, softmax_xent
from .signal import FeatureSequence, extract_features, mix_at_snr, synth_noise
from .trainer import AdamState, Corpus, TrainConfig, TrainLog, adam_step, derive_seed, \
    pretrain_clean, pretrain_noisy, _as_corpus

__all__ = [
    "VarianceRow",
    "VarianceReport",
    "ProbeResult",
    "AblationRow",
    "AblationResult",
    "pooled_channel_variance",
    "channel_variance_report",
    "covariance_offdiag_stat",
    "fit_linear_probe",
    "linear_probe",
    "n_accuracy",
    "mean_sampled_channel_std",
    "ablation_run",
    "gradcheck_suite",
]

# eval-only seed tags (training uses 1..4)
_TAG_EVAL_NOISE = 101
_TAG_PROBE_NOISE = 102
_TAG_SAMPLE_STD = 103


def _snr_str(snr_db: float) -> str:
    return "inf" if np.isinf(snr_db) else repr(float(snr_db))


def _condition_features(
    corpus: Corpus, utt_index: int, kind: str, snr_db: float, seed: int, tag: int,
) -> FeatureSequence:
    """Features of one eval utterance under a (kind, SNR) condition."""
    utt = corpus.utterances[utt_index]
    if np.isinf(snr_db) and snr_db > 0:
        return corpus.clean_features(utt_index)
    noise_seed = derive_seed(seed, tag, utt_index)
    noise = synth_noise(kind, noise_seed, len(utt.wave), utt.wave.sample_rate)
    mixed = mix_at_snr(utt.wave, noise, snr_db, kind)
    return extract_features(mixed.mixed, frame_len=corpus.frame_len, hop=corpus.hop,
                            n_filters=corpus.n_filters, segments=utt.unit_labels,
                            utterance_id=utt.id)


# ----------------------------------------------------------------------
# channel-variance report
# ----------------------------------------------------------------------

def pooled_channel_variance(reps_list: Sequence[Matrix]) -> np.ndarray:
    """Unbiased per-channel variance over all frames pooled across utterances."""
    pooled = np.concatenate([as_matrix(r, "reps") for r in reps_list], axis=0)
    if pooled.shape[0] < 2:
        raise ValueError("need at least two pooled frames")
    return pooled.var(axis=0, ddof=1)


@dataclass
class VarianceRow:
    model_tag: str
    noise_kind: str
    snr_db: float
    mean_channel_variance: float
    per_channel: np.ndarray


@dataclass
class VarianceReport:
    rows: list[VarianceRow] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_tag", "noise_kind", "snr_db", "mean_channel_variance"])
            for r in self.rows:
                w.writerow([r.model_tag, r.noise_kind, _snr_str(r.snr_db),
                            repr(float(r.mean_channel_variance))])

    def write_per_channel_csv(self, path) -> None:
        if not self.rows:
            raise ValueError("empty report")
        d = self.rows[0].per_channel.size
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_tag", "noise_kind", "snr_db"] + [f"ch{i}" for i in range(d)])
            for r in self.rows:
                w.writerow([r.model_tag, r.noise_kind, _snr_str(r.snr_db)]
                           + [repr(float(x)) for x in r.per_channel])

    def cell(self, noise_kind: str, snr_db: float) -> VarianceRow:
        for r in self.rows:
            if r.noise_kind == noise_kind and (
                (np.isinf(snr_db) and np.isinf(r.snr_db)) or r.snr_db == snr_db
            ):
                return r
        raise KeyError((noise_kind, snr_db))


def channel_variance_report(
    enc: EncoderState,
    eval_corpus,
    noise_kinds: Sequence[str],
    snr_levels_db: Sequence[float],
    seed: int = 0,
    model_tag: str = "model",
) -> VarianceReport:
    """Per-channel variance of final-layer representations, pooled over the
    eval set, for each (noise kind, SNR) cell; SNR inf is the clean sentinel."""
    corpus = _as_corpus(eval_corpus)
    report = VarianceReport()
    for kind in noise_kinds:
        for snr in snr_levels_db:
            reps_list = []
            for i in range(len(corpus)):
                feats = _condition_features(corpus, i, kind, snr, seed, _TAG_EVAL_NOISE)
                reps, _ = forward(enc, feats, training=False)
                reps_list.append(reps)
            per_channel = pooled_channel_variance(reps_list)
            report.rows.append(VarianceRow(
                model_tag=model_tag, noise_kind=kind, snr_db=float(snr),
                mean_channel_variance=float(per_channel.mean()), per_channel=per_channel))
    return report


def covariance_offdiag_stat(reps, return_excluded: bool = False):
    """Mean absolute off-diagonal entry of the correlation matrix.

    Channels with zero variance cannot be normalized; their pairs are
    excluded and counted (pass ``return_excluded=True`` to get the count).
    """
    x = as_matrix(reps, "reps")
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least two rows")
    dev = x - x.mean(axis=0, keepdims=True)
    std = dev.std(axis=0, ddof=1)
    keep = std > 0.0
    excluded = int((~keep).sum())
    dev = dev[:, keep] / std[keep]
    m = int(keep.sum())
    if m < 2:
        stat = 0.0
    else:
        corr = dev.T @ dev / (n - 1)
        off = np.abs(corr - np.diag(np.diag(corr)))
        stat = float(off.sum() / (m * (m - 1)))
    if return_excluded:
        return stat, excluded
    return stat


# ----------------------------------------------------------------------
# linear probe
# ----------------------------------------------------------------------

@dataclass
class ProbeResult:
    noise_kind: str
    snr_db: float
    frame_accuracy: float
    n_frames: int


@dataclass
class LinearProbe:
    weight: np.ndarray  # d x n_classes
    bias: np.ndarray

    def predict(self, reps: Matrix) -> np.ndarray:
        return (reps @ self.weight + self.bias).argmax(axis=1)


def _pooled_clean_reps(enc: EncoderState, corpus: Corpus) -> tuple[Matrix, np.ndarray]:
    reps_list, labels_list = [], []
    for i in range(len(corpus)):
        feats = corpus.clean_features(i)
        if feats.frame_labels is None:
            raise ValueError("probe corpus lacks ground-truth frame labels")
        reps, _ = forward(enc, feats, training=False)
        reps_list.append(reps)
        labels_list.append(feats.frame_labels)
    return np.concatenate(reps_list), np.concatenate(labels_list)


def fit_linear_probe(
    enc: EncoderState,
    train_corpus,
    seed: int = 0,
    iters: int = 300,
    lr: float = 0.05,
) -> LinearProbe:
    """Softmax regression from frozen clean representations to unit symbols."""
    corpus = _as_corpus(train_corpus)
    x, y = _pooled_clean_reps(enc, corpus)
    n, d = x.shape
    n_classes = int(y.max()) + 1
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    vec = np.concatenate([w.ravel(), b])
    st = AdamState.zeros(vec.size)
    onehot_rows = np.arange(n)
    for _ in range(iters):
        w = vec[: d * n_classes].reshape(d, n_classes)
        b = vec[d * n_classes :]
        logits = x @ w + b
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        loss = -np.log(probs[onehot_rows, y] + 1e-300).mean()
        if not np.isfinite(loss):
            raise RuntimeError("linear probe diverged")
        g = probs
        g[onehot_rows, y] -= 1.0
        g /= n
        grad = np.concatenate([(x.T @ g).ravel(), g.sum(axis=0)])
        vec, st = adam_step(vec, grad, st, lr)
    return LinearProbe(weight=vec[: d * n_classes].reshape(d, n_classes).copy(),
                       bias=vec[d * n_classes :].copy())


def linear_probe(
    enc: EncoderState,
    train_corpus,
    eval_conditions: Sequence[tuple[str, float]],
    cb: Optional[cb_mod.Codebook] = None,
    seed: int = 0,
    eval_corpus=None,
    iters: int = 300,
    lr: float = 0.05,
) -> list[ProbeResult]:
    """Fit the probe on clean representations, then score frame accuracy
    under each (noise kind, SNR) condition. SNR inf rows evaluate on clean
    input and are reported under the kind ``clean``."""
    train = _as_corpus(train_corpus)
    ev = train if eval_corpus is None else _as_corpus(eval_corpus)
    if cb is not None and cb.feature_dim != train.n_filters:
        raise ValueError("codebook feature dim does not match corpus features")
    probe = fit_linear_probe(enc, train, seed=seed, iters=iters, lr=lr)
    results = []
    seen_clean = False
    for kind, snr in eval_conditions:
        if np.isinf(snr) and snr > 0:
            if seen_clean:
                continue
            seen_clean = True
            kind = "clean"
        correct = 0
        total = 0
        for i in range(len(ev)):
            feats = _condition_features(ev, i, kind, snr, seed, _TAG_PROBE_NOISE)
            reps, _ = forward(enc, feats, training=False)
            pred = probe.predict(reps)
            correct += int((pred == feats.frame_labels).sum())
            total += feats.n_frames
        results.append(ProbeResult(noise_kind=kind, snr_db=float(snr),
                                   frame_accuracy=correct / total, n_frames=total))
    return results


def n_accuracy(results: Sequence[ProbeResult]) -> float:
    """Mean frame accuracy over the noisy (finite-SNR) conditions."""
    noisy = [r.frame_accuracy for r in results if np.isfinite(r.snr_db)]
    if not noisy:
        raise ValueError("no noisy conditions in probe results")
    return float(np.mean(noisy))


def write_probe_csv(path, results: Sequence[ProbeResult], model_tag: str = "model") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_tag", "noise_kind", "snr_db", "frame_accuracy", "n_frames"])
        for r in results:
            w.writerow([model_tag, r.noise_kind, _snr_str(r.snr_db),
                        repr(float(r.frame_accuracy)), r.n_frames])


def make_train_eval_hook(
    corpus,
    noise_kind: str = "natural",
    snr_db: float = 7.5,
    probe_iters: int = 100,
    seed: int = 0,
):
    """Periodic-eval callback for the trainer: a quick probe on clean
    representations, the same probe under one fixed noisy condition, and the
    mean per-channel std of the pooled noisy representations."""
    from .trainer import EvalRow

    corpus = _as_corpus(corpus)

    def hook(step: int, state: EncoderState) -> "EvalRow":
        probe = fit_linear_probe(state, corpus, seed=seed, iters=probe_iters)
        correct_c = total = correct_n = 0
        noisy_reps = []
        for i in range(len(corpus)):
            clean = corpus.clean_features(i)
            reps_c, _ = forward(state, clean)
            correct_c += int((probe.predict(reps_c) == clean.frame_labels).sum())
            noisy = _condition_features(corpus, i, noise_kind, snr_db, seed,
                                        _TAG_EVAL_NOISE)
            reps_n, _ = forward(state, noisy)
            correct_n += int((probe.predict(reps_n) == noisy.frame_labels).sum())
            noisy_reps.append(reps_n)
            total += clean.n_frames
        pooled = np.concatenate(noisy_reps)
        return EvalRow(step=step, probe_acc_clean=correct_c / total,
                       probe_acc_noisy=correct_n / total,
                       mean_channel_std=float(pooled.std(axis=0, ddof=1).mean()))

    return hook


# ----------------------------------------------------------------------
# sampled-representation statistics
# ----------------------------------------------------------------------

def mean_sampled_channel_std(
    enc: EncoderState,
    corpus,
    noise_kinds: Sequence[str],
    snr_range_db: tuple[float, float],
    n: int = 256,
    seed: int = 0,
) -> float:
    """Mean per-channel std of student-branch frames sampled the way the
    trainer samples them: one fresh noise draw per utterance, then `n` pooled
    frames without replacement."""
    corpus = _as_corpus(corpus)
    reps_list = []
    for i in range(len(corpus)):
        rng = np.random.default_rng(derive_seed(seed, _TAG_SAMPLE_STD, i, 0))
        kind = str(noise_kinds[int(rng.integers(len(noise_kinds)))])
        snr = float(rng.uniform(*snr_range_db))
        feats = _condition_features(corpus, i, kind, snr, seed, _TAG_SAMPLE_STD)
        reps, _ = forward(enc, feats, training=False)
        reps_list.append(reps)
    pair = sample_frames(reps_list, reps_list, n, derive_seed(seed, _TAG_SAMPLE_STD + 1))
    return float(pair.Zp.std(axis=0, ddof=1).mean())


# ----------------------------------------------------------------------
# ablation
# ----------------------------------------------------------------------

ABLATION_CONFIGS: tuple[tuple[str, tuple[bool, bool, bool]], ...] = (
    ("lm", (False, False, False)),
    ("lm+inv", (True, False, False)),
    ("lm+inv+var", (True, True, False)),
    ("lm+inv+var+cov", (True, True, True)),
)


@dataclass
class AblationRow:
    config_tag: str
    n_accuracy_mean: float
    n_accuracy_std: float
    l_m: float
    s: float
    v: float
    c: float


@dataclass
class AblationResult:
    rows: list[AblationRow]
    teacher: EncoderState
    students: dict[tuple[str, int], EncoderState]
    logs: dict[tuple[str, int], TrainLog]
    probe_results: dict[tuple[str, int], list[ProbeResult]]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["config_tag", "n_accuracy_mean", "n_accuracy_std", "l_m", "s", "v", "c"])
            for r in self.rows:
                w.writerow([r.config_tag] + [repr(float(x)) for x in
                                             (r.n_accuracy_mean, r.n_accuracy_std,
                                              r.l_m, r.s, r.v, r.c)])

    def format_table(self) -> str:
        header = f"{'config':<16} {'n-acc mean':>10} {'n-acc std':>10} {'l_m':>8} {'s':>8} {'v':>8} {'c':>8}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(f"{r.config_tag:<16} {r.n_accuracy_mean:>10.4f} {r.n_accuracy_std:>10.4f} "
                         f"{r.l_m:>8.4f} {r.s:>8.4f} {r.v:>8.4f} {r.c:>8.4f}")
        return "\n".join(lines)


def ablation_run(
    base_cfg: TrainConfig,
    train_corpus,
    cb: cb_mod.Codebook,
    seeds: Sequence[int],
    eval_conditions: Sequence[tuple[str, float]],
    enc_cfg: Optional[EncoderConfig] = None,
    eval_corpus=None,
    teacher: Optional[EncoderState] = None,
    probe_seed: int = 0,
) -> AblationResult:
    """Train the four cumulative regularizer configurations with shared seeds
    and probe each student. Rows appear in cumulative order; the first is the
    masked-prediction-only baseline."""
    if not seeds:
        raise ValueError("need at least one seed")
    train = _as_corpus(train_corpus)
    ev = train if eval_corpus is None else _as_corpus(eval_corpus)
    if teacher is None:
        teacher, _ = pretrain_clean(train, cb, base_cfg, enc_cfg=enc_cfg)
    rows = []
    students: dict[tuple[str, int], EncoderState] = {}
    logs: dict[tuple[str, int], TrainLog] = {}
    probe_results: dict[tuple[str, int], list[ProbeResult]] = {}
    for tag, (use_inv, use_var, use_cov) in ABLATION_CONFIGS:
        accs = []
        finals = []
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, use_inv=use_inv, use_var=use_var, use_cov=use_cov)
            student, log = pretrain_noisy(teacher, train, cb, cfg)
            results = linear_probe(student, train, eval_conditions, cb,
                                   seed=probe_seed, eval_corpus=ev)
            students[(tag, seed)] = student
            logs[(tag, seed)] = log
            probe_results[(tag, seed)] = results
            accs.append(n_accuracy(results))
            finals.append(log.steps[-1])
        accs_arr = np.array(accs)
        std = float(accs_arr.std(ddof=1)) if accs_arr.size > 1 else 0.0
        rows.append(AblationRow(
            config_tag=tag,
            n_accuracy_mean=float(accs_arr.mean()),
            n_accuracy_std=std,
            l_m=float(np.mean([f.l_m for f in finals])),
            s=float(np.mean([f.s for f in finals])),
            v=float(np.mean([f.v for f in finals])),
            c=float(np.mean([f.c for f in finals])),
        ))
    return AblationResult(rows=rows, teacher=teacher, students=students,
                          logs=logs, probe_results=probe_results)


# ----------------------------------------------------------------------
# gradient-check suite
# ----------------------------------------------------------------------

def _full_model_setup(seed: int):
    cfg = EncoderConfig(feature_dim=10, model_dim=16, n_blocks=2, mlp_hidden=24,
                        k_codewords=8, mask_start_prob=0.25, mask_span=3)
    rng = np.random.default_rng(seed)
    n_frames = 12
    feats = rng.standard_normal((n_frames, cfg.feature_dim))
    labels = rng.integers(cfg.k_codewords, size=n_frames)
    masked_idx = np.array([1, 2, 5, 6, 9])
    teacher = init_encoder(cfg, seed + 1)
    student = init_encoder(cfg, seed + 2)
    sampled = np.array([0, 2, 3, 5, 7, 8, 10, 11])
    teacher_reps, _ = forward(teacher, feats)
    z = teacher_reps[sampled]
    weights = VicWeights(lam=5.0, mu=1.0, nu=1.0, gamma=1.0, epsilon=1e-4, alpha=1.0, n_sample=8)
    # pick gamma above every sampled column std so the hinge is active with margin
    reps0, _ = forward(student, feats)
    gamma = 1.5 * float(reps0[sampled].std(axis=0, ddof=1).max()) + 0.5
    weights = replace(weights, gamma=gamma)
    return cfg, feats, labels, masked_idx, z, sampled, weights, student


def _full_model_loss_and_grad(seed: int):
    cfg, feats, labels, masked_idx, z, sampled, w, student = _full_model_setup(seed)
    spec = MaskSpec(masked_idx)

    def loss_of(vec: np.ndarray) -> float:
        st = EncoderState.from_vector(cfg, vec)
        x = feats.copy()
        x[masked_idx] = st.params["mask_embedding"]
        reps, _ = forward(st, x, training=True, mask=spec)
        logits = predict_codewords(st, reps)
        l_m, _ = masked_prediction_loss(logits, labels, spec)
        zp = reps[sampled]
        s, _ = invariance(z, zp)
        v, _ = variance(zp, w.gamma, w.epsilon)
        c, _ = covariance(zp)
        return l_m + w.alpha * (w.lam * s + w.mu * v + w.nu * c)

    vec0 = student.to_vector()
    st = EncoderState.from_vector(cfg, vec0)
    x = feats.copy()
    x[masked_idx] = st.params["mask_embedding"]
    reps, cache = forward(st, x, training=True, mask=spec)
    logits = predict_codewords(st, reps)
    _, grad_logits = masked_prediction_loss(logits, labels, spec)
    zp = reps[sampled]
    _, g_s = invariance(z, zp)
    _, g_v = variance(zp, w.gamma, w.epsilon)
    _, g_c = covariance(zp)
    grad_reps = np.zeros_like(reps)
    grad_reps[sampled] = w.alpha * (w.lam * g_s + w.mu * g_v + w.nu * g_c)
    grad = backward(cache, grad_reps=grad_reps, grad_logits=grad_logits)
    return loss_of, grad, vec0, cfg


def gradcheck_suite(seed: int = 0, step: float = 1e-5, n_model_coords: int = 220):
    """Central-difference checks for every analytic gradient: the loss terms,
    masked prediction, softmax cross-entropy, and the full encoder under the
    combined objective. Returns [(component_name, GradCheckReport)]."""
    rng = np.random.default_rng(seed)
    out: list[tuple[str, GradCheckReport]] = []

    logits = rng.standard_normal(9)
    target = 3
    _, g = softmax_xent(logits, target)
    out.append(("softmax_xent", grad_check(
        lambda x: softmax_xent(x, target)[0], g, logits, step)))

    t, k = 6, 5
    logits2 = rng.standard_normal((t, k))
    labels = rng.integers(k, size=t)
    spec = MaskSpec(np.array([0, 2, 3, 5]))
    _, g2 = masked_prediction_loss(logits2, labels, spec)
    out.append(("masked_prediction", grad_check(
        lambda x: masked_prediction_loss(x.reshape(t, k), labels, spec)[0],
        g2.ravel(), logits2.ravel(), step)))

    z = rng.standard_normal((8, 4))
    zp = rng.standard_normal((8, 4))
    _, g3 = invariance(z, zp)
    out.append(("invariance", grad_check(
        lambda x: invariance(z, x.reshape(8, 4))[0], g3.ravel(), zp.ravel(), step)))

    zp_small = 0.1 * rng.standard_normal((8, 4))  # all columns strictly active
    _, g4 = variance(zp_small, 1.0, 1e-4)
    out.append(("variance", grad_check(
        lambda x: variance(x.reshape(8, 4), 1.0, 1e-4)[0], g4.ravel(), zp_small.ravel(), step)))

    zp_c = rng.standard_normal((8, 5))
    _, g5 = covariance(zp_c)
    out.append(("covariance", grad_check(
        lambda x: covariance(x.reshape(8, 5))[0], g5.ravel(), zp_c.ravel(), step)))

    loss_of, grad, vec0, cfg = _full_model_loss_and_grad(seed)
    coords = set(rng.choice(vec0.size, size=min(n_model_coords, vec0.size), replace=False).tolist())
    offset = 0
    for name, shape in param_layout(cfg):
        size = int(np.prod(shape))
        if name in ("mask_embedding", "head.weight", "head.bias", "in_proj.weight"):
            coords.update(range(offset, min(offset + 3, offset + size)))
        offset += size
    out.append(("full_model_total", grad_check(loss_of, grad, vec0, step, indices=sorted(coords))))
    return out
