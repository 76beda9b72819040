"""Strided-window LSTM forecasting with group-shared models, plus the error metrics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import MinMaxScaler, SpeedSeries, fit_minmax
from .neuralnet import AdamState, Sequential, TrainConfig, build_predictor, mse, optimizer_step
from .seeding import named_rng

log = logging.getLogger(__name__)

# Where the target sits relative to window start t (0-based, strided inputs
# at t, t+l, ..., t+(n_in-1)l):
#   "last_input"  -> t + (n_in-1)*l + horizon   (horizon slots after the last input)
#   "window_end"  -> t + n_in*l + horizon
CONVENTIONS = ("last_input", "window_end")


def target_offset(n_in: int, stride: int, horizon: int, convention: str = "last_input") -> int:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown target convention {convention!r}; expected one of {CONVENTIONS}")
    if n_in < 1 or stride < 1:
        raise ValueError("n_in and stride must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    span = (n_in - 1) * stride if convention == "last_input" else n_in * stride
    return span + horizon


@dataclass
class SampleSet:
    """Normalised strided windows and their scalar targets.

    ``times`` are window-start timestamps, ``target_times`` the target's.
    ``scalers`` maps each contributing segment to its train-fitted scaler.
    """

    inputs: np.ndarray
    targets: np.ndarray
    segment_ids: np.ndarray
    times: np.ndarray
    target_times: np.ndarray
    scalers: dict[str, MinMaxScaler] = field(default_factory=dict)

    def __len__(self):
        return len(self.targets)

    @property
    def n_in(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        segs = set(self.segment_ids[idx].tolist())
        return SampleSet(self.inputs[idx], self.targets[idx], self.segment_ids[idx], self.times[idx],
                         self.target_times[idx], {k: v for k, v in self.scalers.items() if k in segs})

    @classmethod
    def concat(cls, sets: list["SampleSet"]) -> "SampleSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        scalers = {}
        for s in sets:
            scalers.update(s.scalers)
        return cls(np.concatenate([s.inputs for s in sets]), np.concatenate([s.targets for s in sets]),
                   np.concatenate([s.segment_ids for s in sets]), np.concatenate([s.times for s in sets]),
                   np.concatenate([s.target_times for s in sets]), scalers)

    def denormalize(self, y) -> np.ndarray:
        """Map normalised values (aligned with the samples) back to km/h."""
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        out = np.empty_like(y)
        for seg, scaler in self.scalers.items():
            m = self.segment_ids == seg
            out[m] = scaler.inverse(y[m])
        return out

    def true_speeds(self) -> np.ndarray:
        return self.denormalize(self.targets)


def window_starts(s: SpeedSeries, n_in: int, stride: int, horizon: int,
                  convention: str = "last_input") -> np.ndarray:
    """0-based starts whose whole span is gap-free and evenly spaced in time."""
    off = target_offset(n_in, stride, horizon, convention)
    n = len(s)
    if n <= off:
        raise ValueError(f"series of length {n} too short for a window spanning {off + 1} samples")
    bad = np.isnan(s.values)
    if s.timestamps is not None:
        jumps = np.diff(s.times) != s.step
        bad_step = np.concatenate([jumps, [False]])
    else:
        bad_step = np.zeros(n, dtype=bool)
    # a start t is valid if no NaN in [t, t+off] and no time jump in [t, t+off-1]
    c_nan = np.concatenate([[0], np.cumsum(bad)])
    c_jump = np.concatenate([[0], np.cumsum(bad_step)])
    t = np.arange(n - off)
    ok = (c_nan[t + off + 1] - c_nan[t] == 0) & (c_jump[t + off] - c_jump[t] == 0)
    return t[ok]


def make_samples(s: SpeedSeries, n_in: int, stride: int, horizon: int = 1, split: float = 0.8,
                 convention: str = "last_input", sample_stride: int = 1
                 ) -> tuple[SampleSet, SampleSet]:
    """Chronological train/test windows for one segment.

    The earliest ``split`` fraction of windows (by start time) trains; the
    scaler is fit on the raw values those training windows touch and applied
    to both sets. ``sample_stride`` keeps every k-th window to thin the data.
    """
    if not 0 < split < 1:
        raise ValueError("split must lie in (0, 1)")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    off = target_offset(n_in, stride, horizon, convention)
    starts = window_starts(s, n_in, stride, horizon, convention)[::sample_stride]
    n_train = int(math.floor(split * len(starts)))
    if n_train < 1 or n_train >= len(starts):
        raise ValueError(f"segment {s.segment_id}: {len(starts)} usable windows cannot be split {split}")
    idx = starts[:, None] + stride * np.arange(n_in)[None, :]
    raw_x = s.values[idx]
    raw_y = s.values[starts + off]
    scaler = fit_minmax(np.concatenate([raw_x[:n_train].ravel(), raw_y[:n_train]]))
    times = s.times
    full = SampleSet(scaler.transform(raw_x), scaler.transform(raw_y),
                     np.full(len(starts), s.segment_id, dtype=object), times[starts],
                     times[starts + off], {s.segment_id: scaler})
    return full.subset(np.arange(n_train)), full.subset(np.arange(n_train, len(starts)))


def kfold_split(samples: SampleSet, folds: int = 10) -> list[tuple[SampleSet, SampleSet]]:
    """Contiguous time-block folds; each sample is validation exactly once."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(samples) < folds:
        raise ValueError(f"{len(samples)} samples cannot form {folds} folds")
    order = np.argsort(samples.times, kind="stable")
    blocks = np.array_split(order, folds)
    out = []
    for i, val in enumerate(blocks):
        fit = np.concatenate([b for j, b in enumerate(blocks) if j != i])
        out.append((samples.subset(np.sort(fit)), samples.subset(np.sort(val))))
    return out


# -- training -------------------------------------------------------------------

@dataclass
class PredictConfig:
    lstm1: int = 50
    lstm2: int = 25
    dense: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    patience: int | None = 5
    folds: int = 10
    split: float = 0.8
    sample_stride: int = 1
    convention: str = "last_input"
    clip_norm: float | None = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if self.folds < 2 and self.patience is not None:
            raise ValueError("early stopping needs folds >= 2")
        if min(self.lstm1, self.lstm2, self.dense) < 1:
            raise ValueError("layer sizes must be >= 1")

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, seed=self.seed, clip_norm=self.clip_norm,
                           patience=self.patience)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_mre: list[float] = field(default_factory=list)
    best_epoch: int = 0


def predict_normalized(model: Sequential, inputs: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = [model.forward(inputs[i:i + chunk, :, None]).reshape(-1)
           for i in range(0, len(inputs), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def sample_errors(model: Sequential, samples: SampleSet) -> np.ndarray:
    """Relative error of every sample in km/h (NaN where the true speed is not positive)."""
    pred = samples.denormalize(predict_normalized(model, samples.inputs))
    return relative_error(samples.true_speeds(), pred)


def _mre(model, samples):
    return float(np.nanmean(sample_errors(model, samples)))


def train_predictor(fit: SampleSet, config: PredictConfig, rng: np.random.Generator,
                    validation: SampleSet | None = None) -> tuple[Sequential, TrainHistory]:
    """Adam on MSE over normalised targets; early stopping on validation MRE if given."""
    tc = config.train_config()
    model = build_predictor(fit.n_in, config.lstm1, config.lstm2, config.dense).init_params(rng)
    params = model.params()
    state = AdamState()
    history = TrainHistory()
    best, best_params, waited = np.inf, None, 0
    for epoch in range(tc.epochs):
        order = rng.permutation(len(fit))
        losses = []
        for b in range(0, len(order), tc.batch_size):
            idx = order[b:b + tc.batch_size]
            pred = model.forward(fit.inputs[idx, :, None])
            loss, grad = mse(pred, fit.targets[idx, None])
            if not np.isfinite(loss):
                raise FloatingPointError(f"predictor loss became {loss} in epoch {epoch + 1}")
            model.backward(grad)
            optimizer_step(params, model.grads(), state, tc)
            losses.append(loss * len(idx))
        history.train_loss.append(float(np.sum(losses) / len(fit)))
        if validation is None:
            continue
        score = _mre(model, validation)
        history.val_mre.append(score)
        log.debug("epoch %d loss %.6f val MRE %.5f", epoch + 1, history.train_loss[-1], score)
        if score < best:
            best, waited, history.best_epoch = score, 0, epoch + 1
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            waited += 1
            if tc.patience is not None and waited >= tc.patience:
                break
    if best_params is not None:
        model.set_params(best_params)
    elif validation is None:
        history.best_epoch = tc.epochs
    return model, history


@dataclass
class GroupModel:
    group: int
    members: list[str]
    model: Sequential
    n_in: int
    stride: int
    horizon: int
    convention: str
    scalers: dict[str, MinMaxScaler]
    history: TrainHistory
    train_samples: SampleSet
    test_samples: SampleSet
    fit_mask: np.ndarray

    def predict(self, segment_id: str, windows) -> np.ndarray:
        """km/h predictions for raw (n, n_in) km/h windows of one member segment."""
        if segment_id not in self.scalers:
            raise KeyError(f"segment {segment_id} is not served by group {self.group}")
        windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        if windows.shape[1] != self.n_in:
            raise ValueError(f"expected windows of {self.n_in} steps, got {windows.shape[1]}")
        scaler = self.scalers[segment_id]
        return scaler.inverse(predict_normalized(self.model, scaler.transform(windows)))


def pooled_samples(group: list[SpeedSeries], n_in: int, stride: int, horizon: int,
                   config: PredictConfig) -> tuple[SampleSet, SampleSet]:
    if not group:
        raise ValueError("empty group")
    pairs = [make_samples(s, n_in, stride, horizon, config.split, config.convention,
                          config.sample_stride) for s in group]
    return SampleSet.concat([p[0] for p in pairs]), SampleSet.concat([p[1] for p in pairs])


def fit_mask(train: SampleSet, config: PredictConfig) -> np.ndarray:
    """False on the latest contiguous fold, which is held out for early stopping."""
    mask = np.ones(len(train), dtype=bool)
    if config.patience is not None:
        order = np.argsort(train.times, kind="stable")
        mask[np.array_split(order, config.folds)[-1]] = False
    return mask


def group_samples(group: list[SpeedSeries], n_in: int, stride: int, horizon: int,
                  config: PredictConfig) -> tuple[SampleSet, SampleSet, np.ndarray]:
    train, test = pooled_samples(group, n_in, stride, horizon, config)
    if config.patience is not None and len(train) < config.folds:
        raise ValueError(f"{len(train)} training windows cannot form {config.folds} folds")
    return train, test, fit_mask(train, config)


def train_gm(group: list[SpeedSeries], n_in: int, stride: int, horizon: int = 1,
             config: PredictConfig | None = None, rng: np.random.Generator | None = None,
             group_index: int = 0) -> GroupModel:
    """One predictor over the pooled training windows of every member segment.

    The latest contiguous fold of the pooled training windows is held out for
    early stopping when ``config.patience`` is set.
    """
    config = config or PredictConfig()
    rng = rng if rng is not None else named_rng(config.seed, "gm", group_index)
    train, test, mask = group_samples(group, n_in, stride, horizon, config)
    validation = None
    train_fit = train
    if config.patience is not None:
        train_fit = train.subset(np.nonzero(mask)[0])
        validation = train.subset(np.nonzero(~mask)[0])
    model, history = train_predictor(train_fit, config, rng, validation)
    return GroupModel(group_index, [s.segment_id for s in group], model, n_in, stride, horizon,
                      config.convention, dict(train.scalers), history, train, test, mask)


def train_im(s: SpeedSeries, n_in: int, stride: int, horizon: int = 1,
             config: PredictConfig | None = None, rng: np.random.Generator | None = None,
             group_index: int = 0) -> GroupModel:
    return train_gm([s], n_in, stride, horizon, config, rng, group_index)


def predict_network(models: dict[int, GroupModel], assignments: dict[str, int],
                    inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Route each segment's raw windows through its group's shared model."""
    out = {}
    for seg, windows in inputs.items():
        if seg not in assignments:
            raise KeyError(f"segment {seg} has no group")
        group = assignments[seg]
        if group not in models:
            raise KeyError(f"group {group} has no model")
        out[seg] = models[group].predict(seg, windows)
    return out


# -- metrics -------------------------------------------------------------------

def relative_error(true, pred):
    """|true - pred| / true; NaN flags a non-positive true speed (excluded downstream)."""
    true = np.asarray(true, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        re = np.where(true > 0, np.abs(true - pred) / np.where(true > 0, true, 1.0), np.nan)
    return float(re) if re.ndim == 0 else re


@dataclass
class GroupMetrics:
    group: int
    segments: list[str]
    mre: float
    mare: float
    mire: float
    pooled_mre: float
    train_mre: float = float("nan")

    @property
    def gap(self) -> float:
        return self.mre - self.train_mre


@dataclass
class EvalReport:
    segment_re: dict[str, np.ndarray]
    segment_mre: dict[str, float]
    groups: dict[int, GroupMetrics]
    network_mre: float
    excluded: dict[str, int]
    train_segment_mre: dict[str, float] = field(default_factory=dict)


def _segment_means(re_by_segment):
    means, excluded = {}, {}
    for seg, re in re_by_segment.items():
        re = np.asarray(re, dtype=np.float64)
        ok = ~np.isnan(re)
        excluded[seg] = int((~ok).sum())
        if not ok.any():
            raise ValueError(f"segment {seg} has no valid test points")
        means[seg] = _mean(re[ok])
    return means, excluded


def _mean(values) -> float:
    """Correctly rounded sum divided by the count, so aggregates are order-independent."""
    values = np.asarray(values, dtype=np.float64).ravel()
    return math.fsum(values.tolist()) / values.size


def aggregate_metrics(re_by_segment: dict[str, np.ndarray], assignments: dict[str, int],
                      train_re: dict[str, np.ndarray] | None = None) -> EvalReport:
    """Per-segment mean RE, then per-group mean / max / min over member means."""
    if not re_by_segment:
        raise ValueError("no test errors")
    means, excluded = _segment_means(re_by_segment)
    train_means = _segment_means(train_re)[0] if train_re else {}
    groups = {}
    for g in sorted(set(assignments[s] for s in means)):
        members = [s for s in means if assignments[s] == g]
        vals = np.array([means[s] for s in members])
        pooled = np.concatenate([np.asarray(re_by_segment[s], dtype=np.float64) for s in members])
        gm = GroupMetrics(g, members, _mean(vals), float(vals.max()), float(vals.min()),
                          _mean(pooled[~np.isnan(pooled)]))
        if train_means:
            gm.train_mre = _mean([train_means[s] for s in members])
        groups[g] = gm
    return EvalReport({k: np.asarray(v) for k, v in re_by_segment.items()}, means, groups,
                      _mean(list(means.values())), excluded, train_means)


def reduction_ratio(n_segments: int, n_models: int) -> float:
    if not 1 <= n_models <= n_segments:
        raise ValueError("need 1 <= models <= segments")
    return (n_segments - n_models) / n_segments


# -- experiments ---------------------------------------------------------------

HORIZON_LABELS = {1: "five-minute", 2: "ten-minute", 3: "fifteen-minute"}


def horizon_label(h: int) -> str:
    return HORIZON_LABELS.get(h, f"{5 * h}-minute")


def evaluate_models(models: list[GroupModel], assignments: dict[str, int]) -> EvalReport:
    """Test and train-fit errors of every segment under the model that serves it."""
    test_re, train_re = {}, {}
    for gm in models:
        test_err = sample_errors(gm.model, gm.test_samples)
        fit = gm.train_samples.subset(np.nonzero(gm.fit_mask)[0])
        train_err = sample_errors(gm.model, fit)
        for seg in gm.members:
            test_re[seg] = test_err[gm.test_samples.segment_ids == seg]
            train_re[seg] = train_err[fit.segment_ids == seg]
    return aggregate_metrics(test_re, assignments, train_re)


@dataclass
class SweepRow:
    horizon: int
    group: int
    algorithm: str
    train_mre: float
    test_mre: float
    gap: float
    mare: float
    mire: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    models: dict[tuple[int, str], list[GroupModel]]
    reports: dict[tuple[int, str], EvalReport]


def horizon_sweep(series: list[SpeedSeries], assignments: dict[str, int], horizons,
                  n_in: int, stride: int, config: PredictConfig | None = None,
                  include_im: bool = True) -> SweepResult:
    """GM (and optionally IM) training and evaluation at each horizon."""
    config = config or PredictConfig()
    by_id = {s.segment_id: s for s in series}
    missing = [s for s in by_id if s not in assignments]
    if missing:
        raise KeyError(f"segments without a group: {missing}")
    groups = sorted(set(assignments[s] for s in by_id))
    rows, models, reports = [], {}, {}
    for h in sorted(set(horizons)):
        if h < 1:
            raise ValueError("horizons must be >= 1")
        algos = {"GM": [train_gm([by_id[s] for s in by_id if assignments[s] == g], n_in, stride, h,
                                 config, named_rng(config.seed, "gm", h, g), g) for g in groups]}
        if include_im:
            algos["IM"] = [train_im(by_id[s], n_in, stride, h, config,
                                    named_rng(config.seed, "im", h, s), assignments[s]) for s in by_id]
        for name, trained in algos.items():
            rep = evaluate_models(trained, assignments)
            models[(h, name)] = trained
            reports[(h, name)] = rep
            for g in groups:
                m = rep.groups[g]
                rows.append(SweepRow(h, g, name, m.train_mre, m.mre, m.gap, m.mare, m.mire))
    rows.sort(key=lambda r: (r.horizon, r.group, r.algorithm))
    return SweepResult(rows, models, reports)
