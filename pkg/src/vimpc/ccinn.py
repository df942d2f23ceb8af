"""Centroidal composite inertia network.

A 12-64-64-6 tanh MLP mapping the two foot poses, expressed in the base-yaw
frame, to the six independent entries of the composite inertia about the
CoM.  Dataset generation, training (Adam, written out in numpy), inference
with a positive-definite guard, and a plain-text weight format live here.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import biped, geom
from .errors import Diverged, EmptyDataset, FormatError, OutOfReach, VimpcError

LAYER_DIMS = (12, 64, 64, 6)
LAMBDA_MIN = 1e-4
MIN_SEPARATION = 0.12
WAYPOINTS = 20
HEADER = "CCINN v1"


# -- features --------------------------------------------------------------------

def features(base_pos, base_yaw, left, right):
    """12-vector: per foot (x, y, z) in the base-yaw frame, then (roll, pitch, yaw)."""
    c, s = math.cos(base_yaw), math.sin(base_yaw)
    out = np.empty(12)
    for j, foot in enumerate((left, right)):
        d = foot.position - base_pos
        out[6 * j] = c * d[0] + s * d[1]
        out[6 * j + 1] = -s * d[0] + c * d[1]
        out[6 * j + 2] = d[2]
        out[6 * j + 3] = 0.0
        out[6 * j + 4] = 0.0
        out[6 * j + 5] = geom.wrap_angle(foot.yaw - base_yaw)
    return out


def feet_from_features(x, base_pos=np.zeros(3)):
    """Inverse of :func:`features` for a base at ``base_pos`` with zero yaw."""
    return (biped.FootPose(base_pos + x[0:3], x[5]), biped.FootPose(base_pos + x[6:9], x[11]))


# -- dataset -------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingBounds:
    """Foot-pose sampling box, relative to the nominal stance.

    ``foot_x`` is the fore-aft position under the base, ``foot_y`` the
    outward offset from the hip line, ``lift`` the half-sine swing height.
    Turning motions rotate the feet about the base by ``turn_yaw``.
    """
    base_height: tuple = (0.82, 0.88)
    foot_x: tuple = (-0.40, 0.40)
    foot_y: tuple = (-0.06, 0.10)
    foot_yaw: tuple = (-0.5, 0.5)
    turn_yaw: tuple = (-0.8, 0.8)
    lift: tuple = (0.0, 0.12)

    def __post_init__(self):
        for name in ("base_height", "foot_x", "foot_y", "foot_yaw", "turn_yaw", "lift"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise VimpcError(f"bounds {name}: lower {lo} above upper {hi}")

    @classmethod
    def collapsed(cls, base_height=biped.NOMINAL_BASE_HEIGHT):
        z = (0.0, 0.0)
        return cls((base_height, base_height), z, z, z, z, z)


@dataclass(frozen=True)
class InertiaSample:
    input: np.ndarray
    target: np.ndarray


@dataclass
class Dataset:
    inputs: np.ndarray      # (n, 12)
    targets: np.ndarray     # (n, 6)
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 12)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 6)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise VimpcError("inputs and targets differ in length")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def samples(self):
        return [InertiaSample(x, y) for x, y in zip(self.inputs, self.targets)]

    def split(self):
        """(train_idx, val_idx), deterministic in ``seed``."""
        n = len(self)
        perm = np.random.default_rng(self.seed).permutation(n)
        n_val = int(round(self.val_fraction * n))
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        header = " ".join([f"in{i}" for i in range(12)] + list(geom.SYM6_ORDER))
        np.savetxt(d / "samples.csv", np.hstack([self.inputs, self.targets]),
                   fmt="%.17g", delimiter=",", header=header, comments="")
        (d / "meta.txt").write_text(f"seed = {self.seed}\nval_fraction = {self.val_fraction!r}\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        try:
            raw = np.loadtxt(d / "samples.csv", delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise FormatError(f"cannot read dataset in {d}: {exc}") from exc
        if raw.shape[1] != 18:
            raise FormatError(f"expected 18 columns, found {raw.shape[1]}")
        meta = {}
        if (d / "meta.txt").exists():
            for line in (d / "meta.txt").read_text().splitlines():
                if "=" in line:
                    k, v = line.split("=", 1)
                    meta[k.strip()] = v.strip()
        return cls(raw[:, :12], raw[:, 12:], int(meta.get("seed", 0)),
                   float(meta.get("val_fraction", 0.2)))


def sample_is_valid(model, base_pos, left, right):
    """Reachability of both legs and minimum lateral foot separation."""
    try:
        biped.leg_ik(model, base_pos, np.zeros(3), left, "left")
        biped.leg_ik(model, base_pos, np.zeros(3), right, "right")
    except OutOfReach:
        return False
    return left.position[1] - right.position[1] >= MIN_SEPARATION


def _stance_pose(model, bounds, rng, side, turn):
    sgn = 1.0 if side == "left" else -1.0
    y = model.hip_offsets[side][1] + sgn * rng.uniform(*bounds.foot_y)
    x = rng.uniform(*bounds.foot_x)
    yaw = rng.uniform(*bounds.foot_yaw)
    if turn:
        a = rng.uniform(*bounds.turn_yaw)
        p = geom.rot_z(a) @ np.array([x * 0.25, y, 0.0])
        return p, a + yaw * 0.25
    return np.array([x, y, 0.0]), yaw


def generate_dataset(model, bounds=None, n_motions=1000, seed=0, val_fraction=0.2):
    """Sample forward-step and turning motions and record composite inertias.

    Each motion swings one foot from a sampled start pose to a sampled end
    pose (linear in position and yaw, half-sine lift, ``WAYPOINTS`` points)
    while the other foot holds a sampled stance pose.  Motions alternate
    between forward steps and turns.  Invalid waypoints are dropped.

    Raises
    ------
    EmptyDataset
        If every waypoint was rejected.
    """
    if n_motions < 1:
        raise VimpcError("n_motions must be at least 1")
    bounds = bounds or SamplingBounds()
    rng = np.random.default_rng(seed)
    s = np.linspace(0.0, 1.0, WAYPOINTS)
    X, Y = [], []
    for k in range(n_motions):
        turn = k % 2 == 1
        swing_side = "left" if rng.uniform() < 0.5 else "right"
        stance_side = "right" if swing_side == "left" else "left"
        base = np.array([0.0, 0.0, rng.uniform(*bounds.base_height)])
        p0, y0 = _stance_pose(model, bounds, rng, swing_side, turn)
        p1, y1 = _stance_pose(model, bounds, rng, swing_side, turn)
        ps, ys = _stance_pose(model, bounds, rng, stance_side, turn)
        lift = rng.uniform(*bounds.lift)
        stance = biped.FootPose(ps, ys)
        for sk in s:
            # p0 + s (p1 - p0) stays exact when the endpoints coincide
            p = p0 + sk * (p1 - p0)
            p[2] += lift * math.sin(math.pi * sk)
            swing = biped.FootPose(p, y0 + sk * (y1 - y0))
            left, right = (swing, stance) if swing_side == "left" else (stance, swing)
            if not sample_is_valid(model, base, left, right):
                continue
            I6, _ = biped.composite_inertia(model, base, np.zeros(3), left, right)
            X.append(features(base, 0.0, left, right))
            Y.append(I6)
    if not X:
        raise EmptyDataset("every sampled waypoint was rejected")
    return Dataset(np.array(X), np.array(Y), seed, val_fraction)


# -- network -------------------------------------------------------------------------

@dataclass
class MlpParams:
    weights: list           # per layer (out, in)
    biases: list            # per layer (out,)
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray
    log: list = field(default_factory=list)

    def __post_init__(self):
        dims = tuple([self.weights[0].shape[1]] + [W.shape[0] for W in self.weights])
        if dims != LAYER_DIMS:
            raise VimpcError(f"layer dims {dims}, expected {LAYER_DIMS}")
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[0],):
                raise VimpcError("bias length does not match its layer")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise VimpcError("standardization scales must be positive")

    @property
    def dims(self):
        return LAYER_DIMS

    def equals(self, other):
        arrays = lambda p: list(p.weights) + list(p.biases) + [p.in_mean, p.in_scale, p.out_mean, p.out_scale]
        return all(np.array_equal(a, b) for a, b in zip(arrays(self), arrays(other)))


def _standardizer(A, constant_scale=None):
    """Column mean and scale.

    Constant columns (e.g. the always-zero foot roll/pitch inputs) get
    ``constant_scale`` times max(1, |mean|), or unit scale when it is None.
    """
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    fill = 1.0 if constant_scale is None else constant_scale * np.maximum(1.0, np.abs(mean))
    scale = np.where(scale > 1e-12, scale, fill)
    return mean, scale


def standardize(x, mean, scale):
    return (x - mean) / scale


def destandardize(y, mean, scale):
    return y * scale + mean


def _forward(params, Xs):
    """Standardized forward pass; returns output and hidden activations."""
    acts = [Xs]
    a = Xs
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return a, acts


def raw_predict(params, X):
    """Destandardized network output, no positive-definite guard. (n, 6)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y, _ = _forward(params, standardize(X, params.in_mean, params.in_scale))
    return destandardize(y, params.out_mean, params.out_scale)


def project_pd(I6, lam_min=LAMBDA_MIN):
    """Clamp eigenvalues to ``lam_min``. Returns (sym6, projected flag)."""
    M = geom.sym6_to_mat(I6)
    w, V = np.linalg.eigh(M)
    if w.min() >= lam_min:
        return np.asarray(I6, dtype=float), False
    w = np.maximum(w, lam_min)
    return geom.mat_to_sym6((V * w) @ V.T), True


def predict(params, x):
    """Inertia for one 12-vector input. Returns (sym6, projected flag)."""
    return project_pd(raw_predict(params, x)[0])


def predict_batch(params, X):
    """Inertias for many inputs. Returns ((n, 6), (n,) projected flags)."""
    Y = raw_predict(params, X)
    M = geom.sym6_to_mat(Y)
    w = np.linalg.eigvalsh(M)
    flags = w.min(axis=1) < LAMBDA_MIN
    for i in np.flatnonzero(flags):
        Y[i], _ = project_pd(Y[i])
    return Y, flags


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 500
    batch: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _init_params(rng, in_mean, in_scale, out_mean, out_scale):
    Ws, bs = [], []
    for fan_in, fan_out in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpParams(Ws, bs, in_mean, in_scale, out_mean, out_scale)


def relative_frobenius(pred, target):
    """Per-sample ``||P - T||_F / ||T||_F`` for sym6 rows."""
    P = geom.sym6_to_mat(pred)
    T = geom.sym6_to_mat(target)
    return np.linalg.norm(P - T, axis=(1, 2)) / np.linalg.norm(T, axis=(1, 2))


def train(data, cfg=None, min_samples=500, progress=None):
    """Fit the MLP by minibatch Adam on standardized mean squared error.

    Raises
    ------
    Diverged
        If the training loss becomes non-finite.
    """
    cfg = cfg or TrainConfig()
    tr, va = data.split()
    if tr.size < min_samples:
        raise VimpcError(f"need at least {min_samples} training samples, have {tr.size}")
    X, Y = data.inputs[tr], data.targets[tr]
    in_mean, in_scale = _standardizer(X)
    # a constant target column is reproduced from its mean, whatever the net outputs
    out_mean, out_scale = _standardizer(Y, constant_scale=1e-9)
    Xs = standardize(X, in_mean, in_scale)
    Ys = standardize(Y, out_mean, out_scale)
    rng = np.random.default_rng(cfg.seed)
    p = _init_params(rng, in_mean, in_scale, out_mean, out_scale)
    theta = p.weights + p.biases
    m1 = [np.zeros_like(t) for t in theta]
    m2 = [np.zeros_like(t) for t in theta]
    L = len(p.weights)
    n = Xs.shape[0]
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = perm[start:start + cfg.batch]
            out, acts = _forward(p, Xs[idx])
            err = out - Ys[idx]
            total += float(np.sum(err * err))
            # backprop of mean squared error over batch and outputs
            delta = 2.0 * err / err.size
            gW, gb = [None] * L, [None] * L
            for i in range(L - 1, -1, -1):
                gW[i] = delta.T @ acts[i]
                gb[i] = delta.sum(axis=0)
                if i:
                    delta = (delta @ p.weights[i]) * (1.0 - acts[i] ** 2)
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for j, g in enumerate(gW + gb):
                m1[j] = cfg.beta1 * m1[j] + (1.0 - cfg.beta1) * g
                m2[j] = cfg.beta2 * m2[j] + (1.0 - cfg.beta2) * g * g
                theta[j] -= cfg.lr * (m1[j] / c1) / (np.sqrt(m2[j] / c2) + cfg.eps)
        loss = total / Ys.size
        if not math.isfinite(loss):
            raise Diverged(f"training loss became {loss} at epoch {epoch}")
        entry = {"epoch": epoch, "train_mse": loss}
        if epoch == cfg.epochs - 1 or (epoch + 1) % 50 == 0:
            if va.size:
                entry["val_median_rel_fro"] = float(np.median(
                    relative_frobenius(raw_predict(p, data.inputs[va]), data.targets[va])))
            entry["train_median_rel_fro"] = float(np.median(
                relative_frobenius(raw_predict(p, X), Y)))
        p.log.append(entry)
        if progress is not None:
            progress(entry)
    return p


def evaluate(params, data):
    """Relative Frobenius errors of the network against dataset targets."""
    pred, flags = predict_batch(params, data.inputs)
    err = relative_frobenius(pred, data.targets)
    return {"n": len(data), "median_rel_fro": float(np.median(err)),
            "p95_rel_fro": float(np.percentile(err, 95)), "max_rel_fro": float(err.max()),
            "projected": int(flags.sum())}


# -- text container ------------------------------------------------------------------

def format_row(values):
    return " ".join(f"{float(v):.17g}" for v in values)


class LineReader:
    """Sequential reader over numbered text lines for the weight containers."""

    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.lines):
            raise FormatError(f"unexpected end of file while reading {what}", self.pos + 1)
        self.pos += 1
        return self.lines[self.pos - 1]

    def row(self, count, what):
        line = self.next(what)
        parts = line.split()
        if len(parts) != count:
            raise FormatError(f"{what}: expected {count} values, found {len(parts)}", self.pos)
        try:
            return np.array([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{what}: {exc}", self.pos) from exc

    def header(self, expected):
        line = self.next("header").strip()
        if line != expected:
            raise FormatError(f"unsupported header {line!r}, expected {expected!r}", self.pos)

    def finish(self):
        rest = [l for l in self.lines[self.pos:] if l.strip()]
        if rest:
            raise FormatError(f"{len(rest)} unexpected trailing lines", self.pos + 1)


def dumps_weights(params):
    lines = [HEADER, " ".join(str(d) for d in LAYER_DIMS)]
    for v in (params.in_mean, params.in_scale, params.out_mean, params.out_scale):
        lines.append(format_row(v))
    for W, b in zip(params.weights, params.biases):
        lines.extend(format_row(r) for r in W)
        lines.append(format_row(b))
    return "\n".join(lines) + "\n"


def loads_weights(text):
    r = LineReader(text)
    r.header(HEADER)
    dims = r.next("layer dims").split()
    if tuple(dims) != tuple(str(d) for d in LAYER_DIMS):
        raise FormatError(f"layer dims {' '.join(dims)}, expected "
                          f"{' '.join(str(d) for d in LAYER_DIMS)}", r.pos)
    in_mean = r.row(12, "input mean")
    in_scale = r.row(12, "input scale")
    out_mean = r.row(6, "output mean")
    out_scale = r.row(6, "output scale")
    Ws, bs = [], []
    for li, (fi, fo) in enumerate(zip(LAYER_DIMS[:-1], LAYER_DIMS[1:])):
        Ws.append(np.array([r.row(fi, f"layer {li} weights") for _ in range(fo)]))
        bs.append(r.row(fo, f"layer {li} bias"))
    r.finish()
    try:
        return MlpParams(Ws, bs, in_mean, in_scale, out_mean, out_scale)
    except VimpcError as exc:
        raise FormatError(str(exc)) from exc


def save_weights(params, path):
    Path(path).write_text(dumps_weights(params))


def load_weights(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return loads_weights(text)


DEFAULT_WEIGHTS = Path(__file__).resolve().parent / "data" / "ccinn_default.txt"


def load_default():
    """Pretrained weights shipped with the package for the default model."""
    return load_weights(DEFAULT_WEIGHTS)
