"""Multi-couple color transfer with a Thin-Plate-Spline color map.

The color distributions of a target (low-res frame) and a reference
(high-res still) are summarized as equiprobable Gaussian mixtures whose means
come from k-means.  A TPS map ``phi(x) = A x + b + sum_j W_j |x - c_j|`` is
fitted by gradient descent on the L2 divergence between the mixture of the
warped target means and the reference mixture, annealing the bandwidth from
coarse to fine so that distant distributions still attract each other.  Couples share one set of
control points ``c_j`` so their parameter sets can be averaged entrywise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

TPS_MAGIC = "tps-color-transfer 1"


class TransferFitError(RuntimeError):
    pass


@dataclass
class TransferConfig:
    K: int = 50
    h: float = 0.1
    n_control: int = 30
    max_iters: int = 500
    step: float = 0.05
    lam: float = 1e-3
    seed: int = 0
    max_pixels: int = 100_000
    tol: float = 1e-8
    # bandwidth multipliers, coarse to fine; the last stage always runs at h
    anneal: tuple = (4.0, 2.0, 1.0)

    def __post_init__(self):
        self.anneal = tuple(float(a) for a in self.anneal)
        if self.K < 1 or self.h <= 0 or self.max_iters < 1 or self.lam < 0 or self.step <= 0:
            raise ValueError(f"invalid transfer configuration: {self}")
        if not self.anneal or self.anneal[-1] != 1.0 or min(self.anneal) <= 0:
            raise ValueError("anneal must be positive multipliers ending with 1.0")

    def bandwidths(self):
        return [self.h * a for a in self.anneal]


@dataclass
class GMMModel:
    """Equiprobable isotropic Gaussian mixture over RGB."""

    means: np.ndarray
    bandwidth: float

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))

    @property
    def K(self):
        return len(self.means)

    @property
    def weight(self):
        return 1.0 / self.K


@dataclass
class TPSParams:
    affine: np.ndarray
    offset: np.ndarray
    radial_weights: np.ndarray
    control_points: np.ndarray

    def __post_init__(self):
        self.affine = np.asarray(self.affine, dtype=np.float64).reshape(3, 3)
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(3)
        self.control_points = np.asarray(self.control_points, dtype=np.float64).reshape(-1, 3)
        self.radial_weights = np.asarray(self.radial_weights, dtype=np.float64).reshape(-1, 3)
        if self.radial_weights.shape != self.control_points.shape:
            raise ValueError("radial_weights must have one row per control point")

    @classmethod
    def identity(cls, control_points=None):
        cp = np.zeros((0, 3)) if control_points is None else np.asarray(control_points, dtype=np.float64)
        return cls(np.eye(3), np.zeros(3), np.zeros_like(cp), cp)

    def __call__(self, x):
        return tps_eval(self, x)

    def vector(self):
        return np.concatenate([self.affine.ravel(), self.offset, self.radial_weights.ravel()])

    def with_vector(self, v):
        return TPSParams(v[:9], v[9:12], v[12:], self.control_points)

    def copy(self):
        return self.with_vector(self.vector().copy())


def _radial(x, control_points):
    # U(r) = r, the 3D biharmonic kernel
    d = x[..., None, :] - control_points
    return np.sqrt(np.einsum("...ij,...ij->...i", d, d))


def tps_eval(theta, x):
    """Evaluate the TPS color map at points ``x`` (shape ``(..., 3)``), unclipped."""
    x = np.asarray(x, dtype=np.float64)
    y = x @ theta.affine.T + theta.offset
    if len(theta.control_points):
        y = y + _radial(x, theta.control_points) @ theta.radial_weights
    return y


def side_condition_projector(control_points):
    """Projector onto radial weights with zero sum and zero first moments."""
    cp = np.asarray(control_points, dtype=np.float64)
    P = np.hstack([np.ones((len(cp), 1)), cp])
    return np.eye(len(cp)) - P @ np.linalg.pinv(P)


# -- k-means -----------------------------------------------------------------


def _sq_dists(points, centers):
    return (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )


def kmeans_colors(pixels, K, seed=0, max_iters=100):
    """Lloyd's k-means with k-means++ seeding; deterministic for a given seed.

    When there are fewer than ``K`` distinct points, ``K`` is reduced to the
    distinct count (logged as a warning) and the distinct points are returned.
    """
    pts = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("kmeans_colors: no points")
    distinct = np.unique(pts, axis=0)
    if len(distinct) <= K:
        if len(distinct) < K:
            log.warning("kmeans_colors: only %d distinct colors, reducing K from %d", len(distinct), K)
        return distinct

    rng = np.random.default_rng(seed)
    centers = np.empty((K, 3))
    centers[0] = pts[rng.integers(len(pts))]
    d2 = np.maximum(_sq_dists(pts, centers[:1])[:, 0], 0.0)
    for k in range(1, K):
        centers[k] = pts[rng.choice(len(pts), p=d2 / d2.sum())]
        d2 = np.minimum(d2, np.maximum(_sq_dists(pts, centers[k : k + 1])[:, 0], 0.0))

    labels = None
    for _ in range(max_iters):
        new_labels = np.argmin(_sq_dists(pts, centers), axis=1)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=K)
        sums = np.stack([np.bincount(labels, weights=pts[:, c], minlength=K) for c in range(3)], axis=1)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
    return centers


def foreground_pixels(image, mask=None, max_pixels=100_000):
    """Foreground colors as an ``(n, 3)`` array, stride-subsampled to ``max_pixels``."""
    img = np.asarray(image, dtype=np.float64)
    pts = img.reshape(-1, 3) if mask is None else img[np.asarray(mask, dtype=bool)]
    if len(pts) > max_pixels:
        stride = -(-len(pts) // max_pixels)
        pts = pts[::stride]
    return pts


# -- L2 energy ----------------------------------------------------------------


def _gauss(diff, h):
    # N(0; diff, 2 h^2 I) in 3D
    s2 = 2.0 * h * h
    sq = np.einsum("...i,...i->...", diff, diff)
    return (2.0 * np.pi * s2) ** -1.5 * np.exp(-sq / (2.0 * s2))


def _check_bandwidth(gmm_f, gmm_I):
    if gmm_f.bandwidth != gmm_I.bandwidth:
        raise ValueError("both mixtures must share one bandwidth")
    return gmm_f.bandwidth


def regularization(theta, lam):
    return lam * float(np.sum(theta.radial_weights**2))


def l2_energy(theta, gmm_f, gmm_I, lam=0.0):
    """``||p_f||^2 - 2 <p_f|p_I>`` for the warped target mixture, plus ``lam ||W||^2``."""
    h = _check_bandwidth(gmm_f, gmm_I)
    y = tps_eval(theta, gmm_f.means)
    self_term = np.sum(_gauss(y[:, None, :] - y[None, :, :], h)) * gmm_f.weight**2
    cross = np.sum(_gauss(y[:, None, :] - gmm_I.means[None, :, :], h)) * gmm_f.weight * gmm_I.weight
    return float(self_term - 2.0 * cross) + regularization(theta, lam)


def l2_energy_gradient(theta, gmm_f, gmm_I, lam=0.0):
    """Analytic gradient of :func:`l2_energy` as ``(dA, db, dW)``."""
    h = _check_bandwidth(gmm_f, gmm_I)
    x = gmm_f.means
    y = tps_eval(theta, x)
    s2 = 2.0 * h * h
    # d/dy_m of N(0; y_m - z, s2 I) = -N(...) (y_m - z) / s2
    dff = y[:, None, :] - y[None, :, :]
    gff = _gauss(dff, h)
    dfi = y[:, None, :] - gmm_I.means[None, :, :]
    gfi = _gauss(dfi, h)
    grad_y = (
        -2.0 * gmm_f.weight**2 * np.einsum("mi,mid->md", gff, dff)
        + 2.0 * gmm_f.weight * gmm_I.weight * np.einsum("mi,mid->md", gfi, dfi)
    ) / s2
    dA = grad_y.T @ x
    db = grad_y.sum(axis=0)
    if len(theta.control_points):
        dW = _radial(x, theta.control_points).T @ grad_y + 2.0 * lam * theta.radial_weights
    else:
        dW = np.zeros((0, 3))
    return dA, db, dW


# -- fitting ------------------------------------------------------------------


@dataclass
class FitInfo:
    """Descent record; ``energies`` are the accepted objective values at the final bandwidth."""

    energies: list = field(default_factory=list)
    n_iters: int = 0  # summed over annealing stages
    converged: bool = False
    K_target: int = 0
    K_reference: int = 0
    stages: list = field(default_factory=list)  # (bandwidth, energies) per annealing stage


def _split(couple):
    if isinstance(couple, tuple):
        image, mask = couple
    else:
        image, mask = couple, None
    return image, mask


def descend(theta, gmm_f, gmm_I, config):
    """Gradient descent from ``theta`` at the mixtures' bandwidth.

    Every iteration tries twice the previously accepted step and halves it
    until the objective does not increase.  Radial-weight updates are
    projected onto the side conditions.  Returns the final parameters and a
    :class:`FitInfo`.
    """
    proj = side_condition_projector(theta.control_points) if len(theta.control_points) else None
    v = theta.vector()
    E = l2_energy(theta, gmm_f, gmm_I, config.lam)
    info = FitInfo(energies=[E])
    step = config.step
    for it in range(config.max_iters):
        dA, db, dW = l2_energy_gradient(theta.with_vector(v), gmm_f, gmm_I, config.lam)
        if proj is not None:
            dW = proj @ dW
        g = np.concatenate([dA.ravel(), db, dW.ravel()])
        if not np.any(g):
            info.converged = True
            break
        step *= 2.0
        while step > 1e-14:
            trial = v - step * g
            E_trial = l2_energy(theta.with_vector(trial), gmm_f, gmm_I, config.lam)
            if E_trial <= E:
                break
            step *= 0.5
        else:
            info.converged = True
            break
        v, dE, E = trial, E - E_trial, E_trial
        info.energies.append(E)
        info.n_iters = it + 1
        if dE < config.tol:
            info.converged = True
            break
    return theta.with_vector(v), info


def anneal_descend(theta, means_f, means_I, config):
    """Run :func:`descend` over the bandwidth schedule, coarse to fine."""
    stages, total = [], 0
    for h in config.bandwidths():
        theta, info = descend(theta, GMMModel(means_f, h), GMMModel(means_I, h), config)
        stages.append((h, info.energies))
        total += info.n_iters
    info.stages, info.n_iters = stages, total
    return theta, info


def build_gmm(image, mask, config):
    pts = foreground_pixels(image, mask, config.max_pixels)
    if len(pts) == 0:
        raise TransferFitError("empty foreground")
    return GMMModel(kmeans_colors(pts, config.K, config.seed), config.h)


def fit_single_couple(target, reference, control_points, config=None, full_output=False):
    """Fit TPS parameters mapping ``target`` colors onto ``reference`` colors.

    ``target`` and ``reference`` are images or ``(image, mask)`` tuples.
    Descent starts at the identity map and follows the bandwidth schedule
    ``config.anneal``.  With ``full_output`` a
    ``(theta, FitInfo)`` tuple is returned.
    """
    config = config or TransferConfig()
    t_img, t_mask = _split(target)
    r_img, r_mask = _split(reference)
    try:
        gmm_f = build_gmm(t_img, t_mask, config)
        gmm_I = build_gmm(r_img, r_mask, config)
    except TransferFitError as exc:
        raise TransferFitError(f"couple rejected: {exc}") from None
    theta, info = anneal_descend(TPSParams.identity(control_points), gmm_f.means, gmm_I.means, config)
    info.K_target, info.K_reference = gmm_f.K, gmm_I.K
    log.debug("couple fit: %d iterations, energy %.6g -> %.6g", info.n_iters, info.energies[0], info.energies[-1])
    return (theta, info) if full_output else theta


def shared_control_points(targets, config):
    """k-means centers over the union of all target foreground colors."""
    pts = [foreground_pixels(*_split(t), config.max_pixels) for t in targets]
    pts = np.concatenate([p for p in pts if len(p)] or [np.zeros((0, 3))])
    if len(pts) == 0:
        raise TransferFitError("no foreground colors in any target")
    if len(pts) > config.max_pixels:
        pts = pts[:: -(-len(pts) // config.max_pixels)]
    return kmeans_colors(pts, config.n_control, config.seed)


def average_params(thetas):
    """Entrywise mean of parameter sets sharing control points."""
    thetas = list(thetas)
    cp = thetas[0].control_points
    mean = thetas[0].vector().copy()
    for k, th in enumerate(thetas[1:], start=2):
        if not np.array_equal(th.control_points, cp):
            raise ValueError("parameter sets use different control points")
        # running mean: exact when all sets are equal
        mean += (th.vector() - mean) / k
    return thetas[0].with_vector(mean)


def fit_multi_couple(couples, config=None, control_points=None, full_output=False):
    """Fit one color map per couple and average them.

    ``couples`` is a sequence of ``(target, reference)`` pairs.  Couples with
    empty foreground are skipped; if all are skipped :class:`TransferFitError`
    is raised.
    """
    config = config or TransferConfig()
    couples = list(couples)
    if not couples:
        raise TransferFitError("no couples given")
    if control_points is None:
        control_points = shared_control_points([t for t, _ in couples], config)
    thetas, infos = [], []
    for n, (target, reference) in enumerate(couples):
        try:
            theta, info = fit_single_couple(target, reference, control_points, config, full_output=True)
        except TransferFitError as exc:
            log.warning("couple %d skipped: %s", n, exc)
            continue
        log.info("couple %d: energy %.6g -> %.6g in %d iterations", n, info.energies[0], info.energies[-1], info.n_iters)
        thetas.append(theta)
        infos.append(info)
    if not thetas:
        raise TransferFitError("every couple was rejected")
    theta = average_params(thetas)
    return (theta, infos) if full_output else theta


def apply_transfer(theta, image, mask=None, chunk=1 << 18):
    """Replace foreground pixels by the clipped TPS map of their color."""
    img = np.asarray(image, dtype=np.float64)
    out = img.copy()
    flat = out.reshape(-1, 3)
    idx = np.arange(len(flat)) if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool))
    for start in range(0, len(idx), chunk):
        sel = idx[start : start + chunk]
        flat[sel] = np.clip(tps_eval(theta, flat[sel]), 0.0, 1.0)
    return out


# -- serialization --------------------------------------------------------------


def save_tps(theta, path):
    def row(v):
        return " ".join(f"{x:.17g}" for x in v)

    lines = [TPS_MAGIC, str(len(theta.control_points))]
    lines += [row(c) for c in theta.control_points]
    lines += [row(r) for r in theta.affine]
    lines.append(row(theta.offset))
    lines += [row(w) for w in theta.radial_weights]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tps(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != TPS_MAGIC:
        raise ValueError(f"{path}: not a TPS parameter file")
    C = int(lines[1])
    rows = [np.array([float(x) for x in ln.split()]) for ln in lines[2:]]
    if len(rows) != 2 * C + 4 or any(len(r) != 3 for r in rows):
        raise ValueError(f"{path}: malformed TPS parameter file")
    cp = np.array(rows[:C]).reshape(C, 3)
    A = np.array(rows[C : C + 3])
    b = rows[C + 3]
    W = np.array(rows[C + 4 :]).reshape(C, 3)
    return TPSParams(A, b, W, cp)
