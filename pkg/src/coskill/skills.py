"""Stable SE(3) skills: a GMM-weighted mixture of linear systems for
position and a linear system on the attractor's tangent space for
orientation.

Position:     v = sum_k gamma_k(x) A_k (x - x*)
Orientation:  omega = R(q*) A_o log(q*^-1 q)

Each A is fitted by ridge least squares toward a stable prior ``-prior_gain*I``
and then projected: the symmetric part's eigenvalues are clipped to at
most ``-eps_stab``, and if needed the singular values of ``I + dt A`` are
clipped so that forward-Euler steps of size ``dt`` never increase
``|x - x*|``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp

from .config import SkillConfig
from .errors import DegenerateTrajectory, InsufficientData
from .geometry import (
    Pose,
    Twist,
    exp_rotation_batch,
    log_rotation_batch,
    mean_rotation,
    moving_average,
    quat_conj,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
)
from .world import OPEN

log = logging.getLogger(__name__)

MOTION_OBJECT = "motion_object"
REFERENCE_OBJECT = "reference_object"


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True, eq=False)
class GmmParams:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)

    def __post_init__(self):
        for name in ("weights", "means", "covs"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        chol = np.linalg.cholesky(self.covs)
        object.__setattr__(self, "_chol", chol)
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        d = self.means.shape[1]
        object.__setattr__(self, "_lognorm", np.log(self.weights) - 0.5 * (d * math.log(2 * math.pi) + logdet))

    @property
    def K(self) -> int:
        return len(self.weights)

    def log_joint(self, x: np.ndarray) -> np.ndarray:
        """log(pi_k N(x | mu_k, Sigma_k)), shape (N, K)."""
        x = np.atleast_2d(x)
        out = np.empty((len(x), self.K))
        for k in range(self.K):
            z = np.linalg.solve(self._chol[k], (x - self.means[k]).T)
            out[:, k] = self._lognorm[k] - 0.5 * np.sum(z * z, axis=0)
        return out

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        lj = self.log_joint(x)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def log_likelihood(self, x: np.ndarray) -> float:
        return float(np.sum(logsumexp(self.log_joint(x), axis=1)))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "covs": self.covs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GmmParams":
        return cls(d["weights"], d["means"], d["covs"])


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def fit_gmm(
    points: np.ndarray,
    K: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    cov_floor: float = 1e-6,
) -> GmmParams:
    """EM with k-means++ initialisation; covariances floored at ``cov_floor * I``."""
    x = np.asarray(points, float)
    n, d = x.shape
    if n < 4 * K:
        raise InsufficientData(f"{n} points are too few for {K} components")
    floor = cov_floor * np.eye(d)
    if K == 1:
        c = (x - x.mean(0)).T @ (x - x.mean(0)) / n
        return GmmParams(np.ones(1), x.mean(0)[None], (c + floor)[None])
    rng = np.random.default_rng(seed)
    means = _kmeans_pp(x, K, rng)
    lab = np.argmin(((x[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    resp = np.eye(K)[lab]
    prev = -np.inf
    gmm = None
    for _ in range(max_iter):
        nk = resp.sum(0) + 1e-12
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((K, d, d))
        for k in range(K):
            diff = x - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + floor
        gmm = GmmParams(weights, means, covs)
        lj = gmm.log_joint(x)
        ll = logsumexp(lj, axis=1)
        resp = np.exp(lj - ll[:, None])
        total = float(ll.mean())
        if abs(total - prev) < tol:
            break
        prev = total
    return gmm


def gmm_bic(gmm: GmmParams, x: np.ndarray) -> float:
    n, d = x.shape
    p = (gmm.K - 1) + gmm.K * d + gmm.K * d * (d + 1) // 2
    return -2.0 * gmm.log_likelihood(x) + p * math.log(n)


def select_gmm(x: np.ndarray, cfg: SkillConfig) -> GmmParams:
    fit = dict(seed=cfg.seed, max_iter=cfg.gmm_max_iter, tol=cfg.gmm_tol, cov_floor=cfg.gmm_cov_floor)
    if cfg.K != "bic":
        return fit_gmm(x, int(cfg.K), **fit)
    best, best_bic = None, math.inf
    for k in range(1, cfg.k_max + 1):
        if len(x) < 4 * k:
            break
        g = fit_gmm(x, k, **fit)
        b = gmm_bic(g, x)
        if b < best_bic - 1e-9:
            best, best_bic = g, b
    return best


# --------------------------------------------------------------------------
# stable linear systems


def project_stable(A: np.ndarray, eps: float = 1e-3, dt: Optional[float] = None) -> np.ndarray:
    """Clip the symmetric part's eigenvalues to <= -eps; with ``dt``, also make
    the Euler map ``I + dt A`` a contraction by at least sqrt(1 - 2 eps dt)."""
    A = np.asarray(A, float)
    S = 0.5 * (A + A.T)
    N = 0.5 * (A - A.T)
    w, V = np.linalg.eigh(S)
    A = (V * np.minimum(w, -eps)) @ V.T + N
    if dt is not None and dt > 0:
        rho = math.sqrt(1.0 - 2.0 * eps * dt)
        B = np.eye(len(A)) + dt * A
        U, s, Wt = np.linalg.svd(B)
        if s[0] > rho:
            B = (U * np.minimum(s, rho)) @ Wt
            A = (B - np.eye(len(A))) / dt
    return A


def is_stable(A: np.ndarray, eps: float = 1e-3, slack: float = 1e-12) -> bool:
    return float(np.max(np.linalg.eigvalsh(0.5 * (A + A.T)))) <= -eps + slack


@dataclass(frozen=True, eq=False)
class LpvDsParams:
    gmm: GmmParams
    A: np.ndarray  # (K, 3, 3)
    attractor: np.ndarray

    def __post_init__(self):
        for name in ("A", "attractor"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def velocity(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        e = x - self.attractor
        g = self.gmm.responsibilities(x)
        return np.einsum("nk,kij,nj->ni", g, self.A, e)

    def to_dict(self) -> dict:
        return {"gmm": self.gmm.to_dict(), "A": self.A.tolist(), "attractor": self.attractor.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LpvDsParams":
        return cls(GmmParams.from_dict(d["gmm"]), d["A"], d["attractor"])


@dataclass(frozen=True, eq=False)
class OrientationDsParams:
    attractor_q: np.ndarray
    A: np.ndarray  # (3, 3) on tangent coordinates at q*

    def __post_init__(self):
        q = np.array(self.attractor_q, dtype=float)
        q = q if q[0] >= 0 else -q
        A = np.array(self.A, dtype=float)
        q.flags.writeable = False
        A.flags.writeable = False
        object.__setattr__(self, "attractor_q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "_R", quat_to_matrix(q))

    def residual(self, q: np.ndarray) -> np.ndarray:
        return log_rotation_batch(quat_mul(quat_conj(self.attractor_q)[None], np.atleast_2d(q)))

    def angular(self, q: np.ndarray) -> np.ndarray:
        """Angular velocity in the skill frame; sign of q is irrelevant."""
        r = self.residual(q)
        return (r @ self.A.T) @ self._R.T

    def to_dict(self) -> dict:
        return {"attractor_q": self.attractor_q.tolist(), "A": self.A.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "OrientationDsParams":
        return cls(d["attractor_q"], d["A"])


@dataclass(frozen=True)
class FitReport:
    rms_projected: float
    rms_unconstrained: float
    n_points: int
    K: int


def _trim_stationary(t, pos, quat, v_eps=1e-4):
    """Drop leading samples at rest; they carry no dynamics."""
    if len(t) < 3:
        return t, pos, quat
    step = np.linalg.norm(np.diff(pos, axis=0), axis=1) + np.linalg.norm(np.diff(quat, axis=0), axis=1)
    moving = np.nonzero(step > v_eps * np.diff(t))[0]
    first = int(moving[0]) if len(moving) else 0
    return t[first:], pos[first:], quat[first:]


def _ridge_fit(feats: np.ndarray, targets: np.ndarray, prior: np.ndarray, ridge: float) -> np.ndarray:
    """argmin_W |feats W^T - targets|^2 / N + ridge |W - prior|^2."""
    n = len(feats)
    G = feats.T @ feats / n + ridge * np.eye(feats.shape[1])
    rhs = feats.T @ targets / n + ridge * prior.T
    return np.linalg.solve(G, rhs).T


def _project_all(A, cfg):
    ceiling = max(cfg.eps_stab, cfg.min_rate)
    return np.array([project_stable(a, ceiling, cfg.discrete_dt) for a in A])


def _constrained_fit(feats, V, prior, A0, cfg, iters: int = 300):
    """Projected gradient on the joint ridge objective. The stable set is
    convex and the symmetric clip is its Frobenius projection, so this
    approaches the constrained optimum rather than a clipped unconstrained fit."""
    K = len(A0)
    n = len(feats)
    G = feats.T @ feats / n + cfg.ridge * np.eye(3 * K)
    R = feats.T @ V / n + cfg.ridge * prior.T  # (3K, 3)
    step = 1.0 / float(np.linalg.eigvalsh(G)[-1])
    A = _project_all(A0, cfg)
    for _ in range(iters):
        W = A.transpose(1, 0, 2).reshape(3, 3 * K)
        grad = (G @ W.T - R).T  # (3, 3K)
        W = W - step * grad
        A_new = _project_all(W.reshape(3, K, 3).transpose(1, 0, 2), cfg)
        if np.max(np.abs(A_new - A)) < 1e-10:
            A = A_new
            break
        A = A_new
    return A


def _velocities(t, pos, smoothing):
    lin = np.gradient(pos, t, axis=0) if len(t) > 1 else np.zeros_like(pos)
    return moving_average(lin, smoothing) if smoothing > 1 and len(t) >= smoothing else lin


def learn_lpvds(trajectories: list, K: Union[int, str, None] = None, cfg: Optional[SkillConfig] = None):
    """``trajectories``: list of (t, pos) array pairs. Returns (LpvDsParams, FitReport)."""
    cfg = cfg or SkillConfig()
    if not trajectories:
        raise InsufficientData("no trajectories")
    attractor = np.mean([p[-1] for _, p in trajectories], axis=0)
    X, V = [], []
    for t, p in trajectories:
        if len(t) < 2:
            continue
        X.append(p)
        V.append(_velocities(t, p, 5))
    if not X:
        raise InsufficientData("trajectories are too short")
    X, V = np.concatenate(X), np.concatenate(V)
    if np.all(np.linalg.norm(X - attractor, axis=1) < 1e-6):
        raise DegenerateTrajectory("all samples sit on the attractor")
    if len(X) > cfg.max_points:
        idx = np.linspace(0, len(X) - 1, cfg.max_points).round().astype(int)
        X, V = X[idx], V[idx]
    if K is not None:
        cfg = SkillConfig(**{**cfg.__dict__, "K": K})
    gmm = select_gmm(X, cfg)
    E = X - attractor
    gam = gmm.responsibilities(X)
    feats = (gam[:, :, None] * E[:, None, :]).reshape(len(X), -1)  # (N, 3K)
    prior = np.tile(-cfg.prior_gain * np.eye(3), (1, gmm.K))  # (3, 3K)
    W = _ridge_fit(feats, V, prior, cfg.ridge)
    A_raw = W.reshape(3, gmm.K, 3).transpose(1, 0, 2)
    A = _constrained_fit(feats, V, prior, A_raw, cfg)
    ds = LpvDsParams(gmm, A, attractor)
    raw = LpvDsParams(gmm, A_raw, attractor)
    rep = FitReport(
        float(np.sqrt(np.mean(np.sum((ds.velocity(X) - V) ** 2, axis=1)))),
        float(np.sqrt(np.mean(np.sum((raw.velocity(X) - V) ** 2, axis=1)))),
        len(X),
        gmm.K,
    )
    return ds, rep


def learn_orientation_ds(trajectories: list, q_star=None, cfg: Optional[SkillConfig] = None) -> OrientationDsParams:
    """``trajectories``: list of (t, quat) array pairs."""
    cfg = cfg or SkillConfig()
    if not trajectories:
        raise InsufficientData("no orientation trajectories")
    if q_star is None:
        q_star = mean_rotation(np.array([q[-1] for _, q in trajectories]), 50, 1e-10)
    q_star = np.asarray(q_star, float)
    R, Rd = [], []
    for t, q in trajectories:
        if len(t) < 2:
            continue
        # residuals against each track's own endpoint: a per-demo constant
        # offset from q* would otherwise look like a direction with no dynamics
        r = log_rotation_batch(quat_mul(quat_conj(q[-1])[None], q))
        R.append(r)
        Rd.append(_velocities(t, r, 5))
    prior = -cfg.prior_gain * np.eye(3)
    if R:
        A = _ridge_fit(np.concatenate(R), np.concatenate(Rd), prior, cfg.ridge)
    else:
        A = prior
    return OrientationDsParams(q_star, project_stable(A, max(cfg.eps_stab, cfg.min_rate), cfg.discrete_dt))


# --------------------------------------------------------------------------
# skills


@dataclass(frozen=True, eq=False)
class Skill:
    id: str
    frame: str  # motion_object | reference_object
    position_ds: LpvDsParams
    orientation_ds: OrientationDsParams
    gripper: str = OPEN
    v_max: float = 0.5
    w_max: float = 1.5
    report: Optional[FitReport] = None
    demos: tuple = ()  # downsampled demonstration positions, for plots

    @property
    def attractor(self) -> Pose:
        return Pose(self.position_ds.attractor, self.orientation_ds.attractor_q)

    def twist_arrays(self, pos: np.ndarray, quat: np.ndarray):
        v = self.position_ds.velocity(pos)
        w = self.orientation_ds.angular(quat)
        nv = np.linalg.norm(v, axis=1)
        nw = np.linalg.norm(w, axis=1)
        with np.errstate(divide="ignore"):
            s = np.minimum(1.0, np.minimum(self.v_max / np.maximum(nv, 1e-300), self.w_max / np.maximum(nw, 1e-300)))
        return v * s[:, None], w * s[:, None]

    def evaluate(self, pose: Pose) -> Twist:
        v, w = self.twist_arrays(pose.position[None], pose.orientation[None])
        return Twist(v[0], w[0])

    def transformed(self, T: Pose, new_id: Optional[str] = None) -> "Skill":
        """Rigidly move the whole vector field by ``T`` (skill frame)."""
        Rm = T.rotation
        g = self.position_ds.gmm
        gmm = GmmParams(g.weights, g.means @ Rm.T + T.position, Rm @ g.covs @ Rm.T)
        pos = LpvDsParams(gmm, Rm @ self.position_ds.A @ Rm.T, T.apply(self.position_ds.attractor))
        q_new = quat_mul(T.orientation, self.orientation_ds.attractor_q)
        ori = OrientationDsParams(q_new, self.orientation_ds.A)
        return Skill(new_id or self.id, self.frame, pos, ori, self.gripper, self.v_max, self.w_max, self.report, self.demos)

    def retargeted(self, goal: Pose) -> "Skill":
        """Transform so that the attractor lands on ``goal``."""
        a = self.attractor
        rot = Pose(np.zeros(3), quat_mul(goal.orientation, quat_conj(a.orientation)))
        shift = goal.position - rot.apply(a.position)
        return self.transformed(Pose(shift, rot.orientation))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "frame": self.frame,
            "gripper": self.gripper,
            "v_max": self.v_max,
            "w_max": self.w_max,
            "position_ds": self.position_ds.to_dict(),
            "orientation_ds": self.orientation_ds.to_dict(),
            "report": None if self.report is None else self.report.__dict__,
            "demos": [np.asarray(d).tolist() for d in self.demos],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skill":
        rep = d.get("report")
        return cls(
            d["id"], d["frame"], LpvDsParams.from_dict(d["position_ds"]), OrientationDsParams.from_dict(d["orientation_ds"]),
            d.get("gripper", OPEN), d.get("v_max", 0.5), d.get("w_max", 1.5),
            FitReport(**rep) if rep else None, tuple(np.array(x) for x in d.get("demos", [])),
        )


def learn_skill(skill_id: str, frame: str, trajectories: list, gripper: str, cfg: Optional[SkillConfig] = None) -> Skill:
    """``trajectories``: RelTrajectory-like objects with t, pos, quat (ee in skill frame)."""
    cfg = cfg or SkillConfig()
    trimmed = [_trim_stationary(tr.t, tr.pos, tr.quat) for tr in trajectories]
    trimmed = [x for x in trimmed if len(x[0]) >= 2]
    if not trimmed:
        raise InsufficientData(f"{skill_id}: no usable trajectories")
    pos_ds, rep = learn_lpvds([(t, p) for t, p, _ in trimmed], cfg.K, cfg)
    ori_ds = learn_orientation_ds([(t, q) for t, _, q in trimmed], None, cfg)
    demos = tuple(p[:: max(1, len(p) // 60)] for _, p, _ in trimmed)
    return Skill(skill_id, frame, pos_ds, ori_ds, gripper, cfg.v_max, cfg.w_max, rep, demos)


# --------------------------------------------------------------------------
# rollouts


@dataclass
class Rollout:
    t: np.ndarray
    pos: np.ndarray
    quat: np.ndarray
    converged: bool


def rollout_many(skill: Skill, pos0: np.ndarray, quat0: np.ndarray, dt: float = 0.01, t_max: float = 60.0,
                 conv_v: float = 1e-3, conv_w: float = 1e-3, record: bool = True):
    """Forward-Euler rollouts of a batch of starts in the skill frame.

    Returns (positions (S, N, 3), quats (S, N, 4), steps per start, converged mask);
    the arrays are padded with each rollout's final state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(pos0, float).reshape(-1, 3)
    q = np.array(quat0, float).reshape(-1, 4)
    q = np.where(q[:, :1] < 0, -q, q)
    n = len(x)
    done = np.zeros(n, bool)
    steps = np.zeros(n, int)
    xs, qs = [x.copy()], [q.copy()]
    n_steps = int(math.ceil(t_max / dt))
    for i in range(n_steps + 1):
        v, w = skill.twist_arrays(x, q)
        small = (np.linalg.norm(v, axis=1) < conv_v) & (np.linalg.norm(w, axis=1) < conv_w)
        newly = small & ~done
        steps[newly] = i
        done |= small
        if done.all() or i == n_steps:
            break
        act = ~done
        x = np.where(act[:, None], x + dt * v, x)
        dq = exp_rotation_batch(w * dt)
        qn = quat_mul(dq, q)
        qn /= np.linalg.norm(qn, axis=1, keepdims=True)
        qn = np.where(qn[:, :1] < 0, -qn, qn)
        q = np.where(act[:, None], qn, q)
        if record:
            xs.append(x.copy())
            qs.append(q.copy())
    steps[~done] = n_steps
    if not record:
        xs, qs = [x], [q]
    return np.stack(xs, 1), np.stack(qs, 1), steps, done


def rollout(skill: Skill, start: Pose, dt: float = 0.01, t_max: float = 60.0,
            conv_v: float = 1e-3, conv_w: float = 1e-3) -> Rollout:
    xs, qs, steps, done = rollout_many(skill, start.position, start.orientation, dt, t_max, conv_v, conv_w)
    k = int(steps[0]) + 1
    return Rollout(np.arange(k) * dt, xs[0, :k], qs[0, :k], bool(done[0]))


def skill_frame_pose(world_pose: Pose, frame_pose: Pose) -> Pose:
    from .geometry import relative_pose

    return relative_pose(frame_pose, world_pose)


def twist_to_world(tw: Twist, frame_pose: Pose) -> Twist:
    return Twist(quat_rotate(frame_pose.orientation, tw.linear), quat_rotate(frame_pose.orientation, tw.angular))
