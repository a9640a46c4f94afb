"""Local objective functions with exact gradients and centralized optima.

Every factory returns a GlobalProblem: n local models f_i, their uniform
strong-convexity / gradient-Lipschitz constants, and the minimizer of
F = sum_i f_i computed by an independent centralized oracle (a linear solve
where the problem is quadratic, otherwise accelerated gradient descent to
gradient norm 1e-10).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OracleError(RuntimeError):
    """The centralized reference solver failed to reach its tolerance."""


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log1pexp(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)) without overflow."""
    out = np.where(t > 33.0, t, np.log1p(np.exp(np.minimum(t, 33.0))))
    return out


@dataclass(frozen=True)
class QuadraticCost:
    """f(z) = 0.5 z'Az + b'z with A symmetric positive definite."""

    A: np.ndarray
    b: np.ndarray
    s: float
    l: float

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def eval(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.A @ z + self.b @ z)

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.A @ z + self.b


@dataclass(frozen=True)
class LeastSquaresCost:
    """f(z) = 0.5 ||Hz - b||^2 + 0.5 ridge ||z||^2."""

    H: np.ndarray
    b: np.ndarray
    ridge: float
    s: float
    l: float

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def eval(self, z: np.ndarray) -> float:
        r = self.H @ z - self.b
        return float(0.5 * r @ r + 0.5 * self.ridge * z @ z)

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.H.T @ (self.H @ z - self.b) + self.ridge * z


@dataclass(frozen=True)
class LogisticCost:
    """Binary logistic loss over (w, b) with an l2 ridge on w only.

    f(w, b) = scale * sum_j log(1 + exp(-(w'c_j + b) y_j)) + 0.5 lam ||w||^2
    where scale is 1/m when mean_scaled.  The optional bias_ridge adds
    0.5 * bias_ridge * b^2 to restore joint strong convexity when needed.
    The state vector is (w; b); set include_bias=False to drop b entirely.
    """

    features: np.ndarray  # (m, p)
    labels: np.ndarray  # (m,) in {-1, +1}
    lam: float
    mean_scaled: bool = True
    include_bias: bool = True
    bias_ridge: float = 0.0
    s: float = field(default=0.0)
    l: float = field(default=0.0)

    def __post_init__(self) -> None:
        if self.s == 0.0 or self.l == 0.0:
            scale = 1.0 / len(self.labels) if self.mean_scaled else 1.0
            tilde = self._augmented_features()
            gram_top = float(np.linalg.eigvalsh(tilde.T @ tilde)[-1])
            object.__setattr__(self, "s", self.lam)
            object.__setattr__(self, "l", self.lam + 0.25 * scale * gram_top)

    @property
    def dim(self) -> int:
        return self.features.shape[1] + (1 if self.include_bias else 0)

    def _augmented_features(self) -> np.ndarray:
        if not self.include_bias:
            return self.features
        ones = np.ones((self.features.shape[0], 1))
        return np.hstack([self.features, ones])

    def _margins(self, z: np.ndarray) -> np.ndarray:
        if self.include_bias:
            w, b = z[:-1], z[-1]
            return self.labels * (self.features @ w + b)
        return self.labels * (self.features @ z)

    def eval(self, z: np.ndarray) -> float:
        scale = 1.0 / len(self.labels) if self.mean_scaled else 1.0
        w = z[:-1] if self.include_bias else z
        total = scale * float(np.sum(_log1pexp(-self._margins(z))))
        total += 0.5 * self.lam * float(w @ w)
        if self.include_bias and self.bias_ridge:
            total += 0.5 * self.bias_ridge * float(z[-1] ** 2)
        return total

    def grad(self, z: np.ndarray) -> np.ndarray:
        scale = 1.0 / len(self.labels) if self.mean_scaled else 1.0
        coeff = -self.labels * _sigmoid(-self._margins(z))  # d loss / d margin-arg
        g_feat = scale * (self.features.T @ coeff)
        if self.include_bias:
            g = np.empty(self.dim)
            g[:-1] = g_feat + self.lam * z[:-1]
            g[-1] = scale * float(np.sum(coeff)) + self.bias_ridge * z[-1]
            return g
        return g_feat + self.lam * z


@dataclass(frozen=True)
class SmoothSvmCost:
    """Smoothed hinge SVM over (omega, nu):

    f = omega'omega + C_margin * sum_j (1/mu) log(1 + exp(mu * x_j)),
    x_j = 1 - l_j (omega'chi_j - nu).
    """

    features: np.ndarray  # (m, p)
    labels: np.ndarray  # (m,) in {-1, +1}
    margin_weight: float
    smoothness: float
    s: float = field(default=0.0)
    l: float = field(default=0.0)

    def __post_init__(self) -> None:
        if self.s == 0.0 or self.l == 0.0:
            tilde = self._tilde()
            gram_top = float(np.linalg.eigvalsh(tilde.T @ tilde)[-1])
            object.__setattr__(self, "s", 2.0)
            object.__setattr__(
                self, "l", 2.0 + self.margin_weight * self.smoothness / 4.0 * gram_top
            )

    @property
    def dim(self) -> int:
        return self.features.shape[1] + 1

    def _tilde(self) -> np.ndarray:
        ones = np.ones((self.features.shape[0], 1))
        return np.hstack([self.features, -ones])

    def _slack(self, z: np.ndarray) -> np.ndarray:
        omega, nu = z[:-1], z[-1]
        return 1.0 - self.labels * (self.features @ omega - nu)

    def eval(self, z: np.ndarray) -> float:
        omega = z[:-1]
        mu = self.smoothness
        hinge = float(np.sum(_log1pexp(mu * self._slack(z)))) / mu
        return float(omega @ omega) + self.margin_weight * hinge

    def grad(self, z: np.ndarray) -> np.ndarray:
        mu = self.smoothness
        coeff = self.margin_weight * _sigmoid(mu * self._slack(z))  # (m,)
        g = np.empty(self.dim)
        g[:-1] = 2.0 * z[:-1] - self.features.T @ (coeff * self.labels)
        g[-1] = float(np.sum(coeff * self.labels))
        return g


@dataclass
class GlobalProblem:
    """Sum-of-local-costs problem with a centralized-optimum oracle."""

    locals: list
    z_star: np.ndarray
    f_star: float
    s: float
    l: float

    @property
    def n(self) -> int:
        return len(self.locals)

    @property
    def dim(self) -> int:
        return self.locals[0].dim

    def total(self, z: np.ndarray) -> float:
        return float(sum(m.eval(z) for m in self.locals))

    def total_grad(self, z: np.ndarray) -> np.ndarray:
        g = np.zeros(self.dim)
        for m in self.locals:
            g += m.grad(z)
        return g

    def grads(self, Z: np.ndarray) -> np.ndarray:
        """Per-node gradients at per-node states, stacked (n, dim)."""
        return np.stack([m.grad(Z[i]) for i, m in enumerate(self.locals)])

    def gap(self, z: np.ndarray) -> float:
        return self.total(z) - self.f_star


@dataclass
class _QuadraticProblem(GlobalProblem):
    """Quadratic specialization with batched gradients."""

    A_stack: np.ndarray = None  # (n, p, p)
    b_stack: np.ndarray = None  # (n, p)

    def grads(self, Z: np.ndarray) -> np.ndarray:
        return np.einsum("npq,nq->np", self.A_stack, Z) + self.b_stack


def nesterov_minimize(
    grad_fn,
    x0: np.ndarray,
    lipschitz: float,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
) -> np.ndarray:
    """Accelerated gradient descent with step 1/l and restarts, run until
    the gradient norm drops below tol."""
    x = x0.copy()
    y = x0.copy()
    t = 1.0
    step = 1.0 / lipschitz
    for _ in range(max_iters):
        g = grad_fn(y)
        x_new = y - step * g
        if float(np.linalg.norm(grad_fn(x_new))) < tol:
            return x_new
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        momentum = (t - 1.0) / t_new
        y_new = x_new + momentum * (x_new - x)
        if float(g @ (x_new - x)) > 0.0:  # gradient restart
            t_new = 1.0
            y_new = x_new
        x, y, t = x_new, y_new, t_new
    raise OracleError(f"centralized oracle missed tol={tol} in {max_iters} iterations")


def _random_spd(p: int, rng: np.random.Generator, lo: float = 1.0, hi: float = 10.0):
    """Random orthogonal conjugation of a diagonal with eigenvalues in [lo, hi]."""
    eigs = rng.uniform(lo, hi, size=p)
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    return (Q * eigs) @ Q.T, float(eigs.min()), float(eigs.max())


def make_quadratic(n: int, p: int, seed: int) -> GlobalProblem:
    """n random strongly convex quadratics; the optimum solves the stacked
    linear system exactly."""
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    rng = np.random.default_rng(seed)
    models = []
    A_stack = np.zeros((n, p, p))
    b_stack = np.zeros((n, p))
    for i in range(n):
        A, s_i, l_i = _random_spd(p, rng)
        b = rng.standard_normal(p)
        models.append(QuadraticCost(A=A, b=b, s=s_i, l=l_i))
        A_stack[i] = A
        b_stack[i] = b
    z_star = np.linalg.solve(A_stack.sum(axis=0), -b_stack.sum(axis=0))
    problem = _QuadraticProblem(
        locals=models,
        z_star=z_star,
        f_star=0.0,
        s=min(m.s for m in models),
        l=max(m.l for m in models),
        A_stack=A_stack,
        b_stack=b_stack,
    )
    problem.f_star = problem.total(z_star)
    return problem


def make_least_squares(
    n: int, p: int, rows_per_agent: int, seed: int, ridge: float = 0.0
) -> GlobalProblem:
    """n local least-squares blocks H_i z = b_i (optionally ridge-regularized
    per agent); the optimum solves the normal equations of the stacked system."""
    if n * rows_per_agent < p:
        raise ValueError("stacked system must be overdetermined: n*rows >= p")
    rng = np.random.default_rng(seed)
    z_true = rng.standard_normal(p)
    models = []
    gram = ridge * n * np.eye(p)
    rhs = np.zeros(p)
    for _ in range(n):
        H = rng.standard_normal((rows_per_agent, p))
        b = H @ z_true + 0.1 * rng.standard_normal(rows_per_agent)
        hess = H.T @ H + ridge * np.eye(p)
        eigs = np.linalg.eigvalsh(hess)
        models.append(
            LeastSquaresCost(H=H, b=b, ridge=ridge, s=float(eigs[0]), l=float(eigs[-1]))
        )
        gram += H.T @ H
        rhs += H.T @ b
    eigs = np.linalg.eigvalsh(gram)
    if eigs[0] < 1e-10 * max(1.0, eigs[-1]):
        raise ValueError("stacked system is rank deficient and ridge is 0")
    z_star = np.linalg.solve(gram, rhs)
    problem = GlobalProblem(
        locals=models,
        z_star=z_star,
        f_star=0.0,
        s=min(m.s for m in models),
        l=max(m.l for m in models),
    )
    problem.f_star = problem.total(z_star)
    return problem


def _two_cluster_data(
    n: int, p: int, samples_per_agent: int, seed: int, separation: float = 2.0
):
    """Balanced two-cluster Gaussian features with +-1 labels, per agent."""
    rng = np.random.default_rng(seed)
    center = separation * np.ones(p) / np.sqrt(p)
    per_agent = []
    for _ in range(n):
        m_pos = samples_per_agent // 2
        m_neg = samples_per_agent - m_pos
        feats = np.vstack(
            [
                center + rng.standard_normal((m_pos, p)),
                -center + rng.standard_normal((m_neg, p)),
            ]
        )
        labels = np.concatenate([np.ones(m_pos), -np.ones(m_neg)])
        per_agent.append((feats, labels))
    return per_agent


def make_logistic(
    n: int,
    p: int,
    samples_per_agent: int,
    lam: float,
    seed: int,
    mean_scaled: bool = True,
    bias_ridge: float = 0.0,
    separation: float = 2.0,
) -> GlobalProblem:
    """Distributed binary logistic regression on synthetic two-cluster data.

    State is (w; b), p+1 dimensional.  lam > 0 regularizes w only; the data
    always mixes labels, which keeps the bias direction coercive.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if samples_per_agent < 2:
        raise ValueError("need at least 2 samples per agent to mix labels")
    models = [
        LogisticCost(
            features=f, labels=y, lam=lam, mean_scaled=mean_scaled,
            bias_ridge=bias_ridge,
        )
        for f, y in _two_cluster_data(n, p, samples_per_agent, seed, separation)
    ]
    L = float(sum(m.l for m in models))
    z0 = np.zeros(p + 1)
    z_star = nesterov_minimize(
        lambda z: _sum_grads(models, z), z0, lipschitz=L, tol=1e-10
    )
    problem = GlobalProblem(
        locals=models,
        z_star=z_star,
        f_star=0.0,
        s=min(m.s for m in models),
        l=max(m.l for m in models),
    )
    problem.f_star = problem.total(z_star)
    return problem


def make_smooth_svm(
    n: int,
    p: int,
    samples_per_agent: int,
    margin_weight: float,
    smoothness: float,
    seed: int,
    separation: float = 2.0,
) -> GlobalProblem:
    """Distributed smoothed-hinge SVM on synthetic two-cluster data.

    State is (omega; nu), p+1 dimensional, with the ridge acting on omega.
    margin_weight = 0 degenerates to the pure ridge; by convention the free
    offset is pinned at 0 there and the optimum is exactly the origin.
    """
    if margin_weight < 0 or smoothness <= 0:
        raise ValueError("need margin_weight >= 0 and smoothness > 0")
    models = [
        SmoothSvmCost(
            features=f, labels=y, margin_weight=margin_weight, smoothness=smoothness
        )
        for f, y in _two_cluster_data(n, p, samples_per_agent, seed, separation)
    ]
    if margin_weight == 0.0:
        z_star = np.zeros(p + 1)
    else:
        L = float(sum(m.l for m in models))
        z_star = nesterov_minimize(
            lambda z: _sum_grads(models, z), np.zeros(p + 1), lipschitz=L, tol=1e-10
        )
    problem = GlobalProblem(
        locals=models,
        z_star=z_star,
        f_star=0.0,
        s=min(m.s for m in models),
        l=max(m.l for m in models),
    )
    problem.f_star = problem.total(z_star)
    return problem


def _sum_grads(models: list, z: np.ndarray) -> np.ndarray:
    g = np.zeros_like(z)
    for m in models:
        g += m.grad(z)
    return g
