"""Affine intensity models and exponential-affine hazard transforms.

The central object is the transform

    L(mu) = E[ exp(-mu * integral_t^T lambda_u du) ] = exp(alpha - beta . x)

for an intensity lambda_u = rho0 + rho1 . X_u driven by an affine diffusion
dX = K(Theta - X) dt + Sigma sqrt(diag(a + b X)) dW.  ``alpha`` and ``beta``
solve a Riccati system; the square-root (one-factor) case has a closed form.
Both entry points accept ``mu`` as a float or as a :class:`~coxaffine.jets.Jet`,
so derivatives of L in mu (which generate count probabilities and moments)
come out of the same code path as plain evaluation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.stats import norm

from . import jets
from .jets import Jet

__all__ = [
    "FellerModel",
    "AffineModel",
    "TransformCoeffs",
    "AdmissibilityReport",
    "ExplosionError",
    "cir_transform_closed_form",
    "solve_transform_ode",
    "laplace_hazard",
    "check_admissibility",
    "load_model",
    "save_model",
    "model_from_dict",
    "model_to_dict",
]

Scalar = Union[float, Jet]


class ExplosionError(RuntimeError):
    """Riccati solution blew up before the requested horizon."""

    def __init__(self, time: float, horizon: float):
        self.time = time
        self.horizon = horizon
        super().__init__(
            f"transform coefficients exploded at t={time:.6g} "
            f"before reaching horizon {horizon:.6g}"
        )


@dataclass(frozen=True)
class FellerModel:
    """Square-root (one-factor) intensity: d lambda = kappa(theta - lambda)dt + sigma sqrt(lambda) dW.

    Rates are per unit of internal time (minutes throughout this package).
    ``feller_condition`` (2 kappa theta >= sigma^2, boundary unattainable) is
    exposed for inspection but deliberately not enforced.
    """

    kappa: float
    theta: float
    sigma: float
    lambda0: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "theta", "sigma"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a finite positive number, got {v!r}")
        if not (math.isfinite(self.lambda0) and self.lambda0 >= 0):
            raise ValueError(f"lambda0 must be finite and >= 0, got {self.lambda0!r}")

    @property
    def feller_condition(self) -> bool:
        return 2.0 * self.kappa * self.theta >= self.sigma**2

    def stationary_mean(self) -> float:
        return self.theta

    def stationary_var(self) -> float:
        return self.sigma**2 * self.theta / (2.0 * self.kappa)

    def as_affine(self) -> "AffineModel":
        """One-dimensional affine embedding (a=0, b=1, rho1=1)."""
        return AffineModel(
            dim=1,
            kappa=[[self.kappa]],
            theta=[self.theta],
            sigma_mat=[[self.sigma]],
            a=[0.0],
            b=[[1.0]],
            rho0=0.0,
            rho1=[1.0],
        )


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AffineModel:
    """d-dimensional affine diffusion with affine intensity loading.

    dX = kappa (theta - X) dt + sigma_mat sqrt(diag(a + b X)) dW and
    lambda(x) = rho0 + rho1 . x.  Row i of ``b`` is the volatility loading
    b_i of factor i; the state domain is {x : a_i + b_i . x >= 0 for all i}.
    """

    dim: int
    kappa: np.ndarray
    theta: np.ndarray
    sigma_mat: np.ndarray
    a: np.ndarray
    b: np.ndarray
    rho0: float = 0.0
    rho1: np.ndarray = None

    def __post_init__(self):
        d = self.dim
        if not (isinstance(d, int) and d >= 1):
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "kappa", _readonly(self.kappa))
        object.__setattr__(self, "theta", _readonly(self.theta))
        object.__setattr__(self, "sigma_mat", _readonly(self.sigma_mat))
        object.__setattr__(self, "a", _readonly(self.a))
        object.__setattr__(self, "b", _readonly(self.b))
        rho1 = self.rho1 if self.rho1 is not None else np.ones(d)
        object.__setattr__(self, "rho1", _readonly(rho1))
        object.__setattr__(self, "rho0", float(self.rho0))
        shapes = {
            "kappa": (self.kappa, (d, d)),
            "theta": (self.theta, (d,)),
            "sigma_mat": (self.sigma_mat, (d, d)),
            "a": (self.a, (d,)),
            "b": (self.b, (d, d)),
            "rho1": (self.rho1, (d,)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValueError(
                    f"{name} has shape {arr.shape}, expected {want} for dim={d}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    def vol_sq(self, x: np.ndarray) -> np.ndarray:
        """Squared volatility factors a_i + b_i . x at state x."""
        return self.a + self.b @ np.asarray(x, dtype=float)

    def intensity(self, x: np.ndarray) -> float:
        return self.rho0 + float(self.rho1 @ np.asarray(x, dtype=float))


@dataclass(frozen=True)
class TransformCoeffs:
    """Coefficients of L(mu) = exp(alpha - beta . x) over a horizon.

    ``alpha`` is a float or Jet; ``beta`` is a float/Jet for one-factor
    models, or a sequence of them (length d) for multivariate models.
    Both vanish at horizon 0 so that L = 1.
    """

    alpha: Scalar
    beta: object
    mu: Scalar
    horizon: float

    def laplace(self, x0) -> Scalar:
        """L(mu) at initial state x0 (scalar for one-factor models)."""
        if isinstance(self.beta, (list, tuple)) or (
            isinstance(self.beta, np.ndarray) and self.beta.dtype == object
        ):
            x = np.atleast_1d(np.asarray(x0, dtype=float))
            acc = self.alpha
            for bj, xj in zip(self.beta, x):
                acc = acc - bj * float(xj)
            return jets.exp(acc)
        if isinstance(self.beta, np.ndarray) and self.beta.ndim == 1:
            return jets.exp(self.alpha - float(self.beta @ np.atleast_1d(x0)))
        x = np.asarray(x0, dtype=float).reshape(-1)
        if x.size != 1:
            raise ValueError(f"scalar-factor transform got state of length {x.size}")
        return jets.exp(self.alpha - self.beta * float(x[0]))


def cir_transform_closed_form(model: FellerModel, mu: Scalar, horizon: float) -> TransformCoeffs:
    """Closed-form (alpha, beta) for the square-root intensity.

    Evaluated in a cancellation-free arrangement: with
    gamma = sqrt(kappa^2 + 2 sigma^2 mu) and g = gamma - kappa computed as
    2 sigma^2 mu / (gamma + kappa), all differences go through expm1/log1p.
    This keeps full precision uniformly in sigma -> 0 and horizon -> 0, and
    it is the single code path for float and jet arguments alike.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    mu0 = mu.value if isinstance(mu, Jet) else float(mu)
    if not math.isfinite(mu0) or mu0 < 0:
        raise ValueError(f"mu must have nonnegative finite value, got {mu0}")
    kappa, theta, sigma = model.kappa, model.theta, model.sigma

    two_s2_mu = (2.0 * sigma * sigma) * mu
    gamma = jets.sqrt(kappa * kappa + two_s2_mu)
    g = two_s2_mu / (gamma + kappa)  # gamma - kappa without cancellation
    emg = jets.exp(-gamma * horizon)
    denom = (gamma + kappa) + g * emg
    beta = (-2.0 * mu) * jets.expm1(-gamma * horizon) / denom
    # numerator - denominator, arranged so every term is O(g) or O(kappa*dt)
    eh = jets.exp(-0.5 * g * horizon)
    resid = (2.0 * kappa) * jets.expm1(-0.5 * g * horizon) + g * (2.0 * eh - 1.0 - emg)
    alpha = (2.0 * kappa * theta / (sigma * sigma)) * jets.log1p(resid / denom)
    return TransformCoeffs(alpha=alpha, beta=beta, mu=mu, horizon=float(horizon))


# Dormand-Prince RK45 tableau (same pair as the classical adaptive 4(5) solver)
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

_EXPLOSION_LIMIT = 1e8


def _integrate_riccati(rhs, y0: np.ndarray, horizon: float, tol: float, err_slots):
    """Adaptive embedded RK4(5) with error control restricted to ``err_slots``.

    Restricting the error norm to the order-0 slots makes the accepted step
    sequence independent of the jet order carried alongside, so jet runs
    reproduce the scalar run's order-0 arithmetic exactly.  Jet coefficients
    of the smooth Riccati flow ride the same steps; their accuracy is
    checked against the closed form in the test suite.
    """
    def combine(weights, ks):
        # explicit elementwise accumulation in fixed order; BLAS reductions
        # would round differently depending on the jet order carried along
        acc = weights[0] * ks[0]
        for w, kj in zip(weights[1:], ks[1:]):
            if w != 0.0:
                acc = acc + w * kj
        return acc

    t = 0.0
    y = y0.copy()
    h = min(horizon, 0.1)
    k = [None] * 7
    while t < horizon:
        h = min(h, horizon - t)
        k[0] = rhs(y)
        for i in range(1, 7):
            yi = y + h * combine(_DP_A[i], k[:i])
            k[i] = rhs(yi)
        y5 = y + h * combine(_DP_B5, k)
        y4 = y + h * combine(_DP_B4, k)
        e5 = y5[err_slots]
        scale = tol * (1.0 + np.abs(y[err_slots]))
        err = np.max(np.abs((y5 - y4)[err_slots]) / scale)
        if not np.isfinite(err):
            raise ExplosionError(t, horizon)
        if err <= 1.0:
            t += h
            y = y5
            if np.max(np.abs(e5)) > _EXPLOSION_LIMIT:
                raise ExplosionError(t, horizon)
        factor = 2.0 if err == 0.0 else min(2.0, max(0.2, 0.9 * err ** -0.2))
        h *= factor
        if h < 1e-14 * max(1.0, horizon):
            raise ExplosionError(t, horizon)
    return y


def solve_transform_ode(
    model: Union[AffineModel, FellerModel],
    mu: Scalar,
    horizon: float,
    tol: float = 1e-10,
) -> TransformCoeffs:
    """Numerical (alpha, beta) for a general affine model.

    Integrates, from alpha(0) = 0 and beta(0) = 0,

        beta' = mu rho1 - kappa^T beta - 1/2 sum_i (Sigma^T beta)_i^2 b_i
        alpha' = -mu rho0 - (kappa theta) . beta + 1/2 sum_i (Sigma^T beta)_i^2 a_i

    which makes L = exp(alpha - beta . x) the Laplace transform of the
    integrated intensity.  ``mu`` may be a Jet; its Taylor coefficients are
    carried through the integration.

    Step-size control must not depend on the jet order (the order-0 result
    has to match the scalar run bitwise), yet the order-0 solution alone can
    be degenerate (it vanishes identically when the expansion point is
    mu = 0, starving the controller of any error signal).  The integrator
    therefore carries a pacer column, the same scalar system at a fixed
    reference mu, identical in every run, and controls error on the order-0
    and pacer slots together.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if isinstance(model, FellerModel):
        model = model.as_affine()
    d = model.dim

    if isinstance(mu, Jet):
        order = mu.order
        mu_row = mu.coeffs.copy()
    else:
        order = 0
        mu_row = np.array([float(mu)])
    if not math.isfinite(mu_row[0]):
        raise ValueError("mu must be finite")

    K1 = order + 1
    kT = model.kappa.T
    ktheta = model.kappa @ model.theta
    sT = model.sigma_mat.T
    bT = model.b.T
    a = model.a
    rho1 = model.rho1
    rho0 = model.rho0

    mu_ref = max(1.0, abs(mu_row[0]))
    mu_ext = np.append(mu_row, mu_ref)

    def rhs(y: np.ndarray) -> np.ndarray:
        # y rows 0..d-1 are jet coefficients of beta_i, row d is alpha;
        # the final column is the pacer (scalar system at mu_ref)
        B = y[:d]
        sb = sT @ B
        # jet square of each row: full convolution truncated to order K;
        # the pacer column squares on its own
        q = np.empty_like(sb)
        for i in range(d):
            q[i, :K1] = np.convolve(sb[i, :K1], sb[i, :K1])[:K1]
            q[i, K1] = sb[i, K1] * sb[i, K1]
        dB = np.outer(rho1, mu_ext) - kT @ B - 0.5 * (bT @ q)
        dalpha = -rho0 * mu_ext - ktheta @ B + 0.5 * (a @ q)
        return np.vstack([dB, dalpha[None, :]])

    y0 = np.zeros((d + 1, K1 + 1))
    if horizon == 0:
        yT = y0
    else:
        err_slots = (slice(None), [0, K1])
        yT = _integrate_riccati(rhs, y0, float(horizon), tol, err_slots)

    yT = yT[:, :K1]  # drop the pacer column
    if order == 0:
        beta = yT[:d, 0] if d > 1 else float(yT[0, 0])
        alpha = float(yT[d, 0])
    else:
        beta_jets = [Jet(yT[i]) for i in range(d)]
        beta = beta_jets[0] if d == 1 else np.array(beta_jets, dtype=object)
        alpha = Jet(yT[d])
    return TransformCoeffs(alpha=alpha, beta=beta, mu=mu, horizon=float(horizon))


def laplace_hazard(
    model: Union[FellerModel, AffineModel],
    mu: Scalar,
    horizon: float,
    x0=None,
    tol: float = 1e-10,
) -> Scalar:
    """L(mu) = E[exp(-mu * integrated intensity)] over the horizon.

    Dispatches to the closed form for one-factor square-root models and to
    the Riccati integrator otherwise.  ``x0`` defaults to ``model.lambda0``
    (square-root case) or to the long-run mean ``theta`` (general case).
    """
    if isinstance(model, FellerModel):
        tc = cir_transform_closed_form(model, mu, horizon)
        x0 = model.lambda0 if x0 is None else float(x0)
        return tc.laplace(x0)
    tc = solve_transform_ode(model, mu, horizon, tol=tol)
    x0 = model.theta if x0 is None else np.asarray(x0, dtype=float)
    return tc.laplace(x0)


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityReport:
    """Outcome of the volatility-positivity and nonnegativity checks."""

    condition_a_ok: tuple
    condition_b_gamma: float
    condition_b_ok: bool
    domain_description: tuple
    messages: tuple
    tested_points: tuple

    @property
    def ok(self) -> bool:
        return all(self.condition_a_ok) and self.condition_b_ok


def _gaussian_factor_indices(model: AffineModel) -> list:
    """Factors whose diffusion does not depend on the state."""
    out = []
    for i in range(model.dim):
        cols = np.nonzero(model.sigma_mat[i])[0]
        if all(not model.b[j].any() for j in cols):
            out.append(i)
    return out


def check_admissibility(
    model: AffineModel,
    boundary_points: Sequence = None,
    gamma_threshold: float = 6.0,
) -> AdmissibilityReport:
    """Check drift-domination at volatility boundaries and state positivity.

    Part 1 requires, at every tested point x with a_i + b_i . x = 0, that
    b_i^T kappa (theta - x) > 1/2 b_i^T sigma_mat sigma_mat^T b_i, so the
    drift pushes the squared volatility back into the positive region.
    Part 2 requires proportional volatility factors wherever they are
    coupled through sigma_mat.  Default test points project theta onto each
    boundary hyperplane; callers may supply their own ``boundary_points``.

    Factors with constant volatility are Gaussian; their stationary law
    (mean from theta, covariance from the Lyapunov equation) gives the
    nonnegativity margin gamma = mean/sd, reported together with the
    Gaussian lower-tail mass it leaves below zero.  ``gamma_threshold``
    is the margin treated as numerically certain (Phi(6) = 1 - 1e-9).
    """
    if isinstance(model, FellerModel):
        model = model.as_affine()
    d = model.dim
    sst = model.sigma_mat @ model.sigma_mat.T
    a_ok = []
    messages = []
    domain = []
    tested = []

    user_points = None
    if boundary_points is not None:
        user_points = [np.asarray(p, dtype=float) for p in boundary_points]

    for i in range(d):
        b_i = model.b[i]
        domain.append(f"a[{i}] + b[{i}].x >= 0")
        if not b_i.any():
            a_ok.append(True)
            messages.append(f"factor {i}: constant volatility, no boundary to check")
            continue
        # part 1 at boundary points of {a_i + b_i.x = 0}
        if user_points is not None:
            pts = [p for p in user_points if abs(model.a[i] + b_i @ p) < 1e-9]
        else:
            nrm = float(b_i @ b_i)
            pts = [model.theta - ((model.a[i] + b_i @ model.theta) / nrm) * b_i]
        rhs_bound = 0.5 * float(b_i @ sst @ b_i)
        part1 = True
        for x in pts:
            lhs = float(b_i @ (model.kappa @ (model.theta - x)))
            tested.append((i, tuple(np.round(x, 12))))
            if not lhs > rhs_bound:
                part1 = False
                messages.append(
                    f"factor {i}: drift condition fails at boundary point "
                    f"{np.round(x, 6).tolist()} ({lhs:.6g} <= {rhs_bound:.6g})"
                )
        # part 2: coupled factors must have proportional volatility
        part2 = True
        row_i = np.concatenate([[model.a[i]], b_i])
        bsig = b_i @ model.sigma_mat
        for j in range(d):
            if j == i or bsig[j] == 0.0:
                continue
            row_j = np.concatenate([[model.a[j]], model.b[j]])
            # sigma_i = k sigma_j with k > 0
            nz = np.nonzero(row_j)[0]
            if nz.size == 0:
                ratio_ok = not row_i.any()
            else:
                k = row_i[nz[0]] / row_j[nz[0]]
                ratio_ok = k > 0 and np.allclose(row_i, k * row_j, rtol=1e-12, atol=1e-12)
            if not ratio_ok:
                part2 = False
                messages.append(
                    f"factor {i}: coupled to factor {j} through sigma_mat but "
                    "volatility factors are not positively proportional"
                )
        ok = part1 and part2
        a_ok.append(ok)
        if ok:
            messages.append(f"factor {i}: boundary drift and proportionality hold")

    # Gaussian-factor nonnegativity margin
    gauss = _gaussian_factor_indices(model)
    gauss = [i for i in gauss if model.rho1[i] != 0.0]
    b_gamma = math.inf
    b_ok = True
    if gauss:
        from scipy.linalg import solve_continuous_lyapunov

        sbar = np.clip(model.vol_sq(model.theta), 0.0, None)
        diff = model.sigma_mat @ np.diag(sbar) @ model.sigma_mat.T
        try:
            cov = solve_continuous_lyapunov(-model.kappa, -diff)
        except Exception:
            cov = None
        for i in gauss:
            mu_d = float(model.theta[i])
            if mu_d <= 0:
                b_ok = False
                messages.append(f"factor {i}: stationary mean {mu_d:.6g} not positive")
                continue
            if cov is None or cov[i, i] <= 0:
                b_ok = False
                messages.append(f"factor {i}: stationary variance unavailable")
                continue
            sd = math.sqrt(cov[i, i])
            gamma = mu_d / sd
            b_gamma = min(b_gamma, gamma)
            below = norm.sf(gamma)
            if gamma >= gamma_threshold:
                messages.append(
                    f"factor {i}: Gaussian margin gamma={gamma:.3f} "
                    f"(mass below zero {below:.3g})"
                )
            else:
                b_ok = False
                messages.append(
                    f"factor {i}: Gaussian margin gamma={gamma:.3f} below "
                    f"threshold {gamma_threshold} (mass below zero {below:.3g})"
                )
    return AdmissibilityReport(
        condition_a_ok=tuple(a_ok),
        condition_b_gamma=b_gamma,
        condition_b_ok=b_ok,
        domain_description=tuple(domain),
        messages=tuple(messages),
        tested_points=tuple(tested),
    )


# ---------------------------------------------------------------------------
# JSON persistence
# ---------------------------------------------------------------------------


def model_to_dict(model: Union[FellerModel, AffineModel]) -> dict:
    if isinstance(model, FellerModel):
        return {
            "kind": "feller",
            "kappa": model.kappa,
            "theta": model.theta,
            "sigma": model.sigma,
            "lambda0": model.lambda0,
        }
    if isinstance(model, AffineModel):
        return {
            "kind": "affine",
            "dim": model.dim,
            "kappa": model.kappa.tolist(),
            "theta": model.theta.tolist(),
            "sigma_mat": model.sigma_mat.tolist(),
            "a": model.a.tolist(),
            "b": model.b.tolist(),
            "rho0": model.rho0,
            "rho1": model.rho1.tolist(),
        }
    raise TypeError(f"not a model: {type(model).__name__}")


def model_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "feller":
        return FellerModel(
            kappa=float(doc["kappa"]),
            theta=float(doc["theta"]),
            sigma=float(doc["sigma"]),
            lambda0=float(doc.get("lambda0", 0.0)),
        )
    if kind == "affine":
        return AffineModel(
            dim=int(doc["dim"]),
            kappa=doc["kappa"],
            theta=doc["theta"],
            sigma_mat=doc["sigma_mat"],
            a=doc["a"],
            b=doc["b"],
            rho0=float(doc.get("rho0", 0.0)),
            rho1=doc.get("rho1"),
        )
    raise ValueError(f"unknown model kind {kind!r} (expected 'feller' or 'affine')")


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
