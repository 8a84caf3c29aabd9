"""Quadratic forgetting model: input covariances, the forgetting functional,
synthetic activation profiles, and the steepest-descent tradeoff sweep.

Forgetting of a weight update dW on a layer whose inputs have second moment
Sigma_x is modelled as ``0.5 * E||dW x||^2 = 0.5 * tr(dW Sigma_x dW^T)``.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import (
    DegenerateInstance,
    InsufficientData,
    InvalidInput,
    InvalidParameter,
    PreconditionViolation,
    ProfileConstructionFailed,
)
from .linalg import singular_values, vector_norm
from .norms import INF, SUPPORTED_PAIRS, NormPair, induced_norm
from .optim import pair_lmo

PSD_TOL = 1e-8
PROFILE_BOUNDS = (0.25, 4.0)
NORM_GRID = (1.0, 2.0, INF)


# --- covariance and the forgetting functional ---------------------------------------


def _layer_covariance(layer):
    dim = layer.xx.shape[0]
    if layer.count < dim:
        raise InsufficientData(f"{layer.count} samples for a {dim}-dimensional covariance")
    return layer.covariance()


def estimate_input_covariance(trace, name=None):
    """Running mean of x x^T per traced layer (or for one layer when ``name`` is given).

    Also accepts a raw (samples, dim) array, returning a single matrix.
    """
    if isinstance(trace, np.ndarray) or isinstance(trace, (list, tuple)):
        x = np.asarray(trace, dtype=np.float64)
        if x.ndim != 2:
            raise InvalidInput("samples must be a (count, dim) array")
        if x.shape[0] < x.shape[1]:
            raise InsufficientData(f"{x.shape[0]} samples for a {x.shape[1]}-dimensional covariance")
        c = x.T @ x / x.shape[0]
        return 0.5 * (c + c.T)
    if name is not None:
        return _layer_covariance(trace[name])
    return {n: _layer_covariance(trace[n]) for n in trace.names()}


def quadratic_forgetting(dw, sigma_x):
    """``0.5 * tr(dW Sigma_x dW^T)``; Sigma_x must be symmetric PSD (eigenvalues >= -1e-8)."""
    dw = np.atleast_2d(np.asarray(dw, dtype=np.float64))
    s = np.asarray(sigma_x, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] != dw.shape[1]:
        raise InvalidInput(f"shapes do not conform: dW {dw.shape}, Sigma_x {s.shape}")
    if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, np.abs(s).max())):
        raise InvalidInput("Sigma_x is not symmetric")
    if s.size and np.linalg.eigvalsh(0.5 * (s + s.T)).min() < -PSD_TOL:
        raise InvalidInput("Sigma_x is not positive semidefinite")
    return max(0.0, 0.5 * float(np.sum((dw @ s) * dw)))


# --- activation profiles ------------------------------------------------------------


@dataclass
class ActivationProfile:
    """Synthetic input distribution favouring the ``alpha_star`` norm.

    alpha_star=1: k-sparse spikes of +-amplitude; 2: isotropic gaussian with
    ``variance``; inf: dense +-amplitude vectors.
    """

    alpha_star: float
    dim: int
    k: int = 1
    variance: float = 1.0
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.alpha_star = float(self.alpha_star)
        if self.alpha_star not in NORM_GRID:
            raise InvalidParameter(f"alpha_star must be 1, 2 or inf, got {self.alpha_star}")
        if self.dim < 1:
            raise InvalidParameter("dim must be >= 1")
        if self.alpha_star == 1.0 and not 1 <= self.k <= self.dim:
            raise InvalidParameter("k must be in [1, dim]")
        if self.variance <= 0 or self.amplitude <= 0:
            raise InvalidParameter("variance and amplitude must be positive")


@dataclass
class ProfileSampler:
    profile: ActivationProfile
    sigma: np.ndarray  # exact second moment E[x x^T]
    moments: dict  # q -> empirical E||x||_q^2 from the verification draw
    ratios: dict = field(default_factory=dict)  # alpha -> (ratio, scale) checked at construction

    def sample(self, count, rng=None):
        rng = np.random.default_rng(self.profile.seed) if rng is None else rng
        return _draw(self.profile, count, rng)


def _draw(p, count, rng):
    n = p.dim
    if p.alpha_star == 1.0:
        x = np.zeros((count, n))
        # k distinct positions per row: the first k of a random ordering
        pos = np.argsort(rng.random((count, n)), axis=1)[:, : p.k]
        signs = rng.choice([-1.0, 1.0], size=(count, p.k))
        np.put_along_axis(x, pos, p.amplitude * signs, axis=1)
        return x
    if p.alpha_star == 2.0:
        return math.sqrt(p.variance) * rng.standard_normal((count, n))
    return p.amplitude * rng.choice([-1.0, 1.0], size=(count, n))


def _exact_sigma(p):
    n = p.dim
    if p.alpha_star == 1.0:
        return (p.k / n) * p.amplitude**2 * np.eye(n)
    if p.alpha_star == 2.0:
        return p.variance * np.eye(n)
    return p.amplitude**2 * np.eye(n)


def _inv(q):
    return 0.0 if np.isinf(q) else 1.0 / q


def synthesize_profile(p, samples=4000):
    """Build the sampler and verify its norm-moment ordering empirically.

    For every alpha < alpha_star on the {1, 2, inf} grid the ratio
    E||x||_{alpha_star}^2 / E||x||_alpha^2 must lie within
    [0.25, 4] * n^{2/alpha_star - 2/alpha}. For spikes (alpha_star = 1) the ratios
    against alpha = 2 and inf must stay within [0.25, 4] as well, i.e. the
    spikes are genuinely sparse. Failure raises ProfileConstructionFailed.
    """
    rng = np.random.default_rng([p.seed, 0xF00D])
    x = _draw(p, samples, rng)
    moments = {q: float(np.mean([vector_norm(row, q) ** 2 for row in x])) for q in NORM_GRID}
    lo, hi = PROFILE_BOUNDS
    n = p.dim
    ratios = {}
    failures = []
    for a in NORM_GRID:
        if a == p.alpha_star:
            continue
        if a < p.alpha_star:
            scale = n ** (2 * _inv(p.alpha_star) - 2 * _inv(a))
        elif p.alpha_star == 1.0:
            scale = 1.0
        else:
            continue
        ratio = moments[p.alpha_star] / moments[a]
        ratios[a] = (ratio, scale)
        if not lo * scale <= ratio <= hi * scale:
            failures.append(f"alpha={a:g}: ratio {ratio:.4g} outside [{lo * scale:.4g}, {hi * scale:.4g}]")
    if failures:
        raise ProfileConstructionFailed(
            f"profile alpha*={p.alpha_star:g}, n={n}, k={p.k}: " + "; ".join(failures)
        )
    return ProfileSampler(profile=p, sigma=_exact_sigma(p), moments=moments, ratios=ratios)


# --- tradeoff sweep -----------------------------------------------------------------


@dataclass
class TradeoffInstance:
    profile: ActivationProfile
    G: np.ndarray
    C: float
    H0: float
    sigma: np.ndarray = None  # defaults to the profile's exact second moment

    def l_sft(self, dw):
        """Linearized SFT loss H0 + <G, dW>."""
        return self.H0 + float(np.sum(self.G * dw))


def make_instance(profile, m, seed=0, batch=4, H0=1.0, C=0.0):
    """Random instance whose SFT gradient is a batch of rank-one outer products.

    G = (1/b) sum_s delta_s x_s^T with x_s drawn from the profile and delta_s
    Rademacher output gradients, so G inherits the profile's input geometry.
    """
    if not C < H0:
        raise InvalidParameter("budget C must be below H0")
    sampler = synthesize_profile(profile)
    rng = np.random.default_rng([int(seed), 0x5EED])
    x = sampler.sample(batch, rng)
    delta = rng.choice([-1.0, 1.0], size=(batch, m))
    g = delta.T @ x / batch
    return TradeoffInstance(profile=profile, G=g, C=float(C), H0=float(H0), sigma=sampler.sigma)


@dataclass
class ForgettingRow:
    rule_alpha: float
    rule_beta: float
    dW: np.ndarray
    radius: float
    l_sft: float
    l_forget: float
    ratio_to_min: float = float("nan")


@dataclass
class ForgettingReport:
    rows: list
    grid_min: float
    matched_ratio: float
    excluded: list
    alpha1: float

    def row(self, alpha, beta):
        for r in self.rows:
            if (r.rule_alpha, r.rule_beta) == (float(alpha), float(beta)):
                return r
        raise KeyError((alpha, beta))


def sweep_grid_pairs():
    """(realizable pairs, excluded pairs) of {1,2,inf} x {1,2,inf}."""
    grid = [(a, b) for a in NORM_GRID for b in NORM_GRID]
    ok = [g for g in grid if g in SUPPORTED_PAIRS]
    return ok, [g for g in grid if g not in SUPPORTED_PAIRS]


def tradeoff_sweep(inst, grid=None):
    """Budget-matched update and forgetting for each rule in ``grid``.

    Each rule's update is dW = -R * U with U = pair LMO of G at radius 1 and
    R = (H0 - C) / <U, G>, so the linearized SFT loss equals C exactly.
    """
    pairs, excluded = sweep_grid_pairs()
    if grid is not None:
        want = [(float(a), float(b)) for a, b in grid]
        excluded = excluded + [g for g in want if g not in SUPPORTED_PAIRS and g not in excluded]
        pairs = [g for g in want if g in SUPPORTED_PAIRS]
    sigma = inst.sigma if inst.sigma is not None else _exact_sigma(inst.profile)
    rows = []
    for a, b in pairs:
        u = pair_lmo(inst.G, NormPair(a, b), 1.0)
        ip = float(np.sum(u * inst.G))
        if not ip > 0:
            raise DegenerateInstance(f"<LMO direction, G> = {ip:.3g} <= 0 for rule {NormPair(a, b).label()}")
        radius = (inst.H0 - inst.C) / ip
        dw = -radius * u
        l_sft = inst.l_sft(dw)
        if abs(l_sft - inst.C) > 1e-9 * max(1.0, abs(inst.C)):
            raise DegenerateInstance(f"budget mismatch {l_sft} vs {inst.C}")
        rows.append(ForgettingRow(a, b, dw, radius, l_sft, quadratic_forgetting(dw, sigma)))
    grid_min = min(r.l_forget for r in rows)
    for r in rows:
        r.ratio_to_min = r.l_forget / grid_min if grid_min > 0 else (1.0 if r.l_forget == 0 else INF)
    a1 = inst.profile.alpha_star
    matched = [r.ratio_to_min for r in rows if r.rule_alpha == a1 and r.rule_beta >= 2.0]
    return ForgettingReport(
        rows=rows,
        grid_min=grid_min,
        matched_ratio=max(matched) if matched else float("nan"),
        excluded=excluded,
        alpha1=a1,
    )


def norm_chain_violations(report, x, tol=1e-9):
    """Count samples with ||dW x||_b > ||dW||_{a,b} ||x||_a for any row of ``report``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    bad = 0
    for r in report.rows:
        bound = induced_norm(r.dW, (r.rule_alpha, r.rule_beta))
        for row in x:
            lhs = vector_norm(r.dW @ row, r.rule_beta)
            rhs = bound * vector_norm(row, r.rule_alpha)
            bad += lhs > rhs * (1 + tol) + tol
    return bad


@dataclass
class SweepSummary:
    alpha1: float
    instances: int
    passed: int
    ratios: list
    max_budget_error: float
    threshold: float

    @property
    def pass_fraction(self):
        return self.passed / self.instances if self.instances else float("nan")


def matched_rule_sweep(alpha1, n=32, m=32, instances=100, seed=0, batch=4, threshold=1.5, k=1, csv_path=None):
    """Run ``instances`` seeded tradeoff instances for one alpha_star and summarize."""
    reports = []
    ratios = []
    max_err = 0.0
    passed = 0
    for i in range(instances):
        profile = ActivationProfile(alpha_star=alpha1, dim=n, k=k, seed=i)
        inst = make_instance(profile, m, seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]), batch=batch)
        rep = tradeoff_sweep(inst)
        reports.append(rep)
        ratios.append(rep.matched_ratio)
        passed += rep.matched_ratio <= threshold
        max_err = max(max_err, max(abs(r.l_sft - inst.C) for r in rep.rows))
    if csv_path is not None:
        write_forgetting_csv(reports, csv_path)
    return SweepSummary(alpha1, instances, passed, ratios, max_err, threshold), reports


FORGETTING_HEADER = ("instance_id", "alpha1", "rule_alpha", "rule_beta", "radius", "l_sft", "l_forget", "ratio_to_min")


def _fmt(v):
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_forgetting_csv(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORGETTING_HEADER)
        for i, rep in enumerate(reports):
            for r in rep.rows:
                w.writerow([i, _fmt(rep.alpha1), _fmt(r.rule_alpha), _fmt(r.rule_beta), _fmt(r.radius),
                            _fmt(r.l_sft), _fmt(r.l_forget), _fmt(r.ratio_to_min)])


# --- predicted vs actual on a model -------------------------------------------------


@torch.no_grad()
def _eval_loss(model, batches):
    from .model import cross_entropy

    total, count = 0.0, 0
    for inputs, targets in batches:
        idx = torch.as_tensor(inputs, dtype=torch.long)
        tgt = torch.as_tensor(targets, dtype=torch.long)
        total += float(cross_entropy(model(idx), tgt)) * tgt.numel()
        count += tgt.numel()
    return total / count


def layer_covariances(model, batches):
    """Exact input second moments of every linear layer over ``batches``."""
    from .model import ActivationTrace, forward

    trace = ActivationTrace(capacity=1)
    was = model.training
    model.eval()
    with torch.no_grad():
        for inputs, _ in batches:
            forward(model, inputs, capture=True, trace=trace)
    model.train(was)
    return {n: trace.covariance(n) for n in trace.names()}


class _perturbed:
    def __init__(self, model, deltas, sign=1.0):
        self.layers = model.linear_layers()
        self.deltas = deltas
        self.sign = sign

    def __enter__(self):
        with torch.no_grad():
            for n, d in self.deltas.items():
                w = self.layers[n].weight
                w.add_(self.sign * torch.from_numpy(np.asarray(d, dtype=np.float64)).to(w.dtype))

    def __exit__(self, *exc):
        with torch.no_grad():
            for n, d in self.deltas.items():
                w = self.layers[n].weight
                w.sub_(self.sign * torch.from_numpy(np.asarray(d, dtype=np.float64)).to(w.dtype))


def _check_small(model, deltas, limit):
    layers = model.linear_layers()
    for n, d in deltas.items():
        if n not in layers:
            raise InvalidInput(f"unknown layer {n}")
        w = layers[n].weight.detach().to(torch.float64).numpy()
        if d.shape != w.shape:
            raise InvalidInput(f"{n}: delta shape {d.shape} vs weight {w.shape}")
        s_d = singular_values(d)[0] if np.any(d) else 0.0
        if s_d > limit * singular_values(w)[0]:
            raise PreconditionViolation(f"{n}: ||dW||_2 = {s_d:.3g} exceeds {limit} x ||W||_2")


def random_perturbation(model, rel=0.02, seed=0, layers=None):
    """Gaussian dW per layer with spectral norm ``rel`` x the layer's spectral norm."""
    rng = np.random.default_rng(seed)
    out = {}
    for n, mod in model.linear_layers().items():
        if layers is not None and n not in layers:
            continue
        w = mod.weight.detach().to(torch.float64).numpy()
        z = rng.standard_normal(w.shape)
        out[n] = z * (rel * singular_values(w)[0] / singular_values(z)[0])
    return out


def calibrate(model, batches, sigmas, rel=0.02, seed=12345):
    """Per-layer constant kappa with actual ~ kappa * quadratic_forgetting.

    Fit on a held-out random perturbation per layer using the symmetric
    difference (L(+d) + L(-d)) / 2 - L0, which cancels the first-order term.
    """
    base = _eval_loss(model, batches)
    kappa = {}
    for i, (n, d) in enumerate(random_perturbation(model, rel, seed).items()):
        with _perturbed(model, {n: d}, 1.0):
            lp = _eval_loss(model, batches)
        with _perturbed(model, {n: d}, -1.0):
            lm = _eval_loss(model, batches)
        q = quadratic_forgetting(d, sigmas[n])
        kappa[n] = max(0.0, 0.5 * (lp + lm) - base) / q if q > 0 else 0.0
    return kappa


@dataclass
class AvpResult:
    per_layer: dict  # name -> (predicted, actual)
    predicted: float
    actual: float
    calibration: dict


def actual_vs_predicted(model, deltas, batches, sigmas=None, calibration=None, limit=0.1):
    """Predicted (calibrated quadratic model) and measured pretrain-loss increases.

    Per layer, ``actual`` applies only that layer's delta; the totals apply all
    deltas at once. Deltas larger than ``limit`` x the layer spectral norm
    raise PreconditionViolation.
    """
    deltas = {n: np.asarray(d, dtype=np.float64) for n, d in deltas.items()}
    _check_small(model, deltas, limit)
    sigmas = layer_covariances(model, batches) if sigmas is None else sigmas
    calibration = calibrate(model, batches, sigmas) if calibration is None else calibration
    base = _eval_loss(model, batches)
    per = {}
    for n, d in deltas.items():
        if not np.any(d):
            per[n] = (0.0, 0.0)
            continue
        pred = calibration[n] * quadratic_forgetting(d, sigmas[n])
        with _perturbed(model, {n: d}):
            act = _eval_loss(model, batches) - base
        per[n] = (pred, act)
    if any(np.any(d) for d in deltas.values()):
        with _perturbed(model, deltas):
            total_act = _eval_loss(model, batches) - base
    else:
        total_act = 0.0
    total_pred = sum(p for p, _ in per.values())
    return AvpResult(per_layer=per, predicted=total_pred, actual=total_act, calibration=calibration)
