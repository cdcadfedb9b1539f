"""Oracle and property suites.  Each check returns a measured value and a verdict."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, ElementCounter, exact_attention, nystrom_attention
from .corpus import JointDistribution, entropy_inequality_check
from .linalg import frobenius_rel_error, pinv_iterative
from .model import ModelConfig, init_params
from .training import finite_diff_check

SUITES = ("pinv", "nystrom", "gradcheck", "entropy")
ILL_CONDITIONED = 100.0


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    value: float | None = None

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_stochastic(seed: int, m: int = 8) -> np.ndarray:
    logits = np.random.default_rng(seed).standard_normal((m, m))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def random_qkv(seed: int, n: int, d: int = 8):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, d))


# --- pinv ----------------------------------------------------------------------

def check_pinv_identity() -> Check:
    z, _ = pinv_iterative(np.eye(8), 6)
    err = float(np.abs(z - np.eye(8)).max())
    return Check("pinv identity", err == 0.0, f"max |Z - I| = {err:.1e}", err)


def check_pinv_oracle(count: int = 50, iterations: int = 6, tol: float = 1e-6,
                      need: int = 49) -> Check:
    errs, flagged = [], []
    for seed in range(count):
        a = random_stochastic(seed)
        z, _ = pinv_iterative(a, iterations)
        errs.append(frobenius_rel_error(z, np.linalg.pinv(a)))
        if np.linalg.cond(a) > ILL_CONDITIONED:
            flagged.append(seed)
    ok = sum(e <= tol for e in errs)
    detail = (f"{ok}/{count} within {tol:g} after {iterations} iterations "
              f"(median err {np.median(errs):.2e}, {len(flagged)} draws with cond > {ILL_CONDITIONED:g})")
    return Check("pinv vs SVD", ok >= need, detail, float(ok))


def convergence_order(count: int = 50, iterations: int = 30) -> tuple[float, int]:
    """Slope of log e_{j+1} against log e_j on well-conditioned draws.

    Only pairs inside the convergent regime count: e_j < 0.5 and e_{j+1}
    above the rounding floor.
    """
    xs, ys = [], []
    for seed in range(count):
        a = random_stochastic(seed)
        if np.linalg.cond(a) > ILL_CONDITIONED:
            continue
        exact = np.linalg.pinv(a)
        _, rep = pinv_iterative(a, iterations)
        errs = [frobenius_rel_error(z, exact) for z in rep.trajectory]
        for e0, e1 in zip(errs, errs[1:]):
            if e0 < 0.5 and e1 > 1e-12:
                xs.append(np.log(e0))
                ys.append(np.log(e1))
    slope = float(np.polyfit(xs, ys, 1)[0])
    return slope, len(xs)


def check_convergence_order(min_slope: float = 2.5) -> Check:
    slope, pairs = convergence_order()
    return Check("pinv convergence order", slope >= min_slope,
                 f"log-log slope {slope:.3f} over {pairs} steps", slope)


def check_spectral_condition(count: int = 50) -> Check:
    worst = 0.0
    for seed in range(count):
        a = random_stochastic(seed)
        z0 = a.T / (np.abs(a).sum(axis=0).max() * np.abs(a).sum(axis=1).max())
        worst = max(worst, float(np.linalg.norm(a @ np.linalg.pinv(a) - a @ z0, 2)))
    return Check("pinv initial guess |AA+ - AZ0|_2 < 1", worst < 1.0, f"worst {worst:.6f}", worst)


# --- nystrom -------------------------------------------------------------------

def check_full_landmarks(count: int = 20, n: int = 32, tol: float = 1e-3) -> Check:
    errs = []
    for seed in range(count):
        q, k, v = random_qkv(seed, n)
        errs.append(frobenius_rel_error(nystrom_attention(q, k, v, AttentionConfig(8, 1, n)),
                                        exact_attention(q, k, v)))
    ok = sum(e <= tol for e in errs)
    return Check("nystrom m=n recovers exact", ok == count,
                 f"{ok}/{count} within {tol:g} (max err {max(errs):.2e})", max(errs))


def mean_nystrom_error(m: int, n: int = 64, count: int = 20) -> float:
    errs = []
    for seed in range(count):
        q, k, v = random_qkv(seed, n)
        errs.append(frobenius_rel_error(nystrom_attention(q, k, v, AttentionConfig(8, 1, m)),
                                        exact_attention(q, k, v)))
    return float(np.mean(errs))


def check_landmark_monotone() -> Check:
    lo, hi = mean_nystrom_error(4), mean_nystrom_error(16)
    return Check("nystrom error falls with m", hi < lo,
                 f"mean err m=4 {lo:.4f}, m=16 {hi:.4f}", hi - lo)


def peak_elements(n: int, m: int = 8, exact: bool = False) -> int:
    q, k, v = random_qkv(0, n)
    counter = ElementCounter()
    if exact:
        exact_attention(q, k, v, counter=counter)
    else:
        nystrom_attention(q, k, v, AttentionConfig(8, 1, m), counter=counter)
    return counter.peak


def check_memory_scaling() -> Check:
    ny = peak_elements(4096) / peak_elements(1024)
    ex = peak_elements(1024, exact=True) / peak_elements(256, exact=True)
    return Check("peak elements linear vs quadratic", ny <= 4.5 and ex >= 12,
                 f"nystrom 1024->4096 x{ny:.2f}, exact 256->1024 x{ex:.2f}", ny)


# --- gradcheck -----------------------------------------------------------------

def tiny_model(seed: int):
    cfg = ModelConfig(AttentionConfig(8, 2, 4), num_layers=1, max_bag=8, num_labels=2,
                      task="multiclass")
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1000)
    # nonzero conv kernels and biases so every path carries gradient
    for blk in params.blocks:
        for hw in blk.heads:
            hw.dconv[...] = rng.normal(0, 0.3, hw.dconv.shape)
        blk.ln_beta += rng.normal(0, 0.1, blk.ln_beta.shape)
    instances = rng.standard_normal((3, 8))
    return cfg, params, instances, int(rng.integers(0, 2))


def check_gradients(seeds=range(5), tol: float = 1e-4) -> Check:
    worst = 0.0
    for seed in seeds:
        cfg, params, instances, target = tiny_model(seed)
        errs = finite_diff_check(params, cfg, instances, target)
        worst = max(worst, max(errs.values()))
    n = len(list(seeds))
    return Check("finite differences, tiny model", worst <= tol,
                 f"worst relative error {worst:.2e} over {n} seeds", worst)


# --- entropy -------------------------------------------------------------------

def check_entropy(count: int = 1000, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    held, chain_worst = 0, 0.0
    for _ in range(count):
        k = int(rng.integers(2, 5))
        sizes = rng.integers(2, 5, size=k)
        res = entropy_inequality_check(JointDistribution.random(sizes, rng))
        held += res.holds
        chain_worst = max(chain_worst, abs(res.chain_rule_sum - res.joint))
    return Check("joint entropy <= sum of marginals", held == count,
                 f"{held}/{count} hold, worst chain-rule gap {chain_worst:.1e}", float(held))


def check_independent_coins() -> Check:
    res = entropy_inequality_check(JointDistribution(np.full((2, 2), 0.25)))
    ok = res.joint == res.sum_marginals == 2.0
    return Check("independent coins give equality", ok,
                 f"H = {res.joint}, sum of marginals = {res.sum_marginals}", res.joint)


SUITE_CHECKS = {
    "pinv": [check_pinv_identity, check_pinv_oracle, check_convergence_order, check_spectral_condition],
    "nystrom": [check_full_landmarks, check_landmark_monotone, check_memory_scaling],
    "gradcheck": [check_gradients],
    "entropy": [check_entropy, check_independent_coins],
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for s in SUITES for c in run_suite(s)]
    if name not in SUITE_CHECKS:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return [fn() for fn in SUITE_CHECKS[name]]
