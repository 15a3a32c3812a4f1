"""(mu/mu_w, lambda) CMA-ES with a hard budget on objective evaluations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CMAConfig:
    sigma0: float = 1.0
    budget: int = 400
    popsize: int | None = None  # default 4 + floor(3 ln n)
    tol_x: float = 1e-11
    seed: int = 0

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")


@dataclass
class CMAResult:
    x: np.ndarray
    f: float
    evaluations: int
    generations: int
    stop: str
    history: list = field(default_factory=list)  # (evaluations, best f, sigma) per generation


def default_popsize(n: int) -> int:
    return 4 + int(math.floor(3 * math.log(n)))


def cma_es_minimize(f, x0, cfg: CMAConfig = CMAConfig(), evaluate_start: bool = False) -> CMAResult:
    """Minimize ``f`` from ``x0``; never calls ``f`` more than ``cfg.budget`` times.

    Only complete generations are sampled.  Non-finite values rank behind
    every finite value.  With ``evaluate_start`` the start point is scored
    first and competes for the best result.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    lam = cfg.popsize or default_popsize(n)
    if cfg.budget < lam + int(evaluate_start):
        raise ValueError(f"budget {cfg.budget} is smaller than one generation ({lam})")
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w ** 2)

    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    rng = np.random.default_rng(cfg.seed)
    mean, sigma = x0.copy(), cfg.sigma0
    C, B, D = np.eye(n), np.eye(n), np.ones(n)
    pc, ps = np.zeros(n), np.zeros(n)
    evals, gen = 0, 0
    best_x, best_f = x0.copy(), math.inf
    history = []
    if evaluate_start:
        fx = float(f(x0))
        evals += 1
        if math.isfinite(fx):
            best_f = fx
    stop = "budget"
    while evals + lam <= cfg.budget:
        z = rng.standard_normal((lam, n))
        y = (z * D) @ B.T
        xs = mean + sigma * y
        fs = np.array([float(f(x)) for x in xs])
        evals += lam
        gen += 1
        ranked = np.where(np.isfinite(fs), fs, math.inf)
        order = np.argsort(ranked, kind="stable")
        if ranked[order[0]] < best_f:
            best_f, best_x = float(ranked[order[0]]), xs[order[0]].copy()

        y_sel = y[order[:mu]]
        y_w = w @ y_sel
        mean = mean + sigma * y_w
        inv_sqrt_c = (B / D) @ B.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt_c @ y_w)
        hsig = np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n < 1.4 + 2 / (n + 1)
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
        rank_mu = (y_sel.T * w) @ y_sel
        C = ((1 - c1 - cmu) * C + c1 * (np.outer(pc, pc) + (not hsig) * cc * (2 - cc) * C)
             + cmu * rank_mu)
        sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))

        C = np.triu(C) + np.triu(C, 1).T
        evals_d, B = np.linalg.eigh(C)
        D = np.sqrt(np.maximum(evals_d, 1e-300))
        history.append((evals, best_f, sigma))
        if sigma * D.max() < cfg.tol_x:
            stop = "tol_x"
            break
    return CMAResult(best_x, best_f, evals, gen, stop, history)
