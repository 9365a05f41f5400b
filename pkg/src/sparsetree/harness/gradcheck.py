"""Finite-difference verification of the analytic gradients.

Two suites run at fixed seeds:

* posterior: the Jacobian of q with respect to per-tree scores, and the
  arc-score gradient of a random linear function of q;
* model: every parameter block of the latent model on small random
  instances, cycling through tasks, sentence lengths and encoder variants.

Errors are reported per block as ``max|fd - analytic| / max(|fd|, |analytic|, floor)``
so blocks with vanishing gradients do not inflate the ratio. An instance
whose support changes under the +-eps perturbation sits on a non-smooth
boundary; it is resampled and the event noted in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..backward import grad_scores, posterior_jacobian
from ..inference import sparsemap
from ..latent_model import GradientTape, LatentConfig, ModelConfig, ModelParams, backward_latent
from ..structures import ArcScores, legal_arc_mask
from .data import DataRecord
from .evaluation import run_record

TASKS = ("classify", "pair", "revdict")
VARIANTS = (
    {"use_rnn": False, "share_embeddings": True},
    {"use_rnn": True, "share_embeddings": True},
    {"use_rnn": True, "share_embeddings": False, "composer_rnn": False},
)


@dataclass
class GradcheckConfig:
    seeds: tuple[int, ...] = tuple(range(20))
    ns: tuple[int, ...] = (2, 3, 4)
    eps: float = 1e-4  # model suite
    posterior_eps: float = 1e-5
    tol: float = 1e-3
    floor: float = 1e-6
    jacobian_instances: int = 50
    max_resamples: int = 25
    corrupt_block: str | None = None  # test hook: perturb this block's analytic gradient

    @classmethod
    def from_dict(cls, d: dict) -> "GradcheckConfig":
        d = dict(d)
        for k in ("seeds", "ns"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    tol: float = 1e-3
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.errors) and all(e <= self.tol for e in self.errors.values())

    def record(self, block: str, err: float):
        self.errors[block] = max(self.errors.get(block, 0.0), float(err))

    def lines(self) -> list[str]:
        out = []
        for k in sorted(self.errors):
            flag = "ok" if self.errors[k] <= self.tol else "FAIL"
            out.append(f"{k:32s} {self.errors[k]:.3e} {flag}")
        out.extend(f"note: {n}" for n in self.notes)
        out.append(f"{'PASS' if self.passed else 'FAIL'} ({self.n_checked} instances, tol {self.tol:g})")
        return out

    def to_json(self) -> str:
        return json.dumps({"errors": self.errors, "notes": self.notes, "tol": self.tol,
                           "passed": self.passed, "n_checked": self.n_checked}, indent=2, sort_keys=True)


def _rel(fd, an, floor) -> float:
    fd, an = np.asarray(fd), np.asarray(an)
    if fd.size == 0:
        return 0.0
    scale = max(np.abs(fd).max(), np.abs(an).max(), floor)
    return float(np.abs(fd - an).max() / scale)


def _support_key(post):
    return tuple(sorted(t.heads for t in post.support))


class _Boundary(Exception):
    pass


# -- posterior suite ---------------------------------------------------------

def _jacobian_instance(rng, n, cfg: GradcheckConfig):
    scores = ArcScores(rng.normal(size=(n + 1, n)))
    post = sparsemap(scores)
    if len(post.support) < 2:
        raise _Boundary("singleton support")
    key = _support_key(post)
    D = posterior_jacobian(post).D
    if cfg.corrupt_block == "posterior.jacobian":
        D = D + 1.0
    fd = np.zeros_like(D)
    for j, tree in enumerate(post.support):
        qs = []
        for sign in (1.0, -1.0):
            p = sparsemap(scores, tree_bonus={tree.heads: sign * cfg.posterior_eps})
            if _support_key(p) != key:
                raise _Boundary("support changed under per-tree perturbation")
            qs.append(np.array([p.prob(t) for t in post.support]))
        fd[:, j] = (qs[0] - qs[1]) / (2 * cfg.posterior_eps)
    return _rel(fd, D, cfg.floor)


def _arc_instance(rng, n, cfg: GradcheckConfig):
    s = rng.normal(size=(n + 1, n))
    post = sparsemap(ArcScores(s))
    key = _support_key(post)
    gbar = rng.normal(size=len(post.support))
    weight = {t.heads: g for t, g in zip(post.support, gbar)}
    analytic = grad_scores(post, gbar)
    if cfg.corrupt_block == "posterior.arc_scores":
        analytic = analytic + 1.0
    fd = np.zeros_like(s)
    for idx in zip(*np.nonzero(legal_arc_mask(n))):
        vals = []
        for sign in (1.0, -1.0):
            s2 = s.copy()
            s2[idx] += sign * cfg.posterior_eps
            p = sparsemap(ArcScores(s2))
            if _support_key(p) != key:
                raise _Boundary("support changed under arc perturbation")
            vals.append(sum(weight[t.heads] * q for t, q in zip(p.support, p.q)))
        fd[idx] = (vals[0] - vals[1]) / (2 * cfg.posterior_eps)
    return _rel(fd, analytic, cfg.floor)


def _with_resampling(fn, label, seed, n, cfg, report):
    for attempt in range(cfg.max_resamples + 1):
        rng = np.random.default_rng([seed, n, attempt])
        try:
            return fn(rng, n, cfg)
        except _Boundary as exc:
            report.notes.append(f"{label} seed {seed} n={n} attempt {attempt}: {exc}; resampled")
    raise RuntimeError(f"{label} seed {seed}: no smooth instance after {cfg.max_resamples} resamples")


def check_posterior(cfg: GradcheckConfig, report: GradcheckReport):
    for i in range(cfg.jacobian_instances):
        n = cfg.ns[i % len(cfg.ns)]
        report.record("posterior.jacobian", _with_resampling(_jacobian_instance, "jacobian", i, n, cfg, report))
        report.n_checked += 1
    for seed in cfg.seeds:
        n = cfg.ns[seed % len(cfg.ns)]
        report.record("posterior.arc_scores", _with_resampling(_arc_instance, "arc_scores", seed, n, cfg, report))
        report.n_checked += 1


# -- model suite -------------------------------------------------------------

def small_model_config(task: str, variant: dict) -> ModelConfig:
    return ModelConfig(
        vocab_size=8, d_emb=4, d_scorer=4, d_lstm=4, d_pair=4, d_out=3, n_classes=3,
        task=task, d_rnn=3, init_scale=1.0, arc_init_scale=0.5, **variant,
    )


def _model_instance(rng, n, task, variant, cfg: GradcheckConfig):
    mc = small_model_config(task, variant)
    params = ModelParams.init(mc, rng)
    tokens = [int(t) for t in rng.integers(0, mc.vocab_size, size=n)]
    if task == "revdict":
        rec = DataRecord(tokens, [float(x) for x in rng.normal(size=mc.d_out)])
    else:
        label = int(rng.integers(mc.n_classes))
        tokens_b = [int(t) for t in rng.integers(0, mc.vocab_size, size=max(2, n - 1))] if task == "pair" else None
        rec = DataRecord(tokens, label, tokens_b=tokens_b)
    latent = LatentConfig()

    def run():
        res = run_record(rec, params, latent, task)
        return res, tuple(_support_key(s.posterior) for s in res.fwd.sides)

    base, key = run()
    tape = backward_latent(base.fwd, base.dloss, params, GradientTape.like(params))
    if cfg.corrupt_block is not None and cfg.corrupt_block.startswith("model."):
        name = cfg.corrupt_block[len("model."):]
        if name in tape:
            tape.arrays[name] += 1.0

    errs = {}
    for name in params.names():
        a = params.arrays[name]
        fd = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            vals = []
            for sign in (1.0, -1.0):
                a[idx] = old + sign * cfg.eps
                res, k = run()
                if k != key:
                    a[idx] = old
                    raise _Boundary(f"support changed when perturbing {name}")
                vals.append(res.loss)
            a[idx] = old
            fd[idx] = (vals[0] - vals[1]) / (2 * cfg.eps)
        errs[name] = _rel(fd, tape[name], cfg.floor)
    return errs


def check_model(cfg: GradcheckConfig, report: GradcheckReport):
    for seed in cfg.seeds:
        task = TASKS[seed % len(TASKS)]
        n = cfg.ns[(seed // len(TASKS)) % len(cfg.ns)]
        variant = VARIANTS[(seed // (len(TASKS) * len(cfg.ns))) % len(VARIANTS)]
        errs = _with_resampling(
            lambda rng, n_, c: _model_instance(rng, n_, task, variant, c),
            f"model[{task}]", seed, n, cfg, report,
        )
        for name, e in errs.items():
            report.record(f"model.{name}", e)
        report.n_checked += 1


def gradcheck(cfg: GradcheckConfig | None = None) -> GradcheckReport:
    """Run both suites. Failures are reported, never raised."""
    cfg = cfg or GradcheckConfig()
    report = GradcheckReport(tol=cfg.tol)
    check_posterior(cfg, report)
    check_model(cfg, report)
    return report
