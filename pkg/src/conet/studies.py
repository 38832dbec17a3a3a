"""Study drivers: model comparison, lambda sweeps, reduction, sparsity.

Every study freezes one leave-one-out split and trains all arms against
it with the same seed, so per-user paired t-tests compare models under
identical conditions. Independent arms may train in parallel worker
threads; results are collected in arm order, so the report does not
depend on scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .data import CrossDomainDataset, LooSplit, reduce_training
from .errors import ConfigError
from .evaluation import MetricsReport, evaluate, ndcg_contributions, paired_t_test
from .models import DomainSizes, ModelConfig, build_model
from .numerics import derive_rng
from .training import TrainConfig, Trainer, make_scorer, sparsity_ratio

__all__ = [
    "StudyRow",
    "StudyReport",
    "ARCH_CHOICES",
    "model_config_for",
    "compare_architectures",
    "lambda_sweep",
    "reduce_study",
    "sparsity_table",
]

# "conet" is the dense cross-connection model, "sconet" the same
# architecture trained with the L1 penalty on its transfer matrices.
ARCH_CHOICES = ("mlp", "mlp++", "csn", "conet", "sconet")


@dataclass
class StudyRow:
    condition: str
    metrics: MetricsReport
    p_value: float = None
    details: dict = field(default_factory=dict)


@dataclass
class StudyReport:
    kind: str
    baseline: str
    seed: int
    rows: list
    summary: dict = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return {
            "kind": self.kind,
            "baseline": self.baseline,
            "seed": self.seed,
            "rows": [
                {
                    "condition": r.condition,
                    "hr": r.metrics.hr,
                    "ndcg": r.metrics.ndcg,
                    "mrr": r.metrics.mrr,
                    "num_users": r.metrics.num_evaluated_users,
                    "p_value": r.p_value,
                    "details": r.details,
                }
                for r in self.rows
            ],
            "summary": self.summary,
        }

    def format_table(self) -> str:
        lines = [f"{'condition':<18} {'HR':>8} {'NDCG':>8} {'MRR':>8} {'p-value':>10}"]
        for r in self.rows:
            p = "-" if r.p_value is None else f"{r.p_value:.4f}"
            lines.append(
                f"{r.condition:<18} {r.metrics.hr:>8.4f} {r.metrics.ndcg:>8.4f} "
                f"{r.metrics.mrr:>8.4f} {p:>10}"
            )
        return "\n".join(lines)


def model_config_for(arch: str, base: ModelConfig) -> ModelConfig:
    """Resolve a study arch name into a concrete model config.

    ``conet`` forces the penalty off; ``sconet`` keeps the configured
    lambda (falling back to the 0.1 default when it was zero).
    """
    if arch not in ARCH_CHOICES:
        raise ConfigError(f"unknown architecture {arch!r}; pick one of {ARCH_CHOICES}")
    if arch == "sconet":
        lam = base.lasso_lambda if base.lasso_lambda > 0 else 0.1
        return replace(base, architecture="conet", lasso_lambda=lam)
    if arch == "conet":
        return replace(base, architecture="conet", lasso_lambda=0.0)
    return replace(base, architecture=arch, lasso_lambda=0.0)


def _sizes(split: LooSplit) -> DomainSizes:
    return DomainSizes(
        num_users=split.train.num_users,
        num_items_target=split.train.target.num_items,
        num_items_source=split.train.source.num_items,
    )


def _train_and_evaluate(config: ModelConfig, split: LooSplit, train_config: TrainConfig):
    model = build_model(config, _sizes(split), train_config.seed)
    trainer = Trainer(model, split, train_config)
    stats = trainer.fit()
    report = evaluate(make_scorer(model, split), split, partition="test")
    return model, stats, report


def _run_arms(jobs, workers: int):
    if workers <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def compare_architectures(split: LooSplit, archs, base_config: ModelConfig,
                          train_config: TrainConfig, baseline: str = None,
                          workers: int = 1) -> StudyReport:
    """Train each architecture on one frozen split and tabulate the metrics.

    Every arm shares the split and the seed. The p-value of each row is a
    paired t-test of per-user NDCG contributions against the baseline arm
    (``mlp`` when present, else the first arch).
    """
    if len(archs) < 1:
        raise ConfigError("compare needs at least one architecture")
    # Resolve and validate every arm before any training starts.
    configs = {arch: model_config_for(arch, base_config) for arch in archs}
    for cfg in configs.values():
        cfg.validate()
    if baseline is None:
        baseline = "mlp" if "mlp" in archs else archs[0]
    if baseline not in archs:
        raise ConfigError(f"baseline {baseline!r} is not among the compared architectures")

    results = _run_arms(
        [lambda a=arch: _train_and_evaluate(configs[a], split, train_config) for arch in archs],
        workers,
    )
    by_arch = dict(zip(archs, results))
    base_vector = ndcg_contributions(by_arch[baseline][2].per_user)
    rows = []
    for arch in archs:
        model, stats, report = by_arch[arch]
        vec = ndcg_contributions(report.per_user)
        details = {
            "architecture": configs[arch].architecture,
            "lambda": configs[arch].lasso_lambda,
            "epochs_trained": len(stats),
        }
        if configs[arch].architecture == "conet":
            details["h_zero_ratios"] = [sparsity_ratio(h) for h in model.transfer_matrices()]
        rows.append(StudyRow(
            condition=arch,
            metrics=report,
            p_value=paired_t_test(vec, base_vector),
            details=details,
        ))
    return StudyReport(kind="compare", baseline=baseline, seed=train_config.seed, rows=rows)


def lambda_sweep(split: LooSplit, lambdas, base_config: ModelConfig,
                 train_config: TrainConfig, workers: int = 1) -> StudyReport:
    """Train the cross-connection model once per penalty weight."""
    if len(lambdas) < 1:
        raise ConfigError("lambda sweep needs at least one value")
    if any(lam < 0 for lam in lambdas):
        raise ConfigError("penalty weights must be >= 0")
    configs = [replace(base_config, architecture="conet", lasso_lambda=float(lam))
               for lam in lambdas]
    for cfg in configs:
        cfg.validate()
    results = _run_arms(
        [lambda c=cfg: _train_and_evaluate(c, split, train_config) for cfg in configs],
        workers,
    )
    base_vector = ndcg_contributions(results[0][2].per_user)
    rows = []
    for lam, cfg, (model, stats, report) in zip(lambdas, configs, results):
        ratios = [sparsity_ratio(h) for h in model.transfer_matrices()]
        rows.append(StudyRow(
            condition=f"lambda={lam:g}",
            metrics=report,
            p_value=paired_t_test(ndcg_contributions(report.per_user), base_vector),
            details={
                "lambda": float(lam),
                "h_zero_ratios": ratios,
                "mean_zero_ratio": sum(ratios) / len(ratios) if ratios else 0.0,
                "epochs_trained": len(stats),
            },
        ))
    baseline = rows[0].condition
    return StudyReport(kind="lambda-sweep", baseline=baseline, seed=train_config.seed, rows=rows)


def reduce_study(split: LooSplit, levels, base_config: ModelConfig,
                 train_config: TrainConfig, workers: int = 1) -> StudyReport:
    """Shrink the target train set per user and race SCoNet against MLP.

    The MLP reference trains once on the full split; each level trains the
    sparse cross-connection model on a reduced copy. The summary records
    the first level where it falls below the MLP reference on NDCG.
    """
    levels = sorted(set(int(k) for k in levels))
    if any(k < 0 for k in levels):
        raise ConfigError("removal levels must be >= 0")
    mlp_config = model_config_for("mlp", base_config)
    sconet_config = model_config_for("sconet", base_config)
    mlp_config.validate()
    sconet_config.validate()

    reductions = [
        reduce_training(split, level, derive_rng(train_config.seed, "reduce", level))
        for level in levels
    ]
    jobs = [lambda: _train_and_evaluate(mlp_config, split, train_config)]
    jobs += [lambda r=red: _train_and_evaluate(sconet_config, r.split, train_config)
             for red in reductions]
    results = _run_arms(jobs, workers)

    _, mlp_stats, mlp_report = results[0]
    mlp_vector = ndcg_contributions(mlp_report.per_user)
    rows = [StudyRow(
        condition="mlp",
        metrics=mlp_report,
        p_value=None,
        details={
            "architecture": "mlp",
            "removed": 0,
            "removed_percent": 0.0,
            "train_size": split.train.target.num_interactions,
            "epochs_trained": len(mlp_stats),
        },
    )]
    crossover = None
    for level, red, (model, stats, report) in zip(levels, reductions, results[1:]):
        rows.append(StudyRow(
            condition=f"sconet-remove-{level}",
            metrics=report,
            p_value=paired_t_test(ndcg_contributions(report.per_user), mlp_vector),
            details={
                "architecture": "conet",
                "lambda": sconet_config.lasso_lambda,
                "per_user_removal": level,
                "removed": red.removed,
                "removed_percent": 100.0 * red.removed_fraction,
                "train_size": red.split.train.target.num_interactions,
                "epochs_trained": len(stats),
            },
        ))
        if crossover is None and report.ndcg < mlp_report.ndcg:
            crossover = level
    return StudyReport(
        kind="reduce",
        baseline="mlp",
        seed=train_config.seed,
        rows=rows,
        summary={"crossover_level": crossover},
    )


def sparsity_table(model) -> list:
    """Per-transfer-matrix zero ratios of a trained cross-connection model."""
    matrices = model.transfer_matrices()
    if not matrices:
        raise ConfigError(
            f"architecture {model.config.architecture!r} has no transfer matrices"
        )
    return [
        {"matrix": f"H_{k}", "rows": h.shape[0], "cols": h.shape[1],
         "zero_ratio": sparsity_ratio(h)}
        for k, h in enumerate(matrices)
    ]
