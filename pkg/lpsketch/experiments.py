"""
Monte-Carlo drivers for every acceptance check.

Each experiment derives all of its randomness from the config seed: trial
t sketches with seed.derive("TRIAL", t) and draws its vectors from
generators keyed by the same index, so a report is a pure function of the
config.
"""

import math
import logging
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Tuple, Type

import numpy as np

from .base_experiment import BaseExperiment, Gate, Report, write_report
from .boosted import build_boosted, decode_boosted, repetitions_for
from .certification import (
    HardDistributionSpec,
    certification_params,
    certify_decode,
    hard_norm,
    is_valid_certificate,
    sample_hard_point,
    sample_hard_tuple,
)
from .config import ExperimentConfig
from .errors import ConfigError, LpSketchError
from .estimator import build_multiscale, estimate_distance, scale_params, scale_set
from .generators import gaussian_grid, hard_dataset, perturb, planted
from .metric import Dataset, IntVector, coordinate_median, load_dataset, lp_distance, lp_norm
from .near_neighbor import build_index, query_index
from .randomness import SharedSeed
from .single_scale import (
    Outcome,
    SketchParams,
    build_single_scale,
    decode_single_scale,
    derive_params,
    find_collisions,
    reference_decode,
    theory_params,
)
from .utils import standard_error, wilson_interval

logger = logging.getLogger(__name__)

# rates at engineering overrides
NONEXPANSION_CEILING = 0.05
CONTRACTION_FLOOR = 0.25
BOOSTED_CONTRACTION_FLOOR = 0.20
ORACLE_AGREEMENT_FLOOR = 0.999
ANN_RECALL_FLOOR = 0.90
ANN_SHRINK_CEILING = 0.80
EMISSION_FLOOR = 0.05
INVALID_CERT_CEILING = 0.01
HARD_FAR_FLOOR = 0.47
THEORY_FAR_ON_CLOSE = 1.0 / 32
DEFAULT_DELTA0 = 0.01


def rate(count: int, trials: int) -> Dict[str, Any]:
    low, high = wilson_interval(count, trials)
    return {
        "count": count,
        "trials": trials,
        "rate": count / trials if trials else 0.0,
        "wilson95": [low, high],
    }


def build_dataset(config: ExperimentConfig, seed: SharedSeed) -> Dataset:
    """The config's dataset file, or the configured generator (gaussian-grid by default)"""
    if config.dataset is not None:
        return load_dataset(config.dataset)
    params = dict(config.generator_params)
    generator = config.generator or "gaussian-grid"
    if generator == "gaussian-grid":
        return gaussian_grid(params.get("n", config.n), params.get("d", config.d),
                             params.get("sigma", config.delta / 4),
                             params.get("delta", config.delta), seed.derive("DATA"))
    if generator == "hard":
        return hard_dataset(params.get("n", config.n), params.get("p", config.hard_p),
                            params.get("c", config.hard_c), seed.derive("DATA"))
    raise ConfigError(f"Generator {generator!r} does not produce a plain dataset here")


class SketchExperiment(BaseExperiment):
    """Shared setup: a dataset with its median, or the hard distribution"""

    def trial_seed(self, index: int) -> SharedSeed:
        return self.seed.derive("TRIAL", index)

    def setup_dataset(self):
        with self.track_operation("build_dataset"):
            self.data = build_dataset(self.config, self.seed)
            self.median = coordinate_median(self.data)
        self.logger.info(f"Dataset: {self.data!r}")

    def setup_hard(self):
        self.spec = HardDistributionSpec(p=self.config.hard_p, c=self.config.hard_c)
        self.mu_seed = self.seed.derive("MU")
        # μ is symmetric under coordinate permutations and half of every point is 0
        self.hard_median = IntVector.zeros(self.spec.dimension)
        # fixed x at the largest r with ‖x - m‖ >= (c-1)r/2, all in the hard norm
        self.fixed_x = sample_hard_point(self.spec, self.seed.derive("FIXED"))
        self.fixed_norm = lp_norm(self.fixed_x - self.hard_median, self.spec.p)
        self.contraction_r = 2 * self.fixed_norm / (self.config.c - 1)

    def close_pair(self, index: int) -> Tuple[IntVector, IntVector, float]:
        rng = self.trial_seed(index).generator("PAIR")
        x = self.data[int(rng.integers(0, len(self.data)))]
        y = perturb(x, self.config.r, self.config.p, self.data.delta, rng)
        return x, y, lp_distance(x, y, self.config.p)

    def params_at(self, r: float) -> SketchParams:
        return derive_params(self.config.c, self.config.p, overrides=self.config.overrides, r=r)

    def hard_params_at(self, r: float, c: Optional[float] = None) -> SketchParams:
        """Sketch parameters in the hard distribution's norm; c defaults to the configured c"""
        return derive_params(c or self.config.c, self.spec.p, overrides=self.config.overrides, r=r)

    def resolved_params(self) -> Dict[str, Any]:
        params = self.config.as_dict()
        try:
            params["theory"] = asdict(theory_params(self.config.c, self.config.p))
        except LpSketchError as e:
            params["theory"] = {"error": str(e)}
        return params


class NonexpansionExperiment(SketchExperiment):
    """Pairs within r must rarely decode FAR"""

    kind = "nonexpansion"

    def setup(self):
        self.setup_dataset()
        self.params_at(1.0)

    def trial(self, index: int) -> Dict[str, Any]:
        x, y, dist = self.close_pair(index)
        params = self.params_at(dist)
        seed = self.trial_seed(index)
        outcome = decode_single_scale(build_single_scale(x, self.median, params, seed),
                                      build_single_scale(y, self.median, params, seed), params)
        return {"distance": dist, "far": outcome is Outcome.FAR}

    def summarize(self, records):
        far = sum(1 for r in records if r["far"])
        aggregates = {"far_on_close": rate(far, len(records))}
        theory_valid = self.params_at(1.0).theory_valid
        if theory_valid:
            phat = far / max(1, len(records))
            ceiling = THEORY_FAR_ON_CLOSE + 3 * math.sqrt(phat * (1 - phat) / max(1, len(records)))
        else:
            ceiling = NONEXPANSION_CEILING
        return aggregates, [Gate("far_on_close_rate", aggregates["far_on_close"]["rate"], ceiling, "<=")]


class ContractionExperiment(SketchExperiment):
    """A fixed x against y drawn from the hard distribution must often decode FAR"""

    kind = "contraction"

    def setup(self):
        self.setup_hard()
        self.logger.info(f"Fixed point l{self.spec.p:g} norm {self.fixed_norm:.4f}, "
                         f"r = {self.contraction_r:.4f}")
        self.hard_params_at(self.contraction_r)
        # below the validity floor; reported, not gated
        self.matched_r = 2 * self.fixed_norm / (self.spec.c - 1)
        self.hard_params_at(self.matched_r, self.spec.c)

    def trial(self, index: int) -> Dict[str, Any]:
        params = self.hard_params_at(self.contraction_r)
        seed = self.trial_seed(index)
        y = sample_hard_point(self.spec, self.mu_seed, index)
        outcome = decode_single_scale(build_single_scale(self.fixed_x, self.hard_median, params, seed),
                                      build_single_scale(y, self.hard_median, params, seed), params)
        matched = self.hard_params_at(self.matched_r, self.spec.c)
        matched_outcome = decode_single_scale(
            build_single_scale(self.fixed_x, self.hard_median, matched, seed),
            build_single_scale(y, self.hard_median, matched, seed), matched)
        return {"distance": lp_distance(self.fixed_x, y, self.spec.p),
                "far": outcome is Outcome.FAR,
                "far_at_hard_c": matched_outcome is Outcome.FAR}

    def summarize(self, records):
        n = len(records)
        far = sum(1 for r in records if r["far"])
        aggregates = {
            "far_on_mu": rate(far, n),
            "r": self.contraction_r,
            "fixed_norm": self.fixed_norm,
            "sketch_p": self.spec.p,
            "sketch_c": self.config.c,
            "far_on_mu_at_hard_c": rate(sum(1 for r in records if r["far_at_hard_c"]), n),
            "r_at_hard_c": self.matched_r,
        }
        return aggregates, [Gate("contraction_rate", aggregates["far_on_mu"]["rate"],
                                 CONTRACTION_FLOOR, ">=")]


class BoostingExperiment(SketchExperiment):
    """Voting over T repetitions lowers FAR-on-close and keeps contraction"""

    kind = "boosting"

    def setup(self):
        self.setup_dataset()
        self.setup_hard()
        self.delta0 = self.config.delta0 or DEFAULT_DELTA0
        self.T = self.config.T or repetitions_for(self.delta0)
        self.hard_params_at(self.contraction_r)
        self.logger.info(f"Boosting with T = {self.T} repetitions")

    def trial(self, index: int) -> Dict[str, Any]:
        seed = self.trial_seed(index)
        x, y, dist = self.close_pair(index)
        params = self.params_at(dist)
        single = decode_single_scale(build_single_scale(x, self.median, params, seed),
                                     build_single_scale(y, self.median, params, seed), params)
        boosted = decode_boosted(
            build_boosted(x, self.median, params, self.delta0, seed, T=self.T),
            build_boosted(y, self.median, params, self.delta0, seed, T=self.T), params)

        far_params = self.hard_params_at(self.contraction_r)
        mu_y = sample_hard_point(self.spec, self.mu_seed, index)
        contraction = decode_boosted(
            build_boosted(self.fixed_x, self.hard_median, far_params, self.delta0, seed, T=self.T),
            build_boosted(mu_y, self.hard_median, far_params, self.delta0, seed, T=self.T),
            far_params)
        return {
            "distance": dist,
            "single_far": single is Outcome.FAR,
            "boosted_far": boosted is Outcome.FAR,
            "boosted_far_on_mu": contraction is Outcome.FAR,
        }

    def summarize(self, records):
        n = len(records)
        single = rate(sum(1 for r in records if r["single_far"]), n)
        boosted = rate(sum(1 for r in records if r["boosted_far"]), n)
        mu = rate(sum(1 for r in records if r["boosted_far_on_mu"]), n)
        aggregates = {"T": self.T, "single_far_on_close": single,
                      "boosted_far_on_close": boosted, "boosted_far_on_mu": mu}
        improvement = boosted["rate"] - single["rate"]
        # with no single-scale errors there is nothing to improve on
        comparison = "<" if single["count"] else "<="
        return aggregates, [
            Gate("boosted_minus_single_far_on_close", improvement, 0.0, comparison),
            Gate("boosted_contraction_rate", mu["rate"], BOOSTED_CONTRACTION_FLOOR, ">="),
        ]


class OracleExperiment(SketchExperiment):
    """The hashed decoder against the full-information decoders"""

    kind = "oracle"

    def setup(self):
        self.setup_dataset()
        self.params = self.params_at(self.config.r)

    def trial(self, index: int) -> Dict[str, Any]:
        seed = self.trial_seed(index)
        rng = seed.generator("PAIR")
        x = self.data[int(rng.integers(0, len(self.data)))]
        if rng.random() < 0.5:
            y = perturb(x, self.config.r, self.config.p, self.data.delta, rng)
        else:
            y = self.data[int(rng.integers(0, len(self.data)))]
        m, params = self.median, self.params
        hashed = decode_single_scale(build_single_scale(x, m, params, seed),
                                     build_single_scale(y, m, params, seed), params)
        full = reference_decode(x, y, m, params, seed)
        truncated = reference_decode(x, y, m, params, seed, truncated=True)
        collisions = find_collisions(x, y, m, params, seed)
        return {
            "hashed": hashed.value,
            "reference": full.value,
            "truncated_reference": truncated.value,
            "h1_collision": collisions.h1,
            "h2_collision": collisions.h2,
        }

    def summarize(self, records):
        n = len(records)
        agree = sum(1 for r in records if r["hashed"] == r["reference"])
        unexplained = sum(1 for r in records
                          if r["hashed"] != r["truncated_reference"]
                          and not (r["h1_collision"] or r["h2_collision"]))
        aggregates = {
            "agreement": rate(agree, n),
            "truncated_agreement": rate(sum(1 for r in records
                                            if r["hashed"] == r["truncated_reference"]), n),
            "unexplained_disagreements": unexplained,
            "far": rate(sum(1 for r in records if r["hashed"] == Outcome.FAR.value), n),
        }
        return aggregates, [
            Gate("agreement_rate", aggregates["agreement"]["rate"], ORACLE_AGREEMENT_FLOOR, ">="),
            Gate("unexplained_disagreements", unexplained, 0, "=="),
        ]


class EstimatorExperiment(SketchExperiment):
    """Expected non-expansion on fixed pairs and average contraction on μ"""

    kind = "estimator"

    def setup(self):
        self.setup_dataset()
        self.setup_hard()
        self.pairs = self._fixed_pairs()
        self.scales = scale_set(self.config.c, self.data.dimension, self.data.delta)
        scale_params(self.config.c, self.config.p, self.scales[0], self.config.overrides)

    def _fixed_pairs(self) -> List[Tuple[IntVector, IntVector, float]]:
        """Pairs with lp distances spread geometrically from 1 upward"""
        rng = self.seed.generator("PAIRS")
        d, delta, count = self.data.dimension, self.data.delta, self.config.pairs
        pairs = []
        for j in range(count):
            frac = j / max(1, count - 1)
            magnitude = max(1, int(round(delta ** frac)))
            width = max(1, int(round(d ** frac)))
            x = self.data[int(rng.integers(0, len(self.data)))].coords.copy()
            chosen = rng.choice(d, size=width, replace=False)
            x[chosen] = np.minimum(x[chosen], delta - magnitude)
            y = x.copy()
            y[chosen] += magnitude
            xv, yv = IntVector(x), IntVector(y)
            pairs.append((xv, yv, lp_distance(xv, yv, self.config.p)))
        return pairs

    def _estimate(self, x: IntVector, y: IntVector, median: IntVector, d: int, delta: int,
                  seed: SharedSeed) -> float:
        cfg = self.config
        a = build_multiscale(x, median, cfg.c, cfg.p, d, delta, seed, cfg.overrides, cfg.delta0, cfg.T)
        b = build_multiscale(y, median, cfg.c, cfg.p, d, delta, seed, cfg.overrides, cfg.delta0, cfg.T)
        return estimate_distance(a, b, cfg.overrides)

    def trial(self, index: int) -> Dict[str, Any]:
        seed = self.trial_seed(index)
        j = index % len(self.pairs)
        x, y, dist = self.pairs[j]
        estimate = self._estimate(x, y, self.median, self.data.dimension, self.data.delta, seed)
        mx = sample_hard_point(self.spec, self.mu_seed, 2 * index)
        my = sample_hard_point(self.spec, self.mu_seed, 2 * index + 1)
        mu_estimate = self._estimate(mx, my, self.hard_median, self.spec.dimension, self.spec.c,
                                     seed.derive("MU"))
        return {
            "pair": j,
            "distance": dist,
            "estimate": estimate,
            "mu_distance": lp_distance(mx, my, self.config.p),
            "mu_estimate": mu_estimate,
        }

    def summarize(self, records):
        per_pair = []
        violations = 0
        for j, (_, _, dist) in enumerate(self.pairs):
            values = [r["estimate"] for r in records if r["pair"] == j]
            if not values:
                continue
            mean = float(np.mean(values))
            se = standard_error(values)
            over = mean > dist + 3 * se
            violations += int(over)
            per_pair.append({"pair": j, "distance": dist, "mean_estimate": mean,
                             "stderr": se, "samples": len(values), "violates": over})
        mu_est = [r["mu_estimate"] for r in records]
        mu_dist = [r["mu_distance"] for r in records]
        mean_est = float(np.mean(mu_est)) if mu_est else 0.0
        mean_dist = float(np.mean(mu_dist)) if mu_dist else 0.0
        floor = mean_dist / (64 * self.config.c) - 3 * standard_error(mu_est)
        aggregates = {
            "scales": list(self.scales),
            "pairs": per_pair,
            "mu_mean_estimate": mean_est,
            "mu_mean_distance": mean_dist,
            "mu_contraction_floor": floor,
        }
        return aggregates, [
            Gate("nonexpansion_violations", violations, 0, "=="),
            Gate("mu_mean_estimate", mean_est, floor, ">="),
        ]


class AnnExperiment(SketchExperiment):
    """Planted-instance benchmark of the near-neighbor index"""

    kind = "ann"
    # the index is built once and queried in-process
    parallel_safe = False

    def setup(self):
        cfg = self.config
        params = dict(cfg.generator_params)
        with self.track_operation("plant"):
            self.instance = planted(params.get("n", cfg.n), params.get("d", cfg.d), cfg.r, cfg.c,
                                    params.get("delta", cfg.delta), cfg.trials, cfg.p,
                                    self.seed.derive("PLANTED"))
        with self.track_operation("build_index"):
            self.index = build_index(self.instance.dataset, cfg.r, cfg.c, cfg.eps,
                                     self.seed.derive("INDEX"), p=cfg.p, overrides=cfg.overrides,
                                     T=cfg.T, depth=cfg.depth, repetitions=cfg.R)
        self.logger.info(f"Index: {self.index!r}")

    def trial(self, index: int) -> Dict[str, Any]:
        q = self.instance.queries[index]
        shrink: List[float] = []
        answer = query_index(self.index, q, shrink)
        limit = self.config.c * self.config.r
        dist = lp_distance(q, self.instance.dataset[answer], self.config.p) if answer is not None else None
        return {
            "target": self.instance.targets[index],
            "answer": answer,
            "distance": dist,
            "success": dist is not None and dist <= limit,
            "unsound": dist is not None and dist > limit,
            "shrink": shrink,
        }

    def summarize(self, records):
        n = len(records)
        fractions = [f for r in records for f in r["shrink"]]
        mean_shrink = float(np.mean(fractions)) if fractions else 0.0
        success = rate(sum(1 for r in records if r["success"]), n)
        unsound = sum(1 for r in records if r["unsound"])
        aggregates = {
            "recall": success,
            "unsound_answers": unsound,
            "mean_shrink": mean_shrink,
            "trees": len(self.index.roots),
            "depth": self.index.config.depth,
            "nodes": sum(root.node_count() for root in self.index.roots),
        }
        return aggregates, [
            Gate("unsound_answers", unsound, 0, "=="),
            Gate("recall", success["rate"], ANN_RECALL_FLOOR, ">="),
            Gate("mean_shrink", mean_shrink, ANN_SHRINK_CEILING, "<="),
        ]

    def resolved_params(self) -> Dict[str, Any]:
        params = super().resolved_params()
        params["index"] = self.index.config.as_dict()
        return params


class CertificationExperiment(SketchExperiment):
    """Certificate emission and validity on pairs from the hard distribution"""

    kind = "certification"

    def setup(self):
        self.setup_hard()
        self.cert_params = certification_params(self.spec, self.config.cert_r,
                                                self.config.multiplier, self.config.overrides)

    def trial(self, index: int) -> Dict[str, Any]:
        seed = self.trial_seed(index)
        x = sample_hard_point(self.spec, self.mu_seed, 2 * index)
        y = sample_hard_point(self.spec, self.mu_seed, 2 * index + 1)
        params = self.cert_params
        cert = certify_decode(build_single_scale(x, self.hard_median, params, seed),
                              build_single_scale(y, self.hard_median, params, seed), params, seed)
        dist = lp_distance(x, y, self.spec.p)
        valid = cert is not None and is_valid_certificate(x, y, cert)
        return {
            "emitted": cert is not None,
            "valid": valid,
            "certificate": asdict(cert) if cert is not None else None,
            "distance": dist,
            "implication_ok": (not valid) or dist >= 2,
        }

    def summarize(self, records):
        n = len(records)
        emitted = [r for r in records if r["emitted"]]
        invalid = sum(1 for r in emitted if not r["valid"])
        invalid_rate = invalid / len(emitted) if emitted else 0.0
        violations = sum(1 for r in records if not r["implication_ok"])
        aggregates = {
            "emission": rate(len(emitted), n),
            "invalid": rate(invalid, len(emitted)),
            "implication_violations": violations,
            "sketch_r": self.cert_params.r,
        }
        return aggregates, [
            Gate("emission_rate", aggregates["emission"]["rate"], EMISSION_FLOOR, ">="),
            Gate("invalid_certificate_rate", invalid_rate, INVALID_CERT_CEILING, "<="),
            Gate("implication_violations", violations, 0, "=="),
        ]

    def resolved_params(self) -> Dict[str, Any]:
        params = super().resolved_params()
        params["sketch"] = self.cert_params.as_dict()
        return params


class HardExperiment(SketchExperiment):
    """Structure of the hard distribution and its far-pair probability"""

    kind = "hard"

    def setup(self):
        self.spec = HardDistributionSpec(p=self.config.hard_p, c=self.config.hard_c)
        self.mu_seed = self.seed.derive("MU")
        self.norm = hard_norm(self.spec, self.spec.p)

    def _structure_ok(self, levels: Tuple[IntVector, ...], point: IntVector) -> bool:
        sizes = tuple(int(v.coords.sum()) for v in levels)
        if sizes != self.spec.level_sizes:
            return False
        for outer, inner in zip(levels, levels[1:]):
            if np.any(inner.coords > outer.coords):
                return False
        counts = np.bincount(point.coords, minlength=self.spec.c + 1)
        if tuple(int(v) for v in counts) != self.spec.value_counts():
            return False
        return int(np.count_nonzero(point.coords == self.spec.c)) == 1

    def trial(self, index: int) -> Dict[str, Any]:
        levels = sample_hard_tuple(self.spec, self.mu_seed, 2 * index)
        x = IntVector(np.sum([v.coords for v in levels], axis=0))
        y = sample_hard_point(self.spec, self.mu_seed, 2 * index + 1)
        dist = lp_distance(x, y, self.spec.p)
        return {
            "structure_ok": self._structure_ok(levels, x),
            "norm_ok": math.isclose(lp_norm(x, self.spec.p), self.norm, rel_tol=1e-9),
            "far": dist >= self.spec.c,
        }

    def summarize(self, records):
        n = len(records)
        failures = sum(1 for r in records if not (r["structure_ok"] and r["norm_ok"]))
        far = rate(sum(1 for r in records if r["far"]), n)
        aggregates = {"structure_failures": failures, "far": far, "norm": self.norm,
                      "level_sizes": list(self.spec.level_sizes)}
        return aggregates, [
            Gate("structure_failures", failures, 0, "=="),
            Gate("far_rate", far["rate"], HARD_FAR_FLOOR, ">="),
        ]


EXPERIMENTS: Dict[str, Type[BaseExperiment]] = {
    cls.kind: cls
    for cls in (
        NonexpansionExperiment,
        ContractionExperiment,
        BoostingExperiment,
        OracleExperiment,
        EstimatorExperiment,
        AnnExperiment,
        CertificationExperiment,
        HardExperiment,
    )
}


def run_experiment(config: ExperimentConfig,
                   experiment_id: Optional[str] = None,
                   log_dir: Optional[str] = None,
                   stats_dir: Optional[str] = None,
                   verbose: bool = False) -> Report:
    """Run the experiment the config names and write its report if `output` is set"""
    experiment = EXPERIMENTS[config.experiment](config, experiment_id=experiment_id,
                                                log_dir=log_dir, stats_dir=stats_dir,
                                                verbose=verbose)
    report = experiment.run()
    if config.output:
        write_report(report, config.output)
        logger.info("Report written to %s", config.output)
    return report
