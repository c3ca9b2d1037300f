"""Property and oracle suites behind `gsgat verify` and the acceptance tests.

Every check returns a CheckResult with the measured quantity and its bound so
the report shows numbers, not just verdicts. The "fast" level runs the
numerical property checks (about a minute); "full" adds the mini-run
degeneration/determinism pair and the desk-scale learning experiments.
"""

from __future__ import annotations

import csv
import itertools
import shutil
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gridworld as gw
from . import training as tr
from .autodiff import ParamStore, RngStream
from .config import ExperimentConfig, RunConfig
from .gnn import check_equivariance_gat, check_equivariance_gcn, gcn_linear, \
    random_gat_layer, random_gcn_params
from .graphs import build_graph, permutation_matrix
from .harness import discover_runs, final_window_mean, run_dir_for, run_single
from .sinkhorn import brute_force_match, hungarian_match, sinkhorn


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: str
    bound: str
    seconds: float
    gating: bool = True
    note: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        if not self.gating:
            verdict = "INFO"
        text = (f"[{verdict}] {self.name}: {self.measured} "
                f"(bound: {self.bound}) [{self.seconds:.1f}s]")
        if self.note:
            text += f" -- {self.note}"
        return text


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# 1. Sinkhorn convergence
# ---------------------------------------------------------------------------


def check_sinkhorn_convergence(trials: int = 100, size: int = 8,
                               seed: int = 2024) -> CheckResult:
    """Residual < 1e-6 after 100 iterations and non-increasing across depths,
    for matrices with entries uniform in [-10, 10].
    """
    def body():
        rng = RngStream(seed)
        worst = 0.0
        over = 0
        monotone = True
        for _ in range(trials):
            x = rng.uniform((size, size)) * 20.0 - 10.0
            residuals = [sinkhorn(x, L).row_col_residual for L in (1, 5, 20, 100)]
            worst = max(worst, residuals[-1])
            if residuals[-1] >= 1e-6:
                over += 1
            if not all(residuals[i + 1] <= residuals[i] + 1e-15 for i in range(3)):
                monotone = False
        return worst, over, monotone

    (worst, over, monotone), secs = _timed(body)
    passed = over == 0 and monotone and secs < 5.0
    note = ""
    if over:
        note = (f"{over}/{trials} draws exceed 1e-6 at L=100; uniform [-10,10] "
                "matrices can need thousands of iterations (inherent Sinkhorn "
                "conditioning; see the requirements-coverage notes in README)")
    return CheckResult(
        name="sinkhorn-convergence",
        passed=passed,
        measured=f"max residual {worst:.2e}, {over}/{trials} over tolerance, "
                 f"monotone={monotone}",
        bound="residual < 1e-6 at L=100, non-increasing, < 5 s",
        seconds=secs, note=note)


# ---------------------------------------------------------------------------
# 2. Matching-operator limit
# ---------------------------------------------------------------------------


def check_matching_limit(trials: int = 100, seed: int = 77) -> CheckResult:
    """Low-temperature Sinkhorn rounds to the exact assignment; the exact
    assignment agrees with the factorial brute force everywhere."""
    def body():
        rng = RngStream(seed)
        limit_hits = 0
        brute_hits = 0
        done = 0
        while done < trials:
            x = rng.uniform((6, 6)) * 2.0 - 1.0
            totals = sorted(
                (float(x[np.arange(6), p].sum())
                 for p in itertools.permutations(range(6))),
                reverse=True)
            if totals[0] - totals[1] <= 0.1:
                continue
            done += 1
            hard = hungarian_match(x)
            if np.array_equal(hard.assignment, brute_force_match(x).assignment):
                brute_hits += 1
            soft = sinkhorn(x / 0.01, 500).values.value
            if np.array_equal(np.argmax(soft, axis=1), hard.assignment):
                limit_hits += 1
        return limit_hits, brute_hits

    (limit_hits, brute_hits), secs = _timed(body)
    passed = limit_hits >= 95 and brute_hits == trials and secs < 10.0
    return CheckResult(
        name="matching-operator-limit",
        passed=passed,
        measured=f"rounding matches {limit_hits}/{trials}, "
                 f"brute-force agreement {brute_hits}/{trials}",
        bound=">= 95/100 rounding, 100/100 brute force, < 10 s",
        seconds=secs)


# ---------------------------------------------------------------------------
# 3. Permutation equivariance
# ---------------------------------------------------------------------------


def _random_connected_graph(rng: RngStream, n: int):
    while True:
        pos = np.stack([rng.integers(25, size=n), rng.integers(25, size=n)], axis=1)
        if len({tuple(p) for p in pos}) == n:
            return build_graph(pos, np.ones(n, dtype=bool), 2)


def check_equivariance(trials: int = 200, seed: int = 99) -> CheckResult:
    """Relabeling residuals stay at numerical zero; topology churn breaks them."""
    def body():
        rng = RngStream(seed)
        worst_gcn = worst_gat = 0.0
        churn_broken = 0
        for _ in range(trials):
            n = 4 + int(rng.integers(5))           # 4..8 nodes
            order = int(rng.integers(4))           # K in 0..3
            g = _random_connected_graph(rng, n)
            s = g.adjacency
            x = rng.normal((n, 3))
            p = permutation_matrix(rng.permutation(n))
            gcn = random_gcn_params(rng, order)
            pre, post = check_equivariance_gcn(gcn, s, x, p)
            worst_gcn = max(worst_gcn, pre, post)
            layers = [random_gat_layer(rng, 3, 2, 2)]
            worst_gat = max(worst_gat,
                            check_equivariance_gat(layers, g, x, rng.permutation(n)))
            # churn: the relabeled shift with flipped edges is no longer a
            # pure permutation of the original graph; an order-0 filter never
            # touches the topology, so breakage trials need K >= 1
            churn_gcn = random_gcn_params(rng, order=1 + int(rng.integers(3)))
            churned = (p.T @ s @ p).copy()
            flat = np.flatnonzero(~np.eye(n, dtype=bool).reshape(-1))
            for idx in flat[rng.choice_without_replacement(flat.size, 3)]:
                churned.reshape(-1)[idx] = 1.0 - churned.reshape(-1)[idx]
            got = gcn_linear(churned, p.T @ x, churn_gcn.taps).value
            want = p.T @ gcn_linear(s, x, churn_gcn.taps).value
            if np.abs(got - want).max() > 1e-3:
                churn_broken += 1
        return worst_gcn, worst_gat, churn_broken

    (worst_gcn, worst_gat, churn_broken), secs = _timed(body)
    passed = (worst_gcn < 1e-10 and worst_gat < 1e-10
              and churn_broken >= int(0.95 * trials) and secs < 10.0)
    return CheckResult(
        name="permutation-equivariance",
        passed=passed,
        measured=f"gcn residual {worst_gcn:.1e}, gat residual {worst_gat:.1e}, "
                 f"churn broken {churn_broken}/{trials}",
        bound="residuals < 1e-10, churn > 1e-3 in >= 95%, < 10 s",
        seconds=secs)


# ---------------------------------------------------------------------------
# 4. Gradient correctness
# ---------------------------------------------------------------------------


def _gradcheck_config() -> tr.TrainConfig:
    return tr.TrainConfig(feature_dim=6, num_heads=2, head_dim=3, gat_layers=2,
                          batch_size=2, buffer_capacity=8, sinkhorn_iters=8,
                          noise_scale=1.0, seed=0)


def _gradcheck_batch(rng: RngStream, n_agents: int = 4, obs_dim: int = 10,
                     items: int = 2) -> list[tr.Transition]:
    batch = []
    for _ in range(items):
        alive = np.ones(n_agents, dtype=bool)
        pos_t = np.stack([rng.integers(9, size=n_agents),
                          rng.integers(9, size=n_agents)], axis=1)
        pos_t1 = np.stack([rng.integers(9, size=n_agents),
                           rng.integers(9, size=n_agents)], axis=1)
        batch.append(tr.Transition(
            obs_t=rng.normal((n_agents, obs_dim)),
            actions_t=rng.integers(gw.NUM_ACTIONS, size=n_agents),
            rewards_t=rng.normal((n_agents,)),
            obs_t1=rng.normal((n_agents, obs_dim)),
            graph_t=build_graph(pos_t, alive, 2),
            graph_t1=build_graph(pos_t1, alive, 2),
            alive_t=alive, alive_t1=alive, terminal=False,
        ))
    return batch


def check_gradients(draws: int = 10, seed: int = 7) -> CheckResult:
    """Backward against central finite differences on the full blended loss."""
    def body():
        cfg = _gradcheck_config()
        worst = 0.0
        for draw in range(draws):
            rng = RngStream(seed).spawn(("draw", draw))
            nets = tr.QNetworks(
                tr.init_params(rng.spawn("params"), 10, cfg, "GS-GAT"),
                cfg, "GS-GAT")
            for _, t in nets.target.items():
                t.value += 0.01  # desynchronized target exercises both paths
            batch = _gradcheck_batch(rng.spawn("batch"))
            noise_seed = int(rng.spawn("noise").seed)

            def loss_fn(_: ParamStore) -> float:
                loss, _stats = tr.compute_losses(batch, nets, cfg,
                                                 RngStream(noise_seed))
                return float(loss.value)

            loss, _stats = tr.compute_losses(batch, nets, cfg, RngStream(noise_seed))
            ad.backward(loss, nets.local)
            numeric = ad.finite_diff_grad(loss_fn, nets.local)
            worst = max(worst, ad.max_relative_error(nets.local.grads(), numeric))
        return worst

    worst, secs = _timed(body)
    passed = worst < 1e-4 and secs < 60.0
    return CheckResult(
        name="gradient-correctness",
        passed=passed,
        measured=f"max relative error {worst:.2e} over {draws} draws",
        bound="< 1e-4, < 60 s",
        seconds=secs)


# ---------------------------------------------------------------------------
# 5-8. Desk-scale runs
# ---------------------------------------------------------------------------


def tiny_gather_env(seed: int = 7) -> gw.EnvConfig:
    """12x12 gather with 5 agents and 10 food.

    A +1 per-hit shaping reward keeps the signal dense enough for the
    200-episode desk budget (the absorbing +5 alone is too sparse there);
    the random baseline is evaluated under the same table, so the comparison
    stays fair.
    """
    return gw.EnvConfig(scenario=gw.GATHER, grid_size=12, num_agents=5,
                        num_food=10, view_size=5, max_steps=150,
                        reward_table={"food_hit": 1.0}, seed=seed)


def smoke_train_config(episodes: int = 200, seed: int = 1) -> tr.TrainConfig:
    return tr.TrainConfig(
        feature_dim=24, num_heads=2, head_dim=8, gat_layers=1,
        batch_size=8, buffer_capacity=8000, target_sync_period=150,
        learning_rate=0.001, gamma=0.9, optimizer="momentum",
        episodes=episodes, train_start_episode=5,
        epsilon_decay_start_episode=20, sinkhorn_iters=10,
        neighbor_count=3, seed=seed)


def _strip_csv(path: Path, drop: tuple[str, ...]) -> list[tuple[str, ...]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        keep = [c for c in reader.fieldnames if c not in drop]
        return [tuple(row[c] for c in keep) for row in reader]


def check_ablation_degeneration(work_dir: Path | None = None,
                                episodes: int = 20) -> CheckResult:
    """A zero-weighted GS-GAT run must reproduce the GAT run bit for bit.

    Wall-clock differs by nature and the algorithm label differs by
    definition, so those two columns are excluded from the comparison; every
    numeric column must match exactly.
    """
    def body():
        base = Path(work_dir) / "ablation" if work_dir else \
            Path(tempfile.mkdtemp(prefix="gsgat-ablation-"))
        cfg = ExperimentConfig(
            env=tiny_gather_env(),
            train=replace(smoke_train_config(episodes=episodes),
                          alpha=1.0, beta=0.0, gs_loss_weight=0.0),
            run=RunConfig(algorithms=["GAT", "GS-GAT"], seeds=[1],
                          output_dir=str(base)),
        )
        run_single(cfg, "GAT", 1, base)
        run_single(cfg, "GS-GAT", 1, base)
        a = _strip_csv(run_dir_for(base, "GAT", 1) / "metrics.csv",
                       drop=("algorithm", "wallClockMs"))
        b = _strip_csv(run_dir_for(base, "GS-GAT", 1) / "metrics.csv",
                       drop=("algorithm", "wallClockMs"))
        if work_dir is None:
            shutil.rmtree(base, ignore_errors=True)
        return a == b and len(a) == episodes, len(a)

    (identical, rows), secs = _timed(body)
    passed = identical and secs < 120.0
    return CheckResult(
        name="ablation-degeneration",
        passed=passed,
        measured=f"{rows}-episode runs identical={identical}",
        bound="bit-identical metrics (label and wall-clock aside), < 2 min",
        seconds=secs)


def check_determinism(work_dir: Path | None = None,
                      episodes: int = 10) -> CheckResult:
    """Two invocations of the same config produce byte-identical CSVs."""
    def body():
        base = Path(work_dir) / "determinism" if work_dir else \
            Path(tempfile.mkdtemp(prefix="gsgat-determinism-"))
        cfg = ExperimentConfig(env=tiny_gather_env(),
                               train=smoke_train_config(episodes=episodes),
                               run=RunConfig(algorithms=["GS-GAT"], seeds=[3],
                                             output_dir=str(base)))
        first = base / "first"
        second = base / "second"
        run_single(cfg, "GS-GAT", 3, first)
        run_single(cfg, "GS-GAT", 3, second)
        a = _strip_csv(run_dir_for(first, "GS-GAT", 3) / "metrics.csv",
                       drop=("wallClockMs",))
        b = _strip_csv(run_dir_for(second, "GS-GAT", 3) / "metrics.csv",
                       drop=("wallClockMs",))
        if work_dir is None:
            shutil.rmtree(base, ignore_errors=True)
        return a == b and len(a) == episodes

    identical, secs = _timed(body)
    return CheckResult(
        name="determinism",
        passed=bool(identical),
        measured=f"byte-identical={identical} (wall-clock column excluded)",
        bound="identical CSVs across reruns",
        seconds=secs)


def check_learning_smoke(work_dir: Path | None = None,
                         episodes: int = 200) -> CheckResult:
    """Tiny-gather GAT run: late-training reward beats early training and a
    uniform-random baseline."""
    def body():
        env = tiny_gather_env()
        cfg = smoke_train_config(episodes=episodes)
        # reuse the identical GAT seed-1 run when the directional ablation
        # has already produced it under the same work directory
        shared = Path(work_dir) / "directional" / "GAT" / "seed1" if work_dir else None
        if shared and (shared / "metrics.csv").exists():
            series = discover_runs(shared)[0]
            rewards = series.mean_rewards
        else:
            records, _ = tr.run_training(env, replace(cfg, seed=1), "GAT")
            rewards = [r.mean_reward for r in records]
        first20 = float(np.mean(rewards[:20]))
        last20 = float(np.mean(rewards[-20:]))
        baseline_records = tr.evaluate_policy(env, cfg, "GAT", None,
                                              episodes=20, seed=555)
        baseline = float(np.mean([r.mean_reward for r in baseline_records]))
        return first20, last20, baseline

    (first20, last20, baseline), secs = _timed(body)
    passed = last20 > first20 and last20 > baseline
    note = "" if secs < 600 else "runtime exceeded the 10-minute desk target"
    return CheckResult(
        name="learning-smoke",
        passed=passed,
        measured=f"last-20 mean {last20:.3f} vs first-20 {first20:.3f} "
                 f"vs random baseline {baseline:.3f}",
        bound="last-20 > first-20 and last-20 > baseline (target < 10 min)",
        seconds=secs, note=note)


def check_directional_ablation(work_dir: Path | None = None,
                               episodes: int = 200,
                               seeds: tuple[int, ...] = (1, 2, 3)) -> CheckResult:
    """Non-gating: report whether GS-GAT ends above GAT on the tiny task."""
    def body():
        base = Path(work_dir) / "directional" if work_dir else \
            Path(tempfile.mkdtemp(prefix="gsgat-directional-"))
        cfg = ExperimentConfig(env=tiny_gather_env(),
                               train=smoke_train_config(episodes=episodes),
                               run=RunConfig(algorithms=["GAT", "GS-GAT"],
                                             seeds=list(seeds),
                                             output_dir=str(base)))
        stats = {}
        for algorithm in cfg.run.algorithms:
            finals = []
            for seed in seeds:
                csv_path = run_dir_for(base, algorithm, seed) / "metrics.csv"
                if not csv_path.exists():
                    run_single(cfg, algorithm, seed, base)
                series = [s for s in discover_runs(run_dir_for(base, algorithm, seed))
                          if s.seed == seed][0]
                finals.append(final_window_mean(series))
            stats[algorithm] = (float(np.mean(finals)), float(np.min(finals)),
                                float(np.max(finals)))
        if work_dir is None:
            shutil.rmtree(base, ignore_errors=True)
        return stats

    stats, secs = _timed(body)
    gat_mean = stats["GAT"][0]
    gs_mean = stats["GS-GAT"][0]
    observed = gs_mean > gat_mean
    return CheckResult(
        name="directional-ablation",
        passed=True,  # reported, never gating
        gating=False,
        measured=(f"GAT {gat_mean:.3f} [{stats['GAT'][1]:.3f}, {stats['GAT'][2]:.3f}]; "
                  f"GS-GAT {gs_mean:.3f} [{stats['GS-GAT'][1]:.3f}, {stats['GS-GAT'][2]:.3f}]; "
                  f"GS advantage {'observed' if observed else 'not observed'}"),
        bound="directional expectation, no hard threshold",
        seconds=secs)


# ---------------------------------------------------------------------------
# 9. Epsilon schedule
# ---------------------------------------------------------------------------


def check_epsilon_schedule() -> CheckResult:
    def body():
        cfg = tr.TrainConfig()
        spots = {50: 0.9, 60: 0.9, 70: 0.40, 78: 0.02, 100: 0.02}
        errors = {ep: abs(tr.epsilon_at(ep, cfg) - want)
                  for ep, want in spots.items()}
        linear = all(
            abs(tr.epsilon_at(ep, cfg) - (0.9 - 0.05 * (ep - 60))) < 1e-12
            for ep in range(61, 78))
        return max(errors.values()), linear

    (worst, linear), secs = _timed(body)
    return CheckResult(
        name="epsilon-schedule",
        passed=worst < 1e-12 and linear,
        measured=f"max spot error {worst:.1e}, linear segment ok={linear}",
        bound="0.9 through ep 60, -0.05/episode, floor 0.02",
        seconds=secs)


# ---------------------------------------------------------------------------
# Suite runner
# ---------------------------------------------------------------------------

FAST_CHECKS = ("sinkhorn-convergence", "matching-operator-limit",
               "permutation-equivariance", "gradient-correctness",
               "determinism", "epsilon-schedule")


def run_checks(level: str = "fast", work_dir: Path | None = None,
               log=print) -> list[CheckResult]:
    if level not in ("fast", "full"):
        raise ValueError(f"level must be 'fast' or 'full', got {level!r}")
    results = [
        check_sinkhorn_convergence(),
        check_matching_limit(),
        check_equivariance(),
        check_gradients(),
        check_determinism(work_dir=work_dir),
        check_epsilon_schedule(),
    ]
    for r in results:
        log(r.line())
    if level == "full":
        # directional first: the learning smoke reuses its GAT seed-1 run
        for check in (check_ablation_degeneration, check_directional_ablation,
                      check_learning_smoke):
            r = check(work_dir=work_dir)
            results.append(r)
            log(r.line())
    return results


def verify_suite(level: str = "fast", work_dir: Path | None = None,
                 log=print) -> int:
    """Run the suite, print the report, return 0 (all pass) or 3."""
    results = run_checks(level, work_dir=work_dir, log=log)
    failures = [r for r in results if r.gating and not r.passed]
    log(f"{len(results) - len(failures)}/{len(results)} checks passed"
        + (f", {len(failures)} FAILED" if failures else ""))
    return 3 if failures else 0
