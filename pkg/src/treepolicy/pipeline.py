"""End-to-end stages shared by the CLI: train, distill, evaluate, heatmaps.

Each stage reads and writes files under a fixed output layout::

    out/
      profiles.csv           gen-data
      checkpoints/           teacher checkpoint + replay buffer
      students/              per-seed tree artifacts + distillation dataset
      reports/               comparison tables, loss curves, summaries
      heatmaps/              per-panel CSV grids and SVG renderings

All outputs are byte-deterministic functions of (config, seeds, inputs).
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import distill, evalkit, teacher
from .dataio import (
    DayProfile,
    NormalizationStats,
    RunConfig,
    build_profiles,
    load_profiles,
    save_profiles,
)
from .ddt import export_rules, tree_from_json, tree_to_json
from .envsim import ACTION_NAMES, FEATURE_NAMES, HomeEnv
from .errors import ConfigError


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_layout(out: str) -> None:
    for sub in ("checkpoints", "students", "reports", "heatmaps"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)


def write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_json(path: str, obj) -> None:
    write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_gen_data(config: RunConfig, out: str) -> list[str]:
    """Synthesize the day set described by the config into out/profiles.csv."""
    if config.price_mode == "file":
        raise ConfigError("gen-data synthesizes profiles; it needs price_mode=square")
    ensure_layout(out)
    profiles = build_profiles(config)
    path = os.path.join(out, "profiles.csv")
    save_profiles(profiles, path)
    return [path]


def _load_profiles_for(config: RunConfig, out: str, profiles_path: str | None) -> tuple[list[DayProfile], str]:
    path = profiles_path or config.profile_path or os.path.join(out, "profiles.csv")
    if not os.path.exists(path):
        raise ConfigError(
            f"profiles file {path!r} not found; run the gen-data command first "
            "(or point --profiles at real data)"
        )
    return load_profiles(path), path


def stage_train_teacher(config: RunConfig, out: str, profiles_path: str | None = None,
                        seed: int | None = None) -> dict:
    """Train the DQN teacher and write checkpoint, buffer, and loss curve."""
    ensure_layout(out)
    profiles, ppath = _load_profiles_for(config, out, profiles_path)
    stats = NormalizationStats.from_profiles(profiles)
    env = HomeEnv(config.battery(), config.tariff(), stats)
    result = teacher.train_teacher(config, env, profiles, seed)
    ckpt = os.path.join(out, "checkpoints", "teacher.ckpt")
    buf = os.path.join(out, "checkpoints", "replay.buf")
    loss_csv = os.path.join(out, "reports", "teacher_loss.csv")
    teacher.save_checkpoint(result.agent, stats, ckpt)
    teacher.save_buffer(result.buffer, buf)
    teacher.dump_loss_curve(result.losses, loss_csv)
    return {
        "inputs": [ppath],
        "outputs": [ckpt, buf, loss_csv],
        "final_loss": result.losses[-1] if result.losses else None,
        "episodes": config.episodes,
    }


def stage_distill(config: RunConfig, out: str, depth: int | None = None,
                  seeds: tuple[int, ...] | None = None,
                  checkpoint: str | None = None, buffer: str | None = None) -> dict:
    """Distill one student per seed from the stored teacher and buffer."""
    ensure_layout(out)
    depth = depth if depth is not None else config.student_depth
    if depth not in (2, 3):
        raise ConfigError(f"student depth must be 2 or 3, got {depth}")
    seeds = tuple(seeds) if seeds else tuple(config.seeds)
    ckpt = checkpoint or os.path.join(out, "checkpoints", "teacher.ckpt")
    buf = buffer or os.path.join(out, "checkpoints", "replay.buf")
    for path, cmd in ((ckpt, "train-teacher"), (buf, "train-teacher")):
        if not os.path.exists(path):
            raise ConfigError(f"missing artifact {path!r}; run the {cmd} command first")
    agent, _stats = teacher.load_checkpoint(ckpt)
    replay = teacher.load_buffer(buf)
    dataset = distill.build_dataset(agent, replay, checkpoint_id=sha256_file(ckpt))
    ds_path = os.path.join(out, "students", "dataset.bin")
    distill.save_dataset(dataset, ds_path)

    cfg = config.with_overrides(student_depth=depth)
    outputs = [ds_path]
    per_seed = []
    for seed in seeds:
        result = distill.train_student(dataset, cfg, seed)
        stem = os.path.join(out, "students", f"ddt_d{depth}_s{seed}")
        tree_json = stem + ".tree.json"
        write_text(tree_json, tree_to_json(result.crisp, FEATURE_NAMES, ACTION_NAMES))
        write_text(stem + ".rules.txt",
                   export_rules(result.crisp, FEATURE_NAMES, ACTION_NAMES, "text"))
        write_text(stem + ".dot",
                   export_rules(result.crisp, FEATURE_NAMES, ACTION_NAMES, "dot"))
        write_json(stem + ".soft.json", {
            "depth": depth,
            "feature_weights": result.tree.feature_weights.tolist(),
            "thresholds": result.tree.thresholds.tolist(),
            "leaf_weights": result.tree.leaf_weights.tolist(),
        })
        loss_csv = stem + ".loss.csv"
        write_text(loss_csv, "epoch,mean_loss\n" + "".join(
            f"{i},{loss!r}\n" for i, loss in enumerate(result.epoch_losses)))
        agreement = distill.agreement_rate(result.crisp, dataset.states, dataset.teacher_q)
        per_seed.append({
            "seed": seed,
            "final_loss": result.epoch_losses[-1],
            "teacher_agreement": agreement,
            "training_params": result.tree.num_training_params,
            "inference_params": result.tree.num_inference_params,
        })
        outputs += [tree_json, stem + ".rules.txt", stem + ".dot", stem + ".soft.json", loss_csv]
    summary = os.path.join(out, "students", f"summary_d{depth}.json")
    write_json(summary, {"depth": depth, "checkpoint": sha256_file(ckpt), "seeds": per_seed})
    outputs.append(summary)
    return {"inputs": [ckpt, buf], "outputs": outputs, "per_seed": per_seed, "depth": depth}


def _student_policies(out: str, depth: int, seeds) -> list[tuple[int, evalkit.CrispTreePolicy]]:
    members = []
    for seed in seeds:
        path = os.path.join(out, "students", f"ddt_d{depth}_s{seed}.tree.json")
        if not os.path.exists(path):
            raise ConfigError(f"missing student tree {path!r}; run the distill command first")
        with open(path, encoding="utf-8") as fh:
            tree = tree_from_json(fh.read())
        members.append((seed, evalkit.CrispTreePolicy(tree, f"ddt{depth}")))
    return members


def stage_evaluate(config: RunConfig, out: str, depths: tuple[int, ...] = (2,),
                   profiles_path: str | None = None) -> dict:
    """Compare RBC, teacher, and stored students; include the DP oracle costs."""
    ensure_layout(out)
    profiles, ppath = _load_profiles_for(config, out, profiles_path)
    stats = NormalizationStats.from_profiles(profiles)
    battery, tariff = config.battery(), config.tariff()
    ckpt = os.path.join(out, "checkpoints", "teacher.ckpt")
    if not os.path.exists(ckpt):
        raise ConfigError(f"missing artifact {ckpt!r}; run the train-teacher command first")
    agent, ckpt_stats = teacher.load_checkpoint(ckpt)

    groups = [
        evalkit.PolicyGroup("rbc", [(0, evalkit.RbcPolicy(battery, stats))]),
        evalkit.PolicyGroup("dqn", [(config.teacher_seed, evalkit.TeacherPolicy(agent))]),
    ]
    for depth in depths:
        groups.append(evalkit.PolicyGroup(f"ddt{depth}",
                                          _student_policies(out, depth, config.seeds)))
    comparison = evalkit.compare_policies(groups, profiles, battery, tariff, stats,
                                          config.initial_soc)
    dp_rows = [(day.label, evalkit.dp_optimal_cost(day, battery, tariff, config.dp_soc_grid,
                                                   config.initial_soc))
               for day in profiles]
    dp_mean = float(np.mean([c for _, c in dp_rows]))

    per_seed_csv = os.path.join(out, "reports", "comparison_per_seed.csv")
    agg_csv = os.path.join(out, "reports", "comparison_summary.csv")
    dp_csv = os.path.join(out, "reports", "dp_oracle.csv")
    summary_json = os.path.join(out, "reports", "comparison.json")
    write_text(per_seed_csv, comparison.to_csv())
    write_text(agg_csv, comparison.aggregates_csv())
    write_text(dp_csv, "day,dp_optimal_cost_eur\n" + "".join(
        f"{label},{cost!r}\n" for label, cost in dp_rows))
    write_json(summary_json, {
        "aggregates": comparison.aggregates,
        "rows": comparison.rows,
        "dp_mean": dp_mean,
        "baseline": comparison.baseline,
    })
    outputs = [per_seed_csv, agg_csv, dp_csv, summary_json]
    # one example trace per policy family on the first day
    for group in groups:
        _seed, pol = group.members[0]
        report = evalkit.run_episode(pol, profiles[0], battery, tariff, stats,
                                     config.initial_soc)
        trace_csv = os.path.join(out, "reports", f"trace_{group.name}_{profiles[0].label}.csv")
        write_text(trace_csv, evalkit.episode_trace_csv(report))
        outputs.append(trace_csv)
    return {
        "inputs": [ppath, ckpt],
        "outputs": outputs,
        "aggregates": comparison.aggregates,
        "dp_mean": dp_mean,
        "comparison": comparison,
        "checkpoint_stats": ckpt_stats,
    }


def stage_heatmap(config: RunConfig, out: str, depths: tuple[int, ...] = (2,),
                  seeds: tuple[int, ...] | None = None) -> dict:
    """Fig-4 style action maps over (soc, price) for the teacher and students."""
    ensure_layout(out)
    ckpt = os.path.join(out, "checkpoints", "teacher.ckpt")
    if not os.path.exists(ckpt):
        raise ConfigError(f"missing artifact {ckpt!r}; run the train-teacher command first")
    agent, _ = teacher.load_checkpoint(ckpt)
    seeds = tuple(seeds) if seeds else (config.seeds[0],)
    axis = np.linspace(0.0, 1.0, config.heatmap_grid)
    demand_levels = (0.2, 0.5, 0.8)
    hour_norm = config.heatmap_fixed_hour / (config.horizon_steps - 1)

    policies = [evalkit.TeacherPolicy(agent, "dqn")]
    for depth in depths:
        for seed, pol in _student_policies(out, depth, seeds):
            pol.policy_id = f"ddt{depth}_s{seed}"
            policies.append(pol)

    outputs = []
    panels = []
    for pol in policies:
        grids = evalkit.policy_heatmap(pol, axis, axis, demand_levels, hour_norm,
                                       config.heatmap_fixed_pv)
        for hg in grids:
            stem = os.path.join(out, "heatmaps", f"{pol.policy_id}_demand{hg.demand_level:.1f}")
            write_text(stem + ".csv", evalkit.heatmap_to_csv(hg))
            write_text(stem + ".svg", evalkit.heatmap_to_svg(hg))
            panels.append({
                "policy": pol.policy_id,
                "demand_level": hg.demand_level,
                "regions": evalkit.count_action_regions(hg.actions),
                "distinct_actions": int(len(np.unique(hg.actions))),
            })
            outputs += [stem + ".csv", stem + ".svg"]
    summary = os.path.join(out, "heatmaps", "summary.json")
    write_json(summary, {"panels": panels})
    outputs.append(summary)
    return {"inputs": [ckpt], "outputs": outputs, "panels": panels}


# ---------------------------------------------------------------------------
# Reproduce: both experiment scenarios plus the acceptance checks
# ---------------------------------------------------------------------------

def _check(name: str, ok: bool, detail: str) -> dict:
    return {"check": name, "passed": bool(ok), "detail": detail}


def run_scenario1(config: RunConfig, out: str) -> tuple[list[dict], dict]:
    """Performance comparison on the square-wave fixture (PV on)."""
    cfg = config.with_overrides(price_mode="square", pv_enabled=True)
    stage_gen_data(cfg, out)
    stage_train_teacher(cfg, out)
    stage_distill(cfg, out, depth=2)
    stage_distill(cfg, out, depth=3)
    ev = stage_evaluate(cfg, out, depths=(2, 3))

    agg = {a["policy"]: a for a in ev["aggregates"]}
    rbc, dqn, ddt2 = agg["rbc"]["mean"], agg["dqn"]["mean"], agg["ddt2"]["mean"]
    dqn_impr = (rbc - dqn) / rbc * 100.0
    ddt_impr = (rbc - ddt2) / rbc * 100.0
    gap_pct = (ddt2 - dqn) / dqn * 100.0
    seed_costs = [r["mean_daily_cost_eur"] for r in ev["comparison"].rows if r["policy"] == "ddt2"]
    beat = sum(1 for c in seed_costs if c < rbc)
    policy_means = [a["mean"] for a in ev["aggregates"]]
    checks = [
        _check("teacher_beats_rbc_15pct", dqn_impr >= 15.0,
               f"teacher {dqn:.3f} vs rbc {rbc:.3f} -> {dqn_impr:.1f}% (need >= 15%)"),
        _check("student_beats_rbc_15pct", ddt_impr >= 15.0,
               f"ddt2 mean {ddt2:.3f} vs rbc {rbc:.3f} -> {ddt_impr:.1f}% (need >= 15%)"),
        _check("teacher_student_gap_15pct", gap_pct <= 15.0,
               f"ddt2 mean {ddt2:.3f} vs teacher {dqn:.3f} -> gap {gap_pct:.1f}% (need <= 15%)"),
        _check("three_of_five_seeds_beat_rbc", beat >= 3,
               f"{beat}/{len(seed_costs)} seeds beat rbc {rbc:.3f}"),
        _check("dp_lower_bounds_all", ev["dp_mean"] <= min(policy_means) + 1e-6,
               f"dp mean {ev['dp_mean']:.3f} <= best policy mean {min(policy_means):.3f}"),
    ]
    summary = {
        "rbc_mean": rbc, "dqn_mean": dqn, "ddt2_mean": ddt2,
        "ddt3_mean": agg["ddt3"]["mean"], "dp_mean": ev["dp_mean"],
        "dqn_improvement_pct": dqn_impr, "ddt2_improvement_pct": ddt_impr,
        "teacher_student_gap_pct": gap_pct, "seeds_beating_rbc": beat,
        "per_seed_ddt2": seed_costs,
    }
    return checks, summary


def run_scenario2(config: RunConfig, out: str) -> tuple[list[dict], dict]:
    """Reduced explainability scenario: no PV, heatmap structure comparison."""
    cfg = config.with_overrides(price_mode="square", pv_enabled=False)
    stage_gen_data(cfg, out)
    stage_train_teacher(cfg, out)
    stage_distill(cfg, out, depth=2)
    stage_distill(cfg, out, depth=3)
    hm = stage_heatmap(cfg, out, depths=(2, 3), seeds=(cfg.seeds[0],))

    checks = []
    dqn_regions = []
    for panel in hm["panels"]:
        if panel["policy"].startswith("ddt"):
            depth = int(panel["policy"][3])
            bound = 2 ** depth
            checks.append(_check(
                f"{panel['policy']}_demand{panel['demand_level']:.1f}_regions",
                panel["regions"] <= bound and panel["distinct_actions"] <= bound,
                f"{panel['regions']} regions, {panel['distinct_actions']} actions (bound {bound})",
            ))
        else:
            dqn_regions.append(panel["regions"])
    summary = {"panels": hm["panels"], "dqn_regions": dqn_regions}
    return checks, summary


def run_reproduce(config: RunConfig, out: str) -> dict:
    """Both scenarios end to end; returns the combined pass/fail report."""
    s1_out = os.path.join(out, "scenario1")
    s2_out = os.path.join(out, "scenario2")
    checks1, summary1 = run_scenario1(config, s1_out)
    checks2, summary2 = run_scenario2(config, s2_out)
    all_checks = checks1 + checks2
    report = {
        "scenario1": {"checks": checks1, "summary": summary1},
        "scenario2": {"checks": checks2, "summary": summary2},
        "all_passed": all(c["passed"] for c in all_checks),
    }
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    write_json(os.path.join(out, "reports", "reproduce_summary.json"), report)
    return report
