"""Command-line pipeline.

One executable with subcommands for every stage (synth, ingest,
features, train, score, evaluate, rank, allocate, sweep) plus ``run``,
which executes ingest through allocate in order and writes a manifest of
artifact hashes. Exit codes: 0 success, 2 usage/config, and a distinct
code per failing stage (see STAGE_EXIT).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import date
from pathlib import Path

import numpy as np

from mobscreen import features as feat
from mobscreen import ingest as ing
from mobscreen import metrics as met
from mobscreen import ranking as rnk
from mobscreen import seeds
from mobscreen.forest import ForestConfig
from mobscreen.pu import (
    PuConfig,
    Role,
    SpyUnit,
    load_bundle,
    run_spy_protocol,
    save_bundle,
)
from mobscreen.synth import SynthConfig, generate, write_synth

STAGE_EXIT = {
    "synth": 10,
    "ingest": 11,
    "features": 12,
    "train": 13,
    "score": 14,
    "evaluate": 15,
    "rank": 16,
    "allocate": 17,
    "sweep": 18,
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.threads and args.threads > 0:
        import numba

        numba.set_num_threads(args.threads)
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        for key, value in overrides.items():
            if hasattr(args, key) and getattr(args, key) is None:
                setattr(args, key, value)
    try:
        args.handler(args)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return STAGE_EXIT[exc.stage]
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobscreen",
        description="Mobility-based establishment screening pipeline",
    )
    parser.add_argument("--seed", type=int, default=None, help="root seed (default 42)")
    parser.add_argument("--threads", type=int, default=None, help="compute threads for kernels")
    parser.add_argument("--config", type=str, default=None, help="JSON file with argument defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic population")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--synth-config", type=str, default=None, help="JSON SynthConfig overrides")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("ingest", help="parse, filter, merge, and label raw records")
    p.add_argument("--pois", required=True)
    p.add_argument("--ads", required=True)
    p.add_argument("--start-date", type=str, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", type=str, default=None)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("features", help="extract the 28-feature matrix")
    p.add_argument("--labeled", required=True)
    p.add_argument("--geo", required=True)
    p.add_argument("--partisan", required=True)
    p.add_argument("--train-end", type=str, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_features)

    p = sub.add_parser("train", help="train PU bagging under the spy protocol")
    p.add_argument("--features", required=True)
    p.add_argument("--approach", choices=("A", "B", "C"), default="A")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=30)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--spy-fraction", type=float, default=0.2)
    p.add_argument("--spy-unit", choices=("establishment", "week"), default="establishment")
    p.add_argument("--out", required=True)
    p.add_argument("--scores-out", type=str, default=None, help="also write training-run scores")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("score", help="score a feature file with a trained bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_score)

    p = sub.add_parser("evaluate", help="PU metrics from a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--spy", action="store_true", help="require spy roles in the scores file")
    p.add_argument("--cv", type=int, default=None, help="business-level folds (needs --features)")
    p.add_argument("--aggregation", default="max")
    p.add_argument("--features", type=str, default=None)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=30)
    p.add_argument("--report", required=True)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("rank", help="aggregate week scores to establishment risk")
    p.add_argument("--scores", required=True)
    p.add_argument("--aggregation", default="max")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_rank)

    p = sub.add_parser("allocate", help="budgeted inspection plan from ranks")
    p.add_argument("--ranks", required=True)
    p.add_argument("--costs", type=str, default=None)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--mode", choices=("exact", "greedy"), default="exact")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_allocate)

    p = sub.add_parser("sweep", help="hyperparameter grid ranked by spy AUC")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[50])
    p.add_argument("--depth", type=int, nargs="+", default=[30])
    p.add_argument("--trees", type=int, nargs="+", default=[100])
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("run", help="full pipeline: ingest through allocate, with manifest")
    p.add_argument("--data-dir", required=True, help="directory with pois/ads/geo/partisan files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--start-date", type=str, default=None)
    p.add_argument("--train-end", type=str, default=None)
    p.add_argument("--approach", choices=("A", "B", "C"), default="A")
    p.add_argument("--aggregation", default="max")
    p.add_argument("--budget", type=float, default=None, help="default: 10%% of establishments")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=30)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--spy-fraction", type=float, default=0.2)
    p.set_defaults(handler=_cmd_run)

    return parser


def _root_seed(args) -> int:
    return 42 if args.seed is None else int(args.seed)


def _parse_date(value: str | None) -> date | None:
    return date.fromisoformat(value) if value else None


# ---------------------------------------------------------------------------
# Stage handlers
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> None:
    try:
        overrides = json.loads(Path(args.synth_config).read_text()) if args.synth_config else {}
        cfg_dict = SynthConfig(seed=_root_seed(args)).to_dict()
        cfg_dict.update(overrides)
        if args.seed is not None:
            cfg_dict["seed"] = args.seed
        cfg = SynthConfig.from_dict(cfg_dict)
        data = generate(cfg)
        paths = write_synth(data, args.out_dir)
        print(f"synth: wrote {len(paths)} files to {args.out_dir}")
    except Exception as exc:
        raise StageError("synth", exc)


def _cmd_ingest(args) -> None:
    try:
        observations, summary = ing.run_ingest(
            args.pois, args.ads, start_date=_parse_date(args.start_date)
        )
        ing.write_labeled(observations, args.out)
        summary_dict = {
            "config": {
                "pois": str(args.pois),
                "ads": str(args.ads),
                "start_date": args.start_date,
                "seed": _root_seed(args),
            },
            **summary.to_dict(),
        }
        summary_path = args.summary or str(Path(args.out).with_suffix(".summary.json"))
        Path(summary_path).write_text(json.dumps(summary_dict, sort_keys=True, indent=2) + "\n")
        print(
            f"ingest: {summary.rows_read} rows read, {summary.rows_kept} kept, "
            f"labels {summary.label_counts}"
        )
    except Exception as exc:
        raise StageError("ingest", exc)


def _cmd_features(args) -> None:
    try:
        observations = ing.read_labeled(args.labeled)
        geo = feat.load_geo_table(args.geo)
        partisan = feat.load_partisan_table(args.partisan)
        table = feat.build_feature_matrix(
            observations, geo, partisan, train_end=_parse_date(args.train_end)
        )
        feat.write_feature_table(table, args.out)
        print(f"features: {len(table)} rows x {len(table.feature_names)} features")
    except Exception as exc:
        raise StageError("features", exc)


def _train_config(args, seed: int) -> PuConfig:
    forest_cfg = ForestConfig(
        n_trees=args.trees,
        max_depth=args.depth,
        min_leaf=getattr(args, "min_leaf", 5),
        features_per_split=6,
        seed=seed,
    )
    return PuConfig(
        k=args.k,
        forest=forest_cfg,
        seed=seed,
        spy_fraction=getattr(args, "spy_fraction", 0.2),
        spy_unit=SpyUnit(getattr(args, "spy_unit", "establishment")),
    )


def _cmd_train(args) -> None:
    try:
        table = feat.read_feature_table(args.features)
        cfg = _train_config(args, _root_seed(args))
        result = run_spy_protocol(table, cfg, approach=args.approach)
        save_bundle(result.model, args.out, approach=args.approach, spy_placekeys=result.spy_placekeys)
        if args.scores_out:
            _write_scores(args.scores_out, table, result.scores, result.roles)
        print(f"train: approach {args.approach}, K={cfg.k}, bundle -> {args.out}")
    except Exception as exc:
        raise StageError("train", exc)


def _assign_roles(table, meta) -> list[Role]:
    spy_pks = set(meta.get("spy_placekeys", ()))
    approach = meta.get("approach", "A")
    roles = []
    for pk, cat in zip(table.placekeys, table.categories):
        if cat == ing.LabelCategory.NEVER_ASW.value:
            roles.append(Role.UNLABELED)
        elif cat == ing.LabelCategory.ILLICIT_ACTIVE.value:
            roles.append(Role.SPY if pk in spy_pks else Role.TRAIN_POSITIVE)
        elif approach == "B":
            roles.append(Role.UNLABELED)
        elif approach == "C":
            roles.append(Role.SPY if pk in spy_pks else Role.TRAIN_POSITIVE)
        else:
            roles.append(Role.QUIET_HELD_OUT)
    return roles


def _cmd_score(args) -> None:
    try:
        model, meta = load_bundle(args.model)
        table = feat.read_feature_table(args.features)
        if tuple(model.feature_names) != tuple(table.feature_names):
            raise ValueError("model feature order does not match the feature file")
        scores = model.predict(table.X)
        roles = _assign_roles(table, meta)
        _write_scores(args.out, table, scores, roles)
        print(f"score: {len(table)} rows -> {args.out}")
    except Exception as exc:
        raise StageError("score", exc)


def _write_scores(path, table, scores, roles) -> None:
    with Path(path).open("w") as fh:
        for i in range(len(table)):
            fh.write(
                json.dumps(
                    {
                        "placekey": table.placekeys[i],
                        "week_start": table.week_starts[i].isoformat(),
                        "category": table.categories[i],
                        "role": roles[i].value,
                        "score": float(scores[i]),
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
            fh.write("\n")


def _read_scores(path) -> list[dict]:
    rows = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _cmd_evaluate(args) -> None:
    try:
        rows = _read_scores(args.scores)
        roles = [Role(r["role"]) for r in rows]
        scores = np.array([r["score"] for r in rows])
        report = None
        has_spies = any(r is Role.SPY for r in roles)
        if args.spy and not has_spies:
            raise ValueError("--spy requested but the scores file has no spy rows")
        if has_spies:
            report = met.spy_report(scores, roles)
        lines = []
        payload: dict = {"config": {"scores": str(args.scores), "seed": _root_seed(args)}}
        if report is not None:
            payload["spy"] = report.to_dict()
            lines.append("Spy-protocol metrics")
            lines.append(f"  AUC                {report.auc:8.3f}")
            lines.append(f"  Average Precision  {report.average_precision:8.3f}")
            for tau, frac in sorted(report.recovery.items()):
                lines.append(f"  Recovery @ {tau:<4}    {100 * frac:7.1f}%")
            lines.append("Mean score by role")
            for name, value in sorted(report.category_means.items()):
                lines.append(f"  {name:<18} {value:8.3f}")
        if args.cv:
            if not args.features:
                raise ValueError("--cv needs --features to retrain per fold")
            table = feat.read_feature_table(args.features)
            cfg = PuConfig(
                k=args.k,
                forest=ForestConfig(n_trees=args.trees, max_depth=args.depth, seed=_root_seed(args)),
                seed=_root_seed(args),
            )
            cv = met.business_cv(table, cfg, folds=args.cv)
            payload["business_cv"] = cv.to_dict()
            lines.append(f"Business-level {args.cv}-fold CV")
            for agg, res in cv.by_aggregation.items():
                cov10 = res.coverage_mean(10.0)
                lines.append(
                    f"  {agg:<5} AUC {res.auc_mean:.3f} +/- {res.auc_sd:.3f}   "
                    f"top-10% coverage {100 * cov10:.1f}%"
                )
        text = "\n".join(lines) + "\n"
        Path(args.report).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        summary_path = Path(args.report).with_suffix(".txt")
        summary_path.write_text(text)
        print(text, end="")
    except Exception as exc:
        raise StageError("evaluate", exc)


def _cmd_rank(args) -> None:
    try:
        rows = _read_scores(args.scores)
        week_scores: dict[str, list[float]] = {}
        for r in rows:
            week_scores.setdefault(r["placekey"], []).append(float(r["score"]))
        risks = rnk.aggregate(week_scores, method=args.aggregation)
        ranked = rnk.rank_establishments(risks)
        rnk.write_ranks_csv(ranked, args.out)
        print(f"rank: {len(ranked)} establishments -> {args.out}")
    except Exception as exc:
        raise StageError("rank", exc)


def _cmd_allocate(args) -> None:
    try:
        ranked = rnk.read_ranks_csv(args.ranks)
        costs = rnk.read_costs_csv(args.costs) if args.costs else None
        plan = rnk.solve_allocation(ranked, costs=costs, budget=args.budget, mode=args.mode)
        payload = {
            "config": {
                "ranks": str(args.ranks),
                "costs": str(args.costs) if args.costs else None,
                "budget": args.budget,
                "mode": args.mode,
                "seed": _root_seed(args),
            },
            "plan": plan.to_dict(),
            "ranked": [
                {"placekey": r.placekey, "delta": r.delta, "weeks_observed": r.weeks_observed}
                for r in ranked
            ],
        }
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        print(
            f"allocate: {len(plan.selected)} selected, cost {plan.total_cost:g} / {plan.budget:g}, "
            f"expected detections {plan.expected_detections:.2f}"
        )
    except Exception as exc:
        raise StageError("allocate", exc)


def _cmd_sweep(args) -> None:
    try:
        table = feat.read_feature_table(args.features)
        seed = _root_seed(args)
        cells = []
        for k in args.k:
            for depth in args.depth:
                for trees in args.trees:
                    cfg = PuConfig(
                        k=k,
                        forest=ForestConfig(n_trees=trees, max_depth=depth, seed=seed),
                        seed=seed,
                    )
                    result = run_spy_protocol(table, cfg, approach="A")
                    report = met.spy_report(result.scores, result.roles)
                    cells.append(
                        {
                            "k": k,
                            "max_depth": depth,
                            "n_trees": trees,
                            "spy_auc": report.auc,
                            "spy_ap": report.average_precision,
                        }
                    )
        cells.sort(key=lambda c: (-c["spy_auc"], -c["spy_ap"], c["k"], c["max_depth"], c["n_trees"]))
        Path(args.out).write_text(json.dumps({"seed": seed, "cells": cells}, sort_keys=True, indent=2) + "\n")
        for c in cells:
            print(
                f"K={c['k']:<4} depth={c['max_depth']:<4} trees={c['n_trees']:<5} "
                f"AUC={c['spy_auc']:.3f} AP={c['spy_ap']:.3f}"
            )
    except Exception as exc:
        raise StageError("sweep", exc)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _cmd_run(args) -> None:
    data_dir = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _root_seed(args)

    artifacts: list[tuple[str, Path]] = []
    aux: list[tuple[str, Path]] = []

    # ingest
    try:
        observations, summary = ing.run_ingest(
            data_dir / "pois.jsonl", data_dir / "ads.csv", start_date=_parse_date(args.start_date)
        )
        labeled_path = out_dir / "labeled.jsonl"
        ing.write_labeled(observations, labeled_path)
        summary_path = out_dir / "ingest_summary.json"
        summary_path.write_text(
            json.dumps({"seed": seed, **summary.to_dict()}, sort_keys=True, indent=2) + "\n"
        )
        artifacts.append(("ingest", labeled_path))
        aux.append(("ingest", summary_path))
    except Exception as exc:
        raise StageError("ingest", exc)

    # features
    try:
        geo = feat.load_geo_table(data_dir / "geo.csv")
        partisan = feat.load_partisan_table(data_dir / "partisan.csv")
        table = feat.build_feature_matrix(
            observations, geo, partisan, train_end=_parse_date(args.train_end)
        )
        features_path = out_dir / "features.csv"
        feat.write_feature_table(table, features_path)
        artifacts.append(("features", features_path))
    except Exception as exc:
        raise StageError("features", exc)

    # train
    try:
        cfg = _train_config(args, seed)
        result = run_spy_protocol(table, cfg, approach=args.approach)
        bundle_path = out_dir / "model.bundle"
        save_bundle(result.model, bundle_path, approach=args.approach, spy_placekeys=result.spy_placekeys)
        artifacts.append(("train", bundle_path))
    except Exception as exc:
        raise StageError("train", exc)

    # score
    try:
        scores_path = out_dir / "scores.jsonl"
        _write_scores(scores_path, table, result.scores, result.roles)
        artifacts.append(("score", scores_path))
    except Exception as exc:
        raise StageError("score", exc)

    # evaluate
    try:
        report = met.spy_report(result.scores, result.roles)
        metrics_path = out_dir / "metrics.json"
        metrics_path.write_text(
            json.dumps(
                {"config": _resolved_config(args, seed), "spy": report.to_dict()},
                sort_keys=True,
                indent=2,
            )
            + "\n"
        )
        artifacts.append(("evaluate", metrics_path))
    except Exception as exc:
        raise StageError("evaluate", exc)

    # rank
    try:
        week_scores: dict[str, list[float]] = {}
        for pk, s in zip(table.placekeys, result.scores):
            week_scores.setdefault(pk, []).append(float(s))
        risks = rnk.aggregate(week_scores, method=args.aggregation)
        ranked = rnk.rank_establishments(risks)
        ranks_path = out_dir / "ranks.csv"
        rnk.write_ranks_csv(ranked, ranks_path)
        artifacts.append(("rank", ranks_path))
    except Exception as exc:
        raise StageError("rank", exc)

    # allocate
    try:
        budget = args.budget if args.budget is not None else max(1.0, round(0.10 * len(ranked)))
        plan = rnk.solve_allocation(risks, budget=budget, mode="exact")
        plan_path = out_dir / "plan.json"
        plan_path.write_text(
            json.dumps(
                {"config": _resolved_config(args, seed), "plan": plan.to_dict()},
                sort_keys=True,
                indent=2,
            )
            + "\n"
        )
        artifacts.append(("allocate", plan_path))
    except Exception as exc:
        raise StageError("allocate", exc)

    manifest = {
        "config": _resolved_config(args, seed),
        "seed": seed,
        "artifacts": [
            {"stage": stage, "path": path.name, "sha256": _sha256(path)}
            for stage, path in artifacts
        ],
        "aux": [
            {"stage": stage, "path": path.name, "sha256": _sha256(path)}
            for stage, path in aux
        ],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"run: {len(artifacts)} stage artifacts in {out_dir}")


def _resolved_config(args, seed: int) -> dict:
    return {
        "seed": seed,
        "start_date": args.start_date,
        "train_end": args.train_end,
        "approach": args.approach,
        "aggregation": args.aggregation,
        "budget": args.budget,
        "k": args.k,
        "trees": args.trees,
        "depth": args.depth,
        "min_leaf": args.min_leaf,
        "spy_fraction": args.spy_fraction,
    }


if __name__ == "__main__":
    sys.exit(main())
