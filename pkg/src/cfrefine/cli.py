"""Command-line entry point: ``cfrefine <verb> --config FILE [--seed N] ...``.

Exit codes: 0 success, 1 configuration or input error, 2 too many aborted
instances, 3 service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from cfrefine.errors import AlignmentError, ConfigError, InputError, RenderError, ServiceError
from cfrefine.harness import cda, judge, reports, runner
from cfrefine.harness.config import RunConfig
from cfrefine.harness.dataset import load_dataset, sample_instances
from cfrefine.harness.faithfulness import faithfulness_rows
from cfrefine.harness.io import write_jsonl, write_once

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_SERVICE = 0, 1, 2, 3

log = logging.getLogger("cfrefine")


def _config(args: argparse.Namespace, required: bool = True) -> RunConfig | None:
    if args.config is None:
        if required:
            raise ConfigError(f"'{args.verb}' needs --config")
        return None
    return RunConfig.load(args.config, args.seed)


def _dataset(cfg: RunConfig, sample: int | None):
    instances = load_dataset(cfg.dataset_path(), cfg.schema())
    n = sample if sample is not None else cfg.sample
    return sample_instances(instances, n, cfg.seed)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.sample)
    result = runner.run_batch(
        dataset,
        cfg.loop(),
        cfg.services(),
        cfg.parallelism,
        output_root=args.output_root or cfg.output_root,
        run_name=args.name,
        config_snapshot=cfg.snapshot(),
        abort_threshold=cfg.abort_threshold,
        concat_pair=cfg.ss_concat_pair,
    )
    print(result.run_dir)
    m = result.metrics
    print(f"n={m['n']} aborted={m['n_aborted']} lfr={m['lfr']} ss={m['ss']} ppl={m['ppl']}", file=sys.stderr)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.sample)
    abl = cfg.section("ablation")
    root, rows = runner.ablation_suite(
        dataset,
        cfg.loop(),
        cfg.services(),
        output_root=args.output_root or cfg.output_root,
        feedback=args.feedback or abl.get("feedback", runner.ABLATION_FEEDBACK),
        methods=args.methods or abl.get("methods", ("kernel_shap",)),
        early_stop=tuple(abl.get("early_stop", (True, False))),
        parallelism=cfg.parallelism,
        config_snapshot=cfg.snapshot(),
        abort_threshold=cfg.abort_threshold,
        concat_pair=cfg.ss_concat_pair,
    )
    header, table = reports.ablation_table(rows)
    write_once(root / "ablation.csv", reports.render_csv(header, table))
    write_once(root / "ablation.json", json.dumps(rows, indent=2) + "\n")
    text = reports.render_text(header, table)
    write_once(root / "ablation.txt", text)
    print(root)
    print(text, end="", file=sys.stderr)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = reports.report(args.run_dir, args.out)
    print(path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    cfg = _config(args)
    humans = judge.load_human_ratings(args.human) if args.human else None
    rep = judge.judge_run(
        args.run_dirs,
        cfg.judges(),
        humans,
        sample=args.sample,
        seed=cfg.seed,
        params=cfg.judge_params(),
        templates=cfg.loop().templates,
    )
    out = Path(args.out) if args.out else Path(args.run_dirs[0]) / "judge"
    tables = {"judge_means": judge.means_table(rep), "judge_agreement": judge.agreement_table(rep)}
    reports.write_tables(tables, out, f"judge ratings (parse errors excluded: {rep.parse_errors})")
    write_jsonl(out / "ratings.jsonl", rep.ratings)
    write_once(out / "judge.json", json.dumps(rep.to_dict(), indent=2) + "\n")
    print((out / "report.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_cda(args: argparse.Namespace) -> int:
    print(cda.emit_cda(args.run_dir, args.policy, args.out))
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    print(f"{cda.score_predictions(args.pred, args.gold, args.label_key):.2f}")
    return EXIT_OK


def cmd_faithfulness(args: argparse.Namespace) -> int:
    cfg = _config(args)
    dataset = _dataset(cfg, args.sample)
    loop = cfg.loop()
    rows = faithfulness_rows(
        dataset, cfg.services(), args.methods, seed=cfg.seed, surrogate=loop.surrogate, workers=loop.attribution_workers
    )
    header = ["method", "n", "comprehensiveness", "sufficiency", "tau_loo"]
    table = [[r[h] for h in header] for r in rows]
    if args.out:
        reports.write_tables({"faithfulness": (header, table)}, Path(args.out), "attribution faithfulness")
    print(reports.render_text(header, table), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfrefine", description="Iterative counterfactual refinement and evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name: str, fn, help_text: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="run configuration (YAML or JSON)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.set_defaults(fn=fn)
        return sp

    sp = verb("run", cmd_run, "run the refinement loop over a dataset")
    sp.add_argument("--sample", type=int, help="seeded sample of N instances")
    sp.add_argument("--output-root")
    sp.add_argument("--name", help="run directory name")

    sp = verb("ablate", cmd_ablate, "run the feedback ablation grid")
    sp.add_argument("--sample", type=int)
    sp.add_argument("--output-root")
    sp.add_argument("--feedback", nargs="+", choices=runner.ABLATION_FEEDBACK)
    sp.add_argument("--methods", nargs="+", choices=("loo", "lime", "kernel_shap", "external"))

    sp = verb("report", cmd_report, "tabulate a finished run")
    sp.add_argument("run_dir")
    sp.add_argument("--out", help="output directory (default: RUN_DIR/report)")

    sp = verb("judge", cmd_judge, "score runs with judge models")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--human", help="human ratings JSONL")
    sp.add_argument("--sample", type=int)
    sp.add_argument("--out")

    sp = verb("cda", cmd_cda, "emit an augmentation dataset from a run")
    sp.add_argument("run_dir")
    sp.add_argument("--policy", choices=cda.CDA_POLICIES, default="valid_only")
    sp.add_argument("--out")

    sp = verb("score", cmd_score, "accuracy of a prediction file against gold labels")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gold", required=True)
    sp.add_argument("--label-key", default="label")

    sp = verb("faithfulness", cmd_faithfulness, "compare attribution methods")
    sp.add_argument("--sample", type=int)
    sp.add_argument("--methods", nargs="+", default=["loo", "lime", "kernel_shap"])
    sp.add_argument("--out")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except runner.PartialFailure as e:
        print(f"error: {e} (artifacts in {e.run_dir})", file=sys.stderr)
        return EXIT_SERVICE if e.all_service_failures else EXIT_PARTIAL
    except ServiceError as e:
        print(f"service error: {e}", file=sys.stderr)
        return EXIT_SERVICE
    except (ConfigError, InputError, AlignmentError, RenderError, FileNotFoundError, FileExistsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
