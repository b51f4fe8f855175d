import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from convex_sic import ConvexConfig
from datasets import generate
from errors import PreconditionError, SICError
from fdr import HrtConfig
from feature_map import DEFAULT_FEATURES
from knockoffs import KnockoffConfig
from neural_sic import NeuralConfig
from pipeline import CRITIC_MODES, FIT_MODES, SHORTLIST_BY_KIND, RunConfig, SelectionPipeline, benchmark_truth
from storage import ResultReport, load_dataset, load_record, save_dataset, save_model

load_dotenv()

logger = logging.getLogger("sic")


def _overrides(args: argparse.Namespace, mapping: Dict[str, str]) -> Dict[str, Any]:
    return {field: getattr(args, flag) for flag, field in mapping.items() if getattr(args, flag, None) is not None}


def load_config_file(path: Optional[Path]) -> Dict[str, Dict[str, Any]]:
    """Per-module config sections ({"convex": {...}, "neural": {...}, ...}) from JSON"""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise PreconditionError(f"Config file {path} does not exist")
    payload = json.loads(path.read_text())
    unknown = set(payload) - {"convex", "neural", "hrt", "knockoff"}
    if unknown:
        raise PreconditionError(f"Unknown config sections {sorted(unknown)} in {path}")
    return payload


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Translate the config file and parsed flags into validated config records; flags win"""
    seed = args.seed
    sections = load_config_file(getattr(args, "config", None))
    convex = ConvexConfig(
        **{
            **sections.get("convex", {}),
            **_overrides(args, {"lam": "lam", "rho": "rho", "tau": "tau", "eps": "eps", "max_iter": "max_iter"}),
        }
    )
    neural_fields = {
        **sections.get("neural", {}),
        **_overrides(
            args,
            {
                "lam": "lam",
                "rho": "rho",
                "eps": "eps",
                "batch_size": "batch_size",
                "max_iter": "max_iter",
                "lr": "lr_theta",
                "lr_eta": "lr_eta",
            },
        ),
    }
    neural_fields["seed"] = seed
    critic = getattr(args, "critic", "small")
    neural = NeuralConfig.big_critic(**neural_fields) if critic == "big" else NeuralConfig.small_critic(**neural_fields)
    hrt = HrtConfig(
        **{
            **sections.get("hrt", {}),
            **_overrides(args, {"shortlist": "shortlist", "rounds": "rounds", "target_fdr": "target_fdr"}),
            "seed": seed,
        }
    )
    knockoff_fields = {**sections.get("knockoff", {}), **_overrides(args, {"target_fdr": "target_fdr", "features": "features"})}
    if getattr(args, "knockoff_plus", False):
        knockoff_fields["offset"] = 1
    if getattr(args, "inclusive", False):
        knockoff_fields["inclusive"] = True
    if args.command in ("knockoff", "bench") and getattr(args, "mode", None) in ("neural", "boosted", "convex"):
        knockoff_fields["mode"] = args.mode
    knockoff_fields["seed"] = seed
    knockoff = KnockoffConfig(**knockoff_fields)

    return RunConfig(
        command=args.command,
        seed=seed,
        reps=getattr(args, "reps", 1),
        jobs=getattr(args, "jobs", 1),
        data=str(getattr(args, "data", None)) if getattr(args, "data", None) else None,
        out=str(args.out) if getattr(args, "out", None) else None,
        mode=getattr(args, "mode", None) or "neural",
        top_k=getattr(args, "top_k", None),
        features=getattr(args, "features", None) or DEFAULT_FEATURES,
        convex=convex,
        neural=neural,
        hrt=hrt,
        knockoff=knockoff,
    )


def _args_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Parsed arguments as JSON-ready values"""
    config: Dict[str, Any] = {}
    for key, value in vars(args).items():
        if key == "handler":
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, list):
            value = [str(v) if isinstance(v, Path) else v for v in value]
        config[key] = value
    return config


def cmd_gen(args: argparse.Namespace) -> int:
    dataset = generate(args.kind, args.n, args.seed)
    save_dataset(dataset, args.out)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    record = SelectionPipeline(cfg).fit(load_dataset(args.data))
    save_model(record, args.out)
    top = ", ".join(f"{r.feature}:{r.eta:.4f}" for r in record.ranking[:10])
    logger.info("Top features by eta: %s", top)
    return 0


def cmd_hrt(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    record = SelectionPipeline(cfg).hrt(load_record(args.fit), load_dataset(args.data))
    save_model(record, args.out)
    logger.info("HRT discoveries at target FDR %.2f: %s", record.target_fdr, record.selected)
    return 0


def cmd_knockoff(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    record = SelectionPipeline(cfg).knockoff(load_dataset(args.data))
    save_model(record, args.out)
    logger.info("Knockoff discoveries at target FDR %.2f: %s", cfg.knockoff.target_fdr, record.selected)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    truth = load_dataset(args.truth).truth
    if not truth:
        raise PreconditionError(f"{args.truth} has no ground-truth sidecar")
    records = [load_record(p) for p in args.results]
    report = SelectionPipeline.evaluate(records, truth, {**_args_config(args), "truth_features": list(truth)})
    save_model(report, args.out)
    _log_summary(report)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    if args.method == "rank" and cfg.top_k is None:
        cfg = cfg.model_copy(update={"top_k": len(benchmark_truth(args.kind))})
    if args.method == "hrt" and cfg.hrt.shortlist is None:
        cfg = cfg.model_copy(update={"hrt": cfg.hrt.model_copy(update={"shortlist": SHORTLIST_BY_KIND[args.kind]})})
    report = SelectionPipeline(cfg).bench(args.kind, args.n, args.method)
    save_model(report, args.out)
    _log_summary(report)
    return 0


def _log_summary(report: ResultReport):
    for name in ("tpr", "fdr"):
        s = report.summary.get(name)
        if s is not None:
            logger.info("%s: mean %.3f, median %.3f, IQR [%.3f, %.3f]", name.upper(), s.mean, s.median, s.q1, s.q3)


def _add_fit_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--lambda", dest="lam", type=float, help="gradient-sparsity penalty weight")
    parser.add_argument("--rho", type=float)
    parser.add_argument("--tau", type=float, help="ridge weight (convex mode)")
    parser.add_argument("--eps", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--lr", type=float, help="critic learning rate")
    parser.add_argument("--lr-eta", type=float, help="mirror-descent rate on eta")
    parser.add_argument("--features", type=int, help="random features m (convex mode)")
    parser.add_argument("--critic", choices=("small", "big"), default="small")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sic", description="Sobolev Independence Criterion feature selection")
    parser.add_argument("--log-level", default=os.getenv("SIC_LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="command", required=True)
    default_seed = int(os.getenv("SIC_SEED", "0"))
    default_jobs = int(os.getenv("SIC_JOBS", "1"))

    gen = sub.add_parser("gen", help="generate a synthetic benchmark dataset")
    gen.add_argument("--kind", choices=("sinexp", "liang"), required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=default_seed)
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(handler=cmd_gen)

    fit = sub.add_parser("fit", help="fit SIC and rank features by eta")
    fit.add_argument("--mode", choices=FIT_MODES, default="neural")
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--seed", type=int, default=default_seed)
    fit.add_argument("--top-k", type=int)
    _add_fit_flags(fit)
    fit.add_argument("--config", type=Path, help="JSON file with convex/neural/hrt/knockoff sections")
    fit.set_defaults(handler=cmd_fit)

    hrt = sub.add_parser("hrt", help="holdout randomization test on a fitted critic")
    hrt.add_argument("--data", type=Path, required=True, help="holdout dataset CSV")
    hrt.add_argument("--fit", type=Path, required=True, help="results JSON written by fit")
    hrt.add_argument("--out", type=Path, required=True)
    hrt.add_argument("--seed", type=int, default=default_seed)
    hrt.add_argument("--rounds", type=int)
    hrt.add_argument("--shortlist", type=int)
    hrt.add_argument("--target-fdr", type=float)
    hrt.add_argument("--config", type=Path, help="JSON file with convex/neural/hrt/knockoff sections")
    hrt.set_defaults(handler=cmd_hrt)

    knock = sub.add_parser("knockoff", help="model-X knockoff filter driven by SIC")
    knock.add_argument("--mode", choices=("neural", "boosted", "convex"), default="neural")
    knock.add_argument("--data", type=Path, required=True)
    knock.add_argument("--out", type=Path, required=True)
    knock.add_argument("--seed", type=int, default=default_seed)
    knock.add_argument("--target-fdr", type=float)
    knock.add_argument("--knockoff-plus", action="store_true")
    knock.add_argument("--inclusive", action="store_true", help="select W_j >= tau")
    _add_fit_flags(knock)
    knock.add_argument("--config", type=Path, help="JSON file with convex/neural/hrt/knockoff sections")
    knock.set_defaults(handler=cmd_knockoff)

    ev = sub.add_parser("eval", help="TPR/FDR of saved selections against ground truth")
    ev.add_argument("--results", type=Path, nargs="+", required=True)
    ev.add_argument("--truth", type=Path, required=True, help="dataset CSV with a truth sidecar")
    ev.add_argument("--out", type=Path, required=True)
    ev.set_defaults(handler=cmd_eval)

    bench = sub.add_parser("bench", help="repetition harness with TPR/FDR summaries")
    bench.add_argument("--kind", choices=("sinexp", "liang"), required=True)
    bench.add_argument("--n", type=int, required=True)
    bench.add_argument("--method", choices=("rank", "hrt", "knockoff"), default="rank")
    bench.add_argument("--mode", choices=("convex", "neural", "boosted"), default="neural")
    bench.add_argument("--reps", type=int, default=10)
    bench.add_argument("--jobs", type=int, default=default_jobs)
    bench.add_argument("--seed", type=int, default=default_seed)
    bench.add_argument("--out", type=Path, required=True)
    bench.add_argument("--top-k", type=int)
    bench.add_argument("--rounds", type=int)
    bench.add_argument("--shortlist", type=int)
    bench.add_argument("--target-fdr", type=float)
    bench.add_argument("--knockoff-plus", action="store_true")
    _add_fit_flags(bench)
    bench.add_argument("--config", type=Path, help="JSON file with convex/neural/hrt/knockoff sections")
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bench" and args.method == "hrt" and args.mode not in CRITIC_MODES:
        parser.error(f"--method hrt needs a critic; use --mode {' or '.join(CRITIC_MODES)}")
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except (SICError, ValidationError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
