"""
proxyad: command line for the proxy-bridged anomaly detector

    proxyad phantom-gen --out data/phantoms
    proxyad prepare --config run.ini [--emit-pseudo 8]
    proxyad train-proxy | train-recon | train | score | eval | run --config run.ini
    proxyad ablate --config run.ini [--rows 1,3,4,5,6,7,8]
    proxyad sweep memory_size 1,8,128 --config run.ini
    proxyad compare-proxies --config run.ini
    proxyad config --dump-defaults

Exit codes: 0 ok, 2 config error, 3 data error, 4 training divergence.
"""

import argparse
import sys

import torch

from models.config import ExperimentConfig, default_config, load_environment, override
from models.errors import ConfigError, ProxyADError
from models.experiments import (SWEEP_PARAMS, cmd_ablate, cmd_compare_proxies, cmd_eval, cmd_phantom_gen,
                                cmd_prepare, cmd_run, cmd_score, cmd_sweep, cmd_train, cmd_train_proxy,
                                cmd_train_recon)
from models.logs import BANNER, configure_logging, get_logger
from models.superpixel import ProxyMode

log = get_logger("cli")


def _add_common(parser):
    parser.add_argument("--config", help="INI config file (defaults used when omitted)")
    parser.add_argument("--out", help="run directory (overrides [output] dir)")
    parser.add_argument("--seed", type=int, help="training seed (overrides [train] seed)")
    parser.add_argument("--proxy-mode", choices=[m.value for m in ProxyMode], help="proxy type")
    parser.add_argument("--recon-train-input", choices=["predicted", "slic"],
                        help="proxy fed to stage 2 during training")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value; repeatable")
    parser.add_argument("-v", "--verbose", action="store_true", help="per-batch debug logging")


def build_parser():
    parser = argparse.ArgumentParser(prog="proxyad", description="Proxy-bridged image anomaly detection")
    sub = parser.add_subparsers(dest="command", required=True)

    config = sub.add_parser("config", help="print the resolved (or default) config")
    _add_common(config)
    config.add_argument("--dump-defaults", action="store_true", help="print the built-in defaults")

    phantom = sub.add_parser("phantom-gen", help="write a synthetic phantom dataset")
    _add_common(phantom)

    prepare = sub.add_parser("prepare", help="build the proxy cache")
    _add_common(prepare)
    prepare.add_argument("--emit-pseudo", type=int, default=0, metavar="N",
                         help="also write N pseudo-abnormal proxies with their masks")

    for name, text in (("train-proxy", "stage 1: image → proxy"),
                       ("train-recon", "stage 2: proxy → image"),
                       ("train", "both training stages"),
                       ("run", "train, score and eval")):
        _add_common(sub.add_parser(name, help=text))

    score = sub.add_parser("score", help="score the test split")
    _add_common(score)
    score.add_argument("--checkpoint", help="run directory holding the checkpoints")

    evaluate = sub.add_parser("eval", help="metrics report from scores.csv")
    _add_common(evaluate)
    evaluate.add_argument("--scores", help="scores.csv to evaluate")

    ablate = sub.add_parser("ablate", help="component ablation ladder")
    _add_common(ablate)
    ablate.add_argument("--rows", help="comma-separated ladder rows (default 1,3,4,5,6,7,8)")

    sweep = sub.add_parser("sweep", help="AUC against one hyper-parameter")
    _add_common(sweep)
    sweep.add_argument("param", choices=list(SWEEP_PARAMS))
    sweep.add_argument("values", help="comma-separated values, e.g. 1,8,128")

    compare = sub.add_parser("compare-proxies", help="two-module model per proxy type")
    _add_common(compare)
    compare.add_argument("--modes", help="comma-separated proxy modes (default: all)")
    return parser


def _split_list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def resolve_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else default_config()
    if args.out:
        config = config.with_output(args.out)
    if args.seed is not None:
        config = override(config, "train", "seed", args.seed)
    if args.proxy_mode:
        config = override(config, "proxy", "mode", args.proxy_mode)
    if args.recon_train_input:
        config = override(config, "train", "recon_train_input", args.recon_train_input)
    for item in args.set:
        target, sep, value = item.partition("=")
        section, dot, key = target.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        config = override(config, section.strip(), key.strip(), value.strip())
    return config


def dispatch(args, config):
    command = args.command
    if command == "config":
        print((default_config() if args.dump_defaults else config).dump(), end="")
    elif command == "phantom-gen":
        cmd_phantom_gen(config.phantom_spec(), args.out or config.output.dir)
    elif command == "prepare":
        cmd_prepare(config, emit_pseudo=args.emit_pseudo)
    elif command == "train-proxy":
        cmd_train_proxy(config)
    elif command == "train-recon":
        cmd_train_recon(config)
    elif command == "train":
        cmd_train(config)
    elif command == "score":
        cmd_score(config, checkpoint_dir=args.checkpoint)
    elif command == "eval":
        cmd_eval(config, scores_path=args.scores)
    elif command == "run":
        cmd_run(config)
    elif command == "ablate":
        cmd_ablate(config, rows=[int(r) for r in _split_list(args.rows)] if args.rows else None)
    elif command == "sweep":
        cmd_sweep(config, args.param, _split_list(args.values))
    elif command == "compare-proxies":
        cmd_compare_proxies(config, modes=_split_list(args.modes) if args.modes else None)


def main(argv=None):
    args = build_parser().parse_args(argv)
    env = load_environment()
    configure_logging("DEBUG" if args.verbose else env["log_level"])
    if env["threads"] > 0:
        torch.set_num_threads(env["threads"])

    try:
        config = resolve_config(args)
        if args.command != "config":
            log.info(BANNER)
            log.info(f"🚀 proxyad {args.command} | {config.ablation_config().tag()} | out: {config.output.dir}")
            log.info(BANNER)
        dispatch(args, config)
    except ProxyADError as e:
        log.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except ValueError as e:
        # row numbers and other argument parsing
        log.error(f"❌ {e}")
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
