"""
シナリオ生成・代表性評価の CLI
記録シナリオから SVD + KDE でパラメータベクトルを生成し、SRメトリクスで評価する。

例:
    python main.py synth --category lvd --n 1000 --seed 7 --out data/lvd.jsonl
    python main.py fit --input data/lvd.jsonl --d 4 --out out/model.json
    python main.py generate --model out/model.json --n-w 2000 --out out/generated.csv
    python main.py evaluate --generated out/generated.csv --test z.csv --train x.csv --out out/report.json
    python main.py select-d --input data/lvd.jsonl --out out/select_d.json
"""

import argparse
import logging
import sys
from pathlib import Path

from db.artifact_store import (
    write_dataset,
    write_metric_report,
    write_model,
    write_plan,
    write_report,
    write_scenarios,
)
from parsers.scenario_parser import read_dataset, read_model, read_scenarios
from services.config_service import get_log_level
from services.errors import ScenarioRepError
from services.experiment_service import (
    METHODS,
    build_experiment_config,
    calibrate_beta,
    compare_methods,
    fit_pipeline,
    iterate_d_beta,
    select_d,
)
from services.ot_service import sr_metric
from services.scenario_service import assemble_dataset, compute_weights
from services.synthetic_service import synth_generate, synth_scenarios

_logger = logging.getLogger("scenrep")

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_INTERNAL_ERROR = 2

# --format 省略時の出力形式（synth の json はシナリオ JSONL、csv はベクトル）
DEFAULT_FORMATS = {"synth": "json", "generate": "csv"}


def _output_format(args: argparse.Namespace) -> str:
    return args.format or DEFAULT_FORMATS.get(args.command, "json")


def _config(args: argparse.Namespace, **extra):
    return build_experiment_config(
        n_t=args.n_t,
        p=args.p,
        beta=args.beta,
        repeats=args.repeats,
        test_fraction=args.test_fraction,
        seed=args.seed,
        n_w=args.n_w,
        **extra,
    )


def _load_dataset(file_path: str, config):
    """シナリオ（.jsonl / .ndjson）ならベクトル化し、それ以外はデータセットとして読む。"""
    if Path(file_path).suffix.lower() in (".jsonl", ".ndjson"):
        return assemble_dataset(read_scenarios(file_path), config.n_t, config.interpolation)
    return read_dataset(file_path)


def cmd_synth(args) -> None:
    config = _config(args)
    if _output_format(args) == "json":
        write_scenarios(args.out, synth_scenarios(args.category, args.n, config.seed))
    else:
        dataset = synth_generate(args.category, args.n, config.seed, config.n_t, config.interpolation)
        write_dataset(args.out, dataset, "csv")


def cmd_fit(args) -> None:
    config = _config(args, d=args.d)
    train = _load_dataset(args.input, config)
    model = fit_pipeline(
        train,
        config.d,
        solver=config.svd_solver,
        bandwidth=args.bandwidth,
        floor_zero_variance=config.zero_variance_floor,
    )
    write_model(args.out, model)


def cmd_generate(args) -> None:
    config = _config(args)
    model = read_model(args.model)
    generated = model.generate(config.n_w, config.seed)
    write_dataset(args.out, generated, _output_format(args))


def cmd_evaluate(args) -> None:
    config = _config(args)
    generated = _load_dataset(args.generated, config)
    test = _load_dataset(args.test, config)
    train = _load_dataset(args.train, config)
    weights = compute_weights(train, floor_zero_variance=config.zero_variance_floor)
    report = sr_metric(generated, test, train, weights, config.p, config.beta, keep_plans=args.plan_dir is not None)
    write_metric_report(args.out, report, _output_format(args), {"seed": config.seed})
    if args.plan_dir is not None:
        write_plan(Path(args.plan_dir) / "plan_test.csv", report.plan_test)
        write_plan(Path(args.plan_dir) / "plan_train.csv", report.plan_train)


def cmd_select_d(args) -> None:
    config = _config(args, d_range=args.d_range)
    curve = select_d(_load_dataset(args.input, config), config)
    write_report(args.out, {"config": config.to_dict(), **curve.to_dict()}, _output_format(args))


def cmd_calibrate_beta(args) -> None:
    config = _config(args, d=args.d, d_range=args.d_range, n_large=args.n_large)
    result = calibrate_beta(_load_dataset(args.input, config), config.d, config)
    write_report(args.out, {"config": config.to_dict(), **result.to_dict()}, _output_format(args), "curve")


def cmd_auto(args) -> None:
    config = _config(args, d_range=args.d_range, n_large=args.n_large)
    result = iterate_d_beta(_load_dataset(args.input, config), config.beta, config)
    data = {"config": config.to_dict(), **result.to_dict()}
    if _output_format(args) == "csv":
        write_report(args.out, {"points": data["trace"]}, "csv")
    else:
        write_report(args.out, data, "json")


def cmd_compare(args) -> None:
    config = _config(args, d=args.d)
    result = compare_methods(_load_dataset(args.input, config), config, args.methods or METHODS[:-1])
    write_report(args.out, {"config": config.to_dict(), **result.to_dict()}, _output_format(args))


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"カンマ区切りの整数が必要です: {text}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n-t", type=int, default=None, help="時系列のグリッド点数（既定 50）")
    common.add_argument("--p", type=float, default=None, help="Wasserstein の次数（既定 1）")
    common.add_argument("--beta", type=float, default=None, help="過学習ペナルティの重み（既定 0.25）")
    common.add_argument("--repeats", type=int, default=None, help="分割の引き直し回数")
    common.add_argument("--test-fraction", type=float, default=None, help="テストデータの割合（既定 0.2）")
    common.add_argument("--n-w", type=int, default=None, help="生成件数")
    common.add_argument("--seed", type=int, default=0, help="乱数シード（既定 0）")
    common.add_argument(
        "--format", choices=("csv", "json"), default=None, help="出力形式（既定: generate は csv、その他は json）"
    )
    common.add_argument("--out", required=True, help="出力ファイル")

    parser = argparse.ArgumentParser(prog="scenrep", description="シナリオ生成と代表性評価")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="合成シナリオを生成する")
    p.add_argument("--category", choices=("lvd", "cut_in"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="SVD基底とKDEを当てはめる")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--bandwidth", type=float, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", parents=[common], help="当てはめ済みモデルから生成する")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="SRメトリクスを計算する")
    p.add_argument("--generated", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--plan-dir", default=None, help="輸送計画CSVの出力先（省略時は出力しない）")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-d", parents=[common], help="SRメトリクスで d を選ぶ")
    p.add_argument("--input", required=True)
    p.add_argument("--d-range", type=_int_list, default=None)
    p.set_defaults(func=cmd_select_d)

    p = sub.add_parser("calibrate-beta", parents=[common], help="β を較正する")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--d-range", type=_int_list, default=None)
    p.add_argument("--n-large", type=int, default=None)
    p.set_defaults(func=cmd_calibrate_beta)

    p = sub.add_parser("auto", parents=[common], help="d と β を反復的に決める")
    p.add_argument("--input", required=True)
    p.add_argument("--d-range", type=_int_list, default=None)
    p.add_argument("--n-large", type=int, default=None)
    p.set_defaults(func=cmd_auto)

    p = sub.add_parser("compare", parents=[common], help="生成手法を比較する")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def _diagnostic(code: str, message: str) -> None:
    one_line = " ".join(str(message).split())
    print(f"error={code} message={one_line}", file=sys.stderr)


def main(argv=None) -> int:
    logging.basicConfig(level=get_log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # 使い方の誤りも入力エラーとして扱う
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT_ERROR
    print(f"seed={args.seed}")
    try:
        args.func(args)
    except ScenarioRepError as e:
        _diagnostic(e.code, e)
        return EXIT_INPUT_ERROR
    except FileNotFoundError as e:
        _diagnostic("file_not_found", e)
        return EXIT_INPUT_ERROR
    except ValueError as e:
        _diagnostic("invalid_argument", e)
        return EXIT_INPUT_ERROR
    except Exception as e:
        _logger.exception("内部エラー")
        _diagnostic("internal", f"{type(e).__name__}: {e}")
        return EXIT_INTERNAL_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
