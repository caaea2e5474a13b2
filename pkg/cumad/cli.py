"""
命令行入口

子命令：extract（报文 → 特征）、train（训练并标定）、calibrate（重新标定）、
detect（多设备检测流）、evaluate（评估报告）、simulate（合成数据与 SPRT 模拟）。
参数优先级：命令行参数 > 配置文件 > 环境变量 > 内置默认值。
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from . import __version__
from .autoencoder import TrainConfig, init_model, load_model, save_model, train
from .calibration import calibrate, score_matrix
from .config import AppConfig, ConfigManager, DeviceConfig
from .dataset import (
    build_balanced_test,
    concat,
    generate_synthetic,
    load_device_stream,
    load_feature_csv,
    load_labeled_csv,
    partition_benign,
    write_device_stream,
    write_feature_csv,
)
from .detector import (
    UNKNOWN_FAIL,
    UNKNOWN_SKIP,
    AlertLog,
    DeviceRegistry,
    SprtOverrides,
    register_device,
    resolve_sprt_config,
    run_stream,
)
from .errors import CumadError, UncalibratedModelError
from .evaluation import (
    evaluate_device,
    select_window_size,
    summarize_devices,
    write_cdf_csv,
    write_report,
)
from .features import extract_stream, load_packet_csv
from .models.dataset import Label, SyntheticSpec
from .sprt import SprtConfig, simulate_error_rates

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FORMAT_NO_TIMESTAMPS = "%(name)s - %(levelname)s - %(message)s"

# 由根种子派生各环节种子
SEED_PARTITION = 0
SEED_INIT = 1
SEED_TRAIN = 2
SEED_TEST = 3


def setup_logging(level: str = "INFO", timestamps: bool = True):
    """设置日志配置"""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT if timestamps else LOG_FORMAT_NO_TIMESTAMPS,
        stream=sys.stderr,
        force=True,
    )


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"文件不存在: {value}")
    return path


def _device_pair(value: str) -> Tuple[str, str]:
    device_id, sep, path = value.partition("=")
    if not sep or not device_id or not path:
        raise argparse.ArgumentTypeError(f"格式应为 DEVICE=PATH: {value}")
    return device_id, path


def _window_range(value: str) -> List[int]:
    """START:STOP[:STEP]，包含 STOP"""
    parts = value.split(":")
    try:
        numbers = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"窗口范围格式应为 START:STOP[:STEP]: {value}")
    if len(numbers) not in (2, 3) or numbers[0] < 1 or numbers[1] < numbers[0]:
        raise argparse.ArgumentTypeError(f"窗口范围无效: {value}")
    step = numbers[2] if len(numbers) == 3 else 1
    if step < 1:
        raise argparse.ArgumentTypeError(f"窗口步长至少为 1: {value}")
    return list(range(numbers[0], numbers[1] + 1, step))


def _add_common(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("通用参数")
    group.add_argument("--config", help="JSON 配置文件（也可用 CUMAD_CONFIG 指定）")
    group.add_argument("--seed", type=int, help="根随机种子（默认 20240501，或 CUMAD_SEED）")
    group.add_argument("--log-level", help="日志级别（默认 INFO，或 CUMAD_LOG_LEVEL）")
    group.add_argument("--no-timestamps", action="store_true", help="日志不带时间戳")


def _add_sprt(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("SPRT 参数")
    group.add_argument("--theta0", type=float, help="H₀ 下的异常比例（默认取标定值）")
    group.add_argument("--theta1", type=float, help="H₁ 下的异常比例（默认 0.8）")
    group.add_argument("--alpha", type=float, help="期望误报率（默认 0.01）")
    group.add_argument("--beta", type=float, help="期望漏报率（默认 0.01）")


def _add_train(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("训练参数")
    group.add_argument("--epochs", type=int, help="最大训练轮数（默认 100）")
    group.add_argument("--lr", type=float, help="Adam 学习率（默认 1e-3）")
    group.add_argument("--batch", type=int, help="小批量大小（默认 64）")
    group.add_argument("--patience", type=int, help="早停耐心轮数（默认 5）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cumad",
        description="基于自编码器与序贯概率比检验的 IoT 设备失陷检测",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="报文记录 CSV → 115 维特征 CSV")
    _add_common(p)
    p.add_argument("packets", type=_existing_file, help="报文记录 CSV")
    p.add_argument("output", help="输出特征 CSV")
    p.add_argument("--device-id", default="", help="设备标识")

    p = sub.add_parser("train", help="划分良性数据、训练自编码器并标定")
    _add_common(p)
    _add_train(p)
    p.add_argument("benign", type=_existing_file, help="良性特征 CSV")
    p.add_argument("model_out", help="输出模型文件")
    p.add_argument("--device-id", default="", help="设备标识（默认取文件名）")
    p.add_argument("--theta0", type=float, help="用配置值覆盖标定得到的 θ₀")
    p.add_argument("--chronological", action="store_true", help="按时间顺序而非随机划分")
    p.add_argument("--attack", type=_existing_file, help="攻击特征 CSV，用于构造平衡测试集")
    p.add_argument("--test-out", help="平衡测试集输出路径（带 label 列）")
    p.add_argument("--report", help="训练报告 JSON 输出路径")

    p = sub.add_parser("calibrate", help="在良性数据上重新标定已有模型")
    _add_common(p)
    p.add_argument("model", type=_existing_file, help="模型文件")
    p.add_argument("benign", type=_existing_file, help="良性特征 CSV")
    p.add_argument("--out", help="输出模型文件（默认覆盖原文件）")
    p.add_argument("--device-id", default="", help="设备标识")
    p.add_argument("--theta0", type=float, help="用配置值覆盖标定得到的 θ₀")

    p = sub.add_parser("detect", help="对多设备特征流运行检测")
    _add_common(p)
    _add_sprt(p)
    p.add_argument(
        "--model", action="append", type=_device_pair, default=[], metavar="DEVICE=PATH",
        help="设备模型文件，可重复；也可在配置文件 devices 中给出",
    )
    p.add_argument("--stream", type=_existing_file, required=True, help="device_id + 特征的检测流 CSV")
    p.add_argument("--alerts", required=True, help="告警日志输出（JSON Lines）")
    p.add_argument("--unknown", choices=[UNKNOWN_FAIL, UNKNOWN_SKIP], help="未注册设备的处理策略")
    p.add_argument("--workers", type=int, help="设备并行线程数（默认 1）")

    p = sub.add_parser("evaluate", help="逐点、CUMAD 与窗口多数表决基线评估")
    _add_common(p)
    _add_sprt(p)
    p.add_argument("--model", action="append", type=_existing_file, required=True, help="模型文件，可重复")
    p.add_argument("--test", action="append", type=_existing_file, default=[], help="带 label 列的测试 CSV，与 --model 按顺序配对")
    p.add_argument("--benign", type=_existing_file, help="良性测试 CSV（单设备，与 --attack 一起使用）")
    p.add_argument("--attack", type=_existing_file, help="攻击测试 CSV（单设备，与 --benign 一起使用）")
    p.add_argument("--window", type=int, action="append", default=[], help="基线窗口大小，可重复")
    p.add_argument("--window-sweep", type=_window_range, metavar="START:STOP[:STEP]", help="基线窗口扫描范围")
    p.add_argument("--report", required=True, help="JSON 评估报告输出路径")
    p.add_argument("--cdf", help="观测数累计分布 CSV 输出路径（单设备）")
    p.add_argument("--workers", type=int, help="设备并行线程数（默认 1）")

    p = sub.add_parser("simulate", help="生成合成数据，或运行 SPRT 蒙特卡洛模拟")
    _add_common(p)
    _add_sprt(p)
    p.add_argument("--benign-out", help="合成良性 CSV 输出路径（带 label 列）")
    p.add_argument("--attack-out", help="合成攻击 CSV 输出路径（带 label 列）")
    p.add_argument("--stream-out", help="良性后接攻击的检测流 CSV 输出路径")
    p.add_argument("--n-benign", type=int, default=3000)
    p.add_argument("--n-attack", type=int, default=3000)
    p.add_argument("--dim", type=int, default=115)
    p.add_argument("--correlation", type=float, default=0.8, help="良性特征两两相关系数")
    p.add_argument("--shift", type=float, default=4.0, help="攻击样本均值平移量")
    p.add_argument("--device-id", default="synthetic")
    p.add_argument("--sprt-trials", type=int, help="SPRT 蒙特卡洛试验次数")
    p.add_argument("--true-theta", type=float, help="模拟时的真实异常比例（默认 θ₀）")

    return parser


def _load_config(args: argparse.Namespace) -> AppConfig:
    config = ConfigManager(args.config).config
    if args.seed is not None:
        config.seed = args.seed
    if args.log_level:
        config.log_level = args.log_level
    if getattr(args, "workers", None) is not None:
        config.workers = args.workers
    if getattr(args, "unknown", None):
        config.unknown_device_policy = args.unknown
    config.__post_init__()
    return config


def _sprt_overrides(args: argparse.Namespace) -> SprtOverrides:
    return SprtOverrides(
        theta0=getattr(args, "theta0", None),
        theta1=getattr(args, "theta1", None),
        alpha=getattr(args, "alpha", None),
        beta=getattr(args, "beta", None),
    )


def _train_config(args: argparse.Namespace, config: AppConfig) -> TrainConfig:
    base = config.train
    return TrainConfig(
        learning_rate=base.learning_rate if args.lr is None else args.lr,
        batch_size=base.batch_size if args.batch is None else args.batch,
        max_epochs=base.max_epochs if args.epochs is None else args.epochs,
        patience=base.patience if args.patience is None else args.patience,
        adam_beta1=base.adam_beta1,
        adam_beta2=base.adam_beta2,
        adam_epsilon=base.adam_epsilon,
        seed=config.seed + SEED_TRAIN,
    )


def cmd_extract(args: argparse.Namespace, config: AppConfig) -> int:
    packets = load_packet_csv(args.packets)
    matrix = extract_stream(packets, device_id=args.device_id)
    write_feature_csv(matrix, args.output)
    print(f"{len(matrix)} rows written to {args.output}")
    return 0


def cmd_train(args: argparse.Namespace, config: AppConfig) -> int:
    if args.test_out and not args.attack:
        raise CumadError("--test-out 需要同时给出 --attack")
    train_cfg = _train_config(args, config)
    device_id = args.device_id or Path(args.benign).stem

    benign = load_feature_csv(args.benign, Label.BENIGN, device_id)
    split = partition_benign(benign, config.seed + SEED_PARTITION, chronological=args.chronological)
    model = init_model(seed=config.seed + SEED_INIT)
    model, report = train(model, split.train, split.validation, train_cfg)
    profile = calibrate(model, split.calibration_set, device_id, theta0_override=args.theta0)
    save_model(model, args.model_out, profile)

    if args.attack:
        attack = load_feature_csv(args.attack, Label.ATTACK, device_id)
        test = build_balanced_test(split.holdout_benign, attack, config.seed + SEED_TEST)
        test_out = args.test_out or str(Path(args.model_out).with_suffix(".test.csv"))
        write_feature_csv(test, test_out, with_label=True)

    summary = report.to_dict()
    summary.update({"device_id": device_id, "calibration": profile.model_dump(), "sizes": split.sizes()})
    summary["baseline_window"] = select_window_size(score_matrix(model, split.validation), profile.T_as)
    if args.report:
        write_report(summary, args.report)
    print(
        f"epochs={report.epochs_run} best_epoch={report.best_epoch} stop={report.stop_reason} "
        f"train_mse={report.train_mse[-1]:.6g} validation_mse={report.validation_mse[-1]:.6g} "
        f"T_as={profile.T_as:.6g} theta0={profile.theta0:.6g}"
    )
    return 0


def cmd_calibrate(args: argparse.Namespace, config: AppConfig) -> int:
    model, previous = load_model(args.model)
    device_id = args.device_id or (previous.device_id if previous else "") or Path(args.model).stem
    benign = load_feature_csv(args.benign, Label.BENIGN, device_id)
    profile = calibrate(model, benign, device_id, theta0_override=args.theta0)
    out = args.out or args.model
    save_model(model, out, profile)
    print(f"T_as={profile.T_as:.6g} theta0={profile.theta0:.6g} written to {out}")
    return 0


def cmd_detect(args: argparse.Namespace, config: AppConfig) -> int:
    devices: Dict[str, DeviceConfig] = dict(config.devices)
    for device_id, path in args.model:
        devices[device_id] = DeviceConfig(model_path=path)
    if not devices:
        raise CumadError("没有注册任何设备：请使用 --model DEVICE=PATH 或配置文件 devices")

    cli_overrides = _sprt_overrides(args)
    registry = DeviceRegistry(defaults=config.sprt)
    for device_id, device in devices.items():
        overrides = device.overrides()
        for key, value in cli_overrides.as_dict().items():
            if value is not None:
                setattr(overrides, key, value)
        register_device(registry, device_id, device.model_path, overrides)

    device_ids, values = load_device_stream(args.stream)
    alert_log = AlertLog(args.alerts)
    Path(args.alerts).write_text("", encoding="utf-8")
    summary = run_stream(
        registry,
        zip(device_ids, values),
        alert_log,
        unknown_policy=config.unknown_device_policy,
        workers=config.workers,
    )
    logger.info(f"检测完成: {summary.to_dict()}")
    print(len(summary.alerts))
    return 0


def _evaluation_jobs(args: argparse.Namespace) -> List[Tuple[Path, Optional[Path], Optional[Tuple[Path, Path]]]]:
    if args.benign or args.attack:
        if not (args.benign and args.attack):
            raise CumadError("--benign 与 --attack 必须同时给出")
        if len(args.model) != 1 or args.test:
            raise CumadError("--benign/--attack 只适用于单个 --model 且不能与 --test 混用")
        return [(args.model[0], None, (args.benign, args.attack))]
    if len(args.test) != len(args.model):
        raise CumadError(f"--model 数量 {len(args.model)} 与 --test 数量 {len(args.test)} 不一致")
    return [(model, test, None) for model, test in zip(args.model, args.test)]


def _evaluate_one(
    job: Tuple[Path, Optional[Path], Optional[Tuple[Path, Path]]],
    overrides: SprtOverrides,
    defaults: SprtOverrides,
    window_sizes: Sequence[int],
) -> dict:
    model_path, test_path, pair = job
    model, profile = load_model(model_path)
    if profile is None:
        raise UncalibratedModelError(f"uncalibrated model: {model_path}")
    device_id = profile.device_id or Path(model_path).stem
    if pair is not None:
        test = concat(
            [
                load_feature_csv(pair[0], Label.BENIGN, device_id),
                load_feature_csv(pair[1], Label.ATTACK, device_id),
            ]
        )
    else:
        test = load_labeled_csv(test_path, device_id)
    sprt_cfg = resolve_sprt_config(profile, overrides, defaults)
    return evaluate_device(model, profile, test, sprt_cfg, window_sizes)


def cmd_evaluate(args: argparse.Namespace, config: AppConfig) -> int:
    jobs = _evaluation_jobs(args)
    window_sizes = sorted(set(args.window) | set(args.window_sweep or []))
    if any(w < 1 for w in window_sizes):
        raise CumadError(f"窗口大小至少为 1: {window_sizes}")
    overrides = _sprt_overrides(args)

    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        reports = list(
            executor.map(lambda job: _evaluate_one(job, overrides, config.sprt, window_sizes), jobs)
        )

    if len(reports) == 1:
        output = reports[0]
    else:
        output = {"devices": reports, "summary": summarize_devices(reports)}
    output["seed"] = config.seed
    write_report(output, args.report)
    if args.cdf:
        if len(reports) != 1:
            raise CumadError("--cdf 只适用于单设备评估")
        write_cdf_csv(reports[0]["cumad"]["observation_cdf"], args.cdf)

    for report in reports:
        print(
            f"{report['device_id']}: point_fpr={report['point']['fpr']:.6g} "
            f"cumad_fpr={report['cumad']['fpr']:.6g} cumad_recall={report['cumad']['recall']:.6g} "
            f"improvement={report['fpr_improvement']:.6g}"
        )
    return 0


def cmd_simulate(args: argparse.Namespace, config: AppConfig) -> int:
    outputs = (args.benign_out, args.attack_out, args.stream_out)
    if not any(outputs) and args.sprt_trials is None:
        raise CumadError("至少需要一个输出：--benign-out/--attack-out/--stream-out 或 --sprt-trials")

    if any(outputs):
        spec = SyntheticSpec(
            n_benign=args.n_benign,
            n_attack=args.n_attack,
            dim=args.dim,
            benign_correlation=args.correlation,
            attack_shift=args.shift,
            seed=config.seed,
            device_id=args.device_id,
        )
        benign, attack = generate_synthetic(spec)
        if args.benign_out:
            write_feature_csv(benign, args.benign_out, with_label=True)
        if args.attack_out:
            write_feature_csv(attack, args.attack_out, with_label=True)
        if args.stream_out:
            rows = [(spec.device_id, v) for v in benign.values] + [(spec.device_id, v) for v in attack.values]
            write_device_stream(rows, args.stream_out, dim=spec.dim)

    if args.sprt_trials is not None:
        cfg = SprtConfig().with_overrides(**_sprt_overrides(args).as_dict())
        true_theta = cfg.theta0 if args.true_theta is None else args.true_theta
        result = simulate_error_rates(cfg, true_theta, args.sprt_trials, config.seed)
        print(
            f"theta={true_theta} h1_rate={result.h1_rate:.6g} h0_rate={result.h0_rate:.6g} "
            f"mean_n={result.mean_n:.6g} trials={result.trials}"
        )
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        setup_logging(config.log_level, timestamps=not args.no_timestamps)
        return COMMANDS[args.command](args, config)
    except (CumadError, ValidationError, ValueError, OSError) as e:
        logger.error(f"{args.command} 失败: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        logger.info("被用户中断")
        return 130


if __name__ == "__main__":
    sys.exit(main())
