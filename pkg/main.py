"""
谱动力学工具 - 主运行文件
specdyn simulate|fit|cluster|benchmark --config <path> [--out-dir <path>] [--tau <τ>]
退出码: 0 成功，2 配置/输入错误，3 数值失败，4 I/O 错误
"""
import argparse
import sys
from pathlib import Path

from config import apply_tau, load_config
from engine import SpectralDynamicsEngine, WhiteboxLogger
from errors import ConfigError, DegenerateFeatures, InvalidInput, NumericalBlowup

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def report_simulate(summary):
    print(f"轨迹长度 T = {summary['length']}, 维度 d = {summary['dim']}, "
          f"τ = {summary['sample_interval']:g}")
    occupancy = summary['basin_occupancy']
    if occupancy:
        print("盆地占比:")
        for basin, share in occupancy.items():
            print(f"  盆地 {basin}: {share:.4f}")
    for path in summary['paths']:
        print(f"轨迹文件: {path}")


def report_fit(summary):
    print(f"转移对数 n = {summary['n_pairs']}, J = {summary['left_basis']}, "
          f"J̃ = {summary['right_basis']}")
    print("\n白化奇异值:")
    for k, sigma in enumerate(summary['singular_values'], 1):
        print(f"  σ̂_{k} = {sigma:.6e}")
    print(f"\n谱间隙建议: r = {summary['suggested_rank']} "
          f"(σ_k/σ_k+1 = {summary['gap_ratio']:.3g}，仅供参考)")
    print(f"重塑残差 σ_r+1(P̂) = {summary['residual_sigma']:.6e}")
    print(f"模型目录: {summary['model_dir']}")


def report_cluster(summary):
    print(f"{'m':>4} {'目标函数':>14} {'轮数':>6} {'亚稳态得分':>12} {'误分类率 M':>12}")
    for row in summary['results']:
        rate = '-' if row['misclassification'] is None else f"{row['misclassification']:.4f}"
        flag = '' if row['complete'] else ' (有未访问聚类)'
        print(f"{row['m']:>4} {row['objective']:>14.6g} {row['iterations']:>6} "
              f"{row['metastability']:>12.4f} {rate:>12}{flag}")


def report_benchmark(summary):
    print(f"J = {summary['left_basis']}, J̃ = {summary['right_basis']}, r = {summary['rank']}, "
          f"数据行数 {summary['rows']}")
    print(f"{'n':>8} {'plain 中位数':>14} {'reshaped 中位数':>16}")
    for row in summary['medians']:
        print(f"{row['n']:>8} {row['median_plain']:>14.4e} {row['median_reshaped']:>16.4e}")
    slope = summary['slope']
    print(f"\n重塑误差 log-log 斜率: {'-' if slope is None else f'{slope:.3f}'}")
    status_icon = "✓" if summary['reshaped_wins_every_n'] else "✗"
    print(f"每个 n 上 reshaped ≤ plain: {status_icon}")
    refinement = summary['reference'].get('refinement_error')
    if refinement is not None:
        print(f"求积网格加密误差: {refinement:.3e}")


COMMANDS = {
    'simulate': ('run_simulate', report_simulate, "SDE 轨迹模拟"),
    'fit': ('run_fit', report_fit, "重塑 KME 与状态嵌入"),
    'cluster': ('run_cluster', report_cluster, "亚稳态聚类"),
    'benchmark': ('run_benchmark', report_benchmark, "重塑 vs plain KME 基准"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='specdyn',
                                     description="低秩马尔可夫转移核估计、状态嵌入与亚稳态聚类")
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--config', required=True, help="JSON 配置文件路径")
    parser.add_argument('--out-dir', default='out', help="输出目录（默认 out）")
    parser.add_argument('--tau', type=float, default=None,
                        help="采样间隔 τ，覆盖 simulation.stride（须为 inner_dt 的整数倍）")
    return parser


def _record_failure(engine, out_dir: str, command: str, exc: Exception):
    """
    失败写入白盒日志：引擎已创建时写入本次日志；
    配置阶段失败时只向已有输出目录的日志追加，不清空也不新建目录
    """
    if engine is not None:
        engine.logger.log_failure("cli", "CLI", command.upper(), exc)
        return
    log_file = Path(out_dir) / "whitebox.log"
    if log_file.parent.is_dir():
        WhiteboxLogger(str(log_file), reset=False).log_failure("cli", "CLI", command.upper(), exc)


def _load(args):
    config = load_config(args.config)
    if args.tau is not None:
        apply_tau(config, args.tau)
    return config


def main(argv=None) -> int:
    """主函数：先加载并校验配置，再创建引擎运行对应命令"""
    args = build_parser().parse_args(argv)
    method, report, title = COMMANDS[args.command]
    _banner(f"specdyn {args.command} - {title}")

    engine = None
    try:
        config = _load(args)
        engine = SpectralDynamicsEngine(out_dir=args.out_dir)
        summary = getattr(engine, method)(config)
    except (ConfigError, InvalidInput) as exc:
        _record_failure(engine, args.out_dir, args.command, exc)
        print(f"配置/输入错误: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        _record_failure(engine, args.out_dir, args.command, exc)
        print(f"数值失败（第 {exc.step_index} 步）: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DegenerateFeatures as exc:
        _record_failure(engine, args.out_dir, args.command, exc)
        print(f"数值失败: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        _record_failure(engine, args.out_dir, args.command, exc)
        print(f"I/O 错误: {exc}", file=sys.stderr)
        return EXIT_IO

    report(summary)
    print(f"\n白盒日志已保存到: {engine.logger.log_file}")
    print("=" * 60)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
