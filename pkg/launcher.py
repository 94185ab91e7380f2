#!/usr/bin/env python3
"""
Meta-Learning Lab Launcher

Command-line entry point for meta-training runs, robustness sweeps, gradient
verification and plotting. Run without a subcommand for an interactive menu.
"""

import argparse
import logging
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).parent

STACKS = {
    "engine": ("Engine Stack", ROOT / "engine" / "requirements.txt"),
    "harness": ("Harness Stack", ROOT / "harness" / "requirements.txt"),
}

# flags that override RunConfig keys of the same name
OVERRIDES = ("seed", "mode", "order", "inner_lr", "outer_lr", "inner_steps", "meta_batch",
             "iterations", "task", "out", "parallelism", "alphas", "n_queries", "meta_batches")


def setup_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def check_stack_dependencies(stack_type):
    """Check dependencies for a specific stack"""
    if stack_type not in STACKS:
        return False
    stack_name, requirements_file = STACKS[stack_type]

    if not requirements_file.exists():
        print(f"⚠️  Requirements file not found for {stack_name}: {requirements_file}")
        return False

    try:
        with open(requirements_file, 'r') as f:
            requirements = [line.strip() for line in f if line.strip() and not line.startswith('#')]
    except OSError as e:
        print(f"❌ Error reading requirements for {stack_name}: {e}")
        return False

    missing_packages = []
    for requirement in requirements:
        package_name = requirement.split('>=')[0].split('==')[0].split('[')[0].strip()
        try:
            __import__(package_name.replace("-", "_"))
        except ImportError:
            missing_packages.append(package_name)

    if missing_packages:
        print(f"❌ {stack_name} - Missing required packages:")
        for package in missing_packages:
            print(f"   - {package}")
        return False
    print(f"✅ {stack_name} - All dependencies are installed")
    return True


def check_dependencies(stack_type=None):
    """Check one stack, or every stack when stack_type is None"""
    if stack_type is not None:
        return check_stack_dependencies(stack_type)
    results = [check_stack_dependencies(stack) for stack in STACKS]
    return all(results)


def install_dependencies(stack_type):
    """Install dependencies for specified stack"""
    if stack_type not in STACKS:
        print(f"❌ Unknown stack type: {stack_type}")
        return False
    requirements_file = STACKS[stack_type][1]
    if not requirements_file.exists():
        print(f"❌ Requirements file not found: {requirements_file}")
        return False

    print(f"📦 Installing {stack_type} stack dependencies...")
    try:
        subprocess.run([sys.executable, "-m", "pip", "install", "-r", str(requirements_file)], check=True)
        print(f"✅ {stack_type.title()} stack dependencies installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error installing {stack_type} stack dependencies: {e}")
        return False


def _float_list(text):
    return [float(part) for part in text.split(",") if part.strip()]


def _int_list(text):
    return [int(part) for part in text.split(",") if part.strip()]


def add_run_flags(parser):
    parser.add_argument("--config", type=str, help="Run configuration file (.json or flat .toml)")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--mode", choices=["maml", "uniform", "weightgen", "uncertainty"],
                        help="Meta-loss combination mode")
    parser.add_argument("--order", type=int, choices=[1, 2], help="Meta-gradient order")
    parser.add_argument("--inner-lr", dest="inner_lr", type=float, help="Inner step size α")
    parser.add_argument("--outer-lr", dest="outer_lr", type=float, help="Meta step size β")
    parser.add_argument("--inner-steps", dest="inner_steps", type=int, help="Inner gradient steps")
    parser.add_argument("--meta-batch", dest="meta_batch", type=int, help="Tasks per meta-iteration")
    parser.add_argument("--iterations", type=int, help="Meta-iterations")
    parser.add_argument("--task", type=str, help="sinusoid | synthcls | dataset:<path>")
    parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--parallelism", type=int, help="Concurrent sweep cells")


def build_parser():
    parser = argparse.ArgumentParser(description="Meta-Learning Lab Launcher")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--install-deps", choices=list(STACKS),
                        help="Install dependencies for specified stack")
    parser.add_argument("--check-deps", choices=list(STACKS) + ["all"],
                        help="Check dependencies for specified stack")
    sub = parser.add_subparsers(dest="command")

    train = sub.add_parser("train", help="Meta-train one configuration")
    add_run_flags(train)

    sweep_lr = sub.add_parser("sweep-lr", help="Inner step size sweep, MAML vs uncertainty")
    add_run_flags(sweep_lr)
    sweep_lr.add_argument("--alphas", type=_float_list, help="Comma-separated step sizes")

    sweep_query = sub.add_parser("sweep-query", help="Query-set size sweep, MAML vs uncertainty")
    add_run_flags(sweep_query)
    sweep_query.add_argument("--n-queries", dest="n_queries", type=_int_list,
                             help="Comma-separated query counts per class")

    sweep_tasks = sub.add_parser("sweep-tasks", help="Meta-batch size sweep, MAML vs uncertainty")
    add_run_flags(sweep_tasks)
    sweep_tasks.add_argument("--meta-batches", dest="meta_batches", type=_int_list,
                             help="Comma-separated meta-batch sizes")

    gradcheck = sub.add_parser("gradcheck", help="Finite-difference gradient verification")
    gradcheck.add_argument("--seed", type=int, default=0, help="Random seed")
    gradcheck.add_argument("--out", type=str, help="Directory for gradcheck.txt")
    gradcheck.add_argument("--force-first-order", action="store_true",
                           help="Drop the second-order term (the oracle must then fail)")

    plot = sub.add_parser("plot", help="Render a CSV as an SVG plot")
    plot.add_argument("csv", type=str, help="metrics.csv, summary.csv or adaptation.csv")
    plot.add_argument("--kind", choices=["loss_curve", "sweep_bars", "adaptation_curve"],
                      default="loss_curve", help="Plot kind")
    plot.add_argument("--out", type=str, help="Output SVG (default: next to the CSV)")
    return parser


def resolve_config(args):
    from harness.config import load_run_config
    overrides = {key: getattr(args, key, None) for key in OVERRIDES}
    return load_run_config(args.config, overrides)


def run_command(args):
    """Dispatch a subcommand and return its exit code"""
    from harness import commands
    from harness.config import ConfigError

    if args.command == "gradcheck":
        print("🔍 Running gradient checks...")
        return commands.cmd_gradcheck(args.seed, args.out, args.force_first_order)
    if args.command == "plot":
        out = args.out or str(Path(args.csv).with_name(f"{Path(args.csv).stem}_{args.kind}.svg"))
        return commands.cmd_plot(args.csv, args.kind, out)

    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        return commands.EXIT_CONFIG

    print(f"🚀 {args.command}: task={cfg.task} mode={cfg.mode} seed={cfg.seed} -> {cfg.out}")
    handlers = {
        "train": commands.cmd_train,
        "sweep-lr": commands.cmd_sweep_lr,
        "sweep-query": commands.cmd_sweep_query,
        "sweep-tasks": commands.cmd_sweep_tasks,
    }
    return handlers[args.command](cfg)


def interactive_menu(parser):
    print("🧠 Meta-Learning Lab Launcher")
    print("=" * 50)
    print("1. Train on sinusoid regression (config/sinusoid.json)")
    print("2. Train on synthetic 5-way 1-shot classification (config/synthcls.json)")
    print("3. Run gradient checks")
    print("4. Check dependencies")
    print("5. Exit")

    while True:
        choice = input("\nEnter your choice (1-5): ").strip()
        if choice == "1":
            return run_command(parser.parse_args(["train", "--config", str(ROOT / "config" / "sinusoid.json")]))
        elif choice == "2":
            return run_command(parser.parse_args(["train", "--config", str(ROOT / "config" / "synthcls.json")]))
        elif choice == "3":
            return run_command(parser.parse_args(["gradcheck"]))
        elif choice == "4":
            return 0 if check_dependencies() else 1
        elif choice == "5":
            print("👋 Goodbye!")
            return 0
        else:
            print("Invalid choice. Please enter 1-5.")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    if args.install_deps:
        return 0 if install_dependencies(args.install_deps) else 1
    if args.check_deps:
        ok = check_dependencies(None if args.check_deps == "all" else args.check_deps)
        return 0 if ok else 1
    if args.command is None:
        return interactive_menu(parser)
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
