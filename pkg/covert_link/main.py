import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from colorama import Fore, Style, init
from tabulate import tabulate

from . import config
from .analysis import CSV_COLUMNS, ks_distance, write_metrics_csv
from .capture import read_capture, write_capture
from .errors import ConfigError, CovertLinkError
from .scenario import (PRESETS, STATUS_AUTH_FAILED, STATUS_SUCCESS, STATUS_TRANSFER_FAILED,
                       load_scenario, parse_range, preset, run_scenario, run_steganalysis, sweep,
                       write_artifacts)

logger = logging.getLogger(__name__)

# Initialize colorama
init(autoreset=True)

EXIT_SUCCESS = 0
EXIT_TRANSFER_FAILED = 2
EXIT_AUTH_FAILED = 3
EXIT_CONFIG_ERROR = 4

STATUS_EXIT_CODES = {
    STATUS_SUCCESS: EXIT_SUCCESS,
    STATUS_TRANSFER_FAILED: EXIT_TRANSFER_FAILED,
    STATUS_AUTH_FAILED: EXIT_AUTH_FAILED,
}


def print_success(text: str):
    print(f"{Fore.GREEN}{text}{Style.RESET_ALL}")


def print_error(text: str):
    print(f"{Fore.RED}{text}{Style.RESET_ALL}")


def print_info(text: str):
    print(f"{Fore.CYAN}{text}{Style.RESET_ALL}")


def _load(args):
    if args.preset:
        scenario = preset(args.preset)
    elif args.config:
        scenario = load_scenario(args.config)
    else:
        raise ConfigError("either --config or --preset is required")
    return scenario


def cmd_run(args) -> int:
    scenario = _load(args)
    if args.snr is not None:
        scenario = scenario.with_snr(parse_range(args.snr)[0])
    out_dir = Path(args.out or scenario.outputs)
    results = run_scenario(scenario, args.seed)

    rows, exit_code = [], EXIT_SUCCESS
    for result in results:
        target = out_dir if len(results) == 1 else out_dir / f"mod{result.metadata['modulation']}"
        write_artifacts(result, target)
        rows.append(result.csv_row)
        if result.status == STATUS_SUCCESS:
            print_success(f"[{result.metadata['modulation']}-ASK] transfer complete: "
                          f"{len(result.delivered)} bytes delivered byte-identical in "
                          f"{result.metadata['subframes']} subframes")
        else:
            print_error(f"[{result.metadata['modulation']}-ASK] {result.status}: {result.diagnostic}")
            exit_code = max(exit_code, STATUS_EXIT_CODES[result.status])
    write_metrics_csv(out_dir / 'metrics.csv', rows)
    print(tabulate([[row[c] for c in CSV_COLUMNS] for row in rows], headers=CSV_COLUMNS, tablefmt="grid"))
    print_info(f"Artifacts written to {out_dir}")
    return exit_code


def cmd_sweep(args) -> int:
    scenario = _load(args)
    snrs = parse_range(args.snr)
    try:
        modulations = [int(m) for m in args.mods.split(',')]
    except ValueError:
        raise ConfigError(f"invalid --mods '{args.mods}'")
    rows = sweep(scenario, snrs, modulations, args.trials, args.seed, args.jobs)
    out_dir = Path(args.out or scenario.outputs)
    path = write_metrics_csv(out_dir / 'sweep.csv', rows)
    print(tabulate([[row[c] for c in CSV_COLUMNS] for row in rows], headers=CSV_COLUMNS, tablefmt="grid"))
    print_info(f"{len(rows)} rows written to {path}")
    return EXIT_SUCCESS


def cmd_analyze(args) -> int:
    capture, _ = read_capture(args.capture)
    reference, _ = read_capture(args.reference)
    print(f"{ks_distance(np.abs(capture), np.abs(reference)):.6g}")
    return EXIT_SUCCESS


def cmd_presets(args) -> int:
    rows = []
    for name, entry in PRESETS.items():
        policy = preset(name).policy
        embedding = f"randomized ({policy.flag_table})" if policy.undetectable else 'fixed'
        rows.append([name, embedding, entry.get('description', '')])
    print(tabulate(rows, headers=['preset', 'embedding', 'description'], tablefmt="grid"))
    if any(row[1] == f"randomized ({config.DEFAULT_FLAG_TABLE})" for row in rows):
        print_info(f"The '{config.DEFAULT_FLAG_TABLE}' flag table keeps every flag decodable but does not reach "
                   f"the {config.KS_REDUCTION_TARGET:g}x KS reduction; run steganalysis with --flag-table stealth "
                   f"for that target")
    return EXIT_SUCCESS


def cmd_steganalysis(args) -> int:
    out_dir = Path(args.out) if args.out else None
    table = []
    results = {}
    for label, undetectable in (('fixed', False), ('undetectable', True)):
        result = run_steganalysis(args.snr, args.mod, undetectable, args.flag_table, args.symbols,
                                  args.seed, args.header_distance)
        results[label] = result
        table.append([label, f"{result.ks:.4f}", f"{result.clean_per:.4f}", f"{result.stego_per:.4f}",
                      f"{100 * result.primary_throughput_loss:.2f}"])
        if out_dir is not None:
            metadata = {'seed': args.seed, 'scenario': 'steganalysis', 'snr_db': args.snr,
                        'modulation': args.mod, 'undetectable': undetectable}
            write_capture(out_dir / f"capture_{label}.iq", result.stego, metadata)
            if label == 'fixed':
                write_capture(out_dir / 'capture_clean.iq', result.clean, {**metadata, 'undetectable': False})
    print(tabulate(table, headers=['embedding', 'ks_vs_clean', 'clean_per', 'stego_per', 'primary_loss_pct'],
                   tablefmt="grid"))
    fixed, hidden = results['fixed'].ks, results['undetectable'].ks
    ratio = fixed / hidden if hidden > 0 else float('inf')
    print_info(f"KS reduction factor: {ratio:.2f}x")
    if ratio >= config.KS_REDUCTION_TARGET:
        print_success(f"Meets the {config.KS_REDUCTION_TARGET:g}x KS reduction target")
    else:
        print_error(f"Below the {config.KS_REDUCTION_TARGET:g}x KS reduction target "
                    f"with the '{args.flag_table}' flag table")
    return EXIT_SUCCESS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Covert link simulator: amplitude steganography over QPSK')
    parser.add_argument('--verbose', action='store_true', help='Enable verbose logging')
    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    def add_source(sub):
        sub.add_argument('--config', type=str, help='Path to a JSON scenario file')
        sub.add_argument('--preset', type=str, help='Name of a built-in scenario')
        sub.add_argument('--seed', type=int, default=config.DEFAULT_SEED, help='Run seed')
        sub.add_argument('--out', type=str, help='Output directory')

    run_parser = subparsers.add_parser('run', help='Run one end-to-end covert transfer')
    add_source(run_parser)
    run_parser.add_argument('--snr', type=str, help='Override the channel SNR in dB')

    sweep_parser = subparsers.add_parser('sweep', help='Sweep SNR and covert modulation')
    add_source(sweep_parser)
    sweep_parser.add_argument('--snr', type=str, required=True, help='start:stop:step in dB')
    sweep_parser.add_argument('--mods', type=str, default='2,4', help='Comma-separated ASK orders')
    sweep_parser.add_argument('--trials', type=int, default=1, help='Seeds per point')
    sweep_parser.add_argument('--jobs', type=int, default=1, help='Parallel worker processes')

    analyze_parser = subparsers.add_parser('analyze', help='KS distance between two IQ captures')
    analyze_parser.add_argument('--capture', type=str, required=True, help='Capture to test')
    analyze_parser.add_argument('--reference', type=str, required=True, help='Reference capture')

    subparsers.add_parser('presets', help='List built-in scenarios')

    stego_parser = subparsers.add_parser('steganalysis', help='Compare fixed and randomized embedding')
    stego_parser.add_argument('--snr', type=float, default=20.0, help='Channel SNR in dB')
    stego_parser.add_argument('--mod', type=int, default=4, choices=[2, 4], help='Covert ASK order')
    stego_parser.add_argument('--symbols', type=int, default=config.CAPTURE_SYMBOLS, help='Symbols to capture')
    stego_parser.add_argument('--flag-table', type=str, default='stealth', help='Distance table name')
    stego_parser.add_argument('--header-distance', type=float, default=config.HEADER_DISTANCE,
                              help='Header level spacing')
    stego_parser.add_argument('--seed', type=int, default=config.DEFAULT_SEED, help='Run seed')
    stego_parser.add_argument('--out', type=str, help='Directory for IQ captures')
    return parser


COMMANDS = {
    'run': cmd_run,
    'sweep': cmd_sweep,
    'analyze': cmd_analyze,
    'presets': cmd_presets,
    'steganalysis': cmd_steganalysis,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=config.LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    parser = build_parser()
    args = parser.parse_args(argv)

    # Set logging level based on verbosity
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    if args.command not in COMMANDS:
        parser.print_help()
        return EXIT_CONFIG_ERROR
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print_error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except CovertLinkError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print_error(f"Error: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == '__main__':
    sys.exit(main())
