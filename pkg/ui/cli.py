"""
Command-line parser for the network compiler.
Flags overlay the loaded Config for a single run.
"""

import argparse
from pathlib import Path
from typing import List, Optional, Sequence

from core.config import Config
from core.errors import UsageError

COMMANDS = {
    'train': "train a pNet/hNet on an MNIST subset",
    'verify': "check compiled circuits against the engine",
    'cost': "weight-mapping gate counts for k=4..11",
    'casestudy': "2-input classifier, engine vs circuit on the input grid",
    'netcost': "compiled gate counts of a trained model",
}


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def parse_int_list(text: str, name: str) -> List[int]:
    try:
        values = [int(part) for part in text.replace(' ', '').split(',') if part]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of integers, got '{text}'") from None
    if not values:
        raise UsageError(f"{name} is empty")
    return values


def parse_arch(text: str) -> List[int]:
    """'4,2' -> [4, 2]; every layer needs at least one neuron."""
    arch = parse_int_list(text, '--arch')
    if any(size < 1 for size in arch):
        raise UsageError(f"--arch layers need at least one neuron, got {arch}")
    return arch


def parse_classes(text: str) -> List[int]:
    """'3,6' -> [3, 6]; distinct digits 0..9, at least two."""
    classes = parse_int_list(text, '--classes')
    if len(set(classes)) != len(classes) or len(classes) < 2:
        raise UsageError(f"--classes needs at least two distinct digits, got {classes}")
    if any(c < 0 or c > 9 for c in classes):
        raise UsageError(f"--classes digits must lie in 0..9, got {classes}")
    return classes


def build_parser() -> argparse.ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help="RNG seed for training, sampling and cost runs")
    common.add_argument('--out', type=Path, help="output directory for artifacts")
    common.add_argument('--config-dir', type=Path, help="directory holding the user config.json")
    common.add_argument('--verbose', '-v', action='store_true', help="debug logging")
    common.add_argument('--quiet', '-q', action='store_true', help="warnings only, no tables")

    network = ArgumentParser(add_help=False)
    network.add_argument('--data-dir', type=Path, help="directory with the MNIST IDX files")
    network.add_argument('--classes', type=parse_classes, help="digit subset, e.g. 3,6")
    network.add_argument('--resolution', type=int, choices=[4, 8, 16], help="downsampled image side")
    network.add_argument('--arch', type=parse_arch, help="neurons per layer, e.g. 4,2")
    network.add_argument('--net', choices=['pnet', 'hnet'], help="network family")
    network.add_argument('--bn', choices=['on', 'off'], help="quantum-friendly batch normalization")
    network.add_argument('--epochs', type=int, help="training epochs")

    parser = ArgumentParser(prog='qnet', description="Binarized quantum neural network compiler")
    sub = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    sub.add_parser('train', parents=[common, network], help=COMMANDS['train'])

    verify = sub.add_parser('verify', parents=[common], help=COMMANDS['verify'])
    verify.add_argument('model', nargs='?', type=Path, help="model JSON (default <out>/model.json)")
    verify.add_argument('--emit-circuit', type=Path, metavar='DIR',
                        help="write the first neuron circuit of each layer")

    sub.add_parser('cost', parents=[common], help=COMMANDS['cost'])

    casestudy = sub.add_parser('casestudy', parents=[common], help=COMMANDS['casestudy'])
    casestudy.add_argument('--backend-file', type=Path, help="JSON list of backend descriptors")
    casestudy.add_argument('--epochs', type=int, help="training epochs")

    netcost = sub.add_parser('netcost', parents=[common], help=COMMANDS['netcost'])
    netcost.add_argument('model', nargs='?', type=Path, help="model JSON (default <out>/model.json)")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def apply_overrides(config: Config, args: argparse.Namespace) -> Config:
    """Overlay the flags that were given onto config without persisting them."""
    overrides = {
        'seed': ['training.seed', 'cost.seed'],
        'out': ['output.out_dir'],
        'data_dir': ['data.data_dir'],
        'classes': ['network.classes'],
        'resolution': ['network.resolution'],
        'arch': ['network.arch'],
        'net': ['network.kind'],
    }
    for attr, paths in overrides.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if isinstance(value, Path):
            value = str(value)
        for path in paths:
            config.override(path, value)

    if getattr(args, 'bn', None) is not None:
        config.override('network.bn', args.bn == 'on')
    epochs = getattr(args, 'epochs', None)
    if epochs is not None:
        if epochs < 0:
            raise UsageError(f"--epochs must be >= 0, got {epochs}")
        section = 'casestudy' if args.command == 'casestudy' else 'training'
        config.override(f'{section}.epochs', epochs)
    return config
