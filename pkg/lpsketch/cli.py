"""
Command-line interface for lpsketch
"""

import sys
import os
import json
import glob
import click
from typing import Any, Dict, Optional

from .config import GENERATORS, ExperimentConfig
from .errors import LpSketchError
from .monitoring import format_status
from .utils import get_experiment_status, is_experiment_running, parse_json_params, resolve_workers

EXIT_ERROR = 1
EXIT_GATES_FAILED = 2

# option name -> ExperimentConfig field
_CONFIG_FIELDS = {
    'seed': 'seed', 'trials': 'trials', 'out': 'output', 'p': 'p', 'c': 'c', 'r': 'r',
    'delta0': 'delta0', 'eps': 'eps', 'L': 'L', 'K': 'K', 'k': 'k', 'U': 'U', 'T': 'T',
    'R': 'R', 'depth': 'depth', 'n': 'n', 'd': 'd', 'delta': 'delta',
    'hard_p': 'hard_p', 'hard_c': 'hard_c', 'cert_r': 'cert_r',
    'multiplier': 'multiplier', 'pairs': 'pairs', 'dataset': 'dataset', 'generator': 'generator',
}


def override_options(f):
    """--L/--K/--k/--U/--T engineering overrides"""
    for name, text in (
        ('T', 'Boosting repetitions (default: ⌈512·ln(1/δ0)⌉)'),
        ('U', 'Hash universe size (default: ⌈16k/δ2⌉)'),
        ('k', 'Stored coordinates per threshold (default: 32)'),
        ('K', 'Useful-coordinate cap (default: 64)'),
        ('L', 'Number of thresholds (default: 8)'),
    ):
        f = click.option(f'--{name}', name, type=int, default=None, help=text)(f)
    return f


def experiment_options(f):
    """Options shared by every experiment command"""
    options = [
        click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                     default=None, help='JSON experiment config; flags take precedence'),
        click.option('--seed', default=None, help='64 hex characters (default: fresh random seed)'),
        click.option('--trials', type=int, default=None, help='Number of Monte-Carlo trials'),
        click.option('--out', default=None, help='Write the JSON report here'),
        click.option('--p', 'p', type=float, default=None, help='Norm exponent p'),
        click.option('--c', 'c', type=float, default=None, help='Approximation c'),
        click.option('--r', 'r', type=float, default=None, help='Scale r'),
        click.option('--delta0', type=float, default=None, help='Boosting failure probability'),
        click.option('--eps', type=float, default=None, help='Near-neighbor ε'),
        click.option('--R', 'R', type=int, default=None, help='Near-neighbor trees'),
        click.option('--depth', type=int, default=None, help='Near-neighbor tree depth'),
        click.option('--n', 'n', type=int, default=None, help='Generated dataset size'),
        click.option('--d', 'd', type=int, default=None, help='Generated dataset dimension'),
        click.option('--delta', type=int, default=None, help='Coordinate range Δ'),
        click.option('--hard-p', type=int, default=None, help='Hard distribution p'),
        click.option('--hard-c', type=int, default=None, help='Hard distribution c'),
        click.option('--cert-r', type=float, default=None, help='Certification distance r'),
        click.option('--multiplier', type=float, default=None, help="Certification r'/r"),
        click.option('--pairs', type=int, default=None, help='Fixed estimator pairs'),
        click.option('--dataset', type=click.Path(exists=True, dir_okay=False), default=None,
                     help='Dataset file instead of a generator'),
        click.option('--generator', type=click.Choice(list(GENERATORS)), default=None,
                     help='Built-in dataset generator'),
        click.option('--generator-params', default=None,
                     help='Generator parameters as a JSON object'),
        click.option('--workers', default=None,
                     help='Parallel trial processes or "auto" (default: $LPSKETCH_WORKERS or 1)'),
        click.option('--log-dir', default=None, help='Directory for log files (default: current directory)'),
        click.option('--stats-dir', default=None, help='Directory for progress files (default: log-dir)'),
        click.option('--experiment-id', default=None, help='Name of log and progress files'),
        click.option('--verbose', '-v', is_flag=True, help='Enable verbose logging'),
    ]
    f = override_options(f)
    for option in reversed(options):
        f = option(f)
    return f


def _build_config(kind: Optional[str], options: Dict[str, Any]) -> ExperimentConfig:
    config_path = options.pop('config_path', None)
    if config_path:
        config = ExperimentConfig.from_json_file(config_path)
    else:
        config = ExperimentConfig(experiment=kind or 'nonexpansion')
    updates = {field: options.get(opt) for opt, field in _CONFIG_FIELDS.items()}
    if kind is not None:
        updates['experiment'] = kind
    workers = options.get('workers')
    if workers is not None:
        updates['workers'] = resolve_workers(workers)
    generator_params = options.get('generator_params')
    if generator_params is not None:
        updates['generator_params'] = parse_json_params(generator_params)
    return config.with_updates(**updates)


def _execute(kind: Optional[str], options: Dict[str, Any]):
    """Build the config, run the experiment, print gates and exit with its status"""
    from .experiments import run_experiment

    verbose = options.get('verbose', False)
    try:
        config = _build_config(kind, dict(options)).resolved()
        if verbose:
            click.echo(f"Experiment: {config.experiment}")
            click.echo(f"Config: {json.dumps(config.as_dict(), indent=2, default=str)}")
        report = run_experiment(config,
                                experiment_id=options.get('experiment_id'),
                                log_dir=options.get('log_dir'),
                                stats_dir=options.get('stats_dir'),
                                verbose=verbose)
    except LpSketchError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    except KeyboardInterrupt:
        click.echo("\nInterrupted by user")
        sys.exit(EXIT_ERROR)
    except Exception as e:
        click.echo(f"Unexpected error: {e}", err=True)
        if verbose:
            import traceback
            traceback.print_exc()
        sys.exit(EXIT_ERROR)

    click.echo(f"Seed: {report.seed}")
    for gate in report.gates:
        verdict = 'pass' if gate.passed else 'FAIL'
        click.echo(f"  {gate.name}: {gate.value:.6g} {gate.comparison} {gate.threshold:.6g} [{verdict}]")
    if report.trials_failed:
        click.echo(f"  {report.trials_failed} trial(s) failed")
    if config.output:
        click.echo(f"Report: {config.output}")
    click.echo("PASSED" if report.passed else "FAILED")
    sys.exit(0 if report.passed else EXIT_GATES_FAILED)


@click.group()
def cli():
    """lpsketch: average-distortion sketches for lp and their experiments"""
    pass


@cli.group()
def sketch():
    """Single-scale and boosted sketch experiments"""
    pass


@sketch.command()
@experiment_options
def nonexpansion(**options):
    """FAR rate on pairs within distance r"""
    _execute('nonexpansion', options)


@sketch.command()
@experiment_options
def contraction(**options):
    """FAR rate of a fixed point against the hard distribution"""
    _execute('contraction', options)


@sketch.command()
@experiment_options
def boosting(**options):
    """Single-scale against boosted error rates"""
    _execute('boosting', options)


@sketch.command()
@experiment_options
def oracle(**options):
    """Hashed decoder against the full-information decoder"""
    _execute('oracle', options)


@cli.command()
@experiment_options
def estimate(**options):
    """Multi-scale estimator: non-expansion and average contraction"""
    _execute('estimator', options)


@cli.command(name='run')
@experiment_options
def run_config(**options):
    """
    Run the experiment named in a config file

    \b
    lpsketch run --config configs/oracle.json --trials 500
    """
    if not options.get('config_path'):
        click.echo("Error: --config is required", err=True)
        sys.exit(EXIT_ERROR)
    _execute(None, options)


@cli.group()
def ann():
    """(c, r)-approximate near neighbor index"""
    pass


@ann.command(name='build')
@click.option('--data', 'data_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Dataset file')
@click.option('--r', 'r', type=float, required=True, help='Near radius r')
@click.option('--c', 'c', type=float, required=True, help='Approximation c')
@click.option('--eps', type=float, default=0.5, help='ε: trees = ⌈a·n^ε⌉ (default: 0.5)')
@click.option('--p', 'p', type=float, default=2.0, help='Norm exponent (default: 2)')
@click.option('--seed', default=None, help='64 hex characters (default: fresh random seed)')
@click.option('--out', required=True, help='Index directory')
@click.option('--depth', type=int, default=None, help='Tree depth (default: ⌈log_{4/3} n⌉)')
@click.option('--trees', type=int, default=None, help='Number of trees (default: ⌈3·n^ε⌉)')
@click.option('--eager', is_flag=True, help='Build every realized child up front')
@override_options
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose logging')
def ann_build(data_path, r, c, eps, p, seed, out, depth, trees, eager, L, K, k, U, T, verbose):
    """Build and save an index"""
    from .metric import load_dataset
    from .near_neighbor import build_index, save_index
    from .randomness import SharedSeed
    from .single_scale import SketchOverrides

    try:
        shared = SharedSeed.from_hex(seed) if seed else SharedSeed.generate()
        data = load_dataset(data_path)
        index = build_index(data, r, c, eps, shared, p=p,
                            overrides=SketchOverrides(L=L, K=K, k=k, U=U), T=T,
                            depth=depth, repetitions=trees, eager=eager)
        save_index(index, out)
    except LpSketchError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(f"Index: {len(index.roots)} trees, depth {index.config.depth}, "
               f"{len(data)} points -> {out}")
    if verbose:
        click.echo(f"Seed: {shared.hex()}")
        click.echo(f"Nodes: {sum(root.node_count() for root in index.roots)}")


@ann.command(name='query')
@click.option('--index', 'index_dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Index directory written by ann build')
@click.option('--query', 'query_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Query vectors, one per line')
@click.option('--format', 'output_format', type=click.Choice(['text', 'json']),
              default='text', help='Output format (default: text)')
def ann_query(index_dir, query_path, output_format):
    """Answer queries: a point within cr, or FAIL"""
    from .metric import load_dataset, lp_distance
    from .near_neighbor import load_index, query_index

    try:
        index = load_index(index_dir)
        queries = load_dataset(query_path)
        results = []
        for qi, q in enumerate(queries):
            answer = query_index(index, q)
            dist = lp_distance(q, index.dataset[answer], index.config.p) if answer is not None else None
            results.append({'query': qi, 'answer': answer, 'distance': dist})
    except LpSketchError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    if output_format == 'json':
        click.echo(json.dumps(results, indent=2))
        return
    for res in results:
        if res['answer'] is None:
            click.echo(f"{res['query']}: FAIL")
        else:
            click.echo(f"{res['query']}: {res['answer']} (distance {res['distance']:.4f})")


@ann.command(name='bench')
@experiment_options
def ann_bench(**options):
    """Planted-instance recall, soundness and shrink"""
    _execute('ann', options)


@cli.group()
def cert():
    """Hard distribution and certificates of farness"""
    pass


@cert.command(name='sample')
@click.option('--p', 'p', type=int, required=True, help='Hard distribution p')
@click.option('--c', 'c', type=int, required=True, help='Hard distribution c')
@click.option('--seed', default=None, help='64 hex characters (default: fresh random seed)')
@click.option('--count', type=int, default=1, help='Number of samples (default: 1)')
@click.option('--out', required=True, help='Output dataset file')
def cert_sample(p, c, seed, count, out):
    """Write samples of the hard distribution as a dataset"""
    from .generators import hard_dataset
    from .metric import save_dataset
    from .randomness import SharedSeed

    try:
        shared = SharedSeed.from_hex(seed) if seed else SharedSeed.generate()
        data = hard_dataset(count, p, c, shared)
        save_dataset(data, out)
    except LpSketchError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(f"Wrote {len(data)} samples of dimension {data.dimension} to {out}")


@cert.command(name='trial')
@click.option('--p', 'hard_p', type=int, default=None, help='Hard distribution p')
@click.option('--c', 'hard_c', type=int, default=None, help='Hard distribution c')
@click.option('--trials', type=int, default=None, help='Number of μ×μ pairs')
@click.option('--seed', default=None, help='64 hex characters (default: fresh random seed)')
@click.option('--r', 'cert_r', type=float, default=None, help='Distance r (default: 1.9)')
@click.option('--multiplier', type=float, default=None, help="Sketch scale r'/r (default: 1)")
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='JSON experiment config')
@click.option('--out', default=None, help='Write the JSON report here')
@override_options
@click.option('--log-dir', default=None, help='Directory for log files')
def cert_trial(**options):
    """Emission and validity rates of certificates, as JSON"""
    from .experiments import run_experiment

    log_dir = options.pop('log_dir')
    try:
        config = _build_config('certification', dict(options)).resolved()
        report = run_experiment(config, log_dir=log_dir)
    except LpSketchError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    summary = {
        'seed': report.seed,
        'emission_rate': report.aggregates['emission']['rate'],
        'invalid_rate': report.aggregates['invalid']['rate'],
        'validity_rate': 1 - report.aggregates['invalid']['rate'],
        'implication_violations': report.aggregates['implication_violations'],
        'passed': report.passed,
    }
    click.echo(json.dumps(summary, indent=2))
    sys.exit(0 if report.passed else EXIT_GATES_FAILED)


@cli.group()
def data():
    """Synthetic datasets"""
    pass


@data.command(name='generate')
@click.option('--kind', type=click.Choice(['gaussian-grid', 'hard', 'planted']), required=True)
@click.option('--n', 'n', type=int, default=1000, help='Number of points (default: 1000)')
@click.option('--d', 'd', type=int, default=64, help='Dimension (gaussian-grid, planted)')
@click.option('--delta', type=int, default=100, help='Coordinate range Δ (default: 100)')
@click.option('--sigma', type=float, default=None, help='Gaussian scale (default: Δ/4)')
@click.option('--p', 'p', type=float, default=4.0, help='p (hard: integer; planted: norm)')
@click.option('--c', 'c', type=float, default=4.0, help='c (hard: integer; planted: separation)')
@click.option('--r', 'r', type=float, default=2.0, help='Planted near radius (default: 2)')
@click.option('--queries', type=int, default=100, help='Planted queries (default: 100)')
@click.option('--seed', default=None, help='64 hex characters (default: fresh random seed)')
@click.option('--out', required=True, help='Dataset file')
@click.option('--queries-out', default=None, help='Planted query file (default: <out>.queries)')
def data_generate(kind, n, d, delta, sigma, p, c, r, queries, seed, out, queries_out):
    """Generate a dataset file"""
    from .generators import gaussian_grid, hard_dataset, planted
    from .metric import Dataset, save_dataset
    from .randomness import SharedSeed

    try:
        shared = SharedSeed.from_hex(seed) if seed else SharedSeed.generate()
        if kind == 'gaussian-grid':
            dataset = gaussian_grid(n, d, sigma if sigma is not None else delta / 4, delta, shared)
        elif kind == 'hard':
            if p != int(p) or c != int(c):
                raise click.BadParameter("hard needs integer --p and --c")
            dataset = hard_dataset(n, int(p), int(c), shared)
        else:
            instance = planted(n, d, r, c, delta, queries, p, shared)
            dataset = instance.dataset
            queries_out = queries_out or f"{out}.queries"
            save_dataset(Dataset(instance.queries, dimension=d, delta=delta), queries_out)
            click.echo(f"Wrote {len(instance.queries)} queries to {queries_out}")
        save_dataset(dataset, out)
    except LpSketchError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(f"Wrote {len(dataset)} vectors of dimension {dataset.dimension} to {out}")


@cli.command()
@click.option('--stats-dir', default='.',
              help='Directory containing progress files (default: current directory)')
@click.option('--experiment-id', default=None,
              help='Show status for a specific experiment')
@click.option('--format', 'output_format', type=click.Choice(['text', 'json']),
              default='text', help='Output format (default: text)')
def status(stats_dir: str, experiment_id: Optional[str], output_format: str):
    """Show experiment progress"""
    if experiment_id:
        status_data = get_experiment_status(experiment_id, stats_dir)
        if not status_data:
            click.echo(f"No status found for experiment '{experiment_id}'", err=True)
            sys.exit(EXIT_ERROR)
        running = is_experiment_running(experiment_id, stats_dir)
        status_data['is_running'] = running
        if output_format == 'json':
            click.echo(json.dumps(status_data, indent=2, default=str))
        else:
            _print_status(experiment_id, status_data, running)
        return

    json_files = sorted(glob.glob(os.path.join(stats_dir, "*.json")))
    experiments = []
    for json_file in json_files:
        eid = os.path.basename(json_file)[:-5]
        status_data = get_experiment_status(eid, stats_dir)
        # reports and configs share the extension
        if status_data and 'trials_done' in status_data:
            running = is_experiment_running(eid, stats_dir)
            status_data['is_running'] = running
            experiments.append((eid, status_data, running))
    if not experiments:
        click.echo("No experiment status files found")
        return

    if output_format == 'json':
        click.echo(json.dumps({eid: data for eid, data, _ in experiments}, indent=2, default=str))
    else:
        for eid, data, running in experiments:
            _print_status(eid, data, running)
            click.echo()


def _print_status(experiment_id: str, status_data: dict, is_running: bool):
    status_data = dict(status_data, experiment_id=status_data.get('experiment_id', experiment_id))
    for line in format_status(status_data, running=is_running):
        click.echo(line)


def main_entry():
    """Entry point for the lpsketch command"""
    cli()


if __name__ == '__main__':
    cli()
