import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd

from lebsid.errors import LebsidError
from lebsid.models.estimator import fit_metric, frequency_response_table, predict_output
from lebsid.sampling.lebesgue import eta_from_events
from lebsid.util.dataset import io
from lebsid.util.experiment.config import KNOWN_METHODS, dump_config, load_config
from lebsid.util.experiment.montecarlo import (check, estimate_run, run_experiment, simulate_run, summarize,
                                             validation_fit)
from lebsid.util.experiment.presets import preset, preset_names

logger = logging.getLogger("lebsid")


def parse_args(argv=None):
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument('--preset', type=str, default='msd', choices=preset_names(),
                        help='benchmark preset used as base config')
    source.add_argument('--config', type=str, default=None, help='YAML experiment config file')
    common.add_argument('--full', action='store_true', help='full benchmark scale instead of desk scale')
    common.add_argument('--seed', type=int, default=None, help='base seed (overrides config)')
    common.add_argument('--out-dir', type=str, default='./out', help='directory for CSV/JSON outputs')
    common.add_argument('--methods', type=str, default=None,
                        help=f'comma separated subset of {",".join(KNOWN_METHODS)}')
    common.add_argument('--diagnostics', action='store_true', help='write EM trace CSVs')
    common.add_argument('--freq-tables', action='store_true', help='write frequency-response tables')
    common.add_argument('--verbose', action='store_true', help='debug logging')
    common.add_argument('--no-progress', action='store_true', help='disable progress bars')

    parser = argparse.ArgumentParser(description='Kernel-based identification from Lebesgue-sampled outputs.')
    sub = parser.add_subparsers(dest='command', required=True)

    sim = sub.add_parser('simulate', parents=[common], help='simulate and Lebesgue-sample one record')
    sim.add_argument('--run-index', type=int, default=0, help='run index (seed offset)')
    sim.add_argument('--h', type=float, default=None, help='threshold spacing (overrides config)')

    ident = sub.add_parser('identify', parents=[common], help='identify one simulated record')
    ident.add_argument('--run-index', type=int, default=0, help='run index (seed offset)')
    ident.add_argument('--h', type=float, default=None, help='threshold spacing (overrides config)')

    mc = sub.add_parser('montecarlo', parents=[common], help='Monte Carlo experiment')
    mc.add_argument('--runs', type=int, default=None, help='number of runs (overrides config)')
    mc.add_argument('--jobs', type=int, default=1, help='parallel workers')
    mc.add_argument('--check', action='store_true', help='exit non-zero when an acceptance check fails')

    pre = sub.add_parser('presets', parents=[common], help='list presets or dump one as YAML')
    pre.add_argument('--dump', action='store_true', help='write the selected preset as YAML')
    return parser.parse_args(argv)


def build_config(args):
    if args.config and args.full:
        logger.warning("--full is ignored with --config; the file sets the scale")
    config = load_config(args.config) if args.config else preset(args.preset, full=args.full)
    methods = tuple(m.strip() for m in args.methods.split(',')) if args.methods else None
    config = config.override(seed=args.seed, methods=methods, n_runs=getattr(args, 'runs', None),
                             h=getattr(args, 'h', None))
    if args.diagnostics:
        config = replace(config, estimator=replace(config.estimator, diagnostics=True))
    return config


def cmd_simulate(args, config):
    data = simulate_run(config, args.run_index)
    ds = data.ds
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_dataset(ds, os.path.join(args.out_dir, 'dataset.csv'), z=data.z_noisy[1:])
    io.write_events(ds, os.path.join(args.out_dir, 'events.csv'))
    io.save_csv(pd.DataFrame({'t': config.delta_u * np.arange(data.u.values.size), 'u': data.u.values}),
                os.path.join(args.out_dir, 'input.csv'))
    rebuilt = eta_from_events(ds.events, ds.n, ds.h, ds.delta)
    print(f"{ds.n_events} events from {ds.n + 1} grid samples (compression {ds.compression():.3f})")
    print(f"eta rebuilt from events matches: {bool(np.array_equal(rebuilt, ds.eta))}")
    print(f"outputs written to {args.out_dir}")
    return 0


def cmd_identify(args, config):
    data = simulate_run(config, args.run_index)
    est_config = config.estimator.with_seed(data.seed)
    status = 0
    fitted = None
    for method in sorted(config.methods, key=lambda m: m != 'lebesgue'):
        try:
            res = estimate_run(method, data, est_config, config.delta, fitted=fitted)
        except LebsidError as e:
            logger.error("%s failed: %s", method, e)
            status = 1
            continue
        if method == 'lebesgue':
            fitted = res
        fit = fit_metric(predict_output(res), data.x).fit
        validation = validation_fit(config, data, res)
        table = frequency_response_table(res, fallback=est_config.laplace_fallback) if args.freq_tables else None
        io.write_result_json(res, os.path.join(args.out_dir, f'{method}.json'), fit=fit, freq_table=table,
                             validation=validation)
        if est_config.diagnostics:
            io.write_trace(res.hyper_trace, os.path.join(args.out_dir, f'{method}_trace_hyper.csv'))
            if res.weight_trace:
                io.write_trace(res.weight_trace, os.path.join(args.out_dir, f'{method}_trace_weights.csv'))
        print(f"{method:>9s}: fit {fit:7.2f}  validation {validation:7.2f}  gamma_tilde {res.rho.gamma_tilde:.4g}"
              f"  beta {res.rho.beta:.4g}  sigma2 {res.rho.sigma2:.4g}")
    print(f"{data.ds.n_events} events, results written to {args.out_dir}")
    return status


def cmd_montecarlo(args, config):
    records = run_experiment(config, n_jobs=args.jobs, progress=not args.no_progress, out_dir=args.out_dir,
                             freq_tables=args.freq_tables)
    os.makedirs(args.out_dir, exist_ok=True)
    dump_config(config, os.path.join(args.out_dir, 'config.yaml'))
    io.write_records(records, os.path.join(args.out_dir, 'records.csv'))
    io.write_timings(records, os.path.join(args.out_dir, 'timings.csv'))
    if not records:
        print("no records produced")
        return 1 if args.check else 0
    rows = summarize(records)
    io.write_summary(rows, os.path.join(args.out_dir, 'summary.csv'))
    print(pd.DataFrame(rows, columns=io.SUMMARY_COLUMNS).to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    print(f"outputs written to {args.out_dir}")
    if args.check:
        results = check(config, rows)
        for r in results:
            print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
        return 0 if all(r.passed for r in results) else 1
    return 0


def cmd_presets(args, config):
    if not args.dump:
        for name in preset_names():
            p = preset(name, full=args.full)
            print(f"{name:>12s}: h={p.h:g} delta={p.delta:g} delta_u={p.delta_u:g} sigma={p.sigma_noise:g} "
                  f"T={p.duration:g} runs={p.n_runs}")
        return 0
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, f'{config.name}.yaml')
    dump_config(config, path)
    print(f"preset {config.name} written to {path}")
    return 0


COMMANDS = {'simulate': cmd_simulate, 'identify': cmd_identify, 'montecarlo': cmd_montecarlo,
            'presets': cmd_presets}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = build_config(args)
        return COMMANDS[args.command](args, config)
    except LebsidError as e:
        logger.error("%s", e)
        return 2


if __name__ == '__main__':
    sys.exit(main())
