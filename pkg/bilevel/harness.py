"""The run, gradcheck and report commands.

   Each command takes a config path plus the command line overrides and
   returns the process exit status:

     0  success
     1  a gradient check or acceptance criterion failed
     2  the config is invalid (the message names the key)
     3  a run diverged or hit a non-finite / non-SPD quantity
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np

from bilevel.acceptance import run_acceptance
from bilevel.config import ExperimentConfig, load_config
from bilevel.errors import BilevelError, ErrorCode
from bilevel.hypergrad import AID, STOCBIO, aid_estimate, build_schedule, itd_estimate
from bilevel.inner import gd_inner
from bilevel.log import log
from bilevel.optimizers import (BilevelRunner, RunConfig, default_eta, default_stepsizes,
                                resolve_point)
from bilevel.problem import BilevelProblem
from bilevel.serialize import save_problem
from bilevel.theory import compute_bounds, finite_diff_hypergrad

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# finite differences without an oracle re-solve the lower level per coordinate
MAX_FD_DIM = 50


def exit_status(error_code: int) -> int:
    """Maps an ErrorCode to the process exit status."""
    if error_code in (ErrorCode.CONFIG, ErrorCode.INVALID_PARAM):
        return EXIT_CONFIG
    if error_code in (ErrorCode.DIVERGED, ErrorCode.NON_FINITE, ErrorCode.NOT_SPD):
        return EXIT_RUNTIME
    return EXIT_FAILED


def write_json(filename: str, data: Dict) -> None:
    """Writes data as indented, key sorted JSON."""
    with open(filename, 'w', encoding='utf-8') as json_file:
        json.dump(data, json_file, indent=2, sort_keys=True)
        json_file.write('\n')


def prepare(config_path: str, out: Optional[str],
            seed: Optional[int]) -> Tuple[ExperimentConfig, BilevelProblem]:
    """Loads the config, applies overrides and builds the problem."""
    config = load_config(config_path)
    config.apply_overrides(out, seed)
    prob = config.problem.build()
    os.makedirs(config.output_dir, exist_ok=True)
    return config, prob


def run_settings(prob: BilevelProblem, run_cfg: RunConfig) -> Dict:
    """Stepsizes, analysis constants and (for stocBiO) the batch schedule
       a run block will use.
    """
    consts = prob.constants
    alpha, beta = default_stepsizes(consts, run_cfg.algorithm)
    alpha = alpha if run_cfg.alpha is None else run_cfg.alpha
    beta = beta if run_cfg.beta is None else run_cfg.beta
    eta = default_eta(consts) if run_cfg.eta is None else run_cfg.eta
    bounds = compute_bounds(consts, alpha, beta, eta, run_cfg.D, run_cfg.N or 0, run_cfg.Q or 1,
                            run_cfg.S or 1, run_cfg.Df or 1, run_cfg.Dg or 1, run_cfg.B or 1)
    settings = {'alpha': alpha, 'beta': beta, 'bounds': bounds.to_dict()}
    if run_cfg.algorithm == STOCBIO:
        sched = build_schedule(run_cfg.Q, run_cfg.B, eta, consts.mu)
        settings['eta'] = eta
        settings['schedule'] = {'sizes': sched.sizes, 'total': sched.total}
    return settings


def execute_run(prob: BilevelProblem, run_cfg: RunConfig, config: ExperimentConfig,
                show: int) -> Tuple[Dict, int]:
    """Runs one block, writes its CSV trace (partial on failure) and
       returns its summary entry with the exit status it implies.
    """
    csv_name = os.path.join(config.output_dir, f'{run_cfg.label}.csv')
    entry: Dict = {'config': run_cfg.to_dict(), 'trace': csv_name}
    status = EXIT_OK
    try:
        trace = BilevelRunner(prob, run_cfg, show=show, timing=config.timing).run()
    except BilevelError as ex:
        log(f'Run {run_cfg.label} failed: {ex}')
        entry['error'] = str(ex)
        status = exit_status(ex.get_error_code())
        trace = ex.trace
    if trace is not None:
        trace.write_csv(csv_name)
        entry.update(trace.summary())
    if config.report.get('bounds', True) and status != EXIT_CONFIG:
        entry['settings'] = run_settings(prob, run_cfg)
    return entry, status


def problem_summary(config: ExperimentConfig, prob: BilevelProblem) -> Dict:
    """The problem block of a summary."""
    return {
        'family': prob.family,
        'seed': config.problem.seed,
        'p': prob.p,
        'q': prob.q,
        'constants': prob.constants.to_dict(),
    }


def cmd_run(config_path: str,
            out: Optional[str] = None,
            parallel: int = 1,
            seed: Optional[int] = None,
            show: int = BilevelRunner.SHOW_NONE) -> int:
    """Executes every run block, writing <label>.csv per run, the problem
       snapshot problem.json and summary.json.
    """
    try:
        config, prob = prepare(config_path, out, seed)
    except BilevelError as ex:
        log(f'Error: {ex}')
        return exit_status(ex.get_error_code())
    save_problem(prob, os.path.join(config.output_dir, 'problem.json'))
    workers = max(1, int(parallel))
    if workers > 1 and len(config.runs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda rc: execute_run(prob, rc, config, show), config.runs))
    else:
        results = [execute_run(prob, rc, config, show) for rc in config.runs]
    summary = {
        'problem': problem_summary(config, prob),
        'runs': [entry for entry, _ in results],
    }
    write_json(os.path.join(config.output_dir, 'summary.json'), summary)
    status = max([status for _, status in results], default=EXIT_OK)
    log(f'Wrote {len(results)} trace(s) to {config.output_dir}')
    return status


def gradcheck_rows(config: ExperimentConfig, prob: BilevelProblem) -> List[Dict]:
    """Evaluates every configured check at the gradcheck point."""
    grad_cfg = config.gradcheck
    if not grad_cfg.checks:
        return []
    x = resolve_point(grad_cfg.x, prob.p, prob.initial_point(), key='gradcheck.x')
    oracle = prob.hypergradient(x) if prob.has_oracle else None
    if oracle is None and prob.p > MAX_FD_DIM:
        raise BilevelError(ErrorCode.NO_ORACLE,
                           f'{prob.family} has no oracle and p = {prob.p} is too large for '
                           'finite differences')
    fd_grad = finite_diff_hypergrad(prob, x, grad_cfg.h)
    y0 = np.zeros(prob.q)
    rows = []
    for check in grad_cfg.checks:
        alpha = 1.0 / prob.constants.L if check.alpha is None else check.alpha
        traj = gd_inner(prob, x, y0, alpha, check.D)
        if check.method == AID:
            est = aid_estimate(prob, x, traj.final, np.zeros(prob.q), check.N)
        else:
            est = itd_estimate(prob, traj)
        row = {
            'method': check.method,
            'D': check.D,
            'N': check.N if check.method == AID else None,
            'rel_err_fd': _rel_err(est.grad, fd_grad),
            'rel_err_oracle': None if oracle is None else _rel_err(est.grad, oracle),
            'threshold': check.threshold,
            'estimate': est.grad.tolist(),
        }
        measured = row['rel_err_oracle'] if oracle is not None else row['rel_err_fd']
        row['passed'] = measured <= check.threshold
        rows.append(row)
    return rows


def _rel_err(estimate: np.ndarray, reference: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - reference) / max(np.linalg.norm(reference), 1e-12))


def _fmt_err(value: Optional[float]) -> str:
    return f'{"-":>12s}' if value is None else f'{value:12.4e}'


def log_gradcheck_table(rows: List[Dict]) -> None:
    """Logs the gradcheck table."""
    log(f'{"method":<8s} {"D":>5s} {"N":>5s} {"vs oracle":>12s} {"vs fd":>12s} '
        f'{"threshold":>10s}  status')
    for row in rows:
        n_col = '-' if row['N'] is None else str(row['N'])
        log(f'{row["method"]:<8s} {row["D"]:5d} {n_col:>5s} {_fmt_err(row["rel_err_oracle"])} '
            f'{_fmt_err(row["rel_err_fd"])} {row["threshold"]:10.1e}  '
            f'{"ok" if row["passed"] else "FAIL"}')


def cmd_gradcheck(config_path: str, out: Optional[str] = None, seed: Optional[int] = None) -> int:
    """Compares the AID and ITD estimates against the oracle and finite
       differences; exits 1 listing every check over its threshold.
    """
    try:
        config, prob = prepare(config_path, out, seed)
        rows = gradcheck_rows(config, prob)
    except BilevelError as ex:
        log(f'Error: {ex}')
        return exit_status(ex.get_error_code())
    log_gradcheck_table(rows)
    write_json(os.path.join(config.output_dir, 'gradcheck.json'), {'checks': rows})
    failures = [row for row in rows if not row['passed']]
    for row in failures:
        log(f'FAIL: {row["method"]} D={row["D"]} N={row["N"]} exceeds threshold '
            f'{row["threshold"]:.1e}')
    return EXIT_FAILED if failures else EXIT_OK


def cmd_report(config_path: str, out: Optional[str] = None, seed: Optional[int] = None) -> int:
    """Runs the acceptance suite and writes report.json plus report.txt."""
    try:
        config, prob = prepare(config_path, out, seed)
        settings = dict(config.acceptance)
        if seed is not None:
            settings['seed'] = seed
        results = run_acceptance(settings)
        runs = {rc.label: run_settings(prob, rc) for rc in config.runs}
        checks = gradcheck_rows(config, prob) if config.report.get('gradcheck', True) else []
    except BilevelError as ex:
        log(f'Error: {ex}')
        return exit_status(ex.get_error_code())
    passed = all(result.passed for result in results) and all(row['passed'] for row in checks)
    report = {
        'passed': passed,
        'problem': problem_summary(config, prob),
        'criteria': [result.to_dict() for result in results],
        'runs': runs,
        'gradcheck': checks,
    }
    write_json(os.path.join(config.output_dir, 'report.json'), report)
    lines = [str(result) for result in results]
    lines += [f'gradcheck {row["method"]} D={row["D"]}: {"ok" if row["passed"] else "FAIL"}'
              for row in checks]
    lines.append('ALL PASS' if passed else 'FAILURES')
    with open(os.path.join(config.output_dir, 'report.txt'), 'w', encoding='utf-8') as text_file:
        text_file.write('\n'.join(lines) + '\n')
    log(lines[-1])
    return EXIT_OK if passed else EXIT_FAILED
