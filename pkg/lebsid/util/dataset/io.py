"""CSV and JSON artifacts: datasets, event streams, EM traces, Monte Carlo records and estimates."""
import json
import logging
import os

import numpy as np
import pandas as pd

__all__ = ['FLOAT_FORMAT', 'RECORD_COLUMNS', 'TIMING_COLUMNS', 'SUMMARY_COLUMNS', 'save_csv', 'write_dataset',
           'write_events', 'read_events', 'write_trace', 'write_records', 'write_timings', 'read_records',
           'write_summary', 'write_freq_table', 'write_result_json']

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.10g'
RECORD_COLUMNS = ['run', 'seed', 'method', 'h', 'fit', 'n_events', 'gamma_tilde', 'beta', 'sigma2', 'snr_db',
                  'hyper_iters', 'weight_iters']
TIMING_COLUMNS = ['run', 'method', 'h', 'wall_ms']
SUMMARY_COLUMNS = ['method', 'h', 'min', 'q1', 'median', 'q3', 'max', 'mean_events', 'mean_wall_ms', 'n_runs',
                   'em_win_rate']


def save_csv(df, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("wrote %s (%d rows)", path, len(df))
    return path


def write_dataset(ds, path, z=None):
    """Bands per grid instant; the pre-quantization output is added when given."""
    df = pd.DataFrame({'i': np.arange(1, ds.n + 1), 't': ds.times, 'eta': ds.lower, 'upper': ds.upper})
    if z is not None:
        df['z'] = np.asarray(z, dtype=float)
    return save_csv(df, path)


def write_events(ds, path):
    """Event times t_l and threshold indices m_l."""
    return save_csv(pd.DataFrame({'t_l': ds.events[:, 0], 'm_l': ds.events[:, 1].astype(np.int64)}), path)


def read_events(path):
    df = pd.read_csv(path)
    return df[['t_l', 'm_l']].to_numpy(dtype=float)


def write_trace(trace, path):
    """EM trace rows (dicts) or plain objective values."""
    if trace and not isinstance(trace[0], dict):
        trace = [{'iteration': i, 'objective': v} for i, v in enumerate(trace)]
    return save_csv(pd.DataFrame(trace), path)


def write_records(records, path):
    rows = [r.to_row() for r in records]
    return save_csv(pd.DataFrame(rows, columns=RECORD_COLUMNS), path)


def write_timings(records, path):
    rows = [{'run': r.run, 'method': r.method, 'h': r.h, 'wall_ms': r.wall_ms} for r in records]
    return save_csv(pd.DataFrame(rows, columns=TIMING_COLUMNS), path)


def read_records(path):
    return pd.read_csv(path)


def write_summary(rows, path):
    return save_csv(pd.DataFrame(rows, columns=SUMMARY_COLUMNS), path)


def write_freq_table(table, path):
    return save_csv(pd.DataFrame(np.asarray(table), columns=['omega', 're', 'im']), path)


def write_result_json(res, path, fit=None, freq_table=None, validation=None):
    payload = res.to_dict()
    if fit is not None:
        payload['fit'] = float(fit)
    if validation is not None:
        payload['validation_fit'] = float(validation)
    if freq_table is not None:
        payload['frequency_response'] = [{'omega': w, 're': re, 'im': im}
                                         for w, re, im in np.asarray(freq_table).tolist()]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2)
    return path
