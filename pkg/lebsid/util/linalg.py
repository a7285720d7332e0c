import logging

import numpy as np
from scipy import linalg

from lebsid.errors import FactorizationError

__all__ = ['cholesky_jitter', 'JITTER_LADDER']

logger = logging.getLogger(__name__)

# relative to trace(M)/N
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


def cholesky_jitter(M, ladder=JITTER_LADDER, lower=True, what="matrix"):
    """
    Cholesky factor of a symmetric PSD matrix, adding eps*trace(M)/N*I along the ladder on failure.

    Returns (factor, jitter) where jitter is the absolute diagonal shift that was needed.
    """
    M = 0.5 * (M + M.T)
    n = M.shape[0]
    scale = np.trace(M) / n if n else 0.0
    if not scale > 0:
        scale = 1.0
    for eps in ladder:
        jitter = eps * scale
        try:
            L = linalg.cholesky(M + jitter * np.eye(n), lower=lower, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        if eps > 0:
            logger.warning("Cholesky of %s needed jitter %.3g (relative %.0e)", what, jitter, eps)
        return L, jitter
    raise FactorizationError(f"Cholesky of {what} failed after jitter up to {ladder[-1]:.0e} relative")
