import logging

import numpy as np

logger = logging.getLogger(__name__)


class EarlyStopping:
    """
    Relative-change stopping rule shared by the EM loops.

    Stops once ||x_new - x_old|| / ||x_old|| < eps or after max_iter updates.
    """

    def __init__(self, eps=1e-3, max_iter=40, verbose=False, name="EM"):
        self.eps = eps
        self.max_iter = max_iter
        self.verbose = verbose
        self.name = name
        self.counter = 0
        self.last = None
        self.last_change = None
        self.converged = False
        self.early_stop = max_iter <= 0

    def reset(self, x0):
        """Starts a new run from iterate x0; x0 itself is not counted as an update."""
        self.counter = 0
        self.last = np.asarray(x0, dtype=float).ravel().copy()
        self.last_change = None
        self.converged = False
        self.early_stop = self.max_iter <= 0
        return self

    def __call__(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if self.last is not None:
            denom = np.linalg.norm(self.last)
            step = np.linalg.norm(x - self.last)
            self.last_change = step / denom if denom > 0 else (0.0 if step == 0 else np.inf)
            if self.last_change < self.eps:
                self.converged = True
                self.early_stop = True
        self.last = x.copy()
        self.counter += 1
        if self.verbose:
            logger.debug("%s iteration %d/%d, relative change %s", self.name, self.counter, self.max_iter,
                         self.last_change)
        if self.counter >= self.max_iter:
            self.early_stop = True
        return self.early_stop
